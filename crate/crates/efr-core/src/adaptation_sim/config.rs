//! Flat `key = value` configuration for the simulator.
//!
//! Unknown keys, duplicate keys, and malformed values are all hard errors,
//! so a typo in a config file fails the run immediately instead of silently
//! training with defaults.

use std::fmt::Write as _;

use crate::{Error, Result};

/// Which adversarial loss convention the discriminator trains under.
///
/// `NonSaturating` is the standard form: the discriminator minimizes
/// `-log D(real) - log(1 - D(fake))`. `RoleSwapped` minimizes
/// `log(1 - D(real)) + log D(fake)`, a sign convention that appears in some
/// formulations; both push `D(real)` up and `D(fake)` down, but with
/// different gradient shapes. The generator loss is non-saturating
/// (`-log D(fake)`) in both variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GanVariant {
    NonSaturating,
    RoleSwapped,
}

impl GanVariant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "non-saturating" => Ok(GanVariant::NonSaturating),
            "role-swapped" => Ok(GanVariant::RoleSwapped),
            other => Err(Error::Config(format!(
                "unknown gan_variant '{other}' (expected 'non-saturating' or 'role-swapped')"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            GanVariant::NonSaturating => "non-saturating",
            GanVariant::RoleSwapped => "role-swapped",
        }
    }
}

/// Every knob of the adaptation objective and its optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    /// Weight of the instance alignment term.
    pub lambda1: f64,
    /// Weight of the sliced distribution term.
    pub lambda2: f64,
    /// Softmax temperature of the instance alignment loss.
    pub tau: f64,
    /// Number of random projections in the sliced loss.
    pub t_slices: usize,
    /// Entropic regularization strength of the coupling solver.
    pub epsilon: f64,
    /// Outer iterations of the coupling solver.
    pub outer_iters: usize,
    /// Inner scaling sweeps per outer iteration of the coupling solver.
    pub inner_iters: usize,
    /// Minibatch size for both networks.
    pub batch_size: usize,
    /// Number of adaptation steps.
    pub iterations: usize,
    /// Adam learning rate (shared by all trainables).
    pub lr: f64,
    /// Adam first-moment decay.
    pub beta1: f64,
    /// Adam second-moment decay.
    pub beta2: f64,
    /// Run seed; all randomness derives from it.
    pub seed: u64,
    /// Number of target samples available during adaptation.
    pub n_shot: usize,
    /// Adversarial loss convention.
    pub gan_variant: GanVariant,
    /// When false the rotation parameter stays frozen at zero.
    pub rotation_enabled: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda1: 0.6,
            lambda2: 0.4,
            tau: 0.07,
            t_slices: 16,
            epsilon: 0.05,
            outer_iters: 50,
            inner_iters: 100,
            batch_size: 8,
            iterations: 1000,
            lr: 0.002,
            beta1: 0.0,
            beta2: 0.99,
            seed: 0,
            n_shot: 10,
            gan_variant: GanVariant::NonSaturating,
            rotation_enabled: true,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for key '{key}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::Config(format!(
            "invalid value '{other}' for key '{key}' (expected 'true' or 'false')"
        ))),
    }
}

impl LossConfig {
    /// Apply one `key = value` assignment. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "lambda1" => self.lambda1 = parse_num(key, value)?,
            "lambda2" => self.lambda2 = parse_num(key, value)?,
            "tau" => self.tau = parse_num(key, value)?,
            "t_slices" => self.t_slices = parse_num(key, value)?,
            "epsilon" => self.epsilon = parse_num(key, value)?,
            "outer_iters" => self.outer_iters = parse_num(key, value)?,
            "inner_iters" => self.inner_iters = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "iterations" => self.iterations = parse_num(key, value)?,
            "lr" => self.lr = parse_num(key, value)?,
            "beta1" => self.beta1 = parse_num(key, value)?,
            "beta2" => self.beta2 = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "n_shot" => self.n_shot = parse_num(key, value)?,
            "gan_variant" => self.gan_variant = GanVariant::parse(value)?,
            "rotation_enabled" => self.rotation_enabled = parse_bool(key, value)?,
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tau", self.tau),
            ("epsilon", self.epsilon),
            ("lr", self.lr),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be nonnegative, got {v}"
                )));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        for (name, v) in [
            ("t_slices", self.t_slices),
            ("outer_iters", self.outer_iters),
            ("inner_iters", self.inner_iters),
            ("batch_size", self.batch_size),
            ("n_shot", self.n_shot),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    /// Deterministic snapshot of every key, suitable for the run manifest.
    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "lambda1 = {}", self.lambda1);
        let _ = writeln!(out, "lambda2 = {}", self.lambda2);
        let _ = writeln!(out, "tau = {}", self.tau);
        let _ = writeln!(out, "t_slices = {}", self.t_slices);
        let _ = writeln!(out, "epsilon = {}", self.epsilon);
        let _ = writeln!(out, "outer_iters = {}", self.outer_iters);
        let _ = writeln!(out, "inner_iters = {}", self.inner_iters);
        let _ = writeln!(out, "batch_size = {}", self.batch_size);
        let _ = writeln!(out, "iterations = {}", self.iterations);
        let _ = writeln!(out, "lr = {}", self.lr);
        let _ = writeln!(out, "beta1 = {}", self.beta1);
        let _ = writeln!(out, "beta2 = {}", self.beta2);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "n_shot = {}", self.n_shot);
        let _ = writeln!(out, "gan_variant = {}", self.gan_variant.name());
        let _ = writeln!(out, "rotation_enabled = {}", self.rotation_enabled);
        out
    }
}

/// Parse a config file: one `key = value` per line, `#` comments, blank
/// lines ignored. Duplicate keys are errors.
pub fn parse_config(text: &str) -> Result<LossConfig> {
    let mut cfg = LossConfig::default();
    let mut seen: Vec<String> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "line {}: expected 'key = value', got '{}'",
                lineno + 1,
                line
            ))
        })?;
        let key = key.trim();
        let value = value.trim();
        if seen.iter().any(|k| k == key) {
            return Err(Error::Config(format!(
                "line {}: duplicate key '{}'",
                lineno + 1,
                key
            )));
        }
        seen.push(key.to_string());
        cfg.set(key, value)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        LossConfig::default().validate().unwrap();
    }

    #[test]
    fn parses_overrides_comments_and_blanks() {
        let text = "\n# comment\nlambda1 = 0.9  # trailing\nseed = 42\nt_slices=8\n";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.lambda1, 0.9);
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.t_slices, 8);
        assert_eq!(cfg.lambda2, 0.4);
    }

    #[test]
    fn unknown_key_is_an_error() {
        let err = parse_config("lambada = 0.6\n").unwrap_err();
        assert!(err.to_string().contains("lambada"), "{err}");
    }

    #[test]
    fn duplicate_key_is_an_error() {
        assert!(parse_config("seed = 1\nseed = 2\n").is_err());
    }

    #[test]
    fn malformed_values_are_errors() {
        assert!(parse_config("lambda1 = fast\n").is_err());
        assert!(parse_config("rotation_enabled = yes\n").is_err());
        assert!(parse_config("gan_variant = saturating\n").is_err());
        assert!(parse_config("just a line\n").is_err());
    }

    #[test]
    fn validation_rejects_out_of_range() {
        assert!(parse_config("tau = 0\n").is_err());
        assert!(parse_config("tau = -1\n").is_err());
        assert!(parse_config("beta2 = 1.0\n").is_err());
        assert!(parse_config("batch_size = 0\n").is_err());
        assert!(parse_config("lambda1 = -0.1\n").is_err());
    }

    #[test]
    fn iterations_zero_is_allowed() {
        let cfg = parse_config("iterations = 0\n").unwrap();
        assert_eq!(cfg.iterations, 0);
    }

    #[test]
    fn snapshot_round_trips_through_parser() {
        let cfg = LossConfig {
            seed: 7,
            gan_variant: GanVariant::RoleSwapped,
            rotation_enabled: false,
            ..LossConfig::default()
        };
        let parsed = parse_config(&cfg.snapshot()).unwrap();
        assert_eq!(parsed, cfg);
    }
}
