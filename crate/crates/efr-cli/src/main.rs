//! Command-line driver: pretrain a toy generator on a synthetic preset,
//! adapt it to a few-shot target, check analytic gradients against finite
//! differences, and run the rotation-recovery demo.
//!
//! Every data-producing command resolves an output directory (`--out`, or
//! the `EFR_OUT_DIR` environment variable when the flag is omitted, the
//! only environment variable read), writes a reproducibility manifest
//! there before any long computation, and rewrites it with the final
//! status afterwards. Exit codes: 0 success, 1 usage/config error or
//! failed gradient check, 2 quality gate missed.

use std::env;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;

use efr_core::adaptation_sim::net::{ToyDiscriminator, ToyGenerator};
use efr_core::adaptation_sim::{
    evaluate_adaptation, gan_grads, gan_losses, load_checkpoint, metrics_to_csv, parse_config,
    recovery_to_csv, rotation_recovery_eval, run_adaptation, run_pretrain, save_checkpoint,
    GanVariant, LossConfig, Preset, PretrainOptions, RecoveryOptions, TargetShotSet,
};
use efr_core::align_losses::{
    instance_alignment_grad, instance_alignment_loss, FeatureBatch, InstanceLossConfig,
};
use efr_core::gradcheck::{self, GradientReport};
use efr_core::lie_rotation::{
    grad_through_rotation, matrix_exp, rotation_from_param, RotationMatrix, SkewMatrix,
    SkewParamMatrix,
};
use efr_core::ot_solver::{sample_projections, sliced_gw_grad, sliced_gw_loss, CouplingMatrix};
use efr_core::rng::{normal_matrix, stream_rng};

/// Git-describe-style identifier of this build, embedded by the build script.
const BUILD_ID: &str = env!("EFR_BUILD_ID");

/// Central-difference step shared by all gradient checks.
const FD_STEP: f64 = 1e-6;

/// Central differences at `FD_STEP` on losses of size O(1) carry roundoff
/// of about eps * |loss| / h ~ 1e-10; differences at that scale say
/// nothing about the analytic gradient. Applied only to the composed
/// network losses, whose forward passes accumulate that roundoff.
const FD_NOISE_ATOL: f64 = 1e-9;

/// Random instances per gradient-check target.
const GRADCHECK_CASES: usize = 100;

fn help_footer() -> String {
    let presets: Vec<&str> = Preset::all().iter().map(|p| p.name()).collect();
    let defaults: String = LossConfig::default()
        .snapshot()
        .lines()
        .map(|line| format!("  {line}\n"))
        .collect();
    format!(
        "Presets: {}\n\nConfig keys and defaults (override with a --config file of 'key = value' lines):\n{}\nOutput directory: --out DIR, or the EFR_OUT_DIR environment variable when\nthe flag is omitted (the only environment variable read).",
        presets.join(", "),
        defaults
    )
}

#[derive(Parser)]
#[command(
    name = "efr",
    version,
    about = "Equivariant feature rotation: toy pretraining, few-shot adaptation, gradient checks, and rotation recovery",
    after_help = help_footer()
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a fresh generator on a preset until the quality gate is met.
    Pretrain(PretrainArgs),
    /// Adapt a pretrained checkpoint to a few-shot target sample.
    Adapt(AdaptArgs),
    /// Compare analytic gradients against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Plant a rotation, recover it from data, and report the error.
    DemoRotation(DemoRotationArgs),
}

#[derive(Args)]
struct PretrainArgs {
    /// Data preset to train on (see the top-level --help for the list).
    #[arg(long)]
    preset: String,
    /// Config file overriding the default hyperparameters.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Run seed; overrides the config file's `seed` key.
    #[arg(long)]
    seed: Option<u64>,
    /// Quality gate on the held-out distance (default: benchmark recipe).
    #[arg(long)]
    gate: Option<f64>,
    /// Step budget; the gate is checked once at the end of it
    /// (default: benchmark recipe of 2000 steps).
    #[arg(long)]
    max_steps: Option<usize>,
    /// Output directory (falls back to EFR_OUT_DIR).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AdaptArgs {
    /// Pretrained source checkpoint to start from.
    #[arg(long, value_name = "FILE")]
    source_checkpoint: PathBuf,
    /// CSV of target samples, one row per sample, no header.
    #[arg(long, value_name = "FILE")]
    shots_file: PathBuf,
    /// Preset the held-out evaluation samples are drawn from.
    #[arg(long, default_value = "rotated-mixture")]
    preset: String,
    /// Config file overriding the default hyperparameters.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Run seed; overrides the config file's `seed` key.
    #[arg(long)]
    seed: Option<u64>,
    /// Adaptation steps; overrides the config file's `iterations` key.
    /// With 0 the output checkpoint equals the source weights.
    #[arg(long)]
    iterations: Option<usize>,
    /// Output directory (falls back to EFR_OUT_DIR).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GradTarget {
    /// Instance alignment loss over target features and rotation parameter.
    Ins,
    /// Sliced structural loss over target features and rotation parameter.
    Dis,
    /// Generator and discriminator losses over network parameters.
    Gan,
    /// Chain rule through the rotation reparameterization.
    Rotation,
    /// All of the above.
    All,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Which gradient to check.
    #[arg(long, value_enum, default_value = "all")]
    target: GradTarget,
    /// Base seed of the random instances.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Relative tolerance each comparison must meet.
    #[arg(long, default_value_t = 1e-5)]
    rtol: f64,
    /// Self-test: negate the analytic gradients so every check must fail.
    #[arg(long)]
    inject_sign_flip: bool,
    /// Optional report directory; when omitted the table is only printed.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DemoRotationArgs {
    /// Feature dimension (at least 2).
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Planted rotation angle in degrees, in the (0, 1) coordinate plane.
    #[arg(long, default_value_t = 45.0)]
    angle_deg: f64,
    /// Number of feature rows to plant the rotation on.
    #[arg(long, default_value_t = 64)]
    n: usize,
    /// Optimization restarts; the best recovery across them is reported.
    #[arg(long, default_value_t = 4)]
    restarts: usize,
    /// Run seed for the features and restart initializations.
    #[arg(long, default_value_t = 11)]
    seed: u64,
    /// Output directory (falls back to EFR_OUT_DIR).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Pretrain(args) => cmd_pretrain(args),
        Command::Adapt(args) => cmd_adapt(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::DemoRotation(args) => cmd_demo_rotation(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

/// Reproducibility record written next to every command's outputs. The
/// running version lands atomically before any long computation; the
/// finished version adds the end timestamp and final status.
struct RunManifest {
    command: &'static str,
    seed: u64,
    out_dir: PathBuf,
    started_unix: u64,
    /// Resolved `key = value` settings, sufficient to replay the run.
    config: Vec<String>,
}

impl RunManifest {
    fn begin(
        command: &'static str,
        seed: u64,
        out_dir: &Path,
        config: Vec<String>,
    ) -> Result<Self, String> {
        let manifest = RunManifest {
            command,
            seed,
            out_dir: out_dir.to_path_buf(),
            started_unix: now_unix(),
            config,
        };
        manifest.write("running", None)?;
        Ok(manifest)
    }

    fn finish(&self, status: &str) -> Result<(), String> {
        self.write(status, Some(now_unix()))
    }

    fn render(&self, status: &str, finished_unix: Option<u64>) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "command = {}", self.command);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "build_id = {BUILD_ID}");
        let _ = writeln!(out, "out_dir = {}", self.out_dir.display());
        let _ = writeln!(out, "started_unix = {}", self.started_unix);
        if let Some(ts) = finished_unix {
            let _ = writeln!(out, "finished_unix = {ts}");
        }
        let _ = writeln!(out, "status = {status}");
        for line in &self.config {
            let _ = writeln!(out, "config.{line}");
        }
        out
    }

    fn write(&self, status: &str, finished_unix: Option<u64>) -> Result<(), String> {
        atomic_write(
            &self.out_dir.join("manifest.txt"),
            &self.render(status, finished_unix),
        )
    }
}

/// Write via a temporary sibling and rename, so a killed run leaves
/// either the old file or the new one, never a torn write.
fn atomic_write(path: &Path, text: &str) -> Result<(), String> {
    let file_name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| format!("invalid output path {}", path.display()))?;
    let tmp = path.with_file_name(format!("{file_name}.tmp"));
    fs::write(&tmp, text).map_err(|e| format!("cannot write {}: {e}", tmp.display()))?;
    fs::rename(&tmp, path).map_err(|e| format!("cannot finalize {}: {e}", path.display()))
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn resolve_out(flag: Option<PathBuf>) -> Result<PathBuf, String> {
    if let Some(dir) = flag {
        return Ok(dir);
    }
    if let Some(dir) = env::var_os("EFR_OUT_DIR") {
        return Ok(PathBuf::from(dir));
    }
    Err("no output directory: pass --out DIR or set EFR_OUT_DIR".to_string())
}

fn prepare_out(flag: Option<PathBuf>) -> Result<PathBuf, String> {
    let dir = resolve_out(flag)?;
    fs::create_dir_all(&dir)
        .map_err(|e| format!("cannot create output directory {}: {e}", dir.display()))?;
    Ok(dir)
}

fn load_config(path: Option<&Path>) -> Result<LossConfig, String> {
    match path {
        None => Ok(LossConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| format!("cannot read config file {}: {e}", p.display()))?;
            parse_config(&text).map_err(|e| e.to_string())
        }
    }
}

fn snapshot_lines(cfg: &LossConfig) -> Vec<String> {
    cfg.snapshot().lines().map(String::from).collect()
}

/// Parse a shots file: comma-separated floats, one sample per row, no
/// header. All rows must have the same width.
fn parse_shots_csv(text: &str) -> Result<Array2<f64>, String> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|cell| {
                let cell = cell.trim();
                cell.parse::<f64>()
                    .map_err(|_| format!("shots file line {}: '{cell}' is not a number", lineno + 1))
            })
            .collect::<Result<_, String>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(format!(
                    "shots file line {}: expected {} columns, got {}",
                    lineno + 1,
                    first.len(),
                    row.len()
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err("shots file contains no samples".to_string());
    }
    let (n, d) = (rows.len(), rows[0].len());
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((n, d), flat).map_err(|e| format!("shots file: {e}"))
}

fn cmd_pretrain(args: PretrainArgs) -> Result<u8, String> {
    let preset = Preset::parse(&args.preset).map_err(|e| e.to_string())?;
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(|e| e.to_string())?;
    let mut opts = PretrainOptions::default();
    if let Some(gate) = args.gate {
        opts.gate = gate;
    }
    if let Some(steps) = args.max_steps {
        if steps == 0 {
            return Err("--max-steps must be positive".to_string());
        }
        opts.max_steps = steps;
        opts.check_every = steps;
    }
    let out = prepare_out(args.out)?;

    let mut config = vec![
        format!("preset = {}", preset.name()),
        format!("pool = {}", opts.pool),
        format!("pretrain_batch = {}", opts.batch_size),
        format!("max_steps = {}", opts.max_steps),
        format!("check_every = {}", opts.check_every),
        format!("gate = {}", opts.gate),
        format!("gate_eval_samples = {}", opts.eval_samples),
    ];
    config.extend(snapshot_lines(&cfg));
    let manifest = RunManifest::begin("pretrain", cfg.seed, &out, config)?;

    let body = (|| -> Result<u8, String> {
        let report = run_pretrain(preset, &cfg, &opts).map_err(|e| e.to_string())?;
        save_checkpoint(&out.join("checkpoint.efr"), &report.state).map_err(|e| e.to_string())?;
        let csv = metrics_to_csv(&report.metrics);
        fs::write(out.join("metrics.csv"), csv).map_err(|e| e.to_string())?;
        println!(
            "pretrain on {}: {} steps, held-out distance {:.4} against gate {}, gate {}",
            preset.name(),
            report.steps_run,
            report.final_fgd,
            opts.gate,
            if report.gate_met { "met" } else { "missed" },
        );
        Ok(if report.gate_met { 0 } else { 2 })
    })();
    match body {
        Ok(code) => {
            manifest.finish(if code == 0 { "ok" } else { "gate-missed" })?;
            Ok(code)
        }
        Err(msg) => {
            let _ = manifest.finish("error");
            Err(msg)
        }
    }
}

fn cmd_adapt(args: AdaptArgs) -> Result<u8, String> {
    let preset = Preset::parse(&args.preset).map_err(|e| e.to_string())?;
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(iterations) = args.iterations {
        cfg.iterations = iterations;
    }
    cfg.validate().map_err(|e| e.to_string())?;
    let source = load_checkpoint(&args.source_checkpoint).map_err(|e| e.to_string())?;
    let shots_text = fs::read_to_string(&args.shots_file).map_err(|e| {
        format!(
            "cannot read shots file {}: {e}",
            args.shots_file.display()
        )
    })?;
    let shots = TargetShotSet::new(parse_shots_csv(&shots_text)?).map_err(|e| e.to_string())?;
    let out = prepare_out(args.out)?;

    let mut config = vec![
        format!("source_checkpoint = {}", args.source_checkpoint.display()),
        format!("shots_file = {}", args.shots_file.display()),
        format!("shots = {}", shots.n_shot()),
        format!("eval_preset = {}", preset.name()),
    ];
    config.extend(snapshot_lines(&cfg));
    let manifest = RunManifest::begin("adapt", cfg.seed, &out, config)?;

    let body = (|| -> Result<u8, String> {
        let report = run_adaptation(&source, &shots, &cfg).map_err(|e| e.to_string())?;
        save_checkpoint(&out.join("checkpoint.efr"), &report.state).map_err(|e| e.to_string())?;
        fs::write(out.join("metrics.csv"), metrics_to_csv(&report.metrics))
            .map_err(|e| e.to_string())?;
        let summary =
            evaluate_adaptation(&report.state, preset, &report.metrics).map_err(|e| e.to_string())?;
        fs::write(out.join("eval_summary.txt"), summary.to_text()).map_err(|e| e.to_string())?;
        println!(
            "adapt: {} iterations on {} shots; sliced score {:.4}, Frechet distance {:.4} on held-out {}",
            cfg.iterations,
            shots.n_shot(),
            summary.sliced_score,
            summary.frechet_distance,
            preset.name(),
        );
        Ok(0)
    })();
    match body {
        Ok(code) => {
            manifest.finish("ok")?;
            Ok(code)
        }
        Err(msg) => {
            let _ = manifest.finish("error");
            Err(msg)
        }
    }
}

/// Worst case over one gradient-check target.
struct TargetSummary {
    target: &'static str,
    cases: usize,
    max_rel_err: f64,
    worst_case: usize,
    passed: bool,
}

impl TargetSummary {
    fn new(target: &'static str) -> Self {
        TargetSummary {
            target,
            cases: 0,
            max_rel_err: 0.0,
            worst_case: 0,
            passed: true,
        }
    }

    fn absorb(&mut self, case: usize, report: &GradientReport) {
        if report.max_relative_error > self.max_rel_err {
            self.max_rel_err = report.max_relative_error;
            self.worst_case = case;
        }
        self.passed &= report.passed;
    }
}

fn oriented(grads: Vec<f64>, flip: bool) -> Vec<f64> {
    if flip {
        grads.into_iter().map(|g| -g).collect()
    } else {
        grads
    }
}

fn seeded_batch(seed: u64, label: &str, n: usize, d: usize) -> FeatureBatch {
    let mut rng = stream_rng(seed, label);
    FeatureBatch::new(normal_matrix(&mut rng, n, d)).expect("sampled batch is finite")
}

fn seeded_param(seed: u64, label: &str, d: usize) -> SkewParamMatrix {
    let mut rng = stream_rng(seed, label);
    SkewParamMatrix::new(normal_matrix(&mut rng, d, d)).expect("sampled parameter is finite")
}

fn check_ins(seed: u64, rtol: f64, flip: bool) -> Result<TargetSummary, String> {
    let mut summary = TargetSummary::new("ins");
    let cfg = InstanceLossConfig::new(0.5).map_err(|e| e.to_string())?;
    let (n, d) = (4, 3);
    for case in 0..GRADCHECK_CASES as u64 {
        let src = seeded_batch(seed + case, "gradcheck.ins.src", n, d);
        let tgt = seeded_batch(seed + case, "gradcheck.ins.tgt", n, d);
        let param = seeded_param(seed + case, "gradcheck.ins.param", d);
        let g = instance_alignment_grad(&src, &tgt, &param, &cfg).map_err(|e| e.to_string())?;
        let analytic = oriented(
            g.d_tgt.iter().chain(g.d_param.iter()).copied().collect(),
            flip,
        );
        let x: Vec<f64> = tgt
            .rows()
            .iter()
            .chain(param.entries().iter())
            .copied()
            .collect();
        let loss_fn = |flat: &[f64]| {
            let t = Array2::from_shape_vec((n, d), flat[..n * d].to_vec()).expect("n*d entries");
            let p = Array2::from_shape_vec((d, d), flat[n * d..].to_vec()).expect("d*d entries");
            instance_alignment_loss(
                &src,
                &FeatureBatch::new(t).expect("finite probe"),
                &SkewParamMatrix::new(p).expect("finite probe"),
                &cfg,
            )
            .expect("probe evaluates")
        };
        let report =
            gradcheck::check(loss_fn, &analytic, &x, FD_STEP, rtol, 0.0).map_err(|e| e.to_string())?;
        summary.absorb(case as usize, &report);
        summary.cases += 1;
    }
    Ok(summary)
}

fn check_dis(seed: u64, rtol: f64, flip: bool) -> Result<TargetSummary, String> {
    let mut summary = TargetSummary::new("dis");
    let (n, d) = (3, 2);
    for case in 0..GRADCHECK_CASES as u64 {
        let src = seeded_batch(seed + case, "gradcheck.dis.src", n, d);
        let tgt = seeded_batch(seed + case, "gradcheck.dis.tgt", n, d);
        let param = seeded_param(seed + case, "gradcheck.dis.param", d);
        let projections = sample_projections(4, d, seed + case).map_err(|e| e.to_string())?;
        let coupling = CouplingMatrix::uniform(n);
        let g = sliced_gw_grad(&src, &tgt, &param, &projections, &coupling)
            .map_err(|e| e.to_string())?;
        let analytic = oriented(
            g.d_tgt.iter().chain(g.d_param.iter()).copied().collect(),
            flip,
        );
        let x: Vec<f64> = tgt
            .rows()
            .iter()
            .chain(param.entries().iter())
            .copied()
            .collect();
        let loss_fn = |flat: &[f64]| {
            let t = Array2::from_shape_vec((n, d), flat[..n * d].to_vec()).expect("n*d entries");
            let p = Array2::from_shape_vec((d, d), flat[n * d..].to_vec()).expect("d*d entries");
            sliced_gw_loss(
                &src,
                &FeatureBatch::new(t).expect("finite probe"),
                &SkewParamMatrix::new(p).expect("finite probe"),
                &projections,
                &coupling,
            )
            .expect("probe evaluates")
        };
        let report =
            gradcheck::check(loss_fn, &analytic, &x, FD_STEP, rtol, 0.0).map_err(|e| e.to_string())?;
        summary.absorb(case as usize, &report);
        summary.cases += 1;
    }
    Ok(summary)
}

fn check_gan(seed: u64, rtol: f64, flip: bool) -> Result<TargetSummary, String> {
    let mut summary = TargetSummary::new("gan");
    let variant = GanVariant::NonSaturating;
    for case in 0..GRADCHECK_CASES as u64 {
        let mut rng = stream_rng(seed + case, "gradcheck.gan");
        let gen = ToyGenerator::init(4, 6, 2, &mut rng);
        let disc = ToyDiscriminator::init(2, 8, &mut rng);
        let real = normal_matrix(&mut rng, 5, 2);
        let noise = normal_matrix(&mut rng, 5, 4);
        let g = gan_grads(&gen, &disc, &real, &noise, variant).map_err(|e| e.to_string())?;

        let x0 = gen.params_flat();
        let analytic = oriented(g.d_gen.clone(), flip);
        let (gen_c, disc_c, real_c, noise_c) =
            (gen.clone(), disc.clone(), real.clone(), noise.clone());
        let f = move |xs: &[f64]| {
            let mut probe = gen_c.clone();
            probe.set_params_flat(xs).expect("matching length");
            gan_losses(&probe, &disc_c, &real_c, &noise_c, variant)
                .expect("probe evaluates")
                .loss_g
        };
        let report = gradcheck::check(f, &analytic, &x0, FD_STEP, rtol, FD_NOISE_ATOL)
            .map_err(|e| e.to_string())?;
        summary.absorb(case as usize, &report);

        let x0 = disc.params_flat();
        let analytic = oriented(g.d_disc.clone(), flip);
        let (gen_c, disc_c, real_c, noise_c) = (gen, disc.clone(), real, noise);
        let f = move |xs: &[f64]| {
            let mut probe = disc_c.clone();
            probe.set_params_flat(xs).expect("matching length");
            gan_losses(&gen_c, &probe, &real_c, &noise_c, variant)
                .expect("probe evaluates")
                .loss_d
        };
        let report = gradcheck::check(f, &analytic, &x0, FD_STEP, rtol, FD_NOISE_ATOL)
            .map_err(|e| e.to_string())?;
        summary.absorb(case as usize, &report);
        summary.cases += 1;
    }
    Ok(summary)
}

fn check_rotation(seed: u64, rtol: f64, flip: bool) -> Result<TargetSummary, String> {
    let mut summary = TargetSummary::new("rotation");
    let d = 4;
    for case in 0..GRADCHECK_CASES as u64 {
        // For a fixed rotation Q, L(P) = |R(P) - Q|_F^2 has dL/dR = 2 (R - Q).
        let q = rotation_from_param(&seeded_param(seed + case, "gradcheck.rot.target", d));
        let p0 = seeded_param(seed + case, "gradcheck.rot.param", d);
        let r = rotation_from_param(&p0);
        let upstream = (r.matrix() - q.matrix()).mapv(|v| 2.0 * v);
        let analytic = oriented(
            grad_through_rotation(&p0, &upstream).iter().copied().collect(),
            flip,
        );
        let x: Vec<f64> = p0.entries().iter().copied().collect();
        let loss_fn = |flat: &[f64]| {
            let m = Array2::from_shape_vec((d, d), flat.to_vec()).expect("d*d entries");
            let rot = rotation_from_param(&SkewParamMatrix::new(m).expect("finite probe"));
            let diff = rot.matrix() - q.matrix();
            diff.iter().map(|v| v * v).sum::<f64>()
        };
        let report =
            gradcheck::check(loss_fn, &analytic, &x, FD_STEP, rtol, 0.0).map_err(|e| e.to_string())?;
        summary.absorb(case as usize, &report);
        summary.cases += 1;
    }
    Ok(summary)
}

fn render_gradcheck_table(rows: &[TargetSummary], rtol: f64) -> String {
    let mut out = format!(
        "{:<9} {:>6} {:>13} {:>11} {:>10} {:>9} {:>7}\n",
        "target", "cases", "max_rel_err", "worst_case", "step", "rtol", "result"
    );
    for row in rows {
        let _ = writeln!(
            out,
            "{:<9} {:>6} {:>13.3e} {:>11} {:>10.1e} {:>9.1e} {:>7}",
            row.target,
            row.cases,
            row.max_rel_err,
            row.worst_case,
            FD_STEP,
            rtol,
            if row.passed { "pass" } else { "FAIL" },
        );
    }
    out
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<u8, String> {
    let rtol_valid = args.rtol.is_finite() && args.rtol > 0.0;
    if !rtol_valid {
        return Err("--rtol must be positive".to_string());
    }
    let targets: Vec<GradTarget> = match args.target {
        GradTarget::All => vec![
            GradTarget::Ins,
            GradTarget::Dis,
            GradTarget::Gan,
            GradTarget::Rotation,
        ],
        single => vec![single],
    };

    let manifest = match args.out {
        Some(dir) => {
            let out = prepare_out(Some(dir))?;
            let config = vec![
                format!(
                    "targets = {}",
                    targets
                        .iter()
                        .map(|t| match t {
                            GradTarget::Ins => "ins",
                            GradTarget::Dis => "dis",
                            GradTarget::Gan => "gan",
                            GradTarget::Rotation => "rotation",
                            GradTarget::All => unreachable!("expanded above"),
                        })
                        .collect::<Vec<_>>()
                        .join(",")
                ),
                format!("cases_per_target = {GRADCHECK_CASES}"),
                format!("step = {FD_STEP}"),
                format!("rtol = {}", args.rtol),
                format!("inject_sign_flip = {}", args.inject_sign_flip),
            ];
            Some(RunManifest::begin("gradcheck", args.seed, &out, config)?)
        }
        None => None,
    };

    let body = (|| -> Result<Vec<TargetSummary>, String> {
        let mut rows = Vec::new();
        for target in &targets {
            rows.push(match target {
                GradTarget::Ins => check_ins(args.seed, args.rtol, args.inject_sign_flip)?,
                GradTarget::Dis => check_dis(args.seed, args.rtol, args.inject_sign_flip)?,
                GradTarget::Gan => check_gan(args.seed, args.rtol, args.inject_sign_flip)?,
                GradTarget::Rotation => {
                    check_rotation(args.seed, args.rtol, args.inject_sign_flip)?
                }
                GradTarget::All => unreachable!("expanded above"),
            });
        }
        Ok(rows)
    })();

    let rows = match body {
        Ok(rows) => rows,
        Err(msg) => {
            if let Some(m) = &manifest {
                let _ = m.finish("error");
            }
            return Err(msg);
        }
    };
    let table = render_gradcheck_table(&rows, args.rtol);
    print!("{table}");
    let all_passed = rows.iter().all(|r| r.passed);
    if let Some(m) = &manifest {
        fs::write(m.out_dir.join("gradcheck.txt"), &table).map_err(|e| e.to_string())?;
        m.finish(if all_passed { "ok" } else { "failed" })?;
    }
    Ok(if all_passed { 0 } else { 1 })
}

/// Rotation by `angle` radians in the (0, 1) coordinate plane of R^dim.
fn plane_rotation(dim: usize, angle: f64) -> Result<RotationMatrix, String> {
    let mut upper = vec![0.0; dim * (dim - 1) / 2];
    upper[0] = -angle;
    let skew = SkewMatrix::from_strict_upper(dim, upper).map_err(|e| e.to_string())?;
    Ok(matrix_exp(&skew))
}

fn cmd_demo_rotation(args: DemoRotationArgs) -> Result<u8, String> {
    if args.dim < 2 {
        return Err(format!("--dim must be at least 2, got {}", args.dim));
    }
    if args.restarts == 0 {
        return Err("--restarts must be positive".to_string());
    }
    let mut opts = RecoveryOptions::new(args.seed);
    opts.restarts = args.restarts;
    let planted = plane_rotation(args.dim, args.angle_deg.to_radians())?;
    let out = prepare_out(args.out)?;

    let config = vec![
        format!("dim = {}", args.dim),
        format!("angle_deg = {}", args.angle_deg),
        format!("n = {}", args.n),
        format!("restarts = {}", opts.restarts),
        format!("steps = {}", opts.steps),
        format!("lr = {}", opts.lr),
        format!("tau = {}", opts.tau),
        format!("beta1 = {}", opts.beta1),
        format!("beta2 = {}", opts.beta2),
    ];
    let manifest = RunManifest::begin("demo-rotation", args.seed, &out, config)?;

    let body = (|| -> Result<u8, String> {
        let mut rng = stream_rng(args.seed, "demo.features");
        let src =
            FeatureBatch::new(normal_matrix(&mut rng, args.n, args.dim)).map_err(|e| e.to_string())?;
        let report = rotation_recovery_eval(&src, &planted, &opts).map_err(|e| e.to_string())?;
        fs::write(out.join("recovery.csv"), recovery_to_csv(&report))
            .map_err(|e| e.to_string())?;
        println!(
            "planted {} deg in the (0, 1) plane of R^{}; best of {} restarts recovers it with error {:.3e} (restart {})",
            args.angle_deg, args.dim, opts.restarts, report.best_error, report.best_restart,
        );
        Ok(0)
    })();
    match body {
        Ok(code) => {
            manifest.finish("ok")?;
            Ok(code)
        }
        Err(msg) => {
            let _ = manifest.finish("error");
            Err(msg)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shots_csv_round_trips_rows() {
        let parsed = parse_shots_csv("1.0, 2.0\n-3.5,4.25\n\n0,0\n").unwrap();
        assert_eq!(parsed.shape(), &[3, 2]);
        assert_eq!(parsed[[1, 0]], -3.5);
        assert_eq!(parsed[[1, 1]], 4.25);
    }

    #[test]
    fn shots_csv_rejects_garbage_and_ragged_rows() {
        assert!(parse_shots_csv("").unwrap_err().contains("no samples"));
        assert!(parse_shots_csv("1.0,x\n")
            .unwrap_err()
            .contains("not a number"));
        let err = parse_shots_csv("1.0,2.0\n3.0\n").unwrap_err();
        assert!(err.contains("expected 2 columns"), "{err}");
    }

    #[test]
    fn plane_rotation_matches_closed_form_in_2d() {
        let theta = 0.6f64;
        let r = plane_rotation(2, theta).unwrap();
        let m = r.matrix();
        assert!((m[[0, 0]] - theta.cos()).abs() < 1e-12);
        assert!((m[[0, 1]] + theta.sin()).abs() < 1e-12);
        assert!((m[[1, 0]] - theta.sin()).abs() < 1e-12);
        assert!((m[[1, 1]] - theta.cos()).abs() < 1e-12);
    }

    #[test]
    fn plane_rotation_embeds_in_higher_dims() {
        let r = plane_rotation(4, 0.3).unwrap();
        assert!(r.orthogonality_residual() < 1e-12);
        let m = r.matrix();
        assert!((m[[2, 2]] - 1.0).abs() < 1e-12);
        assert!((m[[3, 3]] - 1.0).abs() < 1e-12);
        assert!(m[[2, 0]].abs() < 1e-12);
    }

    #[test]
    fn manifest_renders_run_then_finish() {
        let manifest = RunManifest {
            command: "pretrain",
            seed: 7,
            out_dir: PathBuf::from("/tmp/run"),
            started_unix: 100,
            config: vec!["lambda1 = 0.6".to_string()],
        };
        let running = manifest.render("running", None);
        assert!(running.contains("command = pretrain\n"));
        assert!(running.contains("seed = 7\n"));
        assert!(running.contains("status = running\n"));
        assert!(running.contains("config.lambda1 = 0.6\n"));
        assert!(!running.contains("finished_unix"));
        let finished = manifest.render("ok", Some(160));
        assert!(finished.contains("finished_unix = 160\n"));
        assert!(finished.contains("status = ok\n"));
    }

    #[test]
    fn sign_flip_negates() {
        assert_eq!(oriented(vec![1.0, -2.0], true), vec![-1.0, 2.0]);
        assert_eq!(oriented(vec![1.0, -2.0], false), vec![1.0, -2.0]);
    }
}
