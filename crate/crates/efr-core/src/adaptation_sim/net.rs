//! Toy generator and discriminator with hand-written backward passes.
//!
//! Both nets are single-hidden-layer tanh MLPs, small enough that every
//! gradient is checkable by finite differences. The generator exposes its
//! hidden activations as the feature layer on which the rotation and the
//! alignment losses act; the backward pass therefore accepts an extra
//! gradient injected at the hidden layer in addition to the usual output
//! gradient.

use ndarray::{Array1, Array2, Axis};
use rand_chacha::ChaCha8Rng;

use crate::rng::normal_matrix;
use crate::{Error, Result};

/// Generator noise dimension used by the simulator presets.
pub const NOISE_DIM: usize = 8;

/// Generator hidden (feature) dimension; the rotation acts here.
pub const FEATURE_DIM: usize = 16;

/// Sample dimension of the synthetic mixtures.
pub const SAMPLE_DIM: usize = 2;

/// Discriminator hidden width.
pub const DISC_HIDDEN: usize = 32;

fn check_finite_slice(name: &'static str, xs: &[f64]) -> Result<()> {
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(name));
    }
    Ok(())
}

/// Noise -> tanh feature layer -> linear sample head.
#[derive(Debug, Clone)]
pub struct ToyGenerator {
    w1: Array2<f64>, // feature_dim x noise_dim
    b1: Array1<f64>,
    w2: Array2<f64>, // sample_dim x feature_dim
    b2: Array1<f64>,
}

/// Cached activations from a generator forward pass.
#[derive(Debug, Clone)]
pub struct GenForward {
    /// Hidden tanh activations, batch x feature_dim. This is the feature
    /// layer the rotation acts on.
    pub hidden: Array2<f64>,
    /// Output samples, batch x sample_dim.
    pub output: Array2<f64>,
}

impl ToyGenerator {
    /// Fresh generator with `w ~ N(0, 1/fan_in)` weights and zero biases.
    pub fn init(noise_dim: usize, feature_dim: usize, sample_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let w1 = normal_matrix(rng, feature_dim, noise_dim) / (noise_dim as f64).sqrt();
        let w2 = normal_matrix(rng, sample_dim, feature_dim) / (feature_dim as f64).sqrt();
        ToyGenerator {
            w1,
            b1: Array1::zeros(feature_dim),
            w2,
            b2: Array1::zeros(sample_dim),
        }
    }

    /// Rebuild from explicit weights (checkpoint load path).
    pub fn from_parts(
        w1: Array2<f64>,
        b1: Array1<f64>,
        w2: Array2<f64>,
        b2: Array1<f64>,
    ) -> Result<Self> {
        if w1.nrows() != b1.len() || w2.ncols() != w1.nrows() || w2.nrows() != b2.len() {
            return Err(Error::ShapeMismatch {
                context: "generator weights",
                expected: "w1 (d x k), b1 (d), w2 (m x d), b2 (m)".to_string(),
                found: format!(
                    "w1 {}x{}, b1 {}, w2 {}x{}, b2 {}",
                    w1.nrows(),
                    w1.ncols(),
                    b1.len(),
                    w2.nrows(),
                    w2.ncols(),
                    b2.len()
                ),
            });
        }
        let g = ToyGenerator { w1, b1, w2, b2 };
        check_finite_slice("generator weights", &g.params_flat())?;
        Ok(g)
    }

    pub fn noise_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn feature_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn sample_dim(&self) -> usize {
        self.w2.nrows()
    }

    pub fn w1(&self) -> &Array2<f64> {
        &self.w1
    }

    pub fn b1(&self) -> &Array1<f64> {
        &self.b1
    }

    pub fn w2(&self) -> &Array2<f64> {
        &self.w2
    }

    pub fn b2(&self) -> &Array1<f64> {
        &self.b2
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Parameters flattened as `[w1 row-major, b1, w2 row-major, b2]`.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        out.extend(self.w1.iter());
        out.extend(self.b1.iter());
        out.extend(self.w2.iter());
        out.extend(self.b2.iter());
        out
    }

    /// Inverse of [`ToyGenerator::params_flat`].
    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::ShapeMismatch {
                context: "generator flat parameters",
                expected: format!("{}", self.param_count()),
                found: format!("{}", flat.len()),
            });
        }
        check_finite_slice("generator flat parameters", flat)?;
        let mut it = flat.iter();
        for v in self.w1.iter_mut() {
            *v = *it.next().unwrap();
        }
        for v in self.b1.iter_mut() {
            *v = *it.next().unwrap();
        }
        for v in self.w2.iter_mut() {
            *v = *it.next().unwrap();
        }
        for v in self.b2.iter_mut() {
            *v = *it.next().unwrap();
        }
        Ok(())
    }

    /// Forward pass over a noise batch (batch x noise_dim).
    pub fn forward(&self, noise: &Array2<f64>) -> GenForward {
        let pre1 = noise.dot(&self.w1.t()) + &self.b1;
        let hidden = pre1.mapv(f64::tanh);
        let output = hidden.dot(&self.w2.t()) + &self.b2;
        GenForward { hidden, output }
    }

    /// Flat parameter gradient for a scalar loss, given the loss gradient at
    /// the output and an optional extra gradient injected at the hidden
    /// (feature) layer. Layout matches [`ToyGenerator::params_flat`].
    pub fn backward(
        &self,
        noise: &Array2<f64>,
        fwd: &GenForward,
        d_output: &Array2<f64>,
        d_hidden_extra: Option<&Array2<f64>>,
    ) -> Vec<f64> {
        let d_b2 = d_output.sum_axis(Axis(0));
        let d_w2 = d_output.t().dot(&fwd.hidden);
        let mut d_hidden = d_output.dot(&self.w2);
        if let Some(extra) = d_hidden_extra {
            d_hidden += extra;
        }
        // d tanh(x) = 1 - tanh(x)^2, with tanh(x) already cached.
        let d_pre1 = &d_hidden * &fwd.hidden.mapv(|h| 1.0 - h * h);
        let d_w1 = d_pre1.t().dot(noise);
        let d_b1 = d_pre1.sum_axis(Axis(0));

        let mut out = Vec::with_capacity(self.param_count());
        out.extend(d_w1.iter());
        out.extend(d_b1.iter());
        out.extend(d_w2.iter());
        out.extend(d_b2.iter());
        out
    }
}

/// Sample -> tanh hidden -> scalar logit.
#[derive(Debug, Clone)]
pub struct ToyDiscriminator {
    w1: Array2<f64>, // hidden x sample_dim
    b1: Array1<f64>,
    w2: Array2<f64>, // 1 x hidden
    b2: Array1<f64>, // length 1
}

/// Cached activations from a discriminator forward pass.
#[derive(Debug, Clone)]
pub struct DiscForward {
    pub hidden: Array2<f64>,
    /// One logit per batch row; probabilities are `sigmoid(logit)`.
    pub logits: Array1<f64>,
}

impl ToyDiscriminator {
    pub fn init(sample_dim: usize, hidden_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let w1 = normal_matrix(rng, hidden_dim, sample_dim) / (sample_dim as f64).sqrt();
        let w2 = normal_matrix(rng, 1, hidden_dim) / (hidden_dim as f64).sqrt();
        ToyDiscriminator {
            w1,
            b1: Array1::zeros(hidden_dim),
            w2,
            b2: Array1::zeros(1),
        }
    }

    /// Rebuild from explicit weights (checkpoint load path).
    pub fn from_parts(
        w1: Array2<f64>,
        b1: Array1<f64>,
        w2: Array2<f64>,
        b2: Array1<f64>,
    ) -> Result<Self> {
        if w1.nrows() != b1.len() || w2.ncols() != w1.nrows() || w2.nrows() != 1 || b2.len() != 1 {
            return Err(Error::ShapeMismatch {
                context: "discriminator weights",
                expected: "w1 (h x m), b1 (h), w2 (1 x h), b2 (1)".to_string(),
                found: format!(
                    "w1 {}x{}, b1 {}, w2 {}x{}, b2 {}",
                    w1.nrows(),
                    w1.ncols(),
                    b1.len(),
                    w2.nrows(),
                    w2.ncols(),
                    b2.len()
                ),
            });
        }
        let d = ToyDiscriminator { w1, b1, w2, b2 };
        check_finite_slice("discriminator weights", &d.params_flat())?;
        Ok(d)
    }

    pub fn sample_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn w1(&self) -> &Array2<f64> {
        &self.w1
    }

    pub fn b1(&self) -> &Array1<f64> {
        &self.b1
    }

    pub fn w2(&self) -> &Array2<f64> {
        &self.w2
    }

    pub fn b2(&self) -> &Array1<f64> {
        &self.b2
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Parameters flattened as `[w1 row-major, b1, w2 row-major, b2]`.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        out.extend(self.w1.iter());
        out.extend(self.b1.iter());
        out.extend(self.w2.iter());
        out.extend(self.b2.iter());
        out
    }

    /// Inverse of [`ToyDiscriminator::params_flat`].
    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::ShapeMismatch {
                context: "discriminator flat parameters",
                expected: format!("{}", self.param_count()),
                found: format!("{}", flat.len()),
            });
        }
        check_finite_slice("discriminator flat parameters", flat)?;
        let mut it = flat.iter();
        for v in self.w1.iter_mut() {
            *v = *it.next().unwrap();
        }
        for v in self.b1.iter_mut() {
            *v = *it.next().unwrap();
        }
        for v in self.w2.iter_mut() {
            *v = *it.next().unwrap();
        }
        for v in self.b2.iter_mut() {
            *v = *it.next().unwrap();
        }
        Ok(())
    }

    /// Forward pass over a sample batch (batch x sample_dim).
    pub fn forward(&self, samples: &Array2<f64>) -> DiscForward {
        let pre1 = samples.dot(&self.w1.t()) + &self.b1;
        let hidden = pre1.mapv(f64::tanh);
        let logits = hidden.dot(&self.w2.row(0)) + self.b2[0];
        DiscForward { hidden, logits }
    }

    /// Flat parameter gradient plus the gradient with respect to the input
    /// samples, given the loss gradient at the logits.
    pub fn backward(
        &self,
        samples: &Array2<f64>,
        fwd: &DiscForward,
        d_logits: &Array1<f64>,
    ) -> (Vec<f64>, Array2<f64>) {
        let batch = samples.nrows();
        let hidden_dim = self.hidden_dim();

        let d_b2 = d_logits.sum();
        let mut d_w2 = Array2::<f64>::zeros((1, hidden_dim));
        for b in 0..batch {
            for h in 0..hidden_dim {
                d_w2[[0, h]] += d_logits[b] * fwd.hidden[[b, h]];
            }
        }
        let mut d_hidden = Array2::<f64>::zeros((batch, hidden_dim));
        for b in 0..batch {
            for h in 0..hidden_dim {
                d_hidden[[b, h]] = d_logits[b] * self.w2[[0, h]];
            }
        }
        let d_pre1 = &d_hidden * &fwd.hidden.mapv(|h| 1.0 - h * h);
        let d_w1 = d_pre1.t().dot(samples);
        let d_b1 = d_pre1.sum_axis(Axis(0));
        let d_input = d_pre1.dot(&self.w1);

        let mut out = Vec::with_capacity(self.param_count());
        out.extend(d_w1.iter());
        out.extend(d_b1.iter());
        out.extend(d_w2.iter());
        out.push(d_b2);
        (out, d_input)
    }
}
