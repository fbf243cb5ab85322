//! Adversarial losses and the combined adaptation objective.
//!
//! The total objective is `L_G + L_D + lambda1 * L_ins + lambda2 * L_dis`,
//! where the alignment terms act on the generator's hidden features through
//! the learned rotation. One evaluation returns the per-term values, the
//! gradients each alternating update actually applies (discriminator from
//! `L_D` alone; generator and rotation from `L_G` plus the weighted
//! alignment terms), and the full-sum gradients used for finite-difference
//! validation.

use ndarray::{Array1, Array2};

use crate::align_losses::{instance_alignment_grad, FeatureBatch, InstanceLossConfig};
use crate::lie_rotation::SkewParamMatrix;
use crate::ot_solver::{sliced_gw_grad, CouplingMatrix, ProjectionSet};
use crate::{Error, Result};

use super::config::{GanVariant, LossConfig};
use super::net::{DiscForward, ToyDiscriminator, ToyGenerator};

/// Discriminator probabilities are clamped to this range before any log, and
/// gradients are zeroed on clamped samples so the analytic gradient remains
/// the exact derivative of the computed loss.
pub const PROB_CLAMP: f64 = 1e-7;

fn sigmoid(logit: f64) -> f64 {
    if logit >= 0.0 {
        1.0 / (1.0 + (-logit).exp())
    } else {
        let e = logit.exp();
        e / (1.0 + e)
    }
}

/// Clamped probability and whether the clamp was active.
fn clamped_prob(logit: f64) -> (f64, bool) {
    let p = sigmoid(logit);
    if p < PROB_CLAMP {
        (PROB_CLAMP, true)
    } else if p > 1.0 - PROB_CLAMP {
        (1.0 - PROB_CLAMP, true)
    } else {
        (p, false)
    }
}

/// Mean of `-log D` over a batch, with the logit gradient of that mean.
/// `d/dlogit -log sigmoid = sigmoid - 1`, zero where the clamp is active.
fn neg_log_d(fwd: &DiscForward) -> (f64, Array1<f64>) {
    let batch = fwd.logits.len() as f64;
    let mut loss = 0.0;
    let mut d_logits = Array1::<f64>::zeros(fwd.logits.len());
    for (i, &l) in fwd.logits.iter().enumerate() {
        let (p, clamped) = clamped_prob(l);
        loss -= p.ln() / batch;
        if !clamped {
            d_logits[i] = (sigmoid(l) - 1.0) / batch;
        }
    }
    (loss, d_logits)
}

/// Mean of `-log(1 - D)` over a batch, with the logit gradient of that mean.
/// `d/dlogit -log(1 - sigmoid) = sigmoid`, zero where the clamp is active.
fn neg_log_one_minus_d(fwd: &DiscForward) -> (f64, Array1<f64>) {
    let batch = fwd.logits.len() as f64;
    let mut loss = 0.0;
    let mut d_logits = Array1::<f64>::zeros(fwd.logits.len());
    for (i, &l) in fwd.logits.iter().enumerate() {
        let (p, clamped) = clamped_prob(l);
        loss -= (1.0 - p).ln() / batch;
        if !clamped {
            d_logits[i] = sigmoid(l) / batch;
        }
    }
    (loss, d_logits)
}

fn check_gan_shapes(
    gen: &ToyGenerator,
    disc: &ToyDiscriminator,
    real: &Array2<f64>,
    noise: &Array2<f64>,
) -> Result<()> {
    if noise.ncols() != gen.noise_dim()
        || real.ncols() != gen.sample_dim()
        || disc.sample_dim() != gen.sample_dim()
        || real.nrows() != noise.nrows()
        || real.nrows() == 0
    {
        return Err(Error::ShapeMismatch {
            context: "adversarial batch",
            expected: format!(
                "noise Bx{}, real Bx{} with B >= 1",
                gen.noise_dim(),
                gen.sample_dim()
            ),
            found: format!(
                "noise {}x{}, real {}x{}, disc input {}",
                noise.nrows(),
                noise.ncols(),
                real.nrows(),
                real.ncols(),
                disc.sample_dim()
            ),
        });
    }
    if real.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("real batch"));
    }
    if noise.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("noise batch"));
    }
    Ok(())
}

/// Generator and discriminator loss values.
#[derive(Debug, Clone, Copy)]
pub struct GanLosses {
    pub loss_g: f64,
    pub loss_d: f64,
}

/// Loss values plus the gradients the alternating updates use:
/// `d_gen` is the generator gradient of `loss_g` (discriminator held fixed)
/// and `d_disc` is the discriminator gradient of `loss_d` (fakes held fixed).
#[derive(Debug, Clone)]
pub struct GanGradients {
    pub loss_g: f64,
    pub loss_d: f64,
    pub d_gen: Vec<f64>,
    pub d_disc: Vec<f64>,
}

struct GanPieces {
    loss_g: f64,
    loss_d: f64,
    d_logits_real: Array1<f64>,
    d_logits_fake_for_d: Array1<f64>,
    d_logits_fake_for_g: Array1<f64>,
}

fn gan_pieces(real_fwd: &DiscForward, fake_fwd: &DiscForward, variant: GanVariant) -> GanPieces {
    // The generator loss is non-saturating in both variants.
    let (loss_g, d_logits_fake_for_g) = neg_log_d(fake_fwd);
    match variant {
        GanVariant::NonSaturating => {
            let (real_term, d_logits_real) = neg_log_d(real_fwd);
            let (fake_term, d_logits_fake_for_d) = neg_log_one_minus_d(fake_fwd);
            GanPieces {
                loss_g,
                loss_d: real_term + fake_term,
                d_logits_real,
                d_logits_fake_for_d,
                d_logits_fake_for_g,
            }
        }
        GanVariant::RoleSwapped => {
            // Minimizes log(1 - D(real)) + log D(fake): the negations of the
            // non-saturating terms with real and fake roles exchanged.
            let (real_term, d_real) = neg_log_one_minus_d(real_fwd);
            let (fake_term, d_fake) = neg_log_d(fake_fwd);
            GanPieces {
                loss_g,
                loss_d: -real_term - fake_term,
                d_logits_real: -d_real,
                d_logits_fake_for_d: -d_fake,
                d_logits_fake_for_g,
            }
        }
    }
}

/// Adversarial loss values for a generator/discriminator pair.
pub fn gan_losses(
    gen: &ToyGenerator,
    disc: &ToyDiscriminator,
    real: &Array2<f64>,
    noise: &Array2<f64>,
    variant: GanVariant,
) -> Result<GanLosses> {
    check_gan_shapes(gen, disc, real, noise)?;
    let fake = gen.forward(noise);
    let real_fwd = disc.forward(real);
    let fake_fwd = disc.forward(&fake.output);
    let pieces = gan_pieces(&real_fwd, &fake_fwd, variant);
    Ok(GanLosses {
        loss_g: pieces.loss_g,
        loss_d: pieces.loss_d,
    })
}

/// Adversarial losses plus the update gradients.
pub fn gan_grads(
    gen: &ToyGenerator,
    disc: &ToyDiscriminator,
    real: &Array2<f64>,
    noise: &Array2<f64>,
    variant: GanVariant,
) -> Result<GanGradients> {
    check_gan_shapes(gen, disc, real, noise)?;
    let fake = gen.forward(noise);
    let real_fwd = disc.forward(real);
    let fake_fwd = disc.forward(&fake.output);
    let pieces = gan_pieces(&real_fwd, &fake_fwd, variant);

    let (d_disc_real, _) = disc.backward(real, &real_fwd, &pieces.d_logits_real);
    let (d_disc_fake, _) = disc.backward(&fake.output, &fake_fwd, &pieces.d_logits_fake_for_d);
    let d_disc: Vec<f64> = d_disc_real
        .iter()
        .zip(&d_disc_fake)
        .map(|(a, b)| a + b)
        .collect();

    let (_, d_fake_input) = disc.backward(&fake.output, &fake_fwd, &pieces.d_logits_fake_for_g);
    let d_gen = gen.backward(noise, &fake, &d_fake_input, None);

    Ok(GanGradients {
        loss_g: pieces.loss_g,
        loss_d: pieces.loss_d,
        d_gen,
        d_disc,
    })
}

/// One evaluation of the combined objective.
#[derive(Debug, Clone)]
pub struct TotalLossRecord {
    pub loss_total: f64,
    pub loss_g: f64,
    pub loss_d: f64,
    pub loss_ins: f64,
    pub loss_dis: f64,
    /// Generator gradient the update applies: `L_G` plus the weighted
    /// alignment terms through the feature layer.
    pub d_gen_update: Vec<f64>,
    /// Discriminator gradient the update applies: `L_D` alone.
    pub d_disc_update: Vec<f64>,
    /// Rotation gradient the update applies (also the full-sum gradient;
    /// only the alignment terms touch the rotation).
    pub d_rot_update: Array2<f64>,
    /// Full-sum generator gradient, including the `L_D` path through the
    /// fake samples; used for finite-difference validation.
    pub d_gen_full: Vec<f64>,
    /// Full-sum discriminator gradient, including the `L_G` path.
    pub d_disc_full: Vec<f64>,
}

/// Evaluate the combined objective and all its gradients at one batch.
///
/// `src_gen` is the frozen source generator: both generators see the same
/// noise, and the alignment terms compare their hidden features under the
/// rotation. The coupling and projections are treated as fixed inputs.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    src_gen: &ToyGenerator,
    tgt_gen: &ToyGenerator,
    disc: &ToyDiscriminator,
    rot: &SkewParamMatrix,
    real: &Array2<f64>,
    noise: &Array2<f64>,
    projections: &ProjectionSet,
    coupling: &CouplingMatrix,
    cfg: &LossConfig,
) -> Result<TotalLossRecord> {
    check_gan_shapes(tgt_gen, disc, real, noise)?;
    if src_gen.noise_dim() != tgt_gen.noise_dim()
        || src_gen.feature_dim() != tgt_gen.feature_dim()
        || rot.dim() != tgt_gen.feature_dim()
    {
        return Err(Error::ShapeMismatch {
            context: "feature alignment",
            expected: format!(
                "source generator {}->{} and rotation {0}x{0}",
                tgt_gen.feature_dim(),
                tgt_gen.noise_dim()
            ),
            found: format!(
                "source {}->{}, rotation {}x{}",
                src_gen.feature_dim(),
                src_gen.noise_dim(),
                rot.dim(),
                rot.dim()
            ),
        });
    }

    let src_fwd = src_gen.forward(noise);
    let fake = tgt_gen.forward(noise);
    let real_fwd = disc.forward(real);
    let fake_fwd = disc.forward(&fake.output);
    let pieces = gan_pieces(&real_fwd, &fake_fwd, cfg.gan_variant);

    let src_feats = FeatureBatch::new(src_fwd.hidden)?;
    let tgt_feats = FeatureBatch::new(fake.hidden.clone())?;
    let ins_cfg = InstanceLossConfig::new(cfg.tau)?;
    let ins = instance_alignment_grad(&src_feats, &tgt_feats, rot, &ins_cfg)?;
    let dis = sliced_gw_grad(&src_feats, &tgt_feats, rot, projections, coupling)?;

    let loss_total =
        pieces.loss_g + pieces.loss_d + cfg.lambda1 * ins.loss + cfg.lambda2 * dis.loss;

    // Discriminator: update gradient is L_D alone; the full sum adds L_G.
    let (d_disc_real, _) = disc.backward(real, &real_fwd, &pieces.d_logits_real);
    let (d_disc_fake_d, d_fake_input_d) =
        disc.backward(&fake.output, &fake_fwd, &pieces.d_logits_fake_for_d);
    let (d_disc_fake_g, d_fake_input_g) =
        disc.backward(&fake.output, &fake_fwd, &pieces.d_logits_fake_for_g);
    let d_disc_update: Vec<f64> = d_disc_real
        .iter()
        .zip(&d_disc_fake_d)
        .map(|(a, b)| a + b)
        .collect();
    let d_disc_full: Vec<f64> = d_disc_update
        .iter()
        .zip(&d_disc_fake_g)
        .map(|(a, b)| a + b)
        .collect();

    // Generator: alignment gradients enter at the hidden (feature) layer.
    let d_hidden = cfg.lambda1 * &ins.d_tgt + cfg.lambda2 * &dis.d_tgt;
    let d_gen_update = tgt_gen.backward(noise, &fake, &d_fake_input_g, Some(&d_hidden));
    let d_fake_full = &d_fake_input_g + &d_fake_input_d;
    let d_gen_full = tgt_gen.backward(noise, &fake, &d_fake_full, Some(&d_hidden));

    let d_rot_update = cfg.lambda1 * &ins.d_param + cfg.lambda2 * &dis.d_param;

    Ok(TotalLossRecord {
        loss_total,
        loss_g: pieces.loss_g,
        loss_d: pieces.loss_d,
        loss_ins: ins.loss,
        loss_dis: dis.loss,
        d_gen_update,
        d_disc_update,
        d_rot_update,
        d_gen_full,
        d_disc_full,
    })
}
