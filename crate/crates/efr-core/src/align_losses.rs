//! Cosine-similarity machinery and the instance-wise contrastive alignment
//! loss.
//!
//! Matched (source, target) feature pairs share a batch index. The loss is
//! an InfoNCE objective over cosine similarities: each source row is pulled
//! toward its rotated target partner and pushed away from the in-batch
//! negatives. The rotation acts on the target side only; gradients flow to
//! the target features and to the rotation parameter.

use ndarray::{Array1, Array2, ArrayView1};

use crate::lie_rotation::{
    grad_through_rotation, rotation_from_param, RotationMatrix, SkewParamMatrix,
};
use crate::{Error, Result};

/// Default InfoNCE temperature.
pub const DEFAULT_TAU: f64 = 0.07;

/// Slack for the similarity-graph invariants (unit diagonal, symmetry,
/// cosine range).
const GRAPH_TOL: f64 = 1e-12;

/// Temperature for the contrastive loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceLossConfig {
    tau: f64,
}

impl InstanceLossConfig {
    pub fn new(tau: f64) -> Result<Self> {
        if !tau.is_finite() || tau <= 0.0 {
            return Err(Error::Config(format!(
                "temperature must be positive and finite, got {tau}"
            )));
        }
        Ok(InstanceLossConfig { tau })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

impl Default for InstanceLossConfig {
    fn default() -> Self {
        InstanceLossConfig { tau: DEFAULT_TAU }
    }
}

/// N x d matrix of per-sample feature rows.
///
/// Every row must have strictly positive norm so cosine similarity is
/// defined.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    rows: Array2<f64>,
}

impl FeatureBatch {
    pub fn new(rows: Array2<f64>) -> Result<Self> {
        if rows.nrows() == 0 || rows.ncols() == 0 {
            return Err(Error::ShapeMismatch {
                context: "FeatureBatch",
                expected: "at least one row and one column".to_string(),
                found: format!("{}x{}", rows.nrows(), rows.ncols()),
            });
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("FeatureBatch entries"));
        }
        for (i, row) in rows.rows().into_iter().enumerate() {
            if row.dot(&row) <= 0.0 {
                return Err(Error::ZeroNormRow { index: i });
            }
        }
        Ok(FeatureBatch { rows })
    }

    pub fn n(&self) -> usize {
        self.rows.nrows()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn rows(&self) -> &Array2<f64> {
        &self.rows
    }

    /// Apply a rotation to every row. Rotations preserve norms, so the
    /// result is a valid batch.
    pub fn rotated(&self, r: &RotationMatrix) -> FeatureBatch {
        FeatureBatch {
            rows: r.rotate_rows(&self.rows),
        }
    }
}

/// N x N matrix of pairwise cosine similarities.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGraph {
    entries: Array2<f64>,
}

impl SimilarityGraph {
    /// Validate an externally built similarity matrix: square, symmetric,
    /// unit diagonal, entries in the cosine range (1e-12 slack throughout).
    pub fn try_new(entries: Array2<f64>) -> Result<Self> {
        let (n, m) = entries.dim();
        if n != m || n == 0 {
            return Err(Error::ShapeMismatch {
                context: "SimilarityGraph",
                expected: "nonempty square matrix".to_string(),
                found: format!("{n}x{m}"),
            });
        }
        for i in 0..n {
            if (entries[[i, i]] - 1.0).abs() > GRAPH_TOL {
                return Err(Error::InvalidInput(format!(
                    "similarity graph diagonal entry {i} is {}, expected 1",
                    entries[[i, i]]
                )));
            }
            for j in 0..n {
                let v = entries[[i, j]];
                if !v.is_finite() || v.abs() > 1.0 + GRAPH_TOL {
                    return Err(Error::InvalidInput(format!(
                        "similarity graph entry ({i},{j}) = {v} outside [-1, 1]"
                    )));
                }
                if (v - entries[[j, i]]).abs() > GRAPH_TOL {
                    return Err(Error::InvalidInput(format!(
                        "similarity graph not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        Ok(SimilarityGraph { entries })
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }
}

/// Cosine similarity of two nonzero vectors.
pub fn cosine_sim(x: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch {
            context: "cosine_sim",
            expected: format!("length {}", x.len()),
            found: format!("length {}", y.len()),
        });
    }
    let nx = x.dot(&x).sqrt();
    let ny = y.dot(&y).sqrt();
    if nx <= 0.0 || ny <= 0.0 {
        return Err(Error::InvalidInput(
            "cosine similarity of a zero-norm vector".to_string(),
        ));
    }
    Ok(x.dot(&y) / (nx * ny))
}

fn normalized_rows(rows: &Array2<f64>) -> Array2<f64> {
    let mut out = rows.clone();
    for mut row in out.rows_mut() {
        let norm = row.dot(&row).sqrt();
        row.mapv_inplace(|v| v / norm);
    }
    out
}

/// Graph of pairwise cosine similarities within one batch.
///
/// Upper triangle is computed once and mirrored, so symmetry is exact; the
/// diagonal is set to 1 exactly.
pub fn pairwise_similarity(batch: &FeatureBatch) -> SimilarityGraph {
    let unit = normalized_rows(batch.rows());
    let n = batch.n();
    let mut entries = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        entries[[i, i]] = 1.0;
        for j in i + 1..n {
            let s = unit.row(i).dot(&unit.row(j));
            entries[[i, j]] = s;
            entries[[j, i]] = s;
        }
    }
    SimilarityGraph { entries }
}

/// Shared forward pass for the loss and its gradients.
struct AlignForward {
    rotation: RotationMatrix,
    src_unit: Array2<f64>,
    rotated_unit: Array2<f64>,
    rotated_norms: Array1<f64>,
    /// Cosine of source row i against rotated target row j.
    sims: Array2<f64>,
    /// Rowwise softmax of sims / tau.
    softmax: Array2<f64>,
    loss: f64,
}

fn align_forward(
    src: &FeatureBatch,
    tgt: &FeatureBatch,
    param: &SkewParamMatrix,
    cfg: &InstanceLossConfig,
) -> Result<AlignForward> {
    let n = src.n();
    let d = src.dim();
    if tgt.n() != n || tgt.dim() != d {
        return Err(Error::ShapeMismatch {
            context: "instance alignment",
            expected: format!("target batch {n}x{d}"),
            found: format!("{}x{}", tgt.n(), tgt.dim()),
        });
    }
    if param.dim() != d {
        return Err(Error::ShapeMismatch {
            context: "instance alignment",
            expected: format!("rotation parameter {d}x{d}"),
            found: format!("{0}x{0}", param.dim()),
        });
    }

    let rotation = rotation_from_param(param);
    let rotated = rotation.rotate_rows(tgt.rows());
    let rotated_norms = Array1::from_iter(
        rotated
            .rows()
            .into_iter()
            .map(|row| row.dot(&row).sqrt()),
    );
    let rotated_unit = normalized_rows(&rotated);
    let src_unit = normalized_rows(src.rows());
    let sims = src_unit.dot(&rotated_unit.t());

    let tau = cfg.tau();
    let mut softmax = Array2::<f64>::zeros((n, n));
    let mut loss = 0.0;
    for i in 0..n {
        let mut max = f64::NEG_INFINITY;
        for j in 0..n {
            max = max.max(sims[[i, j]] / tau);
        }
        let mut denom = 0.0;
        for j in 0..n {
            let e = (sims[[i, j]] / tau - max).exp();
            softmax[[i, j]] = e;
            denom += e;
        }
        for j in 0..n {
            softmax[[i, j]] /= denom;
        }
        loss += (max - sims[[i, i]] / tau) + denom.ln();
    }

    Ok(AlignForward {
        rotation,
        src_unit,
        rotated_unit,
        rotated_norms,
        sims,
        softmax,
        loss,
    })
}

/// Contrastive alignment loss between matched source and target rows.
///
/// With `R = rotation_from_param(param)` and per-row softmax over
/// `sim(src_i, R tgt_j) / tau`, returns the summed cross-entropy against
/// the matched index. Nonnegative; exactly zero for a single-row batch.
pub fn instance_alignment_loss(
    src: &FeatureBatch,
    tgt: &FeatureBatch,
    param: &SkewParamMatrix,
    cfg: &InstanceLossConfig,
) -> Result<f64> {
    Ok(align_forward(src, tgt, param, cfg)?.loss)
}

/// Loss value plus exact gradients with respect to the target rows and the
/// rotation parameter.
#[derive(Debug, Clone)]
pub struct InstanceGradients {
    pub loss: f64,
    pub d_tgt: Array2<f64>,
    pub d_param: Array2<f64>,
}

/// Analytic gradients of [`instance_alignment_loss`].
///
/// The softmax backward gives `dL/dsim[i,j] = (p[i,j] - delta_ij) / tau`;
/// the cosine backward maps that onto the rotated rows, and the rotation
/// adjoint pulls the resulting d x d gradient back to the parameter.
pub fn instance_alignment_grad(
    src: &FeatureBatch,
    tgt: &FeatureBatch,
    param: &SkewParamMatrix,
    cfg: &InstanceLossConfig,
) -> Result<InstanceGradients> {
    let fwd = align_forward(src, tgt, param, cfg)?;
    let n = src.n();
    let d = src.dim();
    let tau = cfg.tau();

    let mut w = fwd.softmax.clone();
    for i in 0..n {
        w[[i, i]] -= 1.0;
    }
    w.mapv_inplace(|v| v / tau);

    // dL/dv_j = (sum_i w[i,j] su_i - (sum_i w[i,j] sims[i,j]) vu_j) / |v_j|
    // where v_j is the rotated target row, su/vu the unit rows.
    let pushed = w.t().dot(&fwd.src_unit);
    let mut col_mix = Array1::<f64>::zeros(n);
    for i in 0..n {
        for j in 0..n {
            col_mix[j] += w[[i, j]] * fwd.sims[[i, j]];
        }
    }
    let mut d_rotated = Array2::<f64>::zeros((n, d));
    for j in 0..n {
        for a in 0..d {
            d_rotated[[j, a]] =
                (pushed[[j, a]] - col_mix[j] * fwd.rotated_unit[[j, a]]) / fwd.rotated_norms[j];
        }
    }

    let d_tgt = d_rotated.dot(fwd.rotation.matrix());
    let d_rotation = d_rotated.t().dot(tgt.rows());
    let d_param = grad_through_rotation(param, &d_rotation);

    Ok(InstanceGradients {
        loss: fwd.loss,
        d_tgt,
        d_param,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;
    use crate::rng::{normal_matrix, stream_rng};
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Axis};

    fn random_batch(seed: u64, n: usize, d: usize) -> FeatureBatch {
        let mut rng = stream_rng(seed, "align.test.batch");
        FeatureBatch::new(normal_matrix(&mut rng, n, d)).unwrap()
    }

    fn random_rotation(seed: u64, d: usize) -> RotationMatrix {
        let mut rng = stream_rng(seed, "align.test.rot");
        let p = SkewParamMatrix::new(normal_matrix(&mut rng, d, d)).unwrap();
        rotation_from_param(&p)
    }

    #[test]
    fn cosine_trivial_cases() {
        let x = array![3.0, -4.0];
        assert_abs_diff_eq!(cosine_sim(x.view(), x.view()).unwrap(), 1.0, epsilon = 1e-15);

        let e1 = array![1.0, 0.0];
        let e2 = array![0.0, 5.0];
        assert_abs_diff_eq!(cosine_sim(e1.view(), e2.view()).unwrap(), 0.0, epsilon = 1e-15);

        let diag = array![1.0, 1.0];
        assert_abs_diff_eq!(
            cosine_sim(e1.view(), diag.view()).unwrap(),
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-15
        );
    }

    #[test]
    fn cosine_zero_norm_is_error() {
        let zero = array![0.0, 0.0];
        let x = array![1.0, 2.0];
        assert!(cosine_sim(zero.view(), x.view()).is_err());
        assert!(cosine_sim(x.view(), zero.view()).is_err());
    }

    #[test]
    fn cosine_rotation_invariance() {
        let r = random_rotation(3, 4);
        let mut rng = stream_rng(5, "align.test.cosinv");
        for _ in 0..20 {
            let x = normal_matrix(&mut rng, 1, 4);
            let y = normal_matrix(&mut rng, 1, 4);
            let rx = r.rotate_rows(&x);
            let ry = r.rotate_rows(&y);
            let plain = cosine_sim(x.row(0), y.row(0)).unwrap();
            let rotated = cosine_sim(rx.row(0), ry.row(0)).unwrap();
            assert_abs_diff_eq!(plain, rotated, epsilon = 1e-12);
        }
    }

    #[test]
    fn batch_validation_errors() {
        assert!(matches!(
            FeatureBatch::new(array![[1.0, 0.0], [0.0, 0.0]]),
            Err(Error::ZeroNormRow { index: 1 })
        ));
        assert!(FeatureBatch::new(array![[f64::NAN, 1.0]]).is_err());
        assert!(FeatureBatch::new(Array2::zeros((0, 3))).is_err());
    }

    #[test]
    fn pairwise_identical_rows_all_ones() {
        let batch = FeatureBatch::new(array![[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]]).unwrap();
        let g = pairwise_similarity(&batch);
        for v in g.entries() {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn pairwise_orthogonal_rows_identity() {
        let batch = FeatureBatch::new(array![[2.0, 0.0], [0.0, -3.0]]).unwrap();
        let g = pairwise_similarity(&batch);
        assert_abs_diff_eq!(g.entries()[[0, 0]], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g.entries()[[0, 1]], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g.entries()[[1, 0]], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g.entries()[[1, 1]], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn pairwise_matches_direct_recomputation() {
        let batch = random_batch(7, 3, 5);
        let g = pairwise_similarity(&batch);
        for i in 0..3 {
            for j in 0..3 {
                let direct = cosine_sim(batch.rows().row(i), batch.rows().row(j)).unwrap();
                assert_abs_diff_eq!(g.entries()[[i, j]], direct, epsilon = 1e-14);
                assert_eq!(g.entries()[[i, j]], g.entries()[[j, i]]);
            }
            assert_eq!(g.entries()[[i, i]], 1.0);
        }
    }

    #[test]
    fn pairwise_rotation_invariance() {
        let batch = random_batch(11, 6, 4);
        let r = random_rotation(13, 4);
        let plain = pairwise_similarity(&batch);
        let rotated = pairwise_similarity(&batch.rotated(&r));
        for i in 0..6 {
            for j in 0..6 {
                assert_abs_diff_eq!(
                    plain.entries()[[i, j]],
                    rotated.entries()[[i, j]],
                    epsilon = 1e-10
                );
            }
        }
    }

    #[test]
    fn graph_validation() {
        assert!(SimilarityGraph::try_new(array![[1.0, 0.3], [0.3, 1.0]]).is_ok());
        // Broken diagonal.
        assert!(SimilarityGraph::try_new(array![[0.9, 0.3], [0.3, 1.0]]).is_err());
        // Asymmetric.
        assert!(SimilarityGraph::try_new(array![[1.0, 0.3], [0.2, 1.0]]).is_err());
        // Out of cosine range.
        assert!(SimilarityGraph::try_new(array![[1.0, 1.5], [1.5, 1.0]]).is_err());
    }

    #[test]
    fn loss_single_pair_is_zero() {
        let src = FeatureBatch::new(array![[1.0, 2.0, 3.0]]).unwrap();
        let tgt = FeatureBatch::new(array![[-1.0, 0.5, 2.0]]).unwrap();
        let param = SkewParamMatrix::zeros(3).unwrap();
        let loss =
            instance_alignment_loss(&src, &tgt, &param, &InstanceLossConfig::default()).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn loss_matches_hand_value() {
        // Two orthonormal rows, target equal to source, identity rotation,
        // tau = 1: positive-pair similarity 1, negative-pair similarity 0,
        // so the loss is 2 ln(1 + e^{-1}).
        let rows = array![[1.0, 0.0], [0.0, 1.0]];
        let src = FeatureBatch::new(rows.clone()).unwrap();
        let tgt = FeatureBatch::new(rows).unwrap();
        let param = SkewParamMatrix::zeros(2).unwrap();
        let cfg = InstanceLossConfig::new(1.0).unwrap();
        let loss = instance_alignment_loss(&src, &tgt, &param, &cfg).unwrap();
        assert_abs_diff_eq!(loss, 0.6265233750364457, epsilon = 1e-12);
    }

    #[test]
    fn loss_ignores_symmetric_param_component() {
        let src = random_batch(17, 4, 3);
        let tgt = random_batch(19, 4, 3);
        let mut rng = stream_rng(23, "align.test.sym");
        let base = normal_matrix(&mut rng, 3, 3);
        let sym_part = {
            let m = normal_matrix(&mut rng, 3, 3);
            (&m + &m.t()).mapv(|v| 0.5 * v)
        };
        let cfg = InstanceLossConfig::default();
        let l1 = instance_alignment_loss(
            &src,
            &tgt,
            &SkewParamMatrix::new(base.clone()).unwrap(),
            &cfg,
        )
        .unwrap();
        let l2 = instance_alignment_loss(
            &src,
            &tgt,
            &SkewParamMatrix::new(&base + &sym_part).unwrap(),
            &cfg,
        )
        .unwrap();
        assert_abs_diff_eq!(l1, l2, epsilon = 1e-12);
    }

    #[test]
    fn loss_nonnegative_on_random_inputs() {
        let cfg = InstanceLossConfig::default();
        for seed in 0..20 {
            let src = random_batch(100 + seed, 5, 4);
            let tgt = random_batch(200 + seed, 5, 4);
            let mut rng = stream_rng(300 + seed, "align.test.nonneg");
            let param = SkewParamMatrix::new(normal_matrix(&mut rng, 4, 4)).unwrap();
            let loss = instance_alignment_loss(&src, &tgt, &param, &cfg).unwrap();
            assert!(loss >= 0.0, "loss {loss} negative at seed {seed}");
            assert!(loss.is_finite());
        }
    }

    #[test]
    fn loss_two_sided_rotation_equivalence() {
        // Rotating sources by R1 and targets by R2 equals rotating targets
        // alone by R1^T R2.
        let cfg = InstanceLossConfig::default();
        let zero = SkewParamMatrix::zeros(4).unwrap();
        for seed in 0..10 {
            let src = random_batch(400 + seed, 5, 4);
            let tgt = random_batch(500 + seed, 5, 4);
            let r1 = random_rotation(600 + seed, 4);
            let r2 = random_rotation(700 + seed, 4);
            let both = instance_alignment_loss(
                &src.rotated(&r1),
                &tgt.rotated(&r2),
                &zero,
                &cfg,
            )
            .unwrap();
            let combined = RotationMatrix::try_new(r1.matrix().t().dot(r2.matrix())).unwrap();
            let single =
                instance_alignment_loss(&src, &tgt.rotated(&combined), &zero, &cfg).unwrap();
            assert_abs_diff_eq!(both, single, epsilon = 1e-10);
        }
    }

    #[test]
    fn loss_permutation_equivariance() {
        let src = random_batch(31, 6, 3);
        let tgt = random_batch(37, 6, 3);
        let mut rng = stream_rng(41, "align.test.perm");
        let param = SkewParamMatrix::new(normal_matrix(&mut rng, 3, 3)).unwrap();
        let cfg = InstanceLossConfig::default();
        let base = instance_alignment_loss(&src, &tgt, &param, &cfg).unwrap();

        let perm = [4usize, 0, 5, 2, 1, 3];
        let src_p = FeatureBatch::new(src.rows().select(Axis(0), &perm)).unwrap();
        let tgt_p = FeatureBatch::new(tgt.rows().select(Axis(0), &perm)).unwrap();
        let permuted = instance_alignment_loss(&src_p, &tgt_p, &param, &cfg).unwrap();
        assert_abs_diff_eq!(base, permuted, epsilon = 1e-12);
    }

    #[test]
    fn grad_single_pair_is_zero() {
        let src = FeatureBatch::new(array![[1.0, 2.0, 3.0]]).unwrap();
        let tgt = FeatureBatch::new(array![[-1.0, 0.5, 2.0]]).unwrap();
        let param = SkewParamMatrix::zeros(3).unwrap();
        let g =
            instance_alignment_grad(&src, &tgt, &param, &InstanceLossConfig::default()).unwrap();
        assert!(g.d_tgt.iter().all(|&v| v == 0.0));
        assert!(g.d_param.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grad_matches_finite_differences() {
        let cfg = InstanceLossConfig::new(0.5).unwrap();
        for seed in 0..8 {
            let n = 4;
            let d = 3;
            let src = random_batch(800 + seed, n, d);
            let tgt = random_batch(900 + seed, n, d);
            let mut rng = stream_rng(1000 + seed, "align.test.fd");
            let param = SkewParamMatrix::new(normal_matrix(&mut rng, d, d)).unwrap();

            let g = instance_alignment_grad(&src, &tgt, &param, &cfg).unwrap();
            let analytic: Vec<f64> = g.d_tgt.iter().chain(g.d_param.iter()).copied().collect();
            let x: Vec<f64> = tgt
                .rows()
                .iter()
                .chain(param.entries().iter())
                .copied()
                .collect();

            let src_ref = &src;
            let cfg_ref = &cfg;
            let loss_fn = move |flat: &[f64]| {
                let t = Array2::from_shape_vec((n, d), flat[..n * d].to_vec()).unwrap();
                let p = Array2::from_shape_vec((d, d), flat[n * d..].to_vec()).unwrap();
                instance_alignment_loss(
                    src_ref,
                    &FeatureBatch::new(t).unwrap(),
                    &SkewParamMatrix::new(p).unwrap(),
                    cfg_ref,
                )
                .unwrap()
            };
            let report = gradcheck::check(loss_fn, &analytic, &x, 1e-6, 1e-5, 0.0).unwrap();
            assert!(
                report.passed,
                "seed {seed}: max relative error {}",
                report.max_relative_error
            );
        }
    }

    #[test]
    fn grad_aligned_configuration_is_flatter() {
        // Perfectly matched orthonormal pairs at small tau sit near the
        // global minimum; a cyclically mismatched copy does not.
        let rows = Array2::<f64>::eye(4);
        let src = FeatureBatch::new(rows.clone()).unwrap();
        let tgt_aligned = FeatureBatch::new(rows.clone()).unwrap();
        let perm = [1usize, 2, 3, 0];
        let tgt_mismatched = FeatureBatch::new(rows.select(Axis(0), &perm)).unwrap();
        let param = SkewParamMatrix::zeros(4).unwrap();
        let cfg = InstanceLossConfig::new(0.1).unwrap();

        let g_aligned = instance_alignment_grad(&src, &tgt_aligned, &param, &cfg).unwrap();
        let g_mismatched = instance_alignment_grad(&src, &tgt_mismatched, &param, &cfg).unwrap();
        let norm = |m: &Array2<f64>| m.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(
            norm(&g_aligned.d_tgt) < norm(&g_mismatched.d_tgt),
            "aligned {} vs mismatched {}",
            norm(&g_aligned.d_tgt),
            norm(&g_mismatched.d_tgt)
        );
    }

    #[test]
    fn config_rejects_bad_temperature() {
        assert!(InstanceLossConfig::new(0.0).is_err());
        assert!(InstanceLossConfig::new(-1.0).is_err());
        assert!(InstanceLossConfig::new(f64::NAN).is_err());
    }

    #[test]
    fn shape_mismatches_are_errors() {
        let src = random_batch(51, 4, 3);
        let tgt_wrong_n = random_batch(53, 5, 3);
        let tgt_wrong_d = random_batch(57, 4, 2);
        let param = SkewParamMatrix::zeros(3).unwrap();
        let cfg = InstanceLossConfig::default();
        assert!(instance_alignment_loss(&src, &tgt_wrong_n, &param, &cfg).is_err());
        assert!(instance_alignment_loss(&src, &tgt_wrong_d, &param, &cfg).is_err());
        let param_wrong = SkewParamMatrix::zeros(4).unwrap();
        let tgt = random_batch(59, 4, 3);
        assert!(instance_alignment_loss(&src, &tgt, &param_wrong, &cfg).is_err());
    }
}
