//! Rotations in SO(d) parameterized by unconstrained matrices.
//!
//! An arbitrary matrix `P` is projected onto the Lie algebra so(d) by
//! `S = P - P^T` and mapped into the group by the matrix exponential, so the
//! result is orthogonal with determinant +1 for every finite `P`. Training
//! then happens in plain Euclidean space: no retraction, no re-projection.
//!
//! The exponential itself uses scaling-and-squaring with an order-18 Taylor
//! evaluation (scale until the 1-norm is below 0.5, sum, square back up),
//! which is accurate to double precision for every skew input. Derivatives
//! go through the block identity
//!
//! ```text
//! exp([[S, E], [0, S]]) = [[exp(S), Dexp(S)[E]], [0, exp(S)]]
//! ```
//!
//! so forward and derivative share one code path.

use ndarray::Array2;

use crate::linalg;
use crate::{Error, Result};

/// Largest supported rotation dimension.
pub const MAX_DIM: usize = 512;

/// `R^T R = I` must hold to this Frobenius tolerance.
pub const ORTHOGONALITY_TOL: f64 = 1e-10;

/// `det R = 1` must hold to this tolerance.
pub const DETERMINANT_TOL: f64 = 1e-8;

/// Scaling threshold for the exponential: the 1-norm is halved until it
/// drops below this value before the Taylor sum.
const EXP_SCALE_THRESHOLD: f64 = 0.5;

/// Taylor order; at 1-norm 0.5 the truncation error of the order-18 sum is
/// below 1e-22, far under double-precision roundoff.
const EXP_TAYLOR_ORDER: usize = 18;

/// Unconstrained d x d parameter matrix whose skew projection generates a
/// rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct SkewParamMatrix {
    entries: Array2<f64>,
}

impl SkewParamMatrix {
    /// Wrap an unconstrained square matrix. Entries must be finite and the
    /// dimension must lie in `2..=512`.
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        let (rows, cols) = entries.dim();
        if rows != cols {
            return Err(Error::ShapeMismatch {
                context: "SkewParamMatrix",
                expected: "square matrix".to_string(),
                found: format!("{rows}x{cols}"),
            });
        }
        if !(2..=MAX_DIM).contains(&rows) {
            return Err(Error::DimOutOfRange {
                dim: rows,
                min: 2,
                max: MAX_DIM,
            });
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("SkewParamMatrix entries"));
        }
        Ok(SkewParamMatrix { entries })
    }

    /// The zero parameter, mapping to the identity rotation.
    pub fn zeros(dim: usize) -> Result<Self> {
        Self::new(Array2::zeros((dim, dim)))
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }
}

/// Element of the Lie algebra so(d).
///
/// Only the strict upper triangle is stored; the lower triangle is mirrored
/// with flipped sign on read, so skew-symmetry is exact by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SkewMatrix {
    dim: usize,
    upper: Vec<f64>,
}

impl SkewMatrix {
    /// Build from the strict upper triangle in row-major order
    /// (`(0,1), (0,2), ..., (0,d-1), (1,2), ...`).
    pub fn from_strict_upper(dim: usize, upper: Vec<f64>) -> Result<Self> {
        let expected = dim * (dim - 1) / 2;
        if upper.len() != expected {
            return Err(Error::ShapeMismatch {
                context: "SkewMatrix",
                expected: format!("{expected} strict upper entries"),
                found: format!("{}", upper.len()),
            });
        }
        if upper.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("SkewMatrix entries"));
        }
        Ok(SkewMatrix { dim, upper })
    }

    pub fn zeros(dim: usize) -> Self {
        SkewMatrix {
            dim,
            upper: vec![0.0; dim * (dim - 1) / 2],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn upper_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j);
        i * self.dim - i * (i + 1) / 2 + (j - i - 1)
    }

    /// Entry `(i, j)`: zero on the diagonal, mirrored negation below it.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        use std::cmp::Ordering;
        match i.cmp(&j) {
            Ordering::Equal => 0.0,
            Ordering::Less => self.upper[self.upper_index(i, j)],
            Ordering::Greater => -self.upper[self.upper_index(j, i)],
        }
    }

    /// Dense d x d realization; exactly skew-symmetric.
    pub fn to_dense(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.dim, self.dim), |(i, j)| self.get(i, j))
    }

    /// Scalar multiple `a * S`; stays in the algebra.
    pub fn scaled(&self, a: f64) -> SkewMatrix {
        SkewMatrix {
            dim: self.dim,
            upper: self.upper.iter().map(|v| a * v).collect(),
        }
    }
}

/// Orthogonal d x d matrix with determinant +1.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationMatrix {
    entries: Array2<f64>,
}

impl RotationMatrix {
    /// Validate an arbitrary matrix against the group invariants.
    pub fn try_new(entries: Array2<f64>) -> Result<Self> {
        let (rows, cols) = entries.dim();
        if rows != cols {
            return Err(Error::ShapeMismatch {
                context: "RotationMatrix",
                expected: "square matrix".to_string(),
                found: format!("{rows}x{cols}"),
            });
        }
        // Residuals of non-finite input are NaN and must fail closed.
        let ortho = linalg::orthogonality_residual(&entries);
        if ortho.is_nan() || ortho >= ORTHOGONALITY_TOL {
            return Err(Error::InvalidInput(format!(
                "matrix is not orthogonal: ||R^T R - I||_F = {ortho:.3e}"
            )));
        }
        let det_gap = (linalg::det_lu(&entries) - 1.0).abs();
        if det_gap.is_nan() || det_gap >= DETERMINANT_TOL {
            return Err(Error::InvalidInput(format!(
                "matrix is not special orthogonal: |det - 1| = {det_gap:.3e}"
            )));
        }
        Ok(RotationMatrix { entries })
    }

    pub fn identity(dim: usize) -> Self {
        RotationMatrix {
            entries: Array2::eye(dim),
        }
    }

    /// Internal constructor for outputs of the exponential; the algorithm
    /// guarantees the invariants, checked here in debug builds.
    fn from_exp(entries: Array2<f64>) -> Self {
        debug_assert!(linalg::orthogonality_residual(&entries) < ORTHOGONALITY_TOL);
        debug_assert!((linalg::det_lu(&entries) - 1.0).abs() < DETERMINANT_TOL);
        RotationMatrix { entries }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.entries
    }

    /// `||R^T R - I||_F`.
    pub fn orthogonality_residual(&self) -> f64 {
        linalg::orthogonality_residual(&self.entries)
    }

    /// `|det R - 1|`.
    pub fn det_residual(&self) -> f64 {
        (linalg::det_lu(&self.entries) - 1.0).abs()
    }

    /// The inverse rotation; for orthogonal matrices this is the transpose.
    pub fn transpose(&self) -> RotationMatrix {
        RotationMatrix {
            entries: self.entries.t().to_owned(),
        }
    }

    /// Apply the rotation to every row of a batch: returns `batch * R^T`,
    /// i.e. row `i` becomes `R x_i`.
    pub fn rotate_rows(&self, batch: &Array2<f64>) -> Array2<f64> {
        assert_eq!(
            batch.ncols(),
            self.dim(),
            "batch feature dimension must match rotation dimension"
        );
        batch.dot(&self.entries.t())
    }
}

/// Project an unconstrained parameter onto the Lie algebra: `S = P - P^T`.
pub fn skew_project(param: &SkewParamMatrix) -> SkewMatrix {
    let d = param.dim();
    let p = param.entries();
    let mut upper = Vec::with_capacity(d * (d - 1) / 2);
    for i in 0..d {
        for j in i + 1..d {
            upper.push(p[[i, j]] - p[[j, i]]);
        }
    }
    SkewMatrix { dim: d, upper }
}

/// Dense matrix exponential by scaling and squaring with an order-18 Taylor
/// sum. Accurate to double precision once the scaled 1-norm is below 0.5.
fn expm_dense(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let norm = linalg::one_norm(a);
    if norm == 0.0 {
        return Array2::eye(n);
    }

    let mut squarings = 0u32;
    let mut scaled_norm = norm;
    while scaled_norm >= EXP_SCALE_THRESHOLD {
        scaled_norm /= 2.0;
        squarings += 1;
    }
    let scaled = a.mapv(|v| v / f64::powi(2.0, squarings as i32));

    let mut term = Array2::<f64>::eye(n);
    let mut sum = Array2::<f64>::eye(n);
    for k in 1..=EXP_TAYLOR_ORDER {
        term = term.dot(&scaled) / k as f64;
        sum += &term;
    }

    for _ in 0..squarings {
        sum = sum.dot(&sum);
    }
    sum
}

/// Exponential map so(d) -> SO(d).
///
/// The zero matrix maps to the exact identity.
pub fn matrix_exp(s: &SkewMatrix) -> RotationMatrix {
    RotationMatrix::from_exp(expm_dense(&s.to_dense()))
}

/// Directional (Frechet) derivative of the exponential: `D exp(S)[E]`.
///
/// Computed as the top-right block of `exp([[S, E], [0, S]])`.
pub fn exp_directional_derivative(s: &SkewMatrix, direction: &Array2<f64>) -> Array2<f64> {
    let d = s.dim();
    assert_eq!(
        direction.dim(),
        (d, d),
        "direction must match the skew matrix dimension"
    );
    let dense = s.to_dense();
    let mut block = Array2::<f64>::zeros((2 * d, 2 * d));
    for i in 0..d {
        for j in 0..d {
            block[[i, j]] = dense[[i, j]];
            block[[i, j + d]] = direction[[i, j]];
            block[[i + d, j + d]] = dense[[i, j]];
        }
    }
    let e = expm_dense(&block);
    e.slice(ndarray::s![0..d, d..2 * d]).to_owned()
}

/// Full reparameterization: `R = exp(P - P^T)`.
///
/// The output satisfies the rotation invariants for any finite parameter.
pub fn rotation_from_param(param: &SkewParamMatrix) -> RotationMatrix {
    matrix_exp(&skew_project(param))
}

/// Pull an upstream gradient `dL/dR` back to the parameter: `dL/dP`.
///
/// Uses the adjoint identity `<U, Dexp(S)[E]> = <Dexp(-S)[U], E>` (valid for
/// skew `S`) followed by the skew-projection adjoint `G -> G - G^T`.
pub fn grad_through_rotation(param: &SkewParamMatrix, upstream: &Array2<f64>) -> Array2<f64> {
    let d = param.dim();
    assert_eq!(
        upstream.dim(),
        (d, d),
        "upstream gradient must match the parameter dimension"
    );
    let s = skew_project(param);
    let grad_s = exp_directional_derivative(&s.scaled(-1.0), upstream);
    &grad_s - &grad_s.t()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;
    use crate::rng::{normal_matrix, stream_rng};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn random_param(seed: u64, d: usize) -> SkewParamMatrix {
        let mut rng = stream_rng(seed, "lie.test.param");
        SkewParamMatrix::new(normal_matrix(&mut rng, d, d)).unwrap()
    }

    #[test]
    fn skew_project_zero_and_symmetric() {
        let zero = SkewParamMatrix::zeros(3).unwrap();
        assert!(skew_project(&zero).to_dense().iter().all(|&v| v == 0.0));

        let sym = SkewParamMatrix::new(array![[1.0, 2.0], [2.0, -3.0]]).unwrap();
        assert!(skew_project(&sym).to_dense().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn skew_project_definition_2d() {
        let a = 0.37;
        let p = SkewParamMatrix::new(array![[0.0, a], [0.0, 0.0]]).unwrap();
        let s = skew_project(&p).to_dense();
        assert_eq!(s, array![[0.0, a], [-a, 0.0]]);
    }

    #[test]
    fn skew_project_is_exactly_skew() {
        let p = random_param(3, 6);
        let s = skew_project(&p).to_dense();
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(s[[i, j]], -s[[j, i]]);
            }
        }
    }

    #[test]
    fn param_rejects_non_finite_and_bad_dims() {
        assert!(SkewParamMatrix::new(array![[0.0, f64::NAN], [0.0, 0.0]]).is_err());
        assert!(SkewParamMatrix::new(Array2::zeros((1, 1))).is_err());
        assert!(SkewParamMatrix::new(Array2::zeros((2, 3))).is_err());
        assert!(SkewParamMatrix::new(Array2::zeros((MAX_DIM + 1, MAX_DIM + 1))).is_err());
    }

    #[test]
    fn exp_of_zero_is_exact_identity() {
        let r = matrix_exp(&SkewMatrix::zeros(5));
        assert_eq!(r.matrix(), &Array2::<f64>::eye(5));
    }

    #[test]
    fn exp_matches_planar_closed_form() {
        for &theta in &[
            0.0,
            std::f64::consts::FRAC_PI_6,
            std::f64::consts::FRAC_PI_4,
            std::f64::consts::FRAC_PI_2,
            std::f64::consts::PI,
        ] {
            let s = SkewMatrix::from_strict_upper(2, vec![-theta]).unwrap();
            let r = matrix_exp(&s);
            let expected = array![
                [theta.cos(), -theta.sin()],
                [theta.sin(), theta.cos()]
            ];
            for i in 0..2 {
                for j in 0..2 {
                    assert_abs_diff_eq!(r.matrix()[[i, j]], expected[[i, j]], epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn exp_of_random_skew_is_orthogonal() {
        let mut rng = stream_rng(17, "lie.test.skew8");
        for _ in 0..20 {
            let p = SkewParamMatrix::new(normal_matrix(&mut rng, 8, 8)).unwrap();
            let r = matrix_exp(&skew_project(&p));
            assert!(r.orthogonality_residual() < 1e-10);
            assert!(r.det_residual() < 1e-8);
        }
    }

    #[test]
    fn exp_transpose_equals_exp_of_negation() {
        let s = skew_project(&random_param(5, 4));
        let r = matrix_exp(&s);
        let r_neg = matrix_exp(&s.scaled(-1.0));
        for i in 0..4 {
            for j in 0..4 {
                assert_abs_diff_eq!(r.matrix()[[j, i]], r_neg.matrix()[[i, j]], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn one_parameter_subgroup_property() {
        let s = skew_project(&random_param(7, 5));
        let (a, b) = (0.63, -1.41);
        let lhs = matrix_exp(&s.scaled(a + b));
        let rhs = matrix_exp(&s.scaled(a))
            .matrix()
            .dot(matrix_exp(&s.scaled(b)).matrix());
        let diff = lhs.matrix() - &rhs;
        assert!(linalg::frobenius_norm(&diff) < 1e-10);
    }

    #[test]
    fn directional_derivative_at_zero_is_identity_map() {
        let s = SkewMatrix::zeros(3);
        let mut rng = stream_rng(23, "lie.test.dir");
        let e = normal_matrix(&mut rng, 3, 3);
        let d = exp_directional_derivative(&s, &e);
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(d[[i, j]], e[[i, j]], epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn directional_derivative_of_zero_direction_is_zero() {
        let s = skew_project(&random_param(29, 4));
        let d = exp_directional_derivative(&s, &Array2::zeros((4, 4)));
        assert!(d.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn directional_derivative_matches_finite_differences() {
        let mut rng = stream_rng(31, "lie.test.fd");
        for _ in 0..10 {
            let p = SkewParamMatrix::new(normal_matrix(&mut rng, 3, 3)).unwrap();
            let s = skew_project(&p);
            let e = normal_matrix(&mut rng, 3, 3);
            let analytic = exp_directional_derivative(&s, &e);

            let h = 1e-6;
            let plus = expm_dense(&(&s.to_dense() + &e.mapv(|v| v * h)));
            let minus = expm_dense(&(&s.to_dense() - &e.mapv(|v| v * h)));
            let numeric = (&plus - &minus) / (2.0 * h);

            let scale = linalg::frobenius_norm(&numeric).max(1e-12);
            let diff = &analytic - &numeric;
            assert!(
                linalg::frobenius_norm(&diff) / scale < 1e-6,
                "relative error too large"
            );
        }
    }

    #[test]
    fn rotation_from_param_trivial_cases() {
        let zero = SkewParamMatrix::zeros(4).unwrap();
        assert_eq!(rotation_from_param(&zero).matrix(), &Array2::<f64>::eye(4));

        let sym = SkewParamMatrix::new(array![[2.0, 0.5], [0.5, -1.0]]).unwrap();
        assert_eq!(rotation_from_param(&sym).matrix(), &Array2::<f64>::eye(2));
    }

    #[test]
    fn rotation_invariants_hold_over_random_sweep() {
        let mut rng = stream_rng(41, "lie.test.sweep");
        for &d in &[2usize, 4, 8] {
            for _ in 0..25 {
                let p = SkewParamMatrix::new(normal_matrix(&mut rng, d, d)).unwrap();
                let r = rotation_from_param(&p);
                assert!(r.orthogonality_residual() < ORTHOGONALITY_TOL);
                assert!(r.det_residual() < DETERMINANT_TOL);
            }
        }
    }

    #[test]
    fn rotation_invariants_survive_large_parameters() {
        let mut rng = stream_rng(43, "lie.test.large");
        let p = SkewParamMatrix::new(normal_matrix(&mut rng, 6, 6).mapv(|v| v * 1e4)).unwrap();
        let r = rotation_from_param(&p);
        assert!(r.orthogonality_residual() < ORTHOGONALITY_TOL);
        assert!(r.det_residual() < DETERMINANT_TOL);
    }

    #[test]
    fn grad_of_zero_upstream_is_zero() {
        let p = random_param(47, 3);
        let g = grad_through_rotation(&p, &Array2::zeros((3, 3)));
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grad_at_zero_param_of_trace_loss() {
        // L = trace(A R); at P = 0 the chain rule reduces to the skew
        // adjoint of A^T, i.e. A^T - A.
        let mut rng = stream_rng(53, "lie.test.trace");
        let a = normal_matrix(&mut rng, 4, 4);
        let p = SkewParamMatrix::zeros(4).unwrap();
        let g = grad_through_rotation(&p, &a.t().to_owned());
        let expected = &a.t().to_owned() - &a;
        for i in 0..4 {
            for j in 0..4 {
                assert_abs_diff_eq!(g[[i, j]], expected[[i, j]], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn grad_through_rotation_matches_finite_differences() {
        // L(P) = ||exp(P - P^T) - Q||_F^2 for a fixed rotation Q.
        let q = rotation_from_param(&random_param(59, 4));
        let p0 = random_param(61, 4);
        let d = 4;

        let loss = |flat: &[f64]| {
            let m = Array2::from_shape_vec((d, d), flat.to_vec()).unwrap();
            let r = rotation_from_param(&SkewParamMatrix::new(m).unwrap());
            let diff = r.matrix() - q.matrix();
            diff.iter().map(|v| v * v).sum::<f64>()
        };

        let r = rotation_from_param(&p0);
        let upstream = (r.matrix() - q.matrix()).mapv(|v| 2.0 * v);
        let analytic = grad_through_rotation(&p0, &upstream);
        let flat_analytic: Vec<f64> = analytic.iter().copied().collect();
        let flat_x: Vec<f64> = p0.entries().iter().copied().collect();

        let report = gradcheck::check(loss, &flat_analytic, &flat_x, 1e-6, 1e-5, 0.0).unwrap();
        assert!(
            report.passed,
            "max relative error {}",
            report.max_relative_error
        );
    }

    #[test]
    fn rotation_matrix_validation() {
        assert!(RotationMatrix::try_new(Array2::eye(3)).is_ok());
        // Orthogonal but determinant -1: a reflection must be rejected.
        let reflection = array![[1.0, 0.0], [0.0, -1.0]];
        assert!(RotationMatrix::try_new(reflection).is_err());
        // Not orthogonal at all.
        assert!(RotationMatrix::try_new(array![[1.0, 0.1], [0.0, 1.0]]).is_err());
    }

    #[test]
    fn rotate_rows_applies_rotation_per_row() {
        let theta = std::f64::consts::FRAC_PI_2;
        let s = SkewMatrix::from_strict_upper(2, vec![-theta]).unwrap();
        let r = matrix_exp(&s);
        let batch = array![[1.0, 0.0], [0.0, 2.0]];
        let rotated = r.rotate_rows(&batch);
        // 90 degree rotation: (1,0) -> (0,1), (0,2) -> (-2,0).
        assert_abs_diff_eq!(rotated[[0, 0]], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rotated[[0, 1]], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rotated[[1, 0]], -2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rotated[[1, 1]], 0.0, epsilon = 1e-12);
    }
}
