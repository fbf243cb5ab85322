//! Distribution-level evaluation metrics for the simulator.
//!
//! The Fréchet Gaussian distance fits a Gaussian to each sample cloud and
//! returns the squared 2-Wasserstein distance between the fits. The sliced
//! score projects both clouds onto shared random directions and compares
//! their pairwise 1D distance structures slice by slice, using the sorted
//! matchings that solve the one-dimensional problem in closed form.

use ndarray::{Array1, Array2, Axis};

use crate::linalg::sym_eigen;
use crate::ot_solver::sample_projections;
use crate::{Error, Result};

fn mean_rows(a: &Array2<f64>) -> Array1<f64> {
    a.mean_axis(Axis(0)).expect("nonempty batch")
}

/// Unbiased sample covariance of the rows.
fn covariance(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows() as f64;
    let mu = mean_rows(a);
    let centered = a - &mu;
    centered.t().dot(&centered) / (n - 1.0)
}

/// Symmetric positive-semidefinite square root via eigendecomposition,
/// clamping tiny negative eigenvalues from roundoff to zero.
fn psd_sqrt(a: &Array2<f64>) -> Array2<f64> {
    let sym = (a + &a.t()) / 2.0;
    let (w, v) = sym_eigen(&sym);
    let mut out = Array2::<f64>::zeros(a.raw_dim());
    for k in 0..w.len() {
        let s = w[k].max(0.0).sqrt();
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                out[[i, j]] += s * v[[i, k]] * v[[j, k]];
            }
        }
    }
    out
}

/// Squared 2-Wasserstein distance between Gaussian fits of two sample
/// clouds: `|mu_a - mu_b|^2 + tr(Sa + Sb - 2 (Sb^1/2 Sa Sb^1/2)^1/2)`.
pub fn frechet_gaussian_distance(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.ncols() != b.ncols() {
        return Err(Error::ShapeMismatch {
            context: "frechet gaussian distance",
            expected: format!("both clouds with {} columns", a.ncols()),
            found: format!("{} and {} columns", a.ncols(), b.ncols()),
        });
    }
    for (cloud, name) in [(a, "first sample cloud"), (b, "second sample cloud")] {
        if cloud.nrows() < 2 {
            return Err(Error::BatchTooSmall {
                min: 2,
                got: cloud.nrows(),
            });
        }
        if cloud.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(name));
        }
    }

    let (mu_a, mu_b) = (mean_rows(a), mean_rows(b));
    let (sig_a, sig_b) = (covariance(a), covariance(b));

    let diff = &mu_a - &mu_b;
    let mean_term = diff.dot(&diff);
    let trace = |m: &Array2<f64>| m.diag().sum();

    let root_b = psd_sqrt(&sig_b);
    let inner = root_b.dot(&sig_a).dot(&root_b);
    let cross = psd_sqrt(&inner);

    // Roundoff can push the value a hair below zero at identical clouds.
    Ok((mean_term + trace(&sig_a) + trace(&sig_b) - 2.0 * trace(&cross)).max(0.0))
}

/// Mean squared gap between the pairwise 1D distance structures of two
/// equally long scalar sequences under index matching.
fn structure_gap(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            let gap = (x[i] - x[j]).abs() - (y[i] - y[j]).abs();
            sum += gap * gap;
        }
    }
    sum / (n * n) as f64
}

/// Sliced structural score between two equally sized sample clouds, used as
/// the held-out evaluation distance. Each slice projects both clouds onto a
/// shared random direction and compares pairwise 1D distances under the
/// better of the two sorted matchings (ascending against ascending or
/// descending), which solve the one-dimensional matching in closed form.
/// Lower is better; zero for identical clouds.
pub fn sliced_sample_score(
    a: &Array2<f64>,
    b: &Array2<f64>,
    t_slices: usize,
    seed: u64,
) -> Result<f64> {
    if a.ncols() != b.ncols() || a.nrows() != b.nrows() {
        return Err(Error::ShapeMismatch {
            context: "sliced sample score",
            expected: format!("two clouds shaped {} x {}", a.nrows(), a.ncols()),
            found: format!("{} x {}", b.nrows(), b.ncols()),
        });
    }
    if a.nrows() < 2 {
        return Err(Error::BatchTooSmall {
            min: 2,
            got: a.nrows(),
        });
    }
    for (cloud, name) in [(a, "first sample cloud"), (b, "second sample cloud")] {
        if cloud.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(name));
        }
    }

    let projections = sample_projections(t_slices, a.ncols(), seed)?;
    let mut total = 0.0;
    for t in 0..t_slices {
        let dir = projections.vectors().row(t);
        let mut pa: Vec<f64> = a.rows().into_iter().map(|r| r.dot(&dir)).collect();
        let mut pb: Vec<f64> = b.rows().into_iter().map(|r| r.dot(&dir)).collect();
        pa.sort_by(f64::total_cmp);
        pb.sort_by(f64::total_cmp);
        let ascending = structure_gap(&pa, &pb);
        pb.reverse();
        let descending = structure_gap(&pa, &pb);
        total += ascending.min(descending);
    }
    Ok(total / t_slices as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_matrix, stream_rng};
    use approx::assert_abs_diff_eq;

    #[test]
    fn identical_clouds_have_zero_distance() {
        let mut rng = stream_rng(1, "metrics.test");
        let a = normal_matrix(&mut rng, 64, 3);
        let d = frechet_gaussian_distance(&a, &a.clone()).unwrap();
        assert_abs_diff_eq!(d, 0.0, epsilon = 1e-10);
    }

    // Two unit Gaussians with means 0 and 1 in one dimension have squared
    // distance |0 - 1|^2 = 1; large samples land within 0.1 of it.
    #[test]
    fn recovers_known_gaussian_distance() {
        let mut rng = stream_rng(2, "metrics.test");
        let a = normal_matrix(&mut rng, 10_000, 1);
        let b = normal_matrix(&mut rng, 10_000, 1) + 1.0;
        let d = frechet_gaussian_distance(&a, &b).unwrap();
        assert!((d - 1.0).abs() < 0.1, "fgd {d}");
    }

    #[test]
    fn distance_is_symmetric() {
        let mut rng = stream_rng(3, "metrics.test");
        for _ in 0..5 {
            let a = normal_matrix(&mut rng, 40, 2) * 1.3 + 0.2;
            let b = normal_matrix(&mut rng, 50, 2) - 0.5;
            let ab = frechet_gaussian_distance(&a, &b).unwrap();
            let ba = frechet_gaussian_distance(&b, &a).unwrap();
            assert_abs_diff_eq!(ab, ba, epsilon = 1e-8);
        }
    }

    #[test]
    fn distance_grows_with_mean_separation() {
        let mut rng = stream_rng(4, "metrics.test");
        let a = normal_matrix(&mut rng, 500, 2);
        let near = normal_matrix(&mut rng, 500, 2) + 0.5;
        let far = normal_matrix(&mut rng, 500, 2) + 3.0;
        let dn = frechet_gaussian_distance(&a, &near).unwrap();
        let df = frechet_gaussian_distance(&a, &far).unwrap();
        assert!(dn < df);
    }

    #[test]
    fn rejects_degenerate_inputs() {
        let a = Array2::<f64>::zeros((1, 2));
        let b = Array2::<f64>::zeros((5, 2));
        assert!(frechet_gaussian_distance(&a, &b).is_err());
        let c = Array2::<f64>::zeros((5, 3));
        assert!(frechet_gaussian_distance(&b, &c).is_err());
    }

    #[test]
    fn sliced_score_zero_for_identical_nonzero_for_stretched() {
        let mut rng = stream_rng(5, "metrics.test");
        let a = normal_matrix(&mut rng, 24, 2);
        let same = sliced_sample_score(&a, &a.clone(), 8, 9).unwrap();
        assert_abs_diff_eq!(same, 0.0, epsilon = 1e-12);

        // Stretching one axis changes every projected distance structure.
        let mut b = a.clone();
        for mut row in b.rows_mut() {
            row[0] *= 3.0;
        }
        let stretched = sliced_sample_score(&a, &b, 8, 9).unwrap();
        assert!(stretched > 1e-3, "stretched {stretched}");
    }

    // Independent draws of one distribution score far lower than draws of
    // genuinely different distributions, and the gap widens with sample
    // count; this is what makes the score usable on held-out samples.
    #[test]
    fn sliced_score_separates_distributions_above_sampling_noise() {
        let mut rng = stream_rng(6, "metrics.test");
        let a = normal_matrix(&mut rng, 256, 2);
        let b = normal_matrix(&mut rng, 256, 2);
        let mut c = normal_matrix(&mut rng, 256, 2);
        for mut row in c.rows_mut() {
            row[0] *= 3.0;
        }
        let floor = sliced_sample_score(&a, &b, 16, 9).unwrap();
        let signal = sliced_sample_score(&a, &c, 16, 9).unwrap();
        assert!(
            signal > 10.0 * floor,
            "signal {signal} vs floor {floor}"
        );
    }

    #[test]
    fn sliced_score_rejects_mismatched_clouds() {
        let a = Array2::<f64>::zeros((8, 2));
        let b = Array2::<f64>::zeros((9, 2));
        assert!(sliced_sample_score(&a, &b, 4, 1).is_err());
        let c = Array2::<f64>::zeros((8, 3));
        assert!(sliced_sample_score(&a, &c, 4, 1).is_err());
    }
}
