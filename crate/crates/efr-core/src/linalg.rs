//! Small dense linear-algebra helpers: determinants, symmetric
//! eigendecomposition, and matrix norms.
//!
//! Everything here targets the modest dimensions used in this crate
//! (d <= 512 for rotations, single-digit dimensions for sample-space
//! covariances), so plain LU with partial pivoting and cyclic Jacobi
//! sweeps are accurate and fast enough.

use ndarray::{Array1, Array2};

/// Determinant via LU factorization with partial pivoting.
pub fn det_lu(a: &Array2<f64>) -> f64 {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "determinant requires a square matrix");
    let mut lu = a.clone();
    let mut det = 1.0;
    for col in 0..n {
        // Pivot on the largest remaining entry in this column.
        let mut pivot = col;
        let mut best = lu[[col, col]].abs();
        for row in col + 1..n {
            let v = lu[[row, col]].abs();
            if v > best {
                best = v;
                pivot = row;
            }
        }
        if best == 0.0 {
            return 0.0;
        }
        if pivot != col {
            for j in 0..n {
                let tmp = lu[[col, j]];
                lu[[col, j]] = lu[[pivot, j]];
                lu[[pivot, j]] = tmp;
            }
            det = -det;
        }
        det *= lu[[col, col]];
        let inv = 1.0 / lu[[col, col]];
        for row in col + 1..n {
            let factor = lu[[row, col]] * inv;
            if factor == 0.0 {
                continue;
            }
            for j in col..n {
                lu[[row, j]] -= factor * lu[[col, j]];
            }
        }
    }
    det
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns `(eigenvalues, eigenvectors)` with eigenvectors in the columns,
/// so `a = V diag(w) V^T`. Eigenvalues are sorted ascending.
pub fn sym_eigen(a: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "eigendecomposition requires a square matrix");
    let mut m = a.clone();
    let mut v = Array2::<f64>::eye(n);

    let max_sweeps = 64;
    for _ in 0..max_sweeps {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += m[[p, q]] * m[[p, q]];
            }
        }
        if off.sqrt() <= 1e-14 * (frobenius_norm(&m) + 1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                let theta = (aqq - app) / (2.0 * apq);
                // Stable tangent of the rotation angle.
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[[i, i]].partial_cmp(&m[[j, j]]).unwrap());
    let mut w = Array1::<f64>::zeros(n);
    let mut vecs = Array2::<f64>::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        w[dst] = m[[src, src]];
        for k in 0..n {
            vecs[[k, dst]] = v[[k, src]];
        }
    }
    (w, vecs)
}

/// Frobenius norm.
pub fn frobenius_norm(a: &Array2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Induced 1-norm (maximum absolute column sum).
pub fn one_norm(a: &Array2<f64>) -> f64 {
    let mut best = 0.0f64;
    for col in a.columns() {
        let s: f64 = col.iter().map(|x| x.abs()).sum();
        best = best.max(s);
    }
    best
}

/// Frobenius distance of `r^T r` from the identity.
pub fn orthogonality_residual(r: &Array2<f64>) -> f64 {
    let n = r.ncols();
    let gram = r.t().dot(r);
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            let d = gram[[i, j]] - target;
            acc += d * d;
        }
    }
    acc.sqrt()
}
