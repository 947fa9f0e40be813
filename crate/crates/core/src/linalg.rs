//! Small dense linear-algebra helpers.
//!
//! Everything here is sized for the matrices this simulator touches
//! (a few hundred rows at most), so simple iterative methods are used
//! instead of a LAPACK backend.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching eigenvectors as
/// columns. Input symmetry is the caller's responsibility; only the given
/// entries are read.
pub fn sym_eigen(a: &ArrayView2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "sym_eigen needs a square matrix");
    let mut m = a.to_owned();
    let mut v: Array2<f64> = Array2::eye(n);

    let fro: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = 1e-15 * fro.max(1e-300);

    for _sweep in 0..128 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[[p, q]] * m[[p, q]];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq.abs() <= tol / (n as f64) {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                let t = sign / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
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
    order.sort_by(|&i, &j| m[[j, j]].partial_cmp(&m[[i, i]]).unwrap());
    let mut vals = Array1::zeros(n);
    let mut vecs = Array2::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        vals[dst] = m[[src, src]];
        for k in 0..n {
            vecs[[k, dst]] = v[[k, src]];
        }
    }
    (vals, vecs)
}

/// Largest singular value (2-norm) of a rectangular matrix, by power
/// iteration on `AᵀA`. Deterministic start vector.
pub fn spectral_norm(a: &ArrayView2<f64>) -> f64 {
    let n = a.ncols();
    if n == 0 || a.nrows() == 0 {
        return 0.0;
    }
    let mut v: Array1<f64> = Array1::from_shape_fn(n, |i| 1.0 + 0.01 * ((i % 13) as f64));
    let norm0 = v.dot(&v).sqrt();
    v.mapv_inplace(|x| x / norm0);

    let mut lambda = 0.0;
    for _ in 0..600 {
        let w = a.t().dot(&a.dot(&v));
        let norm = w.dot(&w).sqrt();
        if norm <= 1e-300 {
            return 0.0;
        }
        let next = v.dot(&w); // Rayleigh quotient for AᵀA
        v = w / norm;
        if (next - lambda).abs() <= 1e-14 * next.abs().max(1e-30) {
            lambda = next;
            break;
        }
        lambda = next;
    }
    lambda.max(0.0).sqrt()
}

/// Solve `A x = b` for symmetric positive semi-definite `A` via the Jacobi
/// eigendecomposition. Near-singular systems are rejected with the observed
/// condition number in the message.
pub fn solve_spd(a: &ArrayView2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    let (vals, vecs) = sym_eigen(a);
    let n = vals.len();
    let lmax = vals[0].abs();
    let lmin = vals[n - 1];
    if lmin <= 1e-12 * lmax.max(1e-300) {
        let cond = if lmin.abs() > 0.0 { lmax / lmin.abs() } else { f64::INFINITY };
        return Err(Error::Data(format!(
            "singular design matrix (condition number ~{cond:.3e})"
        )));
    }
    let proj = vecs.t().dot(b);
    let scaled = Array1::from_shape_fn(n, |i| proj[i] / vals[i]);
    Ok(vecs.dot(&scaled))
}
