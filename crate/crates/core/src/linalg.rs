//! Dense complex Hermitian eigendecomposition via cyclic Jacobi rotations.
//!
//! The sizes involved are small (matrix side equals the number of feeder
//! chains or the device count), where Jacobi is simple, accurate and handles
//! degenerate spectra gracefully.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Maximum number of full sweeps before giving up on further off-diagonal
/// reduction; at typical sizes convergence takes well under ten.
const MAX_SWEEPS: usize = 40;

/// Eigendecomposition of a Hermitian matrix.
///
/// Returns eigenvalues in descending order and the matching unitary matrix of
/// eigenvectors as columns, so `a ~= V diag(vals) V^H`. The input is
/// symmetrized as `(A + A^H) / 2` first, making the routine robust to tiny
/// Hermitian violations from upstream solvers.
pub fn hermitian_eigen(a: &DMatrix<Complex64>) -> (DVector<f64>, DMatrix<Complex64>) {
    assert_eq!(a.nrows(), a.ncols(), "eigendecomposition needs a square matrix");
    let n = a.nrows();
    let mut w = (a + a.adjoint()) * Complex64::new(0.5, 0.0);
    let mut v: DMatrix<Complex64> = DMatrix::identity(n, n);
    if n > 1 {
        let scale = w.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        let tol = 1e-14 * scale;
        for _ in 0..MAX_SWEEPS {
            let off: f64 = (0..n)
                .flat_map(|p| ((p + 1)..n).map(move |q| (p, q)))
                .map(|(p, q)| 2.0 * w[(p, q)].norm_sqr())
                .sum::<f64>()
                .sqrt();
            if off <= tol {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    rotate(&mut w, &mut v, p, q, tol);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| w[(i, i)].re).collect();
    order.sort_by(|&i, &j| diag[j].partial_cmp(&diag[i]).unwrap());
    let vals = DVector::from_fn(n, |i, _| diag[order[i]]);
    let vecs = DMatrix::from_fn(n, n, |i, j| v[(i, order[j])]);
    (vals, vecs)
}

/// One Jacobi rotation zeroing `w[(p, q)]`: a phase twist on index `q` makes
/// the pivot real, then a real Givens rotation eliminates it.
fn rotate(w: &mut DMatrix<Complex64>, v: &mut DMatrix<Complex64>, p: usize, q: usize, tol: f64) {
    let pivot = w[(p, q)];
    let r = pivot.norm();
    if r <= tol {
        return;
    }
    let n = w.nrows();
    let u = Complex64::from_polar(1.0, -pivot.arg());
    for i in 0..n {
        w[(i, q)] *= u;
    }
    for j in 0..n {
        w[(q, j)] *= u.conj();
    }
    for i in 0..n {
        v[(i, q)] *= u;
    }

    let tau = (w[(q, q)].re - w[(p, p)].re) / (2.0 * r);
    let t = if tau >= 0.0 {
        1.0 / (tau + (1.0 + tau * tau).sqrt())
    } else {
        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;

    for i in 0..n {
        let wp = w[(i, p)];
        let wq = w[(i, q)];
        w[(i, p)] = wp * c - wq * s;
        w[(i, q)] = wp * s + wq * c;
    }
    for j in 0..n {
        let wp = w[(p, j)];
        let wq = w[(q, j)];
        w[(p, j)] = wp * c - wq * s;
        w[(q, j)] = wp * s + wq * c;
    }
    for i in 0..n {
        let vp = v[(i, p)];
        let vq = v[(i, q)];
        v[(i, p)] = vp * c - vq * s;
        v[(i, q)] = vp * s + vq * c;
    }
}
