//! Complex-to-real lowering conventions.
//!
//! The optimization variables of the beamforming subproblems are complex;
//! the solver works over reals. The conventions are fixed here once:
//!
//! - A complex vector variable `v` of length `n` occupies two contiguous
//!   ranges, all real parts first (`re`), then all imaginary parts (`im`).
//! - A complex Hermitian matrix variable `B` of side `n` is embedded as the
//!   real symmetric matrix `T(B) = [[X, -Y], [Y, X]]` of side `2n`, where
//!   `B = X + iY`. `T(B)` is PSD exactly when `B` is, and `tr(H B) =
//!   tr(T(H) T(B)) / 2` for Hermitian `H`. The solver sees the upper
//!   triangle of `T(B)` as free variables constrained to a PSD cone; the
//!   embedding structure itself is not enforced. Because every lowered
//!   functional is invariant under conjugation by `J = [[0, -I], [I, 0]]`,
//!   averaging a feasible `S` with `J S J^T` preserves feasibility and
//!   objective while restoring the embedding structure, which is exactly
//!   what [`HermitianPsdBlock::lift`] computes.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use std::ops::Range;

use super::{AffExpr, ProblemBuilder};

/// Handle to a complex vector variable stored as split real/imaginary parts.
#[derive(Debug, Clone)]
pub struct ComplexVarBlock {
    pub re: Range<usize>,
    pub im: Range<usize>,
}

impl ComplexVarBlock {
    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    /// Variable index of `Re(v[i])`.
    pub fn re(&self, i: usize) -> usize {
        debug_assert!(i < self.len());
        self.re.start + i
    }

    /// Variable index of `Im(v[i])`.
    pub fn im(&self, i: usize) -> usize {
        debug_assert!(i < self.len());
        self.im.start + i
    }

    /// Reassembles the complex vector from a solution point.
    pub fn lift(&self, x: &[f64]) -> DVector<Complex64> {
        DVector::from_fn(self.len(), |i, _| Complex64::new(x[self.re(i)], x[self.im(i)]))
    }

    /// Affine expression for `Re(w^H v)` over this block.
    pub fn re_inner(&self, w: &DVector<Complex64>) -> AffExpr {
        assert_eq!(w.len(), self.len(), "weight length must match the variable block");
        let mut expr = AffExpr::default();
        for i in 0..self.len() {
            // Re(conj(w_i) v_i) = Re(w_i) Re(v_i) + Im(w_i) Im(v_i).
            add_re_product(&mut expr, self, i, w[i].conj(), false);
        }
        expr
    }
}

impl ProblemBuilder {
    /// Allocates a complex vector variable of the given length.
    pub fn add_complex_vars(&mut self, count: usize) -> ComplexVarBlock {
        let re = self.add_vars(count);
        let im = self.add_vars(count);
        ComplexVarBlock { re, im }
    }

    /// Allocates a Hermitian PSD matrix variable of complex side `side` as
    /// the upper triangle of its real embedding, constrained to the PSD cone.
    pub fn add_hermitian_psd(&mut self, side: usize) -> HermitianPsdBlock {
        let real_side = 2 * side;
        let tri = self.add_vars(real_side * (real_side + 1) / 2);
        let entries = tri.clone().map(AffExpr::var).collect();
        self.require_psd(real_side, entries);
        HermitianPsdBlock { side, tri }
    }
}

/// Adds the terms of `Re(w * v[i])` (or `Re(w * conj(v[i]))`) to an
/// expression.
pub fn add_re_product(
    expr: &mut AffExpr,
    block: &ComplexVarBlock,
    i: usize,
    w: Complex64,
    conjugated: bool,
) {
    expr.add_term(block.re(i), w.re);
    expr.add_term(block.im(i), if conjugated { w.im } else { -w.im });
}

/// Adds the terms of `Im(w * v[i])` (or `Im(w * conj(v[i]))`) to an
/// expression.
pub fn add_im_product(
    expr: &mut AffExpr,
    block: &ComplexVarBlock,
    i: usize,
    w: Complex64,
    conjugated: bool,
) {
    expr.add_term(block.re(i), w.im);
    expr.add_term(block.im(i), if conjugated { -w.re } else { w.re });
}

/// Handle to a Hermitian PSD matrix variable in real embedding.
#[derive(Debug, Clone)]
pub struct HermitianPsdBlock {
    side: usize,
    tri: Range<usize>,
}

impl HermitianPsdBlock {
    pub fn side(&self) -> usize {
        self.side
    }

    /// Variable index of the embedded entry `(i, j)` with `i <= j`,
    /// column-major upper triangle.
    fn tri_var(&self, i: usize, j: usize) -> usize {
        debug_assert!(i <= j && j < 2 * self.side);
        self.tri.start + j * (j + 1) / 2 + i
    }

    /// Real embedding `T(H) = [[X, -Y], [Y, X]]` of a Hermitian matrix.
    fn embed(h: &DMatrix<Complex64>) -> DMatrix<f64> {
        let n = h.nrows();
        let mut t = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                t[(i, j)] = h[(i, j)].re;
                t[(n + i, n + j)] = h[(i, j)].re;
                t[(n + i, j)] = h[(i, j)].im;
                t[(i, n + j)] = -h[(i, j)].im;
            }
        }
        t
    }

    /// Affine expression for the (real) value `tr(H B)` with `H` Hermitian.
    pub fn trace_form(&self, h: &DMatrix<Complex64>) -> AffExpr {
        assert_eq!(h.nrows(), self.side, "trace weight side must match the matrix variable");
        assert_eq!(h.ncols(), self.side);
        let t = Self::embed(h);
        let mut expr = AffExpr::default();
        for j in 0..2 * self.side {
            for i in 0..=j {
                // tr(H B) = tr(T(H) T(B)) / 2; off-diagonal entries pair up.
                let coeff = if i == j { 0.5 * t[(i, j)] } else { t[(i, j)] };
                if coeff != 0.0 {
                    expr.add_term(self.tri_var(i, j), coeff);
                }
            }
        }
        expr
    }

    /// Recovers the Hermitian matrix from a solution point by averaging the
    /// two diagonal blocks and antisymmetrizing the off-diagonal one.
    pub fn lift(&self, x: &[f64]) -> DMatrix<Complex64> {
        let n = self.side;
        let entry = |i: usize, j: usize| -> f64 {
            if i <= j {
                x[self.tri_var(i, j)]
            } else {
                x[self.tri_var(j, i)]
            }
        };
        DMatrix::from_fn(n, n, |i, j| {
            let re = 0.5 * (entry(i, j) + entry(n + i, n + j));
            let im = 0.5 * (entry(n + i, j) - entry(i, n + j));
            Complex64::new(re, im)
        })
    }
}
