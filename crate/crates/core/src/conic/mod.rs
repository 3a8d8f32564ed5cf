//! A small conic-programming layer.
//!
//! Problems are assembled as affine expressions grouped into cone blocks
//! (equality, non-negative, second-order, PSD-triangle) with a linear
//! objective, then lowered to a sparse interior-point backend. The layer owns
//! the complex-to-real conventions used by the beamforming subproblems (see
//! [`lowering`]) and reports solutions with backend-independent statuses and
//! self-computed feasibility residuals.
//!
//! # Example
//!
//! ```
//! use wetbeam_core::conic::{AffExpr, ProblemBuilder, solve_socp, SolverTolerances};
//!
//! // minimize ||x|| subject to 3 x1 + 4 x2 = 1.
//! let mut pb = ProblemBuilder::new();
//! let x = pb.add_vars(2);
//! let t = pb.add_var();
//! pb.objective_term(t, 1.0);
//! pb.require_zero(AffExpr::constant(-1.0).plus_var(x.start, 3.0).plus_var(x.start + 1, 4.0));
//! pb.require_soc(vec![AffExpr::var(t), AffExpr::var(x.start), AffExpr::var(x.start + 1)]);
//! let sol = solve_socp(&pb.build(), &SolverTolerances::default()).unwrap();
//! assert!((sol.objective - 0.2).abs() < 1e-6);
//! ```

pub mod lowering;
mod solve;

pub use solve::{solve_sdp, solve_socp, ConicError, ConicSolution, SolveStatus, SolverTolerances};

use std::io::Write;
use std::ops::Range;

/// Affine expression `constant + sum coeff * x[var]`.
#[derive(Debug, Clone, Default)]
pub struct AffExpr {
    pub constant: f64,
    pub terms: Vec<(usize, f64)>,
}

impl AffExpr {
    pub fn constant(c: f64) -> Self {
        Self { constant: c, terms: Vec::new() }
    }

    pub fn var(index: usize) -> Self {
        Self { constant: 0.0, terms: vec![(index, 1.0)] }
    }

    pub fn scaled_var(index: usize, coeff: f64) -> Self {
        Self { constant: 0.0, terms: vec![(index, coeff)] }
    }

    pub fn plus_var(mut self, index: usize, coeff: f64) -> Self {
        self.terms.push((index, coeff));
        self
    }

    pub fn add_term(&mut self, index: usize, coeff: f64) {
        self.terms.push((index, coeff));
    }

    pub fn scale(&mut self, factor: f64) {
        self.constant *= factor;
        for (_, c) in &mut self.terms {
            *c *= factor;
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(i, c)| c * x[i]).sum::<f64>()
    }
}

/// Cone kind of one constraint block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConeKind {
    /// Every row equals zero.
    Zero,
    /// Every row is non-negative.
    Nonneg,
    /// First row bounds the Euclidean norm of the remaining rows.
    SecondOrder,
    /// Rows are the column-major upper triangle of a symmetric PSD matrix.
    PsdTriangle { side: usize },
}

#[derive(Debug, Clone)]
pub(crate) struct Block {
    pub cone: ConeKind,
    pub rows: Vec<AffExpr>,
}

/// Incremental problem assembly.
#[derive(Debug, Default)]
pub struct ProblemBuilder {
    num_vars: usize,
    objective: Vec<f64>,
    blocks: Vec<Block>,
}

impl ProblemBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self) -> usize {
        self.add_vars(1).start
    }

    pub fn add_vars(&mut self, count: usize) -> Range<usize> {
        let start = self.num_vars;
        self.num_vars += count;
        self.objective.resize(self.num_vars, 0.0);
        start..self.num_vars
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    /// Adds `coeff * x[var]` to the minimized objective.
    pub fn objective_term(&mut self, var: usize, coeff: f64) {
        assert!(var < self.num_vars, "objective variable out of range");
        self.objective[var] += coeff;
    }

    /// Requires `expr == 0`.
    pub fn require_zero(&mut self, expr: AffExpr) {
        self.push_block(ConeKind::Zero, vec![expr]);
    }

    /// Requires `expr >= 0`.
    pub fn require_nonneg(&mut self, expr: AffExpr) {
        self.push_block(ConeKind::Nonneg, vec![expr]);
    }

    /// Requires `||(rows[1..])||_2 <= rows[0]`.
    pub fn require_soc(&mut self, rows: Vec<AffExpr>) {
        assert!(rows.len() >= 2, "a second-order cone needs a head and at least one tail row");
        self.push_block(ConeKind::SecondOrder, rows);
    }

    /// Requires the symmetric matrix with the given column-major upper
    /// triangle (`side * (side + 1) / 2` unscaled entries) to be PSD.
    pub fn require_psd(&mut self, side: usize, entries: Vec<AffExpr>) {
        assert_eq!(
            entries.len(),
            side * (side + 1) / 2,
            "PSD block of side {side} needs the full upper triangle"
        );
        self.push_block(ConeKind::PsdTriangle { side }, entries);
    }

    fn push_block(&mut self, cone: ConeKind, rows: Vec<AffExpr>) {
        for row in &rows {
            for &(var, _) in &row.terms {
                assert!(var < self.num_vars, "constraint references variable {var} out of range");
            }
        }
        self.blocks.push(Block { cone, rows });
    }

    pub fn build(self) -> ConicProblem {
        ConicProblem { num_vars: self.num_vars, objective: self.objective, blocks: self.blocks }
    }
}

/// Finished problem, ready to solve or dump.
#[derive(Debug, Clone)]
pub struct ConicProblem {
    pub(crate) num_vars: usize,
    pub(crate) objective: Vec<f64>,
    pub(crate) blocks: Vec<Block>,
}

impl ConicProblem {
    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn num_rows(&self) -> usize {
        self.blocks.iter().map(|b| b.rows.len()).sum()
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub(crate) fn has_psd_block(&self) -> bool {
        self.blocks.iter().any(|b| matches!(b.cone, ConeKind::PsdTriangle { .. }))
    }

    pub(crate) fn max_psd_side(&self) -> usize {
        self.blocks
            .iter()
            .filter_map(|b| match b.cone {
                ConeKind::PsdTriangle { side } => Some(side),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    /// Worst primal feasibility violation of a candidate point, measured
    /// per block: absolute value for equalities, negative part for
    /// inequalities, norm excess for second-order cones and the most
    /// negative eigenvalue for PSD blocks.
    pub fn primal_residual(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for block in &self.blocks {
            let vals: Vec<f64> = block.rows.iter().map(|r| r.evaluate(x)).collect();
            let violation = match block.cone {
                ConeKind::Zero => vals.iter().fold(0.0f64, |a, v| a.max(v.abs())),
                ConeKind::Nonneg => vals.iter().fold(0.0f64, |a, v| a.max(-v)),
                ConeKind::SecondOrder => {
                    let tail: f64 = vals[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
                    (tail - vals[0]).max(0.0)
                }
                ConeKind::PsdTriangle { side } => {
                    let mut mat = nalgebra::DMatrix::zeros(side, side);
                    let mut idx = 0;
                    for j in 0..side {
                        for i in 0..=j {
                            mat[(i, j)] = vals[idx];
                            mat[(j, i)] = vals[idx];
                            idx += 1;
                        }
                    }
                    let eigs = mat.symmetric_eigenvalues();
                    (-eigs.iter().fold(f64::INFINITY, |a, &v| a.min(v))).max(0.0)
                }
            };
            worst = worst.max(violation);
        }
        worst
    }

    /// Writes a human-readable description, useful when a subproblem
    /// misbehaves and needs to be inspected offline.
    pub fn write_debug<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "conic-problem v1")?;
        writeln!(w, "vars {}", self.num_vars)?;
        write!(w, "minimize:")?;
        for (i, c) in self.objective.iter().enumerate() {
            if *c != 0.0 {
                write!(w, " {c}*x{i}")?;
            }
        }
        writeln!(w)?;
        for (bi, block) in self.blocks.iter().enumerate() {
            let kind = match block.cone {
                ConeKind::Zero => "zero".to_string(),
                ConeKind::Nonneg => "nonneg".to_string(),
                ConeKind::SecondOrder => "soc".to_string(),
                ConeKind::PsdTriangle { side } => format!("psd({side})"),
            };
            writeln!(w, "block {bi}: {kind} rows {}", block.rows.len())?;
            for (ri, row) in block.rows.iter().enumerate() {
                write!(w, "  row {ri}: {}", row.constant)?;
                for (var, coeff) in &row.terms {
                    write!(w, " + {coeff}*x{var}")?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }
}
