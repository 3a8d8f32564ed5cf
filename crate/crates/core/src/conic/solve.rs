//! Lowering to the interior-point backend and solution extraction.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use thiserror::Error;

use super::{ConeKind, ConicProblem};

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Largest PSD block side accepted; the dense factorization behind the PSD
/// cone scales too badly beyond it.
pub const MAX_PSD_SIDE: usize = 600;

/// Errors raised before or while invoking the backend. Solver outcomes such
/// as infeasibility are reported through [`SolveStatus`], not here.
#[derive(Debug, Error)]
pub enum ConicError {
    #[error("problem contains a PSD block; use solve_sdp")]
    UnexpectedPsdBlock,
    #[error("solve_sdp requires at least one PSD block")]
    MissingPsdBlock,
    #[error("PSD block side {side} exceeds the supported maximum {max}")]
    PsdSideTooLarge { side: usize, max: usize },
    #[error("problem data contains a non-finite coefficient")]
    NonFiniteData,
    #[error("backend rejected the problem: {0}")]
    Backend(String),
}

/// Backend-independent solve outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    /// Terminated at reduced accuracy; the point is usable but callers
    /// should re-verify feasibility against the exact problem data.
    ReducedAccuracy,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

impl SolveStatus {
    pub fn is_optimal(self) -> bool {
        self == SolveStatus::Optimal
    }

    /// True when the returned point approximately solves the problem.
    pub fn is_usable(self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::ReducedAccuracy)
    }
}

/// Termination tolerances passed to the backend.
#[derive(Debug, Clone, Copy)]
pub struct SolverTolerances {
    /// Primal and dual feasibility tolerance.
    pub feas: f64,
    /// Absolute and relative duality-gap tolerance.
    pub gap: f64,
    pub max_iterations: u32,
}

impl Default for SolverTolerances {
    fn default() -> Self {
        Self { feas: 1e-8, gap: 1e-8, max_iterations: 200 }
    }
}

/// Solution point with self-computed feasibility diagnostics.
#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub x: Vec<f64>,
    /// Objective value; NaN unless the status is usable.
    pub objective: f64,
    pub status: SolveStatus,
    pub iterations: u32,
    /// Worst primal cone violation of `x`, recomputed from the problem data.
    pub primal_residual: f64,
    /// `|primal - dual| / max(1, |primal|)` as reported by the backend.
    pub relative_gap: f64,
}

/// Solves a problem without PSD blocks.
pub fn solve_socp(
    problem: &ConicProblem,
    tol: &SolverTolerances,
) -> Result<ConicSolution, ConicError> {
    if problem.has_psd_block() {
        return Err(ConicError::UnexpectedPsdBlock);
    }
    solve_inner(problem, tol)
}

/// Solves a problem with at least one PSD block.
pub fn solve_sdp(
    problem: &ConicProblem,
    tol: &SolverTolerances,
) -> Result<ConicSolution, ConicError> {
    if !problem.has_psd_block() {
        return Err(ConicError::MissingPsdBlock);
    }
    let side = problem.max_psd_side();
    if side > MAX_PSD_SIDE {
        return Err(ConicError::PsdSideTooLarge { side, max: MAX_PSD_SIDE });
    }
    solve_inner(problem, tol)
}

fn solve_inner(problem: &ConicProblem, tol: &SolverTolerances) -> Result<ConicSolution, ConicError> {
    // The backend expects `A x + s = b, s in K`; a row `expr(x) >= 0` (resp.
    // `= 0`, cone member) becomes `s = expr(x)`, i.e. `b = constant` and `A =
    // -coefficients`. PSD rows carry the scaled-triangle convention: the
    // off-diagonal entries of the upper triangle are multiplied by sqrt(2).
    let n = problem.num_vars;
    let mut b: Vec<f64> = Vec::with_capacity(problem.num_rows());
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();

    for block in &problem.blocks {
        match block.cone {
            ConeKind::Zero => match cones.last_mut() {
                Some(SupportedConeT::ZeroConeT(dim)) => *dim += block.rows.len(),
                _ => cones.push(SupportedConeT::ZeroConeT(block.rows.len())),
            },
            ConeKind::Nonneg => match cones.last_mut() {
                Some(SupportedConeT::NonnegativeConeT(dim)) => *dim += block.rows.len(),
                _ => cones.push(SupportedConeT::NonnegativeConeT(block.rows.len())),
            },
            ConeKind::SecondOrder => cones.push(SupportedConeT::SecondOrderConeT(block.rows.len())),
            ConeKind::PsdTriangle { side } => cones.push(SupportedConeT::PSDTriangleConeT(side)),
        }
        let psd_side = match block.cone {
            ConeKind::PsdTriangle { side } => Some(side),
            _ => None,
        };
        let mut entry = 0usize;
        for row in &block.rows {
            let scale = match psd_side {
                Some(_) => {
                    // Column-major upper triangle: entry index within column
                    // j spans rows 0..=j; the last one is the diagonal.
                    let (i, j) = triangle_coords(entry);
                    entry += 1;
                    if i == j {
                        1.0
                    } else {
                        SQRT2
                    }
                }
                None => 1.0,
            };
            let r = b.len();
            if !row.constant.is_finite() {
                return Err(ConicError::NonFiniteData);
            }
            b.push(row.constant * scale);
            for &(var, coeff) in &row.terms {
                if !coeff.is_finite() {
                    return Err(ConicError::NonFiniteData);
                }
                triplets.push((r, var, -coeff * scale));
            }
        }
    }

    let m = b.len();
    // Duplicate (row, var) pairs are summed while assembling the CSC arrays.
    triplets.sort_unstable_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
    let mut colptr = vec![0usize; n + 1];
    let mut rowval = Vec::with_capacity(triplets.len());
    let mut nzval: Vec<f64> = Vec::with_capacity(triplets.len());
    let mut last: Option<(usize, usize)> = None;
    for (row, col, val) in triplets {
        if last == Some((row, col)) {
            *nzval.last_mut().unwrap() += val;
        } else {
            rowval.push(row);
            nzval.push(val);
            colptr[col + 1] += 1;
            last = Some((row, col));
        }
    }
    for c in 0..n {
        colptr[c + 1] += colptr[c];
    }

    let a = CscMatrix::new(m, n, colptr, rowval, nzval);
    let p = CscMatrix::new(n, n, vec![0; n + 1], vec![], vec![]);
    for &q in &problem.objective {
        if !q.is_finite() {
            return Err(ConicError::NonFiniteData);
        }
    }

    let mut settings = DefaultSettings {
        verbose: false,
        max_iter: tol.max_iterations,
        tol_feas: tol.feas,
        tol_gap_abs: tol.gap,
        tol_gap_rel: tol.gap,
        ..Default::default()
    };
    if !problem.has_psd_block() {
        // Problem rows routinely mix unit-modulus entries with milliwatt
        // constants, and the stock static regularization biases the KKT
        // solves enough to miss the tightest constraints by whole percents.
        // Shrink it and lean on deeper iterative refinement instead. The
        // dense PSD factorization is the exception: it needs the stock
        // regularization to converge at all.
        settings.static_regularization_constant = 1e-13;
        settings.iterative_refinement_max_iter = 60;
        settings.iterative_refinement_reltol = 1e-14;
    }
    let mut solver = DefaultSolver::new(&p, &problem.objective, &a, &b, &cones, settings)
        .map_err(|e| ConicError::Backend(format!("{e:?}")))?;
    solver.solve();

    let status = match solver.solution.status {
        SolverStatus::Solved => SolveStatus::Optimal,
        SolverStatus::AlmostSolved => SolveStatus::ReducedAccuracy,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            SolveStatus::Infeasible
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::Unbounded,
        _ => SolveStatus::NumericalFailure,
    };
    let x = solver.solution.x.clone();
    let primal = solver.solution.obj_val;
    let dual = solver.solution.obj_val_dual;
    Ok(ConicSolution {
        objective: if status.is_usable() { primal } else { f64::NAN },
        primal_residual: problem.primal_residual(&x),
        relative_gap: (primal - dual).abs() / primal.abs().max(1.0),
        iterations: solver.solution.iterations,
        status,
        x,
    })
}

/// Maps a column-major upper-triangle index to matrix coordinates.
fn triangle_coords(entry: usize) -> (usize, usize) {
    let mut j = 0usize;
    let mut base = 0usize;
    while base + j + 1 <= entry {
        base += j + 1;
        j += 1;
    }
    (entry - base, j)
}
