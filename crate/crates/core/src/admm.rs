//! ADMM baseline for `min_X R(X) + |A(X) - b|^2`.
//!
//! The splitting `X = Y` with scaled dual `L` and penalty `rho` iterates
//!
//! ```text
//! X <- argmin |A(X) - b|^2 + rho |X - Y + L|^2     (exact, per entry group)
//! Y <- argmin (1/rho) R(Y) + |Y - (X + L)|^2       (singular value prox)
//! L <- L + X - Y
//! ```
//!
//! For `f_mu` and `rho <= 1` the `Y` step is hard thresholding at
//! `sqrt(mu / rho)`; for `rho > 1` it is the firm threshold of the scaled prox.
//! The objective is not convex, so traces may be non-monotone; that is flagged
//! in the report rather than treated as an error.

use std::time::{Duration, Instant};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::factorization::{balanced_factorize, reg_value, sv_prox_scaled};
use crate::linalg::sum_sq;
use crate::operators::MeasurementOp;
use crate::penalty::Penalty;
use crate::report::{IterRecord, SolveReport, Termination};

/// Objective growth over the initial value that counts as divergence.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdmmConfig {
    pub penalty: Penalty,
    pub rho: f64,
    pub max_iters: usize,
    pub tol_primal: f64,
    pub tol_dual: f64,
    /// Recorded for replay; the iteration itself starts from zero and is
    /// deterministic.
    pub seed: u64,
    #[serde(skip)]
    pub time_budget: Option<Duration>,
}

impl AdmmConfig {
    pub fn new(penalty: Penalty) -> Self {
        Self {
            penalty,
            rho: 1.0,
            max_iters: 5000,
            tol_primal: 1e-10,
            tol_dual: 1e-10,
            seed: 0,
            time_budget: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.penalty {
            Penalty::FMu { .. } | Penalty::Nuclear { .. } => {}
            ref p => {
                return Err(Error::InvalidConfig(format!("admm supports fmu and nuclear, got {}", p.name())));
            }
        }
        self.penalty.checked()?;
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidConfig(format!("rho must be positive, got {}", self.rho)));
        }
        if !(self.tol_primal > 0.0 && self.tol_dual > 0.0) {
            return Err(Error::InvalidConfig("tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// The `Y` step: `argmin_Y (1/rho) R(Y) + |Y - V|^2`.
pub fn y_update(p: &Penalty, rho: f64, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    sv_prox_scaled(p, 1.0 / rho, v)
}

/// Factorized `(A*A + rho I)` restricted to each coupled entry group.
struct XSolver {
    groups: Vec<(Vec<(usize, usize)>, Cholesky<f64, Dyn>)>,
    atb: DMatrix<f64>,
    rho: f64,
}

impl XSolver {
    fn new<O: MeasurementOp + ?Sized>(op: &O, b: &DVector<f64>, rho: f64) -> Result<Self> {
        let sp = op.sparse();
        let mut groups = Vec::new();
        for g in sp.entry_groups() {
            let d = g.entries.len();
            let index = |i: usize, j: usize| g.entries.binary_search(&(i, j)).expect("entry in group");
            let mut h = DMatrix::identity(d, d) * rho;
            for &r in &g.rows {
                let row = sp.row(r);
                for s in row {
                    for t in row {
                        h[(index(s.row, s.col), index(t.row, t.col))] += s.coeff * t.coeff;
                    }
                }
            }
            let chol = Cholesky::new(h).ok_or_else(|| Error::Numerical("x-update system not positive definite".into()))?;
            groups.push((g.entries, chol));
        }
        Ok(Self { groups, atb: op.adjoint(b)?, rho })
    }

    /// `(A*A + rho I)^{-1} (A*b + rho T)`.
    fn solve(&self, t: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = t.clone();
        for (entries, chol) in &self.groups {
            let rhs = DVector::from_iterator(
                entries.len(),
                entries.iter().map(|&(i, j)| self.atb[(i, j)] + self.rho * t[(i, j)]),
            );
            let sol = chol.solve(&rhs);
            for (k, &(i, j)) in entries.iter().enumerate() {
                x[(i, j)] = sol[k];
            }
        }
        x
    }
}

fn objective<O: MeasurementOp + ?Sized>(p: &Penalty, op: &O, b: &DVector<f64>, x: &DMatrix<f64>) -> Result<f64> {
    Ok(reg_value(p, x)? + sum_sq(&op.residual(x, b)?))
}

/// Runs ADMM from `X = Y = L = 0`; the reported iterate is `Y`.
pub fn admm_solve<O: MeasurementOp + ?Sized>(cfg: &AdmmConfig, op: &O, b: &DVector<f64>) -> Result<SolveReport> {
    cfg.validate()?;
    op.check_vector(b)?;
    let start = Instant::now();
    let p = &cfg.penalty;
    let rho = cfg.rho;
    let (m, n) = (op.rows(), op.cols());
    let xs = XSolver::new(op, b, rho)?;

    let mut y = DMatrix::zeros(m, n);
    let mut dual = DMatrix::zeros(m, n);
    let initial_objective = objective(p, op, b, &y)?;
    let limit = DIVERGENCE_FACTOR * initial_objective.max(f64::MIN_POSITIVE);
    let mut current = initial_objective;
    let mut trace = Vec::new();
    let mut non_monotone = false;
    let mut termination = Termination::MaxIters;

    for iter in 1..=cfg.max_iters {
        let x = xs.solve(&(&y - &dual));
        let y_new = y_update(p, rho, &(&x + &dual))?;
        let primal = (&x - &y_new).norm();
        let dual_res = rho * (&y_new - &y).norm();
        dual += &x - &y_new;
        y = y_new;

        let obj = objective(p, op, b, &y)?;
        if !obj.is_finite() {
            return Err(Error::NonFinite { iter });
        }
        if obj > limit {
            return Err(Error::Divergence { iter, objective: obj, limit });
        }
        if obj > current {
            non_monotone = true;
        }
        current = obj;
        let augmented = reg_value(p, &y)?
            + op.residual(&x, b)?.norm_squared()
            + rho * ((&x - &y + &dual).norm_squared() - dual.norm_squared());
        trace.push(IterRecord {
            iter,
            objective: obj,
            surrogate_objective: augmented,
            lambda: rho,
            accepted: true,
            grad_norm: primal,
        });
        let scale = x.norm().max(y.norm()).max(f64::MIN_POSITIVE);
        let dual_scale = (rho * dual.norm()).max(f64::MIN_POSITIVE);
        if primal <= cfg.tol_primal * scale && dual_res <= cfg.tol_dual * dual_scale {
            termination = Termination::ConvergedObj;
            break;
        }
        if cfg.time_budget.is_some_and(|t| start.elapsed() >= t) {
            termination = Termination::TimeBudget;
            break;
        }
    }

    let rank = crate::factorization::rank(&y)?;
    let factors = balanced_factorize(&y, rank.max(1))?;
    Ok(SolveReport {
        solver: "admm",
        factors,
        x: y,
        initial_objective,
        final_objective: current,
        iterations: trace.len(),
        termination,
        trace,
        non_monotone,
    })
}
