use nalgebra::DMatrix;
use serde::Serialize;

use crate::factorization::FactorPair;

/// Why a solver stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    ConvergedObj,
    ConvergedGrad,
    MaxIters,
    /// Wall-clock budget exhausted (ADMM baselines only).
    TimeBudget,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::ConvergedObj => "converged_obj",
            Termination::ConvergedGrad => "converged_grad",
            Termination::MaxIters => "max_iters",
            Termination::TimeBudget => "time_budget",
        }
    }
}

/// One outer iteration of a solver.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterRecord {
    pub iter: usize,
    /// True objective `R(X) + |A(X) - b|^2` of the iterate kept after this step.
    pub objective: f64,
    /// Majorized (VarPro) or augmented (ADMM) objective of the trial point;
    /// NaN when no trial point was formed.
    pub surrogate_objective: f64,
    /// Damping (VarPro) or penalty parameter (ADMM) used for the step.
    pub lambda: f64,
    pub accepted: bool,
    /// Projected gradient norm (VarPro) or primal residual (ADMM).
    pub grad_norm: f64,
}

/// Result of a solve, shared by the VarPro and ADMM solvers.
#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub solver: &'static str,
    pub factors: FactorPair,
    #[serde(skip)]
    pub x: DMatrix<f64>,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub iterations: usize,
    pub termination: Termination,
    pub trace: Vec<IterRecord>,
    /// Set when accepted objectives were not monotone (ADMM only).
    pub non_monotone: bool,
}

impl SolveReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn accepted_steps(&self) -> usize {
        self.trace.iter().filter(|r| r.accepted).count()
    }
}
