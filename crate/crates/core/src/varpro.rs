//! Iteratively reweighted variable projection.
//!
//! Each outer iteration
//!
//! 1. majorizes the surrogate `sum f(e_i)`, `e_i = (|B_i|^2 + |C_i|^2) / 2`,
//!    by `sum w_i (|B_i|^2 + |C_i|^2)` with `w_i = f'(e_i) / 2`,
//! 2. takes one damped Ruhe-Wedin step on `B` using the reduced normal matrix
//!    `J_B^T (I - J_C J_C^+) J_B + lambda I`, then re-solves `C` exactly,
//! 3. accepts the trial point only if the true objective `R(BC^T) +
//!    |A(BC^T) - b|^2` decreases, in which case the factors are rebalanced
//!    through an SVD of the product.
//!
//! Residuals are stacked as `[sqrt(w) vec(B); sqrt(w) vec(C); A(BC^T) - b]`,
//! so their squared norm is exactly the majorized objective. The `C` block of
//! the Jacobian is block diagonal over the column groups of the operator,
//! which keeps the projection `J_C J_C^+` cheap.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{dims, Error, Result};
use crate::factorization::{rebalance, reg_of_product, surrogate_value, FactorPair};
use crate::linalg::{pinv_solve, pinv_sqrt, sum_sq};
use crate::operators::{ColumnGroup, MeasurementOp};
use crate::penalty::Penalty;
use crate::report::{IterRecord, SolveReport, Termination};

/// Relative eigenvalue cutoff for the pseudo-inverses of the `C` blocks.
const PINV_TOL: f64 = 1e-12;
const LAMBDA_MIN: f64 = 1e-9;
/// Damping above which no further progress is possible in double precision.
const LAMBDA_MAX: f64 = 1e16;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverConfig {
    pub penalty: Penalty,
    pub k: usize,
    pub lambda0: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    pub max_iters: usize,
    /// Relative objective change that counts as stalled.
    pub tol_rel_obj: f64,
    /// Consecutive stalled accepted steps before stopping.
    pub stall_steps: usize,
    pub tol_grad: f64,
    pub seed: u64,
}

impl SolverConfig {
    pub fn new(penalty: Penalty, k: usize) -> Self {
        Self {
            penalty,
            k,
            lambda0: 1e-2,
            lambda_up: 10.0,
            lambda_down: 0.1,
            max_iters: 500,
            tol_rel_obj: 1e-10,
            stall_steps: 5,
            tol_grad: 1e-10,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.penalty.checked()?;
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if !(self.lambda0 > 0.0 && self.lambda0.is_finite()) {
            return bad(format!("lambda0 must be positive, got {}", self.lambda0));
        }
        if !(self.lambda_down > 0.0 && self.lambda_down < 1.0 && self.lambda_up > 1.0) {
            return bad(format!(
                "need 0 < lambda_down < 1 < lambda_up, got {} and {}",
                self.lambda_down, self.lambda_up
            ));
        }
        if !(self.tol_rel_obj > 0.0 && self.tol_grad > 0.0) {
            return bad("tolerances must be positive".into());
        }
        if self.stall_steps == 0 {
            return bad("stall_steps must be at least 1".into());
        }
        Ok(())
    }
}

/// Current iterate of the solver.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub factors: FactorPair,
    pub lambda: f64,
    pub iter: usize,
    pub objective: f64,
}

/// `w_i = f'((|B_i|^2 + |C_i|^2) / 2) / 2`.
pub fn weights(p: &Penalty, f: &FactorPair) -> Vec<f64> {
    f.column_energies().into_iter().map(|e| 0.5 * p.slope(e)).collect()
}

fn check_pair<O: MeasurementOp + ?Sized>(op: &O, b: &DVector<f64>, f: &FactorPair) -> Result<()> {
    if (f.rows(), f.cols()) != (op.rows(), op.cols()) {
        return Err(Error::DimensionMismatch {
            expected: dims(op.rows(), op.cols()),
            got: dims(f.rows(), f.cols()),
        });
    }
    op.check_vector(b)
}

/// `|A(B C^T) - b|^2`.
pub fn data_term<O: MeasurementOp + ?Sized>(op: &O, b: &DVector<f64>, f: &FactorPair) -> Result<f64> {
    check_pair(op, b, f)?;
    Ok(sum_sq(&op.residual(&f.product(), b)?))
}

/// Gradient of `|A(B C^T) - b|^2` with respect to `(B, C)`.
pub fn data_gradient<O: MeasurementOp + ?Sized>(
    op: &O,
    b: &DVector<f64>,
    f: &FactorPair,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_pair(op, b, f)?;
    let g = op.adjoint(&op.residual(&f.product(), b)?)? * 2.0;
    Ok((&g * f.c(), g.transpose() * f.b()))
}

/// True objective `R(B C^T) + |A(B C^T) - b|^2`.
pub fn true_objective<O: MeasurementOp + ?Sized>(
    p: &Penalty,
    op: &O,
    b: &DVector<f64>,
    f: &FactorPair,
) -> Result<f64> {
    Ok(reg_of_product(p, f)? + data_term(op, b, f)?)
}

/// Bilinear objective `sum f(e_i) + |A(B C^T) - b|^2`.
pub fn bilinear_objective<O: MeasurementOp + ?Sized>(
    p: &Penalty,
    op: &O,
    b: &DVector<f64>,
    f: &FactorPair,
) -> Result<f64> {
    Ok(surrogate_value(p, f) + data_term(op, b, f)?)
}

/// `sum w_i (|B_i|^2 + |C_i|^2) + |A(B C^T) - b|^2` for given weights.
pub fn weighted_objective<O: MeasurementOp + ?Sized>(
    w: &[f64],
    op: &O,
    b: &DVector<f64>,
    f: &FactorPair,
) -> Result<f64> {
    let reg: f64 = f.column_energies().iter().zip(w).map(|(e, wi)| 2.0 * wi * e).sum();
    Ok(reg + data_term(op, b, f)?)
}

/// Majorized objective with the weights taken at `f` itself.
pub fn surrogate_objective<O: MeasurementOp + ?Sized>(
    p: &Penalty,
    op: &O,
    b: &DVector<f64>,
    f: &FactorPair,
) -> Result<f64> {
    weighted_objective(&weights(p, f), op, b, f)
}

/// Column-group bookkeeping derived once from the operator structure.
struct Layout {
    groups: Vec<ColumnGroup>,
    /// Position of each column of `X` inside its group.
    pos: Vec<usize>,
}

impl Layout {
    fn new<O: MeasurementOp + ?Sized>(op: &O) -> Self {
        let groups = op.sparse().column_groups();
        let mut pos = vec![0; op.cols()];
        for g in &groups {
            for (p, &c) in g.cols.iter().enumerate() {
                pos[c] = p;
            }
        }
        Self { groups, pos }
    }
}

/// Accumulates the normal equations of one column group for fixed `B`.
fn group_normal<O: MeasurementOp + ?Sized>(
    op: &O,
    layout: &Layout,
    g: &ColumnGroup,
    bmat: &DMatrix<f64>,
    w: &[f64],
    rhs: &DVector<f64>,
) -> (DMatrix<f64>, DVector<f64>) {
    let k = w.len();
    let d = g.cols.len() * k;
    let mut h = DMatrix::zeros(d, d);
    for i in 0..d {
        h[(i, i)] = w[i % k];
    }
    let mut v = DVector::zeros(d);
    let mut hr: Vec<(usize, f64)> = Vec::new();
    for &r in &g.rows {
        hr.clear();
        for t in op.sparse().row(r) {
            let base = layout.pos[t.col] * k;
            for l in 0..k {
                hr.push((base + l, t.coeff * bmat[(t.row, l)]));
            }
        }
        for &(i, vi) in &hr {
            v[i] += vi * rhs[r];
            for &(j, vj) in &hr {
                h[(i, j)] += vi * vj;
            }
        }
    }
    (h, v)
}

fn write_group(c: &mut DMatrix<f64>, g: &ColumnGroup, sol: &DVector<f64>, k: usize) {
    for (p, &col) in g.cols.iter().enumerate() {
        for l in 0..k {
            c[(col, l)] = sol[p * k + l];
        }
    }
}

fn check_c_inputs<O: MeasurementOp + ?Sized>(
    op: &O,
    b: &DVector<f64>,
    bmat: &DMatrix<f64>,
    w: &[f64],
) -> Result<()> {
    if bmat.nrows() != op.rows() || bmat.ncols() != w.len() {
        return Err(Error::DimensionMismatch {
            expected: dims(op.rows(), w.len()),
            got: dims(bmat.nrows(), bmat.ncols()),
        });
    }
    if w.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
        return Err(Error::Domain("weights must be finite and non-negative".into()));
    }
    op.check_vector(b)
}

/// Exact minimizer over `C` of `sum w_i (|B_i|^2 + |C_i|^2) + |A(B C^T) - b|^2`.
/// Fails when the normal equations of some column group are singular.
pub fn c_solve<O: MeasurementOp + ?Sized>(
    op: &O,
    b: &DVector<f64>,
    bmat: &DMatrix<f64>,
    w: &[f64],
) -> Result<DMatrix<f64>> {
    check_c_inputs(op, b, bmat, w)?;
    let layout = Layout::new(op);
    let k = w.len();
    let mut c = DMatrix::zeros(op.cols(), k);
    for (gi, g) in layout.groups.iter().enumerate() {
        let (h, v) = group_normal(op, &layout, g, bmat, w, b);
        let eig = h.clone().symmetric_eigen();
        let top = eig.eigenvalues.max();
        let low = eig.eigenvalues.min();
        if !(top > 0.0) || low <= PINV_TOL * top {
            return Err(Error::SingularSystem { group: gi });
        }
        let chol = Cholesky::new(h).ok_or(Error::SingularSystem { group: gi })?;
        write_group(&mut c, g, &chol.solve(&v), k);
    }
    Ok(c)
}

/// Like [`c_solve`] but returns the least-norm minimizer when a group is
/// underdetermined (this is the `J_C^+` solution).
pub fn c_solve_min_norm<O: MeasurementOp + ?Sized>(
    op: &O,
    b: &DVector<f64>,
    bmat: &DMatrix<f64>,
    w: &[f64],
) -> Result<DMatrix<f64>> {
    check_c_inputs(op, b, bmat, w)?;
    Ok(c_solve_layout(op, &Layout::new(op), b, bmat, w))
}

fn c_solve_layout<O: MeasurementOp + ?Sized>(
    op: &O,
    layout: &Layout,
    b: &DVector<f64>,
    bmat: &DMatrix<f64>,
    w: &[f64],
) -> DMatrix<f64> {
    let k = w.len();
    let mut c = DMatrix::zeros(op.cols(), k);
    for g in &layout.groups {
        let (h, v) = group_normal(op, layout, g, bmat, w, b);
        write_group(&mut c, g, &pinv_solve(&h, &v, PINV_TOL), k);
    }
    c
}

/// Output of one damped RW2 step.
#[derive(Debug, Clone)]
pub struct Rw2Step {
    pub candidate: FactorPair,
    /// Norm of the projected half-gradient `J_B^T (I - J_C J_C^+) r`.
    pub grad_norm: f64,
    /// Norm of the full half-gradient `J^T r` in `(B, C)`.
    pub full_grad_norm: f64,
}

/// One damped Ruhe-Wedin step from `state` followed by the exact `C` solve.
pub fn rw2_step<O: MeasurementOp + ?Sized>(
    p: &Penalty,
    state: &SolverState,
    op: &O,
    b: &DVector<f64>,
) -> Result<Rw2Step> {
    check_pair(op, b, &state.factors)?;
    let layout = Layout::new(op);
    let w = weights(p, &state.factors);
    rw2_with(&layout, op, b, &state.factors, &w, state.lambda)
}

fn rw2_with<O: MeasurementOp + ?Sized>(
    layout: &Layout,
    op: &O,
    rhs: &DVector<f64>,
    f: &FactorPair,
    w: &[f64],
    lambda: f64,
) -> Result<Rw2Step> {
    let (bm, cm) = (f.b(), f.c());
    let (m, k) = (bm.nrows(), bm.ncols());
    let nb = m * k;
    let sp = op.sparse();
    let resid = sp.apply_unchecked(&f.product()) - rhs;

    // B block: H_BB = diag(w) + sum g g^T and grad_B = w . B + sum r g.
    let mut hbb = DMatrix::zeros(nb, nb);
    let mut grad_b = DVector::zeros(nb);
    for a in 0..m {
        for l in 0..k {
            hbb[(a * k + l, a * k + l)] = w[l];
            grad_b[a * k + l] = w[l] * bm[(a, l)];
        }
    }

    let total_c: usize = layout.groups.iter().map(|g| g.cols.len() * k).sum();
    let mut kt = DMatrix::zeros(nb, total_c);
    let mut kappa = DVector::zeros(total_c);
    let mut used = 0;
    let mut grad_c_sq = 0.0;
    let mut gr: Vec<(usize, f64)> = Vec::new();
    let mut hr: Vec<(usize, f64)> = Vec::new();

    for g in &layout.groups {
        let d = g.cols.len() * k;
        let mut hcc = DMatrix::zeros(d, d);
        let mut hcb = DMatrix::zeros(d, nb);
        let mut grad_c = DVector::zeros(d);
        for (pi, &col) in g.cols.iter().enumerate() {
            for l in 0..k {
                hcc[(pi * k + l, pi * k + l)] = w[l];
                grad_c[pi * k + l] = w[l] * cm[(col, l)];
            }
        }
        for &r in &g.rows {
            gr.clear();
            hr.clear();
            for t in sp.row(r) {
                let base = layout.pos[t.col] * k;
                for l in 0..k {
                    gr.push((t.row * k + l, t.coeff * cm[(t.col, l)]));
                    hr.push((base + l, t.coeff * bm[(t.row, l)]));
                }
            }
            let rr = resid[r];
            for &(i, vi) in &gr {
                grad_b[i] += rr * vi;
                for &(j, vj) in &gr {
                    hbb[(i, j)] += vi * vj;
                }
            }
            for &(i, vi) in &hr {
                grad_c[i] += rr * vi;
                for &(j, vj) in &hr {
                    hcc[(i, j)] += vi * vj;
                }
                for &(j, vj) in &gr {
                    hcb[(i, j)] += vi * vj;
                }
            }
        }
        grad_c_sq += grad_c.norm_squared();
        // L^T L = H_CC^+, so H_CB^T H_CC^+ H_CB = (L H_CB)^T (L H_CB).
        let lfac = pinv_sqrt(&hcc, PINV_TOL);
        let q = lfac.nrows();
        if q == 0 {
            continue;
        }
        let kg = &lfac * &hcb;
        kt.columns_mut(used, q).copy_from(&kg.transpose());
        kappa.rows_mut(used, q).copy_from(&(&lfac * &grad_c));
        used += q;
    }

    let kt = kt.columns(0, used).into_owned();
    let kappa = kappa.rows(0, used).into_owned();
    let mut s = hbb;
    s.gemm(-1.0, &kt, &kt.transpose(), 1.0);
    let full_grad_norm = (grad_b.norm_squared() + grad_c_sq).sqrt();
    let reduced_grad = &grad_b - &kt * &kappa;
    let grad_norm = reduced_grad.norm();

    for i in 0..nb {
        s[(i, i)] += lambda;
    }
    // symmetrize against rounding before factorizing
    let s = (&s + s.transpose()) * 0.5;
    let chol = Cholesky::new(s)
        .ok_or_else(|| Error::Numerical(format!("damped reduced system not positive definite at lambda = {lambda:e}")))?;
    let delta = chol.solve(&(-reduced_grad));
    let mut b_new = bm.clone();
    for a in 0..m {
        for l in 0..k {
            b_new[(a, l)] += delta[a * k + l];
        }
    }
    let c_new = c_solve_layout(op, layout, rhs, &b_new, w);
    let candidate = FactorPair::new(b_new, c_new)
        .map_err(|_| Error::Numerical("non-finite trial factors".into()))?;
    Ok(Rw2Step { candidate, grad_norm, full_grad_norm })
}

/// Standard normal factors drawn from the seeded generator, `B` then `C`,
/// each in column-major order.
pub fn random_init(m: usize, n: usize, k: usize, seed: u64) -> FactorPair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = DMatrix::from_fn(m, k, |_, _| StandardNormal.sample(&mut rng));
    let c = DMatrix::from_fn(n, k, |_, _| StandardNormal.sample(&mut rng));
    FactorPair::new(b, c).expect("finite normal draws")
}

/// Runs the reweighted VarPro iteration until one of the stopping rules fires.
pub fn solve<O: MeasurementOp + ?Sized>(
    cfg: &SolverConfig,
    op: &O,
    b: &DVector<f64>,
    init: Option<FactorPair>,
) -> Result<SolveReport> {
    cfg.validate()?;
    let init = match init {
        Some(f) => {
            if f.k() != cfg.k {
                return Err(Error::DimensionMismatch {
                    expected: format!("{} factor columns", cfg.k),
                    got: format!("{} factor columns", f.k()),
                });
            }
            f
        }
        None => random_init(op.rows(), op.cols(), cfg.k, cfg.seed),
    };
    check_pair(op, b, &init)?;
    let p = &cfg.penalty;
    let layout = Layout::new(op);

    let mut factors = init;
    let mut objective = true_objective(p, op, b, &factors)?;
    if !objective.is_finite() {
        return Err(Error::NonFinite { iter: 0 });
    }
    let initial_objective = objective;
    let mut lambda = cfg.lambda0;
    let mut trace = Vec::new();
    let mut stalled = 0;
    let mut termination = Termination::MaxIters;

    for iter in 1..=cfg.max_iters {
        let w = weights(p, &factors);
        let step = rw2_with(&layout, op, b, &factors, &w, lambda);
        let mut record = IterRecord {
            iter,
            objective,
            surrogate_objective: f64::NAN,
            lambda,
            accepted: false,
            grad_norm: f64::NAN,
        };
        let step = match step {
            Ok(s) => s,
            Err(_) => {
                trace.push(record);
                lambda *= cfg.lambda_up;
                if lambda > LAMBDA_MAX {
                    termination = Termination::ConvergedObj;
                    break;
                }
                continue;
            }
        };
        record.grad_norm = step.grad_norm;
        // the projected gradient alone vanishes whenever C is off its optimum
        // but B C^T is already B-stationary, e.g. at a random start
        if step.grad_norm <= cfg.tol_grad && step.full_grad_norm <= cfg.tol_grad {
            trace.push(record);
            termination = Termination::ConvergedGrad;
            break;
        }
        record.surrogate_objective = weighted_objective(&w, op, b, &step.candidate)?;
        let trial = true_objective(p, op, b, &step.candidate)?;
        let mut accepted = false;
        if trial.is_finite() && trial < objective {
            let balanced = rebalance(&step.candidate)?;
            let after = true_objective(p, op, b, &balanced)?;
            if after < objective {
                let rel = (objective - after) / objective.abs().max(f64::MIN_POSITIVE);
                stalled = if rel < cfg.tol_rel_obj { stalled + 1 } else { 0 };
                factors = balanced;
                objective = after;
                accepted = true;
            }
        }
        record.accepted = accepted;
        record.objective = objective;
        trace.push(record);
        if accepted {
            lambda = (lambda * cfg.lambda_down).max(LAMBDA_MIN);
            if stalled >= cfg.stall_steps {
                termination = Termination::ConvergedObj;
                break;
            }
        } else {
            lambda *= cfg.lambda_up;
            if lambda > LAMBDA_MAX {
                termination = Termination::ConvergedObj;
                break;
            }
        }
    }

    let x = factors.product();
    Ok(SolveReport {
        solver: "varpro",
        factors,
        x,
        initial_objective,
        final_objective: objective,
        iterations: trace.len(),
        termination,
        trace,
        non_monotone: false,
    })
}
