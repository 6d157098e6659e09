//! Experiment runner behind the `lowrank` CLI.
//!
//! An experiment expands into numbered runs. Run `i` uses the seed
//! `derive_seed(master_seed, i)` to initialize its solver; instances are drawn
//! from a separate stream keyed by their group. Runs execute in parallel but
//! results are ordered by run index, and every solver run is single-threaded,
//! so output is reproducible from the spec alone (timing columns excepted,
//! which are left empty when `timing` is off).

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admm::{admm_solve, AdmmConfig};
use crate::certificate::certify;
use crate::datagen::{
    derive_seed, gen_nrsfm_scene, gen_pose_scene, normalized_distance, InstanceSpec, Pattern, ProblemInstance,
};
use crate::error::{Error, Result};
use crate::factorization::sv_prox_spectrum;
use crate::linalg::{numerical_rank, singular_values, sum_sq, thin_svd};
use crate::operators::{MeasurementOp, PoseOp};
use crate::penalty::Penalty;
use crate::report::SolveReport;
use crate::varpro::{solve, SolverConfig};

/// First line of every CSV written by the harness.
pub const CSV_VERSION: &str = "# lowrank-harness csv v1";
/// Relative threshold for reported ranks.
pub const REPORT_RANK_TOL: f64 = 1e-6;
/// Singular values below this multiple of `max(|b|, 1)` count as zero.
pub const REPORT_ABS_TOL: f64 = 1e-9;
const INSTANCE_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Table1,
    Sweep,
    Bias,
    Pose,
    Nrsfm,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Table1 => "table1",
            ExperimentKind::Sweep => "sweep",
            ExperimentKind::Bias => "bias",
            ExperimentKind::Pose => "pose",
            ExperimentKind::Nrsfm => "nrsfm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Varpro,
    AdmmFmu,
    AdmmNuclear,
}

impl SolverKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolverKind::Varpro => "varpro",
            SolverKind::AdmmFmu => "admm_fmu",
            SolverKind::AdmmNuclear => "admm_nuclear",
        }
    }
}

/// Noise level and missing-data pattern of a block of completion runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub pattern: Pattern,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub m: usize,
    pub n: usize,
    pub rank: usize,
    pub k: usize,
    pub blocks: Vec<Block>,
    pub missing: Vec<f64>,
    /// Regularization weight for table1; `None` means `max(m, n)`.
    pub mu: Option<f64>,
    pub mu_grid: Vec<f64>,
    pub etas: Vec<f64>,
    /// Use affine-only residuals for pose runs.
    pub affine: bool,
    pub frames: usize,
    pub points: usize,
    pub basis: usize,
    pub reps: usize,
    /// Draw a new instance for every repetition instead of one per group.
    pub fresh_instances: bool,
    pub master_seed: u64,
    pub solvers: Vec<SolverKind>,
    pub timing: bool,
    /// Wall-clock budget for ADMM; `None` gives ADMM the VarPro run time
    /// when timing is on and `admm_max_iters` otherwise.
    pub budget_seconds: Option<f64>,
    pub max_iters: usize,
    pub admm_max_iters: usize,
    pub delta: f64,
    /// Worker threads; 0 uses all available cores.
    pub threads: usize,
}

impl ExperimentSpec {
    fn base(kind: ExperimentKind) -> Self {
        Self {
            kind,
            m: 32,
            n: 512,
            rank: 4,
            k: 8,
            blocks: vec![Block { pattern: Pattern::Uniform, sigma: 0.0 }],
            missing: vec![0.2],
            mu: None,
            mu_grid: Vec::new(),
            etas: Vec::new(),
            affine: false,
            frames: 0,
            points: 0,
            basis: 0,
            reps: 1,
            fresh_instances: false,
            master_seed: 0,
            solvers: vec![SolverKind::Varpro],
            timing: true,
            budget_seconds: None,
            max_iters: 500,
            admm_max_iters: 500,
            delta: 0.0,
            threads: 0,
        }
    }

    /// The three blocks of the synthetic missing-data table at 0..50% missing.
    pub fn table1() -> Self {
        Self {
            blocks: vec![
                Block { pattern: Pattern::Uniform, sigma: 0.0 },
                Block { pattern: Pattern::Tracking, sigma: 0.0 },
                Block { pattern: Pattern::Tracking, sigma: 0.1 },
            ],
            missing: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
            reps: 20,
            fresh_instances: true,
            solvers: vec![SolverKind::Varpro, SolverKind::AdmmFmu, SolverKind::AdmmNuclear],
            ..Self::base(ExperimentKind::Table1)
        }
    }

    pub fn sweep() -> Self {
        Self {
            mu_grid: vec![1e-8, 1e-2, 1.0, 10.0, 1e2, 1e3, 1e4, 1e5, 1e7],
            solvers: vec![SolverKind::Varpro, SolverKind::AdmmFmu],
            ..Self::base(ExperimentKind::Sweep)
        }
    }

    pub fn bias() -> Self {
        Self { m: 20, n: 30, ..Self::base(ExperimentKind::Bias) }
    }

    pub fn pose() -> Self {
        Self {
            k: 6,
            frames: 8,
            points: 30,
            etas: vec![0.1, 0.5, 0.9],
            mu_grid: vec![1e-6, 1e-4, 1e-2, 1.0, 1e2, 1e4],
            ..Self::base(ExperimentKind::Pose)
        }
    }

    pub fn nrsfm() -> Self {
        Self {
            k: 8,
            frames: 20,
            points: 25,
            basis: 2,
            mu_grid: vec![1e-6, 1e-4, 1e-2, 1.0, 1e2, 1e4],
            ..Self::base(ExperimentKind::Nrsfm)
        }
    }

    pub fn default_for(kind: ExperimentKind) -> Self {
        match kind {
            ExperimentKind::Table1 => Self::table1(),
            ExperimentKind::Sweep => Self::sweep(),
            ExperimentKind::Bias => Self::bias(),
            ExperimentKind::Pose => Self::pose(),
            ExperimentKind::Nrsfm => Self::nrsfm(),
        }
    }

    pub fn table1_mu(&self) -> f64 {
        self.mu.unwrap_or(self.m.max(self.n) as f64)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.reps == 0 {
            return bad("repetitions must be at least 1".into());
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        match self.kind {
            ExperimentKind::Table1 | ExperimentKind::Sweep => {
                if self.blocks.is_empty() || self.missing.is_empty() {
                    return bad("block and missing-fraction grids must be non-empty".into());
                }
                if self.solvers.is_empty() {
                    return bad("at least one solver is required".into());
                }
            }
            ExperimentKind::Bias => {
                if self.m.min(self.n) < 10 {
                    return bad("bias study needs min(m, n) >= 10".into());
                }
            }
            ExperimentKind::Pose => {
                if self.etas.is_empty() {
                    return bad("eta grid must be non-empty".into());
                }
            }
            ExperimentKind::Nrsfm => {}
        }
        if matches!(self.kind, ExperimentKind::Sweep | ExperimentKind::Pose | ExperimentKind::Nrsfm)
            && self.mu_grid.is_empty()
        {
            return bad("mu grid must be non-empty".into());
        }
        if self.mu_grid.iter().chain(self.mu.iter()).any(|&m| !(m > 0.0 && m.is_finite())) {
            return bad("regularization weights must be positive".into());
        }
        Ok(())
    }
}

/// Parameters of one run, fully determined by the spec and run index.
#[derive(Debug, Clone, PartialEq)]
pub struct RunPlan {
    pub index: usize,
    pub seed: u64,
    pub instance_seed: u64,
    pub block: Option<Block>,
    pub missing: Option<f64>,
    pub eta: Option<f64>,
    pub mu: f64,
}

/// One solver's outcome within a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub plan: RunPlan,
    pub operator: &'static str,
    pub solver: SolverKind,
    pub outcome: std::result::Result<RunStats, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunStats {
    pub distance: f64,
    pub final_rank: usize,
    pub datafit: f64,
    pub objective: f64,
    pub iterations: usize,
    pub termination: &'static str,
    pub certified: Option<bool>,
    pub reprojection: Option<f64>,
    pub realized_missing: Option<f64>,
    pub seconds: Option<f64>,
}

/// CSV cell with the harness number formatting.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Empty,
    Text(String),
    Int(u64),
    Float(f64),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Empty => String::new(),
            Cell::Text(s) => s.clone(),
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => format!("{v:.16e}"),
        }
    }
}

fn opt_f(v: Option<f64>) -> Cell {
    v.map_or(Cell::Empty, Cell::Float)
}

pub const RUN_COLUMNS: [&str; 21] = [
    "run_index",
    "seed",
    "instance_seed",
    "operator",
    "pattern",
    "sigma",
    "missing",
    "eta",
    "mu",
    "solver",
    "status",
    "distance",
    "final_rank",
    "datafit",
    "objective",
    "iterations",
    "termination",
    "certified",
    "reproj_error",
    "realized_missing",
    "seconds",
];

impl RunRow {
    pub fn cells(&self) -> Vec<Cell> {
        let p = &self.plan;
        let mut c = vec![
            Cell::Int(p.index as u64),
            Cell::Int(p.seed),
            Cell::Int(p.instance_seed),
            Cell::Text(self.operator.into()),
            p.block.map_or(Cell::Empty, |b| Cell::Text(b.pattern.to_string())),
            opt_f(p.block.map(|b| b.sigma)),
            opt_f(p.missing),
            opt_f(p.eta),
            Cell::Float(p.mu),
            Cell::Text(self.solver.as_str().into()),
        ];
        match &self.outcome {
            Ok(s) => c.extend([
                Cell::Text("ok".into()),
                Cell::Float(s.distance),
                Cell::Int(s.final_rank as u64),
                Cell::Float(s.datafit),
                Cell::Float(s.objective),
                Cell::Int(s.iterations as u64),
                Cell::Text(s.termination.into()),
                s.certified.map_or(Cell::Empty, |v| Cell::Text(v.to_string())),
                opt_f(s.reprojection),
                opt_f(s.realized_missing),
                opt_f(s.seconds),
            ]),
            Err(msg) => {
                c.push(Cell::Text(format!("failed: {}", msg.replace([',', '\n'], ";"))));
                c.extend(std::iter::repeat_n(Cell::Empty, 10));
            }
        }
        c
    }
}

/// A CSV table with the versioned header comment.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub kind: ExperimentKind,
    pub spec_json: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    fn new(spec: &ExperimentSpec, columns: &[&str]) -> Self {
        Self {
            kind: spec.kind,
            spec_json: serde_json::to_string(spec).expect("spec serializes"),
            columns: columns.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{CSV_VERSION} kind={}", self.kind.as_str()).unwrap();
        writeln!(out, "# spec: {}", self.spec_json).unwrap();
        writeln!(out, "{}", self.columns.join(",")).unwrap();
        for r in &self.rows {
            let line: Vec<String> = r.iter().map(Cell::render).collect();
            writeln!(out, "{}", line.join(",")).unwrap();
        }
        out
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

/// Result of an experiment: the primary table, per-run rows and soft warnings.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub table: Table,
    pub runs: Vec<RunRow>,
    pub warnings: Vec<String>,
}

impl ExperimentOutput {
    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| r.outcome.is_err()).count()
    }

    pub fn runs_table(&self, spec: &ExperimentSpec) -> Table {
        rows_table(spec, &self.runs)
    }
}

/// Per-run table for an arbitrary selection of rows.
pub fn rows_table(spec: &ExperimentSpec, rows: &[RunRow]) -> Table {
    let mut t = Table::new(spec, &RUN_COLUMNS);
    t.rows = rows.iter().map(RunRow::cells).collect();
    t
}

/// Expands a spec into its runs, in run-index order.
pub fn plan_runs(spec: &ExperimentSpec) -> Vec<RunPlan> {
    let inst_base = derive_seed(spec.master_seed, INSTANCE_STREAM);
    let mut plans = Vec::new();
    let mut push = |group: usize, rep: usize, block, missing, eta, mu| {
        let key = if spec.fresh_instances { group * spec.reps + rep } else { group };
        let index = plans.len();
        plans.push(RunPlan {
            index,
            seed: derive_seed(spec.master_seed, index as u64),
            instance_seed: derive_seed(inst_base, key as u64),
            block,
            missing,
            eta,
            mu,
        });
    };
    match spec.kind {
        ExperimentKind::Table1 | ExperimentKind::Sweep => {
            let grid = if spec.kind == ExperimentKind::Table1 { vec![spec.table1_mu()] } else { spec.mu_grid.clone() };
            let mut group = 0;
            for &block in &spec.blocks {
                for &missing in &spec.missing {
                    for rep in 0..spec.reps {
                        for &mu in &grid {
                            push(group, rep, Some(block), Some(missing), None, mu);
                        }
                    }
                    group += 1;
                }
            }
        }
        ExperimentKind::Pose => {
            for (group, &eta) in spec.etas.iter().enumerate() {
                for rep in 0..spec.reps {
                    for &mu in &spec.mu_grid {
                        push(group, rep, None, None, Some(eta), mu);
                    }
                }
            }
        }
        ExperimentKind::Nrsfm => {
            for rep in 0..spec.reps {
                for &mu in &spec.mu_grid {
                    push(0, rep, None, None, None, mu);
                }
            }
        }
        ExperimentKind::Bias => {}
    }
    plans
}

struct Problem {
    operator: &'static str,
    op: Box<dyn MeasurementOp>,
    b: DVector<f64>,
    truth: DMatrix<f64>,
    pose: Option<PoseOp>,
    realized_missing: Option<f64>,
}

fn build_problem(spec: &ExperimentSpec, plan: &RunPlan) -> Result<Problem> {
    match spec.kind {
        ExperimentKind::Table1 | ExperimentKind::Sweep => {
            let block = plan.block.expect("completion runs carry a block");
            let inst = ProblemInstance::generate(&InstanceSpec {
                m: spec.m,
                n: spec.n,
                rank: spec.rank,
                pattern: block.pattern,
                missing: plan.missing.unwrap_or(0.0),
                sigma: block.sigma,
                seed: plan.instance_seed,
            })?;
            let op = inst.op();
            let b = inst.rhs();
            Ok(Problem {
                operator: "masked",
                realized_missing: Some(inst.missing_fraction()),
                op: Box::new(op),
                b,
                truth: inst.m0,
                pose: None,
            })
        }
        ExperimentKind::Pose => {
            let eta = plan.eta.expect("pose runs carry eta");
            let scene = gen_pose_scene(spec.frames, spec.points, eta, plan.instance_seed)?;
            let op = if spec.affine {
                PoseOp::affine(spec.frames, spec.points, scene.op.observations().to_vec())?
            } else {
                scene.op
            };
            let b = op.rhs();
            Ok(Problem {
                operator: op.name(),
                op: Box::new(op.clone()),
                b,
                truth: scene.x_true,
                pose: Some(op),
                realized_missing: None,
            })
        }
        ExperimentKind::Nrsfm => {
            let scene = gen_nrsfm_scene(spec.frames, spec.points, spec.basis, plan.instance_seed)?;
            Ok(Problem {
                operator: "nrsfm",
                op: Box::new(scene.op),
                b: scene.b,
                truth: scene.x_sharp,
                pose: None,
                realized_missing: None,
            })
        }
        ExperimentKind::Bias => Err(Error::InvalidConfig("bias has no solver runs".into())),
    }
}

/// Numerical rank with an absolute floor tied to the data scale, so iterates
/// that only approach zero are reported as empty.
fn reported_rank(sigma: &[f64], bnorm: f64) -> usize {
    let floor = REPORT_ABS_TOL * bnorm.max(1.0);
    let kept: Vec<f64> = sigma.iter().map(|&s| if s > floor { s } else { 0.0 }).collect();
    numerical_rank(&kept, REPORT_RANK_TOL)
}

fn stats(
    spec: &ExperimentSpec,
    prob: &Problem,
    rep: &SolveReport,
    certified: Option<bool>,
    seconds: f64,
) -> Result<RunStats> {
    let sigma = singular_values(&rep.x)?;
    Ok(RunStats {
        distance: normalized_distance(&rep.x, &prob.truth)?,
        final_rank: reported_rank(&sigma, prob.b.norm()),
        datafit: sum_sq(&prob.op.residual(&rep.x, &prob.b)?),
        objective: rep.final_objective,
        iterations: rep.iterations,
        termination: rep.termination.as_str(),
        certified,
        reprojection: match &prob.pose {
            Some(p) => Some(p.mean_reprojection_error(&rep.x)?),
            None => None,
        },
        realized_missing: prob.realized_missing,
        seconds: spec.timing.then_some(seconds),
    })
}

/// Executes one planned run: every configured solver on the same problem.
pub fn execute_run(spec: &ExperimentSpec, plan: &RunPlan) -> Vec<RunRow> {
    let prob = match build_problem(spec, plan) {
        Ok(p) => p,
        Err(e) => {
            return spec
                .solvers
                .iter()
                .map(|&solver| RunRow { plan: plan.clone(), operator: "none", solver, outcome: Err(e.to_string()) })
                .collect()
        }
    };
    let mut varpro_time = None;
    let mut rows = Vec::new();
    for &solver in &spec.solvers {
        let start = Instant::now();
        let outcome = match solver {
            SolverKind::Varpro => {
                let p = Penalty::FMu { mu: plan.mu };
                let mut cfg = SolverConfig::new(p, spec.k).with_seed(plan.seed);
                cfg.max_iters = spec.max_iters;
                solve(&cfg, &*prob.op, &prob.b, None).and_then(|rep| {
                    let secs = start.elapsed().as_secs_f64();
                    varpro_time = Some(secs);
                    let cert = certify(&p, &*prob.op, &prob.b, &rep.factors, spec.delta)?;
                    stats(spec, &prob, &rep, Some(cert.is_certified()), secs)
                })
            }
            SolverKind::AdmmFmu | SolverKind::AdmmNuclear => {
                let p = if solver == SolverKind::AdmmFmu {
                    Penalty::FMu { mu: plan.mu }
                } else {
                    // soft threshold at the same level sqrt(mu) as the hard threshold
                    Penalty::Nuclear { mu: 2.0 * plan.mu.sqrt() }
                };
                let mut cfg = AdmmConfig::new(p);
                cfg.seed = plan.seed;
                cfg.max_iters = spec.admm_max_iters;
                cfg.time_budget = match (spec.budget_seconds, spec.timing, varpro_time) {
                    (Some(s), _, _) => Some(Duration::from_secs_f64(s)),
                    (None, true, Some(t)) => {
                        cfg.max_iters = usize::MAX;
                        Some(Duration::from_secs_f64(t))
                    }
                    _ => None,
                };
                admm_solve(&cfg, &*prob.op, &prob.b)
                    .and_then(|rep| stats(spec, &prob, &rep, None, start.elapsed().as_secs_f64()))
            }
        };
        rows.push(RunRow { plan: plan.clone(), operator: prob.operator, solver, outcome: outcome.map_err(|e| e.to_string()) });
    }
    rows
}

fn execute_all(spec: &ExperimentSpec, plans: &[RunPlan]) -> Result<Vec<RunRow>> {
    let work = || -> Vec<RunRow> { plans.par_iter().flat_map_iter(|p| execute_run(spec, p)).collect() };
    if spec.threads == 0 {
        return Ok(work());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    Ok(pool.install(work))
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

pub const TABLE1_COLUMNS: [&str; 11] = [
    "pattern",
    "sigma",
    "missing_pct",
    "solver",
    "mean_dist",
    "std_dist",
    "mean_iters",
    "mean_seconds",
    "runs",
    "failures",
    "master_seed",
];

/// Mean distance to ground truth per (pattern, noise, missing fraction, solver).
pub fn run_table1(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    check_kind(spec, ExperimentKind::Table1)?;
    let runs = execute_all(spec, &plan_runs(spec))?;
    let mut table = Table::new(spec, &TABLE1_COLUMNS);
    for block in &spec.blocks {
        for &missing in &spec.missing {
            for &solver in &spec.solvers {
                let cell: Vec<&RunRow> = runs
                    .iter()
                    .filter(|r| r.solver == solver && r.plan.block == Some(*block) && r.plan.missing == Some(missing))
                    .collect();
                let ok: Vec<&RunStats> = cell.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
                let (md, sd) = mean_std(&ok.iter().map(|s| s.distance).collect::<Vec<_>>());
                let (mi, _) = mean_std(&ok.iter().map(|s| s.iterations as f64).collect::<Vec<_>>());
                let secs: Vec<f64> = ok.iter().filter_map(|s| s.seconds).collect();
                table.rows.push(vec![
                    Cell::Text(block.pattern.to_string()),
                    Cell::Float(block.sigma),
                    Cell::Float(100.0 * missing),
                    Cell::Text(solver.as_str().into()),
                    Cell::Float(md),
                    Cell::Float(sd),
                    Cell::Float(mi),
                    if secs.is_empty() { Cell::Empty } else { Cell::Float(mean_std(&secs).0) },
                    Cell::Int(cell.len() as u64),
                    Cell::Int((cell.len() - ok.len()) as u64),
                    Cell::Int(spec.master_seed),
                ]);
            }
        }
    }
    Ok(ExperimentOutput { table, runs, warnings: Vec::new() })
}

/// Counts places where the final rank grows with `mu` on noiseless instances.
fn monotonicity_warnings(spec: &ExperimentSpec, runs: &[RunRow]) -> Vec<String> {
    let mut warnings = Vec::new();
    let per_seq = spec.mu_grid.len() * spec.solvers.len();
    if per_seq == 0 {
        return warnings;
    }
    let mut order: Vec<usize> = (0..spec.mu_grid.len()).collect();
    order.sort_by(|&a, &b| spec.mu_grid[a].total_cmp(&spec.mu_grid[b]));
    for chunk in runs.chunks(per_seq) {
        if chunk[0].plan.block.is_some_and(|b| b.sigma > 0.0) {
            continue;
        }
        for (si, &solver) in spec.solvers.iter().enumerate() {
            let ranks: Vec<Option<usize>> = order
                .iter()
                .map(|&g| chunk[g * spec.solvers.len() + si].outcome.as_ref().ok().map(|s| s.final_rank))
                .collect();
            let violations = ranks
                .windows(2)
                .filter(|w| matches!((w[0], w[1]), (Some(a), Some(b)) if b > a))
                .count();
            if violations > 0 {
                warnings.push(format!(
                    "{}: final rank increased with mu {violations} time(s) in the sequence starting at run {}",
                    solver.as_str(),
                    chunk[0].plan.index
                ));
            }
        }
    }
    warnings
}

fn sweep_like(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    let runs = execute_all(spec, &plan_runs(spec))?;
    let warnings = monotonicity_warnings(spec, &runs);
    let out = ExperimentOutput { table: Table::new(spec, &RUN_COLUMNS), runs, warnings };
    let table = out.runs_table(spec);
    Ok(ExperimentOutput { table, ..out })
}

fn check_kind(spec: &ExperimentSpec, kind: ExperimentKind) -> Result<()> {
    if spec.kind != kind {
        return Err(Error::InvalidConfig(format!("expected a {} spec, got {}", kind.as_str(), spec.kind.as_str())));
    }
    spec.validate()
}

/// Rank and data fit over a grid of regularization weights.
pub fn run_sweep(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    check_kind(spec, ExperimentKind::Sweep)?;
    sweep_like(spec)
}

/// pOSE scenes over a grid of `eta` and `mu`.
pub fn run_pose(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    check_kind(spec, ExperimentKind::Pose)?;
    sweep_like(spec)
}

/// Orthographic non-rigid scenes over a grid of `mu`.
pub fn run_nrsfm(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    check_kind(spec, ExperimentKind::Nrsfm)?;
    sweep_like(spec)
}

/// Singular values placed on both sides of the threshold `sqrt(mu) = 5`.
pub const BIAS_SPECTRUM: [f64; 10] = [10.0, 9.0, 8.0, 7.0, 6.0, 4.0, 3.0, 2.0, 1.0, 0.5];
pub const BIAS_MU: f64 = 25.0;

/// Smallest strength for which the prox of `kind` maps `y` to zero, found by
/// bisection and then nudged up by one part in 10^9.
pub fn minimal_strength(kind: &Penalty, y: f64) -> Result<f64> {
    let zeroes = |s: f64| kind.with_strength(s).scaled_prox(1.0, y).map(|v| v == 0.0);
    let mut hi = 1.0;
    while !zeroes(hi)? {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::Numerical(format!("no strength of {} suppresses {y}", kind.name())));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if zeroes(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let s = hi * (1.0 + 1e-9);
    if !zeroes(s)? {
        return Err(Error::Numerical(format!("bisection for {} did not settle", kind.name())));
    }
    Ok(s)
}

pub const BIAS_COLUMNS: [&str; 6] = ["regularizer", "strength", "index", "sigma_x0", "sigma_prox", "seed"];

/// The penalties of the bias comparison with their weights.
pub fn bias_penalties() -> Result<Vec<Penalty>> {
    let suppress = BIAS_SPECTRUM[5];
    let mut out = vec![Penalty::FMu { mu: BIAS_MU }];
    for shape in [
        Penalty::Nuclear { mu: 1.0 },
        Penalty::Log { lambda: 1.0, gamma: 1.0 },
        Penalty::Geman { lambda: 1.0, gamma: 2.0 },
    ] {
        out.push(shape.with_strength(minimal_strength(&shape, suppress)?));
    }
    Ok(out)
}

/// Singular values of `argmin_X R(X) + |X - X0|^2` for an `X0` whose spectrum
/// straddles the suppression threshold.
pub fn run_bias(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    check_kind(spec, ExperimentKind::Bias)?;
    let mut g = {
        use rand::SeedableRng;
        rand_chacha::ChaCha8Rng::seed_from_u64(spec.master_seed)
    };
    let gauss = |r: usize, c: usize, g: &mut rand_chacha::ChaCha8Rng| {
        use rand_distr::Distribution;
        DMatrix::from_fn(r, c, |_, _| -> f64 { rand_distr::StandardNormal.sample(g) })
    };
    let r = BIAS_SPECTRUM.len();
    let u = thin_svd(&gauss(spec.m, r, &mut g))?.u;
    let v = thin_svd(&gauss(spec.n, r, &mut g))?.u;
    let x0 = crate::linalg::SvdTriple { u, sigma: BIAS_SPECTRUM.to_vec(), v }.reconstruct();
    let mut table = Table::new(spec, &BIAS_COLUMNS);
    for p in bias_penalties()? {
        let (svd, shrunk) = sv_prox_spectrum(&p, 1.0, &x0)?;
        for i in 0..r {
            table.rows.push(vec![
                Cell::Text(p.name().into()),
                Cell::Float(p.strength()),
                Cell::Int(i as u64),
                Cell::Float(svd.sigma[i]),
                Cell::Float(shrunk[i]),
                Cell::Int(spec.master_seed),
            ]);
        }
    }
    Ok(ExperimentOutput { table, runs: Vec::new(), warnings: Vec::new() })
}

pub fn run(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    match spec.kind {
        ExperimentKind::Table1 => run_table1(spec),
        ExperimentKind::Sweep => run_sweep(spec),
        ExperimentKind::Bias => run_bias(spec),
        ExperimentKind::Pose => run_pose(spec),
        ExperimentKind::Nrsfm => run_nrsfm(spec),
    }
}

/// Reads the spec embedded in a harness CSV header.
pub fn spec_from_csv(text: &str) -> Result<ExperimentSpec> {
    let line = text
        .lines()
        .take_while(|l| l.starts_with('#'))
        .find_map(|l| l.strip_prefix("# spec: "))
        .ok_or_else(|| Error::Parse { key: "spec".into(), msg: "no `# spec:` header line".into() })?;
    serde_json::from_str(line).map_err(|e| Error::Parse { key: "spec".into(), msg: e.to_string() })
}

/// Re-executes run `index` of `spec`.
pub fn replay(spec: &ExperimentSpec, index: usize) -> Result<Vec<RunRow>> {
    spec.validate()?;
    let plans = plan_runs(spec);
    let plan = plans.get(index).ok_or_else(|| {
        Error::InvalidConfig(format!("run index {index} out of range (experiment has {} runs)", plans.len()))
    })?;
    Ok(execute_run(spec, plan))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_completion(kind: ExperimentKind) -> ExperimentSpec {
        ExperimentSpec {
            m: 12,
            n: 40,
            rank: 2,
            k: 4,
            missing: vec![0.0, 0.2],
            reps: 2,
            timing: false,
            solvers: vec![SolverKind::Varpro, SolverKind::AdmmFmu],
            admm_max_iters: 50,
            ..ExperimentSpec::default_for(kind)
        }
    }

    #[test]
    fn run_seeds_follow_master_seed() {
        let spec = small_completion(ExperimentKind::Table1);
        let plans = plan_runs(&spec);
        assert_eq!(plans.len(), 3 * 2 * 2);
        for p in &plans {
            assert_eq!(p.seed, derive_seed(spec.master_seed, p.index as u64));
        }
        let other = ExperimentSpec { master_seed: 1, ..spec.clone() };
        assert_ne!(plan_runs(&other)[0].seed, plans[0].seed);
    }

    #[test]
    fn table1_small_is_reproducible() {
        let spec = ExperimentSpec { blocks: vec![Block { pattern: Pattern::Uniform, sigma: 0.0 }], ..small_completion(ExperimentKind::Table1) };
        let a = run_table1(&spec).unwrap();
        let b = run_table1(&spec).unwrap();
        assert_eq!(a.table.to_csv(), b.table.to_csv());
        assert_eq!(a.runs_table(&spec).to_csv(), b.runs_table(&spec).to_csv());
        assert_eq!(a.table.rows.len(), 2 * 2);
        let csv = a.table.to_csv();
        assert!(csv.starts_with(CSV_VERSION));
        let d = a.table.column("mean_dist").unwrap();
        for row in a.table.rows.iter().filter(|r| r[3] == Cell::Text("varpro".into())) {
            match row[d] {
                Cell::Float(v) => assert!(v <= 1e-6, "{v}"),
                _ => panic!(),
            }
        }
    }

    #[test]
    fn replay_matches_recorded_row() {
        let spec = small_completion(ExperimentKind::Sweep);
        let spec = ExperimentSpec { mu_grid: vec![1.0, 1e6], reps: 1, missing: vec![0.2], ..spec };
        let out = run_sweep(&spec).unwrap();
        let csv = out.runs_table(&spec).to_csv();
        let parsed = spec_from_csv(&csv).unwrap();
        assert_eq!(parsed, spec);
        let rows = replay(&parsed, 1).unwrap();
        let recorded: Vec<&RunRow> = out.runs.iter().filter(|r| r.plan.index == 1).collect();
        assert_eq!(rows.len(), recorded.len());
        for (a, b) in rows.iter().zip(recorded) {
            assert_eq!(a.cells(), b.cells());
        }
        assert!(replay(&parsed, 99).is_err());
    }

    #[test]
    fn huge_mu_gives_empty_solution() {
        let spec = ExperimentSpec { mu_grid: vec![1e9], reps: 1, missing: vec![0.3], ..small_completion(ExperimentKind::Sweep) };
        let out = run_sweep(&spec).unwrap();
        let inst_seed = out.runs[0].plan.instance_seed;
        let inst = ProblemInstance::generate(&InstanceSpec {
            m: 12, n: 40, rank: 2, pattern: Pattern::Uniform, missing: 0.3, sigma: 0.0, seed: inst_seed,
        })
        .unwrap();
        let bnorm = sum_sq(&inst.rhs());
        for r in &out.runs {
            let s = r.outcome.as_ref().unwrap();
            assert_eq!(s.final_rank, 0);
            assert!((s.datafit - bnorm).abs() <= 1e-9 * bnorm);
        }
    }

    #[test]
    fn bias_rows() {
        let out = run_bias(&ExperimentSpec::bias()).unwrap();
        assert_eq!(out.table.rows.len(), 4 * 10);
        let pens = bias_penalties().unwrap();
        // nuclear: minimal weight is twice the largest suppressed value
        assert!((pens[1].strength() - 8.0).abs() < 1e-6);
        let y = BIAS_SPECTRUM[5];
        for p in &pens {
            assert_eq!(p.scaled_prox(1.0, y).unwrap(), 0.0);
        }
        for p in &pens[1..] {
            let weaker = p.with_strength(p.strength() * (1.0 - 1e-6));
            assert!(weaker.scaled_prox(1.0, y).unwrap() > 0.0, "{p}");
        }
    }

    #[test]
    fn validation() {
        let mut s = ExperimentSpec::sweep();
        s.reps = 0;
        assert!(run_sweep(&s).is_err());
        let s = ExperimentSpec { mu_grid: vec![], ..ExperimentSpec::sweep() };
        assert!(s.validate().is_err());
        assert!(run_sweep(&ExperimentSpec::table1()).is_err());
    }
}
