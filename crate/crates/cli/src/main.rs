//! `lowrank`: instance generation, single solves, certificates and the
//! experiment harness.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use lowrank_core::datagen::normalized_distance;
use lowrank_core::harness::{self, Block, ExperimentKind, ExperimentSpec};
use lowrank_core::io::{load_instance, parse_config, read_matrix, save_instance, write_matrix, RunConfig};
use lowrank_core::linalg::{singular_values, sum_sq};
use lowrank_core::varpro::random_init;
use lowrank_core::{
    admm_solve, balanced_factorize, certify, InstanceSpec, MeasurementOp, Pattern, Penalty, ProblemInstance,
    SolveReport,
};

#[derive(Parser)]
#[command(name = "lowrank", version, about = "Low-rank recovery with concave singular value penalties")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic completion instance directory.
    Gen(GenArgs),
    /// Run the VarPro solver on an instance directory.
    Solve(SolveArgs),
    /// Run the ADMM baseline on an instance directory.
    Admm(SolveArgs),
    /// Check the global optimality certificate for a solution.
    Certify(CertifyArgs),
    /// Distance-to-ground-truth table over missing-data levels.
    Table1(ExpArgs),
    /// Rank vs datafit sweep over the regularization weight.
    Sweep(ExpArgs),
    /// Singular values of the prox of a fixed spectrum per regularizer.
    Bias(ExpArgs),
    /// Rank vs datafit sweep on synthetic pOSE scenes.
    Pose(ExpArgs),
    /// Rank vs datafit sweep on synthetic NRSfM scenes.
    Nrsfm(ExpArgs),
    /// Re-execute a single run recorded in a harness CSV.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 32)]
    m: usize,
    #[arg(long, default_value_t = 512)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    rank: usize,
    #[arg(long, default_value = "uniform")]
    pattern: Pattern,
    #[arg(long, default_value_t = 0.0)]
    missing: f64,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SolveArgs {
    /// Instance directory written by `gen`.
    instance: PathBuf,
    /// Weight of `f_mu`; defaults to `max(m, n)`.
    #[arg(long)]
    mu: Option<f64>,
    /// Full penalty specification, e.g. `scad:lambda=1,gamma=3.7`.
    #[arg(long)]
    penalty: Option<Penalty>,
    #[arg(long, default_value_t = 8)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `key = value` solver settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    budget_seconds: Option<f64>,
    /// Directory for `report.json` and `X.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CertifyArgs {
    instance: PathBuf,
    /// Solution matrix CSV.
    #[arg(long)]
    solution: PathBuf,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
    /// Factor width; defaults to the rank of the solution plus one.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExpArgs {
    /// JSON experiment spec used instead of the built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Primary CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-run CSV (table1 only; other experiments write runs to `--out`).
    #[arg(long)]
    runs_out: Option<PathBuf>,
    /// Regularization weight(s), comma separated.
    #[arg(long, value_delimiter = ',')]
    mu: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    eta: Vec<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    pattern: Option<Pattern>,
    #[arg(long, value_delimiter = ',')]
    missing: Vec<f64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    budget_seconds: Option<f64>,
    /// Use affine-only residuals for pose scenes.
    #[arg(long)]
    affine: bool,
    /// Leave the seconds column empty so outputs are bit-identical.
    #[arg(long)]
    no_timing: bool,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct ReplayArgs {
    /// Harness CSV carrying the `# spec:` header.
    csv: PathBuf,
    #[arg(long)]
    run: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    // usage errors exit 1; 2 is reserved for recorded run failures
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.cmd) {
        Ok(failures) if failures > 0 => {
            eprintln!("{failures} run(s) failed");
            ExitCode::from(2)
        }
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// Returns the number of recorded per-run failures.
fn dispatch(cmd: Cmd) -> Result<usize> {
    match cmd {
        Cmd::Gen(a) => gen(a).map(|_| 0),
        Cmd::Solve(a) => solve(a, false).map(|_| 0),
        Cmd::Admm(a) => solve(a, true).map(|_| 0),
        Cmd::Certify(a) => run_certify(a).map(|_| 0),
        Cmd::Table1(a) => experiment(ExperimentKind::Table1, a),
        Cmd::Sweep(a) => experiment(ExperimentKind::Sweep, a),
        Cmd::Bias(a) => experiment(ExperimentKind::Bias, a),
        Cmd::Pose(a) => experiment(ExperimentKind::Pose, a),
        Cmd::Nrsfm(a) => experiment(ExperimentKind::Nrsfm, a),
        Cmd::Replay(a) => replay(a),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn gen(a: GenArgs) -> Result<()> {
    let spec = InstanceSpec {
        m: a.m,
        n: a.n,
        rank: a.rank,
        pattern: a.pattern,
        missing: a.missing,
        sigma: a.noise,
        seed: a.seed,
    };
    let inst = ProblemInstance::generate(&spec)?;
    save_instance(&a.out, &inst)?;
    eprintln!("wrote {} (missing {:.4})", a.out.display(), inst.missing_fraction());
    Ok(())
}

fn load(dir: &Path) -> Result<ProblemInstance> {
    load_instance(dir).with_context(|| format!("loading instance {}", dir.display()))
}

fn solve(a: SolveArgs, admm: bool) -> Result<()> {
    let inst = load(&a.instance)?;
    let (m, n) = (inst.m0.nrows(), inst.m0.ncols());
    let penalty = match a.penalty {
        Some(p) => p,
        None => Penalty::fmu(a.mu.unwrap_or(m.max(n) as f64))?,
    };
    let mut base = RunConfig::new(penalty, a.k);
    base.solver.seed = a.seed;
    base.admm.seed = a.seed;
    let mut cfg = match &a.config {
        Some(p) => parse_config(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?, base)?,
        None => base,
    };
    cfg.admm.time_budget = a.budget_seconds.map(Duration::from_secs_f64);

    let op = inst.op();
    let b = inst.rhs();
    let report: SolveReport = if admm {
        admm_solve(&cfg.admm, &op, &b)?
    } else {
        let init = random_init(m, n, cfg.solver.k, cfg.solver.seed);
        lowrank_core::solve(&cfg.solver, &op, &b, Some(init))?
    };

    let sigma = singular_values(&report.x)?;
    let rank = lowrank_core::linalg::numerical_rank(&sigma, harness::REPORT_RANK_TOL);
    println!("solver={}", report.solver);
    println!("termination={}", report.termination.as_str());
    println!("iterations={}", report.iterations);
    println!("objective={:e}", report.final_objective);
    println!("datafit={:e}", sum_sq(&op.residual(&report.x, &b)?));
    println!("rank={rank}");
    println!("distance={:e}", normalized_distance(&report.x, &inst.m0)?);
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), report.to_json())?;
        write_matrix(&dir.join("X.csv"), &report.x)?;
    }
    Ok(())
}

fn run_certify(a: CertifyArgs) -> Result<()> {
    let inst = load(&a.instance)?;
    let x = read_matrix(&a.solution).with_context(|| format!("reading {}", a.solution.display()))?;
    let mu = a.mu.unwrap_or(inst.m0.nrows().max(inst.m0.ncols()) as f64);
    let sigma = singular_values(&x)?;
    let rank = lowrank_core::linalg::numerical_rank(&sigma, harness::REPORT_RANK_TOL);
    let k = a.k.unwrap_or(rank + 1);
    let factors = balanced_factorize(&x, k)?;
    let cert = certify(&Penalty::fmu(mu)?, &inst.op(), &inst.rhs(), &factors, a.delta)?;
    emit(a.out.as_deref(), &(cert.to_json() + "\n"))?;
    eprintln!("{}", if cert.is_certified() { "certified" } else { "not certified" });
    Ok(())
}

fn build_spec(kind: ExperimentKind, a: &ExpArgs) -> Result<ExperimentSpec> {
    let mut spec = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let spec: ExperimentSpec = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            if spec.kind != kind {
                bail!("config describes a {} experiment, not {}", spec.kind.as_str(), kind.as_str());
            }
            spec
        }
        None => ExperimentSpec::default_for(kind),
    };
    if let Some(s) = a.seed {
        spec.master_seed = s;
    }
    if !a.mu.is_empty() {
        if kind == ExperimentKind::Table1 {
            if a.mu.len() != 1 {
                bail!("table1 takes a single --mu");
            }
            spec.mu = Some(a.mu[0]);
        } else {
            spec.mu_grid = a.mu.clone();
        }
    }
    if !a.eta.is_empty() {
        spec.etas = a.eta.clone();
    }
    if let Some(k) = a.k {
        spec.k = k;
    }
    match (a.pattern, a.noise) {
        (Some(pattern), sigma) => spec.blocks = vec![Block { pattern, sigma: sigma.unwrap_or(0.0) }],
        (None, Some(sigma)) => spec.blocks.iter_mut().for_each(|b| b.sigma = sigma),
        (None, None) => {}
    }
    if !a.missing.is_empty() {
        spec.missing = a.missing.clone();
    }
    if let Some(r) = a.reps {
        spec.reps = r;
    }
    if a.budget_seconds.is_some() {
        spec.budget_seconds = a.budget_seconds;
    }
    if a.affine {
        spec.affine = true;
    }
    if a.no_timing {
        spec.timing = false;
    }
    if let Some(t) = a.threads {
        spec.threads = t;
    }
    spec.validate()?;
    Ok(spec)
}

fn experiment(kind: ExperimentKind, a: ExpArgs) -> Result<usize> {
    let spec = build_spec(kind, &a)?;
    let out = harness::run(&spec)?;
    emit(a.out.as_deref(), &out.table.to_csv())?;
    if let Some(p) = &a.runs_out {
        fs::write(p, out.runs_table(&spec).to_csv()).with_context(|| format!("writing {}", p.display()))?;
    }
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    Ok(out.failures())
}

fn replay(a: ReplayArgs) -> Result<usize> {
    let text = fs::read_to_string(&a.csv).with_context(|| format!("reading {}", a.csv.display()))?;
    let spec = harness::spec_from_csv(&text)?;
    let rows = harness::replay(&spec, a.run)?;
    emit(a.out.as_deref(), &harness::rows_table(&spec, &rows).to_csv())?;
    Ok(rows.iter().filter(|r| r.outcome.is_err()).count())
}
