use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lowrank_core::harness::{ExperimentKind, ExperimentSpec, SolverKind};
use lowrank_core::Pattern;

fn lowrank(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lowrank")).args(args).current_dir(dir).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn data_rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

fn write_spec(dir: &Path, name: &str, spec: &ExperimentSpec) -> String {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string(spec).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

fn small_sweep() -> ExperimentSpec {
    ExperimentSpec {
        m: 12,
        n: 40,
        rank: 2,
        k: 4,
        missing: vec![0.2],
        mu_grid: vec![1e-2, 1.0, 1e4],
        reps: 2,
        admm_max_iters: 100,
        ..ExperimentSpec::sweep()
    }
}

#[test]
fn gen_solve_certify() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let o = lowrank(&["gen", "--out", "inst", "--m", "12", "--n", "40", "--rank", "2", "--missing", "0.2", "--seed", "3"], d);
    assert!(o.status.success());
    for f in ["M0.csv", "M.csv", "W.csv", "meta.json"] {
        assert!(d.join("inst").join(f).exists(), "{f}");
    }

    let o = lowrank(&["solve", "inst", "--mu", "1", "--k", "4", "--out", "sol"], d);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("rank=2"), "{out}");
    let dist: f64 = out.lines().find_map(|l| l.strip_prefix("distance=")).unwrap().parse().unwrap();
    assert!(dist < 1e-6);
    assert!(d.join("sol/report.json").exists());

    let o = lowrank(&["certify", "inst", "--solution", "sol/X.csv", "--mu", "1"], d);
    assert!(o.status.success());
    let cert: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(cert["status"], "certified");

    let o = lowrank(&["admm", "inst", "--mu", "1", "--budget-seconds", "5"], d);
    assert!(o.status.success());
    assert!(stdout(&o).contains("solver=admm"));
}

#[test]
fn config_file_is_applied() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert!(lowrank(&["gen", "--out", "inst", "--m", "10", "--n", "20", "--rank", "2", "--seed", "1"], d).status.success());
    fs::write(d.join("run.cfg"), "# one iteration only\nmax_iters = 1\n").unwrap();
    let o = lowrank(&["solve", "inst", "--mu", "1", "--k", "4", "--config", "run.cfg"], d);
    assert!(o.status.success());
    assert!(stdout(&o).contains("iterations=1"));

    fs::write(d.join("bad.cfg"), "nonsense = 3\n").unwrap();
    let o = lowrank(&["solve", "inst", "--config", "bad.cfg"], d);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nonsense"));
}

#[test]
fn fatal_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(lowrank(&["solve", "missing_dir"], d).status.code(), Some(1));
    assert_eq!(lowrank(&["gen", "--out", "x", "--pattern", "diagonal"], d).status.code(), Some(1));
    assert_eq!(lowrank(&["sweep", "--reps", "0"], d).status.code(), Some(1));
    assert_eq!(lowrank(&["frobnicate"], d).status.code(), Some(1));
    assert_eq!(lowrank(&["--help"], d).status.code(), Some(0));
}

#[test]
fn run_failures_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    // 8 frames leave at most 5/8 of a tracking mask missing
    let spec = ExperimentSpec {
        m: 8,
        n: 30,
        rank: 2,
        k: 4,
        blocks: vec![lowrank_core::harness::Block { pattern: Pattern::Tracking, sigma: 0.0 }],
        missing: vec![0.0, 0.7],
        reps: 1,
        solvers: vec![SolverKind::Varpro],
        ..ExperimentSpec::table1()
    };
    let cfg = write_spec(d, "spec.json", &spec);
    let o = lowrank(&["table1", "--config", &cfg, "--runs-out", "runs.csv", "--no-timing"], d);
    assert_eq!(o.status.code(), Some(2));
    let runs = fs::read_to_string(d.join("runs.csv")).unwrap();
    let rows = data_rows(&runs);
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][10], "ok");
    assert!(rows[1][10].starts_with("failed"));
}

#[test]
fn sweep_is_bit_identical_and_replayable() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = write_spec(d, "spec.json", &small_sweep());
    for out in ["a.csv", "b.csv"] {
        let o = lowrank(&["sweep", "--config", &cfg, "--no-timing", "--seed", "11", "--out", out], d);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = fs::read(d.join("a.csv")).unwrap();
    assert_eq!(a, fs::read(d.join("b.csv")).unwrap());

    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("# lowrank-harness csv v1 kind=sweep\n"));
    let rows = data_rows(&text);
    assert_eq!(rows.len(), 3 * 2 * 2);

    let o = lowrank(&["replay", "a.csv", "--run", "3"], d);
    assert!(o.status.success());
    let replayed = data_rows(&stdout(&o));
    let recorded: Vec<_> = rows.iter().filter(|r| r[0] == "3").cloned().collect();
    assert_eq!(replayed, recorded);

    assert_eq!(lowrank(&["replay", "a.csv", "--run", "99"], d).status.code(), Some(1));
}

#[test]
fn flags_override_the_spec() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cfg = write_spec(d, "spec.json", &small_sweep());
    let o = lowrank(
        &["sweep", "--config", &cfg, "--no-timing", "--mu", "5", "--k", "3", "--pattern", "tracking", "--missing", "0.1", "--reps", "1"],
        d,
    );
    assert!(o.status.success());
    let text = stdout(&o);
    let spec = lowrank_core::harness::spec_from_csv(&text).unwrap();
    assert_eq!(spec.mu_grid, vec![5.0]);
    assert_eq!(spec.k, 3);
    assert_eq!(spec.missing, vec![0.1]);
    assert_eq!(spec.blocks[0].pattern, Pattern::Tracking);
    assert_eq!(data_rows(&text).len(), 2);

    let o = lowrank(&["pose", "--config", &cfg], d);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn pose_eta_one_matches_affine() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let spec = ExperimentSpec { mu_grid: vec![1e-4, 1.0], frames: 5, points: 12, ..ExperimentSpec::pose() };
    assert_eq!(spec.kind, ExperimentKind::Pose);
    let cfg = write_spec(d, "spec.json", &spec);
    let pose = lowrank(&["pose", "--config", &cfg, "--eta", "1", "--no-timing"], d);
    let affine = lowrank(&["pose", "--config", &cfg, "--eta", "1", "--affine", "--no-timing"], d);
    assert!(pose.status.success() && affine.status.success());
    let (p, a) = (data_rows(&stdout(&pose)), data_rows(&stdout(&affine)));
    assert_eq!(p.len(), 2);
    assert_eq!(p.len(), a.len());
    for (rp, ra) in p.iter().zip(&a) {
        assert_eq!(rp[3], "pose");
        assert_eq!(ra[3], "affine");
        assert_eq!(rp[..3], ra[..3]);
        assert_eq!(rp[4..], ra[4..]);
    }
}

#[test]
fn bias_table() {
    let tmp = tempfile::tempdir().unwrap();
    let o = lowrank(&["bias"], tmp.path());
    assert!(o.status.success());
    let rows = data_rows(&stdout(&o));
    assert_eq!(rows.len(), 40);
    let fmu: Vec<_> = rows.iter().filter(|r| r[0] == "fmu").collect();
    for r in &fmu[..5] {
        assert_eq!(r[3], r[4]);
    }
    for r in &fmu[5..] {
        assert_eq!(r[4].parse::<f64>().unwrap(), 0.0);
    }
}
