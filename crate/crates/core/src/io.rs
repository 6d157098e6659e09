//! File formats: dense CSV matrices, pOSE observations, NRSfM cameras,
//! solver configuration files and saved problem instances.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, Matrix2x3};
use serde::{Deserialize, Serialize};

use crate::admm::AdmmConfig;
use crate::datagen::{InstanceMeta, InstanceSpec, ProblemInstance};
use crate::error::{Error, Result};
use crate::operators::Observation;
use crate::penalty::Penalty;
use crate::varpro::SolverConfig;

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Parses comma-separated rows of numbers; blank lines and `#` comments are skipped.
pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        if *cols.get_or_insert(rec.len()) != rec.len() {
            return Err(Error::Parse {
                key: format!("row {}", i + 1),
                msg: format!("expected {} fields, found {}", cols.unwrap(), rec.len()),
            });
        }
        for (j, field) in rec.iter().enumerate() {
            let v = f64::from_str(field).map_err(|_| Error::Parse {
                key: format!("row {}, column {}", i + 1, j + 1),
                msg: format!("`{field}` is not a number"),
            })?;
            data.push(v);
        }
        rows += 1;
    }
    Ok(DMatrix::from_row_slice(rows, cols.unwrap_or(0), &data))
}

/// Rows of the matrix as CSV. Values use the shortest representation that
/// parses back to the same `f64`.
pub fn format_matrix(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    parse_matrix(&fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?)
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    fs::write(path, format_matrix(m)).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

#[derive(Debug, Serialize, Deserialize)]
struct ObservationRow {
    cam_id: usize,
    point_id: usize,
    u: f64,
    v: f64,
}

/// Observations with header `cam_id,point_id,u,v`.
pub fn parse_observations(text: &str) -> Result<Vec<Observation>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let want = ["cam_id", "point_id", "u", "v"];
    if headers.iter().collect::<Vec<_>>() != want {
        return Err(Error::Parse {
            key: "header".into(),
            msg: format!("expected `{}`, found `{}`", want.join(","), headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    rdr.deserialize()
        .enumerate()
        .map(|(i, r)| {
            let r: ObservationRow = r.map_err(|e| Error::Parse { key: format!("observation {}", i + 1), msg: e.to_string() })?;
            Ok(Observation { cam: r.cam_id, point: r.point_id, u: r.u, v: r.v })
        })
        .collect()
}

pub fn format_observations(obs: &[Observation]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for o in obs {
        w.serialize(ObservationRow { cam_id: o.cam, point_id: o.point, u: o.u, v: o.v }).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Cameras stored as consecutive pairs of rows of a `2F x 3` matrix.
pub fn parse_cameras(text: &str) -> Result<Vec<Matrix2x3<f64>>> {
    let m = parse_matrix(text)?;
    if m.ncols() != 3 || m.nrows() % 2 != 0 {
        return Err(Error::Parse {
            key: "cameras".into(),
            msg: format!("expected 2F rows of 3 values, found {}x{}", m.nrows(), m.ncols()),
        });
    }
    Ok((0..m.nrows() / 2).map(|i| Matrix2x3::from_fn(|a, c| m[(2 * i + a, c)])).collect())
}

pub fn format_cameras(cams: &[Matrix2x3<f64>]) -> String {
    let m = DMatrix::from_fn(2 * cams.len(), 3, |r, c| cams[r / 2][(r % 2, c)]);
    format_matrix(&m)
}

/// Solver settings read from a configuration file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub solver: SolverConfig,
    pub admm: AdmmConfig,
}

impl RunConfig {
    pub fn new(penalty: Penalty, k: usize) -> Self {
        let admm_penalty = match penalty {
            Penalty::Nuclear { .. } => penalty,
            _ => Penalty::FMu { mu: penalty.strength() },
        };
        Self { solver: SolverConfig::new(penalty, k), admm: AdmmConfig::new(admm_penalty) }
    }
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Parse { key: key.into(), msg: format!("invalid value `{v}`") })
}

/// Applies `key = value` lines to `base`. Lines starting with `#` are
/// comments; keys prefixed with `admm_` configure the ADMM baseline.
pub fn parse_config(text: &str, base: RunConfig) -> Result<RunConfig> {
    let mut cfg = base;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            key: format!("line {}", lineno + 1),
            msg: "expected key = value".into(),
        })?;
        let (key, value) = (key.trim(), value.trim());
        let s = &mut cfg.solver;
        let a = &mut cfg.admm;
        match key {
            "penalty" => s.penalty = parse_value(key, value)?,
            "k" => s.k = parse_value(key, value)?,
            "lambda0" => s.lambda0 = parse_value(key, value)?,
            "lambda_up" => s.lambda_up = parse_value(key, value)?,
            "lambda_down" => s.lambda_down = parse_value(key, value)?,
            "max_iters" => s.max_iters = parse_value(key, value)?,
            "tol_rel_obj" => s.tol_rel_obj = parse_value(key, value)?,
            "stall_steps" => s.stall_steps = parse_value(key, value)?,
            "tol_grad" => s.tol_grad = parse_value(key, value)?,
            "seed" => s.seed = parse_value(key, value)?,
            "admm_penalty" => a.penalty = parse_value(key, value)?,
            "admm_rho" => a.rho = parse_value(key, value)?,
            "admm_max_iters" => a.max_iters = parse_value(key, value)?,
            "admm_tol_primal" => a.tol_primal = parse_value(key, value)?,
            "admm_tol_dual" => a.tol_dual = parse_value(key, value)?,
            "admm_seed" => a.seed = parse_value(key, value)?,
            _ => return Err(Error::Parse { key: key.into(), msg: "unknown configuration key".into() }),
        }
    }
    cfg.solver.validate()?;
    cfg.admm.validate()?;
    Ok(cfg)
}

/// Writes `M0.csv`, `M.csv`, `W.csv` and `meta.json` into `dir`.
pub fn save_instance(dir: &Path, inst: &ProblemInstance) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_matrix(&dir.join("M0.csv"), &inst.m0)?;
    write_matrix(&dir.join("M.csv"), &inst.m)?;
    write_matrix(&dir.join("W.csv"), &inst.w)?;
    let mut f = fs::File::create(dir.join("meta.json"))?;
    let meta = serde_json::to_string_pretty(&inst.meta()).expect("metadata serializes");
    f.write_all(meta.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn load_instance(dir: &Path) -> Result<ProblemInstance> {
    let m0 = read_matrix(&dir.join("M0.csv"))?;
    let m = read_matrix(&dir.join("M.csv"))?;
    let w = read_matrix(&dir.join("W.csv"))?;
    if m0.shape() != m.shape() || m.shape() != w.shape() {
        return Err(Error::DimensionMismatch {
            expected: format!("M0, M and W of equal shape {:?}", m0.shape()),
            got: format!("{:?} and {:?}", m.shape(), w.shape()),
        });
    }
    let text = fs::read_to_string(dir.join("meta.json"))?;
    let meta: InstanceMeta =
        serde_json::from_str(&text).map_err(|e| Error::Parse { key: "meta.json".into(), msg: e.to_string() })?;
    let spec = InstanceSpec {
        m: m0.nrows(),
        n: m0.ncols(),
        rank: meta.rank,
        pattern: meta.pattern,
        missing: meta.target_missing,
        sigma: meta.sigma,
        seed: meta.seed,
    };
    Ok(ProblemInstance { spec, m0, m, w })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::Pattern;
    use crate::operators::test_util::random_matrix;

    #[test]
    fn matrix_round_trip_is_exact() {
        let m = random_matrix(4, 7, 3) * 1e-3;
        assert_eq!(parse_matrix(&format_matrix(&m)).unwrap(), m);
        let parsed = parse_matrix("# header\n1, 2,3\n\n4,5,6\n").unwrap();
        assert_eq!(parsed, DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    }

    #[test]
    fn matrix_errors_name_position() {
        match parse_matrix("1,2\n3,x\n") {
            Err(Error::Parse { key, .. }) => assert_eq!(key, "row 2, column 2"),
            other => panic!("{other:?}"),
        }
        assert!(parse_matrix("1,2\n3\n").is_err());
    }

    #[test]
    fn observations_round_trip() {
        let obs = vec![
            Observation { cam: 0, point: 3, u: 0.25, v: -1.5 },
            Observation { cam: 2, point: 1, u: 1e-9, v: 3.0 },
        ];
        let text = format_observations(&obs).unwrap();
        assert!(text.starts_with("cam_id,point_id,u,v\n"));
        assert_eq!(parse_observations(&text).unwrap(), obs);
        assert!(parse_observations("cam,point,u,v\n0,0,1,1\n").is_err());
    }

    #[test]
    fn cameras_round_trip() {
        let cams = vec![Matrix2x3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0), Matrix2x3::new(0.0, 1.0, 0.0, 0.0, 0.0, 1.0)];
        assert_eq!(parse_cameras(&format_cameras(&cams)).unwrap(), cams);
        assert!(parse_cameras("1,0,0\n").is_err());
    }

    #[test]
    fn config_keys() {
        let text = "# solver\npenalty = fmu:mu=9\nk = 6\nlambda0 = 0.5 # inline\nadmm_rho = 2\nadmm_penalty = nuclear:mu=1\n";
        let cfg = parse_config(text, RunConfig::new(Penalty::FMu { mu: 1.0 }, 4)).unwrap();
        assert_eq!(cfg.solver.penalty, Penalty::FMu { mu: 9.0 });
        assert_eq!(cfg.solver.k, 6);
        assert_eq!(cfg.solver.lambda0, 0.5);
        assert_eq!(cfg.admm.rho, 2.0);
        assert_eq!(cfg.admm.penalty, Penalty::Nuclear { mu: 1.0 });
        let base = || RunConfig::new(Penalty::FMu { mu: 1.0 }, 4);
        assert!(matches!(parse_config("bogus = 1", base()), Err(Error::Parse { key, .. }) if key == "bogus"));
        assert!(matches!(parse_config("k = two", base()), Err(Error::Parse { key, .. }) if key == "k"));
        assert!(matches!(parse_config("lambda_up = 0.5", base()), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn instance_directory_round_trip() {
        let dir = std::env::temp_dir().join(format!("lowrank-io-{}", std::process::id()));
        let spec = InstanceSpec { m: 6, n: 9, rank: 2, pattern: Pattern::Tracking, missing: 0.2, sigma: 0.1, seed: 5 };
        let inst = ProblemInstance::generate(&spec).unwrap();
        save_instance(&dir, &inst).unwrap();
        let back = load_instance(&dir).unwrap();
        assert_eq!(back, inst);
        let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("meta.json")).unwrap()).unwrap();
        assert_eq!(meta["generator"], "chacha8-v1");
        fs::remove_dir_all(&dir).unwrap();
    }
}
