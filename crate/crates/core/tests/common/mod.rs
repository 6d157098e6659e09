//! Property checks shared by the proptest suite and the acceptance target.
//! Each check draws everything from `seed` and reports the first violation.

#![allow(dead_code)]

use lowrank_core::datagen::{gen_low_rank, gen_nrsfm_scene, gen_pose_scene, uniform_mask};
use lowrank_core::varpro::{data_gradient, data_term, random_init};
use lowrank_core::{rebalance, reg_value, solve, surrogate_value, FactorPair, MaskedOp, MeasurementOp, Penalty, SolverConfig};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const ADJOINT_TOL: f64 = 1e-10;
pub const GRADIENT_TOL: f64 = 1e-5;
pub const SURROGATE_TOL: f64 = 1e-9;
pub const PROX_TOL: f64 = 1e-4;

pub type Check = Result<(), String>;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(m: usize, n: usize, g: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(m, n, |_, _| g.sample(StandardNormal))
}

fn normal_vec(n: usize, g: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| g.sample(StandardNormal))
}

/// One penalty of every family with parameters drawn from `g`.
pub fn penalties(g: &mut ChaCha8Rng) -> Vec<Penalty> {
    let s = |g: &mut ChaCha8Rng, lo: f64, hi: f64| g.random_range(lo..hi);
    vec![
        Penalty::FMu { mu: s(g, 0.1, 4.0) },
        Penalty::Nuclear { mu: s(g, 0.1, 4.0) },
        Penalty::Scad { lambda: s(g, 0.2, 2.0), gamma: s(g, 2.2, 5.0) },
        Penalty::Log { lambda: s(g, 0.2, 2.0), gamma: s(g, 0.5, 3.0) },
        Penalty::Mcp { lambda: s(g, 0.2, 2.0), gamma: s(g, 1.1, 4.0) },
        Penalty::Etp { lambda: s(g, 0.2, 2.0), gamma: s(g, 0.5, 3.0) },
        Penalty::Geman { lambda: s(g, 0.2, 2.0), gamma: s(g, 0.5, 3.0) },
    ]
}

fn adjoint_gap<O: MeasurementOp + ?Sized>(op: &O, g: &mut ChaCha8Rng) -> Check {
    let x = normal(op.rows(), op.cols(), g);
    let y = normal_vec(op.len(), g);
    let lhs = op.apply(&x).map_err(|e| e.to_string())?.dot(&y);
    let rhs = x.dot(&op.adjoint(&y).map_err(|e| e.to_string())?);
    let scale = lhs.abs().max(rhs.abs()).max(1.0);
    if (lhs - rhs).abs() > ADJOINT_TOL * scale {
        return Err(format!("{}: <Ax, y> = {lhs} but <x, A*y> = {rhs}", op.name()));
    }
    Ok(())
}

/// `<A X, y> = <X, A* y>` for masked, pOSE and NRSfM operators.
pub fn adjoint_identity(seed: u64) -> Check {
    let mut g = rng(seed);
    let (m, n) = (g.random_range(1..12), g.random_range(1..12));
    let frac = g.random_range(0.0..0.9);
    let mask = uniform_mask(m, n, frac, seed, false).map_err(|e| e.to_string())?;
    adjoint_gap(&MaskedOp::new(mask).map_err(|e| e.to_string())?, &mut g)?;

    let eta = g.random_range(0.0..=1.0);
    let scene = gen_pose_scene(g.random_range(2..6), g.random_range(8..15), eta, seed).map_err(|e| e.to_string())?;
    adjoint_gap(&scene.op, &mut g)?;

    let scene = gen_nrsfm_scene(g.random_range(1..6), g.random_range(1..8), 1, seed).map_err(|e| e.to_string())?;
    adjoint_gap(&scene.op, &mut g)
}

/// Analytic gradient of `|A(B C^T) - b|^2` against central differences.
pub fn gradient_matches_fd(seed: u64) -> Check {
    let mut g = rng(seed);
    let (m, n, k) = (g.random_range(2..7), g.random_range(2..7), g.random_range(1..4));
    let op = MaskedOp::new(uniform_mask(m, n, 0.3, seed, false).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let b = normal_vec(op.len(), &mut g);
    let f = FactorPair::new(normal(m, k, &mut g), normal(n, k, &mut g)).map_err(|e| e.to_string())?;
    let (gb, gc) = data_gradient(&op, &b, &f).map_err(|e| e.to_string())?;
    let h = 1e-6;
    let val = |f: &FactorPair| data_term(&op, &b, f).unwrap();
    let mut worst: f64 = 0.0;
    for which in 0..2 {
        let base = if which == 0 { f.b().clone() } else { f.c().clone() };
        let grad = if which == 0 { &gb } else { &gc };
        for i in 0..base.len() {
            let bump = |d: f64| {
                let mut v = base.clone();
                v[i] += d;
                if which == 0 {
                    FactorPair::new(v, f.c().clone()).unwrap()
                } else {
                    FactorPair::new(f.b().clone(), v).unwrap()
                }
            };
            let fd = (val(&bump(h)) - val(&bump(-h))) / (2.0 * h);
            worst = worst.max((fd - grad[i]).abs() / grad[i].abs().max(1.0));
        }
    }
    if worst > GRADIENT_TOL {
        return Err(format!("gradient differs from finite differences by {worst:e}"));
    }
    Ok(())
}

/// `R~(B, C) >= R(B C^T)`, with equality after rebalancing.
pub fn surrogate_dominance(seed: u64) -> Check {
    let mut g = rng(seed);
    let (m, n, k) = (g.random_range(1..8), g.random_range(1..8), g.random_range(1..5));
    let f = FactorPair::new(normal(m, k, &mut g), normal(n, k, &mut g)).map_err(|e| e.to_string())?;
    let balanced = rebalance(&f).map_err(|e| e.to_string())?;
    for p in penalties(&mut g) {
        let r = reg_value(&p, &f.product()).map_err(|e| e.to_string())?;
        let s = surrogate_value(&p, &f);
        let scale = r.abs().max(1.0);
        if s < r - SURROGATE_TOL * scale {
            return Err(format!("{p}: surrogate {s} below regularizer {r}"));
        }
        let sb = surrogate_value(&p, &balanced);
        if (sb - r).abs() > SURROGATE_TOL * scale {
            return Err(format!("{p}: balanced surrogate {sb} differs from regularizer {r}"));
        }
    }
    Ok(())
}

/// Accepted VarPro iterates never increase the objective.
pub fn monotone_descent(seed: u64) -> Check {
    let mut g = rng(seed);
    let (m, n) = (g.random_range(6..14), g.random_range(8..20));
    let r = g.random_range(1..4);
    let m0 = gen_low_rank(m, n, r, seed).map_err(|e| e.to_string())?;
    let op = MaskedOp::new(uniform_mask(m, n, 0.3, seed, false).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let b = op.apply(&m0).map_err(|e| e.to_string())? + normal_vec(op.len(), &mut g) * 0.05;
    let p = penalties(&mut g)[g.random_range(0..7)];
    let mut cfg = SolverConfig::new(p, r + 2).with_seed(seed);
    cfg.max_iters = 60;
    let rep = solve(&cfg, &op, &b, None).map_err(|e| e.to_string())?;
    let mut last = rep.initial_objective;
    for rec in &rep.trace {
        if rec.accepted {
            if rec.objective > last {
                return Err(format!("{p}: accepted objective rose from {last} to {} at {}", rec.objective, rec.iter));
            }
            last = rec.objective;
        }
    }
    Ok(())
}

/// Scalar prox against a grid search on `t f(x) + (x - y)^2`.
pub fn prox_matches_brute_force(seed: u64) -> Check {
    let mut g = rng(seed);
    let y = g.random_range(0.0..6.0);
    let t = g.random_range(0.2..3.0);
    for p in penalties(&mut g) {
        let got = p.scaled_prox(t, y).map_err(|e| e.to_string())?;
        let obj = |x: f64| t * p.eval(x).unwrap() + (x - y).powi(2);
        let best = (0..=80_000).map(|i| i as f64 * 1e-4).fold(0.0, |a: f64, x| if obj(x) < obj(a) { x } else { a });
        // ties between two minimizers are resolved by the objective
        if (got - best).abs() > PROX_TOL && obj(got) - obj(best) > 1e-8 {
            return Err(format!("{p} t={t} y={y}: prox {got}, grid minimizer {best}"));
        }
    }
    Ok(())
}

/// Two solves with the same seed produce bit-identical reports.
pub fn deterministic(seed: u64) -> Check {
    let mut g = rng(seed);
    let (m, n) = (g.random_range(5..10), g.random_range(5..15));
    let m0 = gen_low_rank(m, n, 2, seed).map_err(|e| e.to_string())?;
    let op = MaskedOp::new(uniform_mask(m, n, 0.2, seed, false).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let b = op.apply(&m0).map_err(|e| e.to_string())?;
    let cfg = SolverConfig::new(Penalty::FMu { mu: 0.5 }, 4).with_seed(seed);
    let init = random_init(m, n, 4, seed);
    let a = solve(&cfg, &op, &b, Some(init.clone())).map_err(|e| e.to_string())?;
    let c = solve(&cfg, &op, &b, Some(init)).map_err(|e| e.to_string())?;
    let bits = |x: &DMatrix<f64>| x.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    if bits(&a.x) != bits(&c.x) {
        return Err("repeated solve gives a different iterate".into());
    }
    if a.to_json() != c.to_json() {
        return Err(format!("repeated solve gives a different report:\n{}\n{}", a.to_json(), c.to_json()));
    }
    Ok(())
}

/// Named checks for the acceptance summary.
pub const PROPERTIES: [(&str, fn(u64) -> Check); 6] = [
    ("adjoint identity", adjoint_identity),
    ("gradient vs finite differences", gradient_matches_fd),
    ("surrogate dominance and balanced equality", surrogate_dominance),
    ("monotone descent", monotone_descent),
    ("scalar prox vs brute force", prox_matches_brute_force),
    ("determinism", deterministic),
];
