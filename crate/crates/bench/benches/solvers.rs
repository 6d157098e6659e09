use criterion::{criterion_group, criterion_main, Criterion};
use lowrank_bench::{completion, pose, small_completion};
use lowrank_core::datagen::Pattern;
use lowrank_core::varpro::{random_init, rw2_step, true_objective, SolverState};
use lowrank_core::{admm_solve, solve, sv_prox, AdmmConfig, Penalty, SolverConfig};

fn prox(c: &mut Criterion) {
    let inst = completion(Pattern::Uniform, 0.0, 1);
    let p = Penalty::FMu { mu: 512.0 };
    c.bench_function("sv_prox 32x512", |b| b.iter(|| sv_prox(&p, &inst.m).unwrap()));
}

fn rw2(c: &mut Criterion) {
    let inst = completion(Pattern::Uniform, 0.3, 2);
    let (op, rhs) = (inst.op(), inst.rhs());
    let p = Penalty::FMu { mu: 512.0 };
    let factors = random_init(32, 512, 8, 0);
    let objective = true_objective(&p, &op, &rhs, &factors).unwrap();
    let state = SolverState { factors, lambda: 1e-2, iter: 0, objective };
    c.bench_function("rw2_step 32x512 k=8", |b| b.iter(|| rw2_step(&p, &state, &op, &rhs).unwrap()));
}

fn solvers(c: &mut Criterion) {
    let mut g = c.benchmark_group("solve");
    g.sample_size(10);
    let inst = small_completion(3);
    let (op, rhs) = (inst.op(), inst.rhs());
    let cfg = SolverConfig::new(Penalty::FMu { mu: 1.0 }, 6);
    g.bench_function("varpro 16x64", |b| b.iter(|| solve(&cfg, &op, &rhs, None).unwrap()));
    let mut admm = AdmmConfig::new(Penalty::FMu { mu: 1.0 });
    admm.max_iters = 200;
    g.bench_function("admm 16x64 200 iters", |b| b.iter(|| admm_solve(&admm, &op, &rhs).unwrap()));

    let scene = pose(4);
    let cfg = SolverConfig::new(Penalty::FMu { mu: 1e-4 }, 6);
    g.bench_function("varpro pose 8x40", |b| b.iter(|| solve(&cfg, &scene.op, &scene.b, None).unwrap()));
    g.finish();
}

criterion_group!(benches, prox, rw2, solvers);
criterion_main!(benches);
