//! Fixtures shared by the solver benchmarks in `benches/solvers.rs`.

use lowrank_core::datagen::{gen_pose_scene, InstanceSpec, Pattern, PoseScene, ProblemInstance};

/// A completion instance at the `table1` experiment size (32 x 512, rank 4).
pub fn completion(pattern: Pattern, missing: f64, seed: u64) -> ProblemInstance {
    ProblemInstance::generate(&InstanceSpec::table1(pattern, missing, 0.0, seed)).expect("instance")
}

/// A small completion instance for per-iteration timings.
pub fn small_completion(seed: u64) -> ProblemInstance {
    let spec = InstanceSpec { m: 16, n: 64, rank: 3, pattern: Pattern::Uniform, missing: 0.3, sigma: 0.0, seed };
    ProblemInstance::generate(&spec).expect("instance")
}

pub fn pose(seed: u64) -> PoseScene {
    gen_pose_scene(8, 40, 0.5, seed).expect("scene")
}
