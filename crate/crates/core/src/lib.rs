//! Low-rank matrix recovery with concave singular value penalties.
//!
//! The central solver minimizes `R(X) + |A(X) - b|^2` over factorizations
//! `X = B C^T`, where `R(X) = sum_i f(sigma_i(X))` for a concave penalty `f`.

pub mod admm;
pub mod certificate;
pub mod datagen;
pub mod error;
pub mod factorization;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod operators;
pub mod penalty;
pub mod report;
pub mod varpro;

pub use admm::{admm_solve, AdmmConfig};
pub use certificate::{certify, CertStatus, Certificate};
pub use datagen::{InstanceSpec, Pattern, ProblemInstance};
pub use error::{Error, Result};
pub use harness::{ExperimentKind, ExperimentOutput, ExperimentSpec, SolverKind};
pub use factorization::{balanced_factorize, rebalance, reg_value, surrogate_value, sv_prox, FactorPair};
pub use operators::{MaskedOp, MeasurementOp, NrsfmOp, Observation, PoseOp};
pub use penalty::Penalty;
pub use report::{IterRecord, SolveReport, Termination};
pub use varpro::{solve, SolverConfig};
