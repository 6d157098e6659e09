//! Global optimality test for rank-deficient stationary points.
//!
//! For `f_mu` and an operator with RIP constant `delta` on rank `2k`, a
//! balanced local minimizer `X = B C^T` with `rank(X) < k` is globally optimal
//! when no singular value of `Z = (I - A*A) X + A*b` lies in
//! `[(1 - delta) sqrt(mu), sqrt(mu) / (1 - delta)]`.
//!
//! The RIP constant cannot be computed and is taken from the caller; the
//! default of 0 is reported as an assumption, not a measurement.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{dims, Error, Result};
use crate::factorization::{rebalance, reg_value, surrogate_value, FactorPair};
use crate::linalg::{numerical_rank, singular_values, RANK_TOL};
use crate::operators::{MeasurementOp, NormEstimate};
use crate::penalty::Penalty;

/// Slack applied to both interval endpoints, relative to `sqrt(mu)`.
const INTERVAL_SLACK: f64 = 1e-12;
/// Allowed gap between surrogate and regularizer after rebalancing.
const BALANCE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CertStatus {
    Certified,
    NotCertified,
}

/// Why a point was not certified.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Reason {
    /// `rank(X) >= k`; the bilinear problem may hide a better higher-rank point.
    RankPrecondition { rank: usize, k: usize },
    /// `sigma_i(Z)` lies in the closed forbidden interval.
    SingularValueInInterval { index: usize, value: f64 },
    /// The factors are not balanced after rebalancing (surrogate differs from `R`).
    SurrogateMismatch { surrogate: f64, regularizer: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    pub status: CertStatus,
    pub reasons: Vec<Reason>,
    pub sigma_z: Vec<f64>,
    /// Closed forbidden interval `[lo, hi]`.
    pub interval: [f64; 2],
    pub rank: usize,
    pub k: usize,
    pub delta: f64,
    pub mu: f64,
    /// `R(X) = mu * rank(X)` when every nonzero singular value of `X`
    /// exceeds `sqrt(mu)`, in which case the point also solves the rank problem.
    pub rank_objective: Option<f64>,
    pub op_norm: Option<NormEstimate>,
    pub notes: Vec<String>,
}

impl Certificate {
    pub fn is_certified(&self) -> bool {
        self.status == CertStatus::Certified
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }
}

/// `Z = X - A*(A(X)) + A*(b)`.
pub fn compute_z<O: MeasurementOp + ?Sized>(op: &O, b: &DVector<f64>, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    op.check_matrix(x)?;
    op.check_vector(b)?;
    Ok(x - op.adjoint(&op.residual(x, b)?)?)
}

/// Closed forbidden interval `[(1 - delta) sqrt(mu), sqrt(mu) / (1 - delta)]`.
pub fn forbidden_interval(mu: f64, delta: f64) -> [f64; 2] {
    let s = mu.sqrt();
    [(1.0 - delta) * s, s / (1.0 - delta)]
}

fn check_params(mu: f64, delta: f64) -> Result<()> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::Domain(format!("mu must be positive, got {mu}")));
    }
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::Domain(format!("delta must lie in [0, 1), got {delta}")));
    }
    Ok(())
}

/// Tests the rank precondition on `x` and the singular values of `z`.
pub fn check_optimality(z: &DMatrix<f64>, mu: f64, delta: f64, k: usize, x: &DMatrix<f64>) -> Result<Certificate> {
    check_params(mu, delta)?;
    if z.shape() != x.shape() {
        return Err(Error::DimensionMismatch {
            expected: dims(x.nrows(), x.ncols()),
            got: dims(z.nrows(), z.ncols()),
        });
    }
    let sigma_x = singular_values(x)?;
    let rank = numerical_rank(&sigma_x, RANK_TOL);
    let sigma_z = singular_values(z)?;
    let interval = forbidden_interval(mu, delta);
    let slack = INTERVAL_SLACK * mu.sqrt();

    let mut reasons = Vec::new();
    if rank >= k {
        reasons.push(Reason::RankPrecondition { rank, k });
    }
    for (index, &value) in sigma_z.iter().enumerate() {
        if value >= interval[0] - slack && value <= interval[1] + slack {
            reasons.push(Reason::SingularValueInInterval { index, value });
        }
    }
    let cutoff = RANK_TOL * sigma_x.first().copied().unwrap_or(0.0);
    let rank_objective = sigma_x
        .iter()
        .filter(|&&s| s > cutoff)
        .all(|&s| s > mu.sqrt())
        .then_some(mu * rank as f64);
    let mut notes = Vec::new();
    if delta == 0.0 {
        notes.push("delta = 0 is assumed, not computed; the interval is the single point sqrt(mu)".into());
    }
    Ok(Certificate {
        status: if reasons.is_empty() { CertStatus::Certified } else { CertStatus::NotCertified },
        reasons,
        sigma_z,
        interval,
        rank,
        k,
        delta,
        mu,
        rank_objective,
        op_norm: None,
        notes,
    })
}

/// Rebalances `factors`, forms `Z` and runs [`check_optimality`]. Only `f_mu`
/// is supported.
pub fn certify<O: MeasurementOp + ?Sized>(
    p: &Penalty,
    op: &O,
    b: &DVector<f64>,
    factors: &FactorPair,
    delta: f64,
) -> Result<Certificate> {
    let mu = match *p {
        Penalty::FMu { mu } => mu,
        _ => return Err(Error::Domain(format!("certificates are defined for fmu only, got {}", p.name()))),
    };
    let balanced = rebalance(factors)?;
    let x = balanced.product();
    let z = compute_z(op, b, &x)?;
    let mut cert = check_optimality(&z, mu, delta, balanced.k(), &x)?;

    let surrogate = surrogate_value(p, &balanced);
    let regularizer = reg_value(p, &x)?;
    if (surrogate - regularizer).abs() > BALANCE_TOL * regularizer.abs().max(1.0) {
        cert.reasons.push(Reason::SurrogateMismatch { surrogate, regularizer });
        cert.status = CertStatus::NotCertified;
    }
    let norm = op.op_norm_bound();
    if norm.norm > 1.0 + 1e-12 {
        cert.notes.push(format!(
            "operator norm estimate {:.6} exceeds 1; the RIP normalization (1 - delta) |X|^2 <= |A X|^2 <= (1 + delta) |X|^2 may not hold as stated",
            norm.norm
        ));
    }
    cert.op_norm = Some(norm);
    Ok(cert)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_low_rank, uniform_mask};
    use crate::factorization::balanced_factorize;
    use crate::operators::test_util::{random_matrix, random_vector};
    use crate::operators::{MaskedOp, PoseOp, Observation};

    #[test]
    fn z_examples() {
        let x0 = gen_low_rank(10, 12, 2, 3).unwrap();
        let op = MaskedOp::new(uniform_mask(10, 12, 0.3, 1, false).unwrap()).unwrap();
        let b = op.apply(&x0).unwrap();
        assert!((compute_z(&op, &b, &x0).unwrap() - &x0).norm() < 1e-14);

        let full = MaskedOp::full(4, 5);
        let b = random_vector(20, 2);
        let x = random_matrix(4, 5, 3);
        let want = full.adjoint(&b).unwrap();
        assert!((compute_z(&full, &b, &x).unwrap() - &want).norm() < 1e-14);
        assert_eq!(compute_z(&op, &op.apply(&x0).unwrap(), &DMatrix::zeros(10, 12)).unwrap(), op.adjoint(&op.apply(&x0).unwrap()).unwrap());
    }

    #[test]
    fn z_is_jointly_linear() {
        let obs: Vec<Observation> = (0..3)
            .flat_map(|i| (0..4).map(move |j| Observation { cam: i, point: j, u: 0.2 * i as f64, v: -0.1 * j as f64 }))
            .collect();
        let op = PoseOp::new(3, 4, 0.3, obs).unwrap();
        let (x1, x2) = (random_matrix(9, 4, 1), random_matrix(9, 4, 2));
        let (b1, b2) = (random_vector(op.len(), 3), random_vector(op.len(), 4));
        let (a, c) = (0.7, -1.9);
        let lhs = compute_z(&op, &(&b1 * a + &b2 * c), &(&x1 * a + &x2 * c)).unwrap();
        let rhs = compute_z(&op, &b1, &x1).unwrap() * a + compute_z(&op, &b2, &x2).unwrap() * c;
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn boundary_value_is_forbidden() {
        let z = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 2.0, 0.5]));
        let x = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 0.0, 0.0]));
        let c = check_optimality(&z, 4.0, 0.0, 2, &x).unwrap();
        assert_eq!(c.status, CertStatus::NotCertified);
        assert_eq!(c.reasons, vec![Reason::SingularValueInInterval { index: 1, value: 2.0 }]);
        assert_eq!(c.interval, [2.0, 2.0]);
        let z = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 2.0 + 1e-9, 0.5]));
        assert!(check_optimality(&z, 4.0, 0.0, 2, &x).unwrap().is_certified());
    }

    #[test]
    fn rank_precondition() {
        let x = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 2.5, 0.0]));
        let c = check_optimality(&x, 1.0, 0.0, 2, &x).unwrap();
        assert_eq!(c.reasons, vec![Reason::RankPrecondition { rank: 2, k: 2 }]);
        assert!(check_optimality(&x, 0.0, 0.0, 2, &x).is_err());
        assert!(check_optimality(&x, 1.0, 1.0, 2, &x).is_err());
    }

    #[test]
    fn noiseless_completion_certifies() {
        let x0 = gen_low_rank(12, 30, 3, 8).unwrap();
        let op = MaskedOp::new(uniform_mask(12, 30, 0.2, 2, true).unwrap()).unwrap();
        let b = op.apply(&x0).unwrap();
        let s = singular_values(&x0).unwrap();
        let mu = (0.5 * s[2]).powi(2);
        let f = balanced_factorize(&x0, 6).unwrap();
        let c = certify(&Penalty::FMu { mu }, &op, &b, &f, 0.1).unwrap();
        assert!(c.is_certified(), "{:?}", c.reasons);
        assert_eq!(c.rank, 3);
        assert_eq!(c.rank_objective, Some(3.0 * mu));
        for (a, b) in c.sigma_z.iter().zip(&s) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn stable_under_solver_tolerance() {
        let x0 = gen_low_rank(10, 20, 2, 4).unwrap();
        let op = MaskedOp::new(uniform_mask(10, 20, 0.25, 6, true).unwrap()).unwrap();
        let b = op.apply(&x0).unwrap();
        let pert = random_matrix(10, 20, 9);
        let x = &x0 + pert * (1e-6 / 20.0);
        let sz = singular_values(&compute_z(&op, &b, &x).unwrap()).unwrap();
        let s0 = singular_values(&x0).unwrap();
        for (a, b) in sz.iter().zip(&s0) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn requires_fmu_and_annotates_norm() {
        let op = MaskedOp::full(3, 3);
        let f = FactorPair::zeros(3, 3, 2);
        let b = DVector::zeros(9);
        assert!(certify(&Penalty::Nuclear { mu: 1.0 }, &op, &b, &f, 0.0).is_err());
        let c = certify(&Penalty::FMu { mu: 1.0 }, &op, &b, &f, 0.0).unwrap();
        assert!(c.is_certified());
        assert_eq!(c.notes.len(), 1);

        let obs = vec![Observation { cam: 0, point: 0, u: 3.0, v: 2.0 }];
        let pose = PoseOp::new(1, 1, 0.5, obs).unwrap();
        let c = certify(&Penalty::FMu { mu: 1.0 }, &pose, &pose.rhs(), &FactorPair::zeros(3, 1, 2), 0.0).unwrap();
        assert!(c.notes.iter().any(|n| n.contains("operator norm")));
        assert!(c.to_json().contains("\"status\""));
    }
}
