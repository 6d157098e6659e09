use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{MeasurementOp, SparseMap, Term};
use crate::error::{Error, Result};

/// An image measurement `(u, v)` of point `point` in camera `cam`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub cam: usize,
    pub point: usize,
    pub u: f64,
    pub v: f64,
}

/// Pseudo object space error on the stacked camera-point product.
///
/// The unknown is the `3F x n` matrix whose block `(i, j)` equals
/// `P_i x_j` for camera `P_i` (3x4) and homogeneous point `x_j`. Each
/// observation produces four residual rows, in this order:
///
/// ```text
/// sqrt(1-eta) * (X[3i,   j] - u * X[3i+2, j])
/// sqrt(1-eta) * (X[3i+1, j] - v * X[3i+2, j])
/// sqrt(eta)   * (X[3i,   j] - u)
/// sqrt(eta)   * (X[3i+1, j] - v)
/// ```
///
/// so that `|A(X) - b|^2 = (1-eta) * l_ose + eta * l_affine`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseOp {
    cams: usize,
    points: usize,
    eta: f64,
    obs: Vec<Observation>,
    affine_only: bool,
    map: SparseMap,
}

impl PoseOp {
    pub fn new(cams: usize, points: usize, eta: f64, obs: Vec<Observation>) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::Domain(format!("eta must lie in [0, 1], got {eta}")));
        }
        Self::build(cams, points, eta, obs, false)
    }

    /// Affine projection residuals only (two rows per observation).
    pub fn affine(cams: usize, points: usize, obs: Vec<Observation>) -> Result<Self> {
        Self::build(cams, points, 1.0, obs, true)
    }

    fn build(
        cams: usize,
        points: usize,
        eta: f64,
        obs: Vec<Observation>,
        affine_only: bool,
    ) -> Result<Self> {
        if cams == 0 || points == 0 {
            return Err(Error::Domain("pose operator needs at least one camera and point".into()));
        }
        for o in &obs {
            if o.cam >= cams || o.point >= points {
                return Err(Error::Domain(format!(
                    "observation ({}, {}) outside {cams} cameras x {points} points",
                    o.cam, o.point
                )));
            }
            if !(o.u.is_finite() && o.v.is_finite()) {
                return Err(Error::Domain("non-finite image measurement".into()));
            }
        }
        let so = (1.0 - eta).sqrt();
        let sa = eta.sqrt();
        let mut map = SparseMap::new(3 * cams, points);
        for o in &obs {
            let (r, j) = (3 * o.cam, o.point);
            if !affine_only {
                map.push_row([
                    Term { row: r, col: j, coeff: so },
                    Term { row: r + 2, col: j, coeff: -so * o.u },
                ]);
                map.push_row([
                    Term { row: r + 1, col: j, coeff: so },
                    Term { row: r + 2, col: j, coeff: -so * o.v },
                ]);
            }
            map.push_row([Term { row: r, col: j, coeff: sa }]);
            map.push_row([Term { row: r + 1, col: j, coeff: sa }]);
        }
        Ok(Self { cams, points, eta, obs, affine_only, map })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn cams(&self) -> usize {
        self.cams
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn observations(&self) -> &[Observation] {
        &self.obs
    }

    /// Right-hand side `b` matching the row layout.
    pub fn rhs(&self) -> DVector<f64> {
        let sa = self.eta.sqrt();
        let per = if self.affine_only { 2 } else { 4 };
        let mut b = DVector::zeros(per * self.obs.len());
        for (k, o) in self.obs.iter().enumerate() {
            b[per * k + per - 2] = sa * o.u;
            b[per * k + per - 1] = sa * o.v;
        }
        b
    }

    /// Unweighted object space error `l_ose`.
    pub fn ose_loss(&self, x: &DMatrix<f64>) -> Result<f64> {
        self.check_matrix(x)?;
        Ok(self
            .obs
            .iter()
            .map(|o| {
                let (r, j) = (3 * o.cam, o.point);
                let du = x[(r, j)] - o.u * x[(r + 2, j)];
                let dv = x[(r + 1, j)] - o.v * x[(r + 2, j)];
                du * du + dv * dv
            })
            .sum())
    }

    /// Unweighted affine projection error `l_affine`.
    pub fn affine_loss(&self, x: &DMatrix<f64>) -> Result<f64> {
        self.check_matrix(x)?;
        Ok(self
            .obs
            .iter()
            .map(|o| {
                let (r, j) = (3 * o.cam, o.point);
                let du = x[(r, j)] - o.u;
                let dv = x[(r + 1, j)] - o.v;
                du * du + dv * dv
            })
            .sum())
    }

    /// Mean reprojection distance using the perspective division
    /// `(X[3i] / X[3i+2], X[3i+1] / X[3i+2])`.
    pub fn mean_reprojection_error(&self, x: &DMatrix<f64>) -> Result<f64> {
        self.check_matrix(x)?;
        if self.obs.is_empty() {
            return Ok(0.0);
        }
        let total: f64 = self
            .obs
            .iter()
            .map(|o| {
                let (r, j) = (3 * o.cam, o.point);
                let z = x[(r + 2, j)];
                ((x[(r, j)] / z - o.u).powi(2) + (x[(r + 1, j)] / z - o.v).powi(2)).sqrt()
            })
            .sum();
        Ok(total / self.obs.len() as f64)
    }
}

impl MeasurementOp for PoseOp {
    fn sparse(&self) -> &SparseMap {
        &self.map
    }

    fn name(&self) -> &'static str {
        if self.affine_only {
            "affine"
        } else {
            "pose"
        }
    }
}
