//! Linear measurement maps `A: R^{m x n} -> R^p` and their adjoints.

mod masked;
mod nrsfm;
mod pose;
mod sparse;

pub use masked::MaskedOp;
pub use nrsfm::{sharp_to_stacked, stacked_to_sharp, NrsfmOp};
pub use pose::{Observation, PoseOp};
pub use sparse::{ColumnGroup, EntryGroup, SparseMap, Term};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{dims, Error, Result};

/// Iterations of the power method in [`MeasurementOp::op_norm_bound`].
pub const NORM_POWER_ITERS: usize = 50;

/// Power-iteration estimate of the operator norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormEstimate {
    pub norm: f64,
    /// `|A*A v - lambda v|` at the final iterate.
    pub residual: f64,
}

/// A linear measurement operator with adjoint.
///
/// Implementors only provide their [`SparseMap`]; everything else has a
/// default implementation on top of it.
pub trait MeasurementOp: Send + Sync {
    fn sparse(&self) -> &SparseMap;

    fn name(&self) -> &'static str;

    fn rows(&self) -> usize {
        self.sparse().shape().0
    }

    fn cols(&self) -> usize {
        self.sparse().shape().1
    }

    /// Output dimension `p`.
    fn len(&self) -> usize {
        self.sparse().len()
    }

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check_matrix(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.shape() != (self.rows(), self.cols()) {
            return Err(Error::DimensionMismatch {
                expected: dims(self.rows(), self.cols()),
                got: dims(x.nrows(), x.ncols()),
            });
        }
        Ok(())
    }

    fn check_vector(&self, y: &DVector<f64>) -> Result<()> {
        if y.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("vector of length {}", self.len()),
                got: format!("vector of length {}", y.len()),
            });
        }
        Ok(())
    }

    fn apply(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check_matrix(x)?;
        Ok(self.sparse().apply_unchecked(x))
    }

    fn adjoint(&self, y: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_vector(y)?;
        Ok(self.sparse().adjoint_unchecked(y))
    }

    /// `A(X) - b`.
    fn residual(&self, x: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_vector(b)?;
        Ok(self.apply(x)? - b)
    }

    /// Upper estimate of `|A|` from power iteration on `A*A`: the Rayleigh
    /// quotient is inflated by the final iteration residual.
    fn op_norm_bound(&self) -> NormEstimate {
        let s = self.sparse();
        let (m, n) = s.shape();
        let mut rng = ChaCha8Rng::seed_from_u64(0x6e6f726d);
        let mut v = DMatrix::from_fn(m, n, |_, _| StandardNormal.sample(&mut rng));
        let nv = v.norm();
        if nv == 0.0 {
            return NormEstimate { norm: 0.0, residual: 0.0 };
        }
        v /= nv;
        let mut lambda = 0.0;
        let mut residual = 0.0;
        for _ in 0..NORM_POWER_ITERS {
            let w = s.adjoint_unchecked(&s.apply_unchecked(&v));
            lambda = crate::linalg::frob_dot(&v, &w);
            residual = (&w - &v * lambda).norm();
            let nw = w.norm();
            if nw == 0.0 {
                return NormEstimate { norm: 0.0, residual: 0.0 };
            }
            v = w / nw;
        }
        NormEstimate { norm: (lambda + residual).max(0.0).sqrt(), residual }
    }
}

impl<T: MeasurementOp + ?Sized> MeasurementOp for Box<T> {
    fn sparse(&self) -> &SparseMap {
        (**self).sparse()
    }
    fn name(&self) -> &'static str {
        (**self).name()
    }
}

impl<T: MeasurementOp + ?Sized> MeasurementOp for &T {
    fn sparse(&self) -> &SparseMap {
        (**self).sparse()
    }
    fn name(&self) -> &'static str {
        (**self).name()
    }
}
