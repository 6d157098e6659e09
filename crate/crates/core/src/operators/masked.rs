use nalgebra::{DMatrix, DVector};

use super::{MeasurementOp, SparseMap, Term};
use crate::error::{Error, Result};

/// Entry sampling `X -> (X_ij)_{w_ij = 1}` in row-major order of the mask.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedOp {
    mask: DMatrix<f64>,
    map: SparseMap,
}

impl MaskedOp {
    /// Builds the operator from a binary mask. Entries must be exactly 0 or 1.
    pub fn new(mask: DMatrix<f64>) -> Result<Self> {
        if let Some(v) = mask.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::Domain(format!("mask entries must be 0 or 1, found {v}")));
        }
        let (m, n) = mask.shape();
        let mut map = SparseMap::new(m, n);
        for i in 0..m {
            for j in 0..n {
                if mask[(i, j)] == 1.0 {
                    map.push_row([Term { row: i, col: j, coeff: 1.0 }]);
                }
            }
        }
        Ok(Self { mask, map })
    }

    pub fn full(m: usize, n: usize) -> Self {
        Self::new(DMatrix::from_element(m, n, 1.0)).expect("ones are a valid mask")
    }

    pub fn mask(&self) -> &DMatrix<f64> {
        &self.mask
    }

    /// Observed entries of `m` in operator order, i.e. `b = A(M)`.
    pub fn sample(&self, m: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.apply(m)
    }

    /// Fraction of entries that are not observed.
    pub fn missing_fraction(&self) -> f64 {
        let total = self.mask.len();
        if total == 0 {
            return 0.0;
        }
        1.0 - self.map.len() as f64 / total as f64
    }
}

impl MeasurementOp for MaskedOp {
    fn sparse(&self) -> &SparseMap {
        &self.map
    }

    fn name(&self) -> &'static str {
        "masked"
    }
}
