use nalgebra::{DMatrix, DVector, Matrix2x3};

use super::{MeasurementOp, SparseMap, Term};
use crate::error::{dims, Error, Result};

/// Orthographic non-rigid projection acting on the reshuffled shape matrix.
///
/// The unknown is `X# (F x 3n)` with `X#[(i, 3j + c)] = X[(3i + c, j)]`, where
/// `X (3F x n)` stacks the per-frame shapes. Output entry `(2i + d) * n + j`
/// is `(R_i X_i)[(d, j)]`, i.e. the measurement matrix `M (2F x n)` read in
/// row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct NrsfmOp {
    cams: Vec<Matrix2x3<f64>>,
    points: usize,
    map: SparseMap,
}

const ORTHO_TOL: f64 = 1e-10;

impl NrsfmOp {
    pub fn new(cams: Vec<Matrix2x3<f64>>, points: usize) -> Result<Self> {
        if cams.is_empty() || points == 0 {
            return Err(Error::Domain("nrsfm operator needs at least one frame and point".into()));
        }
        for (i, r) in cams.iter().enumerate() {
            let g = r * r.transpose();
            let err = (g - nalgebra::Matrix2::identity()).abs().max();
            if err > ORTHO_TOL {
                return Err(Error::Domain(format!(
                    "camera {i} rows are not orthonormal (|R R^T - I|_max = {err:e})"
                )));
            }
        }
        let f = cams.len();
        let mut map = SparseMap::new(f, 3 * points);
        for (i, r) in cams.iter().enumerate() {
            for d in 0..2 {
                for j in 0..points {
                    map.push_row((0..3).map(|c| Term { row: i, col: 3 * j + c, coeff: r[(d, c)] }));
                }
            }
        }
        Ok(Self { cams, points, map })
    }

    pub fn frames(&self) -> usize {
        self.cams.len()
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn cameras(&self) -> &[Matrix2x3<f64>] {
        &self.cams
    }

    /// Reads a `2F x n` measurement matrix into the operator's output order.
    pub fn measurements_to_vector(&self, m: &DMatrix<f64>) -> Result<DVector<f64>> {
        let want = (2 * self.frames(), self.points);
        if m.shape() != want {
            return Err(Error::DimensionMismatch {
                expected: dims(want.0, want.1),
                got: dims(m.nrows(), m.ncols()),
            });
        }
        Ok(DVector::from_iterator(
            self.len(),
            (0..want.0).flat_map(|r| (0..want.1).map(move |j| m[(r, j)])),
        ))
    }

    /// Inverse of [`Self::measurements_to_vector`].
    pub fn vector_to_measurements(&self, b: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_vector(b)?;
        Ok(DMatrix::from_row_slice(2 * self.frames(), self.points, b.as_slice()))
    }
}

impl MeasurementOp for NrsfmOp {
    fn sparse(&self) -> &SparseMap {
        &self.map
    }

    fn name(&self) -> &'static str {
        "nrsfm"
    }
}

/// `X (3F x n)` to `X# (F x 3n)`.
pub fn stacked_to_sharp(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.nrows() % 3 != 0 {
        return Err(Error::DimensionMismatch {
            expected: "row count divisible by 3".into(),
            got: dims(x.nrows(), x.ncols()),
        });
    }
    let (f, n) = (x.nrows() / 3, x.ncols());
    Ok(DMatrix::from_fn(f, 3 * n, |i, col| x[(3 * i + col % 3, col / 3)]))
}

/// `X# (F x 3n)` to `X (3F x n)`.
pub fn sharp_to_stacked(xs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if xs.ncols() % 3 != 0 {
        return Err(Error::DimensionMismatch {
            expected: "column count divisible by 3".into(),
            got: dims(xs.nrows(), xs.ncols()),
        });
    }
    let (f, n) = (xs.nrows(), xs.ncols() / 3);
    Ok(DMatrix::from_fn(3 * f, n, |r, j| xs[(r / 3, 3 * j + r % 3)]))
}
