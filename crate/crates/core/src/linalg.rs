//! Thin SVD wrapper and small dense helpers shared by the solvers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative threshold below which a singular value counts as zero.
pub const RANK_TOL: f64 = 1e-9;

const RECON_TOL: f64 = 1e-10;

/// Thin SVD `X = U diag(sigma) V^T` with descending singular values.
#[derive(Debug, Clone)]
pub struct SvdTriple {
    pub u: DMatrix<f64>,
    pub sigma: Vec<f64>,
    pub v: DMatrix<f64>,
}

impl SvdTriple {
    pub fn rank(&self) -> usize {
        numerical_rank(&self.sigma, RANK_TOL)
    }

    /// `U diag(s) V^T` for replacement singular values `s`.
    pub fn compose(&self, s: &[f64]) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (j, &sj) in s.iter().enumerate() {
            us.column_mut(j).scale_mut(sj);
        }
        us * self.v.transpose()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.compose(&self.sigma)
    }
}

/// Dense thin SVD with singular values sorted in descending order.
pub fn thin_svd(x: &DMatrix<f64>) -> Result<SvdTriple> {
    let (m, n) = x.shape();
    let r = m.min(n);
    if r == 0 {
        return Ok(SvdTriple { u: DMatrix::zeros(m, 0), sigma: Vec::new(), v: DMatrix::zeros(n, 0) });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("SVD of a matrix with non-finite entries".into()));
    }
    let a = faer::Mat::<f64>::from_fn(m, n, |i, j| x[(i, j)]);
    let svd = a
        .thin_svd()
        .map_err(|e| Error::Numerical(format!("SVD failed ({e:?}) for |X|_F = {:e}", x.norm())))?;
    let (u, v) = (svd.U(), svd.V());
    let d = svd.S().column_vector();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| d[b].total_cmp(&d[a]));
    let mut su = DMatrix::zeros(m, r);
    let mut sv = DMatrix::zeros(n, r);
    let mut sigma = Vec::with_capacity(r);
    for (dst, &src) in order.iter().enumerate() {
        for i in 0..m {
            su[(i, dst)] = u[(i, src)];
        }
        for j in 0..n {
            sv[(j, dst)] = v[(j, src)];
        }
        sigma.push(d[src].max(0.0));
    }
    let out = SvdTriple { u: su, sigma, v: sv };
    let err = (out.reconstruct() - x).norm();
    if err > RECON_TOL * x.norm() {
        return Err(Error::Numerical(format!(
            "SVD reconstruction error {err:e} for |X|_F = {:e}",
            x.norm()
        )));
    }
    Ok(out)
}

/// Singular values of `x` in descending order.
pub fn singular_values(x: &DMatrix<f64>) -> Result<Vec<f64>> {
    Ok(thin_svd(x)?.sigma)
}

/// Number of values strictly above `rel * max(values)`.
pub fn numerical_rank(sigma: &[f64], rel: f64) -> usize {
    let top = sigma.iter().cloned().fold(0.0, f64::max);
    if top == 0.0 {
        return 0;
    }
    sigma.iter().filter(|&&s| s > rel * top).count()
}

/// Pseudo-inverse square root factor of a symmetric PSD matrix: returns `L`
/// (`r x d`) with `L^T L = H^+`, dropping eigenvalues below
/// `rel * max_eigenvalue`.
pub(crate) fn pinv_sqrt(h: &DMatrix<f64>, rel: f64) -> DMatrix<f64> {
    let d = h.nrows();
    let eig = SymmetricEigen::new(h.clone());
    let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..d).filter(|&i| top > 0.0 && eig.eigenvalues[i] > rel * top).collect();
    let mut l = DMatrix::zeros(keep.len(), d);
    for (row, &i) in keep.iter().enumerate() {
        let s = 1.0 / eig.eigenvalues[i].sqrt();
        for c in 0..d {
            l[(row, c)] = eig.eigenvectors[(c, i)] * s;
        }
    }
    l
}

/// Solves the symmetric PSD system `H x = g` in the least-norm sense.
pub(crate) fn pinv_solve(h: &DMatrix<f64>, g: &DVector<f64>, rel: f64) -> DVector<f64> {
    let l = pinv_sqrt(h, rel);
    l.transpose() * (&l * g)
}

/// Frobenius inner product.
/// Squared norm accumulated strictly in order, so interleaved zero entries
/// never change the result.
pub fn sum_sq(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |acc, x| acc + x * x)
}

pub fn frob_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}
