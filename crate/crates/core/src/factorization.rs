//! The regularizer `R(X) = sum f(sigma_i(X))`, its bilinear surrogate and
//! balanced factorizations.

use nalgebra::DMatrix;
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use crate::error::{dims, Error, Result};
use crate::linalg::{thin_svd, SvdTriple};
use crate::penalty::Penalty;

/// Bilinear factors `X = B C^T` with `B: m x k` and `C: n x k`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    b: DMatrix<f64>,
    c: DMatrix<f64>,
}

impl FactorPair {
    pub fn new(b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        if b.ncols() != c.ncols() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} columns in C", b.ncols()),
                got: dims(c.nrows(), c.ncols()),
            });
        }
        if b.ncols() == 0 {
            return Err(Error::Domain("factor pair needs k >= 1 columns".into()));
        }
        if b.iter().chain(c.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("factor entries must be finite".into()));
        }
        Ok(Self { b, c })
    }

    pub fn zeros(m: usize, n: usize, k: usize) -> Self {
        Self { b: DMatrix::zeros(m, k), c: DMatrix::zeros(n, k) }
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn k(&self) -> usize {
        self.b.ncols()
    }

    pub fn rows(&self) -> usize {
        self.b.nrows()
    }

    pub fn cols(&self) -> usize {
        self.c.nrows()
    }

    pub fn into_parts(self) -> (DMatrix<f64>, DMatrix<f64>) {
        (self.b, self.c)
    }

    /// `B C^T`.
    pub fn product(&self) -> DMatrix<f64> {
        &self.b * self.c.transpose()
    }

    /// Column mean squares `(|B_i|^2 + |C_i|^2) / 2`.
    pub fn column_energies(&self) -> Vec<f64> {
        (0..self.k())
            .map(|i| (self.b.column(i).norm_squared() + self.c.column(i).norm_squared()) / 2.0)
            .collect()
    }

    /// Thin SVD of `B C^T` computed from QR factors of `B` and `C`; costs
    /// `O((m + n) k^2)` instead of a dense `m x n` decomposition.
    pub fn product_svd(&self) -> Result<SvdTriple> {
        let qb = self.b.clone().qr();
        let qc = self.c.clone().qr();
        let (q_b, r_b) = (qb.q(), qb.r());
        let (q_c, r_c) = (qc.q(), qc.r());
        let core = &r_b * r_c.transpose();
        let s = thin_svd(&core)?;
        Ok(SvdTriple { u: q_b * s.u, sigma: s.sigma, v: q_c * s.v })
    }
}

impl Serialize for FactorPair {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
        };
        let mut st = s.serialize_struct("FactorPair", 3)?;
        st.serialize_field("k", &self.k())?;
        st.serialize_field("b", &rows(&self.b))?;
        st.serialize_field("c", &rows(&self.c))?;
        st.end()
    }
}

/// `R(X) = sum_i f(sigma_i(X))` over all `min(m, n)` singular values.
pub fn reg_value(p: &Penalty, x: &DMatrix<f64>) -> Result<f64> {
    let s = thin_svd(x)?;
    Ok(reg_of_spectrum(p, &s.sigma))
}

pub(crate) fn reg_of_spectrum(p: &Penalty, sigma: &[f64]) -> f64 {
    sigma.iter().map(|&s| p.value(s)).sum()
}

/// `R(B C^T)` evaluated through [`FactorPair::product_svd`].
pub fn reg_of_product(p: &Penalty, f: &FactorPair) -> Result<f64> {
    Ok(reg_of_spectrum(p, &f.product_svd()?.sigma))
}

/// Bilinear surrogate `sum_i f((|B_i|^2 + |C_i|^2) / 2)`.
pub fn surrogate_value(p: &Penalty, f: &FactorPair) -> f64 {
    f.column_energies().into_iter().map(|e| p.value(e)).sum()
}

fn balanced_from_svd(s: &SvdTriple, k: usize) -> FactorPair {
    let (m, n) = (s.u.nrows(), s.v.nrows());
    let mut b = DMatrix::zeros(m, k);
    let mut c = DMatrix::zeros(n, k);
    for (i, &sig) in s.sigma.iter().enumerate().take(k) {
        let r = sig.sqrt();
        b.set_column(i, &(s.u.column(i) * r));
        c.set_column(i, &(s.v.column(i) * r));
    }
    FactorPair { b, c }
}

/// `B = U sqrt(S)`, `C = V sqrt(S)` truncated or zero-padded to `k` columns.
/// Fails if a discarded singular value exceeds `1e-9 * sigma_1`.
pub fn balanced_factorize(x: &DMatrix<f64>, k: usize) -> Result<FactorPair> {
    if k == 0 {
        return Err(Error::Domain("k must be at least 1".into()));
    }
    let s = thin_svd(x)?;
    let rank = s.rank();
    if rank > k {
        return Err(Error::RankOverflow { rank, k });
    }
    Ok(balanced_from_svd(&s, k))
}

/// Refactorizes `B C^T` into balanced form. The product is unchanged and the
/// surrogate drops to `R(B C^T)`.
pub fn rebalance(f: &FactorPair) -> Result<FactorPair> {
    let s = f.product_svd()?;
    Ok(balanced_from_svd(&s, f.k()))
}

/// Singular-value prox `argmin_X R(X) + |X - X0|_F^2`.
pub fn sv_prox(p: &Penalty, x0: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    sv_prox_scaled(p, 1.0, x0)
}

/// `argmin_X t R(X) + |X - X0|_F^2`.
pub fn sv_prox_scaled(p: &Penalty, t: f64, x0: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (s, shrunk) = sv_prox_spectrum(p, t, x0)?;
    Ok(s.compose(&shrunk))
}

/// SVD of `X0` together with the thresholded spectrum used by the prox.
pub fn sv_prox_spectrum(p: &Penalty, t: f64, x0: &DMatrix<f64>) -> Result<(SvdTriple, Vec<f64>)> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::Domain(format!("prox scale must be positive, got {t}")));
    }
    let s = thin_svd(x0)?;
    let shrunk = s.sigma.iter().map(|&y| p.prox_unchecked(t, y)).collect();
    Ok((s, shrunk))
}

/// Numerical rank with the library-wide threshold `1e-9 * sigma_1`.
pub fn rank(x: &DMatrix<f64>) -> Result<usize> {
    Ok(thin_svd(x)?.rank())
}
