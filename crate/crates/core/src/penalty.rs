//! Concave, non-decreasing scalar penalties applied to singular values.
//!
//! Every penalty `f` satisfies `f(0) = 0` and is concave and non-decreasing on
//! `[0, inf)`, so that `R(X) = sum_i f(sigma_i(X))` has the bilinear surrogate
//! `sum_i f((|B_i|^2 + |C_i|^2) / 2)` as a tight upper bound.
//!
//! Formulas, for `x >= 0`:
//!
//! | kind      | `f(x)` |
//! |-----------|--------|
//! | `FMu`     | `mu - max(sqrt(mu) - x, 0)^2` |
//! | `Nuclear` | `mu * x` |
//! | `Scad`    | `lambda*x` on `[0, lambda]`, `(2*gamma*lambda*x - x^2 - lambda^2) / (2*(gamma-1))` on `(lambda, gamma*lambda]`, `lambda^2*(gamma+1)/2` beyond |
//! | `Log`     | `lambda / ln(1+gamma) * ln(1 + gamma*x)` |
//! | `Mcp`     | `2*lambda*x - x^2/gamma` on `[0, gamma*lambda]`, `gamma*lambda^2` beyond |
//! | `Etp`     | `lambda / (1 - exp(-gamma)) * (1 - exp(-gamma*x))` |
//! | `Geman`   | `lambda*x / (x + gamma)` |
//!
//! `Mcp` is written with a factor two relative to the usual statistics
//! convention, so that `Mcp { lambda: sqrt(mu), gamma: 1 }` coincides with
//! `FMu { mu }`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A parameterized concave singular-value penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Penalty {
    FMu { mu: f64 },
    Nuclear { mu: f64 },
    Scad { lambda: f64, gamma: f64 },
    Log { lambda: f64, gamma: f64 },
    Mcp { lambda: f64, gamma: f64 },
    Etp { lambda: f64, gamma: f64 },
    Geman { lambda: f64, gamma: f64 },
}

/// The first property a penalty fails on a sample grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Violation {
    /// `f(0)` differs from zero.
    NonZeroAtOrigin { value: f64 },
    /// `f(next) < f(x)` beyond tolerance.
    Decreasing { x: f64, next: f64 },
    /// Midpoint concavity fails around `x`.
    NotConcave { x: f64, gap: f64 },
    /// `f` returned a non-finite value.
    NonFinite { x: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonZeroAtOrigin { value } => write!(f, "f(0) = {value} is not zero"),
            Violation::Decreasing { x, next } => {
                write!(f, "not non-decreasing between x = {x} and x = {next}")
            }
            Violation::NotConcave { x, gap } => {
                write!(f, "not concave at x = {x} (midpoint gap {gap:e})")
            }
            Violation::NonFinite { x } => write!(f, "non-finite value at x = {x}"),
        }
    }
}

/// Number of grid points used by [`Penalty::validate`].
pub const VALIDATE_GRID: usize = 512;
const ORIGIN_TOL: f64 = 1e-9;
const SHAPE_TOL: f64 = 1e-8;

impl Penalty {
    pub fn fmu(mu: f64) -> Result<Self> {
        Self::FMu { mu }.checked()
    }

    pub fn nuclear(mu: f64) -> Result<Self> {
        Self::Nuclear { mu }.checked()
    }

    /// Checks the parameter domain of the penalty.
    pub fn checked(self) -> Result<Self> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Domain(format!("{name} must be positive and finite, got {v}")))
            }
        };
        match self {
            Penalty::FMu { mu } | Penalty::Nuclear { mu } => positive("mu", mu)?,
            Penalty::Scad { lambda, gamma } => {
                positive("lambda", lambda)?;
                positive("gamma", gamma)?;
                if gamma <= 2.0 {
                    return Err(Error::Domain(format!("scad requires gamma > 2, got {gamma}")));
                }
            }
            Penalty::Log { lambda, gamma }
            | Penalty::Mcp { lambda, gamma }
            | Penalty::Etp { lambda, gamma }
            | Penalty::Geman { lambda, gamma } => {
                positive("lambda", lambda)?;
                positive("gamma", gamma)?;
            }
        }
        Ok(self)
    }

    /// Short name of the penalty family.
    pub fn name(&self) -> &'static str {
        match self {
            Penalty::FMu { .. } => "fmu",
            Penalty::Nuclear { .. } => "nuclear",
            Penalty::Scad { .. } => "scad",
            Penalty::Log { .. } => "log",
            Penalty::Mcp { .. } => "mcp",
            Penalty::Etp { .. } => "etp",
            Penalty::Geman { .. } => "geman",
        }
    }

    /// Characteristic scale of the penalty: the point where it flattens
    /// (`sqrt(mu)` for `FMu`) or an equivalent curvature scale.
    pub fn threshold(&self) -> f64 {
        match *self {
            Penalty::FMu { mu } => mu.sqrt(),
            Penalty::Nuclear { mu } => mu / 2.0,
            Penalty::Scad { lambda, gamma } | Penalty::Mcp { lambda, gamma } => gamma * lambda,
            Penalty::Log { gamma, .. } | Penalty::Etp { gamma, .. } => 1.0 / gamma,
            Penalty::Geman { gamma, .. } => gamma,
        }
    }

    /// Points where `f'` is continuous but not differentiable.
    pub fn kinks(&self) -> Vec<f64> {
        match *self {
            Penalty::FMu { mu } => vec![mu.sqrt()],
            Penalty::Scad { lambda, gamma } => vec![lambda, gamma * lambda],
            Penalty::Mcp { lambda, gamma } => vec![gamma * lambda],
            _ => Vec::new(),
        }
    }

    /// Returns a copy with the strength parameter (`mu` or `lambda`) replaced.
    pub fn with_strength(&self, s: f64) -> Self {
        match *self {
            Penalty::FMu { .. } => Penalty::FMu { mu: s },
            Penalty::Nuclear { .. } => Penalty::Nuclear { mu: s },
            Penalty::Scad { gamma, .. } => Penalty::Scad { lambda: s, gamma },
            Penalty::Log { gamma, .. } => Penalty::Log { lambda: s, gamma },
            Penalty::Mcp { gamma, .. } => Penalty::Mcp { lambda: s, gamma },
            Penalty::Etp { gamma, .. } => Penalty::Etp { lambda: s, gamma },
            Penalty::Geman { gamma, .. } => Penalty::Geman { lambda: s, gamma },
        }
    }

    /// The strength parameter (`mu` or `lambda`).
    pub fn strength(&self) -> f64 {
        match *self {
            Penalty::FMu { mu } | Penalty::Nuclear { mu } => mu,
            Penalty::Scad { lambda, .. }
            | Penalty::Log { lambda, .. }
            | Penalty::Mcp { lambda, .. }
            | Penalty::Etp { lambda, .. }
            | Penalty::Geman { lambda, .. } => lambda,
        }
    }

    /// `f(x)`; rejects negative or non-finite `x`.
    pub fn eval(&self, x: f64) -> Result<f64> {
        check_nonneg(x)?;
        Ok(self.value(x))
    }

    /// `f'(x)`, taking the right-hand limit at kinks.
    pub fn deriv(&self, x: f64) -> Result<f64> {
        check_nonneg(x)?;
        Ok(self.slope(x))
    }

    /// `argmin_{x >= 0} f(x) + (x - y)^2`.
    pub fn scalar_prox(&self, y: f64) -> Result<f64> {
        self.scaled_prox(1.0, y)
    }

    /// `argmin_{x >= 0} t*f(x) + (x - y)^2` for a scale `t > 0`.
    pub fn scaled_prox(&self, t: f64, y: f64) -> Result<f64> {
        check_nonneg(y)?;
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::Domain(format!("prox scale must be positive, got {t}")));
        }
        Ok(self.prox_unchecked(t, y))
    }

    pub(crate) fn value(&self, x: f64) -> f64 {
        match *self {
            Penalty::FMu { mu } => {
                let d = (mu.sqrt() - x).max(0.0);
                mu - d * d
            }
            Penalty::Nuclear { mu } => mu * x,
            Penalty::Scad { lambda, gamma } => {
                if x <= lambda {
                    lambda * x
                } else if x <= gamma * lambda {
                    (2.0 * gamma * lambda * x - x * x - lambda * lambda) / (2.0 * (gamma - 1.0))
                } else {
                    lambda * lambda * (gamma + 1.0) / 2.0
                }
            }
            Penalty::Log { lambda, gamma } => lambda / gamma.ln_1p() * (gamma * x).ln_1p(),
            Penalty::Mcp { lambda, gamma } => {
                if x <= gamma * lambda {
                    2.0 * lambda * x - x * x / gamma
                } else {
                    gamma * lambda * lambda
                }
            }
            Penalty::Etp { lambda, gamma } => {
                lambda / (-(-gamma).exp_m1()) * (-(-gamma * x).exp_m1())
            }
            Penalty::Geman { lambda, gamma } => lambda * x / (x + gamma),
        }
    }

    pub(crate) fn slope(&self, x: f64) -> f64 {
        match *self {
            Penalty::FMu { mu } => 2.0 * (mu.sqrt() - x).max(0.0),
            Penalty::Nuclear { mu } => mu,
            Penalty::Scad { lambda, gamma } => {
                if x < lambda {
                    lambda
                } else if x < gamma * lambda {
                    (gamma * lambda - x) / (gamma - 1.0)
                } else {
                    0.0
                }
            }
            Penalty::Log { lambda, gamma } => lambda * gamma / (gamma.ln_1p() * (1.0 + gamma * x)),
            Penalty::Mcp { lambda, gamma } => 2.0 * (lambda - x / gamma).max(0.0),
            Penalty::Etp { lambda, gamma } => {
                lambda * gamma * (-gamma * x).exp() / (-(-gamma).exp_m1())
            }
            Penalty::Geman { lambda, gamma } => lambda * gamma / ((x + gamma) * (x + gamma)),
        }
    }

    pub(crate) fn prox_unchecked(&self, t: f64, y: f64) -> f64 {
        match *self {
            Penalty::FMu { mu } => fmu_prox(mu, t, y),
            Penalty::Nuclear { mu } => (y - t * mu / 2.0).max(0.0),
            _ => self.numeric_prox(t, y),
        }
    }

    /// Global minimization of `t*f(x) + (x-y)^2` over `[0, y]` by a uniform
    /// grid followed by golden-section refinement of the best cell. Since `f`
    /// is non-decreasing no minimizer lies beyond `y`.
    fn numeric_prox(&self, t: f64, y: f64) -> f64 {
        if y == 0.0 {
            return 0.0;
        }
        const CELLS: usize = 4096;
        let obj = |x: f64| t * self.value(x) + (x - y) * (x - y);
        let h = y / CELLS as f64;
        let mut best = (0usize, obj(0.0));
        for i in 1..=CELLS {
            let v = obj(i as f64 * h);
            if v < best.1 {
                best = (i, v);
            }
        }
        let lo = best.0.saturating_sub(1) as f64 * h;
        let hi = ((best.0 + 1).min(CELLS)) as f64 * h;
        let refined = golden_section(&obj, lo, hi, 1e-13 * y.max(1.0));
        let mut cands = vec![(best.0 as f64 * h, best.1), (refined, obj(refined))];
        cands.push((0.0, obj(0.0)));
        cands.push((y, obj(y)));
        for k in self.kinks() {
            if k > 0.0 && k < y {
                cands.push((k, obj(k)));
            }
        }
        cands
            .into_iter()
            .fold((0.0, f64::INFINITY), |acc, c| if c.1 < acc.1 { c } else { acc })
            .0
    }

    /// Checks `f(0) = 0`, monotonicity and midpoint concavity on a grid of
    /// [`VALIDATE_GRID`] points over `[0, 10 * threshold]`.
    pub fn validate(&self) -> std::result::Result<(), Violation> {
        validate_fn(|x| self.value(x), 10.0 * self.threshold(), VALIDATE_GRID)
    }
}

/// Grid check of the penalty hypotheses for an arbitrary scalar function.
pub fn validate_fn<F: Fn(f64) -> f64>(
    f: F,
    x_max: f64,
    points: usize,
) -> std::result::Result<(), Violation> {
    let f0 = f(0.0);
    if !f0.is_finite() {
        return Err(Violation::NonFinite { x: 0.0 });
    }
    if f0.abs() > ORIGIN_TOL {
        return Err(Violation::NonZeroAtOrigin { value: f0 });
    }
    let n = points.max(3);
    let h = x_max / (n - 1) as f64;
    let xs: Vec<f64> = (0..n).map(|i| i as f64 * h).collect();
    let mut vals = Vec::with_capacity(n);
    for &x in &xs {
        let v = f(x);
        if !v.is_finite() {
            return Err(Violation::NonFinite { x });
        }
        vals.push(v);
    }
    for i in 0..n - 1 {
        if vals[i + 1] < vals[i] - SHAPE_TOL {
            return Err(Violation::Decreasing { x: xs[i], next: xs[i + 1] });
        }
    }
    for i in 1..n - 1 {
        let gap = (vals[i - 1] + vals[i + 1]) / 2.0 - vals[i];
        if gap > SHAPE_TOL {
            return Err(Violation::NotConcave { x: xs[i], gap });
        }
    }
    Ok(())
}

fn check_nonneg(x: f64) -> Result<()> {
    if x.is_finite() && x >= 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("penalty argument must be finite and >= 0, got {x}")))
    }
}

/// Closed-form prox of `t*f_mu`. For `t >= 1` it is hard thresholding at
/// `sqrt(t*mu)` keeping values on the threshold; for `t < 1` the quadratic
/// part is convex and the result is the firm threshold
/// `clamp((y - t*sqrt(mu)) / (1 - t), 0, y)`.
fn fmu_prox(mu: f64, t: f64, y: f64) -> f64 {
    let s = mu.sqrt();
    if t >= 1.0 {
        if y * y >= t * mu {
            y
        } else {
            0.0
        }
    } else if y >= s {
        y
    } else {
        ((y - t * s) / (1.0 - t)).max(0.0)
    }
}

fn golden_section<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    (a + b) / 2.0
}

impl fmt::Display for Penalty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Penalty::FMu { mu } | Penalty::Nuclear { mu } => write!(f, "{}:mu={mu}", self.name()),
            Penalty::Scad { lambda, gamma }
            | Penalty::Log { lambda, gamma }
            | Penalty::Mcp { lambda, gamma }
            | Penalty::Etp { lambda, gamma }
            | Penalty::Geman { lambda, gamma } => {
                write!(f, "{}:lambda={lambda},gamma={gamma}", self.name())
            }
        }
    }
}

impl FromStr for Penalty {
    type Err = Error;

    /// Parses `kind:key=value,...`, e.g. `fmu:mu=4.0` or
    /// `scad:lambda=1.0,gamma=3.7`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let kind = kind.trim().to_ascii_lowercase();
        let mut mu = None;
        let mut lambda = None;
        let mut gamma = None;
        for pair in rest.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, val) = pair.split_once('=').ok_or_else(|| Error::Parse {
                key: pair.to_string(),
                msg: "expected key=value".into(),
            })?;
            let key = key.trim();
            let v: f64 = val.trim().parse().map_err(|_| Error::Parse {
                key: key.to_string(),
                msg: format!("`{}` is not a number", val.trim()),
            })?;
            let slot = match key {
                "mu" => &mut mu,
                "lambda" => &mut lambda,
                "gamma" => &mut gamma,
                _ => {
                    return Err(Error::Parse {
                        key: key.to_string(),
                        msg: format!("unknown parameter for `{kind}`"),
                    })
                }
            };
            *slot = Some(v);
        }
        let need = |name: &str, v: Option<f64>| {
            v.ok_or_else(|| Error::Parse { key: name.to_string(), msg: format!("missing for `{kind}`") })
        };
        let reject = |name: &str, v: Option<f64>| match v {
            Some(_) => Err(Error::Parse {
                key: name.to_string(),
                msg: format!("not a parameter of `{kind}`"),
            }),
            None => Ok(()),
        };
        let p = match kind.as_str() {
            "fmu" | "nuclear" => {
                reject("lambda", lambda)?;
                reject("gamma", gamma)?;
                let mu = need("mu", mu)?;
                if kind == "fmu" {
                    Penalty::FMu { mu }
                } else {
                    Penalty::Nuclear { mu }
                }
            }
            "scad" | "log" | "mcp" | "etp" | "geman" => {
                reject("mu", mu)?;
                let lambda = need("lambda", lambda)?;
                let gamma = need("gamma", gamma)?;
                match kind.as_str() {
                    "scad" => Penalty::Scad { lambda, gamma },
                    "log" => Penalty::Log { lambda, gamma },
                    "mcp" => Penalty::Mcp { lambda, gamma },
                    "etp" => Penalty::Etp { lambda, gamma },
                    _ => Penalty::Geman { lambda, gamma },
                }
            }
            other => {
                return Err(Error::Parse { key: "kind".into(), msg: format!("unknown penalty `{other}`") })
            }
        };
        p.checked()
    }
}
