//! Synthetic instances: low-rank ground truth, noise, missing-data masks and
//! structure-from-motion scenes.
//!
//! Every generator is a pure function of its arguments. Randomness comes from
//! `ChaCha8Rng`; sub-streams are derived with [`derive_seed`].

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3x4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{dims, Error, Result};
use crate::linalg::{singular_values, thin_svd};
use crate::operators::{MaskedOp, MeasurementOp, NrsfmOp, Observation, PoseOp};

/// Name of the random stream algorithm, stored in instance metadata.
pub const GENERATOR_VERSION: &str = "chacha8-v1";
/// Leading frames of every track that are always observed.
pub const FIRST_OBSERVED_FRAMES: usize = 3;

const MAX_RETRIES: u64 = 64;
const MIN_SIGMA: f64 = 1e-6;
const FRACTION_TOL: f64 = 0.01;
/// Masks smaller than this carry no realized-fraction guarantee.
const FRACTION_MIN_ENTRIES: usize = 10_000;

/// Deterministic child seed for stream `index` of `seed` (splitmix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal_matrix(m: usize, n: usize, r: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(m, n, |_, _| StandardNormal.sample(r))
}

/// `M0 = U V^T` with standard normal `U (m x r)`, `V (n x r)`.
pub fn gen_low_rank(m: usize, n: usize, r: usize, seed: u64) -> Result<DMatrix<f64>> {
    if r > m.min(n) {
        return Err(Error::Domain(format!("rank {r} exceeds min({m}, {n})")));
    }
    if r == 0 {
        return Ok(DMatrix::zeros(m, n));
    }
    for attempt in 0..MAX_RETRIES {
        let mut g = rng(derive_seed(seed, attempt));
        let u = normal_matrix(m, r, &mut g);
        let v = normal_matrix(n, r, &mut g);
        let x = u * v.transpose();
        if singular_values(&x)?[r - 1] > MIN_SIGMA {
            return Ok(x);
        }
    }
    Err(Error::Degenerate(format!("no rank-{r} draw in {MAX_RETRIES} attempts")))
}

/// Missing-data pattern of an instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pattern {
    Uniform,
    Tracking,
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pattern::Uniform => "uniform",
            Pattern::Tracking => "tracking",
        })
    }
}

impl FromStr for Pattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Pattern::Uniform),
            "tracking" => Ok(Pattern::Tracking),
            _ => Err(Error::Parse { key: "pattern".into(), msg: format!("unknown pattern `{s}`") }),
        }
    }
}

fn missing_fraction(w: &DMatrix<f64>) -> f64 {
    if w.is_empty() {
        return 0.0;
    }
    w.iter().filter(|&&v| v == 0.0).count() as f64 / w.len() as f64
}

fn has_empty_line(w: &DMatrix<f64>) -> bool {
    w.row_iter().any(|r| r.iter().all(|&v| v == 0.0)) || w.column_iter().any(|c| c.iter().all(|&v| v == 0.0))
}

/// Each entry is missing independently with probability `frac`.
///
/// For masks with at least 10^4 entries the draw is repeated until the
/// realized fraction is within 0.01 of `frac`. With `strict` set, masks with an
/// empty row or column are redrawn and eventually rejected.
pub fn uniform_mask(m: usize, n: usize, frac: f64, seed: u64, strict: bool) -> Result<DMatrix<f64>> {
    if !(0.0..1.0).contains(&frac) {
        return Err(Error::Domain(format!("missing fraction must lie in [0, 1), got {frac}")));
    }
    let check_frac = m * n >= FRACTION_MIN_ENTRIES;
    for attempt in 0..MAX_RETRIES {
        let mut g = rng(derive_seed(seed, attempt));
        let w = DMatrix::from_fn(m, n, |_, _| if g.random::<f64>() < frac { 0.0 } else { 1.0 });
        if check_frac && (missing_fraction(&w) - frac).abs() > FRACTION_TOL {
            continue;
        }
        if strict && has_empty_line(&w) {
            continue;
        }
        return Ok(w);
    }
    Err(Error::Degenerate(format!(
        "no {m}x{n} uniform mask with missing fraction {frac} in {MAX_RETRIES} draws{}",
        if strict { " (strict: no empty rows or columns)" } else { "" }
    )))
}

/// Largest expected missing fraction of a tracking mask with `frames` rows.
pub fn tracking_max_fraction(frames: usize) -> f64 {
    (frames.saturating_sub(FIRST_OBSERVED_FRAMES)) as f64 / frames as f64
}

/// Expected missing fraction for the calibration parameter `s` in `[0, 2]`.
///
/// For `s <= 1` a track fails with probability `s` at a frame uniform on
/// `{3, .., F-1}`. For `s > 1` every track fails; with probability `s - 1` it
/// fails right after the always-observed prefix.
fn tracking_expected(frames: usize, s: f64) -> f64 {
    let f = frames as f64;
    let early = (f - FIRST_OBSERVED_FRAMES as f64) / f;
    let spread = (f - FIRST_OBSERVED_FRAMES as f64 + 1.0) / (2.0 * f);
    if s <= 1.0 {
        s * spread
    } else {
        (s - 1.0) * early + (2.0 - s) * spread
    }
}

fn calibrate_tracking(frames: usize, frac: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, 2.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if tracking_expected(frames, mid) < frac {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Tracking-failure mask: column `j` is observed in frames `0..t_j` and
/// missing afterwards, with `t_j >= 3`.
///
/// The failure model is calibrated by bisection so that its expected missing
/// fraction equals `frac`; the realized fraction is within 0.01 of `frac` for
/// masks with at least 10^4 entries.
pub fn tracking_mask(frames: usize, tracks: usize, frac: f64, seed: u64) -> Result<DMatrix<f64>> {
    if frames <= FIRST_OBSERVED_FRAMES {
        return Err(Error::Domain(format!("tracking masks need at least 4 frames, got {frames}")));
    }
    let max = tracking_max_fraction(frames);
    if !(0.0..=max).contains(&frac) {
        if frac < 0.0 || !frac.is_finite() {
            return Err(Error::Domain(format!("missing fraction must be non-negative, got {frac}")));
        }
        return Err(Error::UnreachableFraction { target: frac, max });
    }
    if frac == 0.0 {
        return Ok(DMatrix::from_element(frames, tracks, 1.0));
    }
    let s = calibrate_tracking(frames, frac);
    let (p_fail, p_early) = if s <= 1.0 { (s, 0.0) } else { (1.0, s - 1.0) };
    let check_frac = frames * tracks >= FRACTION_MIN_ENTRIES;
    let first = FIRST_OBSERVED_FRAMES;
    for attempt in 0..MAX_RETRIES {
        let mut g = rng(derive_seed(seed, attempt));
        let mut w = DMatrix::from_element(frames, tracks, 1.0);
        for j in 0..tracks {
            if g.random::<f64>() >= p_fail {
                continue;
            }
            let t = if g.random::<f64>() < p_early { first } else { g.random_range(first..frames) };
            w.view_mut((t, j), (frames - t, 1)).fill(0.0);
        }
        if check_frac && (missing_fraction(&w) - frac).abs() > FRACTION_TOL {
            continue;
        }
        return Ok(w);
    }
    Err(Error::Degenerate(format!(
        "no {frames}x{tracks} tracking mask within 0.01 of {frac} in {MAX_RETRIES} draws"
    )))
}

/// `M0 + N` with `N_ij ~ Normal(0, sigma^2)`. `sigma = 0` returns `M0` unchanged.
pub fn add_noise(m0: &DMatrix<f64>, sigma: f64, seed: u64) -> Result<DMatrix<f64>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Domain(format!("noise level must be non-negative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(m0.clone());
    }
    let dist = Normal::new(0.0, sigma).map_err(|e| Error::Domain(e.to_string()))?;
    let mut g = rng(seed);
    Ok(m0.map(|v| v + dist.sample(&mut g)))
}

/// `|X - M0|_F / |M0|_F`.
pub fn normalized_distance(x: &DMatrix<f64>, m0: &DMatrix<f64>) -> Result<f64> {
    if x.shape() != m0.shape() {
        return Err(Error::DimensionMismatch {
            expected: dims(m0.nrows(), m0.ncols()),
            got: dims(x.nrows(), x.ncols()),
        });
    }
    let d = m0.norm();
    if d == 0.0 {
        return Err(Error::Degenerate("normalized distance to a zero ground truth".into()));
    }
    Ok((x - m0).norm() / d)
}

/// Parameters of a matrix completion instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub m: usize,
    pub n: usize,
    pub rank: usize,
    pub pattern: Pattern,
    pub missing: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl InstanceSpec {
    /// 32 x 512 rank 4, the synthetic setting of the missing-data experiments.
    pub fn table1(pattern: Pattern, missing: f64, sigma: f64, seed: u64) -> Self {
        Self { m: 32, n: 512, rank: 4, pattern, missing, sigma, seed }
    }
}

/// A generated completion problem: `M = M0 + N` observed through the mask `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub spec: InstanceSpec,
    pub m0: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub w: DMatrix<f64>,
}

/// Contents of `meta.json` in a saved instance directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub pattern: Pattern,
    pub target_missing: f64,
    pub missing_fraction: f64,
    pub sigma: f64,
    pub rank: usize,
    pub seed: u64,
    pub generator: String,
    pub first_observed_frames: usize,
}

impl ProblemInstance {
    pub fn generate(spec: &InstanceSpec) -> Result<Self> {
        let m0 = gen_low_rank(spec.m, spec.n, spec.rank, derive_seed(spec.seed, 0))?;
        let m = add_noise(&m0, spec.sigma, derive_seed(spec.seed, 1))?;
        let mask_seed = derive_seed(spec.seed, 2);
        let w = match spec.pattern {
            Pattern::Uniform => uniform_mask(spec.m, spec.n, spec.missing, mask_seed, true)?,
            Pattern::Tracking => tracking_mask(spec.m, spec.n, spec.missing, mask_seed)?,
        };
        Ok(Self { spec: spec.clone(), m0, m, w })
    }

    pub fn op(&self) -> MaskedOp {
        MaskedOp::new(self.w.clone()).expect("generated masks are binary")
    }

    /// Observed measurements `b = A(M)`.
    pub fn rhs(&self) -> DVector<f64> {
        self.op().apply(&self.m).expect("mask and measurements share a shape")
    }

    pub fn missing_fraction(&self) -> f64 {
        missing_fraction(&self.w)
    }

    pub fn meta(&self) -> InstanceMeta {
        InstanceMeta {
            pattern: self.spec.pattern,
            target_missing: self.spec.missing,
            missing_fraction: self.missing_fraction(),
            sigma: self.spec.sigma,
            rank: self.spec.rank,
            seed: self.spec.seed,
            generator: GENERATOR_VERSION.into(),
            first_observed_frames: FIRST_OBSERVED_FRAMES,
        }
    }
}

/// Synthetic pOSE problem with exact image measurements.
#[derive(Debug, Clone)]
pub struct PoseScene {
    pub op: PoseOp,
    pub b: DVector<f64>,
    /// Stacked `3F x n` matrix with blocks `P_i x_j`.
    pub x_true: DMatrix<f64>,
    pub cameras: Vec<Matrix3x4<f64>>,
    /// Homogeneous points, `4 x n`.
    pub points: DMatrix<f64>,
}

fn random_rotation(g: &mut ChaCha8Rng) -> DMatrix<f64> {
    let q = normal_matrix(3, 3, g).qr().q();
    if q.determinant() < 0.0 {
        -q
    } else {
        q
    }
}

/// Random affine cameras (third row `(0, 0, 0, 1)`) observing random points,
/// every point seen in every camera.
///
/// Affine cameras give every point depth one, so the ground truth has zero
/// pOSE residual for all `eta`; the stacked matrix has rank 4.
pub fn gen_pose_scene(cams: usize, points: usize, eta: f64, seed: u64) -> Result<PoseScene> {
    if cams < 2 || points < 8 {
        return Err(Error::Domain(format!("pose scenes need F >= 2 and n >= 8, got {cams} and {points}")));
    }
    for attempt in 0..MAX_RETRIES {
        let mut g = rng(derive_seed(seed, attempt));
        let mut pts = normal_matrix(4, points, &mut g);
        pts.row_mut(3).fill(1.0);
        let cameras: Vec<Matrix3x4<f64>> = (0..cams)
            .map(|_| {
                let r = random_rotation(&mut g);
                let scale = 1.0 + 0.5 * g.random::<f64>();
                let mut p = Matrix3x4::zeros();
                for a in 0..2 {
                    for c in 0..3 {
                        p[(a, c)] = scale * r[(a, c)];
                    }
                    let t: f64 = StandardNormal.sample(&mut g);
                    p[(a, 3)] = 0.5 * t;
                }
                p[(2, 3)] = 1.0;
                p
            })
            .collect();
        let mut x = DMatrix::zeros(3 * cams, points);
        for (i, p) in cameras.iter().enumerate() {
            let proj = DMatrix::from_fn(3, 4, |a, c| p[(a, c)]) * &pts;
            x.rows_mut(3 * i, 3).copy_from(&proj);
        }
        let s = singular_values(&x)?;
        if s.len() < 4 || s[3] <= MIN_SIGMA * s[0] {
            continue;
        }
        let obs = (0..cams)
            .flat_map(|i| (0..points).map(move |j| (i, j)))
            .map(|(i, j)| Observation { cam: i, point: j, u: x[(3 * i, j)], v: x[(3 * i + 1, j)] })
            .collect();
        let op = PoseOp::new(cams, points, eta, obs)?;
        let b = op.rhs();
        return Ok(PoseScene { op, b, x_true: x, cameras, points: pts });
    }
    Err(Error::Degenerate(format!("no rank-4 pose scene in {MAX_RETRIES} attempts")))
}

/// Synthetic orthographic non-rigid scene.
#[derive(Debug, Clone)]
pub struct NrsfmScene {
    pub op: NrsfmOp,
    pub b: DVector<f64>,
    /// `F x 3n` shape matrix `X# = C B#` of rank `K`.
    pub x_sharp: DMatrix<f64>,
}

/// Cameras are the first two rows of random rotations; shapes are random
/// combinations of `K` random basis shapes.
pub fn gen_nrsfm_scene(frames: usize, points: usize, basis: usize, seed: u64) -> Result<NrsfmScene> {
    if frames == 0 || points == 0 || basis > frames.min(3 * points) {
        return Err(Error::Domain(format!(
            "nrsfm scene needs K <= min(F, 3n), got F = {frames}, n = {points}, K = {basis}"
        )));
    }
    let mut g = rng(seed);
    let cams: Vec<Matrix2x3<f64>> = (0..frames)
        .map(|_| {
            let r = random_rotation(&mut g);
            Matrix2x3::from_fn(|a, c| r[(a, c)])
        })
        .collect();
    let coeff = normal_matrix(frames, basis, &mut g);
    let shapes = normal_matrix(basis, 3 * points, &mut g);
    let x_sharp = coeff * shapes;
    let op = NrsfmOp::new(cams, points)?;
    let b = op.apply(&x_sharp)?;
    Ok(NrsfmScene { op, b, x_sharp })
}

/// Numerical rank at a caller-chosen relative threshold.
pub fn rank_at(x: &DMatrix<f64>, rel: f64) -> Result<usize> {
    Ok(crate::linalg::numerical_rank(&thin_svd(x)?.sigma, rel))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factorization::rank;

    #[test]
    fn low_rank_examples() {
        let x = gen_low_rank(32, 512, 4, 7).unwrap();
        assert_eq!(rank(&x).unwrap(), 4);
        assert_eq!(gen_low_rank(5, 6, 0, 1).unwrap(), DMatrix::zeros(5, 6));
        assert_eq!(gen_low_rank(8, 9, 3, 11).unwrap(), gen_low_rank(8, 9, 3, 11).unwrap());
        assert_ne!(gen_low_rank(8, 9, 3, 11).unwrap(), gen_low_rank(8, 9, 3, 12).unwrap());
        assert!(gen_low_rank(3, 4, 4, 0).is_err());
    }

    #[test]
    fn uniform_mask_examples() {
        assert_eq!(uniform_mask(6, 7, 0.0, 3, true).unwrap(), DMatrix::from_element(6, 7, 1.0));
        // binomial(16384, 1/2) has sd 64; 99.99% two-sided bound is 3.8906 sd
        let w = uniform_mask(32, 512, 0.5, 9, true).unwrap();
        let observed = w.iter().filter(|&&v| v == 1.0).count() as f64;
        let half_width = 3.8906 * (16384.0f64 * 0.25).sqrt();
        assert!((observed - 8192.0).abs() <= half_width);
        // the resampling contract is tighter: within 1% of the entries
        assert!((8028.0..=8356.0).contains(&observed));
        assert!(matches!(uniform_mask(4, 4, 0.999, 1, true), Err(Error::Degenerate(_))));
        assert!(uniform_mask(4, 4, 0.999, 1, false).is_ok());
        assert!(uniform_mask(4, 4, 1.0, 1, false).is_err());
    }

    #[test]
    fn tracking_mask_examples() {
        assert_eq!(tracking_mask(8, 5, 0.0, 1).unwrap(), DMatrix::from_element(8, 5, 1.0));
        for frac in [0.1, 0.3, 0.5, 0.8] {
            let w = tracking_mask(32, 512, frac, 4).unwrap();
            let got = missing_fraction(&w);
            assert!((got - frac).abs() <= 0.01, "{frac}: {got}");
            for col in w.column_iter() {
                let first_zero = col.iter().position(|&v| v == 0.0).unwrap_or(32);
                assert!(first_zero >= FIRST_OBSERVED_FRAMES);
                assert!(col.iter().skip(first_zero).all(|&v| v == 0.0));
            }
        }
        assert!(matches!(
            tracking_mask(32, 10, 0.95, 1),
            Err(Error::UnreachableFraction { .. })
        ));
        assert!(tracking_mask(3, 10, 0.1, 1).is_err());
    }

    #[test]
    fn tracking_calibration_hits_expectation() {
        // independent count: average realized fraction over many draws
        for frac in [0.05, 0.45, 0.6] {
            let mut total = 0.0;
            for s in 0..20 {
                total += missing_fraction(&tracking_mask(20, 600, frac, s).unwrap());
            }
            assert!((total / 20.0 - frac).abs() < 0.005, "{frac}");
        }
        let top = tracking_expected(32, 2.0);
        assert!((top - tracking_max_fraction(32)).abs() < 1e-15);
    }

    #[test]
    fn noise_examples() {
        let m0 = gen_low_rank(32, 512, 4, 1).unwrap();
        assert_eq!(add_noise(&m0, 0.0, 5).unwrap(), m0);
        let n = add_noise(&m0, 0.1, 5).unwrap() - &m0;
        let k = n.len() as f64;
        let mean = n.sum() / k;
        let sd = ((n.map(|v| v * v).sum() / k) - mean * mean).sqrt();
        // chi-square with 16384 dof: sd of the sample std is about 0.1 / sqrt(2k)
        assert!((sd - 0.1).abs() <= 0.003, "{sd}");
        assert!(mean.abs() <= 3.0 * 0.1 / k.sqrt());
        assert_eq!(add_noise(&m0, 0.1, 5).unwrap(), add_noise(&m0, 0.1, 5).unwrap());
        assert!(add_noise(&m0, -1.0, 5).is_err());
    }

    #[test]
    fn distance_examples() {
        let m0 = gen_low_rank(4, 5, 2, 1).unwrap();
        assert_eq!(normalized_distance(&m0, &m0).unwrap(), 0.0);
        assert_eq!(normalized_distance(&DMatrix::zeros(4, 5), &m0).unwrap(), 1.0);
        assert!((normalized_distance(&(&m0 * 2.0), &m0).unwrap() - 1.0).abs() < 1e-15);
        assert!(normalized_distance(&m0, &DMatrix::zeros(4, 5)).is_err());
    }

    #[test]
    fn pose_scene_is_consistent() {
        let s = gen_pose_scene(5, 12, 0.5, 3).unwrap();
        assert!(s.op.residual(&s.x_true, &s.b).unwrap().norm() < 1e-12);
        assert!(rank(&s.x_true).unwrap() <= 4);
        let s0 = gen_pose_scene(5, 12, 0.0, 3).unwrap();
        let s1 = gen_pose_scene(5, 12, 1.0, 3).unwrap();
        assert_eq!(s0.x_true, s1.x_true);
        assert!(s1.op.residual(&s1.x_true, &s1.b).unwrap().norm() < 1e-12);
        assert!(gen_pose_scene(1, 12, 0.5, 3).is_err());
    }

    #[test]
    fn nrsfm_scene_is_consistent() {
        let s = gen_nrsfm_scene(10, 15, 2, 4).unwrap();
        assert!(rank(&s.x_sharp).unwrap() <= 2);
        assert!(s.op.residual(&s.x_sharp, &s.b).unwrap().norm() < 1e-12);
        for r in s.op.cameras() {
            assert!((r * r.transpose() - nalgebra::Matrix2::identity()).abs().max() < 1e-10);
        }
        assert!(gen_nrsfm_scene(2, 3, 3, 1).is_err());
    }

    #[test]
    fn instance_generation() {
        let spec = InstanceSpec::table1(Pattern::Uniform, 0.3, 0.1, 8);
        let inst = ProblemInstance::generate(&spec).unwrap();
        assert!((inst.missing_fraction() - 0.3).abs() <= 0.01);
        assert_eq!(inst, ProblemInstance::generate(&spec).unwrap());
        assert_eq!(inst.rhs().len(), inst.op().len());
        assert_eq!(inst.meta().generator, GENERATOR_VERSION);
    }

    #[test]
    fn derived_seeds_differ() {
        let a: Vec<u64> = (0..100).map(|i| derive_seed(42, i)).collect();
        let mut b = a.clone();
        b.sort();
        b.dedup();
        assert_eq!(b.len(), 100);
    }
}
