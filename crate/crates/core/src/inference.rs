//! Confidence intervals for a projection `u^T theta*` from the last iterate,
//! the bootstrap replicates or a plug-in covariance, and coverage accounting.
//!
//! Everything takes a single `level` (the target coverage, e.g. 0.95) and
//! uses the tail probabilities `(1 - level) / 2` and `(1 + level) / 2`.

use std::io::Write;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::engine::stream::NoiseStreamKey;
use crate::error::{Error, Result};
use crate::linalg::{max_asymmetry, Mat, Vector};

/// Intervals built from fewer surviving replicates carry a warning flag.
pub const MIN_REPLICATES: usize = 20;

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile: Acklam's rational approximation followed by one
/// Halley step against [`normal_cdf`].
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::OutOfRange(p));
    }
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.383577518672690e2,
        -3.066479806614716e1,
        2.506628277459239,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e1,
        1.615858368580409e2,
        -1.556989798598866e2,
        6.680131188771972e1,
        -1.328068155288572e1,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838,
        -2.549732539343734,
        4.374664141464968,
        2.938163982698783,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-3,
        3.224671290700398e-1,
        2.445134137142996,
        3.754408661907416,
    ];
    let low = 0.02425;
    let x = if p < low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let e = normal_cdf(x) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (x * x / 2.0).exp();
    Ok(x - u / (1.0 + x * u / 2.0))
}

/// Order statistic `x_(k)` with `k = max(1, ceil(q n))`; no interpolation.
pub fn empirical_quantile(samples: &[f64], q: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::OutOfRange(q));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[order_index(q, sorted.len())])
}

fn order_index(q: f64, n: usize) -> usize {
    // guard against q*n landing a hair above an integer
    let qn = q * n as f64;
    let k = (qn - 1e-9 * qn.abs().max(1.0)).ceil().max(1.0) as usize;
    k.min(n) - 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Pe,
    Eq,
    Sdb,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Pe => "PE",
            Method::Eq => "EQ",
            Method::Sdb => "SDB",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lo: f64,
    pub hi: f64,
    pub method: Method,
    pub level: f64,
    #[serde(with = "crate::linalg::flat")]
    pub u: Vector,
    /// Set when fewer than [`MIN_REPLICATES`] replicates were available.
    pub few_replicates: bool,
}

impl ConfidenceInterval {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::OutOfRange(level))
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if eta > 0.0 && eta.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveValue(eta))
    }
}

/// `eta_t^{-1/2} u^T (theta^b - theta_t)` for every finite replicate.
pub fn scaled_deviations(theta_t: &Vector, boot: &[Vector], eta_t: f64, u: &Vector) -> Result<Vec<f64>> {
    check_eta(eta_t)?;
    if u.len() != theta_t.len() {
        return Err(Error::DimensionMismatch {
            what: "projection",
            expected: theta_t.len(),
            found: u.len(),
        });
    }
    let center = u.dot(theta_t);
    let scale = eta_t.sqrt().recip();
    Ok(boot
        .iter()
        .filter(|b| b.iter().all(|x| x.is_finite()))
        .map(|b| (u.dot(b) - center) * scale)
        .collect())
}

fn enough(s: &[f64]) -> Result<()> {
    if s.len() < 2 {
        Err(Error::TooFewPoints { needed: 2, found: s.len() })
    } else {
        Ok(())
    }
}

/// Basic bootstrap interval from empirical quantiles of the scaled deviations.
pub fn eq_interval(theta_t: &Vector, boot: &[Vector], eta_t: f64, u: &Vector, level: f64) -> Result<ConfidenceInterval> {
    check_level(level)?;
    let s = scaled_deviations(theta_t, boot, eta_t, u)?;
    enough(&s)?;
    let q_lo = empirical_quantile(&s, (1.0 - level) / 2.0)?;
    let q_hi = empirical_quantile(&s, (1.0 + level) / 2.0)?;
    let center = u.dot(theta_t);
    let root = eta_t.sqrt();
    Ok(ConfidenceInterval {
        lo: center - root * q_hi,
        hi: center - root * q_lo,
        method: Method::Eq,
        level,
        u: u.clone(),
        few_replicates: s.len() < MIN_REPLICATES,
    })
}

/// Sample standard deviation (denominator `n - 1`).
pub fn sample_sd(s: &[f64]) -> f64 {
    let n = s.len() as f64;
    let mean = s.iter().sum::<f64>() / n;
    (s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Gaussian interval whose scale is the standard deviation of the scaled
/// bootstrap deviations.
pub fn sdb_interval(theta_t: &Vector, boot: &[Vector], eta_t: f64, u: &Vector, level: f64) -> Result<ConfidenceInterval> {
    check_level(level)?;
    let s = scaled_deviations(theta_t, boot, eta_t, u)?;
    enough(&s)?;
    let z = normal_quantile((1.0 + level) / 2.0)?;
    let half = eta_t.sqrt() * z * sample_sd(&s);
    let center = u.dot(theta_t);
    Ok(ConfidenceInterval {
        lo: center - half,
        hi: center + half,
        method: Method::Sdb,
        level,
        u: u.clone(),
        few_replicates: s.len() < MIN_REPLICATES,
    })
}

/// Gaussian interval from a plug-in estimate of the asymptotic covariance.
pub fn pe_interval(theta_t: &Vector, sigma: &Mat, eta_t: f64, u: &Vector, level: f64) -> Result<ConfidenceInterval> {
    check_level(level)?;
    check_eta(eta_t)?;
    let asym = max_asymmetry(sigma);
    if asym > 1e-8 {
        return Err(Error::InvalidCovariance(asym));
    }
    let mut var = (u.transpose() * sigma * u)[(0, 0)];
    if var < 0.0 {
        log::warn!("plug-in variance {var:e} clamped at zero");
        var = 0.0;
    }
    let z = normal_quantile((1.0 + level) / 2.0)?;
    let half = z * eta_t.sqrt() * var.sqrt();
    let center = u.dot(theta_t);
    Ok(ConfidenceInterval {
        lo: center - half,
        hi: center + half,
        method: Method::Pe,
        level,
        u: u.clone(),
        few_replicates: false,
    })
}

/// Euclidean ball in the scaled coordinates `eta_t^{-1/2} (x - theta_t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimultaneousRegion {
    #[serde(with = "crate::linalg::flat")]
    pub center: Vector,
    pub radius: f64,
    /// `eta_t^{1/2}`.
    pub scale: f64,
    pub level: f64,
    pub few_replicates: bool,
}

impl SimultaneousRegion {
    pub fn covers(&self, x: &Vector) -> bool {
        (&self.center - x).norm() / self.scale <= self.radius
    }
}

pub fn sim_region(theta_t: &Vector, boot: &[Vector], eta_t: f64, level: f64) -> Result<SimultaneousRegion> {
    if !(level > 0.0 && level <= 1.0) {
        return Err(Error::OutOfRange(level));
    }
    check_eta(eta_t)?;
    let scale = eta_t.sqrt();
    let norms: Vec<f64> = boot
        .iter()
        .filter(|b| b.iter().all(|x| x.is_finite()))
        .map(|b| (b - theta_t).norm() / scale)
        .collect();
    enough(&norms)?;
    Ok(SimultaneousRegion {
        center: theta_t.clone(),
        radius: empirical_quantile(&norms, level)?,
        scale,
        level,
        few_replicates: norms.len() < MIN_REPLICATES,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageResult {
    pub hits: usize,
    pub trials: usize,
    pub coverage: f64,
    pub std_err: f64,
}

impl CoverageResult {
    pub fn from_counts(hits: usize, trials: usize) -> Result<Self> {
        if trials == 0 {
            return Err(Error::EmptyInput);
        }
        if hits > trials {
            return Err(Error::InvalidArgument(format!("{hits} hits out of {trials} trials")));
        }
        let p = hits as f64 / trials as f64;
        Ok(CoverageResult {
            hits,
            trials,
            coverage: p,
            std_err: (p * (1.0 - p) / trials as f64).sqrt(),
        })
    }
}

/// Fraction of `(interval, truth)` pairs whose interval contains the truth.
pub fn coverage<'a>(results: impl IntoIterator<Item = (&'a ConfidenceInterval, f64)>) -> Result<CoverageResult> {
    let (mut hits, mut trials) = (0, 0);
    for (ci, truth) in results {
        trials += 1;
        hits += usize::from(ci.contains(truth));
    }
    CoverageResult::from_counts(hits, trials)
}

/// Coverage of simultaneous regions against a vector truth.
pub fn region_coverage<'a>(results: impl IntoIterator<Item = (&'a SimultaneousRegion, &'a Vector)>) -> Result<CoverageResult> {
    let (mut hits, mut trials) = (0, 0);
    for (r, truth) in results {
        trials += 1;
        hits += usize::from(r.covers(truth));
    }
    CoverageResult::from_counts(hits, trials)
}

/// Uniformly distributed unit vector drawn from the environment channel.
pub fn random_projection(seed: u64, dim: usize) -> Vector {
    let mut stream = NoiseStreamKey::env(seed, 0x7072_6f6a, 0).stream();
    loop {
        let v = Vector::from_fn(dim, |_, _| StandardNormal.sample(&mut stream));
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Stable 64-bit digest of a projection's bit pattern.
pub fn projection_hash(u: &Vector) -> u64 {
    u.iter().fold(0x6a09_e667_f3bc_c908u64, |h, x| {
        let mut z = (h ^ x.to_bits()).wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    })
}

/// One row of the interval export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRecord {
    pub trajectory: usize,
    pub t: usize,
    pub method: String,
    pub level: f64,
    pub u_hash: u64,
    pub lo: f64,
    pub hi: f64,
    pub covered: bool,
}

impl IntervalRecord {
    pub fn new(trajectory: usize, t: usize, ci: &ConfidenceInterval, truth: f64) -> Self {
        IntervalRecord {
            trajectory,
            t,
            method: ci.method.name().to_string(),
            level: ci.level,
            u_hash: projection_hash(&ci.u),
            lo: ci.lo,
            hi: ci.hi,
            covered: ci.contains(truth),
        }
    }
}

/// CSV with columns `trajectory,T,method,level,u_hash,lo,hi,covered`.
pub fn write_interval_csv<W: Write>(mut w: W, records: &[IntervalRecord]) -> std::io::Result<()> {
    writeln!(w, "trajectory,T,method,level,u_hash,lo,hi,covered")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{:016x},{:e},{:e},{}",
            r.trajectory,
            r.t,
            r.method,
            r.level,
            r.u_hash,
            r.lo,
            r.hi,
            u8::from(r.covered)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v1(x: f64) -> Vector {
        Vector::from_element(1, x)
    }

    fn cloud(xs: &[f64]) -> Vec<Vector> {
        xs.iter().map(|&x| v1(x)).collect()
    }

    #[test]
    fn quantile_reference_values() {
        assert_eq!(normal_quantile(0.5).unwrap(), 0.0);
        // limited by the accuracy of erfc (about 1e-12 near 1.96)
        let z = normal_quantile(0.975).unwrap();
        assert!((z - 1.959_963_984_540_054).abs() < 1e-10, "{z:.17}");
        assert!((normal_quantile(0.025).unwrap() + 1.959_963_984_540_054).abs() < 1e-10);
        assert!(normal_quantile(0.0).is_err() && normal_quantile(1.0).is_err());
    }

    #[test]
    fn quantile_round_trip() {
        for k in 1..=99 {
            let p = k as f64 / 100.0;
            assert!((normal_cdf(normal_quantile(p).unwrap()) - p).abs() < 1e-8, "p={p}");
        }
        for p in [1e-10, 1e-5, 0.01, 0.99, 1.0 - 1e-6] {
            let x = normal_quantile(p).unwrap();
            assert!((normal_cdf(x) - p).abs() <= 1e-8 * p.max(1e-8).min(1.0), "p={p}");
        }
    }

    #[test]
    fn order_statistics() {
        assert_eq!(empirical_quantile(&[1.0, 2.0, 3.0, 4.0], 0.5).unwrap(), 2.0);
        assert_eq!(empirical_quantile(&[3.0, 1.0, 4.0, 2.0], 1.0).unwrap(), 4.0);
        assert_eq!(empirical_quantile(&[3.0, 1.0, 4.0, 2.0], 0.0).unwrap(), 1.0);
        for q in [0.0, 0.3, 0.99, 1.0] {
            assert_eq!(empirical_quantile(&[7.5; 5], q).unwrap(), 7.5);
        }
        assert!(matches!(empirical_quantile(&[], 0.5), Err(Error::EmptySamples)));
        // 0.975 * 40 = 39 exactly in real arithmetic
        let xs: Vec<f64> = (1..=40).map(f64::from).collect();
        assert_eq!(empirical_quantile(&xs, 0.975).unwrap(), 39.0);
    }

    #[test]
    fn eq_hand_case() {
        let ci = eq_interval(&v1(0.0), &cloud(&[-2.0, -1.0, 1.0, 2.0]), 1.0, &v1(1.0), 0.5).unwrap();
        assert_eq!((ci.lo, ci.hi), (-1.0, 2.0));
        assert!(ci.few_replicates);
    }

    #[test]
    fn degenerate_replicates() {
        let theta = Vector::from_vec(vec![0.3, -0.2]);
        let boot = vec![theta.clone(); 30];
        let u = Vector::from_vec(vec![0.6, 0.8]);
        let eq = eq_interval(&theta, &boot, 0.01, &u, 0.95).unwrap();
        assert_eq!(eq.lo, eq.hi);
        assert!(eq.contains(u.dot(&theta)));
        assert!(!eq.contains(u.dot(&theta) + 1e-9));
        let sdb = sdb_interval(&theta, &boot, 0.01, &u, 0.95).unwrap();
        assert_eq!(sdb.width(), 0.0);
        let r = sim_region(&theta, &boot, 0.01, 0.95).unwrap();
        assert_eq!(r.radius, 0.0);
        assert!(r.covers(&theta));
        assert!(!r.covers(&(&theta + Vector::from_vec(vec![1e-6, 0.0]))));
    }

    #[test]
    fn sdb_two_point() {
        let c = 0.7;
        let ci = sdb_interval(&v1(1.0), &cloud(&[1.0 - c, 1.0 + c]), 1.0, &v1(1.0), 0.95).unwrap();
        let z = normal_quantile(0.975).unwrap();
        assert!((ci.width() - 2.0 * z * c * 2f64.sqrt()).abs() < 1e-12);
        assert!((z - 1.96).abs() < 1e-3);
    }

    #[test]
    fn pe_examples() {
        let ci = pe_interval(&v1(0.0), &Mat::from_element(1, 1, 0.5), 0.04, &v1(1.0), 0.95).unwrap();
        let expected = normal_quantile(0.975).unwrap() * 0.2 * 0.5f64.sqrt();
        assert!((ci.hi - expected).abs() < 1e-12);
        assert!((ci.hi - 0.27718).abs() < 1e-4);
        let z = pe_interval(&v1(3.0), &Mat::zeros(1, 1), 0.04, &v1(1.0), 0.95).unwrap();
        assert_eq!(z.width(), 0.0);
        let theta = Vector::from_vec(vec![0.5, 1.0]);
        let sigma = Mat::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let u = Vector::from_vec(vec![0.3, -0.4]);
        let a = pe_interval(&theta, &sigma, 0.1, &u, 0.9).unwrap();
        let b = pe_interval(&theta, &sigma, 0.1, &(&u * 2.5), 0.9).unwrap();
        assert!((b.lo - 2.5 * a.lo).abs() < 1e-12 && (b.hi - 2.5 * a.hi).abs() < 1e-12);
        let skew = Mat::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(matches!(pe_interval(&theta, &skew, 0.1, &u, 0.9), Err(Error::InvalidCovariance(_))));
    }

    #[test]
    fn sim_hand_case() {
        let boot = cloud(&[1.0, -2.0, 3.0, -4.0]);
        let r = sim_region(&v1(0.0), &boot, 1.0, 0.5).unwrap();
        assert_eq!(r.radius, 2.0);
        assert_eq!(sim_region(&v1(0.0), &boot, 1.0, 1.0).unwrap().radius, 4.0);
    }

    #[test]
    fn coverage_counts() {
        let ci = ConfidenceInterval {
            lo: -1.0,
            hi: 1.0,
            method: Method::Eq,
            level: 0.95,
            u: v1(1.0),
            few_replicates: false,
        };
        let all = coverage(std::iter::repeat_n((&ci, 0.0), 10)).unwrap();
        assert_eq!((all.coverage, all.std_err), (1.0, 0.0));
        let r = CoverageResult::from_counts(768, 1024).unwrap();
        assert_eq!(r.coverage, 0.75);
        assert!((r.std_err - 0.0135).abs() < 1e-4);
        assert!(matches!(coverage(std::iter::empty()), Err(Error::EmptyInput)));
        let one = coverage([(&ci, 5.0)]).unwrap();
        assert_eq!((one.coverage, one.std_err), (0.0, 0.0));
    }

    #[test]
    fn non_finite_replicates_are_dropped() {
        let mut boot = cloud(&[1.0, 2.0, 3.0]);
        boot.push(v1(f64::NAN));
        let s = scaled_deviations(&v1(0.0), &boot, 1.0, &v1(1.0)).unwrap();
        assert_eq!(s.len(), 3);
    }

    #[test]
    fn gaussian_cloud_widths_agree() {
        let mut stream = NoiseStreamKey::env(5, 1, 0).stream();
        let xs: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut stream)).collect();
        let boot = cloud(&xs);
        let eq = eq_interval(&v1(0.0), &boot, 1.0, &v1(1.0), 0.95).unwrap();
        let sdb = sdb_interval(&v1(0.0), &boot, 1.0, &v1(1.0), 0.95).unwrap();
        assert!((eq.width() / sdb.width() - 1.0).abs() < 0.1);
    }

    #[test]
    fn projection_is_unit_and_reproducible() {
        let u = random_projection(9, 5);
        assert!((u.norm() - 1.0).abs() < 1e-14);
        assert_eq!(u, random_projection(9, 5));
        assert_ne!(projection_hash(&u), projection_hash(&random_projection(10, 5)));
    }

    #[test]
    fn interval_csv_layout() {
        let ci = eq_interval(&v1(0.0), &cloud(&[-2.0, -1.0, 1.0, 2.0]), 1.0, &v1(1.0), 0.5).unwrap();
        let mut buf = Vec::new();
        write_interval_csv(&mut buf, &[IntervalRecord::new(3, 100, &ci, 0.5)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "trajectory,T,method,level,u_hash,lo,hi,covered");
        assert!(lines.next().unwrap().starts_with("3,100,EQ,0.5,"));
    }

    proptest! {
        #[test]
        fn shift_equivariance(xs in prop::collection::vec(-5.0f64..5.0, 3..40), kappa in -10.0f64..10.0, level in 0.05f64..0.99) {
            let theta = v1(0.25);
            let boot = cloud(&xs);
            let shifted: Vec<Vector> = xs.iter().map(|x| v1(x + kappa)).collect();
            let u = v1(1.0);
            let eq0 = eq_interval(&theta, &boot, 0.3, &u, level).unwrap();
            let eq1 = eq_interval(&v1(0.25 + kappa), &shifted, 0.3, &u, level).unwrap();
            prop_assert!((eq1.lo - eq0.lo - kappa).abs() < 1e-9 && (eq1.hi - eq0.hi - kappa).abs() < 1e-9);
            let s0 = sdb_interval(&theta, &boot, 0.3, &u, level).unwrap();
            let s1 = sdb_interval(&v1(0.25 + kappa), &shifted, 0.3, &u, level).unwrap();
            prop_assert!((s1.lo - s0.lo - kappa).abs() < 1e-9 && (s1.hi - s0.hi - kappa).abs() < 1e-9);
        }

        #[test]
        fn nested_levels(xs in prop::collection::vec(-5.0f64..5.0, 3..40), l1 in 0.05f64..0.99, l2 in 0.05f64..0.99) {
            let (small, large) = if l1 <= l2 { (l1, l2) } else { (l2, l1) };
            let boot = cloud(&xs);
            let u = v1(1.0);
            let a = eq_interval(&v1(0.0), &boot, 1.0, &u, small).unwrap();
            let b = eq_interval(&v1(0.0), &boot, 1.0, &u, large).unwrap();
            prop_assert!(b.lo <= a.lo && a.hi <= b.hi);
            let sa = sdb_interval(&v1(0.0), &boot, 1.0, &u, small).unwrap();
            let sb = sdb_interval(&v1(0.0), &boot, 1.0, &u, large).unwrap();
            prop_assert!(sa.width() <= sb.width());
        }

        #[test]
        fn coverage_is_permutation_invariant(hits in prop::collection::vec(any::<bool>(), 1..50), rot in 0usize..50) {
            let inside = ConfidenceInterval { lo: 0.0, hi: 1.0, method: Method::Pe, level: 0.9, u: v1(1.0), few_replicates: false };
            let truths: Vec<f64> = hits.iter().map(|&h| if h { 0.5 } else { 2.0 }).collect();
            let mut rotated = truths.clone();
            rotated.rotate_left(rot % truths.len());
            let a = coverage(truths.iter().map(|&t| (&inside, t))).unwrap();
            let b = coverage(rotated.iter().map(|&t| (&inside, t))).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
