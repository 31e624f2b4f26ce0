//! Monte Carlo checks of the quadratic-form moment and probability bounds,
//! and the Lindeberg functional.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    bilinear_real, frobenius_sq, BoundCheckReport, ComplexTestMatrix, FamilyKind, TestMatrixFamily,
    TruncationLevel,
};
use crate::ensembles::{CovarianceModel, EntryLaw, EntrySampler, ScalarLaw};
use crate::linalg::RectMatrix;
use crate::quadrature::integrate;
use crate::rng::SeededRng;
use crate::stats::{mean_se, MeanSe};
use crate::{Complex64, Error, Result};

/// Number of standard errors allowed in every pass rule.
pub const SIGMA_MULTIPLIER: f64 = 3.0;

const DOMAIN_PROP1: u64 = 0x5031;
const DOMAIN_T5: u64 = 0x5435;
const DOMAIN_SCALING: u64 = 0x5432;
const DOMAIN_T6: u64 = 0x5436;

fn replica_values(
    seed: u64,
    domain: u64,
    replicas: usize,
    f: impl Fn(&mut SeededRng) -> f64 + Sync,
) -> Vec<f64> {
    (0..replicas)
        .into_par_iter()
        .map(|r| f(&mut SeededRng::for_path(seed, &[domain, r as u64])))
        .collect()
}

fn check_replicas(replicas: usize) -> Result<()> {
    if replicas < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 replicas, got {replicas}"
        )));
    }
    Ok(())
}

/// `P(|z^T A z - tr(Sigma A)| > eps p)` for Gaussian-companion vectors
/// against `E min{16 M^2 tr(Sigma^2) / (eps p)^2, 1}`.
pub fn prop1_bound_check(
    covariance: &CovarianceModel,
    a: &ComplexTestMatrix,
    m_bound: f64,
    eps: f64,
    replicas: usize,
    seed: u64,
) -> Result<BoundCheckReport> {
    check_replicas(replicas)?;
    let p = a.dim();
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "eps must be positive, got {eps}"
        )));
    }
    let norm = a.spectral_norm();
    if !(m_bound >= norm * (1.0 - 1e-12)) {
        return Err(Error::InvalidParameter(format!(
            "M = {m_bound} is below ||A|| = {norm}"
        )));
    }
    let covs = covariance.sampler(p)?;
    let threshold = eps * p as f64;
    let m2 = 16.0 * m_bound * m_bound;
    let draws: Vec<(bool, f64)> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = SeededRng::for_path(seed, &[DOMAIN_PROP1, r as u64]);
            let sigma = covs.draw(&mut rng);
            let w: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
            let z = sigma.apply_root(&w);
            let re = a.re.quadratic_form(&z) - sigma.trace_with(&a.re);
            let im = a.im.quadratic_form(&z) - sigma.trace_with(&a.im);
            let exceed = Complex64::new(re, im).norm() > threshold;
            (
                exceed,
                (m2 * sigma.trace_sq() / (threshold * threshold)).min(1.0),
            )
        })
        .collect();
    let hits = draws.iter().filter(|d| d.0).count() as u64;
    let rhs: Vec<f64> = draws.iter().map(|d| d.1).collect();
    let rhs = mean_se(&rhs);
    let instance = format!(
        "p={p} eps={eps} M={m_bound:.6} cov={}",
        serde_json::to_string(covariance)?
    );
    Ok(BoundCheckReport::from_frequency(
        "prop1",
        instance,
        hits,
        replicas as u64,
        rhs.mean,
        rhs.se,
        SIGMA_MULTIPLIER,
    ))
}

/// One instance of the probability-bound battery.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prop1Instance {
    pub p: usize,
    pub covariance: CovarianceModel,
    pub family: TestMatrixFamily,
    pub eps: f64,
    /// Draw an imaginary part as well.
    pub complex: bool,
}

impl Prop1Instance {
    /// Builds the test matrix from `seed` and runs the check with `M = ||A||`.
    pub fn run(&self, replicas: usize, seed: u64) -> Result<BoundCheckReport> {
        let mut rng = SeededRng::for_path(seed, &[DOMAIN_PROP1, u64::MAX]);
        let a = if self.complex {
            ComplexTestMatrix::from_family(&self.family, self.p, &mut rng)?
        } else {
            ComplexTestMatrix::real(self.family.generate(self.p, &mut rng)?)
        };
        let m = a.spectral_norm();
        let mut report = prop1_bound_check(&self.covariance, &a, m, self.eps, replicas, seed)?;
        report.instance = format!(
            "{} family={}{}",
            report.instance,
            self.family.tag(),
            if self.complex { " complex" } else { "" }
        );
        Ok(report)
    }
}

/// The fixed 50-instance battery: four sizes, five covariance models, five
/// matrix families, three thresholds, real and complex matrices.
pub fn prop1_battery() -> Vec<Prop1Instance> {
    let sizes = [8usize, 16, 32, 64];
    let covariances = [
        CovarianceModel::Identity {},
        CovarianceModel::ScalarRandom {
            law: ScalarLaw::Exponential { rate: 1.0 },
        },
        CovarianceModel::RandomDiagonal {
            law: ScalarLaw::Uniform {
                low: 0.5,
                high: 1.5,
            },
        },
        CovarianceModel::ScalarRandom {
            law: ScalarLaw::ChiSquared { dof: 1.0 },
        },
        CovarianceModel::RandomDiagonal {
            law: ScalarLaw::Exponential { rate: 2.0 },
        },
    ];
    let kinds = [
        FamilyKind::Identity {},
        FamilyKind::RandomProjection { rank: 3 },
        FamilyKind::Banded { width: 2 },
        FamilyKind::DiagonalBounded {},
        FamilyKind::RotatedDiagonal {},
    ];
    let eps = [0.1, 0.25, 0.5];
    (0..50)
        .map(|i| Prop1Instance {
            p: sizes[i % 4],
            covariance: covariances[(i / 2) % 5].clone(),
            family: TestMatrixFamily {
                kind: kinds[i % 5].clone(),
                norm_bound: 1.0 + (i % 3) as f64,
            },
            eps: eps[(i / 4) % 3],
            complex: i % 2 == 1,
        })
        .collect()
}

fn check_zero_diagonal(a: &RectMatrix) -> Result<()> {
    if a.rows() != a.cols() {
        return Err(Error::DimensionMismatch(format!(
            "A must be square, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if let Some(k) = (0..a.rows()).find(|&k| a.get(k, k) != 0.0) {
        return Err(Error::InvalidTestMatrix(format!(
            "A must have zero diagonal, a[{k}][{k}] = {}",
            a.get(k, k)
        )));
    }
    Ok(())
}

/// `E|X^T A X|^2 <= 2 M^2 tr(A A^T)` for i.i.d. unit-variance entries,
/// which form an MDS with conditional second moment 1.
pub fn moment_check_t5(
    law: &EntryLaw,
    a: &RectMatrix,
    m_bound: f64,
    replicas: usize,
    seed: u64,
) -> Result<BoundCheckReport> {
    check_replicas(replicas)?;
    check_zero_diagonal(a)?;
    if !(m_bound >= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "unit-variance entries have conditional second moment 1, M = {m_bound} is too small"
        )));
    }
    let p = a.rows();
    let sampler = law.sampler(p)?;
    let values = replica_values(seed, DOMAIN_T5, replicas, |rng| {
        let mut x = vec![0.0; p];
        sampler.fill(rng, &mut x);
        bilinear_real(&x, a, &x).powi(2)
    });
    let rhs = 2.0 * m_bound * m_bound * frobenius_sq(a);
    let instance = format!("p={p} law={} M={m_bound}", serde_json::to_string(law)?);
    Ok(BoundCheckReport::from_mean(
        "t5",
        instance,
        mean_se(&values),
        rhs,
        0.0,
        SIGMA_MULTIPLIER,
    ))
}

/// Exact `E|X^T A X|^2` for Rademacher entries and zero-diagonal `A`:
/// `sum_{i<j} (a_ij + a_ji)^2`.
pub fn rademacher_t5_exact(a: &RectMatrix) -> Result<f64> {
    check_zero_diagonal(a)?;
    let p = a.rows();
    let mut acc = 0.0;
    for i in 0..p {
        for j in i + 1..p {
            acc += (a.get(i, j) + a.get(j, i)).powi(2);
        }
    }
    Ok(acc)
}

/// Zero-diagonal matrices of the Rademacher battery: 25 symmetric (where
/// the bound is attained) followed by 25 non-symmetric.
pub fn t5_battery(seed: u64) -> Result<Vec<RectMatrix>> {
    let sizes = [2usize, 5, 10, 20, 50];
    let mut out = Vec::with_capacity(50);
    for i in 0..50 {
        let p = sizes[i % 5];
        let mut rng = SeededRng::for_path(seed, &[DOMAIN_T5, 1 << 32 | i as u64]);
        let g = RectMatrix::from_fn(p, p, |r, c| {
            if r == c {
                0.0
            } else {
                rng.sample::<f64, _>(StandardNormal)
            }
        })?;
        let a = if i < 25 {
            RectMatrix::from_fn(p, p, |r, c| 0.5 * (g.get(r, c) + g.get(c, r)))?
        } else {
            g
        };
        out.push(a);
    }
    Ok(out)
}

/// One ratio statistic tracked across sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatisticTrend {
    pub name: String,
    pub sizes: Vec<usize>,
    pub ratios: Vec<MeanSe>,
    pub max_ratio: f64,
    /// Largest-size ratio over smallest-size ratio.
    pub growth: f64,
    pub pass: bool,
}

impl StatisticTrend {
    fn new(name: &str, sizes: &[usize], ratios: Vec<MeanSe>) -> Self {
        let max_ratio = ratios.iter().map(|r| r.mean).fold(0.0, f64::max);
        let first = ratios.first().map_or(0.0, |r| r.mean);
        let last = ratios.last().map_or(0.0, |r| r.mean);
        let (growth, pass) = if first == 0.0 {
            (if last == 0.0 { 1.0 } else { f64::INFINITY }, last == 0.0)
        } else {
            (last / first, last <= 2.0 * first)
        };
        Self {
            name: name.to_string(),
            sizes: sizes.to_vec(),
            ratios,
            max_ratio,
            growth,
            pass,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub theorem: String,
    pub law: EntryLaw,
    pub replicas: usize,
    pub statistics: Vec<StatisticTrend>,
    pub pass: bool,
}

fn gaussian_vector(p: usize, rng: &mut SeededRng) -> Vec<f64> {
    (0..p).map(|_| rng.sample(StandardNormal)).collect()
}

fn sample_ratio(
    sampler: &EntrySampler,
    p: usize,
    replicas: usize,
    seed: u64,
    tag: u64,
    f: impl Fn(&[f64]) -> f64 + Sync,
) -> MeanSe {
    let values = replica_values(
        seed,
        DOMAIN_SCALING ^ (tag << 20) ^ ((p as u64) << 32),
        replicas,
        |rng| {
            let mut x = vec![0.0; p];
            sampler.fill(rng, &mut x);
            f(&x)
        },
    );
    mean_se(&values)
}

/// `E|X^T a|^4 / ||a||^4`.
pub fn linear_fourth_ratio(
    law: &EntryLaw,
    a: &[f64],
    replicas: usize,
    seed: u64,
) -> Result<MeanSe> {
    check_replicas(replicas)?;
    let p = a.len();
    law.fourth_moment(p)?;
    let norm2: f64 = a.iter().map(|v| v * v).sum();
    if norm2 == 0.0 {
        return Err(Error::InvalidParameter(
            "direction a must be non-zero".into(),
        ));
    }
    let sampler = law.sampler(p)?;
    Ok(sample_ratio(&sampler, p, replicas, seed, 1, |x| {
        let s: f64 = x.iter().zip(a).map(|(u, v)| u * v).sum();
        s.powi(4) / (norm2 * norm2)
    }))
}

/// `E|X^T A X|^2 / tr(A A^T)` for zero-diagonal `A`.
pub fn offdiag_ratio(law: &EntryLaw, a: &RectMatrix, replicas: usize, seed: u64) -> Result<MeanSe> {
    check_replicas(replicas)?;
    check_zero_diagonal(a)?;
    law.fourth_moment(a.rows())?;
    let denom = frobenius_sq(a);
    if denom == 0.0 {
        return Ok(MeanSe {
            mean: 0.0,
            se: 0.0,
            count: replicas,
        });
    }
    let sampler = law.sampler(a.rows())?;
    Ok(sample_ratio(&sampler, a.rows(), replicas, seed, 2, |x| {
        bilinear_real(x, a, x).powi(2) / denom
    }))
}

/// `E|X^T B X - tr B|^2 / tr(B B^T)`.
pub fn centered_ratio(
    law: &EntryLaw,
    b: &RectMatrix,
    replicas: usize,
    seed: u64,
) -> Result<MeanSe> {
    check_replicas(replicas)?;
    if b.rows() != b.cols() {
        return Err(Error::DimensionMismatch("B must be square".into()));
    }
    law.fourth_moment(b.rows())?;
    let denom = frobenius_sq(b);
    if denom == 0.0 {
        return Ok(MeanSe {
            mean: 0.0,
            se: 0.0,
            count: replicas,
        });
    }
    let tr: f64 = (0..b.rows()).map(|k| b.get(k, k)).sum();
    let sampler = law.sampler(b.rows())?;
    Ok(sample_ratio(&sampler, b.rows(), replicas, seed, 3, |x| {
        (bilinear_real(x, b, x) - tr).powi(2) / denom
    }))
}

/// Ratio statistics of the fourth-moment bounds across `sizes`; the
/// unspecified constant is checked by requiring no growth.
pub fn moment_check_t1_t2_scaling(
    law: &EntryLaw,
    sizes: &[usize],
    replicas: usize,
    seed: u64,
) -> Result<ScalingReport> {
    if sizes.len() < 2 {
        return Err(Error::InvalidParameter("need at least two sizes".into()));
    }
    law.validate()?;
    let mut linear = Vec::new();
    let mut offdiag = Vec::new();
    let mut centered = Vec::new();
    for &p in sizes {
        law.fourth_moment(p)?;
        let mut rng = SeededRng::for_path(seed, &[DOMAIN_SCALING, p as u64]);
        let a = gaussian_vector(p, &mut rng);
        let g = RectMatrix::from_fn(p, p, |r, c| {
            if r == c {
                0.0
            } else {
                rng.sample::<f64, _>(StandardNormal)
            }
        })?;
        let b = RectMatrix::from_fn(p, p, |_, _| rng.sample::<f64, _>(StandardNormal))?;
        linear.push(linear_fourth_ratio(law, &a, replicas, seed)?);
        offdiag.push(offdiag_ratio(law, &g, replicas, seed)?);
        centered.push(centered_ratio(law, &b, replicas, seed)?);
    }
    let statistics = vec![
        StatisticTrend::new("linear_fourth", sizes, linear),
        StatisticTrend::new("offdiag_quadratic", sizes, offdiag),
        StatisticTrend::new("centered_quadratic", sizes, centered),
    ];
    let pass = statistics.iter().all(|s| s.pass);
    Ok(ScalingReport {
        theorem: "t1_t2".into(),
        law: law.clone(),
        replicas,
        statistics,
        pass,
    })
}

/// Two-sided tail moment `E X^k 1(|X| > t)` of the unit-variance Student t law.
fn student_tail_moment(nu: f64, t: f64, k: i32) -> f64 {
    let c = ((nu - 2.0) / nu).sqrt();
    let log_norm = libm::lgamma(0.5 * (nu + 1.0))
        - libm::lgamma(0.5 * nu)
        - 0.5 * (nu * std::f64::consts::PI).ln();
    let density = |x: f64| (log_norm - 0.5 * (nu + 1.0) * (1.0 + x * x / nu).ln()).exp();
    let g = |x: f64| (c * x).powi(k) * density(x);
    let lo = t.max(0.0) / c;
    let split = lo.max(1.0);
    let head = if split > lo {
        integrate(g, lo, split, 1e-13)
    } else {
        0.0
    };
    // x = split / u maps the infinite tail onto (0, 1]
    let tail = integrate(|u: f64| g(split / u) * split / (u * u), 0.0, 1.0, 1e-13);
    2.0 * (head + tail)
}

fn gaussian_upper_tail(t: f64) -> f64 {
    0.5 * libm::erfc(t / std::f64::consts::SQRT_2)
}

fn gaussian_density(t: f64) -> f64 {
    (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `E X^2 1(|X| > eps sqrt p)`, which for identically distributed entries
/// equals the Lindeberg functional `(1/p) sum_k E X_k^2 1(|X_k| > eps sqrt p)`.
pub fn lindeberg_check(law: &EntryLaw, eps: f64, p: usize) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "eps must be positive, got {eps}"
        )));
    }
    law.validate()?;
    let t = eps * (p as f64).sqrt();
    Ok(match *law {
        EntryLaw::Rademacher {} => f64::from(u8::from(t < 1.0)),
        EntryLaw::StandardNormal {} => 2.0 * (t * gaussian_density(t) + gaussian_upper_tail(t)),
        EntryLaw::TwoPointHeavy { scale, exponent } => {
            let q = EntryLaw::two_point_q(scale, exponent, p);
            f64::from(u8::from(1.0 / q.sqrt() > t))
        }
        EntryLaw::StudentT { nu } => student_tail_moment(nu, t, 2),
    })
}

/// `L(b) = E|X^2 - 1| 1(|X^2 - 1| > b^2)`.
pub fn truncated_tail(law: &EntryLaw, b: TruncationLevel, p: usize) -> Result<f64> {
    law.validate()?;
    let b2 = b.value() * b.value();
    // b > 1 makes X^2 < 1 irrelevant, so the event is X^2 > 1 + b^2
    let s = (1.0 + b2).sqrt();
    Ok(match *law {
        EntryLaw::Rademacher {} => 0.0,
        EntryLaw::StandardNormal {} => 2.0 * s * gaussian_density(s),
        EntryLaw::TwoPointHeavy { scale, exponent } => {
            let q = EntryLaw::two_point_q(scale, exponent, p);
            if 1.0 / q - 1.0 > b2 {
                1.0 - q
            } else {
                0.0
            }
        }
        EntryLaw::StudentT { nu } => student_tail_moment(nu, s, 2) - student_tail_moment(nu, s, 0),
    })
}

/// `b sqrt(tr(A A^T)) + sum_k |a_kk| L(b)`.
pub fn t6_structure(a: &RectMatrix, law: &EntryLaw, b: TruncationLevel) -> Result<f64> {
    if a.rows() != a.cols() {
        return Err(Error::DimensionMismatch("A must be square".into()));
    }
    let diag: f64 = (0..a.rows()).map(|k| a.get(k, k).abs()).sum();
    Ok(b.value() * frobenius_sq(a).sqrt() + diag * truncated_tail(law, b, a.rows())?)
}

/// Monte Carlo `E|X^T A X - tr A|`.
pub fn t6_lhs(law: &EntryLaw, a: &RectMatrix, replicas: usize, seed: u64) -> Result<MeanSe> {
    check_replicas(replicas)?;
    if a.rows() != a.cols() {
        return Err(Error::DimensionMismatch("A must be square".into()));
    }
    let p = a.rows();
    let tr: f64 = (0..p).map(|k| a.get(k, k)).sum();
    let sampler = law.sampler(p)?;
    let values = replica_values(seed, DOMAIN_T6 ^ ((p as u64) << 32), replicas, |rng| {
        let mut x = vec![0.0; p];
        sampler.fill(rng, &mut x);
        (bilinear_real(&x, a, &x) - tr).abs()
    });
    Ok(mean_se(&values))
}

/// `E|X^T A X - tr A| <= C * structure` for a supplied constant `C`.
pub fn moment_check_t6(
    law: &EntryLaw,
    a: &RectMatrix,
    b: TruncationLevel,
    constant: f64,
    replicas: usize,
    seed: u64,
) -> Result<BoundCheckReport> {
    let lhs = t6_lhs(law, a, replicas, seed)?;
    let rhs = constant * t6_structure(a, law, b)?;
    let instance = format!(
        "p={} b={} C={constant} law={}",
        a.rows(),
        b.value(),
        serde_json::to_string(law)?
    );
    Ok(BoundCheckReport::from_mean(
        "t6",
        instance,
        lhs,
        rhs,
        0.0,
        SIGMA_MULTIPLIER,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct T6ScalingReport {
    pub law: EntryLaw,
    pub b: f64,
    pub trend: StatisticTrend,
    /// Twice the calibration-size ratio.
    pub fitted_constant: f64,
    pub checks: Vec<BoundCheckReport>,
    pub pass: bool,
}

/// Calibrates the constant at the smallest size, then checks the bound and
/// the ratio trend at every size. Test matrices are Gaussian with a
/// non-zero diagonal so both terms of the structure are exercised.
pub fn moment_check_t6_scaling(
    law: &EntryLaw,
    sizes: &[usize],
    b: TruncationLevel,
    replicas: usize,
    seed: u64,
) -> Result<T6ScalingReport> {
    if sizes.len() < 2 {
        return Err(Error::InvalidParameter("need at least two sizes".into()));
    }
    let mut mats = Vec::new();
    let mut ratios = Vec::new();
    for &p in sizes {
        let mut rng = SeededRng::for_path(seed, &[DOMAIN_T6, p as u64]);
        let g = RectMatrix::from_fn(p, p, |_, _| rng.sample::<f64, _>(StandardNormal))?;
        let a = RectMatrix::from_fn(p, p, |r, c| 0.5 * (g.get(r, c) + g.get(c, r)))?;
        let lhs = t6_lhs(law, &a, replicas, seed)?;
        let s = t6_structure(&a, law, b)?;
        ratios.push(MeanSe {
            mean: lhs.mean / s,
            se: lhs.se / s,
            count: lhs.count,
        });
        mats.push(a);
    }
    let fitted_constant = 2.0 * ratios[0].mean;
    let checks = mats
        .iter()
        .map(|a| moment_check_t6(law, a, b, fitted_constant, replicas, seed))
        .collect::<Result<Vec<_>>>()?;
    let trend = StatisticTrend::new("t6_ratio", sizes, ratios);
    let pass = trend.pass && checks.iter().all(|c| c.pass);
    Ok(T6ScalingReport {
        law: law.clone(),
        b: b.value(),
        trend,
        fitted_constant,
        checks,
        pass,
    })
}
