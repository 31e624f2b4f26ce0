//! Both sides of the resolvent inequalities, evaluated by dense linear
//! algebra on concrete instances, plus a seeded fuzzer.
//!
//! Throughout `R = (C - zI)^-1` and `v = Im z`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::{
    complex_spectral_norm, complexify, resolvent, smw_rankq_trace, sym_eigenvalues, RectMatrix,
    SymMatrix, UpperHalfPoint,
};
use crate::rng::SeededRng;
use crate::{Complex64, Error, Result};

/// Relative tolerance on margins.
pub const MARGIN_TOLERANCE: f64 = 1e-10;
/// Relative tolerance of the Woodbury cross-check inside L7.
pub const SMW_TOLERANCE: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LemmaId {
    L0,
    L1,
    L3,
    L4,
    L5,
    L6,
    L7,
    L9,
    L10,
}

impl LemmaId {
    pub const ALL: [LemmaId; 9] = [
        LemmaId::L0,
        LemmaId::L1,
        LemmaId::L3,
        LemmaId::L4,
        LemmaId::L5,
        LemmaId::L6,
        LemmaId::L7,
        LemmaId::L9,
        LemmaId::L10,
    ];

    fn index(self) -> u64 {
        LemmaId::ALL
            .iter()
            .position(|l| *l == self)
            .expect("listed") as u64
    }
}

impl fmt::Display for LemmaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl std::str::FromStr for LemmaId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LemmaId::ALL
            .iter()
            .copied()
            .find(|l| l.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown lemma id {s:?}")))
    }
}

/// Inputs of one inequality. `C` and `Sigma` must be PSD where required.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "lemma", deny_unknown_fields)]
pub enum LemmaInstance {
    /// `||R|| <= 1/v`.
    L0 { c: SymMatrix, z: UpperHalfPoint },
    /// `|w^T R^2 w| / |1 + w^T R w| <= 1/v`; `C` need only be symmetric.
    L1 {
        c: SymMatrix,
        w: Vec<f64>,
        z: UpperHalfPoint,
    },
    /// `|z1/(1+w1) - z2/(1+w2)| <= gamma (M/delta + 4/min{delta^2, 2 delta} + 2/delta^2)`.
    L3 {
        z1: Complex64,
        z2: Complex64,
        w1: Complex64,
        w2: Complex64,
        gamma: f64,
        delta: f64,
        m: f64,
    },
    /// `|1 + tr(Sigma R)| >= v/|z|`.
    L4 {
        c: SymMatrix,
        sigma: SymMatrix,
        z: UpperHalfPoint,
    },
    /// `||(I + U^T R U)^-1|| <= |z|/v`.
    L5 {
        c: SymMatrix,
        u: RectMatrix,
        z: UpperHalfPoint,
    },
    /// `|w^T A w| <= (v + |z|)/v^2 ||w||^2` with
    /// `A = (I + U^T R U)^-1 U^T R^2 U (I + U^T R U)^-1`.
    L6 {
        c: SymMatrix,
        u: RectMatrix,
        w: Vec<Complex64>,
        z: UpperHalfPoint,
    },
    /// `sum_j |y^T (C + UU^T - zI)^-j y - y^T R^j y| <= 2(|z|+1)^2/v^2 sum_j ||U^T R^j y||^2`.
    L7 {
        c: SymMatrix,
        u: RectMatrix,
        y: Vec<Complex64>,
        z: UpperHalfPoint,
    },
    /// Difference of the Woodbury corrections for `U` and `V`, bounded with
    /// `K = q(|z|+1)^{3/2}/v^2`.
    L9 {
        c: SymMatrix,
        u: RectMatrix,
        v: RectMatrix,
        z: UpperHalfPoint,
    },
    /// `|tr(U^T R^2 U (I + U^T R U)^-1)| <= q(|z|+v)/(|z| v)`.
    L10 {
        c: SymMatrix,
        u: RectMatrix,
        z: UpperHalfPoint,
    },
}

impl LemmaInstance {
    pub fn id(&self) -> LemmaId {
        match self {
            LemmaInstance::L0 { .. } => LemmaId::L0,
            LemmaInstance::L1 { .. } => LemmaId::L1,
            LemmaInstance::L3 { .. } => LemmaId::L3,
            LemmaInstance::L4 { .. } => LemmaId::L4,
            LemmaInstance::L5 { .. } => LemmaId::L5,
            LemmaInstance::L6 { .. } => LemmaId::L6,
            LemmaInstance::L7 { .. } => LemmaId::L7,
            LemmaInstance::L9 { .. } => LemmaId::L9,
            LemmaInstance::L10 { .. } => LemmaId::L10,
        }
    }
}

/// `lhs` is always the side that must not exceed `rhs`; for the lower
/// bound L4 that is the bound `v/|z|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginReport {
    pub lemma: LemmaId,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub pass: bool,
    /// Relative discrepancy of the Woodbury trace against direct inversion (L7 only).
    pub smw_discrepancy: Option<f64>,
}

impl MarginReport {
    fn new(lemma: LemmaId, lhs: f64, rhs: f64) -> Self {
        let margin = rhs - lhs;
        let pass = margin >= -MARGIN_TOLERANCE * (1.0 + rhs.abs());
        Self {
            lemma,
            lhs,
            rhs,
            margin,
            pass,
            smw_discrepancy: None,
        }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInstance(msg.into())
}

fn require_psd(c: &SymMatrix, name: &str) -> Result<()> {
    let eigs = sym_eigenvalues(c)?;
    let norm = eigs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eigs.first().copied().unwrap_or(0.0);
    if min < -1e-10 * (1.0 + norm) {
        return Err(invalid(format!(
            "{name} is not PSD (smallest eigenvalue {min:e})"
        )));
    }
    Ok(())
}

fn require_rows(u: &RectMatrix, p: usize, name: &str) -> Result<()> {
    if u.rows() != p {
        return Err(invalid(format!(
            "{name} has {} rows, C is {p}x{p}",
            u.rows()
        )));
    }
    if !u.is_finite() {
        return Err(invalid(format!("{name} has non-finite entries")));
    }
    Ok(())
}

fn inverse(m: DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
    let lu = m.lu();
    let det = lu.determinant().norm();
    lu.try_inverse().ok_or(Error::DegenerateDenominator(det))
}

/// `R`, `U` as a complex matrix, and `(I + U^T R U)^-1`.
fn core_parts(
    c: &SymMatrix,
    u: &RectMatrix,
    z: UpperHalfPoint,
) -> Result<(DMatrix<Complex64>, DMatrix<Complex64>, DMatrix<Complex64>)> {
    let r = resolvent(c, z)?;
    let uc = complexify(u.as_matrix());
    let q = u.cols();
    let m = DMatrix::<Complex64>::identity(q, q) + uc.transpose() * &r * &uc;
    Ok((r, uc, inverse(m)?))
}

/// `tr(U^T R^2 U (I + U^T R U)^-1)` computed from its own resolvent.
fn woodbury_correction(c: &SymMatrix, u: &RectMatrix, z: UpperHalfPoint) -> Result<Complex64> {
    let (r, uc, minv) = core_parts(c, u, z)?;
    let ru = &r * &uc;
    Ok((ru.transpose() * &ru * minv).trace())
}

fn bilinear_vec(
    a: &DVector<Complex64>,
    m: &DMatrix<Complex64>,
    b: &DVector<Complex64>,
) -> Complex64 {
    (a.transpose() * m * b)[(0, 0)]
}

/// Evaluates both sides of one inequality.
pub fn check_lemma(inst: &LemmaInstance) -> Result<MarginReport> {
    let one = Complex64::new(1.0, 0.0);
    match inst {
        LemmaInstance::L0 { c, z } => {
            require_psd(c, "C")?;
            let r = resolvent(c, *z)?;
            Ok(MarginReport::new(
                LemmaId::L0,
                complex_spectral_norm(&r),
                1.0 / z.im(),
            ))
        }
        LemmaInstance::L1 { c, w, z } => {
            if w.len() != c.dim() {
                return Err(invalid(format!(
                    "w has length {}, C is {}x{}",
                    w.len(),
                    c.dim(),
                    c.dim()
                )));
            }
            let r = resolvent(c, *z)?;
            let wc = DVector::from_iterator(w.len(), w.iter().map(|&x| Complex64::new(x, 0.0)));
            let r2 = &r * &r;
            let num = bilinear_vec(&wc, &r2, &wc).norm();
            let den = (one + bilinear_vec(&wc, &r, &wc)).norm();
            if den == 0.0 {
                return Err(Error::DegenerateDenominator(den));
            }
            Ok(MarginReport::new(LemmaId::L1, num / den, 1.0 / z.im()))
        }
        LemmaInstance::L3 {
            z1,
            z2,
            w1,
            w2,
            gamma,
            delta,
            m,
        } => {
            let (gamma, delta, m) = (*gamma, *delta, *m);
            if !(delta > 0.0 && m > 0.0 && gamma > 0.0 && gamma < delta / 2.0) {
                return Err(invalid(format!("need delta, M > 0 and 0 < gamma < delta/2, got gamma={gamma} delta={delta} M={m}")));
            }
            if (z1 - z2).norm() > gamma || (w1 - w2).norm() > gamma {
                return Err(invalid("|z1 - z2| and |w1 - w2| must not exceed gamma"));
            }
            if (one + w2).norm() < delta {
                return Err(invalid("|1 + w2| must be at least delta"));
            }
            if z1.norm() > m * (one + w1).norm() {
                return Err(invalid("|z1| / |1 + w1| must not exceed M"));
            }
            let lhs = (z1 / (one + w1) - z2 / (one + w2)).norm();
            let rhs = gamma
                * (m / delta + 4.0 / (delta * delta).min(2.0 * delta) + 2.0 / (delta * delta));
            Ok(MarginReport::new(LemmaId::L3, lhs, rhs))
        }
        LemmaInstance::L4 { c, sigma, z } => {
            require_psd(c, "C")?;
            require_psd(sigma, "Sigma")?;
            if sigma.dim() != c.dim() {
                return Err(invalid("Sigma and C differ in size"));
            }
            let r = resolvent(c, *z)?;
            let tr = (complexify(sigma.as_matrix()) * r).trace();
            // lower bound: the bound plays the role of the smaller side
            Ok(MarginReport::new(
                LemmaId::L4,
                z.im() / z.abs(),
                (one + tr).norm(),
            ))
        }
        LemmaInstance::L5 { c, u, z } => {
            require_psd(c, "C")?;
            require_rows(u, c.dim(), "U")?;
            let (_, _, minv) = core_parts(c, u, *z)?;
            Ok(MarginReport::new(
                LemmaId::L5,
                complex_spectral_norm(&minv),
                z.abs() / z.im(),
            ))
        }
        LemmaInstance::L6 { c, u, w, z } => {
            require_psd(c, "C")?;
            require_rows(u, c.dim(), "U")?;
            if w.len() != u.cols() {
                return Err(invalid(format!(
                    "w has length {}, U has {} columns",
                    w.len(),
                    u.cols()
                )));
            }
            let (r, uc, minv) = core_parts(c, u, *z)?;
            let a = &minv * uc.transpose() * &r * &r * &uc * &minv;
            let wv = DVector::from_column_slice(w);
            let lhs = bilinear_vec(&wv, &a, &wv).norm();
            let w2: f64 = w.iter().map(|x| x.norm_sqr()).sum();
            let v = z.im();
            Ok(MarginReport::new(
                LemmaId::L6,
                lhs,
                (v + z.abs()) / (v * v) * w2,
            ))
        }
        LemmaInstance::L7 { c, u, y, z } => {
            require_psd(c, "C")?;
            require_rows(u, c.dim(), "U")?;
            if y.len() != c.dim() {
                return Err(invalid(format!(
                    "y has length {}, C is {}x{}",
                    y.len(),
                    c.dim(),
                    c.dim()
                )));
            }
            let updated = SymMatrix::symmetric_part(
                &(c.as_matrix() + u.as_matrix() * u.as_matrix().transpose()),
            )?;
            let r = resolvent(c, *z)?;
            let r_up = resolvent(&updated, *z)?;
            let yv = DVector::from_column_slice(y);
            let uc = complexify(u.as_matrix());
            let mut lhs = 0.0;
            let mut weight = 0.0;
            let (mut rj, mut rj_up) = (r.clone(), r_up.clone());
            for j in 1..=2 {
                if j == 2 {
                    rj = &rj * &r;
                    rj_up = &rj_up * &r_up;
                }
                lhs += (bilinear_vec(&yv, &rj_up, &yv) - bilinear_vec(&yv, &rj, &yv)).norm();
                weight += (uc.transpose() * &rj * &yv).norm_squared();
            }
            let zn = z.abs();
            let v = z.im();
            let mut report = MarginReport::new(
                LemmaId::L7,
                lhs,
                2.0 * (zn + 1.0).powi(2) / (v * v) * weight,
            );
            let direct = r_up.trace();
            let smw = smw_rankq_trace(c, u, *z)?;
            let discrepancy = (smw - direct).norm() / direct.norm().max(f64::MIN_POSITIVE);
            report.smw_discrepancy = Some(discrepancy);
            report.pass &= discrepancy <= SMW_TOLERANCE;
            Ok(report)
        }
        LemmaInstance::L9 { c, u, v: vmat, z } => {
            require_psd(c, "C")?;
            require_rows(u, c.dim(), "U")?;
            require_rows(vmat, c.dim(), "V")?;
            if u.cols() != vmat.cols() {
                return Err(invalid("U and V must have the same number of columns"));
            }
            let lhs = (woodbury_correction(c, u, *z)? - woodbury_correction(c, vmat, *z)?).norm();
            let r = resolvent(c, *z)?;
            let r2 = &r * &r;
            let rr = &r * r.adjoint();
            let uc = complexify(u.as_matrix());
            let vc = complexify(vmat.as_matrix());
            let diff = |m: &DMatrix<Complex64>| {
                complex_spectral_norm(&(uc.transpose() * m * &uc - vc.transpose() * m * &vc))
            };
            let d1 = diff(&r);
            let d2 = diff(&r2);
            let d = diff(&rr);
            let q = u.cols() as f64;
            let im = z.im();
            let k = q * (z.abs() + 1.0).powf(1.5) / (im * im);
            Ok(MarginReport::new(
                LemmaId::L9,
                lhs,
                k * (d1 + d2) + k * d1 * d.sqrt(),
            ))
        }
        LemmaInstance::L10 { c, u, z } => {
            require_psd(c, "C")?;
            require_rows(u, c.dim(), "U")?;
            let lhs = woodbury_correction(c, u, *z)?.norm();
            let (zn, v) = (z.abs(), z.im());
            Ok(MarginReport::new(
                LemmaId::L10,
                lhs,
                u.cols() as f64 * (zn + v) / (zn * v),
            ))
        }
    }
}

/// Sampling box for the fuzzer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FuzzOptions {
    pub p_min: usize,
    pub p_max: usize,
    pub q_min: usize,
    pub q_max: usize,
    /// `Re z` is drawn from `[-re_max, re_max]`.
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
}

impl Default for FuzzOptions {
    fn default() -> Self {
        Self {
            p_min: 1,
            p_max: 16,
            q_min: 1,
            q_max: 16,
            re_max: 3.0,
            im_min: 0.05,
            im_max: 2.0,
        }
    }
}

impl FuzzOptions {
    pub fn validate(&self) -> Result<()> {
        if self.p_min == 0 || self.p_min > self.p_max || self.q_min == 0 || self.q_min > self.q_max
        {
            return Err(Error::InvalidParameter(
                "size ranges must satisfy 1 <= min <= max".into(),
            ));
        }
        if !(self.im_min > 0.0 && self.im_min <= self.im_max && self.re_max >= 0.0) {
            return Err(Error::InvalidParameter(
                "need 0 < im_min <= im_max and re_max >= 0".into(),
            ));
        }
        Ok(())
    }
}

fn uniform(rng: &mut SeededRng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn gaussian_matrix(rng: &mut SeededRng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        scale * rng.sample::<f64, _>(StandardNormal)
    })
}

fn random_psd(rng: &mut SeededRng, p: usize) -> Result<SymMatrix> {
    let k = rng.random_range(1..=p);
    let scale = uniform(rng, 0.1, 3.0) / (k as f64).sqrt();
    let g = gaussian_matrix(rng, p, k, scale);
    SymMatrix::gram(&g, 1.0)
}

fn random_complex(rng: &mut SeededRng, scale: f64) -> Complex64 {
    Complex64::new(
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    ) * scale
}

fn random_rect(rng: &mut SeededRng, p: usize, q: usize) -> Result<RectMatrix> {
    let scale = uniform(rng, 0.1, 2.0) / (p as f64).sqrt();
    RectMatrix::new(gaussian_matrix(rng, p, q, scale))
}

fn random_point(rng: &mut SeededRng, opts: &FuzzOptions) -> Result<UpperHalfPoint> {
    UpperHalfPoint::new(
        uniform(rng, -opts.re_max, opts.re_max),
        uniform(rng, opts.im_min, opts.im_max),
    )
}

/// A valid random instance of `lemma`, reproducible from `(seed, lemma, index)`.
pub fn random_instance(
    lemma: LemmaId,
    opts: &FuzzOptions,
    seed: u64,
    index: u64,
) -> Result<LemmaInstance> {
    let mut rng = SeededRng::for_path(seed, &[lemma.index(), index]);
    let rng = &mut rng;
    let p = rng.random_range(opts.p_min..=opts.p_max);
    let q = rng.random_range(opts.q_min..=opts.q_max);
    let z = random_point(rng, opts)?;
    Ok(match lemma {
        LemmaId::L0 => LemmaInstance::L0 {
            c: random_psd(rng, p)?,
            z,
        },
        LemmaId::L1 => {
            // any symmetric C, not only PSD
            let g = gaussian_matrix(rng, p, p, 1.0);
            let c = SymMatrix::symmetric_part(&g)?;
            let w = (0..p).map(|_| rng.sample(StandardNormal)).collect();
            LemmaInstance::L1 { c, w, z }
        }
        LemmaId::L3 => {
            let delta = uniform(rng, 0.05, 2.0);
            let gamma = uniform(rng, 1e-3, 0.999) * delta / 2.0;
            let angle = uniform(rng, 0.0, std::f64::consts::TAU);
            let w2 = Complex64::from_polar(uniform(rng, delta, delta + 3.0), angle) - 1.0;
            let unit = |rng: &mut SeededRng| {
                Complex64::from_polar(
                    uniform(rng, 0.0, 1.0),
                    uniform(rng, 0.0, std::f64::consts::TAU),
                )
            };
            let w1 = w2 + unit(rng) * gamma;
            let scale = uniform(rng, 0.1, 3.0);
            let z1 = random_complex(rng, scale);
            let z2 = z1 + unit(rng) * gamma;
            let m = z1.norm() / (Complex64::new(1.0, 0.0) + w1).norm() * uniform(rng, 1.0, 2.0);
            LemmaInstance::L3 {
                z1,
                z2,
                w1,
                w2,
                gamma,
                delta,
                m: m.max(1e-3),
            }
        }
        LemmaId::L4 => {
            let c = random_psd(rng, p)?;
            let sigma = random_psd(rng, p)?;
            LemmaInstance::L4 { c, sigma, z }
        }
        LemmaId::L5 => LemmaInstance::L5 {
            c: random_psd(rng, p)?,
            u: random_rect(rng, p, q)?,
            z,
        },
        LemmaId::L6 => {
            let c = random_psd(rng, p)?;
            let u = random_rect(rng, p, q)?;
            let w = (0..q).map(|_| random_complex(rng, 1.0)).collect();
            LemmaInstance::L6 { c, u, w, z }
        }
        LemmaId::L7 => {
            let c = random_psd(rng, p)?;
            let u = random_rect(rng, p, q)?;
            let y = (0..p).map(|_| random_complex(rng, 1.0)).collect();
            LemmaInstance::L7 { c, u, y, z }
        }
        LemmaId::L9 => {
            let c = random_psd(rng, p)?;
            let u = random_rect(rng, p, q)?;
            // half the time V is a perturbation of U, so both sides are small
            let v = if rng.random::<bool>() {
                let scale = uniform(rng, 1e-4, 0.3) / (p as f64).sqrt();
                let e = gaussian_matrix(rng, p, q, scale);
                RectMatrix::new(u.as_matrix() + e)?
            } else {
                random_rect(rng, p, q)?
            };
            LemmaInstance::L9 { c, u, v, z }
        }
        LemmaId::L10 => LemmaInstance::L10 {
            c: random_psd(rng, p)?,
            u: random_rect(rng, p, q)?,
            z,
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaSummary {
    pub lemma: LemmaId,
    pub instances: usize,
    pub min_margin: f64,
    /// Smallest `margin / (1 + |rhs|)`.
    pub min_relative_margin: f64,
    pub failures: usize,
    /// Instances within `1e-8 (1 + |rhs|)` of equality.
    pub tight: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FuzzSummary {
    pub seed: u64,
    pub count: usize,
    pub options: FuzzOptions,
    pub lemmas: Vec<LemmaSummary>,
    /// Instances whose margin failed, for replay.
    pub failing: Vec<LemmaInstance>,
}

impl FuzzSummary {
    pub fn total_failures(&self) -> usize {
        self.lemmas.iter().map(|l| l.failures).sum()
    }
}

/// Checks `count` random instances of each lemma in `lemmas`.
pub fn fuzz_lemmas(
    lemmas: &[LemmaId],
    count: usize,
    opts: &FuzzOptions,
    seed: u64,
) -> Result<FuzzSummary> {
    if count == 0 {
        return Err(Error::InvalidParameter("count must be >= 1".into()));
    }
    opts.validate()?;
    let mut summaries = Vec::new();
    let mut failing = Vec::new();
    for &lemma in lemmas {
        let results: Vec<(LemmaInstance, MarginReport)> = (0..count as u64)
            .into_par_iter()
            .map(|i| {
                let inst = random_instance(lemma, opts, seed, i)?;
                let report = check_lemma(&inst)?;
                Ok((inst, report))
            })
            .collect::<Result<_>>()?;
        let mut s = LemmaSummary {
            lemma,
            instances: count,
            min_margin: f64::INFINITY,
            min_relative_margin: f64::INFINITY,
            failures: 0,
            tight: 0,
        };
        for (inst, r) in results {
            let rel = r.margin / (1.0 + r.rhs.abs());
            s.min_margin = s.min_margin.min(r.margin);
            s.min_relative_margin = s.min_relative_margin.min(rel);
            if rel.abs() <= 1e-8 {
                s.tight += 1;
            }
            if !r.pass {
                s.failures += 1;
                failing.push(inst);
            }
        }
        summaries.push(s);
    }
    Ok(FuzzSummary {
        seed,
        count,
        options: opts.clone(),
        lemmas: summaries,
        failing,
    })
}
