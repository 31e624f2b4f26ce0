//! Seeded generation of the column processes and their Gaussian companions.
//!
//! Every column `k` draws from its own stream `(seed, [COLUMN, k])`, first the
//! covariance realization, then the entry vector, then the companion's
//! standard normal vector. Generation is column-parallel and the output does
//! not depend on the number of worker threads.

use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_distr::{ChiSquared, Distribution, Exp, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::linalg::{principal_sqrt, RectMatrix, SymMatrix};
use crate::rng::SeededRng;
use crate::{Error, Result};

const COLUMN_DOMAIN: u64 = 1;
const BURN_IN_DOMAIN: u64 = 2;

/// Standardized scalar entry law: mean 0, variance 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EntryLaw {
    Rademacher {},
    StandardNormal {},
    /// Student t with `nu > 2` degrees of freedom, divided by `sqrt(nu / (nu - 2))`.
    StudentT {
        nu: f64,
    },
    /// `+-1/sqrt(q)` with probability `q/2` each and `0` otherwise, where
    /// `q = min(1, scale * p^-exponent)` depends on the dimension.
    TwoPointHeavy {
        scale: f64,
        exponent: f64,
    },
}

impl EntryLaw {
    pub fn validate(&self) -> Result<()> {
        match *self {
            EntryLaw::StudentT { nu } if !(nu > 2.0) || !nu.is_finite() => {
                Err(Error::InvalidParameter(format!("student_t needs nu > 2, got {nu}")))
            }
            EntryLaw::TwoPointHeavy { scale, exponent }
                if !(scale > 0.0) || !(exponent >= 0.0) || !scale.is_finite() || !exponent.is_finite() =>
            {
                Err(Error::InvalidParameter(format!(
                    "two_point_heavy needs scale > 0 and exponent >= 0, got scale={scale} exponent={exponent}"
                )))
            }
            _ => Ok(()),
        }
    }

    /// Non-zero probability `q` of the two-point law at dimension `p`.
    pub fn two_point_q(scale: f64, exponent: f64, p: usize) -> f64 {
        (scale * (p as f64).powf(-exponent)).min(1.0)
    }

    /// A sampler bound to dimension `p`.
    pub fn sampler(&self, p: usize) -> Result<EntrySampler> {
        self.validate()?;
        Ok(match *self {
            EntryLaw::Rademacher {} => EntrySampler::Rademacher,
            EntryLaw::StandardNormal {} => EntrySampler::Normal,
            EntryLaw::StudentT { nu } => EntrySampler::StudentT {
                dist: StudentT::new(nu).map_err(|e| Error::InvalidParameter(e.to_string()))?,
                scale: ((nu - 2.0) / nu).sqrt(),
            },
            EntryLaw::TwoPointHeavy { scale, exponent } => {
                let q = Self::two_point_q(scale, exponent, p);
                EntrySampler::TwoPoint {
                    q,
                    value: 1.0 / q.sqrt(),
                }
            }
        })
    }

    /// `E X^4` at dimension `p`.
    pub fn fourth_moment(&self, p: usize) -> Result<f64> {
        self.validate()?;
        match *self {
            EntryLaw::Rademacher {} => Ok(1.0),
            EntryLaw::StandardNormal {} => Ok(3.0),
            EntryLaw::StudentT { nu } if nu <= 4.0 => Err(Error::InfiniteFourthMoment(format!(
                "student_t with nu = {nu} <= 4 has no fourth moment"
            ))),
            EntryLaw::StudentT { nu } => Ok(3.0 + 6.0 / (nu - 4.0)),
            EntryLaw::TwoPointHeavy { scale, exponent } => {
                Ok(1.0 / Self::two_point_q(scale, exponent, p))
            }
        }
    }
}

#[derive(Clone, Debug)]
pub enum EntrySampler {
    Rademacher,
    Normal,
    StudentT { dist: StudentT<f64>, scale: f64 },
    TwoPoint { q: f64, value: f64 },
}

impl EntrySampler {
    pub fn sample(&self, rng: &mut impl RngCore) -> f64 {
        match self {
            EntrySampler::Rademacher => {
                if rng.next_u32() >> 31 == 1 {
                    1.0
                } else {
                    -1.0
                }
            }
            EntrySampler::Normal => rng.sample(StandardNormal),
            EntrySampler::StudentT { dist, scale } => dist.sample(rng) * scale,
            EntrySampler::TwoPoint { q, value } => {
                let u: f64 = rng.random();
                if u < 0.5 * q {
                    *value
                } else if u < *q {
                    -value
                } else {
                    0.0
                }
            }
        }
    }

    pub fn fill(&self, rng: &mut impl RngCore, out: &mut [f64]) {
        for v in out {
            *v = self.sample(rng);
        }
    }
}

/// Law of a nonnegative scalar (the `xi` of `xi I`, or a diagonal entry).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalarLaw {
    Constant { value: f64 },
    Exponential { rate: f64 },
    ChiSquared { dof: f64 },
    Uniform { low: f64, high: f64 },
}

impl ScalarLaw {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            ScalarLaw::Constant { value } => value >= 0.0 && value.is_finite(),
            ScalarLaw::Exponential { rate } => rate > 0.0 && rate.is_finite(),
            ScalarLaw::ChiSquared { dof } => dof > 0.0 && dof.is_finite(),
            ScalarLaw::Uniform { low, high } => low >= 0.0 && high >= low && high.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "invalid nonnegative scalar law {self:?}"
            )))
        }
    }

    pub fn sample(&self, rng: &mut impl RngCore) -> f64 {
        match *self {
            ScalarLaw::Constant { value } => value,
            ScalarLaw::Exponential { rate } => Exp::new(rate).expect("validated rate").sample(rng),
            ScalarLaw::ChiSquared { dof } => {
                ChiSquared::new(dof).expect("validated dof").sample(rng)
            }
            ScalarLaw::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            ScalarLaw::Constant { value } => value,
            ScalarLaw::Exponential { rate } => 1.0 / rate,
            ScalarLaw::ChiSquared { dof } => dof,
            ScalarLaw::Uniform { low, high } => 0.5 * (low + high),
        }
    }
}

/// Population covariance model for one column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovarianceModel {
    Identity {},
    FixedSpd {
        matrix: SymMatrix,
    },
    ScalarRandom {
        law: ScalarLaw,
    },
    RandomDiagonal {
        law: ScalarLaw,
    },
    /// `strength * p * e_1 e_1^T`, a single spike carrying the whole trace.
    Spike {
        strength: f64,
    },
}

impl CovarianceModel {
    pub fn validate(&self, p: usize) -> Result<()> {
        match self {
            CovarianceModel::Identity {} => Ok(()),
            CovarianceModel::FixedSpd { matrix } => {
                if matrix.dim() != p {
                    return Err(Error::DimensionMismatch(format!(
                        "fixed covariance is {}x{}, expected p = {p}",
                        matrix.dim(),
                        matrix.dim()
                    )));
                }
                Ok(())
            }
            CovarianceModel::ScalarRandom { law } | CovarianceModel::RandomDiagonal { law } => {
                law.validate()
            }
            CovarianceModel::Spike { strength } => {
                if *strength >= 0.0 && strength.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!(
                        "spike strength must be >= 0, got {strength}"
                    )))
                }
            }
        }
    }

    /// Prepares a sampler; fixed matrices have their square root taken once.
    pub fn sampler(&self, p: usize) -> Result<CovSampler> {
        self.validate(p)?;
        Ok(match self {
            CovarianceModel::Identity {} => CovSampler::Fixed(Arc::new(CovDraw::Identity(p))),
            CovarianceModel::FixedSpd { matrix } => {
                let root = principal_sqrt(matrix)?;
                CovSampler::Fixed(Arc::new(CovDraw::Dense {
                    sigma: matrix.clone(),
                    root,
                }))
            }
            CovarianceModel::ScalarRandom { law } => CovSampler::Scalar(p, law.clone()),
            CovarianceModel::RandomDiagonal { law } => CovSampler::Diagonal(p, law.clone()),
            CovarianceModel::Spike { strength } => {
                let mut d = vec![0.0; p];
                d[0] = strength * p as f64;
                CovSampler::Fixed(Arc::new(CovDraw::Diagonal(d)))
            }
        })
    }
}

#[derive(Clone, Debug)]
pub enum CovSampler {
    Fixed(Arc<CovDraw>),
    Scalar(usize, ScalarLaw),
    Diagonal(usize, ScalarLaw),
}

impl CovSampler {
    pub fn draw(&self, rng: &mut impl RngCore) -> Arc<CovDraw> {
        match self {
            CovSampler::Fixed(d) => Arc::clone(d),
            CovSampler::Scalar(p, law) => Arc::new(CovDraw::Scalar {
                p: *p,
                xi: law.sample(rng),
            }),
            CovSampler::Diagonal(p, law) => Arc::new(CovDraw::Diagonal(
                (0..*p).map(|_| law.sample(rng)).collect(),
            )),
        }
    }
}

/// One covariance realization, stored compactly.
#[derive(Clone, Debug, PartialEq)]
pub enum CovDraw {
    Identity(usize),
    Scalar { p: usize, xi: f64 },
    Diagonal(Vec<f64>),
    Dense { sigma: SymMatrix, root: SymMatrix },
}

impl CovDraw {
    pub fn dim(&self) -> usize {
        match self {
            CovDraw::Identity(p) | CovDraw::Scalar { p, .. } => *p,
            CovDraw::Diagonal(d) => d.len(),
            CovDraw::Dense { sigma, .. } => sigma.dim(),
        }
    }

    pub fn to_sym(&self) -> SymMatrix {
        match self {
            CovDraw::Identity(p) => SymMatrix::identity(*p),
            CovDraw::Scalar { p, xi } => SymMatrix::identity(*p).scaled(*xi),
            CovDraw::Diagonal(d) => SymMatrix::from_diagonal(d).expect("non-empty diagonal"),
            CovDraw::Dense { sigma, .. } => sigma.clone(),
        }
    }

    /// `Sigma^{1/2} x`.
    pub fn apply_root(&self, x: &[f64]) -> Vec<f64> {
        match self {
            CovDraw::Identity(_) => x.to_vec(),
            CovDraw::Scalar { xi, .. } => {
                let r = xi.sqrt();
                x.iter().map(|v| r * v).collect()
            }
            CovDraw::Diagonal(d) => x.iter().zip(d).map(|(v, s)| s.sqrt() * v).collect(),
            CovDraw::Dense { root, .. } => root.apply(x),
        }
    }

    pub fn trace(&self) -> f64 {
        match self {
            CovDraw::Identity(p) => *p as f64,
            CovDraw::Scalar { p, xi } => *p as f64 * xi,
            CovDraw::Diagonal(d) => d.iter().sum(),
            CovDraw::Dense { sigma, .. } => sigma.trace(),
        }
    }

    /// `tr(Sigma^2)`.
    pub fn trace_sq(&self) -> f64 {
        match self {
            CovDraw::Identity(p) => *p as f64,
            CovDraw::Scalar { p, xi } => *p as f64 * xi * xi,
            CovDraw::Diagonal(d) => d.iter().map(|v| v * v).sum(),
            CovDraw::Dense { sigma, .. } => sigma.frobenius_sq(),
        }
    }

    /// `tr(Sigma A)` for symmetric `A`.
    pub fn trace_with(&self, a: &SymMatrix) -> f64 {
        match self {
            CovDraw::Identity(_) => a.trace(),
            CovDraw::Scalar { xi, .. } => xi * a.trace(),
            CovDraw::Diagonal(d) => d.iter().enumerate().map(|(i, s)| s * a.get(i, i)).sum(),
            CovDraw::Dense { sigma, .. } => sigma.trace_product(a),
        }
    }

    /// Spectral norm of `Sigma`.
    pub fn norm(&self) -> f64 {
        match self {
            CovDraw::Identity(_) => 1.0,
            CovDraw::Scalar { xi, .. } => xi.abs(),
            CovDraw::Diagonal(d) => d.iter().fold(0.0, |m, v| m.max(v.abs())),
            CovDraw::Dense { sigma, .. } => {
                crate::linalg::sym_spectral_norm(sigma).unwrap_or(f64::NAN)
            }
        }
    }
}

/// One realization of `Sigma` under `model`.
pub fn sample_covariance_realization(
    model: &CovarianceModel,
    p: usize,
    rng: &mut impl RngCore,
) -> Result<SymMatrix> {
    if p == 0 {
        return Err(Error::DimensionMismatch("p must be >= 1".into()));
    }
    Ok(model.sampler(p)?.draw(rng).to_sym())
}

/// `Sigma^{1/2} w` with fresh standard normal `w`.
pub fn gaussian_companion(sigma: &SymMatrix, rng: &mut impl RngCore) -> Result<Vec<f64>> {
    let root = principal_sqrt(sigma)?;
    let w: Vec<f64> = (0..sigma.dim())
        .map(|_| rng.sample(StandardNormal))
        .collect();
    Ok(root.apply(&w))
}

fn normal_vector(rng: &mut impl RngCore, p: usize) -> Vec<f64> {
    (0..p).map(|_| rng.sample(StandardNormal)).collect()
}

/// Lower-triangular `n x n` matrix with `l_kj = 0` unless `k - m < j <= k`.
/// Row `k` is stored as `coeffs[k][i] = l_{k, k-i}` for `i < m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandedFilter {
    n: usize,
    m: usize,
    coeffs: Vec<Vec<f64>>,
    bound: f64,
}

impl BandedFilter {
    pub fn new(n: usize, m: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::InvalidParameter(format!(
                "banded filter needs n, m >= 1, got n={n} m={m}"
            )));
        }
        let mut bound = 0.0f64;
        let coeffs: Vec<Vec<f64>> = (0..n)
            .map(|k| {
                (0..m)
                    .map(|i| {
                        let v = if i <= k { f(k, k - i) } else { 0.0 };
                        bound = bound.max(v.abs());
                        v
                    })
                    .collect()
            })
            .collect();
        if !bound.is_finite() {
            return Err(Error::InvalidInput(
                "filter coefficients must be finite".into(),
            ));
        }
        Ok(Self {
            n,
            m,
            coeffs,
            bound,
        })
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::new(n, 1, |_, _| 1.0)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// `l_kj`.
    pub fn get(&self, k: usize, j: usize) -> f64 {
        if j > k || k - j >= self.m {
            0.0
        } else {
            self.coeffs[k][k - j]
        }
    }

    pub fn to_dense(&self) -> RectMatrix {
        RectMatrix::from_fn(self.n, self.n, |k, j| self.get(k, j)).expect("n >= 1")
    }
}

/// How a banded filter is built for a given `n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FilterSpec {
    Identity {},
    /// `l_kj = 1` for `k - m < j <= k`.
    MovingSum {
        m: usize,
    },
    /// `l_{k, k-i} = coeffs[i]`.
    Toeplitz {
        coeffs: Vec<f64>,
    },
}

impl FilterSpec {
    pub fn build(&self, n: usize) -> Result<BandedFilter> {
        match self {
            FilterSpec::Identity {} => BandedFilter::identity(n),
            FilterSpec::MovingSum { m } => BandedFilter::new(n, *m, |_, _| 1.0),
            FilterSpec::Toeplitz { coeffs } => {
                BandedFilter::new(n, coeffs.len(), |k, j| coeffs[k - j])
            }
        }
    }
}

/// `Y L^T`: column `k` becomes `sum_{k-m<j<=k} l_kj y_j`.
pub fn apply_banded_filter(y: &RectMatrix, l: &BandedFilter) -> Result<RectMatrix> {
    if l.n != y.cols() {
        return Err(Error::DimensionMismatch(format!(
            "filter has n = {}, data has {} columns",
            l.n,
            y.cols()
        )));
    }
    let p = y.rows();
    let columns: Vec<Vec<f64>> = (0..l.n)
        .into_par_iter()
        .map(|k| {
            let mut out = vec![0.0; p];
            for i in 0..l.m.min(k + 1) {
                let c = l.coeffs[k][i];
                if c == 0.0 {
                    continue;
                }
                for (o, v) in out.iter_mut().zip(y.column(k - i)) {
                    *o += c * v;
                }
            }
            out
        })
        .collect();
    RectMatrix::from_columns(p, &columns)
}

/// Diagonal modulation `A_pk` computed from the lagged innovations.
pub trait Modulation: Send + Sync {
    /// Diagonal of `A_pk` given the window `eps_{k-m+1}, ..., eps_{k-1}`
    /// (possibly empty).
    fn diagonal(&self, window: &[&[f64]], p: usize) -> Vec<f64>;
}

/// Shipped modulation rules.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModulationRule {
    /// `a_i = sqrt(0.5 + 0.5 * mean_l eps_{l,i}^2)`, clipped to `[0.1, 10]`.
    #[default]
    ClippedVariance,
}

impl Modulation for ModulationRule {
    fn diagonal(&self, window: &[&[f64]], p: usize) -> Vec<f64> {
        match self {
            ModulationRule::ClippedVariance => {
                if window.is_empty() {
                    return vec![1.0; p];
                }
                let len = window.len() as f64;
                (0..p)
                    .map(|i| {
                        let ms = window.iter().map(|e| e[i] * e[i]).sum::<f64>() / len;
                        (0.5 + 0.5 * ms).sqrt().clamp(0.1, 10.0)
                    })
                    .collect()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IidModel {
    pub entry_law: EntryLaw,
    #[serde(default = "identity_model")]
    pub covariance: CovarianceModel,
}

fn identity_model() -> CovarianceModel {
    CovarianceModel::Identity {}
}

fn default_mds_m() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ColumnModel {
    Iid {
        entry_law: EntryLaw,
        #[serde(default = "identity_model")]
        covariance: CovarianceModel,
    },
    MdsExample1 {
        entry_law: EntryLaw,
        #[serde(default = "default_mds_m")]
        m: usize,
        #[serde(default)]
        modulation: ModulationRule,
    },
    LinearProcess {
        inner: IidModel,
        filter: FilterSpec,
    },
}

impl ColumnModel {
    pub fn entry_law(&self) -> &EntryLaw {
        match self {
            ColumnModel::Iid { entry_law, .. } | ColumnModel::MdsExample1 { entry_law, .. } => {
                entry_law
            }
            ColumnModel::LinearProcess { inner, .. } => &inner.entry_law,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub p: usize,
    pub n: usize,
    pub column_model: ColumnModel,
    pub seed: u64,
}

impl EnsembleConfig {
    pub fn iid(
        p: usize,
        n: usize,
        entry_law: EntryLaw,
        covariance: CovarianceModel,
        seed: u64,
    ) -> Self {
        Self {
            p,
            n,
            column_model: ColumnModel::Iid {
                entry_law,
                covariance,
            },
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.n == 0 {
            return Err(Error::InvalidParameter(format!(
                "p and n must be >= 1, got p={} n={}",
                self.p, self.n
            )));
        }
        match &self.column_model {
            ColumnModel::Iid {
                entry_law,
                covariance,
            } => {
                entry_law.validate()?;
                covariance.validate(self.p)
            }
            ColumnModel::MdsExample1 { entry_law, m, .. } => {
                if *m == 0 {
                    return Err(Error::InvalidParameter("mds_example1 needs m >= 1".into()));
                }
                entry_law.validate()
            }
            ColumnModel::LinearProcess { inner, filter } => {
                inner.entry_law.validate()?;
                inner.covariance.validate(self.p)?;
                filter.build(self.n).map(|_| ())
            }
        }
    }

    pub fn with_size(&self, p: usize, n: usize, seed: u64) -> Self {
        Self {
            p,
            n,
            column_model: self.column_model.clone(),
            seed,
        }
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// Data matrix, Gaussian companion and the covariance realization used for
/// each column (shared by the two sides).
#[derive(Clone, Debug)]
pub struct EnsembleSample {
    pub y: RectMatrix,
    pub z: RectMatrix,
    pub sigmas: Vec<Arc<CovDraw>>,
}

fn column_rng(seed: u64, k: usize) -> SeededRng {
    SeededRng::for_path(seed, &[COLUMN_DOMAIN, k as u64])
}

fn assemble(p: usize, cols: Vec<(Vec<f64>, Vec<f64>, Arc<CovDraw>)>) -> Result<EnsembleSample> {
    let mut ys = Vec::with_capacity(cols.len());
    let mut zs = Vec::with_capacity(cols.len());
    let mut sigmas = Vec::with_capacity(cols.len());
    for (y, z, s) in cols {
        ys.push(y);
        zs.push(z);
        sigmas.push(s);
    }
    Ok(EnsembleSample {
        y: RectMatrix::from_columns(p, &ys)?,
        z: RectMatrix::from_columns(p, &zs)?,
        sigmas,
    })
}

/// i.i.d. columns `Sigma_k^{1/2} x_k` and companions `Sigma_k^{1/2} w_k`.
pub fn sample_matrix(config: &EnsembleConfig) -> Result<EnsembleSample> {
    config.validate()?;
    let (entry_law, covariance) = match &config.column_model {
        ColumnModel::Iid {
            entry_law,
            covariance,
        } => (entry_law, covariance),
        _ => {
            return Err(Error::InvalidParameter(
                "sample_matrix needs an iid column model".into(),
            ))
        }
    };
    sample_iid(config.p, config.n, entry_law, covariance, config.seed)
}

fn sample_iid(
    p: usize,
    n: usize,
    law: &EntryLaw,
    cov: &CovarianceModel,
    seed: u64,
) -> Result<EnsembleSample> {
    let entries = law.sampler(p)?;
    let covs = cov.sampler(p)?;
    let cols = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut rng = column_rng(seed, k);
            let sigma = covs.draw(&mut rng);
            let mut x = vec![0.0; p];
            entries.fill(&mut rng, &mut x);
            let w = normal_vector(&mut rng, p);
            (sigma.apply_root(&x), sigma.apply_root(&w), sigma)
        })
        .collect();
    assemble(p, cols)
}

/// Modulated martingale-difference columns `A_pk eps_pk` using the configured rule.
pub fn mds_matrix_example1(config: &EnsembleConfig) -> Result<EnsembleSample> {
    config.validate()?;
    match &config.column_model {
        ColumnModel::MdsExample1 {
            entry_law,
            m,
            modulation,
        } => mds_matrix_with(config.p, config.n, entry_law, *m, modulation, config.seed),
        _ => Err(Error::InvalidParameter(
            "mds_matrix_example1 needs an mds_example1 column model".into(),
        )),
    }
}

/// Modulated martingale-difference columns with a caller-supplied rule.
pub fn mds_matrix_with(
    p: usize,
    n: usize,
    law: &EntryLaw,
    m: usize,
    rule: &dyn Modulation,
    seed: u64,
) -> Result<EnsembleSample> {
    if m == 0 {
        return Err(Error::InvalidParameter("m must be >= 1".into()));
    }
    let entries = law.sampler(p)?;
    let burn = m - 1;
    // innovations for indices -burn..n, the companion normals for 0..n
    let burn_in: Vec<Vec<f64>> = (0..burn)
        .into_par_iter()
        .map(|j| {
            let mut rng = SeededRng::for_path(seed, &[BURN_IN_DOMAIN, j as u64]);
            let mut e = vec![0.0; p];
            entries.fill(&mut rng, &mut e);
            e
        })
        .collect();
    let draws: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut rng = column_rng(seed, k);
            let mut e = vec![0.0; p];
            entries.fill(&mut rng, &mut e);
            (e, normal_vector(&mut rng, p))
        })
        .collect();
    // burn-in index j sits at position burn - 1 - j before column 0
    let innovation = |idx: isize| -> &[f64] {
        if idx >= 0 {
            &draws[idx as usize].0
        } else {
            &burn_in[(-idx - 1) as usize]
        }
    };
    let cols = (0..n)
        .into_par_iter()
        .map(|k| {
            let window: Vec<&[f64]> = (1..m)
                .rev()
                .map(|lag| innovation(k as isize - lag as isize))
                .collect();
            let a = rule.diagonal(&window, p);
            let eps = &draws[k].0;
            let y: Vec<f64> = a.iter().zip(eps).map(|(ai, e)| ai * e).collect();
            let sigma = if a.iter().all(|&v| v == 1.0) {
                Arc::new(CovDraw::Identity(p))
            } else {
                Arc::new(CovDraw::Diagonal(a.iter().map(|v| v * v).collect()))
            };
            let z = sigma.apply_root(&draws[k].1);
            (y, z, sigma)
        })
        .collect();
    assemble(p, cols)
}

/// Generates any column model; linear processes filter both sides.
pub fn generate(config: &EnsembleConfig) -> Result<EnsembleSample> {
    config.validate()?;
    match &config.column_model {
        ColumnModel::Iid { .. } => sample_matrix(config),
        ColumnModel::MdsExample1 { .. } => mds_matrix_example1(config),
        ColumnModel::LinearProcess { inner, filter } => {
            let base = sample_iid(
                config.p,
                config.n,
                &inner.entry_law,
                &inner.covariance,
                config.seed,
            )?;
            let l = filter.build(config.n)?;
            Ok(EnsembleSample {
                y: apply_banded_filter(&base.y, &l)?,
                z: apply_banded_filter(&base.z, &l)?,
                sigmas: base.sigmas,
            })
        }
    }
}

/// `(Phi_0, Phi_1, Phi_2)`: fourth-moment bound and the two mixing sums.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixingProfile {
    pub phi0: f64,
    pub phi1: f64,
    pub phi2: f64,
}

/// Profile of an i.i.d. sequence from `law` at dimension `p`.
pub fn mixing_profile(law: &EntryLaw, p: usize) -> Result<MixingProfile> {
    Ok(MixingProfile {
        phi0: law.fourth_moment(p)?,
        phi1: 0.0,
        phi2: 0.0,
    })
}

/// Profile from user-supplied sequences: `Phi_1 = sum k phi_k`,
/// `Phi_2 = sum phi~_k` (both indexed from `k = 1`).
pub fn mixing_profile_from_sequences(
    phi0: f64,
    phi: &[f64],
    phi_tilde: &[f64],
) -> Result<MixingProfile> {
    if !phi0.is_finite() || phi0 < 0.0 {
        return Err(Error::InfiniteFourthMoment(format!("Phi_0 = {phi0}")));
    }
    if phi
        .iter()
        .chain(phi_tilde)
        .any(|v| !v.is_finite() || *v < 0.0)
    {
        return Err(Error::InvalidParameter(
            "mixing coefficients must be finite and >= 0".into(),
        ));
    }
    let phi1 = phi
        .iter()
        .enumerate()
        .map(|(i, v)| (i + 1) as f64 * v)
        .sum();
    let phi2 = phi_tilde.iter().sum();
    Ok(MixingProfile { phi0, phi1, phi2 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::spectral_norm;

    fn pooled(m: &RectMatrix) -> Vec<f64> {
        m.as_matrix().iter().copied().collect()
    }

    #[test]
    fn covariance_realization_examples() {
        let mut rng = SeededRng::new(1, 0);
        assert_eq!(
            sample_covariance_realization(&CovarianceModel::Identity {}, 5, &mut rng).unwrap(),
            SymMatrix::identity(5)
        );
        let two = CovarianceModel::ScalarRandom {
            law: ScalarLaw::Constant { value: 2.0 },
        };
        assert_eq!(
            sample_covariance_realization(&two, 3, &mut rng).unwrap(),
            SymMatrix::identity(3).scaled(2.0)
        );
        let bad = CovarianceModel::FixedSpd {
            matrix: SymMatrix::identity(2),
        };
        assert!(matches!(
            sample_covariance_realization(&bad, 3, &mut rng),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn chi_squared_diagonal_draws_are_nonnegative() {
        let model = CovarianceModel::RandomDiagonal {
            law: ScalarLaw::ChiSquared { dof: 1.0 },
        };
        let mut rng = SeededRng::new(2, 0);
        let mut sum = 0.0;
        let draws = 10_000;
        for _ in 0..draws {
            let s = sample_covariance_realization(&model, 1, &mut rng).unwrap();
            assert!(s.is_diagonal());
            assert!(s.get(0, 0) >= 0.0);
            sum += s.get(0, 0);
        }
        // chi^2_1 has mean 1 and variance 2
        assert!((sum / draws as f64 - 1.0).abs() < 4.0 * (2.0f64 / draws as f64).sqrt());
    }

    #[test]
    fn gaussian_companion_examples() {
        let mut rng = SeededRng::new(3, 0);
        let z = gaussian_companion(&SymMatrix::zeros(4), &mut rng).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));

        let mut a = SeededRng::new(3, 1);
        let mut b = SeededRng::new(3, 1);
        let z = gaussian_companion(&SymMatrix::identity(6), &mut a).unwrap();
        let w = normal_vector(&mut b, 6);
        assert_eq!(z, w);

        let e = [0.6, 0.8];
        let proj = SymMatrix::from_fn(2, |i, j| e[i] * e[j]).unwrap();
        let mut a = SeededRng::new(3, 2);
        let mut b = SeededRng::new(3, 2);
        let z = gaussian_companion(&proj, &mut a).unwrap();
        let w = normal_vector(&mut b, 2);
        let dot = w[0] * e[0] + w[1] * e[1];
        assert!((z[0] - dot * e[0]).abs() < 1e-12 && (z[1] - dot * e[1]).abs() < 1e-12);
    }

    #[test]
    fn companion_has_conditional_covariance_sigma() {
        let sigma = SymMatrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let mut rng = SeededRng::new(4, 0);
        let reps = 20_000;
        let mut acc = [0.0; 3];
        for _ in 0..reps {
            let z = gaussian_companion(&sigma, &mut rng).unwrap();
            acc[0] += z[0] * z[0];
            acc[1] += z[0] * z[1];
            acc[2] += z[1] * z[1];
        }
        let est = acc.map(|v| v / reps as f64);
        // var of z_i z_j is sigma_ii sigma_jj + sigma_ij^2
        let se = |i: usize, j: usize| {
            ((sigma.get(i, i) * sigma.get(j, j) + sigma.get(i, j).powi(2)) / reps as f64).sqrt()
        };
        assert!((est[0] - 2.0).abs() < 4.0 * se(0, 0));
        assert!((est[1] - 0.5).abs() < 4.0 * se(0, 1));
        assert!((est[2] - 1.0).abs() < 4.0 * se(1, 1));
    }

    #[test]
    fn single_rademacher_entry() {
        let cfg = EnsembleConfig::iid(
            1,
            1,
            EntryLaw::Rademacher {},
            CovarianceModel::Identity {},
            9,
        );
        let s = sample_matrix(&cfg).unwrap();
        assert!(s.y.get(0, 0) == 1.0 || s.y.get(0, 0) == -1.0);
    }

    #[test]
    fn gaussian_y_and_z_agree_in_law() {
        let cfg = EnsembleConfig::iid(
            100,
            1000,
            EntryLaw::StandardNormal {},
            CovarianceModel::Identity {},
            5,
        );
        let s = sample_matrix(&cfg).unwrap();
        let mut a = pooled(&s.y);
        let mut b = pooled(&s.z);
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        // two-sample KS at 1e5 entries each: 99.9% critical value 1.95 sqrt(2/n)
        let n = a.len();
        let (mut i, mut j, mut d) = (0, 0, 0.0f64);
        while i < n && j < n {
            if a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
            d = d.max((i as f64 - j as f64).abs() / n as f64);
        }
        assert!(d < 1.95 * (2.0 / n as f64).sqrt(), "ks {d}");
    }

    #[test]
    fn column_norms_and_unit_variance() {
        for law in [
            EntryLaw::Rademacher {},
            EntryLaw::StandardNormal {},
            EntryLaw::StudentT { nu: 5.0 },
            EntryLaw::TwoPointHeavy {
                scale: 0.5,
                exponent: 0.0,
            },
        ] {
            let (p, n) = (20, 1000);
            let cfg = EnsembleConfig::iid(p, n, law.clone(), CovarianceModel::Identity {}, 17);
            let s = sample_matrix(&cfg).unwrap();
            let mean: f64 = (0..n)
                .map(|k| s.y.column(k).iter().map(|v| v * v).sum::<f64>() / p as f64)
                .sum::<f64>()
                / n as f64;
            // the standard error of a pooled second moment is sqrt((E x^4 - 1) / (np));
            // for the heavier laws the oracle uses that rather than the bare 1/sqrt(np)
            let kurt = law.fourth_moment(p).unwrap();
            let tol = 5.0 * ((kurt - 1.0).max(1.0) / (n * p) as f64).sqrt();
            assert!((mean - 1.0).abs() <= tol, "{law:?}: {mean}");
        }
    }

    #[test]
    fn y_and_z_share_sigma_draws() {
        let cfg = EnsembleConfig::iid(
            4,
            10,
            EntryLaw::Rademacher {},
            CovarianceModel::ScalarRandom {
                law: ScalarLaw::Exponential { rate: 1.0 },
            },
            21,
        );
        let s = sample_matrix(&cfg).unwrap();
        assert_eq!(s.sigmas.len(), 10);
        for k in 0..10 {
            let CovDraw::Scalar { xi, .. } = *s.sigmas[k] else {
                panic!("scalar draw expected")
            };
            let r = xi.sqrt();
            for i in 0..4 {
                assert!((s.y.get(i, k).abs() - r).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn determinism_across_thread_counts() {
        let cfg = EnsembleConfig {
            p: 30,
            n: 40,
            column_model: ColumnModel::MdsExample1 {
                entry_law: EntryLaw::Rademacher {},
                m: 3,
                modulation: ModulationRule::ClippedVariance,
            },
            seed: 77,
        };
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let many = rayon::ThreadPoolBuilder::new()
            .num_threads(8)
            .build()
            .unwrap();
        let a = one.install(|| generate(&cfg).unwrap());
        let b = many.install(|| generate(&cfg).unwrap());
        assert_eq!(a.y, b.y);
        assert_eq!(a.z, b.z);
    }

    #[test]
    fn mds_with_m1_reduces_to_iid() {
        let law = EntryLaw::StandardNormal {};
        let mds = EnsembleConfig {
            p: 7,
            n: 9,
            column_model: ColumnModel::MdsExample1 {
                entry_law: law.clone(),
                m: 1,
                modulation: ModulationRule::ClippedVariance,
            },
            seed: 3,
        };
        let iid = EnsembleConfig::iid(7, 9, law, CovarianceModel::Identity {}, 3);
        let a = generate(&mds).unwrap();
        let b = generate(&iid).unwrap();
        assert_eq!(a.y, b.y);
        assert_eq!(a.z, b.z);
    }

    #[test]
    fn mds_sigma_is_bounded_by_clipping() {
        let cfg = EnsembleConfig {
            p: 10,
            n: 50,
            column_model: ColumnModel::MdsExample1 {
                entry_law: EntryLaw::TwoPointHeavy {
                    scale: 0.01,
                    exponent: 0.0,
                },
                m: 4,
                modulation: ModulationRule::ClippedVariance,
            },
            seed: 8,
        };
        let s = generate(&cfg).unwrap();
        assert!(s.sigmas.iter().all(|d| d.norm() <= 100.0));
        assert!(s.sigmas.iter().any(|d| d.norm() > 1.0));
    }

    #[test]
    fn mds_conditional_mean_is_zero() {
        // E[y_k g(past)] = 0 for every past-measurable g when E[y_k | past] = 0
        let reps = 10_000;
        let (p, m) = (3, 3);
        let mut acc = vec![0.0; reps];
        for (r, slot) in acc.iter_mut().enumerate() {
            let cfg = EnsembleConfig {
                p,
                n: 3,
                column_model: ColumnModel::MdsExample1 {
                    entry_law: EntryLaw::Rademacher {},
                    m,
                    modulation: ModulationRule::ClippedVariance,
                },
                seed: 1000 + r as u64,
            };
            let s = generate(&cfg).unwrap();
            // y_2 weighted by a past-measurable sign
            let sign = if s.y.get(0, 1) > 0.0 { 1.0 } else { -1.0 };
            *slot = sign * s.y.get(0, 2);
        }
        let ms = crate::stats::mean_se(&acc);
        assert!(ms.mean.abs() <= 4.0 * ms.se, "{ms:?}");
    }

    #[test]
    fn mds_columns_m_apart_are_uncorrelated() {
        let cfg = EnsembleConfig {
            p: 50,
            n: 4000,
            column_model: ColumnModel::MdsExample1 {
                entry_law: EntryLaw::Rademacher {},
                m: 3,
                modulation: ModulationRule::ClippedVariance,
            },
            seed: 12,
        };
        let s = generate(&cfg).unwrap();
        // correlate squared norms of columns k and k + m
        let norms: Vec<f64> = (0..cfg.n)
            .map(|k| s.y.column(k).iter().map(|v| v * v).sum::<f64>())
            .collect();
        let mean = norms.iter().sum::<f64>() / norms.len() as f64;
        let c: Vec<f64> = norms.iter().map(|v| v - mean).collect();
        // disjoint pairs so the products are independent
        let prods: Vec<f64> = (0..cfg.n / 6).map(|i| c[6 * i] * c[6 * i + 3]).collect();
        let ms = crate::stats::mean_se(&prods);
        assert!(ms.mean.abs() <= 4.0 * ms.se, "{ms:?}");
    }

    #[test]
    fn banded_filter_examples() {
        let y = RectMatrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let id = BandedFilter::identity(3).unwrap();
        assert_eq!(apply_banded_filter(&y, &id).unwrap(), y);
        let ms = FilterSpec::MovingSum { m: 2 }.build(3).unwrap();
        let out = apply_banded_filter(&y, &ms).unwrap();
        assert_eq!(
            out,
            RectMatrix::from_rows(&[vec![1.0, 3.0, 5.0], vec![4.0, 9.0, 11.0]]).unwrap()
        );
        assert!(matches!(
            apply_banded_filter(&y, &BandedFilter::identity(4).unwrap()),
            Err(Error::DimensionMismatch(_))
        ));
        assert_eq!(ms.get(2, 0), 0.0);
        assert_eq!(ms.get(0, 1), 0.0);
        assert_eq!(ms.bound(), 1.0);
    }

    #[test]
    fn banded_filter_is_submultiplicative() {
        let mut rng = SeededRng::new(31, 0);
        let l = BandedFilter::new(12, 3, |_, _| 2.0 * rng.random::<f64>() - 1.0).unwrap();
        let cfg = EnsembleConfig::iid(
            5,
            12,
            EntryLaw::StandardNormal {},
            CovarianceModel::Identity {},
            4,
        );
        let y = sample_matrix(&cfg).unwrap().y;
        let out = apply_banded_filter(&y, &l).unwrap();
        let direct = y.as_matrix() * l.to_dense().as_matrix().transpose();
        assert!((out.as_matrix() - &direct).abs().max() < 1e-12);
        let lhs = spectral_norm(&out).unwrap();
        let rhs = spectral_norm(&y).unwrap() * spectral_norm(&l.to_dense()).unwrap();
        assert!(lhs <= rhs * (1.0 + 1e-12));
        assert!(l.bound() <= 1.0);
    }

    #[test]
    fn mixing_profiles() {
        assert_eq!(
            mixing_profile(&EntryLaw::StandardNormal {}, 10).unwrap(),
            MixingProfile {
                phi0: 3.0,
                phi1: 0.0,
                phi2: 0.0
            }
        );
        assert_eq!(
            mixing_profile(&EntryLaw::Rademacher {}, 10).unwrap().phi0,
            1.0
        );
        assert!(
            (mixing_profile(&EntryLaw::StudentT { nu: 5.0 }, 10)
                .unwrap()
                .phi0
                - 9.0)
                .abs()
                < 1e-12
        );
        assert!(matches!(
            mixing_profile(&EntryLaw::StudentT { nu: 4.0 }, 10),
            Err(Error::InfiniteFourthMoment(_))
        ));
        let prof = mixing_profile_from_sequences(3.0, &[0.5, 0.25], &[0.1, 0.1]).unwrap();
        assert_eq!(
            prof,
            MixingProfile {
                phi0: 3.0,
                phi1: 1.0,
                phi2: 0.2
            }
        );
    }

    #[test]
    fn student_t5_fourth_moment_by_monte_carlo() {
        // kurtosis oracle 3 + 6/(nu - 4) = 9 at nu = 5; the sample fourth
        // moment is heavy tailed, so only a loose band is meaningful
        let s = EntryLaw::StudentT { nu: 5.0 }.sampler(1).unwrap();
        let mut rng = SeededRng::new(41, 0);
        let draws = 400_000;
        let (mut m2, mut m4) = (0.0, 0.0);
        for _ in 0..draws {
            let x = s.sample(&mut rng);
            m2 += x * x;
            m4 += x.powi(4);
        }
        assert!((m2 / draws as f64 - 1.0).abs() < 0.03);
        let m4 = m4 / draws as f64;
        assert!(m4 > 6.0 && m4 < 13.0, "{m4}");
    }

    #[test]
    fn config_json_rejects_unknown_fields() {
        let ok = r#"{"p":4,"n":8,"seed":1,"column_model":{"kind":"iid","entry_law":{"kind":"rademacher"}}}"#;
        let cfg: EnsembleConfig = serde_json::from_str(ok).unwrap();
        assert_eq!(
            cfg.column_model,
            ColumnModel::Iid {
                entry_law: EntryLaw::Rademacher {},
                covariance: CovarianceModel::Identity {}
            }
        );
        let bad = r#"{"p":4,"n":8,"seed":1,"extra":0,"column_model":{"kind":"iid","entry_law":{"kind":"rademacher"}}}"#;
        assert!(serde_json::from_str::<EnsembleConfig>(bad).is_err());
        let bad = r#"{"p":4,"n":8,"seed":1,"column_model":{"kind":"iid","entry_law":{"kind":"rademacher","q":1}}}"#;
        assert!(serde_json::from_str::<EnsembleConfig>(bad).is_err());
        let round = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<EnsembleConfig>(&round).unwrap(), cfg);
        assert_eq!(cfg.config_hash().len(), 64);
    }
}
