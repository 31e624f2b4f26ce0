//! Sample-covariance spectra, ESD distances, Stieltjes gaps and the
//! convergence ladders comparing an ensemble with its Gaussian companion.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensembles::{generate, EnsembleConfig};
use crate::linalg::{resolvent_stieltjes, sym_eigenvalues, RectMatrix, SymMatrix, UpperHalfPoint};
use crate::mp_law::{MPLaw, MpTable};
use crate::rng::derive_id;
use crate::stats::{mean_se, MeanSe};
use crate::{Error, Result};

/// Sorted eigenvalues of one realization of `n^-1 Y Y^T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralSample {
    pub eigs: Vec<f64>,
    pub p: usize,
    pub n: usize,
    pub seed: u64,
    pub config_hash: String,
}

impl SpectralSample {
    pub fn with_provenance(mut self, seed: u64, config_hash: impl Into<String>) -> Self {
        self.seed = seed;
        self.config_hash = config_hash.into();
        self
    }

    /// One eigenvalue per line in shortest round-trip decimal.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.eigs.len() * 24);
        for v in &self.eigs {
            out.push_str(&format!("{v:?}\n"));
        }
        out
    }

    pub fn stieltjes(&self, z: UpperHalfPoint) -> Complex64 {
        resolvent_stieltjes(&self.eigs, z)
    }
}

/// Eigenvalues of `n^-1 Y Y^T`. When `p > n` the `n x n` Gram matrix is
/// diagonalized instead and the remaining `p - n` eigenvalues are exact zeros.
pub fn sample_cov_spectrum(y: &RectMatrix) -> Result<SpectralSample> {
    let (p, n) = (y.rows(), y.cols());
    let scale = 1.0 / n as f64;
    let mut eigs = if p <= n {
        sym_eigenvalues(&SymMatrix::gram(y.as_matrix(), scale)?)?
    } else {
        let t = y.as_matrix().transpose();
        let mut e = vec![0.0; p - n];
        e.extend(sym_eigenvalues(&SymMatrix::gram(&t, scale)?)?);
        e
    };
    // the matrix is PSD; negative values are roundoff
    for v in &mut eigs {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    eigs.sort_by(f64::total_cmp);
    Ok(SpectralSample {
        eigs,
        p,
        n,
        seed: 0,
        config_hash: String::new(),
    })
}

/// `F_n(lambda) = #{k : lambda_k <= lambda} / p`.
pub fn esd_cdf(sample: &SpectralSample, lambda: f64) -> f64 {
    if sample.eigs.is_empty() {
        return 0.0;
    }
    sample.eigs.partition_point(|&v| v <= lambda) as f64 / sample.eigs.len() as f64
}

fn esd_cdf_left(sample: &SpectralSample, lambda: f64) -> f64 {
    sample.eigs.partition_point(|&v| v < lambda) as f64 / sample.eigs.len() as f64
}

/// The Marchenko-Pastur law with its tabulated CDF and a quantile grid.
#[derive(Clone, Debug)]
pub struct MpReference {
    table: MpTable,
    grid: Vec<f64>,
}

pub const MP_QUANTILE_GRID: usize = 10_000;

impl MpReference {
    pub fn new(y: f64) -> Result<Self> {
        let table = MPLaw::new(y)?.table(512);
        let grid = table.quantile_grid(MP_QUANTILE_GRID);
        Ok(Self { table, grid })
    }

    pub fn law(&self) -> &MPLaw {
        self.table.law()
    }

    pub fn cdf(&self, lambda: f64) -> f64 {
        self.table.cdf(lambda)
    }
}

/// Left side of a KS comparison.
#[derive(Clone, Copy, Debug)]
pub enum Reference<'a> {
    Sample(&'a SpectralSample),
    Law(&'a MpReference),
}

/// Sup-distance between two CDFs, evaluated at every jump point.
pub fn ks_distance(a: Reference<'_>, b: &SpectralSample) -> f64 {
    match a {
        Reference::Sample(a) => ks_two_sample(&a.eigs, &b.eigs),
        Reference::Law(law) => ks_to_law(law, b),
    }
}

fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return if a.len() == b.len() { 0.0 } else { 1.0 };
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => break,
        };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

fn ks_to_law(reference: &MpReference, sample: &SpectralSample) -> f64 {
    if sample.eigs.is_empty() {
        return 1.0;
    }
    let law = reference.law();
    let mut d = 0.0f64;
    let mut check = |x: f64, f: f64, f_left: f64| {
        let fn_right = esd_cdf(sample, x);
        let fn_left = esd_cdf_left(sample, x);
        d = d.max((fn_right - f).abs()).max((fn_left - f_left).abs());
    };
    if law.mass0 > 0.0 {
        check(0.0, law.mass0, 0.0);
    }
    let mut prev = f64::NAN;
    for &x in &sample.eigs {
        if x == prev {
            continue;
        }
        prev = x;
        let f = reference.cdf(x);
        let f_left = if x == 0.0 { 0.0 } else { f };
        check(x, f, f_left);
    }
    for &q in &reference.grid {
        if q > 0.0 {
            let f = reference.cdf(q);
            check(q, f, f);
        }
    }
    d
}

/// Stieltjes transforms of two spectra on a grid and their pointwise gaps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StieltjesGrid {
    pub points: Vec<UpperHalfPoint>,
    pub values_y: Vec<Complex64>,
    pub values_z: Vec<Complex64>,
    pub gap: Vec<f64>,
}

pub fn stieltjes_gap(
    sample_y: &SpectralSample,
    sample_z: &SpectralSample,
    grid: &[UpperHalfPoint],
) -> Result<StieltjesGrid> {
    if sample_y.eigs.len() != sample_z.eigs.len() {
        return Err(Error::DimensionMismatch(format!(
            "spectra have p = {} and p = {}",
            sample_y.eigs.len(),
            sample_z.eigs.len()
        )));
    }
    let values_y: Vec<Complex64> = grid.iter().map(|&z| sample_y.stieltjes(z)).collect();
    let values_z: Vec<Complex64> = grid.iter().map(|&z| sample_z.stieltjes(z)).collect();
    let gap = values_y
        .iter()
        .zip(&values_z)
        .map(|(a, b)| (a - b).norm())
        .collect();
    Ok(StieltjesGrid {
        points: grid.to_vec(),
        values_y,
        values_z,
        gap,
    })
}

/// `{u + iv : u in {0, 0.5, 1, 2, b + 1}, v in {0.2, 1}}` for ratio `y`.
pub fn default_z_grid(y: f64) -> Result<Vec<UpperHalfPoint>> {
    let b = MPLaw::new(y)?.b;
    let mut grid = Vec::new();
    for &v in &[0.2, 1.0] {
        for &u in &[0.0, 0.5, 1.0, 2.0, b + 1.0] {
            grid.push(UpperHalfPoint::new(u, v)?);
        }
    }
    Ok(grid)
}

/// A ladder of `(p, n)` sizes with a common ratio.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniversalitySpec {
    /// Column model; its `p`, `n` and `seed` are replaced per rung and replica.
    pub ensemble: EnsembleConfig,
    pub ladder: Vec<(usize, usize)>,
    pub grid: Vec<UpperHalfPoint>,
    pub replicas: usize,
    pub seed: u64,
    /// Also measure the KS distance of the data side to the MP law.
    #[serde(default)]
    pub compare_mp: bool,
}

impl UniversalitySpec {
    pub fn validate(&self) -> Result<()> {
        if self.ladder.is_empty() {
            return Err(Error::InvalidLadder("ladder is empty".into()));
        }
        if self.replicas < 3 {
            return Err(Error::InvalidLadder(format!(
                "replicas must be >= 3, got {}",
                self.replicas
            )));
        }
        if self.grid.is_empty() {
            return Err(Error::InvalidLadder("z grid is empty".into()));
        }
        let (p0, n0) = self.ladder[0];
        if p0 == 0 || n0 == 0 {
            return Err(Error::InvalidLadder("rung sizes must be >= 1".into()));
        }
        let y0 = p0 as f64 / n0 as f64;
        for w in self.ladder.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::InvalidLadder(format!(
                    "p must increase along the ladder: {} then {}",
                    w[0].0, w[1].0
                )));
            }
        }
        for &(p, n) in &self.ladder {
            if n == 0 || ((p as f64 / n as f64) - y0).abs() > 1e-12 * y0 {
                return Err(Error::InvalidLadder(format!(
                    "rung ({p}, {n}) changes the ratio p/n = {y0}"
                )));
            }
        }
        let (p, n) = self.ladder[0];
        self.ensemble.with_size(p, n, self.seed).validate()
    }

    pub fn ratio(&self) -> f64 {
        let (p, n) = self.ladder[0];
        p as f64 / n as f64
    }
}

/// Seed for replica `r` of rung `p`.
pub fn replica_seed(seed: u64, p: usize, replica: usize) -> u64 {
    derive_id(&[seed, p as u64, replica as u64])
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RungResult {
    pub p: usize,
    pub n: usize,
    pub replicas: usize,
    pub seeds: Vec<u64>,
    /// KS distance between the data-side and companion-side ESDs.
    pub ks_yz: MeanSe,
    pub ks_mp: Option<MeanSe>,
    /// Per grid point.
    pub gap: Vec<MeanSe>,
    pub max_gap: MeanSe,
    #[serde(skip)]
    pub spectra: Vec<(SpectralSample, SpectralSample)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UniversalityReport {
    pub config_hash: String,
    pub grid: Vec<UpperHalfPoint>,
    pub ladder: Vec<RungResult>,
    /// Top-rung mean max gap below the bottom rung's.
    pub gap_trend_decreasing: bool,
    /// Mean max gap strictly decreasing rung to rung.
    pub gap_monotone: bool,
    pub ks_mp_monotone: Option<bool>,
}

fn strictly_decreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] < w[0])
}

/// KS to the companion, KS to MP, grid gaps and both spectra.
type ReplicaRun = (f64, Option<f64>, Vec<f64>, SpectralSample, SpectralSample);

pub fn universality_experiment(spec: &UniversalitySpec) -> Result<UniversalityReport> {
    spec.validate()?;
    let mp = if spec.compare_mp {
        Some(MpReference::new(spec.ratio())?)
    } else {
        None
    };
    let mut ladder = Vec::with_capacity(spec.ladder.len());
    for &(p, n) in &spec.ladder {
        let seeds: Vec<u64> = (0..spec.replicas)
            .map(|r| replica_seed(spec.seed, p, r))
            .collect();
        let runs: Vec<ReplicaRun> = seeds
            .par_iter()
            .map(|&seed| {
                let cfg = spec.ensemble.with_size(p, n, seed);
                let hash = cfg.config_hash();
                let sample = generate(&cfg)?;
                let sy = sample_cov_spectrum(&sample.y)?.with_provenance(seed, hash.clone());
                let sz = sample_cov_spectrum(&sample.z)?.with_provenance(seed, hash);
                let ks = ks_distance(Reference::Sample(&sy), &sz);
                let ks_mp = mp.as_ref().map(|m| ks_distance(Reference::Law(m), &sy));
                let grid = stieltjes_gap(&sy, &sz, &spec.grid)?;
                Ok((ks, ks_mp, grid.gap, sy, sz))
            })
            .collect::<Result<_>>()?;
        let ks: Vec<f64> = runs.iter().map(|r| r.0).collect();
        let ks_mp: Option<Vec<f64>> = runs.iter().map(|r| r.1).collect();
        let gap = (0..spec.grid.len())
            .map(|i| mean_se(&runs.iter().map(|r| r.2[i]).collect::<Vec<_>>()))
            .collect();
        let max_gap: Vec<f64> = runs
            .iter()
            .map(|r| r.2.iter().copied().fold(0.0, f64::max))
            .collect();
        ladder.push(RungResult {
            p,
            n,
            replicas: spec.replicas,
            seeds,
            ks_yz: mean_se(&ks),
            ks_mp: ks_mp.map(|v| mean_se(&v)),
            gap,
            max_gap: mean_se(&max_gap),
            spectra: runs.into_iter().map(|r| (r.3, r.4)).collect(),
        });
    }
    let max_means: Vec<f64> = ladder.iter().map(|r| r.max_gap.mean).collect();
    let ks_mp_means: Option<Vec<f64>> = ladder.iter().map(|r| r.ks_mp.map(|m| m.mean)).collect();
    Ok(UniversalityReport {
        config_hash: spec.ensemble.config_hash(),
        grid: spec.grid.clone(),
        gap_trend_decreasing: max_means.last() < max_means.first(),
        gap_monotone: strictly_decreasing(&max_means),
        ks_mp_monotone: ks_mp_means.map(|v| strictly_decreasing(&v)),
        ladder,
    })
}
