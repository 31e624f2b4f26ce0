//! Computable diagnostics for the structural assumptions: the quadratic-form
//! weak law (exceedance frequencies), `tr(Sigma^2)/p^2`, the column-wise
//! exceedance frequency, the two `m`-dependence sums, the linear-process
//! condition and the conditional-norm statistic.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{draw_iid_column, quad_form_residual, TestMatrixFamily};
use crate::ensembles::{
    generate, ColumnModel, CovDraw, EnsembleConfig, EnsembleSample, IidModel, Modulation,
};
use crate::linalg::{sym_spectral_norm, SymMatrix};
use crate::rng::{derive_id, SeededRng};
use crate::stats::{mean_se, wilson_interval, MeanSe, Z95};
use crate::{Error, Result};

const DOMAIN_A1: u64 = 0xA1;
const DOMAIN_ASSUMPTIONS: u64 = 0xA5;

/// Innovation redraws per conditional expectation.
pub const CONDITIONAL_REDRAWS: usize = 256;
/// Conditioning columns sampled per realization for the short-range sum.
pub const CONDITIONING_POINTS: usize = 32;

/// Exceedance frequency of `|y^T A y - tr(Sigma A)| > eps p` at one `(eps, p)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct A1Cell {
    pub eps: f64,
    pub p: usize,
    pub family: String,
    pub replicas: usize,
    pub hits: u64,
    pub frequency: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct A1Trend {
    pub eps: f64,
    pub family: String,
    pub frequencies: Vec<f64>,
    /// Last frequency is zero, or the last 95% interval lies entirely below
    /// the first.
    pub decreasing: bool,
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct A1Report {
    pub cells: Vec<A1Cell>,
    pub trends: Vec<A1Trend>,
    pub flagged: bool,
}

/// Empirical `P(|y^T A y - tr(Sigma A)| > eps p)` along a `p` ladder. One
/// test matrix is drawn per `p`; `y` is redrawn for every replica.
pub fn a1_diagnostic(
    model: &IidModel,
    family: &TestMatrixFamily,
    eps: &[f64],
    ladder: &[usize],
    replicas: usize,
    seed: u64,
) -> Result<A1Report> {
    if replicas < 100 {
        return Err(Error::InvalidParameter(format!(
            "a1 diagnostic needs at least 100 replicas, got {replicas}"
        )));
    }
    if eps.is_empty() || ladder.is_empty() {
        return Err(Error::InvalidParameter(
            "eps list and p ladder must be non-empty".into(),
        ));
    }
    if let Some(e) = eps.iter().find(|e| !(**e > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "eps must be positive, got {e}"
        )));
    }
    family.validate()?;
    let tag = family.tag();
    let mut cells = Vec::new();
    for &p in ladder {
        let entries = model.entry_law.sampler(p)?;
        let covs = model.covariance.sampler(p)?;
        let a = family.generate(
            p,
            &mut SeededRng::for_path(seed, &[DOMAIN_A1, p as u64, u64::MAX]),
        )?;
        let residuals: Vec<f64> = (0..replicas)
            .into_par_iter()
            .map(|r| {
                let mut rng = SeededRng::for_path(seed, &[DOMAIN_A1, p as u64, r as u64]);
                let (y, sigma) = draw_iid_column(&entries, &covs, p, &mut rng);
                ((a.quadratic_form(&y) - sigma.trace_with(&a)) / p as f64).abs()
            })
            .collect();
        for &e in eps {
            let hits = residuals.iter().filter(|&&r| r > e).count() as u64;
            let (ci_low, ci_high) = wilson_interval(hits, replicas as u64, Z95);
            cells.push(A1Cell {
                eps: e,
                p,
                family: tag.clone(),
                replicas,
                hits,
                frequency: hits as f64 / replicas as f64,
                ci_low,
                ci_high,
            });
        }
    }
    let trends: Vec<A1Trend> = eps
        .iter()
        .map(|&e| {
            let row: Vec<&A1Cell> = cells.iter().filter(|c| c.eps == e).collect();
            let first = row[0];
            let last = row[row.len() - 1];
            let decreasing = last.hits == 0 || (row.len() > 1 && last.ci_high < first.ci_low);
            A1Trend {
                eps: e,
                family: tag.clone(),
                frequencies: row.iter().map(|c| c.frequency).collect(),
                decreasing,
                flagged: !decreasing,
            }
        })
        .collect();
    let flagged = trends.iter().any(|t| t.flagged);
    Ok(A1Report {
        cells,
        trends,
        flagged,
    })
}

/// Residual statistic wrapper for a single draw, used by the CLI.
pub fn a1_residual(y: &[f64], a: &SymMatrix, sigma: &SymMatrix) -> Result<f64> {
    quad_form_residual(y, a, sigma)
}

/// Diagnostics at one `(p, n)` rung. Sums are normalized by `n^3`, the
/// linear-process condition by `p^2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRung {
    pub p: usize,
    pub n: usize,
    pub m: usize,
    pub a2: MeanSe,
    pub a4: f64,
    pub a5_short: f64,
    pub a5_long: f64,
    pub a6: f64,
    pub prop_a5: f64,
}

/// `true` when the statistic decreases from the first to the last rung
/// (or vanishes identically).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticTrends {
    pub a2: bool,
    pub a4: bool,
    pub a5_short: bool,
    pub a5_long: bool,
    pub a6: bool,
    pub prop_a5: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub config_hash: String,
    pub eps: f64,
    pub realizations: usize,
    pub rungs: Vec<DiagnosticRung>,
    pub trends: DiagnosticTrends,
    /// Names of the diagnostics whose trend fails.
    pub flagged: Vec<String>,
}

fn trend_ok(values: &[f64]) -> bool {
    let first = values[0];
    let last = values[values.len() - 1];
    last == 0.0 || last < first
}

fn add_cov(acc: &mut DMatrix<f64>, draw: &CovDraw) {
    match draw {
        CovDraw::Identity(p) => (0..*p).for_each(|i| acc[(i, i)] += 1.0),
        CovDraw::Scalar { p, xi } => (0..*p).for_each(|i| acc[(i, i)] += xi),
        CovDraw::Diagonal(d) => d.iter().enumerate().for_each(|(i, v)| acc[(i, i)] += v),
        CovDraw::Dense { sigma, .. } => *acc += sigma.as_matrix(),
    }
}

fn diag_of(draw: &CovDraw) -> Option<Vec<f64>> {
    match draw {
        CovDraw::Identity(p) => Some(vec![1.0; *p]),
        CovDraw::Scalar { p, xi } => Some(vec![*xi; *p]),
        CovDraw::Diagonal(d) => Some(d.clone()),
        CovDraw::Dense { .. } => None,
    }
}

fn sym_norm(m: DMatrix<f64>) -> Result<f64> {
    sym_spectral_norm(&SymMatrix::symmetric_part(&m)?)
}

/// Short-range sum for the modulated MDS, estimated at sampled conditioning
/// columns `k` and scaled to the full pair count. Conditional expectations
/// given the past are taken with respect to the innovations, which are
/// recovered as `eps_k = y_k / a_k`; `E_k y_l y_l^T = E_k Sigma_l` because
/// `eps_l` is independent of the past with identity covariance.
fn mds_short_range(
    sample: &EnsembleSample,
    m: usize,
    law: &crate::ensembles::EntryLaw,
    rule: &dyn Modulation,
    rng_seed: u64,
) -> Result<f64> {
    let p = sample.y.rows();
    let n = sample.y.cols();
    if m < 2 || n < m + 1 {
        return Ok(0.0);
    }
    let entries = law.sampler(p)?;
    let eps: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            let d = diag_of(&sample.sigmas[k]).expect("modulated columns have diagonal covariance");
            sample
                .y
                .column(k)
                .iter()
                .zip(&d)
                .map(|(y, s)| y / s.sqrt())
                .collect()
        })
        .collect();
    // conditioning columns k in [m-1, n-2] so the known window never reaches the burn-in
    let lo = m - 1;
    let hi = n - 2;
    let count = CONDITIONING_POINTS.min(hi + 1 - lo);
    let ks: Vec<usize> = (0..count)
        .map(|i| lo + i * (hi - lo) / count.max(2).saturating_sub(1).max(1))
        .collect();
    let terms: Vec<f64> = ks
        .par_iter()
        .map(|&k| {
            let mut rng = SeededRng::for_path(rng_seed, &[DOMAIN_ASSUMPTIONS, k as u64]);
            let trace_k =
                sample.y.column(k).iter().map(|v| v * v).sum::<f64>() + sample.sigmas[k].trace();
            let mut acc = 0.0;
            for l in k + 1..(k + m).min(n) {
                let unknown = l - 1 - k;
                let mut mean_sq = vec![0.0; p];
                for _ in 0..CONDITIONAL_REDRAWS {
                    let fresh: Vec<Vec<f64>> = (0..unknown)
                        .map(|_| {
                            let mut e = vec![0.0; p];
                            entries.fill(&mut rng, &mut e);
                            e
                        })
                        .collect();
                    let window: Vec<&[f64]> = (l + 1 - m..l)
                        .map(|j| {
                            if j <= k {
                                eps[j].as_slice()
                            } else {
                                fresh[j - k - 1].as_slice()
                            }
                        })
                        .collect();
                    for (acc_i, a) in mean_sq.iter_mut().zip(rule.diagonal(&window, p)) {
                        *acc_i += a * a;
                    }
                }
                let norm =
                    mean_sq.iter().fold(0.0f64, |mx, v| mx.max(*v)) / CONDITIONAL_REDRAWS as f64;
                acc += 2.0 * norm * trace_k;
            }
            acc
        })
        .collect();
    // average per conditioning column, times the number of columns with a full window
    let avg = terms.iter().sum::<f64>() / terms.len() as f64;
    let n3 = (n as f64).powi(3);
    Ok(avg * (n - m) as f64 / n3)
}

/// Per-rung diagnostics over `realizations` independent samples. Linear
/// processes are diagnosed through their i.i.d. input columns.
pub fn assumption_diagnostics(
    config: &EnsembleConfig,
    ladder: &[(usize, usize)],
    realizations: usize,
    eps: f64,
    seed: u64,
) -> Result<DiagnosticsReport> {
    config.validate()?;
    if ladder.is_empty() || realizations == 0 {
        return Err(Error::InvalidParameter(
            "ladder and realizations must be non-empty".into(),
        ));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "eps must be positive, got {eps}"
        )));
    }
    let base = match &config.column_model {
        ColumnModel::LinearProcess { inner, .. } => EnsembleConfig {
            column_model: ColumnModel::Iid {
                entry_law: inner.entry_law.clone(),
                covariance: inner.covariance.clone(),
            },
            ..config.clone()
        },
        _ => config.clone(),
    };
    let m = match &base.column_model {
        ColumnModel::MdsExample1 { m, .. } => *m,
        _ => 1,
    };
    let mut rungs = Vec::new();
    for &(p, n) in ladder {
        let mut tr_sq = Vec::new();
        let mut a4_hits = 0usize;
        let mut yy = DMatrix::<f64>::zeros(p, p);
        let mut ss = DMatrix::<f64>::zeros(p, p);
        let mut short = 0.0;
        let mut prop = 0.0f64;
        for r in 0..realizations {
            let cfg = base.with_size(p, n, derive_id(&[seed, p as u64, n as u64, r as u64]));
            let sample = generate(&cfg)?;
            for s in &sample.sigmas {
                let t = s.trace_sq();
                tr_sq.push(t / (p * p) as f64);
                if t > eps * (p * p) as f64 {
                    a4_hits += 1;
                }
                add_cov(&mut ss, s);
                if m > 1 {
                    // Sigma_k is known given the past, so both conditional norms equal ||Sigma_k||
                    prop = prop.max(2.0 * s.norm());
                }
            }
            yy += sample.y.as_matrix() * sample.y.as_matrix().transpose();
            if let ColumnModel::MdsExample1 {
                entry_law,
                modulation,
                ..
            } = &base.column_model
            {
                short += mds_short_range(&sample, m, entry_law, modulation, cfg.seed)?;
            }
        }
        let total = (realizations * n) as f64;
        yy /= total;
        ss /= total;
        let norm_sum = sym_norm(yy.clone())? + sym_norm(ss.clone())?;
        let trace_sum = yy.trace() + ss.trace();
        if m == 1 {
            // independent columns: conditional expectations are unconditional
            prop = norm_sum;
        }
        let pairs: f64 = (m..2 * m).map(|d| 2.0 * n.saturating_sub(d) as f64).sum();
        rungs.push(DiagnosticRung {
            p,
            n,
            m,
            a2: mean_se(&tr_sq),
            a4: a4_hits as f64 / total,
            a5_short: short / realizations as f64,
            a5_long: norm_sum * trace_sum * pairs / (n as f64).powi(3),
            a6: norm_sum * trace_sum / (p * p) as f64,
            prop_a5: prop * m as f64 / n as f64,
        });
    }
    let col = |f: fn(&DiagnosticRung) -> f64| -> bool {
        trend_ok(&rungs.iter().map(f).collect::<Vec<_>>())
    };
    let trends = DiagnosticTrends {
        a2: col(|r| r.a2.mean),
        a4: col(|r| r.a4),
        a5_short: col(|r| r.a5_short),
        a5_long: col(|r| r.a5_long),
        a6: col(|r| r.a6),
        prop_a5: col(|r| r.prop_a5),
    };
    let mut flagged = Vec::new();
    for (name, ok) in [
        ("a2", trends.a2),
        ("a4", trends.a4),
        ("a5_short", trends.a5_short),
        ("a5_long", trends.a5_long),
        ("a6", trends.a6),
        ("prop_a5", trends.prop_a5),
    ] {
        if !ok {
            flagged.push(name.to_string());
        }
    }
    Ok(DiagnosticsReport {
        config_hash: config.config_hash(),
        eps,
        realizations,
        rungs,
        trends,
        flagged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concentration::FamilyKind;
    use crate::ensembles::{CovarianceModel, EntryLaw, ModulationRule, ScalarLaw};

    fn identity_family() -> TestMatrixFamily {
        TestMatrixFamily::new(FamilyKind::Identity {}, 1.0).unwrap()
    }

    #[test]
    fn gaussian_exceedance_is_small_and_decreasing() {
        let model = IidModel {
            entry_law: EntryLaw::StandardNormal {},
            covariance: CovarianceModel::Identity {},
        };
        let r = a1_diagnostic(
            &model,
            &identity_family(),
            &[0.2, 0.5],
            &[50, 100, 400],
            400,
            1,
        )
        .unwrap();
        let cell = r.cells.iter().find(|c| c.p == 400 && c.eps == 0.5).unwrap();
        // P(|chi^2_400 - 400| > 200) is about 1e-12
        assert!(cell.frequency <= 0.01);
        assert!(r.trends.iter().all(|t| t.decreasing), "{:?}", r.trends);
        assert!(!r.flagged);
    }

    #[test]
    fn degenerate_vectors_never_exceed() {
        let model = IidModel {
            entry_law: EntryLaw::Rademacher {},
            covariance: CovarianceModel::ScalarRandom {
                law: ScalarLaw::Constant { value: 0.0 },
            },
        };
        let r = a1_diagnostic(&model, &identity_family(), &[0.01, 0.5], &[10, 20], 100, 2).unwrap();
        assert!(r.cells.iter().all(|c| c.hits == 0));
    }

    #[test]
    fn heavy_two_point_law_is_flagged() {
        // q = 1/p: y^T y / p - 1 = N - 1 with N ~ Binomial(p, 1/p)
        let model = IidModel {
            entry_law: EntryLaw::TwoPointHeavy {
                scale: 1.0,
                exponent: 1.0,
            },
            covariance: CovarianceModel::Identity {},
        };
        let r = a1_diagnostic(
            &model,
            &identity_family(),
            &[0.5],
            &[50, 100, 200, 400],
            400,
            3,
        )
        .unwrap();
        assert!(r.flagged);
        assert!(r.cells.iter().all(|c| c.frequency > 0.5));
    }

    #[test]
    fn square_root_sparsity_still_satisfies_a1() {
        // q = p^-1/2: y^T y / p - 1 = N / sqrt(p) - 1 with relative spread p^-1/4
        let model = IidModel {
            entry_law: EntryLaw::TwoPointHeavy {
                scale: 1.0,
                exponent: 0.5,
            },
            covariance: CovarianceModel::Identity {},
        };
        let r = a1_diagnostic(
            &model,
            &identity_family(),
            &[0.5],
            &[50, 100, 200, 400],
            400,
            5,
        )
        .unwrap();
        assert!(!r.flagged, "{r:?}");
    }

    #[test]
    fn a1_rejects_few_replicas() {
        let model = IidModel {
            entry_law: EntryLaw::Rademacher {},
            covariance: CovarianceModel::Identity {},
        };
        assert!(a1_diagnostic(&model, &identity_family(), &[0.5], &[10], 50, 0).is_err());
    }

    #[test]
    fn identity_model_diagnostics_decrease() {
        let cfg = EnsembleConfig::iid(
            10,
            20,
            EntryLaw::StandardNormal {},
            CovarianceModel::Identity {},
            0,
        );
        let r =
            assumption_diagnostics(&cfg, &[(25, 50), (50, 100), (100, 200)], 2, 0.1, 4).unwrap();
        assert!(r.flagged.is_empty(), "{:?}", r);
        assert!((r.rungs[0].a2.mean - 1.0 / 25.0).abs() < 1e-15);
        assert_eq!(r.rungs[0].a5_short, 0.0);
    }

    #[test]
    fn spike_covariance_is_flagged() {
        let cfg = EnsembleConfig::iid(
            10,
            20,
            EntryLaw::StandardNormal {},
            CovarianceModel::Spike { strength: 1.0 },
            0,
        );
        let r =
            assumption_diagnostics(&cfg, &[(25, 50), (50, 100), (100, 200)], 1, 0.1, 5).unwrap();
        assert!(r.flagged.contains(&"a2".to_string()));
        assert!(r.flagged.contains(&"a6".to_string()));
        assert!(!r.trends.a2);
    }

    #[test]
    fn modulated_mds_diagnostics_decrease() {
        let cfg = EnsembleConfig {
            p: 10,
            n: 20,
            column_model: ColumnModel::MdsExample1 {
                entry_law: EntryLaw::StandardNormal {},
                m: 3,
                modulation: ModulationRule::ClippedVariance,
            },
            seed: 0,
        };
        let r = assumption_diagnostics(&cfg, &[(25, 50), (100, 200)], 1, 0.1, 6).unwrap();
        assert!(r.flagged.is_empty(), "{r:?}");
        assert!(r.rungs.iter().all(|g| g.a5_short > 0.0));
    }
}
