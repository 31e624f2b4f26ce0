//! Quadratic-form statistics: the weak-law residual, Monte Carlo checks of
//! the quadratic-form moment inequalities, the Lindeberg functional and
//! computable diagnostics for the structural assumptions.

mod bounds;
mod diagnostics;
mod families;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ensembles::{CovDraw, CovSampler, EntrySampler};
use crate::linalg::{RectMatrix, SymMatrix};
use crate::stats::{wilson_interval, MeanSe};
use crate::{Error, Result};

pub use bounds::*;
pub use diagnostics::*;
pub use families::*;

/// `(y^T A y - tr(Sigma A)) / p` for one draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadFormSample {
    pub residual: f64,
    pub p: usize,
    pub matrix_id: String,
}

pub fn quad_form_residual(y: &[f64], a: &SymMatrix, sigma: &SymMatrix) -> Result<f64> {
    let p = a.dim();
    if y.len() != p || sigma.dim() != p {
        return Err(Error::DimensionMismatch(format!(
            "y has length {}, A is {p}x{p}, Sigma is {}x{}",
            y.len(),
            sigma.dim(),
            sigma.dim()
        )));
    }
    Ok((a.quadratic_form(y) - sigma.trace_product(a)) / p as f64)
}

/// Residual for a general square `A`; equal to the residual of its
/// symmetric part.
pub fn quad_form_residual_general(y: &[f64], a: &RectMatrix, sigma: &SymMatrix) -> Result<f64> {
    let p = a.rows();
    if a.cols() != p || y.len() != p || sigma.dim() != p {
        return Err(Error::DimensionMismatch(
            "A must be p x p and match y and Sigma".into(),
        ));
    }
    Ok((bilinear_real(y, a, y) - trace_product_general(sigma, a)) / p as f64)
}

/// `x^T A y` for a square real `A`.
pub fn bilinear_real(x: &[f64], a: &RectMatrix, y: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (j, &yj) in y.iter().enumerate() {
        let col: f64 = a.column(j).iter().zip(x).map(|(aij, xi)| aij * xi).sum();
        acc += col * yj;
    }
    acc
}

fn trace_product_general(sigma: &SymMatrix, a: &RectMatrix) -> f64 {
    let p = sigma.dim();
    (0..p)
        .map(|i| (0..p).map(|j| sigma.get(i, j) * a.get(j, i)).sum::<f64>())
        .sum()
}

/// `tr(A A^T)`.
pub fn frobenius_sq(a: &RectMatrix) -> f64 {
    a.as_matrix().norm_squared()
}

/// One inequality check: Monte Carlo left side against a right side.
///
/// `slack = rhs + k * rhs_stderr - lhs_lower`, where `lhs_lower` is
/// `lhs - k * stderr` for mean estimators and the Wilson lower bound at
/// normal quantile `k` for frequencies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheckReport {
    pub theorem: String,
    pub instance: String,
    pub replicas: usize,
    pub lhs_estimate: f64,
    pub lhs_stderr: f64,
    pub lhs_lower: f64,
    pub rhs: f64,
    pub rhs_stderr: f64,
    pub k: f64,
    pub slack: f64,
    pub pass: bool,
}

/// Relative allowance for floating-point roundoff when a bound is attained
/// with equality.
pub const ROUNDOFF_TOLERANCE: f64 = 1e-10;

impl BoundCheckReport {
    pub fn from_mean(
        theorem: &str,
        instance: String,
        lhs: MeanSe,
        rhs: f64,
        rhs_stderr: f64,
        k: f64,
    ) -> Self {
        let lhs_lower = lhs.mean - k * lhs.se;
        Self::assemble(
            theorem, instance, lhs.count, lhs.mean, lhs.se, lhs_lower, rhs, rhs_stderr, k,
        )
    }

    pub fn from_frequency(
        theorem: &str,
        instance: String,
        hits: u64,
        trials: u64,
        rhs: f64,
        rhs_stderr: f64,
        k: f64,
    ) -> Self {
        let phat = if trials == 0 {
            0.0
        } else {
            hits as f64 / trials as f64
        };
        let se = if trials == 0 {
            0.0
        } else {
            (phat * (1.0 - phat) / trials as f64).sqrt()
        };
        let (lower, _) = wilson_interval(hits, trials, k);
        Self::assemble(
            theorem,
            instance,
            trials as usize,
            phat,
            se,
            lower,
            rhs,
            rhs_stderr,
            k,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        theorem: &str,
        instance: String,
        replicas: usize,
        lhs_estimate: f64,
        lhs_stderr: f64,
        lhs_lower: f64,
        rhs: f64,
        rhs_stderr: f64,
        k: f64,
    ) -> Self {
        let slack = rhs + k * rhs_stderr - lhs_lower;
        Self {
            theorem: theorem.to_string(),
            instance,
            replicas,
            lhs_estimate,
            lhs_stderr,
            lhs_lower,
            rhs,
            rhs_stderr,
            k,
            slack,
            pass: slack >= -ROUNDOFF_TOLERANCE * (1.0 + rhs.abs()),
        }
    }

    /// One JSON object per line.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Truncation level `b > 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct TruncationLevel(f64);

impl TruncationLevel {
    pub fn new(b: f64) -> Result<Self> {
        if b > 1.0 && b.is_finite() {
            Ok(Self(b))
        } else {
            Err(Error::InvalidParameter(format!(
                "truncation level must exceed 1, got {b}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for TruncationLevel {
    type Error = Error;

    fn try_from(b: f64) -> Result<Self> {
        Self::new(b)
    }
}

impl From<TruncationLevel> for f64 {
    fn from(b: TruncationLevel) -> f64 {
        b.0
    }
}

/// One i.i.d.-model column: covariance draw first, then the entries.
pub(crate) fn draw_iid_column(
    entries: &EntrySampler,
    covs: &CovSampler,
    p: usize,
    rng: &mut impl rand::RngCore,
) -> (Vec<f64>, Arc<CovDraw>) {
    let sigma = covs.draw(rng);
    let mut x = vec![0.0; p];
    entries.fill(rng, &mut x);
    (sigma.apply_root(&x), sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::{CovarianceModel, EntryLaw};
    use crate::rng::SeededRng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn residual_examples() {
        let p = 5;
        let i = SymMatrix::identity(p);
        let y = vec![1.0; p];
        assert_eq!(quad_form_residual(&y, &i, &i).unwrap(), 0.0);
        let mut d = vec![0.0; p];
        d[0] = 1.0;
        let a = SymMatrix::from_diagonal(&d).unwrap();
        let mut y = vec![0.0; p];
        y[0] = (p as f64).sqrt();
        let r = quad_form_residual(&y, &a, &i).unwrap();
        assert!((r - (p as f64 - 1.0) / p as f64).abs() < 1e-15);
        assert!(matches!(
            quad_form_residual(&[1.0], &i, &i),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn gaussian_residual_concentrates() {
        // (chi^2_p - p)/p has standard deviation sqrt(2/p)
        let p = 10_000;
        let mut rng = SeededRng::new(3, 0);
        let bound = 5.0 * (2.0 / p as f64).sqrt();
        let mut inside = 0;
        for _ in 0..1000 {
            let y: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
            // A = Sigma = I, so the residual is (|y|^2 - p)/p
            let r = (y.iter().map(|v| v * v).sum::<f64>() - p as f64) / p as f64;
            if r.abs() <= bound {
                inside += 1;
            }
        }
        assert!(inside >= 990, "{inside}");
    }

    #[test]
    fn residual_is_invariant_under_symmetrization() {
        let mut rng = SeededRng::new(4, 0);
        let p = 6;
        let a = RectMatrix::from_fn(p, p, |_, _| rng.sample(StandardNormal)).unwrap();
        let sym = SymMatrix::symmetric_part(a.as_matrix()).unwrap();
        let sigma = SymMatrix::from_diagonal(&[1.0, 2.0, 0.5, 1.0, 3.0, 0.1]).unwrap();
        let y: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        let r1 = quad_form_residual_general(&y, &a, &sigma).unwrap();
        let r2 = quad_form_residual(&y, &sym, &sigma).unwrap();
        assert!((r1 - r2).abs() < 1e-12);
    }

    #[test]
    fn rademacher_diagonal_forms_vanish() {
        let p = 8;
        let entries = EntryLaw::Rademacher {}.sampler(p).unwrap();
        let covs = CovarianceModel::Identity {}.sampler(p).unwrap();
        let a = SymMatrix::from_diagonal(&[1.0, -2.0, 3.0, 0.5, 0.0, 4.0, 1.0, 2.0]).unwrap();
        let mut rng = SeededRng::new(5, 0);
        for _ in 0..100 {
            let (y, sigma) = draw_iid_column(&entries, &covs, p, &mut rng);
            assert_eq!(quad_form_residual(&y, &a, &sigma.to_sym()).unwrap(), 0.0);
        }
    }

    #[test]
    fn report_pass_matches_slack_sign() {
        let r = BoundCheckReport::from_frequency("prop1", "zero".into(), 0, 100, 0.0, 0.0, 3.0);
        assert!(r.pass && r.slack == 0.0);
        let r = BoundCheckReport::from_frequency("prop1", "x".into(), 60, 100, 0.1, 0.0, 3.0);
        assert!(!r.pass && r.slack < 0.0);
        let r = BoundCheckReport::from_mean(
            "t5",
            "x".into(),
            MeanSe {
                mean: 1.0,
                se: 0.0,
                count: 10,
            },
            1.0,
            0.0,
            3.0,
        );
        assert!(r.pass);
        assert!(TruncationLevel::new(1.0).is_err());
        assert!(serde_json::from_str::<TruncationLevel>("0.5").is_err());
    }
}
