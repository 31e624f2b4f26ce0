//! The Marchenko-Pastur law with ratio `y`: support, density, CDF and
//! Stieltjes transform.
//!
//! Integrals over `[a, b]` use the substitution `lambda = a + (b - a) sin^2(theta)`,
//! under which the density times the Jacobian becomes
//! `(b - a)^2 sin^2 cos^2 / (pi y lambda)`, a smooth function on `[0, pi/2]`.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::linalg::UpperHalfPoint;
use crate::quadrature::integrate;
use crate::{Error, Result};

const CDF_TOL: f64 = 1e-11;
const STIELTJES_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MPLaw {
    pub y: f64,
    pub a: f64,
    pub b: f64,
    pub mass0: f64,
}

/// `(a, b, mass0)` for ratio `y`.
pub fn mp_support(y: f64) -> Result<(f64, f64, f64)> {
    let law = MPLaw::new(y)?;
    Ok((law.a, law.b, law.mass0))
}

pub fn mp_pdf(lambda: f64, y: f64) -> Result<f64> {
    Ok(MPLaw::new(y)?.pdf(lambda))
}

pub fn mp_cdf(lambda: f64, y: f64) -> Result<f64> {
    Ok(MPLaw::new(y)?.cdf(lambda))
}

pub fn mp_stieltjes(z: UpperHalfPoint, y: f64) -> Result<Complex64> {
    Ok(MPLaw::new(y)?.stieltjes(z))
}

impl MPLaw {
    pub fn new(y: f64) -> Result<Self> {
        if !(y > 0.0) || !y.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "aspect ratio y must be positive, got {y}"
            )));
        }
        let r = y.sqrt();
        Ok(Self {
            y,
            a: (1.0 - r) * (1.0 - r),
            b: (1.0 + r) * (1.0 + r),
            mass0: (1.0 - 1.0 / y).max(0.0),
        })
    }

    /// Density of the absolutely continuous part.
    pub fn pdf(&self, lambda: f64) -> f64 {
        if !(lambda > self.a && lambda < self.b) || lambda <= 0.0 {
            return 0.0;
        }
        ((self.b - lambda) * (lambda - self.a)).sqrt() / (2.0 * PI * lambda * self.y)
    }

    fn lambda_at(&self, theta: f64) -> f64 {
        let s = theta.sin();
        self.a + (self.b - self.a) * s * s
    }

    /// Density times Jacobian in the angular variable.
    fn theta_weight(&self, theta: f64) -> f64 {
        let (s, c) = theta.sin_cos();
        let w = self.b - self.a;
        let lambda = self.lambda_at(theta);
        if lambda <= 0.0 {
            // only reachable at theta = 0 when a = 0, where the weight tends to w/pi
            return w / (PI * self.y);
        }
        w * w * s * s * c * c / (PI * self.y * lambda)
    }

    fn theta_of(&self, lambda: f64) -> f64 {
        let t = ((lambda - self.a) / (self.b - self.a)).clamp(0.0, 1.0);
        t.sqrt().asin()
    }

    /// Mass of the continuous part on `[a, lambda(theta)]`.
    fn continuous_mass(&self, theta: f64) -> f64 {
        integrate(|t| self.theta_weight(t), 0.0, theta, CDF_TOL)
    }

    pub fn cdf(&self, lambda: f64) -> f64 {
        if lambda < 0.0 {
            return 0.0;
        }
        if lambda >= self.b {
            return 1.0;
        }
        if lambda <= self.a {
            return self.mass0;
        }
        (self.mass0 + self.continuous_mass(self.theta_of(lambda))).min(1.0)
    }

    /// `int dF(lambda) / (lambda - z)`, including the atom at zero.
    pub fn stieltjes(&self, z: UpperHalfPoint) -> Complex64 {
        let zc = z.to_complex();
        let atom = if self.mass0 > 0.0 {
            -self.mass0 / zc
        } else {
            Complex64::new(0.0, 0.0)
        };
        // Split at the angle of Re z when it lies inside the support so the
        // near-pole peak sits on a panel boundary.
        let mut cuts = vec![0.0];
        if z.re() > self.a && z.re() < self.b {
            cuts.push(self.theta_of(z.re()));
        }
        cuts.push(FRAC_PI_2);
        let mut total = atom;
        for w in cuts.windows(2) {
            total += integrate(
                |t| {
                    Complex64::new(self.theta_weight(t), 0.0)
                        / (Complex64::new(self.lambda_at(t), 0.0) - zc)
                },
                w[0],
                w[1],
                STIELTJES_TOL,
            );
        }
        total
    }

    /// Residual of the quadratic `y z s^2 + (z + y - 1) s + 1 = 0` satisfied
    /// by the transform.
    pub fn self_consistency_residual(&self, z: UpperHalfPoint, s: Complex64) -> f64 {
        let zc = z.to_complex();
        (self.y * zc * s * s + (zc + self.y - 1.0) * s + 1.0).norm()
    }

    /// Tabulated CDF for repeated evaluation and quantiles.
    pub fn table(&self, panels: usize) -> MpTable {
        MpTable::new(*self, panels)
    }
}

/// Cumulative continuous mass at equally spaced angles, refined inside a
/// panel by one more quadrature.
#[derive(Clone, Debug)]
pub struct MpTable {
    law: MPLaw,
    step: f64,
    cum: Vec<f64>,
}

impl MpTable {
    fn new(law: MPLaw, panels: usize) -> Self {
        let panels = panels.max(1);
        let step = FRAC_PI_2 / panels as f64;
        let mut cum = Vec::with_capacity(panels + 1);
        cum.push(0.0);
        let mut acc = 0.0;
        for i in 0..panels {
            acc += integrate(
                |t| law.theta_weight(t),
                i as f64 * step,
                (i + 1) as f64 * step,
                CDF_TOL / panels as f64,
            );
            cum.push(acc);
        }
        Self { law, step, cum }
    }

    pub fn law(&self) -> &MPLaw {
        &self.law
    }

    fn mass_at_theta(&self, theta: f64) -> f64 {
        let idx = ((theta / self.step).floor() as usize).min(self.cum.len() - 2);
        let start = idx as f64 * self.step;
        self.cum[idx] + integrate(|t| self.law.theta_weight(t), start, theta, CDF_TOL)
    }

    pub fn cdf(&self, lambda: f64) -> f64 {
        let law = &self.law;
        if lambda < 0.0 {
            0.0
        } else if lambda >= law.b {
            1.0
        } else if lambda <= law.a {
            law.mass0
        } else {
            (law.mass0 + self.mass_at_theta(law.theta_of(lambda))).min(1.0)
        }
    }

    /// Smallest `lambda` with `F(lambda) >= prob`.
    pub fn quantile(&self, prob: f64) -> f64 {
        let law = &self.law;
        if prob <= law.mass0 {
            return 0.0;
        }
        if prob >= 1.0 {
            return law.b;
        }
        let target = prob - law.mass0;
        let idx = self
            .cum
            .partition_point(|&c| c < target)
            .clamp(1, self.cum.len() - 1);
        let (mut lo, mut hi) = ((idx - 1) as f64 * self.step, idx as f64 * self.step);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.mass_at_theta(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        law.lambda_at(hi)
    }

    /// Quantiles at probabilities `k / (count + 1)`, `k = 1..=count`.
    pub fn quantile_grid(&self, count: usize) -> Vec<f64> {
        (1..=count)
            .map(|k| self.quantile(k as f64 / (count + 1) as f64))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const YS: [f64; 6] = [0.1, 0.25, 0.5, 1.0, 2.0, 4.0];

    fn midpoint_cdf(law: &MPLaw, lambda: f64, steps: usize) -> f64 {
        // composite midpoint rule after the substitution lambda = a + t^2,
        // which removes the left endpoint singularity
        let top = (lambda.min(law.b) - law.a).max(0.0).sqrt();
        let h = top / steps as f64;
        let g = |t: f64| 2.0 * t * law.pdf(law.a + t * t);
        let acc: f64 = (0..steps).map(|i| g((i as f64 + 0.5) * h)).sum();
        law.mass0 + acc * h
    }

    fn closed_form_stieltjes(y: f64, z: Complex64) -> Complex64 {
        let b = z + y - 1.0;
        let disc = (b * b - 4.0 * y * z).sqrt();
        let r1 = (-b + disc) / (2.0 * y * z);
        let r2 = (-b - disc) / (2.0 * y * z);
        let bound = 1.0 / z.im;
        [r1, r2]
            .into_iter()
            .find(|r| r.im > 0.0 && r.norm() <= bound * (1.0 + 1e-12))
            .expect("one admissible root")
    }

    #[test]
    fn support_examples() {
        assert_eq!(mp_support(1.0).unwrap(), (0.0, 4.0, 0.0));
        assert_eq!(mp_support(0.25).unwrap(), (0.25, 2.25, 0.0));
        assert_eq!(mp_support(4.0).unwrap(), (1.0, 9.0, 0.75));
        assert!(matches!(mp_support(0.0), Err(Error::InvalidParameter(_))));
        assert!(mp_support(-1.0).is_err());
    }

    #[test]
    fn pdf_examples() {
        let law = MPLaw::new(0.25).unwrap();
        assert_eq!(law.pdf(law.a), 0.0);
        assert_eq!(law.pdf(law.b), 0.0);
        // sqrt(2 * 2) / (2 pi * 2 * 1) = 1 / (2 pi)
        assert!((mp_pdf(2.0, 1.0).unwrap() - 0.5 / PI).abs() < 1e-15);
        // y = 0.5: a = 1.5 - sqrt 2, b = 1.5 + sqrt 2, pdf(1) = sqrt((b-1)(1-a)) / pi
        let a = 1.5 - 2f64.sqrt();
        let b = 1.5 + 2f64.sqrt();
        let expected = ((b - 1.0) * (1.0 - a)).sqrt() / PI;
        assert!((mp_pdf(1.0, 0.5).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.421_084_399_347_792_35).abs() < 1e-14);
    }

    #[test]
    fn normalization_and_monotonicity() {
        for &y in &YS {
            let law = MPLaw::new(y).unwrap();
            assert!((law.cdf(law.b - 1e-15) - 1.0).abs() < 1e-8, "y={y}");
            let total = law.mass0 + law.continuous_mass(FRAC_PI_2);
            assert!((total - 1.0).abs() < 1e-8, "y={y} total={total}");
            let mut prev = 0.0;
            for i in 0..1000 {
                let lambda = -0.5 + (law.b + 1.0) * i as f64 / 999.0;
                let v = law.cdf(lambda);
                assert!(v >= prev - 1e-15, "y={y} lambda={lambda}");
                prev = v;
            }
        }
    }

    #[test]
    fn cdf_examples() {
        assert_eq!(mp_cdf(-0.1, 0.5).unwrap(), 0.0);
        assert_eq!(mp_cdf(10.0, 0.5).unwrap(), 1.0);
        assert_eq!(mp_cdf(0.5, 4.0).unwrap(), 0.75);
        let law = MPLaw::new(1.0).unwrap();
        let oracle = midpoint_cdf(&law, 2.0, 200_000);
        assert!(
            (law.cdf(2.0) - oracle).abs() < 1e-6,
            "{} vs {oracle}",
            law.cdf(2.0)
        );
        // y = 1 has the antiderivative (2t + sin 2t) / pi with lambda = 4 sin^2 t
        assert!((law.cdf(2.0) - (0.5 + 1.0 / PI)).abs() < 1e-10);
        let law = MPLaw::new(2.0).unwrap();
        let oracle = midpoint_cdf(&law, 3.0, 200_000);
        assert!((law.cdf(3.0) - oracle).abs() < 1e-6);
    }

    #[test]
    fn table_agrees_with_direct_cdf() {
        for &y in &[0.5, 1.0, 3.0] {
            let law = MPLaw::new(y).unwrap();
            let table = law.table(256);
            for i in 0..200 {
                let lambda = law.b * i as f64 / 199.0;
                assert!((table.cdf(lambda) - law.cdf(lambda)).abs() < 1e-10);
            }
            for &q in &[0.01, 0.3, 0.8, 0.999] {
                let x = table.quantile(q);
                if q > law.mass0 {
                    assert!((law.cdf(x) - q).abs() < 1e-9, "y={y} q={q}");
                } else {
                    assert_eq!(x, 0.0);
                }
            }
        }
    }

    #[test]
    fn stieltjes_tail() {
        let z = UpperHalfPoint::new(0.0, 1000.0).unwrap();
        let s = mp_stieltjes(z, 0.5).unwrap();
        assert!((s - Complex64::new(0.0, 1e-3)).norm() < 1e-4);
    }

    #[test]
    fn stieltjes_matches_closed_form_oracle() {
        for &y in &YS {
            for &(u, v) in &[
                (0.0, 1.0),
                (1.0, 0.05),
                (0.5, 0.2),
                (-1.0, 0.3),
                (3.0, 2.0),
                (0.2, 0.1),
            ] {
                let z = UpperHalfPoint::new(u, v).unwrap();
                let law = MPLaw::new(y).unwrap();
                let s = law.stieltjes(z);
                let oracle = closed_form_stieltjes(y, z.to_complex());
                assert!(s.im > 0.0);
                assert!((s - oracle).norm() < 1e-6, "y={y} z={z} {s} vs {oracle}");
                assert!(law.self_consistency_residual(z, s) < 1e-5);
            }
        }
    }

    #[test]
    fn stieltjes_reflection_symmetry() {
        // s(-conj(z)) for the mirrored measure equals -conj(s(z)); checked via
        // the real and imaginary parts of two independent quadratures
        let law = MPLaw::new(1.0).unwrap();
        let z = UpperHalfPoint::new(1.3, 0.4).unwrap();
        let s = law.stieltjes(z);
        let direct_re = integrate(
            |x| law.pdf(x) * (x - 1.3) / ((x - 1.3).powi(2) + 0.16),
            0.0,
            4.0,
            1e-11,
        );
        let direct_im = integrate(
            |x| law.pdf(x) * 0.4 / ((x - 1.3).powi(2) + 0.16),
            0.0,
            4.0,
            1e-11,
        );
        assert!((s.re - direct_re).abs() < 1e-6);
        assert!((s.im - direct_im).abs() < 1e-6);
    }
}
