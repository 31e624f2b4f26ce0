//! Norm-bounded PSD test matrices for quadratic-form statistics.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linalg::{complex_spectral_norm, SymMatrix};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilyKind {
    Identity {},
    /// `M Q Q^T` for a random `p x r` orthonormal `Q`.
    RandomProjection {
        rank: usize,
    },
    /// Toeplitz matrix with Fejer weights `1 - |i-j|/(w+1)` on the band,
    /// scaled by `M/(w+1)`; PSD because the Fejer kernel is nonnegative.
    Banded {
        width: usize,
    },
    /// Diagonal with entries uniform on `[0, M]`.
    DiagonalBounded {},
    /// `Q diag(d) Q^T` with Haar-like orthogonal `Q` and `d` uniform on `[0, M]`.
    RotatedDiagonal {},
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestMatrixFamily {
    pub kind: FamilyKind,
    pub norm_bound: f64,
}

fn gaussian(rows: usize, cols: usize, rng: &mut impl RngCore) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn orthonormal(p: usize, r: usize, rng: &mut impl RngCore) -> DMatrix<f64> {
    let g = gaussian(p, r, rng);
    let qr = g.qr();
    let mut q = qr.q();
    // fix column signs by the diagonal of R so the draw is Haar distributed
    let r_mat = qr.r();
    for j in 0..q.ncols() {
        if r_mat[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

impl TestMatrixFamily {
    pub fn new(kind: FamilyKind, norm_bound: f64) -> Result<Self> {
        let f = Self { kind, norm_bound };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.norm_bound >= 0.0) || !self.norm_bound.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "norm bound must be >= 0, got {}",
                self.norm_bound
            )));
        }
        match self.kind {
            FamilyKind::RandomProjection { rank: 0 } => Err(Error::InvalidParameter(
                "random projection rank must be >= 1".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Short tag for reports.
    pub fn tag(&self) -> String {
        match self.kind {
            FamilyKind::Identity {} => "identity".into(),
            FamilyKind::RandomProjection { rank } => format!("projection(r={rank})"),
            FamilyKind::Banded { width } => format!("banded(w={width})"),
            FamilyKind::DiagonalBounded {} => "diagonal".into(),
            FamilyKind::RotatedDiagonal {} => "rotated_diagonal".into(),
        }
    }

    /// A `p x p` symmetric PSD matrix with spectral norm at most `norm_bound`.
    pub fn generate(&self, p: usize, rng: &mut impl RngCore) -> Result<SymMatrix> {
        self.validate()?;
        let m = self.norm_bound;
        match self.kind {
            FamilyKind::Identity {} => Ok(SymMatrix::identity(p).scaled(m)),
            FamilyKind::RandomProjection { rank } => {
                let q = orthonormal(p, rank.min(p), rng);
                SymMatrix::gram(&q, m)
            }
            FamilyKind::Banded { width } => {
                let w1 = (width + 1) as f64;
                SymMatrix::from_fn(p, |i, j| {
                    let d = i.abs_diff(j);
                    if d <= width {
                        m * (1.0 - d as f64 / w1) / w1
                    } else {
                        0.0
                    }
                })
            }
            FamilyKind::DiagonalBounded {} => {
                let d: Vec<f64> = (0..p).map(|_| m * rng.random::<f64>()).collect();
                SymMatrix::from_diagonal(&d)
            }
            FamilyKind::RotatedDiagonal {} => {
                let q = orthonormal(p, p, rng);
                let d: Vec<f64> = (0..p).map(|_| m * rng.random::<f64>()).collect();
                let scaled = DMatrix::from_fn(p, p, |i, j| q[(i, j)] * d[j]);
                SymMatrix::symmetric_part(&(scaled * q.transpose()))
            }
        }
    }
}

/// `A = re + i im` with symmetric real and imaginary parts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexTestMatrix {
    pub re: SymMatrix,
    pub im: SymMatrix,
}

impl ComplexTestMatrix {
    pub fn new(re: SymMatrix, im: SymMatrix) -> Result<Self> {
        if re.dim() != im.dim() {
            return Err(Error::DimensionMismatch(
                "real and imaginary parts differ in size".into(),
            ));
        }
        Ok(Self { re, im })
    }

    pub fn real(re: SymMatrix) -> Self {
        let im = SymMatrix::zeros(re.dim());
        Self { re, im }
    }

    /// `c * A` for a complex scalar `c`, e.g. `(1 + i)/sqrt 2`.
    pub fn times(a: &SymMatrix, c: Complex64) -> Self {
        Self {
            re: a.scaled(c.re),
            im: a.scaled(c.im),
        }
    }

    /// Two independent draws from `family` at half its bound, so `||A|| <= M`.
    pub fn from_family(
        family: &TestMatrixFamily,
        p: usize,
        rng: &mut impl RngCore,
    ) -> Result<Self> {
        let half = TestMatrixFamily {
            kind: family.kind.clone(),
            norm_bound: 0.5 * family.norm_bound,
        };
        Ok(Self {
            re: half.generate(p, rng)?,
            im: half.generate(p, rng)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.re.dim()
    }

    pub fn spectral_norm(&self) -> f64 {
        let p = self.dim();
        let m = DMatrix::from_fn(p, p, |i, j| {
            Complex64::new(self.re.get(i, j), self.im.get(i, j))
        });
        complex_spectral_norm(&m)
    }
}
