//! Dense real-symmetric and complex-resolvent linear algebra.
//!
//! Eigenvalues come from nalgebra's symmetric solver (Householder
//! tridiagonalization followed by implicitly shifted QR sweeps). Complex
//! resolvents `(C - zI)^-1` are formed with native `Complex64` arithmetic and
//! an LU factorization.

use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Relative tolerance below which negative eigenvalues of a PSD matrix are
/// treated as roundoff and clipped to zero.
pub const PSD_RELATIVE_TOL: f64 = 1e-10;

/// Real symmetric `p x p` matrix. Symmetry is exact: `a[i][j] == a[j][i]`
/// bit for bit, checked at construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SymMatrix {
    inner: DMatrix<f64>,
}

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() == 0 || m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "symmetric matrix must be square with dim >= 1, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let p = m.nrows();
        for j in 0..p {
            for i in (j + 1)..p {
                let (a, b) = (m[(i, j)], m[(j, i)]);
                if a.to_bits() != b.to_bits() && a != b {
                    return Err(Error::InvalidInput(format!(
                        "matrix is not symmetric at ({i},{j}): {a} vs {b}"
                    )));
                }
            }
        }
        Ok(Self { inner: m })
    }

    /// Builds a matrix from `f(i, j)` evaluated on the lower triangle
    /// (`i >= j`) and mirrored.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimensionMismatch("dim must be >= 1".into()));
        }
        let mut m = DMatrix::zeros(dim, dim);
        for j in 0..dim {
            for i in j..dim {
                let v = f(i, j);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Ok(Self { inner: m })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.len();
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::DimensionMismatch(
                "rows of a symmetric matrix must have length p".into(),
            ));
        }
        if p == 0 {
            return Err(Error::DimensionMismatch("dim must be >= 1".into()));
        }
        Self::new(DMatrix::from_fn(p, p, |i, j| rows[i][j]))
    }

    /// Symmetric part `(M + M^T) / 2` of an arbitrary square matrix, with the
    /// lower triangle mirrored so the result is exactly symmetric.
    pub fn symmetric_part(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch(
                "symmetric part needs a square matrix".into(),
            ));
        }
        Self::from_fn(m.nrows(), |i, j| 0.5 * (m[(i, j)] + m[(j, i)]))
    }

    /// `scale * G G^T` for a `p x q` matrix `G`, mirrored to exact symmetry.
    pub fn gram(g: &DMatrix<f64>, scale: f64) -> Result<Self> {
        let prod = g * g.transpose();
        Self::from_fn(prod.nrows(), |i, j| scale * prod[(i, j)])
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            inner: DMatrix::identity(dim.max(1), dim.max(1)),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            inner: DMatrix::zeros(dim.max(1), dim.max(1)),
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        if diag.is_empty() {
            return Err(Error::DimensionMismatch("dim must be >= 1".into()));
        }
        Ok(Self {
            inner: DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(diag)),
        })
    }

    pub fn dim(&self) -> usize {
        self.inner.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.inner
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.inner
    }

    pub fn is_diagonal(&self) -> bool {
        let p = self.dim();
        (0..p).all(|j| (0..p).all(|i| i == j || self.inner[(i, j)] == 0.0))
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.inner[(i, i)]).collect()
    }

    pub fn trace(&self) -> f64 {
        self.inner.trace()
    }

    /// `tr(self * other)` without forming the product.
    pub fn trace_product(&self, other: &SymMatrix) -> f64 {
        self.inner.dot(&other.inner)
    }

    /// Frobenius norm squared, `tr(S^2)`.
    pub fn frobenius_sq(&self) -> f64 {
        self.inner.norm_squared()
    }

    pub fn scaled(&self, c: f64) -> SymMatrix {
        SymMatrix {
            inner: &self.inner * c,
        }
    }

    pub fn to_complex(&self) -> DMatrix<Complex64> {
        complexify(&self.inner)
    }

    /// `x^T S x`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        let p = self.dim();
        let mut acc = 0.0;
        for j in 0..p {
            let col = &self.inner.as_slice()[j * p..(j + 1) * p];
            let inner: f64 = col.iter().zip(x).map(|(a, b)| a * b).sum();
            acc += inner * x[j];
        }
        acc
    }

    /// `S x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let p = self.dim();
        let mut out = vec![0.0; p];
        for (j, &xj) in x.iter().enumerate().take(p) {
            let col = &self.inner.as_slice()[j * p..(j + 1) * p];
            for (o, a) in out.iter_mut().zip(col) {
                *o += a * xj;
            }
        }
        out
    }
}

impl TryFrom<Vec<Vec<f64>>> for SymMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        SymMatrix::from_rows(&rows)
    }
}

impl From<SymMatrix> for Vec<Vec<f64>> {
    fn from(m: SymMatrix) -> Self {
        rows_of(&m.inner)
    }
}

/// Real `rows x cols` matrix, stored column-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct RectMatrix {
    inner: DMatrix<f64>,
}

impl RectMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() == 0 || m.ncols() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "matrix must have at least one row and column, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(Self { inner: m })
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::new(DMatrix::zeros(rows, cols))
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        Self::new(DMatrix::from_fn(rows, cols, f))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        Self::new(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
    }

    /// Assembles a matrix from equally long column vectors.
    pub fn from_columns(rows: usize, columns: &[Vec<f64>]) -> Result<Self> {
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::DimensionMismatch(
                "column length differs from row count".into(),
            ));
        }
        let mut data = Vec::with_capacity(rows * columns.len());
        for c in columns {
            data.extend_from_slice(c);
        }
        Self::new(DMatrix::from_vec(rows, columns.len(), data))
    }

    pub fn from_column_vector(v: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_column_slice(v.len(), 1, v))
    }

    pub fn rows(&self) -> usize {
        self.inner.nrows()
    }

    pub fn cols(&self) -> usize {
        self.inner.ncols()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner[(i, j)]
    }

    pub fn column(&self, k: usize) -> &[f64] {
        let r = self.rows();
        &self.inner.as_slice()[k * r..(k + 1) * r]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.inner
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.inner
    }

    pub fn transpose(&self) -> RectMatrix {
        RectMatrix {
            inner: self.inner.transpose(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.inner.iter().all(|v| v.is_finite())
    }
}

impl TryFrom<Vec<Vec<f64>>> for RectMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        RectMatrix::from_rows(&rows)
    }
}

impl From<RectMatrix> for Vec<Vec<f64>> {
    fn from(m: RectMatrix) -> Self {
        rows_of(&m.inner)
    }
}

impl From<SymMatrix> for RectMatrix {
    fn from(s: SymMatrix) -> Self {
        RectMatrix { inner: s.inner }
    }
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// A point `z = re + i im` of the open upper half-plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPoint")]
pub struct UpperHalfPoint {
    re: f64,
    im: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPoint {
    re: f64,
    im: f64,
}

impl TryFrom<RawPoint> for UpperHalfPoint {
    type Error = Error;

    fn try_from(raw: RawPoint) -> Result<Self> {
        UpperHalfPoint::new(raw.re, raw.im)
    }
}

impl UpperHalfPoint {
    pub fn new(re: f64, im: f64) -> Result<Self> {
        if !re.is_finite() || !im.is_finite() || im <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "z = {re} + {im}i is not in the open upper half-plane"
            )));
        }
        Ok(Self { re, im })
    }

    /// `z = i`.
    pub fn i() -> Self {
        Self { re: 0.0, im: 1.0 }
    }

    pub fn re(&self) -> f64 {
        self.re
    }

    pub fn im(&self) -> f64 {
        self.im
    }

    pub fn abs(&self) -> f64 {
        self.re.hypot(self.im)
    }

    pub fn to_complex(&self) -> Complex64 {
        Complex64::new(self.re, self.im)
    }
}

impl fmt::Display for UpperHalfPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}+{}i", self.re, self.im)
    }
}

pub fn complexify(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|v| Complex64::new(v, 0.0))
}

fn ensure_finite<'a>(values: impl IntoIterator<Item = &'a f64>, what: &str) -> Result<()> {
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "{what} has non-finite entries"
        )))
    }
}

/// Eigenvalues of a real symmetric matrix in ascending order.
pub fn sym_eigenvalues(s: &SymMatrix) -> Result<Vec<f64>> {
    ensure_finite(s.inner.iter(), "symmetric matrix")?;
    let mut eigs: Vec<f64> = s
        .inner
        .clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .collect();
    eigs.sort_by(f64::total_cmp);
    Ok(eigs)
}

/// Spectral norm of a symmetric matrix, `max |lambda|`.
pub fn sym_spectral_norm(s: &SymMatrix) -> Result<f64> {
    let eigs = sym_eigenvalues(s)?;
    Ok(eigs
        .first()
        .map_or(0.0, |v| v.abs())
        .max(eigs.last().map_or(0.0, |v| v.abs())))
}

/// Principal (PSD) square root. Eigenvalues in `[-1e-10 ||S||, 0)` are
/// clipped to zero; anything more negative is rejected.
pub fn principal_sqrt(s: &SymMatrix) -> Result<SymMatrix> {
    ensure_finite(s.inner.iter(), "symmetric matrix")?;
    if s.is_diagonal() {
        let diag = s.diagonal();
        let norm = diag.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tol = PSD_RELATIVE_TOL * norm;
        let mut root = Vec::with_capacity(diag.len());
        for &d in &diag {
            if d < -tol {
                return Err(Error::NotPsd { min_eig: d, tol });
            }
            root.push(d.max(0.0).sqrt());
        }
        return SymMatrix::from_diagonal(&root);
    }
    let eig = s.inner.clone().symmetric_eigen();
    let norm = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = PSD_RELATIVE_TOL * norm;
    let min = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if min < -tol {
        return Err(Error::NotPsd { min_eig: min, tol });
    }
    // Eigenvalues at roundoff level are zeroed before the square root, which
    // would otherwise amplify 1e-17 into 3e-9.
    let noise = 4.0 * f64::EPSILON * s.dim() as f64 * norm;
    let roots = eig
        .eigenvalues
        .map(|l| if l <= noise { 0.0 } else { l.sqrt() });
    let v = &eig.eigenvectors;
    let scaled = DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)] * roots[j]);
    let r = &scaled * v.transpose();
    SymMatrix::symmetric_part(&r)
}

/// Largest singular value.
pub fn spectral_norm(a: &RectMatrix) -> Result<f64> {
    ensure_finite(a.inner.iter(), "matrix")?;
    if a.cols() == 1 || a.rows() == 1 {
        return Ok(a.inner.norm());
    }
    let sv = a.inner.clone().singular_values();
    Ok(sv.iter().copied().fold(0.0, f64::max))
}

/// Spectral norm of a complex matrix.
pub fn complex_spectral_norm(a: &DMatrix<Complex64>) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    let sv = a.clone().singular_values();
    sv.iter().copied().fold(0.0, f64::max)
}

/// Normalized resolvent trace `p^-1 sum_k 1 / (lambda_k - z)`.
pub fn resolvent_stieltjes(eigs: &[f64], z: UpperHalfPoint) -> Complex64 {
    if eigs.is_empty() {
        return Complex64::new(0.0, 0.0);
    }
    let zc = z.to_complex();
    let sum: Complex64 = eigs
        .iter()
        .map(|&l| (Complex64::new(l, 0.0) - zc).inv())
        .sum();
    sum / eigs.len() as f64
}

/// `(C - zI)^-1` by LU factorization.
pub fn resolvent(c: &SymMatrix, z: UpperHalfPoint) -> Result<DMatrix<Complex64>> {
    ensure_finite(c.inner.iter(), "symmetric matrix")?;
    let p = c.dim();
    let zc = z.to_complex();
    let shifted = DMatrix::from_fn(p, p, |i, j| {
        let v = Complex64::new(c.inner[(i, j)], 0.0);
        if i == j {
            v - zc
        } else {
            v
        }
    });
    shifted
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::InvalidInput("C - zI is numerically singular".into()))
}

/// Bilinear (not sesquilinear) form `a^T M b`.
pub fn bilinear(a: &[Complex64], m: &DMatrix<Complex64>, b: &[Complex64]) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for j in 0..m.ncols() {
        let mut col = Complex64::new(0.0, 0.0);
        for i in 0..m.nrows() {
            col += a[i] * m[(i, j)];
        }
        acc += col * b[j];
    }
    acc
}

/// Change in `tr(C - zI)^-1` caused by the rank-one update `C -> C + w w^T`,
/// `-w^T (C - zI)^-2 w / (1 + w^T (C - zI)^-1 w)`.
pub fn smw_rank1_trace_delta(c: &SymMatrix, w: &[f64], z: UpperHalfPoint) -> Result<Complex64> {
    if w.len() != c.dim() {
        return Err(Error::DimensionMismatch(format!(
            "w has length {}, C is {}x{}",
            w.len(),
            c.dim(),
            c.dim()
        )));
    }
    ensure_finite(w, "w")?;
    let r = resolvent(c, z)?;
    let wc: Vec<Complex64> = w.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let rw = &r * nalgebra::DVector::from_column_slice(&wc);
    let first: Complex64 = wc.iter().zip(rw.iter()).map(|(a, b)| a * b).sum();
    // R is complex symmetric, so w^T R^2 w = (Rw)^T (Rw).
    let second: Complex64 = rw.iter().map(|v| v * v).sum();
    let denom = Complex64::new(1.0, 0.0) + first;
    if denom.norm() < 1e-14 {
        return Err(Error::DegenerateDenominator(denom.norm()));
    }
    Ok(-second / denom)
}

/// `tr(C + U U^T - zI)^-1` through the rank-q Woodbury update
/// `tr R - tr(U^T R^2 U (I_q + U^T R U)^-1)` with `R = (C - zI)^-1`.
pub fn smw_rankq_trace(c: &SymMatrix, u: &RectMatrix, z: UpperHalfPoint) -> Result<Complex64> {
    if u.rows() != c.dim() {
        return Err(Error::DimensionMismatch(format!(
            "U has {} rows, C is {}x{}",
            u.rows(),
            c.dim(),
            c.dim()
        )));
    }
    ensure_finite(u.inner.iter(), "U")?;
    let r = resolvent(c, z)?;
    let uc = complexify(&u.inner);
    let ru = &r * &uc;
    let gram = uc.transpose() * &ru;
    let q = u.cols();
    let core = DMatrix::<Complex64>::identity(q, q) + gram;
    let lu = core.lu();
    let det = lu.determinant();
    if !(det.norm() > 1e-300) {
        return Err(Error::DegenerateDenominator(det.norm()));
    }
    let core_inv = lu
        .try_inverse()
        .ok_or(Error::DegenerateDenominator(det.norm()))?;
    let second = ru.transpose() * &ru;
    let correction = (second * core_inv).trace();
    Ok(r.trace() - correction)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    fn direct_trace(c: &SymMatrix, u: &DMatrix<f64>, z: UpperHalfPoint) -> Complex64 {
        let updated = SymMatrix::from_fn(c.dim(), |i, j| {
            c.get(i, j) + (0..u.ncols()).map(|k| u[(i, k)] * u[(j, k)]).sum::<f64>()
        })
        .unwrap();
        let eigs = sym_eigenvalues(&updated).unwrap();
        resolvent_stieltjes(&eigs, z) * eigs.len() as f64
    }

    #[test]
    fn eigenvalues_of_simple_matrices() {
        assert_eq!(
            sym_eigenvalues(&SymMatrix::identity(3)).unwrap(),
            vec![1.0, 1.0, 1.0]
        );
        let d = SymMatrix::from_diagonal(&[3.0, 1.0, 2.0]).unwrap();
        assert_eq!(sym_eigenvalues(&d).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn goe_eigenvalue_sum_matches_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = gaussian(8, 8, &mut rng);
        let s = SymMatrix::symmetric_part(&g).unwrap();
        let eigs = sym_eigenvalues(&s).unwrap();
        assert!(eigs.windows(2).all(|w| w[0] <= w[1]));
        let sum: f64 = eigs.iter().sum();
        let tr = s.trace();
        assert!((sum - tr).abs() <= 1e-9 * tr.abs().max(1.0));
    }

    #[test]
    fn non_finite_and_asymmetric_inputs_are_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert!(matches!(SymMatrix::new(m), Err(Error::InvalidInput(_))));
        let nan = SymMatrix::from_diagonal(&[f64::NAN, 1.0]).unwrap();
        assert!(matches!(sym_eigenvalues(&nan), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn principal_sqrt_examples() {
        assert_eq!(
            principal_sqrt(&SymMatrix::identity(4)).unwrap(),
            SymMatrix::identity(4)
        );
        let d = SymMatrix::from_diagonal(&[4.0, 9.0]).unwrap();
        assert_eq!(
            principal_sqrt(&d).unwrap(),
            SymMatrix::from_diagonal(&[2.0, 3.0]).unwrap()
        );

        let e = [0.6, 0.0, 0.8];
        let proj = SymMatrix::from_fn(3, |i, j| e[i] * e[j]).unwrap();
        let r = principal_sqrt(&proj).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((r.get(i, j) - proj.get(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn principal_sqrt_rejects_indefinite() {
        let s = SymMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(matches!(principal_sqrt(&s), Err(Error::NotPsd { .. })));
        let d = SymMatrix::from_diagonal(&[1.0, -1e-3]).unwrap();
        assert!(matches!(principal_sqrt(&d), Err(Error::NotPsd { .. })));
        // roundoff-level negatives are clipped
        let tiny = SymMatrix::from_diagonal(&[1.0, -1e-12]).unwrap();
        assert_eq!(principal_sqrt(&tiny).unwrap().get(1, 1), 0.0);
    }

    #[test]
    fn principal_sqrt_squares_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = gaussian(7, 4, &mut rng);
        let s = SymMatrix::gram(&g, 1.0).unwrap();
        let r = principal_sqrt(&s).unwrap();
        let back = r.as_matrix() * r.as_matrix();
        let norm = sym_spectral_norm(&s).unwrap();
        let err = (back - s.as_matrix()).abs().max();
        assert!(err <= 1e-8 * (1.0 + norm), "err {err}");
        assert!(sym_eigenvalues(&r).unwrap()[0] >= -1e-10 * norm);
    }

    #[test]
    fn spectral_norm_examples() {
        let i = RectMatrix::from(SymMatrix::identity(5));
        assert!((spectral_norm(&i).unwrap() - 1.0).abs() < 1e-14);
        let d = RectMatrix::from(SymMatrix::from_diagonal(&[1.0, -5.0, 2.0]).unwrap());
        assert!((spectral_norm(&d).unwrap() - 5.0).abs() < 1e-12);
        let a = RectMatrix::from_column_vector(&[3.0, 4.0]).unwrap();
        assert_eq!(spectral_norm(&a).unwrap(), 5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = RectMatrix::new(gaussian(4, 9, &mut rng)).unwrap();
        let n1 = spectral_norm(&g).unwrap();
        let n2 = spectral_norm(&g.transpose()).unwrap();
        assert!((n1 - n2).abs() < 1e-12 * n1);
    }

    #[test]
    fn stieltjes_examples() {
        let s = resolvent_stieltjes(&[0.0, 0.0, 0.0], UpperHalfPoint::i());
        assert!((s - Complex64::new(0.0, 1.0)).norm() < 1e-15);
        let s = resolvent_stieltjes(&[1.0], UpperHalfPoint::i());
        assert!((s - Complex64::new(0.5, 0.5)).norm() < 1e-15);
        // 1/(0 - (0.5+i)) = (-0.5 + i)/1.25, 1/(2 - (0.5+i)) = (1.5 + i)/3.25
        let z = UpperHalfPoint::new(0.5, 1.0).unwrap();
        let s = resolvent_stieltjes(&[0.0, 2.0], z);
        let expected = Complex64::new(0.5 * (-0.4 + 1.5 / 3.25), 0.5 * (0.8 + 1.0 / 3.25));
        assert!((s - expected).norm() < 1e-15);
    }

    #[test]
    fn upper_half_point_rejects_real_axis() {
        assert!(UpperHalfPoint::new(1.0, 0.0).is_err());
        assert!(UpperHalfPoint::new(1.0, -1.0).is_err());
        assert!(serde_json::from_str::<UpperHalfPoint>(r#"{"re":0.0,"im":-2.0}"#).is_err());
        assert!(serde_json::from_str::<UpperHalfPoint>(r#"{"re":0.0,"im":2.0,"x":1}"#).is_err());
    }

    #[test]
    fn smw_rank1_hand_example() {
        let c = SymMatrix::zeros(2);
        let d = smw_rank1_trace_delta(&c, &[1.0, 0.0], UpperHalfPoint::i()).unwrap();
        assert!((d - Complex64::new(0.5, -0.5)).norm() < 1e-15);
        let z = smw_rank1_trace_delta(&c, &[0.0, 0.0], UpperHalfPoint::i()).unwrap();
        assert_eq!(z, Complex64::new(0.0, 0.0));
        // both sides of the identity agree for the hand example
        let direct = direct_trace(
            &c,
            &DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
            UpperHalfPoint::i(),
        ) - Complex64::new(0.0, 2.0);
        assert!((direct - d).norm() < 1e-14);
    }

    #[test]
    fn smw_rank1_matches_refactor() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let g = gaussian(6, 6, &mut rng);
        let c = SymMatrix::gram(&g, 0.5).unwrap();
        let w: Vec<f64> = (0..6).map(|_| rng.sample(StandardNormal)).collect();
        let z = UpperHalfPoint::new(0.7, 0.3).unwrap();
        let delta = smw_rank1_trace_delta(&c, &w, z).unwrap();
        let base = resolvent_stieltjes(&sym_eigenvalues(&c).unwrap(), z) * 6.0;
        let direct = direct_trace(&c, &DMatrix::from_column_slice(6, 1, &w), z) - base;
        assert!((delta - direct).norm() <= 1e-8 * direct.norm().max(1e-3));
        assert!(delta.norm() <= 1.0 / z.im() + 1e-12);
    }

    #[test]
    fn smw_rankq_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = gaussian(8, 8, &mut rng);
        let c = SymMatrix::gram(&g, 0.25).unwrap();
        let z = UpperHalfPoint::new(-0.4, 0.6).unwrap();
        let base = resolvent_stieltjes(&sym_eigenvalues(&c).unwrap(), z) * 8.0;

        let zero = RectMatrix::zeros(8, 3).unwrap();
        assert!((smw_rankq_trace(&c, &zero, z).unwrap() - base).norm() < 1e-10);

        let w: Vec<f64> = (0..8).map(|_| rng.sample(StandardNormal)).collect();
        let one = RectMatrix::from_column_vector(&w).unwrap();
        let via_q = smw_rankq_trace(&c, &one, z).unwrap();
        let via_1 = base + smw_rank1_trace_delta(&c, &w, z).unwrap();
        assert!((via_q - via_1).norm() <= 1e-10 * via_1.norm());

        let u = gaussian(8, 3, &mut rng);
        let via_q = smw_rankq_trace(&c, &RectMatrix::new(u.clone()).unwrap(), z).unwrap();
        let direct = direct_trace(&c, &u, z);
        assert!((via_q - direct).norm() <= 1e-8 * direct.norm());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let c = SymMatrix::identity(3);
        assert!(matches!(
            smw_rank1_trace_delta(&c, &[1.0], UpperHalfPoint::i()),
            Err(Error::DimensionMismatch(_))
        ));
        let u = RectMatrix::zeros(2, 2).unwrap();
        assert!(matches!(
            smw_rankq_trace(&c, &u, UpperHalfPoint::i()),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn quadratic_form_and_apply() {
        let s = SymMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 3.0]]).unwrap();
        assert_eq!(s.quadratic_form(&[1.0, 2.0]), 2.0 + 4.0 + 12.0);
        assert_eq!(s.apply(&[1.0, 2.0]), vec![4.0, 7.0]);
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<SymMatrix>(&json).unwrap(), s);
        assert!(serde_json::from_str::<SymMatrix>("[[1.0,2.0],[3.0,1.0]]").is_err());
    }
}
