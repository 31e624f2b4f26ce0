//! Adaptive Gauss-Kronrod (7/15 point) quadrature on finite intervals.

use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_DEPTH: u32 = 40;

/// Values that can be integrated: reals and complex numbers.
pub trait Integrand:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self>
{
    fn zero() -> Self;
    fn magnitude(self) -> f64;
}

impl Integrand for f64 {
    fn zero() -> Self {
        0.0
    }
    fn magnitude(self) -> f64 {
        self.abs()
    }
}

impl Integrand for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn magnitude(self) -> f64 {
        self.norm()
    }
}

fn kronrod<T: Integrand>(f: &impl Fn(f64) -> T, a: f64, b: f64) -> (T, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for (i, (&x, &wk)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        let f1 = f(c - h * x);
        let f2 = f(c + h * x);
        let s = f1 + f2;
        k = k + s * wk;
        if i % 2 == 1 {
            g = g + s * WG[i / 2];
        }
    }
    let err = ((k - g) * h).magnitude();
    (k * h, err)
}

/// Integrates `f` over `[a, b]` to absolute tolerance `tol` by recursive
/// bisection of the interval.
pub fn integrate<T: Integrand>(f: impl Fn(f64) -> T, a: f64, b: f64, tol: f64) -> T {
    if a == b {
        return T::zero();
    }
    let (est, err) = kronrod(&f, a, b);
    refine(&f, a, b, est, err, tol, 0)
}

fn refine<T: Integrand>(
    f: &impl Fn(f64) -> T,
    a: f64,
    b: f64,
    est: T,
    err: f64,
    tol: f64,
    depth: u32,
) -> T {
    if err <= tol || depth >= MAX_DEPTH || !err.is_finite() {
        return est;
    }
    let m = 0.5 * (a + b);
    let (left, el) = kronrod(f, a, m);
    let (right, er) = kronrod(f, m, b);
    refine(f, a, m, left, el, 0.5 * tol, depth + 1)
        + refine(f, m, b, right, er, 0.5 * tol, depth + 1)
}
