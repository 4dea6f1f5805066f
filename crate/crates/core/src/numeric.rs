//! Scalar abstraction shared by the exact (rational) and floating evaluation paths.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Sub};

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::kernels::{self, KernelId};
use crate::solver::{self, SolverError};

/// Arithmetic needed by the kernel products and absorption solves.
///
/// Implemented for `f64` (fast path) and [`BigRational`] (exact path), so that
/// every formula is written once and can be cross-checked against itself.
pub trait Scalar:
    Clone
    + Debug
    + PartialOrd
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Send
    + Sync
{
    fn kernel(id: KernelId, i: u64, j: u64) -> Self;
    fn from_ratio(num: i64, den: u64) -> Self;
    fn to_float(&self) -> f64;
    fn solve(a: Vec<Vec<Self>>, b: Vec<Self>) -> Result<Vec<Self>, SolverError>;
    /// Rendering used in JSON output: decimal for floats, `p/q` for rationals.
    fn render(&self) -> String;
}

impl Scalar for f64 {
    fn kernel(id: KernelId, i: u64, j: u64) -> Self {
        kernels::kernel_prob(id, i, j)
    }
    fn from_ratio(num: i64, den: u64) -> Self {
        num as f64 / den as f64
    }
    fn to_float(&self) -> f64 {
        *self
    }
    fn solve(a: Vec<Vec<Self>>, b: Vec<Self>) -> Result<Vec<Self>, SolverError> {
        solver::linear_solve(&a, &b)
    }
    fn render(&self) -> String {
        fmt_f64(*self)
    }
}

impl Scalar for BigRational {
    fn kernel(id: KernelId, i: u64, j: u64) -> Self {
        kernels::kernel_prob_exact(id, i, j)
    }
    fn from_ratio(num: i64, den: u64) -> Self {
        BigRational::new(BigInt::from(num), BigInt::from(den))
    }
    fn to_float(&self) -> f64 {
        rational_to_f64(self)
    }
    fn solve(a: Vec<Vec<Self>>, b: Vec<Self>) -> Result<Vec<Self>, SolverError> {
        solver::linear_solve_exact(&a, &b)
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

/// `2^-e` as an exact rational.
pub fn pow2_inv(e: u64) -> BigRational {
    BigRational::new(BigInt::one(), BigInt::one() << e as usize)
}

/// Exact binomial coefficient.
pub fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for t in 0..k {
        acc *= n - t;
        acc /= t + 1;
    }
    acc
}

/// Binomial coefficient that fits in 64 bits (`n <= 66` always does).
pub fn binomial_u64(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for t in 0..k {
        acc = acc * (n - t) as u128 / (t + 1) as u128;
    }
    acc as u64
}

/// Correctly scaled conversion; falls back to a shifted division when the
/// numerator or denominator overflows `f64`.
pub fn rational_to_f64(q: &BigRational) -> f64 {
    if q.is_zero() {
        return 0.0;
    }
    if let Some(v) = ToPrimitive::to_f64(q) {
        if v.is_finite() && v != 0.0 {
            return v;
        }
    }
    let neg = q.is_negative();
    let num = q.numer().abs().to_biguint().expect("abs is nonnegative");
    let den = q.denom().abs().to_biguint().expect("abs is nonnegative");
    let shift = num.bits() as i64 - den.bits() as i64;
    // bring the quotient to ~2^64 precision before converting
    let (n2, d2) = if shift > 64 {
        (num, den << (shift - 64) as usize)
    } else {
        (num << (64 - shift) as usize, den)
    };
    let quot = (n2 / d2).to_f64().unwrap_or(f64::INFINITY);
    let v = quot * 2f64.powi((shift - 64) as i32);
    if neg {
        -v
    } else {
        v
    }
}

/// Seventeen significant digits, the lossless textual form used in CSV outputs.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    format!("{x:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomials_agree() {
        for n in 0..=64u64 {
            for k in 0..=n {
                assert_eq!(BigUint::from(binomial_u64(n, k)), binomial(n, k), "C({n},{k})");
            }
        }
    }

    #[test]
    fn rational_conversion_handles_huge_denominators() {
        let q = pow2_inv(3000) * BigRational::from_integer(BigInt::from(3));
        let v = rational_to_f64(&q);
        assert_eq!(v, 0.0, "below f64 range underflows to zero");
        let q = pow2_inv(1100) * BigRational::from_integer(BigInt::one() << 1099usize);
        assert!((rational_to_f64(&q) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn fmt_has_seventeen_digits() {
        let s = fmt_f64(0.1);
        assert_eq!(s.parse::<f64>().unwrap(), 0.1);
        assert_eq!(s, "1.0000000000000001e-1");
    }
}
