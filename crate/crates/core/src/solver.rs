//! Finite-state absorption analysis for the branching chains.
//!
//! Every quantity here is a linear solve against the substochastic block of a
//! chain killed on leaving a window below `h`. Formulas are generic over
//! [`Scalar`], so the floating answers can be checked against exact rationals.

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::Serialize;
use thiserror::Error;

use crate::branching::SeamVariant;
use crate::kernels::KernelId;
use crate::numeric::Scalar;
use crate::walk::window_members;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("matrix is singular")]
    Singular,
    #[error("dimension mismatch or unsupported size: {0}")]
    Dimension(String),
    #[error("residual {residual:e} exceeds tolerance {tolerance:e}")]
    Residual { residual: f64, tolerance: f64 },
    #[error("parameter out of range: {0}")]
    OutOfRange(String),
}

pub const MAX_DIM: usize = 512;
pub const MAX_EXACT_H: u64 = 64;

fn check_shape<T>(a: &[Vec<T>], b: &[T]) -> Result<usize, SolverError> {
    let n = a.len();
    if n > MAX_DIM {
        return Err(SolverError::Dimension(format!("{n} > {MAX_DIM}")));
    }
    if b.len() != n || a.iter().any(|r| r.len() != n) {
        return Err(SolverError::Dimension("system is not square".into()));
    }
    Ok(n)
}

/// Gaussian elimination with partial pivoting; the result is rejected unless
/// `|Ax - b|_inf <= 1e-9 |b|_inf`.
pub fn linear_solve(a: &[Vec<f64>], b: &[f64]) -> Result<Vec<f64>, SolverError> {
    let n = check_shape(a, b)?;
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut x: Vec<f64> = b.to_vec();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&p, &q| m[p][col].abs().total_cmp(&m[q][col].abs()))
            .expect("nonempty range");
        if m[piv][col] == 0.0 || !m[piv][col].is_finite() {
            return Err(SolverError::Singular);
        }
        m.swap(col, piv);
        x.swap(col, piv);
        let d = m[col][col];
        for r in col + 1..n {
            let f = m[r][col] / d;
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                m[r][c] -= f * m[col][c];
            }
            x[r] -= f * x[col];
        }
    }
    for r in (0..n).rev() {
        let mut s = x[r];
        for c in r + 1..n {
            s -= m[r][c] * x[c];
        }
        x[r] = s / m[r][r];
    }
    let bnorm = b.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let residual = a
        .iter()
        .zip(b)
        .map(|(row, bi)| (row.iter().zip(&x).map(|(p, q)| p * q).sum::<f64>() - bi).abs())
        .fold(0.0f64, f64::max);
    let tolerance = 1e-9 * bnorm;
    if residual > tolerance {
        return Err(SolverError::Residual { residual, tolerance });
    }
    Ok(x)
}

/// Exact solve: rows are cleared to integers, reduced with fraction-free
/// (Bareiss) elimination, then back-substituted in rationals.
pub fn linear_solve_exact(
    a: &[Vec<BigRational>],
    b: &[BigRational],
) -> Result<Vec<BigRational>, SolverError> {
    let n = check_shape(a, b)?;
    let mut m: Vec<Vec<BigInt>> = Vec::with_capacity(n);
    for (row, bi) in a.iter().zip(b) {
        let lcm = row
            .iter()
            .chain(std::iter::once(bi))
            .fold(BigInt::one(), |acc, q| acc.lcm(q.denom()));
        let ints = row
            .iter()
            .chain(std::iter::once(bi))
            .map(|q| (q * BigRational::from_integer(lcm.clone())).to_integer())
            .collect();
        m.push(ints);
    }
    let mut prev = BigInt::one();
    for k in 0..n {
        let piv = (k..n).find(|&r| !m[r][k].is_zero()).ok_or(SolverError::Singular)?;
        m.swap(k, piv);
        for i in k + 1..n {
            for j in k + 1..=n {
                let v = (&m[i][j] * &m[k][k] - &m[i][k] * &m[k][j]) / &prev;
                m[i][j] = v;
            }
            m[i][k] = BigInt::zero();
        }
        prev = m[k][k].clone();
    }
    let mut x = vec![BigRational::zero(); n];
    for r in (0..n).rev() {
        let mut s = BigRational::from_integer(m[r][n].clone());
        for c in r + 1..n {
            s -= BigRational::from_integer(m[r][c].clone()) * &x[c];
        }
        x[r] = s / BigRational::from_integer(m[r][r].clone());
    }
    Ok(x)
}

/// Which first-passage constraint kills the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    /// Killed on the first value `>= h`.
    None,
    /// Killed on a transition `i -> j` whose tilde value reaches `h`
    /// (`i + j` for `pi`, `i + j + 1` for `rho`).
    PairSum,
}

/// An absorbing chain on a window below `h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AbsorptionSpec {
    pub kernel: KernelId,
    pub h: u64,
    /// 0 absorbs (only meaningful for `pi`).
    pub lower_absorbing: bool,
    pub constraint: Constraint,
}

impl AbsorptionSpec {
    pub fn new(kernel: KernelId, h: u64) -> Self {
        AbsorptionSpec { kernel, h, lower_absorbing: kernel == KernelId::Pi, constraint: Constraint::None }
    }

    pub fn pair_sum(kernel: KernelId, h: u64) -> Self {
        AbsorptionSpec { constraint: Constraint::PairSum, ..Self::new(kernel, h) }
    }

    pub fn transient_states(&self) -> std::ops::Range<u64> {
        if self.lower_absorbing {
            1..self.h
        } else {
            0..self.h
        }
    }

    fn allowed(&self, i: u64, j: u64) -> bool {
        match self.constraint {
            Constraint::None => j < self.h,
            Constraint::PairSum => {
                let extra = u64::from(self.kernel != KernelId::Pi);
                i + j + extra < self.h
            }
        }
    }

    /// Substochastic transition block on the transient states.
    pub fn block<S: Scalar>(&self) -> Vec<Vec<S>> {
        let states: Vec<u64> = self.transient_states().collect();
        states
            .iter()
            .map(|&i| {
                states
                    .iter()
                    .map(|&j| if self.allowed(i, j) { S::kernel(self.kernel, i, j) } else { S::zero() })
                    .collect()
            })
            .collect()
    }

    fn validate(&self) -> Result<(), SolverError> {
        if self.h == 0 {
            return Err(SolverError::OutOfRange("h must be positive".into()));
        }
        if self.lower_absorbing && self.kernel != KernelId::Pi {
            return Err(SolverError::OutOfRange("only pi has an absorbing 0".into()));
        }
        if !self.lower_absorbing && self.kernel == KernelId::Pi && self.constraint == Constraint::None {
            return Err(SolverError::OutOfRange("pi without lower absorption never leaves 0".into()));
        }
        Ok(())
    }
}

fn identity_minus<S: Scalar>(q: &[Vec<S>], transpose: bool) -> Vec<Vec<S>> {
    let n = q.len();
    (0..n)
        .map(|r| {
            (0..n)
                .map(|c| {
                    let v = if transpose { q[c][r].clone() } else { q[r][c].clone() };
                    if r == c {
                        S::one() - v
                    } else {
                        S::zero() - v
                    }
                })
                .collect()
        })
        .collect()
}

/// `P(Y hits 0 before [h, inf) | Y_0 = s)` for every `s in 0..h` under `pi`.
pub fn hitting_probabilities<S: Scalar>(h: u64) -> Result<Vec<S>, SolverError> {
    let spec = AbsorptionSpec::new(KernelId::Pi, h);
    spec.validate()?;
    let q = spec.block::<S>();
    let b: Vec<S> = spec.transient_states().map(|i| S::kernel(KernelId::Pi, i, 0)).collect();
    let mut out = vec![S::one()];
    if !b.is_empty() {
        out.extend(S::solve(identity_minus(&q, false), b)?);
    }
    Ok(out)
}

pub fn hitting_probability<S: Scalar>(spec: &AbsorptionSpec, start: u64) -> Result<S, SolverError> {
    if spec.kernel != KernelId::Pi || !spec.lower_absorbing {
        return Err(SolverError::OutOfRange("hitting probability is defined for pi with absorbing 0".into()));
    }
    if start >= spec.h {
        return Err(SolverError::OutOfRange(format!("start {start} >= h {}", spec.h)));
    }
    Ok(hitting_probabilities::<S>(spec.h)?.swap_remove(start as usize))
}

/// Exit statistics of an absorbing chain started inside the window.
#[derive(Debug, Clone, PartialEq)]
pub struct Absorption<S> {
    pub start: u64,
    /// Expected number of steps until absorption.
    pub expected_steps: S,
    /// Expected visits to each transient state (indexed from the first one).
    pub occupation: Vec<S>,
    pub first_state: u64,
    /// Expected value at absorption (0 for absorption at the lower end).
    pub expected_exit_value: S,
}

impl<S: Scalar> Absorption<S> {
    /// `E tau - (E Z_tau - Z_0)` for the immigration kernels, `E Y_tau - Y_0`
    /// for `pi`; zero when the optional stopping identity holds.
    pub fn identity_gap(&self, kernel: KernelId) -> S {
        let start = S::from_ratio(self.start as i64, 1);
        match kernel {
            KernelId::Pi => self.expected_exit_value.clone() - start,
            _ => self.expected_steps.clone() - (self.expected_exit_value.clone() - start),
        }
    }
}

/// `sum_{j >= h} j kernel(i, j)`, computed from the finite complement.
fn exit_mean<S: Scalar>(kernel: KernelId, i: u64, h: u64) -> S {
    let mean = match kernel {
        KernelId::Pi => i,
        KernelId::Rho | KernelId::Rhostar => i + 1,
    };
    let mut s = S::from_ratio(mean as i64, 1);
    for j in 1..h {
        s = s - S::kernel(kernel, i, j) * S::from_ratio(j as i64, 1);
    }
    s
}

pub fn expected_absorption<S: Scalar>(spec: &AbsorptionSpec, start: u64) -> Result<Absorption<S>, SolverError> {
    spec.validate()?;
    if spec.constraint != Constraint::None {
        return Err(SolverError::OutOfRange("expected absorption uses the plain threshold".into()));
    }
    if start >= spec.h {
        return Err(SolverError::OutOfRange(format!("start {start} >= h {}", spec.h)));
    }
    let states = spec.transient_states();
    let first_state = states.start;
    if spec.lower_absorbing && start == 0 {
        return Ok(Absorption {
            start,
            expected_steps: S::zero(),
            occupation: vec![S::zero(); states.count()],
            first_state,
            expected_exit_value: S::zero(),
        });
    }
    let q = spec.block::<S>();
    let rhs: Vec<S> = states
        .clone()
        .map(|i| if i == start { S::one() } else { S::zero() })
        .collect();
    let occupation = S::solve(identity_minus(&q, true), rhs)?;
    let expected_steps = occupation.iter().cloned().fold(S::zero(), |a, b| a + b);
    let expected_exit_value = states
        .zip(&occupation)
        .fold(S::zero(), |acc, (i, g)| acc + g.clone() * exit_mean::<S>(spec.kernel, i, spec.h));
    Ok(Absorption { start, expected_steps, occupation, first_state, expected_exit_value })
}

/// `P(Y_t + Y_{t-1} < h for all t >= 1 | Y_0 = s)` under `pi`, for every
/// `s in 0..h`. Extinction ends the risk.
pub fn constrained_survivals<S: Scalar>(h: u64) -> Result<Vec<S>, SolverError> {
    if h == 0 {
        return Err(SolverError::OutOfRange("h must be positive".into()));
    }
    let spec = AbsorptionSpec::pair_sum(KernelId::Pi, h);
    let q = spec.block::<S>();
    let b: Vec<S> = spec.transient_states().map(|i| S::kernel(KernelId::Pi, i, 0)).collect();
    let mut out = vec![S::one()];
    if !b.is_empty() {
        out.extend(S::solve(identity_minus(&q, false), b)?);
    }
    Ok(out)
}

pub fn constrained_survival<S: Scalar>(h: u64, start: u64) -> Result<S, SolverError> {
    if start >= h {
        return Err(SolverError::OutOfRange(format!("start {start} >= h {h}")));
    }
    Ok(constrained_survivals::<S>(h)?.swap_remove(start as usize))
}

/// Survival of the left tail started from the seam value `s`: the first
/// step uses the seam kernel, later steps `pi`.
fn left_tail_survivals<S: Scalar>(h: u64, variant: SeamVariant, ysurv: &[S]) -> Vec<S> {
    let seam = variant.seam_kernel();
    (0..h)
        .map(|s| {
            (0..h - s).fold(S::zero(), |acc, j| acc + S::kernel(seam, s, j) * ysurv[j as usize].clone())
        })
        .collect()
}

fn pattern<S: Scalar>(h: u64, k: u64) -> S {
    let a = h - k - 1;
    S::kernel(KernelId::Pi, k, a) * S::kernel(KernelId::Pi, a, k + 1) * S::kernel(KernelId::Pi, k + 1, a)
}

fn check_a_params(h: u64, k: u64) -> Result<bool, SolverError> {
    if h > MAX_EXACT_H {
        return Err(SolverError::OutOfRange(format!("h = {h} > {MAX_EXACT_H}")));
    }
    Ok(crate::walk::window_contains(h, k) && k + 1 < h)
}

/// `P(A_{x,h}^{(k)})` from its branching representation (x >= 1).
///
/// Pattern `Y_0 = h-k-1, Y_1 = k+1, Y_2 = h-k-1` from `Y_{-1} = k`, the right
/// tail staying below `h` in pair sums, `x - 1` steps of the `rho` chain with
/// `Z_t + Z_{t-1} + 1 < h`, and the left tail from the seam.
pub fn exact_a_probability<S: Scalar>(x: i64, h: u64, k: u64, variant: SeamVariant) -> Result<S, SolverError> {
    if x < 1 {
        return Err(SolverError::OutOfRange(format!("x = {x} < 1")));
    }
    if !check_a_params(h, k)? {
        return Ok(S::zero());
    }
    let ysurv = constrained_survivals::<S>(h)?;
    let left = left_tail_survivals(h, variant, &ysurv);
    let zq = AbsorptionSpec::pair_sum(KernelId::Rho, h).block::<S>();
    let mut dist: Vec<S> = (0..h).map(|s| if s == k { S::one() } else { S::zero() }).collect();
    for _ in 1..x {
        dist = (0..h as usize)
            .map(|j| (0..h as usize).fold(S::zero(), |acc, i| acc + dist[i].clone() * zq[i][j].clone()))
            .collect();
    }
    let zpart = dist.into_iter().zip(left).fold(S::zero(), |acc, (d, l)| acc + d * l);
    Ok(pattern::<S>(h, k) * ysurv[(h - k - 1) as usize].clone() * zpart)
}

/// Per-level contributions to `E N_H`.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstMoment<S> {
    /// `(h, sum_{k in I_h} sum_{x >= 1} P(A_{x,h}^{(k)}))` for `h = 1..=H`.
    pub per_level: Vec<(u64, S)>,
}

impl<S: Scalar> FirstMoment<S> {
    /// `E N_H'` for every `H' <= H`.
    pub fn cumulative(&self) -> Vec<(u64, S)> {
        let mut acc = S::zero();
        self.per_level
            .iter()
            .map(|(h, v)| {
                acc = acc.clone() + v.clone();
                (*h, acc.clone())
            })
            .collect()
    }

    pub fn total(&self) -> S {
        self.per_level.iter().fold(S::zero(), |a, (_, v)| a + v.clone())
    }
}

/// Level-`h` term of `E N_H`: the sum over `x` is the occupation measure of the
/// constrained `rho` chain, i.e. one fundamental-matrix solve per level.
pub fn nh_level<S: Scalar>(h: u64, variant: SeamVariant) -> Result<S, SolverError> {
    let ks: Vec<u64> = window_members(h).into_iter().filter(|&k| k + 1 < h).collect();
    if ks.is_empty() {
        return Ok(S::zero());
    }
    let ysurv = constrained_survivals::<S>(h)?;
    let left = left_tail_survivals(h, variant, &ysurv);
    let zq = AbsorptionSpec::pair_sum(KernelId::Rho, h).block::<S>();
    // u = (I - Q)^{-1} left, so u_k = sum_s G(k, s) left(s)
    let u = S::solve(identity_minus(&zq, false), left)?;
    Ok(ks.into_iter().fold(S::zero(), |acc, k| {
        acc + pattern::<S>(h, k) * ysurv[(h - k - 1) as usize].clone() * u[k as usize].clone()
    }))
}

pub fn exact_nh<S: Scalar>(big_h: u64, variant: SeamVariant) -> Result<FirstMoment<S>, SolverError> {
    if big_h > MAX_EXACT_H {
        return Err(SolverError::OutOfRange(format!("H = {big_h} > {MAX_EXACT_H}")));
    }
    let per_level = (1..=big_h).map(|h| Ok((h, nh_level::<S>(h, variant)?))).collect::<Result<_, _>>()?;
    Ok(FirstMoment { per_level })
}

/// `E sum_{t=1}^{tau_h} (h - Z_t)/h` for the `rho` chain from `k < h`.
pub fn efrac_exact<S: Scalar>(h: u64, k: u64) -> Result<S, SolverError> {
    let spec = AbsorptionSpec::new(KernelId::Rho, h);
    let abs = expected_absorption::<S>(&spec, k)?;
    let hs = S::from_ratio(h as i64, 1);
    let f = |z: u64| (hs.clone() - S::from_ratio(z as i64, 1)) / hs.clone();
    // sum over t in [0, tau) of f(Z_t), minus the t = 0 term, plus f(Z_tau)
    let body = (0..h).zip(&abs.occupation).fold(S::zero(), |acc, (i, g)| acc + g.clone() * f(i));
    Ok(body - f(k) + S::one() - abs.expected_exit_value / hs.clone())
}

/// Exact rational helper for tests and JSON output.
pub fn rational(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// Whether a rational lies in `[0, 1]`.
pub fn is_probability(q: &BigRational) -> bool {
    !q.is_negative() && q <= &BigRational::one()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_systems() {
        let id = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(linear_solve(&id, &[3.0, 4.0]).unwrap(), vec![3.0, 4.0]);
        let x = linear_solve_exact(&[vec![rational(3, 4)]], &[rational(1, 2)]).unwrap();
        assert_eq!(x, vec![rational(2, 3)]);
        let sing = vec![vec![1.0, 2.0], vec![2.0, 4.0]];
        assert_eq!(linear_solve(&sing, &[1.0, 1.0]), Err(SolverError::Singular));
        let q = vec![vec![rational(1, 1), rational(2, 1)], vec![rational(2, 1), rational(4, 1)]];
        assert_eq!(linear_solve_exact(&q, &[rational(1, 1), rational(1, 1)]), Err(SolverError::Singular));
    }

    #[test]
    fn exact_solver_needs_pivoting() {
        let a = vec![vec![rational(0, 1), rational(1, 3)], vec![rational(1, 2), rational(1, 5)]];
        let x = linear_solve_exact(&a, &[rational(1, 1), rational(1, 1)]).unwrap();
        // y = 3, x/2 + 3/5 = 1 -> x = 4/5
        assert_eq!(x, vec![rational(4, 5), rational(3, 1)]);
    }

    #[test]
    fn expected_tau_two_from_zero() {
        let spec = AbsorptionSpec::new(KernelId::Rho, 2);
        let a = expected_absorption::<BigRational>(&spec, 0).unwrap();
        assert_eq!(a.expected_steps, rational(16, 5));
        assert_eq!(a.expected_exit_value, rational(16, 5));
        let from_one = expected_absorption::<BigRational>(&spec, 1).unwrap();
        assert_eq!(from_one.expected_steps, rational(12, 5));
        let occ: BigRational = a.occupation.iter().sum();
        assert_eq!(occ, a.expected_steps);
        let one = expected_absorption::<BigRational>(&AbsorptionSpec::new(KernelId::Rho, 1), 0).unwrap();
        assert_eq!(one.expected_steps, rational(2, 1));
    }

    #[test]
    fn hitting_examples() {
        let spec = AbsorptionSpec::new(KernelId::Pi, 2);
        assert_eq!(hitting_probability::<BigRational>(&spec, 0).unwrap(), rational(1, 1));
        assert_eq!(hitting_probability::<BigRational>(&spec, 1).unwrap(), rational(2, 3));
        assert!(hitting_probability::<f64>(&spec, 2).is_err());
    }

    #[test]
    fn survival_examples() {
        assert_eq!(constrained_survival::<BigRational>(2, 0).unwrap(), rational(1, 1));
        assert_eq!(constrained_survival::<BigRational>(2, 1).unwrap(), rational(1, 2));
        assert_eq!(constrained_survival::<BigRational>(3, 1).unwrap(), rational(2, 3));
        assert!(constrained_survival::<f64>(3, 3).is_err());
    }

    #[test]
    fn exit_identity_exact_small_h() {
        for h in 1..12 {
            for s in 0..h {
                for kernel in [KernelId::Rho, KernelId::Rhostar] {
                    let a = expected_absorption::<BigRational>(&AbsorptionSpec::new(kernel, h), s).unwrap();
                    assert!(a.identity_gap(kernel).is_zero(), "{kernel} h={h} s={s}");
                }
                let a = expected_absorption::<BigRational>(&AbsorptionSpec::new(KernelId::Pi, h), s).unwrap();
                assert!(a.identity_gap(KernelId::Pi).is_zero());
            }
        }
    }

    #[test]
    fn float_and_exact_first_moment_agree() {
        let exact = exact_nh::<BigRational>(16, SeamVariant::OriginImmigration).unwrap();
        let float = exact_nh::<f64>(16, SeamVariant::OriginImmigration).unwrap();
        let (e, f) = (exact.total().to_float(), float.total());
        assert!(e > 0.0);
        assert!(((e - f) / e).abs() < 1e-10, "{e} vs {f}");
        for ((_, v), (_, w)) in exact.per_level.iter().zip(&float.per_level) {
            assert!(is_probability(v));
            assert!((v.to_float() - w).abs() <= 1e-12 + 1e-10 * w.abs());
        }
    }

    #[test]
    fn a_probability_excluded_outside_window() {
        assert_eq!(exact_a_probability::<f64>(1, 25, 14, SeamVariant::OriginImmigration).unwrap(), 0.0);
        assert!(exact_a_probability::<f64>(1, 25, 17, SeamVariant::OriginImmigration).unwrap() > 0.0);
        assert!(exact_a_probability::<f64>(0, 25, 17, SeamVariant::OriginImmigration).is_err());
        assert!(exact_nh::<f64>(65, SeamVariant::OriginImmigration).is_err());
    }

    #[test]
    fn sum_over_sites_matches_occupation_form() {
        let (h, k) = (25u64, 17u64);
        let variant = SeamVariant::OriginImmigration;
        let by_site: f64 = (1..=3000).map(|x| exact_a_probability::<f64>(x, h, k, variant).unwrap()).sum();
        // the level term sums over all k in I_25 = {16, .., 19}
        let level_k17 = {
            let ysurv = constrained_survivals::<f64>(h).unwrap();
            let left = left_tail_survivals(h, variant, &ysurv);
            let zq = AbsorptionSpec::pair_sum(KernelId::Rho, h).block::<f64>();
            let u = linear_solve(&identity_minus(&zq, false), &left).unwrap();
            pattern::<f64>(h, k) * ysurv[(h - k - 1) as usize] * u[k as usize]
        };
        assert!(((by_site - level_k17) / level_k17).abs() < 1e-9, "{by_site} vs {level_k17}");
    }

    #[test]
    fn efrac_exact_float_agree() {
        let e = efrac_exact::<BigRational>(12, 7).unwrap().to_float();
        let f = efrac_exact::<f64>(12, 7).unwrap();
        assert!((e - f).abs() < 1e-10);
    }
}
