//! Transition kernels of the critical geometric branching chains.
//!
//! `pi(i, j)` is the law of the sum of `i` independent Geometric(1/2) offspring
//! counts (support `{0, 1, ...}`, `P(X = m) = 2^-(m+1)`). `rho` adds one
//! immigrant before branching and `rhostar` adds one after:
//!
//! ```text
//! pi(0, j)      = [j == 0]
//! pi(i, j)      = 2^-(i+j) (i+j-1)! / ((i-1)! j!)     i >= 1
//! rho(i, j)     = pi(i + 1, j)
//! rhostar(i, j) = pi(i, j - 1),   rhostar(i, 0) = 0
//! ```
//!
//! Exact values are big rationals. The floating path is exact up to rounding
//! for `i + j <= 64` and uses a saddle-point binomial evaluation beyond.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::numeric::{binomial, binomial_u64, pow2_inv, rational_to_f64};

/// Which of the three kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelId {
    Pi,
    Rho,
    Rhostar,
}

impl KernelId {
    pub const ALL: [KernelId; 3] = [KernelId::Pi, KernelId::Rho, KernelId::Rhostar];

    /// Rewrites `(id, i, j)` as a `pi` argument pair, or `None` when the
    /// probability is structurally zero.
    fn as_pi(self, i: u64, j: u64) -> Option<(u64, u64)> {
        match self {
            KernelId::Pi => Some((i, j)),
            KernelId::Rho => Some((i + 1, j)),
            KernelId::Rhostar => j.checked_sub(1).map(|m| (i, m)),
        }
    }

    /// Number of geometric offspring summed, and the deterministic shift.
    fn offspring(self, i: u64) -> (u64, u64) {
        match self {
            KernelId::Pi => (i, 0),
            KernelId::Rho => (i + 1, 0),
            KernelId::Rhostar => (i, 1),
        }
    }
}

impl fmt::Display for KernelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelId::Pi => "pi",
            KernelId::Rho => "rho",
            KernelId::Rhostar => "rhostar",
        })
    }
}

impl FromStr for KernelId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pi" => Ok(KernelId::Pi),
            "rho" => Ok(KernelId::Rho),
            "rhostar" | "rho-star" | "rho*" => Ok(KernelId::Rhostar),
            other => Err(format!("unknown kernel `{other}` (expected pi, rho or rhostar)")),
        }
    }
}

/// Above this value of `i + j` the floating path leaves exact integer binomials.
pub const EXACT_SWITCHOVER: u64 = 64;

pub fn pi_exact(i: u64, j: u64) -> BigRational {
    if i == 0 {
        return if j == 0 { BigRational::one() } else { BigRational::zero() };
    }
    let c = binomial(i + j - 1, j);
    BigRational::from_integer(BigInt::from(c)) * pow2_inv(i + j)
}

pub fn kernel_prob_exact(id: KernelId, i: u64, j: u64) -> BigRational {
    match id.as_pi(i, j) {
        Some((a, b)) => pi_exact(a, b),
        None => BigRational::zero(),
    }
}

pub fn pi_f64(i: u64, j: u64) -> f64 {
    if i == 0 {
        return if j == 0 { 1.0 } else { 0.0 };
    }
    if i + j <= EXACT_SWITCHOVER {
        // numerator is an exact u64; the power of two is exact in f64
        return binomial_u64(i + j - 1, j) as f64 * 2f64.powi(-((i + j) as i32));
    }
    ln_pi(i, j).exp()
}

pub fn kernel_prob(id: KernelId, i: u64, j: u64) -> f64 {
    match id.as_pi(i, j) {
        Some((a, b)) => pi_f64(a, b),
        None => 0.0,
    }
}

/// Natural log of `pi(i, j)`; `-inf` for structural zeros.
pub fn ln_pi(i: u64, j: u64) -> f64 {
    if i == 0 {
        return if j == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    let n = (i + j) as f64;
    // C(i+j-1, j) 2^-(i+j) = i/(i+j) * C(i+j, j) 2^-(i+j)
    (i as f64 / n).ln() + ln_binom_half(i + j, j)
}

pub fn ln_kernel(id: KernelId, i: u64, j: u64) -> f64 {
    match id.as_pi(i, j) {
        Some((a, b)) => ln_pi(a, b),
        None => f64::NEG_INFINITY,
    }
}

// Saddle-point evaluation of ln(C(n, x) 2^-n) (Loader 2000): the large
// Stirling terms cancel analytically, leaving O(1) quantities.
fn ln_binom_half(n: u64, x: u64) -> f64 {
    let nf = n as f64;
    if x == 0 || x == n {
        return -nf * std::f64::consts::LN_2;
    }
    let xf = x as f64;
    let mean = nf * 0.5;
    let lc = stirlerr(n) - stirlerr(x) - stirlerr(n - x) - bd0(xf, mean) - bd0(nf - xf, mean);
    let lf = (2.0 * std::f64::consts::PI).ln() + xf.ln() + (-xf / nf).ln_1p();
    lc - 0.5 * lf
}

// ln(n!) - ((n + 1/2) ln n - n + ln(2 pi)/2)
const STIRLERR_SMALL: [f64; 16] = [
    0.0,
    0.081061466795327258,
    0.041340695955409294,
    0.027677925684998339,
    0.020790672103765093,
    0.016644691189821192,
    0.013876128823070748,
    0.01189670994589177,
    0.010411265261972096,
    0.0092554621827127329,
    0.0083305634333628713,
    0.0075736754879518408,
    0.0069428401072095299,
    0.0064089941880042071,
    0.0059513701127588477,
    0.0055547335519628014,
];

fn stirlerr(n: u64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    if n < 16 {
        return STIRLERR_SMALL[n as usize];
    }
    let nf = n as f64;
    let nn = nf * nf;
    if n > 500 {
        (S0 - S1 / nn) / nf
    } else if n > 80 {
        (S0 - (S1 - S2 / nn) / nn) / nf
    } else if n > 35 {
        (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / nf
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / nf
    }
}

// x ln(x/np) + np - x, evaluated by series when x is close to np.
fn bd0(x: f64, np: f64) -> f64 {
    if (x - np).abs() < 0.1 * (x + np) {
        let mut v = (x - np) / (x + np);
        let mut s = (x - np) * v;
        let mut ej = 2.0 * x * v;
        v *= v;
        for j in 1..1000 {
            ej *= v;
            let s1 = s + ej / (2 * j + 1) as f64;
            if s1 == s {
                return s1;
            }
            s = s1;
        }
        s
    } else {
        x * (x / np).ln() + np - x
    }
}

/// Probability mass of Geometric(1/2) on `{0, 1, ...}`.
pub fn offspring_prob(m: u64) -> f64 {
    2f64.powi(-((m + 1) as i32))
}

/// Sum of `n` independent Geometric(1/2) variables: the number of tails
/// before the `n`-th head in a stream of fair coin flips, read 64 flips at a
/// time.
pub fn sum_geometric<R: RngCore + ?Sized>(n: u64, rng: &mut R) -> u64 {
    let mut need = n;
    let mut tails = 0u64;
    while need > 0 {
        let w = rng.next_u64();
        let heads = w.count_ones() as u64;
        if heads < need {
            need -= heads;
            tails += 64 - heads;
            continue;
        }
        let mut rest = w;
        for _ in 1..need {
            rest &= rest - 1;
        }
        let pos = rest.trailing_zeros() as u64;
        tails += pos + 1 - need;
        need = 0;
    }
    tails
}

/// Draws `j ~ kernel(i, .)` as a sum of geometric offspring (plus the
/// immigrant shift for `rhostar`).
pub fn kernel_sample<R: RngCore + ?Sized>(id: KernelId, i: u64, rng: &mut R) -> u64 {
    let (n, shift) = id.offspring(i);
    shift + sum_geometric(n, rng)
}

/// Certified truncation of a kernel row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Truncation {
    /// Last index that must be summed.
    pub j_max: u64,
    /// Upper bound on the mass beyond `j_max`.
    pub tail_bound: f64,
}

/// Smallest `J` whose analytic tail bound falls below `eps`.
///
/// For `i >= 1` the ratio `pi(i, j+1) / pi(i, j) = (i+j) / (2(j+1))` is
/// nonincreasing in `j`; once it is at most 3/4 the tail is dominated by a
/// geometric series, so `sum_{j > J} pi(i, j) <= 3 pi(i, J)`.
pub fn truncation_point(id: KernelId, i: u64, eps: f64) -> Truncation {
    let (n, shift) = id.offspring(i);
    if n == 0 {
        return Truncation { j_max: shift, tail_bound: 0.0 };
    }
    let mut j = 0u64;
    loop {
        let ratio = (n + j) as f64 / (2 * (j + 1)) as f64;
        if ratio <= 0.75 {
            let bound = pi_f64(n, j) * ratio / (1.0 - ratio);
            if bound < eps {
                return Truncation { j_max: j + shift, tail_bound: bound };
            }
        }
        j += 1;
    }
}

/// First two conditional moments of one kernel step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelMoments {
    pub mean: f64,
    pub second: f64,
    pub mean_series: f64,
    pub second_series: f64,
    pub tail_bound: f64,
}

impl KernelMoments {
    pub fn consistent(&self, tol: f64) -> bool {
        let scale = self.second.max(1.0);
        (self.mean - self.mean_series).abs() <= tol * scale
            && (self.second - self.second_series).abs() <= tol * scale
    }
}

/// Closed-form mean/second moment, and the same quantities from a truncated
/// summation of the row.
pub fn kernel_moments(id: KernelId, i: u64) -> KernelMoments {
    let (n, shift) = id.offspring(i);
    let (nf, sf) = (n as f64, shift as f64);
    // sum of n geometrics: mean n, variance 2n
    let mean = nf + sf;
    let second = 2.0 * nf + nf * nf + 2.0 * sf * nf + sf * sf;
    let tr = truncation_point(id, i, 1e-16);
    let (mut m1, mut m2) = (0.0, 0.0);
    for j in 0..=tr.j_max {
        let p = kernel_prob(id, i, j);
        let jf = j as f64;
        m1 += p * jf;
        m2 += p * jf * jf;
    }
    KernelMoments { mean, second, mean_series: m1, second_series: m2, tail_bound: tr.tail_bound }
}

/// Exact rational certificate for the first two moments of a kernel row.
///
/// With `j = m + s` and `pi(n, .)` the base row, the termwise identities
/// `m pi(n, m) = n pi(n+1, m-1)` and `m(m-1) pi(n, m) = n(n+1) pi(n+2, m-2)`
/// hold exactly, so every partial sum equals a combination of partial row
/// sums; the rows sum to one, which bounds what the truncation leaves out.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentCertificate {
    pub mean: BigRational,
    pub second: BigRational,
    pub partial_mean: BigRational,
    pub partial_second: BigRational,
    /// Partial sums matched the row-sum identities exactly.
    pub identities_hold: bool,
    /// `mean - partial_mean` and `second - partial_second` as floats.
    pub mean_gap: f64,
    pub second_gap: f64,
}

pub fn moment_certificate(id: KernelId, i: u64, eps: f64) -> MomentCertificate {
    let (n, shift) = id.offspring(i);
    let tr = truncation_point(id, i, eps);
    let m_max = tr.j_max.saturating_sub(shift);
    let q = |v: u64| BigRational::from_integer(BigInt::from(v));
    let row_partial = |base: u64, upto: Option<u64>| -> BigRational {
        match upto {
            None => BigRational::zero(),
            Some(u) => (0..=u).fold(BigRational::zero(), |acc, m| acc + pi_exact(base, m)),
        }
    };
    let mut pm = BigRational::zero();
    let mut ps = BigRational::zero();
    let mut p0 = BigRational::zero();
    for m in 0..=m_max {
        let p = pi_exact(n, m);
        let j = q(m + shift);
        pm += &p * &j;
        ps += &p * &j * &j;
        p0 += p;
    }
    let (pa, pb) = if n == 0 {
        (BigRational::zero(), BigRational::zero())
    } else {
        (row_partial(n + 1, m_max.checked_sub(1)), row_partial(n + 2, m_max.checked_sub(2)))
    };
    let nq = q(n);
    let sq = q(shift);
    // sum m pi = n * pa ; sum m^2 pi = n(n+1) pb + n pa
    let sum_m = &nq * &pa;
    let sum_m2 = &nq * q(n + 1) * &pb + &sum_m;
    let expect_mean = &sum_m + &sq * &p0;
    let expect_second = &sum_m2 + q(2) * &sq * &sum_m + &sq * &sq * &p0;
    let identities_hold = expect_mean == pm && expect_second == ps;
    let mean = q(n + shift);
    let second = q(2 * n + n * n + 2 * shift * n + shift * shift);
    MomentCertificate {
        mean_gap: rational_to_f64(&(&mean - &pm)),
        second_gap: rational_to_f64(&(&second - &ps)),
        mean,
        second,
        partial_mean: pm,
        partial_second: ps,
        identities_hold,
    }
}

/// Measured brackets of `pi(i, j) sqrt(h)` on the central window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowReport {
    pub h: u64,
    pub min_ratio: f64,
    pub max_ratio: f64,
    /// Max of `pi(i, j) sqrt(h)` over `i + j = h`.
    pub diagonal_max_ratio: f64,
    pub monotonicity_pass: bool,
    pub triples_checked: usize,
}

/// Sweeps all integer `i, j` strictly inside `((h - 10 sqrt h)/2, (h + 10 sqrt h)/2)`.
pub fn asymptotic_window_check(h: u64) -> WindowReport {
    assert!(h >= 16, "window check needs h >= 16");
    let hf = h as f64;
    let lo = 0.5 * (hf - 10.0 * hf.sqrt());
    let hi = 0.5 * (hf + 10.0 * hf.sqrt());
    let first = (lo.floor() as i64 + 1).max(0) as u64;
    let last = (hi.ceil() as u64).saturating_sub(1);
    let first_i = first.max(1);
    let scale = hf.sqrt();
    let (mut min_ratio, mut max_ratio) = (f64::INFINITY, 0.0f64);
    for i in first_i..=last {
        for j in first..=last {
            let r = pi_f64(i, j) * scale;
            min_ratio = min_ratio.min(r);
            max_ratio = max_ratio.max(r);
        }
    }
    let diagonal_max_ratio =
        (1..h).map(|i| pi_f64(i, h - i) * scale).fold(0.0f64, f64::max);

    // exact strict monotonicity in i for fixed j < i1 < i2
    let span = last - first_i;
    let mut triples = vec![(1, 2, 3)];
    for a in 0..4u64 {
        for b in 1..4u64 {
            let j = first + a * span / 8;
            let i1 = j + 1 + b * span / 16;
            let i2 = i1 + 1 + a * span / 16;
            triples.push((j, i1, i2));
        }
    }
    let monotonicity_pass = triples.iter().all(|&(j, i1, i2)| pi_exact(i1, j) > pi_exact(i2, j));
    WindowReport {
        h,
        min_ratio,
        max_ratio,
        diagonal_max_ratio,
        monotonicity_pass,
        triples_checked: triples.len(),
    }
}
