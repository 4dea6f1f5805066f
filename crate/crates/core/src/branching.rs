//! The branching chains `Y` (`pi`), `Z` (`rho`), `R` (`rhostar`), the patched
//! Ray-Knight profiles, and the Monte Carlo experiments built on them.
//!
//! A patched profile is a seed value at site `x - 1` and two arms that walk
//! away from it, one site at a time. Each arm applies a fixed list of kernels
//! for its first sites and `pi` afterwards, so it ends once it hits 0:
//!
//! ```text
//! x >= 1   seed D(x-1) = k
//!          right arm  x, x+1, ...          pi
//!          left arm   x-2, ..., 0          rho        (x - 1 sites)
//!                     -1                   seam kernel
//!                     -2, -3, ...          pi
//! x <= 0   seed D(x-1) = k + 1             (k for the verbatim variant)
//!          left arm   x-2, x-3, ...        pi
//!          right arm  x, ..., -1           rhostar    (-x sites)
//!                     0, 1, ...            pi
//! ```
//!
//! The seam kernel is `rho` for [`SeamVariant::OriginImmigration`] and `pi`
//! for [`SeamVariant::Verbatim`]. Only the former reproduces the walk.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::enumerate::{stopped_local_time_law, stopped_profile_law, EnumError};
use crate::kernels::{kernel_prob, kernel_sample, pi_exact, KernelId};
use crate::numeric::{rational_to_f64, Scalar};
use crate::replica::Replicas;
use crate::solver::{self, AbsorptionSpec};
use crate::stats::{chi_square, tv_distance, ComparisonReport, MeanEstimate, StatsError, Verdict};

/// Iteration cap for chains that run until an a.s. finite event.
pub const DEFAULT_CHAIN_CAP: usize = 10_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BranchError {
    #[error("kernel {0} never dies out; extinction stop requested")]
    NoExtinction(KernelId),
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Enum(#[from] EnumError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Solver(#[from] solver::SolverError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeamVariant {
    Verbatim,
    #[default]
    OriginImmigration,
}

impl SeamVariant {
    pub const ALL: [SeamVariant; 2] = [SeamVariant::Verbatim, SeamVariant::OriginImmigration];

    /// Kernel of the step from site 0 to site -1 when `x >= 1`.
    pub fn seam_kernel(self) -> KernelId {
        match self {
            SeamVariant::Verbatim => KernelId::Pi,
            SeamVariant::OriginImmigration => KernelId::Rho,
        }
    }
}

impl fmt::Display for SeamVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SeamVariant::Verbatim => "verbatim",
            SeamVariant::OriginImmigration => "origin-immigration",
        })
    }
}

impl FromStr for SeamVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "verbatim" => Ok(SeamVariant::Verbatim),
            "origin-immigration" => Ok(SeamVariant::OriginImmigration),
            other => Err(format!("unknown variant {other:?} (verbatim | origin-immigration)")),
        }
    }
}

// ---------------------------------------------------------------------------
// chains

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "value")]
pub enum ChainStop {
    /// First `t` with state `>= h`.
    HitAtLeast(u64),
    /// First `t` with state 0 (only for `pi`).
    Extinction,
    /// Exactly this many transitions.
    Fixed(usize),
    /// First `t >= 1` with the tilde value `>= h`.
    TildeHitAtLeast(u64),
}

/// Recorded stopping times; `hit` is `sigma_h` for `pi` and `tau_h` otherwise.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stops {
    pub hit: Option<usize>,
    pub tilde_hit: Option<usize>,
    pub extinction: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainTrajectory {
    pub kernel: KernelId,
    pub states: Vec<u64>,
    pub threshold: Option<u64>,
    pub stops: Stops,
    pub capped: bool,
}

/// `+1` in the tilde value of the immigration chains.
fn tilde_extra(kernel: KernelId) -> u64 {
    u64::from(kernel != KernelId::Pi)
}

impl ChainTrajectory {
    /// `Y_t + Y_{t-1}` (`+1` for the immigration chains), for `t >= 1`.
    pub fn tilde(&self) -> Vec<u64> {
        self.states.windows(2).map(|w| w[0] + w[1] + tilde_extra(self.kernel)).collect()
    }

    /// Transitions have positive probability, `pi` stays at 0, and the
    /// recorded stops are the first times their conditions hold.
    pub fn is_consistent(&self) -> bool {
        let reachable = self.states.windows(2).all(|w| kernel_prob(self.kernel, w[0], w[1]) > 0.0);
        let first = |pred: &dyn Fn(usize) -> bool, from: usize| (from..self.states.len()).find(|&t| pred(t));
        let ext = (self.kernel == KernelId::Pi).then(|| first(&|t| self.states[t] == 0, 0)).flatten();
        let (hit, tilde) = match self.threshold {
            Some(h) => (
                first(&|t| self.states[t] >= h, 0),
                first(&|t| self.states[t] + self.states[t - 1] + tilde_extra(self.kernel) >= h, 1),
            ),
            None => (None, None),
        };
        reachable && ext == self.stops.extinction && hit == self.stops.hit && tilde == self.stops.tilde_hit
    }
}

pub fn simulate_chain<R: RngCore + ?Sized>(
    kernel: KernelId,
    start: u64,
    stop: ChainStop,
    cap: usize,
    rng: &mut R,
) -> Result<ChainTrajectory, BranchError> {
    if stop == ChainStop::Extinction && kernel != KernelId::Pi {
        return Err(BranchError::NoExtinction(kernel));
    }
    let threshold = match stop {
        ChainStop::HitAtLeast(h) | ChainStop::TildeHitAtLeast(h) => Some(h),
        _ => None,
    };
    let mut states = vec![start];
    let mut stops = Stops::default();
    let note = |states: &[u64], stops: &mut Stops| {
        let t = states.len() - 1;
        let z = states[t];
        if kernel == KernelId::Pi && z == 0 && stops.extinction.is_none() {
            stops.extinction = Some(t);
        }
        if let Some(h) = threshold {
            if z >= h && stops.hit.is_none() {
                stops.hit = Some(t);
            }
            if t >= 1 && z + states[t - 1] + tilde_extra(kernel) >= h && stops.tilde_hit.is_none() {
                stops.tilde_hit = Some(t);
            }
        }
    };
    note(&states, &mut stops);
    let done = |states: &[u64], stops: &Stops| match stop {
        ChainStop::HitAtLeast(_) => stops.hit.is_some(),
        ChainStop::Extinction => stops.extinction.is_some(),
        ChainStop::Fixed(n) => states.len() > n,
        ChainStop::TildeHitAtLeast(_) => stops.tilde_hit.is_some(),
    };
    let mut capped = false;
    while !done(&states, &stops) {
        if states.len() > cap {
            capped = true;
            break;
        }
        let next = kernel_sample(kernel, *states.last().expect("nonempty"), rng);
        states.push(next);
        note(&states, &mut stops);
    }
    Ok(ChainTrajectory { kernel, states, threshold, stops, capped })
}

/// One line of `chain-lab` output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub replica: u64,
    pub steps: usize,
    pub final_state: u64,
    pub hit: Option<usize>,
    pub tilde_hit: Option<usize>,
    pub extinction: Option<usize>,
    pub capped: bool,
}

pub fn chain_lab(
    kernel: KernelId,
    start: u64,
    stop: ChainStop,
    reps: u64,
    replicas: &Replicas,
) -> Result<Vec<ChainRecord>, BranchError> {
    if stop == ChainStop::Extinction && kernel != KernelId::Pi {
        return Err(BranchError::NoExtinction(kernel));
    }
    replicas
        .run(reps, |i, rng| {
            simulate_chain(kernel, start, stop, DEFAULT_CHAIN_CAP, rng).map(|t| ChainRecord {
                replica: i,
                steps: t.states.len() - 1,
                final_state: *t.states.last().expect("nonempty"),
                hit: t.stops.hit,
                tilde_hit: t.stops.tilde_hit,
                extinction: t.stops.extinction,
                capped: t.capped,
            })
        })
        .into_iter()
        .collect()
}

// ---------------------------------------------------------------------------
// patched profiles

/// A run of sites leaving the seed in direction `dir`; the kernels in
/// `prefix` are used first, then `pi`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Arm {
    pub start: i64,
    pub dir: i64,
    pub prefix: Vec<KernelId>,
}

impl Arm {
    pub fn kernel(&self, i: usize) -> KernelId {
        self.prefix.get(i).copied().unwrap_or(KernelId::Pi)
    }
}

/// One transition of the patched law: `value(site) ~ kernel(from, .)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Factor {
    pub site: i64,
    pub kernel: KernelId,
    pub from: u64,
    pub to: u64,
}

/// The law of the patched profile anchored at `x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PatchedLaw {
    pub x: i64,
    pub variant: SeamVariant,
}

impl PatchedLaw {
    pub fn new(x: i64, variant: SeamVariant) -> Self {
        PatchedLaw { x, variant }
    }

    pub fn seed_site(&self) -> i64 {
        self.x - 1
    }

    /// Value at the seed site for `T_U(k+1, x)`.
    pub fn seed(&self, k: u64) -> u64 {
        if self.x >= 1 || self.variant == SeamVariant::Verbatim {
            k
        } else {
            k + 1
        }
    }

    pub fn arms(&self) -> [Arm; 2] {
        let x = self.x;
        if x >= 1 {
            let mut left = vec![KernelId::Rho; (x - 1) as usize];
            left.push(self.variant.seam_kernel());
            [Arm { start: x, dir: 1, prefix: Vec::new() }, Arm { start: x - 2, dir: -1, prefix: left }]
        } else {
            [
                Arm { start: x - 2, dir: -1, prefix: Vec::new() },
                Arm { start: x, dir: 1, prefix: vec![KernelId::Rhostar; (-x) as usize] },
            ]
        }
    }

    /// Transitions along both arms for a profile with support in `[lo, hi]`.
    /// The seed value is not checked here.
    pub fn factors(&self, value: impl Fn(i64) -> u64, lo: i64, hi: i64) -> Vec<Factor> {
        let mut out = Vec::new();
        for arm in self.arms() {
            let mut prev = value(self.seed_site());
            let mut site = arm.start;
            for i in 0.. {
                let kernel = arm.kernel(i);
                if i >= arm.prefix.len() && prev == 0 {
                    // pi is absorbed at 0; any later mass is impossible
                    let mut s = site;
                    while (lo..=hi).contains(&s) || (arm.dir > 0 && s < lo) || (arm.dir < 0 && s > hi) {
                        if value(s) > 0 {
                            out.push(Factor { site: s, kernel, from: 0, to: value(s) });
                            break;
                        }
                        s += arm.dir;
                    }
                    break;
                }
                let to = value(site);
                out.push(Factor { site, kernel, from: prev, to });
                prev = to;
                site += arm.dir;
            }
        }
        out
    }

    /// Probability of a full profile given the seed value at `x - 1`.
    pub fn probability<S: Scalar>(&self, value: impl Fn(i64) -> u64, lo: i64, hi: i64) -> S {
        self.factors(value, lo, hi)
            .into_iter()
            .fold(S::one(), |acc, f| acc * S::kernel(f.kernel, f.from, f.to))
    }
}

/// `L` recovered from a downcrossing field when the walk stands at `x`.
pub fn lambda_from(value: impl Fn(i64) -> u64, x: i64, y: i64) -> i64 {
    value(y) as i64 + value(y - 1) as i64 + i64::from(0 < y && y <= x) - i64::from(x < y && y <= 0)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchedProfile {
    pub x: i64,
    pub k: u64,
    pub variant: SeamVariant,
    /// Site of `values[0]`.
    pub lo: i64,
    pub values: Vec<u64>,
    pub capped: bool,
}

impl PatchedProfile {
    pub fn value(&self, y: i64) -> u64 {
        let i = y - self.lo;
        if i < 0 {
            0
        } else {
            self.values.get(i as usize).copied().unwrap_or(0)
        }
    }

    pub fn hi(&self) -> i64 {
        self.lo + self.values.len() as i64 - 1
    }

    /// `Lambda(y) = Delta(y) + Delta(y-1) + 1{0<y<=x} - 1{x<y<=0}`.
    pub fn lambda(&self, y: i64) -> i64 {
        lambda_from(|s| self.value(s), self.x, y)
    }

    pub fn total(&self) -> u64 {
        self.values.iter().sum()
    }

    /// The walk time at which this field is realised: `2 sum Delta + x`.
    pub fn decision_time(&self) -> i64 {
        2 * self.total() as i64 + self.x
    }

    pub fn window(&self, lo: i64, hi: i64) -> Vec<u64> {
        (lo..=hi).map(|y| self.value(y)).collect()
    }

    pub fn lambda_window(&self, lo: i64, hi: i64) -> Vec<i64> {
        (lo..=hi).map(|y| self.lambda(y)).collect()
    }
}

pub fn patched_profile<R: RngCore + ?Sized>(x: i64, k: u64, variant: SeamVariant, rng: &mut R) -> PatchedProfile {
    patched_profile_capped(x, k, variant, DEFAULT_CHAIN_CAP, rng)
}

pub fn patched_profile_capped<R: RngCore + ?Sized>(
    x: i64,
    k: u64,
    variant: SeamVariant,
    cap: usize,
    rng: &mut R,
) -> PatchedProfile {
    let law = PatchedLaw::new(x, variant);
    let seed = law.seed(k);
    let mut sites: BTreeMap<i64, u64> = BTreeMap::new();
    sites.insert(law.seed_site(), seed);
    let mut capped = false;
    for arm in law.arms() {
        let mut prev = seed;
        let mut site = arm.start;
        for i in 0.. {
            if i >= arm.prefix.len() && prev == 0 {
                break;
            }
            if i >= cap {
                capped = true;
                break;
            }
            prev = kernel_sample(arm.kernel(i), prev, rng);
            sites.insert(site, prev);
            site += arm.dir;
        }
    }
    let lo = *sites.keys().next().expect("seed site present");
    let hi = *sites.keys().next_back().expect("seed site present");
    let values = (lo..=hi).map(|y| sites.get(&y).copied().unwrap_or(0)).collect();
    PatchedProfile { x, k, variant, lo, values, capped }
}

/// Exact law of the window values (and of `Lambda` on the window) under the
/// patched law, restricted to profiles whose decision time is `<= n_cap`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedWindowLaw<S> {
    pub law: BTreeMap<Vec<u64>, S>,
    pub lambda_law: BTreeMap<Vec<i64>, S>,
    /// Total probability of the enumerated profiles.
    pub covered: S,
    pub profiles: usize,
}

pub fn truncated_window_law<S: Scalar>(
    x: i64,
    k: u64,
    variant: SeamVariant,
    window: (i64, i64),
    n_cap: u32,
) -> TruncatedWindowLaw<S> {
    let law = PatchedLaw::new(x, variant);
    let mut out = TruncatedWindowLaw {
        law: BTreeMap::new(),
        lambda_law: BTreeMap::new(),
        covered: S::zero(),
        profiles: 0,
    };
    let room = n_cap as i64 - x;
    let seed = law.seed(k);
    if room < 0 || 2 * seed as i64 > room {
        return out;
    }
    let budget = (room / 2) as u64 - seed;
    let arms = law.arms();
    let span = (budget as i64) + arms.iter().map(|a| a.prefix.len() as i64).sum::<i64>() + x.abs() + 4;
    let offset = span;
    let mut values = vec![0u64; (2 * span + 1) as usize];
    values[(law.seed_site() + offset) as usize] = seed;
    let ctx = Dfs { arms: &arms, x, window, offset };
    ctx.walk(0, 0, arms[0].start, seed, budget, S::one(), &mut values, &mut out);
    out
}

struct Dfs<'a> {
    arms: &'a [Arm; 2],
    x: i64,
    window: (i64, i64),
    offset: i64,
}

impl Dfs<'_> {
    #[allow(clippy::too_many_arguments)]
    fn walk<S: Scalar>(
        &self,
        arm: usize,
        i: usize,
        site: i64,
        prev: u64,
        budget: u64,
        prob: S,
        values: &mut Vec<u64>,
        out: &mut TruncatedWindowLaw<S>,
    ) {
        let a = &self.arms[arm];
        if i >= a.prefix.len() && prev == 0 {
            if arm == 0 {
                let seed = values[(self.x - 1 + self.offset) as usize];
                let next = &self.arms[1];
                self.walk(1, 0, next.start, seed, budget, prob, values, out);
            } else {
                self.record(prob, values, out);
            }
            return;
        }
        let kernel = a.kernel(i);
        let slot = (site + self.offset) as usize;
        for j in 0..=budget {
            let p = S::kernel(kernel, prev, j);
            if p.is_zero() {
                continue;
            }
            values[slot] = j;
            self.walk(arm, i + 1, site + a.dir, j, budget - j, prob.clone() * p, values, out);
        }
        values[slot] = 0;
    }

    fn record<S: Scalar>(&self, prob: S, values: &[u64], out: &mut TruncatedWindowLaw<S>) {
        let value = |y: i64| {
            let i = y + self.offset;
            if i < 0 {
                0
            } else {
                values.get(i as usize).copied().unwrap_or(0)
            }
        };
        let (lo, hi) = self.window;
        let win: Vec<u64> = (lo..=hi).map(value).collect();
        let lam: Vec<i64> = (lo..=hi).map(|y| lambda_from(value, self.x, y)).collect();
        let e = out.law.entry(win).or_insert_with(S::zero);
        *e = e.clone() + prob.clone();
        let e = out.lambda_law.entry(lam).or_insert_with(S::zero);
        *e = e.clone() + prob.clone();
        out.covered = out.covered.clone() + prob;
        out.profiles += 1;
    }
}

// ---------------------------------------------------------------------------
// coupling test

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingParams {
    pub x: i64,
    pub k: u64,
    pub window: (i64, i64),
    pub samples: u64,
    pub n_cap: u32,
}

/// Category of a sample: window values when decided by `n_cap`, else residual.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category<T> {
    Window(T),
    Residual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub variant: SeamVariant,
    /// Exact TV between the truncated kernel law and the walk law (both with
    /// residual categories).
    pub exact_tv: f64,
    /// Same for `Lambda` against `L(T_U(k+1, x), .)`.
    pub lambda_tv: f64,
    /// Sampled kernel profiles against the exact walk law.
    pub sampled: ComparisonReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingReport {
    pub params: CouplingParams,
    pub walk_residual: f64,
    pub variants: Vec<VariantReport>,
}

impl CouplingReport {
    pub fn variant(&self, v: SeamVariant) -> Option<&VariantReport> {
        self.variants.iter().find(|r| r.variant == v)
    }
}

fn with_residual<K: Ord + Clone>(law: &BTreeMap<K, f64>, covered: f64) -> BTreeMap<Category<K>, f64> {
    let mut m: BTreeMap<Category<K>, f64> =
        law.iter().map(|(k, v)| (Category::Window(k.clone()), *v)).collect();
    m.insert(Category::Residual, (1.0 - covered).max(0.0));
    m
}

/// Compares both variants of the patched law with the exact stopped walk
/// law: exactly (truncated kernel law) and by sampling.
pub fn rk_coupling_test(
    params: &CouplingParams,
    variants: &[SeamVariant],
    replicas: &Replicas,
) -> Result<CouplingReport, BranchError> {
    let &CouplingParams { x, k, window, samples, n_cap } = params;
    let walk = stopped_profile_law(x, k, window, n_cap)?;
    let walk_l = stopped_local_time_law(x, k, window, n_cap)?;
    let denom = walk.denominator() as f64;
    let walk_law: BTreeMap<Vec<u64>, f64> = walk.law.iter().map(|(k, v)| (k.clone(), *v as f64 / denom)).collect();
    let walk_cov: f64 = walk_law.values().sum();
    let walk_cat = with_residual(&walk_law, walk_cov);
    let walk_l_law: BTreeMap<Vec<i64>, f64> = walk_l
        .law
        .iter()
        .map(|(k, v)| (k.iter().map(|&u| u as i64).collect(), *v as f64 / denom))
        .collect();
    let walk_l_cat = with_residual(&walk_l_law, walk_l_law.values().sum());

    let mut reports = Vec::new();
    for &variant in variants {
        let kernel_side = truncated_window_law::<f64>(x, k, variant, window, n_cap);
        let exact_tv = tv_distance(&with_residual(&kernel_side.law, kernel_side.covered), &walk_cat)?;
        let lambda_tv = tv_distance(&with_residual(&kernel_side.lambda_law, kernel_side.covered), &walk_l_cat)?;
        let tag = format!("{}-{}", replicas.tag, variant);
        let tag_rep = Replicas { tag: &tag, ..*replicas };
        let cats = tag_rep.run(samples, |_, rng| {
            let p = patched_profile(x, k, variant, rng);
            if p.decision_time() <= n_cap as i64 {
                Category::Window(p.window(window.0, window.1))
            } else {
                Category::Residual
            }
        });
        let mut observed: BTreeMap<Category<Vec<u64>>, u64> = BTreeMap::new();
        for c in cats {
            *observed.entry(c).or_insert(0) += 1;
        }
        let sampled = chi_square(&observed, &walk_cat, samples);
        reports.push(VariantReport { variant, exact_tv, lambda_tv, sampled });
    }
    Ok(CouplingReport { params: *params, walk_residual: walk.residual_prob(), variants: reports })
}

// ---------------------------------------------------------------------------
// martingales and experiments

/// `M_t = sum_{s<=t} (Z_s - s) - t (Z_t - t)` and `4 M'_t = -Z_t^2 + 4 t Z_t - 2 t^2 + t`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Martingales {
    pub m: Vec<i128>,
    pub m_prime_x4: Vec<i128>,
}

pub fn m_prime_x4(t: u64, z: u64) -> i128 {
    let (t, z) = (t as i128, z as i128);
    -z * z + 4 * t * z - 2 * t * t + t
}

pub fn martingale_functionals(traj: &ChainTrajectory) -> Result<Martingales, BranchError> {
    if traj.kernel != KernelId::Rho {
        return Err(BranchError::Params("martingale functionals need the rho chain".into()));
    }
    let mut m = Vec::with_capacity(traj.states.len());
    let mut mp = Vec::with_capacity(traj.states.len());
    let mut running = 0i128;
    for (t, &z) in traj.states.iter().enumerate() {
        let (ti, zi) = (t as i128, z as i128);
        if t > 0 {
            running += zi - ti;
        }
        m.push(running - ti * (zi - ti));
        mp.push(m_prime_x4(t as u64, z));
    }
    Ok(Martingales { m, m_prime_x4: mp })
}

/// Mean of `M_{tau_h ^ cap}` for `Z_0 = start`.
pub fn stopped_martingale(h: u64, start: u64, reps: u64, cap: usize, replicas: &Replicas) -> MeanEstimate {
    let xs = replicas.run(reps, |_, rng| {
        let traj = simulate_chain(KernelId::Rho, start, ChainStop::HitAtLeast(h), cap, rng).expect("rho hits");
        *martingale_functionals(&traj).expect("rho").m.last().expect("nonempty") as f64
    });
    MeanEstimate::from_samples(&xs)
}

/// Admissible starting values for the fraction experiment:
/// `h - 2 sqrt(h) <= k <= h - sqrt(h)`, `k >= 1`.
pub fn efrac_range(h: u64) -> std::ops::RangeInclusive<u64> {
    let hf = h as f64;
    let lo = (hf - 2.0 * hf.sqrt()).ceil().max(1.0) as u64;
    let hi = (hf - hf.sqrt()).floor().max(0.0) as u64;
    lo..=hi
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfracReport {
    pub h: u64,
    pub k: u64,
    pub estimate: MeanEstimate,
    pub ratio_to_sqrt_h: f64,
}

/// `E sum_{t=1}^{tau_h} (h - Z_t)/h` for `Z_0 = k` by simulation.
pub fn efrac_estimate(h: u64, k: u64, reps: u64, replicas: &Replicas) -> Result<EfracReport, BranchError> {
    if !efrac_range(h).contains(&k) {
        return Err(BranchError::Params(format!("k = {k} outside {:?} for h = {h}", efrac_range(h))));
    }
    let hf = h as f64;
    let xs = replicas.run(reps, |_, rng| {
        let (mut z, mut acc) = (k, 0i64);
        loop {
            z = kernel_sample(KernelId::Rho, z, rng);
            acc += h as i64 - z as i64;
            if z >= h {
                break;
            }
        }
        acc as f64 / hf
    });
    let estimate = MeanEstimate::from_samples(&xs);
    Ok(EfracReport { h, k, estimate, ratio_to_sqrt_h: estimate.mean / hf.sqrt() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvershootReport {
    pub kernel: KernelId,
    pub h: u64,
    pub u: u64,
    pub k: u64,
    pub attempts: u64,
    pub survivors: u64,
    pub lhs: MeanEstimate,
    pub rhs: f64,
    pub rhs_exact: String,
    pub verdict: Verdict,
}

/// Exact `P(X_1 >= u | X_0 = h, X_1 >= h)` for `pi` or `rho`.
pub fn overshoot_rhs(kernel: KernelId, h: u64, u: u64) -> num_rational::BigRational {
    use num_traits::One;
    let n = if kernel == KernelId::Rho { h + 1 } else { h };
    let below = |m: u64| (0..m).map(|j| pi_exact(n, j)).fold(num_rational::BigRational::from_integer(0.into()), |a, b| a + b);
    let one = num_rational::BigRational::one();
    (one.clone() - below(u)) / (one - below(h))
}

/// Monte Carlo of `P(Y_{sigma_h} >= u | Y_0 = k, sigma_h < inf)` (`pi`, extinct
/// runs rejected) or `P(Z_{tau_h} >= u | Z_0 = k)` (`rho`).
pub fn overshoot_experiment(
    kernel: KernelId,
    h: u64,
    u: u64,
    k: u64,
    reps: u64,
    min_survivors: u64,
    replicas: &Replicas,
) -> Result<OvershootReport, BranchError> {
    if !(k <= h && h <= u) || h == 0 {
        return Err(BranchError::Params(format!("need 0 <= k <= h <= u, h > 0; got k={k} h={h} u={u}")));
    }
    if kernel == KernelId::Rhostar {
        return Err(BranchError::Params("overshoot is defined for pi and rho".into()));
    }
    let outcomes = replicas.run(reps, |_, rng| {
        let mut y = k;
        while y < h {
            if kernel == KernelId::Pi && y == 0 {
                return None;
            }
            y = kernel_sample(kernel, y, rng);
        }
        Some(y >= u)
    });
    let hits: Vec<f64> = outcomes.iter().flatten().map(|&b| f64::from(u8::from(b))).collect();
    let survivors = hits.len() as u64;
    let lhs = MeanEstimate::from_samples(&hits);
    let rhs_q = overshoot_rhs(kernel, h, u);
    let rhs = rational_to_f64(&rhs_q);
    let verdict = if survivors < min_survivors {
        Verdict::Inconclusive
    } else {
        Verdict::from_bool(lhs.mean <= rhs + 3.0 * lhs.se)
    };
    Ok(OvershootReport {
        kernel,
        h,
        u,
        k,
        attempts: reps,
        survivors,
        lhs,
        rhs,
        rhs_exact: rhs_q.to_string(),
        verdict,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtauReport {
    pub h: u64,
    pub k: u64,
    pub tau: MeanEstimate,
    pub exit_gap: MeanEstimate,
    pub exact_tau: Option<f64>,
    pub overlap: bool,
    pub lower_bound_ok: bool,
}

/// Two estimates of `E tau_h` from `Z_0 = k`: the mean of `tau_h` and the mean
/// of `Z_{tau_h} - k`.
pub fn etau_check(h: u64, k: u64, reps: u64, replicas: &Replicas) -> Result<EtauReport, BranchError> {
    if k >= h {
        return Err(BranchError::Params(format!("need k < h, got k={k} h={h}")));
    }
    let pairs = replicas.run(reps, |_, rng| {
        let (mut z, mut t) = (k, 0u64);
        while z < h {
            z = kernel_sample(KernelId::Rho, z, rng);
            t += 1;
        }
        (t as f64, (z - k) as f64)
    });
    let tau = MeanEstimate::from_samples(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
    let exit_gap = MeanEstimate::from_samples(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
    let exact_tau = (h <= solver::MAX_EXACT_H)
        .then(|| solver::expected_absorption::<f64>(&AbsorptionSpec::new(KernelId::Rho, h), k).ok())
        .flatten()
        .map(|a| a.expected_steps);
    Ok(EtauReport {
        h,
        k,
        overlap: tau.overlaps(&exit_gap),
        lower_bound_ok: tau.mean >= (h - k) as f64 - 3.0 * tau.se,
        tau,
        exit_gap,
        exact_tau,
    })
}

/// The tilde sequences dominate the chain pointwise.
pub fn tilde_dominates(traj: &ChainTrajectory) -> bool {
    traj.tilde()
        .iter()
        .zip(&traj.states[1..])
        .all(|(&t, &s)| t >= s + tilde_extra(traj.kernel))
}

/// A stand-alone replica generator for callers without a [`Replicas`].
pub fn seeded(seed: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::BigRational;
    use num_traits::Zero;

    #[test]
    fn chain_examples() {
        let mut rng = seeded(1);
        let t = simulate_chain(KernelId::Pi, 0, ChainStop::Extinction, 10, &mut rng).unwrap();
        assert_eq!(t.states, vec![0]);
        assert_eq!(t.stops.extinction, Some(0));
        assert!(simulate_chain(KernelId::Rho, 0, ChainStop::Extinction, 10, &mut rng).is_err());
        for seed in 0..200 {
            let mut rng = seeded(seed);
            for (kernel, stop) in [
                (KernelId::Pi, ChainStop::Extinction),
                (KernelId::Rho, ChainStop::HitAtLeast(6)),
                (KernelId::Rhostar, ChainStop::TildeHitAtLeast(9)),
                (KernelId::Pi, ChainStop::Fixed(12)),
            ] {
                let t = simulate_chain(kernel, 3, stop, 100_000, &mut rng).unwrap();
                assert!(t.is_consistent(), "{kernel} {stop:?} {:?}", t.states);
                assert!(tilde_dominates(&t));
            }
        }
    }

    #[test]
    fn cap_is_flagged() {
        let t = simulate_chain(KernelId::Rho, 0, ChainStop::HitAtLeast(1_000_000), 5, &mut seeded(2)).unwrap();
        assert!(t.capped && t.states.len() == 6);
    }

    #[test]
    fn first_site_seam() {
        let verb = PatchedLaw::new(1, SeamVariant::Verbatim);
        let oi = PatchedLaw::new(1, SeamVariant::OriginImmigration);
        let zero = |_: i64| 0u64;
        assert_eq!(verb.probability::<f64>(zero, 0, 0), 1.0);
        assert_eq!(oi.probability::<f64>(zero, 0, 0), 0.5);
        let one = |y: i64| u64::from(y == -1);
        assert_eq!(oi.probability::<f64>(one, -1, -1), 0.125);
        let mut rng = seeded(3);
        for _ in 0..100 {
            let p = patched_profile(1, 0, SeamVariant::Verbatim, &mut rng);
            assert_eq!(p.total(), 0);
        }
    }

    #[test]
    fn factor_layout_matches_sampler() {
        // every sampled profile has positive probability under its own law
        let mut rng = seeded(4);
        for x in [-3i64, -1, 0, 1, 2, 4] {
            for variant in SeamVariant::ALL {
                let law = PatchedLaw::new(x, variant);
                for k in 0..4 {
                    let p = patched_profile(x, k, variant, &mut rng);
                    assert_eq!(p.value(x - 1), law.seed(k));
                    // long excursions underflow a plain product, so sum logs
                    let lp: f64 = law
                        .factors(|y| p.value(y), p.lo, p.hi())
                        .iter()
                        .map(|f| crate::kernels::ln_kernel(f.kernel, f.from, f.to))
                        .sum();
                    assert!(lp.is_finite(), "x={x} k={k} {variant:?} lo={} hi={}", p.lo, p.hi());
                }
            }
        }
    }

    #[test]
    fn truncated_law_mass_is_consistent() {
        for x in [-2i64, 0, 1, 3] {
            let a = truncated_window_law::<f64>(x, 1, SeamVariant::OriginImmigration, (-2, 2), 14);
            let b = truncated_window_law::<f64>(x, 1, SeamVariant::OriginImmigration, (-2, 2), 18);
            assert!(a.covered > 0.0 && a.covered <= b.covered && b.covered <= 1.0);
            let s: f64 = b.law.values().sum();
            assert!((s - b.covered).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_first_site_law_matches_walk() {
        let walk = stopped_profile_law(1, 0, (-1, -1), 16).unwrap();
        let kern = truncated_window_law::<BigRational>(1, 0, SeamVariant::OriginImmigration, (-1, -1), 16);
        for (vals, num) in &walk.law {
            let p = kern.law.get(vals).cloned().unwrap_or_else(BigRational::zero);
            let w = BigRational::new((*num).into(), walk.denominator().into());
            assert_eq!(p, w, "{vals:?}");
        }
        assert_eq!(kern.law.len(), walk.law.len());
        assert_eq!(kern.law[&vec![0]].to_float(), 0.5);
        // truncation at n_cap only removes mass from nonzero profiles
        assert!(kern.law[&vec![1]].to_float() < 0.25);
    }

    #[test]
    fn coupling_first_site() {
        let params = CouplingParams { x: 1, k: 0, window: (-1, -1), samples: 20_000, n_cap: 16 };
        let r = rk_coupling_test(&params, &SeamVariant::ALL, &Replicas::new(9, "rk")).unwrap();
        let oi = r.variant(SeamVariant::OriginImmigration).unwrap();
        let vb = r.variant(SeamVariant::Verbatim).unwrap();
        assert!(oi.exact_tv < 1e-12 && oi.lambda_tv < 1e-12, "{oi:?}");
        assert!(vb.exact_tv >= 0.5 - 1e-12, "{vb:?}");
        assert_eq!(oi.sampled.verdict, Verdict::Pass);
        assert_eq!(vb.sampled.verdict, Verdict::Fail);
    }

    #[test]
    fn far_window_is_trivial() {
        let params = CouplingParams { x: 1, k: 0, window: (40, 41), samples: 100, n_cap: 12 };
        let r = rk_coupling_test(&params, &[SeamVariant::OriginImmigration], &Replicas::new(1, "rk")).unwrap();
        assert!(r.variants[0].exact_tv < 1e-12);
    }

    #[test]
    fn martingale_values() {
        let t = ChainTrajectory {
            kernel: KernelId::Rho,
            states: vec![3, 5, 2],
            threshold: None,
            stops: Stops::default(),
            capped: false,
        };
        let m = martingale_functionals(&t).unwrap();
        assert_eq!(m.m[0], 0);
        assert_eq!(m.m_prime_x4[0], -9);
        // M_2 = (5-1) + (2-2) - 2 (2 - 2) = 4
        assert_eq!(m.m[2], 4);
        // one-step mean of 4M': -(i^2+4i+3) + 4(i+1) - 1 = -i^2
        for i in 0..=40u64 {
            let ez2 = (i * i + 4 * i + 3) as i128;
            assert_eq!(-ez2 + 4 * (i as i128 + 1) - 2 + 1, m_prime_x4(0, i));
        }
    }

    #[test]
    fn efrac_rules() {
        assert!(efrac_range(1).is_empty());
        assert_eq!(efrac_range(100), 80..=90);
        assert!(efrac_estimate(1, 0, 10, &Replicas::new(1, "e")).is_err());
        let r = efrac_estimate(16, 9, 20_000, &Replicas::new(1, "e")).unwrap();
        let exact = solver::efrac_exact::<f64>(16, 9).unwrap();
        assert!(r.estimate.contains(exact), "{r:?} vs {exact}");
    }

    #[test]
    fn overshoot_rhs_small() {
        let q = overshoot_rhs(KernelId::Pi, 2, 3);
        // pi(2, j) = (j+1) 2^-(j+2): 1 - 1/4 - 2/8 = 1/2 over 1 - 1/4 - 2/8 - 3/16
        assert_eq!(q, crate::solver::rational(5, 8));
        assert_eq!(overshoot_rhs(KernelId::Pi, 7, 7), BigRational::from_integer(1.into()));
    }

    #[test]
    fn etau_small() {
        let r = etau_check(2, 0, 20_000, &Replicas::new(5, "tau")).unwrap();
        assert!(r.overlap && r.lower_bound_ok);
        assert!((r.exact_tau.unwrap() - 3.2).abs() < 1e-12);
        assert!(r.tau.contains(3.2));
    }
}
