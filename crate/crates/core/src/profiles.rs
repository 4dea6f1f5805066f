//! Crossing profiles `l` (downcrossing fields at an upcrossing), the events
//! `B_x(l)`, the families `P_{x,h}^{(k)}`, the perturbation map `phi_x`, and
//! the direct `N_H` moment estimators.
//!
//! `P(B_x(l))` is the patched-law product along both arms of `l`. For `x >= 1`
//! the upcrossing is `T_U(l(x-1) + 1, x)`; for `x <= 0` it is
//! `T_U(l(x-1), x)`, so `l(x-1) >= 1` is required there.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::branching::{lambda_from, Factor, PatchedLaw, SeamVariant};
use crate::enumerate::{enumerate_paths, EnumError, PathStatistic};
use crate::kernels::kernel_prob;
use crate::numeric::Scalar;
use crate::replica::Replicas;
use crate::stats::{MeanEstimate, Verdict};
use crate::walk::{simulate_with, window_contains, SimConfig, StopRule, UpcrossEvent, WalkObservables};

/// Upper bound on `|phi_x(l)|` candidates before the product is refused.
pub const MAX_PERTURBATIONS: u64 = 10_000;

/// Pairs of hits at most this far apart count as near.
pub const NEAR_DISTANCE: i64 = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProfileError {
    #[error("profile is not in P_(x={x},h={h})^(k={k})")]
    NotInFamily { x: i64, h: u64, k: u64 },
    #[error("k = {k} is outside I_{h}")]
    OutsideWindow { h: u64, k: u64 },
    #[error("{0} perturbation candidates exceed the cap of {MAX_PERTURBATIONS}")]
    TooManyPerturbations(u64),
    #[error(transparent)]
    Enum(#[from] EnumError),
}

/// A downcrossing field anchored at the upcrossing site `x`. Zeros are not
/// stored.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CrossingProfile {
    pub x: i64,
    support: BTreeMap<i64, u64>,
}

impl CrossingProfile {
    pub fn new(x: i64, entries: impl IntoIterator<Item = (i64, u64)>) -> Self {
        let support = entries.into_iter().filter(|&(_, v)| v > 0).collect();
        CrossingProfile { x, support }
    }

    /// `values[i]` at site `lo + i`.
    pub fn from_window(x: i64, lo: i64, values: &[u64]) -> Self {
        Self::new(x, values.iter().enumerate().map(|(i, &v)| (lo + i as i64, v)))
    }

    pub fn value(&self, y: i64) -> u64 {
        self.support.get(&y).copied().unwrap_or(0)
    }

    /// `l(x-1)`.
    pub fn k(&self) -> u64 {
        self.value(self.x - 1)
    }

    pub fn support(&self) -> &BTreeMap<i64, u64> {
        &self.support
    }

    /// Smallest interval holding the support and the sites `x-1..=x+3`.
    pub fn span(&self) -> (i64, i64) {
        let lo = self.support.keys().next().copied().unwrap_or(self.x).min(self.x - 1);
        let hi = self.support.keys().next_back().copied().unwrap_or(self.x).max(self.x + 3);
        (lo, hi)
    }

    pub fn with(&self, y: i64, v: u64) -> Self {
        let mut out = self.clone();
        if v == 0 {
            out.support.remove(&y);
        } else {
            out.support.insert(y, v);
        }
        out
    }

    pub fn total(&self) -> u64 {
        self.support.values().sum()
    }

    /// The walk time at which `B_x(l)` is decided: `2 sum l + x`.
    pub fn decision_time(&self) -> i64 {
        2 * self.total() as i64 + self.x
    }

    /// The upcrossing number `j` with `B_x(l) = {D(T_U(j, x)) = l}`.
    pub fn upcross_index(&self) -> u64 {
        crate::enumerate::upcross_index(self.x, self.k())
    }

    pub fn entries(&self) -> Vec<(i64, u64)> {
        self.support.iter().map(|(&y, &v)| (y, v)).collect()
    }
}

/// How the off-pattern sites of a family member are constrained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Constraint {
    /// `l(i-1) + l(i) < h`.
    #[default]
    PairSum,
    /// `L(i) = l(i-1) + l(i) + 1{0<i<=x} - 1{x<i<=0} < h`: no other site
    /// reaches the maximum, so the member is an `A` event. Stricter than
    /// `PairSum` on `0 < i < x`.
    LocalTime,
}

/// Membership data of `P_{x,h}^{(k)}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EventFamily {
    pub x: i64,
    pub h: u64,
    pub k: u64,
    pub constraint: Constraint,
}

impl EventFamily {
    pub fn new(x: i64, h: u64, k: u64) -> Self {
        EventFamily { x, h, k, constraint: Constraint::PairSum }
    }

    pub fn with_constraint(self, constraint: Constraint) -> Self {
        EventFamily { constraint, ..self }
    }

    /// `(l(x-1), l(x), l(x+1), l(x+2))` required of members.
    pub fn pattern(&self) -> Option<[u64; 4]> {
        let rest = self.h.checked_sub(self.k + 1)?;
        Some([self.k, rest, self.k + 1, rest])
    }

    /// The member with zeros off the pattern sites.
    pub fn minimal_profile(&self) -> Option<CrossingProfile> {
        let p = self.pattern()?;
        Some(CrossingProfile::new(self.x, (0..4).map(|i| (self.x - 1 + i as i64, p[i]))))
    }

    /// Admissible and realizable.
    pub fn contains(&self, l: &CrossingProfile) -> bool {
        is_admissible(l, self) && is_realizable(l)
    }
}

/// The pattern holds and every `i` outside `{x, x+1, x+2}` satisfies the
/// family's constraint (`l(i-1) + l(i) < h` by default). Realizability is
/// not checked.
pub fn is_admissible(l: &CrossingProfile, family: &EventFamily) -> bool {
    let Some(p) = family.pattern() else { return false };
    let x = family.x;
    if l.x != x || (0..4).any(|i| l.value(x - 1 + i as i64) != p[i]) {
        return false;
    }
    let (lo, hi) = l.span();
    let h = family.h as i64;
    (lo..=hi + 1).filter(|&i| !(x..=x + 2).contains(&i)).all(|i| match family.constraint {
        Constraint::PairSum => l.value(i - 1) + l.value(i) < family.h,
        Constraint::LocalTime => lambda_from(|y| l.value(y), x, i) < h,
    })
}

/// Why a profile has probability zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "cause")]
pub enum ZeroCause {
    /// `x <= 0` needs `l(x-1) >= 1`.
    Seed { site: i64, value: u64 },
    Kernel(Factor),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileProbability<S> {
    pub value: S,
    pub first_zero: Option<ZeroCause>,
}

/// `P(B_x(l))` under the adjudicated patched law.
pub fn profile_probability<S: Scalar>(l: &CrossingProfile) -> ProfileProbability<S> {
    profile_probability_with(l, SeamVariant::default())
}

pub fn profile_probability_with<S: Scalar>(l: &CrossingProfile, variant: SeamVariant) -> ProfileProbability<S> {
    let x = l.x;
    let zero = |cause| ProfileProbability { value: S::zero(), first_zero: Some(cause) };
    if x <= 0 && l.k() == 0 {
        return zero(ZeroCause::Seed { site: x - 1, value: 0 });
    }
    let law = PatchedLaw::new(x, variant);
    let (lo, hi) = l.span();
    let mut value = S::one();
    for f in law.factors(|y| l.value(y), lo, hi) {
        let p = S::kernel(f.kernel, f.from, f.to);
        if p.is_zero() {
            return zero(ZeroCause::Kernel(f));
        }
        value = value * p;
    }
    ProfileProbability { value, first_zero: None }
}

/// Positivity of the kernel product, decided in floating point; every
/// factor is either exactly 0 or bounded away from underflow per factor.
pub fn is_realizable(l: &CrossingProfile) -> bool {
    if l.x <= 0 && l.k() == 0 {
        return false;
    }
    let (lo, hi) = l.span();
    PatchedLaw::new(l.x, SeamVariant::default())
        .factors(|y| l.value(y), lo, hi)
        .iter()
        .all(|f| kernel_prob(f.kernel, f.from, f.to) > 0.0)
}

/// `phi_x(l)`: lower `l(x+1)` and `l(x+2)`, keep the realizable results.
/// Ordered by `(l*(x+1), l*(x+2))`.
pub fn perturbations(l: &CrossingProfile) -> Result<Vec<CrossingProfile>, ProfileError> {
    let x = l.x;
    let (a, b) = (l.value(x + 1), l.value(x + 2));
    if a * b > MAX_PERTURBATIONS {
        return Err(ProfileError::TooManyPerturbations(a * b));
    }
    let mut out = Vec::new();
    for s in 0..a {
        for t in 0..b {
            let cand = l.with(x + 1, s).with(x + 2, t);
            if is_realizable(&cand) {
                out.push(cand);
            }
        }
    }
    Ok(out)
}

/// `P(B_x(phi_x(l))) / (h P(B_x(l)))`, using disjointness of the `B_x(l*)`.
pub fn fluc_ratio<S: Scalar>(l: &CrossingProfile, h: u64) -> Result<S, ProfileError> {
    let family = EventFamily::new(l.x, h, l.k());
    if !family.contains(l) {
        return Err(ProfileError::NotInFamily { x: l.x, h, k: l.k() });
    }
    if !window_contains(h, l.k()) {
        return Err(ProfileError::OutsideWindow { h, k: l.k() });
    }
    let base = profile_probability::<S>(l).value;
    let mass = perturbations(l)?
        .iter()
        .fold(S::zero(), |acc, p| acc + profile_probability::<S>(p).value);
    Ok(mass / (base * S::from_ratio(h as i64, 1)))
}

/// All realizable profiles anchored at `x` with `l(x-1) = seed` and at most
/// `budget` total mass off the seed site. Depth-first along the two arms.
pub fn realizable_profiles(x: i64, seed: u64, budget: u64) -> Vec<CrossingProfile> {
    if x <= 0 && seed == 0 {
        return Vec::new();
    }
    let arms = PatchedLaw::new(x, SeamVariant::default()).arms();
    let mut out = Vec::new();
    let mut entries = vec![(x - 1, seed)];
    extend_arm(&arms, 0, 0, seed, budget, &mut entries, &mut |e| out.push(CrossingProfile::new(x, e.iter().copied())));
    out
}

fn extend_arm(
    arms: &[crate::branching::Arm; 2],
    arm: usize,
    i: usize,
    prev: u64,
    budget: u64,
    entries: &mut Vec<(i64, u64)>,
    emit: &mut dyn FnMut(&[(i64, u64)]),
) {
    let a = &arms[arm];
    if i >= a.prefix.len() && prev == 0 {
        if arm == 0 {
            let seed = entries[0].1;
            extend_arm(arms, 1, 0, seed, budget, entries, emit);
        } else {
            emit(entries);
        }
        return;
    }
    let site = a.start + a.dir * i as i64;
    for v in 0..=budget {
        if kernel_prob(a.kernel(i), prev, v) > 0.0 {
            entries.push((site, v));
            extend_arm(arms, arm, i + 1, v, budget - v, entries, emit);
            entries.pop();
        }
    }
}

/// Every `l*` in `phi_x(l)` for `l` in `P_{x,h}^{(k)}`, over the given sites
/// and levels, whose event is decided within `n` steps. Sorted, deduplicated.
pub fn small_perturbation_family(xs: &[i64], h_max: u64, n: u32, constraint: Constraint) -> Vec<CrossingProfile> {
    let mut out = Vec::new();
    for &x in xs {
        let room = n as i64 - x;
        if room < 0 {
            continue;
        }
        for h in 2..=h_max {
            for k in 0..h {
                let family = EventFamily::new(x, h, k).with_constraint(constraint);
                let [_, rest, up, _] = family.pattern().expect("k < h");
                let used = k + rest;
                let Some(budget) = ((room / 2) as u64).checked_sub(used) else { continue };
                for star in realizable_profiles(x, k, budget + rest) {
                    let (s, t) = (star.value(x + 1), star.value(x + 2));
                    if star.value(x) != rest || s >= up || t >= rest || star.decision_time() > n as i64 {
                        continue;
                    }
                    let parent = star.with(x + 1, up).with(x + 2, rest);
                    if family.contains(&parent) {
                        out.push(star);
                    }
                }
            }
        }
    }
    out.sort();
    out.dedup();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DisjointnessReport {
    pub n: u32,
    pub events: usize,
    /// Events realized by at least one path.
    pub realized: usize,
    /// Paths realizing two events of the same level.
    pub violating_paths: u64,
    pub verdict: Verdict,
}

type SparseField = Vec<(i64, u64)>;

/// Records which of the given `B_x(l)` events occur along the path.
struct EventSet {
    index: HashMap<(i64, SparseField), u32>,
}

impl PathStatistic for EventSet {
    type Acc = Vec<u32>;
    type Key = Vec<u32>;
    fn start(&self) -> Vec<u32> {
        Vec::new()
    }
    fn update(&self, acc: &Vec<u32>, walk: &WalkObservables, ev: Option<&UpcrossEvent>) -> Vec<u32> {
        let Some(ev) = ev else { return acc.clone() };
        let (a, b) = walk.visited_range();
        let field: SparseField = (a - 1..=b).map(|y| (y, walk.downcrossings(y))).filter(|&(_, v)| v > 0).collect();
        match self.index.get(&(ev.x, field)) {
            Some(&i) => {
                let mut next = acc.clone();
                next.push(i);
                next
            }
            None => acc.clone(),
        }
    }
    fn finish(&self, acc: &Vec<u32>, _: &WalkObservables) -> Vec<u32> {
        acc.clone()
    }
}

/// The level `h = l(x-1) + l(x) + 1` of a family member or its perturbation.
pub fn level(l: &CrossingProfile) -> u64 {
    l.k() + l.value(l.x) + 1
}

/// Exhaustive check over all `2^n` paths that no path realizes two of the
/// events `B_x(l*)` at the same level `h`. Events at different levels may
/// co-occur; those pairs make up the second moment.
pub fn disjointness_check(events: &[CrossingProfile], n: u32) -> Result<DisjointnessReport, ProfileError> {
    let index = events
        .iter()
        .enumerate()
        .map(|(i, p)| ((p.x, p.entries()), i as u32))
        .collect::<HashMap<_, _>>();
    let pmf = enumerate_paths(n, &EventSet { index })?;
    let mut seen = vec![false; events.len()];
    let mut violating = 0;
    for (hits, count) in &pmf.mass {
        for &i in hits {
            seen[i as usize] = true;
        }
        let mut levels: Vec<u64> = hits.iter().map(|&i| level(&events[i as usize])).collect();
        levels.sort_unstable();
        if levels.windows(2).any(|w| w[0] == w[1]) {
            violating += count;
        }
    }
    Ok(DisjointnessReport {
        n,
        events: events.len(),
        realized: seen.iter().filter(|&&s| s).count(),
        violating_paths: violating,
        verdict: Verdict::from_bool(violating == 0),
    })
}

/// One replica of the direct count; positions are kept for pair statistics.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NhSample {
    pub nh: u64,
    pub f3: u64,
    pub steps: u64,
    pub capped: bool,
    pub hit_sites: Vec<i64>,
}

pub fn nh_samples(big_h: u64, t_max: u64, reps: u64, replicas: &Replicas) -> Vec<NhSample> {
    let cfg = SimConfig {
        stop: StopRule::Fixed { t_max },
        big_h,
        stop_when_exhausted: true,
        keep_hits: true,
        ..SimConfig::fixed(t_max)
    };
    replicas.run(reps, |_, rng| {
        let s = simulate_with(rng, &cfg);
        NhSample {
            nh: s.nh_direct,
            f3: s.f(3),
            steps: s.steps,
            capped: !s.stopped_early && s.steps >= t_max,
            hit_sites: s.hits.iter().map(|h| h.x).collect(),
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NhEstimate {
    pub big_h: u64,
    pub t_max: u64,
    pub reps: u64,
    pub nh: MeanEstimate,
    pub f3: MeanEstimate,
    /// Replicas where `f(3) < N_H`; always 0.
    pub f3_below_nh: u64,
    /// Replicas still running at `t_max` with levels up to `H` unexhausted.
    pub truncated: u64,
}

/// Mean `N_H` per walk run for at most `t_max` steps. A run ends early once
/// the maximum local time passes `H`.
pub fn nh_direct_estimate(big_h: u64, t_max: u64, reps: u64, replicas: &Replicas) -> NhEstimate {
    let samples = nh_samples(big_h, t_max, reps, replicas);
    summarize_nh(big_h, t_max, &samples)
}

fn summarize_nh(big_h: u64, t_max: u64, samples: &[NhSample]) -> NhEstimate {
    let nh: Vec<f64> = samples.iter().map(|s| s.nh as f64).collect();
    let f3: Vec<f64> = samples.iter().map(|s| s.f3 as f64).collect();
    NhEstimate {
        big_h,
        t_max,
        reps: samples.len() as u64,
        nh: MeanEstimate::from_samples(&nh),
        f3: MeanEstimate::from_samples(&f3),
        f3_below_nh: samples.iter().filter(|s| s.f3 < s.nh).count() as u64,
        truncated: samples.iter().filter(|s| s.capped).count() as u64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SecondMoment {
    pub big_h: u64,
    pub reps: u64,
    pub mean_nh: f64,
    pub var_nh: f64,
    pub mean_nh2: f64,
    /// `E[N_H^2] / (E[N_H] ln H)`.
    pub ratio: f64,
    /// Shares of the ordered-pair mass `E[N_H^2] - E[N_H]`.
    pub near_share: f64,
    pub far_share: f64,
    pub hits: u64,
    pub inconclusive: bool,
}

/// `E[N_H^2] / (E[N_H] ln H)` with the pair mass split at `|x - x'| <= 3`.
pub fn second_moment_diagnostic(big_h: u64, t_max: u64, reps: u64, replicas: &Replicas) -> SecondMoment {
    let samples = nh_samples(big_h, t_max, reps, replicas);
    second_moment_from(big_h, &samples)
}

fn second_moment_from(big_h: u64, samples: &[NhSample]) -> SecondMoment {
    let n = samples.len().max(1) as f64;
    let hits: u64 = samples.iter().map(|s| s.nh).sum();
    let mean = hits as f64 / n;
    let mean2 = samples.iter().map(|s| (s.nh * s.nh) as f64).sum::<f64>() / n;
    let (mut near, mut far) = (0u64, 0u64);
    for s in samples {
        for (i, a) in s.hit_sites.iter().enumerate() {
            for b in &s.hit_sites[i + 1..] {
                if (a - b).abs() <= NEAR_DISTANCE {
                    near += 2;
                } else {
                    far += 2;
                }
            }
        }
    }
    let pairs = (near + far) as f64;
    let share = |c: u64| if pairs > 0.0 { c as f64 / pairs } else { f64::NAN };
    let inconclusive = hits == 0;
    SecondMoment {
        big_h,
        reps: samples.len() as u64,
        mean_nh: mean,
        var_nh: mean2 - mean * mean,
        mean_nh2: mean2,
        ratio: if inconclusive { f64::NAN } else { mean2 / (mean * (big_h as f64).ln()) },
        near_share: share(near),
        far_share: share(far),
        hits,
        inconclusive,
    }
}

/// CSV with header `H,mean_NH,var_NH,ratio,near_share,far_share`.
pub fn moments_csv(rows: &[SecondMoment]) -> String {
    let mut s = String::from("H,mean_NH,var_NH,ratio,near_share,far_share\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.big_h,
            crate::numeric::fmt_f64(r.mean_nh),
            crate::numeric::fmt_f64(r.var_nh),
            crate::numeric::fmt_f64(r.ratio),
            crate::numeric::fmt_f64(r.near_share),
            crate::numeric::fmt_f64(r.far_share)
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::rational;
    use num_rational::BigRational;
    use num_traits::{One, Zero};

    fn l(x: i64, e: &[(i64, u64)]) -> CrossingProfile {
        CrossingProfile::new(x, e.iter().copied())
    }

    #[test]
    fn admissibility() {
        let fam = EventFamily::new(1, 9, 3);
        let min = fam.minimal_profile().unwrap();
        assert_eq!(min.entries(), vec![(0, 3), (1, 5), (2, 4), (3, 5)]);
        assert!(is_admissible(&min, &fam) && fam.contains(&min));
        assert!(!is_admissible(&min.with(1, 4), &fam));
        let bad = min.with(5, 4).with(6, 5);
        assert!(!is_admissible(&bad, &fam));
        assert!(is_admissible(&min.with(5, 4).with(6, 4), &fam));
    }

    #[test]
    fn first_site_probabilities() {
        let p = profile_probability::<BigRational>(&l(1, &[]));
        assert_eq!(p.value, rational(1, 2));
        assert_eq!(profile_probability::<BigRational>(&l(1, &[(-1, 1)])).value, rational(1, 8));
        let z = profile_probability::<BigRational>(&l(1, &[(3, 1)]));
        assert!(z.value.is_zero());
        assert!(matches!(z.first_zero, Some(ZeroCause::Kernel(Factor { site: 3, from: 0, .. }))));
        let s = profile_probability::<f64>(&l(0, &[]));
        assert_eq!(s.first_zero, Some(ZeroCause::Seed { site: -1, value: 0 }));
    }

    #[test]
    fn box_mass_at_most_one_per_upcrossing() {
        // B_x(l) with the same l(x-1) are disjoint; distinct l(x-1) are not
        let mut total = [BigRational::zero(), BigRational::zero(), BigRational::zero()];
        for code in 0..3u32.pow(6) {
            let vals: Vec<u64> = (0..6).map(|i| u64::from(code / 3u32.pow(i) % 3)).collect();
            let p = CrossingProfile::from_window(1, -2, &vals);
            total[p.k() as usize] += profile_probability::<BigRational>(&p).value;
        }
        assert!(total.iter().all(|t| *t <= BigRational::one()), "{total:?}");
    }

    #[test]
    fn perturbation_examples() {
        let x = 1;
        let base = l(x, &[(0, 1), (1, 2), (2, 3), (3, 2)]);
        let p = perturbations(&base).unwrap();
        assert_eq!(p.len(), 5);
        assert!(p.iter().all(|q| !(q.value(2) == 0 && q.value(3) == 1)));
        let flat = l(x, &[(0, 1), (1, 2), (2, 1), (3, 1), (4, 1)]);
        assert!(perturbations(&flat).unwrap().is_empty());
        assert!(perturbations(&l(x, &[(0, 1), (1, 2)])).unwrap().is_empty());
    }

    #[test]
    fn additivity_is_exact() {
        let base = l(2, &[(0, 1), (1, 2), (2, 3), (3, 3), (4, 1)]);
        let parts = perturbations(&base).unwrap();
        let sum: BigRational = parts.iter().map(|p| profile_probability::<BigRational>(p).value).sum();
        let all = (0..base.value(3)).flat_map(|s| (0..base.value(4)).map(move |t| (s, t)));
        let direct: BigRational =
            all.map(|(s, t)| profile_probability::<BigRational>(&base.with(3, s).with(4, t)).value).sum();
        assert_eq!(sum, direct);
    }

    #[test]
    fn fluc_ratio_ignores_padding() {
        let fam = EventFamily::new(1, 25, 17);
        let min = fam.minimal_profile().unwrap();
        let r = fluc_ratio::<BigRational>(&min, 25).unwrap();
        assert!(r > BigRational::zero());
        let far = EventFamily::new(4, 25, 17).minimal_profile().unwrap();
        let r4 = fluc_ratio::<BigRational>(&far, 25).unwrap();
        assert_eq!(r, r4);
        assert!(fluc_ratio::<f64>(&EventFamily::new(1, 25, 14).minimal_profile().unwrap(), 25).is_err());
    }

    #[test]
    fn realizable_profiles_are_realizable() {
        for x in [-1, 0, 1, 3] {
            for seed in 0..3 {
                for p in realizable_profiles(x, seed, 4) {
                    assert!(is_realizable(&p) && p.total() - seed <= 4, "{p:?}");
                }
            }
        }
        assert_eq!(realizable_profiles(1, 0, 0).len(), 1);
    }

    #[test]
    fn disjointness_small() {
        let events = small_perturbation_family(&[1, 2, 3], 6, 14, Constraint::LocalTime);
        assert!(!events.is_empty());
        let r = disjointness_check(&events, 14).unwrap();
        assert_eq!(r.verdict, Verdict::Pass, "{r:?}");
        assert!(r.realized > 0);
        assert_eq!(disjointness_check(&events[..1], 10).unwrap().violating_paths, 0);
    }

    #[test]
    fn pair_sum_family_is_not_disjoint() {
        // l* = {0:1, 1:1, 2:1} is in phi_1 of a level-3 member and in phi_2
        // of another; the step 1 -> 2 right after B_1(l*) realizes B_2(l*)
        let star = l(1, &[(0, 1), (1, 1), (2, 1)]);
        let moved = CrossingProfile::new(2, star.entries());
        let parent2 = moved.with(3, 2).with(4, 1);
        assert!(EventFamily::new(2, 3, 1).contains(&parent2));
        assert!(!EventFamily::new(2, 3, 1).with_constraint(Constraint::LocalTime).contains(&parent2));
        let r = disjointness_check(&[star, moved], 8).unwrap();
        assert_eq!(r.verdict, Verdict::Fail);
    }

    #[test]
    fn indicator_only_second_moment() {
        let samples: Vec<NhSample> = (0..10)
            .map(|i| NhSample { nh: u64::from(i % 3 == 0), f3: 1, steps: 1, capped: false, hit_sites: vec![1] })
            .collect();
        let m = second_moment_from(30, &samples);
        assert!((m.ratio - 1.0 / 30f64.ln()).abs() < 1e-12);
        let none = second_moment_from(30, &samples.iter().map(|s| NhSample { nh: 0, ..s.clone() }).collect::<Vec<_>>());
        assert!(none.inconclusive);
    }

    #[test]
    fn direct_estimate_small_h_is_zero() {
        let e = nh_direct_estimate(6, 10_000, 200, &Replicas::new(1, "nh"));
        assert_eq!(e.nh.mean, 0.0);
        assert_eq!(e.f3_below_nh, 0);
    }
}
