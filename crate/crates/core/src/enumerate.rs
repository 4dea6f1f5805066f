//! Exhaustive enumeration of all `2^n` walk paths.
//!
//! Paths are visited in reflected Gray-code order inside each prefix shard:
//! consecutive paths differ in one step, so only the tail after that step is
//! undone and replayed (two steps per path on average). Masses are exact
//! integers over `2^n`.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use arrayvec::ArrayVec;
use num_bigint::BigInt;
use num_rational::BigRational;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::numeric::pow2_inv;
use crate::walk::{Step, UpcrossEvent, WalkObservables};

pub const MAX_N: u32 = 26;
pub const MAX_WINDOW: usize = 32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EnumError {
    #[error("path length {0} outside 1..={MAX_N}")]
    LengthOutOfRange(u32),
    #[error("window is empty")]
    EmptyWindow,
    #[error("window wider than {MAX_WINDOW} sites")]
    WindowTooWide,
}

/// A statistic folded along the path; `Acc` is stored per depth so the
/// Gray-code replay only recomputes the changed tail.
pub trait PathStatistic: Sync {
    type Acc: Clone + Send;
    type Key: Clone + Ord + Hash + Send;

    fn start(&self) -> Self::Acc;
    fn update(&self, acc: &Self::Acc, walk: &WalkObservables, event: Option<&UpcrossEvent>) -> Self::Acc;
    fn finish(&self, acc: &Self::Acc, walk: &WalkObservables) -> Self::Key;
}

/// A statistic of the final state only.
pub struct Final<F>(pub F);

impl<K, F> PathStatistic for Final<F>
where
    K: Clone + Ord + Hash + Send,
    F: Fn(&WalkObservables) -> K + Sync,
{
    type Acc = ();
    type Key = K;
    fn start(&self) {}
    fn update(&self, _: &(), _: &WalkObservables, _: Option<&UpcrossEvent>) {}
    fn finish(&self, _: &(), walk: &WalkObservables) -> K {
        (self.0)(walk)
    }
}

/// Both forms of the local time identity at every time and every site.
pub struct IdentityEverywhere;

impl PathStatistic for IdentityEverywhere {
    type Acc = bool;
    type Key = bool;
    fn start(&self) -> bool {
        true
    }
    fn update(&self, acc: &bool, walk: &WalkObservables, _: Option<&UpcrossEvent>) -> bool {
        *acc && walk.check_local_time_identity().is_ok()
    }
    fn finish(&self, acc: &bool, _: &WalkObservables) -> bool {
        *acc
    }
}

/// Exact law: numerators over `2^denom_exp`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExactPmf<K: Ord> {
    pub denom_exp: u32,
    pub mass: BTreeMap<K, u64>,
}

impl<K: Ord + Clone> ExactPmf<K> {
    pub fn total(&self) -> u64 {
        self.mass.values().sum()
    }

    pub fn is_normalized(&self) -> bool {
        self.total() == 1u64 << self.denom_exp
    }

    pub fn numerator(&self, key: &K) -> u64 {
        self.mass.get(key).copied().unwrap_or(0)
    }

    pub fn prob(&self, key: &K) -> BigRational {
        BigRational::from_integer(BigInt::from(self.numerator(key))) * pow2_inv(self.denom_exp as u64)
    }

    pub fn prob_f64(&self, key: &K) -> f64 {
        self.numerator(key) as f64 / (1u64 << self.denom_exp) as f64
    }

    pub fn coarsen<J: Ord, F: Fn(&K) -> J>(&self, f: F) -> ExactPmf<J> {
        let mut mass = BTreeMap::new();
        for (k, v) in &self.mass {
            *mass.entry(f(k)).or_insert(0) += v;
        }
        ExactPmf { denom_exp: self.denom_exp, mass }
    }
}

impl<K: Ord + Serialize> ExactPmf<K> {
    /// Keys are JSON-encoded, numerators decimal strings.
    pub fn to_json(&self) -> serde_json::Value {
        let mass: serde_json::Map<String, serde_json::Value> = self
            .mass
            .iter()
            .map(|(k, v)| {
                let key = serde_json::to_string(k).expect("keys serialize");
                (key, serde_json::Value::String(v.to_string()))
            })
            .collect();
        serde_json::json!({ "denom_exp": self.denom_exp, "mass": mass })
    }
}

fn check_n(n: u32) -> Result<(), EnumError> {
    if (1..=MAX_N).contains(&n) {
        Ok(())
    } else {
        Err(EnumError::LengthOutOfRange(n))
    }
}

fn default_shard_bits(n: u32) -> u32 {
    n.min(8)
}

pub fn enumerate_paths<S: PathStatistic>(n: u32, stat: &S) -> Result<ExactPmf<S::Key>, EnumError> {
    enumerate_paths_sharded(n, stat, default_shard_bits(n))
}

/// Same result for every `shard_bits <= n`; shards are merged by exact addition.
pub fn enumerate_paths_sharded<S: PathStatistic>(
    n: u32,
    stat: &S,
    shard_bits: u32,
) -> Result<ExactPmf<S::Key>, EnumError> {
    check_n(n)?;
    let p = shard_bits.min(n);
    let merged = (0..1u64 << p)
        .into_par_iter()
        .map(|prefix| enumerate_shard(n, p, prefix, stat))
        .reduce(HashMap::new, |mut a, b| {
            if a.len() < b.len() {
                return merge_into(b, a);
            }
            for (k, v) in b {
                *a.entry(k).or_insert(0) += v;
            }
            a
        });
    Ok(ExactPmf { denom_exp: n, mass: merged.into_iter().collect() })
}

fn merge_into<K: Hash + Eq>(mut a: HashMap<K, u64>, b: HashMap<K, u64>) -> HashMap<K, u64> {
    for (k, v) in b {
        *a.entry(k).or_insert(0) += v;
    }
    a
}

fn enumerate_shard<S: PathStatistic>(n: u32, p: u32, prefix: u64, stat: &S) -> HashMap<S::Key, u64> {
    let n = n as usize;
    let m = n - p as usize;
    let mut bits: Vec<bool> = (0..n).map(|i| i < p as usize && (prefix >> (p as usize - 1 - i)) & 1 == 1).collect();
    let mut walk = WalkObservables::with_reach(n);
    let mut tokens = Vec::with_capacity(n);
    let mut accs = Vec::with_capacity(n + 1);
    accs.push(stat.start());
    let mut out: HashMap<S::Key, u64> = HashMap::new();

    let replay = |from: usize,
                  bits: &[bool],
                  walk: &mut WalkObservables,
                  tokens: &mut Vec<_>,
                  accs: &mut Vec<S::Acc>| {
        for &b in &bits[from..] {
            let (ev, tok) = walk.advance(Step::from_bit(b));
            tokens.push(tok);
            let next = stat.update(accs.last().expect("root accumulator"), walk, ev.as_ref());
            accs.push(next);
        }
    };

    replay(0, &bits, &mut walk, &mut tokens, &mut accs);
    *out.entry(stat.finish(accs.last().expect("nonempty"), &walk)).or_insert(0) += 1;
    for g in 1..1u64 << m {
        let b = g.trailing_zeros() as usize;
        let flip = n - 1 - b;
        for _ in 0..=b {
            walk.undo(tokens.pop().expect("token per step"));
            accs.pop();
        }
        bits[flip] = !bits[flip];
        replay(flip, &bits, &mut walk, &mut tokens, &mut accs);
        *out.entry(stat.finish(accs.last().expect("nonempty"), &walk)).or_insert(0) += 1;
    }
    out
}

/// Exact probability of a path event.
pub fn exact_event_prob<S: PathStatistic<Key = bool>>(stat: &S, n: u32) -> Result<BigRational, EnumError> {
    let pmf = enumerate_paths(n, stat)?;
    Ok(pmf.prob(&true))
}

pub fn exact_event_prob_fn<F>(n: u32, pred: F) -> Result<BigRational, EnumError>
where
    F: Fn(&WalkObservables) -> bool + Sync,
{
    exact_event_prob(&Final(pred), n)
}

/// The number of upcrossings at `x` whose completion time is
/// `T_U(j, x)` for a profile with value `d` at `x - 1`: `d + 1` to the right
/// of the origin, `d` at or left of it.
pub fn upcross_index(x: i64, d_left: u64) -> u64 {
    if x >= 1 {
        d_left + 1
    } else {
        d_left
    }
}

/// Which field a window snapshot reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowField {
    Downcrossings,
    LocalTime,
}

/// Snapshot of a field on a window, taken at the `(k+1)`-th upcrossing of `x`.
pub struct StoppedWindow {
    pub x: i64,
    pub k: u64,
    pub lo: i64,
    pub hi: i64,
    pub field: WindowField,
}

pub type WindowValues = ArrayVec<u64, MAX_WINDOW>;

impl PathStatistic for StoppedWindow {
    type Acc = Option<WindowValues>;
    type Key = Option<WindowValues>;
    fn start(&self) -> Self::Acc {
        None
    }
    fn update(&self, acc: &Self::Acc, walk: &WalkObservables, ev: Option<&UpcrossEvent>) -> Self::Acc {
        if acc.is_some() {
            return acc.clone();
        }
        match ev {
            Some(e) if e.x == self.x && e.k == self.k => {
                Some(
                    (self.lo..=self.hi)
                        .map(|y| match self.field {
                            WindowField::Downcrossings => walk.downcrossings(y),
                            WindowField::LocalTime => walk.local_time(y),
                        })
                        .collect(),
                )
            }
            _ => None,
        }
    }
    fn finish(&self, acc: &Self::Acc, _: &WalkObservables) -> Self::Key {
        acc.clone()
    }
}

/// Exact joint law of `D(T_U(k+1, x), y)` for `y` in the window, on the
/// event `T_U(k+1, x) <= n_cap`, with the complement kept as residual mass.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StoppedLaw {
    pub x: i64,
    pub k: u64,
    pub window: (i64, i64),
    pub n_cap: u32,
    /// Window values -> numerator over `2^n_cap`.
    pub law: BTreeMap<Vec<u64>, u64>,
    pub residual: u64,
}

impl StoppedLaw {
    pub fn denominator(&self) -> u64 {
        1u64 << self.n_cap
    }

    pub fn prob(&self, values: &[u64]) -> f64 {
        self.law.get(values).copied().unwrap_or(0) as f64 / self.denominator() as f64
    }

    pub fn residual_prob(&self) -> f64 {
        self.residual as f64 / self.denominator() as f64
    }
}

pub fn stopped_profile_law(x: i64, k: u64, window: (i64, i64), n_cap: u32) -> Result<StoppedLaw, EnumError> {
    stopped_field_law(x, k, window, n_cap, WindowField::Downcrossings)
}

/// As [`stopped_profile_law`] for the vertex local time `L(T_U(k+1, x), y)`.
pub fn stopped_local_time_law(x: i64, k: u64, window: (i64, i64), n_cap: u32) -> Result<StoppedLaw, EnumError> {
    stopped_field_law(x, k, window, n_cap, WindowField::LocalTime)
}

fn stopped_field_law(
    x: i64,
    k: u64,
    window: (i64, i64),
    n_cap: u32,
    field: WindowField,
) -> Result<StoppedLaw, EnumError> {
    let (lo, hi) = window;
    if lo > hi {
        return Err(EnumError::EmptyWindow);
    }
    if (hi - lo + 1) as usize > MAX_WINDOW {
        return Err(EnumError::WindowTooWide);
    }
    let pmf = enumerate_paths(n_cap, &StoppedWindow { x, k, lo, hi, field })?;
    let mut law = BTreeMap::new();
    let mut residual = 0;
    for (key, v) in pmf.mass {
        match key {
            Some(vals) => {
                law.insert(vals.to_vec(), v);
            }
            None => residual += v,
        }
    }
    Ok(StoppedLaw { x, k, window, n_cap, law, residual })
}

/// `B_x(l)`: at the upcrossing `T_U(j, x)` fixed by `l(x-1)`, the whole
/// downcrossing field equals `l`. `values` holds `l` on `lo..`, zero outside.
#[derive(Debug, Clone)]
pub struct ProfileEvent {
    pub x: i64,
    pub lo: i64,
    pub values: Vec<u64>,
}

impl ProfileEvent {
    pub fn value(&self, y: i64) -> u64 {
        let i = y - self.lo;
        if i < 0 {
            0
        } else {
            self.values.get(i as usize).copied().unwrap_or(0)
        }
    }

    /// The time at which the event is decided, `2 sum l + x`.
    pub fn decision_time(&self) -> i64 {
        2 * self.values.iter().sum::<u64>() as i64 + self.x
    }

    fn matches(&self, walk: &WalkObservables) -> bool {
        let (a, b) = walk.visited_range();
        let hi = self.lo + self.values.len() as i64;
        (a.min(self.lo) - 1..=b.max(hi) + 1).all(|y| walk.downcrossings(y) == self.value(y))
    }
}

impl PathStatistic for ProfileEvent {
    type Acc = Option<bool>;
    type Key = bool;
    fn start(&self) -> Option<bool> {
        None
    }
    fn update(&self, acc: &Option<bool>, walk: &WalkObservables, ev: Option<&UpcrossEvent>) -> Option<bool> {
        if acc.is_some() {
            return *acc;
        }
        let j = upcross_index(self.x, self.value(self.x - 1));
        match ev {
            Some(e) if e.x == self.x && e.k + 1 == j => Some(self.matches(walk)),
            _ => None,
        }
    }
    fn finish(&self, acc: &Option<bool>, _: &WalkObservables) -> bool {
        *acc == Some(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::rational;

    #[test]
    fn one_step_position() {
        let pmf = enumerate_paths(1, &Final(|w: &WalkObservables| w.pos())).unwrap();
        assert_eq!(pmf.mass, BTreeMap::from([(-1, 1), (1, 1)]));
        assert!(pmf.is_normalized());
        assert!(enumerate_paths(0, &Final(|w: &WalkObservables| w.pos())).is_err());
        assert!(enumerate_paths(27, &Final(|w: &WalkObservables| w.pos())).is_err());
    }

    #[test]
    fn three_favourites_at_three() {
        let p = exact_event_prob_fn(3, |w| {
            let favs = w.favorites();
            favs.len() == 3 && favs.contains(&w.pos())
        })
        .unwrap();
        assert_eq!(p, rational(1, 2));
    }

    #[test]
    fn shard_count_does_not_matter() {
        let stat = Final(|w: &WalkObservables| (w.pos(), w.max_local_time(), w.f_counter(2)));
        let a = enumerate_paths_sharded(12, &stat, 0).unwrap();
        let b = enumerate_paths_sharded(12, &stat, 5).unwrap();
        let c = enumerate_paths_sharded(12, &stat, 12).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert!(a.is_normalized());
    }

    #[test]
    fn gray_replay_matches_direct_walks() {
        // every path reconstructed from its step sequence must give the same key
        let n = 10u32;
        let stat = Final(|w: &WalkObservables| (w.pos(), w.local_time(0), w.f_counters().to_vec()));
        let pmf = enumerate_paths(n, &stat).unwrap();
        let mut direct: BTreeMap<_, u64> = BTreeMap::new();
        for code in 0..1u32 << n {
            let mut w = WalkObservables::new();
            for i in 0..n {
                w.advance(Step::from_bit(code >> i & 1 == 1));
            }
            *direct.entry((w.pos(), w.local_time(0), w.f_counters().to_vec())).or_insert(0) += 1;
        }
        assert_eq!(pmf.mass, direct);
    }

    #[test]
    fn coarsening_merges_exactly() {
        let pmf = enumerate_paths(8, &Final(|w: &WalkObservables| w.pos())).unwrap();
        let parity = pmf.coarsen(|p| p.rem_euclid(4));
        assert_eq!(parity.total(), 256);
        assert_eq!(parity.numerator(&0), pmf.mass.iter().filter(|(k, _)| k.rem_euclid(4) == 0).map(|(_, v)| v).sum::<u64>());
    }

    #[test]
    fn identity_small_horizon() {
        let pmf = enumerate_paths(10, &IdentityEverywhere).unwrap();
        assert_eq!(pmf.numerator(&true), 1024);
    }

    #[test]
    fn stopped_law_first_site() {
        let law = stopped_profile_law(1, 0, (-1, -1), 1).unwrap();
        assert_eq!(law.law.get(&vec![0]).copied(), Some(1));
        assert_eq!(law.residual, 1);
        let law = stopped_profile_law(1, 0, (-1, -1), 5).unwrap();
        assert_eq!(law.prob(&[0]), 0.5);
        // down, up, up, + any two further steps: counts 4 of 32
        assert!(law.law[&vec![1]] >= 4);
        let far = stopped_profile_law(1, 5, (-1, -1), 6).unwrap();
        assert!(far.law.is_empty() && far.residual == 64);
        assert_eq!(stopped_profile_law(1, 0, (2, 1), 4), Err(EnumError::EmptyWindow));
    }

    #[test]
    fn profile_events_first_site() {
        let zero = ProfileEvent { x: 1, lo: 0, values: vec![] };
        assert_eq!(exact_event_prob(&zero, 1).unwrap(), rational(1, 2));
        let one = ProfileEvent { x: 1, lo: -1, values: vec![1] };
        assert_eq!(one.decision_time(), 3);
        assert_eq!(exact_event_prob(&one, 3).unwrap(), rational(1, 8));
        assert_eq!(exact_event_prob(&one, 7).unwrap(), rational(1, 8));
    }

    #[test]
    fn json_numerators_are_strings() {
        let pmf = enumerate_paths(2, &Final(|w: &WalkObservables| w.pos())).unwrap();
        let j = pmf.to_json();
        assert_eq!(j["mass"]["0"], "2");
        assert_eq!(j["denom_exp"], 2);
    }
}
