//! Simple random walk with incrementally maintained local times.
//!
//! Per step the walk updates the vertex local time `L`, the up/down crossing
//! counts `U`/`D`, the running maximum of `L` with the number of sites that
//! attain it, and the `f(r)` tallies. All of this is O(1); the explicit
//! favourite set is only materialised on request.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::numeric::fmt_f64;

/// Default hard cap for "run until event" rules.
pub const DEFAULT_HARD_CAP: u64 = 1_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Step {
    Up,
    Down,
}

impl Step {
    pub fn delta(self) -> i64 {
        match self {
            Step::Up => 1,
            Step::Down => -1,
        }
    }

    pub fn from_bit(bit: bool) -> Step {
        if bit {
            Step::Up
        } else {
            Step::Down
        }
    }
}

/// The walk arrived at `x` from `x - 1` for the `(k+1)`-th time, at time `t`,
/// and `h = L(t, x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpcrossEvent {
    pub x: i64,
    pub k: u64,
    pub t: u64,
    pub h: u64,
}

/// `k` lies strictly inside `I_h = (h/2 + sqrt(h)/2, h/2 + sqrt(h))`.
///
/// With `d = 2k - h` this is `sqrt(h) < d < 2 sqrt(h)`, decided in integers.
pub fn window_contains(h: u64, k: u64) -> bool {
    let d = 2 * k as i128 - h as i128;
    d > 0 && d * d > h as i128 && d * d < 4 * h as i128
}

pub fn window_members(h: u64) -> Vec<u64> {
    (h / 2..=h).filter(|&k| window_contains(h, k)).collect()
}

/// A three-favourite event `A_{x,h}^{(k)}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AHit {
    pub x: i64,
    pub h: u64,
    pub k: u64,
    pub t: u64,
}

/// Which form of the local time identity failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum IdentityForm {
    Down,
    Up,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct IdentityViolation {
    pub x: i64,
    pub t: u64,
    pub form: IdentityForm,
    pub lhs: i64,
    pub rhs: i64,
}

/// Everything needed to reverse one [`WalkObservables::advance`].
#[derive(Debug, Clone, Copy)]
pub struct UndoToken {
    step: Step,
    prev_max: u64,
    prev_count: u64,
    f_bucket: u64,
    prev_terminal: Option<Step>,
    prev_lo: i64,
    prev_hi: i64,
}

#[derive(Debug, Clone)]
pub struct WalkObservables {
    t: u64,
    pos: i64,
    offset: i64,
    l: Vec<u64>,
    u: Vec<u64>,
    d: Vec<u64>,
    lo: i64,
    hi: i64,
    max_l: u64,
    argmax_count: u64,
    f: Vec<u64>,
    terminal: Option<Step>,
}

impl Default for WalkObservables {
    fn default() -> Self {
        Self::new()
    }
}

impl WalkObservables {
    pub fn new() -> Self {
        Self::with_reach(64)
    }

    /// Preallocates sites `-reach..=reach`.
    pub fn with_reach(reach: usize) -> Self {
        let len = 2 * reach.max(1) + 3;
        WalkObservables {
            t: 0,
            pos: 0,
            offset: (len / 2) as i64,
            l: vec![0; len],
            u: vec![0; len],
            d: vec![0; len],
            lo: 0,
            hi: 0,
            max_l: 0,
            argmax_count: 0,
            f: vec![0; 4],
            terminal: None,
        }
    }

    pub fn t(&self) -> u64 {
        self.t
    }
    pub fn pos(&self) -> i64 {
        self.pos
    }
    pub fn max_local_time(&self) -> u64 {
        self.max_l
    }
    pub fn argmax_count(&self) -> u64 {
        self.argmax_count
    }
    pub fn terminal(&self) -> Option<Step> {
        self.terminal
    }
    /// Smallest and largest site reached so far (the origin counts).
    pub fn visited_range(&self) -> (i64, i64) {
        (self.lo, self.hi)
    }

    fn slot(&self, x: i64) -> Option<usize> {
        let i = x + self.offset;
        (i >= 0 && (i as usize) < self.l.len()).then_some(i as usize)
    }

    pub fn local_time(&self, x: i64) -> u64 {
        self.slot(x).map_or(0, |i| self.l[i])
    }
    pub fn upcrossings(&self, x: i64) -> u64 {
        self.slot(x).map_or(0, |i| self.u[i])
    }
    pub fn downcrossings(&self, x: i64) -> u64 {
        self.slot(x).map_or(0, |i| self.d[i])
    }

    /// `f(r)`, the number of times the walker stood on one of exactly `r` favourites.
    pub fn f_counter(&self, r: u64) -> u64 {
        self.f.get(r as usize).copied().unwrap_or(0)
    }
    /// `f(0), f(1), ...` up to the last nonzero entry.
    pub fn f_counters(&self) -> &[u64] {
        let end = self.f.iter().rposition(|&v| v > 0).map_or(0, |i| i + 1);
        &self.f[..end]
    }

    /// The favourite set, recomputed by a scan of the visited range.
    pub fn favorites(&self) -> Vec<i64> {
        if self.t == 0 {
            return Vec::new();
        }
        (self.lo..=self.hi).filter(|&x| self.local_time(x) == self.max_l).collect()
    }

    pub fn is_favorite(&self, x: i64) -> bool {
        self.t > 0 && self.local_time(x) == self.max_l
    }

    fn grow(&mut self) {
        let old = self.l.len();
        let extra = old.max(16);
        let shift = extra / 2;
        let resize = |v: &mut Vec<u64>| {
            let mut w = vec![0; old + extra];
            w[shift..shift + old].copy_from_slice(v);
            *v = w;
        };
        resize(&mut self.l);
        resize(&mut self.u);
        resize(&mut self.d);
        self.offset += shift as i64;
    }

    /// Takes one step; returns the upcrossing event (if the step was up) and
    /// the token that reverses it.
    #[inline]
    pub fn advance(&mut self, step: Step) -> (Option<UpcrossEvent>, UndoToken) {
        let new = self.pos + step.delta();
        let idx = match self.slot(new) {
            Some(i) => i,
            None => {
                self.grow();
                self.slot(new).expect("grown array covers the new site")
            }
        };
        let mut token = UndoToken {
            step,
            prev_max: self.max_l,
            prev_count: self.argmax_count,
            f_bucket: 0,
            prev_terminal: self.terminal,
            prev_lo: self.lo,
            prev_hi: self.hi,
        };
        let event = match step {
            Step::Up => {
                let k = self.u[idx];
                self.u[idx] = k + 1;
                Some((new, k))
            }
            Step::Down => {
                self.d[idx] += 1;
                None
            }
        };
        let a = self.l[idx] + 1;
        self.l[idx] = a;
        if a > self.max_l {
            self.max_l = a;
            self.argmax_count = 1;
        } else if a == self.max_l {
            self.argmax_count += 1;
        }
        self.t += 1;
        self.pos = new;
        self.lo = self.lo.min(new);
        self.hi = self.hi.max(new);
        self.terminal = Some(step);
        if a == self.max_l {
            let r = self.argmax_count as usize;
            if r >= self.f.len() {
                self.f.resize(r + 1, 0);
            }
            self.f[r] += 1;
            token.f_bucket = r as u64;
        }
        debug_assert!(self.check_identity_near(new).is_ok(), "local time identity broken near {new}");
        let event = event.map(|(x, k)| UpcrossEvent { x, k, t: self.t, h: a });
        (event, token)
    }

    /// Reverses the most recent [`advance`](Self::advance) whose token is given.
    pub fn undo(&mut self, token: UndoToken) {
        let idx = self.slot(self.pos).expect("current site is stored");
        self.l[idx] -= 1;
        match token.step {
            Step::Up => self.u[idx] -= 1,
            Step::Down => self.d[idx] -= 1,
        }
        if token.f_bucket > 0 {
            self.f[token.f_bucket as usize] -= 1;
        }
        self.pos -= token.step.delta();
        self.t -= 1;
        self.max_l = token.prev_max;
        self.argmax_count = token.prev_count;
        self.terminal = token.prev_terminal;
        self.lo = token.prev_lo;
        self.hi = token.prev_hi;
    }

    fn identity_at(&self, x: i64) -> Result<(), IdentityViolation> {
        let s = self.pos;
        let ind = |b: bool| i64::from(b);
        let l = self.local_time(x) as i64;
        let down = self.downcrossings(x) as i64 + self.downcrossings(x - 1) as i64 + ind(0 < x && x <= s)
            - ind(s < x && x <= 0);
        if l != down {
            return Err(IdentityViolation { x, t: self.t, form: IdentityForm::Down, lhs: l, rhs: down });
        }
        let up = self.upcrossings(x) as i64 + self.upcrossings(x + 1) as i64 + ind(s <= x && x < 0)
            - ind(0 <= x && x < s);
        if l != up {
            return Err(IdentityViolation { x, t: self.t, form: IdentityForm::Up, lhs: l, rhs: up });
        }
        Ok(())
    }

    fn check_identity_near(&self, x: i64) -> Result<(), IdentityViolation> {
        (x - 1..=x + 1).try_for_each(|y| self.identity_at(y))
    }

    /// Both forms of the local time identity at every site of the visited
    /// range and one site beyond each end.
    pub fn check_local_time_identity(&self) -> Result<(), IdentityViolation> {
        (self.lo - 1..=self.hi + 1).try_for_each(|y| self.identity_at(y))
    }

    /// Full recomputation of the incrementally maintained fields.
    pub fn audit(&self) -> Result<(), String> {
        self.check_local_time_identity().map_err(|v| format!("{v:?}"))?;
        let sites = self.lo..=self.hi;
        let total: u64 = sites.clone().map(|x| self.local_time(x)).sum();
        if total != self.t {
            return Err(format!("sum of local times {total} != t {}", self.t));
        }
        let max = sites.clone().map(|x| self.local_time(x)).max().unwrap_or(0);
        let count = sites.filter(|&x| self.local_time(x) == max).count() as u64;
        if self.t > 0 && (max != self.max_l || count != self.argmax_count) {
            return Err(format!(
                "maintained max {}x{} but recomputed {max}x{count}",
                self.max_l, self.argmax_count
            ));
        }
        if self.pos.unsigned_abs() > self.t {
            return Err("position beyond reach".into());
        }
        Ok(())
    }

    /// `A_{x,h}^{(k)}` at this upcrossing: the favourite set is exactly
    /// `{x, x+1, x+2}`. Checked in O(1) from the maintained maximum.
    pub fn detect_a_event(&self, event: &UpcrossEvent, big_h: u64) -> Option<AHit> {
        let h = event.h;
        let hit = self.argmax_count == 3
            && self.max_l == h
            && h <= big_h
            && self.local_time(event.x + 1) == h
            && self.local_time(event.x + 2) == h
            && window_contains(h, event.k);
        hit.then_some(AHit { x: event.x, h, k: event.k, t: event.t })
    }

    /// Downcrossing field on the given sites.
    pub fn downcross_field(&self, sites: std::ops::RangeInclusive<i64>) -> Vec<u64> {
        sites.map(|y| self.downcrossings(y)).collect()
    }
}

/// `psi(t) = t^{1/2} (ln t)^{-11}`, the transience threshold, for `t >= 2`.
pub fn psi(t: f64) -> f64 {
    t.sqrt() * t.ln().powi(-11)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransiencePoint {
    pub t: u64,
    pub min_dist: u64,
    pub psi: f64,
}

/// Records `(t, min |v| over favourites v, psi(t))` at each checkpoint that
/// equals the current time.
pub fn transience_point(walk: &WalkObservables) -> Option<TransiencePoint> {
    let favs = walk.favorites();
    let min_dist = favs.iter().map(|v| v.unsigned_abs()).min()?;
    let t = walk.t();
    let psi = if t >= 2 { psi(t as f64) } else { f64::NAN };
    Some(TransiencePoint { t, min_dist, psi })
}

pub fn transience_csv(points: &[TransiencePoint]) -> String {
    let mut s = String::from("t,min_dist,psi\n");
    for p in points {
        s.push_str(&format!("{},{},{}\n", p.t, p.min_dist, fmt_f64(p.psi)));
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum StopRule {
    Fixed { t_max: u64 },
    FirstHit,
    FirstF3Above { h_min: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub stop: StopRule,
    /// Level cap `H` for the direct `N_H` count.
    pub big_h: u64,
    pub hard_cap: u64,
    /// Increasing times at which a transience point is recorded.
    pub checkpoints: Vec<u64>,
    /// End the run as soon as the maximum local time exceeds `big_h`: no
    /// event with `h <= big_h` can happen afterwards.
    pub stop_when_exhausted: bool,
    pub keep_hits: bool,
}

impl SimConfig {
    pub fn fixed(t_max: u64) -> Self {
        SimConfig {
            stop: StopRule::Fixed { t_max },
            big_h: 0,
            hard_cap: DEFAULT_HARD_CAP,
            checkpoints: Vec::new(),
            stop_when_exhausted: false,
            keep_hits: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkSummary {
    pub steps: u64,
    pub capped: bool,
    pub stopped_early: bool,
    pub final_pos: i64,
    pub max_local_time: u64,
    /// `f(r)` for `r = 0, 1, ...` (index 0 is always 0).
    pub f_counters: Vec<u64>,
    pub nh_direct: u64,
    pub hits: Vec<AHit>,
    pub transience: Vec<TransiencePoint>,
}

impl WalkSummary {
    pub fn f(&self, r: usize) -> u64 {
        self.f_counters.get(r).copied().unwrap_or(0)
    }
}

/// Bits from one 64-bit draw drive 64 steps.
pub struct StepSource<R> {
    rng: R,
    bits: u64,
    left: u32,
}

impl<R: RngCore> StepSource<R> {
    pub fn new(rng: R) -> Self {
        StepSource { rng, bits: 0, left: 0 }
    }

    #[inline]
    pub fn next_step(&mut self) -> Step {
        if self.left == 0 {
            self.bits = self.rng.next_u64();
            self.left = 64;
        }
        let b = self.bits & 1 == 1;
        self.bits >>= 1;
        self.left -= 1;
        Step::from_bit(b)
    }
}

pub fn simulate(seed: u64, config: &SimConfig) -> WalkSummary {
    simulate_with(ChaCha8Rng::seed_from_u64(seed), config)
}

pub fn simulate_with<R: RngCore>(rng: R, config: &SimConfig) -> WalkSummary {
    let mut src = StepSource::new(rng);
    let mut walk = WalkObservables::new();
    let limit = match config.stop {
        StopRule::Fixed { t_max } => t_max.min(config.hard_cap),
        _ => config.hard_cap,
    };
    let mut hits = Vec::new();
    let mut nh = 0u64;
    let mut transience = Vec::new();
    let mut next_cp = config.checkpoints.iter().copied().peekable();
    let mut audit_at = 1u64;
    let mut done = false;
    let mut stopped_early = false;
    while walk.t() < limit && !done {
        let f3_before = walk.f_counter(3);
        let (event, _) = walk.advance(src.next_step());
        if let Some(ev) = event {
            if ev.x >= 1 {
                if let Some(hit) = walk.detect_a_event(&ev, config.big_h) {
                    nh += 1;
                    if config.keep_hits {
                        hits.push(hit);
                    }
                    done |= config.stop == StopRule::FirstHit;
                }
            }
        }
        if let StopRule::FirstF3Above { h_min } = config.stop {
            done |= walk.f_counter(3) > f3_before && walk.max_local_time() >= h_min;
        }
        while next_cp.peek().is_some_and(|&c| c <= walk.t()) {
            if next_cp.next() == Some(walk.t()) {
                transience.extend(transience_point(&walk));
            }
        }
        if walk.t() == audit_at {
            debug_assert!(walk.audit().is_ok(), "audit failed at t = {}", walk.t());
            audit_at *= 2;
        }
        if config.stop_when_exhausted && walk.max_local_time() > config.big_h && !done {
            stopped_early = true;
            break;
        }
    }
    let capped = match config.stop {
        StopRule::Fixed { t_max } => t_max > config.hard_cap,
        _ => !done && !stopped_early,
    };
    WalkSummary {
        steps: walk.t(),
        capped,
        stopped_early,
        final_pos: walk.pos(),
        max_local_time: walk.max_local_time(),
        f_counters: walk.f_counters().to_vec(),
        nh_direct: nh,
        hits,
        transience,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn run(steps: &[i64]) -> WalkObservables {
        let mut w = WalkObservables::with_reach(2);
        for &s in steps {
            w.advance(if s > 0 { Step::Up } else { Step::Down });
        }
        w
    }

    #[test]
    fn single_up_step() {
        let w = run(&[1]);
        assert_eq!((w.local_time(1), w.upcrossings(1), w.downcrossings(1)), (1, 1, 0));
        assert_eq!(w.f_counter(1), 1);
        assert_eq!(transience_point(&w).unwrap().min_dist, 1);
    }

    #[test]
    fn hand_traced_three_steps() {
        let w = run(&[1, 1, -1]);
        assert_eq!(w.downcrossings(1), 1);
        assert_eq!(w.local_time(1), 2);
        assert_eq!(w.favorites(), vec![1]);
        assert!(w.check_local_time_identity().is_ok());
        let d = run(&[-1]);
        assert_eq!(d.downcrossings(-1), 1);
        assert_eq!(d.local_time(5000), 0);
    }

    #[test]
    fn three_favourites_counted() {
        let w = run(&[1, 1, 1]);
        assert_eq!(w.favorites(), vec![1, 2, 3]);
        assert_eq!(w.f_counter(3), 1);
    }

    #[test]
    fn window_arithmetic() {
        assert!(!window_contains(25, 14));
        assert!(!window_contains(25, 15));
        assert_eq!(window_members(25), vec![16, 17]);
        assert!(window_members(4).is_empty());
        assert_eq!(window_members(7), vec![5, 6]);
        for h in 1..400u64 {
            let (lo, hi) = (0.5 * (h as f64 + (h as f64).sqrt()), 0.5 * (h as f64 + 2.0 * (h as f64).sqrt()));
            for k in 0..=h {
                let kf = k as f64;
                if (kf - lo).abs() > 1e-9 && (kf - hi).abs() > 1e-9 {
                    assert_eq!(window_contains(h, k), lo < kf && kf < hi, "h={h} k={k}");
                }
            }
        }
    }

    #[test]
    fn upcross_event_fields() {
        let mut w = WalkObservables::new();
        let mut last = None;
        for s in [1, 1, 1, 1, 1, -1, -1, 1] {
            last = w.advance(Step::from_bit(s > 0)).0;
        }
        let ev = last.unwrap();
        assert_eq!((ev.x, ev.k, ev.h, ev.t), (4, 1, 3, 8));
        assert_eq!(w.upcrossings(4), 2);
        assert_eq!(w.favorites(), vec![4]);
        assert!(w.detect_a_event(&ev, 100).is_none());
    }

    #[test]
    fn a_event_matches_naive_predicate() {
        let mut found = 0;
        for seed in 0..20_000u64 {
            let mut src = StepSource::new(ChaCha8Rng::seed_from_u64(seed));
            let mut w = WalkObservables::new();
            while w.max_local_time() <= 16 {
                let (ev, _) = w.advance(src.next_step());
                let Some(ev) = ev else { continue };
                let naive = w.favorites() == vec![ev.x, ev.x + 1, ev.x + 2]
                    && w.local_time(ev.x) == ev.h
                    && window_contains(ev.h, ev.k);
                let fast = w.detect_a_event(&ev, 16);
                assert_eq!(naive, fast.is_some(), "seed {seed} t {}", ev.t);
                found += usize::from(naive);
            }
        }
        assert!(found > 0, "search found no event to compare");
    }

    #[test]
    fn undo_restores_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut w = WalkObservables::with_reach(1);
        let mut tokens = Vec::new();
        let mut snaps = Vec::new();
        for _ in 0..500 {
            snaps.push((w.t(), w.pos(), w.max_local_time(), w.argmax_count(), w.f_counters().to_vec()));
            tokens.push(w.advance(Step::from_bit(rng.random())).1);
        }
        while let Some(tok) = tokens.pop() {
            w.undo(tok);
            let snap = snaps.pop().unwrap();
            let mut f = w.f_counters().to_vec();
            f.resize(snap.4.len().max(f.len()), 0);
            let mut g = snap.4.clone();
            g.resize(f.len(), 0);
            assert_eq!((w.t(), w.pos(), w.max_local_time(), w.argmax_count()), (snap.0, snap.1, snap.2, snap.3));
            assert_eq!(f, g);
        }
        assert_eq!(w.local_time(0), 0);
    }

    #[test]
    fn random_audits_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut w = WalkObservables::with_reach(1);
        for _ in 0..20_000 {
            w.advance(Step::from_bit(rng.random()));
            if rng.random_bool(0.01) {
                w.audit().unwrap();
                let favs = w.favorites();
                assert!(!favs.is_empty());
                assert_eq!(favs.len() as u64, w.argmax_count());
            }
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let cfg = SimConfig { checkpoints: vec![3, 5, 10], ..SimConfig::fixed(10) };
        let a = simulate(5, &cfg);
        assert_eq!(a, simulate(5, &cfg));
        assert_eq!(a.steps, 10);
        assert_eq!(a.transience.len(), 3);
        let e = simulate(5, &SimConfig::fixed(0));
        assert_eq!(e.steps, 0);
        assert!(e.f_counters.iter().all(|&v| v == 0));
        assert!(!a.capped);
    }

    #[test]
    fn hard_cap_flags() {
        let cfg = SimConfig { stop: StopRule::FirstHit, big_h: 6, hard_cap: 1000, ..SimConfig::fixed(0) };
        let s = simulate(1, &cfg);
        assert!(s.capped && s.steps == 1000 && s.nh_direct == 0);
    }

    #[test]
    fn psi_is_finite() {
        let v = psi(3.0);
        assert!(v.is_finite() && v > 0.0);
        let csv = transience_csv(&[TransiencePoint { t: 3, min_dist: 1, psi: v }]);
        assert!(csv.starts_with("t,min_dist,psi\n3,1,"));
    }

    proptest::proptest! {
        #[test]
        fn audit_holds_on_arbitrary_paths(bits in proptest::collection::vec(proptest::bool::ANY, 0..400)) {
            let mut w = WalkObservables::with_reach(1);
            for &b in &bits {
                w.advance(Step::from_bit(b));
            }
            proptest::prop_assert!(w.audit().is_ok());
            proptest::prop_assert!(w.t() == 0 || !w.favorites().is_empty());
            let (a, b) = w.visited_range();
            for x in a..=b {
                // the edge (x-1, x) is crossed up and down alternately, starting upward iff x >= 1
                let gap = w.upcrossings(x) as i64 - w.downcrossings(x - 1) as i64;
                let allowed = if x >= 1 { 0..=1 } else { -1..=0 };
                proptest::prop_assert!(allowed.contains(&gap), "x={} gap={}", x, gap);
            }
        }
    }
}
