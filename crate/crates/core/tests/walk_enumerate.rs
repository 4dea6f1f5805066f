use std::collections::BTreeMap;

use favsites::enumerate::{enumerate_paths, Final};
use favsites::replica::Replicas;
use favsites::stats::{chi_square, Verdict};
use favsites::walk::{simulate_with, SimConfig, WalkObservables};

type Key = (i64, u64, u64);

fn key(w: &WalkObservables) -> Key {
    (w.pos(), w.max_local_time(), w.f_counter(3))
}

#[test]
fn simulated_walk_matches_exhaustive_law() {
    let n = 12;
    let pmf = enumerate_paths(n, &Final(key)).unwrap();
    let expected: BTreeMap<Key, f64> = pmf.mass.keys().map(|k| (*k, pmf.prob_f64(k))).collect();
    let reps = 200_000;
    let cfg = SimConfig::fixed(n as u64);
    let seen = Replicas::new(5, "walk-vs-enum").run(reps, |_, rng| {
        let s = simulate_with(rng, &cfg);
        (s.final_pos, s.max_local_time, s.f(3))
    });
    let mut observed: BTreeMap<Key, u64> = BTreeMap::new();
    for s in seen {
        *observed.entry(s).or_insert(0) += 1;
    }
    let report = chi_square(&observed, &expected, reps);
    assert_eq!(report.verdict, Verdict::Pass, "{report:?}");
}

#[test]
fn three_favourites_at_time_three() {
    let pmf = enumerate_paths(3, &Final(|w: &WalkObservables| w.f_counter(3) > 0)).unwrap();
    assert_eq!(pmf.prob(&true), favsites::solver::rational(1, 2));
}
