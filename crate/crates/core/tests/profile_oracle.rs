mod common;

use common::{boxes, ProfileOracle};
use favsites::enumerate::{exact_event_prob, ProfileEvent};
use favsites::profiles::{is_realizable, profile_probability, CrossingProfile};
use num_rational::BigRational;
use num_traits::Zero;

const LO: i64 = -2;
const HI: i64 = 4;

#[test]
fn profile_probability_matches_path_oracle() {
    let xs = [-1, 0, 1, 2];
    let oracle = ProfileOracle::run(&xs, LO, HI, 2);
    let mut realizable = 0;
    for &x in &xs {
        for field in boxes(oracle.width(), 2) {
            let l = CrossingProfile::from_window(x, LO, &field);
            let p = profile_probability::<BigRational>(&l).value;
            let q = oracle.probability(x, &field);
            assert_eq!(p, q, "x={x} field={field:?}");
            assert_eq!(is_realizable(&l), !q.is_zero(), "x={x} field={field:?}");
            realizable += usize::from(!q.is_zero());
        }
    }
    assert!(realizable > 100, "{realizable}");
}

#[test]
fn oracle_agrees_with_enumeration_on_short_events() {
    let oracle = ProfileOracle::run(&[1, 2], LO, HI, 2);
    let mut checked = 0;
    for (x, field) in [(1, [0, 0, 0, 0, 0, 0, 0]), (1, [0, 1, 1, 0, 0, 0, 0]), (2, [0, 0, 0, 1, 1, 0, 0]), (2, [0, 0, 1, 0, 1, 1, 0])] {
        let ev = ProfileEvent { x, lo: LO, values: field.to_vec() };
        let n = ev.decision_time().max(1) as u32;
        let exact = exact_event_prob(&ev, n).unwrap();
        assert_eq!(exact, oracle.probability(x, &field), "x={x} {field:?}");
        checked += 1;
    }
    assert_eq!(checked, 4);
}
