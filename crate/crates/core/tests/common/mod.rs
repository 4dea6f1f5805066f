//! Helpers shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use num_bigint::BigInt;
use num_rational::BigRational;
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
pub struct FlucGrid {
    pub x: i64,
    pub h: Vec<u64>,
}

/// Constants fixed by pilot runs, see `fixtures/pilot.json`.
#[derive(Debug, Clone, Deserialize)]
pub struct Pilot {
    pub fluc_ratio_min: f64,
    pub fluc_grid: FlucGrid,
    pub second_moment_bracket: [f64; 2],
    pub second_moment_levels: Vec<u64>,
    pub efrac_min: f64,
    pub efrac_levels: Vec<u64>,
}

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures").join(name)
}

pub fn pilot() -> Pilot {
    let text = std::fs::read_to_string(fixture_path("pilot.json")).expect("pilot fixture");
    serde_json::from_str(&text).expect("pilot fixture parses")
}

/// Exact `P(B_x(l))` for every profile `l` supported in `[lo, hi]` with
/// entries at most `cap`, by depth-first search over walk prefixes.
///
/// Downcrossing counts never decrease, so a prefix whose field leaves the box
/// can be cut. Every arrival at `x` from `x - 1` decides exactly one event
/// `B_x(D)`, with `D` the field at that time, and a path decides a given `l`
/// at most once (the time is `2 sum l + x`). Keys are `(x, field on [lo, hi])`.
/// Mass is kept as an integer multiple of `2^-64`.
pub struct ProfileOracle {
    lo: i64,
    hi: i64,
    cap: u8,
    xs: Vec<i64>,
    down: Vec<u8>,
    pub mass: BTreeMap<(i64, Vec<u8>), u128>,
}

impl ProfileOracle {
    pub fn run(xs: &[i64], lo: i64, hi: i64, cap: u8) -> ProfileOracle {
        assert!(lo <= 0 && hi >= 0);
        assert!(xs.iter().all(|&x| lo < x && x <= hi + 1));
        let mut o = ProfileOracle {
            lo,
            hi,
            cap,
            xs: xs.to_vec(),
            down: vec![0; (hi - lo + 1) as usize],
            mass: BTreeMap::new(),
        };
        o.dfs(0, 0);
        o
    }

    fn dfs(&mut self, pos: i64, t: u32) {
        assert!(t < 64, "prefix too long for the 2^-64 grid");
        // step up: leaving the box upward is only harmless if we never come back,
        // and coming back would add a downcrossing outside the box
        let up = pos + 1;
        if up <= self.hi + 1 {
            if self.xs.contains(&up) {
                let field = self.down.clone();
                *self.mass.entry((up, field)).or_insert(0) += 1u128 << (64 - (t + 1));
            }
            self.dfs(up, t + 1);
        }
        // step down: D(pos - 1) increments
        let down = pos - 1;
        if down >= self.lo {
            let i = (down - self.lo) as usize;
            if self.down[i] < self.cap {
                self.down[i] += 1;
                self.dfs(down, t + 1);
                self.down[i] -= 1;
            }
        }
    }

    pub fn probability(&self, x: i64, field: &[u64]) -> BigRational {
        let key: Vec<u8> = field.iter().map(|&v| v as u8).collect();
        let num = self.mass.get(&(x, key)).copied().unwrap_or(0);
        BigRational::new(BigInt::from(num), BigInt::from(1u128) << 64usize)
    }

    pub fn width(&self) -> usize {
        (self.hi - self.lo + 1) as usize
    }
}

/// All vectors of `len` entries in `0..=cap`.
pub fn boxes(len: usize, cap: u64) -> Vec<Vec<u64>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|v| {
                (0..=cap).map(move |c| {
                    let mut w = v.clone();
                    w.push(c);
                    w
                })
            })
            .collect();
    }
    out
}
