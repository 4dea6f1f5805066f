//! Walk a few steps by hand, then check the local time identity on every path of length 12.

use favsites::enumerate::{enumerate_paths, IdentityEverywhere};
use favsites::walk::{Step, WalkObservables};

fn main() {
    let mut w = WalkObservables::new();
    for s in [Step::Up, Step::Up, Step::Down, Step::Up, Step::Up] {
        if let (Some(ev), _) = w.advance(s) {
            println!("upcross to {} at t={} (k={}, L={})", ev.x, ev.t, ev.k, ev.h);
        }
    }
    println!("favorites {:?}, max L = {}, f(3) = {}", w.favorites(), w.max_local_time(), w.f_counter(3));
    w.check_local_time_identity().expect("identity holds");

    let n = 12;
    let pmf = enumerate_paths(n, &IdentityEverywhere).expect("n in range");
    println!("{} of 2^{n} paths satisfy the identity at every time", pmf.numerator(&true));
}
