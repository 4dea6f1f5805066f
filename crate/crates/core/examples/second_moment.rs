//! Direct walk counts of N_H and the second-moment ratio.

use favsites::profiles::{moments_csv, nh_direct_estimate, second_moment_diagnostic};
use favsites::replica::Replicas;

fn main() {
    let r = Replicas::new(11, "example");
    let est = nh_direct_estimate(30, 10_000_000, 200_000, &r);
    println!("E N_30 = {:.3e} +- {:.1e}, E f(3) = {:.3}", est.nh.mean, est.nh.se, est.f3.mean);
    let rows: Vec<_> = [20, 30].iter().map(|&h| second_moment_diagnostic(h, 10_000_000, 200_000, &r)).collect();
    print!("{}", moments_csv(&rows));
}
