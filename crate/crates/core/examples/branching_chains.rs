//! Stopping times of the chains: exact E tau_h, overshoot and the sqrt(h) bound.

use favsites::branching::{efrac_estimate, etau_check, overshoot_experiment};
use favsites::kernels::KernelId;
use favsites::replica::Replicas;
use favsites::solver::{expected_absorption, AbsorptionSpec};
use num_rational::BigRational;

fn main() {
    let r = Replicas::new(3, "example");
    for h in [2u64, 5, 10] {
        let a = expected_absorption::<BigRational>(&AbsorptionSpec::new(KernelId::Rho, h), 0).expect("small h");
        println!("E tau_{h} from 0 = {}", a.expected_steps);
    }
    let e = etau_check(50, 0, 20_000, &r).expect("k < h");
    println!("h=50: E tau {:.3} vs E(Z_tau - Z_0) {:.3}", e.tau.mean, e.exit_gap.mean);
    let o = overshoot_experiment(KernelId::Pi, 50, 60, 30, 20_000, 1000, &r).expect("valid");
    println!("overshoot: {:.4} <= {:.4} ({:?})", o.lhs.mean, o.rhs, o.verdict);
    let f = efrac_estimate(400, 370, 20_000, &r).expect("k in range");
    println!("efrac(400, 370) / sqrt(h) = {:.3}", f.ratio_to_sqrt_h);
}
