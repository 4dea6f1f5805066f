//! The patched branching profile against the exact law of the stopped walk.

use favsites::branching::{rk_coupling_test, CouplingParams, SeamVariant};
use favsites::replica::Replicas;

fn main() {
    let params = CouplingParams { x: 2, k: 1, window: (1, 3), samples: 20_000, n_cap: 18 };
    let report = rk_coupling_test(&params, &SeamVariant::ALL, &Replicas::new(1, "example")).expect("valid parameters");
    println!("walk mass beyond n_cap: {:.4}", report.walk_residual);
    for v in &report.variants {
        println!(
            "{:<20} exact tv {:.2e}  sampled tv {:.2e}  {:?}",
            v.variant.to_string(),
            v.exact_tv,
            v.sampled.tv,
            v.sampled.verdict
        );
    }
}
