//! Offspring kernels: exact values, certified truncation and moments.

use favsites::kernels::{kernel_moments, kernel_prob_exact, truncation_point, KernelId};

fn main() {
    for id in KernelId::ALL {
        let row: Vec<String> = (0..5).map(|j| kernel_prob_exact(id, 2, j).to_string()).collect();
        println!("{id}(2, 0..5) = {}", row.join(", "));
    }
    for i in [1u64, 10, 100] {
        let tr = truncation_point(KernelId::Rho, i, 1e-12);
        let m = kernel_moments(KernelId::Rho, i);
        println!("rho row {i}: sum to j={} (tail < {:.1e}), mean {} second moment {}", tr.j_max, tr.tail_bound, m.mean, m.second);
    }
}
