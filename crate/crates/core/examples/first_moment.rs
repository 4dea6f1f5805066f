//! Exact three-favorite event probabilities and the growth of E N_H.

use favsites::branching::SeamVariant;
use favsites::solver::{exact_a_probability, exact_nh};
use favsites::walk::window_members;
use num_rational::BigRational;

fn main() {
    let h = 25;
    for k in window_members(h) {
        let p = exact_a_probability::<BigRational>(1, h, k, SeamVariant::OriginImmigration).expect("h small");
        println!("P(A_(1,{h})^({k})) ~ {:.6e}", favsites::numeric::rational_to_f64(&p));
    }
    let fm = exact_nh::<f64>(64, SeamVariant::OriginImmigration).expect("H <= 64");
    for (big_h, v) in fm.cumulative().into_iter().filter(|(h, _)| h % 16 == 0) {
        println!("E N_{big_h} = {v:.6e}  (/ ln H = {:.3e})", v / (big_h as f64).ln());
    }
}
