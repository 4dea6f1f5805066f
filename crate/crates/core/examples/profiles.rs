//! Crossing profiles: event probabilities, the perturbation family and its mass ratio.

use favsites::profiles::{fluc_ratio, perturbations, profile_probability, EventFamily};

fn main() {
    let (x, h, k) = (1, 25, 16);
    let family = EventFamily::new(x, h, k);
    let l = family.minimal_profile().expect("k < h").with(x + 3, h - k - 1);
    let p = profile_probability::<f64>(&l);
    println!("profile {:?}", l.entries());
    println!("P(B_x(l)) = {:.4e}, decided at t = {}", p.value, l.decision_time());
    let stars = perturbations(&l).expect("small family");
    println!("{} perturbations, fluc ratio {:.3}", stars.len(), fluc_ratio::<f64>(&l, h).expect("in family"));
}
