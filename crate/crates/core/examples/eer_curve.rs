//! EER and DET points for two overlapping Gaussian score distributions.

use dojoba::compute_eer;
use dojoba::eval::det_points;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

fn main() -> dojoba::Result<()> {
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let tar = Normal::new(2.0, 1.0).unwrap();
    let non = Normal::new(0.0, 1.0).unwrap();
    let targets: Vec<f64> = (0..5000).map(|_| tar.sample(&mut rng)).collect();
    let nontargets: Vec<f64> = (0..50000).map(|_| non.sample(&mut rng)).collect();

    let eer = compute_eer(&targets, &nontargets)?;
    // Equal-variance case: the EER is Φ(-1) ≈ 15.87%.
    println!(
        "EER {:.3}% at threshold {:.4}",
        eer.eer_percent, eer.threshold
    );

    let det = det_points(&targets, &nontargets)?;
    let step = det.len() / 10;
    println!("threshold      far      frr");
    for p in det.iter().step_by(step.max(1)) {
        println!("{:9.4} {:8.4} {:8.4}", p.threshold, p.far, p.frr);
    }
    Ok(())
}
