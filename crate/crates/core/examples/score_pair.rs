//! Score a few hand-picked pairs and show the per-hypothesis densities.

use dojoba::{
    score_cosine, score_jb, Covariance, DoJoBaParams, DoJoBaScorer, HypothesisPriors, JBParams,
};
use nalgebra::dvector;

fn main() -> dojoba::Result<()> {
    let p = DoJoBaParams::new(
        dvector![0.0, 0.0],
        Covariance::isotropic(2, 1.0)?,
        Covariance::isotropic(2, 0.5)?,
        Covariance::isotropic(2, 0.1)?,
    )?;
    let jb = JBParams::new(p.mu.clone(), p.sigma_u.add(&p.sigma_v), p.sigma_eps.clone())?;
    let scorer = DoJoBaScorer::new(&p, HypothesisPriors::uniform())?;

    let enroll = dvector![1.0, 0.5];
    let pairs = [
        ("near copy", dvector![1.05, 0.45]),
        ("shifted", dvector![0.2, -0.4]),
        ("opposite", dvector![-1.0, -0.5]),
    ];
    for (name, test) in pairs {
        let h = scorer.log_densities(&enroll, &test)?;
        println!(
            "{name:10} dojoba {:8.3}  jb {:8.3}  cosine {:6.3}   log p: same {:.2} m1 {:.2} m2 {:.2} m3 {:.2}",
            scorer.score_pair(&enroll, &test)?,
            score_jb(&jb, &enroll, &test)?,
            score_cosine(&enroll, &test)?,
            h.h0,
            h.m1,
            h.m2,
            h.m3,
        );
    }
    Ok(())
}
