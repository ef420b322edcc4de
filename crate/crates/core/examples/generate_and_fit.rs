//! Sample a synthetic corpus, fit both back-ends and compare the estimates
//! with the generating parameters.

use dojoba::synth::{sample_dataset, Sessions, SynthSpec};
use dojoba::{fit, fit_jb, ClassMode, Covariance, DoJoBaParams, FitConfig};
use nalgebra::dvector;

fn main() -> dojoba::Result<()> {
    let truth = DoJoBaParams::new(
        dvector![1.0, -0.5, 2.0, 0.0],
        Covariance::diagonal(dvector![1.0, 0.6, 0.3, 0.8])?,
        Covariance::diagonal(dvector![0.4, 0.9, 0.2, 0.5])?,
        Covariance::diagonal(dvector![0.2, 0.2, 0.4, 0.1])?,
    )?;
    let spec = SynthSpec {
        speakers: 200,
        phrases: 10,
        sessions: Sessions::Constant(3),
        params: truth.clone(),
        seed: 7,
    };
    let (data, _) = sample_dataset(&spec)?;
    println!(
        "{} vectors, {} speakers, {} phrases",
        data.len(),
        data.num_speakers(),
        data.num_phrases()
    );

    let cfg = FitConfig::default();
    let (p, diag) = fit(&data, &cfg)?;
    println!("E-step: {:?}", diag.estep);
    for (k, r) in diag.iterations.iter().enumerate() {
        println!("iter {:2}  loglik {:.3}", k + 1, r.log_likelihood);
    }
    println!(
        "sigma_u   true {:?}",
        truth.sigma_u.diagonal_values().as_slice()
    );
    println!(
        "          est  {:?}",
        p.sigma_u.diagonal_values().as_slice()
    );
    println!(
        "sigma_v   true {:?}",
        truth.sigma_v.diagonal_values().as_slice()
    );
    println!(
        "          est  {:?}",
        p.sigma_v.diagonal_values().as_slice()
    );
    println!(
        "sigma_eps true {:?}",
        truth.sigma_eps.diagonal_values().as_slice()
    );
    println!(
        "          est  {:?}",
        p.sigma_eps.diagonal_values().as_slice()
    );

    let jb = fit_jb(&data, &cfg, ClassMode::SpeakerPhrase)?;
    println!(
        "JB sigma_z    {:?}",
        jb.sigma_z.diagonal_values().as_slice()
    );
    println!(
        "JB sigma_eps  {:?}",
        jb.sigma_eps.diagonal_values().as_slice()
    );
    Ok(())
}
