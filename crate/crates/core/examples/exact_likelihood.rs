//! Exact marginal likelihood of a dataset versus the per-cell surrogate, and
//! the likelihood trace of a fit under both E-steps.

use dojoba::synth::{sample_dataset, Sessions, SynthSpec};
use dojoba::{
    cell_surrogate_loglik, exact_marginal_loglik, fit, Covariance, DoJoBaParams, EStepKind,
    FitConfig,
};
use nalgebra::dvector;

fn main() -> dojoba::Result<()> {
    let truth = DoJoBaParams::new(
        dvector![0.0, 1.0, -1.0],
        Covariance::diagonal(dvector![0.7, 0.3, 1.2])?,
        Covariance::diagonal(dvector![0.5, 0.9, 0.2])?,
        Covariance::diagonal(dvector![0.3, 0.3, 0.3])?,
    )?;
    let spec = SynthSpec {
        speakers: 50,
        phrases: 8,
        sessions: Sessions::Constant(2),
        params: truth.clone(),
        seed: 3,
    };
    let (data, _) = sample_dataset(&spec)?;
    println!(
        "exact     log p(X | truth) = {:.4}",
        exact_marginal_loglik(&data, &truth)?
    );
    println!(
        "surrogate log p(X | truth) = {:.4}",
        cell_surrogate_loglik(&data, &truth)?
    );

    for estep in [EStepKind::Exact, EStepKind::Conditional] {
        let (_, diag) = fit(
            &data,
            &FitConfig {
                iterations: 15,
                estep,
                ..Default::default()
            },
        )?;
        let trace: Vec<String> = diag
            .log_likelihoods()
            .iter()
            .map(|l| format!("{l:.3}"))
            .collect();
        println!(
            "{estep:?}: {:.3} -> {}",
            diag.initial_log_likelihood,
            trace.join(" ")
        );
    }
    Ok(())
}
