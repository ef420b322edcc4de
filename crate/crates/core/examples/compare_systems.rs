//! Train on one speaker population, evaluate on held-out speakers and print
//! the per-condition EER table for DoJoBa, JB and cosine.

use dojoba::eval::format_table;
use dojoba::synth::{sample_dataset, Sessions, SynthSpec};
use dojoba::{
    enroll_models, evaluate, fit, fit_jb, ClassMode, CosineScorer, Covariance, DoJoBaParams,
    DoJoBaScorer, FitConfig, HypothesisPriors, JBScorer, LabeledVector,
};
use nalgebra::DVector;

fn main() -> dojoba::Result<()> {
    let d = 10;
    let truth = DoJoBaParams::new(
        DVector::from_element(d, 2.0),
        Covariance::diagonal(DVector::from_fn(d, |k, _| 0.2 + 0.08 * k as f64))?,
        Covariance::diagonal(DVector::from_fn(d, |k, _| 1.0 - 0.08 * k as f64))?,
        Covariance::isotropic(d, 1.0)?,
    )?;
    let spec = |speakers, seed| SynthSpec {
        speakers,
        phrases: 10,
        sessions: Sessions::Constant(6),
        params: truth.clone(),
        seed,
    };
    let (train, _) = sample_dataset(&spec(100, 1))?;
    let (held, _) = sample_dataset(&spec(30, 2))?;

    // First three sessions enroll, the rest are test vectors.
    let session = |v: &LabeledVector| {
        v.session_id
            .rsplit('-')
            .next()
            .and_then(|s| s.parse::<usize>().ok())
    };
    let (enroll, test): (Vec<_>, Vec<_>) = held
        .vectors()
        .iter()
        .cloned()
        .partition(|v| session(v).unwrap_or(0) < 3);
    let enrollments = enroll_models(&enroll)?;

    let cfg = FitConfig::default();
    let (dp, _) = fit(&train, &cfg)?;
    let jp = fit_jb(&train, &cfg, ClassMode::SpeakerPhrase)?;
    let reports = vec![
        evaluate(
            &DoJoBaScorer::new(&dp, HypothesisPriors::uniform())?,
            &enrollments,
            &test,
        )?,
        evaluate(&JBScorer::new(&jp)?, &enrollments, &test)?,
        evaluate(&CosineScorer, &enrollments, &test)?,
    ];
    print!("{}", format_table(&reports));
    println!("{} trials", reports[0].trial_count);
    Ok(())
}
