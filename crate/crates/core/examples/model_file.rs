//! Write a trained model to JSON, read it back and confirm the parameters
//! are bit-identical.

use dojoba::formats::{params_digest, TrainingMetadata};
use dojoba::synth::{sample_dataset, Sessions, SynthSpec};
use dojoba::{fit, Covariance, DoJoBaParams, FitConfig, ModelFile, ModelParams, Normalization};
use nalgebra::dvector;

fn main() -> dojoba::Result<()> {
    let truth = DoJoBaParams::new(
        dvector![0.1, 0.2],
        Covariance::isotropic(2, 1.0)?,
        Covariance::isotropic(2, 0.5)?,
        Covariance::isotropic(2, 0.2)?,
    )?;
    let spec = SynthSpec {
        speakers: 30,
        phrases: 5,
        sessions: Sessions::Constant(2),
        params: truth,
        seed: 9,
    };
    let (data, _) = sample_dataset(&spec)?;
    let cfg = FitConfig::default();
    let (p, _) = fit(&data, &cfg)?;

    let model = ModelFile {
        params: ModelParams::DoJoBa(p.clone()),
        projection: None,
        training: TrainingMetadata {
            iterations: cfg.iterations,
            seed: cfg.seed,
            dataset_digest: "example".into(),
            normalization: Normalization::Paper,
            class_mode: None,
        },
    };
    let text = model.to_json();
    println!("{text}");
    let back = ModelFile::from_json(&text)?;
    assert_eq!(back, model);
    println!("round trip ok, params sha256 {}", params_digest(&p));
    Ok(())
}
