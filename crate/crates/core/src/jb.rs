//! Single-latent joint Bayesian baseline, `x = mu + z_class + eps`.
//!
//! Training relabels every vector with its class as the "speaker" and runs
//! the two-latent EM with the phrase latent switched off, so both models
//! share one code path.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LabeledVector};
use crate::em::{self, FitConfig, FitDiagnostics, Latents};
use crate::error::{Error, Result};
use crate::params::JBParams;

/// How vectors are grouped into classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ClassMode {
    /// One class per (speaker, phrase) pair.
    #[default]
    SpeakerPhrase,
    /// One class per speaker.
    Speaker,
}

impl std::str::FromStr for ClassMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "speaker-phrase" => Ok(ClassMode::SpeakerPhrase),
            "speaker" => Ok(ClassMode::Speaker),
            other => Err(Error::invalid(format!("unknown class mode {other:?}"))),
        }
    }
}

/// A partition of a dataset into classes.
#[derive(Debug, Clone)]
pub struct ClassView {
    pub mode: ClassMode,
    /// Class id to member indices in the source dataset, sorted by id.
    pub classes: BTreeMap<String, Vec<usize>>,
}

impl ClassView {
    pub fn new(data: &Dataset, mode: ClassMode) -> Self {
        let mut classes: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (n, v) in data.vectors().iter().enumerate() {
            classes.entry(class_id(v, mode)).or_default().push(n);
        }
        Self { mode, classes }
    }

    /// Dataset whose speaker label is the class id. The phrase label is kept
    /// but plays no role once the phrase latent is disabled.
    pub fn relabel(&self, data: &Dataset) -> Result<Dataset> {
        let vectors = data
            .vectors()
            .iter()
            .map(|v| LabeledVector {
                speaker_id: class_id(v, self.mode),
                ..v.clone()
            })
            .collect();
        Dataset::new(vectors)
    }
}

fn class_id(v: &LabeledVector, mode: ClassMode) -> String {
    match mode {
        // The unit separator cannot collide with printable ids.
        ClassMode::SpeakerPhrase => format!("{}\u{1f}{}", v.speaker_id, v.phrase_id),
        ClassMode::Speaker => v.speaker_id.clone(),
    }
}

/// Configuration of the constrained two-latent fit that implements the
/// baseline.
pub fn constrained_config(cfg: &FitConfig) -> FitConfig {
    FitConfig {
        latents: Latents::SpeakerOnly,
        // With one latent the conditional E-step is already the exact posterior.
        estep: em::EStepKind::Conditional,
        ..cfg.clone()
    }
}

pub fn fit_jb_with_diagnostics(
    data: &Dataset,
    cfg: &FitConfig,
    mode: ClassMode,
) -> Result<(JBParams, FitDiagnostics)> {
    let relabeled = ClassView::new(data, mode).relabel(data)?;
    let (p, diag) = em::fit(&relabeled, &constrained_config(cfg))?;
    Ok((JBParams::new(p.mu, p.sigma_u, p.sigma_eps)?, diag))
}

pub fn fit_jb(data: &Dataset, cfg: &FitConfig, mode: ClassMode) -> Result<JBParams> {
    fit_jb_with_diagnostics(data, cfg, mode).map(|(p, _)| p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::ClassAxis;
    use nalgebra::dvector;

    fn lv(x: f64, s: &str, p: &str, k: usize) -> LabeledVector {
        LabeledVector::new(dvector![x], s, p, k.to_string()).unwrap()
    }

    #[test]
    fn class_view_partitions() {
        let data = Dataset::new(vec![
            lv(1.0, "a", "x", 0),
            lv(2.0, "a", "y", 1),
            lv(3.0, "b", "x", 2),
            lv(4.0, "a", "x", 3),
        ])
        .unwrap();
        let joint = ClassView::new(&data, ClassMode::SpeakerPhrase);
        assert_eq!(joint.classes.len(), 3);
        let mut all: Vec<usize> = joint.classes.values().flatten().copied().collect();
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3]);
        assert_eq!(ClassView::new(&data, ClassMode::Speaker).classes.len(), 2);
        let relabeled = joint.relabel(&data).unwrap();
        assert_eq!(relabeled.num_speakers(), 3);
    }

    #[test]
    fn needs_two_classes() {
        let data = Dataset::new(vec![lv(1.0, "a", "x", 0), lv(1.0, "a", "x", 1)]).unwrap();
        let err = fit_jb(&data, &FitConfig::default(), ClassMode::SpeakerPhrase).unwrap_err();
        assert!(matches!(
            err,
            Error::InsufficientClasses {
                axis: ClassAxis::Speaker,
                ..
            }
        ));
    }

    #[test]
    fn identical_vectors_put_noise_at_floor() {
        let data = Dataset::new(vec![
            lv(2.0, "a", "x", 0),
            lv(2.0, "a", "x", 1),
            lv(2.0, "b", "x", 2),
        ])
        .unwrap();
        let cfg = FitConfig {
            variance_floor: 1e-9,
            ..Default::default()
        };
        let p = fit_jb(&data, &cfg, ClassMode::SpeakerPhrase).unwrap();
        assert_eq!(p.sigma_eps.diagonal_values(), dvector![1e-9]);
    }
}
