//! Two-latent ("double joint Bayesian") Gaussian back-end for embeddings
//! labeled by speaker and phrase.
//!
//! Every vector is modeled as `x = mu + u_speaker + v_phrase + eps` with
//! Gaussian latents. The crate fits the model by EM, scores verification
//! trials with a closed-form likelihood ratio, and ships the single-latent
//! joint Bayesian and cosine baselines, a synthetic data generator and an
//! EER harness.
//!
//! ```
//! use dojoba::{score_dojoba, Covariance, DoJoBaParams, HypothesisPriors};
//! use nalgebra::dvector;
//!
//! let p = DoJoBaParams::new(
//!     dvector![0.0, 0.0],
//!     Covariance::isotropic(2, 1.0)?,
//!     Covariance::isotropic(2, 0.5)?,
//!     Covariance::isotropic(2, 0.1)?,
//! )?;
//! let close = score_dojoba(&p, &dvector![1.0, 0.2], &dvector![1.1, 0.1], HypothesisPriors::uniform())?;
//! let far = score_dojoba(&p, &dvector![1.0, 0.2], &dvector![-1.0, 2.0], HypothesisPriors::uniform())?;
//! assert!(close > far);
//! # Ok::<(), dojoba::Error>(())
//! ```

pub mod cli;
pub mod data;
pub mod em;
pub mod error;
pub mod eval;
pub mod formats;
pub mod gaussian;
pub mod jb;
pub mod params;
pub mod preprocess;
pub mod scoring;
pub mod synth;

pub use data::{Dataset, LabeledVector, PairCell};
pub use em::{
    cell_surrogate_loglik, e_step_exact, exact_marginal_loglik, fit, pair_posterior, EStepKind,
    FitConfig, FitDiagnostics, Normalization,
};
pub use error::{Error, ErrorCategory, Result};
pub use eval::{
    build_trials, compute_eer, enroll_models, evaluate, Condition, EerPoint, ScoreReport,
};
pub use formats::{ModelFile, ModelParams};
pub use gaussian::{log_gaussian, log_gaussian_pair, Covariance, CovarianceKind};
pub use jb::{fit_jb, ClassMode};
pub use params::{DoJoBaParams, JBParams};
pub use preprocess::{whiten_apply, whiten_fit, Projection};
pub use scoring::{
    enroll_average, score_cosine, score_dojoba, score_jb, CosineScorer, DoJoBaScorer,
    HypothesisLogDensities, HypothesisPriors, JBScorer, Scorer,
};
pub use synth::{sample_dataset, Sessions, SynthSpec};
