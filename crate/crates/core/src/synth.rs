//! Sampling from the generative model `x_ijk = mu + u_i + v_j + eps_ijk`.
//!
//! Randomness is drawn from ChaCha20 substreams keyed by the spec seed: the
//! stream id is `tag << 56 | index`, with tag 1 for speaker latents (index
//! `i`), tag 2 for phrase latents (index `j`) and tag 3 for noise (index =
//! output row). Each entity therefore gets the same draws regardless of
//! generation order or parallelism.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::data::{Dataset, LabeledVector};
use crate::error::{check_dim, Error, Result};
use crate::gaussian::Covariance;
use crate::params::DoJoBaParams;

const SPEAKER_STREAM: u64 = 1;
const PHRASE_STREAM: u64 = 2;
const NOISE_STREAM: u64 = 3;

/// Sessions per (speaker, phrase) cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Sessions {
    Constant(usize),
    /// Explicit counts; missing cells have no sessions.
    PerCell(HashMap<(usize, usize), usize>),
}

impl Sessions {
    pub fn count(&self, speaker: usize, phrase: usize) -> usize {
        match self {
            Sessions::Constant(h) => *h,
            Sessions::PerCell(m) => m.get(&(speaker, phrase)).copied().unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub speakers: usize,
    pub phrases: usize,
    pub sessions: Sessions,
    pub params: DoJoBaParams,
    pub seed: u64,
}

impl SynthSpec {
    pub fn dim(&self) -> usize {
        self.params.dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.speakers == 0 || self.phrases == 0 {
            return Err(Error::invalid(
                "speaker and phrase counts must be at least 1",
            ));
        }
        if let Sessions::Constant(0) = self.sessions {
            return Err(Error::invalid("sessions per cell must be at least 1"));
        }
        if self.dim() == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        Ok(())
    }
}

/// The latent draws behind a sampled dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Latents {
    pub speakers: Vec<DVector<f64>>,
    pub phrases: Vec<DVector<f64>>,
}

pub fn speaker_label(i: usize) -> String {
    format!("spk{i:04}")
}

pub fn phrase_label(j: usize) -> String {
    format!("phr{j:03}")
}

/// Maps standard normal draws to a covariance: elementwise square root for
/// diagonal, symmetric square root (so semidefinite inputs work) for full.
struct Sampler {
    root: SamplerRoot,
}

enum SamplerRoot {
    Diagonal(DVector<f64>),
    Full(DMatrix<f64>),
}

impl Sampler {
    fn new(cov: &Covariance) -> Result<Self> {
        let root = match cov {
            Covariance::Diagonal(v) => SamplerRoot::Diagonal(v.map(f64::sqrt)),
            Covariance::Full(m) => {
                let eig = SymmetricEigen::new(m.clone());
                let scale = eig.eigenvalues.amax().max(1.0);
                if let Some(d) = eig.eigenvalues.iter().position(|&l| l < -1e-12 * scale) {
                    return Err(Error::NotPositiveDefinite {
                        pivot: d,
                        value: eig.eigenvalues[d],
                    });
                }
                let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
                SamplerRoot::Full(&eig.eigenvectors * DMatrix::from_diagonal(&roots))
            }
        };
        Ok(Self { root })
    }

    fn draw(&self, rng: &mut ChaCha20Rng) -> DVector<f64> {
        let dim = match &self.root {
            SamplerRoot::Diagonal(v) => v.len(),
            SamplerRoot::Full(m) => m.nrows(),
        };
        let z = DVector::from_fn(dim, |_, _| StandardNormal.sample(rng));
        match &self.root {
            SamplerRoot::Diagonal(s) => z.component_mul(s),
            SamplerRoot::Full(r) => r * z,
        }
    }
}

fn stream(seed: u64, tag: u64, index: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream((tag << 56) | index as u64);
    rng
}

/// Draws a dataset together with its latent variables. Rows are ordered by
/// speaker, then phrase, then session.
pub fn sample_dataset(spec: &SynthSpec) -> Result<(Dataset, Latents)> {
    spec.validate()?;
    let p = &spec.params;
    check_dim(p.dim(), p.sigma_u.dim())?;
    let su = Sampler::new(&p.sigma_u)?;
    let sv = Sampler::new(&p.sigma_v)?;
    let se = Sampler::new(&p.sigma_eps)?;

    let speakers: Vec<DVector<f64>> = (0..spec.speakers)
        .map(|i| su.draw(&mut stream(spec.seed, SPEAKER_STREAM, i)))
        .collect();
    let phrases: Vec<DVector<f64>> = (0..spec.phrases)
        .map(|j| sv.draw(&mut stream(spec.seed, PHRASE_STREAM, j)))
        .collect();

    let mut layout = Vec::new();
    for i in 0..spec.speakers {
        for j in 0..spec.phrases {
            for k in 0..spec.sessions.count(i, j) {
                layout.push((i, j, k));
            }
        }
    }
    if layout.is_empty() {
        return Err(Error::invalid("session layout produces no vectors"));
    }
    let vectors: Vec<LabeledVector> = layout
        .par_iter()
        .enumerate()
        .map(|(row, &(i, j, k))| {
            let eps = se.draw(&mut stream(spec.seed, NOISE_STREAM, row));
            let x = &p.mu + &speakers[i] + &phrases[j] + eps;
            let (s, ph) = (speaker_label(i), phrase_label(j));
            let session = format!("{s}-{ph}-{k:03}");
            LabeledVector::new(x, s, ph, session)
        })
        .collect::<Result<_>>()?;
    Ok((Dataset::new(vectors)?, Latents { speakers, phrases }))
}
