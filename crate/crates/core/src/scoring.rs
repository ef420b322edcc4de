//! Verification scores: the two-latent log-likelihood ratio, the
//! single-latent baseline ratio, cosine similarity, and enrollment
//! averaging.

use nalgebra::DVector;

use crate::error::{check_dim, Error, Result};
use crate::gaussian::{Covariance, PairGaussian};
use crate::params::{DoJoBaParams, JBParams};

/// Prior weights of the three alternative sub-models: different speaker
/// with the same phrase (`p1`), same speaker with a different phrase (`p2`),
/// and both different (`p3`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HypothesisPriors {
    p1: f64,
    p2: f64,
    p3: f64,
}

impl HypothesisPriors {
    pub fn new(p1: f64, p2: f64, p3: f64) -> Result<Self> {
        let all = [p1, p2, p3];
        if all.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidPriors(format!(
                "negative or non-finite prior in {all:?}"
            )));
        }
        if ((p1 + p2 + p3) - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidPriors(format!("{all:?} does not sum to one")));
        }
        Ok(Self { p1, p2, p3 })
    }

    pub fn uniform() -> Self {
        Self {
            p1: 1.0 / 3.0,
            p2: 1.0 / 3.0,
            p3: 1.0 / 3.0,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.p1, self.p2, self.p3]
    }
}

impl Default for HypothesisPriors {
    fn default() -> Self {
        Self::uniform()
    }
}

impl std::str::FromStr for HypothesisPriors {
    type Err = Error;

    /// Parses `p1,p2,p3`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidPriors(format!("{s:?}: {e}")))?;
        match parts[..] {
            [p1, p2, p3] => Self::new(p1, p2, p3),
            _ => Err(Error::InvalidPriors(format!(
                "{s:?}: expected three values"
            ))),
        }
    }
}

/// Something that scores an enrollment model against a test vector; higher
/// means more likely the same speaker and phrase.
pub trait Scorer: Sync {
    fn name(&self) -> &str;
    fn score(&self, enroll: &DVector<f64>, test: &DVector<f64>) -> Result<f64>;
}

/// Joint log-densities `log p(x_s, x_t | ·)` of a pair under the
/// shared-latent hypothesis and the three alternatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HypothesisLogDensities {
    /// Same speaker and same phrase.
    pub h0: f64,
    /// Different speaker, same phrase.
    pub m1: f64,
    /// Same speaker, different phrase.
    pub m2: f64,
    /// Both different.
    pub m3: f64,
}

/// Two-latent ratio with the four pair densities factored once.
#[derive(Debug, Clone)]
pub struct DoJoBaScorer {
    mu: DVector<f64>,
    same: PairGaussian,
    alternatives: [PairGaussian; 3],
    weights: [f64; 3],
}

impl DoJoBaScorer {
    pub fn new(params: &DoJoBaParams, priors: HypothesisPriors) -> Result<Self> {
        let a = params.total_covariance();
        let zero = Covariance::zeros(params.dim(), params.sigma_u.kind());
        Ok(Self {
            mu: params.mu.clone(),
            same: PairGaussian::new(&a, &params.sigma_u.add(&params.sigma_v))?,
            alternatives: [
                PairGaussian::new(&a, &params.sigma_v)?,
                PairGaussian::new(&a, &params.sigma_u)?,
                PairGaussian::new(&a, &zero)?,
            ],
            weights: priors.as_array(),
        })
    }

    pub fn log_densities(
        &self,
        x_s: &DVector<f64>,
        x_t: &DVector<f64>,
    ) -> Result<HypothesisLogDensities> {
        check_dim(self.mu.len(), x_s.len())?;
        check_dim(self.mu.len(), x_t.len())?;
        let dt = x_t - &self.mu;
        let ds = x_s - &self.mu;
        let [m1, m2, m3] = self
            .alternatives
            .each_ref()
            .map(|g| g.log_density_centered(&dt, &ds));
        Ok(HypothesisLogDensities {
            h0: self.same.log_density_centered(&dt, &ds),
            m1,
            m2,
            m3,
        })
    }

    /// Log-likelihood ratio of the shared-latent hypothesis against the
    /// prior-weighted alternatives. Symmetric in its arguments.
    pub fn score_pair(&self, x_s: &DVector<f64>, x_t: &DVector<f64>) -> Result<f64> {
        check_dim(self.mu.len(), x_s.len())?;
        check_dim(self.mu.len(), x_t.len())?;
        let dt = x_t - &self.mu;
        let ds = x_s - &self.mu;
        let same = self.same.log_density_centered(&dt, &ds);
        // Alternatives with zero prior are skipped, not weighted by zero, so
        // an identical density gives an exact zero difference.
        let mut deltas = [f64::NEG_INFINITY; 3];
        for (k, g) in self.alternatives.iter().enumerate() {
            if self.weights[k] > 0.0 {
                deltas[k] = g.log_density_centered(&dt, &ds) - same;
            }
        }
        let max = deltas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut weighted = 0.0;
        let mut total = 0.0;
        for (p, d) in self.weights.iter().zip(&deltas) {
            if *p > 0.0 {
                weighted += p * (d - max).exp();
                total += p;
            }
        }
        Ok(0.0 - (max + (weighted / total).ln()))
    }
}

impl Scorer for DoJoBaScorer {
    fn name(&self) -> &str {
        "DoJoBa"
    }

    fn score(&self, enroll: &DVector<f64>, test: &DVector<f64>) -> Result<f64> {
        self.score_pair(enroll, test)
    }
}

/// Single-latent ratio with both pair densities factored once.
#[derive(Debug, Clone)]
pub struct JBScorer {
    mu: DVector<f64>,
    same: PairGaussian,
    different: PairGaussian,
}

impl JBScorer {
    pub fn new(params: &JBParams) -> Result<Self> {
        let a = params.sigma_z.add(&params.sigma_eps);
        let zero = Covariance::zeros(params.dim(), params.sigma_z.kind());
        Ok(Self {
            mu: params.mu.clone(),
            same: PairGaussian::new(&a, &params.sigma_z)?,
            different: PairGaussian::new(&a, &zero)?,
        })
    }

    pub fn score_pair(&self, x_s: &DVector<f64>, x_t: &DVector<f64>) -> Result<f64> {
        check_dim(self.mu.len(), x_s.len())?;
        check_dim(self.mu.len(), x_t.len())?;
        let dt = x_t - &self.mu;
        let ds = x_s - &self.mu;
        Ok(
            self.same.log_density_centered(&dt, &ds)
                - self.different.log_density_centered(&dt, &ds),
        )
    }
}

impl Scorer for JBScorer {
    fn name(&self) -> &str {
        "joint Bayesian"
    }

    fn score(&self, enroll: &DVector<f64>, test: &DVector<f64>) -> Result<f64> {
        self.score_pair(enroll, test)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CosineScorer;

impl Scorer for CosineScorer {
    fn name(&self) -> &str {
        "cosine"
    }

    fn score(&self, enroll: &DVector<f64>, test: &DVector<f64>) -> Result<f64> {
        score_cosine(enroll, test)
    }
}

/// `log l(x_t, x_s)` under the two-latent model.
pub fn score_dojoba(
    params: &DoJoBaParams,
    x_s: &DVector<f64>,
    x_t: &DVector<f64>,
    priors: HypothesisPriors,
) -> Result<f64> {
    DoJoBaScorer::new(params, priors)?.score_pair(x_s, x_t)
}

/// Same-class versus different-class log-likelihood ratio.
pub fn score_jb(params: &JBParams, x_s: &DVector<f64>, x_t: &DVector<f64>) -> Result<f64> {
    JBScorer::new(params)?.score_pair(x_s, x_t)
}

pub fn score_cosine(x_s: &DVector<f64>, x_t: &DVector<f64>) -> Result<f64> {
    check_dim(x_s.len(), x_t.len())?;
    let (ns, nt) = (x_s.norm(), x_t.norm());
    if ns == 0.0 || nt == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((x_s.dot(x_t) / (ns * nt)).clamp(-1.0, 1.0))
}

/// Element-wise mean of the enrollment vectors.
pub fn enroll_average<'a, I>(vectors: I) -> Result<DVector<f64>>
where
    I: IntoIterator<Item = &'a DVector<f64>>,
{
    let mut iter = vectors.into_iter();
    let first = iter.next().ok_or(Error::Empty("no enrollment vectors"))?;
    let mut sum = first.clone();
    let mut count = 1usize;
    for v in iter {
        check_dim(sum.len(), v.len())?;
        sum += v;
        count += 1;
    }
    Ok(sum / count as f64)
}
