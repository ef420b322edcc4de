//! EM training of the two-latent model.
//!
//! Two E-steps are available. [`e_step`] follows the closed-form updates:
//! the speaker posterior conditions on the current phrase expectations and
//! the phrase posterior on the current speaker expectations, both taken from
//! the previous E-step (zeros on the first pass), and the speaker-phrase
//! cross moment comes from the joint posterior of `(u_i, v_j)` given only
//! the `H_ij` sessions of that cell. Its moments are conditional rather than
//! marginal, so the likelihood need not increase monotonically.
//! [`e_step_exact`] takes every moment from the joint posterior of all
//! speaker and phrase latents, which makes each iteration a true EM step;
//! it needs diagonal covariances and a bounded latent count.
//!
//! All posteriors are computed in covariance form,
//! `Σ_prior (Σ_prior + Σ_noise / n)⁻¹`, which is algebraically the precision
//! form but tolerates zero prior variances.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{check_dim, ClassAxis, Error, Result};
use crate::gaussian::{cholesky, Covariance, CovarianceKind, GaussianFactor, LN_2PI};
use crate::params::DoJoBaParams;

/// Largest latent count (speakers + phrases) accepted by
/// [`exact_marginal_loglik`].
pub const MAX_EXACT_LATENTS: usize = 2000;

/// How the speaker and phrase second moments are averaged in the M-step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Divide by the total sample count; each speaker (phrase) moment is
    /// weighted by its number of vectors.
    #[default]
    Paper,
    /// Plain average over distinct speakers (phrases).
    PerClass,
}

impl std::str::FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Normalization::Paper),
            "per-class" => Ok(Normalization::PerClass),
            other => Err(Error::invalid(format!("unknown normalization {other:?}"))),
        }
    }
}

/// Which E-step [`fit`] runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EStepKind {
    /// [`EStepKind::Exact`] when the covariances are diagonal, both latents
    /// are active and the latent count is at most [`MAX_EXACT_LATENTS`];
    /// [`EStepKind::Conditional`] otherwise.
    #[default]
    Auto,
    /// Joint posterior over all latents ([`e_step_exact`]).
    Exact,
    /// Alternating conditional expectations ([`e_step`]).
    Conditional,
}

impl std::str::FromStr for EStepKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(EStepKind::Auto),
            "exact" => Ok(EStepKind::Exact),
            "conditional" => Ok(EStepKind::Conditional),
            other => Err(Error::invalid(format!("unknown E-step {other:?}"))),
        }
    }
}

/// Which latent variables are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Latents {
    #[default]
    SpeakerAndPhrase,
    /// `v ≡ 0`: `Σv` is pinned to the variance floor and every phrase
    /// statistic is zero. This is the single-latent model.
    SpeakerOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub iterations: usize,
    pub covariance: CovarianceKind,
    /// Absolute variance floor; the effective floor is never below
    /// `RELATIVE_FLOOR * trace / D` of the matrix being floored.
    pub variance_floor: f64,
    pub seed: u64,
    /// Relative multiplicative jitter applied to the initial variances.
    pub init_jitter: f64,
    pub normalization: Normalization,
    pub latents: Latents,
    /// Stop once every parameter moves less than this (Frobenius norm).
    pub early_stop: Option<f64>,
    pub estep: EStepKind,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            covariance: CovarianceKind::Diagonal,
            variance_floor: 1e-10,
            seed: 0,
            init_jitter: 0.0,
            normalization: Normalization::Paper,
            latents: Latents::SpeakerAndPhrase,
            early_stop: None,
            estep: EStepKind::Auto,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be at least 1"));
        }
        if !(self.variance_floor > 0.0) {
            return Err(Error::invalid("variance floor must be positive"));
        }
        if !(0.0..1.0).contains(&self.init_jitter) {
            return Err(Error::invalid("init jitter must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// A second moment: diagonal entries only, or the dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Moment {
    Diagonal(DVector<f64>),
    Full(DMatrix<f64>),
}

impl Moment {
    fn zeros(dim: usize, kind: CovarianceKind) -> Self {
        match kind {
            CovarianceKind::Diagonal => Moment::Diagonal(DVector::zeros(dim)),
            CovarianceKind::Full => Moment::Full(DMatrix::zeros(dim, dim)),
        }
    }

    /// `a bᵀ` (or its diagonal).
    fn outer(a: &DVector<f64>, b: &DVector<f64>, kind: CovarianceKind) -> Self {
        match kind {
            CovarianceKind::Diagonal => Moment::Diagonal(a.component_mul(b)),
            CovarianceKind::Full => Moment::Full(a * b.transpose()),
        }
    }

    fn add_scaled(&mut self, other: &Moment, w: f64) {
        match (self, other) {
            (Moment::Diagonal(a), Moment::Diagonal(b)) => a.axpy(w, b, 1.0),
            (Moment::Full(a), Moment::Full(b)) => *a += b * w,
            _ => unreachable!("moments of different kinds"),
        }
    }

    fn plus(mut self, other: &Moment) -> Self {
        self.add_scaled(other, 1.0);
        self
    }

    /// `M + Mᵀ` (twice the diagonal in diagonal storage).
    fn sym2(&self) -> Moment {
        match self {
            Moment::Diagonal(a) => Moment::Diagonal(a * 2.0),
            Moment::Full(a) => Moment::Full(a + a.transpose()),
        }
    }

    pub fn to_full(&self) -> DMatrix<f64> {
        match self {
            Moment::Diagonal(v) => DMatrix::from_diagonal(v),
            Moment::Full(m) => m.clone(),
        }
    }

    pub fn diagonal(&self) -> DVector<f64> {
        match self {
            Moment::Diagonal(v) => v.clone(),
            Moment::Full(m) => m.diagonal(),
        }
    }

    fn into_covariance(self) -> Covariance {
        match self {
            Moment::Diagonal(v) => Covariance::Diagonal(v),
            Moment::Full(m) => Covariance::Full(crate::gaussian::symmetrize(m)),
        }
    }

    fn from_covariance(c: &Covariance) -> Self {
        match c {
            Covariance::Diagonal(v) => Moment::Diagonal(v.clone()),
            Covariance::Full(m) => Moment::Full(m.clone()),
        }
    }
}

/// Posterior expectations produced by one E-step.
#[derive(Debug, Clone, PartialEq)]
pub struct EStats {
    pub kind: CovarianceKind,
    /// `E[u_i]`, per speaker.
    pub eu: Vec<DVector<f64>>,
    /// `E[u_i u_iᵀ]`, per speaker.
    pub euu: Vec<Moment>,
    /// `E[v_j]`, per phrase.
    pub ev: Vec<DVector<f64>>,
    /// `E[v_j v_jᵀ]`, per phrase.
    pub evv: Vec<Moment>,
    /// `E[u_i v_jᵀ]`, per cell in [`Dataset::cells`] order.
    pub euv: Vec<Moment>,
    /// Vectors per speaker, phrase and cell.
    pub speaker_counts: Vec<usize>,
    pub phrase_counts: Vec<usize>,
    pub cell_counts: Vec<usize>,
}

impl EStats {
    /// `E[u_i u_iᵀ] - E[u_i] E[u_i]ᵀ` as a dense matrix.
    pub fn speaker_posterior_cov(&self, i: usize) -> DMatrix<f64> {
        self.euu[i].to_full() - &self.eu[i] * self.eu[i].transpose()
    }

    pub fn phrase_posterior_cov(&self, j: usize) -> DMatrix<f64> {
        self.evv[j].to_full() - &self.ev[j] * self.ev[j].transpose()
    }
}

/// Posterior of a single latent `w ~ N(0, prior)` observed `count` times as
/// `w + noise`, given the mean residual. Returns `(E[w], Cov[w])`.
fn single_posterior(
    prior: &Covariance,
    noise: &Covariance,
    count: usize,
    mean_resid: &DVector<f64>,
) -> Result<(DVector<f64>, Moment)> {
    let n = count as f64;
    match (prior, noise) {
        (Covariance::Diagonal(p), Covariance::Diagonal(e)) => {
            let mut mean = DVector::zeros(p.len());
            let mut var = DVector::zeros(p.len());
            for d in 0..p.len() {
                let t = p[d] + e[d] / n;
                mean[d] = p[d] * mean_resid[d] / t;
                var[d] = p[d] * (e[d] / n) / t;
            }
            Ok((mean, Moment::Diagonal(var)))
        }
        _ => {
            let p = prior.to_full();
            let total = &p + noise.to_full() / n;
            let l = cholesky(&total)?;
            let gain_t = solve_spd(&l, &p); // T⁻¹ Σp
            let mean = gain_t.transpose() * mean_resid;
            let cov = &p - &p * &gain_t;
            Ok((mean, Moment::Full(crate::gaussian::symmetrize(cov))))
        }
    }
}

fn solve_spd(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let y = l.solve_lower_triangular(b).expect("positive pivots");
    l.transpose()
        .solve_upper_triangular(&y)
        .expect("positive pivots")
}

/// Joint posterior of `(u, v)` for one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct PairPosterior {
    pub mean_u: DVector<f64>,
    pub mean_v: DVector<f64>,
    pub cov_uu: Moment,
    pub cov_uv: Moment,
    pub cov_vv: Moment,
}

impl PairPosterior {
    /// `E[u vᵀ] = Cov[u, v] + E[u] E[v]ᵀ`.
    pub fn cross_moment(&self, kind: CovarianceKind) -> Moment {
        self.cov_uv
            .clone()
            .plus(&Moment::outer(&self.mean_u, &self.mean_v, kind))
    }
}

/// Exact posterior over `(u, v)` from the `count` sessions of one cell, with
/// `centered_sum = Σ_k (x_k - mu)`.
pub fn pair_posterior(
    params: &DoJoBaParams,
    centered_sum: &DVector<f64>,
    count: usize,
) -> Result<PairPosterior> {
    if count == 0 {
        return Err(Error::Empty("cell has no sessions"));
    }
    check_dim(params.dim(), centered_sum.len())?;
    let n = count as f64;
    let mean_x = centered_sum / n;
    match params.kind() {
        CovarianceKind::Diagonal => {
            let su = params.sigma_u.diagonal_values();
            let sv = params.sigma_v.diagonal_values();
            let se = params.sigma_eps.diagonal_values();
            let d = su.len();
            let (mut mu_u, mut mu_v) = (DVector::zeros(d), DVector::zeros(d));
            let (mut cuu, mut cuv, mut cvv) =
                (DVector::zeros(d), DVector::zeros(d), DVector::zeros(d));
            for k in 0..d {
                let t = su[k] + sv[k] + se[k] / n;
                mu_u[k] = su[k] * mean_x[k] / t;
                mu_v[k] = sv[k] * mean_x[k] / t;
                cuu[k] = su[k] * (sv[k] + se[k] / n) / t;
                cvv[k] = sv[k] * (su[k] + se[k] / n) / t;
                cuv[k] = -su[k] * sv[k] / t;
            }
            Ok(PairPosterior {
                mean_u: mu_u,
                mean_v: mu_v,
                cov_uu: Moment::Diagonal(cuu),
                cov_uv: Moment::Diagonal(cuv),
                cov_vv: Moment::Diagonal(cvv),
            })
        }
        CovarianceKind::Full => {
            let su = params.sigma_u.to_full();
            let sv = params.sigma_v.to_full();
            let total = &su + &sv + params.sigma_eps.to_full() / n;
            let l = cholesky(&total)?;
            let tu = solve_spd(&l, &su); // T⁻¹ Σu
            let tv = solve_spd(&l, &sv); // T⁻¹ Σv
            let mu_u = tu.transpose() * &mean_x;
            let mu_v = tv.transpose() * &mean_x;
            let cuu = &su - &su * &tu;
            let cvv = &sv - &sv * &tv;
            let cuv = -(&su * &tv);
            Ok(PairPosterior {
                mean_u: mu_u,
                mean_v: mu_v,
                cov_uu: Moment::Full(crate::gaussian::symmetrize(cuu)),
                cov_uv: Moment::Full(cuv),
                cov_vv: Moment::Full(crate::gaussian::symmetrize(cvv)),
            })
        }
    }
}

/// Per-cell sums `Σ_k (x - mu)`.
fn cell_sums(data: &Dataset, mu: &DVector<f64>) -> Vec<DVector<f64>> {
    data.cells()
        .iter()
        .map(|cell| {
            let mut s = DVector::zeros(data.dim());
            for &n in &cell.members {
                s += &data.vectors()[n].features - mu;
            }
            s
        })
        .collect()
}

fn check_params(data: &Dataset, params: &DoJoBaParams) -> Result<()> {
    check_dim(data.dim(), params.dim())?;
    GaussianFactor::new(&params.sigma_eps)?;
    Ok(())
}

/// One E-step. `prev` supplies the speaker and phrase expectations used to
/// condition each side; `None` means zeros.
pub fn e_step(
    data: &Dataset,
    params: &DoJoBaParams,
    prev: Option<&EStats>,
    latents: Latents,
) -> Result<EStats> {
    check_params(data, params)?;
    let kind = params.kind();
    let params = &promote(params, kind);
    let (ni, nj, dim) = (data.num_speakers(), data.num_phrases(), data.dim());
    if let Some(p) = prev {
        if p.eu.len() != ni || p.ev.len() != nj || p.kind != kind {
            return Err(Error::invalid("previous statistics do not match dataset"));
        }
    }
    let zero = DVector::<f64>::zeros(dim);
    let prev_ev = |j: usize| prev.map_or(&zero, |p| &p.ev[j]);
    let prev_eu = |i: usize| prev.map_or(&zero, |p| &p.eu[i]);

    let sums = cell_sums(data, &params.mu);
    let mut speaker_resid = vec![DVector::zeros(dim); ni];
    let mut phrase_resid = vec![DVector::zeros(dim); nj];
    for (cell, s) in data.cells().iter().zip(&sums) {
        let h = cell.count() as f64;
        speaker_resid[cell.speaker] += s - prev_ev(cell.phrase) * h;
        phrase_resid[cell.phrase] += s - prev_eu(cell.speaker) * h;
    }

    let mut eu = Vec::with_capacity(ni);
    let mut euu = Vec::with_capacity(ni);
    for (i, r) in speaker_resid.iter().enumerate() {
        let n = data.speaker_count(i);
        let (m, cov) = single_posterior(&params.sigma_u, &params.sigma_eps, n, &(r / n as f64))?;
        euu.push(cov.plus(&Moment::outer(&m, &m, kind)));
        eu.push(m);
    }

    let (ev, evv, euv) = match latents {
        Latents::SpeakerOnly => (
            vec![zero.clone(); nj],
            vec![Moment::zeros(dim, kind); nj],
            vec![Moment::zeros(dim, kind); data.cells().len()],
        ),
        Latents::SpeakerAndPhrase => {
            let mut ev = Vec::with_capacity(nj);
            let mut evv = Vec::with_capacity(nj);
            for (j, r) in phrase_resid.iter().enumerate() {
                let n = data.phrase_count(j);
                let (m, cov) =
                    single_posterior(&params.sigma_v, &params.sigma_eps, n, &(r / n as f64))?;
                evv.push(cov.plus(&Moment::outer(&m, &m, kind)));
                ev.push(m);
            }
            let euv = data
                .cells()
                .iter()
                .zip(&sums)
                .map(|(cell, s)| {
                    pair_posterior(params, s, cell.count()).map(|p| p.cross_moment(kind))
                })
                .collect::<Result<Vec<_>>>()?;
            (ev, evv, euv)
        }
    };

    Ok(EStats {
        kind,
        eu,
        euu,
        ev,
        evv,
        euv,
        speaker_counts: (0..ni).map(|i| data.speaker_count(i)).collect(),
        phrase_counts: (0..nj).map(|j| data.phrase_count(j)).collect(),
        cell_counts: data.cells().iter().map(|c| c.count()).collect(),
    })
}

fn promote(params: &DoJoBaParams, kind: CovarianceKind) -> DoJoBaParams {
    DoJoBaParams {
        mu: params.mu.clone(),
        sigma_u: params.sigma_u.to_kind(kind),
        sigma_v: params.sigma_v.to_kind(kind),
        sigma_eps: params.sigma_eps.to_kind(kind),
    }
}

/// One M-step. The output covariance kind follows `params_old`.
pub fn m_step(
    data: &Dataset,
    stats: &EStats,
    params_old: &DoJoBaParams,
    cfg: &FitConfig,
) -> Result<DoJoBaParams> {
    if stats.eu.is_empty() || stats.euu.is_empty() {
        return Err(Error::Empty("E-step statistics"));
    }
    if stats.eu.len() != data.num_speakers()
        || stats.ev.len() != data.num_phrases()
        || stats.euv.len() != data.cells().len()
    {
        return Err(Error::invalid("E-step statistics do not match dataset"));
    }
    check_dim(data.dim(), params_old.dim())?;
    let kind = stats.kind;
    let dim = data.dim();
    let total = data.len() as f64;

    let mu = data.mean();

    let mut sigma_u = Moment::zeros(dim, kind);
    for (i, m) in stats.euu.iter().enumerate() {
        let w = match cfg.normalization {
            Normalization::Paper => stats.speaker_counts[i] as f64 / total,
            Normalization::PerClass => 1.0 / stats.euu.len() as f64,
        };
        sigma_u.add_scaled(m, w);
    }
    let sigma_v = match cfg.latents {
        Latents::SpeakerOnly => {
            Moment::from_covariance(&Covariance::isotropic(dim, cfg.variance_floor)?.to_kind(kind))
        }
        Latents::SpeakerAndPhrase => {
            let mut acc = Moment::zeros(dim, kind);
            for (j, m) in stats.evv.iter().enumerate() {
                let w = match cfg.normalization {
                    Normalization::Paper => stats.phrase_counts[j] as f64 / total,
                    Normalization::PerClass => 1.0 / stats.evv.len() as f64,
                };
                acc.add_scaled(m, w);
            }
            acc
        }
    };

    // Σε = 1/N Σ_ijk [ r rᵀ - (r aᵀ + a rᵀ) + E[uuᵀ] + E[uvᵀ] + E[vuᵀ] + E[vvᵀ] ]
    // with r = x - mu and a = E[u_i] + E[v_j].
    let mut sigma_eps = Moment::zeros(dim, kind);
    for (c, cell) in data.cells().iter().enumerate() {
        let a = &stats.eu[cell.speaker] + &stats.ev[cell.phrase];
        let mut sum = DVector::zeros(dim);
        for &n in &cell.members {
            let r = &data.vectors()[n].features - &mu;
            sigma_eps.add_scaled(&Moment::outer(&r, &r, kind), 1.0);
            sum += r;
        }
        sigma_eps.add_scaled(&Moment::outer(&sum, &a, kind).sym2(), -1.0);
        let latent = stats.euu[cell.speaker]
            .clone()
            .plus(&stats.euv[c].sym2())
            .plus(&stats.evv[cell.phrase]);
        sigma_eps.add_scaled(&latent, cell.count() as f64);
    }
    sigma_eps = match sigma_eps {
        Moment::Diagonal(v) => Moment::Diagonal(v / total),
        Moment::Full(m) => Moment::Full(m / total),
    };

    let floor = cfg.variance_floor;
    let sigma_v = match cfg.latents {
        Latents::SpeakerOnly => sigma_v.into_covariance(),
        Latents::SpeakerAndPhrase => sigma_v.into_covariance().floored(floor),
    };
    DoJoBaParams::new(
        mu,
        sigma_u.into_covariance().floored(floor),
        sigma_v,
        sigma_eps.into_covariance().floored(floor),
    )
}

/// Checks the class-count preconditions shared by initialization and fit.
pub fn check_classes(data: &Dataset, latents: Latents) -> Result<()> {
    if data.num_speakers() < 2 {
        return Err(Error::InsufficientClasses {
            axis: ClassAxis::Speaker,
            found: data.num_speakers(),
            required: 2,
        });
    }
    if latents == Latents::SpeakerAndPhrase && data.num_phrases() < 2 {
        return Err(Error::InsufficientClasses {
            axis: ClassAxis::Phrase,
            found: data.num_phrases(),
            required: 2,
        });
    }
    let max_cell = data.cells().iter().map(|c| c.count()).max().unwrap_or(0);
    if max_cell < 2 {
        return Err(Error::InsufficientClasses {
            axis: ClassAxis::Sessions,
            found: max_cell,
            required: 2,
        });
    }
    Ok(())
}

/// Method-of-moments starting point: global mean, scatter of speaker and
/// phrase means, and the residual after removing both.
pub fn init_params(data: &Dataset, cfg: &FitConfig) -> Result<DoJoBaParams> {
    cfg.validate()?;
    check_classes(data, cfg.latents)?;
    let kind = cfg.covariance;
    let dim = data.dim();
    let mu = data.mean();

    let mut speaker_mean = vec![DVector::zeros(dim); data.num_speakers()];
    let mut phrase_mean = vec![DVector::zeros(dim); data.num_phrases()];
    for cell in data.cells() {
        for &n in &cell.members {
            let x = &data.vectors()[n].features;
            speaker_mean[cell.speaker] += x;
            phrase_mean[cell.phrase] += x;
        }
    }
    for (i, m) in speaker_mean.iter_mut().enumerate() {
        *m /= data.speaker_count(i) as f64;
    }
    for (j, m) in phrase_mean.iter_mut().enumerate() {
        *m /= data.phrase_count(j) as f64;
    }

    let scatter = |means: &[DVector<f64>]| {
        let mut acc = Moment::zeros(dim, kind);
        for m in means {
            let c = m - &mu;
            acc.add_scaled(&Moment::outer(&c, &c, kind), 1.0 / means.len() as f64);
        }
        acc.into_covariance()
    };
    let sigma_u = scatter(&speaker_mean);
    let sigma_v = match cfg.latents {
        Latents::SpeakerAndPhrase => scatter(&phrase_mean),
        Latents::SpeakerOnly => Covariance::isotropic(dim, cfg.variance_floor)?.to_kind(kind),
    };

    let mut resid = Moment::zeros(dim, kind);
    for cell in data.cells() {
        let shift = match cfg.latents {
            Latents::SpeakerAndPhrase => {
                &speaker_mean[cell.speaker] + &phrase_mean[cell.phrase] - &mu
            }
            Latents::SpeakerOnly => speaker_mean[cell.speaker].clone(),
        };
        for &n in &cell.members {
            let r = &data.vectors()[n].features - &shift;
            resid.add_scaled(&Moment::outer(&r, &r, kind), 1.0 / data.len() as f64);
        }
    }

    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut jitter = |c: Covariance| -> Covariance {
        if cfg.init_jitter == 0.0 {
            return c;
        }
        let f = DVector::from_fn(dim, |_, _| {
            (1.0 + cfg.init_jitter * rng.random_range(-1.0..1.0f64)).sqrt()
        });
        match c {
            Covariance::Diagonal(v) => Covariance::Diagonal(v.component_mul(&f).component_mul(&f)),
            Covariance::Full(m) => {
                let s = DMatrix::from_diagonal(&f);
                Covariance::Full(&s * m * &s)
            }
        }
    };

    let floor = cfg.variance_floor;
    let sigma_u = jitter(sigma_u).floored(floor);
    let sigma_v = match cfg.latents {
        Latents::SpeakerAndPhrase => jitter(sigma_v).floored(floor),
        Latents::SpeakerOnly => sigma_v,
    };
    let sigma_eps = jitter(resid.into_covariance()).floored(floor);
    DoJoBaParams::new(mu, sigma_u, sigma_v, sigma_eps)
}

/// Which objective the diagnostics track.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// `log p(X | θ)`, exact.
    Exact,
    /// Sum over cells of the exact log-likelihood of each cell's sessions,
    /// treating cells as independent.
    CellSurrogate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub log_likelihood: f64,
    pub change_mu: f64,
    pub change_sigma_u: f64,
    pub change_sigma_v: f64,
    pub change_sigma_eps: f64,
}

impl IterationRecord {
    pub fn max_change(&self) -> f64 {
        self.change_mu
            .max(self.change_sigma_u)
            .max(self.change_sigma_v)
            .max(self.change_sigma_eps)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitDiagnostics {
    pub objective: Objective,
    /// The E-step that ran, never [`EStepKind::Auto`].
    pub estep: EStepKind,
    /// Log-likelihood of the initial parameters.
    pub initial_log_likelihood: f64,
    /// One record per completed E/M iteration.
    pub iterations: Vec<IterationRecord>,
}

impl FitDiagnostics {
    pub fn log_likelihoods(&self) -> Vec<f64> {
        self.iterations.iter().map(|r| r.log_likelihood).collect()
    }
}

fn cov_distance(a: &Covariance, b: &Covariance) -> f64 {
    match (a, b) {
        (Covariance::Diagonal(x), Covariance::Diagonal(y)) => (x - y).norm(),
        _ => (a.to_full() - b.to_full()).norm(),
    }
}

/// Runs `cfg.iterations` E/M alternations from [`init_params`].
pub fn fit(data: &Dataset, cfg: &FitConfig) -> Result<(DoJoBaParams, FitDiagnostics)> {
    let mut params = init_params(data, cfg)?;
    let latent_count = data.num_speakers() + data.num_phrases();
    let estep = match cfg.estep {
        EStepKind::Auto
            if cfg.covariance == CovarianceKind::Diagonal
                && cfg.latents == Latents::SpeakerAndPhrase
                && latent_count <= MAX_EXACT_LATENTS =>
        {
            EStepKind::Exact
        }
        EStepKind::Auto => EStepKind::Conditional,
        other => other,
    };
    if estep == EStepKind::Exact && cfg.latents == Latents::SpeakerOnly {
        return Err(Error::Unsupported(
            "exact E-step with the phrase latent disabled",
        ));
    }
    let objective = if cfg.covariance == CovarianceKind::Diagonal
        && data.num_speakers() + data.num_phrases() <= MAX_EXACT_LATENTS
    {
        Objective::Exact
    } else {
        Objective::CellSurrogate
    };
    let evaluate = |p: &DoJoBaParams| -> Result<f64> {
        let p = match cfg.latents {
            // The pinned Σv stands in for zero; score the model it represents.
            Latents::SpeakerOnly => DoJoBaParams {
                sigma_v: Covariance::zeros(p.dim(), p.sigma_v.kind()),
                ..p.clone()
            },
            Latents::SpeakerAndPhrase => p.clone(),
        };
        match objective {
            Objective::Exact => exact_marginal_loglik(data, &p),
            Objective::CellSurrogate => cell_surrogate_loglik(data, &p),
        }
    };
    let initial_log_likelihood = evaluate(&params)?;
    let mut stats: Option<EStats> = None;
    let mut records = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let s = match estep {
            EStepKind::Exact => e_step_exact(data, &params)?,
            _ => e_step(data, &params, stats.as_ref(), cfg.latents)?,
        };
        let next = m_step(data, &s, &params, cfg)?;
        let record = IterationRecord {
            log_likelihood: evaluate(&next)?,
            change_mu: (&next.mu - &params.mu).norm(),
            change_sigma_u: cov_distance(&next.sigma_u, &params.sigma_u),
            change_sigma_v: cov_distance(&next.sigma_v, &params.sigma_v),
            change_sigma_eps: cov_distance(&next.sigma_eps, &params.sigma_eps),
        };
        let done = cfg.early_stop.is_some_and(|tol| record.max_change() < tol);
        records.push(record);
        params = next;
        stats = Some(s);
        if done {
            break;
        }
    }
    Ok((
        params,
        FitDiagnostics {
            objective,
            estep,
            initial_log_likelihood,
            iterations: records,
        },
    ))
}

/// `ZᵀZ` for the speaker and phrase indicator columns: counts on the
/// diagonal, `H_ij` in the speaker-phrase blocks.
fn indicator_gram(data: &Dataset) -> DMatrix<f64> {
    let (ni, nj) = (data.num_speakers(), data.num_phrases());
    let mut ztz = DMatrix::<f64>::zeros(ni + nj, ni + nj);
    for i in 0..ni {
        ztz[(i, i)] = data.speaker_count(i) as f64;
    }
    for j in 0..nj {
        ztz[(ni + j, ni + j)] = data.phrase_count(j) as f64;
    }
    for cell in data.cells() {
        let h = cell.count() as f64;
        ztz[(cell.speaker, ni + cell.phrase)] = h;
        ztz[(ni + cell.phrase, cell.speaker)] = h;
    }
    ztz
}

/// Per-dimension system of the joint latent posterior. With
/// `G = diag(Σu[d] I_I, Σv[d] I_J)` and noise variance `e`, the posterior
/// covariance is `G^½ W⁻¹ G^½` with `W = I + G^½ ZᵀZ G^½ / e`, valid for
/// zero latent variances.
struct LatentSystem {
    e: f64,
    g_half: DVector<f64>,
    /// Cholesky factor of `W`.
    chol: DMatrix<f64>,
    /// `Σ r²` over all samples.
    rr: f64,
    /// `Zᵀ r`: residual sums per speaker, then per phrase.
    zr: DVector<f64>,
}

impl LatentSystem {
    fn new(data: &Dataset, params: &DoJoBaParams, ztz: &DMatrix<f64>, d: usize) -> Result<Self> {
        let ni = data.num_speakers();
        let latents = ztz.nrows();
        let e = params.sigma_eps.diagonal_values()[d];
        let su = params.sigma_u.diagonal_values()[d];
        let sv = params.sigma_v.diagonal_values()[d];
        let mut rr = 0.0;
        let mut zr = DVector::<f64>::zeros(latents);
        for cell in data.cells() {
            for &k in &cell.members {
                let r = data.vectors()[k].features[d] - params.mu[d];
                rr += r * r;
                zr[cell.speaker] += r;
                zr[ni + cell.phrase] += r;
            }
        }
        let g_half = DVector::from_fn(latents, |l, _| if l < ni { su } else { sv }.sqrt());
        let mut w = DMatrix::<f64>::identity(latents, latents);
        for c in 0..latents {
            for r in 0..latents {
                w[(r, c)] += g_half[r] * ztz[(r, c)] * g_half[c] / e;
            }
        }
        Ok(Self {
            e,
            g_half,
            chol: cholesky(&w)?,
            rr,
            zr,
        })
    }

    fn log_likelihood(&self, n: f64) -> f64 {
        let log_det_w = 2.0 * self.chol.diagonal().iter().map(|x| x.ln()).sum::<f64>();
        let y = self.zr.component_mul(&self.g_half) / self.e;
        let z = self
            .chol
            .solve_lower_triangular(&y)
            .expect("positive pivots");
        let quad = self.rr / self.e - z.norm_squared();
        -0.5 * (n * LN_2PI + n * self.e.ln() + log_det_w + quad)
    }

    /// Posterior mean and covariance of all latents.
    fn posterior(&self) -> (DVector<f64>, DMatrix<f64>) {
        let latents = self.g_half.len();
        let w_inv = solve_spd(&self.chol, &DMatrix::identity(latents, latents));
        let cov = DMatrix::from_fn(latents, latents, |r, c| {
            self.g_half[r] * w_inv[(r, c)] * self.g_half[c]
        });
        let mean = &cov * &self.zr / self.e;
        (mean, cov)
    }
}

fn check_exact(data: &Dataset, params: &DoJoBaParams) -> Result<()> {
    if params.kind() != CovarianceKind::Diagonal {
        return Err(Error::Unsupported(
            "exact latent computations require diagonal covariances",
        ));
    }
    check_params(data, params)?;
    let latents = data.num_speakers() + data.num_phrases();
    if latents > MAX_EXACT_LATENTS {
        return Err(Error::SizeLimit {
            what: "latent count",
            found: latents,
            limit: MAX_EXACT_LATENTS,
        });
    }
    Ok(())
}

/// E-step from the joint posterior of all speaker and phrase latents, one
/// dimension at a time. Every moment is a marginal of that posterior, so an
/// M-step on these statistics never decreases the likelihood.
pub fn e_step_exact(data: &Dataset, params: &DoJoBaParams) -> Result<EStats> {
    check_exact(data, params)?;
    let (ni, nj, dim) = (data.num_speakers(), data.num_phrases(), data.dim());
    let ztz = indicator_gram(data);
    let cells = data.cells();
    let mut eu = vec![DVector::zeros(dim); ni];
    let mut euu = vec![DVector::zeros(dim); ni];
    let mut ev = vec![DVector::zeros(dim); nj];
    let mut evv = vec![DVector::zeros(dim); nj];
    let mut euv = vec![DVector::zeros(dim); cells.len()];
    for d in 0..dim {
        let (m, cov) = LatentSystem::new(data, params, &ztz, d)?.posterior();
        for i in 0..ni {
            eu[i][d] = m[i];
            euu[i][d] = cov[(i, i)] + m[i] * m[i];
        }
        for j in 0..nj {
            let l = ni + j;
            ev[j][d] = m[l];
            evv[j][d] = cov[(l, l)] + m[l] * m[l];
        }
        for (c, cell) in cells.iter().enumerate() {
            let (a, b) = (cell.speaker, ni + cell.phrase);
            euv[c][d] = cov[(a, b)] + m[a] * m[b];
        }
    }
    Ok(EStats {
        kind: CovarianceKind::Diagonal,
        eu,
        euu: euu.into_iter().map(Moment::Diagonal).collect(),
        ev,
        evv: evv.into_iter().map(Moment::Diagonal).collect(),
        euv: euv.into_iter().map(Moment::Diagonal).collect(),
        speaker_counts: (0..ni).map(|i| data.speaker_count(i)).collect(),
        phrase_counts: (0..nj).map(|j| data.phrase_count(j)).collect(),
        cell_counts: cells.iter().map(|c| c.count()).collect(),
    })
}

/// Exact `log p(X | θ)` for diagonal parameters.
///
/// Per dimension the N samples are jointly Gaussian with covariance
/// `e I + Z G Zᵀ`, where `Z` holds the speaker and phrase indicator columns
/// and `G = diag(Σu[d] I_I, Σv[d] I_J)`. The determinant and quadratic form
/// are taken through the Woodbury identity on the (I + J)-dimensional
/// system `I + G^½ ZᵀZ G^½ / e`, which stays valid for zero latent
/// variances. When one latent covariance is zero the samples split into
/// independent groups and no size limit applies.
pub fn exact_marginal_loglik(data: &Dataset, params: &DoJoBaParams) -> Result<f64> {
    if params.kind() != CovarianceKind::Diagonal {
        return Err(Error::Unsupported(
            "exact marginal likelihood requires diagonal covariances",
        ));
    }
    check_params(data, params)?;
    let su = params.sigma_u.diagonal_values();
    let sv = params.sigma_v.diagonal_values();
    if sv.iter().all(|&x| x == 0.0) {
        return Ok(grouped_loglik(
            data,
            params,
            &su,
            |c| c.speaker,
            data.num_speakers(),
        ));
    }
    if su.iter().all(|&x| x == 0.0) {
        return Ok(grouped_loglik(
            data,
            params,
            &sv,
            |c| c.phrase,
            data.num_phrases(),
        ));
    }
    check_exact(data, params)?;
    let ztz = indicator_gram(data);
    let n = data.len() as f64;
    let mut total = 0.0;
    for d in 0..data.dim() {
        total += LatentSystem::new(data, params, &ztz, d)?.log_likelihood(n);
    }
    Ok(total)
}

/// Log-likelihood when samples share a single latent within groups: per
/// group and dimension the covariance is `e I + s 11ᵀ`.
fn grouped_loglik(
    data: &Dataset,
    params: &DoJoBaParams,
    latent: &DVector<f64>,
    group_of: impl Fn(&crate::data::PairCell) -> usize,
    groups: usize,
) -> f64 {
    let dim = data.dim();
    let se = params.sigma_eps.diagonal_values();
    let mut sums = vec![DVector::<f64>::zeros(dim); groups];
    let mut counts = vec![0usize; groups];
    let mut rr = DVector::<f64>::zeros(dim);
    for cell in data.cells() {
        let g = group_of(cell);
        for &k in &cell.members {
            let r = &data.vectors()[k].features - &params.mu;
            rr += r.component_mul(&r);
            sums[g] += &r;
        }
        counts[g] += cell.count();
    }
    let mut total = 0.0;
    for d in 0..dim {
        let (e, s) = (se[d], latent[d]);
        let mut quad = rr[d] / e;
        let mut log_det = 0.0;
        for (sum, &n) in sums.iter().zip(&counts) {
            if n == 0 {
                continue;
            }
            let n = n as f64;
            let t = e + n * s;
            log_det += (n - 1.0) * e.ln() + t.ln();
            quad -= s * sum[d] * sum[d] / (e * t);
        }
        total += -0.5 * (data.len() as f64 * LN_2PI + log_det + quad);
    }
    total
}

/// Sum over cells of the exact log-likelihood of each cell's sessions under
/// a shared latent `u + v`, ignoring coupling between cells.
pub fn cell_surrogate_loglik(data: &Dataset, params: &DoJoBaParams) -> Result<f64> {
    check_params(data, params)?;
    let noise = GaussianFactor::new(&params.sigma_eps)?;
    let shared = params.sigma_u.add(&params.sigma_v);
    let dim = data.dim() as f64;
    let mut total = 0.0;
    for cell in data.cells() {
        let h = cell.count() as f64;
        let mut mean = DVector::zeros(data.dim());
        for &n in &cell.members {
            mean += &data.vectors()[n].features - &params.mu;
        }
        mean /= h;
        let avg_cov = match (&shared, &params.sigma_eps) {
            (Covariance::Diagonal(a), Covariance::Diagonal(e)) => Covariance::Diagonal(a + e / h),
            _ => Covariance::Full(shared.to_full() + params.sigma_eps.to_full() / h),
        };
        total += GaussianFactor::new(&avg_cov)?.log_density(&mean);
        let mut within = 0.0;
        for &n in &cell.members {
            let dev = &data.vectors()[n].features - &params.mu - &mean;
            within += noise.mahalanobis(&dev);
        }
        total +=
            -0.5 * ((h - 1.0) * dim * LN_2PI + (h - 1.0) * noise.log_det() + dim * h.ln() + within);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabeledVector;
    use nalgebra::dvector;

    fn params_1d(su: f64, sv: f64, se: f64) -> DoJoBaParams {
        DoJoBaParams::new(
            dvector![0.0],
            Covariance::isotropic(1, su).unwrap(),
            Covariance::isotropic(1, sv).unwrap(),
            Covariance::isotropic(1, se).unwrap(),
        )
        .unwrap()
    }

    fn grid(values: &[(usize, usize, f64)]) -> Dataset {
        Dataset::new(
            values
                .iter()
                .enumerate()
                .map(|(n, &(i, j, x))| {
                    LabeledVector::new(
                        dvector![x],
                        format!("s{i}"),
                        format!("p{j}"),
                        format!("{n}"),
                    )
                    .unwrap()
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn hand_evaluated_speaker_expectation() {
        let data = grid(&[(0, 0, 3.0)]);
        let stats = e_step(
            &data,
            &params_1d(1.0, 1.0, 1.0),
            None,
            Latents::SpeakerAndPhrase,
        )
        .unwrap();
        assert!((stats.eu[0][0] - 1.5).abs() < 1e-15);
        // E[u²] = posterior variance 0.5 + 1.5².
        assert!((stats.euu[0].diagonal()[0] - 2.75).abs() < 1e-15);
    }

    #[test]
    fn centered_data_has_zero_expectations() {
        let data = grid(&[
            (0, 0, 2.0),
            (0, 1, 2.0),
            (1, 0, 2.0),
            (1, 1, 2.0),
            (1, 1, 2.0),
        ]);
        let mut p = params_1d(1.0, 0.5, 0.3);
        p.mu = dvector![2.0];
        let s1 = e_step(&data, &p, None, Latents::SpeakerAndPhrase).unwrap();
        let s2 = e_step(&data, &p, Some(&s1), Latents::SpeakerAndPhrase).unwrap();
        for s in [&s1, &s2] {
            assert!(s.eu.iter().chain(&s.ev).all(|v| v[0] == 0.0));
        }
    }

    #[test]
    fn identical_vectors_initialize_to_floor() {
        let c = 0.75;
        let data = grid(&[(0, 0, c), (0, 1, c), (1, 0, c), (1, 0, c)]);
        let cfg = FitConfig {
            variance_floor: 1e-6,
            ..Default::default()
        };
        let p = init_params(&data, &cfg).unwrap();
        assert_eq!(p.mu, dvector![c]);
        for cov in [&p.sigma_u, &p.sigma_v, &p.sigma_eps] {
            assert_eq!(cov.diagonal_values(), dvector![1e-6]);
        }
    }

    #[test]
    fn insufficient_classes_names_the_axis() {
        let one_speaker = grid(&[(0, 0, 1.0), (0, 1, 2.0), (0, 1, 3.0)]);
        let err = init_params(&one_speaker, &FitConfig::default()).unwrap_err();
        assert!(matches!(
            err,
            Error::InsufficientClasses {
                axis: ClassAxis::Speaker,
                ..
            }
        ));
        let one_phrase = grid(&[(0, 0, 1.0), (1, 0, 2.0), (1, 0, 3.0)]);
        let err = init_params(&one_phrase, &FitConfig::default()).unwrap_err();
        assert!(matches!(
            err,
            Error::InsufficientClasses {
                axis: ClassAxis::Phrase,
                ..
            }
        ));
        let singletons = grid(&[(0, 0, 1.0), (1, 1, 2.0)]);
        let err = init_params(&singletons, &FitConfig::default()).unwrap_err();
        assert!(matches!(
            err,
            Error::InsufficientClasses {
                axis: ClassAxis::Sessions,
                ..
            }
        ));
        assert!(init_params(
            &one_phrase,
            &FitConfig {
                latents: Latents::SpeakerOnly,
                ..Default::default()
            }
        )
        .is_ok());
    }

    #[test]
    fn m_step_averages_identical_moments_and_uses_sample_mean() {
        let data = grid(&[
            (0, 0, 1.0),
            (0, 1, 4.0),
            (1, 0, -2.0),
            (1, 1, 0.5),
            (1, 1, 7.0),
        ]);
        let p = params_1d(1.0, 1.0, 1.0);
        let mut stats = e_step(&data, &p, None, Latents::SpeakerAndPhrase).unwrap();
        for m in &mut stats.euu {
            *m = Moment::Diagonal(dvector![0.42]);
        }
        let cfg = FitConfig::default();
        let next = m_step(&data, &stats, &p, &cfg).unwrap();
        assert!((next.sigma_u.diagonal_values()[0] - 0.42).abs() < 1e-15);
        assert!((next.mu[0] - 10.5 / 5.0).abs() < 1e-15);
        let per_class = m_step(
            &data,
            &stats,
            &p,
            &FitConfig {
                normalization: Normalization::PerClass,
                ..cfg
            },
        )
        .unwrap();
        assert!((per_class.sigma_u.diagonal_values()[0] - 0.42).abs() < 1e-15);
    }

    #[test]
    fn m_step_rejects_empty_stats() {
        let data = grid(&[(0, 0, 1.0), (1, 1, 2.0)]);
        let p = params_1d(1.0, 1.0, 1.0);
        let mut stats = e_step(&data, &p, None, Latents::SpeakerAndPhrase).unwrap();
        stats.eu.clear();
        stats.euu.clear();
        assert!(matches!(
            m_step(&data, &stats, &p, &FitConfig::default()),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn normalization_modes_differ_on_unbalanced_data() {
        let data = grid(&[
            (0, 0, 1.0),
            (0, 1, 4.0),
            (1, 0, -2.0),
            (1, 1, 0.5),
            (1, 1, 7.0),
            (1, 0, 3.0),
        ]);
        let p = params_1d(1.0, 1.0, 1.0);
        let stats = e_step(&data, &p, None, Latents::SpeakerAndPhrase).unwrap();
        let pooled = m_step(&data, &stats, &p, &FitConfig::default()).unwrap();
        let per = m_step(
            &data,
            &stats,
            &p,
            &FitConfig {
                normalization: Normalization::PerClass,
                ..Default::default()
            },
        )
        .unwrap();
        let e = |i: usize| stats.euu[i].diagonal()[0];
        assert!(
            (pooled.sigma_u.diagonal_values()[0] - (2.0 * e(0) + 4.0 * e(1)) / 6.0).abs() < 1e-14
        );
        assert!((per.sigma_u.diagonal_values()[0] - (e(0) + e(1)) / 2.0).abs() < 1e-14);
    }

    #[test]
    fn exact_loglik_trivial_cases() {
        let p = DoJoBaParams::new(
            dvector![0.5, -1.0],
            Covariance::diagonal(dvector![0.7, 1.2]).unwrap(),
            Covariance::diagonal(dvector![0.3, 0.1]).unwrap(),
            Covariance::diagonal(dvector![0.2, 0.9]).unwrap(),
        )
        .unwrap();
        let x1 = dvector![1.0, 2.0];
        let x2 = dvector![-0.3, 0.4];
        let single =
            Dataset::new(vec![LabeledVector::new(x1.clone(), "a", "x", "1").unwrap()]).unwrap();
        let direct = crate::gaussian::log_gaussian(&x1, &p.mu, &p.total_covariance()).unwrap();
        assert!((exact_marginal_loglik(&single, &p).unwrap() - direct).abs() < 1e-12);

        let two = Dataset::new(vec![
            LabeledVector::new(x1.clone(), "a", "x", "1").unwrap(),
            LabeledVector::new(x2.clone(), "b", "y", "2").unwrap(),
        ])
        .unwrap();
        let sep =
            direct + crate::gaussian::log_gaussian(&x2, &p.mu, &p.total_covariance()).unwrap();
        assert!((exact_marginal_loglik(&two, &p).unwrap() - sep).abs() < 1e-12);

        let full = DoJoBaParams {
            sigma_u: p.sigma_u.to_kind(CovarianceKind::Full),
            ..p.clone()
        };
        assert!(matches!(
            exact_marginal_loglik(&two, &full),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn exact_loglik_latent_guard() {
        let vectors = (0..=MAX_EXACT_LATENTS)
            .map(|i| LabeledVector::new(dvector![i as f64], format!("s{i}"), "p", "k").unwrap())
            .collect();
        let data = Dataset::new(vectors).unwrap();
        let err = exact_marginal_loglik(&data, &params_1d(1.0, 1.0, 1.0)).unwrap_err();
        assert!(matches!(err, Error::SizeLimit { .. }));
    }

    #[test]
    fn surrogate_equals_exact_for_single_cell() {
        let data = grid(&[(0, 0, 1.0), (0, 0, 2.5), (0, 0, -0.5)]);
        let p = params_1d(0.8, 0.4, 0.6);
        let a = exact_marginal_loglik(&data, &p).unwrap();
        let b = cell_surrogate_loglik(&data, &p).unwrap();
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    fn small_grid() -> Dataset {
        grid(&[
            (0, 0, 1.0),
            (0, 0, 1.4),
            (0, 1, 4.0),
            (1, 0, -2.0),
            (1, 1, 0.5),
            (1, 1, 7.0),
            (2, 1, 3.0),
        ])
    }

    #[test]
    fn exact_estep_matches_direct_conditioning() {
        let data = small_grid();
        let p = DoJoBaParams {
            mu: dvector![0.7],
            ..params_1d(1.3, 0.6, 0.4)
        };
        let (ni, nj, n) = (data.num_speakers(), data.num_phrases(), data.len());
        let mut z = DMatrix::<f64>::zeros(n, ni + nj);
        let mut r = DVector::<f64>::zeros(n);
        for (k, v) in data.vectors().iter().enumerate() {
            z[(k, data.speaker_index(&v.speaker_id).unwrap())] = 1.0;
            z[(k, ni + data.phrase_index(&v.phrase_id).unwrap())] = 1.0;
            r[k] = v.features[0] - 0.7;
        }
        let g = DMatrix::from_diagonal(&DVector::from_fn(
            ni + nj,
            |l, _| if l < ni { 1.3 } else { 0.6 },
        ));
        let sx = &z * &g * z.transpose() + DMatrix::identity(n, n) * 0.4;
        let sx_inv = sx.try_inverse().unwrap();
        let mean = &g * z.transpose() * &sx_inv * &r;
        let cov = &g - &g * z.transpose() * &sx_inv * &z * &g;
        let stats = e_step_exact(&data, &p).unwrap();
        let second = |m: &Moment| m.to_full()[(0, 0)];
        for i in 0..ni {
            assert!((stats.eu[i][0] - mean[i]).abs() < 1e-12);
            assert!((second(&stats.euu[i]) - cov[(i, i)] - mean[i] * mean[i]).abs() < 1e-12);
        }
        for j in 0..nj {
            let l = ni + j;
            assert!((stats.ev[j][0] - mean[l]).abs() < 1e-12);
            assert!((second(&stats.evv[j]) - cov[(l, l)] - mean[l] * mean[l]).abs() < 1e-12);
        }
        for (c, cell) in data.cells().iter().enumerate() {
            let (a, b) = (cell.speaker, ni + cell.phrase);
            assert!((second(&stats.euv[c]) - cov[(a, b)] - mean[a] * mean[b]).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_estep_likelihood_never_decreases() {
        let data = small_grid();
        let cfg = FitConfig {
            iterations: 30,
            ..Default::default()
        };
        let (_, diag) = fit(&data, &cfg).unwrap();
        assert_eq!(diag.estep, EStepKind::Exact);
        let mut lls = vec![diag.initial_log_likelihood];
        lls.extend(diag.log_likelihoods());
        for w in lls.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "{} -> {}", w[0], w[1]);
        }
        let forced = FitConfig {
            estep: EStepKind::Conditional,
            ..cfg
        };
        assert_eq!(fit(&data, &forced).unwrap().1.estep, EStepKind::Conditional);
    }

    #[test]
    fn grouped_loglik_matches_general_system() {
        let data = small_grid();
        for p in [params_1d(0.9, 0.0, 0.5), params_1d(0.0, 1.1, 0.3)] {
            let fast = exact_marginal_loglik(&data, &p).unwrap();
            let ztz = indicator_gram(&data);
            let general = LatentSystem::new(&data, &p, &ztz, 0)
                .unwrap()
                .log_likelihood(data.len() as f64);
            assert!((fast - general).abs() < 1e-10, "{fast} vs {general}");
        }
    }

    #[test]
    fn iterations_one_records_one_step() {
        let data = grid(&[
            (0, 0, 1.0),
            (0, 1, 4.0),
            (1, 0, -2.0),
            (1, 1, 0.5),
            (1, 1, 7.0),
        ]);
        let (_, diag) = fit(
            &data,
            &FitConfig {
                iterations: 1,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(diag.iterations.len(), 1);
        assert_eq!(diag.objective, Objective::Exact);
        assert!(fit(
            &data,
            &FitConfig {
                iterations: 0,
                ..Default::default()
            }
        )
        .is_err());
    }
}
