//! The `dojoba` command line: `synth`, `train` and `eval`.
//!
//! [`run`] parses arguments and writes to caller-supplied streams, so the
//! whole surface is testable in-process. Exit codes: 0 success, 1 I/O,
//! 2 usage, 3 data or format, 4 numerical failure.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;

use crate::data::{Dataset, LabeledVector};
use crate::em::{self, EStepKind, FitConfig, FitDiagnostics, Normalization};
use crate::error::{Error, ErrorCategory, Result};
use crate::eval::{
    build_trials, enroll_models, format_table, report_from_scores, score_trials, trials_from_list,
    write_det_csv, write_report_csv, ScoreReport,
};
use crate::formats::{
    params_digest, read_trials, read_vectors, write_latents, write_vectors, ModelFile, ModelParams,
    TrainingMetadata,
};
use crate::gaussian::{Covariance, CovarianceKind};
use crate::jb::{fit_jb_with_diagnostics, ClassMode};
use crate::params::DoJoBaParams;
use crate::preprocess::{whiten_apply_all, whiten_fit};
use crate::scoring::{CosineScorer, DoJoBaScorer, HypothesisPriors, JBScorer, Scorer};
use crate::synth::{sample_dataset, Sessions, SynthSpec};

/// Environment variable holding the worker thread count.
pub const WORKERS_ENV: &str = "DOJOBA_WORKERS";

pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "dojoba",
    version,
    about = "Two-latent Gaussian back-end for speaker and phrase verification"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a labeled dataset from the generative model.
    Synth(SynthArgs),
    /// Fit a model to a vector file.
    Train(TrainArgs),
    /// Score enrollment models against test vectors and report EERs.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub speakers: usize,
    #[arg(long)]
    pub phrases: usize,
    /// Sessions per (speaker, phrase) cell.
    #[arg(long)]
    pub sessions: usize,
    /// Feature dimension; ignored when --params is given.
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Isotropic speaker variance.
    #[arg(long, default_value_t = 1.0)]
    pub speaker_var: f64,
    /// Isotropic phrase variance.
    #[arg(long, default_value_t = 1.0)]
    pub phrase_var: f64,
    /// Isotropic noise variance.
    #[arg(long, default_value_t = 0.1)]
    pub noise_var: f64,
    /// Value of every component of the global mean.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub mean: f64,
    /// Take the generating parameters from a dojoba model file instead.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long, short)]
    pub out: PathBuf,
    /// Also write the latent draws.
    #[arg(long)]
    pub latents: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Dojoba,
    Jb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CovArg {
    Diag,
    Full,
}

impl From<CovArg> for CovarianceKind {
    fn from(c: CovArg) -> Self {
        match c {
            CovArg::Diag => CovarianceKind::Diagonal,
            CovArg::Full => CovarianceKind::Full,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormArg {
    Paper,
    PerClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClassArg {
    SpeakerPhrase,
    Speaker,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training vector CSV.
    #[arg(long)]
    pub vectors: PathBuf,
    #[arg(long, value_enum, default_value_t = ModelKind::Dojoba)]
    pub kind: ModelKind,
    #[arg(long, default_value_t = 10)]
    pub iters: usize,
    #[arg(long, value_enum, default_value_t = CovArg::Diag)]
    pub cov: CovArg,
    /// Whiten onto this many principal components before fitting.
    #[arg(long)]
    pub pca: Option<usize>,
    #[arg(long, value_enum, default_value_t = NormArg::Paper)]
    pub norm: NormArg,
    /// Class definition for the jb model.
    #[arg(long, value_enum, default_value_t = ClassArg::SpeakerPhrase)]
    pub classes: ClassArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Relative jitter of the initial variances (uses --seed).
    #[arg(long, default_value_t = 0.0)]
    pub init_jitter: f64,
    #[arg(long, default_value_t = 1e-10)]
    pub variance_floor: f64,
    /// Joint-posterior E-step when feasible, or force one.
    #[arg(long, value_enum, default_value_t = EStepArg::Auto)]
    pub estep: EStepArg,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EStepArg {
    Auto,
    Exact,
    Conditional,
}

impl From<EStepArg> for EStepKind {
    fn from(a: EStepArg) -> Self {
        match a {
            EStepArg::Auto => EStepKind::Auto,
            EStepArg::Exact => EStepKind::Exact,
            EStepArg::Conditional => EStepKind::Conditional,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Model files; each becomes one system column.
    #[arg(long = "model", required = true)]
    pub models: Vec<PathBuf>,
    /// Enrollment vector CSV, averaged per (speaker, phrase).
    #[arg(long)]
    pub enroll: PathBuf,
    /// Test vector CSV.
    #[arg(long)]
    pub test: PathBuf,
    /// Explicit trial list (TSV); the default is the full cross.
    #[arg(long)]
    pub trials: Option<PathBuf>,
    /// Sub-model priors `p1,p2,p3` for dojoba models.
    #[arg(long)]
    pub priors: Option<String>,
    /// Add a cosine-similarity system on the raw vectors.
    #[arg(long)]
    pub cosine: bool,
    /// Write the report CSV here instead of after the table on stdout.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Write the pooled DET points of each system to `<prefix>.<system>.csv`.
    #[arg(long)]
    pub det_prefix: Option<PathBuf>,
}

fn exit_code(e: &Error) -> i32 {
    match e.category() {
        ErrorCategory::Io => EXIT_IO,
        ErrorCategory::Data => EXIT_DATA,
        ErrorCategory::Numerical => EXIT_NUMERICAL,
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(stderr, "{text}");
                EXIT_USAGE
            } else {
                let _ = write!(stdout, "{text}");
                0
            };
        }
    };
    let result = configure_workers().and_then(|()| match &cli.command {
        Command::Synth(a) => cmd_synth(a, stdout),
        Command::Train(a) => cmd_train(a, stderr),
        Command::Eval(a) => cmd_eval(a, stdout),
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}

/// Sizes the global worker pool from [`WORKERS_ENV`]. The pool can only be
/// configured once per process; later calls keep the first size.
fn configure_workers() -> Result<()> {
    let Ok(value) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .map_err(|_| Error::invalid(format!("{WORKERS_ENV}={value:?} is not a thread count")))?;
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn with_path(path: &Path, e: Error) -> Error {
    match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    }
}

pub fn load_vectors(path: &Path) -> Result<Vec<LabeledVector>> {
    read_vectors(open(path)?).map_err(|e| with_path(path, e))
}

pub fn load_model(path: &Path) -> Result<ModelFile> {
    ModelFile::load(open(path)?)
}

fn synth_params(a: &SynthArgs) -> Result<DoJoBaParams> {
    if let Some(path) = &a.params {
        return match load_model(path)?.params {
            ModelParams::DoJoBa(p) => Ok(p),
            ModelParams::JB(p) => Ok(p.as_dojoba()),
        };
    }
    if a.dim == 0 {
        return Err(Error::invalid("--dim must be at least 1"));
    }
    DoJoBaParams::new(
        DVector::from_element(a.dim, a.mean),
        Covariance::isotropic(a.dim, a.speaker_var)?,
        Covariance::isotropic(a.dim, a.phrase_var)?,
        Covariance::isotropic(a.dim, a.noise_var)?,
    )
}

pub fn cmd_synth(a: &SynthArgs, stdout: &mut dyn Write) -> Result<()> {
    let spec = SynthSpec {
        speakers: a.speakers,
        phrases: a.phrases,
        sessions: Sessions::Constant(a.sessions),
        params: synth_params(a)?,
        seed: a.seed,
    };
    let (data, latents) = sample_dataset(&spec)?;
    let mut w = create(&a.out)?;
    write_vectors(data.vectors(), &mut w)?;
    w.flush()?;
    if let Some(path) = &a.latents {
        let mut w = create(path)?;
        write_latents(&latents, &mut w)?;
        w.flush()?;
    }
    writeln!(stdout, "rows {}", data.len())?;
    writeln!(stdout, "params sha256 {}", params_digest(&spec.params))?;
    Ok(())
}

fn log_diagnostics(diag: &FitDiagnostics, stderr: &mut dyn Write) -> Result<()> {
    let objective = match diag.objective {
        em::Objective::Exact => "exact",
        em::Objective::CellSurrogate => "cell-surrogate",
    };
    writeln!(
        stderr,
        "iter 0: loglik {} ({objective})",
        diag.initial_log_likelihood
    )?;
    for (n, r) in diag.iterations.iter().enumerate() {
        writeln!(
            stderr,
            "iter {}: loglik {} max-change {:e}",
            n + 1,
            r.log_likelihood,
            r.max_change()
        )?;
    }
    Ok(())
}

/// Fits the model described by `a` to `vectors`.
pub fn train_model(
    a: &TrainArgs,
    vectors: Vec<LabeledVector>,
    stderr: &mut dyn Write,
) -> Result<ModelFile> {
    let raw = Dataset::new(vectors)?;
    let digest = raw.digest();
    let (data, projection) = match a.pca {
        Some(d_out) => {
            let feats: Vec<DVector<f64>> =
                raw.vectors().iter().map(|v| v.features.clone()).collect();
            let p = whiten_fit(&feats, d_out)?;
            (p.apply_dataset(&raw)?, Some(p))
        }
        None => (raw, None),
    };
    let normalization = match a.norm {
        NormArg::Paper => Normalization::Paper,
        NormArg::PerClass => Normalization::PerClass,
    };
    let cfg = FitConfig {
        iterations: a.iters,
        covariance: a.cov.into(),
        variance_floor: a.variance_floor,
        seed: a.seed,
        init_jitter: a.init_jitter,
        normalization,
        estep: a.estep.into(),
        ..FitConfig::default()
    };
    let (params, diag, class_mode) = match a.kind {
        ModelKind::Dojoba => {
            let (p, d) = em::fit(&data, &cfg)?;
            (ModelParams::DoJoBa(p), d, None)
        }
        ModelKind::Jb => {
            let mode = match a.classes {
                ClassArg::SpeakerPhrase => ClassMode::SpeakerPhrase,
                ClassArg::Speaker => ClassMode::Speaker,
            };
            let (p, d) = fit_jb_with_diagnostics(&data, &cfg, mode)?;
            (ModelParams::JB(p), d, Some(mode))
        }
    };
    log_diagnostics(&diag, stderr)?;
    Ok(ModelFile {
        params,
        projection,
        training: TrainingMetadata {
            iterations: diag.iterations.len(),
            seed: a.seed,
            dataset_digest: digest,
            normalization,
            class_mode,
        },
    })
}

pub fn cmd_train(a: &TrainArgs, stderr: &mut dyn Write) -> Result<()> {
    let vectors = load_vectors(&a.vectors)?;
    let model = train_model(a, vectors, stderr)?;
    let mut w = create(&a.out)?;
    model.save(&mut w)?;
    w.flush()?;
    Ok(())
}

/// A model file ready to score raw vectors.
struct ModelSystem {
    name: String,
    model: ModelFile,
    scorer: Box<dyn Scorer + Send>,
}

fn system_name(kind: &str, taken: &[String]) -> String {
    let base = match kind {
        "dojoba" => "DoJoBa",
        _ => "JB",
    };
    let mut name = base.to_string();
    let mut n = 2;
    while taken.contains(&name) {
        name = format!("{base}#{n}");
        n += 1;
    }
    name
}

fn project(model: &ModelFile, vectors: &[LabeledVector]) -> Result<Vec<LabeledVector>> {
    let Some(p) = &model.projection else {
        return Ok(vectors.to_vec());
    };
    let feats: Vec<DVector<f64>> = vectors.iter().map(|v| v.features.clone()).collect();
    let projected = whiten_apply_all(p, &feats)?;
    Ok(vectors
        .iter()
        .zip(projected)
        .map(|(v, features)| LabeledVector {
            features,
            ..v.clone()
        })
        .collect())
}

/// Scores every system and returns one report per system, in column order.
pub fn evaluate_models(
    models: Vec<ModelFile>,
    enroll: &[LabeledVector],
    test: &[LabeledVector],
    trial_list: Option<&[crate::eval::TrialSpec]>,
    priors: HypothesisPriors,
    cosine: bool,
) -> Result<Vec<ScoreReport>> {
    let mut systems: Vec<ModelSystem> = Vec::new();
    for model in models {
        let names: Vec<String> = systems.iter().map(|s| s.name.clone()).collect();
        let name = system_name(model.params.kind_name(), &names);
        let scorer: Box<dyn Scorer + Send> = match &model.params {
            ModelParams::DoJoBa(p) => Box::new(DoJoBaScorer::new(p, priors)?),
            ModelParams::JB(p) => Box::new(JBScorer::new(p)?),
        };
        systems.push(ModelSystem {
            name,
            model,
            scorer,
        });
    }
    let raw_enrollments = enroll_models(enroll)?;
    let trials = match trial_list {
        Some(list) => trials_from_list(&raw_enrollments, test, list)?,
        None => build_trials(&raw_enrollments, test)?,
    };
    let mut reports = Vec::new();
    for s in &systems {
        let dim = s.model.input_dim();
        if let Some(v) = enroll.iter().chain(test).find(|v| v.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: v.dim(),
            });
        }
        let enrollments = enroll_models(&project(&s.model, enroll)?)?;
        let tests = project(&s.model, test)?;
        let scores = score_trials(s.scorer.as_ref(), &enrollments, &tests, &trials)?;
        reports.push(report_from_scores(&s.name, &trials, &scores)?);
    }
    if cosine {
        let scores = score_trials(&CosineScorer, &raw_enrollments, test, &trials)?;
        reports.push(report_from_scores("cosine", &trials, &scores)?);
    }
    Ok(reports)
}

pub fn cmd_eval(a: &EvalArgs, stdout: &mut dyn Write) -> Result<()> {
    let models = a
        .models
        .iter()
        .map(|p| load_model(p))
        .collect::<Result<Vec<_>>>()?;
    let enroll = load_vectors(&a.enroll)?;
    let test = load_vectors(&a.test)?;
    let list = a
        .trials
        .as_ref()
        .map(|p| read_trials(open(p)?).map_err(|e| with_path(p, e)))
        .transpose()?;
    let priors = match &a.priors {
        Some(s) => s.parse()?,
        None => HypothesisPriors::uniform(),
    };
    let reports = evaluate_models(models, &enroll, &test, list.as_deref(), priors, a.cosine)?;
    write!(stdout, "{}", format_table(&reports))?;
    match &a.csv {
        Some(path) => {
            let mut w = create(path)?;
            write_report_csv(&reports, &mut w)?;
            w.flush()?;
        }
        None => {
            writeln!(stdout)?;
            write_report_csv(&reports, &mut *stdout)?;
        }
    }
    if let Some(prefix) = &a.det_prefix {
        for r in &reports {
            let mut name = prefix.as_os_str().to_owned();
            name.push(format!(".{}.csv", r.system.replace('#', "-")));
            let mut w = create(Path::new(&name))?;
            write_det_csv(&r.det, &mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_defaults() {
        let cli =
            Cli::try_parse_from(["dojoba", "train", "--vectors", "v.csv", "-o", "m.json"]).unwrap();
        let Command::Train(a) = cli.command else {
            panic!()
        };
        assert_eq!(a.iters, 10);
        assert_eq!(a.cov, CovArg::Diag);
        assert_eq!(a.norm, NormArg::Paper);
        assert_eq!(a.kind, ModelKind::Dojoba);
        assert!(a.pca.is_none());
    }

    #[test]
    fn usage_errors_exit_2() {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        assert_eq!(run(["dojoba", "train"], &mut out, &mut err), EXIT_USAGE);
        assert_eq!(run(["dojoba", "bogus"], &mut out, &mut err), EXIT_USAGE);
        assert_eq!(run(["dojoba", "--help"], &mut out, &mut err), 0);
    }

    #[test]
    fn system_names_are_unique() {
        let taken = vec!["DoJoBa".to_string()];
        assert_eq!(system_name("dojoba", &taken), "DoJoBa#2");
        assert_eq!(system_name("jb", &taken), "JB");
    }
}
