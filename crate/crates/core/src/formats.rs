//! On-disk formats: labeled vector CSV, latent CSV, trial list TSV and the
//! JSON model file.
//!
//! Floats are written with Rust's shortest round-trip decimal formatting,
//! so a written CSV reads back bit-exactly. Model payloads are base64 of
//! little-endian `f64` arrays (matrices column-major).

use std::io::{BufRead, Read, Write};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::LabeledVector;
use crate::em::Normalization;
use crate::error::{check_dim, Error, Result};
use crate::eval::{csv_io, Condition, TrialSpec};
use crate::gaussian::{Covariance, CovarianceKind};
use crate::jb::ClassMode;
use crate::params::{DoJoBaParams, JBParams};
use crate::preprocess::Projection;
use crate::synth::Latents;

pub const MODEL_SCHEMA_VERSION: u32 = 1;

const LABEL_COLUMNS: [&str; 3] = ["speaker", "phrase", "session"];

fn parse_error(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn from_csv(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.kind() {
        csv::ErrorKind::Io(_) => csv_io(e),
        _ => parse_error(line, e.to_string()),
    }
}

pub fn write_vectors<W: Write>(vectors: &[LabeledVector], writer: W) -> Result<()> {
    let dim = vectors.first().map_or(0, LabeledVector::dim);
    let mut w = csv::Writer::from_writer(writer);
    let header: Vec<String> = LABEL_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain((0..dim).map(|d| format!("f{d}")))
        .collect();
    w.write_record(&header).map_err(csv_io)?;
    for v in vectors {
        check_dim(dim, v.dim())?;
        let mut record = vec![
            v.speaker_id.clone(),
            v.phrase_id.clone(),
            v.session_id.clone(),
        ];
        record.extend(v.features.iter().map(f64::to_string));
        w.write_record(&record).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a vector CSV. Errors carry the 1-based line number of the
/// offending row.
pub fn read_vectors<R: Read>(reader: R) -> Result<Vec<LabeledVector>> {
    let mut r = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header = r.headers().map_err(from_csv)?.clone();
    let fields: Vec<&str> = header.iter().collect();
    if fields.len() < 4 || fields[..3] != LABEL_COLUMNS {
        return Err(parse_error(
            1,
            "header must start with speaker,phrase,session and list at least one feature",
        ));
    }
    for (d, name) in fields[3..].iter().enumerate() {
        if *name != format!("f{d}") {
            return Err(parse_error(
                1,
                format!("expected feature column f{d}, found {name:?}"),
            ));
        }
    }
    let dim = fields.len() - 3;
    let mut out = Vec::new();
    for record in r.records() {
        let record = record.map_err(from_csv)?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != dim + 3 {
            return Err(parse_error(
                line,
                format!("expected {} fields, found {}", dim + 3, record.len()),
            ));
        }
        let features = record
            .iter()
            .skip(3)
            .enumerate()
            .map(|(d, s)| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| parse_error(line, format!("f{d}: {s:?}: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let v = LabeledVector::new(
            DVector::from_vec(features),
            &record[0],
            &record[1],
            &record[2],
        )
        .map_err(|e| parse_error(line, e.to_string()))?;
        out.push(v);
    }
    if out.is_empty() {
        return Err(Error::Empty("vector file has no rows"));
    }
    Ok(out)
}

/// CSV with columns `kind,id,f0..`, `kind` being `speaker` or `phrase`.
pub fn write_latents<W: Write>(latents: &Latents, writer: W) -> Result<()> {
    let dim = latents.speakers.first().map_or(0, |v| v.len());
    let mut w = csv::Writer::from_writer(writer);
    let header: Vec<String> = ["kind".to_string(), "id".to_string()]
        .into_iter()
        .chain((0..dim).map(|d| format!("f{d}")))
        .collect();
    w.write_record(&header).map_err(csv_io)?;
    let rows = latents
        .speakers
        .iter()
        .enumerate()
        .map(|(i, v)| ("speaker", crate::synth::speaker_label(i), v))
        .chain(
            latents
                .phrases
                .iter()
                .enumerate()
                .map(|(j, v)| ("phrase", crate::synth::phrase_label(j), v)),
        );
    for (kind, id, v) in rows {
        let mut record = vec![kind.to_string(), id];
        record.extend(v.iter().map(f64::to_string));
        w.write_record(&record).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

const TRIAL_HEADER: [&str; 4] = [
    "enroll_speaker",
    "enroll_phrase",
    "test_session",
    "expected_condition",
];

pub fn write_trials<W: Write>(trials: &[TrialSpec], mut writer: W) -> Result<()> {
    writeln!(writer, "{}", TRIAL_HEADER.join("\t"))?;
    for t in trials {
        writeln!(
            writer,
            "{}\t{}\t{}\t{}",
            t.enroll_speaker, t.enroll_phrase, t.test_session, t.expected
        )?;
    }
    Ok(())
}

/// Reads a tab-separated trial list; a header line is optional and blank
/// lines are ignored.
pub fn read_trials<R: BufRead>(reader: R) -> Result<Vec<TrialSpec>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = n as u64 + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if n == 0 && fields == TRIAL_HEADER {
            continue;
        }
        if fields.len() != 4 {
            return Err(parse_error(
                lineno,
                format!("expected 4 tab-separated fields, found {}", fields.len()),
            ));
        }
        let expected: Condition = fields[3]
            .parse()
            .map_err(|e: Error| parse_error(lineno, e.to_string()))?;
        out.push(TrialSpec {
            enroll_speaker: fields[0].to_string(),
            enroll_phrase: fields[1].to_string(),
            test_session: fields[2].to_string(),
            expected,
        });
    }
    Ok(out)
}

/// The trained parameters held by a model file.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    DoJoBa(DoJoBaParams),
    JB(JBParams),
}

impl ModelParams {
    pub fn dim(&self) -> usize {
        match self {
            ModelParams::DoJoBa(p) => p.dim(),
            ModelParams::JB(p) => p.dim(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ModelParams::DoJoBa(_) => "dojoba",
            ModelParams::JB(_) => "jb",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub iterations: usize,
    pub seed: u64,
    pub dataset_digest: String,
    pub normalization: Normalization,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_mode: Option<ClassMode>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub params: ModelParams,
    pub projection: Option<Projection>,
    pub training: TrainingMetadata,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelRecord {
    schema_version: u32,
    kind: String,
    covariance: CovarianceKind,
    dim: usize,
    mu: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigma_u: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigma_v: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigma_z: Option<String>,
    sigma_eps: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    projection: Option<ProjectionRecord>,
    training: TrainingMetadata,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProjectionRecord {
    input_dim: usize,
    output_dim: usize,
    mean: String,
    basis: String,
    scales: String,
}

fn encode(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    B64.encode(bytes)
}

fn decode(field: &str, text: &str, len: usize) -> Result<Vec<f64>> {
    let bytes = B64
        .decode(text)
        .map_err(|e| Error::ModelFormat(format!("{field}: {e}")))?;
    if bytes.len() != 8 * len {
        return Err(Error::ModelFormat(format!(
            "{field}: expected {len} values, found {} bytes",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

fn encode_cov(c: &Covariance, kind: CovarianceKind) -> String {
    match c.to_kind(kind) {
        Covariance::Diagonal(v) => encode(v.as_slice()),
        Covariance::Full(m) => encode(m.as_slice()),
    }
}

fn decode_cov(field: &str, text: &str, kind: CovarianceKind, dim: usize) -> Result<Covariance> {
    match kind {
        CovarianceKind::Diagonal => {
            Covariance::diagonal(DVector::from_vec(decode(field, text, dim)?))
        }
        CovarianceKind::Full => {
            Covariance::full(DMatrix::from_vec(dim, dim, decode(field, text, dim * dim)?))
        }
    }
    .map_err(|e| Error::ModelFormat(format!("{field}: {e}")))
}

impl ModelFile {
    fn to_record(&self) -> ModelRecord {
        let (kind, covariance) = match &self.params {
            ModelParams::DoJoBa(p) => ("dojoba", p.kind()),
            ModelParams::JB(p) => ("jb", p.as_dojoba().kind()),
        };
        let mut rec = ModelRecord {
            schema_version: MODEL_SCHEMA_VERSION,
            kind: kind.to_string(),
            covariance,
            dim: self.params.dim(),
            mu: String::new(),
            sigma_u: None,
            sigma_v: None,
            sigma_z: None,
            sigma_eps: String::new(),
            projection: self.projection.as_ref().map(|p| ProjectionRecord {
                input_dim: p.input_dim(),
                output_dim: p.output_dim(),
                mean: encode(p.mean.as_slice()),
                basis: encode(p.basis.as_slice()),
                scales: encode(p.scales.as_slice()),
            }),
            training: self.training.clone(),
        };
        match &self.params {
            ModelParams::DoJoBa(p) => {
                rec.mu = encode(p.mu.as_slice());
                rec.sigma_u = Some(encode_cov(&p.sigma_u, covariance));
                rec.sigma_v = Some(encode_cov(&p.sigma_v, covariance));
                rec.sigma_eps = encode_cov(&p.sigma_eps, covariance);
            }
            ModelParams::JB(p) => {
                rec.mu = encode(p.mu.as_slice());
                rec.sigma_z = Some(encode_cov(&p.sigma_z, covariance));
                rec.sigma_eps = encode_cov(&p.sigma_eps, covariance);
            }
        }
        rec
    }

    fn from_record(rec: ModelRecord) -> Result<Self> {
        if rec.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported schema version {}",
                rec.schema_version
            )));
        }
        let (d, kind) = (rec.dim, rec.covariance);
        let mu = DVector::from_vec(decode("mu", &rec.mu, d)?);
        let eps = decode_cov("sigma_eps", &rec.sigma_eps, kind, d)?;
        let need = |name: &str, v: &Option<String>| -> Result<Covariance> {
            let text = v
                .as_deref()
                .ok_or_else(|| Error::ModelFormat(format!("missing {name}")))?;
            decode_cov(name, text, kind, d)
        };
        let params = match rec.kind.as_str() {
            "dojoba" => ModelParams::DoJoBa(DoJoBaParams::new(
                mu,
                need("sigma_u", &rec.sigma_u)?,
                need("sigma_v", &rec.sigma_v)?,
                eps,
            )?),
            "jb" => ModelParams::JB(JBParams::new(mu, need("sigma_z", &rec.sigma_z)?, eps)?),
            other => return Err(Error::ModelFormat(format!("unknown model kind {other:?}"))),
        };
        let projection = rec
            .projection
            .map(|p| {
                let (i, o) = (p.input_dim, p.output_dim);
                if o != d {
                    return Err(Error::ModelFormat(format!(
                        "projection output {o} does not match model dimension {d}"
                    )));
                }
                Projection::new(
                    DVector::from_vec(decode("projection.mean", &p.mean, i)?),
                    DMatrix::from_vec(o, i, decode("projection.basis", &p.basis, o * i)?),
                    DVector::from_vec(decode("projection.scales", &p.scales, o)?),
                )
            })
            .transpose()?;
        Ok(Self {
            params,
            projection,
            training: rec.training,
        })
    }

    /// Dimension expected of raw input vectors.
    pub fn input_dim(&self) -> usize {
        self.projection
            .as_ref()
            .map_or(self.params.dim(), Projection::input_dim)
    }

    pub fn to_json(&self) -> String {
        let mut s =
            serde_json::to_string_pretty(&self.to_record()).expect("model record serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rec: ModelRecord =
            serde_json::from_str(text).map_err(|e| Error::ModelFormat(e.to_string()))?;
        Self::from_record(rec)
    }

    pub fn save<W: Write>(&self, mut writer: W) -> Result<()> {
        writer.write_all(self.to_json().as_bytes())?;
        Ok(())
    }

    pub fn load<R: Read>(mut reader: R) -> Result<Self> {
        let mut text = String::new();
        reader.read_to_string(&mut text)?;
        Self::from_json(&text)
    }
}

/// SHA-256 over the little-endian bytes of `mu, Σu, Σv, Σε` (dense,
/// column-major), as lowercase hex.
pub fn params_digest(p: &DoJoBaParams) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(
        p.mu.as_slice()
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect::<Vec<u8>>(),
    );
    for c in [&p.sigma_u, &p.sigma_v, &p.sigma_eps] {
        h.update(
            c.to_full()
                .as_slice()
                .iter()
                .flat_map(|v| v.to_le_bytes())
                .collect::<Vec<u8>>(),
        );
    }
    crate::data::hex_string(&h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn vectors() -> Vec<LabeledVector> {
        vec![
            LabeledVector::new(dvector![0.1, -2.5e-300, 1.0 / 3.0], "s,1", "p1", "a").unwrap(),
            LabeledVector::new(dvector![f64::MAX, 0.0, -0.0], "s2", "p\"2", "b").unwrap(),
        ]
    }

    #[test]
    fn vector_csv_round_trip() {
        let mut buf = Vec::new();
        write_vectors(&vectors(), &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("speaker,phrase,session,f0,f1,f2\n"));
        let back = read_vectors(&buf[..]).unwrap();
        assert_eq!(back, vectors());
        for (a, b) in back.iter().zip(vectors()) {
            for (x, y) in a.features.iter().zip(b.features.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn malformed_rows_report_line() {
        let text = "speaker,phrase,session,f0,f1\na,b,c,1,2\na,b,d,1,oops\n";
        match read_vectors(text.as_bytes()).unwrap_err() {
            Error::Parse { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("f1"), "{message}");
            }
            e => panic!("{e}"),
        }
        let short = "speaker,phrase,session,f0,f1\na,b,c,1\n";
        assert!(matches!(
            read_vectors(short.as_bytes()).unwrap_err(),
            Error::Parse { line: 2, .. }
        ));
        let bad_header = "spk,phrase,session,f0\n";
        assert!(matches!(
            read_vectors(bad_header.as_bytes()).unwrap_err(),
            Error::Parse { line: 1, .. }
        ));
        let nan = "speaker,phrase,session,f0\na,b,c,NaN\n";
        assert!(matches!(
            read_vectors(nan.as_bytes()).unwrap_err(),
            Error::Parse { line: 2, .. }
        ));
    }

    #[test]
    fn trial_tsv_round_trip() {
        let trials = vec![TrialSpec {
            enroll_speaker: "s".into(),
            enroll_phrase: "p".into(),
            test_session: "k".into(),
            expected: Condition::TW,
        }];
        let mut buf = Vec::new();
        write_trials(&trials, &mut buf).unwrap();
        assert_eq!(read_trials(&buf[..]).unwrap(), trials);
        assert!(read_trials("a\tb\tc\tXX\n".as_bytes()).is_err());
    }

    fn training() -> TrainingMetadata {
        TrainingMetadata {
            iterations: 10,
            seed: 3,
            dataset_digest: "00".into(),
            normalization: Normalization::Paper,
            class_mode: None,
        }
    }

    #[test]
    fn model_round_trip_is_bit_exact() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.1 + 0.2, 0.1 + 0.2, 1.0 / 7.0]);
        let p = DoJoBaParams::new(
            dvector![0.1, -3.3],
            Covariance::full(m.clone()).unwrap(),
            Covariance::full(m.clone() * 0.5).unwrap(),
            Covariance::full(m).unwrap(),
        )
        .unwrap();
        let model = ModelFile {
            params: ModelParams::DoJoBa(p),
            projection: Some(
                Projection::new(
                    dvector![1.0, 2.0, 3.0],
                    DMatrix::from_fn(2, 3, |r, c| (r * 3 + c) as f64 / 9.0),
                    dvector![0.5, 1e-7],
                )
                .unwrap(),
            ),
            training: training(),
        };
        let json = model.to_json();
        let back = ModelFile::from_json(&json).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.to_json(), json);
        assert_eq!(back.input_dim(), 3);

        let jb = ModelFile {
            params: ModelParams::JB(
                JBParams::new(
                    dvector![1.0],
                    Covariance::isotropic(1, 0.3).unwrap(),
                    Covariance::isotropic(1, 0.7).unwrap(),
                )
                .unwrap(),
            ),
            projection: None,
            training: TrainingMetadata {
                class_mode: Some(ClassMode::Speaker),
                ..training()
            },
        };
        assert_eq!(ModelFile::from_json(&jb.to_json()).unwrap(), jb);
    }

    #[test]
    fn model_errors() {
        assert!(matches!(
            ModelFile::from_json("{}").unwrap_err(),
            Error::ModelFormat(_)
        ));
        let jb = ModelFile {
            params: ModelParams::JB(
                JBParams::new(
                    dvector![1.0],
                    Covariance::isotropic(1, 0.3).unwrap(),
                    Covariance::isotropic(1, 0.7).unwrap(),
                )
                .unwrap(),
            ),
            projection: None,
            training: training(),
        };
        let bumped = jb
            .to_json()
            .replace("\"schema_version\": 1", "\"schema_version\": 9");
        assert!(ModelFile::from_json(&bumped).is_err());
        let truncated = jb.to_json().replace("\"dim\": 1", "\"dim\": 2");
        assert!(ModelFile::from_json(&truncated).is_err());
    }

    #[test]
    fn digest_changes_with_params() {
        let p = DoJoBaParams::new(
            dvector![0.0],
            Covariance::isotropic(1, 1.0).unwrap(),
            Covariance::isotropic(1, 1.0).unwrap(),
            Covariance::isotropic(1, 1.0).unwrap(),
        )
        .unwrap();
        let mut q = p.clone();
        q.mu[0] = 1e-300;
        assert_eq!(params_digest(&p).len(), 64);
        assert_ne!(params_digest(&p), params_digest(&q));
    }
}
