//! Labeled feature vectors and the (speaker, phrase, session) index over them.

use std::collections::{BTreeMap, HashMap};

use nalgebra::DVector;
use sha2::{Digest, Sha256};

use crate::error::{check_dim, Error, Result};

/// One utterance-level feature vector with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledVector {
    pub features: DVector<f64>,
    pub speaker_id: String,
    pub phrase_id: String,
    pub session_id: String,
}

impl LabeledVector {
    pub fn new(
        features: DVector<f64>,
        speaker_id: impl Into<String>,
        phrase_id: impl Into<String>,
        session_id: impl Into<String>,
    ) -> Result<Self> {
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: 0 });
        }
        Ok(Self {
            features,
            speaker_id: speaker_id.into(),
            phrase_id: phrase_id.into(),
            session_id: session_id.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }
}

/// All sessions of one (speaker, phrase) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct PairCell {
    pub speaker: usize,
    pub phrase: usize,
    /// Indices into [`Dataset::vectors`], in insertion order; position is `k`.
    pub members: Vec<usize>,
}

impl PairCell {
    pub fn count(&self) -> usize {
        self.members.len()
    }
}

/// An indexed collection of labeled vectors sharing one dimension.
///
/// Speakers and phrases are numbered in order of first appearance, and the
/// (speaker, phrase) cells are kept sorted by `(i, j)`, so every vector is
/// reachable through exactly one `(i, j, k)` triple.
#[derive(Debug, Clone)]
pub struct Dataset {
    vectors: Vec<LabeledVector>,
    dim: usize,
    speakers: Vec<String>,
    phrases: Vec<String>,
    speaker_index: HashMap<String, usize>,
    phrase_index: HashMap<String, usize>,
    cells: Vec<PairCell>,
    cell_index: HashMap<(usize, usize), usize>,
    speaker_counts: Vec<usize>,
    phrase_counts: Vec<usize>,
}

impl Dataset {
    pub fn new(vectors: Vec<LabeledVector>) -> Result<Self> {
        let dim = vectors
            .first()
            .ok_or(Error::Empty("dataset has no vectors"))?
            .dim();
        if dim == 0 {
            return Err(Error::Empty("feature vectors have zero dimension"));
        }
        let mut speakers = Vec::new();
        let mut phrases = Vec::new();
        let mut speaker_index = HashMap::new();
        let mut phrase_index = HashMap::new();
        let mut grouped: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (n, v) in vectors.iter().enumerate() {
            check_dim(dim, v.dim())?;
            if v.features.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite { index: n });
            }
            let i = *speaker_index
                .entry(v.speaker_id.clone())
                .or_insert_with(|| {
                    speakers.push(v.speaker_id.clone());
                    speakers.len() - 1
                });
            let j = *phrase_index.entry(v.phrase_id.clone()).or_insert_with(|| {
                phrases.push(v.phrase_id.clone());
                phrases.len() - 1
            });
            grouped.entry((i, j)).or_default().push(n);
        }
        let mut speaker_counts = vec![0; speakers.len()];
        let mut phrase_counts = vec![0; phrases.len()];
        let mut cells = Vec::with_capacity(grouped.len());
        let mut cell_index = HashMap::with_capacity(grouped.len());
        for ((i, j), members) in grouped {
            speaker_counts[i] += members.len();
            phrase_counts[j] += members.len();
            cell_index.insert((i, j), cells.len());
            cells.push(PairCell {
                speaker: i,
                phrase: j,
                members,
            });
        }
        Ok(Self {
            vectors,
            dim,
            speakers,
            phrases,
            speaker_index,
            phrase_index,
            cells,
            cell_index,
            speaker_counts,
            phrase_counts,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[LabeledVector] {
        &self.vectors
    }

    pub fn into_vectors(self) -> Vec<LabeledVector> {
        self.vectors
    }

    pub fn num_speakers(&self) -> usize {
        self.speakers.len()
    }

    pub fn num_phrases(&self) -> usize {
        self.phrases.len()
    }

    pub fn speakers(&self) -> &[String] {
        &self.speakers
    }

    pub fn phrases(&self) -> &[String] {
        &self.phrases
    }

    pub fn speaker_index(&self, id: &str) -> Option<usize> {
        self.speaker_index.get(id).copied()
    }

    pub fn phrase_index(&self, id: &str) -> Option<usize> {
        self.phrase_index.get(id).copied()
    }

    /// Non-empty (speaker, phrase) cells sorted by `(i, j)`.
    pub fn cells(&self) -> &[PairCell] {
        &self.cells
    }

    /// `H_ij`, zero for unobserved pairs.
    pub fn count(&self, speaker: usize, phrase: usize) -> usize {
        self.cell_index
            .get(&(speaker, phrase))
            .map_or(0, |&c| self.cells[c].count())
    }

    /// `Σ_j H_ij`.
    pub fn speaker_count(&self, speaker: usize) -> usize {
        self.speaker_counts[speaker]
    }

    /// `Σ_i H_ij`.
    pub fn phrase_count(&self, phrase: usize) -> usize {
        self.phrase_counts[phrase]
    }

    /// Vector for the `k`-th session of speaker `i` saying phrase `j`.
    pub fn get(&self, speaker: usize, phrase: usize, k: usize) -> Option<&LabeledVector> {
        let cell = &self.cells[*self.cell_index.get(&(speaker, phrase))?];
        cell.members.get(k).map(|&n| &self.vectors[n])
    }

    pub fn mean(&self) -> DVector<f64> {
        let mut sum = DVector::zeros(self.dim);
        for v in &self.vectors {
            sum += &v.features;
        }
        sum / self.len() as f64
    }

    /// SHA-256 over labels and little-endian feature bytes, in storage order.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for v in &self.vectors {
            for label in [&v.speaker_id, &v.phrase_id, &v.session_id] {
                hasher.update((label.len() as u64).to_le_bytes());
                hasher.update(label.as_bytes());
            }
            for x in v.features.iter() {
                hasher.update(x.to_le_bytes());
            }
        }
        hex_string(&hasher.finalize())
    }

    /// Same vectors with every feature vector mapped through `f`.
    pub fn map_features<F>(&self, mut f: F) -> Result<Dataset>
    where
        F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    {
        let vectors = self
            .vectors
            .iter()
            .map(|v| {
                Ok(LabeledVector {
                    features: f(&v.features)?,
                    ..v.clone()
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(vectors)
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
