//! Recorded greedy-decoding runs: per-sample hidden states, attention and logits.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Vocab, SOS};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// One decoded sample. Only valid steps are stored: `T` rows on the encoder
/// side (EOS included) and one row per decoder step actually run.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleTrace {
    /// Encoder token ids, EOS included.
    pub input: Vec<usize>,
    /// Reference target ids, EOS included, when known.
    pub target: Option<Vec<usize>>,
    /// Greedy outputs, one per decoder step.
    pub output: Vec<usize>,
    /// `T x n`; for LSTM the `h~` half.
    pub enc_states: Matrix<f64>,
    /// `S x n`.
    pub dec_states: Matrix<f64>,
    /// `S x T` alignment logits `a_st`.
    pub alignment: Option<Matrix<f64>>,
    /// `S x T` attention weights.
    pub attention: Option<Matrix<f64>>,
    /// `S x V` readout logits.
    pub logits: Matrix<f64>,
}

impl SampleTrace {
    pub fn enc_len(&self) -> usize {
        self.input.len()
    }

    pub fn dec_len(&self) -> usize {
        self.output.len()
    }

    /// Token fed to the decoder at step `s` (0-based): SOS, then the previous output.
    pub fn dec_input(&self, s: usize) -> usize {
        if s == 0 {
            SOS
        } else {
            self.output[s - 1]
        }
    }

    /// Correct outputs and the number of scored positions (the full reference length).
    pub fn word_hits(&self) -> Option<(usize, usize)> {
        let target = self.target.as_ref()?;
        let hits = target
            .iter()
            .zip(&self.output)
            .filter(|(a, b)| a == b)
            .count();
        Some((hits, target.len()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub hidden: usize,
    pub input_tokens: Vec<String>,
    pub output_tokens: Vec<String>,
    /// Free-form reference to the model that produced the traces.
    pub model: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceBundle {
    pub meta: TraceMeta,
    pub samples: Vec<SampleTrace>,
}

#[derive(Serialize, Deserialize)]
struct SampleEntry {
    input: Vec<usize>,
    target: Option<Vec<usize>>,
    output: Vec<usize>,
    has_attention: bool,
    logits_cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    meta: TraceMeta,
    samples: Vec<SampleEntry>,
    /// Blob files in the order they are concatenated per sample.
    arrays: Vec<String>,
}

const BLOB: &str = "arrays.f32";

impl TraceBundle {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn hidden(&self) -> usize {
        self.meta.hidden
    }

    pub fn max_enc_len(&self) -> usize {
        self.samples.iter().map(SampleTrace::enc_len).max().unwrap_or(0)
    }

    pub fn max_dec_len(&self) -> usize {
        self.samples.iter().map(SampleTrace::dec_len).max().unwrap_or(0)
    }

    pub fn input_vocab(&self) -> Result<Vocab> {
        Vocab::new("input", &self.meta.input_tokens[3..])
    }

    pub fn output_vocab(&self) -> Result<Vocab> {
        Vocab::new("output", &self.meta.output_tokens[3..])
    }

    /// Word accuracy over reference positions; decoding that stops early scores the rest as wrong.
    pub fn word_accuracy(&self) -> Option<f64> {
        let (mut hits, mut total) = (0, 0);
        for s in &self.samples {
            let (h, t) = s.word_hits()?;
            hits += h;
            total += t;
        }
        (total > 0).then(|| hits as f64 / total as f64)
    }

    /// Writes `manifest.json` and one little-endian `f32` blob.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut bytes = Vec::new();
        let mut push = |m: &Matrix<f64>| {
            for &x in m.as_slice() {
                bytes.extend_from_slice(&(x as f32).to_le_bytes());
            }
        };
        let mut entries = Vec::with_capacity(self.samples.len());
        for s in &self.samples {
            push(&s.enc_states);
            push(&s.dec_states);
            if let (Some(a), Some(w)) = (&s.alignment, &s.attention) {
                push(a);
                push(w);
            }
            push(&s.logits);
            entries.push(SampleEntry {
                input: s.input.clone(),
                target: s.target.clone(),
                output: s.output.clone(),
                has_attention: s.attention.is_some(),
                logits_cols: s.logits.cols(),
            });
        }
        let manifest = Manifest {
            meta: self.meta.clone(),
            samples: entries,
            arrays: vec!["enc_states".into(), "dec_states".into(), "alignment".into(), "attention".into(), "logits".into()],
        };
        let path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Json { path: path.clone(), source: e })?;
        fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        let blob = dir.join(BLOB);
        fs::write(&blob, bytes).map_err(|e| Error::io(&blob, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Json { path: path.clone(), source: e })?;
        let blob = dir.join(BLOB);
        let bytes = fs::read(&blob).map_err(|e| Error::io(&blob, e))?;
        if bytes.len() % 4 != 0 {
            return Err(Error::Invalid(format!("{} is not a whole number of floats", blob.display())));
        }
        let floats: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let n = manifest.meta.hidden;
        let mut pos = 0;
        let mut take = |rows: usize, cols: usize| -> Result<Matrix<f64>> {
            let end = pos + rows * cols;
            let data = floats
                .get(pos..end)
                .ok_or_else(|| Error::Invalid(format!("{} is truncated", blob.display())))?
                .to_vec();
            pos = end;
            Matrix::from_vec(rows, cols, data)
        };
        let mut samples = Vec::with_capacity(manifest.samples.len());
        for e in manifest.samples {
            let (t, s) = (e.input.len(), e.output.len());
            let enc_states = take(t, n)?;
            let dec_states = take(s, n)?;
            let (alignment, attention) = if e.has_attention {
                (Some(take(s, t)?), Some(take(s, t)?))
            } else {
                (None, None)
            };
            let logits = take(s, e.logits_cols)?;
            samples.push(SampleTrace {
                input: e.input,
                target: e.target,
                output: e.output,
                enc_states,
                dec_states,
                alignment,
                attention,
                logits,
            });
        }
        if pos != floats.len() {
            return Err(Error::Invalid(format!("{} has {} trailing floats", blob.display(), floats.len() - pos)));
        }
        Ok(Self {
            meta: manifest.meta,
            samples,
        })
    }
}
