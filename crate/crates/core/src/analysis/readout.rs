use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analysis::decomposition::Decomposition;
use crate::data::SPECIALS;
use crate::error::{Error, Result};
use crate::matrix::{dot, norm, Matrix};
use crate::model::{argmax, Arch};

/// Which slice of the readout rows to compare against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReadoutBlock {
    Context,
    Decoder,
}

impl fmt::Display for ReadoutBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReadoutBlock::Context => "context",
            ReadoutBlock::Decoder => "decoder",
        })
    }
}

impl FromStr for ReadoutBlock {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "context" => Ok(ReadoutBlock::Context),
            "decoder" => Ok(ReadoutBlock::Decoder),
            _ => Err(Error::Invalid(format!("unknown readout block {s:?}, expected context or decoder"))),
        }
    }
}

/// Row range of the readout matrix that acts on `block` for `arch`.
pub fn block_rows(arch: Arch, hidden: usize, block: ReadoutBlock) -> Result<std::ops::Range<usize>> {
    match (arch, block) {
        (Arch::Aed, ReadoutBlock::Decoder) | (Arch::Ved, ReadoutBlock::Decoder) | (Arch::Ao, ReadoutBlock::Context) => Ok(0..hidden),
        (Arch::Aed, ReadoutBlock::Context) => Ok(hidden..2 * hidden),
        (arch, block) => Err(Error::Invalid(format!("{arch} has no {block} readout block"))),
    }
}

/// Dot products of input components with readout vectors.
///
/// Rows are the non-special input words that have a component, columns the
/// non-special output words.
#[derive(Clone, Debug, PartialEq)]
pub struct ReadoutAlignment {
    pub words: Vec<String>,
    pub outputs: Vec<String>,
    pub matrix: Matrix<f64>,
}

impl ReadoutAlignment {
    /// Best-aligned output for each input word.
    pub fn row_argmax(&self) -> Vec<&str> {
        (0..self.matrix.rows()).map(|r| self.outputs[argmax(self.matrix.row(r))].as_str()).collect()
    }

    /// Best-aligned input word for each output.
    pub fn col_argmax(&self) -> Vec<&str> {
        let t = self.matrix.transpose();
        (0..t.rows()).map(|c| self.words[argmax(t.row(c))].as_str()).collect()
    }
}

/// `readout` is `width x vocab`, with each column an output's readout vector.
pub fn readout_alignment(decomp: &Decomposition, readout: &Matrix<f64>, arch: Arch, block: ReadoutBlock) -> Result<ReadoutAlignment> {
    let n = decomp.hidden();
    let rows = block_rows(arch, n, block)?;
    if readout.rows() < rows.end || readout.cols() != decomp.output_tokens.len() {
        return Err(Error::shape("readout_alignment", format!("readout is {:?} for hidden size {n}", readout.shape())));
    }
    let words: Vec<usize> = (SPECIALS.len()..decomp.input_tokens.len()).filter(|&w| decomp.chi_enc[w].is_some()).collect();
    let outputs: Vec<usize> = (SPECIALS.len()..decomp.output_tokens.len()).collect();
    let matrix = Matrix::from_fn(words.len(), outputs.len(), |i, j| {
        let chi = decomp.chi_enc[words[i]].as_deref().unwrap_or_default();
        rows.clone().zip(chi).map(|(r, c)| readout.get(r, outputs[j]) * c).sum()
    });
    Ok(ReadoutAlignment {
        words: words.iter().map(|&w| decomp.input_tokens[w].clone()).collect(),
        outputs: outputs.iter().map(|&o| decomp.output_tokens[o].clone()).collect(),
        matrix,
    })
}

/// Pairwise angles in degrees between the encoder input components of the
/// non-special input words.
pub fn chi_angles(decomp: &Decomposition) -> (Vec<String>, Matrix<f64>) {
    let words: Vec<usize> = (SPECIALS.len()..decomp.input_tokens.len()).filter(|&w| decomp.chi_enc[w].is_some()).collect();
    let vecs: Vec<&[f64]> = words.iter().map(|&w| decomp.chi_enc[w].as_deref().unwrap_or_default()).collect();
    let angles = Matrix::from_fn(words.len(), words.len(), |i, j| {
        let denom = norm(vecs[i]) * norm(vecs[j]);
        if denom == 0.0 {
            f64::NAN
        } else {
            (dot(vecs[i], vecs[j]) / denom).clamp(-1.0, 1.0).acos().to_degrees()
        }
    });
    (words.iter().map(|&w| decomp.input_tokens[w].clone()).collect(), angles)
}
