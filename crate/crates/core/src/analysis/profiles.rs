use crate::analysis::decomposition::Decomposition;
use crate::analysis::mean;
use crate::data::escan::oracle_with_sources;
use crate::data::{Sample, Vocab};
use crate::error::{Error, Result};
use crate::matrix::dot;
use crate::model::argmax;
use crate::trace::TraceBundle;

/// Values at offsets `delta = t - s`; offsets outside the supported range are dropped.
#[derive(Clone, Debug, PartialEq)]
pub struct OffsetProfile {
    pub offsets: Vec<i64>,
    pub values: Vec<f64>,
}

impl OffsetProfile {
    /// Offset of the largest value; ties go to the smallest offset.
    pub fn argmax(&self) -> Option<i64> {
        (!self.values.is_empty()).then(|| self.offsets[argmax(&self.values)])
    }

    pub fn at(&self, offset: i64) -> Option<f64> {
        self.offsets.iter().position(|&o| o == offset).map(|i| self.values[i])
    }
}

fn shifted(s: usize, delta: i64, len: usize) -> Option<usize> {
    let t = s as i64 + delta;
    (t >= 0 && (t as usize) < len).then_some(t as usize)
}

/// `tau^D_s . tau^E_{s+delta}` for each offset (0-based `s`).
pub fn temporal_offset_profile(decomp: &Decomposition, s: usize, offsets: &[i64]) -> Result<OffsetProfile> {
    if s >= decomp.tau_dec.rows() || decomp.support_dec[s] == 0 {
        return Err(Error::Invalid(format!("decoder step {s} has no support")));
    }
    let mut out = OffsetProfile { offsets: Vec::new(), values: Vec::new() };
    for &d in offsets {
        if let Some(t) = shifted(s, d, decomp.tau_enc.rows()).filter(|&t| decomp.support_enc[t] > 0) {
            out.offsets.push(d);
            out.values.push(dot(decomp.tau_dec.row(s), decomp.tau_enc.row(t)));
        }
    }
    Ok(out)
}

/// Encoder step maximising `tau^D_s . tau^E_t` over all supported `t`.
pub fn temporal_argmax(decomp: &Decomposition, s: usize) -> Result<usize> {
    if s >= decomp.tau_dec.rows() || decomp.support_dec[s] == 0 {
        return Err(Error::Invalid(format!("decoder step {s} has no support")));
    }
    let scores: Vec<f64> = (0..decomp.tau_enc.rows())
        .map(|t| if decomp.support_enc[t] > 0 { dot(decomp.tau_dec.row(s), decomp.tau_enc.row(t)) } else { f64::NEG_INFINITY })
        .collect();
    Ok(argmax(&scores))
}

/// Mean over occurrences of `word` at encoder step `t` of
/// `(chi^E_word + delta^E_t) . tau^D_{t-offset}`.
pub fn offset_dot_profile(decomp: &Decomposition, traces: &TraceBundle, word: usize, offsets: &[i64]) -> Result<OffsetProfile> {
    let chi = decomp.chi_enc_of(word)?;
    let mut sums = vec![(0.0, 0usize); offsets.len()];
    for sample in &traces.samples {
        for t in (0..sample.enc_len()).filter(|&t| sample.input[t] == word) {
            let parts = decomp.enc_parts(sample, t)?;
            let v: Vec<f64> = chi.iter().zip(&parts.delta).map(|(c, d)| c + d).collect();
            for (acc, &d) in sums.iter_mut().zip(offsets) {
                if let Some(s) = shifted(t, -d, decomp.tau_dec.rows()).filter(|&s| decomp.support_dec[s] > 0) {
                    acc.0 += dot(&v, decomp.tau_dec.row(s));
                    acc.1 += 1;
                }
            }
        }
    }
    let mut out = OffsetProfile { offsets: Vec::new(), values: Vec::new() };
    for (&d, &(sum, n)) in offsets.iter().zip(&sums) {
        if n > 0 {
            out.offsets.push(d);
            out.values.push(sum / n as f64);
        }
    }
    Ok(out)
}

/// Mean `source - s` per 0-based output step over eSCAN samples, where the
/// source is the input word each output is produced from. Every `and`
/// before a step shifts it by one, so this is the mean preceding `and` count.
pub fn source_offset_profile(samples: &[Sample], input: &Vocab) -> Result<Vec<Option<f64>>> {
    let mut sums: Vec<(f64, usize)> = Vec::new();
    for sample in samples {
        let words = input.decode(&sample.input)?;
        let (_, sources) = oracle_with_sources(&words)?;
        if sums.len() < sources.len() {
            sums.resize(sources.len(), (0.0, 0));
        }
        for (s, &src) in sources.iter().enumerate() {
            sums[s].0 += src as f64 - s as f64;
            sums[s].1 += 1;
        }
    }
    Ok(sums.into_iter().map(|(sum, n)| (n > 0).then(|| sum / n as f64)).collect())
}

/// Fraction of decoder steps whose attention argmax is `expected(s, dec_len)`.
pub fn attention_hit_rate(traces: &TraceBundle, expected: impl Fn(usize, usize) -> usize) -> Result<f64> {
    let rates = traces.samples.iter().map(|sample| {
        let att = sample
            .attention
            .as_ref()
            .ok_or_else(|| Error::Invalid("traces carry no attention".into()))?;
        Ok((0..sample.dec_len()).map(|s| usize::from(argmax(att.row(s)) == expected(s, sample.dec_len()))).collect::<Vec<_>>())
    });
    let mut hits = Vec::new();
    for r in rates {
        hits.extend(r?);
    }
    mean(hits.into_iter().map(|h| h as f64)).ok_or_else(|| Error::Invalid("no decoder steps in traces".into()))
}
