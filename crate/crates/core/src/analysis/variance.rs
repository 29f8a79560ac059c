use crate::analysis::decomposition::Decomposition;
use crate::analysis::mean;
use crate::data::SPECIALS;
use crate::error::{Error, Result};
use crate::trace::TraceBundle;

/// Sum of per-dimension variances of a set of equal-length vectors.
fn total_variance(rows: &[Vec<f64>]) -> f64 {
    let m = rows.len() as f64;
    let n = rows[0].len();
    (0..n)
        .map(|j| {
            let mu = rows.iter().map(|r| r[j]).sum::<f64>() / m;
            rows.iter().map(|r| (r[j] - mu).powi(2)).sum::<f64>() / m
        })
        .sum()
}

/// Variance of `h - tau` over the encoder states that read `word`, divided by
/// the variance of `h` over the same states.
pub fn word_variance_ratio(traces: &TraceBundle, decomp: &Decomposition, word: usize) -> Result<f64> {
    let mut raw = Vec::new();
    let mut centred = Vec::new();
    for sample in &traces.samples {
        for t in (0..sample.enc_len()).filter(|&t| sample.input[t] == word) {
            let h = sample.enc_states.row(t);
            raw.push(h.to_vec());
            centred.push(h.iter().zip(decomp.tau_enc.row(t)).map(|(a, b)| a - b).collect());
        }
    }
    if raw.len() < 2 {
        let name = decomp.input_tokens.get(word).cloned().unwrap_or_else(|| word.to_string());
        return Err(Error::Invalid(format!("word {name:?} occurs {} times, variance ratio needs 2", raw.len())));
    }
    let denom = total_variance(&raw);
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok(total_variance(&centred) / denom)
}

/// Per-word ratios for every non-special input word seen at least twice, and their mean.
pub fn mean_word_variance_ratio(traces: &TraceBundle, decomp: &Decomposition) -> Result<(Vec<(String, f64)>, f64)> {
    let mut per_word = Vec::new();
    for (w, token) in decomp.input_tokens.iter().enumerate().skip(SPECIALS.len()) {
        if decomp.count_enc[w] >= 2 {
            per_word.push((token.clone(), word_variance_ratio(traces, decomp, w)?));
        }
    }
    let m = mean(per_word.iter().map(|p| p.1)).ok_or_else(|| Error::Invalid("no input word occurs twice".into()))?;
    Ok((per_word, m))
}
