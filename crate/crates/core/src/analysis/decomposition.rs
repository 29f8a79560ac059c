use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::trace::{SampleTrace, TraceBundle};

/// Temporal and input components estimated from a trace set.
///
/// `tau_*` row `t` is the mean state at 0-based position `t`; `chi_*[w]` is
/// the mean of `h - tau` over states produced right after token `w` was fed
/// (the encoder input word, or the decoder's previous token). Everything left
/// over is the residual `delta = h - tau - chi`.
#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition {
    pub tau_enc: Matrix<f64>,
    pub tau_dec: Matrix<f64>,
    pub chi_enc: Vec<Option<Vec<f64>>>,
    pub chi_dec: Vec<Option<Vec<f64>>>,
    pub support_enc: Vec<usize>,
    pub support_dec: Vec<usize>,
    pub count_enc: Vec<usize>,
    pub count_dec: Vec<usize>,
    pub input_tokens: Vec<String>,
    pub output_tokens: Vec<String>,
}

/// Per-state split `h = tau + chi + delta`.
#[derive(Clone, Debug, PartialEq)]
pub struct Parts {
    pub tau: Vec<f64>,
    pub chi: Vec<f64>,
    pub delta: Vec<f64>,
}

fn mean_rows(n: usize, len: usize, rows: impl Iterator<Item = (usize, Vec<f64>)>) -> (Matrix<f64>, Vec<usize>) {
    let mut sum = Matrix::zeros(len, n);
    let mut count = vec![0usize; len];
    for (i, v) in rows {
        for (a, b) in sum.row_mut(i).iter_mut().zip(&v) {
            *a += b;
        }
        count[i] += 1;
    }
    for (i, &c) in count.iter().enumerate() {
        if c > 0 {
            let inv = 1.0 / c as f64;
            sum.row_mut(i).iter_mut().for_each(|x| *x *= inv);
        }
    }
    (sum, count)
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Estimates components from every valid state in `traces`.
pub fn estimate_components(traces: &TraceBundle) -> Result<Decomposition> {
    if traces.is_empty() {
        return Err(Error::Invalid("component estimation needs at least one sample".into()));
    }
    let n = traces.hidden();
    let vin = traces.meta.input_tokens.len();
    let vout = traces.meta.output_tokens.len();
    for s in &traces.samples {
        if s.enc_states.cols() != n || s.dec_states.cols() != n {
            return Err(Error::shape("estimate_components", "state width differs from the bundle's hidden size"));
        }
        if let Some(&bad) = s.input.iter().find(|&&w| w >= vin) {
            return Err(Error::TokenOutOfRange { id: bad, size: vin });
        }
        if let Some(&bad) = s.output.iter().find(|&&w| w >= vout) {
            return Err(Error::TokenOutOfRange { id: bad, size: vout });
        }
    }
    let samples = &traces.samples;
    let enc_rows = || samples.iter().flat_map(|s| (0..s.enc_len()).map(move |t| (t, s.enc_states.row(t).to_vec())));
    let dec_rows = || samples.iter().flat_map(|s| (0..s.dec_len()).map(move |t| (t, s.dec_states.row(t).to_vec())));
    let (tau_enc, support_enc) = mean_rows(n, traces.max_enc_len(), enc_rows());
    let (tau_dec, support_dec) = mean_rows(n, traces.max_dec_len(), dec_rows());

    let enc_resid = samples.iter().flat_map(|s| {
        let tau = &tau_enc;
        (0..s.enc_len()).map(move |t| (s.input[t], sub(s.enc_states.row(t), tau.row(t))))
    });
    let (chi_e, count_enc) = mean_rows(n, vin, enc_resid);
    let dec_resid = samples.iter().flat_map(|s| {
        let tau = &tau_dec;
        (0..s.dec_len()).map(move |t| (s.dec_input(t), sub(s.dec_states.row(t), tau.row(t))))
    });
    let (chi_d, count_dec) = mean_rows(n, vout, dec_resid);
    let keep = |m: &Matrix<f64>, c: &[usize]| (0..c.len()).map(|w| (c[w] > 0).then(|| m.row(w).to_vec())).collect();
    Ok(Decomposition {
        chi_enc: keep(&chi_e, &count_enc),
        chi_dec: keep(&chi_d, &count_dec),
        tau_enc,
        tau_dec,
        support_enc,
        support_dec,
        count_enc,
        count_dec,
        input_tokens: traces.meta.input_tokens.clone(),
        output_tokens: traces.meta.output_tokens.clone(),
    })
}

impl Decomposition {
    pub fn hidden(&self) -> usize {
        self.tau_enc.cols()
    }

    pub fn chi_enc_of(&self, word: usize) -> Result<&[f64]> {
        self.chi_enc
            .get(word)
            .and_then(|c| c.as_deref())
            .ok_or_else(|| Error::MissingWord(self.input_tokens.get(word).cloned().unwrap_or_else(|| word.to_string())))
    }

    pub fn chi_dec_of(&self, word: usize) -> Result<&[f64]> {
        self.chi_dec
            .get(word)
            .and_then(|c| c.as_deref())
            .ok_or_else(|| Error::MissingWord(self.output_tokens.get(word).cloned().unwrap_or_else(|| word.to_string())))
    }

    pub fn input_word(&self, token: &str) -> Result<usize> {
        self.input_tokens
            .iter()
            .position(|t| t == token)
            .ok_or_else(|| Error::MissingWord(token.to_string()))
    }

    pub fn output_word(&self, token: &str) -> Result<usize> {
        self.output_tokens
            .iter()
            .position(|t| t == token)
            .ok_or_else(|| Error::MissingWord(token.to_string()))
    }

    /// Split of encoder state `t` (0-based) of `sample`.
    pub fn enc_parts(&self, sample: &SampleTrace, t: usize) -> Result<Parts> {
        let h = sample.enc_states.row(t);
        let tau = self.tau_enc.row(t).to_vec();
        let chi = self.chi_enc_of(sample.input[t])?.to_vec();
        let delta = h.iter().zip(&tau).zip(&chi).map(|((h, a), b)| h - a - b).collect();
        Ok(Parts { tau, chi, delta })
    }

    /// Split of decoder state `s` (0-based) of `sample`.
    pub fn dec_parts(&self, sample: &SampleTrace, s: usize) -> Result<Parts> {
        let h = sample.dec_states.row(s);
        let tau = self.tau_dec.row(s).to_vec();
        let chi = self.chi_dec_of(sample.dec_input(s))?.to_vec();
        let delta = h.iter().zip(&tau).zip(&chi).map(|((h, a), b)| h - a - b).collect();
        Ok(Parts { tau, chi, delta })
    }
}

impl Parts {
    /// The parts in breakdown order: temporal, input, residual.
    pub fn as_array(&self) -> [&[f64]; 3] {
        [&self.tau, &self.chi, &self.delta]
    }
}
