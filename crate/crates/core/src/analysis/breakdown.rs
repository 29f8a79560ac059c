use crate::analysis::decomposition::{Decomposition, Parts};
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::model::argmax;
use crate::trace::{SampleTrace, TraceBundle};

/// Term labels, decoder part first: `tau.chi` is `tau^D_s . chi^E_t`.
pub const TERM_NAMES: [&str; 9] = [
    "tau.tau",
    "tau.chi",
    "tau.delta",
    "chi.tau",
    "chi.chi",
    "chi.delta",
    "delta.tau",
    "delta.chi",
    "delta.delta",
];

pub const TAU_TAU: usize = 0;
pub const TAU_CHI: usize = 1;
pub const TAU_DELTA: usize = 2;
pub const CHI_DELTA: usize = 5;
pub const DELTA_CHI: usize = 7;

/// Learned projections applied before the dot product: `a = scale * (h^D Q) . (h^E K)`.
#[derive(Clone, Copy, Debug)]
pub struct Projection<'a> {
    pub query: &'a Matrix<f64>,
    pub key: &'a Matrix<f64>,
    pub scale: f64,
}

fn project(v: &[f64], m: Option<&Matrix<f64>>) -> Vec<f64> {
    match m {
        None => v.to_vec(),
        Some(m) => (0..m.cols()).map(|c| v.iter().enumerate().map(|(r, x)| x * m.get(r, c)).sum()).collect(),
    }
}

fn projected(parts: &Parts, m: Option<&Matrix<f64>>) -> [Vec<f64>; 3] {
    parts.as_array().map(|p| project(p, m))
}

/// Nine `S x T` alignment terms of one sample and their absolute shares.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentBreakdown {
    pub terms: Vec<Matrix<f64>>,
    pub shares: Vec<Matrix<f64>>,
}

impl AlignmentBreakdown {
    /// Sum of all nine terms, i.e. the full alignment.
    pub fn total(&self) -> Matrix<f64> {
        let mut acc = self.terms[0].clone();
        for t in &self.terms[1..] {
            acc.add_assign(t);
        }
        acc
    }
}

pub fn alignment_breakdown(decomp: &Decomposition, sample: &SampleTrace, proj: Option<Projection>) -> Result<AlignmentBreakdown> {
    let (s_len, t_len) = (sample.dec_len(), sample.enc_len());
    let (q, k, scale) = match proj {
        Some(p) => (Some(p.query), Some(p.key), p.scale),
        None => (None, None, 1.0),
    };
    let enc: Vec<[Vec<f64>; 3]> = (0..t_len)
        .map(|t| decomp.enc_parts(sample, t).map(|p| projected(&p, k)))
        .collect::<Result<_>>()?;
    let mut terms = vec![Matrix::zeros(s_len, t_len); 9];
    let mut shares = vec![Matrix::zeros(s_len, t_len); 9];
    for s in 0..s_len {
        let dec = projected(&decomp.dec_parts(sample, s)?, q);
        for (t, e) in enc.iter().enumerate() {
            let mut vals = [0.0; 9];
            for i in 0..3 {
                for j in 0..3 {
                    vals[3 * i + j] = scale * dot(&dec[i], &e[j]);
                }
            }
            let abs_total: f64 = vals.iter().map(|v| v.abs()).sum();
            for (idx, &v) in vals.iter().enumerate() {
                terms[idx].set(s, t, v);
                let share = if abs_total > 0.0 { v.abs() / abs_total } else { 1.0 / 9.0 };
                shares[idx].set(s, t, share);
            }
        }
    }
    Ok(AlignmentBreakdown { terms, shares })
}

/// Mean share of each term at the `k` largest full alignments of every decoder step.
pub fn mean_top_shares(decomp: &Decomposition, traces: &TraceBundle, proj: Option<Projection>, k: usize) -> Result<[f64; 9]> {
    if k == 0 {
        return Err(Error::Invalid("top-k needs k >= 1".into()));
    }
    let mut acc = [0.0; 9];
    let mut count = 0usize;
    for sample in &traces.samples {
        let b = alignment_breakdown(decomp, sample, proj)?;
        let full = b.total();
        for s in 0..full.rows() {
            let mut order: Vec<usize> = (0..full.cols()).collect();
            order.sort_by(|&x, &y| full.get(s, y).total_cmp(&full.get(s, x)).then(x.cmp(&y)));
            for &t in order.iter().take(k) {
                for (a, sh) in acc.iter_mut().zip(&b.shares) {
                    *a += sh.get(s, t);
                }
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::Invalid("no decoder steps in traces".into()));
    }
    Ok(acc.map(|a| a / count as f64))
}

/// Row softmax of the selected terms: attention the model would have if only
/// those terms contributed to the alignment.
pub fn component_attention(breakdown: &AlignmentBreakdown, subset: &[usize]) -> Result<Matrix<f64>> {
    if subset.is_empty() || subset.iter().any(|&i| i >= 9) {
        return Err(Error::Invalid(format!("term subset {subset:?} must be non-empty indices below 9")));
    }
    let (rows, cols) = breakdown.terms[0].shape();
    let mut out = Matrix::zeros(rows, cols);
    for s in 0..rows {
        let logits: Vec<f64> = (0..cols).map(|t| subset.iter().map(|&i| breakdown.terms[i].get(s, t)).sum()).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|&l| (l - max).exp()).sum();
        for (t, &l) in logits.iter().enumerate() {
            out.set(s, t, (l - max).exp() / z);
        }
    }
    Ok(out)
}

/// Fraction of decoder steps where the subset-only attention peaks at the
/// same encoder step as the recorded attention.
pub fn argmax_agreement(decomp: &Decomposition, traces: &TraceBundle, proj: Option<Projection>, subset: &[usize]) -> Result<f64> {
    let (mut hits, mut total) = (0usize, 0usize);
    for sample in &traces.samples {
        let att = sample
            .attention
            .as_ref()
            .ok_or_else(|| Error::Invalid("traces carry no attention".into()))?;
        let b = alignment_breakdown(decomp, sample, proj)?;
        let comp = component_attention(&b, subset)?;
        for s in 0..att.rows() {
            hits += usize::from(argmax(att.row(s)) == argmax(comp.row(s)));
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Invalid("no decoder steps in traces".into()));
    }
    Ok(hits as f64 / total as f64)
}
