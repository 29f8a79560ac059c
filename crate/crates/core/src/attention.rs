//! Single-head attention: plain dot-product and the learned query/key/value form.
//!
//! Both reduce to the same three graph operations once the encoder side has
//! been turned into an [`AttentionMemory`]: alignment logits `a_st`, a masked
//! softmax over valid encoder steps, and the weighted sum that gives `c_s`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{masked_softmax_row, Tape, Var};
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::params::{Bound, ParamId, ParamStore};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    None,
    Dot,
    Qkv,
}

impl fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttentionKind::None => "none",
            AttentionKind::Dot => "dot",
            AttentionKind::Qkv => "qkv",
        })
    }
}

impl FromStr for AttentionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(AttentionKind::None),
            "dot" => Ok(AttentionKind::Dot),
            "qkv" => Ok(AttentionKind::Qkv),
            other => Err(Error::Config(format!(
                "unknown attention {other:?} (expected none, dot or qkv)"
            ))),
        }
    }
}

/// Learned projections: `q_s = h_s Q`, `k_t = h_t K`, `v_t = h_t V`.
///
/// Stored right-acting, so `Q` and `K` are `n x n'` and `V` is `n x n`.
#[derive(Clone, Debug)]
pub struct QkvParams {
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
    pub n: usize,
    pub key_dim: usize,
    /// Multiply alignments by `1/sqrt(n')`.
    pub scaled: bool,
}

impl QkvParams {
    pub fn init<F: Real>(store: &mut ParamStore<F>, n: usize, key_dim: usize, scaled: bool, rng: &mut impl Rng) -> Result<Self> {
        if n == 0 || key_dim == 0 {
            return Err(Error::Invalid("attention dimensions must be positive".into()));
        }
        let b = 1.0 / (n as f64).sqrt();
        Ok(Self {
            query: store.add_uniform("attn.Q", n, key_dim, b, rng),
            key: store.add_uniform("attn.K", n, key_dim, b, rng),
            value: store.add_uniform("attn.V", n, n, b, rng),
            n,
            key_dim,
            scaled,
        })
    }

    pub fn attach<F: Real>(store: &ParamStore<F>, n: usize, key_dim: usize, scaled: bool) -> Result<Self> {
        let find = |name: &str, cols: usize| -> Result<ParamId> {
            let id = store
                .id(name)
                .ok_or_else(|| Error::Invalid(format!("missing parameter {name}")))?;
            if store.get(id).shape() != (n, cols) {
                return Err(Error::shape("QkvParams::attach", format!("{name} has shape {:?}", store.get(id).shape())));
            }
            Ok(id)
        };
        Ok(Self {
            query: find("attn.Q", key_dim)?,
            key: find("attn.K", key_dim)?,
            value: find("attn.V", n)?,
            n,
            key_dim,
            scaled,
        })
    }

    pub fn scale<F: Real>(&self) -> F {
        if self.scaled {
            F::one() / F::from_f64(self.key_dim as f64).sqrt()
        } else {
            F::one()
        }
    }
}

/// Encoder-side operands of attention, computed once per sequence.
#[derive(Clone, Copy, Debug)]
pub struct AttentionMemory {
    /// `B x (T * key_width)`.
    pub keys: Var,
    /// `B x (T * value_width)`.
    pub values: Var,
    pub key_width: usize,
    pub value_width: usize,
}

/// Tape handles produced by one attention row.
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub context: Var,
    pub alignment: Var,
    pub weights: Var,
}

/// Plain dot-product attention uses the encoder states as both keys and values.
pub fn dot_memory(enc_stack: Var, n: usize) -> AttentionMemory {
    AttentionMemory {
        keys: enc_stack,
        values: enc_stack,
        key_width: n,
        value_width: n,
    }
}

/// Projects the encoder stack (`B x (T*n)`) through `K` and `V`.
pub fn qkv_memory<F: Real>(tape: &mut Tape<F>, p: &Bound, qkv: &QkvParams, enc_stack: Var) -> Result<AttentionMemory> {
    let (b, cols) = tape.value(enc_stack).shape();
    if cols % qkv.n != 0 {
        return Err(Error::shape("qkv_memory", format!("{cols} columns is not a multiple of n={}", qkv.n)));
    }
    let steps = cols / qkv.n;
    let flat = tape.reshape(enc_stack, b * steps, qkv.n)?;
    let k = tape.matmul(flat, p.var(qkv.key))?;
    let v = tape.matmul(flat, p.var(qkv.value))?;
    Ok(AttentionMemory {
        keys: tape.reshape(k, b, steps * qkv.key_dim)?,
        values: tape.reshape(v, b, steps * qkv.n)?,
        key_width: qkv.key_dim,
        value_width: qkv.n,
    })
}

/// One decoder step of attention for a batch of queries (`B x key_width`).
pub fn attend<F: Real>(tape: &mut Tape<F>, memory: &AttentionMemory, query: Var, scale: F, mask: &Matrix<F>) -> Result<AttentionVars> {
    let mut alignment = tape.row_dots(memory.keys, query, memory.key_width)?;
    if scale != F::one() {
        alignment = tape.scale(alignment, scale);
    }
    let weights = tape.masked_softmax(alignment, mask)?;
    let context = tape.weighted_sum(memory.values, weights, memory.value_width)?;
    Ok(AttentionVars {
        context,
        alignment,
        weights,
    })
}

/// Dot-product attention in graph form: `a_st = h_s . h_t`.
pub fn dot_attention_graph<F: Real>(tape: &mut Tape<F>, enc_stack: Var, dec: Var, n: usize, mask: &Matrix<F>) -> Result<AttentionVars> {
    attend(tape, &dot_memory(enc_stack, n), dec, F::one(), mask)
}

/// Learned attention in graph form: `a_st = q_s . k_t`, context from `v_t`.
pub fn qkv_attention_graph<F: Real>(tape: &mut Tape<F>, p: &Bound, qkv: &QkvParams, enc_stack: Var, dec: Var, mask: &Matrix<F>) -> Result<AttentionVars> {
    let memory = qkv_memory(tape, p, qkv, enc_stack)?;
    let q = tape.matmul(dec, p.var(qkv.query))?;
    attend(tape, &memory, q, qkv.scale(), mask)
}

/// One decoder row of attention for a single sample, on plain values.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionRow<F> {
    pub context: Vec<F>,
    pub alignment: Vec<F>,
    pub weights: Vec<F>,
}

/// Softmax of precomputed `logits` over valid steps, then the weighted sum of `values` rows.
pub fn attend_with_logits<F: Real>(values: &Matrix<F>, logits: &[F], mask: &[bool]) -> Result<AttentionRow<F>> {
    if logits.len() != values.rows() || mask.len() != values.rows() {
        return Err(Error::shape(
            "attention",
            format!("{} logits, {} mask entries, {} encoder steps", logits.len(), mask.len(), values.rows()),
        ));
    }
    let mut weights = vec![F::zero(); logits.len()];
    if !masked_softmax_row(logits, |t| mask[t], &mut weights) {
        return Err(Error::AllMasked { op: "attention", row: 0 });
    }
    let mut context = vec![F::zero(); values.cols()];
    for (t, &w) in weights.iter().enumerate() {
        for (c, &v) in context.iter_mut().zip(values.row(t)) {
            *c += w * v;
        }
    }
    Ok(AttentionRow {
        context,
        alignment: logits.to_vec(),
        weights,
    })
}

/// `enc_states` is `T x n`; `mask[t]` marks valid encoder steps.
pub fn dot_attention<F: Real>(enc_states: &Matrix<F>, dec_state: &[F], mask: &[bool]) -> Result<AttentionRow<F>> {
    if dec_state.len() != enc_states.cols() {
        return Err(Error::shape("dot_attention", format!("decoder state has {} entries, encoder {}", dec_state.len(), enc_states.cols())));
    }
    let logits: Vec<F> = (0..enc_states.rows()).map(|t| dot(enc_states.row(t), dec_state)).collect();
    attend_with_logits(enc_states, &logits, mask)
}

/// Learned attention on plain matrices; `q`, `k` are `n x n'` and `v` is `n x n`.
pub fn qkv_attention<F: Real>(enc_states: &Matrix<F>, dec_state: &[F], q: &Matrix<F>, k: &Matrix<F>, v: &Matrix<F>, scale: F, mask: &[bool]) -> Result<AttentionRow<F>> {
    let dec = Matrix::from_vec(1, dec_state.len(), dec_state.to_vec())?;
    let query = dec.matmul(q)?;
    let keys = enc_states.matmul(k)?;
    let values = enc_states.matmul(v)?;
    let logits: Vec<F> = (0..keys.rows()).map(|t| dot(keys.row(t), query.row(0)) * scale).collect();
    attend_with_logits(&values, &logits, mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[Vec<f64>]) -> Matrix<f64> {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn orthogonal_query_gives_uniform_weights() {
        let enc = m(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![2.0, -1.0, 0.0]]);
        let row = dot_attention(&enc, &[0.0, 0.0, 3.0], &[true, true, false]).unwrap();
        assert_eq!(row.weights, vec![0.5, 0.5, 0.0]);
        assert_eq!(row.context, vec![0.5, 0.5, 0.0]);
    }

    #[test]
    fn single_step_copies_encoder_state() {
        let enc = m(&[vec![0.3, -0.2]]);
        let row = dot_attention(&enc, &[5.0, 1.0], &[true]).unwrap();
        assert_eq!(row.weights, vec![1.0]);
        assert_eq!(row.context, vec![0.3, -0.2]);
    }

    #[test]
    fn all_masked_is_an_error() {
        let enc = m(&[vec![1.0], vec![2.0]]);
        assert!(matches!(dot_attention(&enc, &[1.0], &[false, false]), Err(Error::AllMasked { .. })));
    }

    #[test]
    fn identity_qkv_matches_dot() {
        let enc = m(&[vec![0.1, 0.7], vec![-0.4, 0.2], vec![0.9, -0.3]]);
        let id = Matrix::identity(2);
        let mask = [true, true, true];
        let a = dot_attention(&enc, &[0.5, -1.5], &mask).unwrap();
        let b = qkv_attention(&enc, &[0.5, -1.5], &id, &id, &id, 1.0, &mask).unwrap();
        for (x, y) in a.context.iter().zip(&b.context) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(a.weights, b.weights);
    }

    #[test]
    fn zero_value_matrix_gives_zero_context() {
        let enc = m(&[vec![0.1, 0.7], vec![-0.4, 0.2]]);
        let q = m(&[vec![1.0, 2.0], vec![0.5, -1.0]]);
        let row = qkv_attention(&enc, &[0.3, 0.3], &q, &q, &Matrix::zeros(2, 2), 1.0, &[true, true]).unwrap();
        assert_eq!(row.context, vec![0.0, 0.0]);
    }

    #[test]
    fn graph_and_plain_forms_agree() {
        let enc_rows = [vec![0.1, 0.7, -0.2], vec![-0.4, 0.2, 0.5]];
        let dec = vec![0.6, -0.1, 0.8];
        let mut tape = Tape::<f64>::new();
        let stack = tape.constant(Matrix::from_vec(1, 6, enc_rows.concat()).unwrap());
        let q = tape.constant(Matrix::from_vec(1, 3, dec.clone()).unwrap());
        let out = dot_attention_graph(&mut tape, stack, q, 3, &Matrix::filled(1, 2, 1.0)).unwrap();
        let plain = dot_attention(&m(&enc_rows), &dec, &[true, true]).unwrap();
        assert_eq!(tape.value(out.weights).as_slice(), plain.weights.as_slice());
        assert_eq!(tape.value(out.context).as_slice(), plain.context.as_slice());
    }
}
