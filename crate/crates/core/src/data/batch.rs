use crate::data::{Sample, PAD, SOS};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::real::Real;

/// Padded batch, row-major `B x T` / `B x S` id grids.
///
/// Padding uses [`PAD`]; `enc_len` and `dec_len` include EOS, so the validity
/// mask of row `b` is `len[b]` ones followed by zeros.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeqBatch {
    pub batch: usize,
    pub max_t: usize,
    pub max_s: usize,
    pub enc_ids: Vec<usize>,
    pub dec_in_ids: Vec<usize>,
    pub dec_target_ids: Vec<usize>,
    pub enc_len: Vec<usize>,
    pub dec_len: Vec<usize>,
}

impl SeqBatch {
    pub fn enc_id(&self, b: usize, t: usize) -> usize {
        self.enc_ids[b * self.max_t + t]
    }

    pub fn dec_in_id(&self, b: usize, s: usize) -> usize {
        self.dec_in_ids[b * self.max_s + s]
    }

    pub fn dec_target_id(&self, b: usize, s: usize) -> usize {
        self.dec_target_ids[b * self.max_s + s]
    }

    pub fn enc_mask<F: Real>(&self) -> Matrix<F> {
        prefix_mask(&self.enc_len, self.max_t)
    }

    pub fn dec_mask<F: Real>(&self) -> Matrix<F> {
        prefix_mask(&self.dec_len, self.max_s)
    }

    /// Decoder targets at step `s` for every row (PAD past the end).
    pub fn targets_at(&self, s: usize) -> Vec<usize> {
        (0..self.batch).map(|b| self.dec_target_id(b, s)).collect()
    }

    pub fn valid_targets(&self) -> usize {
        self.dec_len.iter().sum()
    }
}

fn prefix_mask<F: Real>(lens: &[usize], width: usize) -> Matrix<F> {
    Matrix::from_fn(lens.len(), width, |b, t| if t < lens[b] { F::one() } else { F::zero() })
}

/// Pads samples to `max_t` encoder and `max_s` decoder steps.
pub fn to_batch(samples: &[Sample], max_t: usize, max_s: usize) -> Result<SeqBatch> {
    let batch = samples.len();
    let mut enc_ids = vec![PAD; batch * max_t];
    let mut dec_in_ids = vec![PAD; batch * max_s];
    let mut dec_target_ids = vec![PAD; batch * max_s];
    let mut enc_len = Vec::with_capacity(batch);
    let mut dec_len = Vec::with_capacity(batch);
    for (b, s) in samples.iter().enumerate() {
        if s.input.len() > max_t {
            return Err(Error::TooLong { len: s.input.len(), max: max_t });
        }
        if s.target.len() > max_s {
            return Err(Error::TooLong { len: s.target.len(), max: max_s });
        }
        if s.input.is_empty() || s.target.is_empty() {
            return Err(Error::Invalid(format!("sample {b} is empty")));
        }
        enc_ids[b * max_t..b * max_t + s.input.len()].copy_from_slice(&s.input);
        dec_target_ids[b * max_s..b * max_s + s.target.len()].copy_from_slice(&s.target);
        dec_in_ids[b * max_s] = SOS;
        dec_in_ids[b * max_s + 1..b * max_s + s.target.len()].copy_from_slice(&s.target[..s.target.len() - 1]);
        enc_len.push(s.input.len());
        dec_len.push(s.target.len());
    }
    Ok(SeqBatch {
        batch,
        max_t,
        max_s,
        enc_ids,
        dec_in_ids,
        dec_target_ids,
        enc_len,
        dec_len,
    })
}

/// One row per entry of `ids`, `pad_to` columns wide; `None` gives a zero row.
pub fn one_hot<F: Real>(ids: &[Option<usize>], dim: usize, pad_to: usize) -> Result<Matrix<F>> {
    if pad_to < dim {
        return Err(Error::Invalid(format!("cannot pad dimension {dim} down to {pad_to}")));
    }
    let mut m = Matrix::zeros(ids.len(), pad_to);
    for (r, id) in ids.iter().enumerate() {
        if let Some(i) = *id {
            if i >= dim {
                return Err(Error::TokenOutOfRange { id: i, size: dim });
            }
            m.set(r, i, F::one());
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{TaskSpec, EOS};

    #[test]
    fn mask_counts_eos() {
        let s = Sample { input: vec![3, 4, EOS], target: vec![5, 6, EOS] };
        let b = to_batch(&[s], 5, 4).unwrap();
        assert_eq!(b.enc_mask::<f32>().as_slice(), &[1.0, 1.0, 1.0, 0.0, 0.0]);
        assert_eq!(b.dec_in_ids, vec![SOS, 5, 6, PAD]);
        assert_eq!(b.dec_target_ids, vec![5, 6, EOS, PAD]);
    }

    #[test]
    fn overlong_rejected() {
        let s = Sample { input: vec![3, 4, EOS], target: vec![EOS] };
        assert!(matches!(to_batch(&[s], 2, 4), Err(Error::TooLong { .. })));
    }

    #[test]
    fn one_hot_padding() {
        let m = one_hot::<f64>(&[Some(2)], 4, 6).unwrap();
        assert_eq!(m.as_slice(), &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let z = one_hot::<f64>(&[None], 4, 4).unwrap();
        assert_eq!(z.sum(), 0.0);
        assert!(one_hot::<f64>(&[Some(4)], 4, 4).is_err());
    }

    #[test]
    fn one_hot_round_trip() {
        let spec = TaskSpec::one_to_one(5, 3, 8, 0);
        let samples = spec.generator(7).unwrap().take_samples(16);
        let b = to_batch(&samples, spec.max_input_steps(), spec.max_output_steps()).unwrap();
        let ids: Vec<Option<usize>> = b.enc_ids.iter().map(|&i| (i != PAD).then_some(i)).collect();
        let m = one_hot::<f32>(&ids, 8, 10).unwrap();
        for (r, id) in ids.iter().enumerate() {
            let row = m.row(r);
            let argmax = row.iter().position(|&x| x == 1.0);
            assert_eq!(argmax, *id);
        }
    }
}
