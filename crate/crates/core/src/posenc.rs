//! Sinusoidal positional encodings with a fixed random rotation.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::real::Real;
use crate::seed;

/// Component `i` of `p_t`: `sin(t / tau^(i/d))` for even `i`, `cos(t / tau^((i-1)/d))` for odd `i`.
pub fn pos_encode(t: f64, d: usize, tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::Invalid(format!("positional timescale must be positive, got {tau}")));
    }
    Ok((0..d)
        .map(|i| {
            let k = (i - i % 2) as f64 / d as f64;
            let arg = t / tau.powf(k);
            if i % 2 == 0 {
                arg.sin()
            } else {
                arg.cos()
            }
        })
        .collect())
}

/// Orthonormal `d x d` matrix from Gram-Schmidt on a seeded Gaussian matrix.
pub fn random_rotation(d: usize, seed: u64) -> Matrix<f64> {
    let mut rng = seed::rng(seed);
    loop {
        let mut rows: Vec<Vec<f64>> = (0..d)
            .map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let mut ok = true;
        for i in 0..d {
            // Two passes keep the basis orthogonal to working precision.
            for _ in 0..2 {
                for j in 0..i {
                    let proj: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
                    let (head, tail) = rows.split_at_mut(i);
                    for (a, b) in tail[0].iter_mut().zip(&head[j]) {
                        *a -= proj * b;
                    }
                }
            }
            let norm = rows[i].iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            rows[i].iter_mut().for_each(|a| *a /= norm);
        }
        if ok {
            return Matrix::from_rows(&rows).expect("square rows");
        }
    }
}

/// Table of rotated encodings, row `t - 1` holding position `t`.
#[derive(Clone, Debug)]
pub struct PositionalEncoding<F> {
    /// Unrotated encodings, `maxlen x d`.
    pub table: Matrix<F>,
    pub rotation: Matrix<F>,
    rotated: Matrix<F>,
}

impl<F: Real> PositionalEncoding<F> {
    pub fn new(maxlen: usize, d: usize, tau: f64, rotation_seed: Option<u64>) -> Result<Self> {
        let mut rows = Vec::with_capacity(maxlen);
        for t in 1..=maxlen {
            rows.push(pos_encode(t as f64, d, tau)?);
        }
        let table = if maxlen == 0 {
            Matrix::zeros(0, d)
        } else {
            Matrix::from_rows(&rows)?
        };
        let rotation = match rotation_seed {
            Some(s) => random_rotation(d, s),
            None => Matrix::identity(d),
        };
        // Each encoding is a column vector rotated as R p; in row form that is p^T R^T.
        let rotated = table.matmul(&rotation.transpose())?;
        Ok(Self {
            table: table.cast(),
            rotation: rotation.cast(),
            rotated: rotated.cast(),
        })
    }

    pub fn maxlen(&self) -> usize {
        self.rotated.rows()
    }

    pub fn dim(&self) -> usize {
        self.rotated.cols()
    }

    /// Rotated encoding of 1-based position `t`.
    pub fn get(&self, t: usize) -> Result<&[F]> {
        if t == 0 || t > self.maxlen() {
            return Err(Error::TooLong { len: t, max: self.maxlen() });
        }
        Ok(self.rotated.row(t - 1))
    }
}
