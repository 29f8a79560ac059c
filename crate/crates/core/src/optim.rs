//! ADAM with exponential learning-rate decay, gradient clipping and the
//! ℓ2 penalty term.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr0: f64,
    /// Per-step multiplier on the learning rate.
    pub decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// The initial rate is 0.01: at 0.1 gated encoder-decoder models stall near
/// chance on the dictionary tasks.
impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr0: 0.01,
            decay: 0.9997,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for one parameter matrix.
#[derive(Clone, Debug)]
pub struct AdamState<F> {
    pub m: Matrix<F>,
    pub v: Matrix<F>,
    pub step: u64,
    pub config: AdamConfig,
}

impl<F: Real> AdamState<F> {
    pub fn new(rows: usize, cols: usize, config: AdamConfig) -> Result<Self> {
        if !(config.beta1 > 0.0 && config.beta1 < 1.0 && config.beta2 > 0.0 && config.beta2 < 1.0) {
            return Err(Error::Invalid(format!(
                "ADAM betas must lie in (0, 1), got {} and {}",
                config.beta1, config.beta2
            )));
        }
        Ok(Self {
            m: Matrix::zeros(rows, cols),
            v: Matrix::zeros(rows, cols),
            step: 0,
            config,
        })
    }

    /// Learning rate used by the next update.
    pub fn current_lr(&self) -> f64 {
        self.config.lr0 * self.config.decay.powf(self.step as f64)
    }
}

/// One bias-corrected ADAM update of `param` in place.
pub fn adam_step<F: Real>(param: &mut Matrix<F>, grad: &Matrix<F>, state: &mut AdamState<F>) -> Result<()> {
    if param.shape() != grad.shape() || state.m.shape() != param.shape() {
        return Err(Error::shape(
            "adam_step",
            format!(
                "param {:?}, grad {:?}, state {:?}",
                param.shape(),
                grad.shape(),
                state.m.shape()
            ),
        ));
    }
    if !grad.all_finite() {
        return Err(Error::NonFinite("gradient passed to adam_step".into()));
    }
    let c = state.config;
    let lr = state.current_lr();
    state.step += 1;
    let t = state.step as f64;
    let b1 = F::from_f64(c.beta1);
    let b2 = F::from_f64(c.beta2);
    let one = F::one();
    let corr1 = F::from_f64(1.0 - c.beta1.powf(t));
    let corr2 = F::from_f64(1.0 - c.beta2.powf(t));
    let lr = F::from_f64(lr);
    let eps = F::from_f64(c.eps);

    let iter = param
        .as_mut_slice()
        .iter_mut()
        .zip(grad.as_slice())
        .zip(state.m.as_mut_slice().iter_mut().zip(state.v.as_mut_slice()));
    for ((p, &g), (m, v)) in iter {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / corr1;
        let v_hat = *v / corr2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// How gradients are bounded before the optimizer sees them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Clip {
    /// Clamp every entry to `[-limit, limit]`.
    Value(f64),
    /// Rescale all gradients jointly so their combined ℓ2 norm is at most `limit`.
    GlobalNorm(f64),
}

pub fn clip_gradients<F: Real>(grads: &mut [Matrix<F>], clip: Clip) {
    match clip {
        Clip::Value(limit) => {
            let hi = F::from_f64(limit);
            for g in grads.iter_mut() {
                for x in g.as_mut_slice() {
                    *x = x.max(-hi).min(hi);
                }
            }
        }
        Clip::GlobalNorm(limit) => {
            let total: f64 = grads.iter().map(|g| g.sum_squares().as_f64()).sum::<f64>().sqrt();
            if total > limit {
                let s = F::from_f64(limit / total);
                for g in grads.iter_mut() {
                    for x in g.as_mut_slice() {
                        *x *= s;
                    }
                }
            }
        }
    }
}

/// `lambda * sum_p ||p||^2` over the given parameter nodes.
pub fn l2_penalty<F: Real>(tape: &mut Tape<F>, params: &[Var], lambda: f64) -> Result<Var> {
    if lambda < 0.0 {
        return Err(Error::Invalid(format!("l2 coefficient must be >= 0, got {lambda}")));
    }
    if lambda == 0.0 || params.is_empty() {
        return Ok(tape.constant(Matrix::zeros(1, 1)));
    }
    let squares: Vec<Var> = params.iter().map(|&p| tape.sum_squares(p)).collect();
    let total = tape.sum(&squares)?;
    Ok(tape.scale(total, F::from_f64(lambda)))
}

/// ADAM state for an ordered list of parameters.
#[derive(Clone, Debug)]
pub struct Adam<F> {
    states: Vec<AdamState<F>>,
}

impl<F: Real> Adam<F> {
    pub fn new(shapes: impl IntoIterator<Item = (usize, usize)>, config: AdamConfig) -> Result<Self> {
        let states = shapes
            .into_iter()
            .map(|(r, c)| AdamState::new(r, c, config))
            .collect::<Result<_>>()?;
        Ok(Self { states })
    }

    pub fn step(&mut self, params: &mut [Matrix<F>], grads: &[Matrix<F>]) -> Result<()> {
        if params.len() != self.states.len() || grads.len() != params.len() {
            return Err(Error::shape(
                "Adam::step",
                format!("{} params, {} grads, {} states", params.len(), grads.len(), self.states.len()),
            ));
        }
        for ((p, g), s) in params.iter_mut().zip(grads).zip(&mut self.states) {
            adam_step(p, g, s)?;
        }
        Ok(())
    }

    pub fn steps_taken(&self) -> u64 {
        self.states.first().map_or(0, |s| s.step)
    }

    pub fn current_lr(&self) -> f64 {
        self.states.first().map_or(0.0, AdamState::current_lr)
    }
}
