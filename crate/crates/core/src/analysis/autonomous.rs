use crate::analysis::decomposition::Decomposition;
use crate::analysis::mean;
use crate::error::{Error, Result};
use crate::matrix::{norm, Matrix};
use crate::model::Model;
use crate::real::Real;
use crate::trace::TraceBundle;

/// Per-step relative distances between trained states and null states.
///
/// `*_tau` divides `|tau_t - h0_t|` by `|tau_t|`; `*_state` averages
/// `|h_t - h0_t| / |h_t|` over the individual states at step `t`.
/// Steps with a zero denominator are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct AutonomousGaps {
    pub enc_tau: Vec<Option<f64>>,
    pub dec_tau: Vec<Option<f64>>,
    pub enc_state: Vec<Option<f64>>,
    pub dec_state: Vec<Option<f64>>,
}

impl AutonomousGaps {
    pub fn mean_enc_tau(&self) -> Option<f64> {
        mean(self.enc_tau.iter().flatten().copied())
    }

    pub fn mean_dec_tau(&self) -> Option<f64> {
        mean(self.dec_tau.iter().flatten().copied())
    }

    pub fn mean_enc_state(&self) -> Option<f64> {
        mean(self.enc_state.iter().flatten().copied())
    }

    pub fn mean_dec_state(&self) -> Option<f64> {
        mean(self.dec_state.iter().flatten().copied())
    }
}

/// Null states covering the trace set: encoder states for the longest input,
/// and decoder states seeded by the null encoder state at the mean input length.
pub fn null_states<F: Real>(model: &Model<F>, traces: &TraceBundle) -> Result<(Matrix<f64>, Matrix<f64>)> {
    let lens = mean(traces.samples.iter().map(|s| s.enc_len() as f64)).ok_or_else(|| Error::Invalid("empty trace set".into()))?;
    let seed_len = (lens.round() as usize).max(1);
    let (enc, _) = model.autonomous_states(traces.max_enc_len(), 0)?;
    let (_, dec) = model.autonomous_states(seed_len, traces.max_dec_len())?;
    Ok((enc.cast(), dec.cast()))
}

fn rel(a: &[f64], b: &[f64]) -> Option<f64> {
    let d = norm(a);
    (d > 0.0).then(|| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt() / d)
}

fn state_gaps(rows: usize, null: &Matrix<f64>, states: impl Iterator<Item = (usize, Vec<f64>)>) -> Vec<Option<f64>> {
    let mut acc = vec![(0.0, 0usize); rows];
    for (t, h) in states {
        if let Some(g) = rel(&h, null.row(t)) {
            acc[t].0 += g;
            acc[t].1 += 1;
        }
    }
    acc.into_iter().map(|(s, n)| (n > 0).then(|| s / n as f64)).collect()
}

pub fn autonomous_gaps(traces: &TraceBundle, decomp: &Decomposition, enc_null: &Matrix<f64>, dec_null: &Matrix<f64>) -> Result<AutonomousGaps> {
    let (te, td) = (decomp.tau_enc.rows(), decomp.tau_dec.rows());
    if enc_null.rows() < te || dec_null.rows() < td || enc_null.cols() != decomp.hidden() || dec_null.cols() != decomp.hidden() {
        return Err(Error::shape("autonomous_gaps", "null states do not cover the temporal components"));
    }
    let tau_gap = |tau: &Matrix<f64>, support: &[usize], null: &Matrix<f64>| -> Vec<Option<f64>> {
        (0..tau.rows()).map(|t| if support[t] > 0 { rel(tau.row(t), null.row(t)) } else { None }).collect()
    };
    let samples = &traces.samples;
    Ok(AutonomousGaps {
        enc_tau: tau_gap(&decomp.tau_enc, &decomp.support_enc, enc_null),
        dec_tau: tau_gap(&decomp.tau_dec, &decomp.support_dec, dec_null),
        enc_state: state_gaps(te, enc_null, samples.iter().flat_map(|s| (0..s.enc_len()).map(move |t| (t, s.enc_states.row(t).to_vec())))),
        dec_state: state_gaps(td, dec_null, samples.iter().flat_map(|s| (0..s.dec_len()).map(move |t| (t, s.dec_states.row(t).to_vec())))),
    })
}
