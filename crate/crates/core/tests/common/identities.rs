//! Exact identities of the decomposition and the alignment breakdown.

use seqdyn::analysis::{alignment_breakdown, estimate_components};
use seqdyn::matrix::dot;
use seqdyn::trace::TraceBundle;

/// Largest violation of each identity over a bundle.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityErrors {
    /// `tau + chi + delta = h` on both sides.
    pub reconstruction: f64,
    /// Mean of `h - tau` per position and of `delta` per encoder word.
    pub residual_mean: f64,
    /// Nine terms add up to `h^D . h^E`.
    pub nine_term_sum: f64,
    /// Shares add up to one.
    pub share_sum: f64,
}

impl IdentityErrors {
    pub fn max(&self) -> f64 {
        self.reconstruction.max(self.residual_mean).max(self.nine_term_sum).max(self.share_sum)
    }
}

pub fn identity_errors(b: &TraceBundle) -> IdentityErrors {
    let d = estimate_components(b).unwrap();
    let n = b.hidden();
    let mut e = IdentityErrors::default();
    let mut by_pos = vec![vec![0.0; n]; d.tau_enc.rows()];
    let mut by_word = vec![vec![0.0; n]; d.input_tokens.len()];
    for s in &b.samples {
        for t in 0..s.enc_len() {
            let p = d.enc_parts(s, t).unwrap();
            for j in 0..n {
                let h = s.enc_states.get(t, j);
                e.reconstruction = e.reconstruction.max((p.tau[j] + p.chi[j] + p.delta[j] - h).abs());
                by_pos[t][j] += h - p.tau[j];
                by_word[s.input[t]][j] += p.delta[j];
            }
        }
        for t in 0..s.dec_len() {
            let p = d.dec_parts(s, t).unwrap();
            for j in 0..n {
                e.reconstruction = e.reconstruction.max((p.tau[j] + p.chi[j] + p.delta[j] - s.dec_states.get(t, j)).abs());
            }
        }
        let bd = alignment_breakdown(&d, s, None).unwrap();
        for si in 0..s.dec_len() {
            for t in 0..s.enc_len() {
                let direct = dot(s.dec_states.row(si), s.enc_states.row(t));
                let total: f64 = bd.terms.iter().map(|m| m.get(si, t)).sum();
                e.nine_term_sum = e.nine_term_sum.max((total - direct).abs());
                let shares: f64 = bd.shares.iter().map(|m| m.get(si, t)).sum();
                e.share_sum = e.share_sum.max((shares - 1.0).abs());
            }
        }
    }
    for (t, v) in by_pos.iter().enumerate() {
        for x in v {
            e.residual_mean = e.residual_mean.max((x / d.support_enc[t].max(1) as f64).abs());
        }
    }
    for (w, v) in by_word.iter().enumerate() {
        for x in v {
            e.residual_mean = e.residual_mean.max((x / d.count_enc[w].max(1) as f64).abs());
        }
    }
    e
}
