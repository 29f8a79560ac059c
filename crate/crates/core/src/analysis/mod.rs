//! Hidden-state decomposition and the diagnostics built on it.

pub mod autonomous;
pub mod breakdown;
pub mod decomposition;
pub mod pca;
pub mod profiles;
pub mod readout;
pub mod variance;

pub use autonomous::{autonomous_gaps, null_states, AutonomousGaps};
pub use breakdown::{alignment_breakdown, argmax_agreement, component_attention, mean_top_shares, AlignmentBreakdown, Projection, TERM_NAMES};
pub use decomposition::{estimate_components, Decomposition, Parts};
pub use pca::{pca_project, Pca};
pub use profiles::{attention_hit_rate, offset_dot_profile, source_offset_profile, temporal_argmax, temporal_offset_profile, OffsetProfile};
pub use readout::{chi_angles, readout_alignment, ReadoutAlignment, ReadoutBlock};
pub use variance::{mean_word_variance_ratio, word_variance_ratio};

pub(crate) fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}
