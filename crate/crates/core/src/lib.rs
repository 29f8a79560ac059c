//! Small encoder-decoder networks (vanilla, with attention, attention-only)
//! trained on synthetic translation tasks, plus tools that split their hidden
//! states into temporal, input and residual parts and attribute attention
//! alignments to those parts.

pub mod analysis;
pub mod attention;
pub mod autodiff;
pub mod cells;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod matrix;
pub mod model;
pub mod optim;
pub mod params;
pub mod posenc;
pub mod real;
pub mod seed;
pub mod train;
pub mod trace;

pub use autodiff::{Tape, Var};
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use real::Real;
