//! State-update functions shared by encoder and decoder.
//!
//! Weights act from the right on row-major batches, so an input matrix is
//! stored `d x n` and a recurrent matrix `n x n`.
//!
//! | kind | state | update |
//! |------|-------|--------|
//! | GRU  | `h` (n) | `h = g*h_prev + (1-g)*c`, `c = tanh(W_ch (r*h_prev) + W_cx x + b_c)` |
//! | UGRNN | `h` (n) | `h = g*h_prev + (1-g)*c`, `c = tanh(W_ch h_prev + W_cx x + b_c)` |
//! | LSTM | `[c, h~]` (2n) | `c = f*c_prev + i*tanh(..)`, `h~ = tanh(c) * o` |
//! | non-gated | `h` (n) | `h = tanh(W x + b)`, previous state ignored |

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::params::{Bound, ParamId, ParamStore};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Gru,
    Ugrnn,
    Lstm,
    #[serde(rename = "tanh")]
    NonGatedTanh,
}

impl CellKind {
    pub const ALL: [CellKind; 4] = [CellKind::Gru, CellKind::Ugrnn, CellKind::Lstm, CellKind::NonGatedTanh];

    /// Width of the carried state for hidden size `n`.
    pub fn state_size(self, n: usize) -> usize {
        match self {
            CellKind::Lstm => 2 * n,
            _ => n,
        }
    }

    /// Gate names in parameter order; the first is the candidate / output path.
    fn gates(self) -> &'static [&'static str] {
        match self {
            CellKind::Gru => &["c", "g", "r"],
            CellKind::Ugrnn => &["c", "g"],
            CellKind::Lstm => &["h", "c", "i", "f"],
            CellKind::NonGatedTanh => &["c"],
        }
    }

    pub fn is_recurrent(self) -> bool {
        self != CellKind::NonGatedTanh
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CellKind::Gru => "gru",
            CellKind::Ugrnn => "ugrnn",
            CellKind::Lstm => "lstm",
            CellKind::NonGatedTanh => "tanh",
        })
    }
}

impl FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gru" => Ok(CellKind::Gru),
            "ugrnn" => Ok(CellKind::Ugrnn),
            "lstm" => Ok(CellKind::Lstm),
            "tanh" | "nongated" | "non-gated" => Ok(CellKind::NonGatedTanh),
            other => Err(Error::Config(format!(
                "unknown cell {other:?} (expected gru, ugrnn, lstm or tanh)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Gate {
    recurrent: Option<ParamId>,
    input: ParamId,
    bias: ParamId,
}

/// Handles to one cell's weights inside a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct CellParams {
    pub kind: CellKind,
    pub n: usize,
    pub d: usize,
    prefix: String,
    gates: Vec<Gate>,
}

impl CellParams {
    /// Registers freshly initialized weights under `prefix`.
    ///
    /// Recurrent matrices are uniform in `±1/sqrt(n)`, input matrices in
    /// `±1/sqrt(d)`, biases start at zero.
    pub fn init<F: Real>(store: &mut ParamStore<F>, prefix: &str, kind: CellKind, n: usize, d: usize, rng: &mut impl Rng) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::Invalid(format!("cell sizes must be positive (n={n}, d={d})")));
        }
        let rec_bound = 1.0 / (n as f64).sqrt();
        let in_bound = 1.0 / (d as f64).sqrt();
        let gates = kind
            .gates()
            .iter()
            .map(|g| {
                let recurrent = kind
                    .is_recurrent()
                    .then(|| store.add_uniform(format!("{prefix}.W_{g}h"), n, n, rec_bound, rng));
                let input = store.add_uniform(format!("{prefix}.W_{g}x"), d, n, in_bound, rng);
                let bias = store.add(format!("{prefix}.b_{g}"), Matrix::zeros(1, n));
                Gate { recurrent, input, bias }
            })
            .collect();
        Ok(Self {
            kind,
            n,
            d,
            prefix: prefix.to_string(),
            gates,
        })
    }

    /// Re-attaches to weights already present in `store` (e.g. after loading a checkpoint).
    pub fn attach<F: Real>(store: &ParamStore<F>, prefix: &str, kind: CellKind, n: usize, d: usize) -> Result<Self> {
        let find = |name: String, rows: usize, cols: usize| -> Result<ParamId> {
            let id = store
                .id(&name)
                .ok_or_else(|| Error::Invalid(format!("missing parameter {name}")))?;
            if store.get(id).shape() != (rows, cols) {
                return Err(Error::shape(
                    "CellParams::attach",
                    format!("{name} is {:?}, expected {rows}x{cols}", store.get(id).shape()),
                ));
            }
            Ok(id)
        };
        let mut gates = Vec::new();
        for g in kind.gates() {
            let recurrent = if kind.is_recurrent() {
                Some(find(format!("{prefix}.W_{g}h"), n, n)?)
            } else {
                None
            };
            gates.push(Gate {
                recurrent,
                input: find(format!("{prefix}.W_{g}x"), d, n)?,
                bias: find(format!("{prefix}.b_{g}"), 1, n)?,
            });
        }
        Ok(Self {
            kind,
            n,
            d,
            prefix: prefix.to_string(),
            gates,
        })
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn state_size(&self) -> usize {
        self.kind.state_size(self.n)
    }

    /// All parameter handles of this cell.
    pub fn param_ids(&self) -> Vec<ParamId> {
        self.gates
            .iter()
            .flat_map(|g| g.recurrent.into_iter().chain([g.input, g.bias]))
            .collect()
    }

    pub fn input_weight(&self, gate: usize) -> ParamId {
        self.gates[gate].input
    }

    pub fn bias(&self, gate: usize) -> ParamId {
        self.gates[gate].bias
    }

    pub fn recurrent_weight(&self, gate: usize) -> Option<ParamId> {
        self.gates[gate].recurrent
    }

    fn preact<F: Real>(&self, tape: &mut Tape<F>, p: &Bound, gate: usize, h: Option<Var>, x: Var) -> Result<Var> {
        let g = self.gates[gate];
        let mut acc = tape.matmul(x, p.var(g.input))?;
        if let (Some(h), Some(w)) = (h, g.recurrent) {
            let rec = tape.matmul(h, p.var(w))?;
            acc = tape.add(acc, rec)?;
        }
        tape.add_row(acc, p.var(g.bias))
    }

    /// One update. `h_prev = None` means the zero state and skips the
    /// recurrent products (attention-only architectures).
    pub fn step<F: Real>(&self, tape: &mut Tape<F>, p: &Bound, h_prev: Option<Var>, x: Var) -> Result<Var> {
        let xv = tape.value(x);
        if xv.cols() != self.d {
            return Err(Error::shape("cell_step", format!("input has {} columns, cell expects {}", xv.cols(), self.d)));
        }
        let batch = xv.rows();
        if let Some(h) = h_prev {
            let hv = tape.value(h);
            if hv.shape() != (batch, self.state_size()) {
                return Err(Error::shape(
                    "cell_step",
                    format!("state {:?}, expected {}x{}", hv.shape(), batch, self.state_size()),
                ));
            }
        }
        match self.kind {
            CellKind::Gru => {
                let g_pre = self.preact(tape, p, 1, h_prev, x)?;
                let g = tape.sigmoid(g_pre);
                let c_in = match h_prev {
                    Some(h) => {
                        let r_pre = self.preact(tape, p, 2, Some(h), x)?;
                        let r = tape.sigmoid(r_pre);
                        Some(tape.mul(r, h)?)
                    }
                    None => None,
                };
                let c_pre = self.preact(tape, p, 0, c_in, x)?;
                let c = tape.tanh(c_pre);
                blend(tape, g, h_prev, c)
            }
            CellKind::Ugrnn => {
                let g_pre = self.preact(tape, p, 1, h_prev, x)?;
                let g = tape.sigmoid(g_pre);
                let c_pre = self.preact(tape, p, 0, h_prev, x)?;
                let c = tape.tanh(c_pre);
                blend(tape, g, h_prev, c)
            }
            CellKind::Lstm => {
                let n = self.n;
                let (c_prev, h_prev) = match h_prev {
                    Some(s) => (Some(tape.slice_cols(s, 0, n)?), Some(tape.slice_cols(s, n, n)?)),
                    None => (None, None),
                };
                let o_pre = self.preact(tape, p, 0, h_prev, x)?;
                let o = tape.sigmoid(o_pre);
                let cand_pre = self.preact(tape, p, 1, h_prev, x)?;
                let cand = tape.tanh(cand_pre);
                let i_pre = self.preact(tape, p, 2, h_prev, x)?;
                let i = tape.sigmoid(i_pre);
                let mut c = tape.mul(i, cand)?;
                if let Some(c_prev) = c_prev {
                    let f_pre = self.preact(tape, p, 3, h_prev, x)?;
                    let f = tape.sigmoid(f_pre);
                    let kept = tape.mul(f, c_prev)?;
                    c = tape.add(kept, c)?;
                }
                let tc = tape.tanh(c);
                let h = tape.mul(tc, o)?;
                tape.concat(&[c, h])
            }
            CellKind::NonGatedTanh => {
                let pre = self.preact(tape, p, 0, None, x)?;
                Ok(tape.tanh(pre))
            }
        }
    }

    /// The part of a state that attention and readouts see (`h~` for LSTM).
    pub fn exposed<F: Real>(&self, tape: &mut Tape<F>, state: Var) -> Result<Var> {
        match self.kind {
            CellKind::Lstm => tape.slice_cols(state, self.n, self.n),
            _ => Ok(state),
        }
    }

    pub fn zero_state<F: Real>(&self, batch: usize) -> Matrix<F> {
        Matrix::zeros(batch, self.state_size())
    }
}

/// `g*h_prev + (1-g)*c`.
fn blend<F: Real>(tape: &mut Tape<F>, g: Var, h_prev: Option<Var>, c: Var) -> Result<Var> {
    let keep_c = tape.one_minus(g);
    let new = tape.mul(keep_c, c)?;
    match h_prev {
        Some(h) => {
            let old = tape.mul(g, h)?;
            tape.add(old, new)
        }
        None => Ok(new),
    }
}

/// Fresh cell weights in their own store.
pub fn init_params<F: Real>(kind: CellKind, n: usize, d: usize, seed: u64) -> Result<(ParamStore<F>, CellParams)> {
    let mut store = ParamStore::new();
    let mut rng = crate::seed::rng(seed);
    let cell = CellParams::init(&mut store, "cell", kind, n, d, &mut rng)?;
    Ok((store, cell))
}

/// Single-sample convenience wrapper around [`CellParams::step`].
pub fn cell_step<F: Real>(store: &ParamStore<F>, cell: &CellParams, h_prev: &[F], x: &[F]) -> Result<Vec<F>> {
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape, false);
    let h = tape.constant(Matrix::from_vec(1, h_prev.len(), h_prev.to_vec())?);
    let x = tape.constant(Matrix::from_vec(1, x.len(), x.to_vec())?);
    let out = cell.step(&mut tape, &bound, Some(h), x)?;
    Ok(tape.value(out).as_slice().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zeroed(kind: CellKind, n: usize, d: usize) -> (ParamStore<f64>, CellParams) {
        let (mut store, cell) = init_params::<f64>(kind, n, d, 1).unwrap();
        for m in store.values_mut() {
            m.as_mut_slice().fill(0.0);
        }
        (store, cell)
    }

    #[test]
    fn gru_zero_params_fixed_point() {
        let (store, cell) = zeroed(CellKind::Gru, 4, 3);
        let h = cell_step(&store, &cell, &[0.0; 4], &[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(h, vec![0.0; 4]);
    }

    #[test]
    fn gru_saturated_update_gate_copies_state() {
        let (mut store, cell) = init_params::<f32>(CellKind::Gru, 5, 3, 9).unwrap();
        store.get_mut(cell.bias(1)).as_mut_slice().fill(20.0);
        let prev = [0.3f32, -0.7, 0.1, 0.9, -0.2];
        for x in [[1.0f32, 0.0, 0.0], [0.0, 5.0, -3.0]] {
            let h = cell_step(&store, &cell, &prev, &x).unwrap();
            assert_eq!(h, prev.to_vec());
        }
    }

    #[test]
    fn lstm_zero_params_zero_output() {
        let (store, cell) = zeroed(CellKind::Lstm, 3, 2);
        let s = cell_step(&store, &cell, &[0.0; 6], &[1.0, 1.0]).unwrap();
        assert_eq!(&s[3..], &[0.0; 3]);
    }

    #[test]
    fn non_gated_ignores_previous_state() {
        let (store, cell) = init_params::<f32>(CellKind::NonGatedTanh, 4, 3, 2).unwrap();
        let x = [0.2f32, -1.0, 0.4];
        let a = cell_step(&store, &cell, &[0.0; 4], &x).unwrap();
        let b = cell_step(&store, &cell, &[5.0, -3.0, 1.0, 2.0], &x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn size_mismatch_is_an_error() {
        let (store, cell) = init_params::<f32>(CellKind::Lstm, 4, 3, 2).unwrap();
        assert!(cell_step(&store, &cell, &[0.0; 4], &[0.0; 3]).is_err());
        assert!(cell_step(&store, &cell, &[0.0; 8], &[0.0; 2]).is_err());
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let (a, cell) = init_params::<f32>(CellKind::Gru, 128, 50, 11).unwrap();
        let (b, _) = init_params::<f32>(CellKind::Gru, 128, 50, 11).unwrap();
        let (c, _) = init_params::<f32>(CellKind::Gru, 128, 50, 12).unwrap();
        assert_eq!(a.values(), b.values());
        assert_ne!(a.values(), c.values());
        for g in 0..3 {
            assert_eq!(a.get(cell.recurrent_weight(g).unwrap()).shape(), (128, 128));
            assert_eq!(a.get(cell.input_weight(g)).shape(), (50, 128));
            assert_eq!(a.get(cell.bias(g)).shape(), (1, 128));
            assert!(a.get(cell.bias(g)).as_slice().iter().all(|&b| b == 0.0));
        }
        let bound = 1.0 / 128f32.sqrt();
        assert!(a.get(cell.recurrent_weight(0).unwrap()).max_abs() <= bound);
    }

    #[test]
    fn lstm_has_packed_state() {
        let (_, cell) = init_params::<f32>(CellKind::Lstm, 6, 2, 0).unwrap();
        assert_eq!(cell.state_size(), 12);
    }
}
