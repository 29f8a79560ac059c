//! Central-difference checks of tape gradients in double precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seqdyn::attention::{dot_attention_graph, qkv_attention_graph, AttentionKind, QkvParams};
use seqdyn::cells::{init_params, CellKind};
use seqdyn::data::TaskSpec;
use seqdyn::matrix::Matrix;
use seqdyn::model::{Arch, Model, ModelConfig};
use seqdyn::params::{Bound, ParamStore};
use seqdyn::train::loss_and_grads;
use seqdyn::{Tape, Var};

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
const MAX_ENTRIES: usize = 24;

/// Largest relative error seen, and where.
#[derive(Clone, Debug, Default)]
pub struct Worst {
    pub err: f64,
    pub at: String,
    pub checked: usize,
}

impl Worst {
    fn see(&mut self, err: f64, at: impl FnOnce() -> String) {
        self.checked += 1;
        if err > self.err || self.checked == 1 {
            self.err = err;
            self.at = at();
        }
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Entries to probe: all of them for small matrices, an even spread otherwise.
fn probe_indices(len: usize) -> Vec<usize> {
    if len <= MAX_ENTRIES {
        (0..len).collect()
    } else {
        (0..MAX_ENTRIES).map(|i| i * len / MAX_ENTRIES).collect()
    }
}

fn check(store: &ParamStore<f64>, loss: impl Fn(&mut Tape<f64>, &Bound) -> Var) -> Worst {
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape, true);
    let l = loss(&mut tape, &bound);
    tape.backward(l).unwrap();
    let eval = |s: &ParamStore<f64>| {
        let mut t = Tape::new();
        let b = s.bind(&mut t, false);
        let l = loss(&mut t, &b);
        t.value(l).get(0, 0)
    };
    let mut worst = Worst::default();
    for (k, name) in store.names().iter().enumerate() {
        let analytic = tape.grad(bound.vars()[k]).cloned().unwrap_or_else(|| Matrix::zeros(store.values()[k].rows(), store.values()[k].cols()));
        for i in probe_indices(store.values()[k].len()) {
            let mut plus = store.clone();
            plus.values_mut()[k].as_mut_slice()[i] += H;
            let mut minus = store.clone();
            minus.values_mut()[k].as_mut_slice()[i] -= H;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * H);
            let a = analytic.as_slice()[i];
            worst.see(rel_err(a, numeric), || format!("{name}[{i}] analytic {a} numeric {numeric}"));
        }
    }
    worst
}

/// Three unrolled steps of one cell under a fixed readout.
pub fn cell(kind: CellKind) -> Worst {
    let (n, d, batch, steps) = (4, 3, 2, 3);
    let (mut store, cell) = init_params::<f64>(kind, n, d, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    // nonzero biases so every gate path carries gradient
    for (name, m) in store.names().to_vec().iter().zip(store.values_mut()) {
        if name.contains(".b_") {
            *m = random(m.rows(), m.cols(), &mut rng).scale(0.5);
        }
    }
    let xs: Vec<Matrix<f64>> = (0..steps).map(|_| random(batch, d, &mut rng)).collect();
    let w_out = random(n, 5, &mut rng);
    check(&store, |tape, p| {
        let mut h = None;
        let mut terms = Vec::new();
        for x in &xs {
            let x = tape.constant(x.clone());
            let state = cell.step(tape, p, h, x).unwrap();
            let exposed = cell.exposed(tape, state).unwrap();
            let w = tape.constant(w_out.clone());
            let logits = tape.matmul(exposed, w).unwrap();
            terms.push(tape.softmax_xent(logits, &[1, 3], &[0.5, 0.5]).unwrap());
            h = Some(state);
        }
        tape.sum(&terms).unwrap()
    })
}

fn attention_inputs(rng: &mut ChaCha8Rng) -> (ParamStore<f64>, Matrix<f64>, Matrix<f64>) {
    let (n, t, batch) = (4, 3, 2);
    let mut store = ParamStore::new();
    store.add("enc", random(batch, t * n, rng));
    store.add("dec", random(batch, n, rng));
    let mask = Matrix::from_rows(&[vec![1.0, 1.0, 1.0], vec![1.0, 1.0, 0.0]]).unwrap();
    let w_out = random(n, 5, rng);
    (store, mask, w_out)
}

pub fn dot_attention() -> Worst {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (store, mask, w_out) = attention_inputs(&mut rng);
    let enc = store.id("enc").unwrap();
    let dec = store.id("dec").unwrap();
    check(&store, |tape, p| {
        let att = dot_attention_graph(tape, p.var(enc), p.var(dec), 4, &mask).unwrap();
        let w = tape.constant(w_out.clone());
        let logits = tape.matmul(att.context, w).unwrap();
        tape.softmax_xent(logits, &[0, 4], &[0.5, 0.5]).unwrap()
    })
}

pub fn qkv_attention(scaled: bool) -> Worst {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let (mut store, mask, w_out) = attention_inputs(&mut rng);
    let enc = store.id("enc").unwrap();
    let dec = store.id("dec").unwrap();
    let qkv = QkvParams::init(&mut store, 4, 3, scaled, &mut rng).unwrap();
    check(&store, |tape, p| {
        let att = qkv_attention_graph(tape, p, &qkv, p.var(enc), p.var(dec), &mask).unwrap();
        let w = tape.constant(w_out.clone());
        let logits = tape.matmul(att.context, w).unwrap();
        tape.softmax_xent(logits, &[2, 1], &[0.5, 0.5]).unwrap()
    })
}

/// Full sequence loss with the l2 penalty, through the training entry point.
pub fn model_loss(arch: Arch, cell: CellKind) -> Worst {
    model_loss_with(arch, cell, None)
}

pub fn model_loss_with(arch: Arch, cell: CellKind, attention: Option<AttentionKind>) -> Worst {
    let task = TaskSpec::one_to_one(3, 2, 4, 3);
    let mut cfg = ModelConfig::for_task(arch, cell, &task);
    if let Some(kind) = attention {
        cfg.attention = kind;
        cfg.qkv_dim = 4;
    }
    cfg.hidden = 5;
    if arch == Arch::Ao {
        cfg.enc_input_dim = 6;
        cfg.dec_input_dim = 6;
        cfg.hidden = 6;
    }
    cfg.readout_bias = true;
    let model = Model::<f64>::new(cfg, 13).unwrap();
    let samples = task.generator(4).unwrap().take_samples(3);
    let (_, grads) = loss_and_grads(&model, &samples, 1e-3, true).unwrap();
    let loss = |m: &Model<f64>| {
        let (l, _) = loss_and_grads(m, &samples, 0.0, true).unwrap();
        let penalty: f64 = m.params.values().iter().map(|v| v.sum_squares()).sum::<f64>() * 1e-3;
        l + penalty
    };
    let mut worst = Worst::default();
    for (k, name) in model.params.names().iter().enumerate() {
        for i in probe_indices(model.params.values()[k].len()) {
            let mut plus = model.clone();
            plus.params.values_mut()[k].as_mut_slice()[i] += H;
            let mut minus = model.clone();
            minus.params.values_mut()[k].as_mut_slice()[i] -= H;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * H);
            let a = grads[k].as_slice()[i];
            worst.see(rel_err(a, numeric), || format!("{name}[{i}] analytic {a} numeric {numeric}"));
        }
    }
    worst
}
