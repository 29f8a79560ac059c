//! Independent task oracles and round-trip checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seqdyn::cells::CellKind;
use seqdyn::checkpoint;
use seqdyn::data::{TaskSpec, EOS};
use seqdyn::matrix::Matrix;
use seqdyn::model::{Arch, Model, ModelConfig};
use seqdyn::train::capture_traces;
use seqdyn::Tape;

/// Independent reading of an eSCAN phrase: split on separators, then on
/// `and`, then expand each primitive command.
pub fn reference_translation(words: &[&str]) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in words.split(|w| *w == ".") {
        if chunk.is_empty() {
            continue;
        }
        for cmd in chunk.split(|w| *w == "and") {
            let action = cmd[0].to_uppercase();
            match cmd.get(1).copied() {
                None => out.push(action),
                Some("left") => out.extend(["LTURN".to_string(), action]),
                Some("twice") => out.extend([action.clone(), action]),
                Some(other) => panic!("unexpected modifier {other}"),
            }
        }
        out.push(".".into());
    }
    out
}

/// Samples whose target differs from the reference translation, or which
/// break the length, terminator or separator rules.
pub fn escan_mismatches(n: usize, min_len: usize, max_len: usize, seed: u64) -> Vec<String> {
    let task = TaskSpec::escan(min_len, max_len, 0);
    let mut generator = task.generator(seed).unwrap();
    let (input, output) = (task.input_vocab(), task.output_vocab());
    let mut bad = Vec::new();
    for _ in 0..n {
        let s = generator.next_sample();
        let words = input.decode(&s.input).unwrap();
        let got: Vec<String> = output.decode(&s.target).unwrap().into_iter().map(String::from).collect();
        let ok = *s.input.last().unwrap() == EOS
            && *s.target.last().unwrap() == EOS
            && (min_len..=max_len).contains(&words.len())
            && words.last() == Some(&".")
            && got == reference_translation(&words)
            && words.iter().filter(|w| **w == ".").count() == got.iter().filter(|w| *w == ".").count()
            && !got.iter().any(|w| w == "and");
        if !ok {
            bad.push(words.join(" "));
        }
    }
    bad
}

/// Same seed gives the same stream; a different seed a different one.
pub fn generators_deterministic(task: &TaskSpec, seed: u64) -> bool {
    let a = task.generator(seed).unwrap().take_samples(50);
    let b = task.generator(seed).unwrap().take_samples(50);
    let c = task.generator(seed ^ 1).unwrap().take_samples(50);
    a == b && a != c
}

/// Largest deviation of a masked-softmax row sum from one; masked entries
/// must be exactly zero.
pub fn masked_softmax_error(seed: u64, rows: usize, cols: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let logits = Matrix::from_fn(rows, cols, |_, _| rng.random_range(-30.0..30.0));
    let mask = Matrix::from_fn(rows, cols, |_, c| if c == 0 || rng.random_bool(0.6) { 1.0 } else { 0.0 });
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(logits);
    let w = tape.masked_softmax(a, &mask).unwrap();
    let w = tape.value(w);
    let mut worst = 0.0f64;
    for r in 0..rows {
        let total: f64 = w.row(r).iter().sum();
        worst = worst.max((total - 1.0).abs());
        for c in 0..cols {
            let v = w.get(r, c);
            if (mask.get(r, c) == 0.0 && v != 0.0) || v < 0.0 {
                return f64::INFINITY;
            }
        }
    }
    worst
}

pub fn small_model(arch: Arch, cell: CellKind, task: &TaskSpec, seed: u64) -> Model<f32> {
    let mut cfg = ModelConfig::for_task(arch, cell, task);
    cfg.hidden = 10;
    if arch == Arch::Ao {
        cfg.enc_input_dim = 12;
        cfg.dec_input_dim = 12;
        cfg.hidden = 12;
    }
    Model::new(cfg, seed).unwrap()
}

/// Saves and reloads `model`; true when every parameter bit and every traced
/// value survives.
pub fn checkpoint_round_trip(model: &Model<f32>, task: &TaskSpec, dir: &std::path::Path) -> bool {
    checkpoint::save(model, dir, 7, serde_json::json!({"note": "x"})).unwrap();
    let (loaded, manifest) = checkpoint::load(dir).unwrap();
    let bits = |m: &Matrix<f32>| m.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let same_params = loaded.params.names() == model.params.names()
        && loaded.params.values().iter().zip(model.params.values()).all(|(a, b)| bits(a) == bits(b));
    let samples = task.generator(1).unwrap().take_samples(5);
    manifest.step == 7
        && loaded.config == model.config
        && same_params
        && capture_traces(&loaded, &samples, false, 1).unwrap() == capture_traces(model, &samples, false, 1).unwrap()
}
