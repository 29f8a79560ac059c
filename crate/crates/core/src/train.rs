//! Training loop, held-out evaluation and the training log.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::data::{to_batch, Sample, TaskSpec};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{Arch, Model};
use crate::optim::{clip_gradients, l2_penalty, Adam, AdamConfig, Clip};
use crate::real::Real;
use crate::seed;
use crate::trace::{SampleTrace, TraceBundle, TraceMeta};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub clip: Clip,
    /// ℓ2 coefficient on all parameters.
    pub l2: f64,
    pub epochs: usize,
    /// Freshly sampled batches per epoch.
    pub batches_per_epoch: usize,
    /// Steps between held-out evaluations (0 disables them).
    pub eval_every: usize,
    pub eval_size: usize,
    /// Stop after two consecutive perfect evaluations.
    pub early_stop: bool,
    /// Feed ground-truth previous tokens to the decoder; otherwise its own argmax.
    pub teacher_forcing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            adam: AdamConfig::default(),
            clip: Clip::Value(10.0),
            l2: 1e-5,
            epochs: 2,
            batches_per_epoch: 2000,
            eval_every: 200,
            eval_size: 512,
            early_stop: true,
            teacher_forcing: true,
        }
    }
}

impl TrainConfig {
    /// Defaults, with the slower learning-rate decay for the vanilla architecture.
    pub fn for_arch(arch: Arch) -> Self {
        let mut c = Self::default();
        if arch == Arch::Ved {
            c.adam.decay = 0.9999;
        }
        c
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.batches_per_epoch
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.batch_size == 0 {
            problems.push("batch_size must be positive".to_string());
        }
        if !(self.adam.lr0 > 0.0) {
            problems.push(format!("lr0 must be positive, got {}", self.adam.lr0));
        }
        if !(self.adam.decay > 0.0 && self.adam.decay <= 1.0) {
            problems.push(format!("decay must lie in (0, 1], got {}", self.adam.decay));
        }
        let limit = match self.clip {
            Clip::Value(v) | Clip::GlobalNorm(v) => v,
        };
        if !(limit > 0.0) {
            problems.push(format!("clip limit must be positive, got {limit}"));
        }
        if !(self.l2 >= 0.0) {
            problems.push(format!("l2 must be non-negative, got {}", self.l2));
        }
        if self.eval_size == 0 {
            problems.push("eval_size must be positive".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub word_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Teacher-forced cross-entropy on the evaluation set.
    pub loss: f64,
    /// Fraction of reference positions (EOS included) matched by greedy decoding.
    pub word_accuracy: f64,
    /// Fraction of samples decoded exactly.
    pub sequence_accuracy: f64,
    pub samples: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub steps: usize,
    pub log: Vec<LogEntry>,
    pub final_metrics: Metrics,
}

/// Mean of `-log softmax(logits)[target]` over rows where `mask` is set.
pub fn masked_cross_entropy<F: Real>(tape: &mut Tape<F>, logits: Var, targets: &[usize], mask: &[bool]) -> Result<Var> {
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::AllMasked { op: "masked_cross_entropy", row: 0 });
    }
    let w = F::one() / F::from_f64(count as f64);
    let weights: Vec<F> = mask.iter().map(|&m| if m { w } else { F::zero() }).collect();
    tape.softmax_xent(logits, targets, &weights)
}

fn tight_batch(samples: &[Sample]) -> Result<crate::data::SeqBatch> {
    let max_t = samples.iter().map(|s| s.input.len()).max().unwrap_or(0);
    let max_s = samples.iter().map(|s| s.target.len()).max().unwrap_or(0);
    to_batch(samples, max_t, max_s)
}

/// Loss (without ℓ2) and parameter gradients for one batch.
pub fn loss_and_grads<F: Real>(model: &Model<F>, samples: &[Sample], l2: f64, teacher_forcing: bool) -> Result<(f64, Vec<Matrix<F>>)> {
    let batch = tight_batch(samples)?;
    let mut tape = Tape::new();
    let p = model.params.bind(&mut tape, true);
    let data_loss = if teacher_forcing {
        model.loss_graph(&mut tape, &p, &batch)?
    } else {
        free_running_loss(model, &mut tape, &p, &batch)?
    };
    let penalty = l2_penalty(&mut tape, p.vars(), l2)?;
    let total = tape.add(data_loss, penalty)?;
    let loss = tape.value(data_loss).get(0, 0).as_f64();
    if !loss.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    tape.backward(total)?;
    let grads = p
        .vars()
        .iter()
        .zip(model.params.values())
        .map(|(&v, m)| tape.grad(v).cloned().unwrap_or_else(|| Matrix::zeros(m.rows(), m.cols())))
        .collect();
    Ok((loss, grads))
}

/// Cross-entropy with the decoder fed its own previous argmax.
fn free_running_loss<F: Real>(model: &Model<F>, tape: &mut Tape<F>, p: &crate::params::Bound, batch: &crate::data::SeqBatch) -> Result<Var> {
    let enc = model.encode_graph(tape, p, &batch.enc_ids, &batch.enc_len, batch.max_t, false)?;
    let total = F::from_f64(batch.valid_targets() as f64);
    let steps = batch.dec_len.iter().copied().max().unwrap_or(0);
    let mut prev = enc.handoff;
    let mut prev_tok = vec![crate::data::SOS; batch.batch];
    let mut terms = Vec::with_capacity(steps);
    for s in 0..steps {
        let tokens: Vec<Option<usize>> = (0..batch.batch).map(|b| (s < batch.dec_len[b]).then_some(prev_tok[b])).collect();
        let weights: Vec<F> = (0..batch.batch)
            .map(|b| if s < batch.dec_len[b] { F::one() / total } else { F::zero() })
            .collect();
        let step = model.decode_step_graph(tape, p, &enc, prev, &tokens, s + 1)?;
        prev = Some(step.state);
        let logits = tape.value(step.logits);
        for (b, t) in prev_tok.iter_mut().enumerate() {
            *t = crate::model::argmax(logits.row(b));
        }
        terms.push(tape.softmax_xent(step.logits, &batch.targets_at(s), &weights)?);
    }
    tape.sum(&terms)
}

fn run_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    if workers <= 1 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

const EVAL_CHUNK: usize = 128;

/// Greedy traces for `samples`, optionally with zeroed decoder inputs.
pub fn capture_traces<F: Real>(model: &Model<F>, samples: &[Sample], zero_dec_input: bool, workers: usize) -> Result<Vec<SampleTrace>> {
    let max_s = model.config.max_s;
    let chunks: Vec<&[Sample]> = samples.chunks(EVAL_CHUNK).collect();
    let decode = |chunk: &&[Sample]| {
        let inputs: Vec<&[usize]> = chunk.iter().map(|s| s.input.as_slice()).collect();
        let targets: Vec<&[usize]> = chunk.iter().map(|s| s.target.as_slice()).collect();
        model.greedy_batch(&inputs, Some(&targets), max_s, zero_dec_input)
    };
    let parts: Vec<Result<Vec<SampleTrace>>> = run_pool(workers, || {
        if workers > 1 {
            chunks.par_iter().map(decode).collect()
        } else {
            chunks.iter().map(decode).collect()
        }
    });
    let mut out = Vec::with_capacity(samples.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

fn teacher_forced_loss<F: Real>(model: &Model<F>, samples: &[Sample]) -> Result<f64> {
    let mut weighted = 0.0;
    let mut total = 0usize;
    for chunk in samples.chunks(EVAL_CHUNK) {
        let batch = tight_batch(chunk)?;
        let mut tape = Tape::new();
        let p = model.params.bind(&mut tape, false);
        let loss = model.loss_graph(&mut tape, &p, &batch)?;
        let count = batch.valid_targets();
        weighted += tape.value(loss).get(0, 0).as_f64() * count as f64;
        total += count;
    }
    Ok(weighted / total.max(1) as f64)
}

pub fn metrics_from_traces<F: Real>(model: &Model<F>, samples: &[Sample], traces: &[SampleTrace]) -> Result<Metrics> {
    let (mut hits, mut total, mut exact) = (0, 0, 0);
    for t in traces {
        let (h, n) = t.word_hits().unwrap_or((0, 0));
        hits += h;
        total += n;
        if t.target.as_deref() == Some(t.output.as_slice()) {
            exact += 1;
        }
    }
    Ok(Metrics {
        loss: teacher_forced_loss(model, samples)?,
        word_accuracy: if total == 0 { 0.0 } else { hits as f64 / total as f64 },
        sequence_accuracy: if traces.is_empty() { 0.0 } else { exact as f64 / traces.len() as f64 },
        samples: traces.len(),
    })
}

pub fn trace_meta<F: Real>(model: &Model<F>, task: &TaskSpec, label: &str) -> TraceMeta {
    TraceMeta {
        hidden: model.hidden(),
        input_tokens: task.input_vocab().tokens().to_vec(),
        output_tokens: task.output_vocab().tokens().to_vec(),
        model: label.to_string(),
    }
}

/// Held-out evaluation on `m` samples drawn from the task's evaluation stream.
pub fn evaluate<F: Real>(model: &Model<F>, task: &TaskSpec, m: usize, eval_seed: u64, workers: usize) -> Result<(Metrics, TraceBundle)> {
    if m == 0 {
        return Err(Error::Invalid("evaluation needs at least one sample".into()));
    }
    let samples = task.generator(eval_seed)?.take_samples(m);
    let traces = capture_traces(model, &samples, false, workers)?;
    let metrics = metrics_from_traces(model, &samples, &traces)?;
    let bundle = TraceBundle {
        meta: trace_meta(model, task, &format!("{} {} n={}", model.config.arch, model.config.cell, model.hidden())),
        samples: traces,
    };
    Ok((metrics, bundle))
}

/// Word accuracy with every decoder token input replaced by zero.
pub fn zeroed_decoder_probe<F: Real>(model: &Model<F>, task: &TaskSpec, m: usize, eval_seed: u64, workers: usize) -> Result<f64> {
    if model.config.arch != Arch::Ao {
        return Err(Error::Invalid(format!("the zeroed-decoder probe applies to attention-only models, not {}", model.config.arch)));
    }
    let samples = task.generator(eval_seed)?.take_samples(m);
    let traces = capture_traces(model, &samples, true, workers)?;
    Ok(metrics_from_traces(model, &samples, &traces)?.word_accuracy)
}

/// Seeds used by [`train`] for the training stream and the held-out stream.
pub fn stream_seeds(master: u64) -> (u64, u64) {
    (seed::derive(master, "data"), seed::derive(master, "eval"))
}

/// Trains in place. `progress` sees every log entry as it is produced.
pub fn train(model: &mut Model<f32>, task: &TaskSpec, cfg: &TrainConfig, master_seed: u64, mut progress: impl FnMut(&LogEntry)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (data_seed, eval_seed) = stream_seeds(master_seed);
    let mut data = task.generator(data_seed)?;
    let mut adam = Adam::new(model.params.values().iter().map(Matrix::shape), cfg.adam)?;
    let mut log = Vec::new();
    let mut perfect_streak = 0;
    let total = cfg.total_steps();
    let mut step = 0;
    let eval_samples = task.generator(eval_seed)?.take_samples(cfg.eval_size);
    while step < total {
        let lr = adam.current_lr();
        let batch = data.take_samples(cfg.batch_size);
        let (loss, mut grads) = match loss_and_grads(model, &batch, cfg.l2, cfg.teacher_forcing) {
            Ok(x) => x,
            Err(Error::NonFinite(_)) => return Err(Error::Diverged { step, loss: f64::NAN }),
            Err(e) => return Err(e),
        };
        clip_gradients(&mut grads, cfg.clip);
        adam.step(model.params.values_mut(), &grads).map_err(|e| match e {
            Error::NonFinite(_) => Error::Diverged { step, loss },
            e => e,
        })?;
        step += 1;
        let mut entry = LogEntry {
            step,
            lr,
            loss,
            word_accuracy: None,
        };
        if cfg.eval_every > 0 && (step % cfg.eval_every == 0 || step == total) {
            let traces = capture_traces(model, &eval_samples, false, 1)?;
            let (hits, n) = traces
                .iter()
                .filter_map(SampleTrace::word_hits)
                .fold((0, 0), |(a, b), (h, t)| (a + h, b + t));
            let acc = hits as f64 / n.max(1) as f64;
            entry.word_accuracy = Some(acc);
            perfect_streak = if acc >= 1.0 { perfect_streak + 1 } else { 0 };
        }
        progress(&entry);
        log.push(entry);
        if cfg.early_stop && perfect_streak >= 2 {
            break;
        }
    }
    let traces = capture_traces(model, &eval_samples, false, 1)?;
    let final_metrics = metrics_from_traces(model, &eval_samples, &traces)?;
    Ok(TrainOutcome {
        steps: step,
        log,
        final_metrics,
    })
}

pub fn write_log_csv(out: &mut impl Write, log: &[LogEntry]) -> Result<()> {
    let io = |e| Error::io("<log>", e);
    writeln!(out, "step,lr,loss,word_accuracy").map_err(io)?;
    for e in log {
        let acc = e.word_accuracy.map(|a| format!("{a:.6}")).unwrap_or_default();
        writeln!(out, "{},{:.8e},{:.8e},{}", e.step, e.lr, e.loss, acc).map_err(io)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_examples() {
        let mut tape = Tape::<f64>::new();
        let uniform = tape.constant(Matrix::zeros(3, 5));
        let l = masked_cross_entropy(&mut tape, uniform, &[0, 1, 2], &[true, true, false]).unwrap();
        assert!((tape.value(l).get(0, 0) - 5f64.ln()).abs() < 1e-12);
        let sharp = tape.constant(Matrix::from_rows(&[vec![60.0, 0.0], vec![0.0, 60.0]]).unwrap());
        let l = masked_cross_entropy(&mut tape, sharp, &[0, 1], &[true, true]).unwrap();
        assert!(tape.value(l).get(0, 0) < 1e-20);
        assert!(masked_cross_entropy(&mut tape, sharp, &[0, 1], &[false, false]).is_err());
    }

    #[test]
    fn cross_entropy_matches_scalar_loop() {
        let rows = vec![vec![0.3, -1.2, 2.0], vec![1.5, 0.1, -0.4], vec![-0.7, 0.9, 0.2]];
        let targets = [2, 0, 1];
        let mask = [true, false, true];
        let mut expect = 0.0;
        for (r, (&t, &m)) in rows.iter().zip(targets.iter().zip(&mask)) {
            if m {
                let z: f64 = r.iter().map(|x: &f64| x.exp()).sum();
                expect += -(r[t].exp() / z).ln() / 2.0;
            }
        }
        let mut tape = Tape::<f64>::new();
        let logits = tape.constant(Matrix::from_rows(&rows).unwrap());
        let l = masked_cross_entropy(&mut tape, logits, &targets, &mask).unwrap();
        assert!((tape.value(l).get(0, 0) - expect).abs() < 1e-12);
    }

    #[test]
    fn config_validation_lists_every_problem() {
        let cfg = TrainConfig {
            batch_size: 0,
            l2: -1.0,
            ..TrainConfig::default()
        };
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("batch_size") && msg.contains("l2"), "{msg}");
        assert_eq!(TrainConfig::for_arch(Arch::Ved).adam.decay, 0.9999);
    }
}
