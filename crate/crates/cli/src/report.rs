//! Analysis of one checkpoint: traces, decomposition, and the CSV report.

use std::fs;
use std::path::Path;

use serde::Serialize;

use seqdyn::analysis::breakdown::{CHI_DELTA, DELTA_CHI, TAU_CHI, TAU_DELTA, TAU_TAU};
use seqdyn::analysis::*;
use seqdyn::data::escan;
use seqdyn::data::{TaskKind, TaskSpec};
use seqdyn::matrix::Matrix;
use seqdyn::model::{Arch, Model};
use seqdyn::trace::TraceBundle;
use seqdyn::train::{evaluate, stream_seeds, zeroed_decoder_probe, Metrics};
use seqdyn::{Error, Result};

use crate::config::AnalysisOptions;
use crate::csv_out::Table;

/// Everything the report and figure bundles are computed from.
pub struct Context {
    pub model: Model<f32>,
    pub task: TaskSpec,
    pub options: AnalysisOptions,
    pub workers: usize,
    pub eval_seed: u64,
    pub metrics: Metrics,
    pub traces: TraceBundle,
    pub decomp: Decomposition,
    qkv: Option<(Matrix<f64>, Matrix<f64>, f64)>,
}

impl Context {
    /// Greedy traces on the held-out stream of `master_seed`, and their components.
    pub fn new(model: Model<f32>, task: TaskSpec, options: AnalysisOptions, master_seed: u64, workers: usize) -> Result<Self> {
        let (_, eval_seed) = stream_seeds(master_seed);
        let (metrics, traces) = evaluate(&model, &task, options.samples, eval_seed, workers)?;
        let decomp = estimate_components(&traces)?;
        let qkv = model
            .qkv_matrices()
            .map(|(q, k, _)| (q.cast::<f64>(), k.cast::<f64>(), model.attention_scale() as f64));
        Ok(Self {
            model,
            task,
            options,
            workers,
            eval_seed,
            metrics,
            traces,
            decomp,
            qkv,
        })
    }

    pub fn arch(&self) -> Arch {
        self.model.config.arch
    }

    pub fn has_attention(&self) -> bool {
        self.traces.samples.first().is_some_and(|s| s.attention.is_some())
    }

    /// Query/key projection for learned attention, `None` for dot products.
    pub fn projection(&self) -> Option<Projection<'_>> {
        self.qkv.as_ref().map(|(q, k, scale)| Projection {
            query: q,
            key: k,
            scale: *scale,
        })
    }

    pub fn readout(&self) -> Matrix<f64> {
        self.model.readout_matrix().cast()
    }

    pub fn example(&self) -> Result<&seqdyn::trace::SampleTrace> {
        self.traces
            .samples
            .get(self.options.example)
            .ok_or_else(|| Error::Invalid(format!("example {} is beyond the {} traced samples", self.options.example, self.traces.len())))
    }

    pub fn require_attention(&self, what: &str) -> Result<()> {
        if self.has_attention() {
            Ok(())
        } else {
            Err(Error::Invalid(format!("{what} needs an attention model, this checkpoint is {}", self.arch())))
        }
    }

    /// Attention argmax at `t = s`, or `t = L - 1 - s` on the reversed task (0-based, EOS kept in place).
    pub fn expected_attention_step(kind: TaskKind) -> impl Fn(usize, usize) -> usize {
        move |s, dec_len| {
            let content = dec_len.saturating_sub(1);
            if kind == TaskKind::Reversed && s < content {
                content - 1 - s
            } else {
                s
            }
        }
    }

    pub fn attention_hits(&self) -> Result<f64> {
        attention_hit_rate(&self.traces, Self::expected_attention_step(self.task.kind))
    }

    pub fn autonomous(&self) -> Result<AutonomousGaps> {
        let (enc0, dec0) = null_states(&self.model, &self.traces)?;
        autonomous_gaps(&self.traces, &self.decomp, &enc0, &dec0)
    }

    /// Mean `source - s` per output step on eSCAN held-out samples.
    pub fn predicted_offsets(&self) -> Result<Vec<Option<f64>>> {
        if self.task.kind != TaskKind::Escan {
            return Ok(vec![Some(0.0); self.decomp.tau_dec.rows()]);
        }
        let samples = self.task.generator(self.eval_seed)?.take_samples(self.options.samples);
        source_offset_profile(&samples, &self.task.input_vocab())
    }

    /// Output word each content input word translates to on its own, if any.
    pub fn dictionary(&self) -> Result<Vec<(String, Option<String>)>> {
        let vocab = self.task.input_vocab();
        vocab
            .content_ids()
            .map(|i| {
                let w = vocab.tokens()[i].clone();
                let out = match self.task.kind {
                    TaskKind::Escan => escan::dictionary(&w).map(String::from),
                    _ => self.task.target_for(&[w.as_str()])?.into_iter().next(),
                };
                Ok((w, out))
            })
            .collect()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub arch: String,
    pub cell: String,
    pub task: String,
    pub hidden: usize,
    pub samples: usize,
    pub word_accuracy: f64,
    pub sequence_accuracy: f64,
    pub eval_loss: f64,
    pub top_k: usize,
    pub shares: Option<Vec<(String, f64)>>,
    pub temporal_share: Option<f64>,
    pub temporal_agreement: Option<f64>,
    pub attention_hit_rate: Option<f64>,
    pub mean_variance_ratio: Option<f64>,
    pub gap_enc_tau: Option<f64>,
    pub gap_dec_tau: Option<f64>,
    pub gap_enc_state: Option<f64>,
    pub gap_dec_state: Option<f64>,
    pub zeroed_decoder_accuracy: Option<f64>,
}

fn opt_f(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn matrix_table(header: [&str; 3], rows: &[String], cols: &[String], m: &Matrix<f64>) -> Table {
    let mut t = Table::new(&header);
    for (i, r) in rows.iter().enumerate() {
        for (j, c) in cols.iter().enumerate() {
            t.push(vec![r.clone(), c.clone(), m.get(i, j).to_string()]);
        }
    }
    t
}

/// Writes the report CSVs and `summary.json` into `dir`.
pub fn write_report(ctx: &Context, dir: &Path) -> Result<Summary> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let d = &ctx.decomp;
    let opts = &ctx.options;
    let mut summary = Summary {
        arch: ctx.arch().to_string(),
        cell: ctx.model.config.cell.to_string(),
        task: ctx.task.kind.to_string(),
        hidden: ctx.model.hidden(),
        samples: ctx.traces.len(),
        word_accuracy: ctx.metrics.word_accuracy,
        sequence_accuracy: ctx.metrics.sequence_accuracy,
        eval_loss: ctx.metrics.loss,
        top_k: opts.top_k,
        shares: None,
        temporal_share: None,
        temporal_agreement: None,
        attention_hit_rate: None,
        mean_variance_ratio: None,
        gap_enc_tau: None,
        gap_dec_tau: None,
        gap_enc_state: None,
        gap_dec_state: None,
        zeroed_decoder_accuracy: None,
    };

    if ctx.has_attention() {
        let proj = ctx.projection();
        let shares = mean_top_shares(d, &ctx.traces, proj, opts.top_k)?;
        let mut t = Table::new(&["term", "share"]);
        for (name, s) in TERM_NAMES.iter().zip(shares) {
            t.push(vec![name.to_string(), s.to_string()]);
        }
        t.write(&dir.join("alignment_shares.csv"))?;
        summary.shares = Some(TERM_NAMES.iter().map(|n| n.to_string()).zip(shares).collect());
        summary.temporal_share = Some(shares[TAU_TAU]);

        let subsets: [(&str, Vec<usize>); 5] = [
            ("tau.tau", vec![TAU_TAU]),
            ("tau.all", vec![TAU_TAU, TAU_CHI, TAU_DELTA]),
            ("chi.delta", vec![CHI_DELTA]),
            ("delta.chi", vec![DELTA_CHI]),
            ("all", (0..9).collect()),
        ];
        let mut t = Table::new(&["subset", "argmax_agreement"]);
        for (name, subset) in &subsets {
            let a = argmax_agreement(d, &ctx.traces, proj, subset)?;
            if *name == "tau.tau" {
                summary.temporal_agreement = Some(a);
            }
            t.push(vec![name.to_string(), a.to_string()]);
        }
        t.write(&dir.join("component_agreement.csv"))?;
        summary.attention_hit_rate = Some(ctx.attention_hits()?);
    }

    let predicted = ctx.predicted_offsets()?;
    let mut t = Table::new(&["s", "offset", "value"]);
    let mut am = Table::new(&["s", "argmax_offset", "temporal_argmax_t", "predicted_offset"]);
    for s in (0..d.tau_dec.rows()).filter(|&s| d.support_dec[s] > 0) {
        let p = temporal_offset_profile(d, s, &opts.offsets)?;
        for (o, v) in p.offsets.iter().zip(&p.values) {
            t.push(vec![s.to_string(), o.to_string(), v.to_string()]);
        }
        am.push(vec![
            s.to_string(),
            p.argmax().map(|o| o.to_string()).unwrap_or_default(),
            temporal_argmax(d, s)?.to_string(),
            opt_f(predicted.get(s).copied().flatten()),
        ]);
    }
    t.write(&dir.join("temporal_offset_profile.csv"))?;
    am.write(&dir.join("temporal_offset_argmax.csv"))?;

    match mean_word_variance_ratio(&ctx.traces, d) {
        Ok((per_word, m)) => {
            let mut t = Table::new(&["word", "variance_ratio"]);
            for (w, r) in per_word {
                t.push(vec![w, r.to_string()]);
            }
            t.write(&dir.join("variance_ratio.csv"))?;
            summary.mean_variance_ratio = Some(m);
        }
        Err(Error::Invalid(_)) => {}
        Err(e) => return Err(e),
    }

    let readout = ctx.readout();
    for block in [ReadoutBlock::Context, ReadoutBlock::Decoder] {
        let Ok(ra) = readout_alignment(d, &readout, ctx.arch(), block) else {
            continue;
        };
        matrix_table(["word", "output", "value"], &ra.words, &ra.outputs, &ra.matrix).write(&dir.join(format!("readout_alignment_{block}.csv")))?;
        let mut t = Table::new(&["kind", "key", "argmax"]);
        for (w, o) in ra.words.iter().zip(ra.row_argmax()) {
            t.push(vec!["word".into(), w.clone(), o.to_string()]);
        }
        for (o, w) in ra.outputs.iter().zip(ra.col_argmax()) {
            t.push(vec!["output".into(), o.clone(), w.to_string()]);
        }
        t.write(&dir.join(format!("readout_argmax_{block}.csv")))?;
    }

    let gaps = ctx.autonomous()?;
    let mut t = Table::new(&["side", "t", "gap_tau_denominator", "gap_state_denominator"]);
    for (side, tau, state) in [("encoder", &gaps.enc_tau, &gaps.enc_state), ("decoder", &gaps.dec_tau, &gaps.dec_state)] {
        for (i, (a, b)) in tau.iter().zip(state).enumerate() {
            t.push(vec![side.into(), i.to_string(), opt_f(*a), opt_f(*b)]);
        }
    }
    t.write(&dir.join("autonomous_gaps.csv"))?;
    summary.gap_enc_tau = gaps.mean_enc_tau();
    summary.gap_dec_tau = gaps.mean_dec_tau();
    summary.gap_enc_state = gaps.mean_enc_state();
    summary.gap_dec_state = gaps.mean_dec_state();

    let mut t = Table::new(&["word", "offset", "value"]);
    for w in (3..d.input_tokens.len()).filter(|&w| d.chi_enc[w].is_some()) {
        let p = offset_dot_profile(d, &ctx.traces, w, &opts.offsets)?;
        for (o, v) in p.offsets.iter().zip(&p.values) {
            t.push(vec![d.input_tokens[w].clone(), o.to_string(), v.to_string()]);
        }
    }
    t.write(&dir.join("offset_dot_profile.csv"))?;

    let (words, angles) = chi_angles(d);
    matrix_table(["word_a", "word_b", "angle_degrees"], &words, &words, &angles).write(&dir.join("input_component_angles.csv"))?;

    let mut t = Table::new(&["set", "component", "explained"]);
    for (name, states) in [("encoder_temporal", &d.tau_enc), ("decoder_temporal", &d.tau_dec)] {
        let rows: Vec<Vec<f64>> = (0..states.rows()).map(|r| states.row(r).to_vec()).collect();
        let m = Matrix::from_rows(&rows)?;
        let k = opts.pca_components.min(m.cols()).min(m.rows().saturating_sub(1));
        if k == 0 {
            continue;
        }
        let p = pca_project(&m, k)?;
        for (i, e) in p.explained.iter().enumerate() {
            t.push(vec![name.into(), i.to_string(), e.to_string()]);
        }
    }
    t.write(&dir.join("pca_explained.csv"))?;

    if ctx.arch() == Arch::Ao {
        summary.zeroed_decoder_accuracy = Some(zeroed_decoder_probe(&ctx.model, &ctx.task, opts.samples, ctx.eval_seed, ctx.workers)?);
    }

    let path = dir.join("summary.json");
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::Json { path: path.clone(), source: e })?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}
