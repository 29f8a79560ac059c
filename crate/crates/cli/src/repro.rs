//! CSV bundles behind each figure, computed from one checkpoint.

use std::fs;
use std::path::Path;

use serde_json::json;

use seqdyn::analysis::breakdown::{CHI_DELTA, DELTA_CHI, TAU_CHI, TAU_DELTA, TAU_TAU};
use seqdyn::analysis::*;
use seqdyn::cells::CellKind;
use seqdyn::data::{TaskKind, SPECIALS};
use seqdyn::matrix::{dot, Matrix};
use seqdyn::model::Arch;
use seqdyn::{Error, Result};

use crate::csv_out::Table;
use crate::report::Context;

pub const FIGURES: [&str; 18] = [
    "fig2a", "fig2b", "fig2c", "fig2d", "fig2e", "fig2f", "fig2g", "fig2h", "fig4a", "fig4b", "fig4c", "fig4d", "fig5b", "fig5c", "fig5d", "figB2", "figB8", "figB9",
];

pub fn check_figure(id: &str) -> Result<()> {
    if FIGURES.contains(&id) {
        Ok(())
    } else {
        Err(Error::Config(format!("unknown figure {id:?}, expected one of {}", FIGURES.join(", "))))
    }
}

fn pc_header(k: usize, lead: &[&str]) -> Vec<String> {
    lead.iter().map(|s| s.to_string()).chain((0..k).map(|i| format!("pc{i}"))).collect()
}

fn table(header: Vec<String>) -> Table {
    Table {
        header,
        rows: Vec::new(),
    }
}

fn with_coords(mut lead: Vec<String>, coords: &[f64]) -> Vec<String> {
    lead.extend(coords.iter().map(|c| c.to_string()));
    lead
}

/// PCA over `rows`, keeping at most `k` components the data can support.
fn fit(rows: &[Vec<f64>], k: usize) -> Result<Pca> {
    let m = Matrix::from_rows(rows)?;
    let k = k.min(m.cols()).min(m.rows().saturating_sub(1));
    if k == 0 {
        return Err(Error::Invalid(format!("{} points are too few for a projection", m.rows())));
    }
    pca_project(&m, k)
}

/// Coordinates of a direction (no centring) in the PCA basis.
fn direction(p: &Pca, v: &[f64]) -> Vec<f64> {
    (0..p.components.rows()).map(|i| dot(p.components.row(i), v)).collect()
}

fn write_explained(p: &Pca, path: &Path) -> Result<()> {
    let mut t = Table::new(&["component", "explained"]);
    for (i, e) in p.explained.iter().enumerate() {
        t.push(vec![i.to_string(), e.to_string()]);
    }
    t.write(path)
}

fn attention_table(ctx: &Context, m: &Matrix<f64>, sample: &seqdyn::trace::SampleTrace) -> Table {
    let d = &ctx.decomp;
    let mut t = Table::new(&["s", "t", "output_word", "input_word", "value"]);
    for s in 0..m.rows() {
        for tt in 0..m.cols() {
            t.push(vec![
                s.to_string(),
                tt.to_string(),
                d.output_tokens[sample.output[s]].clone(),
                d.input_tokens[sample.input[tt]].clone(),
                m.get(s, tt).to_string(),
            ]);
        }
    }
    t
}

fn softmax_rows(m: &Matrix<f64>) -> Matrix<f64> {
    let mut out = m.clone();
    for r in 0..m.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.iter_mut().for_each(|x| *x = (*x - max).exp());
        let z: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= z);
    }
    out
}

/// Temporal paths in the PCs of the temporal components, plus the attention
/// those components alone produce.
fn temporal_bundle(ctx: &Context, dir: &Path, inset: bool) -> Result<()> {
    let d = &ctx.decomp;
    let enc: Vec<usize> = (0..d.tau_enc.rows()).filter(|&t| d.support_enc[t] > 0).collect();
    let dec: Vec<usize> = (0..d.tau_dec.rows()).filter(|&s| d.support_dec[s] > 0).collect();
    let rows: Vec<Vec<f64>> = enc.iter().map(|&t| d.tau_enc.row(t).to_vec()).chain(dec.iter().map(|&s| d.tau_dec.row(s).to_vec())).collect();
    let p = fit(&rows, ctx.options.pca_components)?;
    let coords = p.project(&Matrix::from_rows(&rows)?)?;
    let mut t = table(pc_header(p.components.rows(), &["side", "t", "support"]));
    for (i, (side, step, support)) in enc
        .iter()
        .map(|&t| ("encoder", t, d.support_enc[t]))
        .chain(dec.iter().map(|&s| ("decoder", s, d.support_dec[s])))
        .enumerate()
    {
        t.push(with_coords(vec![side.into(), step.to_string(), support.to_string()], coords.row(i)));
    }
    t.write(&dir.join("temporal_path.csv"))?;
    write_explained(&p, &dir.join("temporal_pca_explained.csv"))?;
    if inset && ctx.has_attention() {
        let proj = ctx.projection();
        let (q, k, scale) = match proj {
            Some(p) => (Some(p.query), Some(p.key), p.scale),
            None => (None, None, 1.0),
        };
        let apply = |v: &[f64], m: Option<&Matrix<f64>>| -> Vec<f64> {
            match m {
                None => v.to_vec(),
                Some(m) => (0..m.cols()).map(|c| v.iter().enumerate().map(|(r, x)| x * m.get(r, c)).sum()).collect(),
            }
        };
        let logits = Matrix::from_fn(dec.len(), enc.len(), |i, j| {
            scale * dot(&apply(d.tau_dec.row(dec[i]), q), &apply(d.tau_enc.row(enc[j]), k))
        });
        let att = softmax_rows(&logits);
        let mut t = Table::new(&["s", "t", "value"]);
        for (i, s) in dec.iter().enumerate() {
            for (j, tt) in enc.iter().enumerate() {
                t.push(vec![s.to_string(), tt.to_string(), att.get(i, j).to_string()]);
            }
        }
        t.write(&dir.join("temporal_attention.csv"))?;
    }
    Ok(())
}

/// Input-delta states, input components and readout vectors in the PCs of the
/// encoder input components.
fn input_bundle(ctx: &Context, dir: &Path, blocks: &[ReadoutBlock]) -> Result<()> {
    let d = &ctx.decomp;
    let words: Vec<usize> = (0..d.input_tokens.len()).filter(|&w| d.chi_enc[w].is_some()).collect();
    let chi: Vec<Vec<f64>> = words.iter().map(|&w| d.chi_enc_of(w).map(<[f64]>::to_vec)).collect::<Result<_>>()?;
    let p = fit(&chi, ctx.options.pca_components)?;
    let k = p.components.rows();

    let mut t = table(pc_header(k, &["word"]));
    let coords = p.project(&Matrix::from_rows(&chi)?)?;
    for (i, &w) in words.iter().enumerate() {
        t.push(with_coords(vec![d.input_tokens[w].clone()], coords.row(i)));
    }
    t.write(&dir.join("input_components.csv"))?;

    let mut t = table(pc_header(k, &["side", "sample", "step", "word"]));
    for (a, sample) in ctx.traces.samples.iter().enumerate() {
        for step in 0..sample.enc_len() {
            let parts = d.enc_parts(sample, step)?;
            let v: Vec<f64> = parts.chi.iter().zip(&parts.delta).map(|(c, x)| c + x).collect();
            let lead = vec!["encoder".into(), a.to_string(), step.to_string(), d.input_tokens[sample.input[step]].clone()];
            t.push(with_coords(lead, &p.project(&Matrix::row_vector(v))?.into_vec()));
        }
        for step in 0..sample.dec_len() {
            let parts = d.dec_parts(sample, step)?;
            let v: Vec<f64> = parts.chi.iter().zip(&parts.delta).map(|(c, x)| c + x).collect();
            let lead = vec!["decoder".into(), a.to_string(), step.to_string(), d.output_tokens[sample.output[step]].clone()];
            t.push(with_coords(lead, &p.project(&Matrix::row_vector(v))?.into_vec()));
        }
    }
    t.write(&dir.join("input_delta.csv"))?;

    let readout = ctx.readout();
    let n = d.hidden();
    let mut t = table(pc_header(k, &["block", "output"]));
    for &block in blocks {
        let rows = seqdyn::analysis::readout::block_rows(ctx.arch(), n, block)?;
        for o in 0..d.output_tokens.len() {
            let v: Vec<f64> = rows.clone().map(|r| readout.get(r, o)).collect();
            t.push(with_coords(vec![block.to_string(), d.output_tokens[o].clone()], &direction(&p, &v)));
        }
    }
    t.write(&dir.join("readouts.csv"))?;
    write_explained(&p, &dir.join("input_pca_explained.csv"))
}

fn readout_blocks(arch: Arch) -> Vec<ReadoutBlock> {
    match arch {
        Arch::Aed => vec![ReadoutBlock::Context],
        Arch::Ao => vec![ReadoutBlock::Context],
        Arch::Ved => vec![ReadoutBlock::Decoder],
    }
}

fn example_attention(ctx: &Context, dir: &Path) -> Result<()> {
    if !ctx.has_attention() {
        return Ok(());
    }
    let sample = ctx.example()?;
    let att = sample.attention.as_ref().ok_or_else(|| Error::Invalid("no attention recorded".into()))?;
    attention_table(ctx, att, sample).write(&dir.join("attention.csv"))
}

fn require(ok: bool, figure: &str, what: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Invalid(format!("{figure} needs a checkpoint with {what}")))
    }
}

/// Writes the bundle for `figure` into `dir`.
pub fn repro(ctx: &Context, figure: &str, dir: &Path) -> Result<()> {
    check_figure(figure)?;
    let arch = ctx.arch();
    let kind = ctx.task.kind;
    let one_to_one = kind == TaskKind::OneToOne;
    let d = &ctx.decomp;
    match figure {
        "fig2a" | "fig2c" | "fig2e" => {
            let want = match figure {
                "fig2a" => Arch::Aed,
                "fig2c" => Arch::Ao,
                _ => Arch::Ved,
            };
            require(arch == want && one_to_one, figure, &format!("arch {want} on the one-to-one task"))?;
            temporal_bundle(ctx, dir, true)?;
        }
        "fig2b" | "fig2d" | "fig2f" => {
            let want = match figure {
                "fig2b" => Arch::Aed,
                "fig2d" => Arch::Ao,
                _ => Arch::Ved,
            };
            require(arch == want && one_to_one, figure, &format!("arch {want} on the one-to-one task"))?;
            input_bundle(ctx, dir, &readout_blocks(arch))?;
        }
        "fig2g" => {
            require(kind == TaskKind::Reversed, figure, "the reversed task")?;
            temporal_bundle(ctx, dir, true)?;
            example_attention(ctx, dir)?;
        }
        "fig2h" => {
            require(kind == TaskKind::Sort, figure, "the sort task")?;
            ctx.require_attention(figure)?;
            let sample = ctx.example()?;
            let bd = alignment_breakdown(d, sample, ctx.projection())?;
            let full = sample.attention.as_ref().ok_or_else(|| Error::Invalid("no attention recorded".into()))?;
            attention_table(ctx, full, sample).write(&dir.join("attention_full.csv"))?;
            for (name, term) in [("tau_tau", TAU_TAU), ("chi_delta", CHI_DELTA), ("delta_chi", DELTA_CHI)] {
                let att = component_attention(&bd, &[term])?;
                attention_table(ctx, &att, sample).write(&dir.join(format!("attention_{name}.csv")))?;
            }
        }
        "fig4a" => {
            ctx.require_attention(figure)?;
            let shares = mean_top_shares(d, &ctx.traces, ctx.projection(), ctx.options.top_k)?;
            let lead = || vec![kind.to_string(), arch.to_string(), ctx.model.config.cell.to_string()];
            let mut t = Table::new(&["task", "arch", "cell", "term", "share"]);
            for (name, s) in TERM_NAMES.iter().zip(shares) {
                let mut r = lead();
                r.extend([name.to_string(), s.to_string()]);
                t.push(r);
            }
            t.write(&dir.join("term_shares.csv"))?;
            let groups = [
                ("tau.tau", shares[TAU_TAU]),
                ("tau.chi+tau.delta", shares[TAU_CHI] + shares[TAU_DELTA]),
                ("other", 1.0 - shares[TAU_TAU] - shares[TAU_CHI] - shares[TAU_DELTA]),
            ];
            let mut t = Table::new(&["task", "arch", "cell", "group", "share"]);
            for (g, s) in groups {
                let mut r = lead();
                r.extend([g.to_string(), s.to_string()]);
                t.push(r);
            }
            t.write(&dir.join("share_groups.csv"))?;
        }
        "fig4b" => {
            let predicted = ctx.predicted_offsets()?;
            let mut prof = Table::new(&["s", "offset", "value"]);
            let mut pred = Table::new(&["s", "argmax_offset", "predicted_offset"]);
            for s in (0..d.tau_dec.rows()).filter(|&s| d.support_dec[s] > 0) {
                let p = temporal_offset_profile(d, s, &ctx.options.offsets)?;
                for (o, v) in p.offsets.iter().zip(&p.values) {
                    prof.push(vec![s.to_string(), o.to_string(), v.to_string()]);
                }
                pred.push(vec![
                    s.to_string(),
                    p.argmax().map(|o| o.to_string()).unwrap_or_default(),
                    predicted.get(s).copied().flatten().map(|v| v.to_string()).unwrap_or_default(),
                ]);
            }
            prof.write(&dir.join("offset_profile.csv"))?;
            pred.write(&dir.join("offset_prediction.csv"))?;
        }
        "fig4c" => {
            let (per_word, mean) = mean_word_variance_ratio(&ctx.traces, d)?;
            let mut t = Table::new(&["task", "arch", "word", "variance_ratio"]);
            for (w, r) in per_word {
                t.push(vec![kind.to_string(), arch.to_string(), w, r.to_string()]);
            }
            t.push(vec![kind.to_string(), arch.to_string(), "mean".into(), mean.to_string()]);
            t.write(&dir.join("variance_ratio.csv"))?;
        }
        "fig4d" => {
            let block = readout_blocks(arch)[0];
            let ra = readout_alignment(d, &ctx.readout(), arch, block)?;
            let mut t = Table::new(&["word", "output", "value"]);
            for (i, w) in ra.words.iter().enumerate() {
                for (j, o) in ra.outputs.iter().enumerate() {
                    t.push(vec![w.clone(), o.clone(), ra.matrix.get(i, j).to_string()]);
                }
            }
            t.write(&dir.join("readout_alignment.csv"))?;
        }
        "fig5b" => {
            require(kind == TaskKind::Escan, figure, "the escan task")?;
            ctx.require_attention(figure)?;
            twice_alignment(ctx, dir)?;
        }
        "fig5c" | "fig5d" => {
            let offsets: Vec<i64> = if figure == "fig5c" { vec![0] } else { ctx.options.offsets.clone() };
            let mut t = Table::new(&["word", "offset", "value"]);
            for w in (SPECIALS.len()..d.input_tokens.len()).filter(|&w| d.chi_enc[w].is_some()) {
                let p = offset_dot_profile(d, &ctx.traces, w, &offsets)?;
                for (o, v) in p.offsets.iter().zip(&p.values) {
                    t.push(vec![d.input_tokens[w].clone(), o.to_string(), v.to_string()]);
                }
            }
            t.write(&dir.join("offset_dot_profile.csv"))?;
        }
        "figB2" => {
            require(ctx.model.config.cell == CellKind::Lstm && one_to_one, figure, "cell lstm on the one-to-one task")?;
            temporal_bundle(ctx, dir, true)?;
            input_bundle(ctx, dir, &readout_blocks(arch))?;
        }
        "figB8" => {
            require(arch == Arch::Aed, figure, "arch aed")?;
            input_bundle(ctx, dir, &[ReadoutBlock::Context, ReadoutBlock::Decoder])?;
        }
        "figB9" => {
            require(arch == Arch::Ved, figure, "arch ved")?;
            ved_tree(ctx, dir)?;
        }
        _ => unreachable!("checked above"),
    }
    let meta = json!({
        "figure": figure,
        "arch": arch.to_string(),
        "cell": ctx.model.config.cell.to_string(),
        "task": kind.to_string(),
        "samples": ctx.traces.len(),
        "word_accuracy": ctx.metrics.word_accuracy,
    });
    let path = dir.join("meta.json");
    fs::write(&path, serde_json::to_string_pretty(&meta).expect("json value")).map_err(|e| Error::io(&path, e))
}

/// Alignment around each `twice` at `t = s`, split into the temporal term,
/// the decoder temporal part against the rest of the encoder state, and the
/// remainder coming from the decoder's non-temporal part.
fn twice_alignment(ctx: &Context, dir: &Path) -> Result<()> {
    let d = &ctx.decomp;
    let twice = d.input_word("twice")?;
    let equal: Vec<_> = ctx.traces.samples.iter().filter(|s| s.enc_len() == s.dec_len()).collect();
    let (pool, equal_lengths) = if equal.is_empty() { (ctx.traces.samples.iter().collect(), false) } else { (equal, true) };
    let mut t = Table::new(&["occurrence", "equal_lengths", "s", "t", "offset", "alignment", "tau_tau", "tau_chi_delta", "decoder_rest"]);
    let mut occurrence = 0;
    for sample in pool {
        let bd = alignment_breakdown(d, sample, ctx.projection())?;
        let full = bd.total();
        for s in (0..sample.enc_len().min(sample.dec_len())).filter(|&s| sample.input[s] == twice) {
            for tt in 0..sample.enc_len() {
                let tau_tau = bd.terms[TAU_TAU].get(s, tt);
                let tau_rest = bd.terms[TAU_CHI].get(s, tt) + bd.terms[TAU_DELTA].get(s, tt);
                let a = full.get(s, tt);
                t.push(vec![
                    occurrence.to_string(),
                    equal_lengths.to_string(),
                    s.to_string(),
                    tt.to_string(),
                    (tt as i64 - s as i64).to_string(),
                    a.to_string(),
                    tau_tau.to_string(),
                    tau_rest.to_string(),
                    (a - tau_tau - tau_rest).to_string(),
                ]);
            }
            occurrence += 1;
        }
    }
    t.write(&dir.join("twice_alignment.csv"))
}

/// Encoder states over the first five steps in their own PCs, with the word
/// prefix read so far.
fn ved_tree(ctx: &Context, dir: &Path) -> Result<()> {
    const STEPS: usize = 5;
    let d = &ctx.decomp;
    let mut rows = Vec::new();
    let mut keys = Vec::new();
    for (a, sample) in ctx.traces.samples.iter().enumerate() {
        for step in 0..sample.enc_len().min(STEPS) {
            rows.push(sample.enc_states.row(step).to_vec());
            let prefix: Vec<&str> = sample.input[..=step].iter().map(|&w| d.input_tokens[w].as_str()).collect();
            keys.push((a, step, prefix.join(" ")));
        }
    }
    let p = fit(&rows, ctx.options.pca_components)?;
    let coords = p.project(&Matrix::from_rows(&rows)?)?;
    let mut t = table(pc_header(p.components.rows(), &["sample", "t", "prefix"]));
    for (i, (a, step, prefix)) in keys.into_iter().enumerate() {
        t.push(with_coords(vec![a.to_string(), step.to_string(), prefix], coords.row(i)));
    }
    t.write(&dir.join("encoder_states.csv"))?;
    write_explained(&p, &dir.join("pca_explained.csv"))
}
