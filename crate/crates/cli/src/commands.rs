//! The five verbs. Each reads a config file and writes under the run directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use seqdyn::checkpoint;
use seqdyn::data::write_tsv;
use seqdyn::model::Model;
use seqdyn::train::{evaluate, stream_seeds, train as fit, trace_meta, write_log_csv};
use seqdyn::{Error, Result};

use crate::config::{self, RunConfig};
use crate::report::{write_report, Context};
use crate::repro::{check_figure, repro as write_bundle};

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

pub fn load(path: &Path, overrides: &Overrides) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut file = config::parse(&text)?;
    if let Some(out) = &overrides.out {
        file.run.out = Some(out.display().to_string());
    }
    if overrides.seed.is_some() {
        file.run.seed = overrides.seed;
    }
    if overrides.workers.is_some() {
        file.run.workers = overrides.workers;
    }
    config::resolve(file)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn json_text(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("plain data serializes")
}

/// Training and held-out samples as TSV.
pub fn gen(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.run_dir().join("data");
    let (data_seed, eval_seed) = stream_seeds(cfg.seed);
    let (input, output) = (cfg.task.input_vocab(), cfg.task.output_vocab());
    for (name, seed, n) in [("train.tsv", data_seed, cfg.dump_size), ("eval.tsv", eval_seed, cfg.analysis.samples)] {
        let samples = cfg.task.generator(seed)?.take_samples(n);
        let mut buf = Vec::new();
        write_tsv(&mut buf, &samples, &input, &output)?;
        write(&dir.join(name), buf)?;
    }
    Ok(dir)
}

pub fn train(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.run_dir();
    write(&dir.join("config.toml"), cfg.echo_toml())?;
    let mut model = Model::new(cfg.model.clone(), cfg.seed)?;
    let total = cfg.train.total_steps();
    let outcome = fit(&mut model, &cfg.task, &cfg.train, cfg.seed, |e| {
        if let Some(acc) = e.word_accuracy {
            eprintln!("step {}/{total} lr {:.3e} loss {:.4} accuracy {acc:.4}", e.step, e.lr, e.loss);
        }
    });
    let outcome = match outcome {
        Ok(o) => o,
        Err(e) => {
            write(&dir.join("failure.txt"), format!("{e}\n"))?;
            return Err(e);
        }
    };
    let mut log = Vec::new();
    write_log_csv(&mut log, &outcome.log)?;
    write(&dir.join("train_log.csv"), log)?;
    let metrics = json!({
        "steps": outcome.steps,
        "loss": outcome.final_metrics.loss,
        "word_accuracy": outcome.final_metrics.word_accuracy,
        "sequence_accuracy": outcome.final_metrics.sequence_accuracy,
        "samples": outcome.final_metrics.samples,
    });
    write(&dir.join("metrics.json"), json_text(&metrics))?;
    let ckpt = cfg.checkpoint_dir();
    checkpoint::save(&model, &ckpt, outcome.steps as u64, json!({ "run": cfg.name, "metrics": metrics }))?;
    Ok(ckpt)
}

fn load_model(cfg: &RunConfig) -> Result<Model<f32>> {
    let (model, _) = checkpoint::load(&cfg.checkpoint_dir())?;
    if model.config != cfg.model {
        eprintln!("note: using the model settings stored with the checkpoint, they differ from the config");
    }
    Ok(model)
}

/// Greedy decoding on the held-out stream; saves metrics and the trace bundle.
pub fn eval(cfg: &RunConfig) -> Result<PathBuf> {
    let model = load_model(cfg)?;
    let (_, eval_seed) = stream_seeds(cfg.seed);
    let (metrics, mut traces) = evaluate(&model, &cfg.task, cfg.analysis.samples, eval_seed, cfg.workers)?;
    traces.meta = trace_meta(&model, &cfg.task, &cfg.name);
    let dir = cfg.run_dir().join("eval");
    traces.save(&dir.join("traces"))?;
    write(&dir.join("metrics.json"), json_text(&metrics))?;
    println!("word accuracy {:.4} sequence accuracy {:.4} loss {:.4}", metrics.word_accuracy, metrics.sequence_accuracy, metrics.loss);
    Ok(dir)
}

fn context(cfg: &RunConfig) -> Result<Context> {
    Context::new(load_model(cfg)?, cfg.task.clone(), cfg.analysis.clone(), cfg.seed, cfg.workers)
}

pub fn analyze(cfg: &RunConfig) -> Result<PathBuf> {
    let ctx = context(cfg)?;
    let dir = cfg.run_dir().join("analysis");
    let summary = write_report(&ctx, &dir)?;
    println!("{}", json_text(&summary));
    Ok(dir)
}

pub fn repro(cfg: &RunConfig, figure: &str) -> Result<PathBuf> {
    check_figure(figure)?;
    let ctx = context(cfg)?;
    let dir = cfg.run_dir().join("repro").join(figure);
    write_bundle(&ctx, figure, &dir)?;
    Ok(dir)
}
