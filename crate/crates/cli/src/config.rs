//! Run configuration: `key = value` lines under `[run]`, `[task]`, `[model]`,
//! `[train]` and `[analysis]` headers. Every key is optional; unset keys take
//! defaults that depend on the task and architecture.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use seqdyn::attention::AttentionKind;
use seqdyn::cells::CellKind;
use seqdyn::data::{TaskKind, TaskSpec};
use seqdyn::model::{Arch, ModelConfig};
use seqdyn::optim::Clip;
use seqdyn::train::TrainConfig;
use seqdyn::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub name: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<String>,
    pub workers: Option<usize>,
    /// Checkpoint directory read by eval, analyze and repro.
    pub checkpoint: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    pub kind: Option<TaskKind>,
    pub vocab_size: Option<usize>,
    pub min_len: Option<usize>,
    pub max_len: Option<usize>,
    /// Number of samples written by `gen`.
    pub dump_size: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub arch: Option<Arch>,
    pub cell: Option<CellKind>,
    pub attention: Option<AttentionKind>,
    pub hidden: Option<usize>,
    pub enc_input_dim: Option<usize>,
    pub dec_input_dim: Option<usize>,
    pub pos_encoding: Option<bool>,
    pub pos_tau: Option<f64>,
    pub pos_rotation: Option<bool>,
    pub readout_bias: Option<bool>,
    pub qkv_dim: Option<usize>,
    pub qkv_scaled: Option<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClipMode {
    Value,
    GlobalNorm,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub lr_decay: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub eps: Option<f64>,
    pub clip: Option<f64>,
    pub clip_mode: Option<ClipMode>,
    pub l2: Option<f64>,
    pub epochs: Option<usize>,
    pub batches_per_epoch: Option<usize>,
    pub eval_every: Option<usize>,
    pub eval_size: Option<usize>,
    pub early_stop: Option<bool>,
    pub teacher_forcing: Option<bool>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    /// Held-out samples traced for analysis.
    pub samples: Option<usize>,
    /// Largest alignments per decoder step entering the share averages.
    pub top_k: Option<usize>,
    pub min_offset: Option<i64>,
    pub max_offset: Option<i64>,
    pub pca_components: Option<usize>,
    /// Index of the held-out sample used for single-example matrices.
    pub example: Option<usize>,
}

/// The file as written; after [`resolve`] every field is set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub task: TaskSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub samples: usize,
    pub top_k: usize,
    pub offsets: Vec<i64>,
    pub pca_components: usize,
    pub example: usize,
}

/// Fully resolved configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub name: String,
    pub seed: u64,
    pub out: PathBuf,
    pub workers: usize,
    pub checkpoint: Option<PathBuf>,
    pub task: TaskSpec,
    pub dump_size: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub analysis: AnalysisOptions,
    /// The resolved settings in file form, written next to every output.
    pub echo: ConfigFile,
}

impl RunConfig {
    /// Output directory of this run: `<out>/<name>-seed<seed>`.
    pub fn run_dir(&self) -> PathBuf {
        self.out.join(format!("{}-seed{}", self.name, self.seed))
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.run_dir().join("checkpoint"))
    }

    pub fn echo_toml(&self) -> String {
        toml::to_string(&self.echo).expect("resolved configuration serializes")
    }
}

const SECTIONS: [&str; 5] = ["run", "task", "model", "train", "analysis"];

/// Checks each key on its own so that every offending key is reported.
fn check_section<T: DeserializeOwned + Default>(name: &str, value: &toml::Value, problems: &mut Vec<String>) -> T {
    let Some(table) = value.as_table() else {
        problems.push(format!("{name}: expected a [{name}] section"));
        return T::default();
    };
    let mut bad = false;
    for (key, v) in table {
        let mut single = toml::Table::new();
        single.insert(key.clone(), v.clone());
        if let Err(e) = toml::Value::Table(single).try_into::<T>() {
            problems.push(format!("{name}.{key}: {}", e.message().trim()));
            bad = true;
        }
    }
    if bad {
        return T::default();
    }
    value.clone().try_into::<T>().unwrap_or_else(|e| {
        problems.push(format!("{name}: {}", e.message().trim()));
        T::default()
    })
}

pub fn parse(text: &str) -> Result<ConfigFile> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(format!("syntax: {}", e.message().trim())))?;
    let mut problems = Vec::new();
    for key in table.keys() {
        if !SECTIONS.contains(&key.as_str()) {
            problems.push(format!("{key}: unknown section, expected one of {}", SECTIONS.join(", ")));
        }
    }
    let empty = toml::Value::Table(toml::Table::new());
    let get = |k: &str| table.get(k).unwrap_or(&empty);
    let file = ConfigFile {
        run: check_section("run", get("run"), &mut problems),
        task: check_section("task", get("task"), &mut problems),
        model: check_section("model", get("model"), &mut problems),
        train: check_section("train", get("train"), &mut problems),
        analysis: check_section("analysis", get("analysis"), &mut problems),
    };
    if problems.is_empty() {
        Ok(file)
    } else {
        Err(Error::Config(problems.join("\n")))
    }
}

pub fn load(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    resolve(parse(&text)?)
}

/// Fills in defaults, validates, and returns the run plus its file echo.
pub fn resolve(file: ConfigFile) -> Result<RunConfig> {
    let mut problems = Vec::new();
    let mut collect = |r: Result<()>| {
        if let Err(e) = r {
            problems.push(match e {
                Error::Config(m) => m,
                other => other.to_string(),
            });
        }
    };

    let kind = file.task.kind.unwrap_or(TaskKind::OneToOne);
    let escan = kind == TaskKind::Escan;
    let (min_default, max_default) = if escan { (10, 15) } else { (15, 20) };
    let seed = file.run.seed.unwrap_or(0);
    let task = TaskSpec {
        kind,
        vocab_size: if escan { seqdyn::data::escan::OUTPUT_WORDS.len() } else { file.task.vocab_size.unwrap_or(3) },
        min_len: file.task.min_len.unwrap_or(min_default),
        max_len: file.task.max_len.unwrap_or(max_default),
        seed,
    };
    collect(task.validate().map_err(|e| Error::Config(format!("task: {e}"))));
    let task_ok = task.validate().is_ok();

    let arch = file.model.arch.unwrap_or(Arch::Aed);
    let cell = file.model.cell.unwrap_or(CellKind::Gru);
    let safe_task = if task_ok { task } else { TaskSpec::one_to_one(3, 15, 20, seed) };
    let mut model = ModelConfig::for_task(arch, cell, &safe_task);
    let m = &file.model;
    model.attention = m.attention.unwrap_or(model.attention);
    model.hidden = m.hidden.unwrap_or(model.hidden);
    if m.hidden.is_some() && m.qkv_dim.is_none() {
        model.qkv_dim = model.hidden;
    }
    model.enc_input_dim = m.enc_input_dim.unwrap_or(model.enc_input_dim);
    model.dec_input_dim = m.dec_input_dim.unwrap_or(model.dec_input_dim);
    model.pos_encoding = m.pos_encoding.unwrap_or(model.pos_encoding);
    model.pos_tau = m.pos_tau.unwrap_or(model.pos_tau);
    model.pos_rotation = m.pos_rotation.unwrap_or(model.pos_rotation);
    model.readout_bias = m.readout_bias.unwrap_or(model.readout_bias);
    model.qkv_dim = m.qkv_dim.unwrap_or(model.qkv_dim);
    model.qkv_scaled = m.qkv_scaled.unwrap_or(model.qkv_scaled);
    if task_ok {
        collect(model.validate().map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("model: {msg}")),
            other => other,
        }));
    }

    let mut train = TrainConfig::for_arch(arch);
    let t = &file.train;
    train.batch_size = t.batch_size.unwrap_or(train.batch_size);
    train.adam.lr0 = t.lr.unwrap_or(train.adam.lr0);
    train.adam.decay = t.lr_decay.unwrap_or(train.adam.decay);
    train.adam.beta1 = t.beta1.unwrap_or(train.adam.beta1);
    train.adam.beta2 = t.beta2.unwrap_or(train.adam.beta2);
    train.adam.eps = t.eps.unwrap_or(train.adam.eps);
    let limit = t.clip.unwrap_or(10.0);
    train.clip = match t.clip_mode.unwrap_or(ClipMode::Value) {
        ClipMode::Value => Clip::Value(limit),
        ClipMode::GlobalNorm => Clip::GlobalNorm(limit),
    };
    train.l2 = t.l2.unwrap_or(train.l2);
    train.epochs = t.epochs.unwrap_or(train.epochs);
    train.batches_per_epoch = t.batches_per_epoch.unwrap_or(train.batches_per_epoch);
    train.eval_every = t.eval_every.unwrap_or(train.eval_every);
    train.eval_size = t.eval_size.unwrap_or(train.eval_size);
    train.early_stop = t.early_stop.unwrap_or(train.early_stop);
    train.teacher_forcing = t.teacher_forcing.unwrap_or(train.teacher_forcing);
    collect(train.validate().map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("train: {msg}")),
        other => other,
    }));

    let a = &file.analysis;
    let (lo, hi) = (a.min_offset.unwrap_or(-5), a.max_offset.unwrap_or(5));
    let analysis = AnalysisOptions {
        samples: a.samples.unwrap_or(512),
        top_k: a.top_k.unwrap_or(1),
        offsets: (lo..=hi).collect(),
        pca_components: a.pca_components.unwrap_or(3),
        example: a.example.unwrap_or(0),
    };
    if analysis.samples == 0 {
        problems.push("analysis.samples must be positive".into());
    }
    if analysis.top_k == 0 {
        problems.push("analysis.top_k must be positive".into());
    }
    if lo > hi {
        problems.push(format!("analysis: min_offset {lo} exceeds max_offset {hi}"));
    }
    if analysis.pca_components == 0 {
        problems.push("analysis.pca_components must be positive".into());
    }
    if analysis.example >= analysis.samples {
        problems.push(format!("analysis.example {} must be below analysis.samples {}", analysis.example, analysis.samples));
    }
    let workers = file.run.workers.unwrap_or(1);
    if workers == 0 {
        problems.push("run.workers must be positive".into());
    }
    if !problems.is_empty() {
        return Err(Error::Config(problems.join("\n")));
    }

    let name = file.run.name.clone().unwrap_or_else(|| format!("{arch}-{cell}-{kind}"));
    let out = file.run.out.clone().unwrap_or_else(|| "runs".into());
    let dump_size = file.task.dump_size.unwrap_or(1000);
    let echo = ConfigFile {
        run: RunSection {
            name: Some(name.clone()),
            seed: Some(seed),
            out: Some(out.clone()),
            workers: Some(workers),
            checkpoint: file.run.checkpoint.clone(),
        },
        task: TaskSection {
            kind: Some(task.kind),
            vocab_size: Some(task.vocab_size),
            min_len: Some(task.min_len),
            max_len: Some(task.max_len),
            dump_size: Some(dump_size),
        },
        model: ModelSection {
            arch: Some(model.arch),
            cell: Some(model.cell),
            attention: Some(model.attention),
            hidden: Some(model.hidden),
            enc_input_dim: Some(model.enc_input_dim),
            dec_input_dim: Some(model.dec_input_dim),
            pos_encoding: Some(model.pos_encoding),
            pos_tau: Some(model.pos_tau),
            pos_rotation: Some(model.pos_rotation),
            readout_bias: Some(model.readout_bias),
            qkv_dim: Some(model.qkv_dim),
            qkv_scaled: Some(model.qkv_scaled),
        },
        train: TrainSection {
            batch_size: Some(train.batch_size),
            lr: Some(train.adam.lr0),
            lr_decay: Some(train.adam.decay),
            beta1: Some(train.adam.beta1),
            beta2: Some(train.adam.beta2),
            eps: Some(train.adam.eps),
            clip: Some(limit),
            clip_mode: Some(t.clip_mode.unwrap_or(ClipMode::Value)),
            l2: Some(train.l2),
            epochs: Some(train.epochs),
            batches_per_epoch: Some(train.batches_per_epoch),
            eval_every: Some(train.eval_every),
            eval_size: Some(train.eval_size),
            early_stop: Some(train.early_stop),
            teacher_forcing: Some(train.teacher_forcing),
        },
        analysis: AnalysisSection {
            samples: Some(analysis.samples),
            top_k: Some(analysis.top_k),
            min_offset: Some(lo),
            max_offset: Some(hi),
            pca_components: Some(analysis.pca_components),
            example: Some(analysis.example),
        },
    };
    Ok(RunConfig {
        name,
        seed,
        out: PathBuf::from(out),
        workers,
        checkpoint: file.run.checkpoint.map(PathBuf::from),
        task,
        dump_size,
        model,
        train,
        analysis,
        echo,
    })
}

/// Commented reference listing every key with its default for the default task.
pub fn reference() -> String {
    let cfg = resolve(ConfigFile::default()).expect("defaults are valid");
    let body = cfg.echo_toml();
    let mut out = String::from(
        "# Every key with its default. Model and train defaults shown are those of\n\
         # the default task and architecture (AED/GRU on one-to-one); eSCAN defaults\n\
         # to lengths 10-15, AO to hidden 256 with inputs padded to 50 (100 for eSCAN),\n\
         # and VED to lr_decay 0.9999. `run.checkpoint` defaults to <run dir>/checkpoint.\n\n",
    );
    out.push_str(&body);
    out
}
