use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use seqdyn_cli::config::{self, reference};
use seqdyn_cli::repro::FIGURES;

const SORT: &str = r#"
[run]
name = "sort"
[task]
kind = "sort"
min_len = 4
max_len = 6
[model]
arch = "aed"
hidden = 12
[train]
epochs = 1
batches_per_epoch = 30
eval_every = 15
batch_size = 32
[analysis]
samples = 48
"#;

fn seqdyn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqdyn")).current_dir(dir).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    fs::write(dir.join(name), text).unwrap();
    name.to_string()
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn config_reference_file_is_current() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/config-reference.toml");
    let want = reference();
    if std::env::var_os("UPDATE_REFERENCE").is_some() {
        fs::write(&path, &want).unwrap();
    }
    let have = fs::read_to_string(&path).expect("docs/config-reference.toml exists");
    assert_eq!(have, want, "regenerate with UPDATE_REFERENCE=1 cargo test -p seqdyn-cli");
    let parsed = config::resolve(config::parse(&have).unwrap()).unwrap();
    let defaults = config::resolve(Default::default()).unwrap();
    assert_eq!(parsed.echo, defaults.echo);
    assert_eq!(parsed.model, defaults.model);
}

#[test]
fn every_bad_key_is_reported_with_exit_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.toml",
        "[model]\nhiden = 3\n[train]\nbatch_size = \"many\"\nlr = -1.0\n[plot]\nx = 1\n",
    );
    let err = config::parse(&fs::read_to_string(dir.path().join(&cfg)).unwrap()).unwrap_err().to_string();
    for key in ["model.hiden", "train.batch_size", "plot"] {
        assert!(err.contains(key), "{key} missing from {err}");
    }
    let out = seqdyn(dir.path(), &["train", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("model.hiden"));

    let cfg = write_config(dir.path(), "range.toml", "[train]\nlr = -1.0\n[task]\nmin_len = 9\nmax_len = 3\n");
    let out = seqdyn(dir.path(), &["gen", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    let e = stderr(&out);
    assert!(e.contains("lr") && e.contains("task"), "{e}");
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(seqdyn(dir.path(), &["fly", "--config", "x.toml"]).status.code(), Some(1));
    assert_eq!(seqdyn(dir.path(), &["train"]).status.code(), Some(1));
    assert_eq!(seqdyn(dir.path(), &["train", "--config", "missing.toml"]).status.code(), Some(1));
    assert_eq!(seqdyn(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn divergence_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "nan.toml",
        "[task]\nmin_len = 3\nmax_len = 4\n[model]\nhidden = 8\n[train]\nlr = 1e38\nclip = 1e30\nepochs = 1\nbatches_per_epoch = 5\n",
    );
    let out = seqdyn(dir.path(), &["train", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("diverged"));
}

#[test]
fn gen_is_deterministic_and_seed_override_moves_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "gen.toml", "[task]\nkind = \"escan\"\ndump_size = 50\n[analysis]\nsamples = 20\n");
    for out in ["a", "b"] {
        assert!(seqdyn(dir.path(), &["gen", "--config", &cfg, "--out", out]).status.success());
    }
    let a = files(&dir.path().join("a"));
    assert_eq!(a, files(&dir.path().join("b")));
    let train = &a[Path::new("aed-gru-escan-seed0/data/train.tsv")];
    assert_eq!(String::from_utf8_lossy(train).lines().count(), 50);
    assert!(seqdyn(dir.path(), &["gen", "--config", &cfg, "--out", "a", "--seed", "5"]).status.success());
    let c = fs::read(dir.path().join("a/aed-gru-escan-seed5/data/train.tsv")).unwrap();
    assert_ne!(&c, train);
}

#[test]
fn repro_bundles_rerun_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "sort.toml", SORT);
    let run = |out: &str| {
        let o = seqdyn(dir.path(), &["train", "--config", &cfg, "--out", out, "--workers", "2"]);
        assert!(o.status.success(), "{}", stderr(&o));
        for figure in ["fig2h", "fig4a", "fig4b", "fig4c", "fig4d", "fig5c", "fig5d", "figB8"] {
            let o = seqdyn(dir.path(), &["repro", "--config", &cfg, "--out", out, "--figure", figure]);
            assert!(o.status.success(), "{figure}: {}", stderr(&o));
        }
        let o = seqdyn(dir.path(), &["analyze", "--config", &cfg, "--out", out]);
        assert!(o.status.success(), "{}", stderr(&o));
        let o = seqdyn(dir.path(), &["eval", "--config", &cfg, "--out", out]);
        assert!(o.status.success(), "{}", stderr(&o));
    };
    run("one");
    run("two");
    let one = files(&dir.path().join("one"));
    let two = files(&dir.path().join("two"));
    assert_eq!(one.keys().collect::<Vec<_>>(), two.keys().collect::<Vec<_>>());
    let differing: Vec<_> = one.keys().filter(|k| one[*k] != two[*k]).collect();
    // only the config echo records the output root
    assert_eq!(differing, [Path::new("sort-seed0/config.toml")]);

    let fig = |name: &str| String::from_utf8(one[&PathBuf::from(format!("sort-seed0/repro/fig2h/{name}"))].clone()).unwrap();
    for name in ["attention_full.csv", "attention_tau_tau.csv", "attention_chi_delta.csv", "attention_delta_chi.csv"] {
        let text = fig(name);
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("s,t,output_word,input_word,value"));
        // each decoder row is a distribution over encoder steps
        let mut rows: BTreeMap<usize, f64> = BTreeMap::new();
        for l in lines {
            let f: Vec<&str> = l.split(',').collect();
            *rows.entry(f[0].parse().unwrap()).or_default() += f[4].parse::<f64>().unwrap();
        }
        assert!(!rows.is_empty());
        // the recorded weights come from single-precision decoding
        let tol = if name == "attention_full.csv" { 1e-6 } else { 1e-9 };
        assert!(rows.values().all(|t| (t - 1.0).abs() < tol), "{name}: {rows:?}");
    }
    let shares = String::from_utf8(one[Path::new("sort-seed0/repro/fig4a/term_shares.csv")].clone()).unwrap();
    let total: f64 = shares.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);
    assert!(one.contains_key(Path::new("sort-seed0/analysis/summary.json")));
    assert!(one.contains_key(Path::new("sort-seed0/eval/traces/meta.json")) || one.keys().any(|k| k.starts_with("sort-seed0/eval/traces")));
}

#[test]
fn repro_rejects_unknown_and_mismatched_figures() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "sort.toml", SORT);
    let o = seqdyn(dir.path(), &["repro", "--config", &cfg, "--figure", "fig9z"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(FIGURES.iter().all(|f| stderr(&o).contains(f)));
    let o = seqdyn(dir.path(), &["repro", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--figure"));

    assert!(seqdyn(dir.path(), &["train", "--config", &cfg]).status.success());
    for figure in ["fig2a", "fig5b", "figB9", "figB2"] {
        let o = seqdyn(dir.path(), &["repro", "--config", &cfg, "--figure", figure]);
        assert_eq!(o.status.code(), Some(1), "{figure}");
        assert!(!dir.path().join("runs/sort-seed0/repro").join(figure).exists());
    }
}

#[test]
fn every_figure_has_a_bundle() {
    // one-to-one checkpoints for each architecture, a reversed one, an eSCAN one
    let dir = tempfile::tempdir().unwrap();
    let cases: [(&str, &str, &[&str]); 6] = [
        ("aed", "kind = \"one-to-one\"", &["fig2a", "fig2b", "figB8"]),
        ("ao", "kind = \"one-to-one\"", &["fig2c", "fig2d"]),
        ("ved", "kind = \"one-to-one\"", &["fig2e", "fig2f", "figB9"]),
        ("aed", "kind = \"reversed\"", &["fig2g"]),
        ("ao", "kind = \"escan\"\nmin_len = 6\nmax_len = 10", &["fig5b", "fig5c", "fig5d", "fig4a", "fig4b"]),
        ("aed", "kind = \"one-to-one\"\nmin_len = 3", &["figB2"]),
    ];
    for (i, (arch, task, figures)) in cases.iter().enumerate() {
        let cell = if figures.contains(&"figB2") { "lstm" } else { "gru" };
        let hidden = if *arch == "ao" { "" } else { "hidden = 10\n" };
        let text = format!(
            "[run]\nname = \"c{i}\"\n[task]\n{task}\n[model]\narch = \"{arch}\"\ncell = \"{cell}\"\n{hidden}[train]\nepochs = 1\nbatches_per_epoch = 4\nbatch_size = 16\neval_every = 4\n[analysis]\nsamples = 40\n"
        );
        let cfg = write_config(dir.path(), &format!("c{i}.toml"), &text);
        let o = seqdyn(dir.path(), &["train", "--config", &cfg]);
        assert!(o.status.success(), "{}", stderr(&o));
        for figure in *figures {
            let o = seqdyn(dir.path(), &["repro", "--config", &cfg, "--figure", figure]);
            assert!(o.status.success(), "{figure}: {}", stderr(&o));
            let bundle = dir.path().join(format!("runs/c{i}-seed0/repro/{figure}"));
            let names: Vec<_> = fs::read_dir(&bundle).unwrap().map(|e| e.unwrap().file_name()).collect();
            assert!(names.iter().any(|n| n.to_string_lossy().ends_with(".csv")), "{figure}: {names:?}");
            assert!(bundle.join("meta.json").exists());
        }
    }
}
