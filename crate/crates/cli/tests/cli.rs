use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use htr_adapt::eval::{EvalReport, PairedReport};
use htr_adapt::meta::{load_meta, save_meta, LayerLearningRates};
use htr_adapt::models::load_model;
use htr_cli::{load_run, ExperimentConfig, Method, OUTPUT_ENV};

const TINY: &[&str] = &[
    "seeds=0",
    "data.train_writers=2",
    "data.test_writers=2",
    "data.words_per_writer=10",
    "data.augment=false",
    "train.steps=40",
    "meta.shots=2",
    "meta.ways=2",
    "meta.steps=2",
    "codes.steps=4",
    "codes.batch_size=4",
    "eval.shots=2",
    "eval.runs=2",
];

fn cli(root: &Path, args: &[&str], overrides: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_htr-adapt"));
    cmd.current_dir(root).env(OUTPUT_ENV, root.join("out")).env("RUST_LOG", "warn").args(args);
    for o in TINY.iter().chain(overrides) {
        cmd.args(["--set", o]);
    }
    cmd.output().expect("binary runs")
}

fn ok(out: Output) -> Output {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn run_path(root: &Path, name: &str, seed: u64) -> PathBuf {
    root.join("out").join(name).join(format!("seed{seed}"))
}

fn eval(root: &Path, dir: &Path, flag: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_htr-adapt"))
        .current_dir(root)
        .args(["eval", "--run", dir.to_str().unwrap(), flag])
        .output()
        .unwrap()
}

fn read_json<T: serde::de::DeserializeOwned>(p: &Path) -> T {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn config_file_then_flags() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.txt");
    fs::write(&path, "# comment\nmethod = maml\nseeds = 3, 4\nmeta.shots = 7\nmodel.arch = sar\n").unwrap();
    let mut cfg = ExperimentConfig::load(&path).unwrap();
    assert_eq!((cfg.method, cfg.seeds.clone(), cfg.meta.shots), (Method::Maml, vec![3, 4], 7));
    // SAR's default inner rate replaces FPHTR's.
    assert_eq!(cfg.meta.inner_lr, 1e-3);
    cfg.apply_overrides(&["meta.shots=9".into(), "method=metahtr".into()]).unwrap();
    assert_eq!((cfg.method, cfg.meta.shots), (Method::MetaHtr, 9));
    assert_eq!(ExperimentConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    assert!(ExperimentConfig::from_text("method maml").is_err());
    assert!(cfg.apply_overrides(&["meta.shots".into()]).is_err());
    assert_eq!(ExperimentConfig::default().seeds.len(), 5);
}

#[test]
fn exit_codes_follow_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let out = cli(root, &["train"], &["bogus.key=1"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("bogus.key"));
    let out = cli(root, &["train"], &["model.d_model=30"]);
    assert_eq!(out.status.code(), Some(2));
    let out = cli(root, &["train"], &["data.manifest=missing.tsv"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("missing.tsv"));
    let out = cli(root, &["train"], &["train.lr=1e200", "train.steps=5"]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
    let out = cli(root, &["train", "--config", "nope.txt"], &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn base_training_fits_two_writers() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    ok(cli(root, &["train"], &["train.steps=250", "data.words_per_writer=8"]));
    let run = run_path(root, "base", 0);
    let log = fs::read_to_string(run.join("train_log.csv")).unwrap();
    let losses: Vec<f64> = log.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(losses.len(), 250);
    let last = losses[losses.len() - 10..].iter().sum::<f64>() / 10.0;
    assert!(last < 0.1 * losses[0], "initial {} final {last}", losses[0]);
    for f in ["config.txt", "model.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let cfg = ExperimentConfig::load(&run.join("config.txt")).unwrap();
    assert_eq!(cfg.seeds, vec![0]);
    assert_eq!(cfg.train.steps, 250);
}

#[test]
fn output_root_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    ok(cli(root, &["train"], &["train.steps=2", "output=elsewhere", "name=envcheck"]));
    assert!(run_path(root, "envcheck", 0).join("model.json").exists());
    assert!(!root.join("elsewhere").exists());
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for root in [&a, &b] {
        fs::create_dir_all(root).unwrap();
        ok(cli(root, &["train"], &["method=maml"]));
        ok(eval(root, &run_path(root, "maml", 0), "--both"));
    }
    for f in ["config.txt", "meta.json", "train_log.csv", "eval_with.json", "eval_without.txt", "paired.json", "paired.txt"] {
        let (x, y) = (run_path(&a, "maml", 0).join(f), run_path(&b, "maml", 0).join(f));
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{f} differs");
    }
}

#[test]
fn meta_training_needs_two_k_samples_per_writer() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(dir.path(), &["train"], &["method=metahtr", "meta.shots=6"]);
    assert_eq!(out.status.code(), Some(3));
    let msg = stderr(&out);
    assert!(msg.contains("InsufficientSamples") && msg.contains("needs at least 12"), "{msg}");
    assert!(!run_path(dir.path(), "metahtr", 0).exists());
}

#[test]
fn zero_rate_checkpoint_has_no_adaptation_effect() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    ok(cli(root, &["train"], &["method=maml_llr", "meta.steps=0", "data.test_writers=3"]));
    let run = run_path(root, "maml_llr", 0);
    let (model, mut learner, rng) = load_meta(&run.join("meta.json")).unwrap();
    learner.rates = Some(LayerLearningRates::from_rates(&vec![0.0; model.params.len()]));
    save_meta(&run.join("meta.json"), &model, &learner, rng.as_ref()).unwrap();
    let out = ok(eval(root, &run, "--both"));
    let p: PairedReport = read_json(&run.join("paired.json"));
    assert_eq!(p.delta_wer, 0.0);
    assert_eq!(p.test.p, 1.0);
    assert_eq!(p.with_adaptation.rows.len(), 3);
    assert_eq!(p.with_adaptation.rows, p.without_adaptation.rows);
    let writers: Vec<&str> = p.with_adaptation.rows.iter().map(|r| r.writer.as_str()).collect();
    assert_eq!(writers, ["w002", "w003", "w004"]);
    // 10 words, 2 support: 8 queries per run.
    assert!(p.with_adaptation.rows.iter().all(|r| r.n_query == 8));
    assert!(String::from_utf8_lossy(&out.stdout).contains("Welch"));
    let with: EvalReport = read_json(&run.join("eval_with.json"));
    assert_eq!(with, p.with_adaptation);
}

#[test]
fn eval_modes_write_their_reports() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    ok(cli(root, &["train"], &["method=finetune"]));
    let run = run_path(root, "finetune", 0);
    ok(eval(root, &run, "--with-adaptation"));
    assert!(run.join("eval_with.json").exists() && !run.join("eval_without.json").exists());
    ok(eval(root, &run, "--without-adaptation"));
    assert!(!run.join("paired.json").exists());
    let with: EvalReport = read_json(&run.join("eval_with.json"));
    assert_eq!(with.condition, "finetune");
    assert_eq!(with.rows.len(), 2);

    ok(cli(root, &["train"], &["train.steps=2"]));
    let base = run_path(root, "base", 0);
    let out = eval(root, &base, "--both");
    assert_eq!(out.status.code(), Some(2));
    ok(eval(root, &base, "--without-adaptation"));
}

#[test]
fn adapt_decodes_the_rest_of_one_writer() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    ok(cli(root, &["train"], &["method=maml"]));
    let run = run_path(root, "maml", 0);
    let adapt = |writer: &str| {
        Command::new(env!("CARGO_BIN_EXE_htr-adapt"))
            .args(["adapt", "--run", run.to_str().unwrap(), "--writer", writer, "--run-index", "1"])
            .output()
            .unwrap()
    };
    let out = ok(adapt("w003"));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().filter(|l| l.contains('\t')).count(), 8);
    let saved: htr_cli::AdaptOutcome = read_json(&run.join("adapt_w003_run1.json"));
    assert_eq!((saved.support.len(), saved.query.len()), (2, 8));
    assert_eq!(adapt("w000").status.code(), Some(3));
}

#[test]
fn generated_manifest_trains_like_synthetic_data() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let out = ok(cli(root, &["gen-data", "--out", "corpus"], &[]));
    let manifest = root.join(String::from_utf8_lossy(&out.stdout).trim());
    assert!(manifest.exists());
    ok(cli(root, &["train"], &["name=synthetic", "train.steps=5"]));
    ok(cli(root, &["train"], &["name=manifest", "train.steps=5", &format!("data.manifest={}", manifest.display())]));
    let a = load_model(&run_path(root, "synthetic", 0).join("model.json")).unwrap().0;
    let b = load_model(&run_path(root, "manifest", 0).join("model.json")).unwrap().0;
    assert_eq!(a.checksum(), b.checksum());
}

#[test]
fn init_checkpoint_must_match_model() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    ok(cli(root, &["train"], &["train.steps=2"]));
    let ck = run_path(root, "base", 0).join("model.json");
    let ck = format!("init_checkpoint={}", ck.display());
    let out = cli(root, &["train"], &["method=maml", &ck, "model.d_model=16"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("CheckpointMismatch"));
    ok(cli(root, &["train"], &["method=maml", &ck]));
    let log = fs::read_to_string(run_path(root, "maml", 0).join("train_log.csv")).unwrap();
    assert!(log.lines().skip(1).all(|l| l.starts_with("meta,")));
}

#[test]
fn writer_code_methods_run_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    for m in ["code_hinge", "code_zero"] {
        ok(cli(root, &["train"], &[&format!("method={m}")]));
        let run = run_path(root, m, 0);
        assert!(run.join("codebook.json").exists());
        ok(eval(root, &run, "--both"));
        let p: PairedReport = read_json(&run.join("paired.json"));
        assert_eq!(p.with_adaptation.rows.len(), 2);
    }
}

fn sample_std(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

#[test]
fn report_over_one_and_five_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    ok(cli(root, &["train"], &["seeds=0,1,2,3,4", "train.steps=30", "data.train_writers=3"]));
    let runs: Vec<PathBuf> = (0..5).map(|s| run_path(root, "base", s)).collect();
    for r in &runs {
        ok(eval(root, r, "--without-adaptation"));
    }
    let reports: Vec<EvalReport> = runs.iter().map(|r| read_json(&r.join("eval_without.json"))).collect();

    let single = htr_cli::report(&runs[..1], &root.join("one")).unwrap();
    assert_eq!(single.grid.len(), 1);
    let s = &single.grid[0].1[0];
    assert_eq!((s.wer.n, s.wer.mean, s.wer.std, s.cer.mean), (1, reports[0].wer, 0.0, reports[0].cer));

    let out = Command::new(env!("CARGO_BIN_EXE_htr-adapt"))
        .current_dir(root)
        .args(["report", "--out", "five"])
        .args(runs.iter().map(|r| r.to_str().unwrap()))
        .output()
        .unwrap();
    ok(out);
    let combined: serde_json::Value = read_json(&root.join("five/report.json"));
    let summary = &combined["grid"][0][1][0];
    let wers: Vec<f64> = reports.iter().map(|r| r.wer).collect();
    assert_eq!(summary["wer"]["n"], 5);
    let std = summary["wer"]["std"].as_f64().unwrap();
    assert!((std - sample_std(&wers)).abs() < 1e-12, "{std} vs {wers:?}");
    let best = wers.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(summary["wer"]["best"].as_f64().unwrap(), best);
    assert!(fs::read_to_string(root.join("five/report.txt")).unwrap().contains(" ± "));
}

#[test]
fn parameter_table_sums_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    ok(cli(root, &["train"], &["method=maml_llr"]));
    ok(cli(root, &["train"], &["method=code_learned"]));
    let runs = [run_path(root, "maml_llr", 0), run_path(root, "code_learned", 0)];
    for r in &runs {
        ok(eval(root, r, "--both"));
    }
    let rep = htr_cli::report(&runs, &root.join("rep")).unwrap();
    for (r, name) in runs.iter().zip(["maml_llr", "code_learned"]) {
        let loaded = load_run(r).unwrap();
        let rows: Vec<_> = rep.parameters.iter().filter(|p| p.run == name).collect();
        let model_total: usize = loaded.model.params.iter().map(|t| t.numel()).sum();
        let model_rows: usize = rows.iter().filter(|p| !p.module.starts_with("meta.") && !p.module.starts_with("codes.")).map(|p| p.count).sum();
        assert_eq!(model_rows, model_total, "{name}");
        let extra: usize = match (&loaded.learner, &loaded.codebook) {
            (Some(l), _) => l.rates.as_ref().unwrap().len(),
            (None, Some(b)) => b.adapter.params.iter().map(|t| t.numel()).sum::<usize>() + b.codes.len() * b.dim,
            _ => unreachable!(),
        };
        let all: usize = rows.iter().map(|p| p.count).sum();
        assert_eq!(all, model_total + extra, "{name}");
        let text = fs::read_to_string(root.join("rep/report.txt")).unwrap();
        let total_line = text.lines().find(|l| l.starts_with(name) && l.contains(" total ")).unwrap();
        assert_eq!(total_line.split_whitespace().last().unwrap().parse::<usize>().unwrap(), all);
    }
    // Learned inner rates, one row per parameter tensor in model order.
    assert_eq!(rep.layer_lr_files.len(), 1);
    let csv = fs::read_to_string(&rep.layer_lr_files[0]).unwrap();
    let model = load_run(&runs[0]).unwrap().model;
    let names: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(names, model.names().iter().map(String::as_str).collect::<Vec<_>>());
}

#[test]
fn report_rejects_incompatible_runs() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    ok(cli(root, &["train"], &["train.steps=2", "name=x"]));
    ok(eval(root, &run_path(root, "x", 0), "--without-adaptation"));
    let first = root.join("first");
    fs::rename(run_path(root, "x", 0), &first).unwrap();
    ok(cli(root, &["train"], &["train.steps=2", "name=x", "model.d_model=16"]));
    ok(eval(root, &run_path(root, "x", 0), "--without-adaptation"));
    let out = Command::new(env!("CARGO_BIN_EXE_htr-adapt"))
        .current_dir(root)
        .args(["report", first.to_str().unwrap(), run_path(root, "x", 0).to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("IncompatibleRuns"));
}
