//! The subcommands as library functions.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use htr_adapt::autodiff::Tensor;
use htr_adapt::data::{generate_synthetic_dataset, load_corpus, write_manifest, Dataset, GrayImage, Split};
use htr_adapt::eval::{
    cer_wer, export_layer_lrs, render_paired, render_report, render_summaries, summarize, EvalReport, PairedReport,
};
use htr_adapt::meta::{
    batch_of, episode_rng, evaluate_conditions, load_meta, sample_episode, save_meta, Adaptation, EpisodeData,
    EpisodeMode, EpisodeSampler, MetaLearner,
};
use htr_adapt::models::{
    build_model, count_parameters, load_model, save_model, stack_images, train_step, ForwardCtx, Model,
};
use htr_adapt::optim::Adam;
use htr_adapt::writer_codes::{
    evaluate_codes, init_new_writer_code, load_codebook, sample_writer_batch, save_codebook, train_codes,
    writer_batch, CodeKind, Codebook, INIT_SIGMA,
};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Method};
use crate::error::CliError;

pub const CONFIG_FILE: &str = "config.txt";
pub const MODEL_FILE: &str = "model.json";
pub const META_FILE: &str = "meta.json";
pub const CODES_FILE: &str = "codebook.json";
pub const LOG_FILE: &str = "train_log.csv";

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset, CliError> {
    let ds = match &cfg.data.manifest {
        Some(p) => load_corpus(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?,
        None => generate_synthetic_dataset(&cfg.data.synth)?,
    };
    ds.validate_disjoint()?;
    Ok(ds)
}

pub fn run_dir(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    cfg.output_root().join(cfg.run_name()).join(format!("seed{seed}"))
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const BASE_STREAM: u64 = 1;
const META_STREAM: u64 = 2;
const SAMPLER_STREAM: u64 = 3;
const CODE_STREAM: u64 = 4;

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub dir: PathBuf,
    /// `(stage, step, loss)`
    pub log: Vec<(String, usize, f64)>,
    pub checksum: u64,
}

fn check_model_config(model: &Model, cfg: &ExperimentConfig, what: &Path) -> Result<(), CliError> {
    if model.config != cfg.model {
        return Err(CliError::Config(format!(
            "CheckpointMismatch: {} holds a {:?} model that differs from the configured one",
            what.display(),
            model.config.arch
        )));
    }
    Ok(())
}

fn train_base(
    model: &mut Model,
    cfg: &ExperimentConfig,
    ds: &Dataset,
    seed: u64,
    log: &mut Vec<(String, usize, f64)>,
) -> Result<(), CliError> {
    let pipeline = cfg.pipeline()?;
    let pool: Vec<usize> = (0..ds.len()).filter(|&i| ds.samples[i].split == Split::Train).collect();
    if pool.is_empty() {
        return Err(CliError::Data("no training samples".into()));
    }
    let mut rng = rng_for(seed, BASE_STREAM);
    let mut opt = Adam::for_tensors(cfg.train.lr, &model.params);
    let bs = cfg.train.batch_size.min(pool.len());
    for step in 0..cfg.train.steps {
        let picks: Vec<usize> = sample(&mut rng, pool.len(), bs).into_iter().map(|i| pool[i]).collect();
        let batch = batch_of(&model.config, ds, &picks, &pipeline, Some(&mut rng))?;
        let loss = train_step(model, &batch, &mut opt, cfg.train.max_grad_norm, &mut rng)?;
        log.push(("base".into(), step, loss));
    }
    Ok(())
}

fn check_writer_sizes(ds: &Dataset, split: Split, need: usize) -> Result<(), CliError> {
    for w in ds.writers(split) {
        let have = ds.indices_of(&w).len();
        if have < need {
            return Err(CliError::Data(format!("InsufficientSamples: writer {w} has {have} samples, needs at least {need}")));
        }
    }
    Ok(())
}

/// Trains one seed and writes its run directory.
pub fn train_seed(cfg: &ExperimentConfig, seed: u64, ds: &Dataset) -> Result<TrainOutcome, CliError> {
    cfg.validate()?;
    if cfg.method.variant().is_some() {
        check_writer_sizes(ds, Split::Train, 2 * cfg.meta.shots)?;
    }
    let dir = run_dir(cfg, seed);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(CONFIG_FILE), cfg.for_seed(seed).to_text())?;
    let mut log = Vec::new();
    let mut model = match &cfg.init_checkpoint {
        Some(p) => {
            let (m, _) = load_model(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            check_model_config(&m, cfg, p)?;
            m
        }
        None => {
            let mut m = build_model(&cfg.model, seed)?;
            train_base(&mut m, cfg, ds, seed, &mut log)?;
            m
        }
    };
    let pipeline = cfg.pipeline()?;
    let mut checksum = model.checksum();
    if cfg.method.variant().is_some() {
        let meta = cfg.meta_config();
        let mut learner = MetaLearner::new(&model, meta.clone(), seed)?;
        let sampler_seed: u64 = rng_for(seed, SAMPLER_STREAM).random();
        let mut sampler = EpisodeSampler::new(ds, Split::Train, meta.shots, meta.ways, pipeline, sampler_seed)?;
        let mut rng = rng_for(seed, META_STREAM);
        for step in 0..cfg.meta_steps {
            let episodes = sampler.next(&model.config, ds)?;
            let r = learner.meta_train_step(&mut model, &episodes, &mut rng)?;
            log.push(("meta".into(), step, r.loss));
        }
        if cfg.meta_steps > 0 && learner.steps_taken == 0 {
            return Err(CliError::Numeric(format!("all {} meta steps were skipped", cfg.meta_steps)));
        }
        save_meta(&dir.join(META_FILE), &model, &learner, Some(&sampler.rng))?;
        checksum = model.checksum();
    } else if let Some(kind) = cfg.method.code_kind() {
        let mut book = Codebook::build(kind, &model, ds, Split::Train, cfg.codes.hidden, cfg.codes.clusters, seed)?;
        let writers = ds.writers(Split::Train);
        let bs = cfg.codes.train.batch_size;
        let mut rng = rng_for(seed, CODE_STREAM);
        let losses = train_codes(
            &model,
            &mut book,
            &cfg.codes.train,
            |_, r| sample_writer_batch(&model.config, ds, &writers, bs, &pipeline, r),
            &mut rng,
        )?;
        log.extend(losses.into_iter().enumerate().map(|(i, l)| ("codes".to_string(), i, l)));
        save_model(&model, None, &dir.join(MODEL_FILE))?;
        save_codebook(&book, &dir.join(CODES_FILE))?;
    } else {
        save_model(&model, None, &dir.join(MODEL_FILE))?;
    }
    let mut text = String::from("stage,step,loss\n");
    for (stage, step, loss) in &log {
        let _ = writeln!(text, "{stage},{step},{loss:e}");
    }
    fs::write(dir.join(LOG_FILE), text)?;
    Ok(TrainOutcome { dir, log, checksum })
}

/// Everything a run directory holds.
pub struct LoadedRun {
    pub config: ExperimentConfig,
    pub model: Model,
    pub learner: Option<MetaLearner>,
    pub codebook: Option<Codebook>,
}

pub fn load_run(dir: &Path) -> Result<LoadedRun, CliError> {
    let config = ExperimentConfig::load(&dir.join(CONFIG_FILE))?;
    let meta_path = dir.join(META_FILE);
    let (model, learner) = if config.method.variant().is_some() {
        let (m, l, _) = load_meta(&meta_path).map_err(|e| CliError::Config(format!("{}: {e}", meta_path.display())))?;
        (m, Some(l))
    } else {
        let p = dir.join(MODEL_FILE);
        let (m, _) = load_model(&p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
        (m, None)
    };
    check_model_config(&model, &config, dir)?;
    let codebook = match config.method.code_kind() {
        Some(_) => Some(load_codebook(&dir.join(CODES_FILE))?),
        None => None,
    };
    Ok(LoadedRun { config, model, learner, codebook })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMode {
    With,
    Without,
    Both,
}

#[derive(Clone, Debug)]
pub struct EvalOutcome {
    pub with: Option<EvalReport>,
    pub without: Option<EvalReport>,
    pub paired: Option<PairedReport>,
}

fn adapted_label(run: &LoadedRun) -> String {
    match (&run.learner, run.config.method) {
        (Some(l), _) => l.config.variant.label().to_string(),
        (None, Method::Finetune) => "finetune".into(),
        (None, m) => match m.code_kind() {
            Some(k) => format!("{} code", k.label()),
            None => "base".into(),
        },
    }
}

fn unadapted_label(run: &LoadedRun) -> String {
    match &run.learner {
        Some(l) => format!("{} (no adaptation)", l.config.variant.label()),
        None => "base".into(),
    }
}

fn write_report(dir: &Path, stem: &str, report: &EvalReport) -> Result<(), CliError> {
    fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(report)?)?;
    fs::write(dir.join(format!("{stem}.txt")), render_report(report))?;
    Ok(())
}

/// Runs the test-writer protocol on a trained run and writes its reports.
pub fn eval_run(dir: &Path, mode: EvalMode) -> Result<EvalOutcome, CliError> {
    let run = load_run(dir)?;
    let cfg = &run.config;
    let ds = load_dataset(cfg)?;
    check_writer_sizes(&ds, Split::Test, cfg.eval.protocol.shots + 1)?;
    let pipeline = cfg.pipeline()?;
    let pc = &cfg.eval.protocol;
    let want_with = mode != EvalMode::Without;
    let want_without = mode != EvalMode::With;
    if want_with && cfg.method == Method::Base {
        return Err(CliError::Config("method base has no adaptation step; use --without-adaptation".into()));
    }
    let (mut with, mut without) = (None, None);
    if let Some(book) = &run.codebook {
        if want_with {
            with = Some(evaluate_codes(&run.model, Some(book), &ds, Split::Test, &pipeline, &cfg.codes.train, pc)?);
        }
        if want_without {
            without = Some(evaluate_codes(&run.model, None, &ds, Split::Test, &pipeline, &cfg.codes.train, pc)?);
        }
    } else {
        let adapted = match &run.learner {
            Some(l) => Adaptation::Meta(l),
            None => Adaptation::Finetune { steps: cfg.eval.finetune_steps, lr: cfg.eval.finetune_lr },
        };
        let mut conds = Vec::new();
        if want_with {
            conds.push(adapted);
        }
        if want_without {
            conds.push(Adaptation::None);
        }
        let mut reports = evaluate_conditions(&run.model, &ds, Split::Test, &pipeline, &conds, pc)?.into_iter();
        if want_with {
            with = reports.next();
        }
        if want_without {
            without = reports.next();
        }
    }
    if let Some(r) = &mut with {
        r.condition = adapted_label(&run);
        write_report(dir, "eval_with", r)?;
    }
    if let Some(r) = &mut without {
        r.condition = unadapted_label(&run);
        write_report(dir, "eval_without", r)?;
    }
    let paired = match (&with, &without) {
        (Some(a), Some(b)) => {
            let p = PairedReport::pair(a.clone(), b.clone())?;
            fs::write(dir.join("paired.json"), serde_json::to_string_pretty(&p)?)?;
            fs::write(dir.join("paired.txt"), render_paired(&p))?;
            Some(p)
        }
        _ => None,
    };
    Ok(EvalOutcome { with, without, paired })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptOutcome {
    pub writer: String,
    pub method: String,
    pub support: Vec<String>,
    /// `(reference, prediction)` per query sample.
    pub query: Vec<(String, String)>,
    pub cer: f64,
    pub wer: f64,
}

/// Adapts to one test writer's `run_index`-th support set and decodes the
/// rest of their samples, using the same episode as the evaluation protocol.
pub fn adapt_writer(dir: &Path, writer: &str, run_index: usize) -> Result<AdaptOutcome, CliError> {
    let run = load_run(dir)?;
    let cfg = &run.config;
    let ds = load_dataset(cfg)?;
    let pipeline = cfg.pipeline()?;
    let pc = &cfg.eval.protocol;
    let writers = ds.writers(Split::Test);
    let wi = writers
        .iter()
        .position(|w| w == writer)
        .ok_or_else(|| CliError::Data(format!("{writer} is not a test writer")))?;
    let mut rng = episode_rng(pc.seed, wi, run_index);
    let ep = sample_episode(&ds, writer, pc.shots, EpisodeMode::Test, &mut rng)?;
    let data = EpisodeData::build(&run.model.config, &ds, ep, &pipeline, None)?;
    let mut params = run.model.params.clone();
    let mut deltas: Option<Vec<(Tensor, Tensor)>> = None;
    match (&run.learner, &run.codebook) {
        (Some(l), _) => params = Adaptation::Meta(l).params(&run.model, &data)?,
        (None, Some(book)) => {
            let code = if book.kind == CodeKind::Learned {
                let support = writer_batch(&run.model.config, &ds, &data.episode.support, &pipeline, None)?;
                let t = &cfg.codes.train;
                init_new_writer_code(&run.model, &book.adapter, &support, t.new_code_steps, t.code_lr, INIT_SIGMA, &mut rng)?
            } else {
                let raw: Vec<&GrayImage> = data.episode.support.iter().map(|&i| &ds.samples[i].image).collect();
                book.assign(writer, &raw)?
            };
            deltas = Some(book.adapter.deltas(&Tensor::new([code.dim()], code.values.clone()))?);
        }
        (None, None) if cfg.method == Method::Finetune => {
            params = Adaptation::Finetune { steps: cfg.eval.finetune_steps, lr: cfg.eval.finetune_lr }
                .params(&run.model, &data)?
        }
        (None, None) => {}
    }
    let images: Vec<GrayImage> = data.episode.query.iter().map(|&i| pipeline.eval_image(&ds.samples[i].image)).collect();
    let refs: Vec<&GrayImage> = images.iter().collect();
    let mut preds = Vec::new();
    for chunk in refs.chunks(pc.decode_batch.max(1)) {
        let mut ctx = ForwardCtx::eval().with_deltas(deltas.as_deref());
        preds.extend(run.model.decode(&params, &stack_images(chunk)?, &mut ctx)?);
    }
    let texts: Vec<String> = data.episode.query.iter().map(|&i| ds.samples[i].text.clone()).collect();
    let (cer, wer) = cer_wer(&preds, &texts)?;
    let out = AdaptOutcome {
        writer: writer.to_string(),
        method: cfg.method.to_string(),
        support: data.episode.support.iter().map(|&i| ds.samples[i].text.clone()).collect(),
        query: texts.into_iter().zip(preds).collect(),
        cer,
        wer,
    };
    fs::write(dir.join(format!("adapt_{writer}_run{run_index}.json")), serde_json::to_string_pretty(&out)?)?;
    Ok(out)
}

/// Renders the configured synthetic corpus to PNGs plus a manifest.
pub fn gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf, CliError> {
    let ds = generate_synthetic_dataset(&cfg.data.synth)?;
    Ok(write_manifest(&ds, out)?)
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamRow {
    pub run: String,
    pub module: String,
    pub count: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct CombinedReport {
    /// Per architecture, condition summaries over all runs.
    pub grid: Vec<(String, Vec<htr_adapt::eval::ConditionSummary>)>,
    pub paired: Vec<(String, f64, f64)>,
    pub parameters: Vec<ParamRow>,
    pub layer_lr_files: Vec<PathBuf>,
}

fn arch_label(model: &Model) -> String {
    format!("{:?}", model.config.arch).replace("Lite", "-lite")
}

fn read_report(path: &Path) -> Result<Option<EvalReport>, CliError> {
    if !path.exists() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_str(&fs::read_to_string(path)?)?))
}

/// Merges evaluated runs into condition × architecture tables, writes the
/// learned inner rates of meta runs and a parameter-count table.
pub fn report(dirs: &[PathBuf], out: &Path) -> Result<CombinedReport, CliError> {
    if dirs.is_empty() {
        return Err(CliError::Config("report needs at least one run directory".into()));
    }
    fs::create_dir_all(out)?;
    let mut by_arch: Vec<(String, Vec<EvalReport>)> = Vec::new();
    let mut paired = Vec::new();
    let mut parameters = Vec::new();
    let mut layer_lr_files = Vec::new();
    let mut seen_runs: Vec<(String, htr_adapt::models::ModelConfig)> = Vec::new();
    let mut vocab: Option<String> = None;
    for dir in dirs {
        let run = load_run(dir)?;
        let v = run.model.config.loss.vocab.chars();
        match &vocab {
            Some(first) if *first != v => {
                return Err(CliError::Config(format!("IncompatibleRuns: {} uses vocabulary {v:?}, expected {first:?}", dir.display())))
            }
            _ => vocab = Some(v),
        }
        let name = run.config.run_name();
        match seen_runs.iter().find(|(n, _)| *n == name) {
            Some((_, mc)) if *mc != run.model.config => {
                return Err(CliError::Config(format!("IncompatibleRuns: runs named {name} use different models")));
            }
            Some(_) => {}
            None => {
                seen_runs.push((name.clone(), run.model.config.clone()));
                let counts = count_parameters(&run.model);
                for (m, c) in &counts.modules {
                    parameters.push(ParamRow { run: name.clone(), module: m.clone(), count: *c });
                }
                if let Some(l) = &run.learner {
                    if let Some(r) = &l.rates {
                        parameters.push(ParamRow { run: name.clone(), module: "meta.rates".into(), count: r.len() });
                    }
                    if let Some(w) = &l.weights {
                        let n = w.params.iter().map(Tensor::numel).sum();
                        parameters.push(ParamRow { run: name.clone(), module: "meta.weight_net".into(), count: n });
                    }
                }
                if let Some(b) = &run.codebook {
                    let n = b.adapter.params.iter().map(Tensor::numel).sum();
                    parameters.push(ParamRow { run: name.clone(), module: "codes.adapter".into(), count: n });
                    if b.kind.trainable() {
                        parameters.push(ParamRow { run: name.clone(), module: "codes.values".into(), count: b.codes.len() * b.dim });
                    }
                }
            }
        }
        let arch = arch_label(&run.model);
        let slot = match by_arch.iter().position(|(a, _)| *a == arch) {
            Some(i) => i,
            None => {
                by_arch.push((arch.clone(), Vec::new()));
                by_arch.len() - 1
            }
        };
        for stem in ["eval_with", "eval_without"] {
            if let Some(r) = read_report(&dir.join(format!("{stem}.json")))? {
                by_arch[slot].1.push(r);
            }
        }
        let pp = dir.join("paired.json");
        if pp.exists() {
            let p: PairedReport = serde_json::from_str(&fs::read_to_string(&pp)?)?;
            paired.push((dir.display().to_string(), p.delta_wer, p.test.p));
        }
        if let Some(r) = run.learner.as_ref().and_then(|l| l.rates.as_ref()) {
            let seed = run.config.seeds.first().copied().unwrap_or(0);
            let path = out.join(format!("layer_lrs_{name}_seed{seed}.csv"));
            export_layer_lrs(run.model.names(), &r.values(), &path)?;
            layer_lr_files.push(path);
        }
    }
    if by_arch.iter().all(|(_, r)| r.is_empty()) {
        return Err(CliError::Config("no evaluated runs among the given directories".into()));
    }
    let grid: Vec<_> = by_arch.into_iter().map(|(a, rs)| (a, summarize(&rs))).collect();
    let combined = CombinedReport { grid, paired, parameters, layer_lr_files };
    fs::write(out.join("report.json"), serde_json::to_string_pretty(&combined)?)?;
    fs::write(out.join("report.txt"), render_combined(&combined))?;
    Ok(combined)
}

pub fn render_combined(c: &CombinedReport) -> String {
    let mut out = String::new();
    // Condition x architecture grid of mean test WER.
    let mut conditions: Vec<&str> = Vec::new();
    for (_, s) in &c.grid {
        for cs in s {
            if !conditions.contains(&cs.condition.as_str()) {
                conditions.push(&cs.condition);
            }
        }
    }
    let width = conditions.iter().map(|s| s.len()).max().unwrap_or(0).max(9);
    let _ = write!(out, "{:<width$}", "WER (%)");
    for (a, _) in &c.grid {
        let _ = write!(out, "  {a:>16}");
    }
    out.push('\n');
    for cond in &conditions {
        let _ = write!(out, "{cond:<width$}");
        for (_, s) in &c.grid {
            let cell = match s.iter().find(|x| x.condition == *cond) {
                Some(x) => format!("{:.2} ± {:.2}", 100.0 * x.wer.mean, 100.0 * x.wer.std),
                None => "-".into(),
            };
            let _ = write!(out, "  {cell:>16}");
        }
        out.push('\n');
    }
    for (a, s) in &c.grid {
        let _ = write!(out, "\n{a}\n{}", render_summaries(s));
    }
    if !c.paired.is_empty() {
        out.push_str("\nadaptation effect (WER without - with)\n");
        for (run, d, p) in &c.paired {
            let _ = writeln!(out, "{run}  delta {:+.2}  p {p:.4}", 100.0 * d);
        }
    }
    out.push_str("\ntrainable parameters\n");
    let mut runs: Vec<&str> = Vec::new();
    for r in &c.parameters {
        if !runs.contains(&r.run.as_str()) {
            runs.push(&r.run);
        }
    }
    for run in runs {
        let rows: Vec<&ParamRow> = c.parameters.iter().filter(|r| r.run == run).collect();
        for r in &rows {
            let _ = writeln!(out, "{run:<16} {:<18} {:>10}", r.module, r.count);
        }
        let _ = writeln!(out, "{run:<16} {:<18} {:>10}", "total", rows.iter().map(|r| r.count).sum::<usize>());
    }
    out
}
