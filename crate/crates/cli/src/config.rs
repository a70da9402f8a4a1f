//! Flat `key = value` experiment configuration.
//!
//! Lines starting with `#` are comments. Every key has a default, unknown keys
//! are rejected, and [`ExperimentConfig::to_text`] writes back every key so a
//! persisted config fully describes a run.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use htr_adapt::data::{default_lexicon, AugmentConfig, ImagePipeline, SynthConfig};
use htr_adapt::meta::{MetaConfig, ProtocolConfig, Variant};
use htr_adapt::models::{Arch, ModelConfig, TrainConfig};
use htr_adapt::nn::Vocab;
use htr_adapt::writer_codes::{CodeKind, CodeTrainConfig};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Base,
    Finetune,
    Maml,
    MamlLlr,
    MetaHtr,
    CodeLearned,
    CodeHinge,
    CodeStyle,
    CodeZero,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Base,
        Method::Finetune,
        Method::Maml,
        Method::MamlLlr,
        Method::MetaHtr,
        Method::CodeLearned,
        Method::CodeHinge,
        Method::CodeStyle,
        Method::CodeZero,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Base => "base",
            Method::Finetune => "finetune",
            Method::Maml => "maml",
            Method::MamlLlr => "maml_llr",
            Method::MetaHtr => "metahtr",
            Method::CodeLearned => "code_learned",
            Method::CodeHinge => "code_hinge",
            Method::CodeStyle => "code_style",
            Method::CodeZero => "code_zero",
        }
    }

    pub fn variant(self) -> Option<Variant> {
        match self {
            Method::Maml => Some(Variant::Maml),
            Method::MamlLlr => Some(Variant::MamlLlr),
            Method::MetaHtr => Some(Variant::MetaHtr),
            _ => None,
        }
    }

    pub fn code_kind(self) -> Option<CodeKind> {
        match self {
            Method::CodeLearned => Some(CodeKind::Learned),
            Method::CodeHinge => Some(CodeKind::Hinge),
            Method::CodeStyle => Some(CodeKind::Style),
            Method::CodeZero => Some(CodeKind::Zero),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method {s:?}, expected one of {}", names(&Method::ALL)))
    }
}

fn names(ms: &[Method]) -> String {
    ms.iter().map(|m| m.name()).collect::<Vec<_>>().join(", ")
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataSpec {
    /// Empty means synthetic data.
    pub manifest: Option<PathBuf>,
    pub synth: SynthConfig,
    pub augment: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSpec {
    pub protocol: ProtocolConfig,
    pub finetune_steps: usize,
    pub finetune_lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CodeSpec {
    pub train: CodeTrainConfig,
    pub hidden: usize,
    pub clusters: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub method: Method,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
    /// Starting model; when set, base training is skipped.
    pub init_checkpoint: Option<PathBuf>,
    pub data: DataSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub meta: MetaConfig,
    pub meta_steps: usize,
    pub codes: CodeSpec,
    pub eval: EvalSpec,
}

/// Environment variable that replaces the `output` key.
pub const OUTPUT_ENV: &str = "HTR_ADAPT_OUTPUT";

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut model = ModelConfig::fphtr();
        model.max_seq_len = 12;
        ExperimentConfig {
            name: String::new(),
            method: Method::Base,
            seeds: vec![0, 1, 2, 3, 4],
            output: PathBuf::from("runs"),
            init_checkpoint: None,
            data: DataSpec {
                manifest: None,
                synth: SynthConfig {
                    train_writers: 20,
                    val_writers: 0,
                    test_writers: 5,
                    words_per_writer: 40,
                    lexicon: default_lexicon(),
                    seed: 0,
                },
                augment: true,
            },
            meta: MetaConfig::for_arch(model.arch),
            model,
            train: TrainConfig::default(),
            meta_steps: 100,
            codes: CodeSpec { train: CodeTrainConfig::default(), hidden: 64, clusters: 3 },
            eval: EvalSpec { protocol: ProtocolConfig::default(), finetune_steps: 3, finetune_lr: 1e-3 },
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T, CliError>
where
    T::Err: fmt::Display,
{
    v.parse::<T>().map_err(|e| CliError::Config(format!("{key} = {v:?}: {e}")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>, CliError>
where
    T::Err: fmt::Display,
{
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse(key, s)).collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn path_or_empty(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn arch_name(a: Arch) -> &'static str {
    match a {
        Arch::FPHTRLite => "fphtr",
        Arch::SARLite => "sar",
    }
}

impl ExperimentConfig {
    /// Parses a config file body on top of the defaults.
    pub fn from_text(text: &str) -> Result<Self, CliError> {
        let pairs = parse_pairs(text)?;
        let mut cfg = ExperimentConfig::default();
        // The arch decides the default inner rate, so it is applied first.
        if let Some((_, v)) = pairs.iter().find(|(k, _)| k == "model.arch") {
            cfg.set("model.arch", v)?;
        }
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<(), CliError> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("override {o:?} is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), CliError> {
        let syn = &mut self.data.synth;
        match key {
            "name" => self.name = v.to_string(),
            "method" => self.method = v.parse().map_err(CliError::Config)?,
            "seeds" => self.seeds = parse_list(key, v)?,
            "output" => self.output = PathBuf::from(v),
            "init_checkpoint" => self.init_checkpoint = (!v.is_empty()).then(|| PathBuf::from(v)),
            "data.manifest" => self.data.manifest = (!v.is_empty()).then(|| PathBuf::from(v)),
            "data.train_writers" => syn.train_writers = parse(key, v)?,
            "data.val_writers" => syn.val_writers = parse(key, v)?,
            "data.test_writers" => syn.test_writers = parse(key, v)?,
            "data.words_per_writer" => syn.words_per_writer = parse(key, v)?,
            "data.lexicon" => {
                syn.lexicon = if v.is_empty() { default_lexicon() } else { parse_list(key, v)? }
            }
            "data.seed" => syn.seed = parse(key, v)?,
            "data.augment" => self.data.augment = parse(key, v)?,
            "model.arch" => {
                let arch: Arch = v.parse().map_err(CliError::Config)?;
                if arch != self.model.arch {
                    let keep = self.model.clone();
                    self.model = if arch == Arch::FPHTRLite { ModelConfig::fphtr() } else { ModelConfig::sar() };
                    self.model.max_seq_len = keep.max_seq_len;
                    self.model.loss = keep.loss;
                    self.meta.inner_lr = MetaConfig::for_arch(arch).inner_lr;
                }
            }
            "model.conv_channels" => self.model.conv_channels = parse_list(key, v)?,
            "model.d_model" => self.model.d_model = parse(key, v)?,
            "model.attn_dim" => self.model.attn_dim = parse(key, v)?,
            "model.ff_dim" => self.model.ff_dim = parse(key, v)?,
            "model.decoder_layers" => self.model.decoder_layers = parse(key, v)?,
            "model.heads" => self.model.heads = parse(key, v)?,
            "model.dropout" => self.model.dropout = parse(key, v)?,
            "model.max_seq_len" => self.model.max_seq_len = parse(key, v)?,
            "model.vocab" => self.model.loss.vocab = Vocab::new(v).map_err(CliError::Config)?,
            "model.label_smoothing" => self.model.loss.label_smoothing = parse(key, v)?,
            "train.steps" => self.train.steps = parse(key, v)?,
            "train.batch_size" => self.train.batch_size = parse(key, v)?,
            "train.lr" => self.train.lr = parse(key, v)?,
            "train.max_grad_norm" => self.train.max_grad_norm = parse(key, v)?,
            "meta.steps" => self.meta_steps = parse(key, v)?,
            "meta.shots" => self.meta.shots = parse(key, v)?,
            "meta.ways" => self.meta.ways = parse(key, v)?,
            "meta.inner_steps" => self.meta.inner_steps = parse(key, v)?,
            "meta.inner_lr" => self.meta.inner_lr = parse(key, v)?,
            "meta.outer_lr" => self.meta.outer_lr = parse(key, v)?,
            "meta.max_grad_norm" => self.meta.max_grad_norm = parse(key, v)?,
            "meta.outer_dropout" => self.meta.outer_dropout = parse(key, v)?,
            "meta.iw_hidden" => self.meta.iw_hidden = parse(key, v)?,
            "meta.iw_proj" => self.meta.iw_proj = parse(key, v)?,
            "codes.steps" => self.codes.train.steps = parse(key, v)?,
            "codes.batch_size" => self.codes.train.batch_size = parse(key, v)?,
            "codes.lr" => self.codes.train.lr = parse(key, v)?,
            "codes.code_lr" => self.codes.train.code_lr = parse(key, v)?,
            "codes.new_code_steps" => self.codes.train.new_code_steps = parse(key, v)?,
            "codes.hidden" => self.codes.hidden = parse(key, v)?,
            "codes.clusters" => self.codes.clusters = parse(key, v)?,
            "eval.shots" => self.eval.protocol.shots = parse(key, v)?,
            "eval.runs" => self.eval.protocol.runs = parse(key, v)?,
            "eval.seed" => self.eval.protocol.seed = parse(key, v)?,
            "eval.decode_batch" => self.eval.protocol.decode_batch = parse(key, v)?,
            "eval.finetune_steps" => self.eval.finetune_steps = parse(key, v)?,
            "eval.finetune_lr" => self.eval.finetune_lr = parse(key, v)?,
            _ => return Err(CliError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Every key in a fixed order.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let s = &self.data.synth;
        let m = &self.model;
        let lexicon = if s.lexicon == default_lexicon() { String::new() } else { s.lexicon.join(",") };
        vec![
            ("name", self.name.clone()),
            ("method", self.method.to_string()),
            ("seeds", join(&self.seeds)),
            ("output", self.output.display().to_string()),
            ("init_checkpoint", path_or_empty(&self.init_checkpoint)),
            ("data.manifest", path_or_empty(&self.data.manifest)),
            ("data.train_writers", s.train_writers.to_string()),
            ("data.val_writers", s.val_writers.to_string()),
            ("data.test_writers", s.test_writers.to_string()),
            ("data.words_per_writer", s.words_per_writer.to_string()),
            ("data.lexicon", lexicon),
            ("data.seed", s.seed.to_string()),
            ("data.augment", self.data.augment.to_string()),
            ("model.arch", arch_name(m.arch).into()),
            ("model.conv_channels", join(&m.conv_channels)),
            ("model.d_model", m.d_model.to_string()),
            ("model.attn_dim", m.attn_dim.to_string()),
            ("model.ff_dim", m.ff_dim.to_string()),
            ("model.decoder_layers", m.decoder_layers.to_string()),
            ("model.heads", m.heads.to_string()),
            ("model.dropout", m.dropout.to_string()),
            ("model.max_seq_len", m.max_seq_len.to_string()),
            ("model.vocab", m.loss.vocab.chars()),
            ("model.label_smoothing", m.loss.label_smoothing.to_string()),
            ("train.steps", self.train.steps.to_string()),
            ("train.batch_size", self.train.batch_size.to_string()),
            ("train.lr", self.train.lr.to_string()),
            ("train.max_grad_norm", self.train.max_grad_norm.to_string()),
            ("meta.steps", self.meta_steps.to_string()),
            ("meta.shots", self.meta.shots.to_string()),
            ("meta.ways", self.meta.ways.to_string()),
            ("meta.inner_steps", self.meta.inner_steps.to_string()),
            ("meta.inner_lr", self.meta.inner_lr.to_string()),
            ("meta.outer_lr", self.meta.outer_lr.to_string()),
            ("meta.max_grad_norm", self.meta.max_grad_norm.to_string()),
            ("meta.outer_dropout", self.meta.outer_dropout.to_string()),
            ("meta.iw_hidden", self.meta.iw_hidden.to_string()),
            ("meta.iw_proj", self.meta.iw_proj.to_string()),
            ("codes.steps", self.codes.train.steps.to_string()),
            ("codes.batch_size", self.codes.train.batch_size.to_string()),
            ("codes.lr", self.codes.train.lr.to_string()),
            ("codes.code_lr", self.codes.train.code_lr.to_string()),
            ("codes.new_code_steps", self.codes.train.new_code_steps.to_string()),
            ("codes.hidden", self.codes.hidden.to_string()),
            ("codes.clusters", self.codes.clusters.to_string()),
            ("eval.shots", self.eval.protocol.shots.to_string()),
            ("eval.runs", self.eval.protocol.runs.to_string()),
            ("eval.seed", self.eval.protocol.seed.to_string()),
            ("eval.decode_batch", self.eval.protocol.decode_batch.to_string()),
            ("eval.finetune_steps", self.eval.finetune_steps.to_string()),
            ("eval.finetune_lr", self.eval.finetune_lr.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        self.pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Run name: `name` if set, otherwise the method.
    pub fn run_name(&self) -> String {
        if self.name.is_empty() {
            self.method.to_string()
        } else {
            self.name.clone()
        }
    }

    pub fn output_root(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.output.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.seeds.is_empty() {
            return Err(CliError::Config("seeds must list at least one seed".into()));
        }
        self.model.validate()?;
        let mut meta = self.meta.clone();
        if let Some(v) = self.method.variant() {
            meta.variant = v;
        }
        meta.validate()?;
        if self.train.batch_size == 0 || self.codes.train.batch_size == 0 {
            return Err(CliError::Config("batch sizes must be positive".into()));
        }
        if self.eval.protocol.shots == 0 || self.eval.protocol.runs == 0 {
            return Err(CliError::Config("eval.shots and eval.runs must be positive".into()));
        }
        if self.method.code_kind() == Some(CodeKind::Style) && self.codes.clusters == 0 {
            return Err(CliError::Config("codes.clusters must be positive".into()));
        }
        Ok(())
    }

    /// Meta settings with the variant taken from the method.
    pub fn meta_config(&self) -> MetaConfig {
        let mut m = self.meta.clone();
        if let Some(v) = self.method.variant() {
            m.variant = v;
        }
        m
    }

    pub fn pipeline(&self) -> Result<ImagePipeline, CliError> {
        Ok(ImagePipeline::new(AugmentConfig::default(), self.data.augment)?)
    }

    /// This config restricted to a single seed, as stored in a run directory.
    pub fn for_seed(&self, seed: u64) -> Self {
        ExperimentConfig { seeds: vec![seed], ..self.clone() }
    }
}

fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}
