//! Flat `key = value` experiment configuration.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::analysis::DEFAULT_THRESHOLDS;
use crate::corpus::GeneratorSpec;
use crate::tinylm::{AttentionKind, ModelConfig, TrainHyper};
use crate::valuation::Method;
use crate::{Error, Result};

/// Which tasks the damped Hessian averages over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HessianExamples {
    Candidates,
    Pretrain,
    Anchors,
}

impl FromStr for HessianExamples {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "candidates" => Ok(HessianExamples::Candidates),
            "pretrain" => Ok(HessianExamples::Pretrain),
            "anchors" => Ok(HessianExamples::Anchors),
            other => Err(Error::Config(format!("unknown hessian_examples {other:?}"))),
        }
    }
}

impl std::fmt::Display for HessianExamples {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            HessianExamples::Candidates => "candidates",
            HessianExamples::Pretrain => "pretrain",
            HessianExamples::Anchors => "anchors",
        })
    }
}

/// Every knob of an experiment. A config file plus the code version fixes
/// every output byte.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Load the bundle from this directory instead of generating it.
    pub corpus_dir: Option<PathBuf>,
    pub generator: GeneratorSpec,

    pub d_model: usize,
    pub d_attn: usize,
    pub n_layers: usize,
    pub attention: AttentionKind,
    pub context_cap: usize,
    pub tied_output: bool,
    /// Initial parameters are uniform on `[-init_scale, init_scale]`.
    pub init_scale: f64,

    pub train_eta: f64,
    pub train_batch_size: usize,
    pub train_epochs: usize,

    pub methods: BTreeSet<Method>,
    /// Step size of the one-step fine-tune score.
    pub score_eta: f64,
    /// Hessian damping relative to the mean Hessian diagonal.
    pub damping: f64,
    pub hessian_examples: HessianExamples,

    pub bin_thresholds: Vec<f64>,
    pub select_method: Method,

    pub finetune_eta: f64,
    pub finetune_batch_size: usize,
    pub finetune_epochs: usize,

    /// Pairs and step size of the one-shot vs one-step check.
    pub verify_pairs: usize,
    pub verify_eta: f64,
    /// Depth of the linear-attention model trained for that check.
    pub verify_layers: usize,
    /// Training epochs and step size of that model.
    pub verify_epochs: usize,
    pub verify_train_eta: f64,

    pub seed: u64,
    pub out: PathBuf,
    /// Scoring threads; 0 uses every available core.
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            corpus_dir: None,
            generator: GeneratorSpec::default(),
            d_model: 8,
            d_attn: 8,
            n_layers: 2,
            attention: AttentionKind::Softmax,
            context_cap: 24,
            tied_output: false,
            init_scale: 0.24,
            train_eta: 0.05,
            train_batch_size: 16,
            train_epochs: 600,
            methods: [Method::Icp, Method::IcpSoft, Method::InflIp, Method::Ft].into_iter().collect(),
            score_eta: 1e-4,
            damping: 1e-3,
            hessian_examples: HessianExamples::Candidates,
            bin_thresholds: DEFAULT_THRESHOLDS.to_vec(),
            select_method: Method::Icp,
            finetune_eta: 1e-3,
            finetune_batch_size: 16,
            finetune_epochs: 3,
            verify_pairs: 200,
            verify_eta: 1e-4,
            verify_layers: 1,
            verify_epochs: 900,
            verify_train_eta: 0.02,
            seed: 7,
            out: PathBuf::from("out"),
            workers: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: Display>(items: impl IntoIterator<Item = T>) -> String {
    items.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let g = &mut self.generator;
        match key {
            "corpus_dir" => self.corpus_dir = (!value.is_empty()).then(|| PathBuf::from(value)),
            "family" => g.family = value.parse()?,
            "candidates" => g.candidates = parse(key, value)?,
            "anchors" => g.anchors = parse(key, value)?,
            "evals" => g.evals = parse(key, value)?,
            "pretrain" => g.pretrain = parse(key, value)?,
            "demo_fraction" => g.demo_fraction = parse(key, value)?,
            "alt_marker_fraction" => g.alt_marker_fraction = parse(key, value)?,
            "corruption_fraction" => g.corruption_fraction = parse(key, value)?,
            "symbols" => g.symbols = parse(key, value)?,
            "item_len" => g.item_len = parse(key, value)?,
            "d_model" => self.d_model = parse(key, value)?,
            "d_attn" => self.d_attn = parse(key, value)?,
            "n_layers" => self.n_layers = parse(key, value)?,
            "attention" => self.attention = value.parse()?,
            "context_cap" => self.context_cap = parse(key, value)?,
            "tied_output" => self.tied_output = parse_bool(key, value)?,
            "init_scale" => self.init_scale = parse(key, value)?,
            "train_eta" => self.train_eta = parse(key, value)?,
            "train_batch_size" => self.train_batch_size = parse(key, value)?,
            "train_epochs" => self.train_epochs = parse(key, value)?,
            "methods" => self.methods = parse_list(key, value)?.into_iter().collect(),
            "score_eta" => self.score_eta = parse(key, value)?,
            "damping" => self.damping = parse(key, value)?,
            "hessian_examples" => self.hessian_examples = value.parse()?,
            "bin_thresholds" => self.bin_thresholds = parse_list(key, value)?,
            "select_method" => self.select_method = value.parse()?,
            "finetune_eta" => self.finetune_eta = parse(key, value)?,
            "finetune_batch_size" => self.finetune_batch_size = parse(key, value)?,
            "finetune_epochs" => self.finetune_epochs = parse(key, value)?,
            "verify_pairs" => self.verify_pairs = parse(key, value)?,
            "verify_eta" => self.verify_eta = parse(key, value)?,
            "verify_layers" => self.verify_layers = parse(key, value)?,
            "verify_epochs" => self.verify_epochs = parse(key, value)?,
            "verify_train_eta" => self.verify_train_eta = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "workers" => self.workers = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Every key with its current value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let g = &self.generator;
        vec![
            ("corpus_dir", self.corpus_dir.as_ref().map(|p| p.display().to_string()).unwrap_or_default()),
            ("family", g.family.to_string()),
            ("candidates", g.candidates.to_string()),
            ("anchors", g.anchors.to_string()),
            ("evals", g.evals.to_string()),
            ("pretrain", g.pretrain.to_string()),
            ("demo_fraction", g.demo_fraction.to_string()),
            ("alt_marker_fraction", g.alt_marker_fraction.to_string()),
            ("corruption_fraction", g.corruption_fraction.to_string()),
            ("symbols", g.symbols.to_string()),
            ("item_len", g.item_len.to_string()),
            ("d_model", self.d_model.to_string()),
            ("d_attn", self.d_attn.to_string()),
            ("n_layers", self.n_layers.to_string()),
            ("attention", self.attention.to_string()),
            ("context_cap", self.context_cap.to_string()),
            ("tied_output", self.tied_output.to_string()),
            ("init_scale", self.init_scale.to_string()),
            ("train_eta", self.train_eta.to_string()),
            ("train_batch_size", self.train_batch_size.to_string()),
            ("train_epochs", self.train_epochs.to_string()),
            ("methods", join(&self.methods)),
            ("score_eta", self.score_eta.to_string()),
            ("damping", self.damping.to_string()),
            ("hessian_examples", self.hessian_examples.to_string()),
            ("bin_thresholds", join(&self.bin_thresholds)),
            ("select_method", self.select_method.to_string()),
            ("finetune_eta", self.finetune_eta.to_string()),
            ("finetune_batch_size", self.finetune_batch_size.to_string()),
            ("finetune_epochs", self.finetune_epochs.to_string()),
            ("verify_pairs", self.verify_pairs.to_string()),
            ("verify_eta", self.verify_eta.to_string()),
            ("verify_layers", self.verify_layers.to_string()),
            ("verify_epochs", self.verify_epochs.to_string()),
            ("verify_train_eta", self.verify_train_eta.to_string()),
            ("seed", self.seed.to_string()),
            ("out", self.out.display().to_string()),
            ("workers", self.workers.to_string()),
        ]
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment;
    /// unknown and repeated keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |msg: String| Error::Config(format!("line {}: {msg}", i + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected `key = value`, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(at(format!("key {key:?} given twice")));
            }
            cfg.set(key, value).map_err(|e| at(e.to_string()))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from(
            "# icp-lab experiment config\n\
             # The reference setup fine-tunes a 1B-parameter model with learning rate 2e-7,\n\
             # batch size 64, for 3 epochs; finetune_* below are rescaled for the toy model.\n",
        );
        for (k, v) in self.entries() {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("train_eta", self.train_eta),
            ("score_eta", self.score_eta),
            ("finetune_eta", self.finetune_eta),
            ("verify_eta", self.verify_eta),
            ("verify_train_eta", self.verify_train_eta),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return Err(Error::Config(format!("init_scale must be non-negative, got {}", self.init_scale)));
        }
        if !(self.damping.is_finite() && self.damping > 0.0) {
            return Err(Error::Config(format!("damping must be positive, got {}", self.damping)));
        }
        for (name, v) in [
            ("train_batch_size", self.train_batch_size),
            ("finetune_batch_size", self.finetune_batch_size),
            ("verify_pairs", self.verify_pairs),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.methods.is_empty() {
            return Err(Error::Config("methods must name at least one scoring method".into()));
        }
        crate::analysis::bin_scores(&["probe".to_string()], &[0.0], &self.bin_thresholds)?;
        self.model_config(2).validate()?;
        self.verify_model_config(2).validate()?;
        Ok(())
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            d_model: self.d_model,
            d_attn: self.d_attn,
            n_layers: self.n_layers,
            attention: self.attention,
            context_cap: self.context_cap,
            tied_output: self.tied_output,
            isolate_demonstration: false,
        }
    }

    /// Linear-attention model for the one-shot vs one-step check.
    pub fn verify_model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            attention: AttentionKind::Linear,
            n_layers: self.verify_layers,
            ..self.model_config(vocab_size)
        }
    }

    pub fn train_hyper(&self) -> TrainHyper {
        TrainHyper {
            eta: self.train_eta,
            batch_size: self.train_batch_size,
            epochs: self.train_epochs,
            seed: self.seed,
        }
    }

    /// Training of the linear-attention model behind the one-shot vs
    /// one-step check.
    pub fn verify_train_hyper(&self) -> TrainHyper {
        TrainHyper {
            eta: self.verify_train_eta,
            epochs: self.verify_epochs,
            ..self.train_hyper()
        }
    }

    pub fn finetune_hyper(&self) -> TrainHyper {
        TrainHyper {
            eta: self.finetune_eta,
            batch_size: self.finetune_batch_size,
            epochs: self.finetune_epochs,
            seed: self.seed,
        }
    }

    pub fn generator_spec(&self) -> GeneratorSpec {
        GeneratorSpec {
            seed: self.seed,
            ..self.generator.clone()
        }
    }
}
