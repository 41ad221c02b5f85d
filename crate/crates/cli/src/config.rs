//! Experiment configuration: flat `key = value` lines under `[section]`
//! headers, `#` comments, comma-separated lists.
//!
//! Every key has a default, so an empty file is a valid configuration.
//! [`ExperimentConfig::render`] writes every key back out and parses to the
//! same value.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use eldrop::inference::{InferenceConfig, InferenceMode};
use eldrop::network::{Activation, Architecture};
use eldrop::theory::{InputPath, ValidationConfig};
use eldrop::trainer::{MomentumKind, TrainConfig};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },

    #[error("{0}")]
    Invalid(String),

    #[error("cannot read config {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Synth,
    Idx,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub source: Source,
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub test_per_class: usize,
    pub separation: f64,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    /// Training examples held out for validation.
    pub validation: usize,
    /// Governs synthetic generation and the validation split, not the model.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub output: Activation,
    pub input_keep: f64,
    pub hidden_keep: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryConfig {
    pub mc_samples: usize,
    pub path: InputPath,
    pub nu: f64,
    /// Test examples used by `gap`; 0 means all of them.
    pub examples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataConfig,
    pub network: NetworkConfig,
    /// `seed` here is ignored; [`ExperimentConfig::train_config`] fills it in.
    pub train: TrainConfig,
    pub inference: InferenceConfig,
    pub theory: TheoryConfig,
    pub lambdas: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            out: PathBuf::from("runs/default"),
            data: DataConfig {
                source: Source::Synth,
                classes: 4,
                dim: 16,
                per_class: 500,
                test_per_class: 250,
                separation: 2.0,
                train_images: None,
                train_labels: None,
                test_images: None,
                test_labels: None,
                validation: 0,
                seed: 0,
            },
            network: NetworkConfig {
                hidden: vec![64, 64],
                activation: Activation::Relu,
                output: Activation::Softmax,
                input_keep: 0.2,
                hidden_keep: 0.5,
            },
            train: TrainConfig::default(),
            inference: InferenceConfig::default(),
            theory: TheoryConfig {
                mc_samples: 100,
                path: InputPath::Deterministic,
                nu: 0.05,
                examples: 500,
            },
            lambdas: vec![0.0, 0.5, 1.0, 2.0, 5.0, 10.0],
        }
    }
}

fn parse<T: FromStr>(value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| e.to_string())
}

fn parse_optional<T: FromStr>(value: &str) -> Result<Option<T>, String>
where
    T::Err: std::fmt::Display,
{
    if value.eq_ignore_ascii_case("none") {
        Ok(None)
    } else {
        parse(value).map(Some)
    }
}

fn parse_list<T: FromStr>(value: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(v.trim())).collect()
}

fn parse_bool(value: &str) -> Result<bool, String> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(format!("expected true or false, got `{other}`")),
    }
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
}

fn optional<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), |v| v.to_string())
}

fn path_name(p: InputPath) -> &'static str {
    match p {
        InputPath::Deterministic => "deterministic",
        InputPath::Stochastic => "stochastic",
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ExperimentConfig::default();
        let mut section: Option<String> = None;
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |message: String| ConfigError::Syntax { line, message };
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| err(format!("unterminated section header `{content}`")))?
                    .trim();
                if !["run", "data", "network", "train", "inference", "theory", "sweep"].contains(&name) {
                    return Err(err(format!("unknown section `{name}`")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{content}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let sec = section.as_deref().ok_or_else(|| err(format!("`{key}` appears before any section header")))?;
            if !seen.insert(format!("{sec}.{key}")) {
                return Err(err(format!("duplicate key `{sec}.{key}`")));
            }
            cfg.set(sec, key, value)
                .map_err(|m| err(format!("{sec}.{key}: {m}")))?;
        }
        cfg.check()?;
        Ok(cfg)
    }

    fn set(&mut self, section: &str, key: &str, v: &str) -> Result<(), String> {
        let d = &mut self.data;
        let n = &mut self.network;
        let t = &mut self.train;
        match (section, key) {
            ("run", "seed") => self.seed = parse(v)?,
            ("run", "out") => self.out = PathBuf::from(v),
            ("data", "source") => {
                d.source = match v {
                    "synth" => Source::Synth,
                    "idx" => Source::Idx,
                    other => return Err(format!("expected synth or idx, got `{other}`")),
                }
            }
            ("data", "classes") => d.classes = parse(v)?,
            ("data", "dim") => d.dim = parse(v)?,
            ("data", "per_class") => d.per_class = parse(v)?,
            ("data", "test_per_class") => d.test_per_class = parse(v)?,
            ("data", "separation") => d.separation = parse(v)?,
            ("data", "train_images") => d.train_images = Some(PathBuf::from(v)),
            ("data", "train_labels") => d.train_labels = Some(PathBuf::from(v)),
            ("data", "test_images") => d.test_images = Some(PathBuf::from(v)),
            ("data", "test_labels") => d.test_labels = Some(PathBuf::from(v)),
            ("data", "validation") => d.validation = parse(v)?,
            ("data", "seed") => d.seed = parse(v)?,
            ("network", "hidden") => n.hidden = parse_list(v)?,
            ("network", "activation") => n.activation = parse(v)?,
            ("network", "output") => n.output = parse(v)?,
            ("network", "input_keep") => n.input_keep = parse(v)?,
            ("network", "hidden_keep") => n.hidden_keep = parse(v)?,
            ("train", "lambda") => t.lambda = parse(v)?,
            ("train", "eta0") => t.eta0 = parse(v)?,
            ("train", "rho") => t.rho = parse(v)?,
            ("train", "momentum") => t.momentum = parse(v)?,
            ("train", "momentum_kind") => t.momentum_kind = parse::<MomentumKind>(v)?,
            ("train", "max_norm") => t.max_norm = parse_optional(v)?,
            ("train", "l2") => t.l2 = parse(v)?,
            ("train", "batch_size") => t.batch_size = parse(v)?,
            ("train", "epochs") => t.epochs = parse(v)?,
            ("train", "gap_every") => t.gap_every = parse_optional(v)?,
            ("train", "gap_mc_samples") => t.gap_mc_samples = parse(v)?,
            ("train", "keep_best") => t.keep_best = parse_bool(v)?,
            ("inference", "mode") => {
                self.inference.mode = match v {
                    "standard" => InferenceMode::Standard,
                    "monte_carlo" | "mc" => InferenceMode::MonteCarlo,
                    other => return Err(format!("expected standard or monte_carlo, got `{other}`")),
                }
            }
            ("inference", "mc_samples") => self.inference.mc_samples = parse(v)?,
            ("theory", "mc_samples") => self.theory.mc_samples = parse(v)?,
            ("theory", "path") => self.theory.path = parse(v)?,
            ("theory", "nu") => self.theory.nu = parse(v)?,
            ("theory", "examples") => self.theory.examples = parse(v)?,
            ("sweep", "lambdas") => self.lambdas = parse_list(v)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Cross-field checks that no single line can be blamed for.
    fn check(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.data.source == Source::Idx {
            for (name, p) in [
                ("train_images", &self.data.train_images),
                ("train_labels", &self.data.train_labels),
                ("test_images", &self.data.test_images),
                ("test_labels", &self.data.test_labels),
            ] {
                if p.is_none() {
                    return bad(format!("data.{name} is required when data.source = idx"));
                }
            }
        }
        let n = &self.network;
        for (name, p) in [("input_keep", n.input_keep), ("hidden_keep", n.hidden_keep)] {
            if !(p > 0.0 && p <= 1.0) {
                return bad(format!("network.{name} must lie in (0, 1], got {p}"));
            }
        }
        if n.hidden.contains(&0) {
            return bad("network.hidden sizes must be positive".into());
        }
        if n.activation == Activation::Softmax {
            return bad("network.activation cannot be softmax".into());
        }
        if self.inference.mode == InferenceMode::MonteCarlo && self.inference.mc_samples == 0 {
            return bad("inference.mc_samples must be positive".into());
        }
        if self.theory.mc_samples < 2 {
            return bad("theory.mc_samples must be at least 2".into());
        }
        if !(self.theory.nu > 0.0 && self.theory.nu < 1.0) {
            return bad(format!("theory.nu must lie in (0, 1), got {}", self.theory.nu));
        }
        if self.lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return bad("sweep.lambdas must be finite and nonnegative".into());
        }
        self.train.validate().map_err(|e| ConfigError::Invalid(format!("train: {e}")))
    }

    pub fn architecture(&self, input_dim: usize, output_dim: usize) -> Architecture {
        Architecture {
            input_dim,
            hidden: self.network.hidden.clone(),
            hidden_activation: self.network.activation,
            output_dim,
            output_activation: self.network.output,
            input_keep: self.network.input_keep,
            hidden_keep: self.network.hidden_keep,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn inference_config(&self) -> InferenceConfig {
        InferenceConfig {
            seed: self.seed,
            ..self.inference
        }
    }

    pub fn validation_config(&self) -> ValidationConfig {
        ValidationConfig {
            mc_samples: self.theory.mc_samples,
            seed: self.seed,
            path: self.theory.path,
            nu: self.theory.nu,
        }
    }

    /// Every key with its resolved value.
    pub fn render(&self) -> String {
        let d = &self.data;
        let n = &self.network;
        let t = &self.train;
        let mut s = String::new();
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let _ = writeln!(s, "[run]\nseed = {}\nout = {}\n", self.seed, self.out.display());
        let _ = writeln!(
            s,
            "[data]\nsource = {}\nclasses = {}\ndim = {}\nper_class = {}\ntest_per_class = {}\nseparation = {}",
            match d.source {
                Source::Synth => "synth",
                Source::Idx => "idx",
            },
            d.classes,
            d.dim,
            d.per_class,
            d.test_per_class,
            d.separation
        );
        for (name, p) in [
            ("train_images", path(&d.train_images)),
            ("train_labels", path(&d.train_labels)),
            ("test_images", path(&d.test_images)),
            ("test_labels", path(&d.test_labels)),
        ] {
            if let Some(p) = p {
                let _ = writeln!(s, "{name} = {p}");
            }
        }
        let _ = writeln!(s, "validation = {}\nseed = {}\n", d.validation, d.seed);
        let _ = writeln!(
            s,
            "[network]\nhidden = {}\nactivation = {}\noutput = {}\ninput_keep = {}\nhidden_keep = {}\n",
            join(&n.hidden),
            n.activation,
            n.output,
            n.input_keep,
            n.hidden_keep
        );
        let _ = writeln!(
            s,
            "[train]\nlambda = {}\neta0 = {}\nrho = {}\nmomentum = {}\nmomentum_kind = {}\nmax_norm = {}\nl2 = {}\n\
             batch_size = {}\nepochs = {}\ngap_every = {}\ngap_mc_samples = {}\nkeep_best = {}\n",
            t.lambda,
            t.eta0,
            t.rho,
            t.momentum,
            t.momentum_kind,
            optional(&t.max_norm),
            t.l2,
            t.batch_size,
            t.epochs,
            optional(&t.gap_every),
            t.gap_mc_samples,
            t.keep_best
        );
        let _ = writeln!(
            s,
            "[inference]\nmode = {}\nmc_samples = {}\n",
            match self.inference.mode {
                InferenceMode::Standard => "standard",
                InferenceMode::MonteCarlo => "monte_carlo",
            },
            self.inference.mc_samples
        );
        let _ = writeln!(
            s,
            "[theory]\nmc_samples = {}\npath = {}\nnu = {}\nexamples = {}\n",
            self.theory.mc_samples,
            path_name(self.theory.path),
            self.theory.nu,
            self.theory.examples
        );
        let _ = writeln!(s, "[sweep]\nlambdas = {}", join(&self.lambdas));
        s
    }
}
