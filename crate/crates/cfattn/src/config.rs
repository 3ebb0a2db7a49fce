//! Run configuration: defaults, a `key = value` file format, flag overrides
//! and a stable hash.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use cfattn_core::corpus::SynthSpec;
use cfattn_core::intervention::{InterventionMethod, KeepMaxMode};
use cfattn_core::optim::AdamConfig;
use cfattn_core::seq2seq::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusSource {
    Synth(SynthSpec),
    Files { source: String, target: String },
}

/// Everything that determines a run. Defaults are desk-sized; full-scale
/// settings (dimension 500, vocabularies of 50000, 50000 steps) are reachable
/// through the same keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub corpus: CorpusSource,
    /// Trailing fraction of the corpus held out for early stopping and analysis.
    pub heldout: f64,
    pub max_len: usize,
    pub source_vocab: usize,
    pub target_vocab: usize,
    pub embedding: usize,
    pub hidden: usize,
    pub layers: usize,
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
    pub clip: Option<f64>,
    pub patience: Option<usize>,
    pub eval_every: usize,
    /// Path, or `builtin:english` / `builtin:synthetic`. Unset picks the list
    /// matching the corpus.
    pub function_words: Option<String>,
    pub methods: Vec<InterventionMethod>,
    pub keep_max_mode: KeepMaxMode,
    pub min_frequency: usize,
    /// Where artifacts go. Not part of the hash, so moving a run elsewhere
    /// does not change its identity.
    #[serde(skip, default = "default_out_dir")]
    pub out_dir: String,
}

fn default_out_dir() -> String {
    String::from("out")
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            seed: 1,
            corpus: CorpusSource::Synth(SynthSpec::default()),
            heldout: 0.1,
            max_len: 50,
            source_vocab: 1000,
            target_vocab: 1000,
            embedding: 64,
            hidden: 64,
            layers: 2,
            lr: train.adam.lr,
            steps: train.steps,
            batch: train.batch,
            clip: train.clip,
            patience: train.patience,
            eval_every: train.eval_every,
            function_words: None,
            methods: InterventionMethod::ALL.to_vec(),
            keep_max_mode: KeepMaxMode::default(),
            min_frequency: 20,
            out_dir: default_out_dir(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse {value:?}")))
}

fn positive(key: &str, value: &str) -> Result<usize> {
    let n: usize = parse(key, value)?;
    if n == 0 {
        return Err(Error::config(key, "must be positive"));
    }
    Ok(n)
}

/// `none`, `off` and `0` disable an optional setting.
fn optional<T: FromStr + PartialEq + Default>(key: &str, value: &str) -> Result<Option<T>> {
    match value.trim() {
        "none" | "off" => Ok(None),
        v => {
            let x: T = parse(key, v)?;
            Ok((x != T::default()).then_some(x))
        }
    }
}

pub fn parse_methods(value: &str) -> Result<Vec<InterventionMethod>> {
    if value.trim().eq_ignore_ascii_case("all") {
        return Ok(InterventionMethod::ALL.to_vec());
    }
    let mut out = Vec::new();
    for part in value.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let m: InterventionMethod = part
            .parse()
            .map_err(|e| Error::config("methods", format!("{e}")))?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(Error::config("methods", "no methods given"));
    }
    Ok(out)
}

impl RunConfig {
    /// Sets one key. Unknown keys and unparsable values are configuration
    /// errors that name the key.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        match key {
            "seed" => self.seed = parse(key, value)?,
            "synth.pairs" | "synth.content_vocab" | "synth.seed" => {
                let mut spec = match &self.corpus {
                    CorpusSource::Synth(s) => *s,
                    CorpusSource::Files { .. } => SynthSpec::default(),
                };
                match key {
                    "synth.pairs" => spec.pairs = positive(key, value)?,
                    "synth.content_vocab" => spec.content_vocab = positive(key, value)?,
                    _ => spec.seed = parse(key, value)?,
                }
                self.corpus = CorpusSource::Synth(spec);
            }
            "source" | "target" => {
                let (mut source, mut target) = match &self.corpus {
                    CorpusSource::Files { source, target } => (source.clone(), target.clone()),
                    CorpusSource::Synth(_) => (String::new(), String::new()),
                };
                if key == "source" {
                    source = value.trim().to_string();
                } else {
                    target = value.trim().to_string();
                }
                self.corpus = CorpusSource::Files { source, target };
            }
            "heldout" => {
                let f: f64 = parse(key, value)?;
                if !(0.0..1.0).contains(&f) {
                    return Err(Error::config(key, "must be in [0, 1)"));
                }
                self.heldout = f;
            }
            "max_len" => self.max_len = positive(key, value)?,
            "source_vocab" => self.source_vocab = positive(key, value)?,
            "target_vocab" => self.target_vocab = positive(key, value)?,
            "embedding" => self.embedding = positive(key, value)?,
            "hidden" => self.hidden = positive(key, value)?,
            "dim" => {
                self.hidden = positive(key, value)?;
                self.embedding = self.hidden;
            }
            "layers" => self.layers = positive(key, value)?,
            "lr" => {
                let lr: f64 = parse(key, value)?;
                if !(lr >= 0.0 && lr.is_finite()) {
                    return Err(Error::config(key, "must be a non-negative number"));
                }
                self.lr = lr;
            }
            "steps" => self.steps = positive(key, value)?,
            "batch" => self.batch = positive(key, value)?,
            "clip" => {
                let clip: Option<f64> = optional(key, value)?;
                if clip.is_some_and(|c| !(c > 0.0 && c.is_finite())) {
                    return Err(Error::config(key, "must be positive"));
                }
                self.clip = clip;
            }
            "patience" => self.patience = optional(key, value)?,
            "eval_every" => self.eval_every = positive(key, value)?,
            "function_words" => {
                let v = value.trim();
                self.function_words = (!v.is_empty()).then(|| v.to_string());
            }
            "methods" => self.methods = parse_methods(value)?,
            "keep_max_mode" => {
                self.keep_max_mode = value
                    .trim()
                    .parse()
                    .map_err(|_| Error::config(key, "expected `literal` or `normalized`"))?
            }
            "min_frequency" => self.min_frequency = parse(key, value)?,
            "out_dir" => self.out_dir = value.trim().to_string(),
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Applies a `key = value` text. `#` starts a comment line; a bare
    /// `[synth]` header prefixes the following keys with `synth.`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(line, format!("line {}: expected key = value", n + 1))
            })?;
            let key = key.trim();
            let full = if section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            self.apply(&full, value.trim().trim_matches('"'))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    /// Applies `key=value` pairs given on the command line.
    pub fn apply_pairs<S: AsRef<str>>(&mut self, prefix: &str, pairs: &[S]) -> Result<()> {
        for pair in pairs {
            let pair = pair.as_ref();
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| Error::config(pair, "expected key=value"))?;
            let key = if prefix.is_empty() || key.starts_with(prefix) {
                key.to_string()
            } else {
                format!("{prefix}{key}")
            };
            self.apply(&key, value)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if let CorpusSource::Files { source, target } = &self.corpus {
            if source.is_empty() || target.is_empty() {
                return Err(Error::config(
                    if source.is_empty() {
                        "source"
                    } else {
                        "target"
                    },
                    "both source and target paths are required",
                ));
            }
        }
        self.train_config()
            .validate()
            .map_err(|e| Error::config("train", e.to_string()))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            adam: AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            },
            steps: self.steps,
            batch: self.batch,
            seed: self.seed,
            clip: self.clip,
            patience: self.patience,
            eval_every: self.eval_every,
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// The configuration with every analysis-only key reset, for comparing
    /// what a checkpoint was trained with.
    pub fn model_part(&self) -> RunConfig {
        let d = RunConfig::default();
        RunConfig {
            function_words: d.function_words,
            methods: d.methods,
            keep_max_mode: d.keep_max_mode,
            min_frequency: d.min_frequency,
            out_dir: d.out_dir,
            ..self.clone()
        }
    }

    /// Top-level keys whose values differ between the model parts of two
    /// configurations.
    pub fn model_differences(&self, other: &RunConfig) -> Vec<String> {
        let a = serde_json::to_value(self.model_part()).expect("config serializes");
        let b = serde_json::to_value(other.model_part()).expect("config serializes");
        let (Some(a), Some(b)) = (a.as_object(), b.as_object()) else {
            return Vec::new();
        };
        a.iter()
            .filter(|(k, v)| b.get(*k) != Some(*v))
            .map(|(k, _)| k.clone())
            .collect()
    }

    /// The configuration as a `key = value` file that [`RunConfig::apply_text`]
    /// reads back.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<String>| v.unwrap_or_else(|| "none".into());
        let _ = writeln!(s, "seed = {}", self.seed);
        match &self.corpus {
            CorpusSource::Synth(spec) => {
                let _ = writeln!(s, "synth.pairs = {}", spec.pairs);
                let _ = writeln!(s, "synth.content_vocab = {}", spec.content_vocab);
                let _ = writeln!(s, "synth.seed = {}", spec.seed);
            }
            CorpusSource::Files { source, target } => {
                let _ = writeln!(s, "source = {source}");
                let _ = writeln!(s, "target = {target}");
            }
        }
        let _ = writeln!(s, "heldout = {}", self.heldout);
        let _ = writeln!(s, "max_len = {}", self.max_len);
        let _ = writeln!(s, "source_vocab = {}", self.source_vocab);
        let _ = writeln!(s, "target_vocab = {}", self.target_vocab);
        let _ = writeln!(s, "embedding = {}", self.embedding);
        let _ = writeln!(s, "hidden = {}", self.hidden);
        let _ = writeln!(s, "layers = {}", self.layers);
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "steps = {}", self.steps);
        let _ = writeln!(s, "batch = {}", self.batch);
        let _ = writeln!(s, "clip = {}", opt(self.clip.map(|c| c.to_string())));
        let _ = writeln!(
            s,
            "patience = {}",
            opt(self.patience.map(|p| p.to_string()))
        );
        let _ = writeln!(s, "eval_every = {}", self.eval_every);
        if let Some(fw) = &self.function_words {
            let _ = writeln!(s, "function_words = {fw}");
        }
        let methods: Vec<&str> = self.methods.iter().map(|m| m.name()).collect();
        let _ = writeln!(s, "methods = {}", methods.join(","));
        let mode = match self.keep_max_mode {
            KeepMaxMode::Literal => "literal",
            KeepMaxMode::Normalized => "normalized",
        };
        let _ = writeln!(s, "keep_max_mode = {mode}");
        let _ = writeln!(s, "min_frequency = {}", self.min_frequency);
        s
    }
}
