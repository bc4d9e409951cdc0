//! Declarative experiment configuration, stored as TOML in the experiment
//! directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bpe::RECOMMENDED_MERGES;
use crate::corpus::{DEFAULT_BATCH_WORDS, DEFAULT_MAX_LEN, DEFAULT_VOCAB_LIMIT};
use crate::decode::{Averaging, DEFAULT_BEAM};
use crate::model::DEFAULT_LEXICON_EPSILON;
use crate::train::{AnnealConfig, OptimizerKind, TrainConfig, CLIP_NORM, PATIENCE};

/// Sentences between dev evaluations in the first run.
pub const DEFAULT_EVAL_INTERVAL: usize = 50_000;
pub const DEFAULT_LEXICON_ITERATIONS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub train_source: PathBuf,
    pub train_target: PathBuf,
    pub dev_source: PathBuf,
    pub dev_target: PathBuf,
    pub test_source: PathBuf,
    pub test_target: PathBuf,
    /// Training and dev pairs longer than this on either side are dropped.
    #[serde(default = "default_max_len")]
    pub max_len: usize,
}

fn default_max_len() -> usize {
    DEFAULT_MAX_LEN
}

impl DataConfig {
    /// `train.src`, `train.tgt`, `dev.src`, ... inside `dir`.
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            train_source: dir.join("train.src"),
            train_target: dir.join("train.tgt"),
            dev_source: dir.join("dev.src"),
            dev_target: dir.join("dev.tgt"),
            test_source: dir.join("test.src"),
            test_target: dir.join("test.tgt"),
            max_len: DEFAULT_MAX_LEN,
        }
    }

    pub fn paths(&self) -> [(&'static str, &Path); 6] {
        [
            ("train_source", &self.train_source),
            ("train_target", &self.train_target),
            ("dev_source", &self.dev_source),
            ("dev_target", &self.dev_target),
            ("test_source", &self.test_source),
            ("test_target", &self.test_target),
        ]
    }

    fn paths_mut(&mut self) -> [&mut PathBuf; 6] {
        [
            &mut self.train_source,
            &mut self.train_target,
            &mut self.dev_source,
            &mut self.dev_target,
            &mut self.test_source,
            &mut self.test_target,
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum VocabMode {
    FullWord { limit: usize },
    Bpe { merges: usize, map_singletons: bool },
}

impl Default for VocabMode {
    fn default() -> Self {
        Self::FullWord { limit: DEFAULT_VOCAB_LIMIT }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelDims {
    pub embed: usize,
    pub hidden: usize,
    pub attention: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            embed: 32,
            hidden: 64,
            attention: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub optimizer: OptimizerKind,
    pub rate: Option<f64>,
    /// 1 trains once to convergence; more runs anneal.
    pub max_runs: usize,
    pub patience: usize,
    pub eval_intervals: Vec<usize>,
    pub batch_words: usize,
    pub clip_norm: Option<f64>,
    pub max_evals_per_run: Option<usize>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Adam,
            rate: None,
            max_runs: 1,
            patience: PATIENCE,
            eval_intervals: vec![DEFAULT_EVAL_INTERVAL, DEFAULT_EVAL_INTERVAL / 2],
            batch_words: DEFAULT_BATCH_WORDS,
            clip_norm: Some(CLIP_NORM),
            max_evals_per_run: None,
        }
    }
}

impl TrainSettings {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            optimizer: self.optimizer,
            rate: self.rate,
            anneal: AnnealConfig {
                max_runs: self.max_runs,
                patience: self.patience,
                eval_intervals: self.eval_intervals.clone(),
            },
            batch_words: self.batch_words,
            clip_norm: self.clip_norm,
            max_evals_per_run: self.max_evals_per_run,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Extensions {
    pub dropout: f64,
    pub lexicon_bias: bool,
    pub lexicon_epsilon: f64,
    /// Adds up to this many extracted phrase pairs to the training data.
    pub bootstrap: Option<usize>,
    pub lexicon_iterations: usize,
    /// Dictionary entries below this probability are dropped.
    pub dictionary_min_prob: f64,
}

impl Default for Extensions {
    fn default() -> Self {
        Self {
            dropout: 0.0,
            lexicon_bias: false,
            lexicon_epsilon: DEFAULT_LEXICON_EPSILON,
            bootstrap: None,
            lexicon_iterations: DEFAULT_LEXICON_ITERATIONS,
            dictionary_min_prob: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeSettings {
    pub beam: usize,
    /// Fixed output limit; unset means twice the source length plus five.
    pub max_len: Option<usize>,
    pub unk_replace: bool,
    /// Seeds combined into the ensemble; unset means all seeds.
    pub ensemble: Option<Vec<u64>>,
    pub averaging: Averaging,
}

impl Default for DecodeSettings {
    fn default() -> Self {
        Self {
            beam: DEFAULT_BEAM,
            max_len: None,
            unk_replace: true,
            ensemble: None,
            averaging: Averaging::Probability,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seeds: Vec<u64>,
    pub data: DataConfig,
    #[serde(default)]
    pub vocab: VocabMode,
    #[serde(default)]
    pub model: ModelDims,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub extensions: Extensions,
    #[serde(default)]
    pub decode: DecodeSettings,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    /// Full-word vocabulary, plain Adam, dictionary unk replacement.
    Vanilla,
    /// Annealed Adam with two restarts, joint BPE and a seed ensemble.
    Recommended,
}

pub const DEFAULT_SEEDS: [u64; 3] = [1, 2, 3];

impl RunConfig {
    pub fn vanilla(data: DataConfig) -> Self {
        Self {
            seeds: DEFAULT_SEEDS.to_vec(),
            data,
            vocab: VocabMode::default(),
            model: ModelDims::default(),
            train: TrainSettings::default(),
            extensions: Extensions::default(),
            decode: DecodeSettings::default(),
        }
    }

    pub fn recommended(data: DataConfig) -> Self {
        let mut c = Self::vanilla(data);
        c.vocab = VocabMode::Bpe {
            merges: RECOMMENDED_MERGES,
            map_singletons: true,
        };
        c.train.max_runs = 3;
        c
    }

    pub fn preset(preset: Preset, data: DataConfig) -> Self {
        match preset {
            Preset::Vanilla => Self::vanilla(data),
            Preset::Recommended => Self::recommended(data),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// Parses `path` and resolves relative data paths against its directory.
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut c = Self::from_toml(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in c.data.paths_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(c)
    }

    /// Canonical serialization; its hash identifies the experiment.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn ensemble_seeds(&self) -> Vec<u64> {
        self.decode.ensemble.clone().unwrap_or_else(|| self.seeds.clone())
    }

    /// Checks values and that every data file exists.
    pub fn validate(&self) -> Result<(), String> {
        if self.seeds.is_empty() {
            return Err("seed list is empty".into());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err("seed list has duplicates".into());
        }
        for (name, p) in self.data.paths() {
            if !p.is_file() {
                return Err(format!("data.{name}: {} does not exist", p.display()));
            }
        }
        match self.vocab {
            VocabMode::FullWord { limit: 0 } => return Err("vocab.limit must be positive".into()),
            VocabMode::Bpe { merges: 0, .. } => return Err("vocab.merges must be positive".into()),
            _ => {}
        }
        let m = &self.model;
        if m.embed == 0 || m.hidden == 0 || m.attention == 0 {
            return Err("model dimensions must be positive".into());
        }
        self.train
            .train_config(0)
            .anneal
            .validate()
            .map_err(|e| format!("train: {e}"))?;
        if self.train.rate.is_some_and(|r| !(r > 0.0)) {
            return Err("train.rate must be positive".into());
        }
        if self.train.batch_words == 0 {
            return Err("train.batch_words must be positive".into());
        }
        let e = &self.extensions;
        if !(0.0..1.0).contains(&e.dropout) {
            return Err("extensions.dropout must be in [0, 1)".into());
        }
        if e.lexicon_bias && !(e.lexicon_epsilon > 0.0) {
            return Err("extensions.lexicon_epsilon must be positive".into());
        }
        if self.decode.beam == 0 {
            return Err("decode.beam must be positive".into());
        }
        if let Some(members) = &self.decode.ensemble {
            if let Some(s) = members.iter().find(|s| !self.seeds.contains(s)) {
                return Err(format!("decode.ensemble seed {s} is not in seeds"));
            }
        }
        Ok(())
    }

    pub(crate) fn needs_lexicon(&self) -> bool {
        self.decode.unk_replace || self.extensions.lexicon_bias || self.extensions.bootstrap.is_some()
    }
}
