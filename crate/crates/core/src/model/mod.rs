//! Attentional encoder-decoder: a bi-directional LSTM encoder, MLP attention
//! queried with the previous decoder state, and an LSTM decoder whose
//! output layer sees `[decoder state; context]`.
//!
//! Two routes compute the same function. [`Model::encode`],
//! [`Model::decode_step`] and [`Model::sentence_nll`] run directly on the
//! parameter arrays for decoding and perplexity; [`batch_loss`] records an
//! autodiff graph for training.
//!
//! Target sequences end with `</s>`, and the `</s>` id also serves as the
//! start symbol fed to the first decoder step.

mod checkpoint;
mod infer;
mod loss;

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Array, AutodiffError, ParamSet};
use crate::corpus::Vocabulary;
use crate::lexicon::TranslationTable;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use infer::{DecoderState, Encoded, StepOutput};
pub use loss::{batch_loss, BatchLoss};

pub const INIT_RANGE: f64 = 0.1;
pub const DEFAULT_DROPOUT: f64 = 0.2;
pub const DEFAULT_LEXICON_EPSILON: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("empty {0} sequence")]
    EmptySequence(&'static str),
    #[error("{side} id {id} outside vocabulary of {size}")]
    IdOutOfRange { side: &'static str, id: u32, size: usize },
    #[error("non-finite loss in batch {batch}")]
    NonFiniteLoss { batch: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub source_vocab: usize,
    pub target_vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub attention: usize,
    pub dropout: f64,
    /// Floor of the lexicon bias; `None` disables the bias.
    pub lexicon_epsilon: Option<f64>,
    pub seed: u64,
}

impl ModelConfig {
    /// Embeddings 32, hidden 64, attention 64.
    pub fn desk(source_vocab: usize, target_vocab: usize) -> Self {
        Self {
            source_vocab,
            target_vocab,
            embed: 32,
            hidden: 64,
            attention: 64,
            dropout: 0.0,
            lexicon_epsilon: None,
            seed: 1,
        }
    }

    /// Embeddings 512, hidden 1024, attention 1024.
    pub fn large(source_vocab: usize, target_vocab: usize) -> Self {
        Self {
            embed: 512,
            hidden: 1024,
            attention: 1024,
            ..Self::desk(source_vocab, target_vocab)
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let sizes = [
            ("source_vocab", self.source_vocab),
            ("target_vocab", self.target_vocab),
            ("embed", self.embed),
            ("hidden", self.hidden),
            ("attention", self.attention),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be at least 1")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if let Some(eps) = self.lexicon_epsilon {
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(ModelError::Config(format!("lexicon epsilon {eps} must be positive")));
            }
        }
        Ok(())
    }

    fn dec_input(&self) -> usize {
        self.embed + 2 * self.hidden
    }

    fn out_input(&self) -> usize {
        3 * self.hidden
    }
}

// Parameter slots, in creation and serialization order.
pub(crate) const SRC_EMBED: usize = 0;
pub(crate) const TGT_EMBED: usize = 1;
pub(crate) const ENC_FWD_W: usize = 2;
pub(crate) const ENC_FWD_B: usize = 3;
pub(crate) const ENC_BWD_W: usize = 4;
pub(crate) const ENC_BWD_B: usize = 5;
pub(crate) const DEC_INIT_W: usize = 6;
pub(crate) const DEC_INIT_B: usize = 7;
pub(crate) const DEC_W: usize = 8;
pub(crate) const DEC_B: usize = 9;
pub(crate) const ATT_ENC: usize = 10;
pub(crate) const ATT_DEC: usize = 11;
pub(crate) const ATT_V: usize = 12;
pub(crate) const OUT_W: usize = 13;
pub(crate) const OUT_B: usize = 14;

pub const PARAM_NAMES: [&str; 15] = [
    "src_embed",
    "tgt_embed",
    "enc_fwd_w",
    "enc_fwd_b",
    "enc_bwd_w",
    "enc_bwd_b",
    "dec_init_w",
    "dec_init_b",
    "dec_w",
    "dec_b",
    "att_enc",
    "att_dec",
    "att_v",
    "out_w",
    "out_b",
];

/// Expected shape of every parameter. LSTM weights act on `[input; hidden]`
/// with gate rows ordered input, forget, cell, output.
pub fn param_shapes(c: &ModelConfig) -> [Vec<usize>; 15] {
    let h = c.hidden;
    [
        vec![c.source_vocab, c.embed],
        vec![c.target_vocab, c.embed],
        vec![4 * h, c.embed + h],
        vec![4 * h],
        vec![4 * h, c.embed + h],
        vec![4 * h],
        vec![h, h],
        vec![h],
        vec![4 * h, c.dec_input() + h],
        vec![4 * h],
        vec![c.attention, 2 * h],
        vec![c.attention, h],
        vec![c.attention],
        vec![c.target_vocab, c.out_input()],
        vec![c.target_vocab],
    ]
}

fn is_bias(name: &str) -> bool {
    name.ends_with("_b")
}

/// Uniform values in `[-0.1, 0.1]` for weights, zeros for biases.
pub fn init_params(config: &ModelConfig) -> Result<ParamSet, ModelError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut set = ParamSet::new();
    for (name, shape) in PARAM_NAMES.iter().zip(param_shapes(config)) {
        let n: usize = shape.iter().product();
        let data = if is_bias(name) {
            vec![0.0; n]
        } else {
            (0..n).map(|_| rng.gen_range(-INIT_RANGE..=INIT_RANGE)).collect()
        };
        set.push(*name, Array::new(shape, data)?);
    }
    Ok(set)
}

pub fn check_params(config: &ModelConfig, params: &ParamSet) -> Result<(), ModelError> {
    if params.len() != PARAM_NAMES.len() {
        return Err(ModelError::Checkpoint(format!(
            "expected {} tensors, found {}",
            PARAM_NAMES.len(),
            params.len()
        )));
    }
    for (i, (name, shape)) in PARAM_NAMES.iter().zip(param_shapes(config)).enumerate() {
        if params.name(i) != *name || params.get(i).shape() != shape.as_slice() {
            return Err(ModelError::Checkpoint(format!(
                "tensor {i} is {} {:?}, expected {name} {shape:?}",
                params.name(i),
                params.get(i).shape()
            )));
        }
    }
    Ok(())
}

/// Sparse `t(target | source)` rows indexed by source id.
#[derive(Clone, Debug, PartialEq)]
pub struct LexiconPrior {
    rows: Vec<Vec<(u32, f64)>>,
}

impl LexiconPrior {
    pub fn new(rows: Vec<Vec<(u32, f64)>>) -> Self {
        Self { rows }
    }

    /// Maps a word table onto vocabulary ids. Mass for target words outside
    /// the vocabulary is pooled on `<unk>`.
    pub fn from_table(table: &TranslationTable, source: &Vocabulary, target: &Vocabulary) -> Self {
        let mut rows = vec![Vec::new(); source.len()];
        for (s, row) in table.rows() {
            let Some(sid) = source.get(s) else { continue };
            let mut acc: HashMap<u32, f64> = HashMap::new();
            for (t, &p) in row {
                *acc.entry(target.id(t)).or_default() += p;
            }
            let mut r: Vec<(u32, f64)> = acc.into_iter().collect();
            r.sort_by_key(|&(id, _)| id);
            rows[sid as usize] = r;
        }
        Self { rows }
    }

    pub fn row(&self, source_id: u32) -> &[(u32, f64)] {
        self.rows.get(source_id as usize).map_or(&[], Vec::as_slice)
    }

    pub fn rows(&self) -> &[Vec<(u32, f64)>] {
        &self.rows
    }

    /// Dense `[target_vocab × source.len()]` matrix for one sentence.
    pub(crate) fn dense(&self, source: &[u32], target_vocab: usize) -> Array {
        let s = source.len();
        let mut m = vec![0.0; target_vocab * s];
        for (j, &x) in source.iter().enumerate() {
            for &(y, p) in self.row(x) {
                m[y as usize * s + j] += p;
            }
        }
        Array::matrix(target_vocab, s, m)
    }
}

/// Variational dropout masks for one sentence pair, already scaled by
/// `1/(1-rate)`. Each mask is reused at every time step of its sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct SentenceMasks {
    pub enc_fwd_input: Vec<f64>,
    pub enc_fwd_hidden: Vec<f64>,
    pub enc_bwd_input: Vec<f64>,
    pub enc_bwd_hidden: Vec<f64>,
    pub dec_input: Vec<f64>,
    pub dec_hidden: Vec<f64>,
    pub output: Vec<f64>,
}

impl SentenceMasks {
    pub fn sample<R: Rng>(config: &ModelConfig, rng: &mut R) -> Self {
        let rate = config.dropout;
        let keep = 1.0 / (1.0 - rate);
        let mut mask = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
                .collect()
        };
        let (e, h) = (config.embed, config.hidden);
        Self {
            enc_fwd_input: mask(e),
            enc_fwd_hidden: mask(h),
            enc_bwd_input: mask(e),
            enc_bwd_hidden: mask(h),
            dec_input: mask(config.dec_input()),
            dec_hidden: mask(h),
            output: mask(config.out_input()),
        }
    }
}

/// Dropout setting for one forward pass.
#[derive(Clone, Copy, Debug, Default)]
pub enum Dropout<'a> {
    #[default]
    Off,
    Masks(&'a SentenceMasks),
}

/// Parameters, configuration and the optional lexicon prior.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub lexicon: Option<LexiconPrior>,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        let params = init_params(&config)?;
        Ok(Self {
            config,
            params,
            lexicon: None,
        })
    }

    pub fn from_parts(config: ModelConfig, params: ParamSet, lexicon: Option<LexiconPrior>) -> Result<Self, ModelError> {
        config.validate()?;
        check_params(&config, &params)?;
        Ok(Self {
            config,
            params,
            lexicon,
        })
    }

    pub fn with_lexicon(mut self, prior: LexiconPrior, epsilon: f64) -> Self {
        self.config.lexicon_epsilon = Some(epsilon);
        self.lexicon = Some(prior);
        self
    }

    pub(crate) fn p(&self, slot: usize) -> &Array {
        self.params.get(slot)
    }

    /// The lexicon bias is active when both the prior and its floor are set.
    pub(crate) fn lexicon_bias(&self) -> Option<(&LexiconPrior, f64)> {
        match (&self.lexicon, self.config.lexicon_epsilon) {
            (Some(l), Some(eps)) => Some((l, eps)),
            _ => None,
        }
    }

    pub(crate) fn check_ids(&self, ids: &[u32], side: &'static str) -> Result<(), ModelError> {
        let size = match side {
            "source" => self.config.source_vocab,
            _ => self.config.target_vocab,
        };
        if ids.is_empty() {
            return Err(ModelError::EmptySequence(side));
        }
        match ids.iter().find(|&&id| id as usize >= size) {
            Some(&id) => Err(ModelError::IdOutOfRange { side, id, size }),
            None => Ok(()),
        }
    }
}
