//! Beam search over one model or an ensemble, and the unk-replacement
//! post-process that copies or looks up the most-attended source word.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bpe::{decode_pieces_detailed, is_unk_piece, Segmenter};
use crate::corpus::{Vocabulary, EOS_ID, UNK};
use crate::lexicon::Dictionary;
use crate::model::{DecoderState, Dropout, Encoded, Model, ModelError};

pub const DEFAULT_BEAM: usize = 5;

/// `2 × source length + 5`.
pub fn default_max_len(source_len: usize) -> usize {
    2 * source_len + 5
}

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("ensemble needs at least one member")]
    NoMembers,
    #[error("member {index} has {found} {side} words, expected {expected}")]
    VocabMismatch {
        index: usize,
        side: &'static str,
        found: usize,
        expected: usize,
    },
    #[error("distribution {index} has length {found}, expected {expected}")]
    LengthMismatch { index: usize, found: usize, expected: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Arithmetic mean of member probabilities.
    #[default]
    Probability,
    /// Renormalized geometric mean.
    Log,
}

/// Arithmetic mean of member distributions.
pub fn ensemble_distribution(members: &[&[f64]]) -> Result<Vec<f64>, DecodeError> {
    combine(members, Averaging::Probability)
}

pub fn combine(members: &[&[f64]], averaging: Averaging) -> Result<Vec<f64>, DecodeError> {
    let first = members.first().ok_or(DecodeError::NoMembers)?;
    let n = first.len();
    if let Some((index, d)) = members.iter().enumerate().find(|(_, d)| d.len() != n) {
        return Err(DecodeError::LengthMismatch {
            index,
            found: d.len(),
            expected: n,
        });
    }
    let k = members.len() as f64;
    let mut out = vec![0.0; n];
    match averaging {
        Averaging::Probability => {
            for d in members {
                for (o, p) in out.iter_mut().zip(d.iter()) {
                    *o += p;
                }
            }
            for o in &mut out {
                *o /= k;
            }
        }
        Averaging::Log => {
            for d in members {
                for (o, p) in out.iter_mut().zip(d.iter()) {
                    *o += p.ln();
                }
            }
            let max = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Ok(vec![1.0 / n as f64; n]);
            }
            for o in &mut out {
                *o = ((*o / k) - max / k).exp();
            }
            let z: f64 = out.iter().sum();
            for o in &mut out {
                *o /= z;
            }
        }
    }
    Ok(out)
}

/// One decoder step's output.
#[derive(Clone, Debug)]
pub struct Step<S> {
    pub distribution: Vec<f64>,
    pub attention: Vec<f64>,
    pub state: S,
}

/// Next-token distributions for one source sentence.
pub trait StepScorer {
    type State: Clone;
    fn initial(&self) -> Self::State;
    fn step(&self, state: &Self::State, prev: u32) -> Step<Self::State>;
}

/// Independently trained models decoded together, sharing vocabularies.
#[derive(Clone, Debug)]
pub struct Ensemble {
    members: Vec<Model>,
    pub averaging: Averaging,
}

impl Ensemble {
    pub fn new(members: Vec<Model>) -> Result<Self, DecodeError> {
        let first = members.first().ok_or(DecodeError::NoMembers)?;
        let (sv, tv) = (first.config.source_vocab, first.config.target_vocab);
        for (index, m) in members.iter().enumerate() {
            if m.config.target_vocab != tv {
                return Err(DecodeError::VocabMismatch {
                    index,
                    side: "target",
                    found: m.config.target_vocab,
                    expected: tv,
                });
            }
            if m.config.source_vocab != sv {
                return Err(DecodeError::VocabMismatch {
                    index,
                    side: "source",
                    found: m.config.source_vocab,
                    expected: sv,
                });
            }
        }
        Ok(Self {
            members,
            averaging: Averaging::Probability,
        })
    }

    pub fn members(&self) -> &[Model] {
        &self.members
    }

    pub fn scorer(&self, source: &[u32]) -> Result<EnsembleScorer<'_>, DecodeError> {
        let encoded = self
            .members
            .iter()
            .map(|m| m.encode(source, Dropout::Off))
            .collect::<Result<_, _>>()?;
        Ok(EnsembleScorer {
            ensemble: self,
            encoded,
        })
    }
}

pub struct EnsembleScorer<'a> {
    ensemble: &'a Ensemble,
    encoded: Vec<Encoded>,
}

impl StepScorer for EnsembleScorer<'_> {
    type State = Vec<DecoderState>;

    fn initial(&self) -> Self::State {
        self.ensemble
            .members
            .iter()
            .zip(&self.encoded)
            .map(|(m, e)| m.initial_state(e))
            .collect()
    }

    fn step(&self, state: &Self::State, prev: u32) -> Step<Self::State> {
        let outs: Vec<_> = self
            .ensemble
            .members
            .iter()
            .zip(&self.encoded)
            .zip(state)
            .map(|((m, e), s)| m.decode_step(prev, s, e, Dropout::Off))
            .collect();
        let dists: Vec<&[f64]> = outs.iter().map(|o| o.distribution.as_slice()).collect();
        let distribution = combine(&dists, self.ensemble.averaging).expect("members share a vocabulary");
        let k = outs.len() as f64;
        let mut attention = vec![0.0; outs[0].attention.len()];
        for o in &outs {
            for (a, b) in attention.iter_mut().zip(&o.attention) {
                *a += b;
            }
        }
        for a in &mut attention {
            *a /= k;
        }
        Step {
            distribution,
            attention,
            state: outs.into_iter().map(|o| o.state).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Emitted ids, without the final `</s>`.
    pub tokens: Vec<u32>,
    pub log_prob: f64,
    /// One attention vector per emitted step, the `</s>` step included.
    pub attention: Vec<Vec<f64>>,
    /// Ended with `</s>` rather than by the length limit.
    pub finished: bool,
}

impl Hypothesis {
    /// Emitted steps, counting `</s>`.
    pub fn emitted(&self) -> usize {
        self.attention.len()
    }

    pub fn normalized_score(&self) -> f64 {
        self.log_prob / self.emitted().max(1) as f64
    }
}

struct Live<S> {
    hyp: Hypothesis,
    state: S,
}

/// Beam search; returns completed hypotheses sorted by length-normalized
/// log-probability, best first.
pub fn beam_search<S: StepScorer>(scorer: &S, beam_size: usize, max_len: usize) -> Vec<Hypothesis> {
    assert!(beam_size >= 1 && max_len >= 1, "beam size and length limit must be positive");
    let mut live = vec![Live {
        hyp: Hypothesis {
            tokens: Vec::new(),
            log_prob: 0.0,
            attention: Vec::new(),
            finished: false,
        },
        state: scorer.initial(),
    }];
    let mut done = Vec::new();
    for t in 0..max_len {
        let steps: Vec<Step<S::State>> = live
            .iter()
            .map(|l| scorer.step(&l.state, l.hyp.tokens.last().copied().unwrap_or(EOS_ID)))
            .collect();
        let mut cands: Vec<(f64, usize, u32)> = Vec::new();
        for (h, step) in steps.iter().enumerate() {
            for (y, &p) in step.distribution.iter().enumerate() {
                if p > 0.0 {
                    cands.push((live[h].hyp.log_prob + p.ln(), h, y as u32));
                }
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        cands.truncate(beam_size);
        let mut next = Vec::with_capacity(cands.len());
        for (score, h, y) in cands {
            let step = &steps[h];
            let mut hyp = live[h].hyp.clone();
            hyp.log_prob = score;
            hyp.attention.push(step.attention.clone());
            if y == EOS_ID {
                hyp.finished = true;
                done.push(hyp);
            } else {
                hyp.tokens.push(y);
                if t + 1 == max_len {
                    done.push(hyp);
                } else {
                    next.push(Live {
                        hyp,
                        state: step.state.clone(),
                    });
                }
            }
        }
        live = next;
        if live.is_empty() {
            break;
        }
    }
    done.sort_by(|a, b| b.normalized_score().total_cmp(&a.normalized_score()));
    done
}

/// Position of the most-attended source item over a group of steps: the
/// step with the sharpest peak wins.
pub fn most_attended(steps: &[&[f64]]) -> Option<usize> {
    let mut best: Option<(f64, usize)> = None;
    for row in steps {
        for (j, &a) in row.iter().enumerate() {
            if best.is_none_or(|(b, _)| a > b) {
                best = Some((a, j));
            }
        }
    }
    best.map(|(_, j)| j)
}

/// Replaces every `<unk>` word by the dictionary translation of the source
/// word it attends to most, or by that source word itself.
///
/// `attended[i]` is the source word index chosen for output word `i`.
pub fn replace_unks(words: &[String], attended: &[Option<usize>], source: &[String], dictionary: &Dictionary) -> Vec<String> {
    words
        .iter()
        .zip(attended)
        .map(|(w, a)| match (w.as_str(), a) {
            (UNK, Some(j)) if *j < source.len() => {
                let s = &source[*j];
                dictionary.lookup(s).unwrap_or(s).to_string()
            }
            _ => w.clone(),
        })
        .collect()
}

/// Everything needed to turn a tokenized sentence into output words.
pub struct Translator<'a> {
    pub ensemble: &'a Ensemble,
    pub source_vocab: &'a Vocabulary,
    pub target_vocab: &'a Vocabulary,
    /// Present for systems trained on BPE pieces.
    pub segmenter: Option<Segmenter<'a>>,
    /// Enables unk replacement; an empty dictionary means copy only.
    pub unk_dictionary: Option<&'a Dictionary>,
    pub beam_size: usize,
    /// Fixed limit; `None` uses [`default_max_len`].
    pub max_len: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Translation {
    pub words: Vec<String>,
    /// Length-normalized log-probability of the chosen hypothesis.
    pub score: f64,
    /// Attention of each emitted step over the source tokens.
    pub attention: Vec<Vec<f64>>,
    /// Output ended inside a word (subword systems only).
    pub malformed: bool,
}

impl Translation {
    /// `line<TAB>score<TAB>attention`, rows joined by `;`, values by `,`.
    pub fn to_tsv_row(&self, line: usize) -> String {
        let mut att = String::new();
        for (i, row) in self.attention.iter().enumerate() {
            if i > 0 {
                att.push(';');
            }
            for (j, a) in row.iter().enumerate() {
                if j > 0 {
                    att.push(',');
                }
                let _ = write!(att, "{a:.4}");
            }
        }
        format!("{line}\t{}\t{att}", self.score)
    }
}

impl Translator<'_> {
    pub fn translate(&mut self, source: &[String]) -> Result<Translation, DecodeError> {
        if source.is_empty() {
            return Ok(Translation {
                words: Vec::new(),
                score: 0.0,
                attention: Vec::new(),
                malformed: false,
            });
        }
        // Source tokens and the source word each token belongs to.
        let (tokens, token_word): (Vec<String>, Vec<usize>) = match &mut self.segmenter {
            Some(seg) => {
                source
                    .iter()
                    .enumerate()
                    .flat_map(|(i, w)| seg.word(w).iter().map(move |p| (p.clone(), i)).collect::<Vec<_>>())
                    .unzip()
            }
            None => source.iter().cloned().enumerate().map(|(i, w)| (w, i)).unzip(),
        };
        let ids = self.source_vocab.encode(&tokens);
        let scorer = self.ensemble.scorer(&ids)?;
        let max_len = self.max_len.unwrap_or_else(|| default_max_len(ids.len()));
        let best = beam_search(&scorer, self.beam_size, max_len)
            .into_iter()
            .next()
            .expect("beam search always completes a hypothesis");
        let out_tokens = self.target_vocab.decode(&best.tokens);

        let (words, spans, malformed) = if self.segmenter.is_some() {
            let d = decode_pieces_detailed(&out_tokens);
            (d.words, d.spans, d.malformed)
        } else {
            let spans = (0..out_tokens.len()).map(|i| i..i + 1).collect();
            let words = out_tokens.into_iter().map(|w| if is_unk_piece(&w) { UNK.to_string() } else { w }).collect();
            (words, spans, false)
        };
        let words = match self.unk_dictionary {
            Some(dict) => {
                let attended: Vec<Option<usize>> = spans
                    .iter()
                    .map(|span| {
                        let rows: Vec<&[f64]> = best.attention[span.clone()].iter().map(Vec::as_slice).collect();
                        most_attended(&rows).map(|j| token_word[j])
                    })
                    .collect();
                replace_unks(&words, &attended, source, dict)
            }
            None => words,
        };
        Ok(Translation {
            words,
            score: best.normalized_score(),
            attention: best.attention,
            malformed,
        })
    }

    /// Translates every sentence, preserving order.
    pub fn translate_corpus(&mut self, sentences: &[Vec<String>]) -> Result<Vec<Translation>, DecodeError> {
        sentences.iter().map(|s| self.translate(s)).collect()
    }
}
