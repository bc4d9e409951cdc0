//! Corpus BLEU, class-wise unigram F1 over word categories, vocabulary
//! coverage curves and averaging across independent runs.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bpe::{encode_word, MergeTable};
use crate::corpus::{count_words, Vocabulary, EOS, UNK};
use crate::lexicon::Dictionary;

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{what}: {left} lines against {right}")]
    LineCountMismatch { what: &'static str, left: usize, right: usize },
    #[error("no scores to average")]
    NoScores,
}

fn same_len(what: &'static str, left: usize, right: usize) -> Result<(), EvalError> {
    if left == right {
        Ok(())
    } else {
        Err(EvalError::LineCountMismatch { what, left, right })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BleuScore {
    pub score: f64,
    pub precisions: [f64; MAX_ORDER],
    pub matches: [u64; MAX_ORDER],
    pub totals: [u64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: u64,
    pub ref_len: u64,
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_default() += 1;
        }
    }
    m
}

/// Corpus-level BLEU-4 with clipped counts and a brevity penalty, unsmoothed.
pub fn bleu(hypotheses: &[Vec<String>], references: &[Vec<String>]) -> Result<BleuScore, EvalError> {
    same_len("hypotheses vs references", hypotheses.len(), references.len())?;
    let mut matches = [0u64; MAX_ORDER];
    let mut totals = [0u64; MAX_ORDER];
    let (mut c, mut r) = (0u64, 0u64);
    for (h, rf) in hypotheses.iter().zip(references) {
        c += h.len() as u64;
        r += rf.len() as u64;
        for n in 1..=MAX_ORDER {
            let hc = ngram_counts(h, n);
            let rc = ngram_counts(rf, n);
            for (g, &k) in &hc {
                matches[n - 1] += k.min(rc.get(g).copied().unwrap_or(0));
            }
            totals[n - 1] += h.len().saturating_sub(n - 1) as u64;
        }
    }
    let mut precisions = [0.0; MAX_ORDER];
    for n in 0..MAX_ORDER {
        precisions[n] = if totals[n] == 0 { 0.0 } else { matches[n] as f64 / totals[n] as f64 };
    }
    let bp = if c == 0 {
        0.0
    } else if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    let score = if precisions.iter().all(|&p| p > 0.0) {
        let mean_log = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
        (100.0 * bp * mean_log.exp()).min(100.0)
    } else {
        0.0
    };
    Ok(BleuScore {
        score,
        precisions,
        matches,
        totals,
        brevity_penalty: bp,
        hyp_len: c,
        ref_len: r,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WordClass {
    /// In the full-word vocabulary and a single BPE piece.
    Full,
    /// In the full-word vocabulary but split by BPE.
    Split,
    /// Outside the vocabulary; the dictionary produces it from a source word.
    Dict,
    /// Outside vocabulary and dictionary, and absent from the source.
    OovT,
    /// Outside vocabulary and dictionary, present verbatim in the source.
    OovP,
}

impl WordClass {
    pub const ALL: [WordClass; 5] = [Self::Full, Self::Split, Self::Dict, Self::OovT, Self::OovP];

    pub fn label(self) -> &'static str {
        match self {
            Self::Full => "Full",
            Self::Split => "Split",
            Self::Dict => "Dict",
            Self::OovT => "OOV-T",
            Self::OovP => "OOV-P",
        }
    }
}

/// Artifacts of the full-word and BPE systems used to categorize words.
pub struct ClassArtifacts<'a> {
    pub full_vocab: &'a Vocabulary,
    pub merges: &'a MergeTable,
    pub dictionary: &'a Dictionary,
}

impl ClassArtifacts<'_> {
    pub fn classify(&self, token: &str, source: &[String]) -> WordClass {
        let in_vocab = token != UNK && token != EOS && self.full_vocab.contains(token);
        if in_vocab {
            if encode_word(token, self.merges).len() == 1 {
                WordClass::Full
            } else {
                WordClass::Split
            }
        } else if source.iter().any(|s| self.dictionary.lookup(s) == Some(token)) {
            WordClass::Dict
        } else if source.iter().any(|s| s == token) {
            WordClass::OovP
        } else {
            WordClass::OovT
        }
    }
}

pub fn classify_reference_words(reference: &[String], source: &[String], artifacts: &ClassArtifacts<'_>) -> Vec<WordClass> {
    reference.iter().map(|t| artifacts.classify(t, source)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class: WordClass,
    pub matches: u64,
    pub hyp_count: u64,
    /// Reference tokens of this class.
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

impl ClassScore {
    fn new(class: WordClass, matches: u64, hyp_count: u64, support: u64) -> Self {
        let precision = ratio(matches, hyp_count);
        let recall = ratio(matches, support);
        Self {
            class,
            matches,
            hyp_count,
            support,
            precision,
            recall,
            f1: f1(precision, recall),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    /// One entry per class, in [`WordClass::ALL`] order.
    pub classes: Vec<ClassScore>,
}

impl ClassReport {
    pub fn get(&self, class: WordClass) -> &ClassScore {
        self.classes.iter().find(|c| c.class == class).expect("every class is reported")
    }
}

/// Unigram precision and recall per class, micro-averaged over the corpus.
/// Hypothesis tokens are classified against the paired source, so a token
/// always lands in the same class on both sides of a sentence.
pub fn classwise_f1(
    hypotheses: &[Vec<String>],
    references: &[Vec<String>],
    sources: &[Vec<String>],
    artifacts: &ClassArtifacts<'_>,
) -> Result<ClassReport, EvalError> {
    same_len("hypotheses vs references", hypotheses.len(), references.len())?;
    same_len("sources vs references", sources.len(), references.len())?;
    let mut matches: HashMap<WordClass, u64> = HashMap::new();
    let mut hyp: HashMap<WordClass, u64> = HashMap::new();
    let mut support: HashMap<WordClass, u64> = HashMap::new();
    for ((h, r), s) in hypotheses.iter().zip(references).zip(sources) {
        let mut ref_counts: HashMap<&str, u64> = HashMap::new();
        for t in r {
            *ref_counts.entry(t).or_default() += 1;
            *support.entry(artifacts.classify(t, s)).or_default() += 1;
        }
        let mut hyp_counts: HashMap<&str, u64> = HashMap::new();
        for t in h {
            *hyp_counts.entry(t).or_default() += 1;
        }
        for (t, k) in hyp_counts {
            let class = artifacts.classify(t, s);
            *hyp.entry(class).or_default() += k;
            *matches.entry(class).or_default() += k.min(ref_counts.get(t).copied().unwrap_or(0));
        }
    }
    let get = |m: &HashMap<WordClass, u64>, c| m.get(&c).copied().unwrap_or(0);
    Ok(ClassReport {
        classes: WordClass::ALL
            .iter()
            .map(|&c| ClassScore::new(c, get(&matches, c), get(&hyp, c), get(&support, c)))
            .collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoveragePoint {
    pub rank: usize,
    pub frequency: u64,
    /// Fraction of corpus tokens covered by the words up to this rank.
    pub cumulative: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub curve: Vec<CoveragePoint>,
    pub limit: usize,
    pub coverage_at_limit: f64,
    pub types: usize,
    pub tokens: u64,
}

/// Descending-frequency curve and the token coverage of the `limit` most
/// frequent types.
pub fn vocab_coverage(sentences: &[Vec<String>], limit: usize) -> Coverage {
    let counts = count_words(sentences.iter().map(Vec::as_slice));
    let mut ranked: Vec<(&String, u64)> = counts.iter().map(|(w, &c)| (w, c)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let tokens: u64 = ranked.iter().map(|(_, c)| c).sum();
    let mut acc = 0u64;
    let mut curve = Vec::with_capacity(ranked.len());
    let mut at_limit = if limit == 0 || tokens == 0 { 0.0 } else { 1.0 };
    for (i, (_, c)) in ranked.iter().enumerate() {
        acc += c;
        let cumulative = acc as f64 / tokens as f64;
        if i + 1 == limit {
            at_limit = cumulative;
        }
        curve.push(CoveragePoint {
            rank: i + 1,
            frequency: *c,
            cumulative,
        });
    }
    Coverage {
        curve,
        limit,
        coverage_at_limit: at_limit,
        types: ranked.len(),
        tokens,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunAverage {
    pub mean: f64,
    pub runs: Vec<f64>,
}

pub fn average_runs(scores: &[f64]) -> Result<RunAverage, EvalError> {
    if scores.is_empty() {
        return Err(EvalError::NoScores);
    }
    let mut sorted = scores.to_vec();
    // Summing in sorted order makes the mean independent of input order.
    sorted.sort_by(f64::total_cmp);
    Ok(RunAverage {
        mean: sorted.iter().sum::<f64>() / scores.len() as f64,
        runs: scores.to_vec(),
    })
}

/// Everything the evaluate and analyze commands report.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu: Option<BleuScore>,
    pub classes: Option<ClassReport>,
    pub coverage: Vec<(String, Coverage)>,
    pub runs: Option<RunAverage>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Plain TSV blocks, each introduced by a `# name` line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        if let Some(b) = &self.bleu {
            out.push_str("# bleu\nscore\tp1\tp2\tp3\tp4\tbp\thyp_len\tref_len\n");
            let _ = writeln!(
                out,
                "{:.2}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{}\t{}",
                b.score, b.precisions[0], b.precisions[1], b.precisions[2], b.precisions[3], b.brevity_penalty, b.hyp_len, b.ref_len
            );
        }
        if let Some(r) = &self.runs {
            out.push_str("# runs\nrun\tscore\n");
            for (i, s) in r.runs.iter().enumerate() {
                let _ = writeln!(out, "{i}\t{s:.2}");
            }
            let _ = writeln!(out, "mean\t{:.2}", r.mean);
        }
        if let Some(c) = &self.classes {
            out.push_str("# classes\nclass\tprecision\trecall\tf1\tsupport\n");
            for s in &c.classes {
                let _ = writeln!(out, "{}\t{:.4}\t{:.4}\t{:.4}\t{}", s.class.label(), s.precision, s.recall, s.f1, s.support);
            }
        }
        for (name, cov) in &self.coverage {
            let _ = writeln!(out, "# coverage {name} (limit {} covers {:.4})", cov.limit, cov.coverage_at_limit);
            out.push_str("rank\tfrequency\tcumulative\n");
            for p in &cov.curve {
                let _ = writeln!(out, "{}\t{}\t{:.6}", p.rank, p.frequency, p.cumulative);
            }
        }
        out
    }
}
