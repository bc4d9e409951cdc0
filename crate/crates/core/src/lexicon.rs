//! Word-translation probabilities by IBM Model 1 EM, the unk-replacement
//! dictionary, intersected Viterbi alignments and phrase-pair extraction.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use thiserror::Error;

use crate::corpus::{ParallelCorpus, SentencePair};

/// Source-side empty word of Model 1.
pub const NULL: &str = "<null>";
/// Translation-table rows below this probability are not written out.
pub const TABLE_FLOOR: f64 = 1e-6;
pub const DEFAULT_MAX_PHRASE_LEN: usize = 4;

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("cannot train a lexicon on an empty corpus")]
    Empty,
    #[error("line {line}: {detail}")]
    Format { line: usize, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> LexiconError + '_ {
    move |source| LexiconError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// `t(target | source)`; every source row sums to one.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TranslationTable {
    rows: BTreeMap<String, BTreeMap<String, f64>>,
}

impl TranslationTable {
    pub fn prob(&self, source: &str, target: &str) -> f64 {
        self.rows
            .get(source)
            .and_then(|r| r.get(target))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn row(&self, source: &str) -> Option<&BTreeMap<String, f64>> {
        self.rows.get(source)
    }

    pub fn rows(&self) -> impl Iterator<Item = (&str, &BTreeMap<String, f64>)> {
        self.rows.iter().map(|(s, r)| (s.as_str(), r))
    }

    pub fn from_rows(rows: BTreeMap<String, BTreeMap<String, f64>>) -> Self {
        Self { rows }
    }

    /// `source<TAB>target<TAB>prob`, omitting entries below [`TABLE_FLOOR`].
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (s, row) in &self.rows {
            for (t, &p) in row {
                if p >= TABLE_FLOOR {
                    let _ = writeln!(out, "{s}\t{t}\t{p:e}");
                }
            }
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self, LexiconError> {
        let mut rows: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        for (i, (s, t, p)) in parse_triples(text)?.into_iter().enumerate() {
            if rows.entry(s).or_default().insert(t, p).is_some() {
                return Err(LexiconError::Format {
                    line: i + 1,
                    detail: "duplicate entry".into(),
                });
            }
        }
        Ok(Self { rows })
    }

    pub fn save(&self, path: &Path) -> Result<(), LexiconError> {
        std::fs::write(path, self.to_tsv()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self, LexiconError> {
        Self::from_tsv(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }
}

fn parse_triples(text: &str) -> Result<Vec<(String, String, f64)>, LexiconError> {
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            let bad = |d: &str| LexiconError::Format {
                line: i + 1,
                detail: d.to_string(),
            };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(bad("expected source<TAB>target<TAB>prob"));
            }
            let p: f64 = f[2].parse().map_err(|_| bad("bad probability"))?;
            if !(0.0..=1.0).contains(&p) {
                return Err(bad("probability out of range"));
            }
            Ok((f[0].to_string(), f[1].to_string(), p))
        })
        .collect()
}

struct Interned {
    src: Vec<Vec<u32>>,
    tgt: Vec<Vec<u32>>,
    src_names: Vec<String>,
    tgt_names: Vec<String>,
}

fn intern(corpus: &ParallelCorpus) -> Interned {
    let mut src_ids: HashMap<&str, u32> = HashMap::new();
    let mut tgt_ids: HashMap<&str, u32> = HashMap::new();
    let mut src_names = vec![NULL.to_string()];
    let mut tgt_names = Vec::new();
    src_ids.insert(NULL, 0);
    let mut src = Vec::with_capacity(corpus.len());
    let mut tgt = Vec::with_capacity(corpus.len());
    for p in corpus.pairs() {
        let mut s = vec![0u32];
        for w in &p.source {
            let id = *src_ids.entry(w).or_insert_with(|| {
                src_names.push(w.clone());
                (src_names.len() - 1) as u32
            });
            s.push(id);
        }
        let t = p
            .target
            .iter()
            .map(|w| {
                *tgt_ids.entry(w).or_insert_with(|| {
                    tgt_names.push(w.clone());
                    (tgt_names.len() - 1) as u32
                })
            })
            .collect();
        src.push(s);
        tgt.push(t);
    }
    Interned {
        src,
        tgt,
        src_names,
        tgt_names,
    }
}

/// Sparse rows of `t(f|e)` over co-occurring pairs, sorted by target id.
struct Rows {
    targets: Vec<Vec<u32>>,
    probs: Vec<Vec<f64>>,
}

impl Rows {
    fn index(&self, e: u32, f: u32) -> usize {
        self.targets[e as usize].binary_search(&f).expect("co-occurring pair")
    }
}

/// Trains Model 1 and returns the table together with the corpus
/// log-likelihood measured in each iteration's E-step (i.e. under the table
/// that iteration starts from).
pub fn learn_model1_traced(corpus: &ParallelCorpus, iterations: usize) -> Result<(TranslationTable, Vec<f64>), LexiconError> {
    assert!(iterations >= 1, "at least one EM iteration is required");
    if corpus.is_empty() {
        return Err(LexiconError::Empty);
    }
    let data = intern(corpus);
    let mut co: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); data.src_names.len()];
    for (s, t) in data.src.iter().zip(&data.tgt) {
        for &e in s {
            co[e as usize].extend(t.iter().copied());
        }
    }
    let uniform = 1.0 / data.tgt_names.len() as f64;
    let mut rows = Rows {
        targets: co.into_iter().map(|s| s.into_iter().collect()).collect(),
        probs: Vec::new(),
    };
    rows.probs = rows.targets.iter().map(|t| vec![uniform; t.len()]).collect();

    let mut trace = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let mut counts: Vec<Vec<f64>> = rows.targets.iter().map(|t| vec![0.0; t.len()]).collect();
        let mut ll = 0.0;
        for (s, t) in data.src.iter().zip(&data.tgt) {
            let norm = s.len() as f64;
            for &f in t {
                let idx: Vec<usize> = s.iter().map(|&e| rows.index(e, f)).collect();
                let denom: f64 = s.iter().zip(&idx).map(|(&e, &k)| rows.probs[e as usize][k]).sum();
                ll += (denom / norm).ln();
                for (&e, &k) in s.iter().zip(&idx) {
                    counts[e as usize][k] += rows.probs[e as usize][k] / denom;
                }
            }
        }
        trace.push(ll);
        for (row, c) in rows.probs.iter_mut().zip(counts) {
            let total: f64 = c.iter().sum();
            for (p, ci) in row.iter_mut().zip(c) {
                *p = ci / total;
            }
        }
    }

    let mut table = BTreeMap::new();
    for (e, name) in data.src_names.iter().enumerate() {
        let row: BTreeMap<String, f64> = rows.targets[e]
            .iter()
            .zip(&rows.probs[e])
            .map(|(&f, &p)| (data.tgt_names[f as usize].clone(), p))
            .collect();
        if !row.is_empty() {
            table.insert(name.clone(), row);
        }
    }
    Ok((TranslationTable { rows: table }, trace))
}

/// IBM Model 1 with a null source word: uniform start, expected counts from
/// per-target-word posteriors, count normalization.
pub fn learn_model1(corpus: &ParallelCorpus, iterations: usize) -> Result<TranslationTable, LexiconError> {
    learn_model1_traced(corpus, iterations).map(|(t, _)| t)
}

/// `Σ_pairs Σ_j log( Σ_i t(f_j|e_i) / (l+1) )` with the null word included.
pub fn corpus_log_likelihood(table: &TranslationTable, corpus: &ParallelCorpus) -> f64 {
    let mut ll = 0.0;
    for p in corpus.pairs() {
        let norm = (p.source.len() + 1) as f64;
        for f in &p.target {
            let mut denom = table.prob(NULL, f);
            for e in &p.source {
                denom += table.prob(e, f);
            }
            ll += (denom / norm).ln();
        }
    }
    ll
}

/// Corpus with source and target sides exchanged.
pub fn reversed(corpus: &ParallelCorpus) -> ParallelCorpus {
    corpus
        .pairs()
        .iter()
        .map(|p| SentencePair {
            source: p.target.clone(),
            target: p.source.clone(),
        })
        .collect()
}

/// Most probable single-word translation of each source word.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dictionary {
    best: BTreeMap<String, (String, f64)>,
}

impl Dictionary {
    pub fn lookup(&self, source: &str) -> Option<&str> {
        self.best.get(source).map(|(t, _)| t.as_str())
    }

    pub fn len(&self) -> usize {
        self.best.len()
    }

    pub fn is_empty(&self) -> bool {
        self.best.is_empty()
    }

    pub fn insert(&mut self, source: &str, target: &str, prob: f64) {
        self.best.insert(source.to_string(), (target.to_string(), prob));
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str, f64)> {
        self.best.iter().map(|(s, (t, p))| (s.as_str(), t.as_str(), *p))
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (s, t, p) in self.entries() {
            let _ = writeln!(out, "{s}\t{t}\t{p:e}");
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self, LexiconError> {
        let mut d = Dictionary::default();
        for (i, (s, t, p)) in parse_triples(text)?.into_iter().enumerate() {
            if d.best.insert(s, (t, p)).is_some() {
                return Err(LexiconError::Format {
                    line: i + 1,
                    detail: "source word listed twice".into(),
                });
            }
        }
        Ok(d)
    }

    pub fn save(&self, path: &Path) -> Result<(), LexiconError> {
        std::fs::write(path, self.to_tsv()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self, LexiconError> {
        Self::from_tsv(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }
}

/// Argmax target per source word when it reaches `min_prob`; ties go to the
/// lexicographically smaller target. The null row is skipped.
pub fn extract_dictionary(table: &TranslationTable, min_prob: f64) -> Dictionary {
    let mut d = Dictionary::default();
    for (s, row) in table.rows() {
        if s == NULL {
            continue;
        }
        // Rows iterate in target order, so strict > keeps the smallest on ties.
        let mut best: Option<(&str, f64)> = None;
        for (t, &p) in row {
            if best.is_none_or(|(_, bp)| p > bp) {
                best = Some((t, p));
            }
        }
        if let Some((t, p)) = best {
            if p >= min_prob {
                d.insert(s, t, p);
            }
        }
    }
    d
}

/// Word links `(source index, target index)` of one sentence pair.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Alignment {
    pub links: BTreeSet<(usize, usize)>,
}

impl Alignment {
    pub fn new(links: impl IntoIterator<Item = (usize, usize)>) -> Self {
        Self {
            links: links.into_iter().collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    /// `i-j` pairs separated by spaces.
    pub fn to_line(&self) -> String {
        self.links.iter().map(|(i, j)| format!("{i}-{j}")).collect::<Vec<_>>().join(" ")
    }
}

fn viterbi_links(from: &[String], to: &[String], table: &TranslationTable) -> Vec<Option<usize>> {
    // For each word of `to`, the position in `from` that best explains it,
    // or None when the null word wins outright. Real words beat null on a
    // tie and earlier positions win ties among real words.
    to.iter()
        .map(|f| {
            let mut best = (None, table.prob(NULL, f));
            for (i, e) in from.iter().enumerate() {
                let p = table.prob(e, f);
                if p > best.1 || (best.0.is_none() && p == best.1 && p > 0.0) {
                    best = (Some(i), p);
                }
            }
            best.0
        })
        .collect()
}

/// Intersection of the two directional Viterbi alignments.
///
/// `forward` holds `t(target|source)` and `reverse` holds `t(source|target)`.
pub fn align_pair(pair: &SentencePair, forward: &TranslationTable, reverse: &TranslationTable) -> Alignment {
    let tgt_to_src = viterbi_links(&pair.source, &pair.target, forward);
    let src_to_tgt = viterbi_links(&pair.target, &pair.source, reverse);
    let links = tgt_to_src
        .iter()
        .enumerate()
        .filter_map(|(j, i)| i.map(|i| (i, j)))
        .filter(|&(i, j)| src_to_tgt[i] == Some(j));
    Alignment::new(links)
}

pub fn align_corpus(corpus: &ParallelCorpus, forward: &TranslationTable, reverse: &TranslationTable) -> Vec<Alignment> {
    corpus.pairs().iter().map(|p| align_pair(p, forward, reverse)).collect()
}

/// An alignment-consistent pair of sub-sentence spans.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PhrasePair {
    pub source: Vec<String>,
    pub target: Vec<String>,
    pub frequency: u64,
}

/// Every `(source span, target span)` with both lengths in `1..=max_len` that
/// contains at least one link and no link leaving the span pair.
pub fn consistent_spans(
    source_len: usize,
    target_len: usize,
    alignment: &Alignment,
    max_len: usize,
) -> Vec<(Range<usize>, Range<usize>)> {
    let mut aligned_target = vec![false; target_len];
    for &(_, j) in &alignment.links {
        aligned_target[j] = true;
    }
    let mut out = Vec::new();
    for s1 in 0..source_len {
        for s2 in s1..source_len.min(s1 + max_len) {
            let (mut tmin, mut tmax) = (usize::MAX, 0);
            for &(i, j) in &alignment.links {
                if (s1..=s2).contains(&i) {
                    tmin = tmin.min(j);
                    tmax = tmax.max(j);
                }
            }
            if tmin == usize::MAX || tmax - tmin + 1 > max_len {
                continue;
            }
            let leaks = alignment
                .links
                .iter()
                .any(|&(i, j)| (tmin..=tmax).contains(&j) && !(s1..=s2).contains(&i));
            if leaks {
                continue;
            }
            // Grow the target span over unaligned neighbours.
            let mut ts = tmin;
            loop {
                let mut te = tmax;
                loop {
                    if te - ts < max_len {
                        out.push((s1..s2 + 1, ts..te + 1));
                    }
                    te += 1;
                    if te >= target_len || aligned_target[te] || te - ts >= max_len {
                        break;
                    }
                }
                if ts == 0 || aligned_target[ts - 1] || tmax - (ts - 1) >= max_len {
                    break;
                }
                ts -= 1;
            }
        }
    }
    out
}

/// Phrase pairs of one sentence pair, each with frequency 1.
pub fn extract_phrases(pair: &SentencePair, alignment: &Alignment, max_len: usize) -> Vec<PhrasePair> {
    consistent_spans(pair.source.len(), pair.target.len(), alignment, max_len)
        .into_iter()
        .map(|(s, t)| PhrasePair {
            source: pair.source[s].to_vec(),
            target: pair.target[t].to_vec(),
            frequency: 1,
        })
        .collect()
}

/// Phrase pairs aggregated over the corpus, most frequent first.
pub fn extract_corpus_phrases(corpus: &ParallelCorpus, alignments: &[Alignment], max_len: usize) -> Vec<PhrasePair> {
    let mut freq: BTreeMap<(Vec<String>, Vec<String>), u64> = BTreeMap::new();
    for (pair, al) in corpus.pairs().iter().zip(alignments) {
        for pp in extract_phrases(pair, al, max_len) {
            *freq.entry((pp.source, pp.target)).or_default() += 1;
        }
    }
    let mut out: Vec<PhrasePair> = freq
        .into_iter()
        .map(|((source, target), frequency)| PhrasePair {
            source,
            target,
            frequency,
        })
        .collect();
    out.sort_by(|a, b| b.frequency.cmp(&a.frequency).then_with(|| (&a.source, &a.target).cmp(&(&b.source, &b.target))));
    out
}
