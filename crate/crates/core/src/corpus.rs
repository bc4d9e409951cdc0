//! Parallel corpus ingestion, full-word vocabularies, word-budget batching
//! and phrase-pair data bootstrapping.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::lexicon::PhrasePair;

pub const UNK: &str = "<unk>";
pub const EOS: &str = "</s>";
pub const UNK_ID: u32 = 0;
pub const EOS_ID: u32 = 1;

/// Sentences are dropped at load time when either side is longer than this.
pub const DEFAULT_MAX_LEN: usize = 100;
/// Vocabulary size of the full-word baseline, excluding reserved tokens.
pub const DEFAULT_VOCAB_LIMIT: usize = 50_000;
/// Mini-batch budget in target-side words.
pub const DEFAULT_BATCH_WORDS: usize = 512;
/// Shuffled sentences are length-sorted within buckets of this size.
pub const SORT_BUCKET: usize = 1000;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{source_lines} source lines but {target_lines} target lines")]
    LineCountMismatch {
        source_lines: usize,
        target_lines: usize,
    },
    #[error("{path}: line {line} is not valid UTF-8")]
    Utf8 { path: String, line: usize },
    #[error("cannot build a vocabulary from an empty corpus")]
    Empty,
    #[error("vocabulary file line {line}: {detail}")]
    VocabFormat { line: usize, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SentencePair {
    pub source: Vec<String>,
    pub target: Vec<String>,
}

impl SentencePair {
    pub fn new(source: &str, target: &str) -> Self {
        Self {
            source: tokenize(source),
            target: tokenize(target),
        }
    }
}

pub fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_string).collect()
}

/// Sentence pairs with no empty side.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParallelCorpus {
    pairs: Vec<SentencePair>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub read: usize,
    pub kept: usize,
    pub dropped: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Source,
    Target,
}

impl ParallelCorpus {
    /// Keeps every pair with two non-empty sides.
    pub fn new(pairs: Vec<SentencePair>) -> Self {
        Self {
            pairs: pairs
                .into_iter()
                .filter(|p| !p.source.is_empty() && !p.target.is_empty())
                .collect(),
        }
    }

    pub fn pairs(&self) -> &[SentencePair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn side(&self, side: Side) -> impl Iterator<Item = &[String]> {
        self.pairs.iter().map(move |p| match side {
            Side::Source => p.source.as_slice(),
            Side::Target => p.target.as_slice(),
        })
    }

    pub fn target_lengths(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.target.len()).collect()
    }

    /// Writes the two sides as one-sentence-per-line text.
    pub fn write(&self, source_path: &Path, target_path: &Path) -> Result<(), CorpusError> {
        let mut src = String::new();
        let mut tgt = String::new();
        for p in &self.pairs {
            src.push_str(&p.source.join(" "));
            src.push('\n');
            tgt.push_str(&p.target.join(" "));
            tgt.push('\n');
        }
        std::fs::write(source_path, src).map_err(io_err(source_path))?;
        std::fs::write(target_path, tgt).map_err(io_err(target_path))?;
        Ok(())
    }
}

impl FromIterator<SentencePair> for ParallelCorpus {
    fn from_iter<I: IntoIterator<Item = SentencePair>>(iter: I) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

fn split_lines<'a>(bytes: &'a [u8], name: &str) -> Result<Vec<&'a str>, CorpusError> {
    if bytes.is_empty() {
        return Ok(Vec::new());
    }
    let body = bytes.strip_suffix(b"\n").unwrap_or(bytes);
    body.split(|&b| b == b'\n')
        .enumerate()
        .map(|(i, line)| {
            let line = line.strip_suffix(b"\r").unwrap_or(line);
            std::str::from_utf8(line).map_err(|_| CorpusError::Utf8 {
                path: name.to_string(),
                line: i + 1,
            })
        })
        .collect()
}

/// Parses aligned source/target text, dropping pairs with an empty side or
/// a side longer than `max_len` words.
pub fn parse_parallel(
    source: &[u8],
    target: &[u8],
    max_len: usize,
) -> Result<(ParallelCorpus, LoadStats), CorpusError> {
    parse_named(source, "source", target, "target", max_len)
}

fn parse_named(
    source: &[u8],
    source_name: &str,
    target: &[u8],
    target_name: &str,
    max_len: usize,
) -> Result<(ParallelCorpus, LoadStats), CorpusError> {
    let src = split_lines(source, source_name)?;
    let tgt = split_lines(target, target_name)?;
    if src.len() != tgt.len() {
        return Err(CorpusError::LineCountMismatch {
            source_lines: src.len(),
            target_lines: tgt.len(),
        });
    }
    let mut pairs = Vec::with_capacity(src.len());
    for (s, t) in src.iter().zip(&tgt) {
        let pair = SentencePair::new(s, t);
        let ok = |side: &Vec<String>| !side.is_empty() && side.len() <= max_len;
        if ok(&pair.source) && ok(&pair.target) {
            pairs.push(pair);
        }
    }
    let stats = LoadStats {
        read: src.len(),
        kept: pairs.len(),
        dropped: src.len() - pairs.len(),
    };
    Ok((ParallelCorpus { pairs }, stats))
}

pub fn load_parallel(
    source_path: &Path,
    target_path: &Path,
    max_len: usize,
) -> Result<(ParallelCorpus, LoadStats), CorpusError> {
    let src = std::fs::read(source_path).map_err(io_err(source_path))?;
    let tgt = std::fs::read(target_path).map_err(io_err(target_path))?;
    parse_named(
        &src,
        &source_path.display().to_string(),
        &tgt,
        &target_path.display().to_string(),
        max_len,
    )
}

/// Reads a one-sentence-per-line monolingual file (test sources, references).
pub fn load_lines(path: &Path) -> Result<Vec<Vec<String>>, CorpusError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    Ok(split_lines(&bytes, &path.display().to_string())?
        .into_iter()
        .map(tokenize)
        .collect())
}

/// Word ↔ id mapping with reserved ids 0 (`<unk>`) and 1 (`</s>`).
///
/// Regular words follow in descending corpus frequency, ties broken
/// lexicographically.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary from `(word, count)` in id order after the
    /// reserved entries.
    pub fn from_ranked(entries: impl IntoIterator<Item = (String, u64)>) -> Self {
        let mut v = Vocabulary {
            words: vec![UNK.to_string(), EOS.to_string()],
            counts: vec![0, 0],
            index: HashMap::new(),
        };
        for (word, count) in entries {
            if word == UNK || word == EOS {
                continue;
            }
            v.words.push(word);
            v.counts.push(count);
        }
        v.index = v
            .words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        v
    }

    /// Ranks `counts` by descending frequency with lexicographic ties and keeps
    /// the first `limit` entries.
    pub fn from_counts(counts: &HashMap<String, u64>, limit: usize) -> Self {
        let mut ranked: Vec<(&String, &u64)> = counts
            .iter()
            .filter(|(w, _)| w.as_str() != UNK && w.as_str() != EOS)
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
        Self::from_ranked(ranked.into_iter().take(limit).map(|(w, c)| (w.clone(), *c)))
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    /// Id of `word`, or [`UNK_ID`] when out of vocabulary.
    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK_ID)
    }

    pub fn get(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: u32) -> &str {
        &self.words[id as usize]
    }

    pub fn count(&self, id: u32) -> u64 {
        self.counts[id as usize]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Ids for a sentence, without the sentence-end token.
    pub fn encode(&self, sentence: &[String]) -> Vec<u32> {
        sentence.iter().map(|w| self.id(w)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter().map(|&i| self.word(i).to_string()).collect()
    }

    /// `word<TAB>id<TAB>count`, sorted by id.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, (w, c)) in self.words.iter().zip(&self.counts).enumerate() {
            let _ = writeln!(out, "{w}\t{i}\t{c}");
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self, CorpusError> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split('\t').collect();
            let bad = |detail: &str| CorpusError::VocabFormat {
                line: n + 1,
                detail: detail.to_string(),
            };
            if fields.len() != 3 {
                return Err(bad("expected word<TAB>id<TAB>count"));
            }
            let id: usize = fields[1].parse().map_err(|_| bad("bad id"))?;
            let count: u64 = fields[2].parse().map_err(|_| bad("bad count"))?;
            if id != n {
                return Err(bad("ids must be dense and sorted"));
            }
            let reserved = match n {
                0 => Some(UNK),
                1 => Some(EOS),
                _ => None,
            };
            if let Some(r) = reserved {
                if fields[0] != r {
                    return Err(bad("reserved ids must be <unk> and </s>"));
                }
                continue;
            }
            entries.push((fields[0].to_string(), count));
        }
        Ok(Self::from_ranked(entries))
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        std::fs::write(path, self.to_tsv()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_tsv(&text)
    }

    /// Content hash of the TSV export.
    pub fn hash(&self) -> String {
        crate::util::sha256_hex(self.to_tsv().as_bytes())
    }
}

/// Token frequencies over `sentences`.
pub fn count_words<'a>(sentences: impl IntoIterator<Item = &'a [String]>) -> HashMap<String, u64> {
    let mut counts: HashMap<String, u64> = HashMap::new();
    for s in sentences {
        for w in s {
            *counts.entry(w.clone()).or_default() += 1;
        }
    }
    counts
}

/// Top-`limit` words of one corpus side plus the reserved tokens.
pub fn build_vocab(corpus: &ParallelCorpus, side: Side, limit: usize) -> Result<Vocabulary, CorpusError> {
    assert!(limit >= 1, "vocabulary limit must be at least 1");
    if corpus.is_empty() {
        return Err(CorpusError::Empty);
    }
    Ok(Vocabulary::from_counts(&count_words(corpus.side(side)), limit))
}

/// Indices of corpus pairs packed under a target-word budget.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub indices: Vec<usize>,
    /// Target words including one sentence-end per sentence.
    pub word_count: usize,
}

/// Greedily packs sentences in the given order: a sentence joins the current
/// batch while the batch's target word count stays within `budget`; an
/// over-budget sentence forms its own batch.
pub fn pack_batches(target_lengths: &[usize], order: &[usize], budget: usize) -> Vec<Batch> {
    assert!(budget >= 1, "batch budget must be at least 1");
    let mut batches = Vec::new();
    let mut current = Batch {
        indices: Vec::new(),
        word_count: 0,
    };
    for &i in order {
        let words = target_lengths[i] + 1;
        if !current.indices.is_empty() && current.word_count + words > budget {
            batches.push(std::mem::replace(
                &mut current,
                Batch {
                    indices: Vec::new(),
                    word_count: 0,
                },
            ));
        }
        current.indices.push(i);
        current.word_count += words;
    }
    if !current.indices.is_empty() {
        batches.push(current);
    }
    batches
}

/// Shuffle by `seed`, sort by target length within buckets of
/// [`SORT_BUCKET`], then pack with [`pack_batches`].
pub fn make_batches_by_lengths(target_lengths: &[usize], budget: usize, seed: u64) -> Vec<Batch> {
    let mut order: Vec<usize> = (0..target_lengths.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    for bucket in order.chunks_mut(SORT_BUCKET) {
        bucket.sort_by_key(|&i| target_lengths[i]);
    }
    pack_batches(target_lengths, &order, budget)
}

pub fn make_batches(corpus: &ParallelCorpus, budget: usize, seed: u64) -> Vec<Batch> {
    make_batches_by_lengths(&corpus.target_lengths(), budget, seed)
}

/// Appends extracted phrase pairs as extra sentence pairs.
///
/// Duplicates are merged (their frequencies summed); at most `max_added`
/// pairs are added, most frequent first with lexicographic ties.
pub fn bootstrap_corpus(corpus: &ParallelCorpus, phrase_pairs: &[PhrasePair], max_added: usize) -> ParallelCorpus {
    let mut merged: BTreeMap<(&[String], &[String]), u64> = BTreeMap::new();
    for pp in phrase_pairs {
        *merged.entry((&pp.source, &pp.target)).or_default() += pp.frequency;
    }
    let mut ranked: Vec<_> = merged.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut pairs = corpus.pairs.clone();
    pairs.extend(ranked.into_iter().take(max_added).map(|((s, t), _)| SentencePair {
        source: s.to_vec(),
        target: t.to_vec(),
    }));
    ParallelCorpus::new(pairs)
}
