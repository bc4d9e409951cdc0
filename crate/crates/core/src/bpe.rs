//! Joint byte pair encoding: merge learning, word segmentation, singleton
//! piece handling and piece-to-word reversal.
//!
//! Words are represented as their characters with the end-of-word marker
//! [`END`] fused onto the final character, so `low` starts as
//! `["l", "o", "w</w>"]`. Merge learning counts adjacent symbol pairs weighted
//! by word frequency and repeatedly fuses the most frequent pair; ties go to
//! the lexicographically smaller `(left, right)` pair.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use thiserror::Error;

use crate::corpus::{ParallelCorpus, UNK};

pub const END: &str = "</w>";
/// Stand-in for a mapped piece that ended a word.
pub const UNK_FINAL: &str = "<unk></w>";

/// Merge operation counts used for the reference systems.
pub const RECOMMENDED_MERGES: usize = 32_000;
pub const SMALL_DATA_MERGES: usize = 16_000;

#[derive(Debug, Error)]
pub enum BpeError {
    #[error("cannot learn merges from an empty corpus")]
    Empty,
    #[error("merges file line {line}: {detail}")]
    Format { line: usize, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BpeError + '_ {
    move |source| BpeError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Ordered merge operations; a merge's position is its priority.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MergeTable {
    merges: Vec<(String, String)>,
    rank: HashMap<(String, String), usize>,
}

impl MergeTable {
    pub fn new(merges: Vec<(String, String)>) -> Self {
        let rank = merges
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), i))
            .collect::<HashMap<_, _>>();
        assert_eq!(rank.len(), merges.len(), "merge pairs must be unique");
        Self { merges, rank }
    }

    pub fn len(&self) -> usize {
        self.merges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.merges.is_empty()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn rank(&self, left: &str, right: &str) -> Option<usize> {
        // Avoids allocating a key for the common miss.
        self.rank.get(&(left.to_string(), right.to_string())).copied()
    }

    /// First `n` merges.
    pub fn truncated(&self, n: usize) -> Self {
        Self::new(self.merges[..n.min(self.merges.len())].to_vec())
    }

    /// `#bpe v1 <count>` header followed by `left right` per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("#bpe v1 {}\n", self.merges.len());
        for (l, r) in &self.merges {
            let _ = writeln!(out, "{l} {r}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, BpeError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or(BpeError::Format {
            line: 1,
            detail: "missing header".into(),
        })?;
        let count: usize = header
            .strip_prefix("#bpe v1 ")
            .and_then(|n| n.trim().parse().ok())
            .ok_or(BpeError::Format {
                line: 1,
                detail: format!("expected '#bpe v1 <num_ops>', got {header:?}"),
            })?;
        let mut merges = Vec::with_capacity(count);
        let mut seen = BTreeSet::new();
        for (i, line) in lines.enumerate() {
            let mut parts = line.split(' ');
            let (Some(l), Some(r), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(BpeError::Format {
                    line: i + 2,
                    detail: "expected 'left right'".into(),
                });
            };
            if l.is_empty() || r.is_empty() || !seen.insert((l.to_string(), r.to_string())) {
                return Err(BpeError::Format {
                    line: i + 2,
                    detail: "empty or duplicate merge".into(),
                });
            }
            merges.push((l.to_string(), r.to_string()));
        }
        if merges.len() != count {
            return Err(BpeError::Format {
                line: 1,
                detail: format!("header announces {count} merges, found {}", merges.len()),
            });
        }
        Ok(Self::new(merges))
    }

    pub fn save(&self, path: &Path) -> Result<(), BpeError> {
        std::fs::write(path, self.to_text()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self, BpeError> {
        Self::from_text(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }
}

/// Initial symbols of a word: its characters, the last one carrying [`END`].
pub fn word_symbols(word: &str) -> Vec<String> {
    let mut syms: Vec<String> = word.chars().map(String::from).collect();
    if let Some(last) = syms.last_mut() {
        last.push_str(END);
    }
    syms
}

/// Word frequencies over the concatenation of both corpus sides.
pub fn joint_word_counts(corpus: &ParallelCorpus) -> BTreeMap<String, u64> {
    let mut counts = BTreeMap::new();
    for p in corpus.pairs() {
        for w in p.source.iter().chain(&p.target) {
            *counts.entry(w.clone()).or_default() += 1;
        }
    }
    counts
}

type Pair = (u32, u32);

struct Symbols {
    names: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Symbols {
    fn intern(&mut self, s: &str) -> u32 {
        if let Some(&id) = self.ids.get(s) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(s.to_string());
        self.ids.insert(s.to_string(), id);
        id
    }
}

fn merge_in_place(word: &[u32], pair: Pair, merged: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(word.len());
    let mut i = 0;
    while i < word.len() {
        if i + 1 < word.len() && word[i] == pair.0 && word[i + 1] == pair.1 {
            out.push(merged);
            i += 2;
        } else {
            out.push(word[i]);
            i += 1;
        }
    }
    out
}

/// Learns up to `num_ops` merges with incremental pair-count updates.
///
/// Stops early once no pair occurs at least twice.
pub fn learn_merges(word_counts: &BTreeMap<String, u64>, num_ops: usize) -> Result<MergeTable, BpeError> {
    if word_counts.is_empty() {
        return Err(BpeError::Empty);
    }
    let mut syms = Symbols {
        names: Vec::new(),
        ids: HashMap::new(),
    };
    let mut words: Vec<(Vec<u32>, i64)> = word_counts
        .iter()
        .map(|(w, &c)| {
            let ids = word_symbols(w).iter().map(|s| syms.intern(s)).collect();
            (ids, c as i64)
        })
        .collect();

    let mut counts: HashMap<Pair, i64> = HashMap::new();
    let mut occurs: HashMap<Pair, BTreeSet<usize>> = HashMap::new();
    for (idx, (w, f)) in words.iter().enumerate() {
        for win in w.windows(2) {
            let p = (win[0], win[1]);
            *counts.entry(p).or_default() += f;
            occurs.entry(p).or_default().insert(idx);
        }
    }
    // Highest count first, then lexicographically smallest pair.
    let key = |syms: &Symbols, p: Pair, c: i64| (Reverse(c), syms.names[p.0 as usize].clone(), syms.names[p.1 as usize].clone(), p);
    let mut queue: BTreeSet<(Reverse<i64>, String, String, Pair)> =
        counts.iter().filter(|(_, &c)| c > 0).map(|(&p, &c)| key(&syms, p, c)).collect();

    let mut merges = Vec::new();
    while merges.len() < num_ops {
        let Some((Reverse(best), l, r, pair)) = queue.pop_first() else {
            break;
        };
        if best < 2 {
            break;
        }
        let merged = syms.intern(&format!("{l}{r}"));
        merges.push((l, r));

        let mut touched: HashMap<Pair, i64> = HashMap::new();
        let affected: Vec<usize> = occurs.remove(&pair).map(|s| s.into_iter().collect()).unwrap_or_default();
        for idx in affected {
            let (old, f) = (&words[idx].0, words[idx].1);
            if !old.windows(2).any(|w| (w[0], w[1]) == pair) {
                continue;
            }
            let new = merge_in_place(old, pair, merged);
            for win in old.windows(2) {
                let p = (win[0], win[1]);
                let c = counts.get_mut(&p).expect("counted pair");
                touched.entry(p).or_insert(*c);
                *c -= f;
            }
            for win in new.windows(2) {
                let p = (win[0], win[1]);
                let c = counts.entry(p).or_default();
                touched.entry(p).or_insert(*c);
                *c += f;
                occurs.entry(p).or_default().insert(idx);
            }
            words[idx].0 = new;
        }
        for (p, old_count) in touched {
            if p != pair && old_count > 0 {
                queue.remove(&key(&syms, p, old_count));
            }
            let c = counts[&p];
            if c > 0 && p != pair {
                queue.insert(key(&syms, p, c));
            }
        }
        counts.remove(&pair);
    }
    Ok(MergeTable::new(merges))
}

/// Reference learner that recounts every pair after each merge. Slow, but
/// shares no bookkeeping with [`learn_merges`].
pub fn learn_merges_recount(word_counts: &BTreeMap<String, u64>, num_ops: usize) -> Result<MergeTable, BpeError> {
    if word_counts.is_empty() {
        return Err(BpeError::Empty);
    }
    let mut words: Vec<(Vec<String>, u64)> =
        word_counts.iter().map(|(w, &c)| (word_symbols(w), c)).collect();
    let mut merges = Vec::new();
    while merges.len() < num_ops {
        let mut counts: BTreeMap<(String, String), u64> = BTreeMap::new();
        for (w, f) in &words {
            for win in w.windows(2) {
                *counts.entry((win[0].clone(), win[1].clone())).or_default() += f;
            }
        }
        // BTreeMap iterates pairs in lexicographic order, so the first
        // maximum wins ties.
        let mut best: Option<(&(String, String), u64)> = None;
        for (p, &c) in &counts {
            if best.is_none_or(|(_, bc)| c > bc) {
                best = Some((p, c));
            }
        }
        let Some(((l, r), c)) = best else { break };
        if c < 2 {
            break;
        }
        let (l, r) = (l.clone(), r.clone());
        let fused = format!("{l}{r}");
        for (w, _) in words.iter_mut() {
            let mut out = Vec::with_capacity(w.len());
            let mut i = 0;
            while i < w.len() {
                if i + 1 < w.len() && w[i] == l && w[i + 1] == r {
                    out.push(fused.clone());
                    i += 2;
                } else {
                    out.push(w[i].clone());
                    i += 1;
                }
            }
            *w = out;
        }
        merges.push((l, r));
    }
    Ok(MergeTable::new(merges))
}

/// Segments one word by repeatedly applying the lowest-ranked applicable
/// merge until none applies.
pub fn encode_word(word: &str, merges: &MergeTable) -> Vec<String> {
    let mut syms = word_symbols(word);
    loop {
        let best = syms
            .windows(2)
            .filter_map(|w| merges.rank(&w[0], &w[1]).map(|r| (r, w[0].clone(), w[1].clone())))
            .min();
        let Some((_, l, r)) = best else { break };
        let mut out = Vec::with_capacity(syms.len());
        let mut i = 0;
        while i < syms.len() {
            if i + 1 < syms.len() && syms[i] == l && syms[i + 1] == r {
                out.push(format!("{l}{r}"));
                i += 2;
            } else {
                out.push(std::mem::take(&mut syms[i]));
                i += 1;
            }
        }
        syms = out;
    }
    syms
}

/// Memoizing word segmenter.
pub struct Segmenter<'a> {
    merges: &'a MergeTable,
    cache: HashMap<String, Vec<String>>,
}

impl<'a> Segmenter<'a> {
    pub fn new(merges: &'a MergeTable) -> Self {
        Self {
            merges,
            cache: HashMap::new(),
        }
    }

    pub fn word(&mut self, word: &str) -> &[String] {
        if !self.cache.contains_key(word) {
            let pieces = encode_word(word, self.merges);
            self.cache.insert(word.to_string(), pieces);
        }
        &self.cache[word]
    }

    pub fn sentence(&mut self, words: &[String]) -> Vec<String> {
        let mut out = Vec::new();
        for w in words {
            out.extend_from_slice(self.word(w));
        }
        out
    }
}

/// Piece frequencies in the encoded training corpus.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PieceVocab {
    counts: BTreeMap<String, u64>,
}

impl PieceVocab {
    pub fn from_encoded<'a>(sentences: impl IntoIterator<Item = &'a [String]>) -> Self {
        let mut counts = BTreeMap::new();
        for s in sentences {
            for p in s {
                *counts.entry(p.clone()).or_default() += 1;
            }
        }
        Self { counts }
    }

    /// Encodes every word of `sentences` and counts the pieces.
    pub fn build(sentences: &[Vec<String>], merges: &MergeTable) -> Self {
        let mut seg = Segmenter::new(merges);
        let encoded: Vec<Vec<String>> = sentences.iter().map(|s| seg.sentence(s)).collect();
        Self::from_encoded(encoded.iter().map(Vec::as_slice))
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn count(&self, piece: &str) -> u64 {
        self.counts.get(piece).copied().unwrap_or(0)
    }

    pub fn contains(&self, piece: &str) -> bool {
        self.counts.contains_key(piece)
    }

    pub fn is_singleton(&self, piece: &str) -> bool {
        self.count(piece) == 1
    }

    pub fn singletons(&self) -> impl Iterator<Item = &str> {
        self.counts.iter().filter(|(_, &c)| c == 1).map(|(p, _)| p.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.counts.iter().map(|(p, &c)| (p.as_str(), c))
    }

    /// `piece<TAB>count`, one per line in piece order.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (p, c) in &self.counts {
            let _ = writeln!(out, "{p}\t{c}");
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self, BpeError> {
        let mut counts = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let (p, c) = line.split_once('\t').ok_or(BpeError::Format {
                line: i + 1,
                detail: "expected piece<TAB>count".into(),
            })?;
            let c: u64 = c.parse().map_err(|_| BpeError::Format {
                line: i + 1,
                detail: "bad count".into(),
            })?;
            counts.insert(p.to_string(), c);
        }
        Ok(Self { counts })
    }
}

/// Replacement for a piece the model cannot represent; keeps the word
/// boundary so decoding still splits words correctly.
pub fn unk_piece(piece: &str) -> &'static str {
    if piece.ends_with(END) {
        UNK_FINAL
    } else {
        UNK
    }
}

pub fn is_unk_piece(piece: &str) -> bool {
    piece == UNK || piece == UNK_FINAL
}

/// Replaces each word by its pieces. With `map_singletons`, pieces that are
/// singletons in `piece_vocab` or absent from it become unk pieces.
pub fn encode_corpus(
    sentences: &[Vec<String>],
    merges: &MergeTable,
    piece_vocab: &PieceVocab,
    map_singletons: bool,
) -> Vec<Vec<String>> {
    let mut seg = Segmenter::new(merges);
    sentences
        .iter()
        .map(|s| {
            let pieces = seg.sentence(s);
            if !map_singletons {
                return pieces;
            }
            pieces
                .into_iter()
                .map(|p| {
                    if piece_vocab.count(&p) <= 1 {
                        unk_piece(&p).to_string()
                    } else {
                        p
                    }
                })
                .collect()
        })
        .collect()
}

/// Words reassembled from pieces.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DecodedWords {
    pub words: Vec<String>,
    /// Piece index range of each word.
    pub spans: Vec<Range<usize>>,
    /// Set when trailing pieces had no end-of-word marker.
    pub malformed: bool,
}

/// Concatenates pieces, closing a word at every end-of-word marker.
///
/// A word built from any unk piece comes out as `<unk>`; trailing pieces with
/// no final marker are flushed as a word and flagged.
pub fn decode_pieces_detailed<S: AsRef<str>>(pieces: &[S]) -> DecodedWords {
    let mut out = DecodedWords::default();
    let mut current = String::new();
    let mut has_unk = false;
    let mut start = 0;
    for (i, piece) in pieces.iter().enumerate() {
        let piece = piece.as_ref();
        has_unk |= is_unk_piece(piece);
        let done = match piece.strip_suffix(END) {
            Some(stem) => {
                current.push_str(stem);
                true
            }
            None => {
                current.push_str(piece);
                false
            }
        };
        if done {
            let word = std::mem::take(&mut current);
            out.words.push(if has_unk { UNK.to_string() } else { word });
            out.spans.push(start..i + 1);
            has_unk = false;
            start = i + 1;
        }
    }
    if start < pieces.len() {
        out.words.push(if has_unk { UNK.to_string() } else { current });
        out.spans.push(start..pieces.len());
        out.malformed = true;
    }
    out
}

pub fn decode_pieces<S: AsRef<str>>(pieces: &[S]) -> Vec<String> {
    decode_pieces_detailed(pieces).words
}
