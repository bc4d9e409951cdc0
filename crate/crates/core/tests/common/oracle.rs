//! Independent reference implementations of the metrics.

use deskmt::bpe::MergeTable;
use deskmt::corpus::Vocabulary;
use deskmt::eval::{ClassArtifacts, WordClass};
use deskmt::lexicon::Dictionary;

/// Straight from the definition: explicit n-gram lists, matching each
/// hypothesis n-gram against a not-yet-used reference occurrence.
pub fn naive_bleu(hyps: &[Vec<String>], refs: &[Vec<String>]) -> f64 {
    let mut logs = 0.0;
    for n in 1..=4 {
        let (mut m, mut t) = (0usize, 0usize);
        for (h, r) in hyps.iter().zip(refs) {
            let hg: Vec<&[String]> = if h.len() >= n { h.windows(n).collect() } else { vec![] };
            let mut rg: Vec<Option<&[String]>> = if r.len() >= n { r.windows(n).map(Some).collect() } else { vec![] };
            t += hg.len();
            for g in hg {
                if let Some(slot) = rg.iter_mut().find(|s| **s == Some(g)) {
                    *slot = None;
                    m += 1;
                }
            }
        }
        if m == 0 {
            return 0.0;
        }
        logs += (m as f64 / t as f64).ln();
    }
    let c: usize = hyps.iter().map(Vec::len).sum();
    let r: usize = refs.iter().map(Vec::len).sum();
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    100.0 * bp * (logs / 4.0).exp()
}

pub struct Fixture {
    pub vocab: Vocabulary,
    pub merges: MergeTable,
    pub dict: Dictionary,
}

impl Fixture {
    pub fn new() -> Self {
        let vocab = Vocabulary::from_ranked(["the", "cat", "sat", "catalog"].iter().map(|w| (w.to_string(), 1)));
        let pairs = [("c", "a"), ("ca", "t</w>"), ("t", "h"), ("th", "e</w>"), ("s", "a")];
        let merges = MergeTable::new(pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect());
        let mut dict = Dictionary::default();
        dict.insert("hund", "dog", 0.9);
        dict.insert("haus", "house", 0.8);
        Fixture { vocab, merges, dict }
    }

    pub fn artifacts(&self) -> ClassArtifacts<'_> {
        ClassArtifacts {
            full_vocab: &self.vocab,
            merges: &self.merges,
            dictionary: &self.dict,
        }
    }
}

/// Pairs every hypothesis token with an unused identical reference token,
/// then tallies by class.
pub fn naive_class_counts(hyps: &[Vec<String>], refs: &[Vec<String>], srcs: &[Vec<String>], a: &ClassArtifacts<'_>) -> Vec<(u64, u64, u64)> {
    WordClass::ALL
        .iter()
        .map(|&c| {
            let (mut m, mut h_n, mut r_n) = (0, 0, 0);
            for ((h, r), s) in hyps.iter().zip(refs).zip(srcs) {
                let mut used = vec![false; r.len()];
                r_n += r.iter().filter(|t| a.classify(t, s) == c).count() as u64;
                for t in h.iter().filter(|t| a.classify(t, s) == c) {
                    h_n += 1;
                    if let Some(i) = (0..r.len()).find(|&i| !used[i] && &r[i] == t) {
                        used[i] = true;
                        m += 1;
                    }
                }
            }
            (m, h_n, r_n)
        })
        .collect()
}
