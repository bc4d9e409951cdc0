//! Synthetic corpora shared by the integration tests.

#![allow(dead_code)]

use std::path::Path;

use deskmt::cli::config::{DataConfig, ModelDims, RunConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub mod oracle;

pub type Pairs = Vec<(String, String)>;

/// Source and target word lists where target word `i` translates source word `i`.
pub fn lexicon(n: usize) -> (Vec<String>, Vec<String>) {
    ((0..n).map(|i| format!("s{i}")).collect(), (0..n).map(|i| format!("t{i}")).collect())
}

/// Monotone word-for-word translation over a small lexicon.
pub fn word_mapping(n: usize, words: usize, max_len: usize, seed: u64) -> Pairs {
    let (src, tgt) = lexicon(words);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.gen_range(2..=max_len);
            let ids: Vec<usize> = (0..len).map(|_| rng.gen_range(0..words)).collect();
            let s: Vec<&str> = ids.iter().map(|&i| src[i].as_str()).collect();
            let t: Vec<&str> = ids.iter().map(|&i| tgt[i].as_str()).collect();
            (s.join(" "), t.join(" "))
        })
        .collect()
}

pub fn write_pairs(dir: &Path, name: &str, pairs: &[(String, String)]) {
    let mut s = String::new();
    let mut t = String::new();
    for (a, b) in pairs {
        s.push_str(a);
        s.push('\n');
        t.push_str(b);
        t.push('\n');
    }
    std::fs::write(dir.join(format!("{name}.src")), s).unwrap();
    std::fs::write(dir.join(format!("{name}.tgt")), t).unwrap();
}

/// Writes train/dev/test files for a word-mapping task into `dir`.
pub fn toy_data(dir: &Path) -> DataConfig {
    std::fs::create_dir_all(dir).unwrap();
    write_pairs(dir, "train", &word_mapping(60, 8, 4, 1));
    write_pairs(dir, "dev", &word_mapping(8, 8, 4, 2));
    write_pairs(dir, "test", &word_mapping(6, 8, 4, 3));
    DataConfig::in_dir(dir)
}

/// A vanilla config small enough to run in seconds.
pub fn tiny_config(data: DataConfig) -> RunConfig {
    let mut c = RunConfig::vanilla(data);
    c.model = ModelDims {
        embed: 8,
        hidden: 8,
        attention: 8,
    };
    c.train.rate = Some(0.01);
    c.train.patience = 2;
    c.train.eval_intervals = vec![30];
    c.train.batch_words = 40;
    c.train.max_evals_per_run = Some(4);
    c.decode.beam = 2;
    c
}

/// Words are a stem plus a suffix, stems drawn with Zipf weights so most
/// types are rare; the target side is a letter-for-letter cipher of the
/// source, so subword pieces translate compositionally.
pub struct Morphology {
    stems: Vec<String>,
    suffixes: Vec<String>,
    weights: Vec<f64>,
}

pub const SOURCE_LETTERS: &str = "abcdefghijkl";
pub const TARGET_LETTERS: &str = "nopqrstuvwxy";

pub fn cipher(word: &str) -> String {
    word.chars()
        .map(|c| match SOURCE_LETTERS.find(c) {
            Some(i) => TARGET_LETTERS.as_bytes()[i] as char,
            None => c,
        })
        .collect()
}

impl Morphology {
    pub fn new(stems: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let letters: Vec<char> = SOURCE_LETTERS.chars().collect();
        let mut seen = std::collections::BTreeSet::new();
        let mut list = Vec::new();
        while list.len() < stems {
            let len = rng.gen_range(2..=4);
            let s: String = (0..len).map(|_| letters[rng.gen_range(0..letters.len())]).collect();
            if seen.insert(s.clone()) {
                list.push(s);
            }
        }
        Self {
            stems: list,
            suffixes: ["a", "ek", "il", "eb", "gal", "ci"].iter().map(|s| s.to_string()).collect(),
            weights: (1..=stems).map(|r| 1.0 / r as f64).collect(),
        }
    }

    pub fn word(&self, rng: &mut ChaCha8Rng) -> String {
        let total: f64 = self.weights.iter().sum();
        let mut x = rng.gen_range(0.0..total);
        let mut stem = self.stems.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            if x < *w {
                stem = i;
                break;
            }
            x -= w;
        }
        let suffix = &self.suffixes[rng.gen_range(0..self.suffixes.len())];
        format!("{}{suffix}", self.stems[stem])
    }

    pub fn pairs(&self, n: usize, seed: u64) -> Pairs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let len = rng.gen_range(3..=5);
                let words: Vec<String> = (0..len).map(|_| self.word(&mut rng)).collect();
                let target: Vec<String> = words.iter().map(|w| cipher(w)).collect();
                (words.join(" "), target.join(" "))
            })
            .collect()
    }
}
