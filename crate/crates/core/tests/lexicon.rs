use std::collections::BTreeSet;

use deskmt::corpus::{ParallelCorpus, SentencePair};
use deskmt::lexicon::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_corpus(rng: &mut ChaCha8Rng) -> ParallelCorpus {
    let n = rng.gen_range(1..6);
    (0..n)
        .map(|_| {
            let side = |rng: &mut ChaCha8Rng, alphabet: &[&str]| {
                let len = rng.gen_range(1..5);
                (0..len)
                    .map(|_| alphabet[rng.gen_range(0..alphabet.len())])
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            let s = side(rng, &["a", "b", "c", "d"]);
            let t = side(rng, &["w", "x", "y", "z"]);
            SentencePair::new(&s, &t)
        })
        .collect()
}

#[test]
fn em_log_likelihood_never_decreases() {
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let corpus = random_corpus(&mut rng);
        let mut prev = f64::NEG_INFINITY;
        for iters in 1..=8 {
            let table = learn_model1(&corpus, iters).unwrap();
            let ll = corpus_log_likelihood(&table, &corpus);
            assert!(ll >= prev - 1e-9, "seed {seed}, iteration {iters}: {ll} < {prev}");
            prev = ll;
        }
        let (_, trace) = learn_model1_traced(&corpus, 8).unwrap();
        assert!(trace.windows(2).all(|w| w[1] >= w[0] - 1e-9), "seed {seed}: {trace:?}");
    }
}

#[test]
fn traced_likelihood_matches_independent_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let corpus = random_corpus(&mut rng);
    let (_, trace) = learn_model1_traced(&corpus, 4).unwrap();
    for k in 1..4 {
        let table = learn_model1(&corpus, k).unwrap();
        assert!((corpus_log_likelihood(&table, &corpus) - trace[k]).abs() < 1e-9);
    }
}

#[test]
fn dictionary_is_argmax_function() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let corpus = random_corpus(&mut rng);
    let table = learn_model1(&corpus, 5).unwrap();
    let dict = extract_dictionary(&table, 0.0);
    let seen: BTreeSet<&str> = corpus.pairs().iter().flat_map(|p| p.source.iter().map(String::as_str)).collect();
    assert_eq!(dict.len(), seen.len());
    for (s, t, p) in dict.entries() {
        assert!(seen.contains(s));
        let row = table.row(s).unwrap();
        assert!(row.values().all(|&q| q <= p));
        assert_eq!(table.prob(s, t), p);
    }
}

fn brute_force(src_len: usize, tgt_len: usize, links: &BTreeSet<(usize, usize)>, max_len: usize) -> BTreeSet<(usize, usize, usize, usize)> {
    let mut out = BTreeSet::new();
    for s1 in 0..src_len {
        for s2 in s1..src_len {
            for t1 in 0..tgt_len {
                for t2 in t1..tgt_len {
                    if s2 - s1 + 1 > max_len || t2 - t1 + 1 > max_len {
                        continue;
                    }
                    let in_s = |i: usize| s1 <= i && i <= s2;
                    let in_t = |j: usize| t1 <= j && j <= t2;
                    let internal = links.iter().any(|&(i, j)| in_s(i) && in_t(j));
                    let leaving = links.iter().any(|&(i, j)| in_s(i) != in_t(j));
                    if internal && !leaving {
                        out.insert((s1, s2 + 1, t1, t2 + 1));
                    }
                }
            }
        }
    }
    out
}

fn alignment_case() -> impl Strategy<Value = (usize, usize, BTreeSet<(usize, usize)>, usize)> {
    (1usize..7, 1usize..7).prop_flat_map(|(s, t)| {
        (
            Just(s),
            Just(t),
            prop::collection::btree_set((0..s, 0..t), 0..8),
            1usize..5,
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn phrase_spans_match_brute_force((s, t, links, max_len) in alignment_case()) {
        let al = Alignment { links: links.clone() };
        let fast: Vec<_> = consistent_spans(s, t, &al, max_len)
            .into_iter()
            .map(|(a, b)| (a.start, a.end, b.start, b.end))
            .collect();
        let unique: BTreeSet<_> = fast.iter().copied().collect();
        prop_assert_eq!(unique.len(), fast.len());
        prop_assert_eq!(unique, brute_force(s, t, &links, max_len));
    }

    #[test]
    fn extracted_phrases_respect_length((s, t, links, max_len) in alignment_case()) {
        let src: Vec<String> = (0..s).map(|i| format!("s{i}")).collect();
        let tgt: Vec<String> = (0..t).map(|j| format!("t{j}")).collect();
        let pair = SentencePair::new(&src.join(" "), &tgt.join(" "));
        for pp in extract_phrases(&pair, &Alignment { links }, max_len) {
            prop_assert!((1..=max_len).contains(&pp.source.len()));
            prop_assert!((1..=max_len).contains(&pp.target.len()));
        }
    }
}

#[test]
fn alignments_stay_in_bounds() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let corpus = random_corpus(&mut rng);
        let f = learn_model1(&corpus, 5).unwrap();
        let r = learn_model1(&reversed(&corpus), 5).unwrap();
        for (pair, al) in corpus.pairs().iter().zip(align_corpus(&corpus, &f, &r)) {
            for &(i, j) in &al.links {
                assert!(i < pair.source.len() && j < pair.target.len());
            }
        }
    }
}
