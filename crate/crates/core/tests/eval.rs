mod common;

use common::oracle::*;
use deskmt::corpus::tokenize;
use deskmt::eval::*;
use proptest::prelude::*;

fn lines(v: &[&str]) -> Vec<Vec<String>> {
    v.iter().map(|s| tokenize(s)).collect()
}

#[test]
fn word_classes() {
    let f = Fixture::new();
    let a = f.artifacts();
    let source = tokenize("der hund Zurich");
    let reference = tokenize("the cat sat catalog dog house Zurich Bern");
    use WordClass::*;
    assert_eq!(
        classify_reference_words(&reference, &source, &a),
        vec![Full, Full, Split, Split, Dict, OovT, OovP, OovT]
    );
}

#[test]
fn perfect_output_has_unit_f1_everywhere_supported() {
    let f = Fixture::new();
    let refs = lines(&["the cat dog Zurich", "catalog house Bern"]);
    let srcs = lines(&["hund Zurich", "haus"]);
    let r = classwise_f1(&refs, &refs, &srcs, &f.artifacts()).unwrap();
    for c in &r.classes {
        if c.support > 0 {
            assert_eq!(c.f1, 1.0, "{:?}", c.class);
        }
    }
    assert!(classwise_f1(&refs, &refs[..1], &srcs, &f.artifacts()).is_err());
}

const WORDS: [&str; 10] = ["the", "cat", "sat", "catalog", "dog", "house", "Zurich", "Bern", "hund", "x"];

fn sentence() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(0..WORDS.len(), 0..8).prop_map(|v| v.into_iter().map(|i| WORDS[i].to_string()).collect())
}

fn nonempty_sentence() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(0..WORDS.len(), 1..8).prop_map(|v| v.into_iter().map(|i| WORDS[i].to_string()).collect())
}

proptest! {
    #[test]
    fn classwise_counts_match_oracle(
        rows in prop::collection::vec((sentence(), sentence(), sentence()), 1..6),
    ) {
        let f = Fixture::new();
        let a = f.artifacts();
        let hyps: Vec<_> = rows.iter().map(|r| r.0.clone()).collect();
        let refs: Vec<_> = rows.iter().map(|r| r.1.clone()).collect();
        let srcs: Vec<_> = rows.iter().map(|r| r.2.clone()).collect();
        let report = classwise_f1(&hyps, &refs, &srcs, &a).unwrap();
        let oracle = naive_class_counts(&hyps, &refs, &srcs, &a);
        let total: u64 = report.classes.iter().map(|c| c.support).sum();
        prop_assert_eq!(total as usize, refs.iter().map(Vec::len).sum::<usize>());
        for (c, (m, h, r)) in report.classes.iter().zip(oracle) {
            prop_assert_eq!((c.matches, c.hyp_count, c.support), (m, h, r));
            prop_assert!((0.0..=1.0).contains(&c.f1));
        }
    }

    #[test]
    fn bleu_matches_oracle_and_bounds(
        rows in prop::collection::vec((nonempty_sentence(), nonempty_sentence()), 1..5),
    ) {
        let hyps: Vec<_> = rows.iter().map(|r| r.0.clone()).collect();
        let refs: Vec<_> = rows.iter().map(|r| r.1.clone()).collect();
        let b = bleu(&hyps, &refs).unwrap();
        prop_assert!((b.score - naive_bleu(&hyps, &refs)).abs() < 1e-9);
        prop_assert!((0.0..=100.0).contains(&b.score));
        prop_assert!(b.brevity_penalty <= 1.0);
        let mut rh = hyps.clone();
        let mut rr = refs.clone();
        rh.reverse();
        rr.reverse();
        prop_assert!((bleu(&rh, &rr).unwrap().score - b.score).abs() < 1e-9);
        if refs.iter().any(|r| r.len() >= 4) {
            prop_assert!((bleu(&refs, &refs).unwrap().score - 100.0).abs() < 1e-9);
        }
    }

    #[test]
    fn coverage_is_monotone(corpus in prop::collection::vec(sentence(), 1..6), limit in 0usize..12) {
        let c = vocab_coverage(&corpus, limit);
        for w in c.curve.windows(2) {
            prop_assert!(w[0].cumulative <= w[1].cumulative);
            prop_assert!(w[0].frequency >= w[1].frequency);
        }
        prop_assert!((0.0..=1.0).contains(&c.coverage_at_limit));
        if c.tokens > 0 {
            prop_assert!((c.curve.last().unwrap().cumulative - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn run_mean_ignores_order(mut scores in prop::collection::vec(0.0f64..100.0, 1..6)) {
        let a = average_runs(&scores).unwrap().mean;
        scores.reverse();
        prop_assert_eq!(a, average_runs(&scores).unwrap().mean);
    }
}

#[test]
fn report_renders_all_blocks() {
    let f = Fixture::new();
    let refs = lines(&["the cat sat on the mat"]);
    let hyps = lines(&["the cat sat on a mat"]);
    let report = EvalReport {
        bleu: Some(bleu(&hyps, &refs).unwrap()),
        classes: Some(classwise_f1(&hyps, &refs, &lines(&["x"]), &f.artifacts()).unwrap()),
        coverage: vec![("target".into(), vocab_coverage(&refs, 3))],
        runs: Some(average_runs(&[1.0, 2.0]).unwrap()),
    };
    let tsv = report.to_tsv();
    for block in ["# bleu", "# runs", "# classes", "# coverage target"] {
        assert!(tsv.contains(block), "{block}");
    }
    let back: EvalReport = serde_json::from_str(&report.to_json()).unwrap();
    assert_eq!(back, report);
}
