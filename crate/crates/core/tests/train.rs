use deskmt::autodiff::{Array, ParamSet};
use deskmt::model::{Model, ModelConfig};
use deskmt::train::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(v: usize) -> ModelConfig {
    ModelConfig {
        source_vocab: v,
        target_vocab: v,
        embed: 8,
        hidden: 8,
        attention: 8,
        dropout: 0.0,
        lexicon_epsilon: None,
        seed: 1,
    }
}

/// Target equals source over ids 2..v.
fn copy_task(n: usize, v: u32, max_len: usize, seed: u64) -> Vec<EncodedPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.gen_range(1..=max_len);
            let s: Vec<u32> = (0..len).map(|_| rng.gen_range(2..v)).collect();
            (s.clone(), s)
        })
        .collect()
}

fn quick(kind: OptimizerKind, max_runs: usize) -> TrainConfig {
    TrainConfig {
        batch_words: 40,
        seed: 3,
        max_evals_per_run: Some(25),
        ..TrainConfig::new(
            kind,
            AnnealConfig {
                max_runs,
                patience: 2,
                eval_intervals: vec![20, 10],
            },
        )
    }
}

#[test]
fn adam_halves_twice_over_three_runs() {
    let data = copy_task(40, 6, 3, 1);
    let out = train_run(Model::new(config(6)).unwrap(), &data, &data[..10], &quick(OptimizerKind::Adam, 3), |_| {}).unwrap();
    assert_eq!(out.log.rates(), vec![0.0002, 0.0001, 0.00005]);
    assert_eq!(out.log.entries.last().unwrap().action, Action::Stop);
}

#[test]
fn sgd_halves_four_times_over_five_runs() {
    let data = copy_task(40, 6, 3, 2);
    let out = train_run(Model::new(config(6)).unwrap(), &data, &data[..10], &quick(OptimizerKind::Sgd, 5), |_| {}).unwrap();
    let rates = out.log.rates();
    assert_eq!(rates, vec![0.5, 0.25, 0.125, 0.0625, 0.03125]);
    for w in rates.windows(2) {
        assert_eq!(w[1], w[0] / 2.0);
    }
}

#[test]
fn returned_model_is_the_logged_minimum() {
    let data = copy_task(60, 7, 3, 3);
    let dev = copy_task(10, 7, 3, 4);
    let out = train_run(Model::new(config(7)).unwrap(), &data, &dev, &quick(OptimizerKind::Adam, 2), |_| {}).unwrap();
    let min = out.log.best_ppl().unwrap();
    assert_eq!(out.best_ppl, min);
    assert_eq!(dev_perplexity(&out.best, &dev).unwrap(), min);

    let mut replay = AnnealState::new(&quick(OptimizerKind::Adam, 2).anneal, ADAM_RATE);
    let mut opt = OptimizerState::sgd(1.0);
    let mut evals = 0;
    for e in &out.log.entries {
        evals += 1;
        let mut action = replay.observe(e.dev_ppl);
        if matches!(action, Action::Continue { .. }) && evals >= 25 {
            action = replay.end_run();
        }
        assert_eq!(action, e.action);
        if action == Action::EndRun {
            replay.restart(&mut opt);
            evals = 0;
        }
    }
}

#[test]
fn training_is_deterministic() {
    let data = copy_task(30, 6, 3, 5);
    let cfg = quick(OptimizerKind::Adam, 2);
    let model = Model::new(ModelConfig { dropout: 0.2, ..config(6) }).unwrap();
    let a = train_run(model.clone(), &data, &data[..8], &cfg, |_| {}).unwrap();
    let b = train_run(model, &data, &data[..8], &cfg, |_| {}).unwrap();
    assert!(a.best.params.bit_identical(&b.best.params));
    let strip = |l: &TrainLog| l.entries.iter().map(|e| (e.sentences, e.run, e.rate.to_bits(), e.dev_ppl.to_bits())).collect::<Vec<_>>();
    assert_eq!(strip(&a.log), strip(&b.log));
}

#[test]
fn single_run_log_is_prefix_of_annealed_log() {
    let data = copy_task(40, 6, 3, 6);
    let model = Model::new(config(6)).unwrap();
    let plain = train_run(model.clone(), &data, &data[..8], &quick(OptimizerKind::Adam, 1), |_| {}).unwrap();
    let annealed = train_run(model, &data, &data[..8], &quick(OptimizerKind::Adam, 3), |_| {}).unwrap();
    let run0: Vec<_> = annealed.log.run(0).map(|e| (e.sentences, e.dev_ppl.to_bits())).collect();
    let single: Vec<_> = plain.log.entries.iter().map(|e| (e.sentences, e.dev_ppl.to_bits())).collect();
    assert_eq!(run0, single);
    assert!(annealed.best_ppl <= plain.best_ppl);
}

#[test]
fn eval_cap_ends_runs() {
    let data = copy_task(30, 6, 3, 7);
    let cfg = TrainConfig {
        max_evals_per_run: Some(3),
        anneal: AnnealConfig {
            max_runs: 2,
            patience: 100,
            eval_intervals: vec![10],
        },
        ..quick(OptimizerKind::Adam, 2)
    };
    let out = train_run(Model::new(config(6)).unwrap(), &data, &data[..5], &cfg, |_| {}).unwrap();
    assert_eq!(out.log.entries.len(), 6);
    assert!(out.log.events.iter().any(|e| matches!(e, TrainEvent::EvalCapReached { run: 1 })));
}

#[test]
fn copy_task_is_memorized() {
    let data = copy_task(60, 6, 3, 8);
    let cfg = TrainConfig {
        rate: Some(0.02),
        batch_words: 60,
        anneal: AnnealConfig {
            max_runs: 3,
            patience: 5,
            eval_intervals: vec![60, 30],
        },
        max_evals_per_run: Some(150),
        ..TrainConfig::new(OptimizerKind::Adam, AnnealConfig::halving_schedule(1, 1))
    };
    let model = Model::new(ModelConfig {
        embed: 16,
        hidden: 24,
        attention: 16,
        ..config(6)
    })
    .unwrap();
    let out = train_run(model, &data, &data, &cfg, |_| {}).unwrap();
    assert!(out.best_ppl < 1.1, "dev perplexity {}", out.best_ppl);
}

#[test]
fn dev_perplexity_reference_points() {
    let mut model = Model::new(config(9)).unwrap();
    model.params.get_mut(13).data_mut().fill(0.0);
    let dev = copy_task(5, 9, 4, 9);
    assert!((dev_perplexity(&model, &dev).unwrap() - 9.0).abs() < 1e-9);

    // Every target is `</s>` alone, and the bias makes it certain.
    model.params.get_mut(14).data_mut()[1] = 80.0;
    let empty: Vec<EncodedPair> = vec![(vec![3], vec![]), (vec![4, 5], vec![])];
    assert!((dev_perplexity(&model, &empty).unwrap() - 1.0).abs() < 1e-12);

    let trained = Model::new(ModelConfig { seed: 4, ..config(9) }).unwrap();
    let mut shuffled = dev.clone();
    shuffled.reverse();
    let a = dev_perplexity(&trained, &dev).unwrap();
    let b = dev_perplexity(&trained, &shuffled).unwrap();
    assert!((a - b).abs() < 1e-12 * a);
}

#[test]
fn train_log_tsv_layout() {
    let data = copy_task(20, 6, 2, 10);
    let out = train_run(Model::new(config(6)).unwrap(), &data, &data[..4], &quick(OptimizerKind::Sgd, 1), |_| {}).unwrap();
    let tsv = out.log.to_tsv();
    let mut lines = tsv.lines();
    assert_eq!(lines.next(), Some("sentences\trun\trate\tdev_ppl\tseconds"));
    for line in lines {
        assert_eq!(line.split('\t').count(), 5);
    }
}

fn params(values: &[f64]) -> ParamSet {
    let mut p = ParamSet::new();
    p.push("w", Array::vector(values.to_vec()));
    p
}

proptest! {
    #[test]
    fn adam_with_zero_rate_is_identity(
        values in prop::collection::vec(-5.0f64..5.0, 1..8),
        seed in 0u64..100,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = params(&values);
        let mut s = OptimizerState::adam(0.0, &p);
        for _ in 0..3 {
            let g: Vec<f64> = values.iter().map(|_| rng.gen_range(-2.0..2.0)).collect();
            adam_step(&mut p, &[Array::vector(g)], &mut s).unwrap();
        }
        prop_assert_eq!(p.get(0).data(), values.as_slice());
    }

    #[test]
    fn sgd_is_linear_in_rate(
        values in prop::collection::vec(-5.0f64..5.0, 1..8),
        rate in 0.001f64..1.0,
        scale in 0.5f64..3.0,
    ) {
        let g: Vec<f64> = values.iter().map(|v| v * 0.3 - 0.1).collect();
        let mut a = params(&values);
        let mut b = params(&values);
        sgd_step(&mut a, &[Array::vector(g.clone())], rate).unwrap();
        sgd_step(&mut b, &[Array::vector(g)], rate * scale).unwrap();
        for ((x0, x1), x2) in values.iter().zip(a.get(0).data()).zip(b.get(0).data()) {
            prop_assert!(((x2 - x0) - scale * (x1 - x0)).abs() < 1e-9);
        }
    }

    #[test]
    fn controller_counter_stays_within_patience(
        ppls in prop::collection::vec(1.0f64..50.0, 1..200),
        patience in 1usize..6,
        max_runs in 1usize..4,
    ) {
        let cfg = AnnealConfig { max_runs, patience, eval_intervals: vec![1] };
        let mut a = AnnealState::new(&cfg, 1.0);
        let mut opt = OptimizerState::sgd(1.0);
        for p in ppls {
            let action = a.observe(p);
            prop_assert!(a.evals_since_improvement <= a.patience);
            prop_assert!(a.run_index < a.max_runs);
            match action {
                Action::EndRun => a.restart(&mut opt),
                Action::Stop => break,
                Action::Continue { .. } => {}
            }
        }
    }
}
