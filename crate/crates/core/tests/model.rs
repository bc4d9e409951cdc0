use std::collections::BTreeMap;

use deskmt::autodiff::{finite_difference_grad, relative_error, Array};
use deskmt::model::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny(seed: u64) -> ModelConfig {
    ModelConfig {
        source_vocab: 7,
        target_vocab: 6,
        embed: 3,
        hidden: 4,
        attention: 3,
        dropout: 0.0,
        lexicon_epsilon: None,
        seed,
    }
}

fn random_prior(rng: &mut ChaCha8Rng, sv: usize, tv: usize) -> LexiconPrior {
    let rows = (0..sv)
        .map(|_| {
            let raw: Vec<f64> = (0..tv).map(|_| rng.gen_range(0.05..1.0)).collect();
            let total: f64 = raw.iter().sum();
            raw.iter().enumerate().map(|(t, p)| (t as u32, p / total)).collect()
        })
        .collect();
    LexiconPrior::new(rows)
}

fn random_batch(rng: &mut ChaCha8Rng, c: &ModelConfig, n: usize) -> Vec<(Vec<u32>, Vec<u32>)> {
    (0..n)
        .map(|_| {
            let s = rng.gen_range(1..5);
            let t = rng.gen_range(0..4);
            (
                (0..s).map(|_| rng.gen_range(0..c.source_vocab as u32)).collect(),
                (0..t).map(|_| rng.gen_range(0..c.target_vocab as u32)).collect(),
            )
        })
        .collect()
}

fn as_refs(batch: &[(Vec<u32>, Vec<u32>)]) -> Vec<(&[u32], &[u32])> {
    batch.iter().map(|(s, t)| (s.as_slice(), t.as_slice())).collect()
}

fn nll_sum(model: &Model, batch: &[(Vec<u32>, Vec<u32>)], masks: Option<&[SentenceMasks]>) -> f64 {
    batch
        .iter()
        .enumerate()
        .map(|(k, (s, t))| {
            let d = masks.map_or(Dropout::Off, |m| Dropout::Masks(&m[k]));
            model.sentence_nll(s, t, d).unwrap()
        })
        .sum()
}

fn assert_simplex(v: &[f64]) {
    assert!(v.iter().all(|&x| x >= 0.0));
    assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-9);
}

#[test]
fn encoder_state_shapes() {
    let model = Model::new(ModelConfig::desk(100, 100)).unwrap();
    let enc = model.encode(&[3, 4, 5, 6, 7], Dropout::Off).unwrap();
    assert_eq!(enc.len(), 5);
    assert!(enc.states.iter().all(|s| s.len() == 128));
    assert!(matches!(model.encode(&[], Dropout::Off), Err(ModelError::EmptySequence(_))));
    assert!(matches!(model.encode(&[100], Dropout::Off), Err(ModelError::IdOutOfRange { .. })));
}

#[test]
fn backward_direction_mirrors_forward() {
    let mut model = Model::new(tiny(3)).unwrap();
    let (w, b) = (model.params.by_name("enc_fwd_w").unwrap().clone(), model.params.by_name("enc_fwd_b").unwrap().clone());
    *model.params.get_mut(4) = w;
    *model.params.get_mut(5) = b;
    let src = [1u32, 4, 2, 6];
    let rev: Vec<u32> = src.iter().rev().copied().collect();
    let a = model.encode(&src, Dropout::Off).unwrap();
    let r = model.encode(&rev, Dropout::Off).unwrap();
    let h = 4;
    for i in 0..src.len() {
        let fwd_rev = &r.states[i][..h];
        let bwd_orig = &a.states[src.len() - 1 - i][h..];
        for (x, y) in fwd_rev.iter().zip(bwd_orig) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_rate_masks_equal_inference() {
    let model = Model::new(tiny(1)).unwrap();
    let masks = SentenceMasks::sample(&model.config, &mut ChaCha8Rng::seed_from_u64(5));
    let a = model.sentence_nll(&[1, 2, 3], &[4, 5], Dropout::Off).unwrap();
    let b = model.sentence_nll(&[1, 2, 3], &[4, 5], Dropout::Masks(&masks)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn attention_special_cases() {
    let model = Model::new(tiny(2)).unwrap();
    let state = vec![0.3, -0.2, 0.5, 0.1, 0.0, 0.7, -0.4, 0.2];
    let enc = model.encoded_from_states(&[1], vec![state.clone()], vec![0.0; 4]);
    let (ctx, w) = model.attend(&enc, &[0.1, 0.2, 0.3, 0.4]);
    assert_eq!(w, vec![1.0]);
    assert_eq!(ctx, state);

    let enc = model.encoded_from_states(&[1, 2], vec![state.clone(), state.clone()], vec![0.0; 4]);
    let (_, w) = model.attend(&enc, &[0.1, 0.2, 0.3, 0.4]);
    assert_eq!(w, vec![0.5, 0.5]);
}

#[test]
fn attention_matches_hand_computation() {
    let model = Model::new(tiny(4)).unwrap();
    let enc = model.encode(&[1, 5, 3], Dropout::Off).unwrap();
    let s = [0.2, -0.1, 0.05, 0.3];
    let we = model.params.by_name("att_enc").unwrap();
    let wd = model.params.by_name("att_dec").unwrap();
    let v = model.params.by_name("att_v").unwrap();
    let mut scores = Vec::new();
    for h in &enc.states {
        let mut sc = 0.0;
        for a in 0..3 {
            let mut pre = 0.0;
            for k in 0..8 {
                pre += we.data()[a * 8 + k] * h[k];
            }
            for k in 0..4 {
                pre += wd.data()[a * 4 + k] * s[k];
            }
            sc += v.data()[a] * pre.tanh();
        }
        scores.push(sc);
    }
    let z: f64 = scores.iter().map(|x| x.exp()).sum();
    let weights: Vec<f64> = scores.iter().map(|x| x.exp() / z).collect();
    let (ctx, w) = model.attend(&enc, &s);
    for (a, b) in w.iter().zip(&weights) {
        assert!((a - b).abs() < 1e-12);
    }
    for k in 0..8 {
        let expect: f64 = weights.iter().zip(&enc.states).map(|(a, h)| a * h[k]).sum();
        assert!((ctx[k] - expect).abs() < 1e-12);
    }
}

#[test]
fn lexicon_bias_raises_concentrated_word() {
    let model = Model::new(tiny(6)).unwrap();
    let enc = model.encode(&[2, 3], Dropout::Off).unwrap();
    let state = model.initial_state(&enc);
    let plain = model.decode_step(1, &state, &enc, Dropout::Off);
    let rows = (0..7).map(|_| vec![(4u32, 1.0)]).collect();
    let biased_model = model.clone().with_lexicon(LexiconPrior::new(rows), 1e-6);
    let biased = biased_model.decode_step(1, &state, &enc, Dropout::Off);
    assert_simplex(&biased.distribution);
    assert!(biased.distribution[4] > plain.distribution[4]);
}

#[test]
fn uniform_lexicon_leaves_distribution_unchanged() {
    let model = Model::new(tiny(8)).unwrap();
    let rows = (0..7).map(|_| (0..6).map(|t| (t as u32, 1.0 / 6.0)).collect()).collect();
    let biased = model.clone().with_lexicon(LexiconPrior::new(rows), 1e-6);
    let enc = model.encode(&[1, 2, 6], Dropout::Off).unwrap();
    let state = model.initial_state(&enc);
    let a = model.decode_step(3, &state, &enc, Dropout::Off);
    let b = biased.decode_step(3, &state, &enc, Dropout::Off);
    for (x, y) in a.distribution.iter().zip(&b.distribution) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn uniform_output_costs_log_v_per_token() {
    let mut model = Model::new(tiny(1)).unwrap();
    model.params.get_mut(13).data_mut().fill(0.0);
    let batch = vec![(vec![1, 2], vec![3, 4, 5]), (vec![6], vec![])];
    let out = batch_loss(&model, &as_refs(&batch), None, 0).unwrap();
    assert_eq!(out.tokens, 5);
    assert!((out.loss - 5.0 * 6f64.ln()).abs() < 1e-12);
}

#[test]
fn confident_correct_output_costs_nothing() {
    let mut model = Model::new(tiny(1)).unwrap();
    model.params.get_mut(13).data_mut().fill(0.0);
    model.params.get_mut(14).data_mut()[1] = 60.0;
    let batch = vec![(vec![1, 2], vec![1, 1])];
    let out = batch_loss(&model, &as_refs(&batch), None, 0).unwrap();
    assert!(out.loss < 1e-20);
}

#[test]
fn non_finite_loss_names_the_batch() {
    let mut model = Model::new(tiny(1)).unwrap();
    model.params.get_mut(14).data_mut()[2] = f64::INFINITY;
    let batch = vec![(vec![1], vec![2])];
    assert!(matches!(
        batch_loss(&model, &as_refs(&batch), None, 17),
        Err(ModelError::NonFiniteLoss { batch: 17 })
    ));
}

#[test]
fn graph_loss_matches_inference_route() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = Model::new(ModelConfig { dropout: 0.3, ..tiny(seed) }).unwrap();
        if seed % 2 == 0 {
            model = model.with_lexicon(random_prior(&mut rng, 7, 6), 1e-6);
        }
        let batch = random_batch(&mut rng, &model.config, 4);
        let masks: Vec<SentenceMasks> = (0..4).map(|_| SentenceMasks::sample(&model.config, &mut rng)).collect();
        let graph = batch_loss(&model, &as_refs(&batch), Some(&masks), 0).unwrap();
        let direct = nll_sum(&model, &batch, Some(&masks));
        assert!((graph.loss - direct).abs() < 1e-9 * direct.abs().max(1.0), "{} vs {direct}", graph.loss);
    }
}

/// Gradients of the graph route against central differences of the
/// independent inference route.
#[test]
fn full_model_gradient_check() {
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut model = Model::new(ModelConfig { dropout: 0.2, ..tiny(seed) }).unwrap();
        if seed % 2 == 1 {
            model = model.with_lexicon(random_prior(&mut rng, 7, 6), 1e-6);
        }
        // Nonzero biases so their gradients are exercised off the origin.
        for slot in [3, 5, 7, 9, 14] {
            for v in model.params.get_mut(slot).data_mut() {
                *v = rng.gen_range(-0.3..0.3);
            }
        }
        let batch = random_batch(&mut rng, &model.config, 3);
        let masks: Vec<SentenceMasks> = (0..3).map(|_| SentenceMasks::sample(&model.config, &mut rng)).collect();
        let analytic = batch_loss(&model, &as_refs(&batch), Some(&masks), 0).unwrap();
        for slot in 0..PARAM_NAMES.len() {
            let point = model.params.get(slot).clone();
            let numeric = finite_difference_grad(
                |x: &Array| -> Result<f64, ModelError> {
                    let mut m = model.clone();
                    *m.params.get_mut(slot) = x.clone();
                    Ok(nll_sum(&m, &batch, Some(&masks)))
                },
                &point,
                1e-5,
            )
            .unwrap();
            for (i, (a, n)) in analytic.grads[slot].data().iter().zip(numeric.data()).enumerate() {
                let err = relative_error(*a, *n, 1e-4);
                assert!(err < 1e-3, "seed {seed} {}[{i}]: {a} vs {n}", PARAM_NAMES[slot]);
            }
        }
    }
}

/// A unit dropped by the input mask must be dropped at every position, so
/// the matching embedding column receives no gradient at all.
#[test]
fn dropout_mask_is_shared_across_time_steps() {
    let config = ModelConfig { dropout: 0.5, ..tiny(2) };
    let model = Model::new(config.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut masks = SentenceMasks::sample(&config, &mut rng);
    masks.enc_fwd_input = vec![0.0, 2.0, 2.0];
    masks.enc_bwd_input = vec![0.0, 2.0, 2.0];
    masks.dec_input[1] = 0.0;
    let batch = vec![(vec![1, 2, 3, 1, 5], vec![2, 3, 4, 2])];
    let out = batch_loss(&model, &as_refs(&batch), Some(std::slice::from_ref(&masks)), 0).unwrap();
    let src = &out.grads[0];
    let tgt = &out.grads[1];
    for row in 0..7 {
        assert_eq!(src.row(row)[0], 0.0);
    }
    for row in 0..6 {
        assert_eq!(tgt.row(row)[1], 0.0);
    }
    assert!(src.row(1)[1] != 0.0);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.nmtb");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = Model::new(tiny(11)).unwrap().with_lexicon(random_prior(&mut rng, 7, 6), 1e-6);
    let meta = CheckpointMeta {
        provenance: BTreeMap::from([("run".to_string(), "2".to_string())]),
    };
    save_checkpoint(&path, &model, &meta).unwrap();
    let (back, back_meta) = load_checkpoint(&path).unwrap();
    assert!(back.params.bit_identical(&model.params));
    assert_eq!(back.config, model.config);
    assert_eq!(back_meta, meta);
    let enc = model.encode(&[1, 2], Dropout::Off).unwrap();
    let s = model.initial_state(&enc);
    let a = model.decode_step(1, &s, &enc, Dropout::Off).distribution;
    let enc = back.encode(&[1, 2], Dropout::Off).unwrap();
    let s = back.initial_state(&enc);
    let b = back.decode_step(1, &s, &enc, Dropout::Off).distribution;
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn step_outputs_are_probability_vectors(
        seed in 0u64..1000,
        source in prop::collection::vec(0u32..7, 1..6),
        prefix in prop::collection::vec(0u32..6, 0..5),
        lexicon in any::<bool>(),
    ) {
        let mut model = Model::new(tiny(seed)).unwrap();
        if lexicon {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            model = model.with_lexicon(random_prior(&mut rng, 7, 6), 1e-6);
        }
        let enc = model.encode(&source, Dropout::Off).unwrap();
        let mut state = model.initial_state(&enc);
        let mut prev = 1;
        for &y in &prefix {
            let out = model.decode_step(prev, &state, &enc, Dropout::Off);
            assert_simplex(&out.distribution);
            assert_simplex(&out.attention);
            prop_assert_eq!(out.attention.len(), source.len());
            state = out.state;
            prev = y;
        }
    }
}
