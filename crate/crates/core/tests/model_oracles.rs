#![allow(clippy::needless_range_loop)]

mod common;

use cfattn_core::corpus::EOS;
use cfattn_core::seq2seq::{
    attend, context_from_weights, greedy_translate_ids, output_logits, train, EncodedPair,
    ModelDims, ModelParams, TrainConfig,
};
use cfattn_core::tensor::softmax;
use common::{fixture, max_abs_diff, pair};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_corpus() -> Vec<cfattn_core::corpus::SentencePair> {
    vec![
        pair("a b c d .", "w x y z ."),
        pair("d c .", "z y ."),
        pair("b a a .", "x w w ."),
        pair("c .", "y ."),
    ]
}

#[test]
fn encoder_matches_reference_in_both_directions() {
    let fx = fixture(&small_corpus(), 5, 4, 3);
    let src = fx.pairs[0].source.clone();
    let trace = greedy_translate_ids(&fx.params, &src, Some(3)).unwrap();
    let reference = common::encode(&fx.params, &src);
    for (got, want) in trace.encoder_states.iter().zip(&reference) {
        assert!(max_abs_diff(got, want) < 1e-12);
    }

    // The forward half of the reversed input is an independent left-to-right
    // run over the reversed sequence, and the backward half of the original
    // input at position i is that same direction's run at m - i + 1.
    let h = fx.params.dims().hidden;
    let rev: Vec<usize> = src.iter().rev().copied().collect();
    let rev_trace = greedy_translate_ids(&fx.params, &rev, Some(1)).unwrap();
    let forward_on_rev = common::run_direction(&fx.params, "forward", &rev);
    let backward_on_rev = common::run_direction(&fx.params, "backward", &rev);
    let m = src.len();
    for j in 0..m {
        assert!(max_abs_diff(&rev_trace.encoder_states[j][..h], &forward_on_rev[j]) < 1e-12);
        assert!(max_abs_diff(&trace.encoder_states[m - 1 - j][h..], &backward_on_rev[j]) < 1e-12);
    }
}

#[test]
fn single_token_source() {
    let fx = fixture(&small_corpus(), 4, 4, 5);
    let trace = greedy_translate_ids(&fx.params, &[4], Some(4)).unwrap();
    assert_eq!(trace.encoder_states.len(), 1);
    for step in &trace.steps {
        assert_eq!(step.attention, vec![1.0]);
        assert_eq!(step.context, trace.encoder_states[0]);
    }
}

#[test]
fn attend_matches_loop_oracle() {
    let fx = fixture(&small_corpus(), 6, 4, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let width = fx.params.dims().memory_width();
    for m in 1..6 {
        let memory: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..width).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let s: Vec<f64> = (0..fx.params.dims().hidden)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let att = attend(&fx.params, &s, &memory).unwrap();
        let scores = common::scores(&fx.params, &s, &memory);
        assert!(max_abs_diff(&att.scores, &scores) < 1e-12);
        assert!(max_abs_diff(&att.weights, &common::softmax(&scores)) < 1e-12);
        let mut explicit = vec![0.0; width];
        for i in 0..m {
            for k in 0..width {
                explicit[k] += att.weights[i] * memory[i][k];
            }
        }
        assert!(max_abs_diff(&att.context, &explicit) < 1e-12);
    }

    let same = vec![vec![0.25; width]; 4];
    for alpha in [[0.1, 0.2, 0.3, 0.4], [1.0, 0.0, 0.0, 0.0]] {
        let c = context_from_weights(&fx.params, &alpha, &same).unwrap();
        assert!(max_abs_diff(&c, &same[0]) < 1e-15);
    }
}

#[test]
fn decode_step_shapes_and_zero_projection() {
    let mut fx = fixture(&small_corpus(), 4, 4, 2);
    let vocab = fx.params.dims().target_vocab;
    let trace = greedy_translate_ids(&fx.params, &fx.pairs[0].source, Some(5)).unwrap();
    for step in &trace.steps {
        assert_eq!(step.logits.len(), vocab);
        let p = softmax(&step.logits).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!((step.attention.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(step.attention.iter().all(|&a| a >= 0.0));
    }
    for name in ["output.w", "output.b"] {
        fx.params.tensor_mut(name).unwrap().data_mut().fill(0.0);
    }
    let trace = greedy_translate_ids(&fx.params, &fx.pairs[0].source, Some(2)).unwrap();
    let p = softmax(&trace.steps[0].logits).unwrap();
    assert!(p.iter().all(|&x| (x - 1.0 / vocab as f64).abs() < 1e-15));
}

#[test]
fn greedy_decode_matches_reference_and_is_repeatable() {
    let fx = fixture(&small_corpus(), 5, 5, 17);
    for p in &fx.pairs {
        let a = greedy_translate_ids(&fx.params, &p.source, None).unwrap();
        let b = greedy_translate_ids(&fx.params, &p.source, None).unwrap();
        assert_eq!(a, b);
        let reference = common::greedy(&fx.params, &p.source, a.max_steps);
        assert_eq!(a.emitted_ids(), reference);
        assert_eq!(a.terminated_by_eos, reference.last() == Some(&EOS));
        assert_eq!(a.max_steps, 2 * p.source.len() + 5);
    }
}

#[test]
fn replay_reproduces_every_stored_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut traces = 0;
    for seed in 0..10 {
        let fx = fixture(&small_corpus(), 8, 6, seed);
        let vocab = fx.params.dims().source_vocab;
        for _ in 0..10 {
            let len = rng.gen_range(1..=12);
            let src: Vec<usize> = (0..len).map(|_| rng.gen_range(0..vocab)).collect();
            let trace = greedy_translate_ids(&fx.params, &src, None).unwrap();
            for step in &trace.steps {
                let att = attend(&fx.params, &step.state, &trace.encoder_states).unwrap();
                assert_eq!(att.weights, step.attention);
                let c = context_from_weights(&fx.params, &step.attention, &trace.encoder_states)
                    .unwrap();
                let logits = output_logits(&fx.params, &step.state, &c).unwrap();
                assert!(max_abs_diff(&logits, &step.logits) <= 1e-9);
            }
            traces += 1;
        }
    }
    assert_eq!(traces, 100);
}

fn tiny_training_setup() -> (ModelParams, Vec<EncodedPair>) {
    let fx = fixture(&small_corpus(), 4, 4, 8);
    (fx.params, fx.pairs)
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let (mut params, pairs) = tiny_training_setup();
    let before = params.clone();
    let mut cfg = TrainConfig {
        steps: 7,
        batch: 2,
        eval_every: 3,
        ..TrainConfig::default()
    };
    cfg.adam.lr = 0.0;
    train(&mut params, &pairs, &[], &cfg).unwrap();
    for ((_, a), (_, b)) in params.store().iter().zip(before.store().iter()) {
        assert_eq!(a.data(), b.data());
    }
}

#[test]
fn same_seed_gives_identical_parameters() {
    let cfg = TrainConfig {
        steps: 12,
        batch: 3,
        eval_every: 4,
        ..TrainConfig::default()
    };
    let (mut a, pairs) = tiny_training_setup();
    let (mut b, _) = tiny_training_setup();
    let ra = train(&mut a, &pairs[..3], &pairs[3..], &cfg).unwrap();
    let rb = train(&mut b, &pairs[..3], &pairs[3..], &cfg).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(a.fingerprint(), b.fingerprint());
    for ((_, x), (_, y)) in a.store().iter().zip(b.store().iter()) {
        assert_eq!(x.data(), y.data());
    }
}

#[test]
fn training_lowers_the_loss() {
    let (mut params, pairs) = tiny_training_setup();
    let cfg = TrainConfig {
        steps: 60,
        batch: 4,
        eval_every: 20,
        patience: None,
        ..TrainConfig::default()
    };
    cfg.validate().unwrap();
    let mut adam = cfg.adam;
    adam.lr = 0.01;
    let report = train(&mut params, &pairs, &pairs, &TrainConfig { adam, ..cfg }).unwrap();
    let first = report.curve.first().unwrap().train_loss;
    let last = report.curve.last().unwrap().heldout_loss.unwrap();
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn rejects_bad_configs_and_inputs() {
    let (mut params, pairs) = tiny_training_setup();
    for cfg in [
        TrainConfig {
            steps: 0,
            ..TrainConfig::default()
        },
        TrainConfig {
            batch: 0,
            ..TrainConfig::default()
        },
        TrainConfig {
            patience: Some(0),
            ..TrainConfig::default()
        },
    ] {
        assert!(train(&mut params, &pairs, &[], &cfg).is_err());
    }
    let dims = *params.dims();
    assert!(greedy_translate_ids(&params, &[], None).is_err());
    assert!(greedy_translate_ids(&params, &[dims.source_vocab], None).is_err());
    let too_long = vec![4; dims.max_source_len + 1];
    assert!(greedy_translate_ids(&params, &too_long, None).is_err());
    assert!(ModelParams::init(ModelDims { hidden: 0, ..dims }, 1).is_err());
}
