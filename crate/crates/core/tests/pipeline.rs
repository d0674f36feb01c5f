mod common;

use std::path::Path;

use proptest::prelude::*;

use common::{exhaustive_best, RandomModel};
use slt_core::fusion::FusionKind;
use slt_core::gradsuite::tiny_config;
use slt_core::numerics::{Graph, Tensor};
use slt_core::pipeline::{
    beam_search, cosine_lr, forward_translate_logits, greedy_decode, lsce_loss, warmup_cosine_lr, Checkpoint,
    ModelConfig, ModelStepper, StepModel, Trainer,
};
use slt_core::synthetic::synthetic_corpus;
use slt_core::text::{Tokenizer, Vocabulary, BOS};
use slt_core::Error;

fn lsce(logits: Tensor, targets: &[Option<usize>], alpha: f64, literal: bool) -> slt_core::Result<f64> {
    let mut g = Graph::new();
    let l = g.constant(logits);
    let loss = lsce_loss(&mut g, l, targets, alpha, literal)?;
    Ok(g.value(loss).item())
}

#[test]
fn lsce_examples() {
    for alpha in [0.0, 0.1, 0.5, 0.9] {
        let v = lsce(Tensor::zeros(&[3, 4]), &[Some(0), Some(2), Some(3)], alpha, false).unwrap();
        assert!((v - 4f64.ln()).abs() < 1e-12, "α={alpha}: {v}");
    }
    let v = lsce(Tensor::zeros(&[1, 2]), &[Some(0)], 0.0, false).unwrap();
    assert!((v - 2f64.ln()).abs() < 1e-15);

    assert!(lsce(Tensor::zeros(&[1, 2]), &[Some(0)], 1.0, false).is_err());
    assert!(lsce(Tensor::zeros(&[1, 2]), &[None], 0.0, false).is_err());

    // Padding rows contribute nothing.
    let logits = Tensor::new(&[2, 3], vec![2.0, 0.0, -1.0, 50.0, -50.0, 0.0]).unwrap();
    let one = lsce(Tensor::new(&[1, 3], vec![2.0, 0.0, -1.0]).unwrap(), &[Some(1)], 0.1, false).unwrap();
    let padded = lsce(logits, &[Some(1), None], 0.1, false).unwrap();
    assert_eq!(one, padded);

    // The literal reading puts weight α on the target.
    let peaked = Tensor::new(&[1, 3], vec![5.0, 0.0, 0.0]).unwrap();
    let standard = lsce(peaked.clone(), &[Some(0)], 0.1, false).unwrap();
    let literal = lsce(peaked, &[Some(0)], 0.1, true).unwrap();
    assert!(literal > standard);
}

#[test]
fn cosine_schedule_examples() {
    assert_eq!(cosine_lr(0, 100, 1e-3), 1e-3);
    assert_eq!(cosine_lr(100, 100, 1e-3), 0.0);
    assert!((cosine_lr(50, 100, 1e-3) - 5e-4).abs() < 1e-15);
    assert_eq!(cosine_lr(250, 100, 1e-3), 0.0);
    assert_eq!(warmup_cosine_lr(0, 100, 0, 1e-3), 1e-3);
    assert_eq!(warmup_cosine_lr(4, 100, 5, 1e-3), 1e-3);
    assert!(warmup_cosine_lr(0, 100, 5, 1e-3) < warmup_cosine_lr(1, 100, 5, 1e-3));
}

fn small_trainer(fusion: FusionKind) -> (Trainer, Vec<slt_core::pipeline::Sample>) {
    let data = synthetic_corpus(4, 12, 3).unwrap();
    let texts: Vec<&str> = data.iter().map(|s| s.text.as_str()).collect();
    let vocab = Vocabulary::train(&texts, 40).unwrap();
    let config = ModelConfig {
        batch_size: 2,
        epochs: 2,
        seed: 4,
        ..tiny_config(fusion)
    };
    let mut t = Trainer::new(config, vocab).unwrap();
    t.total_steps = t.schedule_length(data.len());
    (t, data)
}

#[test]
fn forward_log_probs_agree_with_stepper() {
    let (t, data) = small_trainer(FusionKind::Summation);
    let ids = t.vocab.encode(&data[0].text);
    let input = &ids[..ids.len() - 1];
    let lp = forward_translate_logits(&t.model, &t.store, &data[0], input).unwrap();
    assert_eq!(lp.shape(), &[input.len(), t.vocab.len()]);
    assert_eq!(lp, forward_translate_logits(&t.model, &t.store, &data[0], input).unwrap());

    let stepper = ModelStepper::new(&t.model, &t.store, &data[0]).unwrap();
    let mut total = 0.0f64;
    let mut stepped = 0.0;
    for (i, &next) in ids[1..].iter().enumerate() {
        let row = lp.row(i);
        assert!((row.iter().map(|v| v.exp()).sum::<f64>() - 1.0).abs() < 1e-12);
        let step = stepper.next_log_probs(&ids[..=i]).unwrap();
        for (a, b) in row.iter().zip(&step) {
            assert!((a - b).abs() < 1e-12);
        }
        total += row[next];
        stepped += step[next];
    }
    assert!((total - stepped).abs() < 1e-10);
}

#[test]
fn beam_examples() {
    for seed in 0..20 {
        let m = RandomModel { vocab: 5, eos: 2, seed };
        let greedy = greedy_decode(&m, 6).unwrap();
        assert_eq!(beam_search(&m, 1, 6, false).unwrap().tokens, greedy.tokens);

        let (best, score) = exhaustive_best(&m, BOS, 3, false);
        let wide = beam_search(&m, 125, 3, false).unwrap();
        assert_eq!(wide.tokens, best);
        assert!((wide.score(false) - score).abs() < 1e-12);
    }
    let m = RandomModel { vocab: 5, eos: 2, seed: 0 };
    assert!(beam_search(&m, 0, 3, false).is_err());
    assert!(beam_search(&m, 2, 0, false).is_err());
}

#[test]
fn real_model_beam_one_is_greedy() {
    let (t, data) = small_trainer(FusionKind::Linear);
    let stepper = ModelStepper::new(&t.model, &t.store, &data[1]).unwrap();
    let greedy = greedy_decode(&stepper, 8).unwrap();
    let beam = beam_search(&stepper, 1, 8, false).unwrap();
    assert_eq!(greedy.tokens, beam.tokens);
}

#[test]
fn checkpoint_round_trip_and_errors() {
    let (mut t, data) = small_trainer(FusionKind::Lstm);
    t.run_epoch(&data).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a.ckpt");
    let second = dir.path().join("b.ckpt");
    t.save(&first).unwrap();
    Trainer::load(&first).unwrap().save(&second).unwrap();
    let bytes = std::fs::read(&first).unwrap();
    assert_eq!(bytes, std::fs::read(&second).unwrap());

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert_eq!(Checkpoint::from_bytes(&bad).unwrap_err().code(), "E_MAGIC");
    let mut bad = bytes.clone();
    bad[8] = 9;
    assert_eq!(Checkpoint::from_bytes(&bad).unwrap_err().code(), "E_VERSION");
    assert_eq!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err().code(), "E_TRUNCATED");

    let mut ckpt = Checkpoint::from_bytes(&bytes).unwrap();
    let wider = ModelConfig {
        embed_dim: 8,
        ..t.config.clone()
    };
    ckpt.config_text = wider.to_text();
    let err = Trainer::from_checkpoint(&ckpt, t.vocab.clone()).err().unwrap();
    assert!(matches!(err, Error::CheckpointMismatch(_)), "{err}");
}

#[test]
fn config_text_round_trip() {
    let config = ModelConfig {
        fusion: FusionKind::Lstm,
        stgcn_tcn_widths: vec![3, 7],
        label_smoothing: 0.25,
        ..ModelConfig::default()
    };
    let back = ModelConfig::parse(&config.to_text(), Path::new("x")).unwrap();
    assert_eq!(back, config);

    let err = ModelConfig::parse("epochs = 3\nlearning_speed = 2\n", Path::new("x")).unwrap_err();
    assert_eq!(err.code(), "E_CONFIG");
    assert!(err.to_string().contains("line 2"));
    assert!(ModelConfig::parse("epochs = three\n", Path::new("x")).is_err());
}

#[test]
fn training_is_reproducible() {
    let curve = || {
        let (mut t, data) = small_trainer(FusionKind::Summation);
        assert_eq!(t.learning_rate(0), t.config.lr);
        for _ in 0..2 {
            t.run_epoch(&data).unwrap();
        }
        (t.state.losses.clone(), t.parameter_count())
    };
    let (a, na) = curve();
    let (b, nb) = curve();
    assert_eq!(a, b);
    assert_eq!(na, nb);
    assert!(a.iter().all(|l| l.is_finite() && *l > 0.0));
}

#[test]
fn non_finite_loss_aborts() {
    let (mut t, data) = small_trainer(FusionKind::Summation);
    let id = t.store.id("output.weight").or_else(|| t.store.iter().last().map(|(id, _)| id)).unwrap();
    t.store.get_mut(id).value.data_mut()[0] = f64::NAN;
    let err = t.train_step(&[&data[0]]).unwrap_err();
    assert_eq!(err.code(), "E_NAN_LOSS");
}

proptest! {
    #[test]
    fn lsce_is_non_negative(
        data in prop::collection::vec(-30.0..30.0f64, 12),
        targets in prop::collection::vec(prop::option::of(0usize..4), 3),
        alpha in 0.0..0.99f64,
    ) {
        prop_assume!(targets.iter().any(Option::is_some));
        let v = lsce(Tensor::new(&[3, 4], data).unwrap(), &targets, alpha, false).unwrap();
        prop_assert!(v >= -1e-12);
    }

    #[test]
    fn cosine_is_monotone(total in 1u64..500, step in 0u64..600) {
        let a = cosine_lr(step, total, 1e-3);
        let b = cosine_lr(step + 1, total, 1e-3);
        prop_assert!(b <= a && a <= 1e-3 && b >= 0.0);
    }

    // Narrow beams can prune the greedy path; width 5 over three tokens cannot.
    #[test]
    fn beam_five_never_worse_than_greedy(seed in any::<u64>(), norm in any::<bool>()) {
        let m = RandomModel { vocab: 3, eos: 2, seed };
        let g = greedy_decode(&m, 3).unwrap();
        let b = beam_search(&m, 5, 3, norm).unwrap();
        prop_assert!(b.score(norm) >= g.score(norm) - 1e-12);
    }
}
