use super::*;
use crate::agreement::Sampler;
use crate::corpus::{gen_synthetic, Dataset, SplitSizes, TaskKind, TaskSpec};

fn data() -> Dataset {
    let spec = TaskSpec {
        vocab_size: 4,
        min_len: 2,
        max_len: 4,
        noise: 0.1,
        ..TaskSpec::new(TaskKind::NoisyLexicon, 3)
    };
    gen_synthetic(
        &spec,
        SplitSizes {
            train: 40,
            dev: 8,
            test: 8,
        },
    )
    .unwrap()
}

fn model_cfg(d: &Dataset) -> ModelConfig {
    ModelConfig::new(d.vocab.len()).with_sizes(4, 6, 4)
}

fn cfg() -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        log_every: 1,
        dev_decode: DecodeConfig::beam(2, 1.0),
        ..TrainConfig::default()
    }
}

#[test]
fn zero_steps_returns_the_initialization() {
    let d = data();
    let mut log = TrainLog::new();
    let ck = pretrain_mle(Direction::L2R, &d.train, &d.vocab, model_cfg(&d), &cfg(), 0, &mut log).unwrap();
    assert_eq!(ck, init_checkpoint(Direction::L2R, &d.vocab, model_cfg(&d), &cfg()).unwrap());
    assert!(log.records().is_empty());
}

#[test]
fn lambda_zero_phase_is_continued_mle() {
    let d = data();
    let mut log = TrainLog::new();
    let l2r = pretrain_mle(Direction::L2R, &d.train, &d.vocab, model_cfg(&d), &cfg(), 5, &mut log).unwrap();
    let r2l = pretrain_mle(Direction::R2L, &d.train, &d.vocab, model_cfg(&d), &cfg(), 5, &mut log).unwrap();
    let reg = RegularizerConfig {
        lambda: 0.0,
        ..RegularizerConfig::default()
    };
    let helper_before = r2l.model.clone();
    let a = train_direction_with_helper(l2r.clone(), &r2l.model, &d.train, &cfg(), &reg, 6, &mut log).unwrap();
    let b = continue_mle(l2r, &d.train, &cfg(), 6, &mut log).unwrap();
    assert_eq!(a, b);
    assert_eq!(r2l.model, helper_before);
}

#[test]
fn regularized_phase_leaves_the_helper_untouched() {
    let d = data();
    let mut log = TrainLog::new();
    let l2r = pretrain_mle(Direction::L2R, &d.train, &d.vocab, model_cfg(&d), &cfg(), 5, &mut log).unwrap();
    let r2l = pretrain_mle(Direction::R2L, &d.train, &d.vocab, model_cfg(&d), &cfg(), 5, &mut log).unwrap();
    let before = r2l.to_bytes();
    let out = train_direction_with_helper(l2r.clone(), &r2l.model, &d.train, &cfg(), &RegularizerConfig::default(), 4, &mut log).unwrap();
    assert_ne!(out.model, l2r.model);
    assert!(r2l.to_bytes() == before);
}

#[test]
fn checkpoint_round_trip_resumes_exactly() {
    let d = data();
    let mut log = TrainLog::new();
    let ck = pretrain_mle(Direction::R2L, &d.train, &d.vocab, model_cfg(&d), &cfg(), 3, &mut log).unwrap();
    let restored = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
    let (mut la, mut lb) = (TrainLog::new(), TrainLog::new());
    let a = continue_mle(ck, &d.train, &cfg(), 10, &mut la).unwrap();
    let b = continue_mle(restored, &d.train, &cfg(), 10, &mut lb).unwrap();
    assert_eq!(a, b);
    assert_eq!(la.to_text(), lb.to_text());
}

#[test]
fn keep_rate_is_logged_consistently() {
    let d = data();
    let mut log = TrainLog::new();
    let l2r = pretrain_mle(Direction::L2R, &d.train, &d.vocab, model_cfg(&d), &cfg(), 2, &mut log).unwrap();
    let r2l = pretrain_mle(Direction::R2L, &d.train, &d.vocab, model_cfg(&d), &cfg(), 2, &mut log).unwrap();
    let reg = RegularizerConfig {
        sampler: Sampler::Ancestral,
        filter_threshold: Some(0.1),
        ..RegularizerConfig::default()
    };
    let mut log = TrainLog::new();
    train_direction_with_helper(l2r, &r2l.model, &d.train, &cfg(), &reg, 4, &mut log).unwrap();
    for r in log.events("step") {
        let (g, k, rate) = (r.get_f64("generated").unwrap(), r.get_f64("kept").unwrap(), r.get_f64("keep_rate").unwrap());
        assert_eq!(g, 8.0);
        assert!((0.0..=1.0).contains(&rate));
        assert_eq!(rate, k / g);
    }
}

#[test]
fn same_direction_helper_rejected() {
    let d = data();
    let ck = init_checkpoint(Direction::L2R, &d.vocab, model_cfg(&d), &cfg()).unwrap();
    let helper = ck.model.clone();
    let err = train_direction_with_helper(ck, &helper, &d.train, &cfg(), &RegularizerConfig::default(), 1, &mut TrainLog::new());
    assert!(err.is_err());
}

#[test]
fn non_finite_loss_reports_the_step() {
    let d = data();
    let mut ck = init_checkpoint(Direction::L2R, &d.vocab, model_cfg(&d), &cfg()).unwrap();
    let out_w = ck.model.params().index_of("out.w").unwrap();
    ck.model.params_mut().values_mut(out_w).fill(1e308);
    ck.step = 41;
    let err = continue_mle(ck, &d.train, &cfg(), 3, &mut TrainLog::new()).unwrap_err();
    assert!(matches!(err, Error::Diverged { step: 41, batch: 0 }), "{err}");
}

#[test]
fn zero_iterations_returns_inputs_with_baseline_row() {
    let d = data();
    let mut log = TrainLog::new();
    let l2r = init_checkpoint(Direction::L2R, &d.vocab, model_cfg(&d), &cfg()).unwrap();
    let r2l = init_checkpoint(Direction::R2L, &d.vocab, model_cfg(&d), &cfg()).unwrap();
    let joint = JointTrainConfig {
        max_iterations: 0,
        steps_per_phase: 3,
        probe: None,
    };
    let out = joint_train(l2r.clone(), r2l.clone(), &d.train, &d.dev, &joint, &cfg(), &RegularizerConfig::default(), &mut log).unwrap();
    assert_eq!(out.l2r, l2r);
    assert_eq!(out.r2l, r2l);
    assert_eq!(out.iterations.len(), 1);
    assert_eq!(log.iterations()[0].l2r_bleu, dev_bleu(&l2r.model, &d.dev, &cfg().dev_decode).unwrap());
}

#[test]
fn joint_training_is_deterministic_and_bounded() {
    let d = data();
    let run = || {
        let mut log = TrainLog::new();
        let l2r = pretrain_mle(Direction::L2R, &d.train, &d.vocab, model_cfg(&d), &cfg(), 4, &mut log).unwrap();
        let r2l = pretrain_mle(Direction::R2L, &d.train, &d.vocab, model_cfg(&d), &cfg(), 4, &mut log).unwrap();
        let joint = JointTrainConfig {
            max_iterations: 2,
            steps_per_phase: 2,
            probe: Some(KlProbe {
                sources: d.dev.sources()[..2].to_vec(),
                max_len: 3,
                samples: 4,
                exact: true,
            }),
        };
        let out = joint_train(l2r, r2l, &d.train, &d.dev, &joint, &cfg(), &RegularizerConfig::default(), &mut log).unwrap();
        (out.iterations, log.to_text())
    };
    let (rows, text) = run();
    assert!(rows.len() <= 3);
    assert!(rows.iter().all(|r| r.kl_exact.is_some() && r.kl_sampled.is_some()));
    assert_eq!(run().1, text);
}

#[test]
fn back_translation_tags_synthetic_pairs() {
    let d = data();
    let t2s = init_checkpoint(Direction::L2R, &d.vocab, model_cfg(&d), &cfg()).unwrap();
    let same = back_translate_augment(&t2s.model, &[], &d.train, &DecodeConfig::greedy()).unwrap();
    assert_eq!(same, d.train);
    let mono = d.dev.targets();
    let aug = back_translate_augment(&t2s.model, &mono, &d.train, &DecodeConfig::greedy().with_max_len(6)).unwrap();
    assert!(aug.len() >= d.train.len());
    assert!(aug.pairs[..d.train.len()].iter().all(|p| p.provenance == Provenance::Real));
    assert!(aug.pairs[d.train.len()..].iter().all(|p| p.provenance == Provenance::SyntheticBt));
    let swapped = swap_sides(&d.train);
    assert_eq!(swapped.pairs[0].x, d.train.pairs[0].y);
}
