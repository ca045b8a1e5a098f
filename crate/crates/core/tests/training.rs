use colactc::data::{generate_split, TaskSpec};
use colactc::model::{evaluate, train, LabelSource, TrainConfig, Trainer};
use colactc::{CoarseMapper, MappingKind, Triplet};

fn small_task() -> (TaskSpec, Vec<Triplet>, Vec<Triplet>) {
    let spec = TaskSpec {
        vocab_src: 32,
        vocab_tgt: 32,
        len_min: 3,
        len_max: 6,
        ..TaskSpec::default()
    };
    let train_set = generate_split(&spec, 600, 0).unwrap();
    let held_out = generate_split(&spec, 100, 1).unwrap();
    (spec, train_set, held_out)
}

fn small_config(steps: usize) -> TrainConfig {
    TrainConfig {
        vocab_src: 32,
        vocab_tgt: 32,
        label_size: 8,
        d_model: 32,
        heads: 2,
        ffn_dim: 64,
        max_steps: steps,
        seed: 3,
        ..TrainConfig::default()
    }
}

fn mean_loss(metrics: &[colactc::model::StepMetrics]) -> f64 {
    metrics.iter().map(|m| m.total_loss).sum::<f64>() / metrics.len() as f64
}

#[test]
fn loss_falls_and_accuracy_beats_chance() {
    let (_, train_set, held_out) = small_task();
    let cfg = small_config(1500);
    let mapper = CoarseMapper::new(MappingKind::Modulo, 32, 8).unwrap();
    let out = train::<f32>(&cfg, &train_set, Some(mapper.clone()), LabelSource::Transcript, |_| {
        Ok(())
    })
    .unwrap();
    assert_eq!(out.metrics.len(), 1500);
    let early = mean_loss(&out.metrics[..50]);
    let late = mean_loss(&out.metrics[1450..]);
    assert!(late < 0.6 * early, "loss {early} -> {late}");

    let mut m = mapper;
    let report = evaluate(&out.params, &cfg, &held_out, Some(&mut m), LabelSource::Transcript).unwrap();
    assert!(
        report.token_accuracy > 5.0 / 33.0,
        "token accuracy {}",
        report.token_accuracy
    );
}

#[test]
fn training_is_reproducible_across_trainers() {
    let (_, train_set, _) = small_task();
    let cfg = TrainConfig {
        deterministic: true,
        ..small_config(40)
    };
    let run = || {
        let mapper = CoarseMapper::with_seed(MappingKind::Random, 32, 8, 9).unwrap();
        train::<f64>(&cfg, &train_set, Some(mapper), LabelSource::Translation, |_| Ok(())).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.params, b.params);
    assert!(a.metrics.iter().all(|m| m.wall_ms.is_none()));
}

#[test]
fn stepping_by_hand_matches_train() {
    let (_, train_set, _) = small_task();
    let cfg = TrainConfig {
        deterministic: true,
        ..small_config(15)
    };
    let mapper = CoarseMapper::new(MappingKind::Division, 32, 8).unwrap();
    let whole = train::<f32>(&cfg, &train_set, Some(mapper.clone()), LabelSource::Transcript, |_| {
        Ok(())
    })
    .unwrap();
    let mut trainer = Trainer::<f32>::new(&cfg, &train_set, Some(mapper), LabelSource::Transcript).unwrap();
    let manual: Vec<_> = (0..15).map(|_| trainer.step().unwrap()).collect();
    assert_eq!(manual, whole.metrics);
    assert_eq!(trainer.steps_done(), 15);
}

#[test]
fn baseline_reports_no_ctc_loss() {
    let (_, train_set, _) = small_task();
    let cfg = TrainConfig {
        lambda: 0.0,
        ..small_config(5)
    };
    let out = train::<f32>(&cfg, &train_set, None, LabelSource::Transcript, |_| Ok(())).unwrap();
    for m in &out.metrics {
        assert_eq!(m.ctc_loss, None);
        assert_eq!(m.total_loss, m.mle_loss);
    }
}

#[test]
fn generated_transcripts_are_mostly_feasible() {
    let spec = TaskSpec::default();
    let data = generate_split(&spec, 2000, 0).unwrap();
    let infeasible = data
        .iter()
        .filter(|t| !colactc::ctc::is_feasible(t.frames.rows().div_ceil(3), &t.transcript_ids))
        .count();
    assert!(infeasible * 100 < data.len(), "{infeasible} infeasible");
}
