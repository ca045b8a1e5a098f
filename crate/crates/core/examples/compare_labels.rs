//! Baseline vs genuine-label CTC vs coarse labels vs random labels on the
//! synthetic task, one seed.
//!
//! cargo run --release --example compare_labels -- [seed] [steps] [batch_tokens]

use anyhow::Result;
use colactc::data::{generate_split, TaskSpec};
use colactc::model::{evaluate, train, LabelSource, TrainConfig};
use colactc::{CoarseMapper, MappingKind};

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(Ok(1), |s| s.parse())?;
    let steps: usize = args.next().map_or(Ok(3000), |s| s.parse())?;
    let batch_tokens: usize = args.next().map_or(Ok(64), |s| s.parse())?;

    let spec = TaskSpec::default();
    let train_set = generate_split(&spec, 4000, 0)?;
    let held_out = generate_split(&spec, 500, 1)?;
    let runs = [
        ("baseline", 0.0, MappingKind::Identity, spec.vocab_src),
        ("genuine", 0.3, MappingKind::Identity, spec.vocab_src),
        ("mod-64", 0.3, MappingKind::Modulo, 64),
        ("random-64", 0.3, MappingKind::Random, 64),
    ];
    println!("run        final_total  mean_last100  train_acc  held_out_acc");
    for (name, lambda, kind, label_size) in runs {
        let cfg = TrainConfig {
            lambda,
            label_size,
            max_steps: steps,
            batch_tokens,
            seed,
            ..TrainConfig::default()
        };
        let mapper = CoarseMapper::with_seed(kind, spec.vocab_src, label_size, seed)?;
        let out = train::<f32>(&cfg, &train_set, Some(mapper.clone()), LabelSource::Transcript, |_| {
            Ok(())
        })?;
        let tail = &out.metrics[out.metrics.len().saturating_sub(100)..];
        let tail_mean = tail.iter().map(|m| m.total_loss).sum::<f64>() / tail.len() as f64;
        let mut m = mapper;
        let report = evaluate(&out.params, &cfg, &held_out, Some(&mut m), LabelSource::Transcript)?;
        let fit = evaluate(
            &out.params,
            &cfg,
            &train_set[..500],
            Some(&mut m),
            LabelSource::Transcript,
        )?;
        println!(
            "{name:<10} {:>11.4} {:>13.4} {:>9.2}% {:>12.2}%",
            out.metrics.last().map_or(f64::NAN, |m| m.total_loss),
            tail_mean,
            100.0 * fit.token_accuracy,
            100.0 * report.token_accuracy
        );
    }
    Ok(())
}
