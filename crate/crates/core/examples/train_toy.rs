//! Trains a small CTC-regularized model on the synthetic task and reports
//! held-out accuracy.
//!
//! cargo run --release --example train_toy -- [steps] [mapping] [label_size]

use std::time::Instant;

use anyhow::Result;
use colactc::data::{generate_split, TaskSpec};
use colactc::model::decode::exact_match_accuracy;
use colactc::model::{evaluate, train, DecodeMode, LabelSource, TrainConfig};
use colactc::{CoarseMapper, MappingKind};

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map_or(Ok(600), |s| s.parse())?;
    let kind: MappingKind = args.next().map_or(Ok(MappingKind::Modulo), |s| s.parse())?;
    let label_size: usize = args.next().map_or(Ok(64), |s| s.parse())?;

    let spec = TaskSpec::default();
    let train_set = generate_split(&spec, 4000, 0)?;
    let held_out = generate_split(&spec, 300, 1)?;
    let cfg = TrainConfig {
        label_size,
        max_steps: steps,
        ..TrainConfig::default()
    };
    let mapper = CoarseMapper::new(kind, spec.vocab_src, label_size)?;

    let start = Instant::now();
    let out = train::<f32>(&cfg, &train_set, Some(mapper.clone()), LabelSource::Transcript, |m| {
        if m.step % 100 == 0 {
            println!(
                "step {:5}  total {:.4}  mle {:.4}  ctc {}",
                m.step,
                m.total_loss,
                m.mle_loss,
                m.ctc_loss.map_or("-".into(), |c| format!("{c:.4}"))
            );
        }
        Ok(())
    })?;
    let secs = start.elapsed().as_secs_f64();
    println!("{steps} steps in {secs:.1}s ({:.1} ms/step)", 1e3 * secs / steps as f64);
    let t = out.timers;
    println!(
        "encode {:?} decode {:?} mle {:?} ctc {:?} backward {:?} optim {:?}",
        t.encode, t.decode, t.mle_head, t.ctc, t.backward, t.optimizer
    );

    let mut eval_mapper = mapper;
    let report = evaluate(
        &out.params,
        &cfg,
        &held_out,
        Some(&mut eval_mapper),
        LabelSource::Transcript,
    )?;
    println!("held-out token accuracy {:.2}%", 100.0 * report.token_accuracy);
    let exact = exact_match_accuracy(&out.params, &cfg, &held_out[..50], DecodeMode::Greedy)?;
    println!("greedy exact match on 50 utterances {:.1}%", 100.0 * exact);
    Ok(())
}
