//! Trains a baseline and a CTC-regularized model briefly and compares the
//! mean pairwise cosine similarity of their encoder outputs.
//!
//! cargo run --release --example similarity -- [steps] [utterances]

use anyhow::Result;
use colactc::analysis::{encoder_similarity, matrix_tsv};
use colactc::data::{generate_split, TaskSpec};
use colactc::model::{train, LabelSource, TrainConfig};
use colactc::{CoarseMapper, MappingKind};

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map_or(Ok(500), |s| s.parse())?;
    let n: usize = args.next().map_or(Ok(50), |s| s.parse())?;

    let spec = TaskSpec::default();
    let train_set = generate_split(&spec, 2000, 0)?;
    let held_out = generate_split(&spec, n, 1)?;
    for (name, lambda, kind, label_size) in [
        ("baseline", 0.0, MappingKind::Identity, spec.vocab_src),
        ("ctc", 0.3, MappingKind::Identity, spec.vocab_src),
        ("mod-64", 0.3, MappingKind::Modulo, 64),
    ] {
        let cfg = TrainConfig {
            lambda,
            label_size,
            max_steps: steps,
            ..TrainConfig::default()
        };
        let mapper = CoarseMapper::new(kind, spec.vocab_src, label_size)?;
        let out = train::<f32>(&cfg, &train_set, Some(mapper), LabelSource::Transcript, |_| Ok(()))?;
        let report = encoder_similarity(&out.params, &held_out, Some(0))?;
        println!(
            "{name:<9} mean cosine {:.4} over {} utterances ({} skipped)",
            report.corpus_mean,
            n - report.skipped,
            report.skipped
        );
        if let Some(m) = &report.matrix {
            let tsv = matrix_tsv(m);
            println!("  utterance 0, first row: {}", tsv.lines().next().unwrap_or(""));
        }
    }
    Ok(())
}
