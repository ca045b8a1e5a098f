//! Trains, saves a checkpoint, reloads it in 64-bit and decodes held-out
//! utterances with greedy and beam search.
//!
//! cargo run --release --example checkpoint_decode -- [steps] [beam]

use anyhow::Result;
use colactc::data::{generate_split, TaskSpec};
use colactc::model::decode::exact_match_accuracy;
use colactc::model::{
    beam_search, greedy_decode, load_checkpoint, save_checkpoint, train, DecodeMode, LabelSource, TrainConfig,
};
use colactc::{CoarseMapper, MappingKind};

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map_or(Ok(800), |s| s.parse())?;
    let beam: usize = args.next().map_or(Ok(4), |s| s.parse())?;

    let spec = TaskSpec {
        vocab_src: 64,
        vocab_tgt: 64,
        ..TaskSpec::default()
    };
    let train_set = generate_split(&spec, 2000, 0)?;
    let held_out = generate_split(&spec, 40, 1)?;
    let cfg = TrainConfig {
        vocab_src: 64,
        vocab_tgt: 64,
        label_size: 16,
        max_steps: steps,
        beam_size: beam,
        ..TrainConfig::default()
    };
    let mapper = CoarseMapper::new(MappingKind::Modulo, 64, 16)?;
    let out = train::<f32>(&cfg, &train_set, Some(mapper), LabelSource::Transcript, |_| Ok(()))?;

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&path, &cfg, &out.params)?;
    let ckpt = load_checkpoint::<f64>(&path)?;
    println!(
        "checkpoint {} bytes, {} parameters",
        std::fs::metadata(&path)?.len(),
        ckpt.params.count_params()
    );

    for t in &held_out[..3] {
        let frames = t.frames.cast::<f64>();
        println!("reference {:?}", t.translation_ids);
        println!(
            "greedy    {:?}",
            greedy_decode(&frames, &ckpt.params, cfg.max_decode_len)?
        );
        println!(
            "beam {beam}    {:?}",
            beam_search(&frames, &ckpt.params, beam, cfg.max_decode_len)?
        );
    }
    for mode in [DecodeMode::Greedy, DecodeMode::Beam] {
        let acc = exact_match_accuracy(&ckpt.params, &ckpt.config, &held_out, mode)?;
        println!("{mode} exact match {:.1}%", 100.0 * acc);
    }
    Ok(())
}
