//! Generates the synthetic speech-translation task, round-trips it through
//! JSON lines and walks one epoch of token-budget batches.
//!
//! cargo run --release --example toy_task -- [items] [batch_tokens]

use anyhow::Result;
use colactc::ctc::is_feasible;
use colactc::data::{batch_iterator, generate_split, read_jsonl, write_jsonl, zipf_ks_statistic, TaskSpec};

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(Ok(1000), |s| s.parse())?;
    let batch_tokens: usize = args.next().map_or(Ok(64), |s| s.parse())?;

    let spec = TaskSpec::default();
    let data = generate_split(&spec, n, 0)?;
    let t = &data[0];
    println!(
        "first triplet: {} frames x {} features, transcript {:?}, translation {:?}",
        t.frames.rows(),
        t.frames.cols(),
        t.transcript_ids,
        t.translation_ids
    );
    println!(
        "zipf KS statistic over transcripts: {:.4}",
        zipf_ks_statistic(&spec, &data)
    );

    let k = 3;
    let feasible = data
        .iter()
        .filter(|t| is_feasible(t.frames.rows().div_ceil(k), &t.transcript_ids))
        .count();
    println!("{feasible}/{n} transcripts are CTC-feasible after {k}x frame concatenation");

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("train.jsonl");
    write_jsonl(&path, &data)?;
    let back = read_jsonl(&path)?;
    let max_err = data
        .iter()
        .zip(&back)
        .flat_map(|(a, b)| a.frames.as_slice().iter().zip(b.frames.as_slice()))
        .map(|(x, y)| ((x - y) / x.abs().max(1e-6)).abs())
        .fold(0.0f32, f32::max);
    println!(
        "jsonl: {} bytes, ids identical {}, worst relative frame error {max_err:.1e}",
        std::fs::metadata(&path)?.len(),
        data.iter()
            .zip(&back)
            .all(|(a, b)| a.transcript_ids == b.transcript_ids && a.translation_ids == b.translation_ids)
    );

    let batches = batch_iterator(&data, batch_tokens, spec.seed)?.epoch_batches(0);
    let sizes: Vec<usize> = batches.iter().map(Vec::len).collect();
    println!(
        "epoch 0: {} batches, items per batch min {} max {} mean {:.1}",
        batches.len(),
        sizes.iter().min().unwrap_or(&0),
        sizes.iter().max().unwrap_or(&0),
        n as f64 / batches.len() as f64
    );
    Ok(())
}
