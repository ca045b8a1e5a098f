//! Step time against CTC label size and vocabulary size, with speedups
//! relative to genuine labels and an affine fit of the CTC component.
//!
//! cargo run --release --example bench_label_size -- [frames] [batch]

use anyhow::Result;
use colactc::bench::{affine_fit, bench_grid, grid, speedup_table, BenchOptions};

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let frames: usize = args.next().map_or(Ok(50), |s| s.parse())?;
    let batch: usize = args.next().map_or(Ok(8), |s| s.parse())?;

    let points = grid(&[1024, 4096, 16384], &[256, 1024, 4096, 16384], 64, frames, batch);
    let results = bench_grid::<f32>(&points, &BenchOptions::default())?;
    print!("{}", speedup_table(&results)?);

    let big: Vec<_> = results.iter().filter(|r| r.point.vocab == 16384).collect();
    let xs: Vec<f64> = big.iter().map(|r| r.point.label_size as f64).collect();
    let ys: Vec<f64> = big
        .iter()
        .map(|r| r.component("ctc").unwrap_or_default().median_ms)
        .collect();
    let fit = affine_fit(&xs, &ys)?;
    println!(
        "ctc component at V=16384: {:.3} ms + {:.5} ms per label, R^2 = {:.4}",
        fit.intercept, fit.slope, fit.r_squared
    );
    Ok(())
}
