//! Checks the CTC dynamic program against explicit path enumeration on
//! random small lattices, then shows the per-frame posteriors of one case.
//!
//! cargo run --example ctc_oracle -- [instances] [seed]

use anyhow::Result;
use colactc::ctc::{brute_force_nll, ctc_neg_log_likelihood, inspect};
use colactc::{LogProbLattice, Matrix, Rng};

fn random_lattice(rng: &mut Rng, frames: usize, classes: usize) -> Result<LogProbLattice<f64>> {
    let logits = Matrix::from_fn(frames, classes, |_, _| 2.0 * rng.normal());
    Ok(LogProbLattice::from_logits(logits)?)
}

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(Ok(500), |s| s.parse())?;
    let seed: u64 = args.next().map_or(Ok(0), |s| s.parse())?;

    let mut rng = Rng::new(seed);
    let mut worst = 0.0f64;
    let mut infeasible = 0;
    for _ in 0..n {
        let frames = 1 + rng.below_usize(6);
        let labels = 1 + rng.below_usize(3);
        let len = rng.below_usize(4);
        let z: Vec<usize> = (0..len).map(|_| rng.below_usize(labels)).collect();
        let lat = random_lattice(&mut rng, frames, labels + 1)?;
        let dp = ctc_neg_log_likelihood(&lat, &z)?.nll;
        let brute = brute_force_nll(&lat, &z)?;
        if dp.is_infinite() && brute.is_infinite() {
            infeasible += 1;
            continue;
        }
        worst = worst.max((dp - brute).abs());
    }
    println!("{n} instances, {infeasible} infeasible, max |dp - brute| = {worst:.3e}");

    let lat = random_lattice(&mut rng, 5, 3)?;
    let report = inspect(&lat, &[0, 1, 1])?;
    println!(
        "labels {:?} on 5 frames: feasible {}, min frames {}",
        report.labels, report.feasible, report.min_frames
    );
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
