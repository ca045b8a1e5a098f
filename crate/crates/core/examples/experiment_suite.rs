//! Runs a small named suite through the same path as `colactc suite` and
//! prints the summary table.
//!
//! cargo run --release --example experiment_suite -- [steps] [out_dir]

use std::path::PathBuf;

use anyhow::Result;
use colactc::cli::{run_suite, summary_csv, SuiteFile};
use serde_json::json;

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map_or(Ok(200), |s| s.parse())?;
    let out: PathBuf = args
        .next()
        .map_or_else(|| std::env::temp_dir().join("colactc-suite"), PathBuf::from);

    let suite: SuiteFile = serde_json::from_value(json!({
        "base": {
            "vocab_src": 128, "vocab_tgt": 128, "train_size": 1000, "eval_size": 100,
            "max_steps": steps, "decode_items": 20, "deterministic": true
        },
        "runs": [
            {"name": "baseline", "lambda": 0.0, "mapping": "identity", "label_size": 128},
            {"name": "genuine", "mapping": "identity", "label_size": 128},
            {"name": "mod-16", "mapping": "mod", "label_size": 16},
            {"name": "div-16", "mapping": "div", "label_size": 16},
            {"name": "random-16", "mapping": "random", "label_size": 16},
            {"name": "translation-mod-16", "mapping": "mod", "label_size": 16, "label_source": "translation"}
        ]
    }))?;
    let rows = run_suite(&suite, &out)?;
    print!("{}", summary_csv(&rows));
    println!("artifacts under {}", out.display());
    Ok(())
}
