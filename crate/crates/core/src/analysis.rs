//! Encoder similarity diagnostics and training-curve extraction.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::Triplet;
use crate::error::{Error, Result};
use crate::model::{encode, load_checkpoint, ModelParams};
use crate::tensor::{Matrix, Scalar};

/// Cosine similarity of every row pair of `x`. Zero rows have similarity 0
/// with everything, including themselves.
pub fn cosine_matrix<T: Scalar>(x: &Matrix<T>) -> Matrix<f64> {
    let n = x.rows();
    let mut unit = Matrix::<f64>::zeros(n, x.cols());
    for r in 0..n {
        let norm = x.row(r).iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (u, v) in unit.row_mut(r).iter_mut().zip(x.row(r)) {
                *u = v.as_f64() / norm;
            }
        }
    }
    crate::tensor::matmul(unit.view(), unit.view().t())
}

/// Mean cosine over unordered pairs `i < j`; `None` for fewer than two rows.
pub fn mean_pairwise_cosine<T: Scalar>(x: &Matrix<T>) -> Option<f64> {
    let n = x.rows();
    if n < 2 {
        return None;
    }
    let sim = cosine_matrix(x);
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += sim.get(i, j);
        }
    }
    Some(sum / (n * (n - 1) / 2) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    /// `None` where the utterance had a single encoder position.
    pub per_utterance: Vec<Option<f64>>,
    /// Mean over the utterances that were not skipped.
    pub corpus_mean: f64,
    pub skipped: usize,
    /// Full similarity matrix of one utterance, when requested.
    pub matrix: Option<Vec<Vec<f64>>>,
}

pub fn encoder_similarity<T: Scalar>(
    params: &ModelParams<T>,
    data: &[Triplet],
    dump: Option<usize>,
) -> Result<SimilarityReport> {
    if data.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if let Some(i) = dump.filter(|&i| i >= data.len()) {
        return Err(Error::IdOutOfRange {
            id: i,
            bound: data.len(),
            index: None,
        });
    }
    let mut per_utterance = Vec::with_capacity(data.len());
    let mut matrix = None;
    for (i, t) in data.iter().enumerate() {
        let x = encode(&t.frames.cast::<T>(), params)?.states;
        per_utterance.push(mean_pairwise_cosine(&x));
        if dump == Some(i) {
            let m = cosine_matrix(&x);
            matrix = Some((0..m.rows()).map(|r| m.row(r).to_vec()).collect());
        }
    }
    let kept: Vec<f64> = per_utterance.iter().flatten().copied().collect();
    let skipped = per_utterance.len() - kept.len();
    let corpus_mean = if kept.is_empty() {
        f64::NAN
    } else {
        kept.iter().sum::<f64>() / kept.len() as f64
    };
    Ok(SimilarityReport {
        per_utterance,
        corpus_mean,
        skipped,
        matrix,
    })
}

/// Loads parameters in 64-bit and runs [`encoder_similarity`].
pub fn checkpoint_similarity(
    checkpoint: impl AsRef<Path>,
    data: &[Triplet],
    dump: Option<usize>,
) -> Result<SimilarityReport> {
    let ckpt = load_checkpoint::<f64>(checkpoint)?;
    encoder_similarity(&ckpt.params, data, dump)
}

/// Tab-separated matrix rows.
pub fn matrix_tsv(rows: &[Vec<f64>]) -> String {
    let mut out = String::new();
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        writeln!(out, "{}", cells.join("\t")).expect("writing to a String");
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub value: f64,
}

/// Trailing moving average: point `i` averages the last `window` values up
/// to and including `i`, or all of them while fewer are available.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for i in 0..values.len() {
        sum += values[i];
        if i >= w {
            sum -= values[i - w];
        }
        out.push(sum / (i + 1).min(w) as f64);
    }
    out
}

/// Smoothed series of `field` from a metrics JSON-lines stream. Records
/// where the field is null (e.g. `ctc_loss` with the branch off) are
/// dropped before smoothing.
pub fn curve_extract(metrics: &str, field: &str, window: usize) -> Result<Vec<CurvePoint>> {
    if window == 0 {
        return Err(Error::config("window", "must be at least 1"));
    }
    let mut steps = Vec::new();
    let mut values = Vec::new();
    for (i, line) in metrics.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: Value = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        let obj = record.as_object().ok_or_else(|| Error::Parse {
            line: i + 1,
            message: "expected a JSON object".into(),
        })?;
        let Some(v) = obj.get(field) else {
            let mut keys: Vec<String> = obj.keys().cloned().collect();
            keys.sort();
            return Err(Error::UnknownField {
                field: field.to_owned(),
                available: keys,
            });
        };
        if let Some(x) = v.as_f64() {
            let step = obj
                .get("step")
                .and_then(Value::as_u64)
                .map_or(steps.len() + 1, |s| s as usize);
            steps.push(step);
            values.push(x);
        } else if !v.is_null() {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("`{field}` is not a number"),
            });
        }
    }
    Ok(steps
        .into_iter()
        .zip(moving_average(&values, window))
        .map(|(step, value)| CurvePoint { step, value })
        .collect())
}

pub fn curve_from_file(path: impl AsRef<Path>, field: &str, window: usize) -> Result<Vec<CurvePoint>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    curve_extract(&text, field, window)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_and_orthogonal_rows() {
        let same = Matrix::from_fn(4, 3, |_, c| c as f64 + 1.0);
        assert!((mean_pairwise_cosine(&same).unwrap() - 1.0).abs() < 1e-12);
        let eye = Matrix::from_fn(3, 3, |r, c| if r == c { 2.0 } else { 0.0 });
        assert_eq!(mean_pairwise_cosine(&eye).unwrap(), 0.0);
        assert_eq!(mean_pairwise_cosine(&Matrix::<f64>::zeros(1, 3)), None);
    }

    #[test]
    fn positive_rescaling_is_invisible() {
        let x = Matrix::from_fn(5, 4, |r, c| ((r * 7 + c * 3) % 5) as f64 - 1.5);
        let mut y = x.clone();
        for r in 0..5 {
            let s = 0.1 + r as f64;
            y.row_mut(r).iter_mut().for_each(|v| *v *= s);
        }
        let a = mean_pairwise_cosine(&x).unwrap();
        let b = mean_pairwise_cosine(&y).unwrap();
        assert!((a - b).abs() < 1e-12);
        let m = cosine_matrix(&x);
        for i in 0..5 {
            assert!((m.get(i, i) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn moving_average_conventions() {
        let xs: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(moving_average(&xs, 1), xs);
        let smoothed = moving_average(&xs, 5);
        let want = [1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        for (a, b) in smoothed.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(moving_average(&[2.5; 7], 3).iter().all(|&v| v == 2.5));
    }

    #[test]
    fn curve_fields_and_nulls() {
        let text =
            "{\"step\":1,\"total_loss\":4.0,\"ctc_loss\":null}\n{\"step\":2,\"total_loss\":2.0,\"ctc_loss\":null}\n";
        let c = curve_extract(text, "total_loss", 2).unwrap();
        assert_eq!(
            c,
            vec![CurvePoint { step: 1, value: 4.0 }, CurvePoint { step: 2, value: 3.0 }]
        );
        assert!(curve_extract(text, "ctc_loss", 1).unwrap().is_empty());
        match curve_extract(text, "bleu", 1) {
            Err(Error::UnknownField { field, available }) => {
                assert_eq!(field, "bleu");
                assert_eq!(available, ["ctc_loss", "step", "total_loss"]);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(curve_extract(text, "total_loss", 0).is_err());
    }
}
