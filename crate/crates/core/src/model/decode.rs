//! Autoregressive decoding from the translation softmax. The CTC head is
//! not consulted.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Triplet;
use crate::error::{Error, Result};
use crate::model::config::TrainConfig;
use crate::model::network::{decoder_states, encode, project, EncodedSpeech};
use crate::model::params::ModelParams;
use crate::tensor::{log_softmax_in_place, Matrix, Scalar};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Greedy,
    #[default]
    Beam,
}

impl fmt::Display for DecodeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecodeMode::Greedy => "greedy",
            DecodeMode::Beam => "beam",
        })
    }
}

impl FromStr for DecodeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(DecodeMode::Greedy),
            "beam" => Ok(DecodeMode::Beam),
            other => Err(Error::config("mode", format!("expected greedy|beam, got {other:?}"))),
        }
    }
}

/// Log-probabilities of the token following `prefix`.
fn next_log_probs<T: Scalar>(
    encoded: &EncodedSpeech<T>,
    prefix: &[usize],
    params: &ModelParams<T>,
) -> Result<Vec<f64>> {
    let states = decoder_states(encoded, prefix, params)?.states;
    let last = Matrix::from_vec(1, states.cols(), states.row(states.rows() - 1).to_vec());
    let mut logits = project(&last, &params.w_mle);
    log_softmax_in_place(logits.row_mut(0));
    Ok(logits.row(0).iter().map(|x| x.as_f64()).collect())
}

/// Length-normalized log-probability of `y` followed by EOS:
/// `(sum_t log p(y_t | y_<t) + log p(EOS | y)) / (|y| + 1)`.
pub fn sequence_score<T: Scalar>(encoded: &EncodedSpeech<T>, y: &[usize], params: &ModelParams<T>) -> Result<f64> {
    let eos = params.dims.eos();
    let states = decoder_states(encoded, y, params)?.states;
    let mut logits = project(&states, &params.w_mle);
    let mut total = 0.0;
    for (t, &tok) in y.iter().chain(std::iter::once(&eos)).enumerate() {
        let row = logits.row_mut(t);
        log_softmax_in_place(row);
        total += row[tok].as_f64();
    }
    Ok(total / (y.len() + 1) as f64)
}

fn argmax(xs: &[f64]) -> usize {
    (0..xs.len()).fold(0, |b, i| if xs[i] > xs[b] { i } else { b })
}

fn greedy_from<T: Scalar>(encoded: &EncodedSpeech<T>, params: &ModelParams<T>, max_len: usize) -> Result<Vec<usize>> {
    let eos = params.dims.eos();
    let mut out = Vec::new();
    while out.len() < max_len {
        let tok = argmax(&next_log_probs(encoded, &out, params)?);
        if tok == eos {
            break;
        }
        out.push(tok);
    }
    Ok(out)
}

pub fn greedy_decode<T: Scalar>(frames: &Matrix<T>, params: &ModelParams<T>, max_len: usize) -> Result<Vec<usize>> {
    greedy_from(&encode(frames, params)?, params, max_len)
}

/// Beam search; the result maximizes [`sequence_score`] among all finished
/// hypotheses, the surviving beam and the greedy output.
pub fn beam_search<T: Scalar>(
    frames: &Matrix<T>,
    params: &ModelParams<T>,
    beam: usize,
    max_len: usize,
) -> Result<Vec<usize>> {
    let encoded = encode(frames, params)?;
    let greedy = greedy_from(&encoded, params, max_len)?;
    if beam <= 1 {
        return Ok(greedy);
    }
    let eos = params.dims.eos();
    let mut alive: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 0.0)];
    let mut finished: Vec<Vec<usize>> = Vec::new();
    for _ in 0..max_len {
        let mut expansions: Vec<(Vec<usize>, f64)> = Vec::new();
        for (prefix, score) in &alive {
            let lp = next_log_probs(&encoded, prefix, params)?;
            let mut order: Vec<usize> = (0..lp.len()).collect();
            order.sort_by(|&a, &b| lp[b].total_cmp(&lp[a]));
            for &tok in order.iter().take(beam) {
                if tok == eos {
                    finished.push(prefix.clone());
                } else {
                    let mut next = prefix.clone();
                    next.push(tok);
                    expansions.push((next, score + lp[tok]));
                }
            }
        }
        expansions.sort_by(|a, b| b.1.total_cmp(&a.1));
        expansions.truncate(beam);
        alive = expansions;
        if alive.is_empty() || finished.len() >= beam {
            break;
        }
    }
    let candidates = finished
        .into_iter()
        .chain(alive.into_iter().map(|(p, _)| p))
        .chain(std::iter::once(greedy));
    let mut best: Option<(Vec<usize>, f64)> = None;
    for c in candidates {
        let s = sequence_score(&encoded, &c, params)?;
        if best.as_ref().is_none_or(|(_, b)| s > *b) {
            best = Some((c, s));
        }
    }
    Ok(best.expect("greedy candidate always present").0)
}

pub fn decode<T: Scalar>(
    frames: &Matrix<T>,
    params: &ModelParams<T>,
    cfg: &TrainConfig,
    mode: DecodeMode,
) -> Result<Vec<usize>> {
    match mode {
        DecodeMode::Greedy => greedy_decode(frames, params, cfg.max_decode_len),
        DecodeMode::Beam => beam_search(frames, params, cfg.beam_size, cfg.max_decode_len),
    }
}

/// Fraction of utterances whose decoded output equals the reference exactly.
pub fn exact_match_accuracy<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &TrainConfig,
    data: &[Triplet],
    mode: DecodeMode,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut hits = 0;
    for t in data {
        if decode(&t.frames.cast(), params, cfg, mode)? == t.translation_ids {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}
