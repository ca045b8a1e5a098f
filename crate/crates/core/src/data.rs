//! Synthetic speech-translation triplets and their JSON-lines form.
//!
//! Each source token is rendered as a few noisy copies of a per-token
//! prototype vector, so transcripts align monotonically with frames. The
//! translation is a fixed token-wise bijection of the transcript with
//! occasional adjacent swaps, so it is only mostly monotonic.

use std::collections::VecDeque;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::LabelSource;
use crate::rng::Rng;
use crate::tensor::Matrix;

/// Significant digits kept for frame values in JSON-lines files.
pub const FRAME_DIGITS: usize = 6;

/// One (speech, transcript, translation) example.
#[derive(Clone, Debug, PartialEq)]
pub struct Triplet {
    /// `F x feat_dim`.
    pub frames: Matrix<f32>,
    pub transcript_ids: Vec<usize>,
    pub translation_ids: Vec<usize>,
}

impl Triplet {
    pub fn labels(&self, source: LabelSource) -> &[usize] {
        match source {
            LabelSource::Transcript => &self.transcript_ids,
            LabelSource::Translation => &self.translation_ids,
        }
    }
}

/// Generator settings for the synthetic task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSpec {
    pub vocab_src: usize,
    pub vocab_tgt: usize,
    /// Zipf exponent over source ranks.
    pub zipf_s: f64,
    /// Frames per source token, drawn uniformly from `[expand_min, expand_max]`.
    pub expand_min: usize,
    pub expand_max: usize,
    pub noise_sigma: f64,
    /// Chance of swapping a pair of adjacent target tokens.
    pub swap_prob: f64,
    pub len_min: usize,
    pub len_max: usize,
    pub feat_dim: usize,
    pub seed: u64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec {
            vocab_src: 512,
            vocab_tgt: 512,
            zipf_s: 1.0,
            expand_min: 3,
            expand_max: 5,
            noise_sigma: 0.3,
            swap_prob: 0.1,
            len_min: 3,
            len_max: 10,
            feat_dim: 16,
            seed: 42,
        }
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_src == 0 {
            return Err(Error::config("vocab_src", "must be positive"));
        }
        if self.vocab_tgt < self.vocab_src {
            return Err(Error::config(
                "vocab_tgt",
                "must be at least vocab_src for the token bijection",
            ));
        }
        if self.expand_min == 0 {
            return Err(Error::config("expand_min", "must be at least 1"));
        }
        if self.expand_max < self.expand_min {
            return Err(Error::config("expand_max", "must be >= expand_min"));
        }
        if !(0.0..=0.5).contains(&self.swap_prob) {
            return Err(Error::config("swap_prob", "must be in [0, 0.5]"));
        }
        if self.len_min == 0 || self.len_max < self.len_min {
            return Err(Error::config("len_max", "need 1 <= len_min <= len_max"));
        }
        if self.feat_dim == 0 {
            return Err(Error::config("feat_dim", "must be positive"));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::config("noise_sigma", "must be non-negative"));
        }
        Ok(())
    }

    /// Zipf weights `1 / (rank + 1)^s`, normalized into a CDF.
    fn zipf_cdf(&self) -> Vec<f64> {
        let weights: Vec<f64> = (0..self.vocab_src)
            .map(|r| ((r + 1) as f64).powf(-self.zipf_s))
            .collect();
        let total: f64 = weights.iter().sum();
        let mut acc = 0.0;
        weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect()
    }

    /// The fixed source-to-target token map.
    pub fn bijection(&self) -> Vec<usize> {
        let mut perm: Vec<usize> = (0..self.vocab_tgt).collect();
        Rng::derive(self.seed, &[2]).shuffle(&mut perm);
        perm.truncate(self.vocab_src);
        perm
    }

    /// Standard-normal prototype per source token, `V_src x feat_dim`.
    pub fn prototypes(&self) -> Matrix<f32> {
        let mut rng = Rng::derive(self.seed, &[1]);
        Matrix::from_fn(self.vocab_src, self.feat_dim, |_, _| rng.normal() as f32)
    }
}

/// Draws `n` triplets. Same spec, same output.
///
/// `stream` selects an independent sample set from the same task (the
/// same prototypes and bijection), e.g. 0 for training and 1 for held-out.
pub fn generate_split(spec: &TaskSpec, n: usize, stream: u64) -> Result<Vec<Triplet>> {
    spec.validate()?;
    let cdf = spec.zipf_cdf();
    let protos = spec.prototypes();
    let bij = spec.bijection();
    let mut rng = Rng::derive(spec.seed, &[3, stream]);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let len = spec.len_min + rng.below_usize(spec.len_max - spec.len_min + 1);
        let transcript: Vec<usize> = (0..len)
            .map(|_| {
                let u = rng.uniform();
                cdf.partition_point(|&c| c <= u).min(spec.vocab_src - 1)
            })
            .collect();
        let mut translation: Vec<usize> = transcript.iter().map(|&s| bij[s]).collect();
        let mut i = 0;
        while i + 1 < translation.len() {
            if rng.uniform() < spec.swap_prob {
                translation.swap(i, i + 1);
                i += 2;
            } else {
                i += 1;
            }
        }
        let mut frames = Vec::new();
        let mut rows = 0;
        for &tok in &transcript {
            let reps = spec.expand_min + rng.below_usize(spec.expand_max - spec.expand_min + 1);
            for _ in 0..reps {
                for &p in protos.row(tok) {
                    let noise = if spec.noise_sigma > 0.0 {
                        spec.noise_sigma * rng.normal()
                    } else {
                        0.0
                    };
                    frames.push(p + noise as f32);
                }
                rows += 1;
            }
        }
        out.push(Triplet {
            frames: Matrix::from_vec(rows, spec.feat_dim, frames),
            transcript_ids: transcript,
            translation_ids: translation,
        });
    }
    Ok(out)
}

pub fn generate(spec: &TaskSpec, n: usize) -> Result<Vec<Triplet>> {
    generate_split(spec, n, 0)
}

/// Largest absolute gap between the empirical rank CDF of source tokens and
/// the Zipf CDF (a Kolmogorov-Smirnov statistic). Diagnostic only.
pub fn zipf_ks_statistic(spec: &TaskSpec, data: &[Triplet]) -> f64 {
    let mut counts = vec![0usize; spec.vocab_src];
    let mut total = 0usize;
    for t in data {
        for &s in &t.transcript_ids {
            counts[s] += 1;
            total += 1;
        }
    }
    if total == 0 {
        return 0.0;
    }
    let mut acc = 0.0;
    counts
        .iter()
        .zip(spec.zipf_cdf())
        .map(|(&c, cdf)| {
            acc += c as f64 / total as f64;
            (acc - cdf).abs()
        })
        .fold(0.0, f64::max)
}

/// Errors if any id is outside the declared vocabularies.
pub fn check_ids(data: &[Triplet], vocab_src: usize, vocab_tgt: usize) -> Result<()> {
    for t in data {
        for (i, &s) in t.transcript_ids.iter().enumerate() {
            if s >= vocab_src {
                return Err(Error::IdOutOfRange {
                    id: s,
                    bound: vocab_src,
                    index: Some(i),
                });
            }
        }
        for (i, &s) in t.translation_ids.iter().enumerate() {
            if s >= vocab_tgt {
                return Err(Error::IdOutOfRange {
                    id: s,
                    bound: vocab_tgt,
                    index: Some(i),
                });
            }
        }
    }
    Ok(())
}

fn round_sig(x: f32) -> f64 {
    format!("{:.*e}", FRAME_DIGITS - 1, x)
        .parse()
        .expect("formatted float parses")
}

fn triplet_to_json(t: &Triplet) -> Value {
    let frames: Vec<Value> = (0..t.frames.rows())
        .map(|r| Value::from(t.frames.row(r).iter().map(|&x| round_sig(x)).collect::<Vec<_>>()))
        .collect();
    serde_json::json!({
        "frames": frames,
        "transcript_ids": t.transcript_ids,
        "translation_ids": t.translation_ids,
    })
}

/// One JSON object per line; frame values keep [`FRAME_DIGITS`] significant digits.
pub fn write_jsonl(path: impl AsRef<Path>, data: &[Triplet]) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for t in data {
        serde_json::to_writer(&mut w, &triplet_to_json(t)).expect("json value serializes");
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn ids_field(obj: &serde_json::Map<String, Value>, key: &str, line: usize) -> Result<Vec<usize>> {
    let v = obj.get(key).ok_or_else(|| Error::MissingKey {
        line,
        key: key.to_owned(),
    })?;
    serde_json::from_value(v.clone()).map_err(|e| Error::Parse {
        line,
        message: format!("`{key}`: {e}"),
    })
}

fn parse_line(text: &str, line: usize) -> Result<Triplet> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        line,
        message: e.to_string(),
    })?;
    let obj = value.as_object().ok_or_else(|| Error::Parse {
        line,
        message: "expected a JSON object".into(),
    })?;
    let rows: Vec<Vec<f32>> = {
        let v = obj.get("frames").ok_or_else(|| Error::MissingKey {
            line,
            key: "frames".into(),
        })?;
        serde_json::from_value(v.clone()).map_err(|e| Error::Parse {
            line,
            message: format!("`frames`: {e}"),
        })?
    };
    let transcript_ids = ids_field(obj, "transcript_ids", line)?;
    let translation_ids = ids_field(obj, "translation_ids", line)?;
    let dim = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != dim) {
        return Err(Error::Parse {
            line,
            message: "`frames` rows differ in length".into(),
        });
    }
    Ok(Triplet {
        frames: Matrix::from_vec(rows.len(), dim, rows.into_iter().flatten().collect()),
        transcript_ids,
        translation_ids,
    })
}

/// Reads a JSON-lines dataset. Blank lines are ignored; an empty file is an
/// empty dataset.
pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<Triplet>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_line(&line, i + 1)?);
    }
    Ok(out)
}

fn target_cost(t: &Triplet) -> usize {
    t.translation_ids.len().max(1)
}

/// Length-bucketed batches of dataset indices, reshuffled every epoch.
///
/// A batch's cost is `items * longest target`, i.e. padded target tokens,
/// which bounds the summed target tokens as well.
#[derive(Clone, Debug)]
pub struct BatchIterator {
    lengths: Vec<usize>,
    batch_tokens: usize,
    seed: u64,
    epoch: u64,
    pending: VecDeque<Vec<usize>>,
}

impl BatchIterator {
    pub fn new(data: &[Triplet], batch_tokens: usize, seed: u64) -> Result<Self> {
        let lengths: Vec<usize> = data.iter().map(target_cost).collect();
        if let Some((index, &tokens)) = lengths.iter().enumerate().find(|(_, &l)| l > batch_tokens) {
            return Err(Error::OversizedItem {
                index,
                tokens,
                capacity: batch_tokens,
            });
        }
        Ok(BatchIterator {
            lengths,
            batch_tokens,
            seed,
            epoch: 0,
            pending: VecDeque::new(),
        })
    }

    /// The full batch list for `epoch`, independent of iteration state.
    pub fn epoch_batches(&self, epoch: u64) -> Vec<Vec<usize>> {
        if self.lengths.is_empty() {
            return Vec::new();
        }
        let mut rng = Rng::derive(self.seed, &[0x6261_7463, epoch]);
        let mut order: Vec<usize> = (0..self.lengths.len()).collect();
        rng.shuffle(&mut order);
        order.sort_by_key(|&i| self.lengths[i]);
        let mut batches = Vec::new();
        let mut current: Vec<usize> = Vec::new();
        let mut longest = 0;
        for i in order {
            let len = self.lengths[i];
            let widest = longest.max(len);
            if !current.is_empty() && (current.len() + 1) * widest > self.batch_tokens {
                batches.push(std::mem::take(&mut current));
                longest = 0;
            }
            longest = longest.max(len);
            current.push(i);
        }
        if !current.is_empty() {
            batches.push(current);
        }
        rng.shuffle(&mut batches);
        batches
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }
}

impl Iterator for BatchIterator {
    type Item = Vec<usize>;

    /// Endless: rolls into the next epoch when one is exhausted.
    fn next(&mut self) -> Option<Vec<usize>> {
        if self.lengths.is_empty() {
            return None;
        }
        if self.pending.is_empty() {
            self.pending = self.epoch_batches(self.epoch).into();
            self.epoch += 1;
        }
        self.pending.pop_front()
    }
}

pub fn batch_iterator(data: &[Triplet], batch_tokens: usize, seed: u64) -> Result<BatchIterator> {
    BatchIterator::new(data, batch_tokens, seed)
}
