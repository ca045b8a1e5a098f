use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which sequence supplies the CTC labels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    #[default]
    Transcript,
    Translation,
}

impl fmt::Display for LabelSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelSource::Transcript => "transcript",
            LabelSource::Translation => "translation",
        })
    }
}

impl FromStr for LabelSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transcript" => Ok(LabelSource::Transcript),
            "translation" => Ok(LabelSource::Translation),
            other => Err(Error::config(
                "label_source",
                format!("expected transcript|translation, got {other:?}"),
            )),
        }
    }
}

/// Model shape and optimization knobs.
///
/// Defaults are desk-scale: `d_model = 64` and 2 + 2 layers instead of the
/// 256-wide 12 + 6 layer setup, 400 warmup steps instead of 4000.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the CTC term: `(1 - lambda) * mle + lambda * ctc`.
    pub lambda: f64,
    /// Coarse label size `L`; the CTC head has `L + 1` classes.
    pub label_size: usize,
    pub vocab_src: usize,
    pub vocab_tgt: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    /// Frames stacked into one encoder position.
    pub k_concat: usize,
    pub feat_dim: usize,
    pub label_smoothing: f64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub warmup_steps: usize,
    pub max_steps: usize,
    /// Padded target-token budget per batch.
    pub batch_tokens: usize,
    pub dropout: f64,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
    pub beam_size: usize,
    pub max_decode_len: usize,
    pub share_params: bool,
    pub seed: u64,
    /// Evaluate batch items on the rayon pool (results are reduced in item
    /// order either way).
    pub parallel: bool,
    /// Drop wall-clock fields from metrics so runs compare bit-for-bit.
    pub deterministic: bool,
    /// Random labels: draw once per training item instead of per visit.
    pub random_frozen: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.3,
            label_size: 256,
            vocab_src: 512,
            vocab_tgt: 512,
            d_model: 64,
            heads: 4,
            ffn_dim: 256,
            enc_layers: 2,
            dec_layers: 2,
            k_concat: 3,
            feat_dim: 16,
            label_smoothing: 0.1,
            learning_rate: 2e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.98,
            adam_eps: 1e-8,
            warmup_steps: 400,
            max_steps: 3000,
            batch_tokens: 64,
            dropout: 0.2,
            clip_norm: 1.0,
            beam_size: 8,
            max_decode_len: 64,
            share_params: false,
            seed: 1,
            parallel: false,
            deterministic: false,
            random_frozen: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("label_size", self.label_size),
            ("vocab_src", self.vocab_src),
            ("vocab_tgt", self.vocab_tgt),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("ffn_dim", self.ffn_dim),
            ("k_concat", self.k_concat),
            ("feat_dim", self.feat_dim),
            ("batch_tokens", self.batch_tokens),
            ("beam_size", self.beam_size),
            ("max_decode_len", self.max_decode_len),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config("lambda", format!("{} is outside [0, 1]", self.lambda)));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::config(
                "heads",
                format!("{} does not divide d_model {}", self.heads, self.d_model),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout", "must be in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::config("label_smoothing", "must be in [0, 1)"));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if self.share_params && self.label_size != self.vocab_tgt {
            return Err(Error::config(
                "share_params",
                format!(
                    "sharing needs L + 1 = V_tgt + 1, got L = {} and V_tgt = {}",
                    self.label_size, self.vocab_tgt
                ),
            ));
        }
        Ok(())
    }

    pub fn ctc_enabled(&self) -> bool {
        self.lambda > 0.0
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            feat_dim: self.feat_dim,
            k_concat: self.k_concat,
            d_model: self.d_model,
            heads: self.heads,
            ffn_dim: self.ffn_dim,
            enc_layers: self.enc_layers,
            dec_layers: self.dec_layers,
            vocab_tgt: self.vocab_tgt,
            label_size: self.label_size,
            ctc_head: if !self.ctc_enabled() {
                CtcHeadKind::Absent
            } else if self.share_params {
                CtcHeadKind::Shared
            } else {
                CtcHeadKind::Own
            },
        }
    }

    /// Learning rate at 1-based `step`: linear warmup, then inverse square root.
    pub fn lr_at(&self, step: usize) -> f64 {
        let s = step.max(1) as f64;
        let w = self.warmup_steps.max(1) as f64;
        self.learning_rate * (s / w).min((w / s).sqrt())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CtcHeadKind {
    Absent,
    Own,
    /// `W_ctc` is the `W_mle` storage.
    Shared,
}

/// Everything needed to lay out a parameter set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub feat_dim: usize,
    pub k_concat: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub vocab_tgt: usize,
    pub label_size: usize,
    pub ctc_head: CtcHeadKind,
}

impl ModelDims {
    /// Decoder output classes: target tokens plus end-of-sentence.
    pub fn out_classes(&self) -> usize {
        self.vocab_tgt + 1
    }

    /// End-of-sentence id; also fed as the begin-of-sentence input.
    pub fn eos(&self) -> usize {
        self.vocab_tgt
    }

    pub fn ctc_classes(&self) -> usize {
        self.label_size + 1
    }

    pub fn encoder_len(&self, frames: usize) -> usize {
        frames.div_ceil(self.k_concat)
    }
}
