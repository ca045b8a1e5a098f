use crate::model::config::{CtcHeadKind, ModelDims};
use crate::model::layers::{impl_params, join, Attention, FeedForward, LayerNorm, Linear, Params};
use crate::rng::Rng;
use crate::tensor::{Matrix, Scalar};

/// Pre-norm encoder block: self-attention then feed-forward.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer<T> {
    pub attn_norm: LayerNorm<T>,
    pub attn: Attention<T>,
    pub ffn_norm: LayerNorm<T>,
    pub ffn: FeedForward<T>,
}
impl_params!(EncoderLayer {
    attn_norm,
    attn,
    ffn_norm,
    ffn
});

/// Pre-norm decoder block: causal self-attention, cross-attention, feed-forward.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderLayer<T> {
    pub self_norm: LayerNorm<T>,
    pub self_attn: Attention<T>,
    pub cross_norm: LayerNorm<T>,
    pub cross_attn: Attention<T>,
    pub ffn_norm: LayerNorm<T>,
    pub ffn: FeedForward<T>,
}
impl_params!(DecoderLayer {
    self_norm,
    self_attn,
    cross_norm,
    cross_attn,
    ffn_norm,
    ffn
});

/// All trainable tensors of the encoder-decoder.
///
/// When the CTC head is shared, `w_ctc` is `None` and the head reads
/// `w_mle`, so the two can never drift apart.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub dims: ModelDims,
    pub frame_proj: Linear<T>,
    pub encoder: Vec<EncoderLayer<T>>,
    pub enc_norm: LayerNorm<T>,
    pub tgt_embed: Matrix<T>,
    pub decoder: Vec<DecoderLayer<T>>,
    pub dec_norm: LayerNorm<T>,
    /// Softmax embedding, `(V_tgt + 1) x d`.
    pub w_mle: Matrix<T>,
    /// CTC prediction weight, `(L + 1) x d`.
    pub w_ctc: Option<Matrix<T>>,
}

impl<T: Scalar> Params<T> for ModelParams<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Matrix<T>)>) {
        self.frame_proj.visit(&join(prefix, "frame_proj"), out);
        self.encoder.visit(&join(prefix, "encoder"), out);
        self.enc_norm.visit(&join(prefix, "enc_norm"), out);
        self.tgt_embed.visit(&join(prefix, "tgt_embed"), out);
        self.decoder.visit(&join(prefix, "decoder"), out);
        self.dec_norm.visit(&join(prefix, "dec_norm"), out);
        self.w_mle.visit(&join(prefix, "w_mle"), out);
        if let Some(w) = &self.w_ctc {
            w.visit(&join(prefix, "w_ctc"), out);
        }
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Matrix<T>>) {
        self.frame_proj.visit_mut(out);
        self.encoder.visit_mut(out);
        self.enc_norm.visit_mut(out);
        self.tgt_embed.visit_mut(out);
        self.decoder.visit_mut(out);
        self.dec_norm.visit_mut(out);
        self.w_mle.visit_mut(out);
        if let Some(w) = &mut self.w_ctc {
            w.visit_mut(out);
        }
    }
}

fn normal_matrix<T: Scalar>(rows: usize, cols: usize, std: f64, rng: &mut Rng) -> Matrix<T> {
    Matrix::from_fn(rows, cols, |_, _| T::of(rng.normal() * std))
}

impl<T: Scalar> ModelParams<T> {
    /// Fresh parameters: Xavier-uniform projections, `N(0, 1/d)` embeddings.
    pub fn init(dims: ModelDims, rng: &mut Rng) -> Self {
        let d = dims.d_model;
        let std = (d as f64).powf(-0.5);
        let frame_proj = Linear::new(dims.feat_dim * dims.k_concat, d, rng);
        let encoder = (0..dims.enc_layers)
            .map(|_| EncoderLayer {
                attn_norm: LayerNorm::new(d),
                attn: Attention::new(d, rng),
                ffn_norm: LayerNorm::new(d),
                ffn: FeedForward::new(d, dims.ffn_dim, rng),
            })
            .collect();
        let tgt_embed = normal_matrix(dims.out_classes(), d, std, rng);
        let decoder = (0..dims.dec_layers)
            .map(|_| DecoderLayer {
                self_norm: LayerNorm::new(d),
                self_attn: Attention::new(d, rng),
                cross_norm: LayerNorm::new(d),
                cross_attn: Attention::new(d, rng),
                ffn_norm: LayerNorm::new(d),
                ffn: FeedForward::new(d, dims.ffn_dim, rng),
            })
            .collect();
        let w_mle = normal_matrix(dims.out_classes(), d, std, rng);
        let w_ctc = match dims.ctc_head {
            CtcHeadKind::Own => Some(normal_matrix(dims.ctc_classes(), d, std, rng)),
            CtcHeadKind::Absent | CtcHeadKind::Shared => None,
        };
        ModelParams {
            dims,
            frame_proj,
            encoder,
            enc_norm: LayerNorm::new(d),
            tgt_embed,
            decoder,
            dec_norm: LayerNorm::new(d),
            w_mle,
            w_ctc,
        }
    }

    /// Same layout, every entry zero. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(Matrix::fill_zero);
        z
    }

    pub fn tensors(&self) -> Vec<(String, &Matrix<T>)> {
        let mut out = Vec::new();
        self.visit("", &mut out);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix<T>> {
        let mut out = Vec::new();
        self.visit_mut(&mut out);
        out
    }

    /// The matrix the CTC head multiplies by, if the head exists.
    pub fn ctc_weight(&self) -> Option<&Matrix<T>> {
        match self.dims.ctc_head {
            CtcHeadKind::Absent => None,
            CtcHeadKind::Own => self.w_ctc.as_ref(),
            CtcHeadKind::Shared => Some(&self.w_mle),
        }
    }

    pub fn ctc_weight_mut(&mut self) -> Option<&mut Matrix<T>> {
        match self.dims.ctc_head {
            CtcHeadKind::Absent => None,
            CtcHeadKind::Own => self.w_ctc.as_mut(),
            CtcHeadKind::Shared => Some(&mut self.w_mle),
        }
    }

    /// Trainable scalars, counting shared storage once.
    pub fn count_params(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.len()).sum()
    }

    pub fn add_assign(&mut self, other: &Self) {
        let theirs = other.tensors();
        for (mine, (_, t)) in self.tensors_mut().into_iter().zip(theirs) {
            mine.add_assign(t);
        }
    }

    pub fn scale(&mut self, s: T) {
        self.tensors_mut().into_iter().for_each(|m| m.scale(s));
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|(_, m)| m.sum_sq().as_f64())
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.all_finite())
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let mut out = ModelParams::<U>::init(self.dims, &mut Rng::new(0));
        let src = self.tensors();
        for (dst, (_, s)) in out.tensors_mut().into_iter().zip(src) {
            *dst = s.cast();
        }
        out
    }
}
