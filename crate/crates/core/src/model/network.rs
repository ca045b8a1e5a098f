//! Forward and backward passes of the encoder-decoder and both loss heads.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::colamap::CoarseMapper;
use crate::ctc::{ctc_grad, ctc_neg_log_likelihood, is_feasible, LogProbLattice};
use crate::data::Triplet;
use crate::error::{Error, Result};
use crate::model::config::{LabelSource, TrainConfig};
use crate::model::layers::{dropout_backward, AttentionCache, DropoutCtx, FeedForwardCache, LayerNormCache};
use crate::model::params::ModelParams;
use crate::rng::Rng;
use crate::tensor::{gemm, log_softmax_in_place, sinusoidal_positions, Matrix, Scalar};

/// Final encoder output, one row per downsampled position.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSpeech<T> {
    pub states: Matrix<T>,
}

/// Final decoder output; row `t` summarizes the target prefix `y_<t`.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderStates<T> {
    pub states: Matrix<T>,
}

/// Wall time spent in each part of a training step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepTimers {
    pub encode: Duration,
    pub decode: Duration,
    pub mle_head: Duration,
    /// CTC projection, log-softmax, forward-backward and the head's own
    /// gradient products.
    pub ctc: Duration,
    /// Decoder and encoder backward passes.
    pub backward: Duration,
    pub optimizer: Duration,
}

impl StepTimers {
    pub fn total(&self) -> Duration {
        self.encode + self.decode + self.mle_head + self.ctc + self.backward + self.optimizer
    }
}

fn lap(timers: &mut Option<&mut StepTimers>, start: &mut Instant, pick: fn(&mut StepTimers) -> &mut Duration) {
    if let Some(t) = timers.as_mut() {
        let now = Instant::now();
        *pick(t) += now - *start;
        *start = now;
    }
}

/// Stacks `k` consecutive frames per row; the last group is zero-padded.
pub fn group_frames<T: Scalar>(frames: &Matrix<T>, k: usize) -> Matrix<T> {
    let (f, dim) = frames.shape();
    let groups = f.div_ceil(k);
    let mut out = Matrix::zeros(groups, k * dim);
    for (i, chunk) in frames.as_slice().chunks(k * dim).enumerate() {
        out.row_mut(i)[..chunk.len()].copy_from_slice(chunk);
    }
    out
}

struct EncoderLayerCache<T> {
    attn_norm: LayerNormCache<T>,
    attn: AttentionCache<T>,
    attn_drop: Option<Vec<T>>,
    ffn_norm: LayerNormCache<T>,
    ffn: FeedForwardCache<T>,
    ffn_drop: Option<Vec<T>>,
}

struct EncoderCache<T> {
    grouped: Matrix<T>,
    input_drop: Option<Vec<T>>,
    layers: Vec<EncoderLayerCache<T>>,
    norm: LayerNormCache<T>,
}

struct DecoderLayerCache<T> {
    self_norm: LayerNormCache<T>,
    self_attn: AttentionCache<T>,
    self_drop: Option<Vec<T>>,
    cross_norm: LayerNormCache<T>,
    cross_attn: AttentionCache<T>,
    cross_drop: Option<Vec<T>>,
    ffn_norm: LayerNormCache<T>,
    ffn: FeedForwardCache<T>,
    ffn_drop: Option<Vec<T>>,
}

struct DecoderCache<T> {
    inputs: Vec<usize>,
    input_drop: Option<Vec<T>>,
    layers: Vec<DecoderLayerCache<T>>,
    norm: LayerNormCache<T>,
}

fn add_positions<T: Scalar>(x: &mut Matrix<T>) {
    let pe = sinusoidal_positions::<T>(x.rows(), x.cols());
    x.add_assign(&pe);
}

fn encoder_forward<T: Scalar>(
    p: &ModelParams<T>,
    frames: &Matrix<T>,
    drop: &mut DropoutCtx,
) -> Result<(Matrix<T>, EncoderCache<T>)> {
    let dims = &p.dims;
    if frames.rows() == 0 {
        return Err(Error::Shape("utterance has no frames".into()));
    }
    if frames.cols() != dims.feat_dim {
        return Err(Error::Shape(format!(
            "frame dimension {} does not match configured {}",
            frames.cols(),
            dims.feat_dim
        )));
    }
    let grouped = group_frames(frames, dims.k_concat);
    let mut x = p.frame_proj.forward(&grouped);
    add_positions(&mut x);
    let input_drop = drop.apply(&mut x);
    let mut layers = Vec::with_capacity(p.encoder.len());
    for layer in &p.encoder {
        let (h, attn_norm) = layer.attn_norm.forward(&x);
        let (mut a, attn) = layer.attn.forward(&h, None, dims.heads, false);
        let attn_drop = drop.apply(&mut a);
        x.add_assign(&a);
        let (h, ffn_norm) = layer.ffn_norm.forward(&x);
        let (mut f, ffn) = layer.ffn.forward(&h, drop);
        let ffn_drop = drop.apply(&mut f);
        x.add_assign(&f);
        layers.push(EncoderLayerCache {
            attn_norm,
            attn,
            attn_drop,
            ffn_norm,
            ffn,
            ffn_drop,
        });
    }
    let (out, norm) = p.enc_norm.forward(&x);
    Ok((
        out,
        EncoderCache {
            grouped,
            input_drop,
            layers,
            norm,
        },
    ))
}

fn encoder_backward<T: Scalar>(p: &ModelParams<T>, cache: &EncoderCache<T>, d_out: &Matrix<T>, g: &mut ModelParams<T>) {
    let heads = p.dims.heads;
    let mut dx = p.enc_norm.backward(&cache.norm, d_out, &mut g.enc_norm);
    for ((layer, c), gl) in p.encoder.iter().zip(&cache.layers).zip(g.encoder.iter_mut()).rev() {
        let mut df = dx.clone();
        dropout_backward(&mut df, &c.ffn_drop);
        let dh = layer.ffn.backward(&c.ffn, &df, &mut gl.ffn);
        dx.add_assign(&layer.ffn_norm.backward(&c.ffn_norm, &dh, &mut gl.ffn_norm));
        let mut da = dx.clone();
        dropout_backward(&mut da, &c.attn_drop);
        let (dh, _) = layer.attn.backward(&c.attn, &da, heads, &mut gl.attn);
        dx.add_assign(&layer.attn_norm.backward(&c.attn_norm, &dh, &mut gl.attn_norm));
    }
    dropout_backward(&mut dx, &cache.input_drop);
    p.frame_proj.backward(&cache.grouped, &dx, &mut g.frame_proj);
}

fn decoder_forward<T: Scalar>(
    p: &ModelParams<T>,
    memory: &Matrix<T>,
    inputs: &[usize],
    drop: &mut DropoutCtx,
) -> Result<(Matrix<T>, DecoderCache<T>)> {
    let dims = &p.dims;
    let d = dims.d_model;
    let scale = T::of((d as f64).sqrt());
    let mut x = Matrix::zeros(inputs.len(), d);
    for (r, &tok) in inputs.iter().enumerate() {
        if tok >= dims.out_classes() {
            return Err(Error::IdOutOfRange {
                id: tok,
                bound: dims.out_classes(),
                index: Some(r),
            });
        }
        for (o, &e) in x.row_mut(r).iter_mut().zip(p.tgt_embed.row(tok)) {
            *o = e * scale;
        }
    }
    add_positions(&mut x);
    let input_drop = drop.apply(&mut x);
    let mut layers = Vec::with_capacity(p.decoder.len());
    for layer in &p.decoder {
        let (h, self_norm) = layer.self_norm.forward(&x);
        let (mut a, self_attn) = layer.self_attn.forward(&h, None, dims.heads, true);
        let self_drop = drop.apply(&mut a);
        x.add_assign(&a);
        let (h, cross_norm) = layer.cross_norm.forward(&x);
        let (mut c, cross_attn) = layer.cross_attn.forward(&h, Some(memory), dims.heads, false);
        let cross_drop = drop.apply(&mut c);
        x.add_assign(&c);
        let (h, ffn_norm) = layer.ffn_norm.forward(&x);
        let (mut f, ffn) = layer.ffn.forward(&h, drop);
        let ffn_drop = drop.apply(&mut f);
        x.add_assign(&f);
        layers.push(DecoderLayerCache {
            self_norm,
            self_attn,
            self_drop,
            cross_norm,
            cross_attn,
            cross_drop,
            ffn_norm,
            ffn,
            ffn_drop,
        });
    }
    let (out, norm) = p.dec_norm.forward(&x);
    Ok((
        out,
        DecoderCache {
            inputs: inputs.to_vec(),
            input_drop,
            layers,
            norm,
        },
    ))
}

/// Returns the gradient with respect to the encoder memory.
fn decoder_backward<T: Scalar>(
    p: &ModelParams<T>,
    cache: &DecoderCache<T>,
    d_out: &Matrix<T>,
    memory_rows: usize,
    g: &mut ModelParams<T>,
) -> Matrix<T> {
    let heads = p.dims.heads;
    let mut d_mem = Matrix::zeros(memory_rows, p.dims.d_model);
    let mut dx = p.dec_norm.backward(&cache.norm, d_out, &mut g.dec_norm);
    for ((layer, c), gl) in p.decoder.iter().zip(&cache.layers).zip(g.decoder.iter_mut()).rev() {
        let mut df = dx.clone();
        dropout_backward(&mut df, &c.ffn_drop);
        let dh = layer.ffn.backward(&c.ffn, &df, &mut gl.ffn);
        dx.add_assign(&layer.ffn_norm.backward(&c.ffn_norm, &dh, &mut gl.ffn_norm));

        let mut dc = dx.clone();
        dropout_backward(&mut dc, &c.cross_drop);
        let (dh, dm) = layer.cross_attn.backward(&c.cross_attn, &dc, heads, &mut gl.cross_attn);
        d_mem.add_assign(&dm.expect("cross-attention memory gradient"));
        dx.add_assign(&layer.cross_norm.backward(&c.cross_norm, &dh, &mut gl.cross_norm));

        let mut da = dx.clone();
        dropout_backward(&mut da, &c.self_drop);
        let (dh, _) = layer.self_attn.backward(&c.self_attn, &da, heads, &mut gl.self_attn);
        dx.add_assign(&layer.self_norm.backward(&c.self_norm, &dh, &mut gl.self_norm));
    }
    dropout_backward(&mut dx, &cache.input_drop);
    let scale = T::of((p.dims.d_model as f64).sqrt());
    for (r, &tok) in cache.inputs.iter().enumerate() {
        for (ge, &d) in g.tgt_embed.row_mut(tok).iter_mut().zip(dx.row(r)) {
            *ge += d * scale;
        }
    }
    d_mem
}

/// Encoder output in evaluation mode.
pub fn encode<T: Scalar>(frames: &Matrix<T>, params: &ModelParams<T>) -> Result<EncodedSpeech<T>> {
    let (states, _) = encoder_forward(params, frames, &mut DropoutCtx::eval())?;
    Ok(EncodedSpeech { states })
}

/// Decoder states for the input sequence `[EOS, prefix...]`.
pub fn decoder_states<T: Scalar>(
    encoded: &EncodedSpeech<T>,
    prefix: &[usize],
    params: &ModelParams<T>,
) -> Result<DecoderStates<T>> {
    let inputs = decoder_inputs(prefix, params.dims.eos());
    let (states, _) = decoder_forward(params, &encoded.states, &inputs, &mut DropoutCtx::eval())?;
    Ok(DecoderStates { states })
}

fn decoder_inputs(target: &[usize], eos: usize) -> Vec<usize> {
    std::iter::once(eos).chain(target.iter().copied()).collect()
}

fn decoder_targets(target: &[usize], eos: usize) -> Vec<usize> {
    target.iter().copied().chain(std::iter::once(eos)).collect()
}

/// `logits = states * W^T`.
pub(crate) fn project<T: Scalar>(states: &Matrix<T>, w: &Matrix<T>) -> Matrix<T> {
    let mut logits = Matrix::zeros(states.rows(), w.rows());
    gemm(T::one(), states.view(), w.view().t(), T::zero(), logits.view_mut());
    logits
}

struct MleTerms<T> {
    loss_sum: f64,
    correct: usize,
    d_logits: Option<Matrix<T>>,
}

/// Label-smoothed cross-entropy summed over rows:
/// `(1 - eps) * (-log p[y]) + eps * mean_v(-log p[v])`.
fn smoothed_ce<T: Scalar>(
    mut logits: Matrix<T>,
    targets: &[usize],
    smoothing: f64,
    grad_weight: Option<T>,
) -> Result<MleTerms<T>> {
    let classes = logits.cols();
    let mut loss_sum = 0.0;
    let mut correct = 0;
    for (r, &y) in targets.iter().enumerate() {
        if y >= classes {
            return Err(Error::IdOutOfRange {
                id: y,
                bound: classes,
                index: Some(r),
            });
        }
        let row = logits.row_mut(r);
        let argmax = (0..classes).fold(0, |b, c| if row[c] > row[b] { c } else { b });
        if argmax == y {
            correct += 1;
        }
        log_softmax_in_place(row);
        let mean_logp = row.iter().map(|x| x.as_f64()).sum::<f64>() / classes as f64;
        loss_sum += -(1.0 - smoothing) * row[y].as_f64() - smoothing * mean_logp;
        if let Some(w) = grad_weight {
            let uniform = T::of(smoothing / classes as f64);
            for x in row.iter_mut() {
                *x = w * (x.exp() - uniform);
            }
            row[y] -= w * T::of(1.0 - smoothing);
        }
    }
    Ok(MleTerms {
        loss_sum,
        correct,
        d_logits: grad_weight.map(|_| logits),
    })
}

/// Mean per-token label-smoothed cross-entropy of `y` under `states`.
pub fn mle_loss<T: Scalar>(
    states: &DecoderStates<T>,
    y: &[usize],
    params: &ModelParams<T>,
    smoothing: f64,
) -> Result<f64> {
    if states.states.rows() != y.len() {
        return Err(Error::Shape(format!(
            "{} decoder states for {} targets",
            states.states.rows(),
            y.len()
        )));
    }
    if y.is_empty() {
        return Ok(0.0);
    }
    let logits = project(&states.states, &params.w_mle);
    let terms = smoothed_ce(logits, y, smoothing, None)?;
    Ok(terms.loss_sum / y.len() as f64)
}

/// Per-position log-softmax of `W_ctc x_k` over `L + 1` classes.
pub fn ctc_head<T: Scalar>(encoded: &EncodedSpeech<T>, params: &ModelParams<T>) -> Result<LogProbLattice<T>> {
    let w = params
        .ctc_weight()
        .ok_or_else(|| Error::Shape("model has no CTC head (lambda = 0)".into()))?;
    LogProbLattice::from_logits(project(&encoded.states, w))
}

/// One utterance prepared for the loss.
#[derive(Clone, Debug)]
pub struct BatchItem<T> {
    pub frames: Matrix<T>,
    pub target: Vec<usize>,
    /// Coarse CTC labels; `None` when the branch is off for this item.
    pub ctc_labels: Option<Vec<usize>>,
}

impl<T: Scalar> BatchItem<T> {
    pub fn from_triplet(t: &Triplet, mapper: Option<&mut CoarseMapper>, source: LabelSource) -> Result<Self> {
        let ctc_labels = match mapper {
            Some(m) => Some(m.map_sequence(t.labels(source))?),
            None => None,
        };
        Ok(BatchItem {
            frames: t.frames.cast(),
            target: t.translation_ids.clone(),
            ctc_labels,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct ItemTerms {
    mle_sum: f64,
    tokens: usize,
    correct: usize,
    ctc_nll: Option<f64>,
}

#[derive(Clone, Copy)]
struct Weights<T> {
    mle: T,
    ctc: T,
}

fn item_pass<T: Scalar>(
    p: &ModelParams<T>,
    item: &BatchItem<T>,
    smoothing: f64,
    weights: Option<Weights<T>>,
    drop: &mut DropoutCtx,
    mut grads: Option<&mut ModelParams<T>>,
    mut timers: Option<&mut StepTimers>,
) -> Result<ItemTerms> {
    let eos = p.dims.eos();
    let mut clock = Instant::now();
    let (x, enc_cache) = encoder_forward(p, &item.frames, drop)?;
    lap(&mut timers, &mut clock, |t| &mut t.encode);

    let inputs = decoder_inputs(&item.target, eos);
    let targets = decoder_targets(&item.target, eos);
    let (y, dec_cache) = decoder_forward(p, &x, &inputs, drop)?;
    lap(&mut timers, &mut clock, |t| &mut t.decode);

    let want_grad = grads.is_some();
    let logits = project(&y, &p.w_mle);
    let mle = smoothed_ce(
        logits,
        &targets,
        smoothing,
        weights.map(|w| w.mle).filter(|_| want_grad),
    )?;
    let mut d_y = None;
    if let (Some(g), Some(dl)) = (grads.as_deref_mut(), &mle.d_logits) {
        gemm(T::one(), dl.view().t(), y.view(), T::one(), g.w_mle.view_mut());
        d_y = Some(crate::tensor::matmul(dl.view(), p.w_mle.view()));
    }
    lap(&mut timers, &mut clock, |t| &mut t.mle_head);

    let mut d_x = Matrix::zeros(x.rows(), x.cols());
    let mut ctc_nll = None;
    if let (Some(labels), Some(w)) = (&item.ctc_labels, p.ctc_weight()) {
        let lat = LogProbLattice::from_logits(project(&x, w))?;
        match grads.as_deref_mut() {
            Some(g) => {
                let (nll, g_logp) = ctc_grad(&lat, labels)?;
                ctc_nll = Some(nll.as_f64());
                let scale = weights.map_or(T::one(), |w| w.ctc);
                let mut d_logits = g_logp;
                for t in 0..d_logits.rows() {
                    let row_sum: T = d_logits.row(t).iter().copied().sum();
                    let lp = lat.matrix().row(t);
                    for (dv, &l) in d_logits.row_mut(t).iter_mut().zip(lp) {
                        *dv = scale * (*dv - l.exp() * row_sum);
                    }
                }
                gemm(T::one(), d_logits.view(), w.view(), T::one(), d_x.view_mut());
                let gw = g.ctc_weight_mut().expect("gradient layout matches params");
                gemm(T::one(), d_logits.view().t(), x.view(), T::one(), gw.view_mut());
            }
            None => {
                let loss = ctc_neg_log_likelihood(&lat, labels)?;
                ctc_nll = Some(loss.nll.as_f64());
            }
        }
    }
    lap(&mut timers, &mut clock, |t| &mut t.ctc);

    if let Some(g) = grads {
        if let Some(d_y) = d_y {
            let d_mem = decoder_backward(p, &dec_cache, &d_y, x.rows(), g);
            d_x.add_assign(&d_mem);
        }
        encoder_backward(p, &enc_cache, &d_x, g);
        lap(&mut timers, &mut clock, |t| &mut t.backward);
    }

    Ok(ItemTerms {
        mle_sum: mle.loss_sum,
        tokens: targets.len(),
        correct: mle.correct,
        ctc_nll,
    })
}

/// Losses and gradients for one batch.
#[derive(Clone, Debug)]
pub struct BatchLoss<T> {
    /// `(1 - lambda) * mle + lambda * ctc`.
    pub total: f64,
    /// Mean label-smoothed cross-entropy per target token (EOS included).
    pub mle: f64,
    /// Mean CTC loss per CTC-feasible item; `None` when the branch is off.
    pub ctc: Option<f64>,
    pub skipped_infeasible: usize,
    pub tokens: usize,
    pub correct: usize,
    pub grads: Option<ModelParams<T>>,
}

/// Dropout is active when `dropout_key = Some((seed, step))`; item `i` then
/// draws from `Rng::derive(seed, &[step, i])`.
pub(crate) struct PassOptions<'t> {
    pub with_grads: bool,
    pub dropout_key: Option<(u64, u64)>,
    pub timers: Option<&'t mut StepTimers>,
}

/// Evaluates a prepared batch. Items whose CTC labels are infeasible for
/// their encoder length contribute MLE only and are counted.
pub(crate) fn batch_pass<T: Scalar>(
    p: &ModelParams<T>,
    cfg: &TrainConfig,
    items: &[BatchItem<T>],
    mut opts: PassOptions<'_>,
) -> Result<BatchLoss<T>> {
    if !(0.0..=1.0).contains(&cfg.lambda) {
        return Err(Error::config("lambda", format!("{} is outside [0, 1]", cfg.lambda)));
    }
    let ctc_on = cfg.lambda > 0.0 && p.ctc_weight().is_some();
    let mut skipped = 0;
    let mut prepared: Vec<BatchItem<T>> = Vec::with_capacity(items.len());
    for item in items {
        let mut it = item.clone();
        if !ctc_on {
            it.ctc_labels = None;
        } else if let Some(labels) = &it.ctc_labels {
            let frames = p.dims.encoder_len(it.frames.rows());
            if !is_feasible(frames, labels) {
                it.ctc_labels = None;
                skipped += 1;
            }
        }
        prepared.push(it);
    }
    let tokens: usize = prepared.iter().map(|i| i.target.len() + 1).sum();
    let feasible = prepared.iter().filter(|i| i.ctc_labels.is_some()).count();
    let weights = Weights {
        mle: T::of((1.0 - cfg.lambda) / tokens.max(1) as f64),
        ctc: T::of(if feasible > 0 {
            cfg.lambda / feasible as f64
        } else {
            0.0
        }),
    };
    let smoothing = cfg.label_smoothing;
    let rate = cfg.dropout;
    let dropout_key = opts.dropout_key;
    let with_grads = opts.with_grads;

    let run_item =
        |idx: usize, item: &BatchItem<T>, grads: Option<&mut ModelParams<T>>, timers: Option<&mut StepTimers>| {
            let mut rng = dropout_key.map(|(seed, step)| Rng::derive(seed, &[step, idx as u64]));
            let mut drop = DropoutCtx {
                rate: if rng.is_some() { rate } else { 0.0 },
                rng: rng.as_mut(),
            };
            item_pass(p, item, smoothing, Some(weights), &mut drop, grads, timers)
        };

    let (terms, grads): (Vec<ItemTerms>, Option<ModelParams<T>>) =
        if cfg.parallel && opts.timers.is_none() && prepared.len() > 1 {
            let results: Vec<Result<(ItemTerms, Option<ModelParams<T>>)>> = prepared
                .par_iter()
                .enumerate()
                .map(|(i, item)| {
                    let mut g = with_grads.then(|| p.zeros_like());
                    let t = run_item(i, item, g.as_mut(), None)?;
                    Ok((t, g))
                })
                .collect();
            let mut terms = Vec::with_capacity(results.len());
            let mut partial = Vec::with_capacity(results.len());
            for r in results {
                let (t, g) = r?;
                terms.push(t);
                partial.push(g);
            }
            (terms, tree_reduce(partial))
        } else {
            let mut g = with_grads.then(|| p.zeros_like());
            let mut terms = Vec::with_capacity(prepared.len());
            for (i, item) in prepared.iter().enumerate() {
                terms.push(run_item(i, item, g.as_mut(), opts.timers.as_deref_mut())?);
            }
            (terms, g)
        };

    let mle = terms.iter().map(|t| t.mle_sum).sum::<f64>() / tokens.max(1) as f64;
    let ctc = if ctc_on && feasible > 0 {
        Some(terms.iter().filter_map(|t| t.ctc_nll).sum::<f64>() / feasible as f64)
    } else {
        None
    };
    let total = (1.0 - cfg.lambda) * mle + cfg.lambda * ctc.unwrap_or(0.0);
    Ok(BatchLoss {
        total,
        mle,
        ctc,
        skipped_infeasible: skipped,
        tokens,
        correct: terms.iter().map(|t| t.correct).sum(),
        grads,
    })
}

/// Pairwise sum in index order, independent of thread scheduling.
fn tree_reduce<T: Scalar>(mut parts: Vec<Option<ModelParams<T>>>) -> Option<ModelParams<T>> {
    if parts.iter().any(Option::is_none) {
        return None;
    }
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(a) = it.next() {
            let mut a = a.expect("checked");
            if let Some(b) = it.next() {
                a.add_assign(&b.expect("checked"));
            }
            next.push(Some(a));
        }
        parts = next;
    }
    parts.pop().flatten()
}

/// The interpolated objective and its gradient for a batch, without dropout.
///
/// CTC labels are `mapper` applied to the chosen label source.
pub fn interpolated_loss<T: Scalar>(
    batch: &[&Triplet],
    params: &ModelParams<T>,
    cfg: &TrainConfig,
    mapper: &mut CoarseMapper,
    source: LabelSource,
) -> Result<BatchLoss<T>> {
    if !(0.0..=1.0).contains(&cfg.lambda) {
        return Err(Error::config("lambda", format!("{} is outside [0, 1]", cfg.lambda)));
    }
    let ctc_on = cfg.lambda > 0.0;
    let items = batch
        .iter()
        .map(|t| BatchItem::from_triplet(t, ctc_on.then_some(&mut *mapper), source))
        .collect::<Result<Vec<_>>>()?;
    batch_pass(
        params,
        cfg,
        &items,
        PassOptions {
            with_grads: true,
            dropout_key: None,
            timers: None,
        },
    )
}

/// Teacher-forced evaluation: losses and next-token accuracy, no gradients.
pub fn evaluate_items<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &TrainConfig,
    items: &[BatchItem<T>],
) -> Result<BatchLoss<T>> {
    batch_pass(
        params,
        cfg,
        items,
        PassOptions {
            with_grads: false,
            dropout_key: None,
            timers: None,
        },
    )
}
