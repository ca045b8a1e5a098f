use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::colamap::{CoarseMapper, MappingKind};
use crate::data::{batch_iterator, check_ids, BatchIterator, Triplet};
use crate::error::{Error, Result};
use crate::model::config::{LabelSource, TrainConfig};
use crate::model::network::{batch_pass, BatchItem, PassOptions, StepTimers};
use crate::model::optim::{clip_global_norm, Adam};
use crate::model::params::ModelParams;
use crate::rng::{splitmix64, Rng};
use crate::tensor::Scalar;

const INIT_STREAM: u64 = 0x696e_6974;
const BATCH_STREAM: u64 = 0x6261_7463_6800;
const DROPOUT_STREAM: u64 = 0x6472_6f70;

/// One record of the per-step metrics stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub mle_loss: f64,
    /// `None` when the CTC branch is off or every item was infeasible.
    pub ctc_loss: Option<f64>,
    pub total_loss: f64,
    pub skipped_infeasible: usize,
    pub tokens: usize,
    pub lr: f64,
    /// Before clipping.
    pub grad_norm: f64,
    /// Absent in deterministic mode.
    pub wall_ms: Option<f64>,
}

/// Checks that `mapper` fits the configuration and label source.
pub fn check_mapper(cfg: &TrainConfig, mapper: Option<&CoarseMapper>, source: LabelSource) -> Result<()> {
    if !cfg.ctc_enabled() {
        return Ok(());
    }
    let m = mapper.ok_or_else(|| Error::config("mapping", "lambda > 0 needs a label mapper"))?;
    if m.label_size() != cfg.label_size {
        return Err(Error::config(
            "label_size",
            format!("mapper has L = {}, config has {}", m.label_size(), cfg.label_size),
        ));
    }
    let v = match source {
        LabelSource::Transcript => cfg.vocab_src,
        LabelSource::Translation => cfg.vocab_tgt,
    };
    if m.vocab_size() != v {
        return Err(Error::config(
            "vocab_size",
            format!("mapper covers {} ids, {source} vocabulary has {v}", m.vocab_size()),
        ));
    }
    Ok(())
}

/// Step-by-step trainer.
pub struct Trainer<T> {
    cfg: TrainConfig,
    params: ModelParams<T>,
    adam: Adam<T>,
    items: Vec<BatchItem<T>>,
    /// Raw label sequences, kept only when labels are redrawn on every visit.
    live: Option<(CoarseMapper, Vec<Vec<usize>>)>,
    batches: BatchIterator,
    step: usize,
    timers: StepTimers,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(cfg: &TrainConfig, data: &[Triplet], mapper: Option<CoarseMapper>, source: LabelSource) -> Result<Self> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        check_ids(data, cfg.vocab_src, cfg.vocab_tgt)?;
        check_mapper(cfg, mapper.as_ref(), source)?;
        let mut mapper = mapper.filter(|_| cfg.ctc_enabled());
        let live = matches!(&mapper, Some(m) if m.kind() == MappingKind::Random) && !cfg.random_frozen;
        let mut items = Vec::with_capacity(data.len());
        for t in data {
            let m = if live { None } else { mapper.as_mut() };
            items.push(BatchItem::from_triplet(t, m, source)?);
        }
        let live = match mapper {
            Some(m) if live => Some((m, data.iter().map(|t| t.labels(source).to_vec()).collect())),
            _ => None,
        };
        let params = ModelParams::init(cfg.dims(), &mut Rng::derive(cfg.seed, &[INIT_STREAM]));
        let adam = Adam::new(&params, cfg);
        let batches = batch_iterator(data, cfg.batch_tokens, splitmix64(cfg.seed ^ BATCH_STREAM))?;
        Ok(Trainer {
            cfg: cfg.clone(),
            params,
            adam,
            items,
            live,
            batches,
            step: 0,
            timers: StepTimers::default(),
        })
    }

    /// Starts from existing parameters instead of a fresh initialization.
    pub fn with_params(mut self, params: ModelParams<T>) -> Result<Self> {
        if params.dims != self.cfg.dims() {
            return Err(Error::Shape("parameters do not match the configured model".into()));
        }
        self.adam = Adam::new(&params, &self.cfg);
        self.params = params;
        Ok(self)
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    pub fn into_params(self) -> ModelParams<T> {
        self.params
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// Accumulated component timings (sequential mode only).
    pub fn timers(&self) -> StepTimers {
        self.timers
    }

    pub fn reset_timers(&mut self) {
        self.timers = StepTimers::default();
    }

    /// One optimizer step on the next batch.
    pub fn step(&mut self) -> Result<StepMetrics> {
        let start = Instant::now();
        self.step += 1;
        let step = self.step;
        let indices = self.batches.next().expect("dataset is non-empty");
        let mut batch: Vec<BatchItem<T>> = indices.iter().map(|&i| self.items[i].clone()).collect();
        if let Some((mapper, raw)) = &mut self.live {
            for (item, &i) in batch.iter_mut().zip(&indices) {
                item.ctc_labels = Some(mapper.map_sequence(&raw[i])?);
            }
        }
        let sequential = !self.cfg.parallel;
        let loss = batch_pass(
            &self.params,
            &self.cfg,
            &batch,
            PassOptions {
                with_grads: true,
                dropout_key: Some((splitmix64(self.cfg.seed ^ DROPOUT_STREAM), step as u64)),
                timers: sequential.then_some(&mut self.timers),
            },
        )?;
        let mut grads = loss.grads.expect("gradients requested");
        if !loss.total.is_finite() || !grads.all_finite() {
            return Err(Error::NonFinite { step });
        }
        let clock = Instant::now();
        let grad_norm = clip_global_norm(&mut grads, self.cfg.clip_norm);
        let lr = self.cfg.lr_at(step);
        self.adam.step(&mut self.params, &grads, lr);
        if sequential {
            self.timers.optimizer += clock.elapsed();
        }
        if !self.params.all_finite() {
            return Err(Error::NonFinite { step });
        }
        Ok(StepMetrics {
            step,
            mle_loss: loss.mle,
            ctc_loss: loss.ctc,
            total_loss: loss.total,
            skipped_infeasible: loss.skipped_infeasible,
            tokens: loss.tokens,
            lr,
            grad_norm,
            wall_ms: (!self.cfg.deterministic).then(|| start.elapsed().as_secs_f64() * 1e3),
        })
    }
}

/// Result of a full training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub params: ModelParams<T>,
    pub metrics: Vec<StepMetrics>,
    pub timers: StepTimers,
}

/// Runs `cfg.max_steps` steps, handing each metrics record to `on_step`.
pub fn train<T: Scalar>(
    cfg: &TrainConfig,
    data: &[Triplet],
    mapper: Option<CoarseMapper>,
    source: LabelSource,
    mut on_step: impl FnMut(&StepMetrics) -> Result<()>,
) -> Result<TrainOutcome<T>> {
    let mut trainer = Trainer::new(cfg, data, mapper, source)?;
    let mut metrics = Vec::with_capacity(cfg.max_steps);
    for _ in 0..cfg.max_steps {
        let m = trainer.step()?;
        on_step(&m)?;
        metrics.push(m);
    }
    let timers = trainer.timers();
    Ok(TrainOutcome {
        params: trainer.into_params(),
        metrics,
        timers,
    })
}

/// Held-out, teacher-forced evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub items: usize,
    pub tokens: usize,
    pub mle_loss: f64,
    pub ctc_loss: Option<f64>,
    pub total_loss: f64,
    /// Fraction of next-token argmax predictions that hit, EOS included.
    pub token_accuracy: f64,
    pub skipped_infeasible: usize,
}

const EVAL_CHUNK: usize = 32;

pub fn evaluate<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &TrainConfig,
    data: &[Triplet],
    mut mapper: Option<&mut CoarseMapper>,
    source: LabelSource,
) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    check_mapper(cfg, mapper.as_deref(), source)?;
    let (mut mle_sum, mut ctc_sum) = (0.0, 0.0);
    let (mut tokens, mut correct, mut skipped, mut feasible) = (0, 0, 0, 0);
    for chunk in data.chunks(EVAL_CHUNK) {
        let items = chunk
            .iter()
            .map(|t| {
                let m = if cfg.ctc_enabled() { mapper.as_deref_mut() } else { None };
                BatchItem::from_triplet(t, m, source)
            })
            .collect::<Result<Vec<_>>>()?;
        let r = batch_pass(
            params,
            cfg,
            &items,
            PassOptions {
                with_grads: false,
                dropout_key: None,
                timers: None,
            },
        )?;
        mle_sum += r.mle * r.tokens as f64;
        tokens += r.tokens;
        correct += r.correct;
        skipped += r.skipped_infeasible;
        if let Some(c) = r.ctc {
            let n = items.len() - r.skipped_infeasible;
            ctc_sum += c * n as f64;
            feasible += n;
        }
    }
    let mle_loss = mle_sum / tokens as f64;
    let ctc_loss = (feasible > 0).then(|| ctc_sum / feasible as f64);
    Ok(EvalReport {
        items: data.len(),
        tokens,
        mle_loss,
        ctc_loss,
        total_loss: (1.0 - cfg.lambda) * mle_loss + cfg.lambda * ctc_loss.unwrap_or(0.0),
        token_accuracy: correct as f64 / tokens as f64,
        skipped_infeasible: skipped,
    })
}
