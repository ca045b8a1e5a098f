//! Training-step timing as a function of vocabulary size and CTC label size.
//!
//! Every grid point builds a fixed synthetic batch and times full optimizer
//! steps on a single worker thread. Reported figures are the median and
//! 10th/90th percentiles over repetitions of the per-step mean.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::colamap::{CoarseMapper, MappingKind};
use crate::error::{Error, Result};
use crate::model::network::{batch_pass, BatchItem, PassOptions, StepTimers};
use crate::model::optim::{clip_global_norm, Adam};
use crate::model::{ModelParams, TrainConfig};
use crate::rng::Rng;
use crate::tensor::{Matrix, Scalar};

/// One grid point. `frames` is the encoder length after downsampling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchPoint {
    pub vocab: usize,
    pub label_size: usize,
    pub d_model: usize,
    pub frames: usize,
    pub batch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchOptions {
    pub steps: usize,
    pub reps: usize,
    pub warmup: usize,
    pub lambda: f64,
    pub seed: u64,
    /// Target tokens per item; 0 picks `frames / 2`.
    pub target_len: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            steps: 5,
            reps: 5,
            warmup: 10,
            lambda: 0.3,
            seed: 7,
            target_len: 0,
        }
    }
}

pub const COMPONENTS: [&str; 6] = ["encode", "decode", "mle_head", "ctc", "backward", "optimizer"];

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub median_ms: f64,
    pub p10_ms: f64,
    pub p90_ms: f64,
}

impl Timing {
    /// Nearest-rank percentiles of `samples`.
    pub fn from_samples(samples: &[f64]) -> Timing {
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let pick = |q: f64| {
            if s.is_empty() {
                return 0.0;
            }
            let rank = (q * s.len() as f64).ceil().max(1.0) as usize;
            s[rank.min(s.len()) - 1]
        };
        Timing {
            median_ms: pick(0.5),
            p10_ms: pick(0.1),
            p90_ms: pick(0.9),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub point: BenchPoint,
    pub step: Timing,
    /// In [`COMPONENTS`] order.
    pub components: Vec<(String, Timing)>,
    pub params: usize,
}

impl BenchResult {
    pub fn component(&self, name: &str) -> Option<Timing> {
        self.components.iter().find(|(n, _)| n == name).map(|(_, t)| *t)
    }
}

fn component_ms(t: &StepTimers) -> [Duration; 6] {
    [t.encode, t.decode, t.mle_head, t.ctc, t.backward, t.optimizer]
}

/// The configuration a grid point trains with.
pub fn point_config(point: &BenchPoint, opts: &BenchOptions) -> TrainConfig {
    TrainConfig {
        lambda: opts.lambda,
        label_size: point.label_size,
        vocab_src: point.vocab,
        vocab_tgt: point.vocab,
        d_model: point.d_model,
        heads: if point.d_model.is_multiple_of(4) { 4 } else { 1 },
        ffn_dim: 4 * point.d_model,
        seed: opts.seed,
        parallel: false,
        ..TrainConfig::default()
    }
}

fn synthetic_batch<T: Scalar>(point: &BenchPoint, cfg: &TrainConfig, opts: &BenchOptions) -> Result<Vec<BatchItem<T>>> {
    let kind = if point.label_size == point.vocab {
        MappingKind::Identity
    } else {
        MappingKind::Modulo
    };
    let mut mapper = CoarseMapper::new(kind, point.vocab, point.label_size)?;
    let mut rng = Rng::derive(opts.seed, &[0x62656e63]);
    let len = if opts.target_len == 0 {
        (point.frames / 2).max(1)
    } else {
        opts.target_len
    };
    (0..point.batch)
        .map(|_| {
            let frames = Matrix::from_fn(point.frames * cfg.k_concat, cfg.feat_dim, |_, _| T::of(rng.normal()));
            let target: Vec<usize> = (0..len).map(|_| rng.below_usize(point.vocab)).collect();
            let ctc_labels = Some(mapper.map_sequence(&target)?);
            Ok(BatchItem {
                frames,
                target,
                ctc_labels,
            })
        })
        .collect()
}

fn run_point<T: Scalar>(point: &BenchPoint, opts: &BenchOptions) -> Result<BenchResult> {
    let cfg = point_config(point, opts);
    cfg.validate()?;
    let items = synthetic_batch::<T>(point, &cfg, opts)?;
    let mut params = ModelParams::<T>::init(cfg.dims(), &mut Rng::derive(opts.seed, &[1]));
    let mut adam = Adam::new(&params, &cfg);
    let mut step_no = 0usize;
    let mut one_step = |params: &mut ModelParams<T>| -> Result<StepTimers> {
        step_no += 1;
        let mut timers = StepTimers::default();
        let loss = batch_pass(
            params,
            &cfg,
            &items,
            PassOptions {
                with_grads: true,
                dropout_key: Some((opts.seed, step_no as u64)),
                timers: Some(&mut timers),
            },
        )?;
        let clock = Instant::now();
        let mut grads = loss.grads.expect("gradients requested");
        clip_global_norm(&mut grads, cfg.clip_norm);
        adam.step(params, &grads, cfg.lr_at(step_no));
        timers.optimizer += clock.elapsed();
        if !params.all_finite() {
            return Err(Error::NonFinite { step: step_no });
        }
        Ok(timers)
    };
    for _ in 0..opts.warmup {
        one_step(&mut params)?;
    }
    let steps = opts.steps.max(1);
    let mut step_samples = Vec::with_capacity(opts.reps);
    let mut comp_samples = vec![Vec::with_capacity(opts.reps); COMPONENTS.len()];
    for _ in 0..opts.reps.max(1) {
        let mut sum = StepTimers::default();
        let start = Instant::now();
        for _ in 0..steps {
            let t = one_step(&mut params)?;
            sum.encode += t.encode;
            sum.decode += t.decode;
            sum.mle_head += t.mle_head;
            sum.ctc += t.ctc;
            sum.backward += t.backward;
            sum.optimizer += t.optimizer;
        }
        step_samples.push(start.elapsed().as_secs_f64() * 1e3 / steps as f64);
        for (slot, d) in comp_samples.iter_mut().zip(component_ms(&sum)) {
            slot.push(d.as_secs_f64() * 1e3 / steps as f64);
        }
    }
    Ok(BenchResult {
        point: *point,
        step: Timing::from_samples(&step_samples),
        components: COMPONENTS
            .iter()
            .zip(&comp_samples)
            .map(|(n, s)| (n.to_string(), Timing::from_samples(s)))
            .collect(),
        params: params.count_params(),
    })
}

/// Times one grid point on a private single-thread pool.
pub fn bench_step<T: Scalar>(point: &BenchPoint, opts: &BenchOptions) -> Result<BenchResult> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::Suite(format!("cannot build benchmark pool: {e}")))?;
    pool.install(|| run_point::<T>(point, opts))
}

/// Runs every point in order.
pub fn bench_grid<T: Scalar>(points: &[BenchPoint], opts: &BenchOptions) -> Result<Vec<BenchResult>> {
    points.iter().map(|p| bench_step::<T>(p, opts)).collect()
}

/// Every `(V, L)` with `L <= V`, at fixed `d`, `frames` and `batch`.
pub fn grid(vocabs: &[usize], labels: &[usize], d_model: usize, frames: usize, batch: usize) -> Vec<BenchPoint> {
    let mut out = Vec::new();
    for &vocab in vocabs {
        for &label_size in labels.iter().chain(std::iter::once(&vocab)) {
            let point = BenchPoint {
                vocab,
                label_size,
                d_model,
                frames,
                batch,
            };
            if label_size <= vocab && !out.contains(&point) {
                out.push(point);
            }
        }
    }
    out
}

fn baseline<'a>(results: &'a [BenchResult], r: &BenchResult) -> Result<&'a BenchResult> {
    results
        .iter()
        .find(|b| {
            let p = b.point;
            p.vocab == r.point.vocab
                && p.label_size == p.vocab
                && p.d_model == r.point.d_model
                && p.frames == r.point.frames
                && p.batch == r.point.batch
        })
        .ok_or(Error::MissingBaseline { vocab: r.point.vocab })
}

/// `median_step_ms(L = V) / median_step_ms(L)` for each result.
pub fn speedups(results: &[BenchResult]) -> Result<Vec<f64>> {
    results
        .iter()
        .map(|r| Ok(baseline(results, r)?.step.median_ms / r.step.median_ms))
        .collect()
}

/// CSV with one row per result and component (`step` is the whole step);
/// the speedup column is the step-level speedup against the genuine-label
/// row of the same vocabulary.
pub fn speedup_table(results: &[BenchResult]) -> Result<String> {
    let speedup = speedups(results)?;
    let mut out = String::from("V,L,d,T,batch,component,median_ms,p10_ms,p90_ms,speedup\n");
    for (r, s) in results.iter().zip(speedup) {
        let p = r.point;
        let rows = std::iter::once(("step".to_string(), r.step)).chain(r.components.iter().cloned());
        for (name, t) in rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{:.4},{:.4},{:.4},{:.4}",
                p.vocab, p.label_size, p.d_model, p.frames, p.batch, name, t.median_ms, t.p10_ms, t.p90_ms, s
            )
            .expect("writing to a String");
        }
    }
    Ok(out)
}

/// Whitespace-separated columns for plotting: one block per vocabulary
/// size, separated by blank lines.
pub fn speedup_tsv(results: &[BenchResult]) -> Result<String> {
    let speedup = speedups(results)?;
    let mut out = String::from("# V\tL\tparams\tstep_ms\tp10_ms\tp90_ms\tctc_ms\tspeedup\n");
    let mut last_vocab = None;
    for (r, s) in results.iter().zip(speedup) {
        if last_vocab.is_some_and(|v| v != r.point.vocab) {
            out.push('\n');
        }
        last_vocab = Some(r.point.vocab);
        let ctc = r.component("ctc").unwrap_or_default().median_ms;
        writeln!(
            out,
            "{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
            r.point.vocab, r.point.label_size, r.params, r.step.median_ms, r.step.p10_ms, r.step.p90_ms, ctc, s
        )
        .expect("writing to a String");
    }
    Ok(out)
}

/// Least-squares line `y = slope * x + intercept`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn affine_fit(xs: &[f64], ys: &[f64]) -> Result<AffineFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Shape("affine fit needs at least two paired points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Shape("affine fit needs distinct x values".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - slope * x - intercept).powi(2))
        .sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(AffineFit {
        slope,
        intercept,
        r_squared,
    })
}
