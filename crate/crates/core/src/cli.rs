//! Run configuration, single experiments and experiment suites.
//!
//! A run is configured by one flat JSON object. Its keys are the generator
//! fields (with the generator seed spelled `data_seed`), the training
//! fields, and the run-level fields of [`RunOptions`]. `vocab_src`,
//! `vocab_tgt` and `feat_dim` feed both the generator and the model.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::colamap::{CoarseMapper, MappingKind};
use crate::data::{generate_split, read_jsonl, TaskSpec, Triplet};
use crate::error::{Error, Result};
use crate::model::checkpoint::save_checkpoint;
use crate::model::decode::exact_match_accuracy;
use crate::model::{evaluate, DecodeMode, EvalReport, LabelSource, TrainConfig, Trainer};
use crate::tensor::Scalar;
use crate::vocab::ShufflePermutation;

/// Run-level settings that belong to neither the generator nor the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunOptions {
    pub name: String,
    pub mapping: MappingKind,
    pub mapping_seed: u64,
    pub permutation_file: Option<PathBuf>,
    pub label_source: LabelSource,
    pub out: PathBuf,
    /// Generated training triplets, unless `train_data` is given.
    pub train_size: usize,
    /// Generated held-out triplets, unless `eval_data` is given.
    pub eval_size: usize,
    pub train_data: Option<PathBuf>,
    pub eval_data: Option<PathBuf>,
    /// Held-out utterances decoded for exact-match accuracy; 0 skips decoding.
    pub decode_items: usize,
    pub decode_mode: DecodeMode,
    /// Train and evaluate in 64-bit floats.
    pub f64: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            name: "run".into(),
            mapping: MappingKind::Modulo,
            mapping_seed: 0,
            permutation_file: None,
            label_source: LabelSource::Transcript,
            out: PathBuf::from("runs/run"),
            train_size: 4000,
            eval_size: 500,
            train_data: None,
            eval_data: None,
            decode_items: 0,
            decode_mode: DecodeMode::Greedy,
            f64: false,
        }
    }
}

/// Fully resolved configuration of one run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub task: TaskSpec,
    pub train: TrainConfig,
    pub run: RunOptions,
}

fn object(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m,
        _ => unreachable!("config sections serialize to objects"),
    }
}

fn task_keys() -> Map<String, Value> {
    let mut m = object(serde_json::to_value(TaskSpec::default()).expect("serializes"));
    let seed = m.remove("seed").expect("task seed");
    m.insert("data_seed".into(), seed);
    m
}

impl RunConfig {
    /// The flat JSON form; `parse_config` on it gives back `self`.
    pub fn to_flat(&self) -> Value {
        let mut out = object(serde_json::to_value(&self.run).expect("serializes"));
        out.extend(object(serde_json::to_value(&self.train).expect("serializes")));
        let mut task = object(serde_json::to_value(&self.task).expect("serializes"));
        let seed = task.remove("seed").expect("task seed");
        task.insert("data_seed".into(), seed);
        for (k, v) in task {
            out.entry(k).or_insert(v);
        }
        Value::Object(out)
    }

    /// Every key a config file may use, sorted.
    pub fn known_keys() -> Vec<String> {
        RunConfig::default()
            .to_flat()
            .as_object()
            .expect("flat config is an object")
            .keys()
            .cloned()
            .collect()
    }

    /// Checks cross-field constraints and that the mapper can be built.
    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.train.validate()?;
        if self.train.ctc_enabled() {
            self.mapper()?;
        }
        if self.run.train_data.is_none() && self.run.train_size == 0 {
            return Err(Error::config("train_size", "must be positive"));
        }
        if self.run.eval_data.is_none() && self.run.eval_size == 0 {
            return Err(Error::config("eval_size", "must be positive"));
        }
        Ok(())
    }

    /// Vocabulary the CTC labels are drawn from.
    pub fn label_vocab(&self) -> usize {
        match self.run.label_source {
            LabelSource::Transcript => self.train.vocab_src,
            LabelSource::Translation => self.train.vocab_tgt,
        }
    }

    /// The CTC label mapper, or `None` with the branch off.
    pub fn mapper(&self) -> Result<Option<CoarseMapper>> {
        if !self.train.ctc_enabled() {
            return Ok(None);
        }
        let v = self.label_vocab();
        let l = self.train.label_size;
        if l > v {
            return Err(Error::config(
                "label_size",
                format!("L = {l} exceeds the {} vocabulary size {v}", self.run.label_source),
            ));
        }
        if self.run.mapping == MappingKind::Identity && l != v {
            return Err(Error::config(
                "label_size",
                format!("identity mapping needs L = V, got L = {l} and V = {v}"),
            ));
        }
        let mut m = CoarseMapper::with_seed(self.run.mapping, v, l, self.run.mapping_seed)
            .map_err(|e| Error::config("mapping", e.to_string()))?;
        if let Some(path) = &self.run.permutation_file {
            m = m
                .with_permutation(ShufflePermutation::load(path)?)
                .map_err(|e| Error::config("permutation_file", e.to_string()))?;
        }
        Ok(Some(m))
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("resolved_config.json");
        let text = serde_json::to_string_pretty(&self.to_flat()).expect("serializes");
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

fn type_error(key: &str, e: serde_json::Error) -> Error {
    Error::config(key, e.to_string())
}

/// Builds a config from flat JSON values; later entries override earlier ones.
pub fn resolve(layers: &[Map<String, Value>]) -> Result<RunConfig> {
    let known: BTreeSet<String> = RunConfig::known_keys().into_iter().collect();
    let mut merged = Map::new();
    for layer in layers {
        for (k, v) in layer {
            if !known.contains(k) {
                return Err(Error::config(k, "unknown key"));
            }
            merged.insert(k.clone(), v.clone());
        }
    }
    let task_fields = task_keys();
    let train_fields = object(serde_json::to_value(TrainConfig::default()).expect("serializes"));
    let run_fields = object(serde_json::to_value(RunOptions::default()).expect("serializes"));
    let pick = |fields: &Map<String, Value>| -> Map<String, Value> {
        merged
            .iter()
            .filter(|(k, _)| fields.contains_key(*k))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    };
    // field-by-field so a type error names its key
    let check =
        |fields: &Map<String, Value>, mk: &dyn Fn(Map<String, Value>) -> serde_json::Result<()>| -> Result<()> {
            for (k, v) in pick(fields) {
                let mut single = Map::new();
                single.insert(k.clone(), v);
                mk(single).map_err(|e| type_error(&k, e))?;
            }
            Ok(())
        };
    let rename_seed = |mut m: Map<String, Value>| {
        if let Some(s) = m.remove("data_seed") {
            m.insert("seed".into(), s);
        }
        m
    };
    check(&task_fields, &|m| {
        serde_json::from_value::<TaskSpec>(Value::Object(rename_seed(m))).map(drop)
    })?;
    check(&train_fields, &|m| {
        serde_json::from_value::<TrainConfig>(Value::Object(m)).map(drop)
    })?;
    check(&run_fields, &|m| {
        serde_json::from_value::<RunOptions>(Value::Object(m)).map(drop)
    })?;

    let task: TaskSpec =
        serde_json::from_value(Value::Object(rename_seed(pick(&task_fields)))).map_err(|e| type_error("task", e))?;
    let train: TrainConfig =
        serde_json::from_value(Value::Object(pick(&train_fields))).map_err(|e| type_error("train", e))?;
    let run: RunOptions = serde_json::from_value(Value::Object(pick(&run_fields))).map_err(|e| type_error("run", e))?;
    let cfg = RunConfig { task, train, run };
    cfg.validate()?;
    Ok(cfg)
}

/// Reads an optional flat JSON file and applies `overrides` on top.
pub fn parse_config(file: Option<&Path>, overrides: &[(String, Value)]) -> Result<RunConfig> {
    let mut layers = Vec::new();
    if let Some(path) = file {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        match value {
            Value::Object(m) => layers.push(m),
            _ => return Err(Error::config("config", "expected a flat JSON object")),
        }
    }
    layers.push(overrides.iter().cloned().collect());
    resolve(&layers)
}

/// Parses a `key=value` override; the value is JSON when it parses as JSON
/// and a plain string otherwise.
pub fn parse_override(text: &str) -> Result<(String, Value)> {
    let (k, v) = text
        .split_once('=')
        .ok_or_else(|| Error::config(text, "expected key=value"))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_owned()));
    Ok((k.trim().to_owned(), value))
}

/// Outcome of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub status: String,
    pub token_accuracy: Option<f64>,
    pub exact_match: Option<f64>,
    pub eval_mle_loss: Option<f64>,
    pub eval_ctc_loss: Option<f64>,
    pub final_train_loss: Option<f64>,
    pub final_mle_loss: Option<f64>,
    pub final_ctc_loss: Option<f64>,
    pub skipped_infeasible: usize,
    pub wall_s: f64,
    pub params: Option<usize>,
    pub error: Option<String>,
}

impl RunSummary {
    fn failed(name: &str, wall_s: f64, e: &Error) -> Self {
        RunSummary {
            name: name.to_owned(),
            status: "failed".into(),
            token_accuracy: None,
            exact_match: None,
            eval_mle_loss: None,
            eval_ctc_loss: None,
            final_train_loss: None,
            final_mle_loss: None,
            final_ctc_loss: None,
            skipped_infeasible: 0,
            wall_s,
            params: None,
            error: Some(e.to_string()),
        }
    }
}

/// Training and held-out sets for a run.
pub fn load_data(cfg: &RunConfig) -> Result<(Vec<Triplet>, Vec<Triplet>)> {
    let train = match &cfg.run.train_data {
        Some(p) => read_jsonl(p)?,
        None => generate_split(&cfg.task, cfg.run.train_size, 0)?,
    };
    let held_out = match &cfg.run.eval_data {
        Some(p) => read_jsonl(p)?,
        None => generate_split(&cfg.task, cfg.run.eval_size, 1)?,
    };
    Ok((train, held_out))
}

/// Everything a finished run produced.
#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub summary: RunSummary,
    pub eval: EvalReport,
    pub out_dir: PathBuf,
}

fn run_typed<T: Scalar>(cfg: &RunConfig, train: &[Triplet], held_out: &[Triplet]) -> Result<RunArtifacts> {
    let start = Instant::now();
    let dir = &cfg.run.out;
    cfg.write_resolved(dir)?;
    let mapper = cfg.mapper()?;
    let source = cfg.run.label_source;
    let mut trainer = Trainer::<T>::new(&cfg.train, train, mapper.clone(), source)?;

    let metrics_path = dir.join("metrics.jsonl");
    let file = fs::File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let mut sink = BufWriter::new(file);
    let mut last = None;
    let mut skipped = 0;
    for _ in 0..cfg.train.max_steps {
        let m = trainer.step()?;
        skipped += m.skipped_infeasible;
        serde_json::to_writer(&mut sink, &m).expect("metrics serialize");
        sink.write_all(b"\n").map_err(|e| Error::io(&metrics_path, e))?;
        last = Some(m);
    }
    sink.flush().map_err(|e| Error::io(&metrics_path, e))?;
    let params = trainer.into_params();
    save_checkpoint(dir.join("model.ckpt"), &cfg.train, &params)?;

    let mut eval_mapper = mapper;
    let eval = evaluate(&params, &cfg.train, held_out, eval_mapper.as_mut(), source)?;
    let exact = if cfg.run.decode_items > 0 {
        let n = cfg.run.decode_items.min(held_out.len());
        Some(exact_match_accuracy(
            &params,
            &cfg.train,
            &held_out[..n],
            cfg.run.decode_mode,
        )?)
    } else {
        None
    };
    let eval_path = dir.join("eval.json");
    let mut eval_json = serde_json::to_value(&eval).expect("serializes");
    eval_json["exact_match"] = serde_json::json!(exact);
    fs::write(
        &eval_path,
        serde_json::to_string_pretty(&eval_json).expect("serializes") + "\n",
    )
    .map_err(|e| Error::io(&eval_path, e))?;

    let summary = RunSummary {
        name: cfg.run.name.clone(),
        status: "completed".into(),
        token_accuracy: Some(eval.token_accuracy),
        exact_match: exact,
        eval_mle_loss: Some(eval.mle_loss),
        eval_ctc_loss: eval.ctc_loss,
        final_train_loss: last.as_ref().map(|m| m.total_loss),
        final_mle_loss: last.as_ref().map(|m| m.mle_loss),
        final_ctc_loss: last.as_ref().and_then(|m| m.ctc_loss),
        skipped_infeasible: skipped,
        wall_s: start.elapsed().as_secs_f64(),
        params: Some(params.count_params()),
        error: None,
    };
    Ok(RunArtifacts {
        summary,
        eval,
        out_dir: dir.clone(),
    })
}

/// Generates or reads the data, trains, checkpoints and evaluates. Writes
/// `resolved_config.json`, `metrics.jsonl`, `model.ckpt` and `eval.json`
/// under the run's `out` directory.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunArtifacts> {
    cfg.validate()?;
    let (train, held_out) = load_data(cfg)?;
    run_on(cfg, &train, &held_out)
}

/// [`run_experiment`] on data already in memory.
pub fn run_on(cfg: &RunConfig, train: &[Triplet], held_out: &[Triplet]) -> Result<RunArtifacts> {
    if cfg.run.f64 {
        run_typed::<f64>(cfg, train, held_out)
    } else {
        run_typed::<f32>(cfg, train, held_out)
    }
}

/// A suite file: shared settings plus named per-run overrides.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteFile {
    pub base: Map<String, Value>,
    pub runs: Vec<Map<String, Value>>,
    /// Run independent experiments on the thread pool. Leave off when
    /// timings matter.
    pub parallel: bool,
}

/// Resolves every run of a suite; each run writes under `out/<name>`.
pub fn resolve_suite(suite: &SuiteFile, out: &Path) -> Result<Vec<RunConfig>> {
    let mut seen = BTreeSet::new();
    let mut configs = Vec::with_capacity(suite.runs.len());
    for (i, run) in suite.runs.iter().enumerate() {
        let name = run
            .get("name")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Suite(format!("run {} has no name", i + 1)))?;
        if !seen.insert(name.to_owned()) {
            return Err(Error::Suite(format!("duplicate run name {name:?}")));
        }
        let mut layer = run.clone();
        layer.insert(
            "out".into(),
            Value::String(out.join(name).to_string_lossy().into_owned()),
        );
        let cfg = resolve(&[suite.base.clone(), layer]).map_err(|e| Error::Suite(format!("run {name:?}: {e}")))?;
        configs.push(cfg);
    }
    Ok(configs)
}

/// Runs every entry of a suite and writes `summary.csv` under `out`. A run
/// that fails is recorded and the suite moves on.
pub fn run_experiment_suite(suite_path: &Path, out: &Path) -> Result<Vec<RunSummary>> {
    let text = fs::read_to_string(suite_path).map_err(|e| Error::io(suite_path, e))?;
    let suite: SuiteFile = serde_json::from_str(&text).map_err(|e| Error::Suite(e.to_string()))?;
    run_suite(&suite, out)
}

pub fn run_suite(suite: &SuiteFile, out: &Path) -> Result<Vec<RunSummary>> {
    let configs = resolve_suite(suite, out)?;
    let one = |cfg: &RunConfig| {
        let start = Instant::now();
        match run_experiment(cfg) {
            Ok(a) => a.summary,
            Err(e) => RunSummary::failed(&cfg.run.name, start.elapsed().as_secs_f64(), &e),
        }
    };
    let summaries: Vec<RunSummary> = if suite.parallel {
        use rayon::prelude::*;
        configs.par_iter().map(one).collect()
    } else {
        configs.iter().map(one).collect()
    };
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join("summary.csv");
    fs::write(&path, summary_csv(&summaries)).map_err(|e| Error::io(&path, e))?;
    Ok(summaries)
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:.6}"))
}

pub fn summary_csv(rows: &[RunSummary]) -> String {
    let mut out = String::from(
        "name,status,token_accuracy,exact_match,eval_mle_loss,eval_ctc_loss,final_train_loss,final_ctc_loss,skipped_infeasible,wall_s,params,error\n",
    );
    for r in rows {
        let error = r.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{:.3},{},{}",
            r.name,
            r.status,
            opt(r.token_accuracy),
            opt(r.exact_match),
            opt(r.eval_mle_loss),
            opt(r.eval_ctc_loss),
            opt(r.final_train_loss),
            opt(r.final_ctc_loss),
            r.skipped_infeasible,
            r.wall_s,
            r.params.map_or(String::new(), |p| p.to_string()),
            error
        )
        .expect("writing to a String");
    }
    out
}

/// Caps the global rayon pool at `COLACTC_THREADS` workers when set.
pub fn init_thread_pool() -> Result<()> {
    let Ok(v) = std::env::var("COLACTC_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::config("COLACTC_THREADS", format!("expected a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::config("COLACTC_THREADS", e.to_string()))
}
