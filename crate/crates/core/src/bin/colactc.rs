use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use colactc::analysis::{checkpoint_similarity, curve_from_file, matrix_tsv};
use colactc::bench::{bench_grid, grid, speedup_table, speedup_tsv, BenchOptions};
use colactc::cli::{
    init_thread_pool, load_data, parse_config, parse_override, run_experiment, run_experiment_suite, RunConfig,
};
use colactc::ctc::inspect;
use colactc::data::{generate_split, read_jsonl, write_jsonl, zipf_ks_statistic, TaskSpec};
use colactc::model::decode::exact_match_accuracy;
use colactc::model::{evaluate, load_checkpoint, DecodeMode, LabelSource};
use colactc::{CoarseMapper, LogProbLattice, MappingKind, Scalar, ShufflePermutation, Vocabulary};

#[derive(Parser)]
#[command(name = "colactc", version, about = "Coarse-label CTC regularization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic train/held-out dataset as JSON lines.
    GenData(GenDataArgs),
    /// Map id sequences read from stdin (one space-separated line each).
    Map(MapArgs),
    /// Train one model and evaluate it on held-out data.
    Train(RunFlags),
    /// Evaluate a checkpoint on held-out data.
    Eval(EvalArgs),
    /// Time training steps over a (V, L) grid.
    Bench(BenchArgs),
    /// Similarity diagnostics and training curves.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Print CTC loss and per-frame posteriors for a lattice and labels.
    InspectCtc(InspectArgs),
    /// Run a suite of named experiments and write summary.csv.
    Suite(SuiteArgs),
    /// Write a seeded id permutation for a vocabulary file.
    ShuffleVocab(ShuffleArgs),
}

#[derive(Args, Clone, Default)]
struct RunFlags {
    /// Flat JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lambda: Option<f64>,
    /// identity|tru|mod|div|log|random
    #[arg(long)]
    mapping: Option<String>,
    #[arg(long)]
    label_size: Option<usize>,
    /// transcript|translation
    #[arg(long)]
    label_source: Option<String>,
    /// Sets both source and target vocabulary sizes.
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    share_params: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    deterministic: bool,
    #[arg(long = "f64")]
    wide: bool,
    /// Any config key, as key=value (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl RunFlags {
    fn resolve(&self) -> Result<RunConfig> {
        let mut o: Vec<(String, Value)> = Vec::new();
        if let Some(v) = self.lambda {
            o.push(("lambda".into(), json!(v)));
        }
        if let Some(v) = &self.mapping {
            o.push(("mapping".into(), json!(v)));
        }
        if let Some(v) = self.label_size {
            o.push(("label_size".into(), json!(v)));
        }
        if let Some(v) = &self.label_source {
            o.push(("label_source".into(), json!(v)));
        }
        if let Some(v) = self.vocab_size {
            o.push(("vocab_src".into(), json!(v)));
            o.push(("vocab_tgt".into(), json!(v)));
        }
        if self.share_params {
            o.push(("share_params".into(), json!(true)));
        }
        if let Some(v) = self.seed {
            o.push(("seed".into(), json!(v)));
        }
        if let Some(v) = &self.out {
            o.push(("out".into(), json!(v)));
        }
        if self.deterministic {
            o.push(("deterministic".into(), json!(true)));
        }
        if self.wide {
            o.push(("f64".into(), json!(true)));
        }
        for s in &self.set {
            o.push(parse_override(s)?);
        }
        Ok(parse_config(self.config.as_deref(), &o)?)
    }
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    vocab_src: Option<usize>,
    #[arg(long)]
    vocab_tgt: Option<usize>,
    #[arg(long)]
    zipf_s: Option<f64>,
    #[arg(long)]
    expand_min: Option<usize>,
    #[arg(long)]
    expand_max: Option<usize>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    swap_prob: Option<f64>,
    #[arg(long)]
    len_min: Option<usize>,
    #[arg(long)]
    len_max: Option<usize>,
    #[arg(long)]
    feat_dim: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 4000)]
    train_size: usize,
    #[arg(long, default_value_t = 500)]
    eval_size: usize,
    #[arg(long, default_value = "data")]
    out: PathBuf,
}

impl GenDataArgs {
    fn spec(&self) -> TaskSpec {
        let d = TaskSpec::default();
        TaskSpec {
            vocab_src: self.vocab_src.unwrap_or(d.vocab_src),
            vocab_tgt: self.vocab_tgt.unwrap_or(d.vocab_tgt),
            zipf_s: self.zipf_s.unwrap_or(d.zipf_s),
            expand_min: self.expand_min.unwrap_or(d.expand_min),
            expand_max: self.expand_max.unwrap_or(d.expand_max),
            noise_sigma: self.noise_sigma.unwrap_or(d.noise_sigma),
            swap_prob: self.swap_prob.unwrap_or(d.swap_prob),
            len_min: self.len_min.unwrap_or(d.len_min),
            len_max: self.len_max.unwrap_or(d.len_max),
            feat_dim: self.feat_dim.unwrap_or(d.feat_dim),
            seed: self.seed.unwrap_or(d.seed),
        }
    }
}

#[derive(Args)]
struct MapArgs {
    #[arg(long, default_value = "mod")]
    mapping: String,
    #[arg(long)]
    vocab_size: usize,
    #[arg(long)]
    label_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON array permutation applied before mapping.
    #[arg(long)]
    permutation: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    run: RunFlags,
    #[arg(long)]
    checkpoint: PathBuf,
    /// JSON-lines data; generated from the run config when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    /// greedy|beam
    #[arg(long, default_value = "greedy")]
    mode: String,
    /// Utterances to decode for exact-match accuracy.
    #[arg(long, default_value_t = 100)]
    decode_items: usize,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "1024,4096,16384")]
    vocab: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "256,1024,4096,16384")]
    labels: Vec<usize>,
    #[arg(long, default_value_t = 64)]
    d_model: usize,
    /// Encoder positions per utterance.
    #[arg(long, default_value_t = 50)]
    frames: usize,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 5)]
    steps: usize,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, default_value_t = 10)]
    warmup: usize,
    #[arg(long, default_value_t = 0.3)]
    lambda: f64,
    #[arg(long, default_value = "bench")]
    out: PathBuf,
    #[arg(long = "f64")]
    wide: bool,
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Mean pairwise cosine similarity of encoder outputs.
    Similarity {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Also dump this utterance's full similarity matrix as TSV.
        #[arg(long)]
        dump: Option<usize>,
        #[arg(long, default_value = "analysis")]
        out: PathBuf,
    },
    /// Moving-average curve of one metrics field.
    Curve {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long, default_value = "total_loss")]
        field: String,
        #[arg(long, default_value_t = 50)]
        window: usize,
        #[arg(long, default_value = "analysis")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct InspectArgs {
    /// JSON: {"logp": [[..]]}, {"probs": [[..]]} or a bare array of log-prob rows.
    #[arg(long)]
    lattice: PathBuf,
    /// JSON: an id array or {"labels": [..]}.
    #[arg(long)]
    labels: PathBuf,
}

#[derive(Args)]
struct SuiteArgs {
    #[arg(long)]
    suite: PathBuf,
    #[arg(long, default_value = "suite")]
    out: PathBuf,
}

#[derive(Args)]
struct ShuffleArgs {
    /// Vocabulary file, one token per line.
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "permutation.json")]
    out: PathBuf,
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn gen_data(a: &GenDataArgs) -> Result<()> {
    let spec = a.spec();
    let train = generate_split(&spec, a.train_size, 0)?;
    let held_out = generate_split(&spec, a.eval_size, 1)?;
    std::fs::create_dir_all(&a.out)?;
    write_jsonl(a.out.join("train.jsonl"), &train)?;
    write_jsonl(a.out.join("held_out.jsonl"), &held_out)?;
    write_json(&a.out.join("task.json"), &spec)?;
    println!(
        "{} train, {} held-out triplets in {} (zipf ks {:.4})",
        train.len(),
        held_out.len(),
        a.out.display(),
        zipf_ks_statistic(&spec, &train)
    );
    Ok(())
}

fn map_stdin(a: &MapArgs) -> Result<()> {
    let kind: MappingKind = a.mapping.parse()?;
    let mut mapper = CoarseMapper::with_seed(kind, a.vocab_size, a.label_size, a.seed)?;
    if let Some(p) = &a.permutation {
        mapper = mapper.with_permutation(ShufflePermutation::load(p)?)?;
    }
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for (i, line) in io::stdin().lock().lines().enumerate() {
        let line = line?;
        let ids = line
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .with_context(|| format!("line {}: expected space-separated ids", i + 1))?;
        let mapped = mapper.map_sequence(&ids).with_context(|| format!("line {}", i + 1))?;
        let text: Vec<String> = mapped.iter().map(usize::to_string).collect();
        writeln!(out, "{}", text.join(" "))?;
    }
    Ok(())
}

fn train(flags: &RunFlags) -> Result<()> {
    let cfg = flags.resolve()?;
    let a = run_experiment(&cfg)?;
    println!("{}", serde_json::to_string(&a.summary)?);
    Ok(())
}

fn eval_typed<T: Scalar>(a: &EvalArgs, cfg: &RunConfig) -> Result<Value> {
    let ckpt = load_checkpoint::<T>(&a.checkpoint)?;
    let mode: DecodeMode = a.mode.parse()?;
    let data = match &a.data {
        Some(p) => read_jsonl(p)?,
        None => load_data(cfg)?.1,
    };
    let model_cfg = ckpt.config;
    let mut mapper = if model_cfg.ctc_enabled() {
        let source = cfg.run.label_source;
        let v = match source {
            LabelSource::Transcript => model_cfg.vocab_src,
            LabelSource::Translation => model_cfg.vocab_tgt,
        };
        let kind = if model_cfg.label_size == v {
            MappingKind::Identity
        } else {
            cfg.run.mapping
        };
        Some(CoarseMapper::with_seed(
            kind,
            v,
            model_cfg.label_size,
            cfg.run.mapping_seed,
        )?)
    } else {
        None
    };
    let report = evaluate(&ckpt.params, &model_cfg, &data, mapper.as_mut(), cfg.run.label_source)?;
    let n = a.decode_items.min(data.len());
    let exact = if n > 0 {
        Some(exact_match_accuracy(&ckpt.params, &model_cfg, &data[..n], mode)?)
    } else {
        None
    };
    let mut out = serde_json::to_value(&report)?;
    out["exact_match"] = json!(exact);
    out["decode_mode"] = json!(mode.to_string());
    Ok(out)
}

fn eval(a: &EvalArgs) -> Result<()> {
    let cfg = a.run.resolve()?;
    let out = if cfg.run.f64 {
        eval_typed::<f64>(a, &cfg)?
    } else {
        eval_typed::<f32>(a, &cfg)?
    };
    write_json(&cfg.run.out.join("eval.json"), &out)?;
    println!("{}", serde_json::to_string(&out)?);
    Ok(())
}

fn bench(a: &BenchArgs) -> Result<()> {
    let points = grid(&a.vocab, &a.labels, a.d_model, a.frames, a.batch);
    let opts = BenchOptions {
        steps: a.steps,
        reps: a.reps,
        warmup: a.warmup,
        lambda: a.lambda,
        ..BenchOptions::default()
    };
    let results = if a.wide {
        bench_grid::<f64>(&points, &opts)?
    } else {
        bench_grid::<f32>(&points, &opts)?
    };
    std::fs::create_dir_all(&a.out)?;
    let csv = speedup_table(&results)?;
    std::fs::write(a.out.join("bench.csv"), &csv)?;
    std::fs::write(a.out.join("bench.tsv"), speedup_tsv(&results)?)?;
    write_json(&a.out.join("bench.json"), &results)?;
    print!("{csv}");
    Ok(())
}

fn analyze(cmd: &AnalyzeCommand) -> Result<()> {
    match cmd {
        AnalyzeCommand::Similarity {
            checkpoint,
            data,
            dump,
            out,
        } => {
            let data = read_jsonl(data)?;
            let report = checkpoint_similarity(checkpoint, &data, *dump)?;
            std::fs::create_dir_all(out)?;
            if let Some(m) = &report.matrix {
                std::fs::write(out.join("similarity_matrix.tsv"), matrix_tsv(m))?;
            }
            write_json(&out.join("similarity.json"), &report)?;
            println!(
                "corpus mean similarity {:.6} over {} utterances ({} skipped)",
                report.corpus_mean,
                report.per_utterance.len() - report.skipped,
                report.skipped
            );
        }
        AnalyzeCommand::Curve {
            metrics,
            field,
            window,
            out,
        } => {
            let curve = curve_from_file(metrics, field, *window)?;
            std::fs::create_dir_all(out)?;
            let mut tsv = format!("# step\t{field}\n");
            for p in &curve {
                tsv.push_str(&format!("{}\t{:.6}\n", p.step, p.value));
            }
            std::fs::write(out.join(format!("{field}.tsv")), &tsv)?;
            print!("{tsv}");
        }
    }
    Ok(())
}

fn inspect_ctc(a: &InspectArgs) -> Result<()> {
    let rows = |v: &Value| -> Result<Vec<Vec<f64>>> { Ok(serde_json::from_value(v.clone())?) };
    let lat_json = read_json(&a.lattice)?;
    let lat = match (&lat_json.get("logp"), &lat_json.get("probs")) {
        (Some(v), _) => LogProbLattice::<f64>::from_rows(&rows(v)?)?,
        (None, Some(v)) => LogProbLattice::<f64>::from_probs(&rows(v)?)?,
        (None, None) if lat_json.is_array() => LogProbLattice::<f64>::from_rows(&rows(&lat_json)?)?,
        _ => bail!("lattice file needs a `logp` or `probs` array"),
    };
    let labels_json = read_json(&a.labels)?;
    let labels: Vec<usize> = serde_json::from_value(labels_json.get("labels").cloned().unwrap_or(labels_json))
        .context("labels must be an array of ids")?;
    println!("{}", serde_json::to_string(&inspect(&lat, &labels)?)?);
    Ok(())
}

fn suite(a: &SuiteArgs) -> Result<()> {
    let rows = run_experiment_suite(&a.suite, &a.out)?;
    for r in &rows {
        println!("{} {} {}", r.name, r.status, r.error.as_deref().unwrap_or(""));
    }
    println!("summary written to {}", a.out.join("summary.csv").display());
    Ok(())
}

fn shuffle_vocab(a: &ShuffleArgs) -> Result<()> {
    let vocab = Vocabulary::load(&a.vocab)?;
    let perm = vocab.shuffle_ids(a.seed);
    perm.save(&a.out)?;
    println!("{} ids permuted into {}", perm.len(), a.out.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    init_thread_pool()?;
    match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Map(a) => map_stdin(a),
        Command::Train(f) => train(f),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a),
        Command::Analyze(c) => analyze(c),
        Command::InspectCtc(a) => inspect_ctc(a),
        Command::Suite(a) => suite(a),
        Command::ShuffleVocab(a) => shuffle_vocab(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = String::new();
            for cause in e.chain().map(ToString::to_string) {
                if !msg.contains(&cause) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&cause);
                }
            }
            eprintln!("error: {}", msg.replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
