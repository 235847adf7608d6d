use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::bail;
use clap::{Args, Parser, Subcommand, ValueEnum};
use gsnp::dataset::{
    prepare, stats_header, synth, Bundle, PrepareOptions, Split, SplitSpec, SynthSpec,
};
use gsnp::eval::{evaluate_split, ModelScorer};
use gsnp::explain::{extract_explanation, to_dot, to_json, Selection};
use gsnp::kg::{load_triples, merge_graphs, TripleFormat};
use gsnp::trainer::{Checkpoint, TrainConfig};
use gsnp::{Error, ErrorCategory};

/// Few-shot knowledge-graph completion with hypothesis-driven subgraph masking.
#[derive(Parser, Debug)]
#[command(name = "gsnp", version)]
struct Cli {
    /// Worker threads; 1 gives a single-threaded run.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build an inductive bundle from raw triple files.
    Prepare(PrepareArgs),
    /// Write a planted-rule synthetic bundle.
    Synth(SynthArgs),
    /// Train a model and write its checkpoint and metrics log.
    Train(TrainArgs),
    /// Rank held-out queries and report MRR and Hit@N.
    Eval(EvalArgs),
    /// Export the weighted subgraph behind one query's score.
    Explain(ExplainArgs),
}

#[derive(Args, Debug)]
struct PrepareArgs {
    /// Raw triple files, merged in order.
    #[arg(long = "triples", required = true, num_args = 1..)]
    triples: Vec<PathBuf>,
    /// JSON file naming the train, valid and test relations.
    #[arg(long)]
    split: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Split raw lines on any whitespace instead of tabs.
    #[arg(long)]
    whitespace: bool,
    #[arg(long, default_value_t = 5)]
    support: usize,
    /// Fraction of each evaluation task's remaining triples kept as queries.
    #[arg(long, default_value_t = 1.0)]
    query_fraction: f64,
    #[arg(long, default_value_t = 50)]
    candidates: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 60)]
    entities: usize,
    #[arg(long, default_value_t = 20)]
    pairs: usize,
    #[arg(long, default_value_t = 40)]
    distractors: usize,
    /// Planted pairs reserved for training; the rest are split between
    /// validation and test.
    #[arg(long, default_value_t = 12)]
    train_pairs: usize,
    #[arg(long, default_value_t = 10)]
    candidates: usize,
    #[arg(long, default_value_t = 5)]
    support: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// TOML training config.
    #[arg(long, env = "GSNP_CONFIG")]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set lr=0.01`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> anyhow::Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::load(p)?,
            None => TrainConfig::default(),
        };
        for o in &self.overrides {
            cfg.set(o)?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Bundle directory.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory for checkpoint.json and metrics.jsonl.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Support shots per task; defaults to the training value.
    #[arg(long)]
    k: Option<usize>,
    /// Seed for support negatives, sampled candidates and hypothesis draws.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Dot,
    Json,
}

#[derive(Args, Debug)]
struct ExplainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Task index within the split.
    #[arg(long)]
    task: usize,
    /// Query index within the task.
    #[arg(long)]
    query: usize,
    #[arg(long, conflicts_with = "top_k")]
    threshold: Option<f64>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    let category = e
        .chain()
        .find_map(|c| c.downcast_ref::<Error>())
        .map(Error::category);
    match category {
        Some(ErrorCategory::Usage) => 1,
        Some(ErrorCategory::Data) => 2,
        Some(ErrorCategory::Numeric) => 3,
        None if e.chain().any(|c| c.is::<std::io::Error>()) => 2,
        None => 1,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!(Error::InvalidArgument(
                "--threads must be at least 1".into()
            ));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| anyhow::anyhow!("configuring the thread pool: {e}"))?;
    }
    match cli.command {
        Command::Prepare(a) => cmd_prepare(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Explain(a) => cmd_explain(a),
    }
}

fn print_stats(bundle: &Bundle) {
    println!("{}", stats_header());
    for row in bundle.stats() {
        println!("{row}");
    }
}

fn cmd_prepare(a: PrepareArgs) -> anyhow::Result<()> {
    let format = if a.whitespace {
        TripleFormat::Whitespace
    } else {
        TripleFormat::Tsv
    };
    let mut raw = load_triples(&a.triples[0], format)?;
    for p in &a.triples[1..] {
        raw = merge_graphs(&raw, &load_triples(p, format)?);
    }
    let split = SplitSpec::load(&a.split)?;
    let opts = PrepareOptions {
        support: a.support,
        query_fraction: a.query_fraction,
        candidates: a.candidates,
        seed: a.seed,
    };
    let bundle = prepare(&raw, &split, &opts)?;
    bundle.write(&a.out)?;
    print_stats(&bundle);
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> anyhow::Result<()> {
    let spec = SynthSpec {
        entities: a.entities,
        pairs: a.pairs,
        distractors: a.distractors,
        train_pairs: a.train_pairs,
        candidates: a.candidates,
        support: a.support,
        seed: a.seed,
    };
    let s = synth(&spec)?;
    s.bundle.write(&a.out)?;
    print_stats(&s.bundle);
    Ok(())
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(BufWriter::new(f))
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<()> {
    let cfg = a.config.resolve()?;
    let bundle = Bundle::load(&a.data)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let log_path = a.out.join("metrics.jsonl");
    let mut log = create(&log_path)?;
    let outcome = bundle.train(&cfg, |r| {
        let line = serde_json::to_string(r).expect("records serialize");
        writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))?;
        eprintln!(
            "episode {:>5}  ranking {:.4}  kl_z {:.4}  kl_mask {:.4}  val_mrr {}",
            r.episode,
            r.ranking,
            r.kl_z,
            r.kl_mask,
            r.val_mrr.map_or("-".into(), |m| format!("{m:.4}"))
        );
        Ok(())
    })?;
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    let ckpt = a.out.join("checkpoint.json");
    outcome.best.save(&ckpt)?;
    println!(
        "trained {} episodes{}; best checkpoint from episode {} written to {}",
        outcome.episodes,
        if outcome.stopped_early {
            " (stopped early)"
        } else {
            ""
        },
        outcome.best.episode,
        ckpt.display()
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> anyhow::Result<()> {
    let (model, mut cfg) = Checkpoint::load(&a.checkpoint)?.into_model()?;
    if let Some(k) = a.k {
        cfg.k_shot = k;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let bundle = Bundle::load(&a.data)?;
    let graph = bundle.eval_graph()?;
    let tasks = bundle.eval_tasks(
        a.split,
        &graph,
        cfg.k_shot,
        cfg.neg_size,
        cfg.n_candidates,
        cfg.seed,
    )?;
    if tasks.is_empty() {
        bail!(Error::InvalidArgument(format!(
            "split `{}` has no tasks",
            a.split.name()
        )));
    }
    let scorer = ModelScorer::new(&model, &graph, cfg.eval());
    let report = evaluate_split(&scorer, &tasks)?;
    let json = serde_json::to_string_pretty(&report)?;
    if let Some(p) = &a.out {
        fs::write(p, format!("{json}\n")).map_err(|e| Error::io(p, e))?;
    }
    println!("{json}");
    print!("{}", report.table());
    Ok(())
}

fn cmd_explain(a: ExplainArgs) -> anyhow::Result<()> {
    let (model, mut cfg) = Checkpoint::load(&a.checkpoint)?.into_model()?;
    if let Some(k) = a.k {
        cfg.k_shot = k;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let selection = match (a.threshold, a.top_k) {
        (_, Some(k)) => Selection::TopK(k),
        (Some(t), None) => Selection::Threshold(t),
        (None, None) => Selection::Threshold(0.5),
    };
    let bundle = Bundle::load(&a.data)?;
    let graph = bundle.eval_graph()?;
    let tasks = bundle.eval_tasks(
        a.split,
        &graph,
        cfg.k_shot,
        cfg.neg_size,
        cfg.n_candidates,
        cfg.seed,
    )?;
    let task = tasks.get(a.task).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "split `{}` has {} tasks, index {} requested",
            a.split.name(),
            tasks.len(),
            a.task
        ))
    })?;
    let query = *task.queries.get(a.query).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "task {} has {} queries, index {} requested",
            a.task,
            task.queries.len(),
            a.query
        ))
    })?;
    let exp = extract_explanation(&model, &graph, task, query, selection, cfg.hop_k, cfg.seed)?;
    let text = match a.format {
        Format::Dot => to_dot(&exp),
        Format::Json => to_json(&exp),
    };
    match &a.out {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e))?,
        None => print!("{text}"),
    }
    Ok(())
}
