use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sessrec::checkpoint::Checkpoint;
use sessrec::config::{CeMode, TrainConfig, WeightScaling};
use sessrec::dataset::{
    build_corpus, filter_corpus, load_sessions, make_splits, Bundle, CorpusOptions, RawFormat, SplitPolicy,
    DEFAULT_MAX_SESSION_LEN,
};
use sessrec::evaluation::{evaluate, MetricsFile};
use sessrec::graphs::{build_global_graph, GlobalGraph};
use sessrec::hashing::file_sha256;
use sessrec::manifest::{RunManifest, MANIFEST_FILE};
use sessrec::model::{score_session, NeighborCache};
use sessrec::training::{self, REPORT_FILE};
use sessrec::{Error, Result};

#[derive(Parser)]
#[command(name = "sessrec", version, about = "Session-based next-item recommendation pipeline")]
struct Cli {
    /// Worker threads. Computation is currently single-threaded; values
    /// above 1 are accepted and ignored.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn a raw click log into a train/valid/test bundle.
    Preprocess(PreprocessArgs),
    /// Build the global item graph from a bundle's training sessions.
    BuildGraph(BuildGraphArgs),
    /// Train a model.
    Train(TrainArgs),
    /// Compute P@k and MRR@k of a checkpoint.
    Evaluate(EvaluateArgs),
    /// Rank next items for one session.
    Predict(PredictArgs),
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    input: PathBuf,
    /// tsv (session_id, item_id, order_key) or jsonl
    #[arg(long, default_value = "tsv")]
    format: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    min_item_count: usize,
    #[arg(long, default_value_t = 2)]
    min_session_len: usize,
    /// Start a new session after a gap longer than this many seconds.
    #[arg(long)]
    split_gap_seconds: Option<i64>,
    /// tail_fraction or last_k_periods
    #[arg(long, default_value = "tail_fraction")]
    split_policy: String,
    /// Test fraction for tail_fraction, window length for last_k_periods.
    #[arg(long, default_value_t = 0.2)]
    split_param: f64,
    #[arg(long, default_value_t = 0.1)]
    valid_fraction: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_SESSION_LEN)]
    max_session_len: usize,
    /// Largest tolerated share of malformed records.
    #[arg(long, default_value_t = 0.01)]
    malformed_tolerance: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BuildGraphArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long, default_value_t = 3)]
    epsilon: usize,
    #[arg(long, default_value_t = 12)]
    max_neighbors: usize,
    #[arg(long)]
    out: PathBuf,
    /// Recorded in the manifest; graph construction is deterministic.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone, Debug, Default, PartialEq)]
struct ConfigOverrides {
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    num_factors: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    epsilon: Option<usize>,
    #[arg(long)]
    max_neighbors: Option<usize>,
    #[arg(long)]
    d_p: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_decay: Option<f64>,
    #[arg(long)]
    lr_every: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// paper_binary or multiclass
    #[arg(long)]
    ce_mode: Option<String>,
    /// raw or log1p
    #[arg(long)]
    weight_scaling: Option<String>,
}

impl ConfigOverrides {
    fn apply(&self, cfg: &mut TrainConfig) -> Result<()> {
        macro_rules! set {
            ($($field:ident => $target:ident),* $(,)?) => {
                $(if let Some(v) = self.$field { cfg.$target = v; })*
            };
        }
        set!(d => d, num_factors => num_factors, layers => layers, epsilon => epsilon,
             max_neighbors => max_neighbors, beta => beta, lambda => lambda, dropout => dropout,
             batch_size => batch_size, weight_decay => weight_decay, lr => base_lr, lr_decay => lr_decay,
             lr_every => lr_every, max_epochs => max_epochs, patience => patience, seed => seed);
        if let Some(v) = self.d_p {
            cfg.d_p = Some(v);
        }
        if let Some(m) = &self.ce_mode {
            cfg.ce_mode = parse_enum::<CeMode>(m, "ce_mode")?;
        }
        if let Some(m) = &self.weight_scaling {
            cfg.weight_scaling = parse_enum::<WeightScaling>(m, "weight_scaling")?;
        }
        cfg.validate()
    }
}

fn parse_enum<T: serde::de::DeserializeOwned>(value: &str, what: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(value.to_string()))
        .map_err(|_| Error::Config(format!("invalid {what} {value:?}")))
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    graph: PathBuf,
    /// TOML config file; flags below override its values.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in preset: tmall, lastfm or nowplaying.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long, conflicts_with_all = ["config", "preset"])]
    resume: Option<PathBuf>,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, default_value_t = 20)]
    k: usize,
    /// test or valid
    #[arg(long, default_value = "test")]
    split: String,
    /// Defaults to metrics.json beside the checkpoint.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    graph: PathBuf,
    /// Comma-separated raw item ids, oldest first.
    #[arg(long)]
    session: String,
    #[arg(long, default_value_t = 20)]
    topk: usize,
    /// Also write the ranking as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn sibling_manifest(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn out_dir_of(path: &Path) -> &Path {
    path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."))
}

fn preprocess(a: &PreprocessArgs) -> Result<()> {
    let format: RawFormat = a.format.parse()?;
    let policy = SplitPolicy::parse(&a.split_policy, a.split_param)?;
    if !(0.0..1.0).contains(&a.valid_fraction) {
        return Err(Error::Config(format!("valid fraction must be in [0, 1), got {}", a.valid_fraction)));
    }
    if a.max_session_len == 0 {
        return Err(Error::Config("max session length must be positive".into()));
    }
    let load = load_sessions(&a.input, format, a.malformed_tolerance)?;
    let corpus = build_corpus(&load.events, &CorpusOptions { split_gap: a.split_gap_seconds, max_len: a.max_session_len });
    let corpus = filter_corpus(&corpus, a.min_session_len, a.min_item_count)?;
    let splits = make_splits(&corpus, policy, a.valid_fraction, a.seed)?;
    let bundle = Bundle::from_splits(&corpus, splits, Some(&load));
    bundle.write(&a.out)?;
    log::info!(
        "bundle: {} items, {} train / {} valid / {} test instances",
        bundle.num_items(),
        bundle.train.len(),
        bundle.valid.len(),
        bundle.test.len()
    );
    let mut m = RunManifest::new(
        "preprocess",
        Some(a.seed),
        serde_json::json!({
            "format": a.format,
            "min_item_count": a.min_item_count,
            "min_session_len": a.min_session_len,
            "split_gap_seconds": a.split_gap_seconds,
            "split_policy": policy,
            "valid_fraction": a.valid_fraction,
            "max_session_len": a.max_session_len,
            "malformed_tolerance": a.malformed_tolerance,
        }),
    );
    m.add_input(&a.input)?;
    for f in Bundle::files() {
        m.add_output(&a.out.join(f), &a.out)?;
    }
    m.write(&a.out.join(MANIFEST_FILE))
}

fn build_graph(a: &BuildGraphArgs) -> Result<()> {
    let bundle = Bundle::load(&a.bundle)?;
    let graph = build_global_graph(&bundle.train_corpus(), a.epsilon, a.max_neighbors)?;
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    graph.write_jsonl(&a.out)?;
    let mut m = RunManifest::new(
        "build-graph",
        a.seed,
        serde_json::json!({ "epsilon": a.epsilon, "max_neighbors": a.max_neighbors }),
    );
    m.add_input(&a.bundle)?;
    m.add_output(&a.out, out_dir_of(&a.out))?;
    m.write(&sibling_manifest(&a.out))
}

fn print_epoch(r: &sessrec::checkpoint::EpochRecord) {
    println!(
        "epoch={} loss={:.6} p20={:.4} mrr20={:.4} lr={:e}",
        r.epoch, r.train_loss, r.valid_p20, r.valid_mrr20, r.lr
    );
}

fn train(a: &TrainArgs) -> Result<()> {
    let bundle = Bundle::load(&a.bundle)?;
    let graph = GlobalGraph::read_jsonl(&a.graph)?;
    let (outcome, cfg) = if let Some(ckpt) = &a.resume {
        let others = ConfigOverrides { max_epochs: None, ..a.overrides.clone() };
        if others != ConfigOverrides::default() {
            return Err(Error::Config("only --max-epochs may be changed when resuming".into()));
        }
        let outcome = training::resume(ckpt, &bundle, &graph, &a.out, a.overrides.max_epochs, &mut print_epoch)?;
        let cfg = Checkpoint::load(&outcome.last_checkpoint)?.config;
        (outcome, cfg)
    } else {
        let mut cfg = match (&a.config, &a.preset) {
            (Some(path), _) => TrainConfig::from_file(path)?,
            (None, Some(name)) => TrainConfig::preset(name)?,
            (None, None) => TrainConfig::default(),
        };
        a.overrides.apply(&mut cfg)?;
        let outcome = training::train(&cfg, &bundle, &graph, &a.out, &mut print_epoch)?;
        (outcome, cfg)
    };
    let r = &outcome.report;
    log::info!(
        "best epoch {:?} (valid MRR@20 {:?}), {:.1}s",
        r.best_epoch,
        r.best_valid_mrr20,
        r.wall_seconds
    );
    let mut m = RunManifest::new("train", Some(cfg.seed), serde_json::to_value(&cfg)?);
    if let Some(c) = &a.config {
        m.add_input(c)?;
    }
    if let Some(c) = &a.resume {
        m.add_input(c)?;
    }
    m.add_input(&a.bundle)?;
    m.add_input(&a.graph)?;
    for p in [&outcome.best_checkpoint, &outcome.last_checkpoint, &a.out.join(REPORT_FILE)] {
        m.add_output(p, &a.out)?;
    }
    m.write(&a.out.join(MANIFEST_FILE))
}

fn load_model(checkpoint: &Path, graph_path: &Path) -> Result<(Checkpoint, GlobalGraph, NeighborCache)> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let graph = GlobalGraph::read_jsonl(graph_path)?;
    if graph.corpus_hash != ckpt.corpus_hash || graph.num_items != ckpt.vocab.len() {
        return Err(Error::Mismatch("graph and checkpoint come from different bundles".into()));
    }
    let cache = NeighborCache::build(&graph, ckpt.config.max_neighbors, ckpt.config.seed);
    Ok((ckpt, graph, cache))
}

fn evaluate_cmd(a: &EvaluateArgs) -> Result<()> {
    let (ckpt, _, cache) = load_model(&a.checkpoint, &a.graph)?;
    let bundle = Bundle::load(&a.bundle)?;
    if ckpt.vocab != bundle.vocab.ids() {
        return Err(Error::Mismatch("checkpoint vocabulary differs from the bundle's".into()));
    }
    let instances = match a.split.as_str() {
        "test" => &bundle.test,
        "valid" => &bundle.valid,
        other => return Err(Error::Config(format!("unknown split {other:?} (expected test or valid)"))),
    };
    let cfg = &ckpt.config;
    let result = evaluate(&ckpt.params, instances, &cache, cfg.layers, cfg.weight_scaling, a.k)?;
    let metrics = MetricsFile::new(&result, file_sha256(&a.checkpoint)?);
    let out = a.out.clone().unwrap_or_else(|| out_dir_of(&a.checkpoint).join("metrics.json"));
    let text = serde_json::to_string_pretty(&metrics)?;
    std::fs::write(&out, text + "\n").map_err(|e| Error::io(&out, e))?;
    println!("p@{k}={:.4} mrr@{k}={:.4} n={}", result.p_at_k, result.mrr_at_k, result.num_instances, k = a.k);
    let mut m = RunManifest::new("evaluate", Some(cfg.seed), serde_json::json!({ "k": a.k, "split": a.split }));
    m.add_input(&a.checkpoint)?;
    m.add_input(&a.bundle)?;
    m.add_input(&a.graph)?;
    m.add_output(&out, out_dir_of(&out))?;
    m.write(&sibling_manifest(&out))
}

#[derive(serde::Serialize)]
struct Ranked {
    item: String,
    score: f64,
}

fn predict(a: &PredictArgs) -> Result<()> {
    let (ckpt, _, cache) = load_model(&a.checkpoint, &a.graph)?;
    let vocab = sessrec::dataset::ItemVocab::from_ids(ckpt.vocab.clone())?;
    let mut prefix = Vec::new();
    for raw in a.session.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        prefix.push(vocab.index_of(raw).ok_or_else(|| Error::UnknownItem(raw.to_string()))?);
    }
    if prefix.is_empty() {
        return Err(Error::Config("--session must name at least one item".into()));
    }
    let cfg = &ckpt.config;
    let logits = score_session(&ckpt.params, &prefix, &cache, cfg.layers, cfg.weight_scaling)?;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&x, &y| logits[y].total_cmp(&logits[x]).then(x.cmp(&y)));
    let ranked: Vec<Ranked> = order
        .into_iter()
        .take(a.topk)
        .map(|i| Ranked { item: vocab.raw_id(i).unwrap_or_default().to_string(), score: (logits[i] - max).exp() / z })
        .collect();
    for r in &ranked {
        println!("{}\t{:.6e}", r.item, r.score);
    }
    if let Some(out) = &a.out {
        let text = serde_json::to_string_pretty(&ranked)?;
        std::fs::write(out, text + "\n").map_err(|e| Error::io(out, e))?;
        let mut m = RunManifest::new(
            "predict",
            Some(cfg.seed),
            serde_json::json!({ "session": a.session, "topk": a.topk }),
        );
        m.add_input(&a.checkpoint)?;
        m.add_input(&a.graph)?;
        m.add_output(out, out_dir_of(out))?;
        m.write(&sibling_manifest(out))?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if cli.threads == 0 {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    match &cli.command {
        Command::Preprocess(a) => preprocess(a),
        Command::BuildGraph(a) => build_graph(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Predict(a) => predict(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_user_error() { 2 } else { 1 })
        }
    }
}
