//! Command-line entry points. Every flag can also be set through a
//! `CQR_*` environment variable.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use cqr_core::corpus::{
    build_bm25_index, ingest_questions, read_queries, split_dataset, write_queries, write_questions, Bm25Config,
    Bm25Index, Corpus, QueryRecord,
};
use cqr_core::embedding::{encode_corpus, hash_embed, load_embeddings, EmbeddingSource, HashEmbedderConfig, Space};
use cqr_core::engine::{Engine, EngineConfig, Policy};
use cqr_core::gate::{mean_pair_scores, train_noise_gate, GateConfig, NegativeScoring, NoiseGateModel, DEFAULT_ALPHA};
use cqr_core::jsonl;
use cqr_core::sim::{run_experiment_detailed, ExperimentConfig, SimulatorConfig};
use cqr_core::toy::{self, ToyConfig};
use cqr_core::trainer::{train_offline_logged, TrainConfig, TrainedModel, WeightShape};
use serde_json::json;
use tracing::info;

use crate::service::{router, AppState, ServiceConfig};

#[derive(Debug, Parser)]
#[command(
    name = "cqr",
    version,
    about = "Conversational question retrieval with tag-based clarifying questions"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a question corpus and attach BM25 candidates to queries.
    Ingest(IngestArgs),
    /// Write the bundled synthetic corpus and query split.
    Toy(ToyArgs),
    /// Encode questions, tags and queries with the hashing embedder.
    Embed(EmbedArgs),
    /// Offline training of the embeddings and fusion weights.
    Train(TrainArgs),
    /// Fit the noise gate on a trained model.
    TrainGate(TrainGateArgs),
    /// Run simulated conversations and write a metric report.
    Evaluate(EvaluateArgs),
    /// Like `evaluate`, but also writes every session transcript.
    Simulate(SimulateArgs),
    /// Serve live clarifying-question sessions over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long, env = "CQR_QUESTIONS")]
    pub questions: PathBuf,
    /// Cleaned corpus (untagged questions dropped).
    #[arg(long, env = "CQR_OUT")]
    pub out: PathBuf,
    /// Queries to validate; missing candidate lists are filled from BM25.
    #[arg(long, env = "CQR_QUERIES", requires = "queries_out")]
    pub queries: Option<PathBuf>,
    #[arg(long, env = "CQR_QUERIES_OUT")]
    pub queries_out: Option<PathBuf>,
    /// Also split the queries into train and test files.
    #[arg(long, env = "CQR_TRAIN_OUT", requires_all = ["queries", "test_out"])]
    pub train_out: Option<PathBuf>,
    #[arg(long, env = "CQR_TEST_OUT", requires = "train_out")]
    pub test_out: Option<PathBuf>,
    #[arg(long, env = "CQR_TRAIN_FRACTION", default_value_t = 0.7)]
    pub train_fraction: f64,
    #[arg(long, env = "CQR_SPLIT_SEED", default_value_t = 0)]
    pub split_seed: u64,
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    /// Directory for questions.jsonl, queries.jsonl, train.jsonl, test.jsonl.
    #[arg(long, env = "CQR_OUT_DIR")]
    pub out_dir: PathBuf,
    #[arg(long, env = "CQR_SEED", default_value_t = ToyConfig::default().seed)]
    pub seed: u64,
    #[arg(long, env = "CQR_TOY_QUERIES", default_value_t = ToyConfig::default().queries)]
    pub queries: usize,
    #[arg(long, env = "CQR_TRAIN_FRACTION", default_value_t = 0.7)]
    pub train_fraction: f64,
    #[arg(long, env = "CQR_SPLIT_SEED", default_value_t = 1)]
    pub split_seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct EmbedderArgs {
    #[arg(long, env = "CQR_DIM", default_value_t = HashEmbedderConfig::default().dim)]
    pub dim: usize,
    #[arg(long, env = "CQR_EMBED_SEED", default_value_t = 0)]
    pub embed_seed: u64,
    #[arg(long, env = "CQR_NGRAM", default_value_t = 1)]
    pub ngram: usize,
}

impl EmbedderArgs {
    fn config(&self) -> HashEmbedderConfig {
        HashEmbedderConfig {
            dim: self.dim,
            seed: self.embed_seed,
            ngram: self.ngram,
        }
    }
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long, env = "CQR_QUESTIONS")]
    pub questions: PathBuf,
    /// Query files to encode; repeat the flag for several.
    #[arg(long, env = "CQR_QUERIES", value_delimiter = ',')]
    pub queries: Vec<PathBuf>,
    #[arg(long, env = "CQR_OUT")]
    pub out: PathBuf,
    #[command(flatten)]
    pub embedder: EmbedderArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ShapeArg {
    Scalar,
    Diagonal,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, env = "CQR_QUESTIONS")]
    pub questions: PathBuf,
    /// Training queries.
    #[arg(long, env = "CQR_QUERIES")]
    pub queries: PathBuf,
    /// Precomputed embeddings from `cqr embed`; hashed on the fly when absent.
    #[arg(long, env = "CQR_EMBEDDINGS")]
    pub embeddings: Option<PathBuf>,
    #[arg(long, env = "CQR_OUT")]
    pub out: PathBuf,
    #[command(flatten)]
    pub embedder: EmbedderArgs,
    #[arg(long, env = "CQR_EPOCHS", default_value_t = TrainConfig::default().epochs)]
    pub epochs: usize,
    #[arg(long = "lr", env = "CQR_LR", default_value_t = TrainConfig::default().learning_rate)]
    pub learning_rate: f64,
    #[arg(long, env = "CQR_NEGATIVES_QQ", default_value_t = TrainConfig::default().negatives_qq)]
    pub negatives_qq: usize,
    #[arg(long, env = "CQR_NEGATIVES_TQ", default_value_t = TrainConfig::default().negatives_tq)]
    pub negatives_tq: usize,
    #[arg(long, env = "CQR_BATCH_SIZE", default_value_t = TrainConfig::default().batch_size)]
    pub batch_size: usize,
    #[arg(long, env = "CQR_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "CQR_ROUNDS_PER_EXAMPLE", default_value_t = 1)]
    pub rounds_per_example: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    #[arg(long, env = "CQR_CLIP_NORM", default_value_t = 5.0)]
    pub clip_norm: f64,
    #[arg(long, env = "CQR_WEIGHT_SHAPE", value_enum, default_value_t = ShapeArg::Scalar)]
    pub weight_shape: ShapeArg,
    #[arg(long, env = "CQR_FREEZE_EMBEDDINGS")]
    pub freeze_embeddings: bool,
    #[arg(long, env = "CQR_DISABLE_QQ")]
    pub disable_qq: bool,
    #[arg(long, env = "CQR_DISABLE_TQ")]
    pub disable_tq: bool,
    #[arg(long, env = "CQR_DISABLE_ALS")]
    pub disable_als: bool,
}

#[derive(Debug, Args)]
pub struct TrainGateArgs {
    #[arg(long, env = "CQR_MODEL")]
    pub model: PathBuf,
    /// Defaults to the corpus recorded in the model checkpoint.
    #[arg(long, env = "CQR_QUESTIONS")]
    pub questions: Option<PathBuf>,
    /// Training queries, used with --include-queries.
    #[arg(long, env = "CQR_QUERIES")]
    pub queries: Option<PathBuf>,
    #[arg(long, env = "CQR_OUT")]
    pub out: PathBuf,
    #[arg(long, env = "CQR_EPOCHS", default_value_t = GateConfig::default().epochs)]
    pub epochs: usize,
    #[arg(long = "lr", env = "CQR_LR", default_value_t = GateConfig::default().learning_rate)]
    pub learning_rate: f64,
    #[arg(long, env = "CQR_HIDDEN")]
    pub hidden: Option<usize>,
    #[arg(long, env = "CQR_NEGATIVES", default_value_t = GateConfig::default().negatives)]
    pub negatives: usize,
    #[arg(long, env = "CQR_BATCH_SIZE", default_value_t = GateConfig::default().batch_size)]
    pub batch_size: usize,
    #[arg(long, env = "CQR_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "CQR_ALPHA", default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, env = "CQR_INCLUDE_QUERIES", requires = "queries")]
    pub include_queries: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PolicyArg {
    Gbs,
    Random,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScoringArg {
    Complement,
    SignedTag,
}

impl From<ScoringArg> for NegativeScoring {
    fn from(s: ScoringArg) -> Self {
        match s {
            ScoringArg::Complement => NegativeScoring::Complement,
            ScoringArg::SignedTag => NegativeScoring::SignedTag,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, env = "CQR_MODEL")]
    pub model: PathBuf,
    /// Without a gate every answer is accepted.
    #[arg(long, env = "CQR_GATE")]
    pub gate: Option<PathBuf>,
    /// Defaults to the corpus recorded in the model checkpoint.
    #[arg(long, env = "CQR_QUESTIONS")]
    pub questions: Option<PathBuf>,
    /// Test queries.
    #[arg(long, env = "CQR_QUERIES")]
    pub queries: PathBuf,
    #[arg(long, env = "CQR_ROUNDS", default_value_t = 5)]
    pub rounds: usize,
    #[arg(long, env = "CQR_NOISE", default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, env = "CQR_POLICY", value_enum, default_value_t = PolicyArg::Gbs)]
    pub policy: PolicyArg,
    #[arg(long, env = "CQR_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Gate threshold; defaults to the value stored in the gate.
    #[arg(long, env = "CQR_ALPHA")]
    pub alpha: Option<f64>,
    #[arg(long, env = "CQR_NEGATIVE_SCORING", value_enum, default_value_t = ScoringArg::Complement)]
    pub negative_scoring: ScoringArg,
    /// Ignore "yes" answers.
    #[arg(long, env = "CQR_NO_POSITIVE")]
    pub no_positive: bool,
    /// Ignore "no" answers.
    #[arg(long, env = "CQR_NO_NEGATIVE")]
    pub no_negative: bool,
    /// JSON report path.
    #[arg(long, env = "CQR_OUT")]
    pub out: PathBuf,
    /// Optional per-round CSV table.
    #[arg(long, env = "CQR_CSV")]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub eval: EvaluateArgs,
    /// Per-query transcripts, one JSON object per line.
    #[arg(long, env = "CQR_TRANSCRIPTS")]
    pub transcripts: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "CQR_HOST", default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, env = "CQR_PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, env = "CQR_MODEL")]
    pub model: PathBuf,
    #[arg(long, env = "CQR_GATE")]
    pub gate: Option<PathBuf>,
    /// Defaults to the corpus recorded in the model checkpoint.
    #[arg(long, env = "CQR_CORPUS")]
    pub corpus: Option<PathBuf>,
    /// Known queries that sessions may reference by id.
    #[arg(long, env = "CQR_QUERIES")]
    pub queries: Option<PathBuf>,
    #[arg(long, env = "CQR_ALPHA")]
    pub alpha: Option<f64>,
    #[arg(long, env = "CQR_MAX_ROUNDS", default_value_t = crate::service::DEFAULT_MAX_ROUNDS)]
    pub max_rounds: usize,
    #[arg(long, env = "CQR_IDLE_TIMEOUT_SECS", default_value_t = 1800)]
    pub idle_timeout_secs: u64,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Toy(a) => write_toy(a),
        Command::Embed(a) => embed(a),
        Command::Train(a) => train(a),
        Command::TrainGate(a) => train_gate(a),
        Command::Evaluate(a) => evaluate(a, None),
        Command::Simulate(a) => evaluate(a.eval, Some(a.transcripts)),
        Command::Serve(a) => serve(a),
    }
}

fn load_corpus(path: &Path) -> Result<Corpus> {
    let (corpus, stats) = ingest_questions(path)?;
    info!(
        path = %path.display(),
        loaded = stats.loaded,
        skipped_untagged = stats.skipped_untagged,
        "corpus loaded"
    );
    Ok(corpus)
}

fn index(corpus: &Corpus) -> Result<Bm25Index> {
    Ok(build_bm25_index(corpus, &Bm25Config::default())?)
}

fn ingest(a: IngestArgs) -> Result<()> {
    let (corpus, stats) = ingest_questions(&a.questions)?;
    write_questions(&a.out, &corpus)?;
    println!(
        "{} questions kept, {} untagged skipped, {} tags",
        stats.loaded,
        stats.skipped_untagged,
        corpus.tags().len()
    );
    if let (Some(path), Some(out)) = (&a.queries, &a.queries_out) {
        let queries = read_queries(path, &corpus, Some(&index(&corpus)?))?;
        write_queries(out, &queries)?;
        println!("{} queries written to {}", queries.len(), out.display());
        if let (Some(train_out), Some(test_out)) = (&a.train_out, &a.test_out) {
            let (train, test) = split_dataset(&queries, a.train_fraction, a.split_seed)?;
            write_queries(train_out, &train)?;
            write_queries(test_out, &test)?;
            println!("split: {} train, {} test", train.len(), test.len());
        }
    }
    Ok(())
}

fn write_toy(a: ToyArgs) -> Result<()> {
    let data = toy::generate(&ToyConfig {
        seed: a.seed,
        queries: a.queries,
        ..ToyConfig::default()
    })?;
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let (train, test) = split_dataset(&data.queries, a.train_fraction, a.split_seed)?;
    write_questions(&a.out_dir.join("questions.jsonl"), &data.corpus)?;
    write_queries(&a.out_dir.join("queries.jsonl"), &data.queries)?;
    write_queries(&a.out_dir.join("train.jsonl"), &train)?;
    write_queries(&a.out_dir.join("test.jsonl"), &test)?;
    println!(
        "{} questions, {} tags, {} queries ({} train, {} test) in {}",
        data.corpus.len(),
        data.corpus.tags().len(),
        data.queries.len(),
        train.len(),
        test.len(),
        a.out_dir.display()
    );
    Ok(())
}

/// Where `embed` records the hashing configuration next to its output.
pub fn embedder_sidecar(embeddings: &Path) -> PathBuf {
    let mut name = embeddings.as_os_str().to_owned();
    name.push(".embedder.json");
    PathBuf::from(name)
}

fn embed(a: EmbedArgs) -> Result<()> {
    let corpus = load_corpus(&a.questions)?;
    let index = index(&corpus)?;
    let mut queries = Vec::new();
    for path in &a.queries {
        queries.extend(read_queries(path, &corpus, Some(&index))?);
    }
    let config = a.embedder.config();
    let table = encode_corpus(&corpus, &queries, &EmbeddingSource::Hash(config))?;
    table.save(&a.out)?;
    jsonl::write_json(&embedder_sidecar(&a.out), &config)?;
    println!(
        "{} vectors of dimension {} written to {}",
        table.len(),
        table.dim(),
        a.out.display()
    );
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let corpus = load_corpus(&a.questions)?;
    let queries = read_queries(&a.queries, &corpus, Some(&index(&corpus)?))?;
    let (table, embedder) = match &a.embeddings {
        Some(path) => {
            let sidecar = embedder_sidecar(path);
            let embedder: Option<HashEmbedderConfig> = if sidecar.exists() {
                Some(jsonl::read_json(&sidecar)?)
            } else {
                None
            };
            let dim = embedder.map_or(a.embedder.dim, |e| e.dim);
            let stored = load_embeddings(path, dim)?;
            let mut table = encode_corpus(&corpus, &queries, &EmbeddingSource::Table(&stored))?;
            // keep vectors of held-out queries so evaluation can use them
            for row in stored.rows().filter(|r| r.space == Space::Query) {
                if table.get(Space::Query, &row.id).is_none() {
                    let mut v = row.vector;
                    cqr_core::vector::normalize(&mut v);
                    table.insert(Space::Query, row.id, v)?;
                }
            }
            (table, embedder)
        }
        None => {
            let config = a.embedder.config();
            (
                encode_corpus(&corpus, &queries, &EmbeddingSource::Hash(config))?,
                Some(config),
            )
        }
    };
    let config = TrainConfig {
        epochs: a.epochs,
        learning_rate: a.learning_rate,
        negatives_qq: a.negatives_qq,
        negatives_tq: a.negatives_tq,
        batch_size: a.batch_size,
        seed: a.seed,
        rounds_per_example: a.rounds_per_example,
        clip_norm: (a.clip_norm > 0.0).then_some(a.clip_norm),
        weight_shape: match a.weight_shape {
            ShapeArg::Scalar => WeightShape::Scalar,
            ShapeArg::Diagonal => WeightShape::Diagonal,
        },
        freeze_embeddings: a.freeze_embeddings,
        disable_qq: a.disable_qq,
        disable_tq: a.disable_tq,
        disable_als: a.disable_als,
    };
    let (mut model, history) = train_offline_logged(&corpus, &queries, table, &config)?;
    model.embedder = embedder;
    for h in &history {
        println!(
            "epoch {:>3} {:?} lr {:.4} L_QQ {} L_TQ {}",
            h.epoch,
            h.stage,
            h.learning_rate,
            fmt_loss(h.loss_qq),
            fmt_loss(h.loss_tq)
        );
    }
    model.save(&a.out, a.questions.to_str())?;
    println!("model written to {}", a.out.display());
    Ok(())
}

fn fmt_loss(l: Option<f64>) -> String {
    l.map_or_else(|| "-".into(), |l| format!("{l:.5}"))
}

fn load_model(path: &Path, questions: Option<&Path>) -> Result<(TrainedModel, Corpus)> {
    let (model, recorded) = TrainedModel::load(path)?;
    let corpus_path = match (questions, recorded) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(p)) => PathBuf::from(p),
        (None, None) => bail!("{} records no corpus; pass --questions", path.display()),
    };
    Ok((model, load_corpus(&corpus_path)?))
}

/// Adds hashed vectors for queries the model never saw in training.
pub fn ensure_query_vectors(model: &mut TrainedModel, queries: &[QueryRecord]) -> Result<()> {
    let missing: Vec<&QueryRecord> = queries
        .iter()
        .filter(|q| model.table.get(Space::Query, &q.id).is_none())
        .collect();
    if missing.is_empty() {
        return Ok(());
    }
    let Some(embedder) = model.embedder else {
        bail!(
            "model has no vector for query `{}` and no embedder to encode it",
            missing[0].id
        );
    };
    for q in missing {
        model
            .table
            .insert(Space::Query, q.id.clone(), hash_embed(&q.text, &embedder)?)?;
    }
    Ok(())
}

fn train_gate(a: TrainGateArgs) -> Result<()> {
    let (model, corpus) = load_model(&a.model, a.questions.as_deref())?;
    let queries = match &a.queries {
        Some(p) => read_queries(p, &corpus, Some(&index(&corpus)?))?,
        None => Vec::new(),
    };
    let config = GateConfig {
        hidden: a.hidden,
        epochs: a.epochs,
        learning_rate: a.learning_rate,
        negatives: a.negatives,
        batch_size: a.batch_size,
        seed: a.seed,
        alpha: a.alpha,
        include_queries: a.include_queries,
        ..GateConfig::default()
    };
    let gate = train_noise_gate(&model, &corpus, &queries, &config)?;
    let (pos, neg) = mean_pair_scores(&gate, &model, &corpus)?;
    println!("mean gate score: own tags {pos:.4}, other tags {neg:.4}");
    gate.save(&a.out)?;
    println!("gate written to {}", a.out.display());
    Ok(())
}

fn evaluate(a: EvaluateArgs, transcripts: Option<PathBuf>) -> Result<()> {
    let (mut model, corpus) = load_model(&a.model, a.questions.as_deref())?;
    let queries = read_queries(&a.queries, &corpus, Some(&index(&corpus)?))?;
    ensure_query_vectors(&mut model, &queries)?;
    let gate = a.gate.as_deref().map(NoiseGateModel::load).transpose()?;
    let alpha = a.alpha.or(gate.as_ref().map(|g| g.alpha)).unwrap_or(DEFAULT_ALPHA);
    let config = ExperimentConfig {
        rounds: a.rounds,
        simulator: SimulatorConfig {
            noise_rate: a.noise,
            seed: a.seed,
        },
        policy: match a.policy {
            PolicyArg::Gbs => Policy::Gbs,
            PolicyArg::Random => Policy::Random,
        },
        engine: EngineConfig {
            alpha,
            use_gate: gate.is_some(),
            negative_scoring: a.negative_scoring.into(),
            use_positive: !a.no_positive,
            use_negative: !a.no_negative,
        },
    };
    let (report, outcomes) =
        run_experiment_detailed(Arc::new(model), gate.map(Arc::new), Arc::new(corpus), &queries, &config)?;
    jsonl::write_json(&a.out, &report)?;
    if let Some(csv) = &a.csv {
        std::fs::write(csv, report.to_csv()).with_context(|| format!("writing {}", csv.display()))?;
    }
    print!("{}", report.to_csv());
    if let Some(path) = transcripts {
        let rows: Vec<_> = outcomes
            .iter()
            .map(|o| {
                json!({
                    "query_id": o.query_id,
                    "rankings": o.conversation.rankings.iter().map(|r| r.ids()).collect::<Vec<_>>(),
                    "transcript": o.conversation.transcript,
                })
            })
            .collect();
        jsonl::write(&path, &rows)?;
        println!("{} transcripts written to {}", rows.len(), path.display());
    }
    println!("report written to {}", a.out.display());
    Ok(())
}

/// Loads everything `serve` needs; split out so tests can build the router.
pub fn service_state(
    model: &Path,
    gate: Option<&Path>,
    corpus: Option<&Path>,
    queries: Option<&Path>,
    alpha: Option<f64>,
    config: ServiceConfig,
) -> Result<AppState> {
    let (mut model, corpus) = load_model(model, corpus)?;
    let index = index(&corpus)?;
    let queries = match queries {
        Some(p) => read_queries(p, &corpus, Some(&index))?,
        None => Vec::new(),
    };
    ensure_query_vectors(&mut model, &queries)?;
    let gate = gate.map(NoiseGateModel::load).transpose()?;
    let alpha = alpha.or(gate.as_ref().map(|g| g.alpha)).unwrap_or(DEFAULT_ALPHA);
    let engine = Engine::new(
        Arc::new(model),
        gate.map(Arc::new),
        Arc::new(corpus),
        EngineConfig {
            alpha,
            use_gate: true,
            ..EngineConfig::default()
        },
    )?;
    Ok(AppState::new(engine, queries, Some(Arc::new(index)), config))
}

fn serve(a: ServeArgs) -> Result<()> {
    let state = service_state(
        &a.model,
        a.gate.as_deref(),
        a.corpus.as_deref(),
        a.queries.as_deref(),
        a.alpha,
        ServiceConfig {
            max_rounds: a.max_rounds,
            idle_timeout: std::time::Duration::from_secs(a.idle_timeout_secs),
        },
    )?;
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .with_context(|| format!("invalid listen address {}:{}", a.host, a.port))?;
    let runtime = tokio::runtime::Runtime::new().context("starting async runtime")?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        println!("listening on http://{addr}");
        axum::serve(listener, router(Arc::new(state)))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .context("server error")
    })
}
