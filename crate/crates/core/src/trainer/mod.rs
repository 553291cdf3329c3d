//! Two-stage offline training.
//!
//! Stage one pulls mixture queries (query plus a simulated, signed tag
//! answer) towards their target question; stage two pulls adjusted questions
//! towards their platform tags. Without the `disable_als` flag the stages
//! alternate epoch by epoch and each only updates the parameters it owns.

mod loss;
mod optim;
mod weights;

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, QueryRecord, QuestionRecord, TagVocabulary};
use crate::embedding::{EmbeddingRow, EmbeddingTable, Feedback, HashEmbedderConfig, Space};
use crate::error::{Error, Result};
use crate::jsonl;

pub use loss::{adjusted_question, loss_qq, loss_tq, mixture_query, Gradients, QqExample, TqExample};
pub use optim::{apply_mask, clip_gradients, grad_norm, lr_schedule, sgd_step, ParamMask};
pub use weights::{FusionWeight, TrainableWeights, WeightShape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Negative questions per mixture query.
    pub negatives_qq: usize,
    /// Negative tags per question.
    pub negatives_tq: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Simulated clarifying rounds per training query per epoch.
    pub rounds_per_example: usize,
    /// Global gradient-norm cap per step; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub weight_shape: WeightShape,
    pub freeze_embeddings: bool,
    pub disable_qq: bool,
    pub disable_tq: bool,
    pub disable_als: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            learning_rate: 0.1,
            negatives_qq: 5,
            negatives_tq: 5,
            batch_size: 32,
            seed: 0,
            rounds_per_example: 1,
            clip_norm: Some(5.0),
            weight_shape: WeightShape::Scalar,
            freeze_embeddings: false,
            disable_qq: false,
            disable_tq: false,
            disable_als: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.negatives_qq == 0 || self.negatives_tq == 0 {
            return Err(Error::InvalidArgument("negative sample counts must be ≥ 1".into()));
        }
        if self.batch_size == 0 || self.rounds_per_example == 0 {
            return Err(Error::InvalidArgument(
                "batch size and rounds per example must be ≥ 1".into(),
            ));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::InvalidArgument("learning rate must be finite and ≥ 0".into()));
        }
        Ok(())
    }
}

/// Embeddings plus fusion weights, immutable once training is done.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub table: EmbeddingTable,
    pub weights: TrainableWeights,
    pub config: TrainConfig,
    /// Embedder used for the initial vectors, needed to encode unseen query text.
    pub embedder: Option<HashEmbedderConfig>,
}

impl TrainedModel {
    pub fn initial(table: EmbeddingTable, config: TrainConfig) -> Self {
        let weights = TrainableWeights::init(config.weight_shape, table.dim());
        TrainedModel {
            table,
            weights,
            config,
            embedder: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.table.dim()
    }

    pub fn save(&self, path: &Path, corpus_path: Option<&str>) -> Result<()> {
        let checkpoint = ModelCheckpoint {
            dim: self.dim(),
            weights: self.weights.clone(),
            embeddings: self.table.rows().collect(),
            config: self.config.clone(),
            embedder: self.embedder,
            corpus: corpus_path.map(str::to_string),
        };
        jsonl::write_json(path, &checkpoint)
    }

    /// Loads a checkpoint, returning the model and the corpus path it records.
    pub fn load(path: &Path) -> Result<(Self, Option<String>)> {
        let checkpoint: ModelCheckpoint = jsonl::read_json(path)?;
        let table = EmbeddingTable::from_rows(checkpoint.dim, checkpoint.embeddings)?;
        for w in [
            &checkpoint.weights.w_q,
            &checkpoint.weights.w_t,
            &checkpoint.weights.w_p,
        ] {
            w.check_dim(checkpoint.dim)?;
        }
        Ok((
            TrainedModel {
                table,
                weights: checkpoint.weights,
                config: checkpoint.config,
                embedder: checkpoint.embedder,
            },
            checkpoint.corpus,
        ))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelCheckpoint {
    dim: usize,
    #[serde(flatten)]
    weights: TrainableWeights,
    embeddings: Vec<EmbeddingRow>,
    config: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embedder: Option<HashEmbedderConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    corpus: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    QueryQuestion,
    TagQuestion,
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub stage: Stage,
    pub learning_rate: f64,
    pub loss_qq: Option<f64>,
    pub loss_tq: Option<f64>,
}

/// Draws the tag of one simulated clarifying round for a fixed answer:
/// one of the positive question's tags for `Positive`, a uniformly drawn
/// tag it does not carry for `Negative`. `None` if no such tag exists.
pub fn sample_round_tag<R: Rng>(
    positive: &QuestionRecord,
    vocab: &TagVocabulary,
    feedback: Feedback,
    rng: &mut R,
) -> Option<String> {
    match feedback {
        Feedback::Positive => positive
            .tags
            .iter()
            .nth(rng.gen_range(0..positive.tags.len().max(1)))
            .cloned(),
        Feedback::Negative => {
            let outside = vocab.len().saturating_sub(positive.tags.len());
            if outside == 0 {
                return None;
            }
            // rejection sampling is uniform over the complement
            loop {
                let tag = vocab.nth(rng.gen_range(0..vocab.len()))?;
                if !positive.tags.contains(tag) {
                    return Some(tag.to_string());
                }
            }
        }
    }
}

/// One simulated clarifying round for a training query whose sampled
/// target is `positive`: a fair coin picks the answer, then a tag consistent
/// with that answer is drawn.
pub fn simulate_training_round<R: Rng>(
    positive: &QuestionRecord,
    vocab: &TagVocabulary,
    rng: &mut R,
) -> Result<(String, Feedback)> {
    if vocab.is_empty() {
        return Err(Error::Empty("tag vocabulary"));
    }
    if positive.tags.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "question `{}` has no tags",
            positive.id
        )));
    }
    let feedback = if rng.gen_bool(0.5) {
        Feedback::Positive
    } else {
        Feedback::Negative
    };
    match sample_round_tag(positive, vocab, feedback, rng) {
        Some(tag) => Ok((tag, feedback)),
        // every vocabulary tag is on the question: only a "yes" is possible
        None => sample_round_tag(positive, vocab, Feedback::Positive, rng)
            .map(|t| (t, Feedback::Positive))
            .ok_or(Error::Empty("tag vocabulary")),
    }
}

/// `k` distinct positions in `0..n` not rejected by `excluded`, or all of
/// them if fewer than `k` remain.
fn sample_excluding<R: Rng>(n: usize, k: usize, excluded: impl Fn(usize) -> bool, rng: &mut R) -> Vec<usize> {
    let allowed = (0..n).filter(|&i| !excluded(i)).count();
    if allowed <= k {
        return (0..n).filter(|&i| !excluded(i)).collect();
    }
    let mut picked = Vec::with_capacity(k);
    while picked.len() < k {
        let i = rng.gen_range(0..n);
        if !excluded(i) && !picked.contains(&i) {
            picked.push(i);
        }
    }
    picked
}

/// Table positions resolved once before training.
struct Plan {
    /// (query row, positive question rows)
    queries: Vec<(usize, Vec<usize>)>,
    /// (question row, tag rows)
    questions: Vec<(usize, Vec<usize>)>,
    skipped_untagged: usize,
}

fn plan(corpus: &Corpus, queries: &[QueryRecord], table: &EmbeddingTable) -> Result<Plan> {
    let mut plan = Plan {
        queries: Vec::with_capacity(queries.len()),
        questions: Vec::with_capacity(corpus.len()),
        skipped_untagged: 0,
    };
    for query in queries {
        let q = table.require_position(Space::Query, &query.id)?;
        let positives = query
            .positives
            .iter()
            .map(|p| table.require_position(Space::Question, p))
            .collect::<Result<Vec<_>>>()?;
        if !positives.is_empty() {
            plan.queries.push((q, positives));
        }
    }
    for question in corpus.questions() {
        let p = table.require_position(Space::Question, &question.id)?;
        if question.tags.is_empty() {
            plan.skipped_untagged += 1;
            continue;
        }
        let tags = question
            .tags
            .iter()
            .map(|t| table.require_position(Space::Tag, t))
            .collect::<Result<Vec<_>>>()?;
        plan.questions.push((p, tags));
    }
    Ok(plan)
}

fn qq_examples<R: Rng>(
    plan: &Plan,
    corpus: &Corpus,
    table: &EmbeddingTable,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<Vec<QqExample>> {
    let n_questions = table.set(Space::Question).len();
    let mut out = Vec::with_capacity(plan.queries.len() * config.rounds_per_example);
    for (query, positives) in &plan.queries {
        let excluded: HashSet<usize> = positives.iter().copied().collect();
        for _ in 0..config.rounds_per_example {
            let positive = positives[rng.gen_range(0..positives.len())];
            let record = corpus.require(&table.set(Space::Question).ids()[positive])?;
            let (tag, feedback) = simulate_training_round(record, corpus.tags(), rng)?;
            let negatives = sample_excluding(n_questions, config.negatives_qq, |i| excluded.contains(&i), rng);
            if negatives.is_empty() {
                continue;
            }
            out.push(QqExample {
                query: *query,
                tag: table.require_position(Space::Tag, &tag)?,
                feedback,
                positive,
                negatives,
            });
        }
    }
    Ok(out)
}

fn tq_examples<R: Rng>(plan: &Plan, table: &EmbeddingTable, config: &TrainConfig, rng: &mut R) -> Vec<TqExample> {
    let n_tags = table.set(Space::Tag).len();
    let mut out = Vec::new();
    for (question, tags) in &plan.questions {
        for &positive_tag in tags {
            let negatives = sample_excluding(n_tags, config.negatives_tq, |i| tags.contains(&i), rng);
            if negatives.is_empty() {
                continue;
            }
            out.push(TqExample {
                question: *question,
                positive_tag,
                negatives,
            });
        }
    }
    out
}

fn stage_mask(stage: Stage, freeze_embeddings: bool) -> ParamMask {
    let mask = match stage {
        Stage::QueryQuestion => ParamMask {
            w_q: true,
            w_t: true,
            w_p: false,
            queries: true,
            questions: false,
            tags: false,
        },
        Stage::TagQuestion => ParamMask {
            w_q: false,
            w_t: false,
            w_p: true,
            queries: false,
            questions: true,
            tags: true,
        },
        Stage::Joint => ParamMask::ALL,
    };
    if freeze_embeddings {
        mask.without_embeddings()
    } else {
        mask
    }
}

fn batches<T>(items: &[T], size: usize) -> impl Iterator<Item = &[T]> {
    items.chunks(size)
}

/// Runs offline training and returns the model with per-epoch losses.
pub fn train_offline_logged(
    corpus: &Corpus,
    queries: &[QueryRecord],
    initial: EmbeddingTable,
    config: &TrainConfig,
) -> Result<(TrainedModel, Vec<EpochStats>)> {
    config.validate()?;
    let mut model = TrainedModel::initial(initial, config.clone());
    let mut history = Vec::new();
    let mut stages = Vec::new();
    if !config.disable_qq {
        stages.push(Stage::QueryQuestion);
    }
    if !config.disable_tq {
        stages.push(Stage::TagQuestion);
    }
    if config.epochs == 0 || stages.is_empty() {
        return Ok((model, history));
    }
    let plan = plan(corpus, queries, &model.table)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    for epoch in 0..config.epochs {
        let lr = lr_schedule(epoch, config.epochs, config.learning_rate)?;
        let stage = if config.disable_als && stages.len() == 2 {
            Stage::Joint
        } else {
            stages[epoch % stages.len()]
        };
        let mask = stage_mask(stage, config.freeze_embeddings);
        let run_qq = matches!(stage, Stage::QueryQuestion | Stage::Joint) && !config.disable_qq;
        let run_tq = matches!(stage, Stage::TagQuestion | Stage::Joint) && !config.disable_tq;

        let mut qq = if run_qq {
            qq_examples(&plan, corpus, &model.table, config, &mut rng)?
        } else {
            Vec::new()
        };
        let mut tq = if run_tq {
            tq_examples(&plan, &model.table, config, &mut rng)
        } else {
            Vec::new()
        };
        qq.shuffle(&mut rng);
        tq.shuffle(&mut rng);

        let qq_batches: Vec<&[QqExample]> = batches(&qq, config.batch_size).collect();
        let tq_batches: Vec<&[TqExample]> = batches(&tq, config.batch_size).collect();
        let steps = qq_batches.len().max(tq_batches.len());
        let (mut sum_qq, mut sum_tq) = (0.0, 0.0);
        for step in 0..steps {
            let mut grads = Gradients::zeros(&model.weights);
            if let Some(batch) = qq_batches.get(step) {
                let (l, g) = loss_qq(&model.table, &model.weights, batch)?;
                sum_qq += l;
                grads.merge(g);
            }
            if let Some(batch) = tq_batches.get(step) {
                let (l, g) = loss_tq(&model.table, &model.weights, batch)?;
                sum_tq += l;
                grads.merge(g);
            }
            apply_mask(&mut grads, mask);
            if let Some(max) = config.clip_norm {
                clip_gradients(&mut grads, max);
            }
            sgd_step(&mut model.table, &mut model.weights, &grads, lr)?;
        }
        history.push(EpochStats {
            epoch,
            stage,
            learning_rate: lr,
            loss_qq: (!qq_batches.is_empty()).then(|| sum_qq / qq_batches.len() as f64),
            loss_tq: (!tq_batches.is_empty()).then(|| sum_tq / tq_batches.len() as f64),
        });
    }
    Ok((model, history))
}

pub fn train_offline(
    corpus: &Corpus,
    queries: &[QueryRecord],
    initial: EmbeddingTable,
    config: &TrainConfig,
) -> Result<TrainedModel> {
    train_offline_logged(corpus, queries, initial, config).map(|(model, _)| model)
}
