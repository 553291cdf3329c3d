//! Noise-tolerance gate: a two-layer scorer over `[left; tag]` that decides
//! whether a user's answer is trusted enough to enter the query.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, QueryRecord};
use crate::embedding::{signed_tag, Feedback, Space};
use crate::error::{Error, Result};
use crate::jsonl;
use crate::trainer::{lr_schedule, TrainedModel};
use crate::vector::{dot, log_sigmoid, sigmoid};

/// Default acceptance threshold.
pub const DEFAULT_ALPHA: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    /// No nonlinearity: the two layers collapse to one affine map.
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseGateModel {
    pub dim: usize,
    pub hidden: usize,
    /// `hidden × 2·dim`
    #[serde(rename = "W1")]
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub activation: Activation,
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

impl NoiseGateModel {
    pub fn zeros(dim: usize, hidden: usize) -> Self {
        NoiseGateModel {
            dim,
            hidden,
            w1: vec![vec![0.0; 2 * dim]; hidden],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
            alpha: DEFAULT_ALPHA,
            activation: Activation::Relu,
        }
    }

    /// Xavier-uniform first layer, small uniform second layer, zero biases.
    pub fn random<R: Rng>(dim: usize, hidden: usize, activation: Activation, rng: &mut R) -> Self {
        let mut m = NoiseGateModel::zeros(dim, hidden);
        m.activation = activation;
        let a1 = (6.0 / (2 * dim + hidden) as f64).sqrt();
        for row in &mut m.w1 {
            row.iter_mut().for_each(|w| *w = rng.gen_range(-a1..a1));
        }
        let a2 = (6.0 / (hidden + 1) as f64).sqrt();
        m.w2.iter_mut().for_each(|w| *w = rng.gen_range(-a2..a2));
        m
    }

    pub fn validate(&self) -> Result<()> {
        let shape_ok = self.w1.len() == self.hidden
            && self.w1.iter().all(|r| r.len() == 2 * self.dim)
            && self.b1.len() == self.hidden
            && self.w2.len() == self.hidden;
        if !shape_ok {
            return Err(Error::InvalidArgument(format!(
                "gate parameters do not match dim {} / hidden {}",
                self.dim, self.hidden
            )));
        }
        Ok(())
    }

    fn pre_activations(&self, left: &[f64], tag: &[f64]) -> Vec<f64> {
        self.w1
            .iter()
            .zip(&self.b1)
            .map(|(row, b)| dot(&row[..self.dim], left) + dot(&row[self.dim..], tag) + b)
            .collect()
    }

    fn logit(&self, left: &[f64], tag: &[f64]) -> (Vec<f64>, f64) {
        let z1 = self.pre_activations(left, tag);
        let out = z1
            .iter()
            .zip(&self.w2)
            .map(|(z, w)| w * self.activation.apply(*z))
            .sum::<f64>()
            + self.b2;
        (z1, out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        jsonl::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let model: NoiseGateModel = jsonl::read_json(path)?;
        model.validate()?;
        Ok(model)
    }
}

fn check_dims(model: &NoiseGateModel, left: &[f64], tag: &[f64]) -> Result<()> {
    for v in [left, tag] {
        if v.len() != model.dim {
            return Err(Error::Dimension {
                expected: model.dim,
                actual: v.len(),
            });
        }
    }
    Ok(())
}

/// `σ(w2ᵀ·act(W1·[left; tag] + b1) + b2)`
pub fn gate_score(model: &NoiseGateModel, left: &[f64], tag: &[f64]) -> Result<f64> {
    check_dims(model, left, tag)?;
    Ok(sigmoid(model.logit(left, tag).1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    AskAnother,
    /// Feedback of a kind the engine is configured to drop.
    Ignored,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Accept => "accept",
            Verdict::AskAnother => "ask_another",
            Verdict::Ignored => "ignored",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateDecision {
    pub verdict: Verdict,
    pub score: f64,
    /// The signed tag vector entering the query, present iff accepted.
    pub accepted: Option<Vec<f64>>,
}

/// How a "no" answer is scored.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeScoring {
    /// Score the negated tag: `Θ([Q; −t])`. The gate never sees negated
    /// tags in training, so a well-fit gate rejects almost every "no".
    SignedTag,
    /// Score the plain tag and trust a "no" by `1 − Θ([Q; t])`.
    #[default]
    Complement,
}

/// Accepts the answer when its confidence strictly exceeds `alpha`.
pub fn gate_feedback(
    model: &NoiseGateModel,
    query: &[f64],
    tag_pos: &[f64],
    feedback: Feedback,
    alpha: f64,
    scoring: NegativeScoring,
) -> Result<GateDecision> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
    }
    let signed = signed_tag(tag_pos, feedback);
    let score = match (feedback, scoring) {
        (Feedback::Negative, NegativeScoring::Complement) => 1.0 - gate_score(model, query, tag_pos)?,
        _ => gate_score(model, query, &signed)?,
    };
    Ok(if score > alpha {
        GateDecision {
            verdict: Verdict::Accept,
            score,
            accepted: Some(signed),
        }
    } else {
        GateDecision {
            verdict: Verdict::AskAnother,
            score,
            accepted: None,
        }
    })
}

/// One anchor of the gate loss: its positive tag and sampled negative tags.
#[derive(Debug, Clone)]
pub struct GateSample<'a> {
    pub left: &'a [f64],
    pub positive: &'a [f64],
    pub negatives: Vec<&'a [f64]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateGradients {
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl GateGradients {
    fn zeros(model: &NoiseGateModel) -> Self {
        GateGradients {
            w1: vec![vec![0.0; 2 * model.dim]; model.hidden],
            b1: vec![0.0; model.hidden],
            w2: vec![0.0; model.hidden],
            b2: 0.0,
        }
    }

    fn is_finite(&self) -> bool {
        self.b2.is_finite()
            && self.b1.iter().chain(&self.w2).all(|v| v.is_finite())
            && self.w1.iter().flatten().all(|v| v.is_finite())
    }
}

/// Backpropagates `weight · BCE(label)` for one input pair; returns its loss.
fn accumulate_pair(
    model: &NoiseGateModel,
    left: &[f64],
    tag: &[f64],
    label: bool,
    weight: f64,
    grads: &mut GateGradients,
) -> f64 {
    let (z1, logit) = model.logit(left, tag);
    let (loss, delta_out) = if label {
        (-log_sigmoid(logit), sigmoid(logit) - 1.0)
    } else {
        (-log_sigmoid(-logit), sigmoid(logit))
    };
    let delta_out = weight * delta_out;
    grads.b2 += delta_out;
    #[allow(clippy::needless_range_loop)] // walks five parallel arrays
    for j in 0..model.hidden {
        grads.w2[j] += delta_out * model.activation.apply(z1[j]);
        let delta_h = delta_out * model.w2[j] * model.activation.derivative(z1[j]);
        if delta_h == 0.0 {
            continue;
        }
        grads.b1[j] += delta_h;
        let row = &mut grads.w1[j];
        for (g, x) in row.iter_mut().zip(left.iter().chain(tag)) {
            *g += delta_h * x;
        }
    }
    weight * loss
}

/// Binary cross-entropy over anchors: positives weigh 1, each negative
/// `1/|negatives|`, averaged over anchors.
pub fn loss_nr(model: &NoiseGateModel, samples: &[GateSample<'_>]) -> Result<(f64, GateGradients)> {
    if samples.is_empty() {
        return Err(Error::Empty("gate batch"));
    }
    let scale = 1.0 / samples.len() as f64;
    let mut grads = GateGradients::zeros(model);
    let mut total = 0.0;
    for s in samples {
        check_dims(model, s.left, s.positive)?;
        total += accumulate_pair(model, s.left, s.positive, true, scale, &mut grads);
        let w = scale / s.negatives.len().max(1) as f64;
        for n in &s.negatives {
            check_dims(model, s.left, n)?;
            total += accumulate_pair(model, s.left, n, false, w, &mut grads);
        }
    }
    Ok((total, grads))
}

fn gate_step(model: &mut NoiseGateModel, grads: &GateGradients, lr: f64) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::NonFinite("gate parameters".into()));
    }
    for (row, g) in model.w1.iter_mut().zip(&grads.w1) {
        row.iter_mut().zip(g).for_each(|(w, g)| *w -= lr * g);
    }
    model.b1.iter_mut().zip(&grads.b1).for_each(|(w, g)| *w -= lr * g);
    model.w2.iter_mut().zip(&grads.w2).for_each(|(w, g)| *w -= lr * g);
    model.b2 -= lr * grads.b2;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GateConfig {
    /// Hidden width; `None` means the embedding dimension.
    pub hidden: Option<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub learning_rate: f64,
    pub negatives: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub alpha: f64,
    /// Also train on (training query, tags of its positives) pairs.
    pub include_queries: bool,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig {
            hidden: None,
            activation: Activation::Relu,
            epochs: 100,
            learning_rate: 0.5,
            negatives: 5,
            batch_size: 32,
            seed: 0,
            alpha: DEFAULT_ALPHA,
            include_queries: false,
        }
    }
}

/// (anchor space, anchor row, positive tag rows)
type Anchor = (Space, usize, Vec<usize>);

fn gate_anchors(
    model: &TrainedModel,
    corpus: &Corpus,
    queries: &[QueryRecord],
    include_queries: bool,
) -> Result<Vec<Anchor>> {
    let table = &model.table;
    let tag_rows = |tags: &mut dyn Iterator<Item = &String>| -> Result<Vec<usize>> {
        let mut rows: Vec<usize> = tags
            .map(|t| table.require_position(Space::Tag, t))
            .collect::<Result<_>>()?;
        rows.sort_unstable();
        rows.dedup();
        Ok(rows)
    };
    let mut anchors = Vec::new();
    for q in corpus.questions() {
        let rows = tag_rows(&mut q.tags.iter())?;
        anchors.push((Space::Question, table.require_position(Space::Question, &q.id)?, rows));
    }
    if include_queries {
        for query in queries {
            let mut tags = Vec::new();
            for p in &query.positives {
                tags.extend(corpus.require(p)?.tags.iter());
            }
            let rows = tag_rows(&mut tags.into_iter())?;
            anchors.push((Space::Query, table.require_position(Space::Query, &query.id)?, rows));
        }
    }
    Ok(anchors)
}

/// Fits the gate on fixed embeddings; `model` is only read.
pub fn train_noise_gate(
    model: &TrainedModel,
    corpus: &Corpus,
    queries: &[QueryRecord],
    config: &GateConfig,
) -> Result<NoiseGateModel> {
    if corpus.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    if config.negatives == 0 || config.batch_size == 0 {
        return Err(Error::InvalidArgument(
            "gate negatives and batch size must be ≥ 1".into(),
        ));
    }
    let table = &model.table;
    let dim = table.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut gate = NoiseGateModel::random(dim, config.hidden.unwrap_or(dim), config.activation, &mut rng);
    gate.alpha = config.alpha;

    let anchors = gate_anchors(model, corpus, queries, config.include_queries)?;
    let n_tags = table.set(Space::Tag).len();
    // (anchor index, positive tag row, negative tag rows)
    let mut pairs: Vec<(usize, usize, Vec<usize>)> = Vec::new();
    for epoch in 0..config.epochs {
        let lr = lr_schedule(epoch, config.epochs, config.learning_rate)?;
        pairs.clear();
        for (a, (_, _, tags)) in anchors.iter().enumerate() {
            for &t in tags {
                let negatives = sample_tags_excluding(n_tags, config.negatives, tags, &mut rng);
                pairs.push((a, t, negatives));
            }
        }
        pairs.shuffle(&mut rng);
        for batch in pairs.chunks(config.batch_size) {
            let samples: Vec<GateSample<'_>> = batch
                .iter()
                .map(|(a, t, negs)| {
                    let (space, row, _) = &anchors[*a];
                    GateSample {
                        left: table.row(*space, *row),
                        positive: table.row(Space::Tag, *t),
                        negatives: negs.iter().map(|&n| table.row(Space::Tag, n)).collect(),
                    }
                })
                .collect();
            let (_, grads) = loss_nr(&gate, &samples)?;
            gate_step(&mut gate, &grads, lr)?;
        }
    }
    Ok(gate)
}

fn sample_tags_excluding<R: Rng>(n: usize, k: usize, excluded: &[usize], rng: &mut R) -> Vec<usize> {
    let allowed: Vec<usize> = (0..n).filter(|i| !excluded.contains(i)).collect();
    if allowed.len() <= k {
        return allowed;
    }
    rand::seq::index::sample(rng, allowed.len(), k)
        .into_iter()
        .map(|i| allowed[i])
        .collect()
}

/// Mean gate score over (question, own tag) and (question, foreign tag) pairs.
pub fn mean_pair_scores(gate: &NoiseGateModel, model: &TrainedModel, corpus: &Corpus) -> Result<(f64, f64)> {
    let table = &model.table;
    let (mut pos, mut n_pos, mut neg, mut n_neg) = (0.0, 0usize, 0.0, 0usize);
    for q in corpus.questions() {
        let p = table.require(Space::Question, &q.id)?;
        for tag in corpus.tags().ids() {
            let s = gate_score(gate, p, table.require(Space::Tag, tag)?)?;
            if q.tags.contains(tag) {
                pos += s;
                n_pos += 1;
            } else {
                neg += s;
                n_neg += 1;
            }
        }
    }
    Ok((pos / n_pos.max(1) as f64, neg / n_neg.max(1) as f64))
}
