//! Conversational retrieval sessions.
//!
//! A session ranks its candidate pool by `c · (W_Q·Q + W_t·Σe)`, where each
//! `e` is a signed tag vector the gate accepted (or zero when it did not),
//! and picks the next tag to ask about by generalized binary search over the
//! reciprocal-rank mass of the current ranking.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::embedding::{hash_embed, signed_tag, Feedback, Space};
use crate::error::{Error, Result};
use crate::gate::{gate_feedback, NegativeScoring, NoiseGateModel, Verdict, DEFAULT_ALPHA};
use crate::trainer::{FusionWeight, TrainedModel};
use crate::vector::dot;

/// Fixed surface form of a clarifying question.
pub fn question_text(tag: &str) -> String {
    format!("Is your question related to {tag}?")
}

/// `1 / (index + 1)` for a 0-based rank.
pub fn contribution_score(rank_index: usize) -> f64 {
    1.0 / (rank_index as f64 + 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    #[default]
    Gbs,
    Random,
}

/// Knobs shared by every session of an engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub alpha: f64,
    /// Gate answers with the noise model (when one is loaded).
    pub use_gate: bool,
    pub negative_scoring: NegativeScoring,
    /// Let "yes" answers into the query.
    pub use_positive: bool,
    /// Let "no" answers into the query.
    pub use_negative: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            alpha: DEFAULT_ALPHA,
            use_gate: true,
            negative_scoring: NegativeScoring::default(),
            use_positive: true,
            use_negative: true,
        }
    }
}

/// Shared, read-only state behind all sessions.
#[derive(Debug, Clone)]
pub struct Engine {
    pub model: Arc<TrainedModel>,
    pub gate: Option<Arc<NoiseGateModel>>,
    pub corpus: Arc<Corpus>,
    pub config: EngineConfig,
}

impl Engine {
    pub fn new(
        model: Arc<TrainedModel>,
        gate: Option<Arc<NoiseGateModel>>,
        corpus: Arc<Corpus>,
        config: EngineConfig,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&config.alpha) {
            return Err(Error::InvalidArgument(format!("alpha {} outside [0, 1]", config.alpha)));
        }
        if let Some(gate) = &gate {
            gate.validate()?;
            if gate.dim != model.dim() {
                return Err(Error::Dimension {
                    expected: model.dim(),
                    actual: gate.dim,
                });
            }
        }
        Ok(Engine {
            model,
            gate,
            corpus,
            config,
        })
    }

    fn active_gate(&self) -> Option<&NoiseGateModel> {
        self.gate.as_deref().filter(|_| self.config.use_gate)
    }

    /// Stored vector of a known query.
    pub fn query_vector(&self, query_id: &str) -> Result<Vec<f64>> {
        Ok(self.model.table.require(Space::Query, query_id)?.to_vec())
    }

    /// Encodes unseen query text with the model's embedder.
    pub fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        let config = self
            .model
            .embedder
            .ok_or_else(|| Error::InvalidArgument("model has no text embedder; use a known query id".into()))?;
        hash_embed(text, &config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub id: String,
    pub score: f64,
    pub probability: f64,
}

/// Candidates by descending score, ties by ascending id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Ranking(pub Vec<RankedCandidate>);

impl Ranking {
    fn from_scores(mut scored: Vec<(String, f64)>) -> Self {
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let max = scored.first().map_or(0.0, |s| s.1);
        let exps: Vec<f64> = scored.iter().map(|(_, s)| (s - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        Ranking(
            scored
                .into_iter()
                .zip(exps)
                .map(|((id, score), e)| RankedCandidate {
                    id,
                    score,
                    probability: e / z,
                })
                .collect(),
        )
    }

    pub fn ids(&self) -> Vec<&str> {
        self.0.iter().map(|c| c.id.as_str()).collect()
    }

    /// 0-based position of `id`.
    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.0.iter().position(|c| c.id == id)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn top(&self, k: usize) -> &[RankedCandidate] {
        &self.0[..k.min(self.0.len())]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub id: String,
    pub vector: Vec<f64>,
    pub tags: BTreeSet<String>,
}

/// One answered clarifying question.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackRecord {
    pub tag: String,
    pub feedback: Feedback,
    pub verdict: Verdict,
    pub gate_score: Option<f64>,
    /// The vector added to the query: the signed tag if accepted, else zero.
    pub contribution: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    pub query_id: Option<String>,
    pub query: Vec<f64>,
    pub candidates: Vec<Candidate>,
    pub feedback: Vec<FeedbackRecord>,
    pub asked: BTreeSet<String>,
    /// Tag asked this round and not yet answered.
    pub pending: Option<String>,
    /// Σ of accepted feedback vectors.
    pub accumulated: Vec<f64>,
    pub ranking: Ranking,
}

impl SessionState {
    /// Number of answered rounds.
    pub fn round(&self) -> usize {
        self.feedback.len()
    }
}

/// Scores every candidate against `W_Q·Q + W_t·Σe`.
pub fn rank_candidates(session: &SessionState, w_q: &FusionWeight, w_t: &FusionWeight) -> Ranking {
    let mut v = w_q.apply(&session.query);
    w_t.apply_add(1.0, &session.accumulated, &mut v);
    Ranking::from_scores(
        session
            .candidates
            .iter()
            .map(|c| (c.id.clone(), dot(&c.vector, &v)))
            .collect(),
    )
}

/// Opens a session over `candidates` with no feedback yet.
pub fn start_session(
    engine: &Engine,
    query_id: Option<&str>,
    query: Vec<f64>,
    candidates: &[String],
) -> Result<SessionState> {
    if candidates.is_empty() {
        return Err(Error::Empty("candidate list"));
    }
    let dim = engine.model.dim();
    if query.len() != dim {
        return Err(Error::Dimension {
            expected: dim,
            actual: query.len(),
        });
    }
    let mut seen = BTreeSet::new();
    let candidates = candidates
        .iter()
        .filter(|id| seen.insert(id.as_str()))
        .map(|id| {
            Ok(Candidate {
                id: id.clone(),
                vector: engine.model.table.require(Space::Question, id)?.to_vec(),
                tags: engine.corpus.require(id)?.tags.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut session = SessionState {
        query_id: query_id.map(str::to_string),
        query,
        candidates,
        feedback: Vec::new(),
        asked: BTreeSet::new(),
        pending: None,
        accumulated: vec![0.0; dim],
        ranking: Ranking::default(),
    };
    session.ranking = rank_candidates(&session, &engine.model.weights.w_q, &engine.model.weights.w_t);
    Ok(session)
}

/// Opens a session for a query stored in the model.
pub fn start_session_for_query(engine: &Engine, query_id: &str, candidates: &[String]) -> Result<SessionState> {
    start_session(engine, Some(query_id), engine.query_vector(query_id)?, candidates)
}

/// `Σ_c (2·1{t ∈ tags(c)} − 1)·π(c)` over the current ranking.
pub fn gbs_objective(session: &SessionState, tag: &str) -> f64 {
    let tags: BTreeMap<&str, &BTreeSet<String>> = session.candidates.iter().map(|c| (c.id.as_str(), &c.tags)).collect();
    session
        .ranking
        .0
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let sign = if tags[c.id.as_str()].contains(tag) { 1.0 } else { -1.0 };
            sign * contribution_score(i)
        })
        .sum::<f64>()
        .abs()
}

/// Tags carried by some candidate and not yet asked, ascending.
pub fn tag_pool(session: &SessionState) -> Vec<String> {
    let all: BTreeSet<&String> = session.candidates.iter().flat_map(|c| &c.tags).collect();
    all.into_iter()
        .filter(|t| !session.asked.contains(*t))
        .cloned()
        .collect()
}

/// Objectives closer than this count as tied. Different subsets can have
/// equal π-sums (1 = 1/2 + 1/3 + 1/6) that differ only by rounding.
pub const GBS_TIE_TOLERANCE: f64 = 1e-12;

/// The unasked tag minimizing the GBS objective (ties: ascending id), or
/// `None` once every candidate tag has been asked.
pub fn select_tag_gbs(session: &SessionState) -> Option<String> {
    let mut best: Option<(f64, String)> = None;
    for tag in tag_pool(session) {
        let obj = gbs_objective(session, &tag);
        // pool is ascending, so strict improvement keeps the smaller id on ties
        if best.as_ref().is_none_or(|(b, _)| obj < *b - GBS_TIE_TOLERANCE) {
            best = Some((obj, tag));
        }
    }
    best.map(|(_, t)| t)
}

pub fn select_tag_random<R: Rng>(session: &SessionState, rng: &mut R) -> Option<String> {
    let pool = tag_pool(session);
    if pool.is_empty() {
        None
    } else {
        Some(pool[rng.gen_range(0..pool.len())].clone())
    }
}

/// Tag selection strategy for a running conversation.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)] // one per session, never stored in bulk
pub enum TagSelector {
    Gbs,
    Random(ChaCha8Rng),
}

impl TagSelector {
    pub fn select(&mut self, session: &SessionState) -> Option<String> {
        match self {
            TagSelector::Gbs => select_tag_gbs(session),
            TagSelector::Random(rng) => select_tag_random(session, rng),
        }
    }
}

/// Marks `tag` as this round's question.
pub fn ask(session: &mut SessionState, tag: &str) -> Result<()> {
    if session.asked.contains(tag) {
        return Err(Error::InvalidArgument(format!("tag `{tag}` was already asked")));
    }
    session.asked.insert(tag.to_string());
    session.pending = Some(tag.to_string());
    Ok(())
}

/// Records the answer to the pending question and re-ranks.
pub fn apply_feedback(engine: &Engine, session: &mut SessionState, tag: &str, feedback: Feedback) -> Result<()> {
    if session.pending.as_deref() != Some(tag) {
        return Err(Error::InvalidArgument(format!(
            "`{tag}` is not the question awaiting an answer"
        )));
    }
    let config = &engine.config;
    let tag_vec = engine.model.table.require(Space::Tag, tag)?;
    let wanted = match feedback {
        Feedback::Positive => config.use_positive,
        Feedback::Negative => config.use_negative,
    };
    let (verdict, gate_score, accepted) = if !wanted {
        (Verdict::Ignored, None, None)
    } else if let Some(gate) = engine.active_gate() {
        let d = gate_feedback(
            gate,
            &session.query,
            tag_vec,
            feedback,
            config.alpha,
            config.negative_scoring,
        )?;
        (d.verdict, Some(d.score), d.accepted)
    } else {
        (Verdict::Accept, None, Some(signed_tag(tag_vec, feedback)))
    };
    let contribution = match accepted {
        Some(v) => {
            session.accumulated.iter_mut().zip(&v).for_each(|(a, x)| *a += x);
            v
        }
        None => vec![0.0; session.query.len()],
    };
    session.feedback.push(FeedbackRecord {
        tag: tag.to_string(),
        feedback,
        verdict,
        gate_score,
        contribution,
    });
    session.pending = None;
    session.ranking = rank_candidates(session, &engine.model.weights.w_q, &engine.model.weights.w_t);
    Ok(())
}

/// Anything that can answer a clarifying question.
pub trait AnswerSource {
    fn answer(&mut self, tag: &str) -> Feedback;
}

impl<F: FnMut(&str) -> Feedback> AnswerSource for F {
    fn answer(&mut self, tag: &str) -> Feedback {
        self(tag)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub round: usize,
    pub tag: String,
    pub feedback: Feedback,
    pub gate: Verdict,
    pub gate_score: Option<f64>,
    /// 1-based rank of each positive after this round, in positive order.
    pub positive_ranks: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conversation {
    /// Ranking after each round; index 0 is the ranking before any question.
    pub rankings: Vec<Ranking>,
    pub transcript: Vec<TranscriptEntry>,
}

impl Conversation {
    pub fn final_ranking(&self) -> &Ranking {
        self.rankings.last().expect("round-0 ranking is always present")
    }
}

fn positive_ranks(ranking: &Ranking, positives: &[String]) -> Vec<Option<usize>> {
    positives.iter().map(|p| ranking.index_of(p).map(|i| i + 1)).collect()
}

/// Ask, answer, re-rank until `max_rounds` questions or no tag is left.
pub fn run_conversation(
    engine: &Engine,
    session: &mut SessionState,
    user: &mut dyn AnswerSource,
    selector: &mut TagSelector,
    max_rounds: usize,
    positives: &[String],
) -> Result<Conversation> {
    let mut rankings = vec![session.ranking.clone()];
    let mut transcript = Vec::new();
    for _ in 0..max_rounds {
        let Some(tag) = selector.select(session) else {
            break;
        };
        ask(session, &tag)?;
        let feedback = user.answer(&tag);
        apply_feedback(engine, session, &tag, feedback)?;
        let record = session.feedback.last().expect("feedback just recorded");
        transcript.push(TranscriptEntry {
            round: session.round(),
            tag,
            feedback,
            gate: record.verdict,
            gate_score: record.gate_score,
            positive_ranks: positive_ranks(&session.ranking, positives),
        });
        rankings.push(session.ranking.clone());
    }
    Ok(Conversation { rankings, transcript })
}
