//! User simulation and offline evaluation.

mod metrics;

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, QueryRecord};
use crate::embedding::Feedback;
use crate::engine::{
    run_conversation, start_session_for_query, AnswerSource, Conversation, Engine, EngineConfig, Policy, Ranking,
    TagSelector,
};
use crate::error::{Error, Result};
use crate::gate::NoiseGateModel;
use crate::trainer::TrainedModel;

pub use metrics::{average_precision, ndcg_at_k, recall_at_k, reciprocal_rank};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulatorConfig {
    pub noise_rate: f64,
    pub seed: u64,
}

impl SimulatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return Err(Error::InvalidArgument(format!(
                "noise rate {} outside [0, 1]",
                self.noise_rate
            )));
        }
        Ok(())
    }
}

/// "yes" iff the asked tag is on the target, flipped with probability `noise_rate`.
pub fn simulate_answer<R: Rng>(target_tags: &BTreeSet<String>, asked: &str, noise_rate: f64, rng: &mut R) -> Feedback {
    let truthful = if target_tags.contains(asked) {
        Feedback::Positive
    } else {
        Feedback::Negative
    };
    if rng.gen_bool(noise_rate) {
        truthful.flipped()
    } else {
        truthful
    }
}

/// Answers for one query; the target is the union of its positives' tags.
pub struct UserSimulator {
    target_tags: BTreeSet<String>,
    noise_rate: f64,
    rng: ChaCha8Rng,
}

impl UserSimulator {
    pub fn new(target_tags: BTreeSet<String>, noise_rate: f64, rng: ChaCha8Rng) -> Self {
        UserSimulator {
            target_tags,
            noise_rate,
            rng,
        }
    }

    pub fn for_query(query: &QueryRecord, corpus: &Corpus, noise_rate: f64, rng: ChaCha8Rng) -> Result<Self> {
        let mut tags = BTreeSet::new();
        for p in &query.positives {
            tags.extend(corpus.require(p)?.tags.iter().cloned());
        }
        Ok(UserSimulator::new(tags, noise_rate, rng))
    }
}

impl AnswerSource for UserSimulator {
    fn answer(&mut self, tag: &str) -> Feedback {
        simulate_answer(&self.target_tags, tag, self.noise_rate, &mut self.rng)
    }
}

/// Independent random stream `stream` of the experiment seed.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub rounds: usize,
    pub simulator: SimulatorConfig,
    pub policy: Policy,
    pub engine: EngineConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            rounds: 5,
            simulator: SimulatorConfig {
                noise_rate: 0.0,
                seed: 0,
            },
            policy: Policy::Gbs,
            engine: EngineConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub l: usize,
    #[serde(rename = "R@1")]
    pub r1: f64,
    #[serde(rename = "R@3")]
    pub r3: f64,
    #[serde(rename = "R@5")]
    pub r5: f64,
    #[serde(rename = "NDCG@3")]
    pub ndcg3: f64,
    #[serde(rename = "NDCG@5")]
    pub ndcg5: f64,
    #[serde(rename = "NDCG@10")]
    pub ndcg10: f64,
    #[serde(rename = "MAP")]
    pub map: f64,
    #[serde(rename = "MRR")]
    pub mrr: f64,
}

impl RoundMetrics {
    pub const CSV_HEADER: &'static str = "l,R@1,R@3,R@5,NDCG@3,NDCG@5,NDCG@10,MAP,MRR";

    pub fn evaluate(l: usize, ranking: &Ranking, positives: &[String]) -> Result<Self> {
        let ids = ranking.ids();
        Ok(RoundMetrics {
            l,
            r1: recall_at_k(&ids, positives, 1)?,
            r3: recall_at_k(&ids, positives, 3)?,
            r5: recall_at_k(&ids, positives, 5)?,
            ndcg3: ndcg_at_k(&ids, positives, 3)?,
            ndcg5: ndcg_at_k(&ids, positives, 5)?,
            ndcg10: ndcg_at_k(&ids, positives, 10)?,
            map: average_precision(&ids, positives)?,
            mrr: reciprocal_rank(&ids, positives)?,
        })
    }

    fn values(&self) -> [f64; 8] {
        [
            self.r1,
            self.r3,
            self.r5,
            self.ndcg3,
            self.ndcg5,
            self.ndcg10,
            self.map,
            self.mrr,
        ]
    }

    fn from_values(l: usize, v: [f64; 8]) -> Self {
        RoundMetrics {
            l,
            r1: v[0],
            r3: v[1],
            r5: v[2],
            ndcg3: v[3],
            ndcg5: v[4],
            ndcg10: v[5],
            map: v[6],
            mrr: v[7],
        }
    }

    pub fn csv_row(&self) -> String {
        let v = self.values().map(|x| format!("{x:.6}"));
        format!("{},{}", self.l, v.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub config: ExperimentConfig,
    pub rounds: Vec<RoundMetrics>,
    pub n_queries: usize,
}

impl MetricReport {
    pub fn at(&self, l: usize) -> &RoundMetrics {
        &self.rounds[l]
    }

    pub fn last(&self) -> &RoundMetrics {
        self.rounds.last().expect("report covers round 0")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(RoundMetrics::CSV_HEADER);
        out.push('\n');
        for r in &self.rounds {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }
}

/// One simulated session.
#[derive(Debug, Clone)]
pub struct QueryOutcome {
    pub query_id: String,
    pub conversation: Conversation,
}

fn run_one(engine: &Engine, query: &QueryRecord, index: usize, config: &ExperimentConfig) -> Result<QueryOutcome> {
    let seed = config.simulator.seed;
    let mut user = UserSimulator::for_query(
        query,
        &engine.corpus,
        config.simulator.noise_rate,
        substream(seed, 2 * index as u64),
    )?;
    let mut selector = match config.policy {
        Policy::Gbs => TagSelector::Gbs,
        Policy::Random => TagSelector::Random(substream(seed, 2 * index as u64 + 1)),
    };
    let mut session = start_session_for_query(engine, &query.id, &query.candidates)?;
    let conversation = run_conversation(
        engine,
        &mut session,
        &mut user,
        &mut selector,
        config.rounds,
        &query.positives,
    )?;
    Ok(QueryOutcome {
        query_id: query.id.clone(),
        conversation,
    })
}

/// Simulates every query for `config.rounds` rounds and macro-averages
/// the metrics at each round. Also returns the individual sessions.
pub fn run_experiment_detailed(
    model: Arc<TrainedModel>,
    gate: Option<Arc<NoiseGateModel>>,
    corpus: Arc<Corpus>,
    queries: &[QueryRecord],
    config: &ExperimentConfig,
) -> Result<(MetricReport, Vec<QueryOutcome>)> {
    if queries.is_empty() {
        return Err(Error::Empty("test queries"));
    }
    config.simulator.validate()?;
    let engine = Engine::new(model, gate, corpus, config.engine.clone())?;

    let outcomes: Vec<QueryOutcome> = queries
        .par_iter()
        .enumerate()
        .map(|(i, q)| run_one(&engine, q, i, config))
        .collect::<Result<_>>()?;

    let mut sums = vec![[0.0; 8]; config.rounds + 1];
    for (query, outcome) in queries.iter().zip(&outcomes) {
        let rankings = &outcome.conversation.rankings;
        for (l, sum) in sums.iter_mut().enumerate() {
            // sessions that ran out of tags keep their final ranking
            let ranking = &rankings[l.min(rankings.len() - 1)];
            let m = RoundMetrics::evaluate(l, ranking, &query.positives)?.values();
            sum.iter_mut().zip(m).for_each(|(s, v)| *s += v);
        }
    }
    let n = queries.len() as f64;
    let rounds = sums
        .into_iter()
        .enumerate()
        .map(|(l, s)| RoundMetrics::from_values(l, s.map(|v| v / n)))
        .collect();
    Ok((
        MetricReport {
            config: config.clone(),
            rounds,
            n_queries: queries.len(),
        },
        outcomes,
    ))
}

pub fn run_experiment(
    model: Arc<TrainedModel>,
    gate: Option<Arc<NoiseGateModel>>,
    corpus: Arc<Corpus>,
    queries: &[QueryRecord],
    config: &ExperimentConfig,
) -> Result<MetricReport> {
    run_experiment_detailed(model, gate, corpus, queries, config).map(|(r, _)| r)
}
