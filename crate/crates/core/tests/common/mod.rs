//! Shared test helpers: independent oracles, finite-difference checkers and
//! the toy pipeline. Also compiled into the `cqr` acceptance suite.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::Arc;

use cqr_core::corpus::{split_dataset, Corpus, QueryRecord, QuestionRecord};
use cqr_core::embedding::{encode_corpus, EmbeddingSource, EmbeddingTable, Feedback, HashEmbedderConfig, Space};
use cqr_core::engine::{start_session, Engine, EngineConfig, SessionState};
use cqr_core::gate::{loss_nr, train_noise_gate, Activation, GateConfig, GateSample, NoiseGateModel};
use cqr_core::toy::{self, ToyConfig};
use cqr_core::trainer::{
    loss_qq, loss_tq, train_offline, Gradients, QqExample, TqExample, TrainConfig, TrainableWeights, TrainedModel,
    WeightShape,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

/// `|a − b| / max(|a|, |b|)`, with an absolute floor so that entries that
/// are zero both ways do not divide by zero.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-7 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

fn random_vec(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| rng.gen_range(-scale..scale)).collect()
}

/// Random table with `n` rows in each space.
pub fn random_table(rng: &mut ChaCha8Rng, dim: usize, n: usize) -> EmbeddingTable {
    let mut table = EmbeddingTable::new(dim);
    for space in [Space::Query, Space::Question, Space::Tag] {
        for i in 0..n {
            table
                .insert(space, format!("{space:?}{i}"), random_vec(rng, dim, 1.0))
                .unwrap();
        }
    }
    table
}

pub fn random_weights(rng: &mut ChaCha8Rng, shape: WeightShape, dim: usize) -> TrainableWeights {
    let mut w = TrainableWeights::init(shape, dim);
    for v in [&mut w.w_q, &mut w.w_t, &mut w.w_p] {
        v.values_mut().iter_mut().for_each(|x| *x = rng.gen_range(0.3..1.7));
    }
    w
}

/// Every scalar parameter of the offline model, addressed for perturbation.
#[derive(Debug, Clone, Copy)]
enum Param {
    WQ(usize),
    WT(usize),
    WP(usize),
    Row(Space, usize, usize),
}

fn params(table: &EmbeddingTable, weights: &TrainableWeights) -> Vec<Param> {
    let mut out = Vec::new();
    out.extend((0..weights.w_q.values().len()).map(Param::WQ));
    out.extend((0..weights.w_t.values().len()).map(Param::WT));
    out.extend((0..weights.w_p.values().len()).map(Param::WP));
    for space in [Space::Query, Space::Question, Space::Tag] {
        for pos in 0..table.set(space).len() {
            out.extend((0..table.dim()).map(|k| Param::Row(space, pos, k)));
        }
    }
    out
}

fn slot<'a>(table: &'a mut EmbeddingTable, weights: &'a mut TrainableWeights, p: Param) -> &'a mut f64 {
    match p {
        Param::WQ(k) => &mut weights.w_q.values_mut()[k],
        Param::WT(k) => &mut weights.w_t.values_mut()[k],
        Param::WP(k) => &mut weights.w_p.values_mut()[k],
        Param::Row(space, pos, k) => &mut table.row_mut(space, pos)[k],
    }
}

fn analytic(grads: &Gradients, p: Param) -> f64 {
    match p {
        Param::WQ(k) => grads.w_q[k],
        Param::WT(k) => grads.w_t[k],
        Param::WP(k) => grads.w_p[k],
        Param::Row(space, pos, k) => grads.rows.get(&(space, pos)).map_or(0.0, |r| r[k]),
    }
}

/// Largest relative error between analytic and central-difference
/// gradients over every parameter.
fn fd_check<F>(mut table: EmbeddingTable, mut weights: TrainableWeights, loss: F) -> f64
where
    F: Fn(&EmbeddingTable, &TrainableWeights) -> (f64, Gradients),
{
    let (_, grads) = loss(&table, &weights);
    let mut worst: f64 = 0.0;
    for p in params(&table, &weights) {
        let orig = *slot(&mut table, &mut weights, p);
        *slot(&mut table, &mut weights, p) = orig + FD_STEP;
        let up = loss(&table, &weights).0;
        *slot(&mut table, &mut weights, p) = orig - FD_STEP;
        let down = loss(&table, &weights).0;
        *slot(&mut table, &mut weights, p) = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(analytic(&grads, p), numeric));
    }
    worst
}

/// Finite-difference check of the query–question loss on one random instance.
pub fn fd_check_qq(seed: u64, shape: WeightShape) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = 4;
    let table = random_table(&mut rng, dim, 5);
    let weights = random_weights(&mut rng, shape, dim);
    let batch: Vec<QqExample> = (0..3)
        .map(|_| {
            let mut order: Vec<usize> = (0..5).collect();
            order.shuffle(&mut rng);
            QqExample {
                query: rng.gen_range(0..5),
                tag: rng.gen_range(0..5),
                feedback: if rng.gen_bool(0.5) {
                    Feedback::Positive
                } else {
                    Feedback::Negative
                },
                positive: order[0],
                negatives: order[1..4].to_vec(),
            }
        })
        .collect();
    fd_check(table, weights, |t, w| loss_qq(t, w, &batch).unwrap())
}

/// Finite-difference check of the tag–question loss on one random instance.
pub fn fd_check_tq(seed: u64, shape: WeightShape) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = 4;
    let table = random_table(&mut rng, dim, 5);
    let weights = random_weights(&mut rng, shape, dim);
    let batch: Vec<TqExample> = (0..3)
        .map(|_| {
            let mut order: Vec<usize> = (0..5).collect();
            order.shuffle(&mut rng);
            TqExample {
                question: rng.gen_range(0..5),
                positive_tag: order[0],
                negatives: order[1..4].to_vec(),
            }
        })
        .collect();
    fd_check(table, weights, |t, w| loss_tq(t, w, &batch).unwrap())
}

/// Finite-difference check of the gate loss on one random instance.
pub fn fd_check_nr(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (dim, hidden) = (3, 4);
    let mut gate = NoiseGateModel::random(dim, hidden, Activation::Relu, &mut rng);
    gate.b1.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
    gate.b2 = rng.gen_range(-0.5..0.5);
    let vecs: Vec<Vec<f64>> = (0..8).map(|_| random_vec(&mut rng, dim, 1.0)).collect();
    let samples = |_: &NoiseGateModel| -> Vec<GateSample<'_>> {
        vec![
            GateSample {
                left: &vecs[0],
                positive: &vecs[1],
                negatives: vec![&vecs[2], &vecs[3]],
            },
            GateSample {
                left: &vecs[4],
                positive: &vecs[5],
                negatives: vec![&vecs[6], &vecs[7], &vecs[2]],
            },
        ]
    };
    let (_, grads) = loss_nr(&gate, &samples(&gate)).unwrap();
    let loss = |g: &NoiseGateModel| loss_nr(g, &samples(g)).unwrap().0;
    let mut worst: f64 = 0.0;
    let mut check = |gate: &mut NoiseGateModel, get: &dyn Fn(&mut NoiseGateModel) -> &mut f64, analytic: f64| {
        let orig = *get(gate);
        *get(gate) = orig + FD_STEP;
        let up = loss(gate);
        *get(gate) = orig - FD_STEP;
        let down = loss(gate);
        *get(gate) = orig;
        worst = worst.max(relative_error(analytic, (up - down) / (2.0 * FD_STEP)));
    };
    for j in 0..hidden {
        for k in 0..2 * dim {
            check(&mut gate, &|g| &mut g.w1[j][k], grads.w1[j][k]);
        }
        check(&mut gate, &|g| &mut g.b1[j], grads.b1[j]);
        check(&mut gate, &|g| &mut g.w2[j], grads.w2[j]);
    }
    check(&mut gate, &|g| &mut g.b2, grads.b2);
    worst
}

// Metric oracles, written straight from the definitions.

pub fn oracle_recall(ranking: &[String], positives: &BTreeSet<String>, k: usize) -> f64 {
    let mut hits = 0.0;
    for p in positives {
        if ranking.iter().take(k).any(|r| r == p) {
            hits += 1.0;
        }
    }
    hits / positives.len() as f64
}

pub fn oracle_ndcg(ranking: &[String], positives: &BTreeSet<String>, k: usize) -> f64 {
    let mut dcg = 0.0;
    for (i, r) in ranking.iter().enumerate() {
        if i < k && positives.contains(r) {
            dcg += 1.0 / (i as f64 + 2.0).log2();
        }
    }
    let mut ideal = 0.0;
    for i in 0..positives.len() {
        if i < k {
            ideal += 1.0 / (i as f64 + 2.0).log2();
        }
    }
    dcg / ideal
}

pub fn oracle_rr(ranking: &[String], positives: &BTreeSet<String>) -> f64 {
    for (i, r) in ranking.iter().enumerate() {
        if positives.contains(r) {
            return 1.0 / (i as f64 + 1.0);
        }
    }
    0.0
}

pub fn oracle_ap(ranking: &[String], positives: &BTreeSet<String>) -> f64 {
    let mut total = 0.0;
    for p in positives {
        if let Some(rank) = ranking.iter().position(|r| r == p) {
            let prefix = &ranking[..=rank];
            let relevant = prefix.iter().filter(|r| positives.contains(*r)).count();
            total += relevant as f64 / prefix.len() as f64;
        }
    }
    total / positives.len() as f64
}

/// A random ranking over `c0..cN` and a non-empty positive set, some of
/// whose members may be missing from the ranking.
pub fn random_ranking(rng: &mut ChaCha8Rng) -> (Vec<String>, BTreeSet<String>) {
    let n = rng.gen_range(1..=20);
    let mut ids: Vec<String> = (0..n + 3).map(|i| format!("c{i}")).collect();
    ids.shuffle(rng);
    let n_pos = rng.gen_range(1..=4.min(n + 3));
    let positives: BTreeSet<String> = ids.choose_multiple(rng, n_pos).cloned().collect();
    ids.truncate(n);
    (ids, positives)
}

// GBS instances.

/// Engine over `n` candidates with random vectors and random tags drawn
/// from `t0..t{n_tags}`; every candidate gets at least one tag.
pub fn random_gbs_instance(rng: &mut ChaCha8Rng, n: usize, n_tags: usize) -> (Engine, Vec<String>) {
    let dim = 4;
    let mut table = EmbeddingTable::new(dim);
    let mut records = Vec::new();
    for t in 0..n_tags {
        table
            .insert(Space::Tag, format!("t{t}"), random_vec(rng, dim, 1.0))
            .unwrap();
    }
    for i in 0..n {
        let id = format!("c{i}");
        table
            .insert(Space::Question, id.clone(), random_vec(rng, dim, 1.0))
            .unwrap();
        let mut tags: BTreeSet<String> = (0..n_tags)
            .filter(|_| rng.gen_bool(0.4))
            .map(|t| format!("t{t}"))
            .collect();
        if tags.is_empty() {
            tags.insert(format!("t{}", rng.gen_range(0..n_tags)));
        }
        records.push(QuestionRecord {
            id: id.clone(),
            title: id,
            body: None,
            tags,
        });
    }
    let model = TrainedModel::initial(table, TrainConfig::default());
    let corpus = Corpus::from_records(records).unwrap().0;
    let engine = Engine::new(Arc::new(model), None, Arc::new(corpus), EngineConfig::default()).unwrap();
    let ids = (0..n).map(|i| format!("c{i}")).collect();
    (engine, ids)
}

/// `|Σ_{c ∈ S} π(c) − Σ_{c ∉ S} π(c)|` where `S` holds the candidates
/// carrying `tag`, and `π` is the reciprocal of the 1-based rank.
pub fn oracle_gbs_objective(session: &SessionState, tag: &str) -> f64 {
    let mut inside = 0.0;
    let mut outside = 0.0;
    for (rank, c) in session.ranking.0.iter().enumerate() {
        let cand = session.candidates.iter().find(|x| x.id == c.id).unwrap();
        let weight = 1.0 / (rank as f64 + 1.0);
        if cand.tags.contains(tag) {
            inside += weight;
        } else {
            outside += weight;
        }
    }
    (inside - outside).abs()
}

/// Exhaustive argmin of the oracle objective over every candidate tag not
/// yet asked. Values within 1e-12 are ties and go to the smaller tag id.
pub fn oracle_gbs_choice(session: &SessionState) -> Option<String> {
    let mut all: Vec<String> = session
        .candidates
        .iter()
        .flat_map(|c| c.tags.iter().cloned())
        .filter(|t| !session.asked.contains(t))
        .collect();
    all.sort();
    all.dedup();
    let mut best: Option<(f64, String)> = None;
    for t in all {
        let v = oracle_gbs_objective(session, &t);
        match &best {
            Some((b, _)) if v >= *b - 1e-12 => {}
            _ => best = Some((v, t)),
        }
    }
    best.map(|(_, t)| t)
}

/// 16 candidates `c00..c15`; `b{j}` is on candidate `i` iff bit `j` of
/// `i` is set, and the catch-all `any` is on every candidate. Candidate
/// vectors hold ±1 per bit, so with `W_Q = 0`, `W_t = 1` the answers to
/// all four bit tags single out one candidate.
pub fn binary_instance() -> (Engine, Vec<String>) {
    let dim = 5;
    let mut table = EmbeddingTable::new(dim);
    let mut records = Vec::new();
    for j in 0..4 {
        let mut v = vec![0.0; dim];
        v[j] = 1.0;
        table.insert(Space::Tag, format!("b{j}"), v).unwrap();
    }
    let mut any = vec![0.0; dim];
    any[4] = 1.0;
    table.insert(Space::Tag, "any", any).unwrap();
    for i in 0..16usize {
        let id = format!("c{i:02}");
        let mut v: Vec<f64> = (0..4).map(|j| if i >> j & 1 == 1 { 1.0 } else { -1.0 }).collect();
        v.push(0.0);
        table.insert(Space::Question, id.clone(), v).unwrap();
        let mut tags: BTreeSet<String> = (0..4).filter(|j| i >> j & 1 == 1).map(|j| format!("b{j}")).collect();
        tags.insert("any".into());
        records.push(QuestionRecord {
            id: id.clone(),
            title: id,
            body: None,
            tags,
        });
    }
    let mut model = TrainedModel::initial(table, TrainConfig::default());
    model.weights = TrainableWeights::scalars(0.0, 1.0, 1.0);
    let corpus = Corpus::from_records(records).unwrap().0;
    let config = EngineConfig {
        use_gate: false,
        ..EngineConfig::default()
    };
    let engine = Engine::new(Arc::new(model), None, Arc::new(corpus), config).unwrap();
    let ids = (0..16).map(|i| format!("c{i:02}")).collect();
    (engine, ids)
}

pub fn open(engine: &Engine, ids: &[String]) -> SessionState {
    start_session(engine, None, vec![1.0; engine.model.dim()], ids).unwrap()
}

// Toy pipeline.

pub struct ToyPipeline {
    pub corpus: Arc<Corpus>,
    pub train: Vec<QueryRecord>,
    pub test: Vec<QueryRecord>,
    pub initial: EmbeddingTable,
    pub model: Arc<TrainedModel>,
    pub gate: Arc<NoiseGateModel>,
}

/// Generates the toy corpus, splits it, trains offline and fits the gate,
/// all with default settings and fixed seeds.
pub fn toy_pipeline() -> ToyPipeline {
    let data = toy::generate(&ToyConfig::default()).unwrap();
    let (train, test) = split_dataset(&data.queries, 0.7, 1).unwrap();
    let embedder = HashEmbedderConfig::default();
    let initial = encode_corpus(&data.corpus, &data.queries, &EmbeddingSource::Hash(embedder)).unwrap();
    let mut model = train_offline(&data.corpus, &train, initial.clone(), &TrainConfig::default()).unwrap();
    model.embedder = Some(embedder);
    let gate = train_noise_gate(&model, &data.corpus, &train, &GateConfig::default()).unwrap();
    ToyPipeline {
        corpus: Arc::new(data.corpus),
        train,
        test,
        initial,
        model: Arc::new(model),
        gate: Arc::new(gate),
    }
}
