//! Contrastive objectives of the offline stage and their analytic gradients.
//!
//! Both losses share the NCE form
//! `−mean[ ln σ(aᵀpos) + (1/|neg|) Σ ln(1 − σ(aᵀneg)) ]`;
//! the query–question loss anchors on the mixture query, the tag–question
//! loss on the adjusted question.

use std::collections::BTreeMap;

use super::weights::{FusionWeight, TrainableWeights};
use crate::embedding::{signed_tag, EmbeddingTable, Feedback, Space};
use crate::error::{Error, Result};
use crate::vector::{axpy, dot, log_sigmoid, sigmoid};

/// Gradient of a loss with respect to the fusion weights and the embedding
/// rows it touched, keyed by `(space, row position)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w_q: Vec<f64>,
    pub w_t: Vec<f64>,
    pub w_p: Vec<f64>,
    pub rows: BTreeMap<(Space, usize), Vec<f64>>,
}

impl Gradients {
    pub fn zeros(weights: &TrainableWeights) -> Self {
        Gradients {
            w_q: vec![0.0; weights.w_q.values().len()],
            w_t: vec![0.0; weights.w_t.values().len()],
            w_p: vec![0.0; weights.w_p.values().len()],
            rows: BTreeMap::new(),
        }
    }

    fn row(&mut self, space: Space, pos: usize, dim: usize) -> &mut [f64] {
        self.rows.entry((space, pos)).or_insert_with(|| vec![0.0; dim])
    }

    /// Adds `other` into `self`.
    pub fn merge(&mut self, other: Gradients) {
        axpy(1.0, &other.w_q, &mut self.w_q);
        axpy(1.0, &other.w_t, &mut self.w_t);
        axpy(1.0, &other.w_p, &mut self.w_p);
        for (key, g) in other.rows {
            match self.rows.get_mut(&key) {
                Some(dst) => axpy(1.0, &g, dst),
                None => {
                    self.rows.insert(key, g);
                }
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        let all = self
            .w_q
            .iter_mut()
            .chain(self.w_t.iter_mut())
            .chain(self.w_p.iter_mut())
            .chain(self.rows.values_mut().flatten());
        all.for_each(|g| *g *= alpha);
    }
}

/// `m = W_Q·Q + W_t·t^±`
pub fn mixture_query(
    query: &[f64],
    tag: &[f64],
    feedback: Feedback,
    w_q: &FusionWeight,
    w_t: &FusionWeight,
) -> Result<Vec<f64>> {
    if query.len() != tag.len() {
        return Err(Error::Dimension {
            expected: query.len(),
            actual: tag.len(),
        });
    }
    w_q.check_dim(query.len())?;
    w_t.check_dim(query.len())?;
    let mut m = w_q.apply(query);
    w_t.apply_add(1.0, &signed_tag(tag, feedback), &mut m);
    Ok(m)
}

/// `p' = W_p·p`
pub fn adjusted_question(question: &[f64], w_p: &FusionWeight) -> Vec<f64> {
    w_p.apply(question)
}

/// One mixture query of the query–question loss, by table row positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QqExample {
    pub query: usize,
    pub tag: usize,
    pub feedback: Feedback,
    pub positive: usize,
    pub negatives: Vec<usize>,
}

/// One adjusted question of the tag–question loss, by table row positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TqExample {
    pub question: usize,
    pub positive_tag: usize,
    pub negatives: Vec<usize>,
}

/// Accumulates the NCE term for one anchor. Returns the loss and adds
/// `scale · ∂loss/∂target` into the target rows; the anchor gradient is
/// returned separately.
fn nce_term(
    anchor: &[f64],
    positive: (Space, usize),
    negatives: &[usize],
    negative_space: Space,
    table: &EmbeddingTable,
    scale: f64,
    grads: &mut Gradients,
) -> (f64, Vec<f64>) {
    let dim = table.dim();
    let p = table.row(positive.0, positive.1);
    let sp = dot(anchor, p);
    let mut loss = -log_sigmoid(sp);
    let coef_p = sigmoid(sp) - 1.0;
    let mut g_anchor = vec![0.0; dim];
    axpy(coef_p, p, &mut g_anchor);
    axpy(scale * coef_p, anchor, grads.row(positive.0, positive.1, dim));

    let inv_n = 1.0 / negatives.len() as f64;
    for &n_pos in negatives {
        let n = table.row(negative_space, n_pos);
        let sn = dot(anchor, n);
        // ln(1 − σ(x)) = ln σ(−x)
        loss -= inv_n * log_sigmoid(-sn);
        let coef_n = inv_n * sigmoid(sn);
        axpy(coef_n, n, &mut g_anchor);
        axpy(scale * coef_n, anchor, grads.row(negative_space, n_pos, dim));
    }
    (loss, g_anchor)
}

/// Query–question NCE over a batch of mixture queries.
pub fn loss_qq(table: &EmbeddingTable, weights: &TrainableWeights, batch: &[QqExample]) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::Empty("query-question batch"));
    }
    let dim = table.dim();
    let scale = 1.0 / batch.len() as f64;
    let mut grads = Gradients::zeros(weights);
    let mut total = 0.0;
    for ex in batch {
        if ex.negatives.is_empty() {
            return Err(Error::InvalidArgument("mixture query without negatives".into()));
        }
        let q = table.row(Space::Query, ex.query);
        let t = signed_tag(table.row(Space::Tag, ex.tag), ex.feedback);
        let mut m = weights.w_q.apply(q);
        weights.w_t.apply_add(1.0, &t, &mut m);

        let (loss, g_m) = nce_term(
            &m,
            (Space::Question, ex.positive),
            &ex.negatives,
            Space::Question,
            table,
            scale,
            &mut grads,
        );
        total += loss;

        weights.w_q.accumulate_grad(&g_m, q, scale, &mut grads.w_q);
        weights.w_t.accumulate_grad(&g_m, &t, scale, &mut grads.w_t);
        let w_q = weights.w_q.clone();
        let g_q = grads.row(Space::Query, ex.query, dim);
        for (k, g) in g_q.iter_mut().enumerate() {
            *g += scale * w_q.at(k) * g_m[k];
        }
        let sign = ex.feedback.sign();
        let w_t = weights.w_t.clone();
        let g_t = grads.row(Space::Tag, ex.tag, dim);
        for (k, g) in g_t.iter_mut().enumerate() {
            *g += scale * sign * w_t.at(k) * g_m[k];
        }
    }
    Ok((total * scale, grads))
}

/// Tag–question NCE over a batch of adjusted questions.
pub fn loss_tq(table: &EmbeddingTable, weights: &TrainableWeights, batch: &[TqExample]) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::Empty("tag-question batch"));
    }
    let dim = table.dim();
    let scale = 1.0 / batch.len() as f64;
    let mut grads = Gradients::zeros(weights);
    let mut total = 0.0;
    for ex in batch {
        if ex.negatives.is_empty() {
            return Err(Error::InvalidArgument("question without negative tags".into()));
        }
        let p = table.row(Space::Question, ex.question);
        let adjusted = adjusted_question(p, &weights.w_p);
        let (loss, g_adj) = nce_term(
            &adjusted,
            (Space::Tag, ex.positive_tag),
            &ex.negatives,
            Space::Tag,
            table,
            scale,
            &mut grads,
        );
        total += loss;

        weights.w_p.accumulate_grad(&g_adj, p, scale, &mut grads.w_p);
        let w_p = weights.w_p.clone();
        let g_p = grads.row(Space::Question, ex.question, dim);
        for (k, g) in g_p.iter_mut().enumerate() {
            *g += scale * w_p.at(k) * g_adj[k];
        }
    }
    Ok((total * scale, grads))
}
