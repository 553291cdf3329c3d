//! Okapi BM25 over question texts.
//!
//! score(q, d) = Σ_t idf(t) · tf·(k1 + 1) / (tf + k1·(1 − b + b·dl/avgdl))
//! with the non-negative idf(t) = ln(1 + (N − df + 0.5) / (df + 0.5)).

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{tokenize, Corpus, IndexFields};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bm25Config {
    pub k1: f64,
    pub b: f64,
    pub fields: IndexFields,
    /// Terms dropped before indexing and querying. Empty by default.
    #[serde(default)]
    pub stopwords: BTreeSet<String>,
}

impl Default for Bm25Config {
    fn default() -> Self {
        Bm25Config {
            k1: 1.2,
            b: 0.75,
            fields: IndexFields::TitleAndBody,
            stopwords: BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Bm25Index {
    config: Bm25Config,
    /// Question ids in ascending order; postings refer to positions here.
    doc_ids: Vec<String>,
    doc_pos: HashMap<String, u32>,
    doc_lens: Vec<u32>,
    avg_len: f64,
    postings: HashMap<String, Vec<(u32, u32)>>,
}

impl Bm25Index {
    pub fn n_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    pub fn doc_len(&self, id: &str) -> Option<u32> {
        self.doc_pos.get(id).map(|&d| self.doc_lens[d as usize])
    }

    /// `(doc position, tf)` pairs, sorted by question id.
    pub fn postings(&self, term: &str) -> &[(u32, u32)] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn config(&self) -> &Bm25Config {
        &self.config
    }

    pub fn analyze(&self, text: &str) -> Vec<String> {
        let mut terms = tokenize(text);
        if !self.config.stopwords.is_empty() {
            terms.retain(|t| !self.config.stopwords.contains(t));
        }
        terms
    }

    fn idf(&self, df: usize) -> f64 {
        let n = self.doc_ids.len() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn term_weight(&self, tf: u32, doc: u32) -> f64 {
        let Bm25Config { k1, b, .. } = self.config;
        let tf = f64::from(tf);
        let dl = f64::from(self.doc_lens[doc as usize]);
        let norm = if self.avg_len > 0.0 {
            1.0 - b + b * dl / self.avg_len
        } else {
            1.0
        };
        tf * (k1 + 1.0) / (tf + k1 * norm)
    }

    fn score_all(&self, terms: &[String]) -> Vec<f64> {
        let mut scores = vec![0.0; self.doc_ids.len()];
        for term in terms {
            let postings = self.postings(term);
            if postings.is_empty() {
                continue;
            }
            let idf = self.idf(postings.len());
            for &(doc, tf) in postings {
                scores[doc as usize] += idf * self.term_weight(tf, doc);
            }
        }
        scores
    }
}

pub fn build_bm25_index(corpus: &Corpus, config: &Bm25Config) -> Result<Bm25Index> {
    if corpus.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    let mut records: Vec<_> = corpus.questions().iter().collect();
    records.sort_by(|a, b| a.id.cmp(&b.id));

    let mut index = Bm25Index {
        config: config.clone(),
        doc_ids: Vec::with_capacity(records.len()),
        doc_pos: HashMap::with_capacity(records.len()),
        doc_lens: Vec::with_capacity(records.len()),
        avg_len: 0.0,
        postings: HashMap::new(),
    };
    for (pos, record) in records.into_iter().enumerate() {
        let pos = pos as u32;
        let terms = index.analyze(&record.text_for(config.fields));
        let mut tf: HashMap<String, u32> = HashMap::new();
        for term in &terms {
            *tf.entry(term.clone()).or_default() += 1;
        }
        // Positions increase monotonically so every posting list stays sorted.
        for (term, count) in tf {
            index.postings.entry(term).or_default().push((pos, count));
        }
        index.doc_ids.push(record.id.clone());
        index.doc_pos.insert(record.id.clone(), pos);
        index.doc_lens.push(terms.len() as u32);
    }
    let total: u64 = index.doc_lens.iter().map(|&l| u64::from(l)).sum();
    index.avg_len = total as f64 / index.doc_lens.len() as f64;
    Ok(index)
}

pub fn bm25_score(index: &Bm25Index, query_terms: &[String], question_id: &str) -> Result<f64> {
    let doc = *index
        .doc_pos
        .get(question_id)
        .ok_or_else(|| Error::unknown("question", question_id))?;
    let mut score = 0.0;
    for term in query_terms {
        let postings = index.postings(term);
        if let Ok(i) = postings.binary_search_by_key(&doc, |&(d, _)| d) {
            score += index.idf(postings.len()) * index.term_weight(postings[i].1, doc);
        }
    }
    Ok(score)
}

/// Top-`k` question ids by BM25, descending, ties by ascending id.
pub fn retrieve_candidates(index: &Bm25Index, query_text: &str, k: usize) -> Result<Vec<String>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    let scores = index.score_all(&index.analyze(query_text));
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // doc positions are already id-ordered, so a stable sort keeps id ties ascending
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order.truncate(k);
    Ok(order.into_iter().map(|d| index.doc_ids[d].clone()).collect())
}
