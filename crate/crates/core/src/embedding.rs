//! The shared query/question/tag vector space.
//!
//! Only the positive tag vector is ever stored. The negative-feedback vector
//! is always derived with [`negate_tag`], so `t⁻ = −t⁺` holds no matter how
//! training moves `t⁺`.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Corpus, QueryRecord};
use crate::error::{Error, Result};
use crate::jsonl;
use crate::vector;

/// Embedding size of the reference sentence encoder.
pub const ENCODER_DIM: usize = 384;
/// Default dimension for the built-in hashing embedder.
pub const DEFAULT_DIM: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    Query,
    Question,
    Tag,
}

impl Space {
    pub const ALL: [Space; 3] = [Space::Query, Space::Question, Space::Tag];
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Space::Query => "query",
            Space::Question => "question",
            Space::Tag => "tag",
        })
    }
}

/// Row-major vectors keyed by id, insertion ordered.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VectorSet {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
}

impl VectorSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    sets: [VectorSet; 3],
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbeddingRow {
    pub space: Space,
    pub id: String,
    pub vector: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            sets: Default::default(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn set(&self, space: Space) -> &VectorSet {
        &self.sets[space as usize]
    }

    pub fn len(&self) -> usize {
        self.sets.iter().map(VectorSet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn insert(&mut self, space: Space, id: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                actual: vector.len(),
            });
        }
        let id = id.into();
        let set = &mut self.sets[space as usize];
        if set.index.contains_key(&id) {
            return Err(Error::DuplicateId(format!("{space}:{id}")));
        }
        set.index.insert(id.clone(), set.ids.len());
        set.ids.push(id);
        set.data.extend(vector);
        Ok(())
    }

    pub fn position(&self, space: Space, id: &str) -> Option<usize> {
        self.set(space).position(id)
    }

    pub fn require_position(&self, space: Space, id: &str) -> Result<usize> {
        self.position(space, id)
            .ok_or_else(|| Error::unknown(space_kind(space), id))
    }

    pub fn row(&self, space: Space, pos: usize) -> &[f64] {
        &self.set(space).data[pos * self.dim..(pos + 1) * self.dim]
    }

    pub fn row_mut(&mut self, space: Space, pos: usize) -> &mut [f64] {
        let dim = self.dim;
        &mut self.sets[space as usize].data[pos * dim..(pos + 1) * dim]
    }

    pub fn get(&self, space: Space, id: &str) -> Option<&[f64]> {
        self.position(space, id).map(|p| self.row(space, p))
    }

    pub fn require(&self, space: Space, id: &str) -> Result<&[f64]> {
        self.get(space, id).ok_or_else(|| Error::unknown(space_kind(space), id))
    }

    pub fn normalize_all(&mut self) {
        let dim = self.dim;
        for set in &mut self.sets {
            set.data.chunks_mut(dim).for_each(vector::normalize);
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = EmbeddingRow> + '_ {
        Space::ALL.into_iter().flat_map(move |space| {
            self.set(space).ids.iter().enumerate().map(move |(p, id)| EmbeddingRow {
                space,
                id: id.clone(),
                vector: self.row(space, p).to_vec(),
            })
        })
    }

    pub fn from_rows(dim: usize, rows: impl IntoIterator<Item = EmbeddingRow>) -> Result<Self> {
        let mut table = EmbeddingTable::new(dim);
        for row in rows {
            table.insert(row.space, row.id, row.vector)?;
        }
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let rows: Vec<EmbeddingRow> = self.rows().collect();
        jsonl::write(path, &rows)
    }
}

fn space_kind(space: Space) -> &'static str {
    match space {
        Space::Query => "query",
        Space::Question => "question",
        Space::Tag => "tag",
    }
}

/// Loads `embeddings.jsonl` as stored; no normalization is applied.
pub fn load_embeddings(path: &Path, expected_dim: usize) -> Result<EmbeddingTable> {
    let rows: Vec<(usize, EmbeddingRow)> = jsonl::read(path)?;
    let mut table = EmbeddingTable::new(expected_dim);
    for (line, row) in rows {
        table.insert(row.space, row.id, row.vector).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashEmbedderConfig {
    pub dim: usize,
    pub seed: u64,
    /// Token n-grams up to this order are hashed.
    pub ngram: usize,
}

impl Default for HashEmbedderConfig {
    fn default() -> Self {
        HashEmbedderConfig {
            dim: DEFAULT_DIM,
            seed: 0,
            ngram: 1,
        }
    }
}

impl HashEmbedderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::InvalidArgument(format!("embedding dimension {} < 2", self.dim)));
        }
        if self.ngram == 0 {
            return Err(Error::InvalidArgument("n-gram order must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// 64-bit FNV-1a followed by a splitmix finalizer, keyed by `seed`.
fn feature_hash(feature: &str, seed: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for byte in feature.bytes() {
        h ^= u64::from(byte);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Signed feature hashing of the text's token n-grams, L2-normalized.
/// Text without tokens maps to the zero vector.
pub fn hash_embed(text: &str, config: &HashEmbedderConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let tokens = tokenize(text);
    let mut v = vec![0.0; config.dim];
    for n in 1..=config.ngram {
        for gram in tokens.windows(n) {
            let h = feature_hash(&gram.join(" "), config.seed);
            let bucket = (h % config.dim as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign;
        }
    }
    vector::normalize(&mut v);
    Ok(v)
}

pub fn negate_tag(t_pos: &[f64]) -> Vec<f64> {
    t_pos.iter().map(|x| -x).collect()
}

/// A user's answer to "is your question related to this tag?".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Feedback {
    #[serde(rename = "yes")]
    Positive,
    #[serde(rename = "no")]
    Negative,
}

impl Feedback {
    pub fn sign(self) -> f64 {
        match self {
            Feedback::Positive => 1.0,
            Feedback::Negative => -1.0,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Feedback::Positive => Feedback::Negative,
            Feedback::Negative => Feedback::Positive,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Feedback::Positive => "yes",
            Feedback::Negative => "no",
        }
    }
}

/// `t⁺` for positive feedback, `t⁻ = −t⁺` for negative.
pub fn signed_tag(t_pos: &[f64], feedback: Feedback) -> Vec<f64> {
    match feedback {
        Feedback::Positive => t_pos.to_vec(),
        Feedback::Negative => negate_tag(t_pos),
    }
}

/// Where initial vectors come from.
#[derive(Debug, Clone)]
pub enum EmbeddingSource<'a> {
    Hash(HashEmbedderConfig),
    /// Precomputed vectors; must cover every query, question and tag.
    Table(&'a EmbeddingTable),
}

/// Encodes every question, tag and query, L2-normalizing the result.
pub fn encode_corpus(corpus: &Corpus, queries: &[QueryRecord], source: &EmbeddingSource<'_>) -> Result<EmbeddingTable> {
    let items = corpus
        .questions()
        .iter()
        .map(|q| (Space::Question, q.id.as_str(), q.text()))
        .chain(
            corpus
                .tags()
                .ids()
                .map(|t| (Space::Tag, t, corpus.tags().text(t).unwrap_or(t).to_string())),
        )
        .chain(queries.iter().map(|q| (Space::Query, q.id.as_str(), q.text.clone())));

    match source {
        EmbeddingSource::Hash(config) => {
            config.validate()?;
            let mut table = EmbeddingTable::new(config.dim);
            for (space, id, text) in items {
                table.insert(space, id, hash_embed(&text, config)?)?;
            }
            Ok(table)
        }
        EmbeddingSource::Table(source) => {
            let mut table = EmbeddingTable::new(source.dim());
            for (space, id, _) in items {
                table.insert(space, id, source.require(space, id)?.to_vec())?;
            }
            table.normalize_all();
            Ok(table)
        }
    }
}
