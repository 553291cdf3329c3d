//! Deterministic synthetic Stack-Overflow-like dataset.
//!
//! Questions share a small set of generic "intent" titles and differ mostly
//! in their tags and tag-specific body words, so short queries made from an
//! intent title are ambiguous until the tags are clarified.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{
    build_bm25_index, retrieve_candidates, Bm25Config, Corpus, QueryRecord, QuestionRecord, DEFAULT_CANDIDATES,
};
use crate::error::Result;

const TAGS: [(&str, [&str; 3]); 20] = [
    ("python", ["pip", "interpreter", "indentation"]),
    ("java", ["jvm", "maven", "spring"]),
    ("rust", ["cargo", "borrow", "lifetime"]),
    ("javascript", ["npm", "promise", "callback"]),
    ("sql", ["select", "join", "schema"]),
    ("regex", ["pattern", "capture", "lookahead"]),
    ("json", ["serialize", "payload", "schema"]),
    ("http", ["header", "status", "endpoint"]),
    ("async", ["await", "future", "eventloop"]),
    ("pandas", ["dataframe", "groupby", "series"]),
    ("numpy", ["ndarray", "broadcast", "vectorize"]),
    ("docker", ["container", "image", "compose"]),
    ("git", ["commit", "branch", "rebase"]),
    ("linux", ["bash", "kernel", "permission"]),
    ("windows", ["registry", "powershell", "dll"]),
    ("css", ["selector", "flexbox", "stylesheet"]),
    ("html", ["element", "form", "attribute"]),
    ("react", ["component", "hook", "props"]),
    ("android", ["activity", "gradle", "emulator"]),
    ("excel", ["spreadsheet", "formula", "cell"]),
];

const INTENTS: [&str; 25] = [
    "how to read a file line by line",
    "sort a list of objects by a field",
    "convert a string to a date",
    "remove duplicates from a collection",
    "parse command line arguments",
    "handle errors when the request fails",
    "merge two dictionaries into one",
    "iterate over rows and update values",
    "split a string on whitespace",
    "install a package behind a proxy",
    "measure elapsed time of a function",
    "run tasks in parallel with a pool",
    "find the index of the maximum element",
    "format a number with leading zeros",
    "check whether a key exists",
    "write output to a new file",
    "connect to a remote database server",
    "escape special characters in a string",
    "debug a memory leak in production",
    "filter items matching a condition",
    "reverse the order of a list",
    "read environment variables at startup",
    "download a file over the network",
    "compare two dates for equality",
    "count occurrences of each word",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyConfig {
    pub seed: u64,
    pub variants_per_intent: usize,
    pub queries: usize,
    /// Chance that a query carries one tag-specific hint word.
    pub hint_rate: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            seed: 7,
            variants_per_intent: 8,
            queries: 120,
            hint_rate: 0.3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyDataset {
    pub corpus: Corpus,
    pub queries: Vec<QueryRecord>,
}

pub fn tag_names() -> impl Iterator<Item = &'static str> {
    TAGS.iter().map(|(t, _)| *t)
}

pub fn generate(config: &ToyConfig) -> Result<ToyDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut records = Vec::new();
    for (i, intent) in INTENTS.iter().enumerate() {
        for v in 0..config.variants_per_intent {
            let n_tags = rng.gen_range(2..=3);
            let picked: Vec<usize> = rand::seq::index::sample(&mut rng, TAGS.len(), n_tags).into_vec();
            let mut body = Vec::new();
            for &t in &picked {
                let (name, words) = TAGS[t];
                body.push(name.to_string());
                for w in words.choose_multiple(&mut rng, 2) {
                    body.push(w.to_string());
                }
            }
            body.shuffle(&mut rng);
            records.push(QuestionRecord {
                id: format!("q{i:02}{v:02}"),
                title: intent.to_string(),
                body: Some(body.join(" ")),
                tags: picked.iter().map(|&t| TAGS[t].0.to_string()).collect::<BTreeSet<_>>(),
            });
        }
    }
    let (corpus, _) = Corpus::from_records(records)?;
    let index = build_bm25_index(&corpus, &Bm25Config::default())?;

    let mut queries = Vec::with_capacity(config.queries);
    for n in 0..config.queries {
        let target = &corpus.questions()[rng.gen_range(0..corpus.len())];
        let mut words: Vec<&str> = target.title.split_whitespace().collect();
        // drop one word so queries are a little shorter than titles
        let drop = rng.gen_range(0..words.len());
        words.remove(drop);
        let mut text = words.join(" ");
        if rng.gen_bool(config.hint_rate) {
            let tag = target.tags.iter().collect::<Vec<_>>()[rng.gen_range(0..target.tags.len())];
            let (_, hints) = TAGS.iter().find(|(t, _)| t == tag).expect("toy tag");
            text.push(' ');
            text.push_str(hints[rng.gen_range(0..hints.len())]);
        }
        let mut candidates = retrieve_candidates(&index, &text, DEFAULT_CANDIDATES)?;
        if !candidates.contains(&target.id) {
            let last = candidates.len() - 1;
            candidates[last] = target.id.clone();
        }
        queries.push(QueryRecord {
            id: format!("u{n:03}"),
            text,
            positives: vec![target.id.clone()],
            candidates,
        });
    }
    Ok(ToyDataset { corpus, queries })
}
