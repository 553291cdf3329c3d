//! Question/query data model, file ingestion, BM25 retrieval and splitting.

mod bm25;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;

pub use bm25::{bm25_score, build_bm25_index, retrieve_candidates, Bm25Config, Bm25Index};

/// Default candidate pool size.
pub const DEFAULT_CANDIDATES: usize = 20;

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: String,
    pub title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<String>,
    pub tags: BTreeSet<String>,
}

impl QuestionRecord {
    /// Title followed by the body, if any, separated by one space.
    pub fn text(&self) -> String {
        match &self.body {
            Some(body) if !body.is_empty() => format!("{} {}", self.title, body),
            _ => self.title.clone(),
        }
    }

    pub fn text_for(&self, fields: IndexFields) -> String {
        match fields {
            IndexFields::Title => self.title.clone(),
            IndexFields::TitleAndBody => self.text(),
        }
    }
}

/// Which question fields feed the lexical index.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexFields {
    Title,
    #[default]
    TitleAndBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub id: String,
    pub text: String,
    pub positives: Vec<String>,
    #[serde(default)]
    pub candidates: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct RawQuestion {
    id: String,
    title: String,
    #[serde(default)]
    body: Option<String>,
    tags: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct RawQuery {
    id: String,
    text: String,
    positives: Vec<String>,
    #[serde(default)]
    candidates: Option<Vec<String>>,
}

/// Tag texts plus the inverse tag → questions relation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TagVocabulary {
    texts: BTreeMap<String, String>,
    postings: BTreeMap<String, BTreeSet<String>>,
    order: Vec<String>,
}

impl TagVocabulary {
    fn build(questions: &[QuestionRecord]) -> Self {
        let mut vocab = TagVocabulary::default();
        for q in questions {
            for tag in &q.tags {
                vocab.texts.entry(tag.clone()).or_insert_with(|| tag_text(tag));
                vocab.postings.entry(tag.clone()).or_default().insert(q.id.clone());
            }
        }
        vocab.order = vocab.texts.keys().cloned().collect();
        vocab
    }

    /// The `i`-th tag id in ascending order.
    pub fn nth(&self, i: usize) -> Option<&str> {
        self.order.get(i).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }

    /// Tag ids in ascending order.
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.texts.keys().map(String::as_str)
    }

    pub fn text(&self, tag: &str) -> Option<&str> {
        self.texts.get(tag).map(String::as_str)
    }

    pub fn questions_with(&self, tag: &str) -> Option<&BTreeSet<String>> {
        self.postings.get(tag)
    }

    pub fn contains(&self, tag: &str) -> bool {
        self.texts.contains_key(tag)
    }
}

/// Tag ids such as `python-3.x` are embedded from their words.
fn tag_text(tag: &str) -> String {
    tag.replace(['-', '_'], " ")
}

/// Immutable collection of tagged questions.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    questions: Vec<QuestionRecord>,
    by_id: HashMap<String, usize>,
    vocab: TagVocabulary,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestStats {
    pub loaded: usize,
    pub skipped_untagged: usize,
}

impl Corpus {
    /// Builds a corpus, dropping questions without tags.
    pub fn from_records(records: impl IntoIterator<Item = QuestionRecord>) -> Result<(Self, IngestStats)> {
        let mut questions = Vec::new();
        let mut by_id = HashMap::new();
        let mut stats = IngestStats::default();
        for record in records {
            if record.tags.is_empty() {
                stats.skipped_untagged += 1;
                continue;
            }
            if by_id.insert(record.id.clone(), questions.len()).is_some() {
                return Err(Error::DuplicateId(record.id));
            }
            questions.push(record);
        }
        stats.loaded = questions.len();
        let vocab = TagVocabulary::build(&questions);
        Ok((
            Corpus {
                questions,
                by_id,
                vocab,
            },
            stats,
        ))
    }

    pub fn questions(&self) -> &[QuestionRecord] {
        &self.questions
    }

    pub fn get(&self, id: &str) -> Option<&QuestionRecord> {
        self.by_id.get(id).map(|&i| &self.questions[i])
    }

    pub fn require(&self, id: &str) -> Result<&QuestionRecord> {
        self.get(id).ok_or_else(|| Error::unknown("question", id))
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn tags(&self) -> &TagVocabulary {
        &self.vocab
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }
}

/// Reads `questions.jsonl`; untagged questions are skipped and counted.
pub fn ingest_questions(path: &Path) -> Result<(Corpus, IngestStats)> {
    let rows: Vec<(usize, RawQuestion)> = jsonl::read(path)?;
    let mut seen = HashSet::new();
    let mut records = Vec::with_capacity(rows.len());
    for (line, raw) in rows {
        if !seen.insert(raw.id.clone()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("duplicate question id `{}`", raw.id),
            });
        }
        records.push(QuestionRecord {
            id: raw.id,
            title: raw.title,
            body: raw.body,
            tags: raw.tags.into_iter().filter(|t| !t.is_empty()).collect(),
        });
    }
    Corpus::from_records(records)
}

/// Reads `queries.jsonl`. Queries without candidates get the BM25 top
/// [`DEFAULT_CANDIDATES`] when an index is supplied.
pub fn read_queries(path: &Path, corpus: &Corpus, index: Option<&Bm25Index>) -> Result<Vec<QueryRecord>> {
    let rows: Vec<(usize, RawQuery)> = jsonl::read(path)?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(rows.len());
    for (line, raw) in rows {
        let at = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        if !seen.insert(raw.id.clone()) {
            return Err(at(format!("duplicate query id `{}`", raw.id)));
        }
        let candidates = match raw.candidates {
            Some(c) => c,
            None => match index {
                Some(index) => retrieve_candidates(index, &raw.text, DEFAULT_CANDIDATES)?,
                None => return Err(at("query has no candidates and no index".into())),
            },
        };
        let query = QueryRecord {
            id: raw.id,
            text: raw.text,
            positives: raw.positives,
            candidates,
        };
        validate_query(&query, corpus).map_err(|e| at(e.to_string()))?;
        out.push(query);
    }
    Ok(out)
}

pub fn validate_query(query: &QueryRecord, corpus: &Corpus) -> Result<()> {
    if query.positives.is_empty() {
        return Err(Error::InvalidArgument(format!("query `{}` has no positives", query.id)));
    }
    let mut seen = HashSet::new();
    for c in &query.candidates {
        if !seen.insert(c.as_str()) {
            return Err(Error::InvalidArgument(format!(
                "query `{}` lists candidate `{c}` twice",
                query.id
            )));
        }
        corpus.require(c)?;
    }
    for p in &query.positives {
        if !seen.contains(p.as_str()) && corpus.get(p).is_none() {
            return Err(Error::unknown("question", p.clone()));
        }
    }
    Ok(())
}

pub fn write_queries(path: &Path, queries: &[QueryRecord]) -> Result<()> {
    jsonl::write(path, queries)
}

pub fn write_questions(path: &Path, corpus: &Corpus) -> Result<()> {
    jsonl::write(path, corpus.questions())
}

/// Seeded shuffle, then the first `round(fraction * n)` queries go to train.
pub fn split_dataset<T: Clone>(items: &[T], train_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    if items.is_empty() {
        return Err(Error::Empty("queries"));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (train_fraction * items.len() as f64).round() as usize;
    let train = order[..n_train].iter().map(|&i| items[i].clone()).collect();
    let test = order[n_train..].iter().map(|&i| items[i].clone()).collect();
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use super::*;

    fn q(id: &str, title: &str, tags: &[&str]) -> QuestionRecord {
        QuestionRecord {
            id: id.into(),
            title: title.into(),
            body: None,
            tags: tags.iter().map(|t| t.to_string()).collect(),
        }
    }

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn tokenize_rules() {
        assert_eq!(tokenize("How to pop() a dict"), vec!["how", "to", "pop", "a", "dict"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("C++  map"), vec!["c", "map"]);
        assert_eq!(tokenize("Ünïcode ÉTÉ"), vec!["ünïcode", "été"]);
    }

    #[test]
    fn ingest_skips_untagged() {
        let f = write_lines(&[
            r#"{"id":"1","title":"a","tags":["x"]}"#,
            r#"{"id":"2","title":"b","body":"more","tags":["x","y"]}"#,
            r#"{"id":"3","title":"c","tags":[]}"#,
            r#"{"id":"4","title":"d","tags":["y"]}"#,
        ]);
        let (corpus, stats) = ingest_questions(f.path()).unwrap();
        assert_eq!(stats.loaded, 3);
        assert_eq!(stats.skipped_untagged, 1);
        assert_eq!(corpus.require("2").unwrap().text(), "b more");
        let with_x: Vec<_> = corpus.tags().questions_with("x").unwrap().iter().collect();
        assert_eq!(with_x, ["1", "2"]);
    }

    #[test]
    fn ingest_empty_file() {
        let f = write_lines(&[]);
        let (corpus, stats) = ingest_questions(f.path()).unwrap();
        assert!(corpus.is_empty());
        assert_eq!(stats.loaded, 0);
    }

    #[test]
    fn ingest_missing_tags_names_line() {
        let f = write_lines(&[r#"{"id":"1","title":"a","tags":["x"]}"#, r#"{"id":"2","title":"b"}"#]);
        match ingest_questions(f.path()) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("tags"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn ingest_duplicate_id() {
        let f = write_lines(&[
            r#"{"id":"1","title":"a","tags":["x"]}"#,
            r#"{"id":"1","title":"b","tags":["x"]}"#,
        ]);
        assert!(matches!(ingest_questions(f.path()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn vocabulary_is_consistent() {
        let (corpus, _) = Corpus::from_records(vec![
            q("a", "t", &["x", "y"]),
            q("b", "t", &["y"]),
            q("c", "t", &["z", "x"]),
        ])
        .unwrap();
        let vocab = corpus.tags();
        for tag in vocab.ids() {
            for qid in vocab.questions_with(tag).unwrap() {
                assert!(corpus.require(qid).unwrap().tags.contains(tag));
            }
        }
        for question in corpus.questions() {
            for tag in &question.tags {
                assert!(vocab.questions_with(tag).unwrap().contains(&question.id));
            }
        }
        assert_eq!(vocab.text("x"), Some("x"));
    }

    #[test]
    fn queries_get_candidates_and_validate() {
        let (corpus, _) =
            Corpus::from_records(vec![q("a", "read a file", &["x"]), q("b", "sort a list", &["y"])]).unwrap();
        let index = build_bm25_index(&corpus, &Bm25Config::default()).unwrap();
        let f = write_lines(&[
            r#"{"id":"q1","text":"read file","positives":["a"]}"#,
            r#"{"id":"q2","text":"sort","positives":["b"],"candidates":["b"]}"#,
        ]);
        let queries = read_queries(f.path(), &corpus, Some(&index)).unwrap();
        assert_eq!(queries[0].candidates, vec!["a", "b"]);
        assert_eq!(queries[1].candidates, vec!["b"]);

        let bad = write_lines(&[r#"{"id":"q1","text":"x","positives":["zz"],"candidates":["a"]}"#]);
        assert!(read_queries(bad.path(), &corpus, None).is_err());
        let dup = write_lines(&[r#"{"id":"q1","text":"x","positives":["a"],"candidates":["a","a"]}"#]);
        assert!(read_queries(dup.path(), &corpus, None).is_err());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let items: Vec<u32> = (0..10).collect();
        let (train, test) = split_dataset(&items, 0.8, 7).unwrap();
        assert_eq!((train.len(), test.len()), (8, 2));
        let mut all: Vec<u32> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, items);
        assert_eq!(split_dataset(&items, 0.8, 7).unwrap(), (train, test));
        assert!(split_dataset(&items, 1.0, 7).is_err());
        assert!(split_dataset(&items, 0.0, 7).is_err());
        assert!(split_dataset::<u32>(&[], 0.5, 7).is_err());
    }

    #[test]
    fn reference_split_ratio() {
        let ratio: f64 = 13772.0 / (13772.0 + 1482.0);
        assert!((ratio - 0.903).abs() < 5e-4);
        let items: Vec<u32> = (0..15254).collect();
        let (train, test) = split_dataset(&items, ratio, 1).unwrap();
        assert_eq!((train.len(), test.len()), (13772, 1482));
    }

    proptest::proptest! {
        #[test]
        fn split_partitions(n in 1usize..200, frac in 0.01f64..0.99, seed: u64) {
            let items: Vec<usize> = (0..n).collect();
            let (train, test) = split_dataset(&items, frac, seed).unwrap();
            proptest::prop_assert_eq!(train.len(), (frac * n as f64).round() as usize);
            let train_set: HashSet<_> = train.iter().collect();
            proptest::prop_assert!(test.iter().all(|i| !train_set.contains(i)));
            proptest::prop_assert_eq!(train.len() + test.len(), n);
        }
    }
}
