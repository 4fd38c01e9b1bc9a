//! Corpus ingestion, tokenization and fixed-size chunking.
//!
//! Tokens are maximal runs of word characters (alphanumeric or `_`); every
//! other non-whitespace character is a token of its own. Chunks are rebuilt
//! by joining tokens with single spaces, so intra-document whitespace is not
//! preserved.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_CHUNK_SIZE: usize = 50;
pub const SUBSET_INCREMENT: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    #[serde(default, rename = "labels", skip_serializing_if = "Option::is_none")]
    pub gold_labels: Option<Vec<String>>,
    #[serde(default)]
    pub split: Split,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Document {
            id: id.into(),
            text: text.into(),
            gold_labels: None,
            split: Split::Train,
        }
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Self {
        self.gold_labels = Some(labels);
        self
    }

    pub fn token_count(&self) -> usize {
        tokenize(&self.text).len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub doc_id: String,
    pub index: usize,
    pub text: String,
    pub token_count: usize,
}

impl Chunk {
    /// Stable instance identifier used across scoring and refinement.
    pub fn instance_id(&self) -> String {
        format!("chunk:{}:{}", self.doc_id, self.index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    JsonLines,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    documents: Vec<Document>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSubset {
    pub ids: Vec<String>,
    pub seed: u64,
    pub size: usize,
}

#[derive(Deserialize)]
struct RawRecord {
    id: Option<serde_json::Value>,
    text: Option<String>,
    #[serde(default)]
    labels: Option<Vec<String>>,
    #[serde(default)]
    split: Option<String>,
}

impl Corpus {
    pub fn from_documents(documents: Vec<Document>) -> Result<Self> {
        let mut seen = HashSet::new();
        for doc in &documents {
            if !seen.insert(doc.id.as_str()) {
                return Err(Error::DuplicateId(doc.id.clone()));
            }
            if doc.text.trim().is_empty() {
                return Err(Error::Validation(format!(
                    "document {:?} has empty text",
                    doc.id
                )));
            }
        }
        Ok(Corpus { documents })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.id == id)
    }

    /// Documents in subset order.
    pub fn select(&self, subset: &CorpusSubset) -> Vec<&Document> {
        subset.ids.iter().filter_map(|id| self.get(id)).collect()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for doc in &self.documents {
            out.push_str(&serde_json::to_string(doc)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Reads a corpus file. Record numbers in errors are 1-based line numbers.
pub fn ingest(path: &Path, format: CorpusFormat) -> Result<Corpus> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match format {
        CorpusFormat::JsonLines => parse_jsonl(&content),
    }
}

pub fn parse_jsonl(content: &str) -> Result<Corpus> {
    let mut docs = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let id = match raw.id {
            Some(serde_json::Value::String(s)) => s,
            Some(serde_json::Value::Number(n)) => n.to_string(),
            Some(_) => {
                return Err(Error::Parse {
                    line: line_no,
                    message: "field \"id\" must be a string".into(),
                })
            }
            None => {
                return Err(Error::Parse {
                    line: line_no,
                    message: "missing field \"id\"".into(),
                })
            }
        };
        let text = raw.text.ok_or_else(|| Error::Parse {
            line: line_no,
            message: "missing field \"text\"".into(),
        })?;
        if text.trim().is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("document {id:?} has empty text"),
            });
        }
        let split = match raw.split.as_deref() {
            None | Some("train") => Split::Train,
            Some("test") => Split::Test,
            Some(other) => {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("unknown split {other:?}"),
                })
            }
        };
        docs.push(Document {
            id,
            text,
            gold_labels: raw.labels,
            split,
        });
    }
    Corpus::from_documents(docs)
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

pub fn tokenize(text: &str) -> Vec<&str> {
    let mut tokens = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if is_word_char(c) {
            if start.is_none() {
                start = Some(i);
            }
            continue;
        }
        if let Some(s) = start.take() {
            tokens.push(&text[s..i]);
        }
        if !c.is_whitespace() {
            tokens.push(&text[i..i + c.len_utf8()]);
        }
    }
    if let Some(s) = start {
        tokens.push(&text[s..]);
    }
    tokens
}

pub fn chunk_document(doc: &Document, chunk_size: usize) -> Result<Vec<Chunk>> {
    if chunk_size == 0 {
        return Err(Error::Config("chunk_size must be at least 1".into()));
    }
    let tokens = tokenize(&doc.text);
    if tokens.is_empty() {
        return Err(Error::EmptyDocument(doc.id.clone()));
    }
    Ok(tokens
        .chunks(chunk_size)
        .enumerate()
        .map(|(index, toks)| Chunk {
            doc_id: doc.id.clone(),
            index,
            text: toks.join(" "),
            token_count: toks.len(),
        })
        .collect())
}

pub fn chunk_documents<'a>(
    docs: impl IntoIterator<Item = &'a Document>,
    chunk_size: usize,
) -> Result<Vec<Chunk>> {
    let mut out = Vec::new();
    for doc in docs {
        out.extend(chunk_document(doc, chunk_size)?);
    }
    Ok(out)
}

/// Shuffles document ids with `seed` and takes the first `size`. Because the
/// permutation depends only on (corpus order, seed), a larger subset always
/// extends a smaller one.
pub fn sample_subset(corpus: &Corpus, seed: u64, size: usize) -> Result<CorpusSubset> {
    if size > corpus.len() {
        return Err(Error::Range(format!(
            "subset size {size} exceeds corpus size {}",
            corpus.len()
        )));
    }
    let mut ids: Vec<String> = corpus.documents.iter().map(|d| d.id.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    ids.truncate(size);
    Ok(CorpusSubset { ids, seed, size })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(n: usize) -> String {
        (0..n)
            .map(|i| format!("w{i}"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    #[test]
    fn tokenizer_detaches_punctuation() {
        assert_eq!(
            tokenize("Hello, world! it's  fine."),
            vec!["Hello", ",", "world", "!", "it", "'", "s", "fine", "."]
        );
        assert!(tokenize("   \n\t").is_empty());
        assert_eq!(tokenize("snake_case x"), vec!["snake_case", "x"]);
    }

    #[test]
    fn exact_chunk_boundary() {
        let doc = Document::new("d", words(50));
        let chunks = chunk_document(&doc, DEFAULT_CHUNK_SIZE).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].token_count, 50);
    }

    #[test]
    fn empty_document_is_rejected() {
        let doc = Document::new("blank", "   ");
        assert!(matches!(
            chunk_document(&doc, 50),
            Err(Error::EmptyDocument(id)) if id == "blank"
        ));
        assert!(matches!(
            chunk_document(&Document::new("x", "a"), 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn ingest_rejects_duplicates_and_missing_text() {
        let two =
            "{\"id\":\"d1\",\"text\":\"a b\"}\n{\"id\":\"d2\",\"text\":\"c\",\"labels\":[\"x\"]}\n";
        let corpus = parse_jsonl(two).unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(
            corpus.get("d2").unwrap().gold_labels,
            Some(vec!["x".to_string()])
        );

        let dup = "{\"id\":\"d1\",\"text\":\"a\"}\n{\"id\":\"d1\",\"text\":\"b\"}\n";
        match parse_jsonl(dup) {
            Err(Error::DuplicateId(id)) => assert_eq!(id, "d1"),
            other => panic!("expected duplicate id error, got {other:?}"),
        }

        let missing =
            "{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"b\",\"text\":\"y\"}\n{\"id\":\"c\"}\n";
        match parse_jsonl(missing) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("text"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }

        assert!(matches!(
            parse_jsonl("not json\n"),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn subset_prefix_and_bounds() {
        let docs = (0..3000)
            .map(|i| Document::new(format!("d{i}"), "text"))
            .collect();
        let corpus = Corpus::from_documents(docs).unwrap();
        assert!(sample_subset(&corpus, 7, 0).unwrap().ids.is_empty());
        let a = sample_subset(&corpus, 7, SUBSET_INCREMENT).unwrap();
        let b = sample_subset(&corpus, 7, 2 * SUBSET_INCREMENT).unwrap();
        assert_eq!(a.ids[..], b.ids[..SUBSET_INCREMENT]);
        let full = sample_subset(&corpus, 7, 3000).unwrap();
        let unique: HashSet<_> = full.ids.iter().collect();
        assert_eq!(unique.len(), 3000);
        assert!(matches!(
            sample_subset(&corpus, 7, 3001),
            Err(Error::Range(_))
        ));
    }
}
