//! Corpus documents and JSONL ingestion.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("duplicate doc_id {id:?} at line {line}")]
    Duplicate { id: String, line: usize },
    #[error("empty corpus")]
    Empty,
    #[error("invalid document {id:?}: {reason}")]
    Invalid { id: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: Option<String>,
    pub text: String,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            title: None,
            text: text.into(),
        }
    }

    pub fn with_title(mut self, title: impl Into<String>) -> Self {
        self.title = Some(title.into());
        self
    }

    /// Title and body joined, which is what gets indexed and embedded.
    pub fn full_text(&self) -> String {
        match &self.title {
            Some(t) if !t.is_empty() => format!("{t} {}", self.text),
            _ => self.text.clone(),
        }
    }
}

/// On-disk record: `{"id": ..., "title": ..., "contents": ...}`.
#[derive(Debug, Serialize, Deserialize)]
struct CorpusRecord {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    title: Option<String>,
    contents: String,
}

/// Ordered, duplicate-free document collection.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    docs: Vec<Document>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn from_documents(docs: Vec<Document>) -> Result<Self, CorpusError> {
        if docs.is_empty() {
            return Err(CorpusError::Empty);
        }
        let mut by_id = HashMap::with_capacity(docs.len());
        for (i, d) in docs.iter().enumerate() {
            validate(d)?;
            if by_id.insert(d.doc_id.clone(), i).is_some() {
                return Err(CorpusError::Duplicate {
                    id: d.doc_id.clone(),
                    line: i + 1,
                });
            }
        }
        Ok(Self { docs, by_id })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.by_id.get(doc_id).map(|&i| &self.docs[i])
    }

    pub fn position(&self, doc_id: &str) -> Option<usize> {
        self.by_id.get(doc_id).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Document> {
        self.docs.iter()
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), CorpusError> {
        let io = |source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut out = std::io::BufWriter::new(File::create(path).map_err(io)?);
        for d in &self.docs {
            let rec = CorpusRecord {
                id: d.doc_id.clone(),
                title: d.title.clone(),
                contents: d.text.clone(),
            };
            let line = serde_json::to_string(&rec).expect("record serializes");
            writeln!(out, "{line}").map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

fn validate(d: &Document) -> Result<(), CorpusError> {
    if d.doc_id.is_empty() {
        return Err(CorpusError::Invalid {
            id: d.doc_id.clone(),
            reason: "empty doc_id".into(),
        });
    }
    if d.text.is_empty() {
        return Err(CorpusError::Invalid {
            id: d.doc_id.clone(),
            reason: "empty text".into(),
        });
    }
    Ok(())
}

/// Reads a JSONL corpus, one document per non-blank line, preserving order.
pub fn ingest_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut docs = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                line: lineno,
                reason: e.to_string(),
            })?;
        if rec.id.is_empty() || rec.contents.is_empty() {
            return Err(CorpusError::Malformed {
                line: lineno,
                reason: "id and contents must be non-empty".into(),
            });
        }
        if seen.insert(rec.id.clone(), lineno).is_some() {
            return Err(CorpusError::Duplicate {
                id: rec.id,
                line: lineno,
            });
        }
        docs.push(Document {
            doc_id: rec.id,
            title: rec.title,
            text: rec.contents,
        });
    }
    Corpus::from_documents(docs)
}
