//! Dense document vectors keyed by doc_id.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clients::{embed, ClientError, Embedder};
use crate::corpus::Corpus;
use crate::scalar::Scalar;

pub const STORE_FORMAT: &str = "sunar-embeddings";
pub const STORE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("embedding failed for {doc_id:?}: {source}")]
    Client {
        doc_id: String,
        #[source]
        source: ClientError,
    },
    #[error("vector for {doc_id:?} has length {got}, store dim is {expected}")]
    Dimension {
        doc_id: String,
        expected: usize,
        got: usize,
    },
    #[error("embedding dim must be >= 1")]
    ZeroDim,
    #[error("duplicate vector for {0:?}")]
    Duplicate(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("store file {path} is not readable: {reason}")]
    Format { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
struct StoredVector<S> {
    id: String,
    vector: Vec<S>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
struct StoreFile<S> {
    format: String,
    version: u32,
    dim: usize,
    vectors: Vec<StoredVector<S>>,
}

/// Fixed-dimension vectors in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore<S> {
    dim: usize,
    ids: Vec<String>,
    vectors: Vec<Vec<S>>,
    by_id: HashMap<String, usize>,
}

impl<S: Scalar> EmbeddingStore<S> {
    pub fn new(dim: usize) -> Result<Self, EmbeddingError> {
        if dim == 0 {
            return Err(EmbeddingError::ZeroDim);
        }
        Ok(Self {
            dim,
            ids: Vec::new(),
            vectors: Vec::new(),
            by_id: HashMap::new(),
        })
    }

    pub fn insert(&mut self, doc_id: impl Into<String>, vector: Vec<S>) -> Result<(), EmbeddingError> {
        let doc_id = doc_id.into();
        if vector.len() != self.dim {
            return Err(EmbeddingError::Dimension {
                doc_id,
                expected: self.dim,
                got: vector.len(),
            });
        }
        if self.by_id.contains_key(&doc_id) {
            return Err(EmbeddingError::Duplicate(doc_id));
        }
        self.by_id.insert(doc_id.clone(), self.ids.len());
        self.ids.push(doc_id);
        self.vectors.push(vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn get(&self, doc_id: &str) -> Option<&[S]> {
        self.by_id.get(doc_id).map(|&i| self.vectors[i].as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[S])> {
        self.ids
            .iter()
            .map(String::as_str)
            .zip(self.vectors.iter().map(Vec::as_slice))
    }

    /// True when every corpus document has exactly one vector.
    pub fn covers(&self, corpus: &Corpus) -> bool {
        corpus.len() == self.len() && corpus.iter().all(|d| self.by_id.contains_key(&d.doc_id))
    }

    /// Returns a copy with every component multiplied by `factor`.
    pub fn scaled(&self, factor: S) -> Self {
        let mut out = self.clone();
        for v in &mut out.vectors {
            for x in v.iter_mut() {
                *x = *x * factor;
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), EmbeddingError> {
        let io = |source| EmbeddingError::Io {
            path: path.display().to_string(),
            source,
        };
        let file = StoreFile {
            format: STORE_FORMAT.into(),
            version: STORE_VERSION,
            dim: self.dim,
            vectors: self
                .iter()
                .map(|(id, v)| StoredVector {
                    id: id.to_string(),
                    vector: v.to_vec(),
                })
                .collect(),
        };
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        serde_json::to_writer(&mut w, &file).map_err(|e| EmbeddingError::Format {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, EmbeddingError> {
        let fmt = |reason: String| EmbeddingError::Format {
            path: path.display().to_string(),
            reason,
        };
        let f = File::open(path).map_err(|source| EmbeddingError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let file: StoreFile<S> =
            serde_json::from_reader(BufReader::new(f)).map_err(|e| fmt(e.to_string()))?;
        if file.format != STORE_FORMAT {
            return Err(fmt(format!("unexpected format tag {:?}", file.format)));
        }
        if file.version != STORE_VERSION {
            return Err(fmt(format!("unsupported version {}", file.version)));
        }
        let mut store = Self::new(file.dim)?;
        for sv in file.vectors {
            store.insert(sv.id, sv.vector)?;
        }
        Ok(store)
    }
}

/// Embeds every document's full text, in corpus order.
pub fn embed_corpus<S: Scalar>(
    corpus: &Corpus,
    embedder: &dyn Embedder,
    dim: usize,
) -> Result<EmbeddingStore<S>, EmbeddingError> {
    let mut store = EmbeddingStore::new(dim)?;
    for doc in corpus.iter() {
        let v = embed(embedder, &doc.full_text(), dim).map_err(|source| match source {
            ClientError::Dimension { expected, got } => EmbeddingError::Dimension {
                doc_id: doc.doc_id.clone(),
                expected,
                got,
            },
            source => EmbeddingError::Client {
                doc_id: doc.doc_id.clone(),
                source,
            },
        })?;
        store.insert(
            doc.doc_id.clone(),
            v.into_iter().map(S::from_f64_lossy).collect(),
        )?;
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clients::scripted::{HashEmbedder, ScriptedEmbedder};
    use crate::corpus::Document;

    fn corpus(n: usize) -> Corpus {
        Corpus::from_documents((0..n).map(|i| Document::new(format!("d{i}"), format!("text {i}"))).collect())
            .unwrap()
    }

    #[test]
    fn scripted_mapping() {
        let c = Corpus::from_documents(vec![Document::new("d1", "one"), Document::new("d2", "two")]).unwrap();
        let mut e = ScriptedEmbedder::new(2);
        e.insert("one", vec![1.0, 0.0]);
        e.insert("two", vec![0.0, 1.0]);
        let s: EmbeddingStore<f64> = embed_corpus(&c, &e, 2).unwrap();
        assert_eq!(s.dim(), 2);
        assert_eq!(s.get("d1").unwrap(), &[1.0, 0.0]);
        assert_eq!(s.get("d2").unwrap(), &[0.0, 1.0]);
        assert!(s.covers(&c));
    }

    struct WrongDim;
    impl Embedder for WrongDim {
        fn dim(&self) -> usize {
            2
        }
        fn embed(&self, _: &str) -> Result<Vec<f64>, ClientError> {
            Ok(vec![0.0; 3])
        }
    }

    #[test]
    fn dimension_mismatch_names_doc() {
        let err = embed_corpus::<f64>(&corpus(1), &WrongDim, 2).unwrap_err();
        match err {
            EmbeddingError::Dimension { doc_id, expected, got } => {
                assert_eq!((doc_id.as_str(), expected, got), ("d0", 2, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn fixture_miss_carries_doc_context() {
        let err = embed_corpus::<f64>(&corpus(1), &ScriptedEmbedder::new(2), 2).unwrap_err();
        assert!(err.to_string().contains("\"d0\""));
    }

    #[test]
    fn hash_embedder_store_reproducible() {
        let c = corpus(50);
        let a: EmbeddingStore<f64> = embed_corpus(&c, &HashEmbedder::new(8), 8).unwrap();
        let b: EmbeddingStore<f64> = embed_corpus(&c, &HashEmbedder::new(8), 8).unwrap();
        assert_eq!(a, b);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        a.save(&p).unwrap();
        let back: EmbeddingStore<f64> = EmbeddingStore::load(&p).unwrap();
        assert_eq!(back, a);
    }
}
