//! The frozen text teacher: maps report text to a unit vector.
//!
//! Three providers share the [`TextEmbedder`] trait: a seeded feature-hashing
//! embedder that runs offline, a table of precomputed vectors loaded from disk,
//! and an HTTP client with an on-disk cache. None of them is ever trainable.

mod file;
mod hashed;
mod remote;

pub use file::{
    load_embeddings, load_vectors, read_embeddings, read_vectors, save_embeddings, write_embeddings, PrecomputedEmbedder,
};
pub use hashed::{hash_embed, normalize_text, HashEmbedder};
pub use remote::{HttpTransport, RemoteClient, RemoteConfig, RetryPolicy, Transport, TransportError};

use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_TEACHER_DIM: usize = 2048;

#[derive(Debug, Error)]
pub enum TeacherError {
    #[error("text is empty after whitespace normalization")]
    EmptyText,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("duplicate embedding id {0:?}")]
    DuplicateId(String),
    #[error("corrupt embedding file: {0}")]
    Corrupt(String),
    #[error("zero vector for {0:?}")]
    ZeroVector(String),
    #[error("no embedding for text with digest {0}")]
    Missing(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbeddingSource {
    Hashed,
    File,
    Remote,
}

/// A unit-norm teacher vector and the digest of the text it encodes.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherEmbedding {
    pub vector: Vec<f64>,
    pub source: EmbeddingSource,
    pub text_digest: String,
}

impl TeacherEmbedding {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// Hex SHA-256 of the whitespace-normalized text; the key for caches and tables.
pub fn text_digest(text: &str) -> String {
    hex::encode(Sha256::digest(normalize_text(text).as_bytes()))
}

/// Anything that turns text into a fixed-width unit vector.
pub trait TextEmbedder: Send + Sync {
    fn dim(&self) -> usize;

    fn embed(&self, text: &str) -> Result<TeacherEmbedding, TeacherError>;

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<TeacherEmbedding>, TeacherError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Scales `v` to unit length; returns the original norm.
pub(crate) fn normalize_in_place(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}
