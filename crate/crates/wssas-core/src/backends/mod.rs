//! Pluggable generative and embedding backends.
//!
//! Two implementations ship with the crate: a fully deterministic offline
//! stub pair ([`stub::StubEmbedder`], [`stub::StubGenerator`]) that makes
//! every downstream stage testable bit-reproducibly, and an HTTP client
//! ([`http::HttpBackend`]) speaking the OpenAI-compatible chat/embedding
//! wire format.

pub mod http;
pub mod stub;

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Environment variable holding the remote API credential.
pub const API_KEY_ENV: &str = "WSSAS_API_KEY";

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("unknown template id: {0}")]
    UnknownTemplate(String),
    #[error("embedding dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend configuration error: {0}")]
    Config(String),
    #[error("empty input sequence")]
    EmptyInput,
}

/// A fixed-length embedding. All vectors produced by one backend instance
/// share a dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn l2_norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|x| *x == 0.0)
    }

    pub fn zeros(dimension: usize) -> Self {
        Self(vec![0.0; dimension])
    }
}

/// Cosine similarity. Symmetric; 1.0 for identical non-zero vectors.
///
/// Two all-zero vectors (or one zero, one non-zero) yield 0.0 by definition
/// rather than an error: a zero embedding means "no signal", and no signal
/// is similar to nothing.
pub fn cosine(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, BackendError> {
    if u.dimension() != v.dimension() {
        return Err(BackendError::DimensionMismatch {
            expected: u.dimension(),
            actual: v.dimension(),
        });
    }
    let dot: f64 = u.0.iter().zip(&v.0).map(|(a, b)| a * b).sum();
    let nu = u.l2_norm();
    let nv = v.l2_norm();
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    Ok(dot / (nu * nv))
}

/// Prompt templates understood by every generative backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Summarize,
    GenQuestions,
    ExtractAnswer,
    Judge,
    Geval,
    Topics,
    Title,
}

impl TemplateId {
    pub const ALL: [TemplateId; 7] = [
        TemplateId::Summarize,
        TemplateId::GenQuestions,
        TemplateId::ExtractAnswer,
        TemplateId::Judge,
        TemplateId::Geval,
        TemplateId::Topics,
        TemplateId::Title,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TemplateId::Summarize => "summarize",
            TemplateId::GenQuestions => "gen_questions",
            TemplateId::ExtractAnswer => "extract_answer",
            TemplateId::Judge => "judge",
            TemplateId::Geval => "geval",
            TemplateId::Topics => "topics",
            TemplateId::Title => "title",
        }
    }
}

impl FromStr for TemplateId {
    type Err = BackendError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TemplateId::ALL
            .iter()
            .copied()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| BackendError::UnknownTemplate(s.to_owned()))
    }
}

/// One generation call: a template, its ordered text inputs, named scalar
/// parameters, and a seed (honored by remote backends that accept one; the
/// stub is pure and ignores it).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub template_id: TemplateId,
    pub inputs: Vec<String>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub seed: u64,
}

impl GenerationRequest {
    pub fn new(template_id: TemplateId, inputs: Vec<String>) -> Self {
        Self {
            template_id,
            inputs,
            params: BTreeMap::new(),
            seed: 0,
        }
    }

    pub fn with_param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_owned(), value);
        self
    }

    pub fn param(&self, key: &str) -> Option<f64> {
        self.params.get(key).copied()
    }
}

/// Text embedding backend. Implementations must be pure per instance:
/// identical text yields an identical vector, and outputs are
/// order-preserving with respect to inputs.
pub trait EmbeddingBackend: Send + Sync {
    fn dimension(&self) -> usize;

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError>;

    fn embed_one(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        let mut out = self.embed(&[text.to_owned()])?;
        out.pop().ok_or(BackendError::EmptyInput)
    }
}

/// Generative backend. `generate_batch` preserves request order; remote
/// implementations may fan requests out with bounded parallelism and
/// re-order results before returning.
pub trait GenerativeBackend: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError>;

    fn generate_batch(&self, requests: &[GenerationRequest]) -> Result<Vec<String>, BackendError> {
        requests.iter().map(|r| self.generate(r)).collect()
    }
}
