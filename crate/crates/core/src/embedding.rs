//! Fixed 768-dimensional prompt embeddings.
//!
//! Without a table, a prompt's embedding is synthesized deterministically:
//! the prompt is trimmed and lower-cased, its UTF-8 bytes are hashed with
//! SHA-256, the 32-byte digest seeds a ChaCha20 generator, 768 standard
//! normal deviates are drawn by Box-Muller (each pair from two successive
//! 53-bit uniforms), and the result is scaled to unit length. These choices
//! are frozen; changing any of them changes every stored experiment.

use std::collections::HashMap;
use std::f64::consts::TAU;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const EMBEDDING_DIM: usize = 768;

#[derive(Debug, Clone, PartialEq)]
pub struct PromptEmbedding {
    pub prompt: String,
    vector: Vec<f64>,
}

impl PromptEmbedding {
    /// Wrap `vector`, rescaling it to unit norm.
    pub fn from_vector(prompt: impl Into<String>, vector: Vec<f64>) -> Result<Self> {
        let prompt = prompt.into();
        if vector.len() != EMBEDDING_DIM {
            return Err(Error::Format(format!(
                "embedding for {prompt:?} has {} values, expected {EMBEDDING_DIM}",
                vector.len()
            )));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format(format!(
                "embedding for {prompt:?} has non-finite entries"
            )));
        }
        let norm = vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Format(format!("embedding for {prompt:?} is the zero vector")));
        }
        let vector = vector.into_iter().map(|v| v / norm).collect();
        Ok(PromptEmbedding { prompt, vector })
    }

    pub fn vector(&self) -> &[f64] {
        &self.vector
    }
}

/// Trim surrounding whitespace and case-fold.
pub fn normalize_prompt(prompt: &str) -> String {
    prompt.trim().to_lowercase()
}

fn unit_uniform(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Hash-seeded pseudo-embedding, ignoring any table.
pub fn pseudo_embed(prompt: &str) -> Result<PromptEmbedding> {
    let key = normalize_prompt(prompt);
    if key.is_empty() {
        return Err(Error::Input("prompt is empty".into()));
    }
    let digest: [u8; 32] = Sha256::digest(key.as_bytes()).into();
    let mut rng = ChaCha20Rng::from_seed(digest);
    let mut vector = Vec::with_capacity(EMBEDDING_DIM);
    while vector.len() < EMBEDDING_DIM {
        let u1 = 1.0 - unit_uniform(&mut rng); // (0, 1]
        let u2 = unit_uniform(&mut rng);
        let r = (-2.0 * u1.ln()).sqrt();
        vector.push(r * (TAU * u2).cos());
        vector.push(r * (TAU * u2).sin());
    }
    PromptEmbedding::from_vector(key, vector)
}

pub fn embed(prompt: &str) -> Result<PromptEmbedding> {
    pseudo_embed(prompt)
}

/// Load a JSON object mapping prompt text to 768 numbers. Keys are
/// normalized like prompts and every vector is rescaled to unit norm.
pub fn load_embedding_table(path: &Path) -> Result<HashMap<String, PromptEmbedding>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embedding_table(&text)
}

pub fn parse_embedding_table(text: &str) -> Result<HashMap<String, PromptEmbedding>> {
    let doc: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Format(format!("embedding table is not valid JSON: {e}")))?;
    let entries = doc
        .as_object()
        .ok_or_else(|| Error::Format("embedding table must be a JSON object".into()))?;
    let mut table = HashMap::with_capacity(entries.len());
    for (prompt, value) in entries {
        let key = normalize_prompt(prompt);
        if key.is_empty() {
            return Err(Error::Format("embedding table contains an empty prompt".into()));
        }
        let values = value
            .as_array()
            .ok_or_else(|| Error::Format(format!("entry {prompt:?} is not an array")))?
            .iter()
            .map(|v| v.as_f64())
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| Error::Format(format!("entry {prompt:?} contains a non-number")))?;
        let emb = PromptEmbedding::from_vector(key.clone(), values)?;
        if table.insert(key, emb).is_some() {
            return Err(Error::Format(format!(
                "entry {prompt:?} duplicates another prompt after normalization"
            )));
        }
    }
    Ok(table)
}

/// Table-backed embedder falling back to [`pseudo_embed`].
#[derive(Debug, Clone, Default)]
pub struct Embedder {
    table: HashMap<String, PromptEmbedding>,
}

impl Embedder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_table(table: HashMap<String, PromptEmbedding>) -> Self {
        Embedder { table }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Ok(Self::with_table(load_embedding_table(path)?))
    }

    pub fn table_len(&self) -> usize {
        self.table.len()
    }

    pub fn embed(&self, prompt: &str) -> Result<PromptEmbedding> {
        match self.table.get(&normalize_prompt(prompt)) {
            Some(e) => Ok(e.clone()),
            None => pseudo_embed(prompt),
        }
    }
}

/// Cosine of the angle between two embeddings, clamped to `[-1, 1]`.
/// Self-similarity is exactly 1.
pub fn cosine_similarity(a: &PromptEmbedding, b: &PromptEmbedding) -> f64 {
    let dot = |u: &[f64], v: &[f64]| -> f64 { u.iter().zip(v).map(|(x, y)| x * y).sum() };
    let (aa, bb) = (dot(&a.vector, &a.vector), dot(&b.vector, &b.vector));
    (dot(&a.vector, &b.vector) / (aa * bb).sqrt()).clamp(-1.0, 1.0)
}

pub fn similarity_matrix(embeddings: &[PromptEmbedding]) -> Vec<Vec<f64>> {
    embeddings
        .iter()
        .map(|a| embeddings.iter().map(|b| cosine_similarity(a, b)).collect())
        .collect()
}
