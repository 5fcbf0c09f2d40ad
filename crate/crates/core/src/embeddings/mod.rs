//! Contextualized target-token vectors.
//!
//! Vectors come from an [`EmbeddingProvider`]: a remote service speaking the
//! `/info` + `/embed` JSON protocol, a deterministic hash-seeded stub, or a
//! memoizing wrapper persisted in the binary cache format.

mod cache;
mod remote;
mod stub;

use std::collections::HashMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{ContextMode, Instance};
use crate::error::{list_ids, Error, Result};
use crate::exec::Execution;

pub use cache::{cache_read, cache_write, read_matrix, write_matrix, CachingProvider, CACHE_MAGIC, CACHE_VERSION};
pub use remote::{RemoteInfo, RemoteProvider};
pub use stub::StubProvider;

pub const DEFAULT_DIM: usize = 768;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("embedding vector is empty"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("embedding component {i} is not finite")));
        }
        Ok(EmbeddingVector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }
}

/// The context passed to a provider: the context tokens and the position of
/// the target inside them.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EmbeddingRequest {
    pub tokens: Vec<String>,
    pub target_index: usize,
    pub mode: ContextMode,
}

impl EmbeddingRequest {
    pub fn new(tokens: Vec<String>, target_index: usize, mode: ContextMode) -> Result<Self> {
        let req = EmbeddingRequest {
            tokens,
            target_index,
            mode,
        };
        req.validate()?;
        Ok(req)
    }

    pub fn from_instance(instance: &Instance, mode: ContextMode) -> Self {
        EmbeddingRequest {
            tokens: instance
                .context_tokens(mode)
                .iter()
                .map(|t| t.surface.clone())
                .collect(),
            target_index: instance.context_target_index(mode),
            mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_index >= self.tokens.len() {
            return Err(Error::domain(format!(
                "target index {} out of range for {} context tokens",
                self.target_index,
                self.tokens.len()
            )));
        }
        Ok(())
    }

    /// Stable content digest over (tokens, target index, mode).
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update((self.tokens.len() as u64).to_le_bytes());
        for token in &self.tokens {
            hasher.update((token.len() as u64).to_le_bytes());
            hasher.update(token.as_bytes());
        }
        hasher.update((self.target_index as u64).to_le_bytes());
        hasher.update([match self.mode {
            ContextMode::Phrasal => 0u8,
            ContextMode::Sentential => 1u8,
        }]);
        hasher.finalize().into()
    }

    pub fn fingerprint_hex(&self) -> String {
        self.fingerprint().iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;

    /// Configuration recorded alongside produced vectors (model, layer,
    /// pooling, seed, ...).
    fn config(&self) -> serde_json::Value;

    fn embed_raw(&self, request: &EmbeddingRequest) -> Result<Vec<f32>>;
}

/// Vector for the target token in the given context. The provider's answer
/// must have the advertised dimension and finite values.
pub fn embed(provider: &dyn EmbeddingProvider, request: &EmbeddingRequest) -> Result<EmbeddingVector> {
    request.validate()?;
    let values = provider.embed_raw(request)?;
    if values.len() != provider.dim() {
        return Err(Error::Protocol(format!(
            "provider returned {} values, expected {}",
            values.len(),
            provider.dim()
        )));
    }
    EmbeddingVector::new(values).map_err(|e| Error::Protocol(e.to_string()))
}

pub fn embed_batch(provider: &dyn EmbeddingProvider, instances: &[Instance], mode: ContextMode) -> Result<EmbeddingMatrix> {
    embed_batch_with(provider, instances, mode, Execution::default())
}

/// Embeds every instance; rows follow input order. Any failure fails the
/// whole batch.
pub fn embed_batch_with(
    provider: &dyn EmbeddingProvider,
    instances: &[Instance],
    mode: ContextMode,
    exec: Execution,
) -> Result<EmbeddingMatrix> {
    if instances.is_empty() {
        return Err(Error::domain("no instances to embed"));
    }
    let rows = exec.try_map_range(instances.len(), |i| {
        embed(provider, &EmbeddingRequest::from_instance(&instances[i], mode))
    })?;
    let mut config = provider.config();
    if let serde_json::Value::Object(map) = &mut config {
        map.insert("mode".to_string(), serde_json::Value::String(mode.to_string()));
    }
    let mut data = Vec::with_capacity(rows.len() * provider.dim());
    for row in rows {
        data.extend_from_slice(row.as_slice());
    }
    EmbeddingMatrix::new(
        provider.dim(),
        instances.iter().map(|i| i.id.clone()).collect(),
        data,
        config,
    )
}

/// Row-major `ids.len() x dim` matrix of vectors keyed by instance id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
    index: HashMap<String, usize>,
    config: serde_json::Value,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize, ids: Vec<String>, data: Vec<f32>, config: serde_json::Value) -> Result<Self> {
        if dim == 0 {
            return Err(Error::domain("embedding dimension must be positive"));
        }
        if data.len() != ids.len() * dim {
            return Err(Error::domain(format!(
                "{} values do not form {} rows of dimension {dim}",
                data.len(),
                ids.len()
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::domain(format!("duplicate embedding id {id}")));
            }
        }
        Ok(EmbeddingMatrix {
            dim,
            ids,
            data,
            index,
            config,
        })
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

    pub fn config(&self) -> &serde_json::Value {
        &self.config
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_by_id(&self, id: &str) -> Option<&[f32]> {
        self.index.get(id).map(|&i| self.row(i))
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Gathers the rows for `ids` (in that order) as an `f64` array. Fails
    /// listing every id without a row.
    pub fn select<S: AsRef<str>>(&self, ids: &[S]) -> Result<Array2<f64>> {
        let missing: Vec<&str> = ids
            .iter()
            .map(|s| s.as_ref())
            .filter(|id| !self.index.contains_key(*id))
            .collect();
        if !missing.is_empty() {
            return Err(Error::domain(format!(
                "{} id(s) have no embedding: {}",
                missing.len(),
                list_ids(&missing)
            )));
        }
        let mut out = Array2::zeros((ids.len(), self.dim));
        for (r, id) in ids.iter().enumerate() {
            let row = self.row(self.index[id.as_ref()]);
            for (dst, &src) in out.row_mut(r).iter_mut().zip(row) {
                *dst = src as f64;
            }
        }
        Ok(out)
    }

    pub fn to_array(&self) -> Array2<f64> {
        self.select(&self.ids).expect("all own ids present")
    }
}
