//! Binary embedding cache.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SEMB" | version u32 | dim u32 | count u32 | config_len u32 | config (UTF-8 JSON)
//! count x ( id_len u32 | id (UTF-8) | dim x f32 )
//! ```

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::RwLock;

use super::{EmbeddingMatrix, EmbeddingProvider, EmbeddingRequest};
use crate::error::{Error, Result};

pub const CACHE_MAGIC: &[u8; 4] = b"SEMB";
pub const CACHE_VERSION: u32 = 1;

fn put_u32<W: Write>(w: &mut W, v: usize, what: &str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::format(format!("{what} {v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_matrix<W: Write>(mut w: W, matrix: &EmbeddingMatrix) -> Result<()> {
    w.write_all(CACHE_MAGIC)?;
    w.write_all(&CACHE_VERSION.to_le_bytes())?;
    put_u32(&mut w, matrix.dim(), "dimension")?;
    put_u32(&mut w, matrix.len(), "row count")?;
    let config = serde_json::to_vec(matrix.config())?;
    put_u32(&mut w, config.len(), "config length")?;
    w.write_all(&config)?;
    for (i, id) in matrix.ids().iter().enumerate() {
        put_u32(&mut w, id.len(), "id length")?;
        w.write_all(id.as_bytes())?;
        for v in matrix.row(i) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::format(format!("truncated cache: expected {n} bytes of {what} at offset {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn read_matrix<R: Read>(mut r: R) -> Result<EmbeddingMatrix> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    if c.take(4, "magic")? != CACHE_MAGIC {
        return Err(Error::format("bad magic, not an embedding cache"));
    }
    let version = c.u32("version")? as u32;
    if version != CACHE_VERSION {
        return Err(Error::format(format!("unsupported cache version {version}")));
    }
    let dim = c.u32("dimension")?;
    if dim == 0 {
        return Err(Error::format("cache dimension is zero"));
    }
    let count = c.u32("row count")?;
    let config_len = c.u32("config length")?;
    let config: serde_json::Value = serde_json::from_slice(c.take(config_len, "config")?)
        .map_err(|e| Error::format(format!("cache config is not JSON: {e}")))?;
    // Each row needs at least its id length and values; reject absurd counts
    // before allocating.
    let min_row = 4 + dim * 4;
    if count.saturating_mul(min_row) > buf.len() - c.pos {
        return Err(Error::format(format!("truncated cache: {count} rows announced")));
    }
    let mut ids = Vec::with_capacity(count);
    let mut data = Vec::with_capacity(count * dim);
    for _ in 0..count {
        let len = c.u32("id length")?;
        let id = std::str::from_utf8(c.take(len, "id")?)
            .map_err(|_| Error::format("row id is not UTF-8"))?
            .to_string();
        let values = c.take(dim * 4, "row values")?;
        data.extend(values.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])));
        ids.push(id);
    }
    if c.pos != buf.len() {
        return Err(Error::format(format!("{} trailing bytes after last row", buf.len() - c.pos)));
    }
    EmbeddingMatrix::new(dim, ids, data, config).map_err(|e| Error::format(e.to_string()))
}

pub fn cache_write(path: &Path, matrix: &EmbeddingMatrix) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_matrix(std::io::BufWriter::new(file), matrix)
}

pub fn cache_read(path: &Path) -> Result<EmbeddingMatrix> {
    read_matrix(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Memoizing provider. Answers are keyed by request fingerprint and can be
/// persisted in the cache format (row ids are the hex fingerprints).
pub struct CachingProvider<P> {
    inner: P,
    memo: RwLock<HashMap<String, Vec<f32>>>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl<P: EmbeddingProvider> CachingProvider<P> {
    pub fn new(inner: P) -> Self {
        CachingProvider {
            inner,
            memo: RwLock::new(HashMap::new()),
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        }
    }

    /// Wraps `inner`, preloading answers from `path` when it exists. A memo
    /// written under a different provider configuration is rejected.
    pub fn open(inner: P, path: &Path) -> Result<Self> {
        let provider = Self::new(inner);
        if path.exists() {
            let matrix = cache_read(path)?;
            if *matrix.config() != provider.config() {
                return Err(Error::format(format!(
                    "memo {} was written by provider {} but the current provider is {}",
                    path.display(),
                    matrix.config(),
                    provider.config()
                )));
            }
            if matrix.dim() != provider.inner.dim() {
                return Err(Error::format(format!(
                    "cache dimension {} does not match provider dimension {}",
                    matrix.dim(),
                    provider.inner.dim()
                )));
            }
            let mut memo = provider.memo.write().unwrap();
            for (i, id) in matrix.ids().iter().enumerate() {
                memo.insert(id.clone(), matrix.row(i).to_vec());
            }
        }
        Ok(provider)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let memo = self.memo.read().unwrap();
        let mut keys: Vec<&String> = memo.keys().collect();
        keys.sort();
        let mut data = Vec::with_capacity(keys.len() * self.inner.dim());
        for k in &keys {
            data.extend_from_slice(&memo[*k]);
        }
        let matrix = EmbeddingMatrix::new(
            self.inner.dim(),
            keys.into_iter().cloned().collect(),
            data,
            self.config(),
        )?;
        cache_write(path, &matrix)
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.memo.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for CachingProvider<P> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn config(&self) -> serde_json::Value {
        let mut config = self.inner.config();
        if let serde_json::Value::Object(map) = &mut config {
            map.insert("cache_keys".into(), "request-sha256".into());
        }
        config
    }

    fn embed_raw(&self, request: &EmbeddingRequest) -> Result<Vec<f32>> {
        let key = request.fingerprint_hex();
        if let Some(v) = self.memo.read().unwrap().get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(v.clone());
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let values = self.inner.embed_raw(request)?;
        self.memo.write().unwrap().insert(key, values.clone());
        Ok(values)
    }
}
