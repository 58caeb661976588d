//! Embedding providers and an exact top-K cosine index.
//!
//! Search is a full scan — corpora here are desk-scale and exactness keeps
//! retrieval reproducible. The mock provider hashes tokens into a fixed
//! vector space so similar texts land near each other without any model.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, ProviderErrorKind, Result};
use crate::provider::RetryPolicy;

/// Magic bytes of the vector file header.
pub const VECTOR_MAGIC: &[u8; 4] = b"TGVE";
pub const VECTOR_FORMAT_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// Vector
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(pub Vec<f32>);

impl Vector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt()
    }
}

/// Standard cosine similarity, computed in f64.
pub fn cosine(a: &Vector, b: &Vector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.0.iter().zip(b.0.iter()) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

// ---------------------------------------------------------------------------
// VectorIndex
// ---------------------------------------------------------------------------

/// Exact cosine index over u64 ids (entity or edge ids).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VectorIndex {
    dim: usize,
    entries: BTreeMap<u64, Vector>,
}

impl VectorIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, id: u64) -> Option<&Vector> {
        self.entries.get(&id)
    }

    pub fn contains(&self, id: u64) -> bool {
        self.entries.contains_key(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&u64, &Vector)> {
        self.entries.iter()
    }

    pub fn insert(&mut self, id: u64, v: Vector) -> Result<()> {
        if !v.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "vector for id {id} has non-finite entries"
            )));
        }
        if v.norm() == 0.0 {
            return Err(Error::ZeroVector);
        }
        if self.entries.is_empty() {
            self.dim = v.dim();
        } else if v.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: v.dim(),
            });
        }
        self.entries.insert(id, v);
        Ok(())
    }

    /// Exact top-k by cosine, descending, ties broken by ascending id.
    /// Returns fewer than k when the index is smaller; empty index yields
    /// an empty list.
    pub fn top_k(&self, query: &Vector, k: usize) -> Result<Vec<(u64, f64)>> {
        if self.entries.is_empty() || k == 0 {
            return Ok(Vec::new());
        }
        let mut scored = Vec::with_capacity(self.entries.len());
        for (&id, v) in &self.entries {
            scored.push((id, cosine(query, v)?));
        }
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .expect("cosine is finite")
                .then(a.0.cmp(&b.0))
        });
        scored.truncate(k);
        Ok(scored)
    }
}

// ---------------------------------------------------------------------------
// Providers
// ---------------------------------------------------------------------------

pub trait EmbeddingProvider: Send + Sync {
    /// One vector per input text, order-preserving.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vector>>;

    fn dim(&self) -> usize;
}

/// Deterministic embedder: each lowercased token hashes to a pseudo-random
/// unit-scale vector and the text embeds as the L2-normalized token sum, so
/// shared vocabulary raises cosine similarity.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    dim: usize,
    seed: u64,
}

impl MockEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self { dim, seed }
    }

    fn embed_one(&self, text: &str) -> Vector {
        let mut acc = vec![0.0f64; self.dim];
        let tokens: Vec<String> = text.split_whitespace().map(|t| t.to_lowercase()).collect();
        if tokens.is_empty() {
            mix_token(&mut acc, fnv1a(text.as_bytes()) ^ self.seed);
        } else {
            for tok in &tokens {
                mix_token(&mut acc, fnv1a(tok.as_bytes()) ^ self.seed);
            }
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        Vector(acc.iter().map(|&v| (v / norm) as f32).collect())
    }
}

impl Default for MockEmbedder {
    fn default() -> Self {
        Self::new(64, 0x7467_7261)
    }
}

impl EmbeddingProvider for MockEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vector>> {
        if texts.is_empty() {
            return Err(Error::InvalidArgument("no texts to embed".into()));
        }
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }

    fn dim(&self) -> usize {
        self.dim
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn mix_token(acc: &mut [f64], hash: u64) {
    let mut state = hash;
    for slot in acc.iter_mut() {
        state = splitmix64(state);
        // map to [-1, 1)
        let unit = (state >> 11) as f64 / (1u64 << 53) as f64;
        *slot += unit * 2.0 - 1.0;
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// OpenAI-style HTTP embedding endpoint.
pub struct HttpEmbedder {
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub dim: usize,
    pub retry: RetryPolicy,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedRow>,
}

#[derive(Deserialize)]
struct EmbedRow {
    embedding: Vec<f32>,
}

impl EmbeddingProvider for HttpEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vector>> {
        if texts.is_empty() {
            return Err(Error::InvalidArgument("no texts to embed".into()));
        }
        let body = EmbedRequest {
            model: &self.model,
            input: texts,
        };
        let parsed: EmbedResponse = self.retry.run(|| {
            let mut req = ureq::post(&self.endpoint);
            if let Some(key) = &self.api_key {
                req = req.header("Authorization", &format!("Bearer {key}"));
            }
            let mut resp = req
                .send_json(&body)
                .map_err(crate::provider::classify_ureq_error)?;
            resp.body_mut().read_json().map_err(|e| {
                Error::provider(
                    ProviderErrorKind::Malformed,
                    format!("embedding response: {e}"),
                )
            })
        })?;
        if parsed.data.len() != texts.len() {
            return Err(Error::provider(
                ProviderErrorKind::Malformed,
                format!(
                    "expected {} embeddings, got {}",
                    texts.len(),
                    parsed.data.len()
                ),
            ));
        }
        Ok(parsed
            .data
            .into_iter()
            .map(|r| Vector(r.embedding))
            .collect())
    }

    fn dim(&self) -> usize {
        self.dim
    }
}

// ---------------------------------------------------------------------------
// Binary persistence
// ---------------------------------------------------------------------------

/// Write the index: header `TGVE | version u32 | count u64 | dim u32`
/// (little-endian) followed by count×dim f32 rows. Row ids go into `ids`,
/// serialized separately as the JSON sidecar.
pub fn write_vectors<W: Write>(index: &VectorIndex, mut w: W) -> Result<Vec<u64>> {
    w.write_all(VECTOR_MAGIC)?;
    w.write_all(&VECTOR_FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(index.len() as u64).to_le_bytes())?;
    w.write_all(&(index.dim() as u32).to_le_bytes())?;
    let mut ids = Vec::with_capacity(index.len());
    for (&id, vec) in index.iter() {
        ids.push(id);
        for &v in &vec.0 {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(ids)
}

pub fn read_vectors<R: Read>(mut r: R, ids: &[u64], path_label: &str) -> Result<VectorIndex> {
    let corrupt = |msg: String| Error::CorruptSnapshot(format!("{path_label}: {msg}"));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|e| corrupt(format!("short header: {e}")))?;
    if &magic != VECTOR_MAGIC {
        return Err(corrupt("bad magic".into()));
    }
    let mut u32buf = [0u8; 4];
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u32buf)
        .map_err(|e| corrupt(e.to_string()))?;
    let version = u32::from_le_bytes(u32buf);
    if version != VECTOR_FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: VECTOR_FORMAT_VERSION,
        });
    }
    r.read_exact(&mut u64buf)
        .map_err(|e| corrupt(e.to_string()))?;
    let count = u64::from_le_bytes(u64buf) as usize;
    r.read_exact(&mut u32buf)
        .map_err(|e| corrupt(e.to_string()))?;
    let dim = u32::from_le_bytes(u32buf) as usize;
    if ids.len() != count {
        return Err(corrupt(format!(
            "sidecar lists {} rows, file has {count}",
            ids.len()
        )));
    }
    let mut index = VectorIndex::new();
    let mut row = vec![0u8; dim * 4];
    for &id in ids {
        r.read_exact(&mut row)
            .map_err(|e| corrupt(format!("short row for id {id}: {e}")))?;
        let values = row
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        index.insert(id, Vector(values))?;
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| corrupt(e.to_string()))? != 0 {
        return Err(corrupt("trailing bytes".into()));
    }
    Ok(index)
}

pub fn save_vectors_to(path: &Path, index: &VectorIndex) -> Result<Vec<u64>> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    let ids = write_vectors(index, &mut w)?;
    w.flush()?;
    Ok(ids)
}

pub fn load_vectors_from(path: &Path, ids: &[u64]) -> Result<VectorIndex> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::CorruptSnapshot(format!("{}: {e}", path.display())))?;
    read_vectors(
        std::io::BufReader::new(file),
        ids,
        &path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
    )
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    fn v(values: &[f32]) -> Vector {
        Vector(values.to_vec())
    }

    #[test]
    fn cosine_basics() {
        assert_eq!(cosine(&v(&[1.0, 0.0]), &v(&[1.0, 0.0])).unwrap(), 1.0);
        assert_eq!(cosine(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        let c = cosine(&v(&[1.0, 1.0]), &v(&[1.0, 0.0])).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine(&v(&[1.0]), &v(&[1.0, 0.0])),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            cosine(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])),
            Err(Error::ZeroVector)
        ));
    }

    #[test]
    fn top_k_exact_with_tie_break() {
        let mut idx = VectorIndex::new();
        idx.insert(2, v(&[1.0, 0.0])).unwrap();
        idx.insert(1, v(&[1.0, 0.0])).unwrap();
        idx.insert(3, v(&[0.0, 1.0])).unwrap();
        let got = idx.top_k(&v(&[1.0, 0.0]), 2).unwrap();
        assert_eq!(got[0].0, 1); // tie on score 1.0 -> ascending id
        assert_eq!(got[1].0, 2);
        assert_eq!(got[0].1, 1.0);

        // k exceeding size returns everything
        let got = idx.top_k(&v(&[1.0, 1.0]), 20).unwrap();
        assert_eq!(got.len(), 3);

        // empty index -> empty list
        assert!(VectorIndex::new().top_k(&v(&[1.0]), 5).unwrap().is_empty());
    }

    #[test]
    fn top_k_matches_linear_scan_oracle() {
        let emb = MockEmbedder::new(16, 99);
        let mut idx = VectorIndex::new();
        let texts: Vec<String> = (0..50)
            .map(|i| format!("doc {} token{}", i, i % 7))
            .collect();
        let vecs = emb.embed(&texts).unwrap();
        for (i, vec) in vecs.into_iter().enumerate() {
            idx.insert(i as u64, vec).unwrap();
        }
        let q = emb.embed(&["query token3".to_string()]).unwrap().remove(0);
        let got = idx.top_k(&q, 5).unwrap();

        // independent scan
        let mut all: Vec<(u64, f64)> = idx
            .iter()
            .map(|(&id, vec)| (id, cosine(&q, vec).unwrap()))
            .collect();
        all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        assert_eq!(got, all[..5].to_vec());
    }

    #[test]
    fn mock_embedder_is_deterministic_and_unit_norm() {
        let emb = MockEmbedder::default();
        let a = emb.embed(&["revenue 2023 Q1".into()]).unwrap();
        let b = emb.embed(&["revenue 2023 Q1".into()]).unwrap();
        assert_eq!(a, b);
        assert!((a[0].norm() - 1.0).abs() < 1e-6);
        assert!((cosine(&a[0], &b[0]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mock_embedder_reflects_token_overlap() {
        let emb = MockEmbedder::default();
        let vs = emb
            .embed(&[
                "alpha beta gamma".into(),
                "alpha beta delta".into(),
                "zeta eta theta".into(),
            ])
            .unwrap();
        let near = cosine(&vs[0], &vs[1]).unwrap();
        let far = cosine(&vs[0], &vs[2]).unwrap();
        assert!(near > far, "near={near} far={far}");
    }

    #[test]
    fn vector_file_round_trip() {
        let emb = MockEmbedder::new(8, 7);
        let mut idx = VectorIndex::new();
        for (i, vec) in emb
            .embed(&["a".into(), "b".into(), "c".into()])
            .unwrap()
            .into_iter()
            .enumerate()
        {
            idx.insert(i as u64 * 10, vec).unwrap();
        }
        let mut buf = Vec::new();
        let ids = write_vectors(&idx, &mut buf).unwrap();
        assert_eq!(ids, vec![0, 10, 20]);
        assert_eq!(&buf[..4], VECTOR_MAGIC);
        let back = read_vectors(buf.as_slice(), &ids, "test").unwrap();
        assert_eq!(back, idx);
    }

    #[test]
    fn vector_file_detects_corruption() {
        let mut idx = VectorIndex::new();
        idx.insert(1, v(&[1.0, 2.0])).unwrap();
        let mut buf = Vec::new();
        let ids = write_vectors(&idx, &mut buf).unwrap();
        // truncated payload
        let short = &buf[..buf.len() - 2];
        assert!(matches!(
            read_vectors(short, &ids, "test"),
            Err(Error::CorruptSnapshot(_))
        ));
        // sidecar disagreement
        assert!(matches!(
            read_vectors(buf.as_slice(), &[1, 2], "test"),
            Err(Error::CorruptSnapshot(_))
        ));
    }
}
