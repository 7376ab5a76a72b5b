//! Text embeddings for nodes, relations and queries, and the frozen-encoder
//! teacher distribution derived from them.
//!
//! Embeddings either come from a precomputed `EMB1` file or from
//! [`hash_embed`], a deterministic character-trigram hasher used in tests and
//! desk-scale runs. Rows in an `EMB1` file are looked up by string id:
//! `node:<node id>`, `rel:<relation name>` and `query:<query id>`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{sigmoid, Matrix, Real};
use crate::quadgraph::QuadGraph;

pub const EMBEDDING_MAGIC: &[u8; 4] = b"EMB1";

/// Probabilities are clamped to `[PROB_EPS, 1 − PROB_EPS]` before any logarithm.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding file format error: {0}")]
    Format(String),
    #[error("row {row} has a non-finite entry")]
    NonFinite { row: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no embedding stored for id {0:?}")]
    UnknownId(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = EmbedError> = std::result::Result<T, E>;

pub fn node_key(id: u32) -> String {
    format!("node:{id}")
}

pub fn relation_key(name: &str) -> String {
    format!("rel:{name}")
}

pub fn query_key(query_id: &str) -> String {
    format!("query:{query_id}")
}

/// Dense table of `f32` rows addressed by string id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub normalized: bool,
    matrix: Matrix<f32>,
    index: HashMap<String, usize>,
}

impl EmbeddingTable {
    pub fn new(matrix: Matrix<f32>, index: HashMap<String, usize>, normalized: bool) -> Result<Self> {
        let table = Self {
            normalized,
            matrix,
            index,
        };
        table.validate()?;
        Ok(table)
    }

    fn validate(&self) -> Result<()> {
        for r in 0..self.rows() {
            let row = self.matrix.row(r);
            if row.iter().any(|x| !x.is_finite()) {
                return Err(EmbedError::NonFinite { row: r });
            }
            if self.normalized {
                let norm = row.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > 1e-4 {
                    return Err(EmbedError::Format(format!(
                        "row {r} has norm {norm} but the table is declared unit-normalized"
                    )));
                }
            }
        }
        if let Some((id, &row)) = self.index.iter().find(|(_, &row)| row >= self.rows()) {
            return Err(EmbedError::Format(format!("id {id:?} points at missing row {row}")));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn matrix(&self) -> &Matrix<f32> {
        &self.matrix
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index.get(id).map(|&r| self.matrix.row(r))
    }

    pub fn lookup(&self, id: &str) -> Result<&[f32]> {
        self.get(id).ok_or_else(|| EmbedError::UnknownId(id.to_string()))
    }

    /// Builds a table from `(id, vector)` pairs in order.
    pub fn from_pairs(pairs: Vec<(String, Vec<f32>)>, normalized: bool) -> Result<Self> {
        let dim = pairs.first().map_or(0, |(_, v)| v.len());
        let mut data = Vec::with_capacity(pairs.len() * dim);
        let mut index = HashMap::with_capacity(pairs.len());
        for (row, (id, v)) in pairs.into_iter().enumerate() {
            if v.len() != dim {
                return Err(EmbedError::DimensionMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
            data.extend_from_slice(&v);
            index.insert(id, row);
        }
        let rows = index.len().max(if dim == 0 { 0 } else { data.len() / dim });
        let matrix = Matrix::from_vec(rows, dim, data).map_err(|e| EmbedError::Format(e.to_string()))?;
        Self::new(matrix, index, normalized)
    }

    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(EMBEDDING_MAGIC)?;
        w.write_all(&(self.rows() as u64).to_le_bytes())?;
        w.write_all(&(self.dim() as u32).to_le_bytes())?;
        w.write_all(&[self.normalized as u8])?;
        for x in self.matrix.as_slice() {
            w.write_all(&x.to_le_bytes())?;
        }
        let mut ids: Vec<(&String, &usize)> = self.index.iter().collect();
        ids.sort_by_key(|(_, &r)| r);
        let trailer: serde_json::Map<String, serde_json::Value> = ids
            .into_iter()
            .map(|(k, &r)| (k.clone(), serde_json::Value::from(r)))
            .collect();
        serde_json::to_writer(&mut *w, &trailer).map_err(|e| EmbedError::Format(e.to_string()))?;
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() < 17 || &bytes[..4] != EMBEDDING_MAGIC {
            return Err(EmbedError::Format("missing EMB1 header".into()));
        }
        let rows = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
        let dim = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
        let normalized = match bytes[16] {
            0 => false,
            1 => true,
            b => return Err(EmbedError::Format(format!("bad normalized flag {b}"))),
        };
        if dim == 0 && rows > 0 {
            return Err(EmbedError::Format("dim must be positive".into()));
        }
        let body_end = rows
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| n.checked_add(17))
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| EmbedError::Format(format!("file too short for {rows} rows of dimension {dim}")))?;
        let data: Vec<f32> = bytes[17..body_end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(EmbedError::NonFinite { row: pos / dim });
        }
        let index: HashMap<String, usize> = serde_json::from_slice(&bytes[body_end..])
            .map_err(|e| EmbedError::Format(format!("bad id index trailer: {e}")))?;
        let matrix = Matrix::from_vec(rows, dim, data).map_err(|e| EmbedError::Format(e.to_string()))?;
        Self::new(matrix, index, normalized)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable> {
    EmbeddingTable::read(&mut BufReader::new(File::open(path)?))
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET ^ seed.wrapping_mul(FNV_PRIME);
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    // final avalanche so that low bits (the bucket) depend on every byte
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h
}

/// Unit-norm `d`-vector from signed feature hashing of lowercase character
/// trigrams (with a space on either side of the text). Empty text, or text
/// whose features cancel exactly, maps to `e_0`.
pub fn hash_embed(text: &str, d: usize, seed: u64) -> Vec<f32> {
    assert!(d >= 1, "embedding dimension must be positive");
    let mut out = vec![0f32; d];
    out[0] = 1.0;
    if text.is_empty() {
        return out;
    }
    let chars: Vec<char> = format!(" {} ", text.to_lowercase()).chars().collect();
    let mut acc = vec![0f64; d];
    let mut buf = String::new();
    for w in chars.windows(3) {
        buf.clear();
        buf.extend(w);
        let h = fnv1a(seed, buf.as_bytes());
        let bucket = (h % d as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        acc[bucket] += sign;
    }
    let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return out;
    }
    for (o, a) in out.iter_mut().zip(acc) {
        *o = (a / norm) as f32;
    }
    out
}

pub fn clamp_prob<T: Real>(p: T) -> T {
    let eps = T::from_f64(PROB_EPS);
    p.max(eps).min(T::one() - eps)
}

/// Teacher pseudo-labels `sigmoid(h_v · h_q)` for every node, clamped.
pub fn teacher_scores<T: Real>(nodes: &Matrix<T>, h_q: &[T]) -> Result<Vec<T>> {
    if nodes.cols() != h_q.len() {
        return Err(EmbedError::DimensionMismatch {
            expected: nodes.cols(),
            got: h_q.len(),
        });
    }
    Ok((0..nodes.rows())
        .map(|v| {
            let dot: T = nodes.row(v).iter().zip(h_q).map(|(&a, &b)| a * b).sum();
            clamp_prob(sigmoid(dot))
        })
        .collect())
}

/// Where node, relation and query vectors come from.
#[derive(Debug, Clone)]
pub enum EmbeddingProvider {
    Hash { dim: usize, seed: u64 },
    File(EmbeddingTable),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Hash,
    File,
}

impl EmbeddingProvider {
    pub fn dim(&self) -> usize {
        match self {
            EmbeddingProvider::Hash { dim, .. } => *dim,
            EmbeddingProvider::File(t) => t.dim(),
        }
    }

    fn text_or_key(&self, key: &str, text: &str) -> Result<Vec<f32>> {
        match self {
            EmbeddingProvider::Hash { dim, seed } => Ok(hash_embed(text, *dim, *seed)),
            EmbeddingProvider::File(t) => t.lookup(key).map(<[f32]>::to_vec),
        }
    }

    /// One row per node, in node-id order.
    pub fn node_embeddings(&self, graph: &QuadGraph) -> Result<Matrix<f32>> {
        let rows = graph
            .nodes()
            .iter()
            .enumerate()
            .map(|(i, n)| self.text_or_key(&node_key(i as u32), &n.text))
            .collect::<Result<Vec<_>>>()?;
        rows_to_matrix(rows, self.dim())
    }

    /// One row per relation name, in the given order.
    pub fn relation_embeddings(&self, names: &[String]) -> Result<Matrix<f32>> {
        let rows = names
            .iter()
            .map(|name| self.text_or_key(&relation_key(name), &name.replace('_', " ")))
            .collect::<Result<Vec<_>>>()?;
        rows_to_matrix(rows, self.dim())
    }

    pub fn encode_query(&self, query_id: &str, text: &str) -> Result<Vec<f32>> {
        self.text_or_key(&query_key(query_id), text)
    }
}

fn rows_to_matrix(rows: Vec<Vec<f32>>, dim: usize) -> Result<Matrix<f32>> {
    if rows.is_empty() {
        return Ok(Matrix::zeros(0, dim));
    }
    if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
        return Err(EmbedError::DimensionMismatch {
            expected: dim,
            got: bad.len(),
        });
    }
    Matrix::from_rows(&rows).map_err(|e| EmbedError::Format(e.to_string()))
}

pub fn encode_query(text: &str, query_id: &str, provider: &EmbeddingProvider) -> Result<Vec<f32>> {
    provider.encode_query(query_id, text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn table_2x4() -> EmbeddingTable {
        EmbeddingTable::from_pairs(
            vec![
                ("node:0".into(), vec![1.0, 0.0, 0.0, 0.0]),
                ("node:1".into(), vec![0.0, 0.6, 0.8, 0.0]),
            ],
            true,
        )
        .unwrap()
    }

    #[test]
    fn file_round_trip() {
        let t = table_2x4();
        let mut buf = Vec::new();
        t.write(&mut buf).unwrap();
        let back = EmbeddingTable::read(&mut buf.as_slice()).unwrap();
        assert_eq!((back.rows(), back.dim()), (2, 4));
        assert_eq!(back, t);
    }

    #[test]
    fn short_row_is_format_error() {
        // header says d = 4 but the body holds 2 rows of 3 floats
        let mut buf = Vec::new();
        buf.extend_from_slice(EMBEDDING_MAGIC);
        buf.extend_from_slice(&2u64.to_le_bytes());
        buf.extend_from_slice(&4u32.to_le_bytes());
        buf.push(0);
        for x in [1f32, 2.0, 3.0, 4.0, 5.0, 6.0] {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        buf.extend_from_slice(br#"{"a":0,"b":1}"#);
        assert!(matches!(EmbeddingTable::read(&mut buf.as_slice()), Err(EmbedError::Format(_))));
    }

    #[test]
    fn nan_row_is_rejected() {
        let t = EmbeddingTable::from_pairs(
            vec![("a".into(), vec![0.0, 1.0]), ("b".into(), vec![0.0, 1.0])],
            false,
        )
        .unwrap();
        let mut buf = Vec::new();
        t.write(&mut buf).unwrap();
        // second row, first float
        buf[17 + 8..17 + 12].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            EmbeddingTable::read(&mut buf.as_slice()),
            Err(EmbedError::NonFinite { row: 1 })
        ));
    }

    #[test]
    fn hash_embed_contract() {
        let a = hash_embed("abc", 8, 7);
        assert_eq!(a, hash_embed("abc", 8, 7));
        assert_ne!(a, hash_embed("abc", 8, 8));
        let mut e0 = vec![0.0; 5];
        e0[0] = 1.0;
        assert_eq!(hash_embed("", 5, 1), e0);
        for text in ["abc", "Hammerfest is in Finnmark", "x", "ünïcödé"] {
            for d in [1, 3, 16, 64] {
                let v = hash_embed(text, d, 42);
                let n: f64 = v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
                assert!((n - 1.0).abs() < 1e-6, "{text} {d} {n}");
            }
        }
    }

    #[test]
    fn hash_embed_is_platform_stable() {
        // frozen output; changes here break stored embedding files
        assert_eq!(hash_embed("abc", 4, 0), vec![0.0, 0.0, 0.0, -1.0]);
        assert_eq!(hash_embed("Oslo", 8, 7), vec![0.0, 0.5, -0.5, 0.0, 0.5, -0.5, 0.0, 0.0]);
        let counts = [1.0, 0.0, 1.0, 2.0, 2.0, 2.0, -4.0, -2.0];
        let expected: Vec<f32> = counts.iter().map(|c: &f64| (c / 34f64.sqrt()) as f32).collect();
        assert_eq!(hash_embed("Hammerfest is a town", 8, 3), expected);
    }

    #[test]
    fn teacher_values() {
        let nodes = Matrix::from_rows(&[vec![0.0f64, 1.0], vec![1.0, 0.0]]).unwrap();
        let p = teacher_scores(&nodes, &[1.0, 0.0]).unwrap();
        assert_eq!(p[0], 0.5);
        assert!((p[1] - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert!(teacher_scores(&nodes, &[1.0]).is_err());
    }

    #[test]
    fn teacher_ranking_matches_dot_product_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = 16;
        let rows: Vec<Vec<f64>> = (0..100)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let q: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let nodes = Matrix::from_rows(&rows).unwrap();
        let p = teacher_scores(&nodes, &q).unwrap();
        let dots: Vec<f64> = rows.iter().map(|r| r.iter().zip(&q).map(|(a, b)| a * b).sum()).collect();
        let mut by_dot: Vec<usize> = (0..100).collect();
        by_dot.sort_by(|&a, &b| dots[b].partial_cmp(&dots[a]).unwrap());
        let mut by_p: Vec<usize> = (0..100).collect();
        by_p.sort_by(|&a, &b| p[b].partial_cmp(&p[a]).unwrap());
        assert_eq!(by_dot, by_p);
        for i in 0..100 {
            for j in 0..100 {
                if dots[i] > dots[j] {
                    assert!(p[i] > p[j]);
                }
            }
        }
    }

    #[test]
    fn teacher_probabilities_are_clamped() {
        let nodes = Matrix::from_rows(&[vec![100.0f64], vec![-100.0], vec![0.0]]).unwrap();
        let p = teacher_scores(&nodes, &[1.0]).unwrap();
        assert!(p.iter().all(|&x| (PROB_EPS..=1.0 - PROB_EPS).contains(&x)));
        assert_eq!(p[1], PROB_EPS);
    }

    #[test]
    fn providers() {
        let hash = EmbeddingProvider::Hash { dim: 8, seed: 1 };
        assert_eq!(
            encode_query("who?", "q1", &hash).unwrap(),
            encode_query("who?", "q1", &hash).unwrap()
        );
        let table = EmbeddingTable::from_pairs(vec![(query_key("q1"), vec![0.5, -0.5])], false).unwrap();
        let file = EmbeddingProvider::File(table);
        assert_eq!(file.encode_query("q1", "ignored").unwrap(), vec![0.5, -0.5]);
        let err = file.encode_query("q2", "x").unwrap_err();
        assert!(err.to_string().contains("query:q2"));
    }
}
