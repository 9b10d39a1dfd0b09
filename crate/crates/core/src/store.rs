//! Embedding matrices and their on-disk formats.
//!
//! Two formats are supported:
//!
//! * `EMB1` binary: the magic bytes `EMB1`, little-endian `u32` row count `n`,
//!   little-endian `u32` dimension `d`, then `n * d` little-endian `f32` values in
//!   row-major order. Document ids live in a sidecar file `<path>.ids`, one id per
//!   line, in row order.
//! * JSONL: one `{"id": ..., "vector": [...]}` object per line. Meant for small
//!   fixtures.
//!
//! Every loader validates the full matrix before returning it; NaN and infinite
//! entries are rejected rather than sanitized.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::ops::Deref;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"EMB1";
pub const HEADER_LEN: usize = 12;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic bytes: expected EMB1")]
    BadMagic,
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("payload holds {found} bytes, header promises {expected}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("id sidecar lists {found} ids for {expected} rows")]
    IdCountMismatch { expected: usize, found: usize },
    #[error("row {row}: dimension {found}, expected {expected}")]
    DimensionMismatch {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("invalid id {0:?}: ids must be non-empty and contain no whitespace")]
    InvalidId(String),
    #[error("non-finite value in row {row} ({id}), dimension {dim}")]
    NonFinite { row: usize, id: String, dim: usize },
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

impl StoreError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        StoreError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, StoreError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Binary,
    Jsonl,
}

impl Format {
    /// `.jsonl` paths are JSONL, everything else is EMB1.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("jsonl") => Format::Jsonl,
            _ => Format::Binary,
        }
    }
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "binary" | "emb1" => Ok(Format::Binary),
            "jsonl" => Ok(Format::Jsonl),
            other => Err(format!("unknown embedding format {other:?}")),
        }
    }
}

/// A single dense vector. Always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f32>);

impl Embedding {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(StoreError::ZeroDimension);
        }
        if let Some(dim) = values.iter().position(|v| !v.is_finite()) {
            return Err(StoreError::NonFinite {
                row: 0,
                id: String::new(),
                dim,
            });
        }
        Ok(Embedding(values))
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

impl Deref for Embedding {
    type Target = [f32];

    fn deref(&self) -> &[f32] {
        &self.0
    }
}

/// Id-indexed `n x d` matrix of `f32` embeddings, immutable once built.
#[derive(Debug, Clone)]
pub struct EmbeddingMatrix {
    ids: Vec<String>,
    dim: usize,
    data: Vec<f32>,
    index: HashMap<String, usize>,
}

impl PartialEq for EmbeddingMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.ids == other.ids
            && self.dim == other.dim
            && self.data.len() == other.data.len()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && !id.chars().any(char::is_whitespace)
}

impl EmbeddingMatrix {
    pub fn new(ids: Vec<String>, dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(StoreError::ZeroDimension);
        }
        if data.len() != ids.len() * dim {
            return Err(StoreError::TruncatedPayload {
                expected: ids.len() * dim * 4,
                found: data.len() * 4,
            });
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (row, id) in ids.iter().enumerate() {
            if !valid_id(id) {
                return Err(StoreError::InvalidId(id.clone()));
            }
            if index.insert(id.clone(), row).is_some() {
                return Err(StoreError::DuplicateId(id.clone()));
            }
        }
        for (row, chunk) in data.chunks_exact(dim).enumerate() {
            if let Some(d) = chunk.iter().position(|v| !v.is_finite()) {
                return Err(StoreError::NonFinite {
                    row,
                    id: ids[row].clone(),
                    dim: d,
                });
            }
        }
        Ok(EmbeddingMatrix {
            ids,
            dim,
            data,
            index,
        })
    }

    /// Builds a matrix from `(id, vector)` rows; every row must have the same length.
    pub fn from_rows<I, S>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f32>)>,
        S: Into<String>,
    {
        let mut ids = Vec::new();
        let mut data = Vec::new();
        let mut dim = None;
        for (row, (id, vector)) in rows.into_iter().enumerate() {
            let expected = *dim.get_or_insert(vector.len());
            if vector.len() != expected {
                return Err(StoreError::DimensionMismatch {
                    row,
                    expected,
                    found: vector.len(),
                });
            }
            ids.push(id.into());
            data.extend_from_slice(&vector);
        }
        let dim = dim.ok_or_else(|| {
            StoreError::MalformedHeader("no rows; dimension cannot be inferred".into())
        })?;
        Self::new(ids, dim, data)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.position(id).map(|i| self.row(i))
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = (&str, &[f32])> {
        self.ids
            .iter()
            .map(String::as_str)
            .zip(self.data.chunks_exact(self.dim))
    }
}

pub fn ids_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".ids");
    PathBuf::from(s)
}

pub fn load_matrix(path: &Path, format: Format) -> Result<EmbeddingMatrix> {
    match format {
        Format::Binary => load_binary(path),
        Format::Jsonl => load_jsonl(path),
    }
}

pub fn save_matrix(matrix: &EmbeddingMatrix, path: &Path, format: Format) -> Result<()> {
    match format {
        Format::Binary => save_binary(matrix, path),
        Format::Jsonl => save_jsonl(matrix, path),
    }
}

fn load_binary(path: &Path) -> Result<EmbeddingMatrix> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| StoreError::io(path, e))?;
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(StoreError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(StoreError::MalformedHeader(format!(
            "header needs {HEADER_LEN} bytes, file has {}",
            bytes.len()
        )));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if d == 0 {
        return Err(StoreError::ZeroDimension);
    }
    let payload = &bytes[HEADER_LEN..];
    let expected = n
        .checked_mul(d)
        .and_then(|x| x.checked_mul(4))
        .ok_or_else(|| StoreError::MalformedHeader(format!("n={n}, d={d} overflows")))?;
    if payload.len() != expected {
        return Err(StoreError::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let sidecar = ids_path(path);
    let text = fs::read_to_string(&sidecar).map_err(|e| StoreError::io(&sidecar, e))?;
    let ids: Vec<String> = text.lines().map(str::to_owned).collect();
    if ids.len() != n {
        return Err(StoreError::IdCountMismatch {
            expected: n,
            found: ids.len(),
        });
    }
    EmbeddingMatrix::new(ids, d, data)
}

fn save_binary(matrix: &EmbeddingMatrix, path: &Path) -> Result<()> {
    let n = u32::try_from(matrix.len())
        .map_err(|_| StoreError::MalformedHeader("row count exceeds u32".into()))?;
    let d = u32::try_from(matrix.dim())
        .map_err(|_| StoreError::MalformedHeader("dimension exceeds u32".into()))?;
    let write = || -> std::io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&n.to_le_bytes())?;
        w.write_all(&d.to_le_bytes())?;
        for v in matrix.data() {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()
    };
    write().map_err(|e| StoreError::io(path, e))?;

    let sidecar = ids_path(path);
    let write_ids = || -> std::io::Result<()> {
        let mut w = BufWriter::new(File::create(&sidecar)?);
        for id in matrix.ids() {
            writeln!(w, "{id}")?;
        }
        w.flush()
    };
    write_ids().map_err(|e| StoreError::io(&sidecar, e))
}

#[derive(Serialize, Deserialize)]
struct JsonRecord {
    id: String,
    vector: Vec<f32>,
}

fn load_jsonl(path: &Path) -> Result<EmbeddingMatrix> {
    let file = File::open(path).map_err(|e| StoreError::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| StoreError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        // serde_json maps out-of-range numbers to inf; the matrix check rejects them.
        let record: JsonRecord =
            serde_json::from_str(&line).map_err(|source| StoreError::Json { line: i + 1, source })?;
        rows.push((record.id, record.vector));
    }
    EmbeddingMatrix::from_rows(rows)
}

fn save_jsonl(matrix: &EmbeddingMatrix, path: &Path) -> Result<()> {
    let write = || -> std::io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for (id, row) in matrix.rows() {
            let record = JsonRecord {
                id: id.to_owned(),
                vector: row.to_vec(),
            };
            serde_json::to_writer(&mut w, &record)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    };
    write().map_err(|e| StoreError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn binary_two_by_three() {
        let dir = tmp();
        let path = dir.path().join("m.emb");
        let m = EmbeddingMatrix::new(
            vec!["a".into(), "b".into()],
            3,
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        )
        .unwrap();
        save_matrix(&m, &path, Format::Binary).unwrap();
        let back = load_matrix(&path, Format::Binary).unwrap();
        assert_eq!(back.ids(), ["a", "b"]);
        assert_eq!(back.row(1), [4.0, 5.0, 6.0]);
        assert_eq!(back, m);
    }

    #[test]
    fn jsonl_single_record() {
        let dir = tmp();
        let path = dir.path().join("q.jsonl");
        fs::write(&path, "{\"id\":\"q1\",\"vector\":[0.5,-0.5]}\n").unwrap();
        let m = load_matrix(&path, Format::Jsonl).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.dim(), 2);
        assert_eq!(m.get("q1").unwrap(), [0.5, -0.5]);
    }

    #[test]
    fn jsonl_ragged_rows_rejected() {
        let dir = tmp();
        let path = dir.path().join("bad.jsonl");
        fs::write(
            &path,
            "{\"id\":\"a\",\"vector\":[1,2,3]}\n{\"id\":\"b\",\"vector\":[1,2,3,4]}\n",
        )
        .unwrap();
        assert!(matches!(
            load_matrix(&path, Format::Jsonl),
            Err(StoreError::DimensionMismatch {
                row: 1,
                expected: 3,
                found: 4
            })
        ));
    }

    #[test]
    fn one_by_one_zero_has_exact_size() {
        let dir = tmp();
        let path = dir.path().join("z.emb");
        let m = EmbeddingMatrix::new(vec!["only".into()], 1, vec![0.0]).unwrap();
        save_matrix(&m, &path, Format::Binary).unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len(), (HEADER_LEN + 4) as u64);
        assert_eq!(fs::read_to_string(ids_path(&path)).unwrap(), "only\n");
    }

    #[test]
    fn empty_matrix_roundtrips() {
        let dir = tmp();
        let path = dir.path().join("e.emb");
        let m = EmbeddingMatrix::new(vec![], 8, vec![]).unwrap();
        save_matrix(&m, &path, Format::Binary).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN);
        assert_eq!(&bytes[4..8], &0u32.to_le_bytes());
        let back = load_matrix(&path, Format::Binary).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.dim(), 8);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = EmbeddingMatrix::new(vec!["a".into(), "a".into()], 1, vec![1.0, 2.0]);
        assert!(matches!(err, Err(StoreError::DuplicateId(id)) if id == "a"));
    }

    #[test]
    fn nan_rejected_on_load() {
        let dir = tmp();
        let path = dir.path().join("nan.emb");
        let mut bytes = MAGIC.to_vec();
        bytes.extend(1u32.to_le_bytes());
        bytes.extend(2u32.to_le_bytes());
        bytes.extend(1.0f32.to_le_bytes());
        bytes.extend(f32::NAN.to_le_bytes());
        fs::write(&path, bytes).unwrap();
        fs::write(ids_path(&path), "x\n").unwrap();
        assert!(matches!(
            load_matrix(&path, Format::Binary),
            Err(StoreError::NonFinite { row: 0, dim: 1, .. })
        ));
    }

    #[test]
    fn malformed_binary_headers() {
        let dir = tmp();
        let path = dir.path().join("h.emb");
        fs::write(&path, b"EMB2\0\0\0\0\0\0\0\0").unwrap();
        assert!(matches!(load_matrix(&path, Format::Binary), Err(StoreError::BadMagic)));
        fs::write(&path, b"EMB1\x01\0").unwrap();
        assert!(matches!(
            load_matrix(&path, Format::Binary),
            Err(StoreError::MalformedHeader(_))
        ));
        let mut short = MAGIC.to_vec();
        short.extend(2u32.to_le_bytes());
        short.extend(2u32.to_le_bytes());
        short.extend(1.0f32.to_le_bytes());
        fs::write(&path, short).unwrap();
        assert!(matches!(
            load_matrix(&path, Format::Binary),
            Err(StoreError::TruncatedPayload { expected: 16, found: 4 })
        ));
    }

    #[test]
    fn sidecar_count_must_match() {
        let dir = tmp();
        let path = dir.path().join("s.emb");
        let m = EmbeddingMatrix::new(vec!["a".into(), "b".into()], 1, vec![1.0, 2.0]).unwrap();
        save_matrix(&m, &path, Format::Binary).unwrap();
        fs::write(ids_path(&path), "a\n").unwrap();
        assert!(matches!(
            load_matrix(&path, Format::Binary),
            Err(StoreError::IdCountMismatch { expected: 2, found: 1 })
        ));
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let dir = tmp();
        let path = dir.path().join("missing").join("m.emb");
        let m = EmbeddingMatrix::new(vec!["a".into()], 1, vec![1.0]).unwrap();
        assert!(matches!(
            save_matrix(&m, &path, Format::Binary),
            Err(StoreError::Io { .. })
        ));
    }

    #[test]
    fn random_100x64_roundtrip_bitwise() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let ids: Vec<String> = (0..100).map(|i| format!("doc{i}")).collect();
        let data: Vec<f32> = (0..100 * 64).map(|_| rng.random_range(-1e3f32..1e3)).collect();
        let m = EmbeddingMatrix::new(ids, 64, data).unwrap();
        let dir = tmp();
        let path = dir.path().join("r.emb");
        save_matrix(&m, &path, Format::Binary).unwrap();
        assert_eq!(load_matrix(&path, Format::Binary).unwrap(), m);
    }

    proptest! {
        #[test]
        fn binary_roundtrip_is_bitwise(
            bits in proptest::collection::vec(any::<u32>(), 1..40),
            dim in 1usize..5,
        ) {
            let data: Vec<f32> = bits
                .iter()
                .map(|&b| f32::from_bits(b))
                .filter(|v| v.is_finite())
                .collect();
            let n = data.len() / dim;
            let data = data[..n * dim].to_vec();
            let ids = (0..n).map(|i| format!("id{i}")).collect();
            let m = EmbeddingMatrix::new(ids, dim, data).unwrap();
            let dir = tmp();
            let path = dir.path().join("p.emb");
            save_matrix(&m, &path, Format::Binary).unwrap();
            prop_assert_eq!(load_matrix(&path, Format::Binary).unwrap(), m);
        }
    }
}
