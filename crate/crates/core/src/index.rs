//! Per-(GUI, dimension) embedding matrices with exact cosine scan and a
//! checksummed binary file format.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "GRRINDEX"
//! version      u32      1
//! dataset      str      (u32 byte length + UTF-8)
//! model_id     str
//! dim_count    u32
//! dimensions   dim_count × { id str, name str, description str, default_weight f64 }
//! width        u32      vector width
//! gui_count    u32
//! gui_ids      gui_count × str
//! matrices     dim_count × gui_count × width × f32, dimension-set order, row-major
//! checksum     8 bytes  first 8 bytes of SHA-256 over everything above
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{AnnotationStore, DimensionSet, SearchDimension};
use crate::gateway::{Gateway, GatewayError, UsageMeter};

pub const MAGIC: &[u8; 8] = b"GRRINDEX";
pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_BATCH_SIZE: usize = 64;
pub const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not an index file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported index format version {0} (expected {FORMAT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("index file is truncated while reading {0}")]
    Truncated(&'static str),
    #[error("index file is corrupt: {0}")]
    Corrupt(String),
    #[error("annotation store is incomplete: gui \"{gui_id}\" lacks dimension \"{dimension}\"")]
    IncompleteStore { gui_id: String, dimension: String },
    #[error("annotation store is empty")]
    EmptyStore,
    #[error("unknown dimension \"{0}\"")]
    UnknownDimension(String),
    #[error("query vector has width {found}, index width is {expected}")]
    WidthMismatch { expected: usize, found: usize },
    #[error("query vector is not unit-normalized (norm {0})")]
    NotNormalized(f64),
    #[error("batch size must be at least 1")]
    BadBatchSize,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord<'a> {
    pub gui_id: &'a str,
    pub dimension_id: &'a str,
    pub vector: &'a [f32],
    pub model_id: &'a str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    dataset: String,
    model_id: String,
    dimensions: DimensionSet,
    gui_ids: Vec<String>,
    width: usize,
    /// One row-major `gui_ids.len() × width` matrix per dimension.
    matrices: Vec<Vec<f32>>,
}

impl EmbeddingIndex {
    /// Assembles an index from per-dimension row lists, validating shape and
    /// unit norms.
    pub fn from_rows(
        dataset: &str,
        model_id: &str,
        dimensions: DimensionSet,
        gui_ids: Vec<String>,
        rows_per_dimension: Vec<Vec<Vec<f32>>>,
    ) -> Result<Self, IndexError> {
        if rows_per_dimension.len() != dimensions.len() {
            return Err(IndexError::Corrupt(format!(
                "{} matrices for {} dimensions",
                rows_per_dimension.len(),
                dimensions.len()
            )));
        }
        let width = rows_per_dimension
            .first()
            .and_then(|rows| rows.first())
            .map_or(0, Vec::len);
        let mut matrices = Vec::with_capacity(dimensions.len());
        for rows in rows_per_dimension {
            if rows.len() != gui_ids.len() {
                return Err(IndexError::Corrupt(format!(
                    "{} rows for {} GUIs",
                    rows.len(),
                    gui_ids.len()
                )));
            }
            let mut m = Vec::with_capacity(rows.len() * width);
            for row in rows {
                if row.len() != width {
                    return Err(IndexError::Corrupt("inconsistent vector width".into()));
                }
                m.extend_from_slice(&row);
            }
            matrices.push(m);
        }
        let index = Self {
            dataset: dataset.to_string(),
            model_id: model_id.to_string(),
            dimensions,
            gui_ids,
            width,
            matrices,
        };
        index.check_invariants()?;
        Ok(index)
    }

    fn check_invariants(&self) -> Result<(), IndexError> {
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = self.gui_ids.iter().find(|g| !seen.insert(g.as_str())) {
            return Err(IndexError::Corrupt(format!("duplicate gui id \"{dup}\"")));
        }
        if self.width == 0 && !self.gui_ids.is_empty() {
            return Err(IndexError::Corrupt("zero vector width".into()));
        }
        for (d, m) in self.dimensions.iter().zip(&self.matrices) {
            for (row, gui) in m.chunks(self.width.max(1)).zip(&self.gui_ids) {
                let norm = l2(row);
                if (norm - 1.0).abs() > NORM_TOLERANCE {
                    return Err(IndexError::Corrupt(format!(
                        "vector ({gui}, {}) has norm {norm}",
                        d.id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn dataset(&self) -> &str {
        &self.dataset
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn dimensions(&self) -> &DimensionSet {
        &self.dimensions
    }

    pub fn gui_ids(&self) -> &[String] {
        &self.gui_ids
    }

    pub fn gui_count(&self) -> usize {
        self.gui_ids.len()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn vector_count(&self) -> usize {
        self.gui_ids.len() * self.dimensions.len()
    }

    fn matrix(&self, dimension_id: &str) -> Result<&[f32], IndexError> {
        let pos = self
            .dimensions
            .position(dimension_id)
            .ok_or_else(|| IndexError::UnknownDimension(dimension_id.to_string()))?;
        Ok(&self.matrices[pos])
    }

    pub fn vector(&self, gui_id: &str, dimension_id: &str) -> Option<&[f32]> {
        let row = self.gui_ids.iter().position(|g| g == gui_id)?;
        let m = self.matrix(dimension_id).ok()?;
        Some(&m[row * self.width..(row + 1) * self.width])
    }

    pub fn records(&self) -> impl Iterator<Item = EmbeddingRecord<'_>> {
        self.dimensions
            .iter()
            .zip(&self.matrices)
            .flat_map(move |(d, m)| {
                self.gui_ids
                    .iter()
                    .zip(m.chunks(self.width.max(1)))
                    .map(move |(g, v)| EmbeddingRecord {
                        gui_id: g,
                        dimension_id: &d.id,
                        vector: v,
                        model_id: &self.model_id,
                    })
            })
    }

    /// Cosine of `query` against every GUI's vector for one dimension, in
    /// registry order. Both sides are near-unit f32 vectors; dividing by the
    /// exact f64 norms removes their rounding from the result.
    pub fn similarity(&self, dimension_id: &str, query: &[f32]) -> Result<Vec<f64>, IndexError> {
        let m = self.matrix(dimension_id)?;
        if query.len() != self.width {
            return Err(IndexError::WidthMismatch {
                expected: self.width,
                found: query.len(),
            });
        }
        let norm = l2(query);
        if (norm - 1.0).abs() > 1e-4 {
            return Err(IndexError::NotNormalized(norm));
        }
        Ok(m
            .chunks(self.width)
            .map(|row| (dot(row, query) / (l2(row) * norm)).clamp(-1.0, 1.0))
            .collect())
    }

    /// Like [`EmbeddingIndex::similarity`] but paired with GUI ids.
    pub fn similarity_by_id(
        &self,
        dimension_id: &str,
        query: &[f32],
    ) -> Result<Vec<(&str, f64)>, IndexError> {
        Ok(self
            .gui_ids
            .iter()
            .map(String::as_str)
            .zip(self.similarity(dimension_id, query)?)
            .collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.matrices.iter().map(|m| m.len() * 4).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        put_str(&mut out, &self.dataset);
        put_str(&mut out, &self.model_id);
        out.extend_from_slice(&(self.dimensions.len() as u32).to_le_bytes());
        for d in &self.dimensions {
            put_str(&mut out, &d.id);
            put_str(&mut out, &d.name);
            put_str(&mut out, &d.description);
            out.extend_from_slice(&d.default_weight.to_le_bytes());
        }
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.gui_ids.len() as u32).to_le_bytes());
        for g in &self.gui_ids {
            put_str(&mut out, g);
        }
        for m in &self.matrices {
            for x in m {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest[..8]);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IndexError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "magic")? != MAGIC {
            return Err(IndexError::BadMagic);
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(IndexError::UnsupportedVersion(version));
        }
        let dataset = r.string("dataset name")?;
        let model_id = r.string("model id")?;
        let dim_count = r.u32("dimension count")? as usize;
        let mut dims = Vec::with_capacity(dim_count.min(1024));
        for _ in 0..dim_count {
            let id = r.string("dimension id")?;
            let name = r.string("dimension name")?;
            let description = r.string("dimension description")?;
            let default_weight = f64::from_le_bytes(r.array("dimension weight")?);
            dims.push(SearchDimension {
                id,
                name,
                description,
                default_weight,
            });
        }
        let dimensions =
            DimensionSet::new(dims).map_err(|e| IndexError::Corrupt(e.to_string()))?;
        let width = r.u32("vector width")? as usize;
        let gui_count = r.u32("gui count")? as usize;
        let mut gui_ids = Vec::with_capacity(gui_count.min(1 << 20));
        for _ in 0..gui_count {
            gui_ids.push(r.string("gui id")?);
        }
        let per_matrix = gui_count
            .checked_mul(width)
            .ok_or_else(|| IndexError::Corrupt("matrix size overflows".into()))?;
        let mut matrices = Vec::with_capacity(dimensions.len());
        for _ in 0..dimensions.len() {
            let raw = r.take(per_matrix * 4, "embedding matrix")?;
            matrices.push(
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
                    .collect::<Vec<f32>>(),
            );
        }
        let body_len = r.pos;
        let stored = r.take(8, "checksum")?;
        if r.pos != bytes.len() {
            return Err(IndexError::Corrupt(format!(
                "{} trailing bytes after checksum",
                bytes.len() - r.pos
            )));
        }
        if Sha256::digest(&bytes[..body_len])[..8] != *stored {
            return Err(IndexError::Corrupt("checksum mismatch".into()));
        }
        let index = Self {
            dataset,
            model_id,
            dimensions,
            gui_ids,
            width,
            matrices,
        };
        index.check_invariants()?;
        Ok(index)
    }

    /// Writes atomically via a temporary file.
    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        let tmp = path.with_extension("index.tmp");
        let io = |source| IndexError::Io {
            path: path.display().to_string(),
            source,
        };
        std::fs::write(&tmp, self.to_bytes()).map_err(io)?;
        std::fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let bytes = std::fs::read(path).map_err(|source| IndexError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], IndexError> {
        let end = self.pos.checked_add(n).ok_or(IndexError::Truncated(what))?;
        let slice = self.bytes.get(self.pos..end).ok_or(IndexError::Truncated(what))?;
        self.pos = end;
        Ok(slice)
    }

    fn array<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N], IndexError> {
        Ok(self.take(N, what)?.try_into().expect("exact length"))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, IndexError> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    fn string(&mut self, what: &'static str) -> Result<String, IndexError> {
        let len = self.u32(what)? as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| IndexError::Corrupt(format!("{what} is not valid UTF-8")))
    }
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum()
}

fn l2(v: &[f32]) -> f64 {
    dot(v, v).sqrt()
}

/// Embeds every (GUI, dimension) annotation of a complete store. Texts are
/// sent in batches of `batch_size`; any failure aborts the build.
pub fn build_index(
    store: &AnnotationStore,
    dimensions: &DimensionSet,
    dataset: &str,
    gateway: &Gateway,
    batch_size: usize,
) -> Result<(EmbeddingIndex, UsageMeter), IndexError> {
    if batch_size == 0 {
        return Err(IndexError::BadBatchSize);
    }
    if store.is_empty() {
        return Err(IndexError::EmptyStore);
    }
    let mut texts = Vec::with_capacity(store.len() * dimensions.len());
    for d in dimensions {
        for entry in store.iter() {
            match entry.annotations.get(&d.id).filter(|t| !t.trim().is_empty()) {
                Some(t) => texts.push(t.clone()),
                None => {
                    return Err(IndexError::IncompleteStore {
                        gui_id: entry.gui_id.clone(),
                        dimension: d.id.clone(),
                    })
                }
            }
        }
    }

    let mut usage = UsageMeter::default();
    let mut vectors = Vec::with_capacity(texts.len());
    for batch in texts.chunks(batch_size) {
        let (vs, meter) = gateway.embed_text(batch)?;
        usage.merge(&meter);
        vectors.extend(vs);
    }

    let gui_ids: Vec<String> = store.iter().map(|e| e.gui_id.clone()).collect();
    let mut it = vectors.into_iter();
    let rows: Vec<Vec<Vec<f32>>> = dimensions
        .iter()
        .map(|_| it.by_ref().take(gui_ids.len()).collect())
        .collect();
    let index = EmbeddingIndex::from_rows(
        dataset,
        &gateway.model_id(),
        dimensions.clone(),
        gui_ids,
        rows,
    )?;
    Ok((index, usage))
}
