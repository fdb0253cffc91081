//! Embedding tables, point clouds and id-based pairing across models.
//!
//! A table holds one (model, dataset, split) file: one row per input with an
//! `id`, zero or more integer label columns, the `model_name`, and the
//! embedding vector. Tables are turned into [`PointCloud`]s sorted by id,
//! and two clouds are joined into [`PairedClouds`] for alignment work.

mod formats;
mod registry;

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use formats::{read_embedding_table, write_embedding_table, TableFormat};
pub use registry::{load_registry, validate_against_registry, ModelRegistry, RegistryEntry};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: embedding has length {found}, expected {expected}")]
    RaggedEmbedding { row: usize, expected: usize, found: usize },
    #[error("duplicate id {0}")]
    DuplicateId(u32),
    #[error("mixed model names: `{expected}` and `{found}`")]
    MixedModelName { expected: String, found: String },
    #[error("table has no rows")]
    EmptyTable,
    #[error("id sets differ ({only_a} ids only in A, {only_b} only in B)")]
    IdMismatch { only_a: usize, only_b: usize },
    #[error("clouds share no ids")]
    EmptyIntersection,
    #[error("label `{column}` disagrees for id {id}")]
    LabelConflict { id: u32, column: String },
    #[error("registry is missing the key column `model_name`")]
    MissingKeyColumn,
    #[error("duplicate model_name `{0}` in registry")]
    DuplicateModelName(String),
    #[error("model `{model}`: embedding width {table_dim} differs from registry latent_dim {registry_dim}")]
    LatentDimMismatch { model: String, table_dim: usize, registry_dim: usize },
    #[error("model `{0}` not found in registry")]
    UnknownModel(String),
    #[error("{path}: line {line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("cannot infer table format from `{0}`")]
    UnknownFormat(PathBuf),
    #[error("embedding contains a non-finite value at id {0}")]
    NonFinite(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[cfg(feature = "parquet")]
    #[error(transparent)]
    Parquet(#[from] parquet::errors::ParquetError),
    #[cfg(feature = "parquet")]
    #[error(transparent)]
    Arrow(#[from] arrow::error::ArrowError),
    #[error("parquet support was not compiled in")]
    ParquetDisabled,
}

/// Column name used for single-label datasets.
pub const DEFAULT_LABEL: &str = "label";

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub id: u32,
    /// Aligned with [`EmbeddingTable::label_columns`].
    pub labels: Vec<i64>,
    pub embedding: Vec<f32>,
}

/// All rows of one (model, dataset, split) file.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    model_name: Option<String>,
    label_columns: Vec<String>,
    dim: Option<usize>,
    rows: Vec<EmbeddingRow>,
}

impl EmbeddingTable {
    pub fn builder(label_columns: Vec<String>) -> TableBuilder {
        TableBuilder {
            table: EmbeddingTable { model_name: None, label_columns, dim: None, rows: Vec::new() },
            seen: HashSet::new(),
        }
    }

    pub fn model_name(&self) -> Option<&str> {
        self.model_name.as_deref()
    }

    pub fn label_columns(&self) -> &[String] {
        &self.label_columns
    }

    /// Embedding width; `None` until the table has a row.
    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn rows(&self) -> &[EmbeddingRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Incrementally builds an [`EmbeddingTable`], enforcing its invariants row by row.
pub struct TableBuilder {
    table: EmbeddingTable,
    seen: HashSet<u32>,
}

impl TableBuilder {
    pub fn push(
        &mut self,
        id: u32,
        model_name: &str,
        labels: Vec<i64>,
        embedding: Vec<f32>,
    ) -> Result<(), IngestError> {
        let t = &mut self.table;
        if labels.len() != t.label_columns.len() {
            return Err(IngestError::MissingColumn(format!(
                "row {} has {} label values for {} label columns",
                t.rows.len(),
                labels.len(),
                t.label_columns.len()
            )));
        }
        match &t.model_name {
            None => t.model_name = Some(model_name.to_string()),
            Some(m) if m != model_name => {
                return Err(IngestError::MixedModelName { expected: m.clone(), found: model_name.to_string() })
            }
            _ => {}
        }
        match t.dim {
            None if embedding.is_empty() => {
                return Err(IngestError::RaggedEmbedding { row: t.rows.len(), expected: 1, found: 0 })
            }
            None => t.dim = Some(embedding.len()),
            Some(d) if d != embedding.len() => {
                return Err(IngestError::RaggedEmbedding { row: t.rows.len(), expected: d, found: embedding.len() })
            }
            _ => {}
        }
        if !self.seen.insert(id) {
            return Err(IngestError::DuplicateId(id));
        }
        t.rows.push(EmbeddingRow { id, labels, embedding });
        Ok(())
    }

    pub fn finish(self) -> EmbeddingTable {
        self.table
    }
}

/// Dense, id-sorted view of one latent space. Embeddings are promoted to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    model_name: String,
    ids: Vec<u32>,
    x: DMatrix<f64>,
    labels: BTreeMap<String, Vec<i64>>,
}

impl PointCloud {
    /// Assemble a cloud from parts; rows are re-sorted by id.
    pub fn new(
        model_name: impl Into<String>,
        ids: Vec<u32>,
        x: DMatrix<f64>,
        labels: BTreeMap<String, Vec<i64>>,
    ) -> Result<Self, IngestError> {
        let n = ids.len();
        if n == 0 {
            return Err(IngestError::EmptyTable);
        }
        if x.nrows() != n {
            return Err(IngestError::RaggedEmbedding { row: 0, expected: n, found: x.nrows() });
        }
        for (name, col) in &labels {
            if col.len() != n {
                return Err(IngestError::MissingColumn(name.clone()));
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| ids[i]);
        for w in order.windows(2) {
            if ids[w[0]] == ids[w[1]] {
                return Err(IngestError::DuplicateId(ids[w[0]]));
            }
        }
        let cloud = PointCloud {
            model_name: model_name.into(),
            ids: ids.clone(),
            x,
            labels,
        };
        Ok(cloud.select(&order))
    }

    /// Cloud with ids `0..n` and no labels.
    pub fn from_matrix(model_name: impl Into<String>, x: DMatrix<f64>) -> Result<Self, IngestError> {
        let ids = (0..x.nrows() as u32).collect();
        Self::new(model_name, ids, x, BTreeMap::new())
    }

    pub fn with_labels(mut self, column: &str, values: Vec<i64>) -> Result<Self, IngestError> {
        if values.len() != self.n() {
            return Err(IngestError::MissingColumn(column.to_string()));
        }
        self.labels.insert(column.to_string(), values);
        Ok(self)
    }

    pub fn model_name(&self) -> &str {
        &self.model_name
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn labels(&self) -> &BTreeMap<String, Vec<i64>> {
        &self.labels
    }

    pub fn label(&self, column: &str) -> Option<&[i64]> {
        self.labels.get(column).map(Vec::as_slice)
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// Same ids and labels, new feature matrix (e.g. transmitted embeddings).
    pub fn with_matrix(&self, model_name: impl Into<String>, x: DMatrix<f64>) -> Result<Self, IngestError> {
        if x.nrows() != self.n() {
            return Err(IngestError::RaggedEmbedding { row: 0, expected: self.n(), found: x.nrows() });
        }
        Ok(PointCloud {
            model_name: model_name.into(),
            ids: self.ids.clone(),
            x,
            labels: self.labels.clone(),
        })
    }

    /// Rows at the given positions, in the given order.
    pub fn select(&self, rows: &[usize]) -> PointCloud {
        let x = self.x.select_rows(rows.iter());
        let ids = rows.iter().map(|&i| self.ids[i]).collect();
        let labels = self
            .labels
            .iter()
            .map(|(k, v)| (k.clone(), rows.iter().map(|&i| v[i]).collect()))
            .collect();
        PointCloud { model_name: self.model_name.clone(), ids, x, labels }
    }
}

/// Convert a table into an id-sorted cloud.
pub fn to_point_cloud(table: &EmbeddingTable) -> Result<PointCloud, IngestError> {
    let (Some(model), Some(d)) = (table.model_name(), table.dim()) else {
        return Err(IngestError::EmptyTable);
    };
    let n = table.len();
    let mut x = DMatrix::zeros(n, d);
    let mut ids = Vec::with_capacity(n);
    for (i, row) in table.rows().iter().enumerate() {
        ids.push(row.id);
        for (j, &v) in row.embedding.iter().enumerate() {
            x[(i, j)] = f64::from(v);
        }
    }
    let labels = table
        .label_columns()
        .iter()
        .enumerate()
        .map(|(c, name)| (name.clone(), table.rows().iter().map(|r| r.labels[c]).collect()))
        .collect();
    PointCloud::new(model, ids, x, labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PairPolicy {
    #[default]
    Strict,
    Intersect,
}

/// Two clouds with identical, identically ordered ids.
#[derive(Debug, Clone)]
pub struct PairedClouds {
    a: PointCloud,
    b: PointCloud,
}

impl PairedClouds {
    pub fn a(&self) -> &PointCloud {
        &self.a
    }

    pub fn b(&self) -> &PointCloud {
        &self.b
    }

    pub fn n(&self) -> usize {
        self.a.n()
    }

    /// Restrict both sides to the given row positions.
    pub fn select(&self, rows: &[usize]) -> PairedClouds {
        PairedClouds { a: self.a.select(rows), b: self.b.select(rows) }
    }

    pub fn into_parts(self) -> (PointCloud, PointCloud) {
        (self.a, self.b)
    }
}

/// Join two clouds on id.
pub fn pair_by_id(a: &PointCloud, b: &PointCloud, policy: PairPolicy) -> Result<PairedClouds, IngestError> {
    if a.n() == 0 || b.n() == 0 {
        return Err(IngestError::EmptyTable);
    }
    // both id lists are sorted, so a merge walk finds the intersection
    let (mut ia, mut ib) = (0, 0);
    let (mut keep_a, mut keep_b) = (Vec::new(), Vec::new());
    while ia < a.n() && ib < b.n() {
        match a.ids[ia].cmp(&b.ids[ib]) {
            std::cmp::Ordering::Less => ia += 1,
            std::cmp::Ordering::Greater => ib += 1,
            std::cmp::Ordering::Equal => {
                keep_a.push(ia);
                keep_b.push(ib);
                ia += 1;
                ib += 1;
            }
        }
    }
    let shared = keep_a.len();
    if policy == PairPolicy::Strict && (shared != a.n() || shared != b.n()) {
        return Err(IngestError::IdMismatch { only_a: a.n() - shared, only_b: b.n() - shared });
    }
    if shared == 0 {
        return Err(IngestError::EmptyIntersection);
    }
    for (name, la) in &a.labels {
        if let Some(lb) = b.labels.get(name) {
            for (&i, &j) in keep_a.iter().zip(&keep_b) {
                if la[i] != lb[j] {
                    return Err(IngestError::LabelConflict { id: a.ids[i], column: name.clone() });
                }
            }
        }
    }
    Ok(PairedClouds { a: a.select(&keep_a), b: b.select(&keep_b) })
}
