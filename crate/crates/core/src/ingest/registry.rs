use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::formats::read_string_rows;
use super::{EmbeddingTable, IngestError};

/// Metadata for one model. Optional fields are `None` when the registry
/// cell is empty or unparseable; zero is never used as a placeholder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub model_name: String,
    /// Everything before the first `.` of the model name.
    pub architecture: String,
    pub family: Option<String>,
    pub macro_family: Option<String>,
    pub model_version: Option<String>,
    pub size: Option<String>,
    pub patch_size: Option<String>,
    pub input_resolution: Option<u32>,
    pub pretrain_dataset: Option<String>,
    pub pretrain_method: Option<String>,
    pub pretrain_ft: Option<String>,
    pub pretrain_aug: Option<String>,
    pub pretrain_resolution: Option<u32>,
    pub num_parameters: Option<u64>,
    pub latent_dim: Option<usize>,
    /// Any other registry columns, verbatim.
    pub extra: BTreeMap<String, String>,
}

impl RegistryEntry {
    pub fn new(model_name: impl Into<String>) -> Self {
        let model_name = model_name.into();
        let architecture = model_name.split('.').next().unwrap_or_default().to_string();
        RegistryEntry {
            model_name,
            architecture,
            family: None,
            macro_family: None,
            model_version: None,
            size: None,
            patch_size: None,
            input_resolution: None,
            pretrain_dataset: None,
            pretrain_method: None,
            pretrain_ft: None,
            pretrain_aug: None,
            pretrain_resolution: None,
            num_parameters: None,
            latent_dim: None,
            extra: BTreeMap::new(),
        }
    }

    /// Look a field up by its registry column name, as text.
    pub fn field(&self, name: &str) -> Option<String> {
        match name {
            "model_name" => Some(self.model_name.clone()),
            "architecture" => Some(self.architecture.clone()),
            "family" => self.family.clone(),
            "macro_family" => self.macro_family.clone(),
            "model_version" => self.model_version.clone(),
            "size" => self.size.clone(),
            "patch_size" => self.patch_size.clone(),
            "input_resolution" => self.input_resolution.map(|v| v.to_string()),
            "pretrain_dataset" => self.pretrain_dataset.clone(),
            "pretrain_method" => self.pretrain_method.clone(),
            "pretrain_ft" => self.pretrain_ft.clone(),
            "pretrain_aug" => self.pretrain_aug.clone(),
            "pretrain_resolution" => self.pretrain_resolution.map(|v| v.to_string()),
            "num_parameters" => self.num_parameters.map(|v| v.to_string()),
            "latent_dim" => self.latent_dim.map(|v| v.to_string()),
            other => self.extra.get(other).cloned(),
        }
    }

    fn set(&mut self, column: &str, raw: Option<&str>) {
        let text = raw.map(str::trim).filter(|s| !is_null_token(s)).map(str::to_string);
        match column {
            "architecture" => {
                if let Some(t) = text {
                    self.architecture = t;
                }
            }
            "family" => self.family = text,
            "macro_family" => self.macro_family = text,
            "model_version" => self.model_version = text,
            "size" => self.size = text,
            "patch_size" => self.patch_size = text,
            "input_resolution" => self.input_resolution = text.and_then(|t| parse_positive(&t)).map(|v| v as u32),
            "pretrain_dataset" => self.pretrain_dataset = text,
            "pretrain_method" => self.pretrain_method = text,
            "pretrain_ft" => self.pretrain_ft = text,
            "pretrain_aug" => self.pretrain_aug = text,
            "pretrain_resolution" => self.pretrain_resolution = text.and_then(|t| parse_positive(&t)).map(|v| v as u32),
            "num_parameters" => self.num_parameters = text.and_then(|t| parse_positive(&t)),
            "latent_dim" => self.latent_dim = text.and_then(|t| parse_positive(&t)).map(|v| v as usize),
            other => {
                if let Some(t) = text {
                    self.extra.insert(other.to_string(), t);
                }
            }
        }
    }
}

fn is_null_token(s: &str) -> bool {
    s.is_empty() || matches!(s.to_ascii_lowercase().as_str(), "null" | "none" | "nan" | "na" | "n/a")
}

/// Integers, or floats with an integral value such as `8.6e7`. Zero and
/// negatives are treated as unparseable.
fn parse_positive(s: &str) -> Option<u64> {
    if let Ok(v) = s.parse::<u64>() {
        return (v >= 1).then_some(v);
    }
    let f = s.parse::<f64>().ok()?;
    (f.is_finite() && f >= 1.0 && f.fract() == 0.0 && f < u64::MAX as f64).then(|| f as u64)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelRegistry {
    entries: BTreeMap<String, RegistryEntry>,
}

impl ModelRegistry {
    pub fn from_entries(entries: impl IntoIterator<Item = RegistryEntry>) -> Result<Self, IngestError> {
        let mut map = BTreeMap::new();
        for e in entries {
            let name = e.model_name.clone();
            if map.insert(name.clone(), e).is_some() {
                return Err(IngestError::DuplicateModelName(name));
            }
        }
        Ok(ModelRegistry { entries: map })
    }

    pub fn get(&self, model_name: &str) -> Option<&RegistryEntry> {
        self.entries.get(model_name)
    }

    /// Entries in ascending model-name order.
    pub fn entries(&self) -> impl Iterator<Item = &RegistryEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn load_registry(path: &Path) -> Result<ModelRegistry, IngestError> {
    let (headers, rows) = read_string_rows(path)?;
    let key = headers.iter().position(|h| h == "model_name").ok_or(IngestError::MissingKeyColumn)?;
    let entries = rows.into_iter().map(|row| {
        let mut entry = RegistryEntry::new(row[key].clone().unwrap_or_default());
        for (col, cell) in headers.iter().zip(&row) {
            if col != "model_name" {
                entry.set(col, cell.as_deref());
            }
        }
        entry
    });
    ModelRegistry::from_entries(entries)
}

/// Check that a table's model is registered and its width matches `latent_dim`.
/// A registry entry without `latent_dim` passes.
pub fn validate_against_registry(table: &EmbeddingTable, registry: &ModelRegistry) -> Result<(), IngestError> {
    let (Some(model), Some(d)) = (table.model_name(), table.dim()) else {
        return Err(IngestError::EmptyTable);
    };
    let entry = registry.get(model).ok_or_else(|| IngestError::UnknownModel(model.to_string()))?;
    match entry.latent_dim {
        Some(expected) if expected != d => Err(IngestError::LatentDimMismatch {
            model: model.to_string(),
            table_dim: d,
            registry_dim: expected,
        }),
        _ => Ok(()),
    }
}
