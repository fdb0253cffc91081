//! Declarative job configuration (TOML or JSON) with flag overrides.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use latent_core::align::Method;
use latent_core::concepts::MatchScheme;
use latent_core::graphs::DEFAULT_K;
use latent_core::ingest::PairPolicy;
use latent_core::pairing::{Condition, ConditionSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid TOML: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl OutputFormat {
    pub fn extension(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        }
    }
}

/// One embedding file: a (model, dataset, split) triple.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableRef {
    pub model: String,
    pub dataset: String,
    pub split: String,
    pub path: PathBuf,
}

fn default_train() -> String {
    "train".into()
}
fn default_test() -> String {
    "test".into()
}
fn default_label() -> String {
    latent_core::ingest::DEFAULT_LABEL.into()
}
fn default_rho() -> usize {
    DEFAULT_RHO
}
fn default_cca_eps() -> f64 {
    DEFAULT_CCA_EPS
}
fn default_graph_k() -> usize {
    DEFAULT_K
}
fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}
fn default_schemes() -> Vec<MatchScheme> {
    vec![MatchScheme::Hungarian, MatchScheme::Injected, MatchScheme::Spectral]
}
fn default_conditions() -> Vec<Condition> {
    Condition::ALL.to_vec()
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// Anchors averaged per prototype when not configured.
pub const DEFAULT_RHO: usize = 10;
/// Ridge added to the CCA covariance blocks when not configured.
pub const DEFAULT_CCA_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignConfig {
    /// `[source, target]` model names.
    #[serde(default)]
    pub pairs: Vec<[String; 2]>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub k_grid: Vec<usize>,
    #[serde(default = "default_rho")]
    pub rho: usize,
    #[serde(default = "default_cca_eps")]
    pub cca_epsilon: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig { pairs: vec![], methods: default_methods(), k_grid: vec![], rho: DEFAULT_RHO, cca_epsilon: DEFAULT_CCA_EPS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchConfig {
    #[serde(default)]
    pub pairs: Vec<[String; 2]>,
    #[serde(default)]
    pub kappa: usize,
    #[serde(default = "default_rho")]
    pub rho: usize,
    #[serde(default = "default_schemes")]
    pub schemes: Vec<MatchScheme>,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig { pairs: vec![], kappa: 0, rho: DEFAULT_RHO, schemes: default_schemes() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    #[serde(default = "default_graph_k")]
    pub k: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig { k: DEFAULT_K }
    }
}

/// Multinomial logit of a registry category on per-model predictors, with
/// one likelihood-ratio test per predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MnlogitConfig {
    /// Registry field used as the class label.
    pub target: String,
    /// Long-format value names (metrics or signatures) used as predictors.
    pub predictors: Vec<String>,
    /// Numeric registry fields added as predictors.
    #[serde(default)]
    pub registry_controls: Vec<String>,
    /// Restrict observations to one evaluation dataset; all datasets when unset.
    #[serde(default)]
    pub dataset: Option<String>,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_true")]
    pub standardize: bool,
}

fn default_max_iter() -> usize {
    100
}
fn default_tol() -> f64 {
    1e-10
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressConfig {
    /// Long-format CSVs `(model_name, dataset, <name column>, value)`;
    /// outputs of `metrics` and `graph-sig` both qualify.
    #[serde(default)]
    pub inputs: Vec<PathBuf>,
    #[serde(default = "default_conditions")]
    pub conditions: Vec<Condition>,
    /// Replacement predicates for individual conditions.
    #[serde(default)]
    pub condition_specs: Vec<ConditionSpec>,
    /// Restrict to these value names; empty means all.
    #[serde(default)]
    pub metrics: Vec<String>,
    #[serde(default)]
    pub mnlogit: Option<MnlogitConfig>,
}

impl Default for RegressConfig {
    fn default() -> Self {
        RegressConfig { inputs: vec![], conditions: default_conditions(), condition_specs: vec![], metrics: vec![], mnlogit: None }
    }
}

impl RegressConfig {
    pub fn spec_for(&self, c: Condition) -> ConditionSpec {
        self.condition_specs.iter().find(|s| s.name == c).cloned().unwrap_or_else(|| ConditionSpec::default_for(c))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; not part of the config hash since results do not
    /// depend on it.
    #[serde(default, skip_serializing)]
    pub jobs: Option<usize>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub format: OutputFormat,
    #[serde(default = "default_label")]
    pub label_column: String,
    #[serde(default = "default_train")]
    pub train_split: String,
    #[serde(default = "default_test")]
    pub test_split: String,
    /// Datasets to process; empty means every dataset among the tables.
    #[serde(default)]
    pub datasets: Vec<String>,
    /// Models for per-model commands; empty means every model among the tables.
    #[serde(default)]
    pub models: Vec<String>,
    /// How train/test clouds of two models are joined by id.
    #[serde(default)]
    pub pair_policy: PairPolicy,
    #[serde(default)]
    pub registry: Option<PathBuf>,
    #[serde(default)]
    pub tables: Vec<TableRef>,
    #[serde(default)]
    pub align: AlignConfig,
    #[serde(default, rename = "match")]
    pub matching: MatchConfig,
    #[serde(default)]
    pub graph: GraphConfig,
    #[serde(default)]
    pub regress: RegressConfig,
}

impl Default for JobConfig {
    fn default() -> Self {
        JobConfig {
            seed: 0,
            jobs: None,
            out: default_out(),
            format: OutputFormat::Csv,
            label_column: default_label(),
            train_split: default_train(),
            test_split: default_test(),
            datasets: vec![],
            models: vec![],
            pair_policy: PairPolicy::Strict,
            registry: None,
            tables: vec![],
            align: AlignConfig::default(),
            matching: MatchConfig::default(),
            graph: GraphConfig::default(),
            regress: RegressConfig::default(),
        }
    }
}

impl JobConfig {
    /// Parse by extension: `.json` as JSON, anything else as TOML. Relative
    /// paths inside the file resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let mut cfg: JobConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text)?
        };
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out);
        if let Some(r) = self.registry.as_mut() {
            fix(r);
        }
        self.tables.iter_mut().for_each(|t| fix(&mut t.path));
        self.regress.inputs.iter_mut().for_each(fix);
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        if !self.align.k_grid.windows(2).all(|w| w[0] < w[1]) || self.align.k_grid.first() == Some(&0) {
            return bad(format!("align.k_grid must be strictly increasing positive integers, got {:?}", self.align.k_grid));
        }
        if self.align.rho == 0 || self.matching.rho == 0 {
            return bad("rho must be positive".into());
        }
        if !self.matching.pairs.is_empty() && self.matching.kappa == 0 {
            return bad("match.kappa must be positive when match.pairs is set".into());
        }
        if !(self.align.cca_epsilon >= 0.0 && self.align.cca_epsilon.is_finite()) {
            return bad("align.cca_epsilon must be finite and non-negative".into());
        }
        if self.graph.k == 0 {
            return bad("graph.k must be positive".into());
        }
        if self.jobs == Some(0) {
            return bad("jobs must be positive".into());
        }
        let mut seen = BTreeSet::new();
        for t in &self.tables {
            if !seen.insert((&t.model, &t.dataset, &t.split)) {
                return bad(format!("duplicate table for ({}, {}, {})", t.model, t.dataset, t.split));
            }
        }
        for [a, b] in self.align.pairs.iter().chain(&self.matching.pairs) {
            if a == b {
                return bad(format!("pair ({a}, {b}) aligns a model with itself"));
            }
        }
        let mut specs = BTreeSet::new();
        for s in &self.regress.condition_specs {
            if !specs.insert(s.name) {
                return bad(format!("condition {} has two specs", s.name));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form. `jobs` and `out` are excluded:
    /// neither changes what is computed.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        value.as_object_mut().expect("config is an object").remove("out");
        hex::encode(Sha256::digest(serde_json::to_vec(&value).expect("json")))
    }

    pub fn table(&self, model: &str, dataset: &str, split: &str) -> Option<&TableRef> {
        self.tables.iter().find(|t| t.model == model && t.dataset == dataset && t.split == split)
    }

    /// Configured datasets, or every dataset among the tables, sorted.
    pub fn dataset_list(&self) -> Vec<String> {
        if !self.datasets.is_empty() {
            let set: BTreeSet<_> = self.datasets.iter().cloned().collect();
            return set.into_iter().collect();
        }
        self.tables.iter().map(|t| t.dataset.clone()).collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn model_list(&self) -> Vec<String> {
        if !self.models.is_empty() {
            let set: BTreeSet<_> = self.models.iter().cloned().collect();
            return set.into_iter().collect();
        }
        self.tables.iter().map(|t| t.model.clone()).collect::<BTreeSet<_>>().into_iter().collect()
    }
}

/// Stable per-job seed: the first 8 bytes of SHA-256 over the base seed and
/// the job key, so a job's randomness does not depend on scheduling.
pub fn job_seed(base: u64, key: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    for part in key {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}
