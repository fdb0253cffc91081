//! Synthetic embedding workspaces for the CLI tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use latent_cli::config::{JobConfig, TableRef};
use latent_core::ingest::{write_embedding_table, EmbeddingTable, TableFormat, DEFAULT_LABEL};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const CLASSES: usize = 4;

/// How a model sees the shared latent factors.
#[derive(Clone)]
pub struct ModelSpec {
    pub name: String,
    pub dim: usize,
    /// Seed of the model's random linear read-out; equal seeds give equal models.
    pub map_seed: u64,
    pub noise: f64,
}

impl ModelSpec {
    pub fn new(name: &str, dim: usize, map_seed: u64, noise: f64) -> Self {
        ModelSpec { name: name.into(), dim, map_seed, noise }
    }
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Labeled latent factors: class means on a simplex plus unit noise.
pub fn latent(n: usize, d0: usize, seed: u64) -> (DMatrix<f64>, Vec<i64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<i64> = (0..n).map(|i| (i % CLASSES) as i64).collect();
    let mut z = gaussian(n, d0, &mut rng);
    for (i, &c) in labels.iter().enumerate() {
        z[(i, c as usize % d0)] += 3.0;
    }
    (z, labels)
}

pub fn write_cloud(path: &Path, model: &str, labels: &[i64], x: &DMatrix<f64>) {
    let mut b = EmbeddingTable::builder(vec![DEFAULT_LABEL.to_string()]);
    for i in 0..x.nrows() {
        b.push(i as u32, model, vec![labels[i]], x.row(i).iter().map(|&v| v as f32).collect()).unwrap();
    }
    write_embedding_table(&b.finish(), path, TableFormat::from_path(path).unwrap()).unwrap();
}

/// Write train/test tables for every (model, dataset) and return their refs.
pub fn workspace(dir: &Path, models: &[ModelSpec], datasets: &[&str], n_train: usize, n_test: usize, d0: usize) -> Vec<TableRef> {
    let mut refs = Vec::new();
    for (di, dataset) in datasets.iter().enumerate() {
        for (si, (split, n)) in [("train", n_train), ("test", n_test)].into_iter().enumerate() {
            let (z, labels) = latent(n, d0, 1000 + 10 * di as u64 + si as u64);
            for m in models {
                let mut rng = ChaCha8Rng::seed_from_u64(m.map_seed);
                let w = gaussian(d0, m.dim, &mut rng);
                let mut noise_rng = ChaCha8Rng::seed_from_u64(m.map_seed ^ (77 + 10 * di as u64 + si as u64));
                let x = &z * &w + gaussian(n, m.dim, &mut noise_rng) * m.noise;
                let path = dir.join(format!("{}_{dataset}_{split}.parquet", m.name));
                write_cloud(&path, &m.name, &labels, &x);
                refs.push(TableRef { model: m.name.clone(), dataset: dataset.to_string(), split: split.into(), path });
            }
        }
    }
    refs
}

pub fn config(out: PathBuf, tables: Vec<TableRef>) -> JobConfig {
    JobConfig { out, tables, ..JobConfig::default() }
}

pub fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(str::to_string).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()).collect();
    (header, rows)
}

pub fn manifest(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}
