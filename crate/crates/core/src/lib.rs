//! Latent-space alignment and analysis toolkit.
pub mod align;
pub mod concepts;
pub mod eval;
pub mod geometry;
pub mod graphs;
pub mod ingest;
pub mod kmeans;
pub mod linalg;
pub mod pairing;
pub mod stats;
pub mod whiten;
