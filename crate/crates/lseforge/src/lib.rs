//! Training harness and command-line tools around the `lseforge-core` loss kernels.
//!
//! A mean-pooling toy encoder is trained next-item style on a temporal split
//! of an interaction log, with any of the five loss layers (`ce`, `ce-`,
//! `cce`, `cce-`, `bce`), and ranked with NDCG, Coverage and Surprisal.

pub mod data;
pub mod error;
pub mod exec;
pub mod gradhist;
pub mod metrics;
pub mod model;
pub mod split;
pub mod sweep;
pub mod train;

use std::path::PathBuf;

use lseforge_core::Rng;

pub use data::{ingest_csv, make_synthetic, InteractionLog, SyntheticConfig};
pub use error::{Error, Result};
pub use exec::PoolExecutor;
pub use metrics::{evaluate, spearman, RankingMetrics};
pub use model::{Adam, ToyEncoder};
pub use split::{temporal_split, SplitSpec};
pub use train::{EpochReport, Precision, SamplerKind, TrainConfig, Trainer};

/// Stream ids forked off a run seed, one per consumer.
pub mod seeds {
    pub const DATA: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const INIT: u64 = 3;
    pub const ORDER: u64 = 1 << 32;
    pub const NEGATIVES: u64 = 2 << 32;
    pub const SWEEP: u64 = 3 << 32;
}

pub const SPLIT_QUANTILE: f64 = 0.9;
pub const VAL_USER_FRAC: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Csv(PathBuf),
    Synthetic(SyntheticConfig),
}

/// Loads or generates the log and splits it, both under `seed`.
pub fn load_split(source: &DataSource, seed: u64) -> Result<(InteractionLog, SplitSpec)> {
    let root = Rng::new(seed);
    let log = match source {
        DataSource::Csv(p) => InteractionLog::from_csv_path(p)?,
        DataSource::Synthetic(cfg) => make_synthetic(cfg, &root.fork(seeds::DATA))?,
    };
    let split = temporal_split(&log, SPLIT_QUANTILE, VAL_USER_FRAC, &root.fork(seeds::SPLIT))?;
    Ok((log, split))
}
