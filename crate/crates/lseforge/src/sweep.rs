//! Cartesian hyperparameter sweeps and their rank-correlation summary.

use std::path::PathBuf;

use lseforge_core::{Executor, LossBackend, Rng, Sequential};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SyntheticConfig;
use crate::error::{Error, Result};
use crate::exec::PoolExecutor;
use crate::metrics::spearman;
use crate::seeds;
use crate::split::SplitSpec;
use crate::train::{SamplerKind, TrainConfig, Trainer};

/// Grid file contents (TOML).
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub bs: Vec<usize>,
    pub sl: Vec<usize>,
    /// Used by the sampling backends only.
    #[serde(default)]
    pub ns: Vec<usize>,
    pub backends: Vec<String>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_sampler")]
    pub sampler: SamplerKind,
    /// Interaction CSV; the synthetic generator is used when absent.
    #[serde(default)]
    pub data: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: SyntheticConfig,
}

fn default_epochs() -> usize {
    2
}
fn default_lr() -> f64 {
    1e-3
}
fn default_dim() -> usize {
    32
}
fn default_sampler() -> SamplerKind {
    SamplerKind::Uniform
}

impl GridSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let g: Self = toml::from_str(text).map_err(|e| Error::Config(format!("grid file: {e}")))?;
        g.validate()?;
        Ok(g)
    }

    fn validate(&self) -> Result<()> {
        if self.bs.is_empty() || self.sl.is_empty() || self.backends.is_empty() {
            return Err(Error::Config("grid needs non-empty bs, sl and backends".into()));
        }
        for b in self.parsed_backends()? {
            if b.samples() && self.ns.is_empty() {
                return Err(Error::Config(format!("backend {b} needs a non-empty ns list")));
            }
        }
        Ok(())
    }

    fn parsed_backends(&self) -> Result<Vec<LossBackend>> {
        self.backends
            .iter()
            .map(|s| LossBackend::parse(s).ok_or_else(|| Error::Config(format!("unknown backend {s:?}"))))
            .collect()
    }

    /// Every grid point in a fixed order, with its derived seed.
    pub fn runs(&self) -> Result<Vec<TrainConfig>> {
        let mut out = Vec::new();
        for backend in self.parsed_backends()? {
            let ns_values: Vec<Option<usize>> = if backend.samples() {
                self.ns.iter().copied().map(Some).collect()
            } else {
                vec![None]
            };
            for &bs in &self.bs {
                for &sl in &self.sl {
                    for &ns in &ns_values {
                        let run = out.len() as u64;
                        out.push(TrainConfig {
                            backend,
                            bs,
                            sl,
                            ns: ns.unwrap_or(0),
                            epochs: self.epochs,
                            lr: self.lr,
                            dim: self.dim,
                            sampler: self.sampler,
                            seed: Rng::new(self.seed).fork(seeds::SWEEP + run).seed(),
                            ..TrainConfig::default()
                        });
                    }
                }
            }
        }
        Ok(out)
    }
}

/// One completed run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub bs: usize,
    pub sl: usize,
    /// Empty for backends without negatives.
    pub ns: Option<usize>,
    pub backend: String,
    pub ndcg10: f64,
    pub coverage10: f64,
    pub surprisal10: f64,
    pub retained_bytes: u64,
    pub wall_ms: f64,
    pub seed: u64,
}

pub const SWEEP_CSV_HEADER: &str =
    "bs,sl,ns,backend,ndcg10,coverage10,surprisal10,retained_bytes,wall_ms,seed";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepFailure {
    pub bs: usize,
    pub sl: usize,
    pub ns: Option<usize>,
    pub backend: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpearmanRow {
    pub feature: String,
    /// Records that carry the feature.
    pub n: usize,
    /// `None` when undefined (constant feature or metric).
    pub rho: Option<f64>,
}

fn run_one<X: Executor>(cfg: &TrainConfig, split: &SplitSpec, n_items: usize, exec: &X) -> std::result::Result<SweepRecord, SweepFailure> {
    let ns = cfg.backend.samples().then_some(cfg.ns);
    let fail = |e: Error| SweepFailure {
        bs: cfg.bs,
        sl: cfg.sl,
        ns,
        backend: cfg.backend.name().into(),
        error: e.to_string(),
    };
    let mut t = Trainer::new(cfg.clone(), split, n_items).map_err(fail)?;
    let reports = t.run(exec, |_| {}).map_err(fail)?;
    let last = reports.last().ok_or_else(|| fail(Error::Config("grid epochs must be >= 1".into())))?;
    Ok(SweepRecord {
        bs: cfg.bs,
        sl: cfg.sl,
        ns,
        backend: last.backend.clone(),
        ndcg10: last.ndcg10,
        coverage10: last.coverage10,
        surprisal10: last.surprisal10,
        retained_bytes: reports.iter().map(|r| r.retained_bytes).max().unwrap_or(0),
        wall_ms: reports.iter().map(|r| r.wall_ms).sum(),
        seed: cfg.seed,
    })
}

/// Runs every grid point; failed runs are collected, not fatal. With
/// `jobs > 1` runs execute concurrently, each on single-threaded kernels.
pub fn run_sweep<X: Executor>(
    runs: &[TrainConfig],
    split: &SplitSpec,
    n_items: usize,
    jobs: usize,
    exec: &X,
) -> Result<(Vec<SweepRecord>, Vec<SweepFailure>)> {
    let results: Vec<_> = if jobs <= 1 {
        runs.iter().map(|c| run_one(c, split, n_items, exec)).collect()
    } else {
        PoolExecutor::new(jobs)?.install(|| runs.par_iter().map(|c| run_one(c, split, n_items, &Sequential)).collect())
    };
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for r in results {
        match r {
            Ok(rec) => ok.push(rec),
            Err(f) => failed.push(f),
        }
    }
    Ok((ok, failed))
}

/// Spearman correlation of `bs`, `sl`, `ns` and their pairwise products with NDCG@10.
pub fn spearman_table(records: &[SweepRecord]) -> Vec<SpearmanRow> {
    type Feature = fn(&SweepRecord) -> Option<f64>;
    let features: [(&str, Feature); 6] = [
        ("bs", |r| Some(r.bs as f64)),
        ("sl", |r| Some(r.sl as f64)),
        ("ns", |r| r.ns.map(|n| n as f64)),
        ("bs*ns", |r| r.ns.map(|n| (r.bs * n) as f64)),
        ("sl*bs", |r| Some((r.sl * r.bs) as f64)),
        ("ns*sl", |r| r.ns.map(|n| (n * r.sl) as f64)),
    ];
    features
        .iter()
        .map(|(name, f)| {
            let (x, y): (Vec<f64>, Vec<f64>) = records.iter().filter_map(|r| f(r).map(|v| (v, r.ndcg10))).unzip();
            SpearmanRow {
                feature: (*name).to_string(),
                n: x.len(),
                rho: spearman(&x, &y),
            }
        })
        .collect()
}

pub fn write_records(records: &[SweepRecord], out: impl std::io::Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    let err = |e: csv::Error| Error::Data(format!("writing sweep records: {e}"));
    w.write_record(SWEEP_CSV_HEADER.split(',')).map_err(err)?;
    for r in records {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|e| Error::Data(format!("writing sweep records: {e}")))
}

pub fn read_records(input: impl std::io::Read) -> Result<Vec<SweepRecord>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r
        .headers()
        .map_err(|e| Error::Data(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.join(",") != SWEEP_CSV_HEADER {
        return Err(Error::Data(format!("unexpected sweep header {}", header.join(","))));
    }
    r.deserialize().map(|x| x.map_err(|e| Error::Data(e.to_string()))).collect()
}
