//! Training loop shared by every loss backend.

use std::time::Instant;

use lseforge_core::{
    bce_forward_backward, ccem_backward, ccem_forward, cce_backward, cce_forward, ce_full_backward, ce_full_forward,
    ce_sampled_backward, ce_sampled_forward, sample_uniform, Accountant, CceConfig, DenseMatrix, Env, Executor,
    GradPair, LossBackend, MemoryReport, NegIndexMatrix, PopularitySampler, PopularityTable, Real, Rng,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{evaluate, RankingMetrics};
use crate::model::{backward_batch, build_windows, forward_batch, Adam, BatchActivations, EncoderGrads, ToyEncoder, Window};
use crate::seeds;
use crate::split::{EvalPair, SplitSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Uniform,
    Popularity,
}

/// Storage width of `E` and `C` inside the loss layer. Parameters and
/// optimizer state are always `f64`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSet {
    Valid,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub backend: LossBackend,
    pub dim: usize,
    pub bs: usize,
    pub sl: usize,
    /// Negatives per position for `ce-` and `cce-`; `bce` always draws one.
    pub ns: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Only honoured by `cce`.
    pub filter_eps: f64,
    pub sampler: SamplerKind,
    pub precision: Precision,
    pub k: usize,
    pub row_block: usize,
    pub col_block: usize,
    pub eval_on: EvalSet,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let cce = CceConfig::default();
        Self {
            backend: LossBackend::Cce,
            dim: 32,
            bs: 32,
            sl: 20,
            ns: 63,
            epochs: 2,
            lr: 1e-3,
            seed: 0,
            filter_eps: 0.0,
            sampler: SamplerKind::Uniform,
            precision: Precision::F32,
            k: 10,
            row_block: cce.row_block,
            col_block: cce.col_block,
            eval_on: EvalSet::Test,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("dim", self.dim), ("bs", self.bs), ("sl", self.sl), ("k", self.k)] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if self.filter_eps != 0.0 && self.backend != LossBackend::Cce {
            return Err(Error::Config(format!(
                "filter_eps applies to the cce backend only, not {}",
                self.backend
            )));
        }
        self.cce().validate()?;
        Ok(())
    }

    pub fn cce(&self) -> CceConfig {
        CceConfig::default()
            .with_blocks(self.row_block, self.col_block)
            .with_filter_eps(self.filter_eps)
    }

    /// Negatives drawn per position, if the backend samples any.
    pub fn negatives(&self) -> Option<usize> {
        match self.backend {
            LossBackend::CeSampled | LossBackend::CceSampled => Some(self.ns),
            LossBackend::Bce => Some(1),
            LossBackend::Ce | LossBackend::Cce => None,
        }
    }
}

/// Loss and encoder gradients of one batch.
pub struct BatchOutcome {
    pub loss: f64,
    pub grads: EncoderGrads,
    /// Filtered share of off-target probabilities (`cce` only).
    pub skipped_fraction: Option<f64>,
    pub rows: usize,
}

fn loss_layer<T: Real, X: Executor>(
    e: &DenseMatrix<T>,
    c: &DenseMatrix<T>,
    x: &[usize],
    backend: LossBackend,
    negs: Option<&NegIndexMatrix>,
    cce: &CceConfig,
    exec: &X,
    acct: &mut Accountant,
) -> Result<(f64, GradPair<T>, Option<f64>)> {
    let need = || Error::Config(format!("backend {backend} needs sampled negatives"));
    Ok(match backend {
        LossBackend::Ce => {
            let out = ce_full_forward(e, c, x, acct)?;
            (out.loss, ce_full_backward(e, c, x, 1.0, acct)?, None)
        }
        LossBackend::CeSampled => {
            let inds = negs.ok_or_else(need)?;
            let out = ce_sampled_forward(e, c, inds, acct)?;
            (out.loss, ce_sampled_backward(e, c, inds, 1.0, acct)?, None)
        }
        LossBackend::Cce => {
            let mut env = Env::new(exec, acct);
            let out = cce_forward(e, c, x, cce, &mut env)?;
            let g = cce_backward(e, c, x, &out.lse, 1.0, cce, &mut env)?;
            (out.loss, g.grads, Some(g.skipped_fraction))
        }
        LossBackend::CceSampled => {
            let inds = negs.ok_or_else(need)?;
            let mut env = Env::new(exec, acct);
            let out = ccem_forward(e, c, inds, cce, &mut env)?;
            (out.loss, ccem_backward(e, c, inds, &out.lse, 1.0, cce, &mut env)?, None)
        }
        LossBackend::Bce => {
            let inds = negs.ok_or_else(need)?;
            let neg: Vec<usize> = (0..inds.rows()).map(|i| inds.row(i)[1]).collect();
            let (loss, g) = bce_forward_backward(e, c, x, &neg, 1.0, acct)?;
            (loss, g, None)
        }
    })
}

fn batch_step_typed<T: Real, X: Executor>(
    model: &ToyEncoder,
    act: &BatchActivations,
    x: &[usize],
    backend: LossBackend,
    negs: Option<&NegIndexMatrix>,
    cce: &CceConfig,
    exec: &X,
    acct: &mut Accountant,
) -> Result<BatchOutcome> {
    let e = DenseMatrix::<T>::from_f64(&act.h);
    let c = DenseMatrix::<T>::from_f64(&model.c);
    let (loss, g, skipped_fraction) = loss_layer(&e, &c, x, backend, negs, cce, exec, acct)?;
    let mut grads = model.zeros_like();
    backward_batch(model, act, &g.d_embeddings.to_f64(), &mut grads);
    grads.c = g.d_classifier.to_f64();
    Ok(BatchOutcome {
        loss,
        grads,
        skipped_fraction,
        rows: x.len(),
    })
}

/// Forward and backward of one batch of windows through encoder and loss.
#[allow(clippy::too_many_arguments)]
pub fn batch_step<X: Executor>(
    model: &ToyEncoder,
    windows: &[&Window],
    backend: LossBackend,
    negs: Option<&NegIndexMatrix>,
    cce: &CceConfig,
    precision: Precision,
    exec: &X,
    acct: &mut Accountant,
) -> Result<BatchOutcome> {
    let act = forward_batch(model, windows);
    let x = BatchActivations::targets(windows);
    match precision {
        Precision::F32 => batch_step_typed::<f32, X>(model, &act, &x, backend, negs, cce, exec, acct),
        Precision::F64 => batch_step_typed::<f64, X>(model, &act, &x, backend, negs, cce, exec, acct),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    /// Mean of the batch losses.
    pub loss: f64,
    pub wall_ms: f64,
    pub memory: MemoryReport,
    /// Row-weighted filtered share over the epoch (`cce` only).
    pub skipped_fraction: Option<f64>,
}

/// One line of training output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub backend: String,
    pub loss: f64,
    pub wall_ms: f64,
    pub retained_bytes: u64,
    pub scratch_bytes: u64,
    pub ndcg10: f64,
    pub coverage10: f64,
    pub surprisal10: f64,
    #[serde(skip)]
    pub skipped_fraction: Option<f64>,
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: ToyEncoder,
    pub adam: Adam,
    pub windows: Vec<Window>,
    pub pop: PopularityTable,
    pub eval_pairs: Vec<EvalPair>,
    pop_sampler: Option<PopularitySampler>,
}

impl Trainer {
    /// Builds windows, the training-split popularity table and a fresh model.
    /// Evaluation prefixes are cut to their last `sl` items.
    pub fn new(cfg: TrainConfig, split: &SplitSpec, n_items: usize) -> Result<Self> {
        cfg.validate()?;
        let windows = build_windows(split.train.iter().map(|s| &s.items[..]), cfg.sl);
        if windows.is_empty() {
            return Err(Error::Data("training split holds no next-item pairs".into()));
        }
        let pop = PopularityTable::from_items(n_items, split.train_items());
        let pop_sampler = match (cfg.sampler, cfg.negatives()) {
            (SamplerKind::Popularity, Some(_)) => Some(PopularitySampler::new(&pop, 1.0)?),
            _ => None,
        };
        let pairs = match cfg.eval_on {
            EvalSet::Test => &split.test,
            EvalSet::Valid => &split.valid,
        };
        let eval_pairs = pairs
            .iter()
            .map(|p| EvalPair {
                prefix: p.prefix[p.prefix.len().saturating_sub(cfg.sl)..].to_vec(),
                ..p.clone()
            })
            .collect();
        let model = ToyEncoder::init(n_items, cfg.dim, &Rng::new(cfg.seed).fork(seeds::INIT));
        let adam = Adam::new(&model, cfg.lr);
        Ok(Self {
            cfg,
            model,
            adam,
            windows,
            pop,
            eval_pairs,
            pop_sampler,
        })
    }

    /// Window indices of each batch of `epoch`, shuffled under the run seed.
    pub fn batches(&self, epoch: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.windows.len()).collect();
        Rng::new(self.cfg.seed).fork(seeds::ORDER + epoch as u64).shuffle(&mut order);
        order.chunks(self.cfg.bs).map(<[usize]>::to_vec).collect()
    }

    /// Negatives for batch `b` of `epoch`; independent of the backend in use.
    pub fn negatives(&self, epoch: usize, b: usize, positives: &[usize]) -> Result<Option<NegIndexMatrix>> {
        let Some(ns) = self.cfg.negatives() else {
            return Ok(None);
        };
        let rng = Rng::new(self.cfg.seed).fork(seeds::NEGATIVES + epoch as u64).fork(b as u64);
        let m = match &self.pop_sampler {
            Some(s) => s.sample(positives, ns, &rng)?,
            None => sample_uniform(positives, ns, self.model.n_items(), &rng)?,
        };
        Ok(Some(m))
    }

    pub fn train_epoch<X: Executor>(&mut self, epoch: usize, exec: &X) -> Result<EpochStats> {
        let start = Instant::now();
        let cce = self.cfg.cce();
        let mut acct = Accountant::new();
        let (mut loss_sum, mut n_batches) = (0.0, 0usize);
        let (mut skipped, mut skip_rows) = (0.0, 0usize);
        for (b, idx) in self.batches(epoch).into_iter().enumerate() {
            let ws: Vec<&Window> = idx.iter().map(|&i| &self.windows[i]).collect();
            let x = BatchActivations::targets(&ws);
            let negs = self.negatives(epoch, b, &x)?;
            let out = batch_step(
                &self.model,
                &ws,
                self.cfg.backend,
                negs.as_ref(),
                &cce,
                self.cfg.precision,
                exec,
                &mut acct,
            )?;
            if !out.loss.is_finite() {
                return Err(Error::Data(format!("non-finite loss in epoch {epoch}, batch {b}")));
            }
            loss_sum += out.loss;
            n_batches += 1;
            if let Some(s) = out.skipped_fraction {
                skipped += s * out.rows as f64;
                skip_rows += out.rows;
            }
            self.adam.update(&mut self.model, &out.grads);
        }
        Ok(EpochStats {
            loss: loss_sum / n_batches as f64,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
            memory: acct.report()?,
            skipped_fraction: (skip_rows > 0).then(|| skipped / skip_rows as f64),
        })
    }

    pub fn evaluate(&self) -> Result<RankingMetrics> {
        evaluate(&self.model, &self.eval_pairs, self.cfg.k, &self.pop)
    }

    /// Trains `cfg.epochs` epochs, evaluating after each; epochs are numbered from 1.
    pub fn run<X: Executor>(&mut self, exec: &X, mut on_epoch: impl FnMut(&EpochReport)) -> Result<Vec<EpochReport>> {
        let mut out = Vec::with_capacity(self.cfg.epochs);
        for epoch in 1..=self.cfg.epochs {
            let stats = self.train_epoch(epoch, exec)?;
            let m = self.evaluate()?;
            let r = EpochReport {
                epoch,
                backend: self.cfg.backend.name().to_string(),
                loss: stats.loss,
                wall_ms: stats.wall_ms,
                retained_bytes: stats.memory.retained.bytes as u64,
                scratch_bytes: stats.memory.scratch.bytes as u64,
                ndcg10: m.ndcg,
                coverage10: m.coverage,
                surprisal10: m.surprisal,
                skipped_fraction: stats.skipped_fraction,
            };
            on_epoch(&r);
            out.push(r);
        }
        Ok(out)
    }
}
