//! Fused linear + log-sum-exp restricted to per-row sampled items.
//!
//! Forward: for each row block, walk the `1 + ns` slots of the index matrix,
//! load the indexed classifier column for every row of the block, take the
//! dot product and fold it into the row's streaming `(max, sum)` pair. Slot 0
//! is the positive and its logit is kept. Nothing of size `N x (1 + ns)` is
//! materialized besides the index matrix itself.
//!
//! Backward: recompute each slot's logit, form `s = exp(o - lse)`, subtract 1
//! at slot 0, scale by the row weight and accumulate `dE` in place. The
//! per-(row, slot) coefficients of a wave of row blocks are then scattered
//! into `dC` in row-major (row, slot) order, so duplicated indices add up in
//! the same order no matter how many workers ran the wave.
//!
//! No gradient filtering here; it would slot in right after `s` is formed.

use alloc::vec;
use alloc::vec::Vec;

use crate::accountant::{tags, MemClass, INDEX_BYTES, SCRATCH_BYTES};
use crate::cce::{dot_mixed, CceConfig};
use crate::error::{Error, Result};
use crate::exec::{Env, Executor};
use crate::inds::NegIndexMatrix;
use crate::lse::online_lse_update;
use crate::matrix::DenseMatrix;
use crate::oracle::{check_sampled, GradPair, LossOutput};
use crate::real::Real;

/// Per-worker scratch scalars: `(forward, backward)`.
pub fn ccem_scratch_per_worker(rb: usize, d: usize, width: usize) -> (usize, usize) {
    (rb * (d + 3), rb * (d + 3) + rb * width)
}

pub fn ccem_forward<T: Real, X: Executor>(
    e: &DenseMatrix<T>,
    c: &DenseMatrix<T>,
    inds: &NegIndexMatrix,
    cfg: &CceConfig,
    env: &mut Env<'_, X>,
) -> Result<LossOutput<T>> {
    cfg.validate()?;
    let (n, d, _) = check_sampled("ccem_forward", e, c, inds)?;
    let width = inds.width();
    let rb = cfg.row_block.min(n);
    let n_blocks = n.div_ceil(rb);
    let workers = env.exec.workers().min(n_blocks).max(1);
    let (per_worker, _) = ccem_scratch_per_worker(rb, d, width);

    env.acct.record_alloc(tags::INDS, MemClass::Retained, INDEX_BYTES, n * width);
    env.acct.record_alloc(tags::POS_LOGITS, MemClass::Retained, T::BYTES, n);
    env.acct.record_alloc(tags::LSE, MemClass::Retained, T::BYTES, n);
    env.acct.record_alloc(tags::TILE, MemClass::Scratch, SCRATCH_BYTES, workers * per_worker);

    let blocks = env.exec.map(n_blocks, |b| {
        let r0 = b * rb;
        let r1 = (r0 + rb).min(n);
        let rows = r1 - r0;
        let mut cn = vec![0.0f64; rows * d];
        let mut o = vec![0.0f64; rows];
        let mut m = vec![f64::NEG_INFINITY; rows];
        let mut s = vec![0.0f64; rows];
        let mut pos = vec![0.0f64; rows];
        for j in 0..width {
            for ri in 0..rows {
                c.load_column(inds.row(r0 + ri)[j], &mut cn[ri * d..(ri + 1) * d]);
            }
            for ri in 0..rows {
                o[ri] = dot_mixed(e.row(r0 + ri), &cn[ri * d..(ri + 1) * d]);
            }
            if j == 0 {
                pos.copy_from_slice(&o);
            }
            for ri in 0..rows {
                let (mn, dn) = online_lse_update((m[ri], s[ri]), o[ri]);
                m[ri] = mn;
                s[ri] = dn;
            }
        }
        let lse: Vec<f64> = m.iter().zip(&s).map(|(&mi, &di)| mi + libm::log(di)).collect();
        (pos, lse)
    });

    env.acct.record_free(tags::TILE, workers * per_worker);

    let mut pos = Vec::with_capacity(n);
    let mut lse = Vec::with_capacity(n);
    for (p, l) in blocks {
        pos.extend(p.into_iter().map(T::from_f64));
        lse.extend(l.into_iter().map(T::from_f64));
    }
    Ok(LossOutput::from_parts(pos, lse))
}

/// Backward for the mean loss: every row weighted by `upstream / N`.
pub fn ccem_backward<T: Real, X: Executor>(
    e: &DenseMatrix<T>,
    c: &DenseMatrix<T>,
    inds: &NegIndexMatrix,
    lse: &[T],
    upstream: f64,
    cfg: &CceConfig,
    env: &mut Env<'_, X>,
) -> Result<GradPair<T>> {
    let n = e.rows();
    let w = if n == 0 { 0.0 } else { upstream / n as f64 };
    let weights = vec![w; n];
    ccem_backward_weighted(e, c, inds, lse, &weights, cfg, env)
}

/// Backward with an arbitrary per-row weight `row_weight[i] = ∂L/∂(lse_i - pos_i)`.
/// Releases the forward's retained buffers.
pub fn ccem_backward_weighted<T: Real, X: Executor>(
    e: &DenseMatrix<T>,
    c: &DenseMatrix<T>,
    inds: &NegIndexMatrix,
    lse: &[T],
    row_weight: &[f64],
    cfg: &CceConfig,
    env: &mut Env<'_, X>,
) -> Result<GradPair<T>> {
    cfg.validate()?;
    let (n, d, v) = check_sampled("ccem_backward", e, c, inds)?;
    for (len, what) in [(lse.len(), "ccem_backward lse"), (row_weight.len(), "ccem_backward weights")] {
        if len != n {
            return Err(Error::LengthMismatch {
                op: what,
                expected: n,
                actual: len,
            });
        }
    }
    let width = inds.width();
    let rb = cfg.row_block.min(n);
    let n_blocks = n.div_ceil(rb);
    let wave = env.exec.workers().max(1);
    let workers = wave.min(n_blocks);
    let (_, per_worker) = ccem_scratch_per_worker(rb, d, width);
    env.acct.record_alloc(tags::TILE, MemClass::Scratch, SCRATCH_BYTES, workers * per_worker);

    let mut d_e = DenseMatrix::<T>::zeros(n, d);
    let mut d_c = vec![0.0f64; d * v];

    let mut b0 = 0;
    while b0 < n_blocks {
        let b1 = (b0 + wave).min(n_blocks);
        let parts = env.exec.map(b1 - b0, |k| {
            let r0 = (b0 + k) * rb;
            let r1 = (r0 + rb).min(n);
            let rows = r1 - r0;
            let mut cn = vec![0.0f64; rows * d];
            let mut g = vec![0.0f64; rows * width];
            let mut de = vec![0.0f64; rows * d];
            for j in 0..width {
                for ri in 0..rows {
                    c.load_column(inds.row(r0 + ri)[j], &mut cn[ri * d..(ri + 1) * d]);
                }
                for ri in 0..rows {
                    let i = r0 + ri;
                    let col = &cn[ri * d..(ri + 1) * d];
                    let o = dot_mixed(e.row(i), col);
                    let s = libm::exp(o - lse[i].to_f64());
                    let gij = if j == 0 { (s - 1.0) * row_weight[i] } else { s * row_weight[i] };
                    g[ri * width + j] = gij;
                    for (acc, &cv) in de[ri * d..(ri + 1) * d].iter_mut().zip(col) {
                        *acc += gij * cv;
                    }
                }
            }
            (de, g)
        });
        for (k, (de, g)) in parts.into_iter().enumerate() {
            let r0 = (b0 + k) * rb;
            let rows = de.len() / d.max(1);
            for (dst, &src) in d_e.data_mut()[r0 * d..r0 * d + de.len()].iter_mut().zip(&de) {
                *dst = T::from_f64(src);
            }
            for ri in 0..rows {
                let i = r0 + ri;
                let e_row = e.row(i);
                for (j, &item) in inds.row(i).iter().enumerate() {
                    let gij = g[ri * width + j];
                    for (kd, ev) in e_row.iter().enumerate() {
                        d_c[kd * v + item] += gij * ev.to_f64();
                    }
                }
            }
        }
        b0 = b1;
    }

    env.acct.record_free(tags::TILE, workers * per_worker);
    env.acct.record_free(tags::INDS, n * width);
    env.acct.record_free(tags::POS_LOGITS, n);
    env.acct.record_free(tags::LSE, n);

    Ok(GradPair {
        d_embeddings: d_e,
        d_classifier: DenseMatrix::from_vec(d, v, d_c.into_iter().map(T::from_f64).collect())?,
    })
}

/// Which loss layer a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LossBackend {
    /// Full cross-entropy, logits materialized.
    Ce,
    /// Sampled cross-entropy, gathered logits materialized.
    CeSampled,
    /// Fused full cross-entropy.
    Cce,
    /// Fused sampled cross-entropy.
    CceSampled,
    /// Binary cross-entropy with one negative.
    Bce,
}

impl LossBackend {
    pub const ALL: [LossBackend; 5] = [Self::Ce, Self::CeSampled, Self::Cce, Self::CceSampled, Self::Bce];

    pub fn samples(self) -> bool {
        matches!(self, Self::CeSampled | Self::CceSampled)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Ce => "ce",
            Self::CeSampled => "ce-",
            Self::Cce => "cce",
            Self::CceSampled => "cce-",
            Self::Bce => "bce",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s.to_ascii_lowercase().as_str() {
            "ce" => Self::Ce,
            "ce-" | "ce_neg" | "ce-neg" | "cem" => Self::CeSampled,
            "cce" => Self::Cce,
            "cce-" | "cce_neg" | "cce-neg" | "ccem" => Self::CceSampled,
            "bce" => Self::Bce,
            _ => return None,
        })
    }
}

impl core::fmt::Display for LossBackend {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

/// Multiply-add counts of one forward and one backward call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlopEstimate {
    pub forward: u128,
    pub backward: u128,
}

/// Closed-form multiply counts.
///
/// Forward: `N·D·V` for the full-catalog losses, `N·D·(1+ns)` for the
/// sampled ones, `2·N·D` for BCE. Backward: the materializing losses form
/// two gradient products (2x forward); the sampled fused kernel recomputes the
/// logits once more (3x); the full fused kernel recomputes them in both its
/// row pass and its column pass (4x). `ns` is ignored for non-sampling backends.
pub fn estimate_flops(n: usize, d: usize, v: usize, ns: usize, backend: LossBackend) -> FlopEstimate {
    let (n, d, v, ns) = (n as u128, d as u128, v as u128, ns as u128);
    let (forward, factor) = match backend {
        LossBackend::Ce => (n * d * v, 2),
        LossBackend::Cce => (n * d * v, 4),
        LossBackend::CeSampled => (n * d * (1 + ns), 2),
        LossBackend::CceSampled => (n * d * (1 + ns), 3),
        LossBackend::Bce => (2 * n * d, 2),
    };
    FlopEstimate {
        forward,
        backward: factor * forward,
    }
}
