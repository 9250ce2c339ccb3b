//! Closed-form loss-layer memory footprint per backend.
//!
//! Predictions mirror what the kernels report to the
//! [`Accountant`](crate::accountant::Accountant): retained buffers at storage
//! width (`dtype_bytes`), item indices at [`INDEX_BYTES`], scratch at
//! [`SCRATCH_BYTES`].
//!
//! | backend | retained | scratch |
//! |---------|----------|---------|
//! | CE   | `N·V + N` floats | `N·V` |
//! | CE⁻  | `N·w + N` floats, `N·w` indices | `N·w` |
//! | CCE  | `2N` floats | max over the three tiled passes |
//! | CCE⁻ | `2N` floats, `N·w` indices | `workers·(rb·(D+3) + rb·w)` |
//! | BCE  | `2N` floats, `N` indices | `2N` |
//!
//! with `w = 1 + ns`.

use crate::accountant::{INDEX_BYTES, SCRATCH_BYTES};
use crate::cce::{cce_scratch_per_worker, CceConfig, Tiling};
use crate::ccem::{ccem_scratch_per_worker, LossBackend};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemoryModel {
    pub backend: LossBackend,
    /// Rows of `E`, i.e. `bs · sl` valid positions.
    pub n: usize,
    pub v: usize,
    pub d: usize,
    /// Negatives per row; required iff the backend samples.
    pub ns: Option<usize>,
    pub dtype_bytes: usize,
    pub row_block: usize,
    pub col_block: usize,
    /// Concurrent kernel workers.
    pub workers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeakBytes {
    pub retained: u128,
    pub scratch: u128,
    pub retained_scalars: u128,
    pub scratch_scalars: u128,
}

impl MemoryModel {
    pub fn new(backend: LossBackend, n: usize, v: usize, d: usize) -> Self {
        let cfg = CceConfig::default();
        Self {
            backend,
            n,
            v,
            d,
            ns: None,
            dtype_bytes: 4,
            row_block: cfg.row_block,
            col_block: cfg.col_block,
            workers: 1,
        }
    }

    pub fn with_ns(mut self, ns: usize) -> Self {
        self.ns = Some(ns);
        self
    }

    pub fn with_dtype_bytes(mut self, b: usize) -> Self {
        self.dtype_bytes = b;
        self
    }

    pub fn with_blocks(mut self, row_block: usize, col_block: usize) -> Self {
        self.row_block = row_block;
        self.col_block = col_block;
        self
    }

    pub fn with_workers(mut self, w: usize) -> Self {
        self.workers = w;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [self.n, self.v, self.d, self.row_block, self.col_block, self.workers];
        if counts.contains(&0) {
            return Err(Error::InvalidConfig("memory model counts must be >= 1".into()));
        }
        if !matches!(self.dtype_bytes, 2 | 4 | 8) {
            return Err(Error::InvalidConfig(alloc::format!(
                "dtype_bytes must be 2, 4 or 8, got {}",
                self.dtype_bytes
            )));
        }
        if self.backend.samples() != self.ns.is_some() {
            return Err(Error::InvalidConfig(alloc::format!(
                "backend {} {} a negative count",
                self.backend,
                if self.backend.samples() { "requires" } else { "does not take" }
            )));
        }
        Ok(())
    }

    /// Number of logits a materializing full-catalog loss stores: `N · V`.
    pub fn full_logit_scalars(&self) -> u128 {
        self.n as u128 * self.v as u128
    }
}

/// Peak retained and scratch footprint of one forward + backward.
pub fn peak_bytes(m: &MemoryModel) -> Result<PeakBytes> {
    m.validate()?;
    let n = m.n as u128;
    let v = m.v as u128;
    let dt = m.dtype_bytes as u128;
    let ib = INDEX_BYTES as u128;
    let sb = SCRATCH_BYTES as u128;
    let w = m.ns.map_or(0, |ns| ns as u128 + 1);

    let (floats, indices, scratch) = match m.backend {
        LossBackend::Ce => (n * v + n, 0, n * v),
        LossBackend::CeSampled => (n * w + n, n * w, n * w),
        LossBackend::Cce => {
            let cfg = CceConfig::default().with_blocks(m.row_block, m.col_block);
            let t = Tiling::new(&cfg, m.n, m.v);
            let (fwd, rows, cols) = cce_scratch_per_worker(&t, m.d);
            let wa = m.workers.min(t.row_blocks) as u128;
            let wb = m.workers.min(t.col_blocks) as u128;
            let s = (wa * fwd as u128).max(wa * rows as u128).max(wb * cols as u128);
            (2 * n, 0, s)
        }
        LossBackend::CceSampled => {
            let rb = m.row_block.min(m.n);
            let blocks = m.n.div_ceil(rb);
            let wk = m.workers.min(blocks) as u128;
            let (fwd, bwd) = ccem_scratch_per_worker(rb, m.d, w as usize);
            (2 * n, n * w, wk * (fwd.max(bwd)) as u128)
        }
        LossBackend::Bce => (2 * n, n, 2 * n),
    };
    Ok(PeakBytes {
        retained: floats * dt + indices * ib,
        scratch: scratch * sb,
        retained_scalars: floats + indices,
        scratch_scalars: scratch,
    })
}
