//! Blockwise fused linear + log-sum-exp over the full catalog.
//!
//! The forward pass streams `C` in column blocks through a row block of `E`,
//! folding each tile of logits into a running log-sum-exp. Only the positive
//! logits and the LSE vector leave the kernel. The backward pass recomputes
//! each tile and turns it into softmax probabilities `exp(o - lse)`.
//!
//! Backward work is split into two deterministic passes: a row-block pass
//! that owns rows of `dE`, and a column-block pass that owns columns of `dC`
//! and walks the rows in order. Neither pass shares mutable state, so the
//! result is bitwise identical for any number of workers.
//!
//! With `filter_eps > 0` every off-target probability below the threshold is
//! dropped from both gradients. The positive item's term is always kept.

use alloc::vec;
use alloc::vec::Vec;

use crate::accountant::{tags, MemClass, SCRATCH_BYTES};
use crate::error::{Error, Result};
use crate::exec::{Env, Executor};
use crate::matrix::DenseMatrix;
use crate::oracle::{check_dense, GradPair, LossOutput};
use crate::real::Real;
use crate::lse::LseState;

/// fp16's smallest positive subnormal, rounded.
pub const FP16_MIN_POSITIVE: f64 = 6e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CceConfig {
    /// Rows of `E` per tile.
    pub row_block: usize,
    /// Columns of `C` per tile.
    pub col_block: usize,
    /// Softmax probabilities below this are skipped in the backward pass.
    pub filter_eps: f64,
}

impl Default for CceConfig {
    fn default() -> Self {
        Self {
            row_block: 128,
            col_block: 256,
            filter_eps: 0.0,
        }
    }
}

impl CceConfig {
    /// Default tiling with the filter set to the fp16 underflow threshold.
    pub fn fp16_filtering() -> Self {
        Self {
            filter_eps: FP16_MIN_POSITIVE,
            ..Self::default()
        }
    }

    pub fn with_blocks(mut self, row_block: usize, col_block: usize) -> Self {
        self.row_block = row_block;
        self.col_block = col_block;
        self
    }

    pub fn with_filter_eps(mut self, eps: f64) -> Self {
        self.filter_eps = eps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.row_block == 0 || self.col_block == 0 {
            return Err(Error::InvalidConfig(alloc::format!(
                "block sizes must be >= 1, got {}x{}",
                self.row_block,
                self.col_block
            )));
        }
        if !(self.filter_eps >= 0.0 && self.filter_eps.is_finite()) {
            return Err(Error::InvalidConfig(alloc::format!(
                "filter_eps must be finite and >= 0, got {}",
                self.filter_eps
            )));
        }
        Ok(())
    }
}

/// Backward result of [`cce_backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct CceGrad<T> {
    pub grads: GradPair<T>,
    /// Skipped off-target probabilities over all `N * (V - 1)` of them.
    pub skipped_fraction: f64,
}

/// Effective tile geometry for a problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tiling {
    pub rb: usize,
    pub cb: usize,
    pub row_blocks: usize,
    pub col_blocks: usize,
}

impl Tiling {
    pub fn new(cfg: &CceConfig, n: usize, v: usize) -> Self {
        let rb = cfg.row_block.min(n).max(1);
        let cb = cfg.col_block.min(v).max(1);
        Self {
            rb,
            cb,
            row_blocks: n.div_ceil(rb),
            col_blocks: v.div_ceil(cb),
        }
    }
}

/// Per-worker scratch scalars of each CCE pass: `(forward, backward rows, backward columns)`.
pub fn cce_scratch_per_worker(t: &Tiling, d: usize) -> (usize, usize, usize) {
    let tile = t.rb * t.cb;
    (tile + t.cb * d + 2 * t.rb, tile + t.cb * d, tile + 2 * t.cb * d)
}

#[inline]
pub(crate) fn dot_mixed<T: Real>(e_row: &[T], col: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (a, b) in e_row.iter().zip(col) {
        acc += a.to_f64() * b;
    }
    acc
}

/// Fills `tile[(i - r0) * cbw + j]` with the logit of row `i` against column `c0 + j`.
#[inline]
fn fill_tile<T: Real>(
    e: &DenseMatrix<T>,
    rows: core::ops::Range<usize>,
    cblock: &[f64],
    d: usize,
    cbw: usize,
    tile: &mut [f64],
) {
    for (ri, i) in rows.enumerate() {
        let e_row = e.row(i);
        let out = &mut tile[ri * cbw..(ri + 1) * cbw];
        for (j, o) in out.iter_mut().enumerate() {
            *o = dot_mixed(e_row, &cblock[j * d..(j + 1) * d]);
        }
    }
}

/// Fused cross-entropy forward. Retains `pos_logits` and `lse` only.
pub fn cce_forward<T: Real, X: Executor>(
    e: &DenseMatrix<T>,
    c: &DenseMatrix<T>,
    x: &[usize],
    cfg: &CceConfig,
    env: &mut Env<'_, X>,
) -> Result<LossOutput<T>> {
    cfg.validate()?;
    let (n, d, v) = check_dense("cce_forward", e, c, x)?;
    let t = Tiling::new(cfg, n, v);
    let workers = env.exec.workers().min(t.row_blocks).max(1);
    let (per_worker, _, _) = cce_scratch_per_worker(&t, d);

    env.acct.record_alloc(tags::POS_LOGITS, MemClass::Retained, T::BYTES, n);
    env.acct.record_alloc(tags::LSE, MemClass::Retained, T::BYTES, n);
    env.acct.record_alloc(tags::TILE, MemClass::Scratch, SCRATCH_BYTES, workers * per_worker);

    let blocks = env.exec.map(t.row_blocks, |b| {
        let r0 = b * t.rb;
        let r1 = (r0 + t.rb).min(n);
        let rows = r1 - r0;
        let mut states = vec![LseState::new(); rows];
        let mut pos = vec![0.0f64; rows];
        let mut cblock = Vec::with_capacity(t.cb * d);
        let mut tile = vec![0.0f64; t.rb * t.cb];
        for cbi in 0..t.col_blocks {
            let c0 = cbi * t.cb;
            let c1 = (c0 + t.cb).min(v);
            let cbw = c1 - c0;
            c.gather_columns_into(c0..c1, &mut cblock);
            fill_tile(e, r0..r1, &cblock, d, cbw, &mut tile);
            for ri in 0..rows {
                let row = &tile[ri * cbw..(ri + 1) * cbw];
                states[ri].push_block(row);
                let xi = x[r0 + ri];
                if (c0..c1).contains(&xi) {
                    pos[ri] = row[xi - c0];
                }
            }
        }
        let lse: Vec<f64> = states.iter().map(LseState::value).collect();
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

/// Gradient coefficient for one logit: `scale * (s - [target])`, or `None` when filtered.
#[inline]
fn coeff(o: f64, lse: f64, is_target: bool, scale: f64, eps: f64) -> Option<f64> {
    let s = libm::exp(o - lse);
    if is_target {
        Some((s - 1.0) * scale)
    } else if s < eps {
        None
    } else {
        Some(s * scale)
    }
}

/// Fused cross-entropy backward. `lse` must come from [`cce_forward`] on the
/// same inputs. Releases the forward's retained buffers.
pub fn cce_backward<T: Real, X: Executor>(
    e: &DenseMatrix<T>,
    c: &DenseMatrix<T>,
    x: &[usize],
    lse: &[T],
    upstream: f64,
    cfg: &CceConfig,
    env: &mut Env<'_, X>,
) -> Result<CceGrad<T>> {
    cfg.validate()?;
    let (n, d, v) = check_dense("cce_backward", e, c, x)?;
    if lse.len() != n {
        return Err(Error::LengthMismatch {
            op: "cce_backward",
            expected: n,
            actual: lse.len(),
        });
    }
    let t = Tiling::new(cfg, n, v);
    let (_, rows_scratch, cols_scratch) = cce_scratch_per_worker(&t, d);
    let scale = upstream / n as f64;
    let eps = cfg.filter_eps;

    // Row pass: dE.
    let wa = env.exec.workers().min(t.row_blocks).max(1);
    env.acct.record_alloc(tags::TILE, MemClass::Scratch, SCRATCH_BYTES, wa * rows_scratch);
    let row_parts = env.exec.map(t.row_blocks, |b| {
        let r0 = b * t.rb;
        let r1 = (r0 + t.rb).min(n);
        let rows = r1 - r0;
        let mut de = vec![0.0f64; rows * d];
        let mut skipped = 0usize;
        let mut cblock = Vec::with_capacity(t.cb * d);
        let mut tile = vec![0.0f64; t.rb * t.cb];
        for cbi in 0..t.col_blocks {
            let c0 = cbi * t.cb;
            let c1 = (c0 + t.cb).min(v);
            let cbw = c1 - c0;
            c.gather_columns_into(c0..c1, &mut cblock);
            fill_tile(e, r0..r1, &cblock, d, cbw, &mut tile);
            for ri in 0..rows {
                let i = r0 + ri;
                let li = lse[i].to_f64();
                let de_row = &mut de[ri * d..(ri + 1) * d];
                for j in 0..cbw {
                    match coeff(tile[ri * cbw + j], li, x[i] == c0 + j, scale, eps) {
                        Some(g) => {
                            for (acc, &cv) in de_row.iter_mut().zip(&cblock[j * d..(j + 1) * d]) {
                                *acc += g * cv;
                            }
                        }
                        None => skipped += 1,
                    }
                }
            }
        }
        (de, skipped)
    });
    env.acct.record_free(tags::TILE, wa * rows_scratch);

    // Column pass: dC.
    let wb = env.exec.workers().min(t.col_blocks).max(1);
    env.acct.record_alloc(tags::TILE, MemClass::Scratch, SCRATCH_BYTES, wb * cols_scratch);
    let col_parts = env.exec.map(t.col_blocks, |cbi| {
        let c0 = cbi * t.cb;
        let c1 = (c0 + t.cb).min(v);
        let cbw = c1 - c0;
        let mut cblock = Vec::with_capacity(t.cb * d);
        c.gather_columns_into(c0..c1, &mut cblock);
        let mut dcb = vec![0.0f64; cbw * d];
        let mut tile = vec![0.0f64; t.rb * t.cb];
        for b in 0..t.row_blocks {
            let r0 = b * t.rb;
            let r1 = (r0 + t.rb).min(n);
            fill_tile(e, r0..r1, &cblock, d, cbw, &mut tile);
            for i in r0..r1 {
                let ri = i - r0;
                let li = lse[i].to_f64();
                let e_row = e.row(i);
                for j in 0..cbw {
                    if let Some(g) = coeff(tile[ri * cbw + j], li, x[i] == c0 + j, scale, eps) {
                        for (acc, &ev) in dcb[j * d..(j + 1) * d].iter_mut().zip(e_row) {
                            *acc += g * ev.to_f64();
                        }
                    }
                }
            }
        }
        dcb
    });
    env.acct.record_free(tags::TILE, wb * cols_scratch);
    env.acct.record_free(tags::POS_LOGITS, n);
    env.acct.record_free(tags::LSE, n);

    let mut d_e = DenseMatrix::<T>::zeros(n, d);
    let mut skipped = 0usize;
    let mut off = 0;
    for (de, s) in row_parts {
        for (dst, &src) in d_e.data_mut()[off..off + de.len()].iter_mut().zip(&de) {
            *dst = T::from_f64(src);
        }
        off += de.len();
        skipped += s;
    }
    let mut d_c = DenseMatrix::<T>::zeros(d, v);
    for (cbi, dcb) in col_parts.into_iter().enumerate() {
        let c0 = cbi * t.cb;
        for (j, col) in dcb.chunks_exact(d).enumerate() {
            for (k, &g) in col.iter().enumerate() {
                d_c.set(k, c0 + j, T::from_f64(g));
            }
        }
    }
    let off_target = n * (v - 1);
    let skipped_fraction = if off_target == 0 {
        0.0
    } else {
        skipped as f64 / off_target as f64
    };
    Ok(CceGrad {
        grads: GradPair {
            d_embeddings: d_e,
            d_classifier: d_c,
        },
        skipped_fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::accountant::Accountant;
    use crate::exec::Sequential;
    use crate::oracle::{ce_full_backward, ce_full_forward};
    use crate::rng::Rng;

    fn inst(seed: u64, n: usize, d: usize, v: usize, s: f64) -> (DenseMatrix<f64>, DenseMatrix<f64>, Vec<usize>) {
        let mut rng = Rng::new(seed);
        let e = DenseMatrix::from_fn(n, d, |_, _| rng.uniform_f64(-s, s));
        let c = DenseMatrix::from_fn(d, v, |_, _| rng.uniform_f64(-s, s));
        let x = (0..n).map(|_| rng.below(v)).collect();
        (e, c, x)
    }

    fn close(a: &DenseMatrix<f64>, b: &DenseMatrix<f64>, tol: f64) -> bool {
        let scale = b.max_abs().max(1e-300);
        a.data().iter().zip(b.data()).all(|(p, q)| (p - q).abs() <= tol * scale)
    }

    #[test]
    fn uniform_two_item_case() {
        let e = DenseMatrix::<f64>::from_rows(&[&[0.0]]).unwrap();
        let c = DenseMatrix::<f64>::from_rows(&[&[0.0, 0.0]]).unwrap();
        let mut a = Accountant::new();
        let out = cce_forward(&e, &c, &[0], &CceConfig::default(), &mut Env::new(&Sequential, &mut a)).unwrap();
        assert!((out.loss - core::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn degenerate_tiling_matches_oracle() {
        let (e, c, x) = inst(1, 8, 4, 16, 1.0);
        let cfg = CceConfig::default().with_blocks(1, 1);
        let mut a = Accountant::new();
        let got = cce_forward(&e, &c, &x, &cfg, &mut Env::new(&Sequential, &mut a)).unwrap();
        let want = ce_full_forward(&e, &c, &x, &mut Accountant::new()).unwrap();
        assert!((got.loss - want.loss).abs() <= 1e-12 * want.loss);
    }

    #[test]
    fn exact_backward_matches_oracle() {
        let (e, c, x) = inst(2, 8, 4, 16, 1.0);
        let cfg = CceConfig::default().with_blocks(3, 5);
        let mut a = Accountant::new();
        let mut env = Env::new(&Sequential, &mut a);
        let out = cce_forward(&e, &c, &x, &cfg, &mut env).unwrap();
        let got = cce_backward(&e, &c, &x, &out.lse, 1.0, &cfg, &mut env).unwrap();
        let want = ce_full_backward(&e, &c, &x, 1.0, &mut Accountant::new()).unwrap();
        assert!(close(&got.grads.d_embeddings, &want.d_embeddings, 1e-12));
        assert!(close(&got.grads.d_classifier, &want.d_classifier, 1e-12));
        assert_eq!(got.skipped_fraction, 0.0);
        assert_eq!(a.report().unwrap().retained.scalars, 16);
    }

    #[test]
    fn total_filtering_keeps_only_positive_terms() {
        let (e, c, x) = inst(3, 6, 3, 10, 0.5);
        let cfg = CceConfig::default().with_filter_eps(1.0);
        let mut a = Accountant::new();
        let mut env = Env::new(&Sequential, &mut a);
        let out = cce_forward(&e, &c, &x, &cfg, &mut env).unwrap();
        let got = cce_backward(&e, &c, &x, &out.lse, 1.0, &cfg, &mut env).unwrap();
        assert_eq!(got.skipped_fraction, 1.0);
        let n = 6.0;
        let mut want = DenseMatrix::<f64>::zeros(3, 10);
        for i in 0..6 {
            let s = libm::exp(out.pos_logits[i] - out.lse[i]);
            for k in 0..3 {
                let w = want.get(k, x[i]) + (s - 1.0) / n * e.get(i, k);
                want.set(k, x[i], w);
            }
        }
        assert!(close(&got.grads.d_classifier, &want, 1e-12));
    }

    #[test]
    fn filter_error_bounded_by_eps() {
        let (e, c, x) = inst(4, 12, 5, 40, 2.0);
        let mut a = Accountant::new();
        let mut env = Env::new(&Sequential, &mut a);
        let base = CceConfig::default().with_blocks(4, 7);
        let out = cce_forward(&e, &c, &x, &base, &mut env).unwrap();
        let exact = cce_backward(&e, &c, &x, &out.lse, 1.0, &base, &mut env).unwrap();
        let mut last = 0.0;
        for &eps in &[1e-6, 1e-4, 1e-3, 1e-2, 1e-1] {
            cce_forward(&e, &c, &x, &base, &mut env).unwrap();
            let f = cce_backward(&e, &c, &x, &out.lse, 1.0, &base.with_filter_eps(eps), &mut env).unwrap();
            assert!(f.skipped_fraction >= last);
            last = f.skipped_fraction;
            // each skipped term is below eps/N times a max-|E| (or max-|C|) factor
            let bound_c = eps * e.max_abs();
            let bound_e = eps * 40.0 / 12.0 * c.max_abs();
            for (p, q) in f.grads.d_classifier.data().iter().zip(exact.grads.d_classifier.data()) {
                assert!((p - q).abs() <= bound_c);
            }
            for (p, q) in f.grads.d_embeddings.data().iter().zip(exact.grads.d_embeddings.data()) {
                assert!((p - q).abs() <= bound_e);
            }
        }
        a.report().unwrap();
    }

    #[test]
    fn lse_length_mismatch() {
        let (e, c, x) = inst(5, 4, 2, 6, 1.0);
        let mut a = Accountant::new();
        let err = cce_backward(&e, &c, &x, &[0.0; 3], 1.0, &CceConfig::default(), &mut Env::new(&Sequential, &mut a))
            .unwrap_err();
        assert_eq!(err, Error::LengthMismatch { op: "cce_backward", expected: 4, actual: 3 });
    }

    #[test]
    fn zero_blocks_rejected() {
        assert!(CceConfig::default().with_blocks(0, 4).validate().is_err());
        assert!(CceConfig::default().with_filter_eps(-1.0).validate().is_err());
    }
}
