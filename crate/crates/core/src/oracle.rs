//! Reference losses that materialize every logit they touch.
//!
//! These are the slow, memory-hungry ground truth the fused kernels are
//! checked against: full softmax cross-entropy, cross-entropy over a sampled
//! index set, and binary cross-entropy with one negative per row.
//!
//! All losses use mean reduction over the `N` rows. Backward ops take an
//! `upstream` scalar that multiplies the whole gradient.

use alloc::vec;
use alloc::vec::Vec;

use crate::accountant::{tags, Accountant, MemClass, INDEX_BYTES, SCRATCH_BYTES};
use crate::error::{Error, Result};
use crate::inds::NegIndexMatrix;
use crate::lse::logsumexp_row;
use crate::matrix::{matmul_block, DenseMatrix};
use crate::real::Real;

/// Result of a forward pass: the mean loss plus the two per-row vectors a
/// fused kernel keeps for its backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput<T> {
    pub loss: f64,
    pub pos_logits: Vec<T>,
    pub lse: Vec<T>,
}

impl<T: Real> LossOutput<T> {
    /// Builds the output and derives `loss = -mean(pos - lse)` from the stored values.
    pub fn from_parts(pos_logits: Vec<T>, lse: Vec<T>) -> Self {
        let n = pos_logits.len();
        let mut acc = 0.0;
        for (p, l) in pos_logits.iter().zip(&lse) {
            acc += p.to_f64() - l.to_f64();
        }
        let loss = if n == 0 { 0.0 } else { -acc / n as f64 };
        Self { loss, pos_logits, lse }
    }
}

/// Gradients with respect to the embeddings `E` (N x D) and classifier `C` (D x V).
#[derive(Debug, Clone, PartialEq)]
pub struct GradPair<T> {
    pub d_embeddings: DenseMatrix<T>,
    pub d_classifier: DenseMatrix<T>,
}

/// Validates `E`, `C` and targets; returns `(N, D, V)`.
pub(crate) fn check_dense<T: Real>(
    op: &'static str,
    e: &DenseMatrix<T>,
    c: &DenseMatrix<T>,
    x: &[usize],
) -> Result<(usize, usize, usize)> {
    if e.cols() != c.rows() {
        return Err(Error::ShapeMismatch {
            op,
            left: e.shape(),
            right: c.shape(),
        });
    }
    if x.len() != e.rows() {
        return Err(Error::LengthMismatch {
            op,
            expected: e.rows(),
            actual: x.len(),
        });
    }
    if e.rows() == 0 {
        return Err(Error::Empty(op));
    }
    let v = c.cols();
    if let Some(row) = x.iter().position(|&t| t >= v) {
        return Err(Error::IndexOutOfRange {
            row,
            index: x[row],
            bound: v,
        });
    }
    Ok((e.rows(), e.cols(), v))
}

pub(crate) fn check_sampled<T: Real>(
    op: &'static str,
    e: &DenseMatrix<T>,
    c: &DenseMatrix<T>,
    inds: &NegIndexMatrix,
) -> Result<(usize, usize, usize)> {
    if e.cols() != c.rows() {
        return Err(Error::ShapeMismatch {
            op,
            left: e.shape(),
            right: c.shape(),
        });
    }
    if inds.rows() != e.rows() {
        return Err(Error::LengthMismatch {
            op,
            expected: e.rows(),
            actual: inds.rows(),
        });
    }
    if e.rows() == 0 {
        return Err(Error::Empty(op));
    }
    inds.check_bound(c.cols())?;
    Ok((e.rows(), e.cols(), c.cols()))
}

fn widen_row<T: Real>(row: &[T]) -> Vec<f64> {
    row.iter().map(|v| v.to_f64()).collect()
}

fn column_dot<T: Real>(e_row: &[T], c: &DenseMatrix<T>, col: usize) -> f64 {
    let mut acc = 0.0;
    for (d, ed) in e_row.iter().enumerate() {
        acc += ed.to_f64() * c.get(d, col).to_f64();
    }
    acc
}

/// Full-catalog cross-entropy. Materializes all `N x V` logits.
pub fn ce_full_forward<T: Real>(
    e: &DenseMatrix<T>,
    c: &DenseMatrix<T>,
    x: &[usize],
    acct: &mut Accountant,
) -> Result<LossOutput<T>> {
    let (n, _, v) = check_dense("ce_full_forward", e, c, x)?;
    let logits = DenseMatrix::<T>::from_f64(&matmul_block(e.view(), c.view())?);
    acct.record_alloc(tags::LOGITS, MemClass::Retained, T::BYTES, n * v);
    acct.record_alloc(tags::LSE, MemClass::Retained, T::BYTES, n);
    let mut pos = Vec::with_capacity(n);
    let mut lse = Vec::with_capacity(n);
    for (i, &xi) in x.iter().enumerate() {
        let row = widen_row(logits.row(i));
        pos.push(logits.get(i, xi));
        lse.push(T::from_f64(logsumexp_row(&row)?));
    }
    Ok(LossOutput::from_parts(pos, lse))
}

/// Gradient of [`ce_full_forward`]. Releases the forward's retained buffers.
pub fn ce_full_backward<T: Real>(
    e: &DenseMatrix<T>,
    c: &DenseMatrix<T>,
    x: &[usize],
    upstream: f64,
    acct: &mut Accountant,
) -> Result<GradPair<T>> {
    let (n, _, v) = check_dense("ce_full_backward", e, c, x)?;
    let logits = DenseMatrix::<T>::from_f64(&matmul_block(e.view(), c.view())?);
    acct.record_alloc(tags::GRAD_LOGITS, MemClass::Scratch, SCRATCH_BYTES, n * v);
    let scale = upstream / n as f64;
    let mut g = DenseMatrix::<f64>::zeros(n, v);
    for (i, &xi) in x.iter().enumerate() {
        let row = widen_row(logits.row(i));
        let lse = logsumexp_row(&row)?;
        let gi = g.row_mut(i);
        for (gv, &o) in gi.iter_mut().zip(&row) {
            *gv = libm::exp(o - lse) * scale;
        }
        gi[xi] -= scale;
    }
    let grads = grads_from_dense_g(e, c, &g)?;
    acct.record_free(tags::GRAD_LOGITS, n * v);
    acct.record_free(tags::LOGITS, n * v);
    acct.record_free(tags::LSE, n);
    Ok(grads)
}

fn grads_from_dense_g<T: Real>(
    e: &DenseMatrix<T>,
    c: &DenseMatrix<T>,
    g: &DenseMatrix<f64>,
) -> Result<GradPair<T>> {
    let ct = c.transpose();
    let et = e.transpose();
    let d_e = matmul_block(g.view(), ct.view())?;
    let d_c = matmul_block(et.view(), g.view())?;
    Ok(GradPair {
        d_embeddings: DenseMatrix::from_f64(&d_e),
        d_classifier: DenseMatrix::from_f64(&d_c),
    })
}

fn gather_logits<T: Real>(e: &DenseMatrix<T>, c: &DenseMatrix<T>, inds: &NegIndexMatrix) -> DenseMatrix<T> {
    DenseMatrix::from_fn(inds.rows(), inds.width(), |i, j| {
        T::from_f64(column_dot(e.row(i), c, inds.row(i)[j]))
    })
}

/// Cross-entropy whose log-sum-exp runs only over each row's indexed items.
/// Materializes the `N x (1 + ns)` gathered logits.
pub fn ce_sampled_forward<T: Real>(
    e: &DenseMatrix<T>,
    c: &DenseMatrix<T>,
    inds: &NegIndexMatrix,
    acct: &mut Accountant,
) -> Result<LossOutput<T>> {
    let (n, _, _) = check_sampled("ce_sampled_forward", e, c, inds)?;
    let w = inds.width();
    acct.record_alloc(tags::INDS, MemClass::Retained, INDEX_BYTES, n * w);
    acct.record_alloc(tags::LOGITS, MemClass::Retained, T::BYTES, n * w);
    acct.record_alloc(tags::LSE, MemClass::Retained, T::BYTES, n);
    let logits = gather_logits(e, c, inds);
    let mut pos = Vec::with_capacity(n);
    let mut lse = Vec::with_capacity(n);
    for i in 0..n {
        pos.push(logits.get(i, 0));
        lse.push(T::from_f64(logsumexp_row(&widen_row(logits.row(i)))?));
    }
    Ok(LossOutput::from_parts(pos, lse))
}

/// Gradient of [`ce_sampled_forward`], returned full width (`D x V`, zero
/// outside the indexed columns). Rows are scattered in index order.
pub fn ce_sampled_backward<T: Real>(
    e: &DenseMatrix<T>,
    c: &DenseMatrix<T>,
    inds: &NegIndexMatrix,
    upstream: f64,
    acct: &mut Accountant,
) -> Result<GradPair<T>> {
    let (n, d, v) = check_sampled("ce_sampled_backward", e, c, inds)?;
    let w = inds.width();
    let logits = gather_logits(e, c, inds);
    acct.record_alloc(tags::GRAD_LOGITS, MemClass::Scratch, SCRATCH_BYTES, n * w);
    let scale = upstream / n as f64;
    let mut g = DenseMatrix::<f64>::zeros(n, w);
    for i in 0..n {
        let row = widen_row(logits.row(i));
        let lse = logsumexp_row(&row)?;
        let gi = g.row_mut(i);
        for (gv, &o) in gi.iter_mut().zip(&row) {
            *gv = libm::exp(o - lse) * scale;
        }
        gi[0] -= scale;
    }
    let mut d_e = DenseMatrix::<f64>::zeros(n, d);
    let mut d_c = DenseMatrix::<f64>::zeros(d, v);
    for i in 0..n {
        let e_row = widen_row(e.row(i));
        for (j, &item) in inds.row(i).iter().enumerate() {
            let gij = g.get(i, j);
            for k in 0..d {
                let de = d_e.get(i, k) + gij * c.get(k, item).to_f64();
                d_e.set(i, k, de);
                let dc = d_c.get(k, item) + gij * e_row[k];
                d_c.set(k, item, dc);
            }
        }
    }
    acct.record_free(tags::GRAD_LOGITS, n * w);
    acct.record_free(tags::INDS, n * w);
    acct.record_free(tags::LOGITS, n * w);
    acct.record_free(tags::LSE, n);
    Ok(GradPair {
        d_embeddings: DenseMatrix::from_f64(&d_e),
        d_classifier: DenseMatrix::from_f64(&d_c),
    })
}

#[inline]
fn softplus(z: f64) -> f64 {
    z.max(0.0) + libm::log1p(libm::exp(-libm::fabs(z)))
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let ez = libm::exp(z);
        ez / (1.0 + ez)
    }
}

/// Binary cross-entropy with one negative per row:
/// `-(1/N) Σ [ln σ(pos) + ln(1 - σ(neg))]`, computed through softplus.
pub fn bce_forward_backward<T: Real>(
    e: &DenseMatrix<T>,
    c: &DenseMatrix<T>,
    x: &[usize],
    neg: &[usize],
    upstream: f64,
    acct: &mut Accountant,
) -> Result<(f64, GradPair<T>)> {
    let (n, d, v) = check_dense("bce_forward_backward", e, c, x)?;
    if neg.len() != n {
        return Err(Error::LengthMismatch {
            op: "bce_forward_backward",
            expected: n,
            actual: neg.len(),
        });
    }
    for (row, (&p, &q)) in x.iter().zip(neg).enumerate() {
        if q >= v {
            return Err(Error::IndexOutOfRange { row, index: q, bound: v });
        }
        if p == q {
            return Err(Error::PositiveCollision { row, slot: 1, item: q });
        }
    }
    acct.record_alloc(tags::INDS, MemClass::Retained, INDEX_BYTES, n);
    acct.record_alloc(tags::LOGITS, MemClass::Retained, T::BYTES, 2 * n);
    acct.record_alloc(tags::GRAD_LOGITS, MemClass::Scratch, SCRATCH_BYTES, 2 * n);
    let scale = upstream / n as f64;
    let mut loss = 0.0;
    let mut d_e = DenseMatrix::<f64>::zeros(n, d);
    let mut d_c = DenseMatrix::<f64>::zeros(d, v);
    let mut cp = vec![0.0; d];
    let mut cn = vec![0.0; d];
    for i in 0..n {
        c.load_column(x[i], &mut cp);
        c.load_column(neg[i], &mut cn);
        let e_row = widen_row(e.row(i));
        let pos = T::from_f64(crate::matrix::dot(&e_row, &cp)).to_f64();
        let ng = T::from_f64(crate::matrix::dot(&e_row, &cn)).to_f64();
        loss += softplus(-pos) + softplus(ng);
        let gp = (sigmoid(pos) - 1.0) * scale;
        let gn = sigmoid(ng) * scale;
        for k in 0..d {
            d_e.set(i, k, gp * cp[k] + gn * cn[k]);
            let a = d_c.get(k, x[i]) + gp * e_row[k];
            d_c.set(k, x[i], a);
            let b = d_c.get(k, neg[i]) + gn * e_row[k];
            d_c.set(k, neg[i], b);
        }
    }
    acct.record_free(tags::GRAD_LOGITS, 2 * n);
    acct.record_free(tags::LOGITS, 2 * n);
    acct.record_free(tags::INDS, n);
    Ok((
        loss / n as f64,
        GradPair {
            d_embeddings: DenseMatrix::from_f64(&d_e),
            d_classifier: DenseMatrix::from_f64(&d_c),
        },
    ))
}
