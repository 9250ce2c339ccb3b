//! Magnitude histogram of classifier gradients.

use lseforge_core::cce::FP16_MIN_POSITIVE;
use lseforge_core::{ce_full_backward, ce_full_forward, Accountant, DenseMatrix, Real};
use serde::Serialize;

use crate::error::Result;
use crate::model::{forward_batch, BatchActivations, ToyEncoder, Window};
use crate::train::Precision;

/// Bin edges of `|g|`; bins are `[<1e-10, 1e-10..1e-8, ..., >=1e-2]`.
pub const BIN_EDGES: [f64; 5] = [1e-10, 1e-8, 1e-6, 1e-4, 1e-2];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistBin {
    /// Inclusive lower edge; `None` for the first bin.
    pub lower: Option<f64>,
    /// Exclusive upper edge; `None` for the last bin.
    pub upper: Option<f64>,
    pub count: u64,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradHistogram {
    pub total: u64,
    pub bins: Vec<HistBin>,
    /// Share of entries with `|g| < 6e-8`, i.e. lost to fp16 underflow.
    pub below_fp16_min: f64,
}

pub fn grad_histogram(values: &[f64]) -> GradHistogram {
    let mut counts = [0u64; BIN_EDGES.len() + 1];
    let mut below = 0u64;
    for &g in values {
        let a = g.abs();
        counts[BIN_EDGES.iter().take_while(|&&e| a >= e).count()] += 1;
        if a < FP16_MIN_POSITIVE {
            below += 1;
        }
    }
    let total = values.len() as u64;
    let frac = |c: u64| if total == 0 { 0.0 } else { c as f64 / total as f64 };
    let bins = counts
        .iter()
        .enumerate()
        .map(|(i, &count)| HistBin {
            lower: i.checked_sub(1).map(|j| BIN_EDGES[j]),
            upper: BIN_EDGES.get(i).copied(),
            count,
            fraction: frac(count),
        })
        .collect();
    GradHistogram {
        total,
        bins,
        below_fp16_min: frac(below),
    }
}

fn classifier_gradient_typed<T: Real>(model: &ToyEncoder, windows: &[&Window], upstream: f64) -> Result<DenseMatrix<f64>> {
    let act = forward_batch(model, windows);
    let x = BatchActivations::targets(windows);
    let e = DenseMatrix::<T>::from_f64(&act.h);
    let c = DenseMatrix::<T>::from_f64(&model.c);
    let mut acct = Accountant::new();
    ce_full_forward(&e, &c, &x, &mut acct)?;
    Ok(ce_full_backward(&e, &c, &x, upstream, &mut acct)?.d_classifier.to_f64())
}

/// Full `∂L/∂C` of one batch from the materializing cross-entropy, scaled by `upstream`.
pub fn classifier_gradient(
    model: &ToyEncoder,
    windows: &[&Window],
    upstream: f64,
    precision: Precision,
) -> Result<DenseMatrix<f64>> {
    match precision {
        Precision::F32 => classifier_gradient_typed::<f32>(model, windows, upstream),
        Precision::F64 => classifier_gradient_typed::<f64>(model, windows, upstream),
    }
}
