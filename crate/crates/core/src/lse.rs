//! Numerically stable log-sum-exp, batch and streaming.

use crate::error::{Error, Result};

/// `m + ln Σ exp(v - m)` with `m = max(v)`.
pub fn logsumexp_row(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("logsumexp_row"));
    }
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = values.iter().map(|&v| libm::exp(v - m)).sum();
    Ok(m + libm::log(s))
}

/// One step of the streaming log-sum-exp recurrence.
///
/// `(m, d)` is the running maximum and the running sum of `exp(v - m)`;
/// `(-inf, 0)` is the empty state. Afterwards `m + ln d` is the log-sum-exp
/// of everything consumed so far.
#[inline]
pub fn online_lse_update(state: (f64, f64), o: f64) -> (f64, f64) {
    let (m, d) = state;
    let m_new = if o > m { o } else { m };
    let d = d * libm::exp(m - m_new) + libm::exp(o - m_new);
    (m_new, d)
}

/// Running log-sum-exp accumulator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LseState {
    pub max: f64,
    pub sum: f64,
}

impl Default for LseState {
    fn default() -> Self {
        Self::new()
    }
}

impl LseState {
    pub const fn new() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }

    #[inline]
    pub fn push(&mut self, o: f64) {
        let (m, d) = online_lse_update((self.max, self.sum), o);
        self.max = m;
        self.sum = d;
    }

    /// Folds a whole block in: one rescale of the running sum per block
    /// instead of one per element.
    #[inline]
    pub fn push_block(&mut self, values: &[f64]) {
        let bm = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if bm == f64::NEG_INFINITY {
            return;
        }
        let m_new = if bm > self.max { bm } else { self.max };
        let mut bs = 0.0;
        for &v in values {
            bs += libm::exp(v - m_new);
        }
        self.sum = self.sum * libm::exp(self.max - m_new) + bs;
        self.max = m_new;
    }

    /// `m + ln d`; `-inf` for the empty state.
    #[inline]
    pub fn value(&self) -> f64 {
        self.max + libm::log(self.sum)
    }
}
