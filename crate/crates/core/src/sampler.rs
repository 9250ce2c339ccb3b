//! Negative sampling into [`NegIndexMatrix`].
//!
//! Both strategies draw with replacement across slots and reject draws equal
//! to the row's positive, giving up after [`MAX_REJECTIONS`] tries for one
//! slot. Row `i` draws from `rng.fork(i)`, so a row's negatives do not depend
//! on how rows are scheduled.

use alloc::format;
use alloc::vec::Vec;

use rand::distr::Distribution;
use rand_distr::weighted::WeightedAliasIndex;

use crate::error::{Error, Result};
use crate::inds::NegIndexMatrix;
use crate::rng::Rng;

pub const MAX_REJECTIONS: usize = 100;

/// Interaction counts per item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PopularityTable {
    counts: Vec<u64>,
    total: u64,
}

impl PopularityTable {
    pub fn from_counts(counts: Vec<u64>) -> Self {
        let total = counts.iter().sum();
        Self { counts, total }
    }

    /// Counts occurrences of each item id in `items`.
    pub fn from_items(n_items: usize, items: impl IntoIterator<Item = usize>) -> Self {
        let mut counts = alloc::vec![0u64; n_items];
        for it in items {
            counts[it] += 1;
        }
        Self::from_counts(counts)
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn n_items(&self) -> usize {
        self.counts.len()
    }
}

fn check_positives(positives: &[usize], n_items: usize) -> Result<()> {
    match positives.iter().position(|&p| p >= n_items) {
        Some(row) => Err(Error::IndexOutOfRange {
            row,
            index: positives[row],
            bound: n_items,
        }),
        None => Ok(()),
    }
}

fn fill_rows(
    positives: &[usize],
    ns: usize,
    rng: &Rng,
    mut draw: impl FnMut(&mut Rng) -> usize,
) -> Result<NegIndexMatrix> {
    let width = ns + 1;
    let mut idx = Vec::with_capacity(positives.len() * width);
    for (row, &p) in positives.iter().enumerate() {
        let mut r = rng.fork(row as u64);
        idx.push(p);
        for slot in 1..width {
            let mut tries = 0;
            let q = loop {
                let q = draw(&mut r);
                if q != p {
                    break q;
                }
                tries += 1;
                if tries >= MAX_REJECTIONS {
                    return Err(Error::Sampler(format!(
                        "row {row} slot {slot}: no negative distinct from positive {p} after {MAX_REJECTIONS} draws"
                    )));
                }
            };
            idx.push(q);
        }
    }
    NegIndexMatrix::new(positives.len(), width, idx)
}

/// Negatives uniform over `[0, n_items)` minus the row's positive.
pub fn sample_uniform(positives: &[usize], ns: usize, n_items: usize, rng: &Rng) -> Result<NegIndexMatrix> {
    if n_items == 0 || ns > n_items - 1 {
        return Err(Error::Sampler(format!(
            "{ns} negatives requested from a catalog of {n_items} items"
        )));
    }
    check_positives(positives, n_items)?;
    fill_rows(positives, ns, rng, |r| r.below(n_items))
}

/// Draws items with probability proportional to `count^exponent`.
#[derive(Debug, Clone)]
pub struct PopularitySampler {
    table: WeightedAliasIndex<f64>,
    n_items: usize,
}

impl PopularitySampler {
    pub fn new(pop: &PopularityTable, exponent: f64) -> Result<Self> {
        if pop.total == 0 {
            return Err(Error::Sampler("popularity table has no interactions".into()));
        }
        if !(exponent.is_finite() && exponent > 0.0) {
            return Err(Error::Sampler(format!("popularity exponent must be positive, got {exponent}")));
        }
        let weights: Vec<f64> = pop
            .counts
            .iter()
            .map(|&c| if c == 0 { 0.0 } else { libm::pow(c as f64, exponent) })
            .collect();
        let table = WeightedAliasIndex::new(weights)
            .map_err(|e| Error::Sampler(format!("cannot build alias table: {e}")))?;
        Ok(Self {
            table,
            n_items: pop.counts.len(),
        })
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    #[inline]
    pub fn draw(&self, rng: &mut Rng) -> usize {
        self.table.sample(rng)
    }

    pub fn sample(&self, positives: &[usize], ns: usize, rng: &Rng) -> Result<NegIndexMatrix> {
        check_positives(positives, self.n_items)?;
        fill_rows(positives, ns, rng, |r| self.draw(r))
    }
}

/// Negatives proportional to raw interaction counts.
pub fn sample_popularity(
    positives: &[usize],
    ns: usize,
    pop: &PopularityTable,
    rng: &Rng,
) -> Result<NegIndexMatrix> {
    PopularitySampler::new(pop, 1.0)?.sample(positives, ns, rng)
}
