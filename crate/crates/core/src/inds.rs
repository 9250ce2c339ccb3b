use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Per-row item indices for sampled losses. Slot 0 of each row is the
/// positive item; slots `1..width` are negatives, none equal to slot 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegIndexMatrix {
    rows: usize,
    width: usize,
    idx: Vec<usize>,
}

impl NegIndexMatrix {
    pub fn new(rows: usize, width: usize, idx: Vec<usize>) -> Result<Self> {
        if width == 0 {
            return Err(Error::InvalidConfig("index matrix width must be at least 1".into()));
        }
        if idx.len() != rows * width {
            return Err(Error::LengthMismatch {
                op: "NegIndexMatrix::new",
                expected: rows * width,
                actual: idx.len(),
            });
        }
        for (row, r) in idx.chunks_exact(width).enumerate() {
            if let Some(slot) = r[1..].iter().position(|&v| v == r[0]) {
                return Err(Error::PositiveCollision {
                    row,
                    slot: slot + 1,
                    item: r[0],
                });
            }
        }
        Ok(Self { rows, width, idx })
    }

    /// Every row lists its positive followed by all other catalog items in
    /// ascending order.
    pub fn full_catalog(positives: &[usize], n_items: usize) -> Result<Self> {
        let mut idx = Vec::with_capacity(positives.len() * n_items);
        for (row, &p) in positives.iter().enumerate() {
            if p >= n_items {
                return Err(Error::IndexOutOfRange {
                    row,
                    index: p,
                    bound: n_items,
                });
            }
            idx.push(p);
            idx.extend((0..n_items).filter(|&v| v != p));
        }
        Self::new(positives.len(), n_items, idx)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// `1 + ns`.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_negatives(&self) -> usize {
        self.width - 1
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[usize] {
        &self.idx[i * self.width..(i + 1) * self.width]
    }

    #[inline]
    pub fn positive(&self, i: usize) -> usize {
        self.idx[i * self.width]
    }

    pub fn positives(&self) -> Vec<usize> {
        (0..self.rows).map(|i| self.positive(i)).collect()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.idx
    }

    /// Errors with the first row holding an index `>= n_items`.
    pub fn check_bound(&self, n_items: usize) -> Result<()> {
        match self.idx.iter().position(|&v| v >= n_items) {
            Some(p) => Err(Error::IndexOutOfRange {
                row: p / self.width,
                index: self.idx[p],
                bound: n_items,
            }),
            None => Ok(()),
        }
    }

    /// Applies a per-row permutation of the negative slots, keeping slot 0.
    pub fn permute_negatives(&self, mut perm: impl FnMut(usize, &mut [usize])) -> Self {
        let mut idx = self.idx.clone();
        for (i, r) in idx.chunks_exact_mut(self.width).enumerate() {
            perm(i, &mut r[1..]);
        }
        Self {
            rows: self.rows,
            width: self.width,
            idx,
        }
    }
}
