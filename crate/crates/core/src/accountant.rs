//! Logical memory accounting for the loss layer.
//!
//! Kernels report every buffer they would hold: `Retained` buffers live from
//! the forward pass until the matching backward pass releases them, `Scratch`
//! buffers live for the duration of one call. Peaks are maxima over time of
//! the live total, per tag and per class.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Bytes per stored item index.
pub const INDEX_BYTES: usize = 8;
/// Bytes per scratch scalar (kernels accumulate in `f64`).
pub const SCRATCH_BYTES: usize = 8;

pub mod tags {
    pub const LOGITS: &str = "logits";
    pub const LSE: &str = "lse";
    pub const POS_LOGITS: &str = "pos_logits";
    pub const INDS: &str = "inds";
    pub const GRAD_LOGITS: &str = "grad_logits";
    pub const TILE: &str = "tile";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MemClass {
    Retained,
    Scratch,
}

#[derive(Debug, Clone, Copy)]
struct TagState {
    class: MemClass,
    elem_bytes: usize,
    live: usize,
    peak: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassPeak {
    pub scalars: usize,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagPeak {
    pub tag: &'static str,
    pub class: MemClass,
    pub peak_scalars: usize,
    pub peak_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MemoryReport {
    pub tags: Vec<TagPeak>,
    pub retained: ClassPeak,
    pub scratch: ClassPeak,
}

impl MemoryReport {
    pub fn tag(&self, name: &str) -> Option<&TagPeak> {
        self.tags.iter().find(|t| t.tag == name)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Accountant {
    tags: BTreeMap<&'static str, TagState>,
    live: [ClassPeak; 2],
    peak: [ClassPeak; 2],
    unbalanced: Option<&'static str>,
}

fn slot(class: MemClass) -> usize {
    match class {
        MemClass::Retained => 0,
        MemClass::Scratch => 1,
    }
}

impl Accountant {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record_alloc(&mut self, tag: &'static str, class: MemClass, elem_bytes: usize, scalars: usize) {
        let st = self.tags.entry(tag).or_insert(TagState {
            class,
            elem_bytes,
            live: 0,
            peak: 0,
        });
        if st.class != class || st.elem_bytes != elem_bytes {
            self.unbalanced.get_or_insert(tag);
        }
        st.live += scalars;
        st.peak = st.peak.max(st.live);
        let k = slot(class);
        self.live[k].scalars += scalars;
        self.live[k].bytes += scalars * elem_bytes;
        self.peak[k].scalars = self.peak[k].scalars.max(self.live[k].scalars);
        self.peak[k].bytes = self.peak[k].bytes.max(self.live[k].bytes);
    }

    /// Releases `scalars` from `tag`. Freeing more than is live marks the
    /// accountant unbalanced; [`report`](Self::report) then fails.
    pub fn record_free(&mut self, tag: &'static str, scalars: usize) {
        let Some(st) = self.tags.get_mut(tag) else {
            self.unbalanced.get_or_insert(tag);
            return;
        };
        let n = if scalars > st.live {
            self.unbalanced.get_or_insert(tag);
            st.live
        } else {
            scalars
        };
        st.live -= n;
        let k = slot(st.class);
        self.live[k].scalars -= n;
        self.live[k].bytes -= n * st.elem_bytes;
    }

    pub fn live(&self, class: MemClass) -> ClassPeak {
        self.live[slot(class)]
    }

    /// Peaks so far, without checking that every allocation was released.
    pub fn snapshot(&self) -> MemoryReport {
        MemoryReport {
            tags: self
                .tags
                .iter()
                .map(|(&tag, st)| TagPeak {
                    tag,
                    class: st.class,
                    peak_scalars: st.peak,
                    peak_bytes: st.peak * st.elem_bytes,
                })
                .collect(),
            retained: self.peak[0],
            scratch: self.peak[1],
        }
    }

    /// Per-tag and per-class peaks. Fails if any free did not match an
    /// allocation or if anything is still live.
    pub fn report(&self) -> Result<MemoryReport> {
        if let Some(tag) = self.unbalanced {
            return Err(Error::Unbalanced(tag));
        }
        if let Some((&tag, _)) = self.tags.iter().find(|(_, st)| st.live != 0) {
            return Err(Error::Unbalanced(tag));
        }
        Ok(self.snapshot())
    }

    /// Forgets peaks but keeps live allocations.
    pub fn reset_peaks(&mut self) {
        for st in self.tags.values_mut() {
            st.peak = st.live;
        }
        self.peak = self.live;
    }
}
