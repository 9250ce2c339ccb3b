//! Global temporal train / validation / test split.

use std::collections::HashSet;

use lseforge_core::Rng;

use crate::data::InteractionLog;
use crate::error::{Error, Result};

/// One evaluation case: score the catalog from `prefix`, hit `target`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalPair {
    pub user: usize,
    pub prefix: Vec<usize>,
    pub target: usize,
    /// Index of the target event in the log.
    pub target_event: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainSequence {
    pub user: usize,
    pub items: Vec<usize>,
    /// Indices of the events in the log, parallel to `items`.
    pub events: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub train: Vec<TrainSequence>,
    pub valid: Vec<EvalPair>,
    pub test: Vec<EvalPair>,
    pub cutoff_ts: i64,
}

impl SplitSpec {
    /// Items of all training events, for popularity counts.
    pub fn train_items(&self) -> impl Iterator<Item = usize> + '_ {
        self.train.iter().flat_map(|s| s.items.iter().copied())
    }
}

/// Nearest-rank quantile of sorted values: the element at rank `ceil(q * n)`.
pub fn nearest_rank(sorted: &[i64], q: f64) -> Option<i64> {
    if sorted.is_empty() {
        return None;
    }
    let n = sorted.len();
    // Guard against q * n landing a hair above an integer.
    let rank = ((q * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    Some(sorted[rank - 1])
}

/// Splits at the `quantile` of all timestamps.
///
/// Events at or before the cutoff form the training pool. A random
/// `val_user_frac` of the users with at least two pool events (rounded, at
/// least one) have their last pool event withheld as a validation target.
/// Each user with events after the cutoff contributes one test pair: the last
/// event is the target, everything before it the prefix. Training sequences
/// with fewer than two items are dropped since they hold no next-item pair.
pub fn temporal_split(log: &InteractionLog, quantile: f64, val_user_frac: f64, rng: &Rng) -> Result<SplitSpec> {
    if log.events.is_empty() {
        return Err(Error::Data("cannot split an empty log".into()));
    }
    if !(quantile > 0.0 && quantile <= 1.0) || !(0.0..=1.0).contains(&val_user_frac) {
        return Err(Error::Config(format!(
            "quantile must lie in (0, 1] and val_user_frac in [0, 1], got {quantile} and {val_user_frac}"
        )));
    }
    let mut ts: Vec<i64> = log.events.iter().map(|e| e.ts).collect();
    ts.sort_unstable();
    if ts[0] == ts[ts.len() - 1] {
        return Err(Error::Data(format!("all events share timestamp {}; split is degenerate", ts[0])));
    }
    let cutoff_ts = nearest_rank(&ts, quantile).expect("non-empty");

    let mut by_user: Vec<Vec<usize>> = vec![Vec::new(); log.n_users];
    for (i, e) in log.events.iter().enumerate() {
        by_user[e.user].push(i);
    }
    let pool: Vec<Vec<usize>> = by_user
        .iter()
        .map(|evs| evs.iter().copied().filter(|&i| log.events[i].ts <= cutoff_ts).collect())
        .collect();

    let eligible: Vec<usize> = (0..log.n_users).filter(|&u| pool[u].len() >= 2).collect();
    let mut chosen = eligible.clone();
    rng.clone().shuffle(&mut chosen);
    let n_val = if val_user_frac > 0.0 && !eligible.is_empty() {
        ((val_user_frac * eligible.len() as f64).round() as usize).max(1)
    } else {
        0
    };
    chosen.truncate(n_val);
    chosen.sort_unstable();

    let mut valid = Vec::with_capacity(n_val);
    let mut withheld = vec![false; log.n_users];
    for &u in &chosen {
        let evs = &pool[u];
        let last = *evs.last().expect("eligible users have pool events");
        valid.push(EvalPair {
            user: u,
            prefix: evs[..evs.len() - 1].iter().map(|&i| log.events[i].item).collect(),
            target: log.events[last].item,
            target_event: last,
        });
        withheld[u] = true;
    }

    let mut train = Vec::new();
    for (u, evs) in pool.iter().enumerate() {
        let keep = if withheld[u] { &evs[..evs.len() - 1] } else { &evs[..] };
        if keep.len() >= 2 {
            train.push(TrainSequence {
                user: u,
                items: keep.iter().map(|&i| log.events[i].item).collect(),
                events: keep.to_vec(),
            });
        }
    }

    let mut test = Vec::new();
    for (u, evs) in by_user.iter().enumerate() {
        let Some(&last) = evs.last() else { continue };
        if log.events[last].ts <= cutoff_ts || evs.len() < 2 {
            continue;
        }
        test.push(EvalPair {
            user: u,
            prefix: evs[..evs.len() - 1].iter().map(|&i| log.events[i].item).collect(),
            target: log.events[last].item,
            target_event: last,
        });
    }

    Ok(SplitSpec {
        train,
        valid,
        test,
        cutoff_ts,
    })
}

/// Fails if an evaluation target event also appears in a training sequence.
pub fn check_leakage(split: &SplitSpec) -> Result<()> {
    let seen: HashSet<usize> = split.train.iter().flat_map(|s| s.events.iter().copied()).collect();
    for p in split.valid.iter().chain(&split.test) {
        if seen.contains(&p.target_event) {
            return Err(Error::Data(format!(
                "target event {} of user {} is part of the training data",
                p.target_event, p.user
            )));
        }
    }
    Ok(())
}
