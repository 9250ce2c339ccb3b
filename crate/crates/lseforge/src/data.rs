//! Interaction logs: CSV ingestion and a synthetic generator.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use lseforge_core::Rng;
use rand_distr::{Distribution, Zipf};

use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 3] = ["user_id", "item_id", "timestamp"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub user: usize,
    pub item: usize,
    pub ts: i64,
}

/// Events sorted by `(user, ts)` with users and items densely indexed.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionLog {
    pub events: Vec<Event>,
    pub n_users: usize,
    pub n_items: usize,
    /// Original id of each dense item index.
    pub item_ids: Vec<i64>,
    /// Original id of each dense user index.
    pub user_ids: Vec<i64>,
}

impl InteractionLog {
    /// Builds a log from raw `(user, item, ts)` triples. Users with fewer than
    /// two events are dropped; the remaining ids are re-indexed in ascending
    /// order of their original value.
    pub fn from_raw(raw: &[(i64, i64, i64)]) -> Result<Self> {
        let mut per_user: BTreeMap<i64, usize> = BTreeMap::new();
        for &(u, _, _) in raw {
            *per_user.entry(u).or_default() += 1;
        }
        let kept: Vec<&(i64, i64, i64)> = raw.iter().filter(|r| per_user[&r.0] >= 2).collect();
        if kept.is_empty() {
            return Err(Error::Data("no user has at least two interactions".into()));
        }
        let user_ids: Vec<i64> = per_user.iter().filter(|(_, &n)| n >= 2).map(|(&u, _)| u).collect();
        let mut item_ids: Vec<i64> = kept.iter().map(|r| r.1).collect();
        item_ids.sort_unstable();
        item_ids.dedup();
        let dense_user: BTreeMap<i64, usize> = user_ids.iter().enumerate().map(|(i, &u)| (u, i)).collect();
        let dense_item: BTreeMap<i64, usize> = item_ids.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let mut events: Vec<Event> = kept
            .iter()
            .map(|&&(u, v, ts)| Event {
                user: dense_user[&u],
                item: dense_item[&v],
                ts,
            })
            .collect();
        events.sort_by_key(|e| (e.user, e.ts));
        Ok(Self {
            events,
            n_users: user_ids.len(),
            n_items: item_ids.len(),
            item_ids,
            user_ids,
        })
    }

    /// Reads `user_id,item_id,timestamp` CSV. `path` is used in error messages only.
    pub fn from_csv_reader(reader: impl Read, path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let parse_err = |line: u64, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let header = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
        if header.is_empty() {
            return Err(Error::Data(format!("{}: empty file", path.display())));
        }
        if header.iter().collect::<Vec<_>>() != CSV_HEADER {
            return Err(parse_err(1, format!("expected header {}", CSV_HEADER.join(","))));
        }
        let mut raw = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                parse_err(line, e.to_string())
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            let mut f = [0i64; 3];
            for (k, slot) in f.iter_mut().enumerate() {
                let s = rec.get(k).unwrap_or("");
                *slot = s
                    .parse()
                    .map_err(|_| parse_err(line, format!("{} is not an integer: {s:?}", CSV_HEADER[k])))?;
            }
            raw.push((f[0], f[1], f[2]));
        }
        if raw.is_empty() {
            return Err(Error::Data(format!("{}: no interactions", path.display())));
        }
        Self::from_raw(&raw)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(f, path)
    }

    /// Writes the `item_id,dense_index` vocabulary.
    pub fn write_vocab(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let io = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
        w.write_record(["item_id", "dense_index"]).map_err(io)?;
        for (i, id) in self.item_ids.iter().enumerate() {
            w.write_record([id.to_string(), i.to_string()]).map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Item sequence of every user, in time order.
    pub fn sequences(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_users];
        for e in &self.events {
            out[e.user].push(e.item);
        }
        out
    }
}

/// Sidecar vocabulary path for an input file: `data.csv` -> `data.vocab.csv`.
pub fn vocab_path(path: &Path) -> PathBuf {
    path.with_extension("vocab.csv")
}

/// Reads a CSV log and writes its vocabulary next to it.
pub fn ingest_csv(path: &Path) -> Result<InteractionLog> {
    let log = InteractionLog::from_csv_path(path)?;
    log.write_vocab(&vocab_path(path))?;
    Ok(log)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_items: usize,
    pub n_users: usize,
    pub seq_len: usize,
    pub n_clusters: usize,
    /// Probability that a step stays inside the user's cluster.
    pub in_cluster: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_items: 2000,
            n_users: 1000,
            seq_len: 25,
            n_clusters: 20,
            in_cluster: 0.9,
        }
    }
}

/// Clustered synthetic log. Items are split into contiguous clusters; each
/// user belongs to one cluster and draws from it (Zipf(1) over the cluster's
/// items) with probability `in_cluster`, otherwise uniformly from the whole
/// catalog. Timestamps interleave users: step `s` of user `u` happens at
/// `s * n_users + u`.
pub fn make_synthetic(cfg: &SyntheticConfig, rng: &Rng) -> Result<InteractionLog> {
    let SyntheticConfig {
        n_items: v,
        n_users,
        seq_len,
        n_clusters,
        in_cluster,
    } = *cfg;
    if n_clusters == 0 || n_clusters > v {
        return Err(Error::Config(format!("need 1 <= n_clusters <= n_items, got {n_clusters} and {v}")));
    }
    if n_users == 0 || seq_len < 2 {
        return Err(Error::Config("synthetic data needs n_users >= 1 and seq_len >= 2".into()));
    }
    if !(0.0..=1.0).contains(&in_cluster) {
        return Err(Error::Config(format!("in_cluster must lie in [0, 1], got {in_cluster}")));
    }
    let bounds: Vec<usize> = (0..=n_clusters).map(|k| k * v / n_clusters).collect();
    let zipfs: Vec<Zipf<f64>> = bounds
        .windows(2)
        .map(|b| Zipf::new((b[1] - b[0]) as f64, 1.0).expect("cluster is non-empty"))
        .collect();
    let mut events = Vec::with_capacity(n_users * seq_len);
    for u in 0..n_users {
        let mut r = rng.fork(u as u64);
        let k = r.below(n_clusters);
        for s in 0..seq_len {
            let item = if r.unit_f64() < in_cluster {
                bounds[k] + zipfs[k].sample(&mut r) as usize - 1
            } else {
                r.below(v)
            };
            events.push(Event {
                user: u,
                item,
                ts: (s * n_users + u) as i64,
            });
        }
    }
    Ok(InteractionLog {
        events,
        n_users,
        n_items: v,
        item_ids: (0..v as i64).collect(),
        user_ids: (0..n_users as i64).collect(),
    })
}
