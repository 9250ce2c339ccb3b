//! Ranking metrics and rank correlation.

use lseforge_core::PopularityTable;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::ToyEncoder;
use crate::split::EvalPair;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankingMetrics {
    pub ndcg: f64,
    pub coverage: f64,
    pub surprisal: f64,
}

/// 1-based rank of `target`; ties go to the smaller item id.
pub fn target_rank(scores: &[f64], target: usize) -> usize {
    let st = scores[target];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(v, &s)| s > st || (s == st && v < target))
        .count()
}

/// Gain of a single relevant item at `rank`.
pub fn ndcg_at(rank: usize, k: usize) -> f64 {
    if rank >= 1 && rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

/// The `k` best items, by descending score then ascending id.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let k = k.min(scores.len());
    let cmp = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    if k < idx.len() && k > 0 {
        idx.select_nth_unstable_by(k - 1, cmp);
    }
    idx.truncate(k);
    idx.sort_unstable_by(cmp);
    idx
}

/// Self-information of an item, `-log2(count / total) / log2(total)`, with
/// unseen items counted once.
pub fn normalized_surprisal(pop: &PopularityTable, item: usize) -> f64 {
    let total = pop.total() as f64;
    let count = pop.counts()[item].max(1) as f64;
    -(count / total).log2() / total.log2()
}

/// NDCG@k, Coverage@k and Surprisal@k of `model` over `pairs`. Users are
/// scored in parallel on the current rayon pool.
pub fn evaluate(model: &ToyEncoder, pairs: &[EvalPair], k: usize, pop: &PopularityTable) -> Result<RankingMetrics> {
    if pairs.is_empty() {
        return Err(Error::Data("no evaluation pairs".into()));
    }
    if pop.total() < 2 {
        return Err(Error::Data("popularity table needs at least two interactions".into()));
    }
    if pop.n_items() != model.n_items() {
        return Err(Error::Data(format!(
            "popularity table covers {} items, model {}",
            pop.n_items(),
            model.n_items()
        )));
    }
    let per_user: Vec<Result<(f64, Vec<usize>, f64)>> = pairs
        .par_iter()
        .map_init(Vec::new, |scores, p| {
            let h = model.encode(&p.prefix)?;
            model.scores(&h, scores);
            let gain = ndcg_at(target_rank(scores, p.target), k);
            let top = top_k(scores, k);
            let surprisal = top.iter().map(|&v| normalized_surprisal(pop, v)).sum::<f64>() / top.len() as f64;
            Ok((gain, top, surprisal))
        })
        .collect();
    let mut seen = vec![false; model.n_items()];
    let (mut ndcg, mut surprisal) = (0.0, 0.0);
    for r in per_user {
        let (g, top, s) = r?;
        ndcg += g;
        surprisal += s;
        for v in top {
            seen[v] = true;
        }
    }
    let n = pairs.len() as f64;
    Ok(RankingMetrics {
        ndcg: ndcg / n,
        coverage: seen.iter().filter(|&&s| s).count() as f64 / model.n_items() as f64,
        surprisal: surprisal / n,
    })
}

/// Expected NDCG@k when the target's rank is uniform over `1..=v`.
pub fn random_ndcg(v: usize, k: usize) -> f64 {
    (1..=k.min(v)).map(|r| ndcg_at(r, k)).sum::<f64>() / v as f64
}

/// 1-based ranks, ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &p in &idx[i..=j] {
            ranks[p] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation; `None` when either side is constant or fewer than two points.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_with_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 5.0]), [2.5, 4.0, 2.5, 1.0]);
    }

    #[test]
    fn rank_tie_break() {
        let s = [1.0, 3.0, 3.0, 0.0];
        assert_eq!(target_rank(&s, 1), 1);
        assert_eq!(target_rank(&s, 2), 2);
        assert_eq!(top_k(&s, 3), [1, 2, 0]);
        assert_eq!(top_k(&s, 10), [1, 2, 0, 3]);
    }

    #[test]
    fn surprisal_bounds() {
        let pop = PopularityTable::from_counts(vec![8, 0, 0]);
        assert_eq!(normalized_surprisal(&pop, 0), 0.0);
        assert_eq!(normalized_surprisal(&pop, 1), 1.0);
    }
}
