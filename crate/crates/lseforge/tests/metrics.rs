//! Ranking metrics and Spearman correlation against hand computations.

use lseforge::metrics::{evaluate, ndcg_at, random_ndcg, spearman, target_rank};
use lseforge::split::EvalPair;
use lseforge::ToyEncoder;
use lseforge_core::{DenseMatrix, PopularityTable, Rng};

#[test]
fn ndcg_hand_cases() {
    assert_eq!(ndcg_at(1, 10), 1.0);
    assert_eq!(ndcg_at(3, 10), 0.5);
    assert_eq!(ndcg_at(11, 10), 0.0);
}

#[test]
fn ranks_from_scores() {
    let scores = [0.1, 0.9, 0.5, 0.5, 0.2];
    assert_eq!(target_rank(&scores, 1), 1);
    assert_eq!(target_rank(&scores, 2), 2);
    assert_eq!(target_rank(&scores, 3), 3);
    assert_eq!(target_rank(&scores, 0), 5);
}

/// Model whose score for item `v` is `-v` for every prefix.
fn descending_model(v: usize) -> ToyEncoder {
    let mut m = ToyEncoder::init(v, 1, &Rng::new(0));
    m.w = DenseMatrix::from_vec(1, 1, vec![0.0]).unwrap();
    m.b = vec![1.0];
    m.c = DenseMatrix::from_fn(1, v, |_, j| -(j as f64));
    m
}

fn pair(target: usize) -> EvalPair {
    EvalPair {
        user: 0,
        prefix: vec![0],
        target,
        target_event: 0,
    }
}

#[test]
fn evaluate_hand_cases() {
    let m = descending_model(20);
    let pop = PopularityTable::from_counts(vec![1; 20]);
    let r = evaluate(&m, &[pair(0), pair(2), pair(10)], 10, &pop).unwrap();
    assert!((r.ndcg - 1.5 / 3.0).abs() < 1e-15);
    assert_eq!(r.coverage, 0.5);
    // Uniform counts: every item carries self-information log2(20) / log2(20).
    assert!((r.surprisal - 1.0).abs() < 1e-15);
    let full = evaluate(&m, &[pair(3)], 20, &pop).unwrap();
    assert_eq!(full.coverage, 1.0);
}

#[test]
fn evaluate_rejects_degenerate_inputs() {
    let m = descending_model(4);
    assert!(evaluate(&m, &[], 2, &PopularityTable::from_counts(vec![1; 4])).is_err());
    assert!(evaluate(&m, &[pair(1)], 2, &PopularityTable::from_counts(vec![0; 4])).is_err());
}

#[test]
fn metric_ranges_on_random_model() {
    let m = ToyEncoder::init(50, 4, &Rng::new(3));
    let mut r = Rng::new(4);
    let pairs: Vec<EvalPair> = (0..30)
        .map(|u| EvalPair {
            user: u,
            prefix: (0..1 + r.below(5)).map(|_| r.below(50)).collect(),
            target: r.below(50),
            target_event: u,
        })
        .collect();
    let counts: Vec<u64> = (0..50).map(|i| (i % 7) as u64).collect();
    let out = evaluate(&m, &pairs, 10, &PopularityTable::from_counts(counts)).unwrap();
    assert!((0.0..=1.0).contains(&out.ndcg));
    assert!(out.coverage > 0.0 && out.coverage <= 1.0);
    assert!((0.0..=1.0).contains(&out.surprisal));
}

#[test]
fn random_baseline_value() {
    let expect: f64 = (1..=10).map(|r| 1.0 / ((r + 1) as f64).log2()).sum::<f64>() / 2000.0;
    assert_eq!(random_ndcg(2000, 10), expect);
    assert!((random_ndcg(5, 5) - (1..=5).map(|r| 1.0 / ((r + 1) as f64).log2()).sum::<f64>() / 5.0).abs() < 1e-15);
}

#[test]
fn spearman_textbook_without_ties() {
    // d = [-1, 1, -1, 1, 0]: rho = 1 - 6 * 4 / (5 * 24) = 0.8
    let rho = spearman(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 1.0, 4.0, 3.0, 5.0]).unwrap();
    assert!((rho - 0.8).abs() < 1e-12);
}

#[test]
fn spearman_with_ties_by_hand() {
    // y ranks [1, 2, 3.5, 5, 3.5]; Pearson of ranks = 8 / sqrt(10 * 9.5)
    let rho = spearman(&[1.0, 2.0, 3.0, 4.0, 5.0], &[5.0, 6.0, 7.0, 8.0, 7.0]).unwrap();
    assert!((rho - 8.0 / (95.0f64).sqrt()).abs() < 1e-12);
}

#[test]
fn spearman_monotone_and_degenerate() {
    let x = [3.0, 1.0, 4.0, 1.5, 9.0, 2.6];
    let y: Vec<f64> = x.iter().map(|v| v * v * v + 1.0).collect();
    assert_eq!(spearman(&x, &y), Some(1.0));
    let neg: Vec<f64> = x.iter().map(|v| -v).collect();
    assert!((spearman(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
    assert_eq!(spearman(&x, &[0.3; 6]), None);
    assert_eq!(spearman(&[1.0], &[2.0]), None);
}
