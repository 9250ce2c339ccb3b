//! Temporal split on hand-checked logs.

use lseforge::data::{Event, InteractionLog};
use lseforge::split::{check_leakage, temporal_split, EvalPair};
use lseforge::{make_synthetic, SyntheticConfig};
use lseforge_core::Rng;

fn log_from(events: &[(usize, usize, i64)], n_users: usize, n_items: usize) -> InteractionLog {
    let mut events: Vec<Event> = events.iter().map(|&(user, item, ts)| Event { user, item, ts }).collect();
    events.sort_by_key(|e| (e.user, e.ts));
    InteractionLog {
        events,
        n_users,
        n_items,
        item_ids: (0..n_items as i64).collect(),
        user_ids: (0..n_users as i64).collect(),
    }
}

/// Ten events at timestamps 1..=10; the 0.9 nearest-rank cutoff is 9.
fn ten_events() -> InteractionLog {
    log_from(
        &[
            (0, 0, 1),
            (0, 1, 3),
            (0, 2, 6),
            (0, 3, 10),
            (1, 1, 2),
            (1, 2, 4),
            (1, 4, 8),
            (2, 0, 5),
            (2, 3, 7),
            (3, 5, 9),
        ],
        4,
        6,
    )
}

fn pairs(ps: &[EvalPair]) -> Vec<(usize, Vec<usize>, usize)> {
    ps.iter().map(|p| (p.user, p.prefix.clone(), p.target)).collect()
}

#[test]
fn ten_event_log_by_hand() {
    let s = temporal_split(&ten_events(), 0.9, 1.0, &Rng::new(0)).unwrap();
    assert_eq!(s.cutoff_ts, 9);
    // Users 0, 1, 2 have two or more events up to ts 9; each loses its last one.
    assert_eq!(
        pairs(&s.valid),
        [(0, vec![0, 1], 2), (1, vec![1, 2], 4), (2, vec![0], 3)]
    );
    let train: Vec<(usize, Vec<usize>)> = s.train.iter().map(|t| (t.user, t.items.clone())).collect();
    assert_eq!(train, [(0, vec![0, 1]), (1, vec![1, 2])]);
    // Only user 0 has an event after the cutoff.
    assert_eq!(pairs(&s.test), [(0, vec![0, 1, 2], 3)]);
    check_leakage(&s).unwrap();
}

#[test]
fn five_percent_draw_is_one_user_and_reproducible() {
    let a = temporal_split(&ten_events(), 0.9, 0.05, &Rng::new(4)).unwrap();
    let b = temporal_split(&ten_events(), 0.9, 0.05, &Rng::new(4)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.valid.len(), 1);
    assert!([0, 1, 2].contains(&a.valid[0].user));
    let users: Vec<usize> = (0..32).map(|s| temporal_split(&ten_events(), 0.9, 0.05, &Rng::new(s)).unwrap().valid[0].user).collect();
    assert!(users.iter().any(|&u| u != users[0]), "seed should matter");
}

#[test]
fn single_post_cutoff_event_user_is_not_tested() {
    let log = log_from(&[(0, 0, 1), (0, 1, 2), (0, 2, 3), (0, 3, 9), (1, 4, 10)], 2, 5);
    let s = temporal_split(&log, 0.6, 0.0, &Rng::new(0)).unwrap();
    assert_eq!(s.cutoff_ts, 3);
    assert_eq!(pairs(&s.test), [(0, vec![0, 1, 2], 3)]);
    assert!(s.valid.is_empty());
}

#[test]
fn no_leakage_on_synthetic_corpus() {
    let log = make_synthetic(&SyntheticConfig::default(), &Rng::new(9)).unwrap();
    let s = temporal_split(&log, 0.9, 0.05, &Rng::new(10)).unwrap();
    check_leakage(&s).unwrap();
    assert!(!s.test.is_empty() && !s.valid.is_empty());
    for t in &s.train {
        assert!(t.events.iter().all(|&e| log.events[e].ts <= s.cutoff_ts));
    }
    for p in &s.test {
        assert!(log.events[p.target_event].ts > s.cutoff_ts);
    }
}

#[test]
fn leakage_is_detected() {
    let mut s = temporal_split(&ten_events(), 0.9, 1.0, &Rng::new(0)).unwrap();
    s.train[0].events.push(s.test[0].target_event);
    assert!(check_leakage(&s).is_err());
}
