//! Fused kernels against the materializing oracles.

mod common;

use common::*;
use lseforge_core::*;
use proptest::prelude::*;
use lseforge_core::Rng;

fn acct() -> Accountant {
    Accountant::new()
}

fn cce_pair(t: &Instance, cfg: &CceConfig, exec: &impl Executor) -> (LossOutput<f64>, CceGrad<f64>) {
    let mut a = acct();
    let mut env = Env::new(exec, &mut a);
    let out = cce_forward(&t.e, &t.c, &t.x, cfg, &mut env).unwrap();
    let g = cce_backward(&t.e, &t.c, &t.x, &out.lse, 1.0, cfg, &mut env).unwrap();
    a.report().unwrap();
    (out, g)
}

fn ccem_pair(t: &Instance, inds: &NegIndexMatrix, cfg: &CceConfig, exec: &impl Executor) -> (LossOutput<f64>, GradPair<f64>) {
    let mut a = acct();
    let mut env = Env::new(exec, &mut a);
    let out = ccem_forward(&t.e, &t.c, inds, cfg, &mut env).unwrap();
    let g = ccem_backward(&t.e, &t.c, inds, &out.lse, 1.0, cfg, &mut env).unwrap();
    a.report().unwrap();
    (out, g)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cce_matches_full_oracle(
        seed in any::<u64>(), n in 1usize..=32, d in 1usize..=16, v in 1usize..=64,
        rb in 1usize..40, cb in 1usize..70,
    ) {
        let t = instance(&mut Rng::new(seed), n, d, v, 1.0);
        let cfg = CceConfig::default().with_blocks(rb, cb);
        let (out, g) = cce_pair(&t, &cfg, &Sequential);
        let want = ce_full_forward(&t.e, &t.c, &t.x, &mut acct()).unwrap();
        let wg = ce_full_backward(&t.e, &t.c, &t.x, 1.0, &mut acct()).unwrap();
        prop_assert!((out.loss - want.loss).abs() <= 1e-6 * want.loss.abs().max(1e-12));
        prop_assert!(close_rel(&out.lse, &want.lse, 1e-6));
        prop_assert!(close_rel(&out.pos_logits, &want.pos_logits, 1e-6));
        prop_assert!(close_rel(g.grads.d_embeddings.data(), wg.d_embeddings.data(), 1e-6));
        prop_assert!(close_rel(g.grads.d_classifier.data(), wg.d_classifier.data(), 1e-6));
    }

    #[test]
    fn ccem_matches_sampled_oracle(
        seed in any::<u64>(), n in 1usize..=32, d in 1usize..=16, v in 2usize..=128,
        ns_frac in 0.0f64..1.0, rb in 1usize..40,
    ) {
        let mut rng = Rng::new(seed);
        let t = instance(&mut rng, n, d, v, 1.0);
        let ns = ((v - 1).min(31) as f64 * ns_frac) as usize;
        let inds = random_inds(&mut rng, &t.x, ns, v);
        let cfg = CceConfig::default().with_blocks(rb, 1);
        let (out, g) = ccem_pair(&t, &inds, &cfg, &Sequential);
        let want = ce_sampled_forward(&t.e, &t.c, &inds, &mut acct()).unwrap();
        let wg = ce_sampled_backward(&t.e, &t.c, &inds, 1.0, &mut acct()).unwrap();
        prop_assert!((out.loss - want.loss).abs() <= 1e-6 * want.loss.abs().max(1e-12));
        prop_assert!(close_rel(g.d_embeddings.data(), wg.d_embeddings.data(), 1e-6));
        prop_assert!(close_rel(g.d_classifier.data(), wg.d_classifier.data(), 1e-6));
    }
}

#[test]
fn full_coverage_sampled_equals_full() {
    let mut rng = Rng::new(7);
    for _ in 0..20 {
        let (n, d, v) = (1 + rng.below(12), 1 + rng.below(6), 2 + rng.below(20));
        let t = instance(&mut rng, n, d, v, 1.5);
        let inds = NegIndexMatrix::full_catalog(&t.x, v).unwrap();
        let full = ce_full_forward(&t.e, &t.c, &t.x, &mut acct()).unwrap();
        let samp = ce_sampled_forward(&t.e, &t.c, &inds, &mut acct()).unwrap();
        assert!(rel_err(samp.loss, full.loss) <= 1e-12);
        let gf = ce_full_backward(&t.e, &t.c, &t.x, 1.0, &mut acct()).unwrap();
        let gs = ce_sampled_backward(&t.e, &t.c, &inds, 1.0, &mut acct()).unwrap();
        assert!(close_rel(gs.d_embeddings.data(), gf.d_embeddings.data(), 1e-10));
        assert!(close_rel(gs.d_classifier.data(), gf.d_classifier.data(), 1e-10));
        let (fused, _) = ccem_pair(&t, &inds, &CceConfig::default(), &Sequential);
        let (cce, _) = cce_pair(&t, &CceConfig::default(), &Sequential);
        assert!(rel_err(fused.loss, cce.loss) <= 1e-10);
    }
}

#[test]
fn cce_tiling_grid_invariance() {
    let mut rng = Rng::new(8);
    for _ in 0..3 {
        let t = instance(&mut rng, 150, 8, 300, 1.0);
        let (base, bg) = cce_pair(&t, &CceConfig::default().with_blocks(1, 1), &Sequential);
        for rb in [1, 3, 32, 128] {
            for cb in [1, 5, 64, 256] {
                let (o, g) = cce_pair(&t, &CceConfig::default().with_blocks(rb, cb), &Sequential);
                assert!(rel_err(o.loss, base.loss) <= 1e-7);
                assert!(close_rel(&o.lse, &base.lse, 1e-7));
                assert!(close_rel(g.grads.d_embeddings.data(), bg.grads.d_embeddings.data(), 1e-7));
                assert!(close_rel(g.grads.d_classifier.data(), bg.grads.d_classifier.data(), 1e-7));
            }
        }
    }
}

#[test]
fn ccem_negative_slot_permutation_invariance() {
    let mut rng = Rng::new(9);
    for _ in 0..10 {
        let t = instance(&mut rng, 20, 6, 50, 2.0);
        let inds = random_inds(&mut rng, &t.x, 15, 50);
        let mut prng = Rng::new(rng.below(1 << 30) as u64);
        let perm = inds.permute_negatives(|_, r| prng.shuffle(r));
        let cfg = CceConfig::default().with_blocks(6, 1);
        let (a, ga) = ccem_pair(&t, &inds, &cfg, &Sequential);
        let (b, gb) = ccem_pair(&t, &perm, &cfg, &Sequential);
        assert!(rel_err(b.loss, a.loss) <= 1e-10);
        assert!(close_rel(gb.d_embeddings.data(), ga.d_embeddings.data(), 1e-10));
    }
}

#[test]
fn results_bitwise_identical_across_worker_counts() {
    let mut rng = Rng::new(10);
    let t = instance(&mut rng, 97, 7, 211, 1.0);
    let inds = random_inds(&mut rng, &t.x, 11, 211);
    let cfg = CceConfig::default().with_blocks(8, 16).with_filter_eps(1e-3);
    let (o1, g1) = cce_pair(&t, &cfg, &Sequential);
    let (m1, h1) = ccem_pair(&t, &inds, &cfg, &Sequential);
    for w in [2, 3, 8] {
        let (o, g) = cce_pair(&t, &cfg, &Threads(w));
        assert_eq!(o, o1);
        assert_eq!(g, g1);
        let (m, h) = ccem_pair(&t, &inds, &cfg, &Threads(w));
        assert_eq!(m, m1);
        assert_eq!(h, h1);
    }
}

#[test]
fn f32_storage_tracks_f64_reference() {
    let mut rng = Rng::new(11);
    let t = instance(&mut rng, 30, 8, 100, 1.0);
    let e32 = DenseMatrix::<f32>::from_f64(&t.e);
    let c32 = DenseMatrix::<f32>::from_f64(&t.c);
    let mut a = acct();
    let out = cce_forward(&e32, &c32, &t.x, &CceConfig::default(), &mut Env::new(&Sequential, &mut a)).unwrap();
    let want = ce_full_forward(&t.e, &t.c, &t.x, &mut acct()).unwrap();
    assert!(rel_err(out.loss, want.loss) <= 1e-5);
    assert_eq!(a.snapshot().retained.bytes, 2 * 30 * 4);
}

#[test]
fn saturated_instance_filters_most_terms_without_changing_gradient() {
    // Row k reads only axis k of C. Rows 0..15 see their target beat every
    // other item by 30 nats; row 15 has small random logits and carries the
    // gradient scale.
    let (n, v) = (16, 64);
    let mut rng = Rng::new(12);
    let x: Vec<usize> = (0..n).map(|_| rng.below(v)).collect();
    let e = DenseMatrix::from_fn(n, n, |i, k| if i == k { 1.0 } else { 0.0 });
    let mut c = DenseMatrix::from_fn(n, v, |k, _| if k + 1 < n { -15.0 } else { 0.0 });
    for (k, &xk) in x.iter().enumerate().take(n - 1) {
        c.set(k, xk, 15.0);
    }
    for j in 0..v {
        c.set(n - 1, j, rng.uniform_f64(-0.1, 0.1));
    }
    let t = Instance { e, c, x };
    let exact = ce_full_backward(&t.e, &t.c, &t.x, 1.0, &mut acct()).unwrap();
    let cfg = CceConfig::default().with_filter_eps(2f64.powi(-23));
    let (_, g) = cce_pair(&t, &cfg, &Sequential);
    assert!(g.skipped_fraction > 0.9, "skipped {}", g.skipped_fraction);
    assert!(close_rel(g.grads.d_classifier.data(), exact.d_classifier.data(), 1e-6));
    assert!(close_rel(g.grads.d_embeddings.data(), exact.d_embeddings.data(), 1e-6));
}
