#![allow(dead_code)]

use lseforge_core::{DenseMatrix, Executor, NegIndexMatrix, Rng};

/// Runs tasks on `workers` scoped threads, task `k` on worker `k % workers`.
pub struct Threads(pub usize);

impl Executor for Threads {
    fn workers(&self) -> usize {
        self.0
    }

    fn map<T, F>(&self, n_tasks: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        let w = self.0.max(1);
        let f = &f;
        let mut parts: Vec<Vec<(usize, T)>> = std::thread::scope(|s| {
            let hs: Vec<_> = (0..w)
                .map(|wid| s.spawn(move || (wid..n_tasks).step_by(w).map(|k| (k, f(k))).collect::<Vec<_>>()))
                .collect();
            hs.into_iter().map(|h| h.join().unwrap()).collect()
        });
        let mut out: Vec<Option<T>> = (0..n_tasks).map(|_| None).collect();
        for p in parts.iter_mut() {
            for (k, t) in p.drain(..) {
                out[k] = Some(t);
            }
        }
        out.into_iter().map(Option::unwrap).collect()
    }
}

pub struct Instance {
    pub e: DenseMatrix<f64>,
    pub c: DenseMatrix<f64>,
    pub x: Vec<usize>,
}

pub fn instance(rng: &mut Rng, n: usize, d: usize, v: usize, scale: f64) -> Instance {
    let e = DenseMatrix::from_fn(n, d, |_, _| rng.uniform_f64(-scale, scale));
    let c = DenseMatrix::from_fn(d, v, |_, _| rng.uniform_f64(-scale, scale));
    let x = (0..n).map(|_| rng.below(v)).collect();
    Instance { e, c, x }
}

/// Index matrix with independent uniform negatives (test-side, not the library sampler).
pub fn random_inds(rng: &mut Rng, x: &[usize], ns: usize, v: usize) -> NegIndexMatrix {
    let mut idx = Vec::with_capacity(x.len() * (ns + 1));
    for &p in x {
        idx.push(p);
        for _ in 0..ns {
            let q = loop {
                let q = rng.below(v);
                if q != p {
                    break q;
                }
            };
            idx.push(q);
        }
    }
    NegIndexMatrix::new(x.len(), ns + 1, idx).unwrap()
}

/// max |a - b| <= tol * max(max |b|, floor)
pub fn close_rel(a: &[f64], b: &[f64], tol: f64) -> bool {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.len() == b.len() && a.iter().zip(b).all(|(p, q)| (p - q).abs() <= tol * scale)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Central differences of `loss` with respect to every entry of `m`.
pub fn fd_grad(m: &DenseMatrix<f64>, h: f64, mut loss: impl FnMut(&DenseMatrix<f64>) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.data().len());
    let mut work = m.clone();
    for k in 0..m.data().len() {
        let orig = work.data()[k];
        work.data_mut()[k] = orig + h;
        let up = loss(&work);
        work.data_mut()[k] = orig - h;
        let dn = loss(&work);
        work.data_mut()[k] = orig;
        out.push((up - dn) / (2.0 * h));
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()))
}
