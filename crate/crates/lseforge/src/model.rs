//! Mean-pooling sequence encoder with an untied linear classifier, and Adam.
//!
//! For a prefix `x_1..x_t`: `a_t = mean(Emb[x_1..x_t])`, `h_t = tanh(W a_t + b)`,
//! and item scores are `h_t · C`.

use lseforge_core::{DenseMatrix, Rng};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ToyEncoder {
    /// Item embeddings, `V x D`.
    pub emb: DenseMatrix<f64>,
    /// `D x D`.
    pub w: DenseMatrix<f64>,
    pub b: Vec<f64>,
    /// Classifier, `D x V`.
    pub c: DenseMatrix<f64>,
}

/// Gradients shaped like [`ToyEncoder`].
pub type EncoderGrads = ToyEncoder;

impl ToyEncoder {
    /// `Emb`, `W`, `C` uniform in `±0.1/√D`, `b = 0`.
    pub fn init(n_items: usize, dim: usize, rng: &Rng) -> Self {
        let a = 0.1 / (dim as f64).sqrt();
        let mut r = rng.clone();
        let emb = DenseMatrix::from_fn(n_items, dim, |_, _| r.uniform_f64(-a, a));
        let w = DenseMatrix::from_fn(dim, dim, |_, _| r.uniform_f64(-a, a));
        let c = DenseMatrix::from_fn(dim, n_items, |_, _| r.uniform_f64(-a, a));
        Self {
            emb,
            w,
            b: vec![0.0; dim],
            c,
        }
    }

    pub fn zeros_like(&self) -> EncoderGrads {
        Self {
            emb: DenseMatrix::zeros(self.emb.rows(), self.emb.cols()),
            w: DenseMatrix::zeros(self.w.rows(), self.w.cols()),
            b: vec![0.0; self.b.len()],
            c: DenseMatrix::zeros(self.c.rows(), self.c.cols()),
        }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn n_items(&self) -> usize {
        self.emb.rows()
    }

    fn hidden(&self, a: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let z: f64 = self.w.row(i).iter().zip(a).map(|(w, a)| w * a).sum::<f64>() + self.b[i];
            *o = z.tanh();
        }
    }

    /// Hidden state after the whole prefix.
    pub fn encode(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        if prefix.is_empty() {
            return Err(Error::Data("cannot encode an empty prefix".into()));
        }
        let d = self.dim();
        let mut a = vec![0.0; d];
        for &x in prefix {
            for (ak, e) in a.iter_mut().zip(self.emb.row(x)) {
                *ak += e;
            }
        }
        let t = prefix.len() as f64;
        a.iter_mut().for_each(|ak| *ak /= t);
        let mut h = vec![0.0; d];
        self.hidden(&a, &mut h);
        Ok(h)
    }

    /// Scores of every item for hidden state `h`.
    pub fn scores(&self, h: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.resize(self.n_items(), 0.0);
        for (k, &hk) in h.iter().enumerate() {
            for (o, c) in out.iter_mut().zip(self.c.row(k)) {
                *o += hk * c;
            }
        }
    }

    /// Flat views of every parameter, in a fixed order.
    pub fn params_mut(&mut self) -> [&mut [f64]; 4] {
        [self.emb.data_mut(), self.w.data_mut(), &mut self.b, self.c.data_mut()]
    }

    pub fn params(&self) -> [&[f64]; 4] {
        [self.emb.data(), self.w.data(), &self.b, self.c.data()]
    }
}

/// Inputs of one training window; position `t` predicts `targets[t]` from `inputs[..=t]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub inputs: Vec<usize>,
    pub targets: Vec<usize>,
}

/// Cuts each sequence's next-item pairs into non-overlapping windows of at
/// most `sl` positions. Pooling restarts at every window.
pub fn build_windows<'a>(sequences: impl IntoIterator<Item = &'a [usize]>, sl: usize) -> Vec<Window> {
    let mut out = Vec::new();
    for seq in sequences {
        if seq.len() < 2 {
            continue;
        }
        let inputs = &seq[..seq.len() - 1];
        let targets = &seq[1..];
        for (i, t) in inputs.chunks(sl).zip(targets.chunks(sl)) {
            out.push(Window {
                inputs: i.to_vec(),
                targets: t.to_vec(),
            });
        }
    }
    out
}

/// Encoder activations for a batch of windows; rows follow window order.
pub struct BatchActivations {
    /// `N x D` hidden states, the loss layer's `E`.
    pub h: DenseMatrix<f64>,
    a: DenseMatrix<f64>,
    /// `(first row, inputs)` of each window.
    spans: Vec<(usize, Vec<usize>)>,
}

impl BatchActivations {
    pub fn targets(windows: &[&Window]) -> Vec<usize> {
        windows.iter().flat_map(|w| w.targets.iter().copied()).collect()
    }
}

pub fn forward_batch(model: &ToyEncoder, windows: &[&Window]) -> BatchActivations {
    let d = model.dim();
    let n: usize = windows.iter().map(|w| w.inputs.len()).sum();
    let mut a = DenseMatrix::<f64>::zeros(n, d);
    let mut h = DenseMatrix::<f64>::zeros(n, d);
    let mut spans = Vec::with_capacity(windows.len());
    let mut row = 0;
    let mut sum = vec![0.0; d];
    for w in windows {
        spans.push((row, w.inputs.clone()));
        sum.iter_mut().for_each(|s| *s = 0.0);
        for (t, &x) in w.inputs.iter().enumerate() {
            for (s, e) in sum.iter_mut().zip(model.emb.row(x)) {
                *s += e;
            }
            let inv = 1.0 / (t + 1) as f64;
            for (ak, s) in a.row_mut(row).iter_mut().zip(&sum) {
                *ak = s * inv;
            }
            model.hidden(a.row(row), h.row_mut(row));
            row += 1;
        }
    }
    BatchActivations { h, a, spans }
}

/// Accumulates encoder gradients into `grads` given `dh = ∂L/∂h` (`N x D`).
///
/// With `g_t = (1 - h_t²) ⊙ dh_t`: `∂W += g_t a_tᵀ`, `∂b += g_t`, and since
/// `Emb[x_k]` enters every `a_t` with `t ≥ k` with weight `1/t`,
/// `∂Emb[x_k] += Σ_{t≥k} Wᵀ g_t / t`, computed as a suffix sum.
pub fn backward_batch(model: &ToyEncoder, act: &BatchActivations, dh: &DenseMatrix<f64>, grads: &mut EncoderGrads) {
    let d = model.dim();
    let mut g = vec![0.0; d];
    let mut da = vec![0.0; d];
    let mut suffix = vec![0.0; d];
    for (start, inputs) in &act.spans {
        suffix.iter_mut().for_each(|s| *s = 0.0);
        for t in (0..inputs.len()).rev() {
            let row = start + t;
            let h = act.h.row(row);
            for k in 0..d {
                g[k] = (1.0 - h[k] * h[k]) * dh.get(row, k);
            }
            let a = act.a.row(row);
            for (i, &gi) in g.iter().enumerate() {
                grads.b[i] += gi;
                for (wij, aj) in grads.w.row_mut(i).iter_mut().zip(a) {
                    *wij += gi * aj;
                }
            }
            da.iter_mut().for_each(|x| *x = 0.0);
            for (i, &gi) in g.iter().enumerate() {
                for (dj, wij) in da.iter_mut().zip(model.w.row(i)) {
                    *dj += wij * gi;
                }
            }
            let inv = 1.0 / (t + 1) as f64;
            for (s, x) in suffix.iter_mut().zip(&da) {
                *s += x * inv;
            }
            for (ge, s) in grads.emb.row_mut(inputs[t]).iter_mut().zip(&suffix) {
                *ge += s;
            }
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(model: &ToyEncoder, lr: f64) -> Self {
        let shapes: Vec<Vec<f64>> = model.params().iter().map(|p| vec![0.0; p.len()]).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: shapes.clone(),
            v: shapes,
        }
    }

    pub fn update(&mut self, model: &mut ToyEncoder, grads: &EncoderGrads) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (self.beta1, self.beta2);
        for (((p, g), m), v) in model.params_mut().into_iter().zip(grads.params()).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}
