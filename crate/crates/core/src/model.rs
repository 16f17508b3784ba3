//! Fully connected ReLU network with a softmax cross-entropy head.
//!
//! Parameters live in one flat vector so they line up coordinate for
//! coordinate with gradients, codewords and noise. Layer `l` contributes its
//! weight matrix (row-major, `out × in`) followed by its bias.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::codebook::{GradientVector, Stage};
use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    sizes: Vec<usize>,
}

impl Architecture {
    /// Layer widths from input to output; hidden layers use ReLU.
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|s| *s == 0) {
            return Err(Error::InvalidArgument(format!("architecture needs two or more nonzero layer sizes, got {sizes:?}")));
        }
        if *sizes.last().unwrap() < 2 {
            return Err(Error::InvalidArgument("output layer needs at least two classes".into()));
        }
        Ok(Architecture { sizes })
    }

    /// `784 → hidden → 10`.
    pub fn mnist(hidden: usize) -> Result<Self> {
        Architecture::new(vec![784, hidden, 10])
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn classes(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// `(weights offset, bias offset, in, out)` per layer.
    fn layout(&self) -> Vec<(usize, usize, usize, usize)> {
        let mut off = 0;
        self.sizes
            .windows(2)
            .map(|w| {
                let (n_in, n_out) = (w[0], w[1]);
                let entry = (off, off + n_in * n_out, n_in, n_out);
                off += n_in * n_out + n_out;
                entry
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    arch: Architecture,
    params: Vec<f64>,
}

impl Mlp {
    /// He initialization: weights `N(0, 2/fan_in)`, biases zero.
    pub fn he_init(arch: Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; arch.param_count()];
        for (w_off, b_off, n_in, _) in arch.layout() {
            let normal = Normal::new(0.0, (2.0 / n_in as f64).sqrt()).expect("positive std");
            for p in &mut params[w_off..b_off] {
                *p = normal.sample(&mut rng);
            }
        }
        Mlp { arch, params }
    }

    pub fn zeros(arch: Architecture) -> Self {
        let params = vec![0.0; arch.param_count()];
        Mlp { arch, params }
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        if params.len() != arch.param_count() {
            return Err(Error::DimensionMismatch { expected: arch.param_count(), actual: params.len() });
        }
        Ok(Mlp { arch, params })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.arch.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.arch.input_dim(), actual: x.len() });
        }
        Ok(())
    }

    /// Pre-activations of every layer (the last entry holds the logits).
    fn forward_all(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let layout = self.arch.layout();
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(layout.len());
        let mut input: Vec<f64> = x.to_vec();
        for (l, &(w_off, b_off, n_in, n_out)) in layout.iter().enumerate() {
            let mut z = self.params[b_off..b_off + n_out].to_vec();
            let w = &self.params[w_off..b_off];
            for (j, zj) in z.iter_mut().enumerate() {
                let row = &w[j * n_in..(j + 1) * n_in];
                *zj += row.iter().zip(&input).map(|(a, b)| a * b).sum::<f64>();
            }
            if l + 1 < layout.len() {
                input = z.iter().map(|v| v.max(0.0)).collect();
            }
            pre.push(z);
        }
        pre
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.forward_all(x).pop().unwrap())
    }

    /// Arg-max class; ties go to the lowest index.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let logits = self.logits(x)?;
        let mut best = 0;
        for (i, v) in logits.iter().enumerate() {
            if *v > logits[best] {
                best = i;
            }
        }
        Ok(best)
    }

    /// Cross-entropy of the softmax output against `label`.
    pub fn loss(&self, x: &[f64], label: usize) -> Result<f64> {
        let logits = self.logits(x)?;
        if label >= logits.len() {
            return Err(Error::InvalidArgument(format!("label {label} out of range")));
        }
        Ok(log_softmax_norm(&logits) - logits[label])
    }

    /// Writes the single-example gradient into `out` and returns the loss.
    pub fn example_gradient(&self, x: &[f64], label: usize, out: &mut [f64]) -> Result<f64> {
        self.check_input(x)?;
        if out.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), actual: out.len() });
        }
        if label >= self.arch.classes() {
            return Err(Error::InvalidArgument(format!("label {label} out of range")));
        }
        out.fill(0.0);
        let layout = self.arch.layout();
        let pre = self.forward_all(x);
        let logits = pre.last().unwrap();
        let lse = log_softmax_norm(logits);
        let loss = lse - logits[label];
        let mut delta: Vec<f64> = logits.iter().map(|z| (z - lse).exp()).collect();
        delta[label] -= 1.0;

        for l in (0..layout.len()).rev() {
            let (w_off, b_off, n_in, n_out) = layout[l];
            let relu_in: Vec<f64>;
            let input: &[f64] = if l == 0 {
                x
            } else {
                relu_in = pre[l - 1].iter().map(|v| v.max(0.0)).collect();
                &relu_in
            };
            for j in 0..n_out {
                let dj = delta[j];
                out[b_off + j] = dj;
                if dj == 0.0 {
                    continue;
                }
                let row = &mut out[w_off + j * n_in..w_off + (j + 1) * n_in];
                for (g, a) in row.iter_mut().zip(input) {
                    if *a != 0.0 {
                        *g = dj * a;
                    }
                }
            }
            if l > 0 {
                let w = &self.params[w_off..b_off];
                let mut next = vec![0.0; n_in];
                for (j, dj) in delta.iter().enumerate() {
                    if *dj == 0.0 {
                        continue;
                    }
                    for (n, wv) in next.iter_mut().zip(&w[j * n_in..(j + 1) * n_in]) {
                        *n += dj * wv;
                    }
                }
                for (n, z) in next.iter_mut().zip(&pre[l - 1]) {
                    if *z <= 0.0 {
                        *n = 0.0;
                    }
                }
                delta = next;
            }
        }
        Ok(loss)
    }

    /// Mean gradient over the records at `indices`.
    pub fn micro_batch_gradient(&self, dataset: &Dataset, indices: &[usize]) -> Result<GradientVector> {
        if indices.is_empty() {
            return Err(Error::Empty("micro-batch"));
        }
        let mut sum = vec![0.0; self.dim()];
        let mut scratch = vec![0.0; self.dim()];
        for &i in indices {
            self.example_gradient(dataset.features(i), dataset.label(i), &mut scratch)?;
            for (s, g) in sum.iter_mut().zip(&scratch) {
                *s += g;
            }
        }
        let n = indices.len() as f64;
        for s in sum.iter_mut() {
            *s /= n;
        }
        if let Some(pos) = sum.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: format!("gradient coordinate {pos}"), iteration: None });
        }
        Ok(GradientVector::new(sum, Stage::Raw))
    }

    /// `θ ← θ - η·direction`.
    pub fn apply_update(&mut self, direction: &[f64], eta: f64) -> Result<()> {
        if direction.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), actual: direction.len() });
        }
        for (p, d) in self.params.iter_mut().zip(direction) {
            *p -= eta * d;
        }
        Ok(())
    }
}

fn log_softmax_norm(logits: &[f64]) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln()
}

/// Fraction of records whose arg-max prediction equals the label.
pub fn evaluate_accuracy(model: &Mlp, test_set: &Dataset) -> Result<f64> {
    if test_set.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let mut correct = 0usize;
    for i in 0..test_set.len() {
        if model.predict(test_set.features(i))? == test_set.label(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / test_set.len() as f64)
}
