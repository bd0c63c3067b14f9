//! Dense tanh MLP with exact reverse-mode gradients, plus Adam.
//!
//! Everything is f64 and allocation-light: weights are flat row-major
//! `(out, in)` matrices and batches are flat row-major `(n, dim)` buffers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NetworkRole {
    QNetwork,
    PolicyAndValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

/// MLP weights serving as the Q-network or the policy-and-value network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub layers: Vec<DenseLayer>,
    pub role: NetworkRole,
}

impl PolicyParams {
    /// Xavier-uniform initialized network: tanh hidden layers, linear output.
    pub fn new(input: usize, hidden: &[usize], output: usize, role: NetworkRole, rng: &mut impl Rng) -> Self {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(output);
        let layers = dims
            .windows(2)
            .map(|d| {
                let (i, o) = (d[0], d[1]);
                let limit = (6.0 / (i + o) as f64).sqrt();
                DenseLayer {
                    w: (0..i * o).map(|_| rng.random_range(-limit..limit)).collect(),
                    b: vec![0.0; o],
                    in_dim: i,
                    out_dim: o,
                }
            })
            .collect();
        Self { layers, role }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map(|l| l.in_dim).unwrap_or(0)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim).unwrap_or(0)
    }

    /// Forward pass for one sample.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let mut cur = x.to_vec();
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.out_dim];
            for o in 0..layer.out_dim {
                let row = &layer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                let z: f64 = layer.b[o]
                    + row.iter().zip(&cur).map(|(w, x)| w * x).sum::<f64>();
                next[o] = if li == last { z } else { z.tanh() };
            }
            cur = next;
        }
        Ok(cur)
    }

    /// Forward pass for a flat `(n, input_dim)` batch, caching activations.
    pub fn forward_batch(&self, xs: &[f64], n: usize) -> BatchCache {
        assert_eq!(xs.len(), n * self.input_dim());
        let last = self.layers.len() - 1;
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut cur: &[f64] = xs;
        for (li, layer) in self.layers.iter().enumerate() {
            let mut out = vec![0.0; n * layer.out_dim];
            for r in 0..n {
                let x = &cur[r * layer.in_dim..(r + 1) * layer.in_dim];
                let dst = &mut out[r * layer.out_dim..(r + 1) * layer.out_dim];
                for (o, d) in dst.iter_mut().enumerate() {
                    let row = &layer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                    let z: f64 =
                        layer.b[o] + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>();
                    *d = if li == last { z } else { z.tanh() };
                }
            }
            activations.push(out);
            cur = activations.last().unwrap();
        }
        BatchCache { n, activations }
    }

    /// Reverse-mode gradients of a scalar loss, given `d_out = dLoss/d(output)`
    /// for every sample in the batch. Parameter gradients are summed over the
    /// batch; scale `d_out` beforehand for means.
    pub fn backward_batch(
        &self,
        xs: &[f64],
        cache: &BatchCache,
        d_out: &[f64],
    ) -> Gradients {
        let n = cache.n;
        assert_eq!(d_out.len(), n * self.output_dim());
        let mut grads = Gradients::zeros_like(self);
        let mut d_cur = d_out.to_vec();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let y = &cache.activations[li];
            let is_last = li == self.layers.len() - 1;
            // dZ: through tanh for hidden layers (tanh' = 1 - y^2).
            if !is_last {
                for (d, &yv) in d_cur.iter_mut().zip(y.iter()) {
                    *d *= 1.0 - yv * yv;
                }
            }
            let x: &[f64] = if li == 0 {
                xs
            } else {
                &cache.activations[li - 1]
            };
            let dw = &mut grads.w[li];
            let db = &mut grads.b[li];
            for r in 0..n {
                let dz = &d_cur[r * layer.out_dim..(r + 1) * layer.out_dim];
                let xr = &x[r * layer.in_dim..(r + 1) * layer.in_dim];
                for (o, &dzo) in dz.iter().enumerate() {
                    db[o] += dzo;
                    let wrow = &mut dw[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (wv, &xv) in wrow.iter_mut().zip(xr) {
                        *wv += dzo * xv;
                    }
                }
            }
            if li > 0 {
                // dX = dZ . W
                let mut d_prev = vec![0.0; n * layer.in_dim];
                for r in 0..n {
                    let dz = &d_cur[r * layer.out_dim..(r + 1) * layer.out_dim];
                    let dst = &mut d_prev[r * layer.in_dim..(r + 1) * layer.in_dim];
                    for (o, &dzo) in dz.iter().enumerate() {
                        let wrow = &layer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                        for (d, &wv) in dst.iter_mut().zip(wrow) {
                            *d += dzo * wv;
                        }
                    }
                }
                d_cur = d_prev;
            }
        }
        grads
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Visit every parameter mutably; used by finite-difference tests.
    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for l in &mut self.layers {
            for w in &mut l.w {
                f(w);
            }
            for b in &mut l.b {
                f(b);
            }
        }
    }
}

/// Cached per-layer activations from [`PolicyParams::forward_batch`].
pub struct BatchCache {
    pub n: usize,
    pub activations: Vec<Vec<f64>>,
}

impl BatchCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("network has layers")
    }
}

/// Parameter gradients shaped like a [`PolicyParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradients {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &PolicyParams) -> Self {
        Self {
            w: net.layers.iter().map(|l| vec![0.0; l.w.len()]).collect(),
            b: net.layers.iter().map(|l| vec![0.0; l.b.len()]).collect(),
        }
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.w.iter_mut().zip(&other.w) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.b.iter_mut().zip(&other.b) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for a in self.w.iter_mut().chain(self.b.iter_mut()) {
            for x in a.iter_mut() {
                *x *= k;
            }
        }
    }

    /// Flat view in the same order as [`PolicyParams::for_each_param_mut`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.w.iter().zip(&self.b) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

/// Adam optimizer with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    m: Gradients,
    v: Gradients,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(net: &PolicyParams) -> Self {
        Self {
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, net: &mut PolicyParams, grads: &Gradients, lr: f64) {
        if lr == 0.0 {
            return;
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (li, layer) in net.layers.iter_mut().enumerate() {
            for (p, (g, (m, v))) in layer.w.iter_mut().zip(
                grads.w[li]
                    .iter()
                    .zip(self.m.w[li].iter_mut().zip(self.v.w[li].iter_mut())),
            ) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
            }
            for (p, (g, (m, v))) in layer.b.iter_mut().zip(
                grads.b[li]
                    .iter()
                    .zip(self.m.b[li].iter_mut().zip(self.v.b[li].iter_mut())),
            ) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
            }
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|&z| z - lse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    /// Independent straight-line re-implementation of the forward pass,
    /// used as the oracle for the batched code path.
    fn forward_oracle(net: &PolicyParams, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for (li, layer) in net.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.out_dim);
            for o in 0..layer.out_dim {
                let mut z = layer.b[o];
                for i in 0..layer.in_dim {
                    z += layer.w[o * layer.in_dim + i] * cur[i];
                }
                out.push(if li + 1 == net.layers.len() { z } else { z.tanh() });
            }
            cur = out;
        }
        cur
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let mut net = PolicyParams::new(3, &[4], 2, NetworkRole::QNetwork, &mut rng);
        net.for_each_param_mut(|p| *p = 0.0);
        assert_eq!(net.forward(&[1.0, -2.0, 0.5]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_single_layer_passes_input_through() {
        let net = PolicyParams {
            role: NetworkRole::QNetwork,
            layers: vec![DenseLayer {
                w: vec![1.0, 0.0, 0.0, 1.0],
                b: vec![0.0, 0.0],
                in_dim: 2,
                out_dim: 2,
            }],
        };
        let y = net.forward(&[0.3, 0.7]).unwrap();
        assert!((y[0] - 0.3).abs() < 1e-15);
        assert!((y[1] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn forward_matches_independent_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        for _ in 0..10 {
            let net = PolicyParams::new(5, &[7, 6], 3, NetworkRole::PolicyAndValue, &mut rng);
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let got = net.forward(&x).unwrap();
            let want = forward_oracle(&net, &x);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12, "got {g}, oracle {w}");
            }
            // Batched path agrees with the per-sample path.
            let cache = net.forward_batch(&x, 1);
            for (g, w) in cache.output().iter().zip(&want) {
                assert!((g - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_linear_neuron_hand_gradient() {
        // y = w * x, loss = y, x = 2 -> dloss/dw = 2.
        let net = PolicyParams {
            role: NetworkRole::QNetwork,
            layers: vec![DenseLayer {
                w: vec![1.5],
                b: vec![0.0],
                in_dim: 1,
                out_dim: 1,
            }],
        };
        let xs = [2.0];
        let cache = net.forward_batch(&xs, 1);
        let grads = net.backward_batch(&xs, &cache, &[1.0]);
        assert!((grads.w[0][0] - 2.0).abs() < 1e-15);
        assert!((grads.b[0][0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_parameter_gradients() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let net = PolicyParams::new(4, &[8, 8], 2, NetworkRole::QNetwork, &mut rng);
        let xs: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cache = net.forward_batch(&xs, 2);
        let grads = net.backward_batch(&xs, &cache, &[0.0, 0.0, 0.0, 0.0]);
        assert!(grads.flat().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gradients_match_central_finite_differences() {
        // Scalar loss = sum of outputs over a small batch; relative error
        // under 1e-4 against h = 1e-5 central differences.
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for trial in 0..5 {
            let net = PolicyParams::new(3, &[6, 5], 2, NetworkRole::QNetwork, &mut rng);
            let n = 3;
            let xs: Vec<f64> = (0..n * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let cache = net.forward_batch(&xs, n);
            let d_out = vec![1.0; n * 2];
            let analytic = net.backward_batch(&xs, &cache, &d_out).flat();

            let loss = |net: &PolicyParams| -> f64 {
                net.forward_batch(&xs, n).output().iter().sum()
            };
            let h = 1e-5;
            let mut idx = 0;
            let mut probe = net.clone();
            let mut flat_positions = Vec::new();
            probe.for_each_param_mut(|_| flat_positions.push(()));
            let total = flat_positions.len();
            for k in 0..total {
                let mut plus = net.clone();
                let mut minus = net.clone();
                let mut i = 0;
                plus.for_each_param_mut(|p| {
                    if i == k {
                        *p += h;
                    }
                    i += 1;
                });
                i = 0;
                minus.for_each_param_mut(|p| {
                    if i == k {
                        *p -= h;
                    }
                    i += 1;
                });
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let a = analytic[idx];
                let denom = a.abs().max(numeric.abs()).max(1e-8);
                assert!(
                    ((a - numeric).abs() / denom) < 1e-4,
                    "trial {trial} param {k}: analytic {a} vs numeric {numeric}"
                );
                idx += 1;
            }
        }
    }

    #[test]
    fn adam_with_zero_learning_rate_is_identity() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let mut net = PolicyParams::new(3, &[4], 2, NetworkRole::QNetwork, &mut rng);
        let before = net.clone();
        let mut opt = Adam::new(&net);
        let mut grads = Gradients::zeros_like(&net);
        for g in grads.w.iter_mut().chain(grads.b.iter_mut()) {
            for x in g.iter_mut() {
                *x = 1.0;
            }
        }
        opt.step(&mut net, &grads, 0.0);
        assert_eq!(net, before);
    }

    #[test]
    fn softmax_is_a_distribution() {
        let p = softmax(&[1.0, 2.0, -3.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(p.iter().all(|&x| x >= 0.0));
        let lp = log_softmax(&[1.0, 2.0, -3.0]);
        for (a, b) in p.iter().zip(&lp) {
            assert!((a.ln() - b).abs() < 1e-12);
        }
    }
}
