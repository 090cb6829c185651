//! Dense network with rectifier hidden layers, linear output, inverted
//! dropout between hidden layers, and hand-rolled backprop.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Fully-connected network parameters. `weights[l]` is row-major
/// `sizes[l+1] x sizes[l]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Mlp {
    /// Uniform fan-in initialization: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn new(sizes: &[usize], rng: &mut ChaCha8Rng) -> Self {
        assert!(sizes.len() >= 2);
        let mut weights = Vec::with_capacity(sizes.len() - 1);
        let mut biases = Vec::with_capacity(sizes.len() - 1);
        for l in 0..sizes.len() - 1 {
            let bound = 1.0 / (sizes[l] as f64).sqrt();
            weights.push(
                (0..sizes[l + 1] * sizes[l])
                    .map(|_| rng.gen_range(-bound..bound))
                    .collect(),
            );
            biases.push(vec![0.0; sizes[l + 1]]);
        }
        Self {
            sizes: sizes.to_vec(),
            weights,
            biases,
        }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        let weights = (0..sizes.len() - 1)
            .map(|l| vec![0.0; sizes[l + 1] * sizes[l]])
            .collect();
        let biases = (0..sizes.len() - 1).map(|l| vec![0.0; sizes[l + 1]]).collect();
        Self {
            sizes: sizes.to_vec(),
            weights,
            biases,
        }
    }

    pub fn layer_count(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// theta_target <- tau * theta + (1 - tau) * theta_target, per parameter.
    pub fn soft_update_from(&mut self, online: &Mlp, tau: f64) {
        debug_assert_eq!(self.sizes, online.sizes);
        for l in 0..self.weights.len() {
            for (t, &o) in self.weights[l].iter_mut().zip(&online.weights[l]) {
                *t = tau * o + (1.0 - tau) * *t;
            }
            for (t, &o) in self.biases[l].iter_mut().zip(&online.biases[l]) {
                *t = tau * o + (1.0 - tau) * *t;
            }
        }
    }

    pub fn all_params(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights
            .iter()
            .chain(self.biases.iter())
            .flat_map(|v| v.iter().copied())
    }
}

/// Work buffers for one forward/backward pass; reuse across calls to keep
/// the training loop allocation-free.
#[derive(Debug, Clone)]
pub struct MlpScratch {
    /// Pre-activations per layer (1..=L).
    pre: Vec<Vec<f64>>,
    /// Activations per layer (0..=L); hidden entries are post-ReLU and
    /// post-dropout, i.e. exactly what the next layer consumed.
    act: Vec<Vec<f64>>,
    /// Dropout scale per hidden unit (0 or 1/keep); all-ones when disabled.
    mask: Vec<Vec<f64>>,
    delta: Vec<Vec<f64>>,
}

impl MlpScratch {
    pub fn for_net(net: &Mlp) -> Self {
        let layers = net.layer_count();
        Self {
            pre: (0..layers).map(|l| vec![0.0; net.sizes[l + 1]]).collect(),
            act: net.sizes.iter().map(|&n| vec![0.0; n]).collect(),
            mask: (0..layers).map(|l| vec![1.0; net.sizes[l + 1]]).collect(),
            delta: (0..layers).map(|l| vec![0.0; net.sizes[l + 1]]).collect(),
        }
    }

    pub fn output(&self) -> &[f64] {
        self.act.last().unwrap()
    }
}

/// Gradient accumulators with the same shapes as the network.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn for_net(net: &Mlp) -> Self {
        Self {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn zero(&mut self) {
        for w in &mut self.weights {
            w.iter_mut().for_each(|x| *x = 0.0);
        }
        for b in &mut self.biases {
            b.iter_mut().for_each(|x| *x = 0.0);
        }
    }
}

/// Forward pass. With `dropout = Some((rate, rng))` fresh inverted-dropout
/// masks are drawn for the activations feeding each *subsequent* hidden
/// layer (the last hidden layer feeds the output undropped). Without
/// dropout the pass is a pure function of (net, input).
pub fn forward<'s>(
    net: &Mlp,
    input: &[f64],
    dropout: Option<(f64, &mut ChaCha8Rng)>,
    scratch: &'s mut MlpScratch,
) -> &'s [f64] {
    assert_eq!(input.len(), net.input_dim(), "state dimension mismatch");
    let layers = net.layer_count();
    scratch.act[0].copy_from_slice(input);
    let mut dropout = dropout;
    for l in 0..layers {
        let (n_out, n_in) = (net.sizes[l + 1], net.sizes[l]);
        let w = &net.weights[l];
        let b = &net.biases[l];
        // split-borrow: activations of layer l feed layer l+1
        let (lo, hi) = scratch.act.split_at_mut(l + 1);
        let x = &lo[l];
        let out = &mut hi[0];
        let pre = &mut scratch.pre[l];
        for i in 0..n_out {
            let row = &w[i * n_in..(i + 1) * n_in];
            let mut acc = b[i];
            for (wij, xj) in row.iter().zip(x.iter()) {
                acc += wij * xj;
            }
            pre[i] = acc;
        }
        let is_output = l == layers - 1;
        if is_output {
            out.copy_from_slice(pre);
        } else {
            let dropped = !is_output && l < layers - 2; // between hidden layers only
            let mask = &mut scratch.mask[l];
            match (&mut dropout, dropped) {
                (Some((rate, rng)), true) => {
                    let keep = 1.0 - *rate;
                    for i in 0..n_out {
                        let m = if rng.gen::<f64>() < *rate { 0.0 } else { 1.0 / keep };
                        mask[i] = m;
                        out[i] = pre[i].max(0.0) * m;
                    }
                }
                _ => {
                    for i in 0..n_out {
                        mask[i] = 1.0;
                        out[i] = pre[i].max(0.0);
                    }
                }
            }
        }
    }
    scratch.output()
}

/// Backward pass for the forward stored in `scratch`; accumulates dL/dtheta
/// into `grads` given dL/d(output).
pub fn backward(net: &Mlp, scratch: &mut MlpScratch, grad_out: &[f64], grads: &mut MlpGrads) {
    let layers = net.layer_count();
    debug_assert_eq!(grad_out.len(), net.output_dim());
    scratch.delta[layers - 1].copy_from_slice(grad_out);
    for l in (0..layers).rev() {
        let (n_out, n_in) = (net.sizes[l + 1], net.sizes[l]);
        // parameter gradients for layer l
        {
            let delta = &scratch.delta[l];
            let x = &scratch.act[l];
            let gw = &mut grads.weights[l];
            let gb = &mut grads.biases[l];
            for i in 0..n_out {
                let d = delta[i];
                if d != 0.0 {
                    let row = &mut gw[i * n_in..(i + 1) * n_in];
                    for (g, xj) in row.iter_mut().zip(x.iter()) {
                        *g += d * xj;
                    }
                    gb[i] += d;
                }
            }
        }
        // propagate to layer l-1 through W, dropout mask, and ReLU
        if l > 0 {
            let (lo, hi) = scratch.delta.split_at_mut(l);
            let delta = &hi[0];
            let prev = &mut lo[l - 1];
            let w = &net.weights[l];
            let pre_prev = &scratch.pre[l - 1];
            let mask_prev = &scratch.mask[l - 1];
            for j in 0..n_in {
                let mut acc = 0.0;
                for i in 0..n_out {
                    acc += delta[i] * w[i * n_in + j];
                }
                let relu_grad = if pre_prev[j] > 0.0 { 1.0 } else { 0.0 };
                prev[j] = acc * mask_prev[j] * relu_grad;
            }
        }
    }
}

/// Adam with bias correction, applied over flattened (weights, biases).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m_w: Vec<Vec<f64>>,
    v_w: Vec<Vec<f64>>,
    m_b: Vec<Vec<f64>>,
    v_b: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m_w: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            v_w: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            m_b: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            v_b: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn apply(&mut self, net: &mut Mlp, grads: &MlpGrads) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for l in 0..net.weights.len() {
            Self::apply_slice(
                &mut net.weights[l],
                &grads.weights[l],
                &mut self.m_w[l],
                &mut self.v_w[l],
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                c1,
                c2,
            );
            Self::apply_slice(
                &mut net.biases[l],
                &grads.biases[l],
                &mut self.m_b[l],
                &mut self.v_b[l],
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                c1,
                c2,
            );
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn apply_slice(
        theta: &mut [f64],
        grad: &[f64],
        m: &mut [f64],
        v: &mut [f64],
        lr: f64,
        b1: f64,
        b2: f64,
        eps: f64,
        c1: f64,
        c2: f64,
    ) {
        for i in 0..theta.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
            v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}
