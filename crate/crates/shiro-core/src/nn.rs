//! Minimal dense-network engine.
//!
//! Fixed-depth MLPs with ReLU hidden layers and an identity or tanh output
//! head, an exact analytic backward pass, Adam, and Polyak averaging. All
//! arithmetic is `f64`. Networks are plain values: cloning one snapshots its
//! parameters, and every operation here is a pure function of its explicit
//! inputs (plus the seed, for initialization).
//!
//! Shape contract violations (wrong input length, mismatched architectures)
//! are programmer errors and panic via `assert!`.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Activation applied to the final layer. Hidden layers are always ReLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Identity,
    Tanh,
}

/// Dense feed-forward network.
///
/// Layer `l` maps `layer_sizes[l]` inputs to `layer_sizes[l+1]` outputs with a
/// row-major weight matrix of shape `(out, in)` stored flat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MlpWire", into = "MlpWire")]
pub struct MlpNetwork {
    layer_sizes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    output_activation: OutputActivation,
}

/// Per-layer gradient (or gradient-shaped moment) storage mirroring an
/// [`MlpNetwork`]'s weights and biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &MlpNetwork) -> Self {
        Self {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for layer in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            for g in layer {
                *g *= factor;
            }
        }
    }

    /// Accumulates `factor * other` into `self`.
    pub fn add_scaled(&mut self, other: &Gradients, factor: f64) {
        assert_eq!(self.weights.len(), other.weights.len(), "layer count mismatch");
        for (dst, src) in self.weights.iter_mut().zip(&other.weights) {
            assert_eq!(dst.len(), src.len(), "weight shape mismatch");
            for (d, s) in dst.iter_mut().zip(src) {
                *d += factor * s;
            }
        }
        for (dst, src) in self.biases.iter_mut().zip(&other.biases) {
            assert_eq!(dst.len(), src.len(), "bias shape mismatch");
            for (d, s) in dst.iter_mut().zip(src) {
                *d += factor * s;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.weights
            .iter()
            .chain(self.biases.iter())
            .flat_map(|layer| layer.iter())
            .fold(0.0f64, |m, g| m.max(g.abs()))
    }
}

/// Dot product with four independent accumulators so the loop vectorizes
/// without changing results across runs of the same build.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    let (a4, a_tail) = a.split_at(chunks * 4);
    let (b4, b_tail) = b.split_at(chunks * 4);
    for (ca, cb) in a4.chunks_exact(4).zip(b4.chunks_exact(4)) {
        acc[0] += ca[0] * cb[0];
        acc[1] += ca[1] * cb[1];
        acc[2] += ca[2] * cb[2];
        acc[3] += ca[3] * cb[3];
    }
    let mut sum = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in a_tail.iter().zip(b_tail) {
        sum += x * y;
    }
    sum
}

/// `dst += factor * src`
#[inline]
fn axpy(dst: &mut [f64], src: &[f64], factor: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += factor * s;
    }
}

impl MlpNetwork {
    /// Builds a network with every parameter zero.
    pub fn zeros(layer_sizes: &[usize], output_activation: OutputActivation) -> Self {
        assert!(layer_sizes.len() >= 2, "need at least input and output sizes");
        assert!(layer_sizes.iter().all(|&s| s > 0), "layer sizes must be positive");
        let weights = layer_sizes
            .windows(2)
            .map(|w| vec![0.0; w[0] * w[1]])
            .collect();
        let biases = layer_sizes[1..].iter().map(|&s| vec![0.0; s]).collect();
        Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            output_activation,
        }
    }

    /// Seeded initialization: hidden layers uniform in `+-1/sqrt(fan_in)`,
    /// the final layer uniform in `+-3e-3` so initial outputs sit near zero.
    pub fn init(layer_sizes: &[usize], output_activation: OutputActivation, seed: u64) -> Self {
        let mut net = Self::zeros(layer_sizes, output_activation);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = net.weights.len() - 1;
        for l in 0..net.weights.len() {
            let bound = if l == last {
                3e-3
            } else {
                1.0 / (net.layer_sizes[l] as f64).sqrt()
            };
            let dist = Uniform::new_inclusive(-bound, bound);
            for w in &mut net.weights[l] {
                *w = dist.sample(&mut rng);
            }
            for b in &mut net.biases[l] {
                *b = dist.sample(&mut rng);
            }
        }
        net
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_weight_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn layer_weights(&self, layer: usize) -> &[f64] {
        &self.weights[layer]
    }

    pub fn layer_weights_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.weights[layer]
    }

    pub fn layer_biases(&self, layer: usize) -> &[f64] {
        &self.biases[layer]
    }

    pub fn layer_biases_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.biases[layer]
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    fn same_architecture(&self, other: &Self) -> bool {
        self.layer_sizes == other.layer_sizes && self.output_activation == other.output_activation
    }

    #[inline]
    fn apply_output_activation(&self, z: &mut [f64]) {
        if self.output_activation == OutputActivation::Tanh {
            for v in z {
                *v = v.tanh();
            }
        }
    }

    /// Forward pass. Panics if `x.len() != layer_sizes[0]`.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.input_dim(), "input length mismatch");
        let mut cur = x.to_vec();
        let last = self.weights.len() - 1;
        for l in 0..self.weights.len() {
            let out_dim = self.layer_sizes[l + 1];
            let in_dim = self.layer_sizes[l];
            let mut next = vec![0.0; out_dim];
            for (o, slot) in next.iter_mut().enumerate() {
                let row = &self.weights[l][o * in_dim..(o + 1) * in_dim];
                let z = dot(row, &cur) + self.biases[l][o];
                *slot = if l < last { z.max(0.0) } else { z };
            }
            cur = next;
        }
        self.apply_output_activation(&mut cur);
        cur
    }

    /// Forward pass retaining post-activation values of every layer
    /// (`activations[0]` is the input itself).
    fn forward_trace(&self, x: &[f64]) -> Vec<Vec<f64>> {
        assert_eq!(x.len(), self.input_dim(), "input length mismatch");
        let mut activations = Vec::with_capacity(self.weights.len() + 1);
        activations.push(x.to_vec());
        let last = self.weights.len() - 1;
        for l in 0..self.weights.len() {
            let out_dim = self.layer_sizes[l + 1];
            let in_dim = self.layer_sizes[l];
            let prev = &activations[l];
            let mut next = vec![0.0; out_dim];
            for (o, slot) in next.iter_mut().enumerate() {
                let row = &self.weights[l][o * in_dim..(o + 1) * in_dim];
                let z = dot(row, prev) + self.biases[l][o];
                *slot = if l < last { z.max(0.0) } else { z };
            }
            if l == last {
                self.apply_output_activation(&mut next);
            }
            activations.push(next);
        }
        activations
    }

    /// Backward pass for the scalar `upstream . output(x)`.
    ///
    /// Returns the gradient with respect to every parameter and with respect
    /// to the input vector. ReLU contributes zero gradient at exactly zero
    /// pre-activation. Panics on length mismatches.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> (Gradients, Vec<f64>) {
        let mut grads = Gradients::zeros_like(self);
        let input_grad = self.backward_accumulate(x, upstream, &mut grads, 1.0);
        (grads, input_grad)
    }

    /// Like [`Self::backward`] but accumulates `factor * grad` into `grads`,
    /// which lets batch updates reuse one gradient buffer. The returned input
    /// gradient is unscaled.
    pub fn backward_accumulate(
        &self,
        x: &[f64],
        upstream: &[f64],
        grads: &mut Gradients,
        factor: f64,
    ) -> Vec<f64> {
        self.backward_map(x, |_| upstream.to_vec(), grads, factor).1
    }

    /// Fused forward/backward: runs one forward pass, lets the caller derive
    /// the upstream gradient from the output, then accumulates `factor *
    /// grad` into `grads`. Returns `(output, input_gradient)`; the input
    /// gradient is unscaled.
    pub fn backward_map<F>(
        &self,
        x: &[f64],
        make_upstream: F,
        grads: &mut Gradients,
        factor: f64,
    ) -> (Vec<f64>, Vec<f64>)
    where
        F: FnOnce(&[f64]) -> Vec<f64>,
    {
        let activations = self.forward_trace(x);
        let output = activations.last().expect("trace is never empty").clone();
        let upstream = make_upstream(&output);
        assert_eq!(
            upstream.len(),
            self.output_dim(),
            "upstream length must match output dimension"
        );
        let last = self.weights.len() - 1;

        // Output-layer delta folds in the head activation derivative.
        let mut delta: Vec<f64> = match self.output_activation {
            OutputActivation::Identity => upstream.to_vec(),
            OutputActivation::Tanh => upstream
                .iter()
                .zip(&activations[last + 1])
                .map(|(u, y)| u * (1.0 - y * y))
                .collect(),
        };

        let mut input_grad = vec![0.0; self.input_dim()];
        for l in (0..=last).rev() {
            let in_dim = self.layer_sizes[l];
            let prev = &activations[l];
            let next_delta_len = if l == 0 { self.input_dim() } else { in_dim };
            let mut prev_delta = vec![0.0; next_delta_len];
            let dw = &mut grads.weights[l];
            for (o, &d) in delta.iter().enumerate() {
                grads.biases[l][o] += factor * d;
                let row = o * in_dim..(o + 1) * in_dim;
                axpy(&mut dw[row.clone()], prev, factor * d);
                axpy(&mut prev_delta, &self.weights[l][row], d);
            }
            if l == 0 {
                input_grad = prev_delta;
            } else {
                // ReLU derivative from the post-activation value: 1 where the
                // unit fired, 0 otherwise (including exactly 0).
                for (pd, &a) in prev_delta.iter_mut().zip(prev) {
                    if a <= 0.0 {
                        *pd = 0.0;
                    }
                }
                delta = prev_delta;
            }
        }
        (output, input_grad)
    }

    /// JSON parameter dump; round-trips bit-exactly through [`Self::from_json`].
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("network serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// One Adam optimizer bound to a single network's parameter shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Gradients,
    pub second_moment: Gradients,
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon_hat: f64,
}

impl AdamState {
    pub fn new(net: &MlpNetwork, learning_rate: f64) -> Self {
        assert!(learning_rate > 0.0, "learning rate must be positive");
        Self {
            first_moment: Gradients::zeros_like(net),
            second_moment: Gradients::zeros_like(net),
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon_hat: 1e-8,
        }
    }
}

#[inline]
fn adam_update_slice(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    bias1: f64,
    bias2: f64,
) {
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / bias1;
        let v_hat = v[i] / bias2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Standard Adam step with bias correction; increments `state.step_count`.
pub fn adam_step(net: &mut MlpNetwork, grads: &Gradients, state: &mut AdamState) {
    assert_eq!(net.weights.len(), grads.weights.len(), "layer count mismatch");
    state.step_count += 1;
    let t = state.step_count as i32;
    let bias1 = 1.0 - state.beta1.powi(t);
    let bias2 = 1.0 - state.beta2.powi(t);
    for l in 0..net.weights.len() {
        adam_update_slice(
            &mut net.weights[l],
            &grads.weights[l],
            &mut state.first_moment.weights[l],
            &mut state.second_moment.weights[l],
            state.learning_rate,
            state.beta1,
            state.beta2,
            state.epsilon_hat,
            bias1,
            bias2,
        );
        adam_update_slice(
            &mut net.biases[l],
            &grads.biases[l],
            &mut state.first_moment.biases[l],
            &mut state.second_moment.biases[l],
            state.learning_rate,
            state.beta1,
            state.beta2,
            state.epsilon_hat,
            bias1,
            bias2,
        );
    }
}

/// `target <- tau * online + (1 - tau) * target`, elementwise.
pub fn polyak_update(target: &mut MlpNetwork, online: &MlpNetwork, tau: f64) {
    assert!(
        target.same_architecture(online),
        "polyak update requires congruent architectures"
    );
    assert!((0.0..=1.0).contains(&tau), "tau must lie in [0, 1]");
    let blend = |t: &mut Vec<f64>, o: &Vec<f64>| {
        for (tv, ov) in t.iter_mut().zip(o) {
            *tv = tau * ov + (1.0 - tau) * *tv;
        }
    };
    for (t, o) in target.weights.iter_mut().zip(&online.weights) {
        blend(t, o);
    }
    for (t, o) in target.biases.iter_mut().zip(&online.biases) {
        blend(t, o);
    }
}

/// Wire format for parameter files; nested row-major weight matrices.
#[derive(Serialize, Deserialize)]
struct MlpWire {
    version: u32,
    layer_sizes: Vec<usize>,
    weights: Vec<Vec<Vec<f64>>>,
    biases: Vec<Vec<f64>>,
    output_activation: OutputActivation,
}

impl From<MlpNetwork> for MlpWire {
    fn from(net: MlpNetwork) -> Self {
        let weights = net
            .weights
            .iter()
            .enumerate()
            .map(|(l, flat)| {
                let in_dim = net.layer_sizes[l];
                flat.chunks(in_dim).map(|row| row.to_vec()).collect()
            })
            .collect();
        Self {
            version: 1,
            layer_sizes: net.layer_sizes,
            weights,
            biases: net.biases,
            output_activation: net.output_activation,
        }
    }
}

impl TryFrom<MlpWire> for MlpNetwork {
    type Error = Error;

    fn try_from(wire: MlpWire) -> Result<Self> {
        if wire.version != 1 {
            return Err(Error::Corrupt(format!(
                "unsupported network format version {}",
                wire.version
            )));
        }
        if wire.layer_sizes.len() < 2 || wire.layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::Corrupt("invalid layer sizes".into()));
        }
        let n_layers = wire.layer_sizes.len() - 1;
        if wire.weights.len() != n_layers || wire.biases.len() != n_layers {
            return Err(Error::Corrupt("layer count mismatch".into()));
        }
        let mut weights = Vec::with_capacity(n_layers);
        for (l, rows) in wire.weights.into_iter().enumerate() {
            let (in_dim, out_dim) = (wire.layer_sizes[l], wire.layer_sizes[l + 1]);
            if rows.len() != out_dim || rows.iter().any(|r| r.len() != in_dim) {
                return Err(Error::Corrupt(format!("weight shape mismatch in layer {l}")));
            }
            if wire.biases[l].len() != out_dim {
                return Err(Error::Corrupt(format!("bias shape mismatch in layer {l}")));
            }
            weights.push(rows.into_iter().flatten().collect());
        }
        Ok(Self {
            layer_sizes: wire.layer_sizes,
            weights,
            biases: wire.biases,
            output_activation: wire.output_activation,
        })
    }
}
