//! Dense feed-forward networks with hand-written reverse mode and Adam.
//!
//! Weights are row-major `(out_dim, in_dim)`. All randomness comes from
//! ChaCha8 seeded through `seed_from_u64`, which is specified bit-for-bit and
//! independent of the platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output `a`.
    #[inline]
    fn slope_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub const fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            activation,
        }
    }

    pub const fn num_params(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }
}

/// Checks dims >= 1 and that each layer's input matches the previous output.
pub fn validate_chain(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::Shape("network needs at least one layer".into()));
    }
    for (i, s) in specs.iter().enumerate() {
        if s.in_dim == 0 || s.out_dim == 0 {
            return Err(Error::Shape(format!("layer {i} has a zero dimension")));
        }
        if i > 0 && specs[i - 1].out_dim != s.in_dim {
            return Err(Error::Shape(format!(
                "layer {} outputs {} but layer {i} expects {}",
                i - 1,
                specs[i - 1].out_dim,
                s.in_dim
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub spec: LayerSpec,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<DenseLayer>", into = "Vec<DenseLayer>")]
pub struct DenseNet {
    layers: Vec<DenseLayer>,
}

impl TryFrom<Vec<DenseLayer>> for DenseNet {
    type Error = Error;

    fn try_from(layers: Vec<DenseLayer>) -> Result<Self> {
        DenseNet::from_layers(layers)
    }
}

impl From<DenseNet> for Vec<DenseLayer> {
    fn from(net: DenseNet) -> Self {
        net.layers
    }
}

/// Per-layer inputs and outputs of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input, `activations[l + 1]` the output of layer `l`.
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("cache is never empty")
    }
}

/// Gradients shaped like a [`DenseNet`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGrads {
    pub layers: Vec<LayerGrads>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl NetGrads {
    pub fn zeros(specs: impl IntoIterator<Item = LayerSpec>) -> Self {
        Self {
            layers: specs
                .into_iter()
                .map(|s| LayerGrads {
                    weights: vec![0.0; s.in_dim * s.out_dim],
                    biases: vec![0.0; s.out_dim],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &NetGrads) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.iter_mut() {
            *g *= factor;
        }
    }

    pub fn fill_zero(&mut self) {
        for g in self.iter_mut() {
            *g = 0.0;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.biases))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.iter().copied().collect()
    }

    fn same_shape_as(&self, net: &DenseNet) -> bool {
        self.layers.len() == net.layers.len()
            && self.layers.iter().zip(&net.layers).all(|(g, l)| {
                g.weights.len() == l.weights.len() && g.biases.len() == l.biases.len()
            })
    }
}

/// Glorot-uniform weights, zero biases, deterministic per seed.
pub fn init_net(specs: &[LayerSpec], seed: u64) -> Result<DenseNet> {
    validate_chain(specs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = specs
        .iter()
        .map(|&spec| {
            let bound = (6.0 / (spec.in_dim + spec.out_dim) as f64).sqrt();
            let weights = (0..spec.in_dim * spec.out_dim)
                .map(|_| rng.gen_range(-bound..=bound))
                .collect();
            DenseLayer {
                spec,
                weights,
                biases: vec![0.0; spec.out_dim],
            }
        })
        .collect();
    Ok(DenseNet { layers })
}

impl DenseNet {
    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        let specs: Vec<LayerSpec> = layers.iter().map(|l| l.spec).collect();
        validate_chain(&specs)?;
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.spec.in_dim * l.spec.out_dim || l.biases.len() != l.spec.out_dim {
                return Err(Error::Shape(format!("layer {i} parameter arrays do not match its spec")));
            }
            if l.weights.iter().chain(&l.biases).any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn specs(&self) -> impl Iterator<Item = LayerSpec> + '_ {
        self.layers.iter().map(|l| l.spec)
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].spec.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].spec.out_dim
    }

    pub fn zero_grads(&self) -> NetGrads {
        NetGrads::zeros(self.specs())
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.biases))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.params().copied().collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != count_params(self) {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                count_params(self),
                flat.len()
            )));
        }
        for (dst, src) in self.params_mut().zip(flat) {
            *dst = *src;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.params().all(|v| v.is_finite())
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        if x.len() != self.in_dim() {
            return Err(Error::Shape(format!(
                "network expects {} inputs, got {}",
                self.in_dim(),
                x.len()
            )));
        }
        let cache = self.forward_unchecked(x);
        Ok((cache.output().to_vec(), cache))
    }

    /// Forward pass for callers that already validated the input length.
    pub(crate) fn forward_unchecked(&self, x: &[f64]) -> ForwardCache {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_vec());
        for layer in &self.layers {
            let input = activations.last().expect("non-empty");
            let LayerSpec {
                in_dim, activation, ..
            } = layer.spec;
            let out: Vec<f64> = layer
                .weights
                .chunks_exact(in_dim)
                .zip(&layer.biases)
                .map(|(row, b)| {
                    let z = row.iter().zip(input).map(|(w, a)| w * a).sum::<f64>() + b;
                    activation.apply(z)
                })
                .collect();
            activations.push(out);
        }
        ForwardCache { activations }
    }

    /// Accumulates into `grads` the parameter gradient of a scalar loss whose
    /// derivative with respect to the network output is `d_output`.
    pub fn backward_into(&self, cache: &ForwardCache, d_output: &[f64], grads: &mut NetGrads) -> Result<()> {
        if d_output.len() != self.out_dim() || cache.activations.len() != self.layers.len() + 1 {
            return Err(Error::Shape("output gradient or cache does not match the network".into()));
        }
        if !grads.same_shape_as(self) {
            return Err(Error::Shape("gradient buffer does not match the network".into()));
        }
        let mut delta: Vec<f64> = d_output.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.activations[l];
            let output = &cache.activations[l + 1];
            let in_dim = layer.spec.in_dim;
            for (d, a) in delta.iter_mut().zip(output) {
                *d *= layer.spec.activation.slope_from_output(*a);
            }
            let g = &mut grads.layers[l];
            for (o, &d) in delta.iter().enumerate() {
                g.biases[o] += d;
                for (gw, &a) in g.weights[o * in_dim..(o + 1) * in_dim].iter_mut().zip(input) {
                    *gw += d * a;
                }
            }
            if l > 0 {
                let mut next = vec![0.0; in_dim];
                for (row, &d) in layer.weights.chunks_exact(in_dim).zip(&delta) {
                    for (n, w) in next.iter_mut().zip(row) {
                        *n += w * d;
                    }
                }
                delta = next;
            }
        }
        Ok(())
    }

    pub fn backward(&self, cache: &ForwardCache, d_output: &[f64]) -> Result<NetGrads> {
        let mut grads = self.zero_grads();
        self.backward_into(cache, d_output, &mut grads)?;
        Ok(grads)
    }
}

pub fn count_params(net: &DenseNet) -> usize {
    net.specs().map(|s| s.num_params()).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first_moment: NetGrads,
    pub second_moment: NetGrads,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(net: &DenseNet, config: AdamConfig) -> Self {
        Self {
            step: 0,
            first_moment: net.zero_grads(),
            second_moment: net.zero_grads(),
            config,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(net: &mut DenseNet, grads: &NetGrads, state: &mut AdamState) -> Result<()> {
    if !grads.same_shape_as(net) || !state.first_moment.same_shape_as(net) || !state.second_moment.same_shape_as(net) {
        return Err(Error::Shape("Adam state or gradients do not match the network".into()));
    }
    state.step += 1;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = state.step as i32;
    let correction1 = 1.0 - beta1.powi(t);
    let correction2 = 1.0 - beta2.powi(t);
    let params = net.params_mut();
    let moments = state.first_moment.iter_mut().zip(state.second_moment.iter_mut());
    for ((w, g), (m, v)) in params.zip(grads.iter()).zip(moments) {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / correction1;
        let v_hat = *v / correction2;
        *w -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_specs() -> Vec<LayerSpec> {
        vec![
            LayerSpec::new(3, 4, Activation::Tanh),
            LayerSpec::new(4, 3, Activation::Tanh),
            LayerSpec::new(3, 2, Activation::Identity),
        ]
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = init_net(&small_specs(), 7).unwrap();
        let b = init_net(&small_specs(), 7).unwrap();
        let c = init_net(&small_specs(), 8).unwrap();
        assert_eq!(a.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                   b.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_ne!(a, c);
        for l in a.layers() {
            let bound = (6.0 / (l.spec.in_dim + l.spec.out_dim) as f64).sqrt();
            assert!(l.weights.iter().all(|w| w.abs() <= bound));
            assert!(l.biases.iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn init_rejects_broken_chain() {
        let specs = [LayerSpec::new(3, 4, Activation::Tanh), LayerSpec::new(5, 2, Activation::Identity)];
        assert!(matches!(init_net(&specs, 0), Err(Error::Shape(_))));
        assert!(init_net(&[], 0).is_err());
        assert!(init_net(&[LayerSpec::new(0, 2, Activation::Tanh)], 0).is_err());
    }

    #[test]
    fn zero_weights_output_activated_biases() {
        let mut net = init_net(&small_specs(), 1).unwrap();
        for l in &mut net.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
            let n = l.biases.len();
            l.biases.copy_from_slice(&[-0.2, 0.1, 0.4, 0.7][..n]);
        }
        let (y, _) = net.forward(&[1.0, -2.0, 5.0]).unwrap();
        assert_eq!(y, vec![-0.2, 0.1]);
    }

    #[test]
    fn identity_layer_passes_through() {
        let net = DenseNet::from_layers(vec![DenseLayer {
            spec: LayerSpec::new(3, 3, Activation::Identity),
            weights: vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            biases: vec![0.0; 3],
        }])
        .unwrap();
        let x = [0.25, -7.0, 3.5];
        assert_eq!(net.forward(&x).unwrap().0, x.to_vec());
    }

    #[test]
    fn tanh_outputs_in_open_interval() {
        let mut net = init_net(&[LayerSpec::new(2, 5, Activation::Tanh)], 3).unwrap();
        net.params_mut().for_each(|w| *w *= 3.0);
        let (y, _) = net.forward(&[4.0, -6.0]).unwrap();
        assert!(y.iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn forward_rejects_wrong_input() {
        let net = init_net(&small_specs(), 1).unwrap();
        assert!(net.forward(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn zero_output_gradient_gives_zero_grads() {
        let net = init_net(&small_specs(), 2).unwrap();
        let (_, cache) = net.forward(&[0.1, 0.2, 0.3]).unwrap();
        let g = net.backward(&cache, &[0.0, 0.0]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(net.backward(&cache, &[1.0]).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let net = init_net(&small_specs(), 5).unwrap();
        let x = [0.4, -1.1, 0.7];
        let w = [1.3, -0.6];
        let loss = |n: &DenseNet| {
            let (y, _) = n.forward(&x).unwrap();
            y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + 0.5 * y[0] * y[0]
        };
        let (y, cache) = net.forward(&x).unwrap();
        let d_out = [w[0] + y[0], w[1]];
        let analytic = net.backward(&cache, &d_out).unwrap().to_flat();
        let base = net.to_flat();
        let h = 1e-6;
        for i in 0..base.len() {
            let mut plus = net.clone();
            let mut minus = net.clone();
            let mut f = base.clone();
            f[i] += h;
            plus.set_flat(&f).unwrap();
            f[i] -= 2.0 * h;
            minus.set_flat(&f).unwrap();
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let diff = (fd - analytic[i]).abs();
            assert!(diff <= 1e-5 * analytic[i].abs() || diff < 1e-8, "param {i}: fd={fd} an={}", analytic[i]);
        }
    }

    #[test]
    fn gradient_is_linear_in_losses() {
        let net = init_net(&small_specs(), 9).unwrap();
        let (_, c1) = net.forward(&[0.1, 0.5, -0.3]).unwrap();
        let (_, c2) = net.forward(&[-0.8, 0.2, 0.9]).unwrap();
        let mut sum = net.backward(&c1, &[1.0, -2.0]).unwrap();
        sum.add_assign(&net.backward(&c2, &[0.5, 0.25]).unwrap());
        let mut acc = net.zero_grads();
        net.backward_into(&c1, &[1.0, -2.0], &mut acc).unwrap();
        net.backward_into(&c2, &[0.5, 0.25], &mut acc).unwrap();
        for (a, b) in sum.iter().zip(acc.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut net = init_net(&small_specs(), 4).unwrap();
        let before = net.clone();
        let mut state = AdamState::new(&net, AdamConfig::default());
        let zeros = net.zero_grads();
        adam_step(&mut net, &zeros, &mut state).unwrap();
        assert_eq!(net, before);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn adam_first_step_has_magnitude_lr() {
        let mut net = init_net(&small_specs(), 4).unwrap();
        let before = net.to_flat();
        let mut grads = net.zero_grads();
        for (i, g) in grads.iter_mut().enumerate() {
            *g = (i as f64 - 20.0) * 0.37 + 0.01;
        }
        let cfg = AdamConfig::default();
        let mut state = AdamState::new(&net, cfg);
        adam_step(&mut net, &grads, &mut state).unwrap();
        for ((a, b), g) in net.to_flat().iter().zip(&before).zip(grads.iter()) {
            // m_hat = g, v_hat = g^2
            let expected = -cfg.learning_rate * g / (g.abs() + cfg.epsilon);
            assert!(((a - b) - expected).abs() < 1e-15);
            assert!(((a - b).abs() - cfg.learning_rate).abs() < 1e-8);
        }
    }

    #[test]
    fn adam_is_deterministic() {
        let net0 = init_net(&small_specs(), 4).unwrap();
        let mut grads = net0.zero_grads();
        grads.iter_mut().enumerate().for_each(|(i, g)| *g = (i as f64).sin());
        let run = || {
            let mut net = net0.clone();
            let mut st = AdamState::new(&net, AdamConfig::default());
            for _ in 0..3 {
                adam_step(&mut net, &grads, &mut st).unwrap();
            }
            (net, st)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn adam_rejects_mismatched_grads() {
        let mut net = init_net(&small_specs(), 4).unwrap();
        let other = init_net(&[LayerSpec::new(3, 2, Activation::Tanh)], 0).unwrap();
        let mut st = AdamState::new(&net, AdamConfig::default());
        assert!(adam_step(&mut net, &other.zero_grads(), &mut st).is_err());
    }

    #[test]
    fn parameter_counts() {
        let mlp = init_net(
            &[
                LayerSpec::new(20, 14, Activation::Tanh),
                LayerSpec::new(14, 24, Activation::Tanh),
                LayerSpec::new(24, 4, Activation::Identity),
            ],
            0,
        )
        .unwrap();
        assert_eq!(count_params(&mlp), 754);
        let one = init_net(&[LayerSpec::new(1, 1, Activation::Identity)], 0).unwrap();
        assert_eq!(count_params(&one), 2);
    }

    #[test]
    fn serde_roundtrip_validates() {
        let net = init_net(&small_specs(), 3).unwrap();
        let json = serde_json::to_string(&net).unwrap();
        let back: DenseNet = serde_json::from_str(&json).unwrap();
        assert_eq!(back, net);
        let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
        v[1]["weights"].as_array_mut().unwrap().pop();
        assert!(serde_json::from_value::<DenseNet>(v).is_err());
    }
}
