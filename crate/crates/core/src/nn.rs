//! Dense feed-forward networks with analytic gradients and Adam.
//!
//! Weights are stored row-major with shape `(out_dim, in_dim)`. Hidden layers
//! apply the configured activation; the last layer is always affine.
//!
//! Batched calls take inputs as a flat row-major buffer of `batch * in_dim`
//! values and return outputs in the same layout.

use std::io::{Read, Write};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_len, Error, Result};
use crate::seed;

const MAGIC: &[u8; 4] = b"DRE1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed in terms of the activation's output.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }

    fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Tanh),
            other => Err(Error::Format(format!("unknown activation tag {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    layer_dims: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    activation: Activation,
}

fn validate_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 2 {
        return Err(Error::InvalidArchitecture(format!(
            "need at least an input and an output dimension, got {layer_dims:?}"
        )));
    }
    if layer_dims.iter().any(|&d| d == 0) {
        return Err(Error::InvalidArchitecture(format!(
            "layer dimensions must be positive, got {layer_dims:?}"
        )));
    }
    Ok(())
}

impl MlpParams {
    /// Glorot-uniform weights drawn from a ChaCha stream seeded by `seed`;
    /// biases start at zero.
    pub fn init(layer_dims: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        validate_dims(layer_dims)?;
        let mut rng = seed::rng(seed);
        let mut weights = Vec::with_capacity(layer_dims.len() - 1);
        let mut biases = Vec::with_capacity(layer_dims.len() - 1);
        for pair in layer_dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push(
                (0..fan_in * fan_out)
                    .map(|_| rng.gen_range(-bound..bound))
                    .collect(),
            );
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            activation,
        })
    }

    pub fn from_parts(
        layer_dims: Vec<usize>,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
        activation: Activation,
    ) -> Result<Self> {
        validate_dims(&layer_dims)?;
        check_len("layer count", layer_dims.len() - 1, weights.len())?;
        check_len("layer count", layer_dims.len() - 1, biases.len())?;
        for (l, pair) in layer_dims.windows(2).enumerate() {
            check_len("weight matrix", pair[0] * pair[1], weights[l].len())?;
            check_len("bias vector", pair[1], biases[l].len())?;
            check_finite("weights", &weights[l])?;
            check_finite("biases", &biases[l])?;
        }
        Ok(Self {
            layer_dims,
            weights,
            biases,
            activation,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("validated non-empty")
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        &self.weights[layer]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.weights[layer]
    }

    pub fn biases(&self, layer: usize) -> &[f64] {
        &self.biases[layer]
    }

    pub fn biases_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.biases[layer]
    }

    /// Parameter tensors in storage order: `w0, b0, w1, b1, ...`.
    fn tensors(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w, b])
    }

    fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
    }

    /// Flat copy of every parameter in storage order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().flatten().copied().collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        check_len("flat parameters", self.num_params(), values.len())?;
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        self.forward_batch(input, 1)
    }

    pub fn forward_batch(&self, inputs: &[f64], batch: usize) -> Result<(Vec<f64>, ForwardCache)> {
        check_len("network input", batch * self.input_dim(), inputs.len())?;
        check_finite("network input", inputs)?;
        let mut activations = Vec::with_capacity(self.layer_dims.len());
        activations.push(inputs.to_vec());
        let last = self.num_layers() - 1;
        for l in 0..self.num_layers() {
            let (fan_in, fan_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let w = &self.weights[l];
            let bias = &self.biases[l];
            let prev = &activations[l];
            let mut next = Vec::with_capacity(batch * fan_out);
            for row in prev.chunks_exact(fan_in) {
                for (o, b) in bias.iter().enumerate() {
                    let w_row = &w[o * fan_in..(o + 1) * fan_in];
                    let z = b + dot(w_row, row);
                    next.push(if l == last {
                        z
                    } else {
                        self.activation.apply(z)
                    });
                }
            }
            activations.push(next);
        }
        let output = activations.last().expect("at least one layer").clone();
        Ok((output, ForwardCache { batch, activations }))
    }

    /// Back-propagates `output_grad` (`batch * out_dim` values). Weight and bias
    /// gradients are summed over the batch; input gradients are per sample.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &[f64]) -> Result<GradBundle> {
        check_len(
            "cached activations",
            self.layer_dims.len(),
            cache.activations.len(),
        )?;
        check_len(
            "output gradient",
            cache.batch * self.output_dim(),
            output_grad.len(),
        )?;
        let batch = cache.batch;
        let mut grads = GradBundle::zeros(self);
        let mut delta = output_grad.to_vec();
        for l in (0..self.num_layers()).rev() {
            let (fan_in, fan_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let w = &self.weights[l];
            let prev = &cache.activations[l];
            check_len("cached activations", batch * fan_in, prev.len())?;
            let dw = &mut grads.weights[l];
            let db = &mut grads.biases[l];
            let mut prev_grad = vec![0.0; batch * fan_in];
            for b in 0..batch {
                let d_row = &delta[b * fan_out..(b + 1) * fan_out];
                let a_row = &prev[b * fan_in..(b + 1) * fan_in];
                let g_row = &mut prev_grad[b * fan_in..(b + 1) * fan_in];
                for (o, &d) in d_row.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    db[o] += d;
                    let dw_row = &mut dw[o * fan_in..(o + 1) * fan_in];
                    let w_row = &w[o * fan_in..(o + 1) * fan_in];
                    for i in 0..fan_in {
                        dw_row[i] += d * a_row[i];
                        g_row[i] += d * w_row[i];
                    }
                }
            }
            if l > 0 {
                for (g, &a) in prev_grad.iter_mut().zip(prev) {
                    *g *= self.activation.derivative_from_output(a);
                }
            }
            delta = prev_grad;
        }
        grads.input = delta;
        Ok(grads)
    }

    pub fn write_to<W: Write>(&self, out: &mut W) -> Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&(self.layer_dims.len() as u32).to_le_bytes())?;
        for &d in &self.layer_dims {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        out.write_all(&[self.activation.tag()])?;
        for t in self.tensors() {
            for v in t {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(input: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad network magic".into()));
        }
        let n_dims = read_u32(input)? as usize;
        if n_dims > 1024 {
            return Err(Error::Format(format!("implausible layer count {n_dims}")));
        }
        let layer_dims = (0..n_dims)
            .map(|_| read_u32(input).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        validate_dims(&layer_dims)?;
        let mut tag = [0u8; 1];
        input.read_exact(&mut tag)?;
        let activation = Activation::from_tag(tag[0])?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in layer_dims.windows(2) {
            weights.push(read_f64s(input, pair[0] * pair[1])?);
            biases.push(read_f64s(input, pair[1])?);
        }
        Self::from_parts(layer_dims, weights, biases, activation)
    }
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    input.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub(crate) fn read_f64s<R: Read>(input: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = [0u8; 8];
    (0..n)
        .map(|_| {
            input.read_exact(&mut buf)?;
            Ok(f64::from_le_bytes(buf))
        })
        .collect()
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Activations recorded by a forward pass: the input followed by every
/// layer's output.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    batch: usize,
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradBundle {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    /// Gradient with respect to the network input, `batch * in_dim` values.
    pub input: Vec<f64>,
}

impl GradBundle {
    pub fn zeros(params: &MlpParams) -> Self {
        Self {
            weights: params.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: params.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            input: Vec::new(),
        }
    }

    /// Adds the parameter gradients of `other`; input gradients are left alone.
    pub fn accumulate(&mut self, other: &GradBundle) {
        for (a, b) in self
            .weights
            .iter_mut()
            .chain(self.biases.iter_mut())
            .zip(other.weights.iter().chain(&other.biases))
        {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            t.iter_mut().for_each(|x| *x *= factor);
        }
    }

    fn tensors(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w, b])
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().flatten().copied().collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().flatten().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for one [`MlpParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    step_count: u64,
    config: AdamConfig,
}

impl AdamState {
    pub fn new(params: &MlpParams) -> Self {
        Self::with_config(params, AdamConfig::default())
    }

    pub fn with_config(params: &MlpParams, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().map(|t| vec![0.0; t.len()]).collect();
        Self {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step_count: 0,
            config,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.second_moment
    }

    /// Applies one update in place. A non-finite gradient rejects the step
    /// and leaves both the parameters and the moments untouched.
    pub fn step(&mut self, params: &mut MlpParams, grads: &GradBundle, lr: f64) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Domain(format!("learning rate must be positive, got {lr}")));
        }
        check_len("gradient layers", params.num_layers(), grads.weights.len())?;
        for (p, g) in params.tensors().zip(grads.tensors()) {
            check_len("gradient tensor", p.len(), g.len())?;
        }
        check_len("moment tensors", self.first_moment.len(), 2 * params.num_layers())?;
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient"));
        }

        self.step_count += 1;
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step_count as i32;
        let correction1 = 1.0 - beta1.powi(t);
        let correction2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params
            .tensors_mut()
            .zip(grads.tensors())
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / correction1;
                let v_hat = v[i] / correction2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn to_bytes(p: &MlpParams) -> Vec<u8> {
        let mut buf = Vec::new();
        p.write_to(&mut buf).unwrap();
        buf
    }

    #[test]
    fn init_is_deterministic() {
        let a = MlpParams::init(&[1, 1], Activation::Relu, 7).unwrap();
        let b = MlpParams::init(&[1, 1], Activation::Relu, 7).unwrap();
        assert_eq!(to_bytes(&a), to_bytes(&b));
    }

    #[test]
    fn init_biases_are_zero() {
        let p = MlpParams::init(&[2, 3, 1], Activation::Tanh, 99).unwrap();
        for l in 0..p.num_layers() {
            assert!(p.biases(l).iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn init_respects_glorot_bound() {
        let p = MlpParams::init(&[4, 32, 1], Activation::Relu, 3).unwrap();
        let bound0 = (6.0f64 / 36.0).sqrt();
        assert!(p.weights(0).iter().all(|w| w.abs() <= bound0));
        let bound1 = (6.0f64 / 33.0).sqrt();
        assert!(p.weights(1).iter().all(|w| w.abs() <= bound1));
    }

    #[test]
    fn distinct_seeds_give_distinct_weights() {
        let nets: Vec<_> = (0..10)
            .map(|s| MlpParams::init(&[4, 32, 32, 32, 32, 1], Activation::Relu, s).unwrap())
            .collect();
        for i in 0..nets.len() {
            for j in i + 1..nets.len() {
                assert_ne!(nets[i].to_flat(), nets[j].to_flat());
            }
        }
    }

    #[test]
    fn invalid_architectures_are_rejected() {
        assert!(matches!(
            MlpParams::init(&[], Activation::Relu, 0),
            Err(Error::InvalidArchitecture(_))
        ));
        assert!(matches!(
            MlpParams::init(&[3], Activation::Relu, 0),
            Err(Error::InvalidArchitecture(_))
        ));
        assert!(matches!(
            MlpParams::init(&[3, 0, 1], Activation::Relu, 0),
            Err(Error::InvalidArchitecture(_))
        ));
    }

    #[test]
    fn zero_weights_output_final_bias() {
        let mut p = MlpParams::init(&[3, 5, 2], Activation::Relu, 1).unwrap();
        for l in 0..p.num_layers() {
            p.weights_mut(l).fill(0.0);
        }
        p.biases_mut(1).copy_from_slice(&[0.25, -1.5]);
        for input in [[0.0, 0.0, 0.0], [10.0, -3.0, 2.0]] {
            let (out, _) = p.forward(&input).unwrap();
            assert_eq!(out, vec![0.25, -1.5]);
        }
    }

    #[test]
    fn single_affine_layer() {
        let p = MlpParams::from_parts(vec![1, 1], vec![vec![2.0]], vec![vec![1.0]], Activation::Relu)
            .unwrap();
        let (out, cache) = p.forward(&[3.0]).unwrap();
        assert_eq!(out, vec![7.0]);

        let p0 = MlpParams::from_parts(vec![1, 1], vec![vec![2.0]], vec![vec![0.0]], Activation::Relu)
            .unwrap();
        let (_, cache0) = p0.forward(&[1.0]).unwrap();
        let g = p0.backward(&cache0, &[1.0]).unwrap();
        assert_eq!(g.weights[0], vec![1.0]);
        assert_eq!(g.biases[0], vec![1.0]);
        assert_eq!(g.input, vec![2.0]);
        assert!(p.backward(&cache, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn forward_rejects_bad_input() {
        let p = MlpParams::init(&[2, 4, 1], Activation::Tanh, 0).unwrap();
        assert!(matches!(p.forward(&[1.0]), Err(Error::Shape { .. })));
        assert!(matches!(
            p.forward(&[1.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn dead_relu_has_zero_hidden_gradients() {
        // All hidden pre-activations negative: positive input, negative weights.
        let p = MlpParams::from_parts(
            vec![2, 3, 1],
            vec![vec![-1.0; 6], vec![0.5, -0.2, 0.3]],
            vec![vec![-0.1; 3], vec![0.0]],
            Activation::Relu,
        )
        .unwrap();
        let (_, cache) = p.forward(&[1.0, 2.0]).unwrap();
        let g = p.backward(&cache, &[1.0]).unwrap();
        assert!(g.weights[0].iter().all(|&v| v == 0.0));
        assert!(g.biases[0].iter().all(|&v| v == 0.0));
        assert!(g.weights[1].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut p = MlpParams::init(&[2, 3, 1], Activation::Tanh, 5).unwrap();
        let before = p.clone();
        let mut state = AdamState::new(&p);
        let g = GradBundle::zeros(&p);
        state.step(&mut p, &g, 0.01).unwrap();
        assert_eq!(p, before);
        assert!(state.first_moment().iter().flatten().all(|&m| m == 0.0));
        assert!(state.second_moment().iter().flatten().all(|&v| v == 0.0));
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn adam_first_step_matches_hand_unrolled_recurrence() {
        let mut p = MlpParams::from_parts(vec![1, 1], vec![vec![0.3]], vec![vec![0.0]], Activation::Relu)
            .unwrap();
        let mut state = AdamState::new(&p);
        let mut g = GradBundle::zeros(&p);
        g.weights[0][0] = 0.5;
        state.step(&mut p, &g, 0.01).unwrap();
        // t = 1: m = 0.1 * 0.5, v = 0.001 * 0.25, m_hat = 0.5, v_hat = 0.25.
        let m_hat = (0.1 * 0.5) / (1.0 - 0.9);
        let v_hat: f64 = (0.001 * 0.25) / (1.0 - 0.999);
        let expected_delta = -0.01 * m_hat / (v_hat.sqrt() + 1e-8);
        let delta = p.weights(0)[0] - 0.3;
        assert!((delta - expected_delta).abs() < 1e-15);
        assert!((delta + 0.0099999998).abs() < 1e-10);
        assert_eq!(p.biases(0)[0], 0.0);
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut p = MlpParams::init(&[2, 2, 1], Activation::Relu, 5).unwrap();
        let before = p.clone();
        let mut state = AdamState::new(&p);
        let mut g = GradBundle::zeros(&p);
        g.biases[0][1] = f64::INFINITY;
        assert!(matches!(
            state.step(&mut p, &g, 0.01),
            Err(Error::NonFinite(_))
        ));
        assert_eq!(p, before);
        assert_eq!(state.step_count(), 0);
    }

    #[test]
    fn adam_replay_is_deterministic() {
        let run = || {
            let mut p = MlpParams::init(&[3, 4, 1], Activation::Tanh, 11).unwrap();
            let mut state = AdamState::new(&p);
            let (_, cache) = p.forward(&[0.1, 0.2, 0.3]).unwrap();
            let g = p.backward(&cache, &[1.0]).unwrap();
            state.step(&mut p, &g, 0.01).unwrap();
            state.step(&mut p, &g, 0.01).unwrap();
            to_bytes(&p)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn serialization_round_trips() {
        let p = MlpParams::init(&[3, 5, 2], Activation::Tanh, 8).unwrap();
        let bytes = to_bytes(&p);
        assert_eq!(&bytes[..4], b"DRE1");
        let back = MlpParams::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, p);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(MlpParams::read_from(&mut bad.as_slice()).is_err());
        assert!(MlpParams::read_from(&mut &bytes[..bytes.len() - 1]).is_err());
    }
}
