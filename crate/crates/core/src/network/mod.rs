//! Dropout feed-forward networks.
//!
//! Layer `l` computes `h_l = act(W_l (h_{l-1} ⊙ γ_l) + b_l)`, where `γ_l` is a
//! 0/1 mask over the layer's *input* with keep-probability `p_l`
//! (`DenseLayer::keep_prob`). The first layer's keep-probability is therefore
//! the input dropout rate. The deterministic pass replaces each `γ_l` by its
//! mean `p_l · 1`.

mod enumerate;
mod io;

pub use enumerate::{enumerate_expectation, for_each_mask, for_each_mask_in, ENUMERATION_CAP};

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::{spectral_norm, Matrix, RngStream, Vector, SPECTRAL_MAX_ITER, SPECTRAL_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Identity,
    Sigmoid,
    Tanh,
    Relu,
    Softmax,
}

impl Activation {
    pub fn apply(self, z: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Sigmoid => z.iter_mut().for_each(|v| *v = sigmoid(*v)),
            Activation::Tanh => z.iter_mut().for_each(|v| *v = v.tanh()),
            Activation::Relu => z.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Softmax => softmax_in_place(z),
        }
    }

    /// Derivative of an element-wise activation expressed through its output.
    /// Not meaningful for softmax, whose Jacobian is not diagonal.
    pub fn derivative_from_output(self, h: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Sigmoid => h * (1.0 - h),
            Activation::Tanh => 1.0 - h * h,
            // subgradient at 0 is 0
            Activation::Relu => {
                if h > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softmax => panic!("softmax has no element-wise derivative"),
        }
    }

    /// `sup |σ'|` for element-wise activations.
    pub fn max_slope(self) -> Option<f64> {
        match self {
            Activation::Identity | Activation::Tanh | Activation::Relu => Some(1.0),
            Activation::Sigmoid => Some(0.25),
            Activation::Softmax => None,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Sigmoid => 1,
            Activation::Tanh => 2,
            Activation::Relu => 3,
            Activation::Softmax => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => Activation::Identity,
            1 => Activation::Sigmoid,
            2 => Activation::Tanh,
            3 => Activation::Relu,
            4 => Activation::Softmax,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Softmax => "softmax",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "identity" | "linear" => Activation::Identity,
            "sigmoid" | "logistic" => Activation::Sigmoid,
            "tanh" => Activation::Tanh,
            "relu" => Activation::Relu,
            "softmax" => Activation::Softmax,
            other => return Err(Error::Domain(format!("unknown activation '{other}'"))),
        })
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    z.iter_mut().for_each(|v| *v /= sum);
}

/// One fully connected layer with dropout on its input.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `out × in`; each row holds one unit's incoming weights.
    pub weights: Matrix,
    pub bias: Vector,
    pub activation: Activation,
    /// Probability of keeping each input unit of this layer.
    pub keep_prob: f64,
}

impl DenseLayer {
    pub fn new(weights: Matrix, bias: Vector, activation: Activation, keep_prob: f64) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::dim("layer bias", weights.rows(), bias.len()));
        }
        if !(keep_prob > 0.0 && keep_prob <= 1.0) {
            return Err(Error::Domain(format!("keep probability {keep_prob} outside (0, 1]")));
        }
        Ok(DenseLayer {
            weights,
            bias,
            activation,
            keep_prob,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.rows()
    }

    /// `act(W · input + b)` on an already masked (or scaled) input.
    pub fn forward(&self, input: &[f64]) -> Result<Vector> {
        let mut z = self.weights.matvec(input)?;
        for (zi, bi) in z.iter_mut().zip(self.bias.iter()) {
            *zi += bi;
        }
        self.activation.apply(&mut z);
        Ok(z)
    }

    /// Upper bound on `sup_x ‖∇f(x)‖_op`: `sup|σ'| · ‖W‖_op` for element-wise
    /// activations, `2‖W‖_F` for a softmax output layer.
    ///
    /// Falls back to the Frobenius norm (itself an upper bound on `‖W‖_op`)
    /// if power iteration does not converge.
    pub fn operator_norm(&self) -> f64 {
        match self.activation.max_slope() {
            Some(slope) => {
                let op = spectral_norm(&self.weights, SPECTRAL_TOL, SPECTRAL_MAX_ITER)
                    .unwrap_or_else(|_| self.weights.frobenius_norm());
                slope * op
            }
            None => 2.0 * self.weights.frobenius_norm(),
        }
    }
}

/// Free-function form of [`DenseLayer::operator_norm`].
pub fn layer_operator_norm(layer: &DenseLayer) -> f64 {
    layer.operator_norm()
}

/// One realization of the dropout variables: `masks[l]` multiplies the input
/// of layer `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSample {
    pub masks: Vec<Vector>,
}

impl MaskSample {
    pub fn ones(net: &Network) -> Self {
        MaskSample {
            masks: net.layers.iter().map(|l| Vector::filled(l.input_dim(), 1.0)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MaskUsed {
    Sampled(MaskSample),
    /// The mean mask `E[S]`, i.e. scaling by `p_l`.
    Expectation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `h_0 = x, h_1, …, h_L`
    pub layer_outputs: Vec<Vector>,
    pub mask_used: MaskUsed,
}

impl ForwardTrace {
    pub fn output(&self) -> &Vector {
        self.layer_outputs.last().expect("trace holds at least the input")
    }

    pub fn into_output(mut self) -> Vector {
        self.layer_outputs.pop().expect("trace holds at least the input")
    }
}

/// Layer sizes and dropout rates from which [`Network::glorot`] builds a
/// randomly initialized network.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_dim: usize,
    pub output_activation: Activation,
    pub input_keep: f64,
    pub hidden_keep: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_dim: usize,
    layers: Vec<DenseLayer>,
}

impl Network {
    pub fn new(input_dim: usize, layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Network("a network needs at least one layer".into()));
        }
        let mut dim = input_dim;
        for (i, layer) in layers.iter().enumerate() {
            if layer.input_dim() != dim {
                return Err(Error::Network(format!(
                    "layer {i} expects input dim {} but receives {dim}",
                    layer.input_dim()
                )));
            }
            if layer.bias.len() != layer.output_dim() {
                return Err(Error::Network(format!("layer {i} bias length mismatch")));
            }
            if !(layer.keep_prob > 0.0 && layer.keep_prob <= 1.0) {
                return Err(Error::Network(format!(
                    "layer {i} keep probability {} outside (0, 1]",
                    layer.keep_prob
                )));
            }
            if layer.activation == Activation::Softmax && i + 1 != layers.len() {
                return Err(Error::Network(format!("softmax on non-final layer {i}")));
            }
            dim = layer.output_dim();
        }
        Ok(Network { input_dim, layers })
    }

    /// Uniform Glorot initialization, zero biases.
    pub fn glorot(arch: &Architecture, rng: &mut RngStream) -> Result<Self> {
        let mut dims = vec![arch.input_dim];
        dims.extend(&arch.hidden);
        dims.push(arch.output_dim);
        let n = dims.len() - 1;
        let mut layers = Vec::with_capacity(n);
        for i in 0..n {
            let (fan_in, fan_out) = (dims[i], dims[i + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out).map(|_| rng.uniform(-limit, limit)).collect();
            let last = i + 1 == n;
            layers.push(DenseLayer::new(
                Matrix::from_vec(fan_out, fan_in, data)?,
                Vector::zeros(fan_out),
                if last { arch.output_activation } else { arch.hidden_activation },
                if i == 0 { arch.input_keep } else { arch.hidden_keep },
            )?);
        }
        Network::new(arch.input_dim, layers)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, DenseLayer::output_dim)
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    /// Mutable access to parameter values. Callers must not change shapes.
    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn input_keep_prob(&self) -> f64 {
        self.layers[0].keep_prob
    }

    pub fn has_softmax_output(&self) -> bool {
        self.layers.last().is_some_and(|l| l.activation == Activation::Softmax)
    }

    /// Number of mask entries that are actually random (`p_l < 1`).
    pub fn dropout_units(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| l.keep_prob < 1.0)
            .map(DenseLayer::input_dim)
            .sum()
    }

    pub fn max_keep_prob(&self) -> f64 {
        self.layers.iter().map(|l| l.keep_prob).fold(0.0, f64::max)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.data().len() + l.bias.len())
            .sum()
    }

    pub fn sample_mask(&self, rng: &mut RngStream) -> MaskSample {
        MaskSample {
            masks: self
                .layers
                .iter()
                .map(|l| {
                    let p = l.keep_prob;
                    Vector::new(
                        (0..l.input_dim())
                            .map(|_| if rng.bernoulli(p) { 1.0 } else { 0.0 })
                            .collect(),
                    )
                })
                .collect(),
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::dim("network input", self.input_dim, x.len()));
        }
        Ok(())
    }

    fn check_mask(&self, s: &MaskSample) -> Result<()> {
        if s.masks.len() != self.layers.len() {
            return Err(Error::dim("mask layer count", self.layers.len(), s.masks.len()));
        }
        for (l, m) in self.layers.iter().zip(&s.masks) {
            if m.len() != l.input_dim() {
                return Err(Error::dim("mask length", l.input_dim(), m.len()));
            }
        }
        Ok(())
    }

    /// Forward pass under one sampled mask.
    pub fn forward_stochastic(&self, x: &[f64], s: &MaskSample) -> Result<ForwardTrace> {
        self.check_input(x)?;
        self.check_mask(s)?;
        let mut outputs = Vec::with_capacity(self.layers.len() + 1);
        outputs.push(Vector::new(x.to_vec()));
        for (layer, mask) in self.layers.iter().zip(&s.masks) {
            let input = outputs.last().unwrap().hadamard(mask)?;
            outputs.push(layer.forward(&input)?);
        }
        Ok(ForwardTrace {
            layer_outputs: outputs,
            mask_used: MaskUsed::Sampled(s.clone()),
        })
    }

    /// Output `h_L(x, s)` without keeping the intermediate layers.
    pub fn output_stochastic(&self, x: &[f64], s: &MaskSample) -> Result<Vector> {
        self.check_input(x)?;
        self.check_mask(s)?;
        let mut h = Vector::new(x.to_vec());
        for (layer, mask) in self.layers.iter().zip(&s.masks) {
            h = layer.forward(&h.hadamard(mask)?)?;
        }
        Ok(h)
    }

    /// Standard dropout inference: every mask replaced by its mean `p_l`.
    pub fn forward_deterministic(&self, x: &[f64]) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let mut outputs = Vec::with_capacity(self.layers.len() + 1);
        outputs.push(Vector::new(x.to_vec()));
        for layer in &self.layers {
            let input = outputs.last().unwrap().scaled(layer.keep_prob);
            outputs.push(layer.forward(&input)?);
        }
        Ok(ForwardTrace {
            layer_outputs: outputs,
            mask_used: MaskUsed::Expectation,
        })
    }

    pub fn output_deterministic(&self, x: &[f64]) -> Result<Vector> {
        Ok(self.forward_deterministic(x)?.into_output())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::streams;

    fn single_unit(w: f64, p: f64, act: Activation) -> Network {
        let layer = DenseLayer::new(Matrix::from_vec(1, 1, vec![w]).unwrap(), Vector::zeros(1), act, p)
            .unwrap();
        Network::new(1, vec![layer]).unwrap()
    }

    fn small_net(keep: f64) -> Network {
        let arch = Architecture {
            input_dim: 3,
            hidden: vec![4],
            hidden_activation: Activation::Tanh,
            output_dim: 2,
            output_activation: Activation::Softmax,
            input_keep: keep,
            hidden_keep: keep,
        };
        Network::glorot(&arch, &mut RngStream::new(3, streams::INIT)).unwrap()
    }

    #[test]
    fn rejects_bad_structure() {
        let soft = DenseLayer::new(Matrix::zeros(2, 2), Vector::zeros(2), Activation::Softmax, 1.0).unwrap();
        let id = DenseLayer::new(Matrix::zeros(2, 2), Vector::zeros(2), Activation::Identity, 1.0).unwrap();
        assert!(Network::new(2, vec![soft.clone(), id.clone()]).is_err());
        assert!(Network::new(3, vec![id.clone()]).is_err());
        assert!(Network::new(2, vec![]).is_err());
        assert!(DenseLayer::new(Matrix::zeros(2, 2), Vector::zeros(2), Activation::Identity, 0.0).is_err());
        assert!(Network::new(2, vec![id, soft]).is_ok());
    }

    #[test]
    fn all_ones_mask_when_keep_is_one() {
        let net = small_net(1.0);
        let mut rng = RngStream::new(1, streams::MASK);
        assert_eq!(net.sample_mask(&mut rng), MaskSample::ones(&net));
    }

    #[test]
    fn keep_rate_matches_probability() {
        let net = single_unit(1.0, 0.5, Activation::Sigmoid);
        let mut rng = RngStream::new(99, streams::MASK);
        let n = 100_000;
        let kept: f64 = (0..n).map(|_| net.sample_mask(&mut rng).masks[0][0]).sum();
        // binomial 3σ ≈ 0.0047
        assert!((kept / n as f64 - 0.5).abs() < 0.005);
    }

    #[test]
    fn masks_are_deterministic_per_seed() {
        let a = small_net(0.5);
        let b = small_net(0.5);
        let ma = a.sample_mask(&mut RngStream::new(8, streams::MASK));
        let mb = b.sample_mask(&mut RngStream::new(8, streams::MASK));
        assert_eq!(ma, mb);
    }

    #[test]
    fn identity_network_passes_input_through() {
        let layer = DenseLayer::new(Matrix::identity(3), Vector::zeros(3), Activation::Identity, 0.5).unwrap();
        let net = Network::new(3, vec![layer.clone(), layer]).unwrap();
        let x = [0.3, -1.2, 2.0];
        let t = net.forward_stochastic(&x, &MaskSample::ones(&net)).unwrap();
        assert_eq!(t.output().as_slice(), &x);
        assert_eq!(t.layer_outputs.len(), 3);
    }

    #[test]
    fn single_sigmoid_unit_values() {
        let net = single_unit(2.0, 1.0, Activation::Sigmoid);
        let h = net.output_stochastic(&[1.0], &MaskSample::ones(&net)).unwrap();
        assert!((h[0] - 0.880797077977882).abs() < 1e-12);

        let net = single_unit(1.0, 0.5, Activation::Sigmoid);
        let h = net.output_deterministic(&[2.0]).unwrap();
        assert!((h[0] - 0.731058578630005).abs() < 1e-12);
    }

    #[test]
    fn zero_mask_equals_zero_input() {
        let net = small_net(0.5);
        let mut zero = MaskSample::ones(&net);
        zero.masks[0] = Vector::zeros(3);
        let a = net.output_stochastic(&[0.4, 0.9, -0.3], &zero).unwrap();
        let b = net.output_stochastic(&[0.0, 0.0, 0.0], &MaskSample::ones(&net)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn keep_one_deterministic_equals_all_ones_mask() {
        let net = small_net(1.0);
        let x = [0.1, 0.2, 0.7];
        let a = net.forward_deterministic(&x).unwrap();
        let b = net.forward_stochastic(&x, &MaskSample::ones(&net)).unwrap();
        assert_eq!(a.layer_outputs, b.layer_outputs);
    }

    #[test]
    fn softmax_output_is_a_distribution() {
        let net = small_net(0.5);
        let mut rng = RngStream::new(4, streams::MASK);
        for _ in 0..20 {
            let s = net.sample_mask(&mut rng);
            let h = net.output_stochastic(&[0.5, 0.5, 0.5], &s).unwrap();
            assert!(h.iter().all(|&p| p >= 0.0));
            assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_errors() {
        let net = small_net(0.5);
        assert!(matches!(net.forward_deterministic(&[1.0]), Err(Error::Dimension { .. })));
        let mut bad = MaskSample::ones(&net);
        bad.masks[1] = Vector::zeros(2);
        assert!(net.forward_stochastic(&[1.0, 1.0, 1.0], &bad).is_err());
    }

    #[test]
    fn operator_norms() {
        let sig = DenseLayer::new(Matrix::diag(&[3.0, 4.0]), Vector::zeros(2), Activation::Sigmoid, 1.0).unwrap();
        assert!((layer_operator_norm(&sig) - 1.0).abs() < 1e-8);
        let tanh = DenseLayer::new(Matrix::identity(3), Vector::zeros(3), Activation::Tanh, 1.0).unwrap();
        assert!((tanh.operator_norm() - 1.0).abs() < 1e-12);
        // ‖η‖₂ = 0.3
        let eta = Matrix::from_rows(&[vec![0.0, 0.18], vec![0.24, 0.0]]).unwrap();
        let soft = DenseLayer::new(eta, Vector::zeros(2), Activation::Softmax, 1.0).unwrap();
        assert!((soft.operator_norm() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn glorot_respects_limits() {
        let net = small_net(0.5);
        let limit = (6.0f64 / 7.0).sqrt();
        assert!(net.layers()[0].weights.data().iter().all(|w| w.abs() <= limit));
        assert!(net.layers()[0].bias.iter().all(|&b| b == 0.0));
        assert_eq!(net.layers()[0].keep_prob, 0.5);
        assert_eq!(net.dropout_units(), 7);
    }
}
