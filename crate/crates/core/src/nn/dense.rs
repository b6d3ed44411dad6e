use std::fmt;

use super::Tensor;
use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Softmax,
    Sigmoid,
    Softplus,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
            Activation::Softmax => 3,
            Activation::Sigmoid => 4,
            Activation::Softplus => 5,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Activation::Identity,
            1 => Activation::Relu,
            2 => Activation::Tanh,
            3 => Activation::Softmax,
            4 => Activation::Sigmoid,
            5 => Activation::Softplus,
            _ => return None,
        })
    }

    fn apply_row(self, row: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Relu => row.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Tanh => row.iter_mut().for_each(|v| *v = v.tanh()),
            Activation::Sigmoid => row.iter_mut().for_each(|v| *v = sigmoid(*v)),
            Activation::Softplus => row.iter_mut().for_each(|v| *v = softplus(*v)),
            Activation::Softmax => softmax_in_place(row),
        }
    }

    /// Turns `grad` (w.r.t. the activation output `out`) into the gradient
    /// w.r.t. the pre-activation.
    fn backprop_row(self, out: &[f64], grad: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Relu => grad
                .iter_mut()
                .zip(out)
                .for_each(|(g, &a)| *g = if a > 0.0 { *g } else { 0.0 }),
            Activation::Tanh => grad
                .iter_mut()
                .zip(out)
                .for_each(|(g, &a)| *g *= 1.0 - a * a),
            Activation::Sigmoid => grad
                .iter_mut()
                .zip(out)
                .for_each(|(g, &a)| *g *= a * (1.0 - a)),
            // softplus'(z) = sigmoid(z) = 1 - exp(-softplus(z))
            Activation::Softplus => grad
                .iter_mut()
                .zip(out)
                .for_each(|(g, &a)| *g *= -(-a).exp_m1()),
            Activation::Softmax => {
                let dot: f64 = grad.iter().zip(out).map(|(g, a)| g * a).sum();
                grad.iter_mut()
                    .zip(out)
                    .for_each(|(g, &a)| *g = a * (*g - dot));
            }
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Softmax => "softmax",
            Activation::Sigmoid => "sigmoid",
            Activation::Softplus => "softplus",
        };
        f.write_str(s)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// One fully connected layer, `y = act(x W + b)`.
///
/// `weights` is stored row-major with shape `[in_dim, out_dim]` so a single
/// input coordinate owns a contiguous row; zero inputs (common in the one-hot
/// feature blocks) are skipped in both passes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::invalid("layer dimensions must be positive"));
        }
        if weights.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::invalid(format!(
                "layer {}x{} given {} weights and {} biases",
                in_dim,
                out_dim,
                weights.len(),
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::invalid("layer parameters must be finite"));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            bias,
            activation,
        })
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut SeededRng) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.uniform_range(-limit, limit))
            .collect();
        Self {
            in_dim,
            out_dim,
            weights,
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn forward_row(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.bias);
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let w = &self.weights[i * self.out_dim..(i + 1) * self.out_dim];
            for (o, &wij) in out.iter_mut().zip(w) {
                *o += xi * wij;
            }
        }
        self.activation.apply_row(out);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients of a scalar loss w.r.t. every parameter of a [`DenseNet`],
/// plus (optionally) w.r.t. the network input.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub layers: Vec<LayerGrad>,
    pub input: Option<Tensor>,
}

impl ParamGrads {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
            input: None,
        }
    }

    /// Accumulates parameter gradients. Input gradients are dropped.
    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.iter_mut().zip(&b.weights).for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
        self.input = None;
    }

    pub fn scale(&mut self, c: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|v| *v *= c);
        }
    }

    /// Same ordering as [`DenseNet::params`]: per layer, weights then bias.
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone)]
struct ForwardCache {
    /// `activations[0]` is the input, `activations[k+1]` the output of layer k.
    activations: Vec<Tensor>,
}

/// Feed-forward stack of [`Dense`] layers.
#[derive(Debug, Clone)]
pub struct DenseNet {
    layers: Vec<Dense>,
    cache: Option<ForwardCache>,
}

impl PartialEq for DenseNet {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl DenseNet {
    /// Builds a Glorot-initialised net: `input_dim -> widths[0] -> ...`.
    pub fn new(input_dim: usize, spec: &[(usize, Activation)], rng: &mut SeededRng) -> Result<Self> {
        if spec.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        let mut layers = Vec::with_capacity(spec.len());
        let mut fan_in = input_dim;
        for &(width, act) in spec {
            if fan_in == 0 || width == 0 {
                return Err(Error::invalid("layer dimensions must be positive"));
            }
            layers.push(Dense::glorot(fan_in, width, act, rng));
            fan_in = width;
        }
        Ok(Self {
            layers,
            cache: None,
        })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::invalid(format!(
                    "layer output {} does not feed layer input {}",
                    pair[0].out_dim, pair[1].in_dim
                )));
            }
        }
        Ok(Self {
            layers,
            cache: None,
        })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    fn locate(&self, mut index: usize) -> (usize, bool, usize) {
        for (k, l) in self.layers.iter().enumerate() {
            if index < l.weights.len() {
                return (k, true, index);
            }
            index -= l.weights.len();
            if index < l.bias.len() {
                return (k, false, index);
            }
            index -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub fn param(&self, index: usize) -> f64 {
        let (k, is_w, i) = self.locate(index);
        if is_w {
            self.layers[k].weights[i]
        } else {
            self.layers[k].bias[i]
        }
    }

    pub fn set_param(&mut self, index: usize, value: f64) {
        let (k, is_w, i) = self.locate(index);
        if is_w {
            self.layers[k].weights[i] = value;
        } else {
            self.layers[k].bias[i] = value;
        }
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().is_empty() || x.shape().len() > 2 || x.width() != self.input_dim() {
            return Err(Error::invalid(format!(
                "network expects input width {}, got shape {:?}",
                self.input_dim(),
                x.shape()
            )));
        }
        Ok(())
    }

    fn run(&self, x: &Tensor, keep: bool) -> (Tensor, Option<ForwardCache>) {
        let batch = x.batch();
        let mut acts = Vec::with_capacity(if keep { self.layers.len() + 1 } else { 0 });
        let mut cur = x.clone();
        for layer in &self.layers {
            let mut out = vec![0.0; batch * layer.out_dim];
            for (xr, or) in cur.rows().zip(out.chunks_mut(layer.out_dim)) {
                layer.forward_row(xr, or);
            }
            let next = Tensor::new(vec![batch, layer.out_dim], out).expect("shape");
            if keep {
                acts.push(std::mem::replace(&mut cur, next));
            } else {
                cur = next;
            }
        }
        let out = if x.shape().len() == 1 {
            Tensor::vector(cur.clone().into_data())
        } else {
            cur.clone()
        };
        let cache = keep.then(|| {
            acts.push(cur);
            ForwardCache { activations: acts }
        });
        (out, cache)
    }

    /// Evaluates the net and caches intermediates for [`DenseNet::backward`].
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let (out, cache) = self.run(x, true);
        self.cache = cache;
        Ok(out)
    }

    /// Evaluates the net without touching the cache.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        Ok(self.run(x, false).0)
    }

    /// Single-example convenience around [`DenseNet::predict`].
    pub fn predict_row(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.predict(&Tensor::vector(x.to_vec()))?.into_data())
    }

    /// Back-propagates `output_grad` through the cached forward pass,
    /// returning parameter gradients and the gradient w.r.t. the input.
    pub fn backward(&mut self, output_grad: &Tensor) -> Result<ParamGrads> {
        self.backward_with(output_grad, true)
    }

    /// Like [`DenseNet::backward`]; skips the input gradient when
    /// `want_input_grad` is false. The cache is consumed either way.
    pub fn backward_with(&mut self, output_grad: &Tensor, want_input_grad: bool) -> Result<ParamGrads> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::state("backward called without a cached forward pass"))?;
        let out = cache.activations.last().expect("cache has output");
        if output_grad.len() != out.len() {
            return Err(Error::invalid(format!(
                "output gradient has {} elements, forward produced {}",
                output_grad.len(),
                out.len()
            )));
        }
        let batch = out.batch();
        let mut grads = ParamGrads::zeros_like(self);
        let mut delta = output_grad.data().to_vec();

        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let a_out = &cache.activations[k + 1];
            let a_in = &cache.activations[k];
            for (b, d) in delta.chunks_mut(layer.out_dim).enumerate() {
                layer.activation.backprop_row(a_out.row(b), d);
            }
            let g = &mut grads.layers[k];
            for (b, d) in delta.chunks(layer.out_dim).enumerate() {
                g.bias.iter_mut().zip(d).for_each(|(gb, dv)| *gb += dv);
                for (i, &xi) in a_in.row(b).iter().enumerate() {
                    if xi == 0.0 {
                        continue;
                    }
                    let gw = &mut g.weights[i * layer.out_dim..(i + 1) * layer.out_dim];
                    gw.iter_mut().zip(d).for_each(|(w, dv)| *w += xi * dv);
                }
            }
            if k == 0 && !want_input_grad {
                break;
            }
            let mut prev = vec![0.0; batch * layer.in_dim];
            for (d, p) in delta.chunks(layer.out_dim).zip(prev.chunks_mut(layer.in_dim)) {
                for (i, pi) in p.iter_mut().enumerate() {
                    let w = &layer.weights[i * layer.out_dim..(i + 1) * layer.out_dim];
                    *pi = w.iter().zip(d).map(|(a, b)| a * b).sum();
                }
            }
            delta = prev;
        }
        if want_input_grad {
            let shape = cache.activations[0].shape().to_vec();
            let shape = if output_grad.shape().len() == 1 {
                vec![self.input_dim()]
            } else {
                shape
            };
            grads.input = Some(Tensor::new(shape, delta)?);
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_net(in_dim: usize, bias: Vec<f64>, act: Activation) -> DenseNet {
        let out = bias.len();
        DenseNet::from_layers(vec![Dense::new(in_dim, out, vec![0.0; in_dim * out], bias, act).unwrap()])
            .unwrap()
    }

    #[test]
    fn zero_weights_output_bias() {
        let net = zero_net(3, vec![0.5, -1.0], Activation::Identity);
        let y = net.predict_row(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(y, vec![0.5, -1.0]);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let net = zero_net(2, vec![0.0, 0.0], Activation::Softmax);
        let y = net.predict_row(&[0.3, -0.7]).unwrap();
        assert_eq!(y, vec![0.5, 0.5]);
    }

    // Hand-rolled matrix multiply, independent of Dense::forward_row.
    fn oracle(net: &DenseNet, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for l in net.layers() {
            let mut z = vec![0.0; l.out_dim];
            for j in 0..l.out_dim {
                let mut s = l.bias[j];
                for i in 0..l.in_dim {
                    s += cur[i] * l.weights[i * l.out_dim + j];
                }
                z[j] = match l.activation {
                    Activation::Relu => if s > 0.0 { s } else { 0.0 },
                    Activation::Tanh => s.tanh(),
                    Activation::Identity => s,
                    _ => unreachable!(),
                };
            }
            cur = z;
        }
        cur
    }

    #[test]
    fn forward_matches_matmul_oracle() {
        let mut rng = SeededRng::new(11);
        for _ in 0..20 {
            let net = DenseNet::new(3, &[(4, Activation::Tanh), (2, Activation::Identity)], &mut rng).unwrap();
            let x = rng.normal_vec(3);
            let got = net.predict_row(&x).unwrap();
            let want = oracle(&net, &x);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batched_forward_matches_rowwise() {
        let mut rng = SeededRng::new(3);
        let net = DenseNet::new(3, &[(4, Activation::Relu), (2, Activation::Softmax)], &mut rng).unwrap();
        let rows: Vec<Vec<f64>> = (0..5).map(|_| rng.normal_vec(3)).collect();
        let batch = net.predict(&Tensor::from_rows(&rows).unwrap()).unwrap();
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(batch.row(i), net.predict_row(r).unwrap().as_slice());
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut rng = SeededRng::new(0);
        let mut net = DenseNet::new(3, &[(2, Activation::Identity)], &mut rng).unwrap();
        assert!(net.forward(&Tensor::vector(vec![1.0; 4])).is_err());
    }

    #[test]
    fn backward_before_forward_is_state_error() {
        let mut rng = SeededRng::new(0);
        let mut net = DenseNet::new(3, &[(2, Activation::Identity)], &mut rng).unwrap();
        let err = net.backward(&Tensor::vector(vec![1.0, 1.0])).unwrap_err();
        assert!(matches!(err, Error::State(_)));
    }

    #[test]
    fn linear_weight_gradient_is_input() {
        let mut net = zero_net(3, vec![0.0], Activation::Identity);
        let x = vec![0.5, -2.0, 3.0];
        net.forward(&Tensor::vector(x.clone())).unwrap();
        let g = net.backward(&Tensor::vector(vec![1.0])).unwrap();
        assert_eq!(g.layers[0].weights, x);
        assert_eq!(g.layers[0].bias, vec![1.0]);
    }

    #[test]
    fn zero_output_grad_gives_zero_param_grads() {
        let mut rng = SeededRng::new(5);
        let mut net = DenseNet::new(4, &[(3, Activation::Tanh), (2, Activation::Identity)], &mut rng).unwrap();
        net.forward(&Tensor::vector(rng.normal_vec(4))).unwrap();
        let g = net.backward(&Tensor::vector(vec![0.0, 0.0])).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn backward_clears_cache() {
        let mut rng = SeededRng::new(5);
        let mut net = DenseNet::new(2, &[(2, Activation::Identity)], &mut rng).unwrap();
        net.forward(&Tensor::vector(vec![1.0, 1.0])).unwrap();
        assert!(net.has_cache());
        net.backward(&Tensor::vector(vec![1.0, 0.0])).unwrap();
        assert!(!net.has_cache());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = SeededRng::new(8);
        let net = DenseNet::new(5, &[(7, Activation::Softmax)], &mut rng).unwrap();
        for _ in 0..200 {
            let x: Vec<f64> = rng.normal_vec(5).iter().map(|v| v * 20.0).collect();
            let y = net.predict_row(&x).unwrap();
            assert!(y.iter().all(|&p| p >= 0.0));
            assert!((y.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn mismatched_layers_rejected() {
        let a = Dense::new(2, 3, vec![0.0; 6], vec![0.0; 3], Activation::Relu).unwrap();
        let b = Dense::new(4, 1, vec![0.0; 4], vec![0.0], Activation::Identity).unwrap();
        assert!(DenseNet::from_layers(vec![a, b]).is_err());
    }
}
