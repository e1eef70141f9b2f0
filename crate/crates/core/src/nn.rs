//! Dense layers, multilayer perceptrons with explicit backpropagation, and
//! the Adam optimizer. Parameters flatten to a single vector (per layer:
//! weight row-major, bias, then the PReLU slope when present) so optimizers,
//! gradient checks and serialization share one ordering.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::Normal;

use crate::weights::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
    PRelu,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Tanh => 1,
            Activation::Relu => 2,
            Activation::PRelu => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Activation::Identity,
            1 => Activation::Tanh,
            2 => Activation::Relu,
            3 => Activation::PRelu,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `in × out`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
    /// Negative-side slope, learned only for `PRelu`.
    pub slope: f64,
}

#[derive(Debug, Clone)]
pub struct DenseGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub slope: f64,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let gain = match activation {
            Activation::Relu | Activation::PRelu => 2.0,
            _ => 1.0,
        };
        let normal = Normal::new(0.0, (gain / inputs as f64).sqrt()).expect("finite std");
        let weight = Array2::from_shape_fn((inputs, outputs), |_| rng.sample(normal));
        Self {
            weight,
            bias: Array1::zeros(outputs),
            activation,
            slope: 0.25,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len() + usize::from(self.activation == Activation::PRelu)
    }

    fn activate(&self, pre: &Array2<f64>) -> Array2<f64> {
        match self.activation {
            Activation::Identity => pre.clone(),
            Activation::Tanh => pre.mapv(f64::tanh),
            Activation::Relu => pre.mapv(|z| z.max(0.0)),
            Activation::PRelu => {
                let a = self.slope;
                pre.mapv(|z| if z > 0.0 { z } else { a * z })
            }
        }
    }

    /// Returns (pre-activation, activation).
    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let mut pre = x.dot(&self.weight);
        pre += &self.bias;
        let out = self.activate(&pre);
        (pre, out)
    }

    /// Gradients for this layer and the gradient w.r.t. its input.
    pub fn backward(
        &self,
        x: &Array2<f64>,
        pre: &Array2<f64>,
        d_out: &Array2<f64>,
    ) -> (DenseGrad, Array2<f64>) {
        let mut slope_grad = 0.0;
        let d_pre = match self.activation {
            Activation::Identity => d_out.clone(),
            Activation::Tanh => {
                let mut d = d_out.clone();
                d.zip_mut_with(pre, |g, &z| {
                    let t = z.tanh();
                    *g *= 1.0 - t * t;
                });
                d
            }
            Activation::Relu => {
                let mut d = d_out.clone();
                d.zip_mut_with(pre, |g, &z| {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                });
                d
            }
            Activation::PRelu => {
                let a = self.slope;
                let mut d = d_out.clone();
                d.zip_mut_with(pre, |g, &z| {
                    if z <= 0.0 {
                        slope_grad += *g * z;
                        *g *= a;
                    }
                });
                d
            }
        };
        let grad = DenseGrad {
            weight: x.t().dot(&d_pre),
            bias: d_pre.sum_axis(Axis(0)),
            slope: slope_grad,
        };
        let d_x = d_pre.dot(&self.weight.t());
        (grad, d_x)
    }

    pub fn push_params(&self, out: &mut Vec<f64>) {
        out.extend(self.weight.iter());
        out.extend(self.bias.iter());
        if self.activation == Activation::PRelu {
            out.push(self.slope);
        }
    }

    pub fn pull_params(&mut self, src: &mut &[f64]) {
        let nw = self.weight.len();
        let nb = self.bias.len();
        for (w, v) in self.weight.iter_mut().zip(&src[..nw]) {
            *w = *v;
        }
        for (b, v) in self.bias.iter_mut().zip(&src[nw..nw + nb]) {
            *b = *v;
        }
        *src = &src[nw + nb..];
        if self.activation == Activation::PRelu {
            self.slope = src[0];
            *src = &src[1..];
        }
    }

    pub fn to_tensors(&self) -> Vec<Tensor> {
        vec![
            Tensor::new(
                vec![self.inputs() as u32, self.outputs() as u32],
                self.weight.iter().copied().collect(),
            ),
            Tensor::new(vec![self.outputs() as u32], self.bias.to_vec()),
            Tensor::new(vec![2], vec![self.activation.code() as f64, self.slope]),
        ]
    }

    pub fn from_tensors(t: &[Tensor]) -> Result<Self> {
        let [w, b, a] = t else {
            return Err(Error::format("dense layer needs weight, bias and activation tensors"));
        };
        let (rows, cols) = match w.shape.as_slice() {
            [r, c] => (*r as usize, *c as usize),
            _ => return Err(Error::format("weight tensor must be 2-D")),
        };
        if b.data.len() != cols || a.data.len() != 2 {
            return Err(Error::format("bias/activation tensor has wrong size"));
        }
        let activation = Activation::from_code(a.data[0] as u8)
            .ok_or_else(|| Error::format("unknown activation code"))?;
        Ok(Self {
            weight: Array2::from_shape_vec((rows, cols), w.data.clone())
                .map_err(|e| Error::format(e.to_string()))?,
            bias: Array1::from(b.data.clone()),
            activation,
            slope: a.data[1],
        })
    }
}

impl DenseGrad {
    pub fn push(&self, activation: Activation, out: &mut Vec<f64>) {
        out.extend(self.weight.iter());
        out.extend(self.bias.iter());
        if activation == Activation::PRelu {
            out.push(self.slope);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Per-layer inputs and pre-activations from a forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
    pres: Vec<Array2<f64>>,
}

impl Mlp {
    /// `sizes = [in, h1, ..., out]`; hidden layers use `hidden`, the last `output`.
    pub fn new(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least one layer");
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                Dense::new(sizes[i], sizes[i + 1], act, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::outputs)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::num_params).sum()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.forward(&h).1;
        }
        h
    }

    pub fn forward_cached(&self, x: &Array2<f64>) -> (Array2<f64>, MlpCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pres = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let (pre, out) = layer.forward(&h);
            inputs.push(h);
            pres.push(pre);
            h = out;
        }
        (h, MlpCache { inputs, pres })
    }

    /// Flat parameter gradient and the gradient w.r.t. the network input.
    pub fn backward(&self, cache: &MlpCache, d_out: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
        let mut grads: Vec<DenseGrad> = Vec::with_capacity(self.layers.len());
        let mut d = d_out.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (g, dx) = layer.backward(&cache.inputs[i], &cache.pres[i], &d);
            grads.push(g);
            d = dx;
        }
        grads.reverse();
        let mut flat = Vec::with_capacity(self.num_params());
        for (g, layer) in grads.iter().zip(&self.layers) {
            g.push(layer.activation, &mut flat);
        }
        (flat, d)
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            l.push_params(&mut out);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.num_params(), "parameter vector length");
        let mut src = params;
        for l in &mut self.layers {
            l.pull_params(&mut src);
        }
    }

    pub fn to_tensors(&self) -> Vec<Tensor> {
        self.layers.iter().flat_map(Dense::to_tensors).collect()
    }

    pub fn from_tensors(t: &[Tensor]) -> Result<Self> {
        if t.is_empty() || t.len() % 3 != 0 {
            return Err(Error::format("MLP tensors come in groups of three"));
        }
        let layers = t.chunks(3).map(Dense::from_tensors).collect::<Result<Vec<_>>>()?;
        for pair in layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::format("consecutive layer sizes disagree"));
            }
        }
        Ok(Self { layers })
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(lr: f64, num_params: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        if self.lr == 0.0 {
            return;
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Mean cross-entropy of row-wise softmax against integer targets, with the
/// gradient w.r.t. the logits.
pub fn cross_entropy(logits: &Array2<f64>, targets: &[usize]) -> (f64, Array2<f64>) {
    let n = logits.nrows();
    assert_eq!(n, targets.len());
    let mut probs = softmax_rows(logits);
    let mut loss = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        loss -= probs[[i, t]].max(1e-300).ln();
        probs[[i, t]] -= 1.0;
    }
    probs.mapv_inplace(|v| v / n as f64);
    (loss / n as f64, probs)
}

/// Central finite differences against an analytic gradient.
///
/// Returns the maximum relative error `|a - n| / max(|a|, |n|, 1e-5)` over
/// all parameters (the floor keeps near-zero gradients from dominating).
pub fn gradient_check(
    params: &[f64],
    analytic: &[f64],
    h: f64,
    mut loss: impl FnMut(&[f64]) -> f64,
) -> f64 {
    assert_eq!(params.len(), analytic.len());
    let mut p = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let up = loss(&p);
        p[i] = orig - h;
        let down = loss(&p);
        p[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-5);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for act in [Activation::Tanh, Activation::Relu, Activation::PRelu] {
            let mut net = Mlp::new(&[5, 7, 6, 3], act, Activation::Identity, &mut rng);
            let x = Array2::from_shape_fn((4, 5), |_| rng.gen_range(-1.0..1.0));
            let targets = [0usize, 2, 1, 2];
            let (out, cache) = net.forward_cached(&x);
            let (_, d) = cross_entropy(&out, &targets);
            let (grad, _) = net.backward(&cache, &d);
            let params = net.params();
            let err = gradient_check(&params, &grad, 1e-6, |p| {
                net.set_params(p);
                cross_entropy(&net.forward(&x), &targets).0
            });
            assert!(err < 1e-4, "{act:?}: {err}");
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::new(&[4, 6, 2], Activation::Tanh, Activation::Identity, &mut rng);
        let x = Array2::from_shape_fn((1, 4), |_| rng.gen_range(-1.0..1.0));
        let (out, cache) = net.forward_cached(&x);
        let d = Array2::from_elem(out.raw_dim(), 1.0);
        let (_, dx) = net.backward(&cache, &d);
        let flat: Vec<f64> = x.iter().copied().collect();
        let err = gradient_check(&flat, &dx.iter().copied().collect::<Vec<_>>(), 1e-6, |p| {
            let xi = Array2::from_shape_vec((1, 4), p.to_vec()).unwrap();
            net.forward(&xi).sum()
        });
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Mlp::new(&[3, 4, 2], Activation::PRelu, Activation::Identity, &mut rng);
        let p: Vec<f64> = (0..net.num_params()).map(|i| i as f64 * 0.01).collect();
        net.set_params(&p);
        assert_eq!(net.params(), p);
        let back = Mlp::from_tensors(&net.to_tensors()).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn adam_with_zero_lr_is_inert() {
        let mut adam = Adam::new(0.0, 3);
        let mut p = vec![1.0, -2.0, 3.0];
        adam.step(&mut p, &[0.5, 0.5, 0.5]);
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut adam = Adam::new(0.05, 2);
        let mut p = vec![3.0, -4.0];
        for _ in 0..2000 {
            let g = vec![2.0 * p[0], 2.0 * p[1]];
            adam.step(&mut p, &g);
        }
        assert!(p[0].abs() < 1e-3 && p[1].abs() < 1e-3, "{p:?}");
    }
}
