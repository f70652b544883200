//! Dense layers, a ReLU stack with manual backprop, and Adam.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

/// Fully connected layer, `out = W x + b` with `W` stored row-major
/// (`out_dim` rows of `in_dim`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    /// He-uniform initialization, zero bias.
    pub fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let limit = libm::sqrt(6.0 / in_dim as f64);
        let weight = (0..in_dim * out_dim).map(|_| rng.random_range(-limit..limit)).collect();
        Self {
            in_dim,
            out_dim,
            weight,
            bias: vec![0.0; out_dim],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            in_dim: self.in_dim,
            out_dim: self.out_dim,
            weight: vec![0.0; self.weight.len()],
            bias: vec![0.0; self.bias.len()],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().chain(&self.bias).all(|w| w.is_finite())
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        self.weight
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// with respect to the input.
    fn backward(&self, x: &[f64], grad_out: &[f64], grad: &mut Dense) -> Vec<f64> {
        let mut grad_in = vec![0.0; self.in_dim];
        for (o, &g) in grad_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[o] += g;
            let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut grad.weight[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grow[i] += g * x[i];
                grad_in[i] += g * row[i];
            }
        }
        grad_in
    }
}

/// Activations of one forward pass: `acts[0]` is the input, `acts[i + 1]`
/// the (post-activation) output of layer `i`.
#[derive(Debug, Clone)]
pub struct Trace {
    pub acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map_or(&[], Vec::as_slice)
    }
}

/// Layers with ReLU after the first `relu_layers` of them.
pub fn forward(layers: &[Dense], relu_layers: usize, x: &[f64]) -> Trace {
    let mut acts = Vec::with_capacity(layers.len() + 1);
    acts.push(x.to_vec());
    for (i, layer) in layers.iter().enumerate() {
        let mut out = layer.forward(acts.last().unwrap());
        if i < relu_layers {
            out.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        acts.push(out);
    }
    Trace { acts }
}

/// Backpropagates `grad_out` (gradient w.r.t. the final output) and
/// accumulates into `grads`, which must mirror `layers`.
pub fn backward(layers: &[Dense], relu_layers: usize, trace: &Trace, grad_out: &[f64], grads: &mut [Dense]) {
    let mut g = grad_out.to_vec();
    for i in (0..layers.len()).rev() {
        if i < relu_layers {
            for (gv, a) in g.iter_mut().zip(&trace.acts[i + 1]) {
                if *a <= 0.0 {
                    *gv = 0.0;
                }
            }
        }
        g = layers[i].backward(&trace.acts[i], &g, &mut grads[i]);
    }
}

pub fn zero_grads(layers: &[Dense]) -> Vec<Dense> {
    layers.iter().map(Dense::zeros_like).collect()
}

#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Dense>,
    v: Vec<Dense>,
}

impl Adam {
    pub fn new(layers: &[Dense], lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: zero_grads(layers),
            v: zero_grads(layers),
        }
    }

    pub fn step(&mut self, layers: &mut [Dense], grads: &[Dense]) {
        self.t += 1;
        let c1 = 1.0 - libm::pow(self.beta1, f64::from(self.t));
        let c2 = 1.0 - libm::pow(self.beta2, f64::from(self.t));
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= lr * mh / (libm::sqrt(vh) + eps);
            }
        };
        for (((layer, g), m), v) in layers
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            update(&mut layer.weight, &g.weight, &mut m.weight, &mut v.weight);
            update(&mut layer.bias, &g.bias, &mut m.bias, &mut v.bias);
        }
    }
}
