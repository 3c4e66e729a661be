//! Small dense building blocks shared by the generator and the tagger:
//! named parameter tensors, an LSTM cell with hand-derived backward pass,
//! softmax helpers and Adam.
//!
//! Arithmetic is double precision. Parameters are kept representable in
//! single precision (see [`ParamSet::round_to_f32`]) so checkpoints, which
//! store `f32`, reload bit-exactly.

use rand::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            name: name.into(),
            shape,
            data: vec![0.0; n],
        }
    }
}

/// An ordered collection of named tensors. Models address tensors by the
/// index returned from [`ParamSet::add`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>) -> usize {
        self.tensors.push(Tensor::zeros(name, shape));
        self.tensors.len() - 1
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.tensors[i].data
    }

    pub fn get_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.tensors[i].data
    }

    pub fn zeros_like(&self) -> Self {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.name.clone(), t.shape.clone()))
                .collect(),
        }
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    /// Same names and shapes, in the same order.
    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }

    pub fn init_uniform<R: Rng + ?Sized>(&mut self, rng: &mut R, scale: f64) {
        for t in &mut self.tensors {
            for v in &mut t.data {
                let mut x = rng.gen_range(-scale..=scale) as f32;
                // Rounding may step just outside the interval.
                if (x.abs() as f64) > scale {
                    x = f32::from_bits(x.to_bits() - 1);
                }
                *v = x as f64;
            }
        }
    }

    pub fn round_to_f32(&mut self) {
        for t in &mut self.tensors {
            for v in &mut t.data {
                *v = *v as f32 as f64;
            }
        }
    }

    pub fn fill(&mut self, value: f64) {
        for t in &mut self.tensors {
            t.data.fill(value);
        }
    }

    pub fn sq_norm(&self) -> f64 {
        self.tensors.iter().flat_map(|t| t.data.iter()).map(|v| v * v).sum()
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.tensors {
            for v in &mut t.data {
                *v *= s;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

/// `out += W x` for row-major `W` of shape `[out.len(), x.len()]`.
#[inline]
pub fn matvec_add(w: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    debug_assert_eq!(w.len(), out.len() * cols);
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += dot(row, x);
    }
}

/// `dx += Wᵀ dy`.
#[inline]
pub fn matvec_t_add(w: &[f64], dy: &[f64], dx: &mut [f64]) {
    let cols = dx.len();
    debug_assert_eq!(w.len(), dy.len() * cols);
    for (&g, row) in dy.iter().zip(w.chunks_exact(cols)) {
        if g != 0.0 {
            axpy(g, row, dx);
        }
    }
}

/// `dW += dy xᵀ`.
#[inline]
pub fn outer_add(dw: &mut [f64], dy: &[f64], x: &[f64]) {
    let cols = x.len();
    debug_assert_eq!(dw.len(), dy.len() * cols);
    for (&g, row) in dy.iter().zip(dw.chunks_exact_mut(cols)) {
        if g != 0.0 {
            axpy(g, x, row);
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&l| l - lse).collect()
}

/// Index of the first maximum.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Parameter indices of one LSTM layer. Gate rows are ordered input, forget,
/// cell, output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmLayer {
    pub w_ih: usize,
    pub w_hh: usize,
    pub bias: usize,
    pub input: usize,
    pub hidden: usize,
}

/// Everything one LSTM step needs for its backward pass.
#[derive(Clone, Debug)]
pub struct LstmStep {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    /// Activated gates, `4 * hidden`.
    pub gates: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

impl LstmLayer {
    pub fn register(params: &mut ParamSet, prefix: &str, input: usize, hidden: usize) -> Self {
        LstmLayer {
            w_ih: params.add(format!("{prefix}.w_ih"), vec![4 * hidden, input]),
            w_hh: params.add(format!("{prefix}.w_hh"), vec![4 * hidden, hidden]),
            bias: params.add(format!("{prefix}.bias"), vec![4 * hidden]),
            input,
            hidden,
        }
    }

    pub fn step(&self, p: &ParamSet, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> LstmStep {
        let hd = self.hidden;
        let mut gates = p.get(self.bias).to_vec();
        matvec_add(p.get(self.w_ih), x, &mut gates);
        matvec_add(p.get(self.w_hh), h_prev, &mut gates);
        for v in &mut gates[..2 * hd] {
            *v = sigmoid(*v);
        }
        for v in &mut gates[2 * hd..3 * hd] {
            *v = v.tanh();
        }
        for v in &mut gates[3 * hd..] {
            *v = sigmoid(*v);
        }
        let mut c = vec![0.0; hd];
        let mut tanh_c = vec![0.0; hd];
        let mut h = vec![0.0; hd];
        for k in 0..hd {
            c[k] = gates[hd + k] * c_prev[k] + gates[k] * gates[2 * hd + k];
            tanh_c[k] = c[k].tanh();
            h[k] = gates[3 * hd + k] * tanh_c[k];
        }
        LstmStep {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            gates,
            c,
            tanh_c,
            h,
        }
    }

    /// Backpropagates `dh`, `dc` (gradients w.r.t. this step's outputs) into
    /// the weights and returns `(dx, dh_prev, dc_prev)`.
    pub fn step_back(
        &self,
        p: &ParamSet,
        grads: &mut ParamSet,
        s: &LstmStep,
        dh: &[f64],
        dc: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let hd = self.hidden;
        let g = &s.gates;
        let mut dpre = vec![0.0; 4 * hd];
        let mut dc_prev = vec![0.0; hd];
        for k in 0..hd {
            let (i, f, cand, o) = (g[k], g[hd + k], g[2 * hd + k], g[3 * hd + k]);
            let dct = dc[k] + dh[k] * o * (1.0 - s.tanh_c[k] * s.tanh_c[k]);
            dpre[k] = dct * cand * i * (1.0 - i);
            dpre[hd + k] = dct * s.c_prev[k] * f * (1.0 - f);
            dpre[2 * hd + k] = dct * i * (1.0 - cand * cand);
            dpre[3 * hd + k] = dh[k] * s.tanh_c[k] * o * (1.0 - o);
            dc_prev[k] = dct * f;
        }
        outer_add(grads.get_mut(self.w_ih), &dpre, &s.x);
        outer_add(grads.get_mut(self.w_hh), &dpre, &s.h_prev);
        axpy(1.0, &dpre, grads.get_mut(self.bias));
        let mut dx = vec![0.0; self.input];
        matvec_t_add(p.get(self.w_ih), &dpre, &mut dx);
        let mut dh_prev = vec![0.0; hd];
        matvec_t_add(p.get(self.w_hh), &dpre, &mut dh_prev);
        (dx, dh_prev, dc_prev)
    }
}

/// Rescales `grads` in place so their global norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut ParamSet, max_norm: f64) -> f64 {
    let norm = grads.sq_norm().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

/// Adam with the usual moment constants.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: ParamSet,
    v: ParamSet,
}

impl Adam {
    pub fn new(params: &ParamSet, learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn update(&mut self, params: &mut ParamSet, grads: &ParamSet) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let lr = self.learning_rate * bc2.sqrt() / bc1;
        for (((p, g), m), v) in params
            .tensors
            .iter_mut()
            .zip(&grads.tensors)
            .zip(&mut self.m.tensors)
            .zip(&mut self.v.tensors)
        {
            for k in 0..p.data.len() {
                let gk = g.data[k];
                m.data[k] = self.beta1 * m.data[k] + (1.0 - self.beta1) * gk;
                v.data[k] = self.beta2 * v.data[k] + (1.0 - self.beta2) * gk * gk;
                p.data[k] -= lr * m.data[k] / (v.data[k].sqrt() + self.eps);
            }
        }
        params.round_to_f32();
    }
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`, otherwise
/// `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(rng: &mut R, len: usize, rate: f64) -> Vec<f64> {
    if rate <= 0.0 {
        return vec![1.0; len];
    }
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect()
}
