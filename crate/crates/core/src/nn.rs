//! Dense-network substrate: row-major matrices, activations, fully connected
//! layers, a small MLP with analytic reverse-mode gradients, and Adam.
//!
//! Gradients are returned in containers with the same shape as the network
//! they belong to, so parameter and gradient can be walked in lockstep through
//! [`ParamVec`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_dim("matrix data", rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    /// Entries drawn uniformly from `[-bound, bound]`.
    pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `out += W x`
    pub fn matvec_acc(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols.max(1))) {
            *o += dot(row, x);
        }
    }

    /// `out += Wᵀ y`
    pub fn matvec_t_acc(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        if self.cols == 0 {
            return;
        }
        for (&yi, row) in y.iter().zip(self.data.chunks_exact(self.cols)) {
            if yi != 0.0 {
                for (o, w) in out.iter_mut().zip(row) {
                    *o += yi * w;
                }
            }
        }
    }

    /// `self += a bᵀ`
    pub fn outer_acc(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        if self.cols == 0 {
            return;
        }
        for (&ai, row) in a.iter().zip(self.data.chunks_exact_mut(self.cols)) {
            if ai != 0.0 {
                for (w, bj) in row.iter_mut().zip(b) {
                    *w += ai * bj;
                }
            }
        }
    }

    pub fn min_entry(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Elementwise nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Softplus,
    Identity,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Softplus => softplus(x),
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative with respect to the pre-activation. ReLU uses the zero-side
    /// convention at the kink: `d/dx relu(0) = 0`.
    #[inline]
    pub fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus => sigmoid(pre),
            Activation::Identity => 1.0,
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
        }
    }

    /// Whether composing with this activation preserves convexity of a
    /// convex argument.
    pub fn is_convex_nondecreasing(self) -> bool {
        matches!(
            self,
            Activation::Relu | Activation::Softplus | Activation::Identity
        )
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Uniform init bound `1/sqrt(fan_in)`.
pub fn init_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in.max(1) as f64).sqrt()
}

/// Anything that owns a fixed, ordered list of trainable `f64` slices.
///
/// The order of [`ParamVec::param_slices`] and
/// [`ParamVec::param_slices_mut`] must agree; the flat vector is their
/// concatenation.
pub trait ParamVec {
    fn param_slices(&self) -> Vec<&[f64]>;
    fn param_slices_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for s in self.param_slices() {
            out.extend_from_slice(s);
        }
        out
    }

    fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        check_dim("flat parameter vector", self.num_params(), flat.len())?;
        let mut offset = 0;
        for s in self.param_slices_mut() {
            let n = s.len();
            s.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    fn fill(&mut self, value: f64) {
        for s in self.param_slices_mut() {
            s.fill(value);
        }
    }

    /// `self += scale * other`, elementwise.
    fn add_scaled(&mut self, other: &Self, scale: f64)
    where
        Self: Sized,
    {
        let theirs = other.param_slices();
        for (mine, theirs) in self.param_slices_mut().into_iter().zip(theirs) {
            for (x, y) in mine.iter_mut().zip(theirs) {
                *x += scale * y;
            }
        }
    }

    /// `self ← tau * source + (1 - tau) * self`.
    fn blend_from(&mut self, source: &Self, tau: f64)
    where
        Self: Sized,
    {
        let theirs = source.param_slices();
        for (mine, theirs) in self.param_slices_mut().into_iter().zip(theirs) {
            for (x, y) in mine.iter_mut().zip(theirs) {
                *x = tau * y + (1.0 - tau) * *x;
            }
        }
    }

    fn all_finite(&self) -> bool {
        self.param_slices()
            .iter()
            .all(|s| s.iter().all(|x| x.is_finite()))
    }
}

/// Fully connected layer `y = g(W x + b)` with `W` of shape out×in.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weight: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        check_dim("dense layer bias", weight.rows(), bias.len())?;
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        Self {
            weight: Matrix::zeros(output, input),
            bias: vec![0.0; output],
            activation,
        }
    }

    pub fn uniform<R: Rng + ?Sized>(
        input: usize,
        output: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let bound = init_bound(input);
        let weight = Matrix::uniform(output, input, bound, rng);
        let bias = (0..output)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Self {
            weight,
            bias,
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        let mut pre = self.bias.clone();
        self.weight.matvec_acc(x, &mut pre);
        pre
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("dense layer input", self.input_dim(), x.len())?;
        let mut y = self.pre_activation(x);
        for v in &mut y {
            *v = self.activation.apply(*v);
        }
        Ok(y)
    }

    /// Given the layer input, its pre-activation and `dL/dy`, accumulate
    /// parameter gradients into `grad` and return `dL/dx`.
    pub(crate) fn backward_acc(
        &self,
        x: &[f64],
        pre: &[f64],
        upstream: &[f64],
        grad: &mut DenseLayer,
    ) -> Vec<f64> {
        let delta: Vec<f64> = upstream
            .iter()
            .zip(pre)
            .map(|(u, p)| u * self.activation.derivative(*p))
            .collect();
        grad.weight.outer_acc(&delta, x);
        for (b, d) in grad.bias.iter_mut().zip(&delta) {
            *b += d;
        }
        let mut gx = vec![0.0; self.input_dim()];
        self.weight.matvec_t_acc(&delta, &mut gx);
        gx
    }
}

impl ParamVec for DenseLayer {
    fn param_slices(&self) -> Vec<&[f64]> {
        vec![self.weight.as_slice(), &self.bias]
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.weight.as_mut_slice(), &mut self.bias]
    }
}

/// Multi-layer perceptron. Used by the baseline actor.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

/// Gradient container with the same shape as the network.
pub type MlpGrad = Mlp;

impl Mlp {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("nets", "an MLP needs at least one layer"));
        }
        for pair in layers.windows(2) {
            check_dim("mlp layer chain", pair[0].output_dim(), pair[1].input_dim())?;
        }
        Ok(Self { layers })
    }

    /// Seeded uniform init. `sizes` lists every width including input and
    /// output; hidden layers use `hidden`, the last layer `output`.
    pub fn uniform<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::config("nets", "an MLP needs input and output sizes"));
        }
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                DenseLayer::uniform(sizes[i], sizes[i + 1], act, rng)
            })
            .collect();
        Self::new(layers)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    /// Layer widths, input first.
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.output_dim()));
        s
    }

    pub fn zeros_like(&self) -> MlpGrad {
        let mut g = self.clone();
        g.fill(0.0);
        g
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("mlp input", self.input_dim(), x.len())?;
        let mut h = x.to_vec();
        for layer in &self.layers {
            h = layer.forward(&h)?;
        }
        Ok(h)
    }

    /// Reverse-mode gradients of `⟨upstream, forward(x)⟩` with respect to all
    /// parameters and to `x`.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<(MlpGrad, Vec<f64>)> {
        check_dim("mlp input", self.input_dim(), x.len())?;
        check_dim("mlp upstream", self.output_dim(), upstream.len())?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pres = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for layer in &self.layers {
            let pre = layer.pre_activation(&h);
            let next = pre.iter().map(|&p| layer.activation.apply(p)).collect();
            inputs.push(h);
            pres.push(pre);
            h = next;
        }
        let mut grad = self.zeros_like();
        let mut g = upstream.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            g = layer.backward_acc(&inputs[i], &pres[i], &g, &mut grad.layers[i]);
        }
        Ok((grad, g))
    }
}

impl ParamVec for Mlp {
    fn param_slices(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| l.param_slices()).collect()
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.param_slices_mut())
            .collect()
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(dim: usize, lr: f64) -> Self {
        Self {
            step: 0,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    /// One Adam update of a flat parameter vector.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        check_dim("adam params", self.dim(), params.len())?;
        check_dim("adam grads", self.dim(), grads.len())?;
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Divergence(format!(
                "non-finite gradient at index {i}"
            )));
        }
        self.step += 1;
        let (bc1, bc2) = self.bias_corrections();
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *p -= adam_coordinate(
                *g, m, v, self.beta1, self.beta2, self.eps, self.lr, bc1, bc2,
            );
        }
        Ok(())
    }

    /// Adam update applied slice-by-slice to a network, using a gradient
    /// container of identical shape.
    pub fn step_params<P: ParamVec>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let gs = grads.param_slices();
        let total: usize = gs.iter().map(|s| s.len()).sum();
        check_dim("adam grads", self.dim(), total)?;
        for (k, s) in gs.iter().enumerate() {
            if let Some(i) = s.iter().position(|g| !g.is_finite()) {
                return Err(Error::Divergence(format!(
                    "non-finite gradient in parameter group {k} at index {i}"
                )));
            }
        }
        self.step += 1;
        let (bc1, bc2) = self.bias_corrections();
        let mut offset = 0;
        for (ps, gs) in params.param_slices_mut().into_iter().zip(gs) {
            let n = ps.len();
            let ms = &mut self.m[offset..offset + n];
            let vs = &mut self.v[offset..offset + n];
            for (((p, g), m), v) in ps.iter_mut().zip(gs).zip(ms).zip(vs) {
                *p -= adam_coordinate(
                    *g, m, v, self.beta1, self.beta2, self.eps, self.lr, bc1, bc2,
                );
            }
            offset += n;
        }
        Ok(())
    }

    fn bias_corrections(&self) -> (f64, f64) {
        let t = self.step as i32;
        (1.0 - self.beta1.powi(t), 1.0 - self.beta2.powi(t))
    }
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn adam_coordinate(
    g: f64,
    m: &mut f64,
    v: &mut f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    lr: f64,
    bc1: f64,
    bc2: f64,
) -> f64 {
    *m = beta1 * *m + (1.0 - beta1) * g;
    *v = beta2 * *v + (1.0 - beta2) * g * g;
    let m_hat = *m / bc1;
    let v_hat = *v / bc2;
    lr * m_hat / (v_hat.sqrt() + eps)
}
