//! Partially input-convex network `f(s, a)`: convex in the action `a`,
//! unrestricted in the state `s`.
//!
//! Two paths run side by side. The state path is an ordinary MLP,
//! `u₀ = s, uᵢ₊₁ = g̃ᵢ(W̃ᵢ uᵢ + b̃ᵢ)`. The convex path starts with
//! `z₁ = g₀(W₀ᶻˢ s + W₀ᶻᵃ a + b₀)` and continues with
//! `zᵢ₊₁ = gᵢ(Wᵢᶻᵘ uᵢ + Wᵢᶻᵃ a + Wᵢᶻᶻ zᵢ + bᵢ)`. The last `z` is the output,
//! one entry per head.
//!
//! Convexity in `a` holds whenever every `Wᶻᶻ` is elementwise nonnegative and
//! every convex-path activation is convex and non-decreasing. The activation
//! rule is checked at construction; the weight rule is restored by
//! [`PicnnParams::project_constraints`] after each optimizer step.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::nn::{init_bound, Activation, DenseLayer, Matrix, ParamVec};

/// Structural description of a PICNN; enough to rebuild one from a flat
/// parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PicnnShape {
    pub state_dim: usize,
    pub action_dim: usize,
    pub width: usize,
    /// Number of state-path layers, which equals the number of convex-path
    /// layers after the first.
    pub depth: usize,
    pub heads: usize,
    pub state_activation: Activation,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

impl PicnnShape {
    pub fn new(state_dim: usize, action_dim: usize, width: usize, heads: usize) -> Self {
        Self {
            state_dim,
            action_dim,
            width,
            depth: 2,
            heads,
            state_activation: Activation::Relu,
            hidden_activation: Activation::Relu,
            output_activation: Activation::Identity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.action_dim == 0 || self.heads == 0 {
            return Err(Error::config("nets", "picnn dimensions must be positive"));
        }
        if self.width == 0 || self.depth == 0 {
            return Err(Error::config(
                "nets.picnn_width",
                "picnn width and depth must be positive",
            ));
        }
        for (key, act) in [
            ("nets.z_activation", self.hidden_activation),
            ("nets.z_output_activation", self.output_activation),
        ] {
            if !act.is_convex_nondecreasing() {
                return Err(Error::config(
                    key,
                    format!("{act:?} is not convex and non-decreasing"),
                ));
            }
        }
        Ok(())
    }
}

/// One convex-path layer after the first.
#[derive(Clone, Debug, PartialEq)]
pub struct ZLayer {
    pub w_zu: Matrix,
    pub w_za: Matrix,
    pub w_zz: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl ParamVec for ZLayer {
    fn param_slices(&self) -> Vec<&[f64]> {
        vec![
            self.w_zu.as_slice(),
            self.w_za.as_slice(),
            self.w_zz.as_slice(),
            &self.bias,
        ]
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w_zu.as_mut_slice(),
            self.w_za.as_mut_slice(),
            self.w_zz.as_mut_slice(),
            &mut self.bias,
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PicnnParams {
    pub shape: PicnnShape,
    pub state_path: Vec<DenseLayer>,
    pub w_zs: Matrix,
    pub w_za0: Matrix,
    pub b0: Vec<f64>,
    pub g0: Activation,
    pub layers: Vec<ZLayer>,
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Clone, Debug)]
struct Trace {
    /// `u₀ = s, u₁, …, u_depth`
    us: Vec<Vec<f64>>,
    u_pres: Vec<Vec<f64>>,
    /// pre-activations of `z₁ … z_{depth+1}`
    z_pres: Vec<Vec<f64>>,
    /// `z₁ … z_{depth+1}`
    zs: Vec<Vec<f64>>,
}

impl PicnnParams {
    /// All-zero network of the given shape.
    pub fn zeros(shape: PicnnShape) -> Result<Self> {
        shape.validate()?;
        let w = shape.width;
        let mut state_path = Vec::with_capacity(shape.depth);
        let mut u_dim = shape.state_dim;
        for _ in 0..shape.depth {
            state_path.push(DenseLayer::zeros(u_dim, w, shape.state_activation));
            u_dim = w;
        }
        let layers = (0..shape.depth)
            .map(|i| {
                let out = if i + 1 == shape.depth { shape.heads } else { w };
                let act = if i + 1 == shape.depth {
                    shape.output_activation
                } else {
                    shape.hidden_activation
                };
                ZLayer {
                    w_zu: Matrix::zeros(out, w),
                    w_za: Matrix::zeros(out, shape.action_dim),
                    w_zz: Matrix::zeros(out, w),
                    bias: vec![0.0; out],
                    activation: act,
                }
            })
            .collect();
        Ok(Self {
            w_zs: Matrix::zeros(w, shape.state_dim),
            w_za0: Matrix::zeros(w, shape.action_dim),
            b0: vec![0.0; w],
            g0: shape.hidden_activation,
            state_path,
            layers,
            shape,
        })
    }

    /// Seeded uniform init in `±1/√fan_in` per layer, then projected so the
    /// convexity constraints hold from the start.
    pub fn new<R: Rng + ?Sized>(shape: PicnnShape, strict: bool, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(shape)?;
        for layer in &mut p.state_path {
            *layer =
                DenseLayer::uniform(layer.input_dim(), layer.output_dim(), layer.activation, rng);
        }
        let fan0 = p.shape.state_dim + p.shape.action_dim;
        let b = init_bound(fan0);
        p.w_zs = Matrix::uniform(p.w_zs.rows(), p.w_zs.cols(), b, rng);
        p.w_za0 = Matrix::uniform(p.w_za0.rows(), p.w_za0.cols(), b, rng);
        p.b0.iter_mut().for_each(|x| *x = rng.random_range(-b..=b));
        for layer in &mut p.layers {
            let fan = layer.w_zu.cols() + layer.w_za.cols() + layer.w_zz.cols();
            let b = init_bound(fan);
            layer.w_zu = Matrix::uniform(layer.w_zu.rows(), layer.w_zu.cols(), b, rng);
            layer.w_za = Matrix::uniform(layer.w_za.rows(), layer.w_za.cols(), b, rng);
            layer.w_zz = Matrix::uniform(layer.w_zz.rows(), layer.w_zz.cols(), b, rng);
            layer
                .bias
                .iter_mut()
                .for_each(|x| *x = rng.random_range(-b..=b));
        }
        p.project_constraints(strict);
        Ok(p)
    }

    pub fn state_dim(&self) -> usize {
        self.shape.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.shape.action_dim
    }

    pub fn heads(&self) -> usize {
        self.shape.heads
    }

    pub fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        g.fill(0.0);
        g
    }

    fn check_inputs(&self, s: &[f64], a: &[f64]) -> Result<()> {
        check_dim("picnn state", self.state_dim(), s.len())?;
        check_dim("picnn action", self.action_dim(), a.len())
    }

    fn trace(&self, s: &[f64], a: &[f64]) -> Trace {
        let mut us = Vec::with_capacity(self.shape.depth + 1);
        let mut u_pres = Vec::with_capacity(self.shape.depth);
        us.push(s.to_vec());
        for layer in &self.state_path {
            let pre = layer.pre_activation(us.last().unwrap());
            us.push(pre.iter().map(|&p| layer.activation.apply(p)).collect());
            u_pres.push(pre);
        }

        let mut z_pres = Vec::with_capacity(self.shape.depth + 1);
        let mut zs = Vec::with_capacity(self.shape.depth + 1);
        let mut pre = self.b0.clone();
        self.w_zs.matvec_acc(s, &mut pre);
        self.w_za0.matvec_acc(a, &mut pre);
        zs.push(pre.iter().map(|&p| self.g0.apply(p)).collect::<Vec<_>>());
        z_pres.push(pre);
        for (i, layer) in self.layers.iter().enumerate() {
            let mut pre = layer.bias.clone();
            layer.w_zu.matvec_acc(&us[i + 1], &mut pre);
            layer.w_za.matvec_acc(a, &mut pre);
            layer.w_zz.matvec_acc(zs.last().unwrap(), &mut pre);
            zs.push(pre.iter().map(|&p| layer.activation.apply(p)).collect());
            z_pres.push(pre);
        }
        Trace {
            us,
            u_pres,
            z_pres,
            zs,
        }
    }

    /// Network output, one value per head.
    pub fn forward(&self, s: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        self.check_inputs(s, a)?;
        Ok(self.trace(s, a).zs.pop().unwrap())
    }

    /// Smallest distance of any ReLU pre-activation, on either path, to zero.
    pub fn kink_margin(&self, s: &[f64], a: &[f64]) -> Result<f64> {
        self.check_inputs(s, a)?;
        let tr = self.trace(s, a);
        let mut margin = f64::INFINITY;
        let mut scan = |act: Activation, pre: &[f64]| {
            if act == Activation::Relu {
                margin = pre.iter().fold(margin, |m, p| m.min(p.abs()));
            }
        };
        for (layer, pre) in self.state_path.iter().zip(&tr.u_pres) {
            scan(layer.activation, pre);
        }
        scan(self.g0, &tr.z_pres[0]);
        for (layer, pre) in self.layers.iter().zip(&tr.z_pres[1..]) {
            scan(layer.activation, pre);
        }
        Ok(margin)
    }

    /// Reverse-mode gradients of `⟨upstream, forward(s, a)⟩` with respect to
    /// every parameter, to `s` and to `a`.
    pub fn backward(
        &self,
        s: &[f64],
        a: &[f64],
        upstream: &[f64],
    ) -> Result<(PicnnParams, Vec<f64>, Vec<f64>)> {
        self.check_inputs(s, a)?;
        check_dim("picnn upstream", self.heads(), upstream.len())?;
        let mut grad = self.zeros_like();
        let (gs, ga) = self.backward_acc(s, a, upstream, &mut grad);
        Ok((grad, gs, ga))
    }

    /// Like [`PicnnParams::backward`] but accumulates into an existing
    /// gradient container. Inputs are assumed to be dimension-checked.
    pub(crate) fn backward_acc(
        &self,
        s: &[f64],
        a: &[f64],
        upstream: &[f64],
        grad: &mut PicnnParams,
    ) -> (Vec<f64>, Vec<f64>) {
        let tr = self.trace(s, a);
        let depth = self.shape.depth;
        let mut ga = vec![0.0; self.action_dim()];
        let mut gus: Vec<Vec<f64>> = tr.us.iter().map(|u| vec![0.0; u.len()]).collect();

        let mut gz = upstream.to_vec();
        for i in (0..depth).rev() {
            let layer = &self.layers[i];
            let gl = &mut grad.layers[i];
            let delta: Vec<f64> = gz
                .iter()
                .zip(&tr.z_pres[i + 1])
                .map(|(g, p)| g * layer.activation.derivative(*p))
                .collect();
            gl.w_zu.outer_acc(&delta, &tr.us[i + 1]);
            gl.w_za.outer_acc(&delta, a);
            gl.w_zz.outer_acc(&delta, &tr.zs[i]);
            for (b, d) in gl.bias.iter_mut().zip(&delta) {
                *b += d;
            }
            layer.w_za.matvec_t_acc(&delta, &mut ga);
            layer.w_zu.matvec_t_acc(&delta, &mut gus[i + 1]);
            let mut next = vec![0.0; tr.zs[i].len()];
            layer.w_zz.matvec_t_acc(&delta, &mut next);
            gz = next;
        }

        let delta0: Vec<f64> = gz
            .iter()
            .zip(&tr.z_pres[0])
            .map(|(g, p)| g * self.g0.derivative(*p))
            .collect();
        grad.w_zs.outer_acc(&delta0, s);
        grad.w_za0.outer_acc(&delta0, a);
        for (b, d) in grad.b0.iter_mut().zip(&delta0) {
            *b += d;
        }
        self.w_za0.matvec_t_acc(&delta0, &mut ga);
        let mut gs = vec![0.0; self.state_dim()];
        self.w_zs.matvec_t_acc(&delta0, &mut gs);

        for i in (0..depth).rev() {
            let upstream_u = std::mem::take(&mut gus[i + 1]);
            let gx = self.state_path[i].backward_acc(
                &tr.us[i],
                &tr.u_pres[i],
                &upstream_u,
                &mut grad.state_path[i],
            );
            for (acc, g) in gus[i].iter_mut().zip(gx) {
                *acc += g;
            }
        }
        for (acc, g) in gs.iter_mut().zip(&gus[0]) {
            *acc += g;
        }
        (gs, ga)
    }

    /// Precompute everything that depends only on the state, so repeated
    /// evaluations over actions only touch the convex path.
    pub fn bind(&self, s: &[f64]) -> Result<BoundPicnn<'_>> {
        check_dim("picnn state", self.state_dim(), s.len())?;
        let mut u = s.to_vec();
        let mut us = Vec::with_capacity(self.shape.depth);
        for layer in &self.state_path {
            u = layer.forward(&u)?;
            us.push(u.clone());
        }
        let mut c0 = self.b0.clone();
        self.w_zs.matvec_acc(s, &mut c0);
        let consts = self
            .layers
            .iter()
            .zip(&us)
            .map(|(layer, u)| {
                let mut c = layer.bias.clone();
                layer.w_zu.matvec_acc(u, &mut c);
                c
            })
            .collect();
        Ok(BoundPicnn {
            net: self,
            c0,
            consts,
        })
    }

    /// Gradient of `⟨head_weights, forward(s, a)⟩` with respect to `a`.
    pub fn grad_action(&self, s: &[f64], a: &[f64], head_weights: &[f64]) -> Result<Vec<f64>> {
        check_dim("picnn head weights", self.heads(), head_weights.len())?;
        let bound = self.bind(s)?;
        check_dim("picnn action", self.action_dim(), a.len())?;
        Ok(bound.eval_grad(a, head_weights).1)
    }

    /// Clamp every `Wᶻᶻ` entry at zero. With `strict`, also clamp the
    /// action weights `W₀ᶻᵃ` and every `Wᵢᶻᵃ`.
    pub fn project_constraints(&mut self, strict: bool) {
        for layer in &mut self.layers {
            clamp_nonneg(layer.w_zz.as_mut_slice());
            if strict {
                clamp_nonneg(layer.w_za.as_mut_slice());
            }
        }
        if strict {
            clamp_nonneg(self.w_za0.as_mut_slice());
        }
    }

    /// Smallest entry across all `Wᶻᶻ` matrices.
    pub fn min_wzz(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.w_zz.min_entry())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn satisfies_constraints(&self, strict: bool) -> bool {
        let action_ok = !strict
            || (self.w_za0.min_entry() >= 0.0
                && self.layers.iter().all(|l| l.w_za.min_entry() >= 0.0));
        self.min_wzz() >= 0.0 && action_ok
    }
}

fn clamp_nonneg(xs: &mut [f64]) {
    for x in xs {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

impl ParamVec for PicnnParams {
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = self
            .state_path
            .iter()
            .flat_map(|l| l.param_slices())
            .collect();
        v.push(self.w_zs.as_slice());
        v.push(self.w_za0.as_slice());
        v.push(&self.b0);
        v.extend(self.layers.iter().flat_map(|l| l.param_slices()));
        v
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = self
            .state_path
            .iter_mut()
            .flat_map(|l| l.param_slices_mut())
            .collect();
        v.push(self.w_zs.as_mut_slice());
        v.push(self.w_za0.as_mut_slice());
        v.push(&mut self.b0);
        v.extend(self.layers.iter_mut().flat_map(|l| l.param_slices_mut()));
        v
    }
}

/// A PICNN with its state fixed; cheap to evaluate over many actions.
#[derive(Clone, Debug)]
pub struct BoundPicnn<'a> {
    net: &'a PicnnParams,
    c0: Vec<f64>,
    consts: Vec<Vec<f64>>,
}

impl BoundPicnn<'_> {
    pub fn heads(&self) -> usize {
        self.net.heads()
    }

    /// Output per head. `a` must have the network's action dimension.
    pub fn eval(&self, a: &[f64]) -> Vec<f64> {
        debug_assert_eq!(a.len(), self.net.action_dim());
        let mut pre = self.c0.clone();
        self.net.w_za0.matvec_acc(a, &mut pre);
        let mut z: Vec<f64> = pre.iter().map(|&p| self.net.g0.apply(p)).collect();
        for (layer, c) in self.net.layers.iter().zip(&self.consts) {
            let mut pre = c.clone();
            layer.w_za.matvec_acc(a, &mut pre);
            layer.w_zz.matvec_acc(&z, &mut pre);
            z = pre.iter().map(|&p| layer.activation.apply(p)).collect();
        }
        z
    }

    /// Output per head and the action gradient of `⟨head_weights, output⟩`.
    pub fn eval_grad(&self, a: &[f64], head_weights: &[f64]) -> (Vec<f64>, Vec<f64>) {
        debug_assert_eq!(a.len(), self.net.action_dim());
        debug_assert_eq!(head_weights.len(), self.net.heads());
        let n = self.net.layers.len();
        let mut pres = Vec::with_capacity(n + 1);
        let mut zs = Vec::with_capacity(n + 1);
        let mut pre = self.c0.clone();
        self.net.w_za0.matvec_acc(a, &mut pre);
        zs.push(
            pre.iter()
                .map(|&p| self.net.g0.apply(p))
                .collect::<Vec<_>>(),
        );
        pres.push(pre);
        for (layer, c) in self.net.layers.iter().zip(&self.consts) {
            let mut pre = c.clone();
            layer.w_za.matvec_acc(a, &mut pre);
            layer.w_zz.matvec_acc(zs.last().unwrap(), &mut pre);
            zs.push(pre.iter().map(|&p| layer.activation.apply(p)).collect());
            pres.push(pre);
        }

        let mut ga = vec![0.0; a.len()];
        let mut gz = head_weights.to_vec();
        for i in (0..n).rev() {
            let layer = &self.net.layers[i];
            let delta: Vec<f64> = gz
                .iter()
                .zip(&pres[i + 1])
                .map(|(g, p)| g * layer.activation.derivative(*p))
                .collect();
            layer.w_za.matvec_t_acc(&delta, &mut ga);
            let mut next = vec![0.0; zs[i].len()];
            layer.w_zz.matvec_t_acc(&delta, &mut next);
            gz = next;
        }
        let delta0: Vec<f64> = gz
            .iter()
            .zip(&pres[0])
            .map(|(g, p)| g * self.net.g0.derivative(*p))
            .collect();
        self.net.w_za0.matvec_t_acc(&delta0, &mut ga);
        (zs.pop().unwrap(), ga)
    }

    /// Smallest distance of any convex-path pre-activation to zero. Finite
    /// differences are only trustworthy when this is not tiny.
    pub fn kink_margin(&self, a: &[f64]) -> f64 {
        let mut margin = f64::INFINITY;
        let mut pre = self.c0.clone();
        self.net.w_za0.matvec_acc(a, &mut pre);
        if self.net.g0 == Activation::Relu {
            margin = pre.iter().fold(margin, |m, p| m.min(p.abs()));
        }
        let mut z: Vec<f64> = pre.iter().map(|&p| self.net.g0.apply(p)).collect();
        for (layer, c) in self.net.layers.iter().zip(&self.consts) {
            let mut pre = c.clone();
            layer.w_za.matvec_acc(a, &mut pre);
            layer.w_zz.matvec_acc(&z, &mut pre);
            if layer.activation == Activation::Relu {
                margin = pre.iter().fold(margin, |m, p| m.min(p.abs()));
            }
            z = pre.iter().map(|&p| layer.activation.apply(p)).collect();
        }
        margin
    }
}
