//! Reward and safety critics built on PICNNs, their target copies, and the
//! TD3-style regression updates.
//!
//! The reward PICNN stores `−Q_r / value_scale` so that the policy objective
//! is convex in the action. The safety PICNN has two heads: the first is the
//! mean cost-return, the second passes through a softplus and a floor to give
//! its std.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::Transition;
use crate::error::{check_dim, Error, Result};
use crate::nn::{sigmoid, softplus, AdamState, ParamVec};
use crate::par::Execution;
use crate::picnn::{PicnnParams, PicnnShape};
use crate::risk::GaussianCostReturn;
use crate::solver::ActionBox;

/// Samples per accumulation chunk in batch updates. Fixed so that gradient
/// sums are identical for any thread count.
const GRAD_CHUNK: usize = 16;

/// Affine input normalization applied before every network call. States are
/// divided by `state_scale`; actions are mapped from the action box onto
/// `[-1, 1]`. Both maps are increasing, so convexity in the action survives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub state_scale: Vec<f64>,
    pub action_center: Vec<f64>,
    pub action_half: Vec<f64>,
}

impl Normalizer {
    pub fn identity(state_dim: usize, action_dim: usize) -> Self {
        Self {
            state_scale: vec![1.0; state_dim],
            action_center: vec![0.0; action_dim],
            action_half: vec![1.0; action_dim],
        }
    }

    pub fn for_box(state_scale: Vec<f64>, bounds: &ActionBox) -> Self {
        Self {
            state_scale,
            action_center: bounds.center(),
            action_half: bounds.half_width(),
        }
    }

    pub fn state(&self, s: &[f64]) -> Vec<f64> {
        s.iter()
            .zip(&self.state_scale)
            .map(|(x, k)| x / k)
            .collect()
    }

    pub fn action(&self, a: &[f64]) -> Vec<f64> {
        a.iter()
            .zip(&self.action_center)
            .zip(&self.action_half)
            .map(|((x, c), h)| (x - c) / h)
            .collect()
    }

    /// Chain rule from normalized-action gradient to raw-action gradient.
    pub fn action_grad_to_raw(&self, g: &mut [f64]) {
        for (x, h) in g.iter_mut().zip(&self.action_half) {
            *x /= h;
        }
    }
}

/// Gaussian smoothing noise on bootstrap actions, in units of the half box
/// width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetNoise {
    pub std: f64,
    pub clip: f64,
}

impl Default for TargetNoise {
    fn default() -> Self {
        Self {
            std: 0.2,
            clip: 0.5,
        }
    }
}

/// Next-state actions for bootstrapping: `action_fn(transition)` (evaluated
/// with `exec`) plus clipped Gaussian smoothing noise, clipped to `bounds`.
/// Noise is drawn sequentially from `rng` in batch order.
pub fn bootstrap_actions<F, R>(
    batch: &[&Transition],
    action_fn: F,
    noise: &TargetNoise,
    bounds: &ActionBox,
    exec: Execution,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&Transition) -> Result<Vec<f64>> + Sync + Send,
    R: Rng + ?Sized,
{
    let base: Vec<Result<Vec<f64>>> = exec.map(batch, |t| action_fn(t));
    let half = bounds.half_width();
    let mut out = Vec::with_capacity(batch.len());
    for a in base {
        let mut a = a?;
        for (j, x) in a.iter_mut().enumerate() {
            if noise.std > 0.0 {
                let z: f64 = StandardNormal.sample(rng);
                let eps = (noise.std * z).clamp(-noise.clip, noise.clip);
                *x += eps * half[j];
            }
        }
        bounds.clamp(&mut a);
        out.push(a);
    }
    Ok(out)
}

/// Twin reward critics with target copies.
#[derive(Clone, Debug)]
pub struct RewardCritic {
    pub net1: PicnnParams,
    pub net2: PicnnParams,
    pub target1: PicnnParams,
    pub target2: PicnnParams,
    pub norm: Normalizer,
    pub value_scale: f64,
    pub strict: bool,
    pub exec: Execution,
    opt1: AdamState,
    opt2: AdamState,
}

impl RewardCritic {
    pub fn new<R: Rng + ?Sized>(
        shape: PicnnShape,
        norm: Normalizer,
        value_scale: f64,
        lr: f64,
        strict: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let mut shape = shape;
        shape.heads = 1;
        let net1 = PicnnParams::new(shape.clone(), strict, rng)?;
        let net2 = PicnnParams::new(shape, strict, rng)?;
        Ok(Self::from_nets(net1, net2, norm, value_scale, lr, strict))
    }

    /// Wrap existing online networks; targets start as exact copies.
    pub fn from_nets(
        net1: PicnnParams,
        net2: PicnnParams,
        norm: Normalizer,
        value_scale: f64,
        lr: f64,
        strict: bool,
    ) -> Self {
        let opt1 = AdamState::new(net1.num_params(), lr);
        let opt2 = AdamState::new(net2.num_params(), lr);
        Self {
            target1: net1.clone(),
            target2: net2.clone(),
            net1,
            net2,
            norm,
            value_scale,
            strict,
            exec: Execution::default(),
            opt1,
            opt2,
        }
    }

    fn q_of(&self, net: &PicnnParams, s: &[f64], a: &[f64]) -> Result<f64> {
        let out = net.forward(&self.norm.state(s), &self.norm.action(a))?;
        Ok(-self.value_scale * out[0])
    }

    /// `Q_r(s, a)` from the online twins: the first twin, or the minimum of
    /// both when `use_min_of_twins` is set.
    pub fn reward_q(&self, s: &[f64], a: &[f64], use_min_of_twins: bool) -> Result<f64> {
        let q1 = self.q_of(&self.net1, s, a)?;
        if use_min_of_twins {
            Ok(q1.min(self.q_of(&self.net2, s, a)?))
        } else {
            Ok(q1)
        }
    }

    /// Minimum of the two target twins.
    pub fn target_q(&self, s: &[f64], a: &[f64]) -> Result<f64> {
        Ok(self
            .q_of(&self.target1, s, a)?
            .min(self.q_of(&self.target2, s, a)?))
    }

    /// TD3 regression of both twins onto
    /// `y = r + γ(1−done)·min(target twins at (s′, ã′))`. Returns the sum
    /// of the twins' mean squared errors before the step.
    pub fn update(
        &mut self,
        batch: &[&Transition],
        next_actions: &[Vec<f64>],
        gamma: f64,
    ) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::config("train.batch_size", "batch must be nonempty"));
        }
        check_dim("bootstrap actions", batch.len(), next_actions.len())?;
        let pairs: Vec<(&Transition, &Vec<f64>)> =
            batch.iter().copied().zip(next_actions).collect();
        let targets: Vec<Result<f64>> = self.exec.map(&pairs, |(t, na)| {
            let bootstrap = if t.done {
                0.0
            } else {
                self.target_q(&t.s_next, na)?
            };
            Ok(t.r + gamma * bootstrap)
        });
        let targets = targets.into_iter().collect::<Result<Vec<f64>>>()?;

        let n = batch.len() as f64;
        let items: Vec<(&Transition, f64)> = batch.iter().copied().zip(targets).collect();
        let scale = self.value_scale;
        let norm = &self.norm;
        let (net1, net2) = (&self.net1, &self.net2);
        let partials = self.exec.map_chunks(&items, GRAD_CHUNK, |chunk| {
            let mut g1 = net1.zeros_like();
            let mut g2 = net2.zeros_like();
            let mut loss = 0.0;
            for (t, y) in chunk {
                let s = norm.state(&t.s);
                let a = norm.action(&t.a);
                for (net, g) in [(net1, &mut g1), (net2, &mut g2)] {
                    let q = -scale * net.forward(&s, &a).expect("checked dims")[0];
                    let err = q - y;
                    loss += err * err / n;
                    net.backward_acc(&s, &a, &[-2.0 * err * scale / n], g);
                }
            }
            (loss, g1, g2)
        });
        let mut loss = 0.0;
        let mut g1 = self.net1.zeros_like();
        let mut g2 = self.net2.zeros_like();
        for (l, p1, p2) in partials {
            loss += l;
            g1.add_scaled(&p1, 1.0);
            g2.add_scaled(&p2, 1.0);
        }
        if !loss.is_finite() {
            return Err(Error::Divergence(format!("reward critic loss {loss}")));
        }
        self.opt1.step_params(&mut self.net1, &g1)?;
        self.opt2.step_params(&mut self.net2, &g2)?;
        self.net1.project_constraints(self.strict);
        self.net2.project_constraints(self.strict);
        Ok(loss)
    }

    pub fn polyak_update(&mut self, tau: f64) {
        polyak_update(&self.net1, &mut self.target1, tau, self.strict);
        polyak_update(&self.net2, &mut self.target2, tau, self.strict);
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.opt1.lr = lr;
        self.opt2.lr = lr;
    }
}

/// `target ← tau·net + (1−tau)·target`, then re-projected so the target
/// stays inside the convexity cone.
pub fn polyak_update(net: &PicnnParams, target: &mut PicnnParams, tau: f64, strict: bool) {
    debug_assert!(tau > 0.0 && tau <= 1.0);
    if tau == 1.0 {
        target.clone_from(net);
    } else {
        target.blend_from(net, tau);
    }
    target.project_constraints(strict);
}

/// Distributional safety critic: `C(s,a) ~ N(mean, std²)`.
///
/// With `twin` enabled two networks are trained on the same target and
/// aggregated by taking the larger mean and the larger std.
#[derive(Clone, Debug)]
pub struct SafetyCritic {
    pub nets: Vec<PicnnParams>,
    pub targets: Vec<PicnnParams>,
    pub std_floor: f64,
    pub norm: Normalizer,
    pub value_scale: f64,
    pub strict: bool,
    pub exec: Execution,
    opts: Vec<AdamState>,
}

/// Raw head values of one safety network at one point.
#[derive(Clone, Copy, Debug)]
pub(crate) struct SafetyHeads {
    pub mean_raw: f64,
    pub std_raw: f64,
}

impl SafetyCritic {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        shape: PicnnShape,
        norm: Normalizer,
        value_scale: f64,
        std_floor: f64,
        twin: bool,
        lr: f64,
        strict: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let mut shape = shape;
        shape.heads = 2;
        let count = if twin { 2 } else { 1 };
        let nets = (0..count)
            .map(|_| PicnnParams::new(shape.clone(), strict, rng))
            .collect::<Result<Vec<_>>>()?;
        Self::from_nets(nets, norm, value_scale, std_floor, lr, strict)
    }

    pub fn from_nets(
        nets: Vec<PicnnParams>,
        norm: Normalizer,
        value_scale: f64,
        std_floor: f64,
        lr: f64,
        strict: bool,
    ) -> Result<Self> {
        if !(std_floor > 0.0) {
            return Err(Error::config("nets.std_floor", "must be > 0"));
        }
        if nets.is_empty() || nets.iter().any(|n| n.heads() != 2) {
            return Err(Error::config(
                "nets",
                "safety critic needs two-head networks",
            ));
        }
        let opts = nets
            .iter()
            .map(|n| AdamState::new(n.num_params(), lr))
            .collect();
        Ok(Self {
            targets: nets.clone(),
            nets,
            std_floor,
            norm,
            value_scale,
            strict,
            exec: Execution::default(),
            opts,
        })
    }

    pub(crate) fn dist_from_heads(&self, h: SafetyHeads) -> GaussianCostReturn {
        GaussianCostReturn {
            mean: self.value_scale * h.mean_raw,
            std: self.value_scale * softplus(h.std_raw) + self.std_floor,
        }
    }

    fn aggregate(&self, nets: &[PicnnParams], s: &[f64], a: &[f64]) -> Result<GaussianCostReturn> {
        let (s, a) = (self.norm.state(s), self.norm.action(a));
        let mut best: Option<GaussianCostReturn> = None;
        for net in nets {
            let out = net.forward(&s, &a)?;
            let d = self.dist_from_heads(SafetyHeads {
                mean_raw: out[0],
                std_raw: out[1],
            });
            best = Some(match best {
                None => d,
                Some(b) => GaussianCostReturn {
                    mean: b.mean.max(d.mean),
                    std: b.std.max(d.std),
                },
            });
        }
        Ok(best.expect("at least one safety net"))
    }

    /// Predicted cost-return distribution from the online network(s).
    pub fn safety_dist(&self, s: &[f64], a: &[f64]) -> Result<GaussianCostReturn> {
        self.aggregate(&self.nets, s, a)
    }

    pub fn target_dist(&self, s: &[f64], a: &[f64]) -> Result<GaussianCostReturn> {
        self.aggregate(&self.targets, s, a)
    }

    /// Regress onto `N(c + γ(1−done)·mean′, (γ(1−done)·std′)²)` under the
    /// squared 2-Wasserstein loss. Returns the mean batch loss (averaged over
    /// twins) before the step.
    pub fn update(
        &mut self,
        batch: &[&Transition],
        next_actions: &[Vec<f64>],
        gamma: f64,
    ) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::config("train.batch_size", "batch must be nonempty"));
        }
        check_dim("bootstrap actions", batch.len(), next_actions.len())?;
        let pairs: Vec<(&Transition, &Vec<f64>)> =
            batch.iter().copied().zip(next_actions).collect();
        let targets: Vec<Result<GaussianCostReturn>> = self.exec.map(&pairs, |(t, na)| {
            if t.done {
                return Ok(GaussianCostReturn {
                    mean: t.c,
                    std: 0.0,
                });
            }
            let next = self.target_dist(&t.s_next, na)?;
            Ok(GaussianCostReturn {
                mean: t.c + gamma * next.mean,
                std: gamma * next.std,
            })
        });
        let targets = targets
            .into_iter()
            .collect::<Result<Vec<GaussianCostReturn>>>()?;
        let items: Vec<(&Transition, GaussianCostReturn)> =
            batch.iter().copied().zip(targets).collect();

        let n = batch.len() as f64;
        let twins = self.nets.len() as f64;
        let mut total = 0.0;
        for k in 0..self.nets.len() {
            let net = &self.nets[k];
            let norm = &self.norm;
            let scale = self.value_scale;
            let floor = self.std_floor;
            let partials = self.exec.map_chunks(&items, GRAD_CHUNK, |chunk| {
                let mut g = net.zeros_like();
                let mut loss = 0.0;
                for (t, target) in chunk {
                    let s = norm.state(&t.s);
                    let a = norm.action(&t.a);
                    let out = net.forward(&s, &a).expect("checked dims");
                    let mean = scale * out[0];
                    let std = scale * softplus(out[1]) + floor;
                    let dm = mean - target.mean;
                    let ds = std - target.std;
                    loss += (dm * dm + ds * ds) / n;
                    let up = [2.0 * dm * scale / n, 2.0 * ds * scale * sigmoid(out[1]) / n];
                    net.backward_acc(&s, &a, &up, &mut g);
                }
                (loss, g)
            });
            let mut loss = 0.0;
            let mut g = net.zeros_like();
            for (l, p) in partials {
                loss += l;
                g.add_scaled(&p, 1.0);
            }
            if !loss.is_finite() {
                return Err(Error::Divergence(format!("safety critic loss {loss}")));
            }
            self.opts[k].step_params(&mut self.nets[k], &g)?;
            self.nets[k].project_constraints(self.strict);
            total += loss / twins;
        }
        Ok(total)
    }

    pub fn polyak_update(&mut self, tau: f64) {
        for (net, target) in self.nets.iter().zip(&mut self.targets) {
            polyak_update(net, target, tau, self.strict);
        }
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        for o in &mut self.opts {
            o.lr = lr;
        }
    }
}
