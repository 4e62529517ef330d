//! The actor-free policy. For a fixed state the action minimizes
//!
//! ```text
//! J(a) = −Q_r(s, a) + κ · max{0, Γ_c(s, a) − d}
//! ```
//!
//! over the action box, where `Q_r` is the smaller of the twin reward critics
//! and `Γ_c` the closed-form CVaR of the safety critic. Every piece is convex
//! in `a`, so projected descent from any start reaches the global minimum.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::critics::{Normalizer, RewardCritic, SafetyCritic, SafetyHeads};
use crate::error::{check_dim, Error, Result};
use crate::nn::sigmoid;
use crate::picnn::{BoundPicnn, PicnnParams};
use crate::risk::{risk_coefficient, GaussianCostReturn, RiskConfig};

/// Axis-aligned action box `[low, high]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionBox {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl ActionBox {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        check_dim("action box", low.len(), high.len())?;
        if low.is_empty() || low.iter().zip(&high).any(|(l, h)| !(l <= h)) {
            return Err(Error::config("env.a_max", "action box must be nonempty"));
        }
        Ok(Self { low, high })
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn center(&self) -> Vec<f64> {
        self.low
            .iter()
            .zip(&self.high)
            .map(|(l, h)| 0.5 * (l + h))
            .collect()
    }

    pub fn half_width(&self) -> Vec<f64> {
        self.low
            .iter()
            .zip(&self.high)
            .map(|(l, h)| 0.5 * (h - l))
            .collect()
    }

    pub fn clamp(&self, a: &mut [f64]) {
        for ((x, l), h) in a.iter_mut().zip(&self.low).zip(&self.high) {
            *x = x.clamp(*l, *h);
        }
    }

    pub fn contains(&self, a: &[f64]) -> bool {
        a.len() == self.dim()
            && a.iter()
                .zip(&self.low)
                .zip(&self.high)
                .all(|((x, l), h)| *l <= *x && *x <= *h)
    }

    /// Deterministic start points: the center followed by a low-discrepancy
    /// sequence over the box.
    pub fn start_point(&self, k: usize) -> Vec<f64> {
        if k == 0 {
            return self.center();
        }
        let d = self.dim();
        // generalized golden ratio: root of x^(d+1) = x + 1
        let mut phi = 2.0f64;
        for _ in 0..32 {
            phi = (1.0 + phi).powf(1.0 / (d as f64 + 1.0));
        }
        (0..d)
            .map(|j| {
                let alpha = (1.0 / phi).powi(j as i32 + 1);
                let u = (0.5 + alpha * k as f64).fract();
                self.low[j] + u * (self.high[j] - self.low[j])
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Exact-penalty weight κ.
    pub kappa: f64,
    pub max_iters: usize,
    /// Stop once both the projected-gradient norm and the last step norm
    /// are below this.
    pub tol: f64,
    /// Initial Adam step size, relative to the half width of the action box.
    /// It decays linearly to zero over `max_iters`.
    pub lr: f64,
    /// Cutting-plane iterations run after each Adam pass. Adam stalls in the
    /// sharp valleys that ReLU kinks and the hinge create; the cuts do not.
    pub refine_iters: usize,
    /// Number of initializations used by evaluation-time solves.
    pub restarts: usize,
    /// Start rollout solves from the previous action.
    pub warm_start: bool,
    /// Iteration budget for bootstrap-target solves.
    pub target_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            kappa: 10.0,
            max_iters: 100,
            tol: 1e-6,
            lr: 0.05,
            refine_iters: 200,
            restarts: 3,
            warm_start: true,
            target_iters: 10,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa >= 0.0) {
            return Err(Error::config("solver.kappa", "must be >= 0"));
        }
        if self.max_iters == 0 {
            return Err(Error::config("solver.max_iters", "must be >= 1"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::config("solver.tol", "must be > 0"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config("solver.lr", "must be > 0"));
        }
        if self.restarts == 0 {
            return Err(Error::config("solver.restarts", "must be >= 1"));
        }
        if self.target_iters == 0 {
            return Err(Error::config("solver.target_iters", "must be >= 1"));
        }
        Ok(())
    }

    /// Same settings with a different iteration budget and a single start.
    pub fn with_budget(&self, max_iters: usize, refine_iters: usize) -> Self {
        Self {
            max_iters,
            refine_iters,
            restarts: 1,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverResult {
    pub action: Vec<f64>,
    pub objective: f64,
    /// Iterations summed over all restarts.
    pub iterations: usize,
    /// Whether the returned run met the stopping tolerance.
    pub converged: bool,
    /// `max{0, Γ_c − d}` at the returned action.
    pub constraint_violation: f64,
    /// Final objective of each restart, in start order.
    pub restart_objectives: Vec<f64>,
}

/// A function of the action that the box solver can minimize.
pub trait Objective {
    fn dim(&self) -> usize;

    fn value(&self, a: &[f64]) -> f64 {
        self.value_grad(a).0
    }

    /// Value and a (sub)gradient.
    fn value_grad(&self, a: &[f64]) -> (f64, Vec<f64>);

    fn constraint_violation(&self, _a: &[f64]) -> f64 {
        0.0
    }
}

/// Projected Adam over the box from each start in turn; returns the best
/// iterate seen across all runs.
pub fn minimize<O: Objective + ?Sized>(
    obj: &O,
    bounds: &ActionBox,
    cfg: &SolverConfig,
    warm: Option<&[f64]>,
) -> Result<SolverResult> {
    check_dim("solver dimension", bounds.dim(), obj.dim())?;
    let half = bounds.half_width();
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);

    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    let mut restart_objectives = Vec::with_capacity(cfg.restarts);
    let mut iterations = 0;
    for k in 0..cfg.restarts.max(1) {
        let mut x = match (k, warm) {
            (0, Some(w)) => {
                check_dim("warm start", bounds.dim(), w.len())?;
                w.to_vec()
            }
            (k, _) => bounds.start_point(k),
        };
        bounds.clamp(&mut x);
        let (mut f, mut g) = obj.value_grad(&x);
        ensure_finite(f, &g)?;
        let mut run_best = (x.clone(), f);
        let mut m = vec![0.0; x.len()];
        let mut v = vec![0.0; x.len()];
        let mut converged = false;
        for t in 1..=cfg.max_iters {
            iterations += 1;
            // Linear anneal to zero: early steps can cross the box, late
            // steps are small enough to settle on a kink.
            let lr = cfg.lr * (1.0 - (t - 1) as f64 / cfg.max_iters as f64);
            let bc1 = 1.0 - b1_pow(b1, t);
            let bc2 = 1.0 - b1_pow(b2, t);
            let mut step_sq = 0.0;
            for j in 0..x.len() {
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                let step = lr * half[j] * (m[j] / bc1) / ((v[j] / bc2).sqrt() + eps);
                let nx = (x[j] - step).clamp(bounds.low[j], bounds.high[j]);
                step_sq += (nx - x[j]) * (nx - x[j]);
                x[j] = nx;
            }
            (f, g) = obj.value_grad(&x);
            ensure_finite(f, &g)?;
            if f < run_best.1 {
                run_best = (x.clone(), f);
            }
            let pg_sq: f64 = (0..x.len())
                .map(|j| {
                    let p = (x[j] - g[j]).clamp(bounds.low[j], bounds.high[j]) - x[j];
                    p * p
                })
                .sum();
            if pg_sq.sqrt() < cfg.tol && step_sq.sqrt() < cfg.tol {
                converged = true;
                break;
            }
        }
        if cfg.refine_iters > 0 {
            let r = refine(obj, bounds, &run_best.0, cfg.refine_iters, cfg.tol)?;
            iterations += r.iterations;
            if r.objective < run_best.1 {
                run_best = (r.action, r.objective);
            }
            converged = r.converged;
        }
        restart_objectives.push(run_best.1);
        let better = best.as_ref().is_none_or(|b| run_best.1 < b.1);
        if better {
            best = Some((run_best.0, run_best.1, converged));
        }
    }
    let (action, objective, converged) = best.expect("at least one start");
    let constraint_violation = obj.constraint_violation(&action);
    Ok(SolverResult {
        action,
        objective,
        iterations,
        converged,
        constraint_violation,
        restart_objectives,
    })
}

struct Refined {
    action: Vec<f64>,
    objective: f64,
    iterations: usize,
    converged: bool,
}

/// Central-cut localization over the box. In one dimension this is
/// bisection on the sign of the subgradient. Otherwise it is the ellipsoid
/// method started from a ball around `start` that covers the whole box,
/// with a coordinate cut whenever the center leaves the box. Only the best
/// in-box center is kept, so the result never gets worse than `start`.
fn refine<O: Objective + ?Sized>(
    obj: &O,
    bounds: &ActionBox,
    start: &[f64],
    iters: usize,
    tol: f64,
) -> Result<Refined> {
    let n = bounds.dim();
    let half = bounds.half_width();
    let mut best = (start.to_vec(), obj.value(start));
    ensure_finite(best.1, &[])?;
    let mut iterations = 0;
    let mut converged = false;

    if n == 1 {
        let (mut lo, mut hi) = (bounds.low[0], bounds.high[0]);
        while iterations < iters {
            if hi - lo < tol * half[0] {
                converged = true;
                break;
            }
            iterations += 1;
            let c = 0.5 * (lo + hi);
            let (f, g) = obj.value_grad(&[c]);
            ensure_finite(f, &g)?;
            if f < best.1 {
                best = (vec![c], f);
            }
            if g[0] > 0.0 {
                hi = c;
            } else if g[0] < 0.0 {
                lo = c;
            } else {
                converged = true;
                break;
            }
        }
        return Ok(Refined {
            action: best.0,
            objective: best.1,
            iterations,
            converged,
        });
    }

    // The ellipsoid is {c + J u : |u| <= 1}. Updating the factor J instead
    // of J J' keeps the shape positive semidefinite as it gets thin.
    let nf = n as f64;
    let radius = 2.0 * half.iter().map(|h| h * h).sum::<f64>().sqrt();
    let mut c = start.to_vec();
    let mut jm = vec![0.0; n * n];
    for j in 0..n {
        jm[j * n + j] = radius;
    }
    let dilate = nf / (nf * nf - 1.0).sqrt();
    let shrink = 1.0 - ((nf - 1.0) / (nf + 1.0)).sqrt();
    while iterations < iters {
        let extent = |i: usize| (0..n).map(|k| jm[i * n + k].powi(2)).sum::<f64>().sqrt();
        if (0..n).all(|i| extent(i) < tol * half[i]) {
            converged = true;
            break;
        }
        iterations += 1;
        let mut inside = c.clone();
        bounds.clamp(&mut inside);
        let (f, grad) = obj.value_grad(&inside);
        ensure_finite(f, &grad)?;
        if f < best.1 {
            best = (inside.clone(), f);
        }
        let g = match (0..n).find(|&j| c[j] != inside[j]) {
            // feasibility cut on the first coordinate outside the box
            Some(j) => {
                let mut e = vec![0.0; n];
                e[j] = if c[j] > inside[j] { 1.0 } else { -1.0 };
                e
            }
            None if grad.iter().all(|x| *x == 0.0) => {
                converged = true;
                break;
            }
            None => grad,
        };
        // u = J' g, normalized
        let mut u: Vec<f64> = (0..n)
            .map(|k| (0..n).map(|i| jm[i * n + k] * g[i]).sum())
            .collect();
        let un = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(un > 0.0) || !un.is_finite() {
            break;
        }
        u.iter_mut().for_each(|x| *x /= un);
        let ju: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|k| jm[i * n + k] * u[k]).sum())
            .collect();
        for i in 0..n {
            c[i] -= ju[i] / (nf + 1.0);
            for k in 0..n {
                jm[i * n + k] = dilate * (jm[i * n + k] - shrink * ju[i] * u[k]);
            }
        }
    }
    Ok(Refined {
        action: best.0,
        objective: best.1,
        iterations,
        converged,
    })
}

fn b1_pow(b: f64, t: usize) -> f64 {
    b.powi(t.min(i32::MAX as usize) as i32)
}

fn ensure_finite(f: f64, g: &[f64]) -> Result<()> {
    if f.is_finite() && g.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence(format!(
            "non-finite solver objective {f}"
        )))
    }
}

/// Borrowed view of the networks that define the policy objective: either
/// the online critics or their targets.
#[derive(Clone, Copy, Debug)]
pub struct PolicyNets<'a> {
    pub reward: [&'a PicnnParams; 2],
    pub reward_norm: &'a Normalizer,
    pub reward_scale: f64,
    pub safety: &'a [PicnnParams],
    pub safety_critic: &'a SafetyCritic,
}

impl<'a> PolicyNets<'a> {
    pub fn online(rc: &'a RewardCritic, sc: &'a SafetyCritic) -> Self {
        Self {
            reward: [&rc.net1, &rc.net2],
            reward_norm: &rc.norm,
            reward_scale: rc.value_scale,
            safety: &sc.nets,
            safety_critic: sc,
        }
    }

    pub fn target(rc: &'a RewardCritic, sc: &'a SafetyCritic) -> Self {
        Self {
            reward: [&rc.target1, &rc.target2],
            reward_norm: &rc.norm,
            reward_scale: rc.value_scale,
            safety: &sc.targets,
            safety_critic: sc,
        }
    }
}

/// Risk and penalty settings for the policy objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PenaltySpec {
    /// Tail coefficient from [`risk_coefficient`].
    pub coefficient: f64,
    /// Cost-return threshold `d`.
    pub threshold: f64,
    pub kappa: f64,
}

impl PenaltySpec {
    pub fn new(risk: &RiskConfig, threshold: f64, kappa: f64) -> Result<Self> {
        Ok(Self {
            coefficient: risk_coefficient(risk)?,
            threshold,
            kappa,
        })
    }
}

/// The policy objective with the state fixed.
pub struct PolicyObjective<'a> {
    nets: PolicyNets<'a>,
    reward: [BoundPicnn<'a>; 2],
    safety: Vec<BoundPicnn<'a>>,
    penalty: PenaltySpec,
    action_dim: usize,
}

/// Pieces of the objective at one action.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveParts {
    pub reward_q: f64,
    pub cost: GaussianCostReturn,
    pub cvar: f64,
    pub value: f64,
}

impl<'a> PolicyObjective<'a> {
    pub fn new(nets: PolicyNets<'a>, s: &[f64], penalty: PenaltySpec) -> Result<Self> {
        let rs = nets.reward_norm.state(s);
        let ss = nets.safety_critic.norm.state(s);
        let reward = [nets.reward[0].bind(&rs)?, nets.reward[1].bind(&rs)?];
        let safety = nets
            .safety
            .iter()
            .map(|n| n.bind(&ss))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            action_dim: nets.reward[0].action_dim(),
            nets,
            reward,
            safety,
            penalty,
        })
    }

    fn heads(&self, a_norm: &[f64]) -> Vec<SafetyHeads> {
        self.safety
            .iter()
            .map(|b| {
                let o = b.eval(a_norm);
                SafetyHeads {
                    mean_raw: o[0],
                    std_raw: o[1],
                }
            })
            .collect()
    }

    fn cost_dist(&self, heads: &[SafetyHeads]) -> (GaussianCostReturn, usize, usize) {
        let sc = self.nets.safety_critic;
        let mut best = sc.dist_from_heads(heads[0]);
        let (mut im, mut is) = (0, 0);
        for (k, h) in heads.iter().enumerate().skip(1) {
            let d = sc.dist_from_heads(*h);
            if d.mean > best.mean {
                best.mean = d.mean;
                im = k;
            }
            if d.std > best.std {
                best.std = d.std;
                is = k;
            }
        }
        (best, im, is)
    }

    pub fn parts(&self, a: &[f64]) -> ObjectiveParts {
        let an = self.nets.reward_norm.action(a);
        let f = self.reward[0].eval(&an)[0].max(self.reward[1].eval(&an)[0]);
        let reward_q = -self.nets.reward_scale * f;
        let an_s = self.nets.safety_critic.norm.action(a);
        let (cost, _, _) = self.cost_dist(&self.heads(&an_s));
        let cvar = cost.mean + self.penalty.coefficient * cost.std;
        let value = -reward_q + self.penalty.kappa * (cvar - self.penalty.threshold).max(0.0);
        ObjectiveParts {
            reward_q,
            cost,
            cvar,
            value,
        }
    }
}

impl Objective for PolicyObjective<'_> {
    fn dim(&self) -> usize {
        self.action_dim
    }

    fn value(&self, a: &[f64]) -> f64 {
        self.parts(a).value
    }

    fn value_grad(&self, a: &[f64]) -> (f64, Vec<f64>) {
        let norm_r = self.nets.reward_norm;
        let an = norm_r.action(a);
        let f0 = self.reward[0].eval(&an)[0];
        let f1 = self.reward[1].eval(&an)[0];
        let pick = if f1 > f0 { 1 } else { 0 };
        let scale = self.nets.reward_scale;
        let (_, mut grad) = self.reward[pick].eval_grad(&an, &[scale]);
        norm_r.action_grad_to_raw(&mut grad);
        let mut value = scale * f0.max(f1);

        let norm_s = &self.nets.safety_critic.norm;
        let an_s = norm_s.action(a);
        let heads = self.heads(&an_s);
        let (cost, im, is) = self.cost_dist(&heads);
        let cvar = cost.mean + self.penalty.coefficient * cost.std;
        let excess = cvar - self.penalty.threshold;
        // zero-side convention at the hinge
        if excess > 0.0 && self.penalty.kappa > 0.0 {
            value += self.penalty.kappa * excess;
            let vs = self.nets.safety_critic.value_scale;
            let k = self.penalty.kappa;
            let std_w = k * self.penalty.coefficient * vs * sigmoid(heads[is].std_raw);
            let mut add = vec![0.0; a.len()];
            if im == is {
                let (_, g) = self.safety[im].eval_grad(&an_s, &[k * vs, std_w]);
                add = g;
            } else {
                let (_, gm) = self.safety[im].eval_grad(&an_s, &[k * vs, 0.0]);
                let (_, gs) = self.safety[is].eval_grad(&an_s, &[0.0, std_w]);
                for j in 0..add.len() {
                    add[j] = gm[j] + gs[j];
                }
            }
            norm_s.action_grad_to_raw(&mut add);
            for (g, x) in grad.iter_mut().zip(add) {
                *g += x;
            }
        }
        (value, grad)
    }

    fn constraint_violation(&self, a: &[f64]) -> f64 {
        (self.parts(a).cvar - self.penalty.threshold).max(0.0)
    }
}

/// `−Q_r(s,a) + κ·max{0, Γ_c(s,a) − d}` at a single point.
pub fn objective(s: &[f64], a: &[f64], nets: PolicyNets<'_>, penalty: PenaltySpec) -> Result<f64> {
    let obj = PolicyObjective::new(nets, s, penalty)?;
    check_dim("policy action", obj.dim(), a.len())?;
    Ok(obj.value(a))
}

/// Solve for the optimal action at state `s`.
pub fn solve(
    s: &[f64],
    nets: PolicyNets<'_>,
    penalty: PenaltySpec,
    bounds: &ActionBox,
    cfg: &SolverConfig,
    warm: Option<&[f64]>,
) -> Result<SolverResult> {
    let obj = PolicyObjective::new(nets, s, penalty)?;
    minimize(&obj, bounds, cfg, warm)
}

/// Solver action plus Gaussian exploration noise of std
/// `explore_noise · half_width`, clipped to the box.
#[allow(clippy::too_many_arguments)]
pub fn act<R: Rng + ?Sized>(
    s: &[f64],
    nets: PolicyNets<'_>,
    penalty: PenaltySpec,
    bounds: &ActionBox,
    cfg: &SolverConfig,
    warm: Option<&[f64]>,
    explore_noise: f64,
    rng: &mut R,
) -> Result<(Vec<f64>, SolverResult)> {
    if !(explore_noise >= 0.0) {
        return Err(Error::config("train.explore_noise", "must be >= 0"));
    }
    let res = solve(s, nets, penalty, bounds, cfg, warm)?;
    Ok((perturb(&res.action, bounds, explore_noise, rng), res))
}

/// Add clipped Gaussian exploration noise; a no-op when `explore_noise` is 0.
pub fn perturb<R: Rng + ?Sized>(
    a: &[f64],
    bounds: &ActionBox,
    explore_noise: f64,
    rng: &mut R,
) -> Vec<f64> {
    let mut out = a.to_vec();
    if explore_noise > 0.0 {
        for (x, h) in out.iter_mut().zip(bounds.half_width()) {
            let z: f64 = StandardNormal.sample(rng);
            *x += explore_noise * h * z;
        }
        bounds.clamp(&mut out);
    }
    out
}
