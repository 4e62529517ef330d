//! Property suites run by the `check` subcommand: convexity in the action,
//! analytic gradients against finite differences, the CVaR and
//! 2-Wasserstein closed forms against sampling, and the policy solver
//! against brute-force grid search.
//!
//! Each suite stops at the first violation and reports it as a
//! human-readable counterexample.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::critics::{Normalizer, RewardCritic, SafetyCritic};
use crate::error::Result;
use crate::nn::{Activation, Mlp, ParamVec};
use crate::picnn::{PicnnParams, PicnnShape};
use crate::risk::{
    risk_coefficient, wasserstein2_sq, CoefficientMode, GaussianCostReturn, RiskConfig,
};
use crate::solver::{
    minimize, ActionBox, Objective, PenaltySpec, PolicyNets, PolicyObjective, SolverConfig,
};
use crate::trainer::Agent;

/// Slack allowed in the midpoint inequality.
pub const CONVEXITY_TOL: f64 = 1e-9;
pub const GRADIENT_TOL: f64 = 1e-6;
/// Relative-error denominators never drop below this.
pub const GRADIENT_FLOOR: f64 = 1e-3;
/// Probes whose nearest ReLU pre-activation is closer than this are skipped.
pub const KINK_MARGIN: f64 = 1e-3;
pub const CVAR_REL_TOL: f64 = 5e-3;
pub const LITERAL_TOL: f64 = 1e-10;
pub const W2_REL_TOL: f64 = 1e-2;
pub const SOLVER_TOL: f64 = 1e-3;
pub const GRID_POINTS: usize = 401;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Convexity,
    Gradient,
    Cvar,
    Wasserstein,
    Solver,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::Convexity,
        Suite::Gradient,
        Suite::Cvar,
        Suite::Wasserstein,
        Suite::Solver,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Convexity => "convexity",
            Suite::Gradient => "gradient",
            Suite::Cvar => "cvar",
            Suite::Wasserstein => "wasserstein",
            Suite::Solver => "solver",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug)]
pub struct CheckOptions {
    pub seed: u64,
    /// Probes per network for convexity; scales the other suites too.
    pub probes: usize,
    /// Debug fault: make the output `Wzz` negative without projecting.
    pub inject_negative_wzz: bool,
    /// Settings under test in the solver suite.
    pub solver: SolverConfig,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            probes: 1000,
            inject_negative_wzz: false,
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    pub checks: usize,
    pub skipped: usize,
    /// Largest observed error in the suite's own units.
    pub worst: f64,
    pub counterexample: Option<String>,
}

impl SuiteReport {
    fn new(suite: Suite) -> Self {
        Self {
            suite,
            checks: 0,
            skipped: 0,
            worst: 0.0,
            counterexample: None,
        }
    }

    pub fn passed(&self) -> bool {
        self.counterexample.is_none()
    }

    fn record(&mut self, err: f64, tol: f64, describe: impl FnOnce() -> String) -> bool {
        self.checks += 1;
        if err > self.worst || err.is_nan() {
            self.worst = err;
        }
        if err > tol || err.is_nan() {
            self.counterexample = Some(describe());
            return false;
        }
        true
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed() { "PASS" } else { "FAIL" };
        write!(
            f,
            "{status} {}: {} checks, {} skipped, worst {:.3e}",
            self.suite, self.checks, self.skipped, self.worst
        )?;
        if let Some(c) = &self.counterexample {
            write!(f, "\n  counterexample: {c}")?;
        }
        Ok(())
    }
}

pub fn run(suite: Suite, opts: &CheckOptions) -> Result<SuiteReport> {
    match suite {
        Suite::Convexity => convexity_suite(opts),
        Suite::Gradient => gradient_suite(opts),
        Suite::Cvar => Ok(cvar_suite(opts.seed, opts.probes.max(1) * 1000)),
        Suite::Wasserstein => Ok(wasserstein_suite(opts.seed, 20, 1_000_000)),
        Suite::Solver => solver_suite(opts),
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    format!("[{}]", parts.join(", "))
}

/// Make the output layer's `Wzz` strictly negative. Hidden layers are left
/// alone: negating them mostly kills their ReLUs, which hides the fault.
fn break_wzz(net: &mut PicnnParams) {
    if let Some(layer) = net.layers.last_mut() {
        for w in layer.w_zz.as_mut_slice() {
            *w = -(w.abs() + 0.5);
        }
    }
}

/// `f(mid) − (½f(a1) + ½f(a2))`; positive means a convexity violation.
pub fn midpoint_gap(f: impl Fn(&[f64]) -> f64, a1: &[f64], a2: &[f64]) -> f64 {
    let mid: Vec<f64> = a1.iter().zip(a2).map(|(x, y)| 0.5 * (x + y)).collect();
    f(&mid) - 0.5 * (f(a1) + f(a2))
}

/// Midpoint probes on a function of `(s, a)`; states drawn from `s_range`,
/// actions from `a_range` (both per coordinate).
#[allow(clippy::too_many_arguments)]
fn probe_convexity(
    report: &mut SuiteReport,
    label: &str,
    f: impl Fn(&[f64], &[f64]) -> f64,
    state_dim: usize,
    action_dim: usize,
    s_range: (f64, f64),
    a_range: (f64, f64),
    probes: usize,
    rng: &mut ChaCha8Rng,
) -> bool {
    for _ in 0..probes {
        let s = uniform(rng, state_dim, s_range.0, s_range.1);
        let a1 = uniform(rng, action_dim, a_range.0, a_range.1);
        let a2 = uniform(rng, action_dim, a_range.0, a_range.1);
        let gap = midpoint_gap(|a| f(&s, a), &a1, &a2);
        let ok = report.record(gap, CONVEXITY_TOL, || {
            format!(
                "{label}: s={} a1={} a2={} midpoint exceeds chord by {gap:.3e}",
                fmt_vec(&s),
                fmt_vec(&a1),
                fmt_vec(&a2)
            )
        });
        if !ok {
            return false;
        }
    }
    true
}

/// Random constrained critics on a `[-1, 1]^d` action box with identity
/// normalization and unit output scales.
fn random_critics(
    rng: &mut ChaCha8Rng,
    action_dim: usize,
    width: usize,
    inject: bool,
) -> Result<(RewardCritic, SafetyCritic)> {
    let shape = PicnnShape::new(2, action_dim, width, 1);
    let strict = false;
    let mut r1 = PicnnParams::new(shape.clone(), strict, rng)?;
    let mut r2 = PicnnParams::new(shape.clone(), strict, rng)?;
    let mut sh2 = shape;
    sh2.heads = 2;
    let mut sn = PicnnParams::new(sh2, strict, rng)?;
    if inject {
        for n in [&mut r1, &mut r2, &mut sn] {
            break_wzz(n);
        }
    }
    let norm = Normalizer::identity(2, action_dim);
    let rc = RewardCritic::from_nets(r1, r2, norm.clone(), 1.0, 1e-3, strict);
    let sc = SafetyCritic::from_nets(vec![sn], norm, 1.0, 0.1, 1e-3, strict)?;
    Ok((rc, sc))
}

fn convexity_suite(opts: &CheckOptions) -> Result<SuiteReport> {
    let mut report = SuiteReport::new(Suite::Convexity);
    let mut rng = rng_for(opts.seed, 11);
    for action_dim in [1, 2] {
        let (rc, sc) = random_critics(&mut rng, action_dim, 16, opts.inject_negative_wzz)?;
        let da = action_dim;
        let unit = (-1.5, 1.5);
        let states = (-3.0, 3.0);
        let reward = |s: &[f64], a: &[f64]| rc.net1.forward(s, a).expect("dims")[0];
        let mean = |s: &[f64], a: &[f64]| sc.nets[0].forward(s, a).expect("dims")[0];
        let std = |s: &[f64], a: &[f64]| sc.nets[0].forward(s, a).expect("dims")[1];
        for (label, f) in [
            ("reward picnn", &reward as &dyn Fn(&[f64], &[f64]) -> f64),
            ("safety mean head", &mean),
            ("safety std head", &std),
        ] {
            let label = format!("{label} (action dim {da})");
            if !probe_convexity(
                &mut report,
                &label,
                f,
                2,
                da,
                states,
                unit,
                opts.probes,
                &mut rng,
            ) {
                return Ok(report);
            }
        }
        let risk = RiskConfig::new(0.1, CoefficientMode::ExactGaussianCvar)?;
        let pen = PenaltySpec::new(&risk, 0.0, 10.0)?;
        let nets = PolicyNets::online(&rc, &sc);
        let objective =
            |s: &[f64], a: &[f64]| PolicyObjective::new(nets, s, pen).expect("dims").value(a);
        let label = format!("policy objective (action dim {da})");
        if !probe_convexity(
            &mut report,
            &label,
            objective,
            2,
            da,
            states,
            unit,
            opts.probes,
            &mut rng,
        ) {
            return Ok(report);
        }
    }
    Ok(report)
}

/// Convexity probes on every network of a (trained) agent, in raw units:
/// states over `[0, 20]²`, actions over the agent's box.
pub fn agent_convexity(agent: &Agent, probes: usize, seed: u64) -> SuiteReport {
    let mut report = SuiteReport::new(Suite::Convexity);
    let mut rng = rng_for(seed, 12);
    let b = &agent.bounds;
    let (lo, hi) = (b.low[0], b.high[0]);
    let da = b.dim();
    let states = (0.0, 20.0);
    let rn = &agent.reward.norm;
    let sn = &agent.safety.norm;
    let mut nets: Vec<(String, Box<dyn Fn(&[f64], &[f64]) -> f64 + '_>)> = Vec::new();
    for (name, net) in [
        ("reward.net1", &agent.reward.net1),
        ("reward.net2", &agent.reward.net2),
    ] {
        nets.push((
            name.to_string(),
            Box::new(move |s, a| net.forward(&rn.state(s), &rn.action(a)).expect("dims")[0]),
        ));
    }
    for (i, net) in agent.safety.nets.iter().enumerate() {
        for head in 0..2 {
            nets.push((
                format!("safety.net{i} head {head}"),
                Box::new(move |s, a| net.forward(&sn.state(s), &sn.action(a)).expect("dims")[head]),
            ));
        }
    }
    let pn = agent.online_nets();
    let pen = agent.penalty;
    nets.push((
        "policy objective".to_string(),
        Box::new(move |s, a| PolicyObjective::new(pn, s, pen).expect("dims").value(a)),
    ));
    for (label, f) in &nets {
        if !probe_convexity(
            &mut report,
            label,
            f,
            2,
            da,
            states,
            (lo, hi),
            probes,
            &mut rng,
        ) {
            break;
        }
    }
    report
}

fn random_activation(rng: &mut ChaCha8Rng, convex: bool) -> Activation {
    let pool: &[Activation] = if convex {
        &[Activation::Relu, Activation::Softplus]
    } else {
        &[Activation::Relu, Activation::Softplus, Activation::Tanh]
    };
    pool[rng.random_range(0..pool.len())]
}

/// Central difference of `f` along each coordinate of `x`.
fn central_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xp[i];
            xp[i] = orig + h;
            let fp = f(&xp);
            xp[i] = orig - h;
            let fm = f(&xp);
            xp[i] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

fn rel_err(an: f64, fd: f64) -> f64 {
    (an - fd).abs() / an.abs().max(fd.abs()).max(GRADIENT_FLOOR)
}

fn compare_grads(report: &mut SuiteReport, label: &str, analytic: &[f64], fd: &[f64]) -> bool {
    for (i, (a, f)) in analytic.iter().zip(fd).enumerate() {
        let err = rel_err(*a, *f);
        if !report.record(err, GRADIENT_TOL, || {
            format!("{label}[{i}]: analytic {a:.10e} vs finite difference {f:.10e} (rel {err:.3e})")
        }) {
            return false;
        }
    }
    true
}

fn mlp_kink_margin(net: &Mlp, x: &[f64]) -> f64 {
    let mut margin = f64::INFINITY;
    let mut h = x.to_vec();
    for layer in &net.layers {
        let pre = layer.pre_activation(&h);
        if layer.activation == Activation::Relu {
            margin = pre.iter().fold(margin, |m, p| m.min(p.abs()));
        }
        h = pre.iter().map(|&p| layer.activation.apply(p)).collect();
    }
    margin
}

const FD_STEP: f64 = 1e-5;

fn gradient_suite(opts: &CheckOptions) -> Result<SuiteReport> {
    let mut report = SuiteReport::new(Suite::Gradient);
    let mut rng = rng_for(opts.seed, 21);
    let configs = (opts.probes / 10).max(100);
    let mut done = 0;
    let mut attempts = 0;
    while done < configs && attempts < 20 * configs {
        attempts += 1;
        // PICNN
        let shape = PicnnShape {
            depth: rng.random_range(1..=3),
            state_activation: random_activation(&mut rng, false),
            hidden_activation: random_activation(&mut rng, true),
            output_activation: if rng.random_bool(0.5) {
                Activation::Identity
            } else {
                Activation::Softplus
            },
            ..PicnnShape::new(
                rng.random_range(1..=3),
                rng.random_range(1..=3),
                rng.random_range(2..=8),
                rng.random_range(1..=2),
            )
        };
        let net = PicnnParams::new(shape.clone(), rng.random_bool(0.3), &mut rng)?;
        let s = uniform(&mut rng, shape.state_dim, -2.0, 2.0);
        let a = uniform(&mut rng, shape.action_dim, -2.0, 2.0);
        let up = uniform(&mut rng, shape.heads, -1.0, 1.0);
        if net.kink_margin(&s, &a)? < KINK_MARGIN {
            report.skipped += 1;
            continue;
        }
        let dot = |net: &PicnnParams, s: &[f64], a: &[f64]| -> f64 {
            let out = net.forward(s, a).expect("dims");
            out.iter().zip(&up).map(|(o, u)| o * u).sum()
        };
        let (g, gs, ga) = net.backward(&s, &a, &up)?;
        let label = format!("picnn {shape:?}");
        let fd_a = central_diff(&a, FD_STEP, |x| dot(&net, &s, x));
        let fd_s = central_diff(&s, FD_STEP, |x| dot(&net, x, &a));
        let flat = net.to_flat();
        let mut probe = net.clone();
        let fd_p = central_diff(&flat, FD_STEP, |p| {
            probe.load_flat(p).expect("same size");
            dot(&probe, &s, &a)
        });
        if !compare_grads(&mut report, &format!("{label} d/da"), &ga, &fd_a)
            || !compare_grads(&mut report, &format!("{label} d/ds"), &gs, &fd_s)
            || !compare_grads(&mut report, &format!("{label} d/dθ"), &g.to_flat(), &fd_p)
        {
            return Ok(report);
        }

        // MLP
        let depth = rng.random_range(1..=3);
        let mut sizes = vec![rng.random_range(1..=4)];
        for _ in 0..depth {
            sizes.push(rng.random_range(1..=6));
        }
        let hidden = random_activation(&mut rng, false);
        let output = [Activation::Identity, Activation::Tanh][rng.random_range(0..2)];
        let mlp = Mlp::uniform(&sizes, hidden, output, &mut rng)?;
        let x = uniform(&mut rng, sizes[0], -2.0, 2.0);
        let up = uniform(&mut rng, *sizes.last().unwrap(), -1.0, 1.0);
        if mlp_kink_margin(&mlp, &x) < KINK_MARGIN {
            report.skipped += 1;
            continue;
        }
        let dot = |m: &Mlp, x: &[f64]| -> f64 {
            m.forward(x)
                .expect("dims")
                .iter()
                .zip(&up)
                .map(|(o, u)| o * u)
                .sum()
        };
        let (g, gx) = mlp.backward(&x, &up)?;
        let label = format!("mlp {sizes:?} {hidden:?}/{output:?}");
        let fd_x = central_diff(&x, FD_STEP, |x| dot(&mlp, x));
        let mut probe = mlp.clone();
        let fd_p = central_diff(&mlp.to_flat(), FD_STEP, |p| {
            probe.load_flat(p).expect("same size");
            dot(&probe, &x)
        });
        if !compare_grads(&mut report, &format!("{label} d/dx"), &gx, &fd_x)
            || !compare_grads(&mut report, &format!("{label} d/dθ"), &g.to_flat(), &fd_p)
        {
            return Ok(report);
        }
        done += 1;
    }
    if done < configs {
        report.counterexample = Some(format!(
            "only {done} of {configs} configurations were away from kinks"
        ));
    }
    Ok(report)
}

/// Standard normal CDF from its Maclaurin series; accurate to ~1e-15 for
/// `|x| <= 3`. Independent of the closed forms in [`crate::risk`].
pub fn normal_cdf_series(x: f64) -> f64 {
    let z = x / std::f64::consts::SQRT_2;
    let mut term = z;
    let mut sum = z;
    let mut n = 0.0;
    loop {
        n += 1.0;
        term *= -z * z / n;
        let add = term / (2.0 * n + 1.0);
        sum += add;
        if add.abs() < 1e-18 * sum.abs().max(1e-300) {
            break;
        }
    }
    0.5 + sum / std::f64::consts::PI.sqrt()
}

/// Mean of the largest `α` fraction of `samples` standard normal draws.
pub fn cvar_monte_carlo(alpha: f64, samples: usize, seed: u64) -> f64 {
    let mut rng = rng_for(seed, 31);
    let mut xs: Vec<f64> = (0..samples)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let k = ((alpha * samples as f64).round() as usize).clamp(1, samples);
    let cut = samples - k;
    xs.select_nth_unstable_by(cut, f64::total_cmp);
    xs[cut..].iter().sum::<f64>() / k as f64
}

/// CVaR of a standard normal at several α against sampling, and the
/// literal coefficient against a series oracle.
pub fn cvar_suite(seed: u64, samples: usize) -> SuiteReport {
    let mut report = SuiteReport::new(Suite::Cvar);
    for alpha in [0.05, 0.1, 0.25, 0.5] {
        let cfg = RiskConfig::new(alpha, CoefficientMode::ExactGaussianCvar).expect("valid alpha");
        let exact = risk_coefficient(&cfg).expect("valid alpha");
        let mc = cvar_monte_carlo(alpha, samples, seed);
        let err = (exact - mc).abs() / mc.abs();
        if !report.record(err, CVAR_REL_TOL, || {
            format!(
                "alpha={alpha}: closed form {exact:.6} vs tail mean {mc:.6} of {samples} samples"
            )
        }) {
            return report;
        }
    }
    for i in 1..=100 {
        let alpha = i as f64 / 100.0;
        let cfg = RiskConfig::new(alpha, CoefficientMode::PaperLiteral).expect("valid alpha");
        let got = risk_coefficient(&cfg).expect("valid alpha");
        let pdf = (-0.5 * alpha * alpha).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let want = pdf / normal_cdf_series(alpha);
        let err = (got - want).abs();
        if !report.record(err, LITERAL_TOL, || {
            format!("literal coefficient at alpha={alpha}: {got:.15} vs oracle {want:.15}")
        }) {
            return report;
        }
    }
    report
}

/// Closed-form squared 2-Wasserstein distance against the sorted-sample
/// (quantile) coupling for `pairs` random Gaussian pairs.
pub fn wasserstein_suite(seed: u64, pairs: usize, samples: usize) -> SuiteReport {
    let mut report = SuiteReport::new(Suite::Wasserstein);
    let mut rng = rng_for(seed, 41);
    for _ in 0..pairs {
        let p = GaussianCostReturn {
            mean: rng.random_range(-5.0..5.0),
            std: rng.random_range(0.2..3.0),
        };
        let q = GaussianCostReturn {
            mean: rng.random_range(-5.0..5.0),
            std: rng.random_range(0.2..3.0),
        };
        let mut draw = |g: &GaussianCostReturn| {
            let mut v: Vec<f64> = (0..samples)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    g.mean + g.std * z
                })
                .collect();
            v.sort_by(f64::total_cmp);
            v
        };
        let (xs, ys) = (draw(&p), draw(&q));
        let empirical = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / samples as f64;
        let exact = wasserstein2_sq(&p, &q);
        let err = (exact - empirical).abs() / exact;
        if !report.record(err, W2_REL_TOL, || {
            format!("{p:?} vs {q:?}: closed form {exact:.6} vs coupling {empirical:.6}")
        }) {
            return report;
        }
    }
    report
}

/// Minimum of `obj` over a regular grid with `points` per dimension.
pub fn grid_minimum(obj: &dyn Objective, bounds: &ActionBox, points: usize) -> (Vec<f64>, f64) {
    let d = bounds.dim();
    let mut idx = vec![0usize; d];
    let mut best = (bounds.center(), f64::INFINITY);
    let mut a = vec![0.0; d];
    loop {
        for j in 0..d {
            let t = idx[j] as f64 / (points - 1) as f64;
            a[j] = bounds.low[j] + t * (bounds.high[j] - bounds.low[j]);
        }
        let v = obj.value(&a);
        if v < best.1 {
            best = (a.clone(), v);
        }
        let mut j = 0;
        loop {
            if j == d {
                return best;
            }
            idx[j] += 1;
            if idx[j] < points {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
    }
}

fn solver_suite(opts: &CheckOptions) -> Result<SuiteReport> {
    let mut report = SuiteReport::new(Suite::Solver);
    let mut rng = rng_for(opts.seed, 51);
    let nets = (opts.probes / 10).max(100);
    let cfg = &opts.solver;
    for k in 0..nets {
        let da = if k % 2 == 0 { 1 } else { 2 };
        let (rc, sc) = random_critics(&mut rng, da, 8, opts.inject_negative_wzz)?;
        let bounds = ActionBox::new(vec![-1.0; da], vec![1.0; da])?;
        let s = uniform(&mut rng, 2, -2.0, 2.0);
        let alpha = [0.1, 0.5][rng.random_range(0..2)];
        let risk = RiskConfig::new(alpha, CoefficientMode::ExactGaussianCvar)?;
        let probe_pen = PenaltySpec::new(&risk, 0.0, 0.0)?;
        // threshold equal to the CVaR at a random action: the constraint is
        // active on part of the box
        let anchor = uniform(&mut rng, da, -1.0, 1.0);
        let cvar_at = PolicyObjective::new(PolicyNets::online(&rc, &sc), &s, probe_pen)?
            .parts(&anchor)
            .cvar;
        let pen = PenaltySpec::new(&risk, cvar_at, 10.0)?;
        let obj = PolicyObjective::new(PolicyNets::online(&rc, &sc), &s, pen)?;
        let res = minimize(&obj, &bounds, cfg, None)?;
        let (grid_a, grid_v) = grid_minimum(&obj, &bounds, GRID_POINTS);
        let gap = res.objective - grid_v;
        let describe = || {
            format!(
                "net {k} (action dim {da}) s={}: solver {:.6} at {} vs grid {grid_v:.6} at {}",
                fmt_vec(&s),
                res.objective,
                fmt_vec(&res.action),
                fmt_vec(&grid_a)
            )
        };
        if !report.record(gap, SOLVER_TOL, describe) {
            return Ok(report);
        }
        let hi = res
            .restart_objectives
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let lo = res
            .restart_objectives
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let spread = hi - lo;
        if !report.record(spread, SOLVER_TOL, || {
            format!(
                "net {k} (action dim {da}): restart objectives {:?}",
                res.restart_objectives
            )
        }) {
            return Ok(report);
        }
    }
    Ok(report)
}
