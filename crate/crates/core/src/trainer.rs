//! Training loop, evaluation, multi-seed experiments, and the actor-critic
//! baseline.
//!
//! Both methods share one code path: the same critics, the same risk
//! penalty, the same environment, and the same update schedule. They differ
//! only in how an action is chosen. The actor-free agent solves the convex
//! policy program; the baseline asks a tanh-bounded MLP trained by
//! deterministic policy gradient on the same objective.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::critics::{bootstrap_actions, Normalizer, RewardCritic, SafetyCritic};
use crate::env::{self, Transition, ACTION_DIM, STATE_DIM};
use crate::error::{Error, Result};
use crate::nn::{Activation, AdamState, Mlp, ParamVec};
use crate::par::Execution;
use crate::picnn::PicnnShape;
use crate::replay::ReplayBuffer;
use crate::solver::{
    self, perturb, ActionBox, Objective, PenaltySpec, PolicyNets, PolicyObjective, SolverConfig,
    SolverResult,
};

const GRAD_CHUNK: usize = 16;

// rng streams derived from a run seed
const STREAM_INIT: u64 = 0;
const STREAM_RESET: u64 = 1;
const STREAM_EXPLORE: u64 = 2;
const STREAM_TARGET: u64 = 3;
const STREAM_EVAL: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ActorFree,
    CvarTd3,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::ActorFree, Method::CvarTd3];

    pub fn name(self) -> &'static str {
        match self {
            Method::ActorFree => "actor-free",
            Method::CvarTd3 => "cvar-td3",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "actor-free" => Ok(Method::ActorFree),
            "cvar-td3" => Ok(Method::CvarTd3),
            other => Err(Error::config(
                "method",
                format!("unknown method {other:?}, expected actor-free or cvar-td3"),
            )),
        }
    }
}

/// Deterministic actor of the baseline: an MLP whose tanh output is mapped
/// affinely onto the action box.
#[derive(Clone, Debug)]
pub struct BaselineActor {
    pub net: Mlp,
    pub target: Mlp,
    pub bounds: ActionBox,
    pub state_scale: Vec<f64>,
    pub exec: Execution,
    opt: AdamState,
}

impl BaselineActor {
    pub fn new<R: Rng + ?Sized>(
        hidden: &[usize],
        bounds: ActionBox,
        state_scale: Vec<f64>,
        lr: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = vec![state_scale.len()];
        sizes.extend_from_slice(hidden);
        sizes.push(bounds.dim());
        let net = Mlp::uniform(&sizes, Activation::Relu, Activation::Tanh, rng)?;
        Self::from_nets(net.clone(), net, bounds, state_scale, lr)
    }

    pub fn from_nets(
        net: Mlp,
        target: Mlp,
        bounds: ActionBox,
        state_scale: Vec<f64>,
        lr: f64,
    ) -> Result<Self> {
        let last = net.layers.last().expect("mlp has layers");
        if last.activation != Activation::Tanh || net.output_dim() != bounds.dim() {
            return Err(Error::Checkpoint(
                "baseline actor needs a tanh output of action dimension".into(),
            ));
        }
        let opt = AdamState::new(net.num_params(), lr);
        Ok(Self {
            net,
            target,
            bounds,
            state_scale,
            exec: Execution::default(),
            opt,
        })
    }

    fn squash(&self, y: &[f64]) -> Vec<f64> {
        let (c, h) = (self.bounds.center(), self.bounds.half_width());
        let mut a: Vec<f64> = (0..y.len()).map(|j| c[j] + h[j] * y[j]).collect();
        // tanh is open on (−1, 1); guard against rounding at saturation
        self.bounds.clamp(&mut a);
        a
    }

    fn scaled(&self, s: &[f64]) -> Vec<f64> {
        s.iter()
            .zip(&self.state_scale)
            .map(|(x, k)| x / k)
            .collect()
    }

    pub fn action(&self, s: &[f64]) -> Result<Vec<f64>> {
        Ok(self.squash(&self.net.forward(&self.scaled(s))?))
    }

    pub fn target_action(&self, s: &[f64]) -> Result<Vec<f64>> {
        Ok(self.squash(&self.target.forward(&self.scaled(s))?))
    }

    /// One deterministic-policy-gradient step that lowers the mean policy
    /// objective over the batch states. Returns that mean before the step.
    pub fn update(
        &mut self,
        batch: &[&Transition],
        nets: PolicyNets<'_>,
        penalty: PenaltySpec,
    ) -> Result<f64> {
        let n = batch.len() as f64;
        let half = self.bounds.half_width();
        let this = &*self;
        let partials = self
            .exec
            .map_chunks(batch, GRAD_CHUNK, |chunk| -> Result<(f64, Mlp)> {
                let mut g = this.net.zeros_like();
                let mut total = 0.0;
                for t in chunk {
                    let x = this.scaled(&t.s);
                    let y = this.net.forward(&x)?;
                    let a = this.squash(&y);
                    let obj = PolicyObjective::new(nets, &t.s, penalty)?;
                    let (v, ga) = obj.value_grad(&a);
                    total += v / n;
                    let up: Vec<f64> = ga.iter().zip(&half).map(|(g, h)| g * h / n).collect();
                    let (gp, _) = this.net.backward(&x, &up)?;
                    g.add_scaled(&gp, 1.0);
                }
                Ok((total, g))
            });
        let mut total = 0.0;
        let mut g = self.net.zeros_like();
        for p in partials {
            let (v, gp) = p?;
            total += v;
            g.add_scaled(&gp, 1.0);
        }
        if !total.is_finite() {
            return Err(Error::Divergence(format!("actor objective {total}")));
        }
        self.opt.step_params(&mut self.net, &g)?;
        Ok(total)
    }

    pub fn polyak_update(&mut self, tau: f64) {
        if tau == 1.0 {
            self.target.clone_from(&self.net);
        } else {
            self.target.blend_from(&self.net, tau);
        }
    }
}

/// Critics plus, for the baseline, an actor. Everything needed to act.
#[derive(Clone, Debug)]
pub struct Agent {
    pub method: Method,
    pub reward: RewardCritic,
    pub safety: SafetyCritic,
    pub actor: Option<BaselineActor>,
    pub bounds: ActionBox,
    pub penalty: PenaltySpec,
}

impl Agent {
    /// Fresh networks for `method`, seeded from `seed`. Risk level and
    /// threshold come from `cfg.risk` and `cfg.train.d`.
    pub fn new(cfg: &Config, method: Method, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = stream(seed, STREAM_INIT);
        let bounds = ActionBox::new(cfg.env.action_low(), cfg.env.action_high())?;
        let norm = Normalizer::for_box(cfg.nets.state_scale.clone(), &bounds);
        let shape = picnn_shape(cfg, 1);
        let strict = cfg.nets.paper_strict_constraints;
        let reward = RewardCritic::new(
            shape.clone(),
            norm.clone(),
            cfg.nets.reward_scale,
            cfg.train.critic_lr,
            strict,
            &mut rng,
        )?;
        let safety = SafetyCritic::new(
            shape,
            norm,
            cfg.nets.cost_scale,
            cfg.nets.std_floor,
            cfg.nets.safety_twin,
            cfg.train.critic_lr,
            strict,
            &mut rng,
        )?;
        let actor = match method {
            Method::ActorFree => None,
            Method::CvarTd3 => Some(BaselineActor::new(
                &cfg.nets.actor_hidden,
                bounds.clone(),
                cfg.nets.state_scale.clone(),
                cfg.train.actor_lr,
                &mut rng,
            )?),
        };
        let mut agent = Self {
            method,
            reward,
            safety,
            actor,
            penalty: PenaltySpec::new(&cfg.risk, cfg.train.d, cfg.solver.kappa)?,
            bounds,
        };
        agent.set_execution(cfg.train.execution);
        Ok(agent)
    }

    pub fn set_execution(&mut self, exec: Execution) {
        self.reward.exec = exec;
        self.safety.exec = exec;
        if let Some(actor) = &mut self.actor {
            actor.exec = exec;
        }
    }

    pub fn online_nets(&self) -> PolicyNets<'_> {
        PolicyNets::online(&self.reward, &self.safety)
    }

    pub fn target_nets(&self) -> PolicyNets<'_> {
        PolicyNets::target(&self.reward, &self.safety)
    }

    /// Noise-free action. The actor-free agent solves the policy program
    /// with `solver_cfg`; the baseline queries its actor.
    pub fn greedy_action(
        &self,
        s: &[f64],
        solver_cfg: &SolverConfig,
        warm: Option<&[f64]>,
    ) -> Result<(Vec<f64>, Option<SolverResult>)> {
        match &self.actor {
            None => {
                let res = solver::solve(
                    s,
                    self.online_nets(),
                    self.penalty,
                    &self.bounds,
                    solver_cfg,
                    warm,
                )?;
                Ok((res.action.clone(), Some(res)))
            }
            Some(actor) => Ok((actor.action(s)?, None)),
        }
    }

    /// Bootstrap action at `s′` from the target networks.
    fn target_action(&self, t: &Transition, target_cfg: &SolverConfig) -> Result<Vec<f64>> {
        if t.done {
            // discarded by both critic updates
            return Ok(t.a.clone());
        }
        match &self.actor {
            None => Ok(solver::solve(
                &t.s_next,
                self.target_nets(),
                self.penalty,
                &self.bounds,
                target_cfg,
                Some(&t.a),
            )?
            .action),
            Some(actor) => actor.target_action(&t.s_next),
        }
    }

    /// `max{0, Γ_c(s,a) − d}` under the online safety critic.
    pub fn constraint_violation(&self, s: &[f64], a: &[f64]) -> Result<f64> {
        Ok(PolicyObjective::new(self.online_nets(), s, self.penalty)?.constraint_violation(a))
    }

    /// Every PICNN the agent owns, with a label.
    pub fn picnns(&self) -> Vec<(&'static str, &crate::picnn::PicnnParams)> {
        let mut out = vec![
            ("reward.net1", &self.reward.net1),
            ("reward.net2", &self.reward.net2),
            ("reward.target1", &self.reward.target1),
            ("reward.target2", &self.reward.target2),
        ];
        for n in &self.safety.nets {
            out.push(("safety.net", n));
        }
        for n in &self.safety.targets {
            out.push(("safety.target", n));
        }
        out
    }
}

pub fn picnn_shape(cfg: &Config, heads: usize) -> PicnnShape {
    PicnnShape {
        depth: cfg.nets.picnn_depth,
        state_activation: cfg.nets.state_activation,
        hidden_activation: cfg.nets.z_activation,
        ..PicnnShape::new(STATE_DIM, ACTION_DIM, cfg.nets.picnn_width, heads)
    }
}

/// One line of the metrics CSV: a completed training episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub seed: u64,
    pub method: Method,
    pub alpha: f64,
    pub episode: usize,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub cost_return: f64,
    pub critic_loss: f64,
    pub safety_loss: f64,
    pub solver_iters_mean: f64,
    pub constraint_violation_mean: f64,
}

#[derive(Default)]
struct EpisodeStats {
    rewards: Vec<f64>,
    costs: Vec<f64>,
    critic_loss: Mean,
    safety_loss: Mean,
    solver_iters: Mean,
    violation: Mean,
}

#[derive(Default)]
struct Mean {
    sum: f64,
    n: usize,
}

impl Mean {
    fn add(&mut self, x: f64) {
        self.sum += x;
        self.n += 1;
    }

    fn get(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.sum / self.n as f64
        }
    }
}

pub struct TrainOutput {
    pub rows: Vec<EpisodeRow>,
    pub agent: Agent,
    /// Set when the run stopped early on a non-finite loss or objective.
    pub failure: Option<String>,
    pub env_steps: usize,
    pub updates: usize,
}

/// Train one agent for `cfg.train.total_steps` environment steps. Only
/// completed episodes are logged. A divergence ends the run: the failed
/// episode is logged with NaN returns and the message is kept in
/// [`TrainOutput::failure`]. Other errors are returned.
pub fn train(cfg: &Config, method: Method, seed: u64) -> Result<TrainOutput> {
    let mut agent = Agent::new(cfg, method, seed)?;
    let tc = &cfg.train;
    let alpha = cfg.risk.alpha;
    let mut buffer = ReplayBuffer::new(tc.buffer_capacity, seed);
    let mut rng_reset = stream(seed, STREAM_RESET);
    let mut rng_explore = stream(seed, STREAM_EXPLORE);
    let mut rng_target = stream(seed, STREAM_TARGET);
    let rollout_cfg = cfg
        .solver
        .with_budget(cfg.solver.max_iters, cfg.solver.refine_iters);
    let target_cfg = cfg.solver.with_budget(cfg.solver.target_iters, 0);

    let mut rows = Vec::new();
    let mut state = env::reset(&cfg.env, &mut rng_reset);
    let mut warm: Option<Vec<f64>> = None;
    let mut stats = EpisodeStats::default();
    let mut updates = 0usize;
    let mut failure = None;
    let mut env_steps = 0;

    let row = |episode: usize, st: &EpisodeStats, ret: f64, cret: f64| EpisodeRow {
        seed,
        method,
        alpha,
        episode,
        episode_return: ret,
        cost_return: cret,
        critic_loss: st.critic_loss.get(),
        safety_loss: st.safety_loss.get(),
        solver_iters_mean: st.solver_iters.get(),
        constraint_violation_mean: st.violation.get(),
    };

    for step in 0..tc.total_steps {
        let s = state.observation();
        let result: Result<()> = (|| {
            let action = if step < tc.warmup_steps {
                let (lo, hi) = (agent.bounds.low.clone(), agent.bounds.high.clone());
                (0..lo.len())
                    .map(|j| rng_explore.random_range(lo[j]..=hi[j]))
                    .collect()
            } else {
                let w = warm.as_deref().filter(|_| cfg.solver.warm_start);
                let (greedy, res) = agent.greedy_action(&s, &rollout_cfg, w)?;
                if let Some(res) = res {
                    stats.solver_iters.add(res.iterations as f64);
                    warm = Some(greedy.clone());
                }
                perturb(&greedy, &agent.bounds, tc.explore_noise, &mut rng_explore)
            };
            stats
                .violation
                .add(agent.constraint_violation(&s, &action)?);
            let out = env::step(&state, &action, &cfg.env)?;
            stats.rewards.push(out.reward);
            stats.costs.push(out.cost);
            buffer.push(Transition {
                s: s.clone(),
                a: action,
                r: out.reward,
                c: out.cost,
                s_next: out.state.observation(),
                done: out.done,
            });
            state = out.state;

            if step >= tc.warmup_steps {
                let batch = buffer.sample(tc.batch_size);
                let next = bootstrap_actions(
                    &batch,
                    |t| agent.target_action(t, &target_cfg),
                    &tc.target_noise,
                    &agent.bounds,
                    tc.execution,
                    &mut rng_target,
                )?;
                stats
                    .critic_loss
                    .add(agent.reward.update(&batch, &next, tc.gamma)?);
                stats
                    .safety_loss
                    .add(agent.safety.update(&batch, &next, tc.gamma)?);
                updates += 1;
                if updates % tc.policy_delay == 0 {
                    let nets = PolicyNets::online(&agent.reward, &agent.safety);
                    if let Some(actor) = &mut agent.actor {
                        actor.update(&batch, nets, agent.penalty)?;
                        actor.polyak_update(tc.tau);
                    }
                }
                agent.reward.polyak_update(tc.tau);
                agent.safety.polyak_update(tc.tau);
            }
            Ok(())
        })();
        env_steps = step + 1;
        match result {
            Ok(()) => {}
            Err(Error::Divergence(msg)) => {
                rows.push(row(rows.len(), &stats, f64::NAN, f64::NAN));
                failure = Some(msg);
                break;
            }
            Err(e) => return Err(e),
        }
        if state.t == cfg.env.episode_len {
            let ret = env::discounted_sum(stats.rewards.iter().copied(), tc.gamma);
            let cret = env::discounted_sum(stats.costs.iter().copied(), tc.gamma);
            rows.push(row(rows.len(), &stats, ret, cret));
            stats = EpisodeStats::default();
            state = env::reset(&cfg.env, &mut rng_reset);
            warm = None;
        }
    }
    Ok(TrainOutput {
        rows,
        agent,
        failure,
        env_steps,
        updates,
    })
}

/// Per-episode evaluation summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalEpisode {
    pub episode: usize,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub cost_return: f64,
    pub max_s1: f64,
    pub mean_abs_goal_error: f64,
    pub frac_over_crit: f64,
}

/// One evaluation step. Levels are the post-step state after evaluation
/// clipping; reward and cost are the unclipped environment signals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub episode: usize,
    pub t: usize,
    pub s1: f64,
    pub s2: f64,
    pub action: f64,
    pub reward: f64,
    pub cost: f64,
}

/// `metric, mean, std` over evaluation episodes (population std).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub episodes: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Evaluation {
    pub episodes: Vec<EvalEpisode>,
    pub traces: Vec<TraceRow>,
}

pub const REPORT_METRICS: [&str; 5] = [
    "return",
    "cost_return",
    "max_s1",
    "mean_abs_goal_error",
    "frac_over_crit",
];

impl Evaluation {
    /// Empty when there are no episodes.
    pub fn report(&self) -> Vec<ReportRow> {
        if self.episodes.is_empty() {
            return Vec::new();
        }
        let cols: [fn(&EvalEpisode) -> f64; 5] = [
            |e| e.episode_return,
            |e| e.cost_return,
            |e| e.max_s1,
            |e| e.mean_abs_goal_error,
            |e| e.frac_over_crit,
        ];
        REPORT_METRICS
            .iter()
            .zip(cols)
            .map(|(name, f)| {
                let xs: Vec<f64> = self.episodes.iter().map(f).collect();
                let (mean, std) = mean_std(&xs);
                ReportRow {
                    metric: name.to_string(),
                    mean,
                    std,
                    episodes: xs.len(),
                }
            })
            .collect()
    }

    pub fn mean_of(&self, f: impl Fn(&EvalEpisode) -> f64) -> f64 {
        let xs: Vec<f64> = self.episodes.iter().map(f).collect();
        mean_std(&xs).0
    }
}

/// Summarize the trace rows of one episode. Shared by [`evaluate`] and by
/// anything that recomputes a report from a trace file.
pub fn summarize_trace(
    episode: usize,
    rows: &[TraceRow],
    p: &env::TankParams,
    gamma: f64,
) -> EvalEpisode {
    let n = rows.len().max(1) as f64;
    EvalEpisode {
        episode,
        episode_return: env::discounted_sum(rows.iter().map(|r| r.reward), gamma),
        cost_return: env::discounted_sum(rows.iter().map(|r| r.cost), gamma),
        max_s1: rows.iter().map(|r| r.s1).fold(f64::NEG_INFINITY, f64::max),
        mean_abs_goal_error: rows.iter().map(|r| (r.s2 - p.goal).abs()).sum::<f64>() / n,
        frac_over_crit: rows.iter().filter(|r| r.s1 > p.l_crit).count() as f64 / n,
    }
}

/// Noise-free rollouts. The actor-free agent solves with the full restart
/// budget; the baseline uses its actor.
pub fn evaluate(agent: &Agent, cfg: &Config, episodes: usize, seed: u64) -> Result<Evaluation> {
    let mut rng = stream(seed, STREAM_EVAL);
    let mut out = Evaluation::default();
    for ep in 0..episodes {
        let mut state = env::reset(&cfg.env, &mut rng);
        let mut warm: Option<Vec<f64>> = None;
        let mut rows = Vec::with_capacity(cfg.env.episode_len);
        loop {
            let s = state.observation();
            let w = warm.as_deref().filter(|_| cfg.solver.warm_start);
            let (a, _) = agent.greedy_action(&s, &cfg.solver, w)?;
            let o = env::step(&state, &a, &cfg.env)?;
            let shown = env::eval_clip(&o.state);
            rows.push(TraceRow {
                episode: ep,
                t: o.state.t,
                s1: shown.s1,
                s2: shown.s2,
                action: a[0],
                reward: o.reward,
                cost: o.cost,
            });
            warm = Some(a);
            state = o.state;
            if o.done {
                break;
            }
        }
        out.episodes
            .push(summarize_trace(ep, &rows, &cfg.env, cfg.train.gamma));
        out.traces.extend(rows);
    }
    Ok(out)
}

/// Population mean and std; NaN for an empty slice.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean return and cost-return over the last `frac` of the episodes
/// (at least one).
pub fn final_window(rows: &[EpisodeRow], frac: f64) -> (f64, f64) {
    if rows.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let k = ((rows.len() as f64 * frac).ceil() as usize).clamp(1, rows.len());
    let tail = &rows[rows.len() - k..];
    let r: Vec<f64> = tail.iter().map(|r| r.episode_return).collect();
    let c: Vec<f64> = tail.iter().map(|r| r.cost_return).collect();
    (mean_std(&r).0, mean_std(&c).0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub method: Method,
    pub alpha: f64,
    pub seed: u64,
}

pub struct RunResult {
    pub spec: RunSpec,
    pub rows: Vec<EpisodeRow>,
    pub agent: Agent,
    pub evaluation: Option<Evaluation>,
    pub failure: Option<String>,
}

/// Mean and std across runs of one training episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: Method,
    pub alpha: f64,
    pub episode: usize,
    pub runs: usize,
    pub return_mean: f64,
    pub return_std: f64,
    pub cost_return_mean: f64,
    pub cost_return_std: f64,
    /// False when some run did not reach this episode or diverged.
    pub complete: bool,
}

/// One evaluation report line tagged with its run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReportRow {
    pub method: Method,
    pub alpha: f64,
    pub seed: u64,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub episodes: usize,
}

pub struct ExperimentOutput {
    pub runs: Vec<RunResult>,
    pub aggregate: Vec<AggregateRow>,
}

impl ExperimentOutput {
    pub fn run(&self, method: Method, alpha: f64, seed: u64) -> Option<&RunResult> {
        self.runs
            .iter()
            .find(|r| r.spec.method == method && r.spec.alpha == alpha && r.spec.seed == seed)
    }

    pub fn failures(&self) -> Vec<(RunSpec, &str)> {
        self.runs
            .iter()
            .filter_map(|r| r.failure.as_deref().map(|f| (r.spec, f)))
            .collect()
    }

    pub fn report_rows(&self) -> Vec<RunReportRow> {
        let mut out = Vec::new();
        for r in &self.runs {
            let Some(ev) = &r.evaluation else { continue };
            for row in ev.report() {
                out.push(RunReportRow {
                    method: r.spec.method,
                    alpha: r.spec.alpha,
                    seed: r.spec.seed,
                    metric: row.metric,
                    mean: row.mean,
                    std: row.std,
                    episodes: row.episodes,
                });
            }
        }
        out
    }

    pub fn metrics_rows(&self) -> impl Iterator<Item = &EpisodeRow> {
        self.runs.iter().flat_map(|r| r.rows.iter())
    }
}

/// Every (method, α, seed) combination from `cfg.train.alphas` and
/// `cfg.seed_list()`, in that nesting order.
pub fn experiment_specs(cfg: &Config, methods: &[Method]) -> Vec<RunSpec> {
    let mut out = Vec::new();
    for &method in methods {
        for &alpha in &cfg.train.alphas {
            for seed in cfg.seed_list() {
                out.push(RunSpec {
                    method,
                    alpha,
                    seed,
                });
            }
        }
    }
    out
}

/// Train and evaluate one run.
pub fn run_one(cfg: &Config, spec: RunSpec) -> Result<RunResult> {
    let mut cfg = cfg.clone();
    cfg.risk.alpha = spec.alpha;
    let out = train(&cfg, spec.method, spec.seed)?;
    let evaluation = if out.failure.is_none() {
        Some(evaluate(
            &out.agent,
            &cfg,
            cfg.train.eval_episodes,
            spec.seed,
        )?)
    } else {
        None
    };
    Ok(RunResult {
        spec,
        rows: out.rows,
        agent: out.agent,
        evaluation,
        failure: out.failure,
    })
}

/// Train and evaluate every run, fanning runs out with `exec`, then
/// aggregate per training episode. A diverged run is kept with its failure
/// and its episodes still count toward the aggregate, which is flagged
/// incomplete wherever some run is missing.
pub fn run_experiment(
    cfg: &Config,
    methods: &[Method],
    exec: Execution,
) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let specs = experiment_specs(cfg, methods);
    let runs = exec
        .map(&specs, |spec| run_one(cfg, *spec))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let aggregate = aggregate(&runs, methods, &cfg.train.alphas);
    Ok(ExperimentOutput { runs, aggregate })
}

pub fn aggregate(runs: &[RunResult], methods: &[Method], alphas: &[f64]) -> Vec<AggregateRow> {
    let mut out = Vec::new();
    for &method in methods {
        for &alpha in alphas {
            let group: Vec<&RunResult> = runs
                .iter()
                .filter(|r| r.spec.method == method && r.spec.alpha == alpha)
                .collect();
            let episodes = group.iter().map(|r| r.rows.len()).max().unwrap_or(0);
            for ep in 0..episodes {
                let hits: Vec<&EpisodeRow> = group
                    .iter()
                    .filter_map(|r| r.rows.get(ep))
                    .filter(|row| row.episode_return.is_finite())
                    .collect();
                let r: Vec<f64> = hits.iter().map(|h| h.episode_return).collect();
                let c: Vec<f64> = hits.iter().map(|h| h.cost_return).collect();
                let (rm, rs) = mean_std(&r);
                let (cm, cs) = mean_std(&c);
                out.push(AggregateRow {
                    method,
                    alpha,
                    episode: ep,
                    runs: hits.len(),
                    return_mean: rm,
                    return_std: rs,
                    cost_return_mean: cm,
                    cost_return_std: cs,
                    complete: hits.len() == group.len(),
                });
            }
        }
    }
    out
}

/// Write serializable rows as CSV with a header. An empty iterator still
/// produces the header line.
pub fn write_csv<'a, T, I>(path: impl AsRef<Path>, rows: I) -> Result<()>
where
    T: Serialize + CsvHeader + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(file);
    w.write_record(T::HEADER)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_csv<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|x| x.map_err(Error::from)).collect()
}

/// Column names, so that empty tables still get a header.
pub trait CsvHeader {
    const HEADER: &'static [&'static str];
}

impl CsvHeader for EpisodeRow {
    const HEADER: &'static [&'static str] = &[
        "seed",
        "method",
        "alpha",
        "episode",
        "return",
        "cost_return",
        "critic_loss",
        "safety_loss",
        "solver_iters_mean",
        "constraint_violation_mean",
    ];
}

impl CsvHeader for TraceRow {
    const HEADER: &'static [&'static str] =
        &["episode", "t", "s1", "s2", "action", "reward", "cost"];
}

impl CsvHeader for ReportRow {
    const HEADER: &'static [&'static str] = &["metric", "mean", "std", "episodes"];
}

impl CsvHeader for RunReportRow {
    const HEADER: &'static [&'static str] = &[
        "method", "alpha", "seed", "metric", "mean", "std", "episodes",
    ];
}

impl CsvHeader for AggregateRow {
    const HEADER: &'static [&'static str] = &[
        "method",
        "alpha",
        "episode",
        "runs",
        "return_mean",
        "return_std",
        "cost_return_mean",
        "cost_return_std",
        "complete",
    ];
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::picnn::PicnnParams;

    fn tiny() -> Config {
        let mut cfg = Config::default();
        cfg.nets.picnn_width = 8;
        cfg.nets.actor_hidden = vec![8];
        cfg.train.batch_size = 8;
        cfg.train.warmup_steps = 20;
        cfg.train.total_steps = 450;
        cfg.train.eval_episodes = 1;
        cfg.solver.max_iters = 20;
        cfg.solver.restarts = 2;
        cfg
    }

    #[test]
    fn zero_steps_gives_no_rows() {
        let mut cfg = tiny();
        cfg.train.total_steps = 0;
        let out = train(&cfg, Method::ActorFree, 0).unwrap();
        assert!(out.rows.is_empty());
        assert_eq!(out.updates, 0);
    }

    #[test]
    fn logs_completed_episodes_only() {
        for method in Method::ALL {
            let out = train(&tiny(), method, 1).unwrap();
            assert_eq!(out.rows.len(), 2, "{method}");
            assert!(out.failure.is_none());
            assert_eq!(out.updates, 430);
            for (i, r) in out.rows.iter().enumerate() {
                assert_eq!(r.episode, i);
                assert!(r.episode_return.is_finite() && r.cost_return.is_finite());
                assert!(r.critic_loss.is_finite());
            }
            assert_eq!(
                out.rows[0].solver_iters_mean.is_nan(),
                method == Method::CvarTd3
            );
        }
    }

    #[test]
    fn training_is_deterministic() {
        let a = train(&tiny(), Method::CvarTd3, 4).unwrap();
        let b = train(&tiny(), Method::CvarTd3, 4).unwrap();
        assert_eq!(format!("{:?}", a.rows), format!("{:?}", b.rows));
        assert_eq!(a.agent.reward.net1, b.agent.reward.net1);
    }

    #[test]
    fn sequential_and_parallel_training_agree() {
        let mut cfg = tiny();
        cfg.train.execution = Execution::Sequential;
        let a = train(&cfg, Method::ActorFree, 2).unwrap();
        cfg.train.execution = Execution::Parallel;
        let b = train(&cfg, Method::ActorFree, 2).unwrap();
        assert_eq!(format!("{:?}", a.rows), format!("{:?}", b.rows));
    }

    #[test]
    fn critics_stay_convex_through_training() {
        let mut cfg = tiny();
        cfg.nets.paper_strict_constraints = true;
        let out = train(&cfg, Method::ActorFree, 3).unwrap();
        for (name, net) in out.agent.picnns() {
            assert!(net.satisfies_constraints(true), "{name}");
        }
    }

    #[test]
    fn baseline_actions_inside_box() {
        let cfg = tiny();
        let agent = Agent::new(&cfg, Method::CvarTd3, 0).unwrap();
        let actor = agent.actor.as_ref().unwrap();
        for s1 in [0.0, 3.0, 50.0, 1e6] {
            let a = actor.action(&[s1, 2.0]).unwrap();
            assert!(agent.bounds.contains(&a), "{a:?}");
        }
    }

    #[test]
    fn zero_networks_give_state_independent_policy() {
        let cfg = tiny();
        let mut agent = Agent::new(&cfg, Method::ActorFree, 0).unwrap();
        let z1 = PicnnParams::zeros(picnn_shape(&cfg, 1)).unwrap();
        let z2 = PicnnParams::zeros(picnn_shape(&cfg, 2)).unwrap();
        for n in [&mut agent.reward.net1, &mut agent.reward.net2] {
            *n = z1.clone();
        }
        agent.safety.nets = vec![z2];
        let first = agent
            .greedy_action(&[0.0, 0.0], &cfg.solver, None)
            .unwrap()
            .0;
        for s in [[1.0, 9.0], [15.0, 0.5], [7.0, 7.0]] {
            assert_eq!(agent.greedy_action(&s, &cfg.solver, None).unwrap().0, first);
        }
    }

    #[test]
    fn evaluation_report_matches_episodes() {
        let cfg = tiny();
        let agent = Agent::new(&cfg, Method::ActorFree, 0).unwrap();
        let ev = evaluate(&agent, &cfg, 2, 9).unwrap();
        assert_eq!(ev.traces.len(), 2 * cfg.env.episode_len);
        assert!(ev.traces.iter().all(|t| t.s1 <= env::EVAL_CLIP_MAX));
        let rep = ev.report();
        assert_eq!(rep.len(), REPORT_METRICS.len());
        let r: Vec<f64> = ev.episodes.iter().map(|e| e.episode_return).collect();
        assert_eq!(rep[0].mean, (r[0] + r[1]) / 2.0);
        assert!(evaluate(&agent, &cfg, 0, 9).unwrap().report().is_empty());
    }

    #[test]
    fn single_seed_aggregate_has_zero_std() {
        let mut cfg = tiny();
        cfg.train.seeds = 1;
        cfg.train.alphas = vec![0.5];
        let out = run_experiment(&cfg, &[Method::ActorFree], Execution::Sequential).unwrap();
        assert_eq!(out.aggregate.len(), 2);
        for row in &out.aggregate {
            assert_eq!(row.return_std, 0.0);
            assert_eq!(row.cost_return_std, 0.0);
            assert!(row.complete);
        }
    }

    #[test]
    fn aggregate_is_the_hand_average() {
        let mut cfg = tiny();
        cfg.train.seeds = 2;
        cfg.train.alphas = vec![0.1];
        cfg.train.total_steps = 220;
        let out = run_experiment(&cfg, &[Method::CvarTd3], Execution::Parallel).unwrap();
        let a = &out.run(Method::CvarTd3, 0.1, 0).unwrap().rows[0];
        let b = &out.run(Method::CvarTd3, 0.1, 1).unwrap().rows[0];
        let row = &out.aggregate[0];
        assert_eq!(row.runs, 2);
        assert!((row.return_mean - (a.episode_return + b.episode_return) / 2.0).abs() < 1e-12);
        assert!((row.return_std - (a.episode_return - b.episode_return).abs() / 2.0).abs() < 1e-9);
    }

    #[test]
    fn final_window_takes_the_tail() {
        let rows: Vec<EpisodeRow> = (0..10)
            .map(|i| EpisodeRow {
                seed: 0,
                method: Method::ActorFree,
                alpha: 0.1,
                episode: i,
                episode_return: i as f64,
                cost_return: -(i as f64),
                critic_loss: 0.0,
                safety_loss: 0.0,
                solver_iters_mean: 0.0,
                constraint_violation_mean: 0.0,
            })
            .collect();
        assert_eq!(final_window(&rows, 0.2), (8.5, -8.5));
        assert_eq!(final_window(&rows, 0.01), (9.0, -9.0));
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("sac".parse::<Method>().is_err());
    }

    #[test]
    fn csv_round_trip_and_empty_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_csv::<EpisodeRow, _>(&p, &[]).unwrap();
        assert_eq!(
            std::fs::read_to_string(&p).unwrap().trim(),
            EpisodeRow::HEADER.join(",")
        );
        let out = train(&tiny(), Method::ActorFree, 0).unwrap();
        write_csv(&p, &out.rows).unwrap();
        let back: Vec<EpisodeRow> = read_csv(&p).unwrap();
        assert_eq!(format!("{back:?}"), format!("{:?}", out.rows));
    }
}
