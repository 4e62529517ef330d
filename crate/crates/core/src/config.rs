//! Experiment configuration: one TOML document whose sections mirror the
//! modules (`[train]`, `[risk]`, `[solver]`, `[env]`, `[nets]`). Unknown
//! keys are rejected and every value is range-checked.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::critics::TargetNoise;
use crate::env::TankParams;
use crate::error::{Error, Result};
use crate::nn::Activation;
use crate::par::Execution;
use crate::risk::RiskConfig;
use crate::solver::SolverConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub train: TrainConfig,
    pub risk: RiskConfig,
    pub solver: SolverConfig,
    pub env: TankParams,
    pub nets: NetConfig,
}

/// Training-loop hyperparameters. The CMDP discount and threshold live here.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub gamma: f64,
    /// Cost-return threshold `d`.
    pub d: f64,
    /// Risk levels swept by `experiment`.
    pub alphas: Vec<f64>,
    /// Number of seeds; runs use seeds `0..seeds`.
    pub seeds: usize,
    pub total_steps: usize,
    /// Uniform-random actions before learning starts.
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub tau: f64,
    /// Baseline actor update period, in critic updates.
    pub policy_delay: usize,
    /// Exploration noise std, in half box widths.
    pub explore_noise: f64,
    pub target_noise: TargetNoise,
    pub critic_lr: f64,
    pub actor_lr: f64,
    pub eval_episodes: usize,
    /// Fraction of training episodes used for final-window summaries.
    pub final_window: f64,
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            d: -250.0,
            alphas: vec![0.1, 0.5],
            seeds: 5,
            total_steps: 20_000,
            warmup_steps: 1_000,
            batch_size: 256,
            buffer_capacity: 100_000,
            tau: 0.005,
            policy_delay: 2,
            explore_noise: 0.1,
            target_noise: TargetNoise::default(),
            critic_lr: 1e-3,
            actor_lr: 3e-4,
            eval_episodes: 5,
            final_window: 0.2,
            execution: Execution::default(),
        }
    }
}

/// Network sizes and critic output conventions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub picnn_width: usize,
    pub picnn_depth: usize,
    /// Convex-path hidden activation (relu or softplus).
    pub z_activation: Activation,
    pub state_activation: Activation,
    /// Also constrain the action weights to be nonnegative.
    pub paper_strict_constraints: bool,
    /// Lower bound added to the predicted cost-return std. The water tank is
    /// deterministic, so the learned std settles on this floor and it sets
    /// the margin between risk levels.
    pub std_floor: f64,
    /// Train two safety networks and aggregate by max.
    pub safety_twin: bool,
    /// Reward critic outputs are multiplied by this.
    pub reward_scale: f64,
    /// Safety critic outputs are multiplied by this.
    pub cost_scale: f64,
    /// States are divided by these before entering any network.
    pub state_scale: Vec<f64>,
    /// Hidden widths of the baseline actor.
    pub actor_hidden: Vec<usize>,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            picnn_width: 64,
            picnn_depth: 2,
            z_activation: Activation::Relu,
            state_activation: Activation::Relu,
            paper_strict_constraints: false,
            std_floor: 50.0,
            safety_twin: false,
            reward_scale: 100.0,
            cost_scale: 100.0,
            state_scale: vec![10.0, 10.0],
            actor_hidden: vec![64, 64],
        }
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            Error::config(key_from_toml_error(&msg, text, e.span()), msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.train;
        if !(t.gamma > 0.0 && t.gamma < 1.0) {
            return Err(Error::config("train.gamma", "train.gamma ∈ (0,1) required"));
        }
        if !t.d.is_finite() {
            return Err(Error::config("train.d", "must be finite"));
        }
        for (i, &a) in t.alphas.iter().enumerate() {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::config(
                    format!("train.alphas[{i}]"),
                    format!("risk.alpha ∈ (0,1] required, got {a}"),
                ));
            }
        }
        for (key, v) in [
            ("train.seeds", t.seeds),
            ("train.batch_size", t.batch_size),
            ("train.buffer_capacity", t.buffer_capacity),
            ("train.policy_delay", t.policy_delay),
        ] {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if !(t.tau > 0.0 && t.tau <= 1.0) {
            return Err(Error::config("train.tau", "must be in (0, 1]"));
        }
        if !(t.explore_noise >= 0.0) {
            return Err(Error::config("train.explore_noise", "must be >= 0"));
        }
        if !(t.target_noise.std >= 0.0 && t.target_noise.clip >= 0.0) {
            return Err(Error::config("train.target_noise", "must be >= 0"));
        }
        for (key, v) in [
            ("train.critic_lr", t.critic_lr),
            ("train.actor_lr", t.actor_lr),
        ] {
            if !(v > 0.0) {
                return Err(Error::config(key, "must be > 0"));
            }
        }
        if !(t.final_window > 0.0 && t.final_window <= 1.0) {
            return Err(Error::config("train.final_window", "must be in (0, 1]"));
        }
        self.risk.validate()?;
        self.solver.validate()?;
        self.env.validate()?;
        let n = &self.nets;
        if n.picnn_width == 0 || n.picnn_depth == 0 {
            return Err(Error::config(
                "nets.picnn_width",
                "width and depth must be positive",
            ));
        }
        if !n.z_activation.is_convex_nondecreasing() {
            return Err(Error::config(
                "nets.z_activation",
                "must be convex and non-decreasing (relu or softplus)",
            ));
        }
        if !(n.std_floor > 0.0) {
            return Err(Error::config("nets.std_floor", "must be > 0"));
        }
        if !(n.reward_scale > 0.0 && n.cost_scale > 0.0) {
            return Err(Error::config(
                "nets.reward_scale",
                "output scales must be > 0",
            ));
        }
        if n.state_scale.len() != crate::env::STATE_DIM || n.state_scale.iter().any(|s| !(*s > 0.0))
        {
            return Err(Error::config(
                "nets.state_scale",
                "needs one positive entry per state dimension",
            ));
        }
        if n.actor_hidden.iter().any(|w| *w == 0) {
            return Err(Error::config(
                "nets.actor_hidden",
                "widths must be positive",
            ));
        }
        Ok(())
    }

    /// Seeds `0..train.seeds`.
    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.train.seeds as u64).collect()
    }
}

/// Best-effort dotted key for a TOML error: the section header above the
/// error span plus the key on that line.
fn key_from_toml_error(msg: &str, text: &str, span: Option<std::ops::Range<usize>>) -> String {
    if let Some(rest) = msg.split("unknown field `").nth(1) {
        if let Some(field) = rest.split('`').next() {
            let section = span
                .as_ref()
                .map(|r| section_at(text, r.start))
                .unwrap_or_default();
            return join_key(&section, field);
        }
    }
    let Some(span) = span else {
        return "config".to_string();
    };
    let section = section_at(text, span.start);
    let line_start = text[..span.start.min(text.len())]
        .rfind('\n')
        .map_or(0, |i| i + 1);
    let line = text[line_start..].lines().next().unwrap_or("");
    match line.split_once('=') {
        Some((k, _)) => join_key(&section, k.trim()),
        None if !section.is_empty() => section,
        None => "config".to_string(),
    }
}

fn section_at(text: &str, pos: usize) -> String {
    text[..pos.min(text.len())]
        .lines()
        .rev()
        .find_map(|l| {
            let l = l.trim();
            l.strip_prefix('[')
                .and_then(|l| l.strip_suffix(']'))
                .map(|s| s.trim().to_string())
        })
        .unwrap_or_default()
}

fn join_key(section: &str, field: &str) -> String {
    if section.is_empty() {
        field.to_string()
    } else {
        format!("{section}.{field}")
    }
}
