//! Cascade two-tank level control as a constrained MDP.
//!
//! The pump fills the upper tank, which drains through an orifice into the
//! lower tank, which drains out:
//!
//! ```text
//! ṡ₁ = −k_out1·√s₁ + k_pump·a
//! ṡ₂ =  k_out1·√s₁ − k_out2·√s₂
//! ```
//!
//! integrated by explicit Euler over one sampling period. Reward is
//! `−|s₂ − goal|`, cost is `s₁ − l_crit`, both evaluated on the post-step
//! state.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STATE_DIM: usize = 2;
pub const ACTION_DIM: usize = 1;
/// Upper level used when clipping evaluation traces.
pub const EVAL_CLIP_MAX: f64 = 20.0;

/// Distribution of the initial tank levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitDist {
    Uniform { low: [f64; 2], high: [f64; 2] },
    Fixed { s1: f64, s2: f64 },
}

impl InitDist {
    pub fn mean(&self) -> [f64; 2] {
        match self {
            InitDist::Uniform { low, high } => [0.5 * (low[0] + high[0]), 0.5 * (low[1] + high[1])],
            InitDist::Fixed { s1, s2 } => [*s1, *s2],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TankParams {
    /// Upper-tank outflow coefficient, cm^½/s.
    pub k_out1: f64,
    /// Lower-tank outflow coefficient, cm^½/s.
    pub k_out2: f64,
    /// Pump gain, cm/(V·s).
    pub k_pump: f64,
    /// Sampling period, s.
    pub dt: f64,
    /// Euler sub-steps per sampling period.
    pub substeps: usize,
    pub goal: f64,
    pub l_crit: f64,
    /// Pump voltage range is `[0, a_max]`.
    pub a_max: f64,
    pub episode_len: usize,
    pub init: InitDist,
}

impl Default for TankParams {
    fn default() -> Self {
        Self {
            k_out1: 0.5,
            k_out2: 0.5,
            k_pump: 1.0,
            dt: 2.0,
            substeps: 1,
            goal: 7.0,
            l_crit: 10.0,
            a_max: 5.0,
            episode_len: 200,
            init: InitDist::Uniform {
                low: [0.0, 0.0],
                high: [2.0, 2.0],
            },
        }
    }
}

impl TankParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("env.k_out1", self.k_out1),
            ("env.k_out2", self.k_out2),
            ("env.k_pump", self.k_pump),
            ("env.dt", self.dt),
            ("env.l_crit", self.l_crit),
            ("env.a_max", self.a_max),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(key, format!("must be positive, got {v}")));
            }
        }
        if self.substeps == 0 {
            return Err(Error::config("env.substeps", "must be at least 1"));
        }
        if self.episode_len == 0 {
            return Err(Error::config("env.episode_len", "must be at least 1"));
        }
        if let InitDist::Uniform { low, high } = &self.init {
            if low.iter().zip(high).any(|(l, h)| l > h || *l < 0.0) {
                return Err(Error::config(
                    "env.init",
                    "uniform init needs 0 <= low <= high",
                ));
            }
        }
        Ok(())
    }

    pub fn action_low(&self) -> Vec<f64> {
        vec![0.0]
    }

    pub fn action_high(&self) -> Vec<f64> {
        vec![self.a_max]
    }

    pub fn reward(&self, s2: f64) -> f64 {
        -(s2 - self.goal).abs()
    }

    pub fn cost(&self, s1: f64) -> f64 {
        s1 - self.l_crit
    }

    /// Constant voltage that holds the upper tank at `s1`.
    pub fn equilibrium_action(&self, s1: f64) -> f64 {
        self.k_out1 * s1.sqrt() / self.k_pump
    }

    /// Lower-tank level in balance with upper level `s1`.
    pub fn equilibrium_s2(&self, s1: f64) -> f64 {
        let r = self.k_out1 / self.k_out2;
        r * r * s1
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvState {
    pub s1: f64,
    pub s2: f64,
    pub t: usize,
}

impl EnvState {
    pub fn new(s1: f64, s2: f64) -> Self {
        Self { s1, s2, t: 0 }
    }

    pub fn observation(&self) -> Vec<f64> {
        vec![self.s1, self.s2]
    }
}

/// One CMDP step as stored in the replay buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub c: f64,
    pub s_next: Vec<f64>,
    pub done: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub state: EnvState,
    pub reward: f64,
    pub cost: f64,
    pub done: bool,
}

pub fn step(state: &EnvState, action: &[f64], p: &TankParams) -> Result<StepOutcome> {
    if action.len() != ACTION_DIM {
        return Err(Error::Dimension {
            context: "tank action",
            expected: ACTION_DIM,
            actual: action.len(),
        });
    }
    let a = action[0];
    if !(0.0..=p.a_max).contains(&a) {
        return Err(Error::ActionOutOfBounds {
            index: 0,
            value: a,
            low: 0.0,
            high: p.a_max,
        });
    }
    let h = p.dt / p.substeps as f64;
    let (mut s1, mut s2) = (state.s1, state.s2);
    for _ in 0..p.substeps {
        let q1 = p.k_out1 * s1.sqrt();
        let q2 = p.k_out2 * s2.sqrt();
        let n1 = s1 + h * (p.k_pump * a - q1);
        let n2 = s2 + h * (q1 - q2);
        s1 = n1.max(0.0);
        s2 = n2.max(0.0);
    }
    let t = state.t + 1;
    Ok(StepOutcome {
        state: EnvState { s1, s2, t },
        reward: p.reward(s2),
        cost: p.cost(s1),
        done: t == p.episode_len,
    })
}

pub fn reset<R: Rng + ?Sized>(p: &TankParams, rng: &mut R) -> EnvState {
    match &p.init {
        InitDist::Uniform { low, high } => {
            let mut draw = |i: usize| {
                if low[i] == high[i] {
                    low[i]
                } else {
                    rng.random_range(low[i]..high[i])
                }
            };
            let s1 = draw(0);
            let s2 = draw(1);
            EnvState::new(s1, s2)
        }
        InitDist::Fixed { s1, s2 } => EnvState::new(*s1, *s2),
    }
}

/// Discounted sum of costs along a trajectory.
pub fn episode_cost_return(traj: &[Transition], gamma: f64) -> f64 {
    discounted_sum(traj.iter().map(|t| t.c), gamma)
}

pub fn discounted_sum(values: impl IntoIterator<Item = f64>, gamma: f64) -> f64 {
    let mut total = 0.0;
    let mut discount = 1.0;
    for v in values {
        total += discount * v;
        discount *= gamma;
    }
    total
}

/// Clamp tank levels at [`EVAL_CLIP_MAX`]; evaluation traces only.
pub fn eval_clip(state: &EnvState) -> EnvState {
    EnvState {
        s1: state.s1.min(EVAL_CLIP_MAX),
        s2: state.s2.min(EVAL_CLIP_MAX),
        t: state.t,
    }
}
