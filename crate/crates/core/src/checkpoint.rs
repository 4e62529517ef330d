//! Checkpoint files.
//!
//! Layout:
//!
//! ```text
//! magic    8 bytes   b"AFCKPT01"
//! len      u64 LE    length of the JSON header in bytes
//! header   JSON      method, seed, config, normalizer, network table
//! payload  f64 LE    every network's flat parameters, in table order
//! ```
//!
//! Each network entry records its structure (PICNN shape or MLP sizes and
//! activations), which weight groups are kept nonnegative, and its parameter
//! count, so a file can be checked against its own header before use.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::critics::{Normalizer, RewardCritic, SafetyCritic};
use crate::error::{Error, Result};
use crate::nn::{Activation, DenseLayer, Mlp, ParamVec};
use crate::picnn::{PicnnParams, PicnnShape};
use crate::solver::{ActionBox, PenaltySpec};
use crate::trainer::{Agent, BaselineActor, Method};

pub const MAGIC: &[u8; 8] = b"AFCKPT01";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub method: Method,
    pub seed: u64,
    pub config: Config,
    pub normalizer: Normalizer,
    pub networks: Vec<NetEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetEntry {
    pub name: String,
    pub structure: Structure,
    pub constraints: Constraints,
    pub num_params: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Structure {
    Picnn {
        shape: PicnnShape,
    },
    Mlp {
        sizes: Vec<usize>,
        hidden: Activation,
        output: Activation,
    },
}

/// Which weight groups are projected onto the nonnegative orthant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constraints {
    pub wzz_nonnegative: bool,
    pub wza_nonnegative: bool,
}

impl Constraints {
    const NONE: Self = Self {
        wzz_nonnegative: false,
        wza_nonnegative: false,
    };

    fn picnn(strict: bool) -> Self {
        Self {
            wzz_nonnegative: true,
            wza_nonnegative: strict,
        }
    }
}

/// A trained (or freshly initialized) agent together with everything needed
/// to evaluate it.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub method: Method,
    pub seed: u64,
    pub config: Config,
    pub agent: Agent,
}

fn picnn_entry(name: &str, net: &PicnnParams, strict: bool) -> (NetEntry, Vec<f64>) {
    (
        NetEntry {
            name: name.to_string(),
            structure: Structure::Picnn {
                shape: net.shape.clone(),
            },
            constraints: Constraints::picnn(strict),
            num_params: net.num_params(),
        },
        net.to_flat(),
    )
}

fn mlp_entry(name: &str, net: &Mlp) -> (NetEntry, Vec<f64>) {
    let hidden = net
        .layers
        .first()
        .filter(|_| net.layers.len() > 1)
        .map_or(Activation::Relu, |l| l.activation);
    let output = net.layers.last().expect("mlp has layers").activation;
    (
        NetEntry {
            name: name.to_string(),
            structure: Structure::Mlp {
                sizes: net.sizes(),
                hidden,
                output,
            },
            constraints: Constraints::NONE,
            num_params: net.num_params(),
        },
        net.to_flat(),
    )
}

impl Checkpoint {
    pub fn new(agent: Agent, config: Config, seed: u64) -> Self {
        Self {
            method: agent.method,
            seed,
            config,
            agent,
        }
    }

    fn entries(&self) -> Vec<(NetEntry, Vec<f64>)> {
        let a = &self.agent;
        let strict = a.reward.strict;
        let mut out = vec![
            picnn_entry("reward.net1", &a.reward.net1, strict),
            picnn_entry("reward.net2", &a.reward.net2, strict),
            picnn_entry("reward.target1", &a.reward.target1, strict),
            picnn_entry("reward.target2", &a.reward.target2, strict),
        ];
        for (i, n) in a.safety.nets.iter().enumerate() {
            out.push(picnn_entry(&format!("safety.net{i}"), n, strict));
        }
        for (i, n) in a.safety.targets.iter().enumerate() {
            out.push(picnn_entry(&format!("safety.target{i}"), n, strict));
        }
        if let Some(actor) = &a.actor {
            out.push(mlp_entry("actor.net", &actor.net));
            out.push(mlp_entry("actor.target", &actor.target));
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let entries = self.entries();
        let header = Header {
            method: self.method,
            seed: self.seed,
            config: self.config.clone(),
            normalizer: self.agent.reward.norm.clone(),
            networks: entries.iter().map(|(e, _)| e.clone()).collect(),
        };
        let json = serde_json::to_vec(&header).expect("header is serializable");
        let payload: usize = entries.iter().map(|(_, p)| p.len()).sum();
        let mut out = Vec::with_capacity(16 + json.len() + 8 * payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, params) in &entries {
            for x in params {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let len = usize::try_from(len).map_err(|_| bad("header length overflows"))?;
        let end = 16usize
            .checked_add(len)
            .filter(|e| *e <= bytes.len())
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[16..end])
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        header
            .config
            .validate()
            .map_err(|e| Error::Checkpoint(format!("bad config in header: {e}")))?;
        let body = &bytes[end..];
        let total: usize = header.networks.iter().map(|n| n.num_params).sum();
        if body.len() != 8 * total {
            return Err(Error::Checkpoint(format!(
                "payload holds {} bytes, header describes {} parameters",
                body.len(),
                total
            )));
        }
        let mut floats = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mut picnns = Vec::new();
        let mut mlps = Vec::new();
        for entry in &header.networks {
            let flat: Vec<f64> = floats.by_ref().take(entry.num_params).collect();
            match &entry.structure {
                Structure::Picnn { shape } => {
                    let mut net = PicnnParams::zeros(shape.clone())?;
                    load(&mut net, entry, &flat)?;
                    let strict = entry.constraints.wza_nonnegative;
                    if !entry.constraints.wzz_nonnegative || !net.satisfies_constraints(strict) {
                        return Err(Error::Checkpoint(format!(
                            "{}: parameters violate the recorded constraints",
                            entry.name
                        )));
                    }
                    picnns.push((entry.name.as_str(), net));
                }
                Structure::Mlp {
                    sizes,
                    hidden,
                    output,
                } => {
                    if sizes.len() < 2 {
                        return Err(bad("mlp needs at least two sizes"));
                    }
                    let n = sizes.len() - 1;
                    let layers = (0..n)
                        .map(|i| {
                            let act = if i + 1 == n { *output } else { *hidden };
                            DenseLayer::zeros(sizes[i], sizes[i + 1], act)
                        })
                        .collect();
                    let mut net = Mlp::new(layers)?;
                    load(&mut net, entry, &flat)?;
                    mlps.push((entry.name.as_str(), net));
                }
            }
        }
        let agent = assemble(&header, picnns, mlps)?;
        Ok(Self {
            method: header.method,
            seed: header.seed,
            config: header.config,
            agent,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn load<P: ParamVec>(net: &mut P, entry: &NetEntry, flat: &[f64]) -> Result<()> {
    if net.num_params() != entry.num_params {
        return Err(Error::Checkpoint(format!(
            "{}: structure has {} parameters, header says {}",
            entry.name,
            net.num_params(),
            entry.num_params
        )));
    }
    net.load_flat(flat)
}

fn take<T>(nets: &mut Vec<(&str, T)>, name: &str) -> Result<T> {
    let i = nets
        .iter()
        .position(|(n, _)| *n == name)
        .ok_or_else(|| Error::Checkpoint(format!("missing network {name}")))?;
    Ok(nets.remove(i).1)
}

fn take_prefixed<T>(nets: &mut Vec<(&str, T)>, prefix: &str) -> Vec<T> {
    let mut out = Vec::new();
    let mut i = 0;
    while let Some(name) = nets.get(i).map(|(n, _)| *n) {
        if name.starts_with(prefix) {
            out.push(nets.remove(i).1);
        } else {
            i += 1;
        }
    }
    out
}

fn assemble(
    header: &Header,
    mut picnns: Vec<(&str, PicnnParams)>,
    mut mlps: Vec<(&str, Mlp)>,
) -> Result<Agent> {
    let cfg = &header.config;
    let strict = cfg.nets.paper_strict_constraints;
    let lr = cfg.train.critic_lr;
    let norm = header.normalizer.clone();
    let bounds = ActionBox::new(cfg.env.action_low(), cfg.env.action_high())?;

    let net1 = take(&mut picnns, "reward.net1")?;
    let net2 = take(&mut picnns, "reward.net2")?;
    let mut reward =
        RewardCritic::from_nets(net1, net2, norm.clone(), cfg.nets.reward_scale, lr, strict);
    reward.target1 = take(&mut picnns, "reward.target1")?;
    reward.target2 = take(&mut picnns, "reward.target2")?;

    let nets = take_prefixed(&mut picnns, "safety.net");
    let targets = take_prefixed(&mut picnns, "safety.target");
    if nets.len() != targets.len() {
        return Err(Error::Checkpoint(
            "safety nets and targets differ in count".into(),
        ));
    }
    let mut safety = SafetyCritic::from_nets(
        nets,
        norm,
        cfg.nets.cost_scale,
        cfg.nets.std_floor,
        lr,
        strict,
    )?;
    safety.targets = targets;

    let actor = match header.method {
        Method::ActorFree => None,
        Method::CvarTd3 => {
            let net = take(&mut mlps, "actor.net")?;
            let target = take(&mut mlps, "actor.target")?;
            Some(BaselineActor::from_nets(
                net,
                target,
                bounds.clone(),
                cfg.nets.state_scale.clone(),
                cfg.train.actor_lr,
            )?)
        }
    };
    if let Some((name, _)) = picnns.first() {
        return Err(Error::Checkpoint(format!("unexpected network {name}")));
    }
    if let Some((name, _)) = mlps.first() {
        return Err(Error::Checkpoint(format!("unexpected network {name}")));
    }
    let mut agent = Agent {
        method: header.method,
        reward,
        safety,
        actor,
        bounds,
        penalty: PenaltySpec::new(&cfg.risk, cfg.train.d, cfg.solver.kappa)?,
    };
    agent.set_execution(cfg.train.execution);
    Ok(agent)
}
