//! Actor-critic checkpoint.
//!
//! ```text
//! "BSTA"  u32 version  u8 target_mode  u32 critics (0 for cloned policies)  u32 state_dim
//! f64[state_dim] mean  f64[state_dim] std
//! policy online, policy target, then online/target per critic,
//!   each in the parameter checkpoint format
//! u8 has_optimizers
//! per optimizer (actor first, then one per critic):
//!   f64 lr  f64 beta1  f64 beta2  f64 eps  u64 step
//!   f64 first moments, f64 second moments (parameter layout)
//! ```

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use super::{AgentError, CriticEnsemble, PolicyNet, Result, TargetMode};
use crate::envdata::StateNormalizer;
use crate::nn::{read_net, write_net, Adam, AdamConfig, DenseNet, Gradients, NnError};

pub const AGENT_MAGIC: [u8; 4] = *b"BSTA";
pub const AGENT_VERSION: u32 = 1;

/// Online and target networks plus, optionally, optimizer state.
#[derive(Debug, Clone)]
pub struct AgentCheckpoint {
    pub policy: PolicyNet,
    pub critics: CriticEnsemble,
    /// Actor optimizer followed by one optimizer per critic.
    pub optimizers: Option<(Adam, Vec<Adam>)>,
}

impl AgentCheckpoint {
    /// A policy without critics, as produced by cloning.
    pub fn policy_only(policy: PolicyNet) -> Self {
        Self {
            policy,
            critics: CriticEnsemble {
                online: Vec::new(),
                target: Vec::new(),
                mode: TargetMode::ClippedDouble,
            },
            optimizers: None,
        }
    }
}

fn mode_tag(mode: TargetMode) -> u8 {
    match mode {
        TargetMode::ClippedDouble => 0,
        TargetMode::Independent => 1,
    }
}

fn write_moments(g: &Gradients, buf: &mut Vec<u8>) {
    for v in g.flatten() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn write_agent<W: Write>(ckpt: &AgentCheckpoint, out: &mut W) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&AGENT_MAGIC);
    buf.extend_from_slice(&AGENT_VERSION.to_le_bytes());
    buf.push(mode_tag(ckpt.critics.mode));
    buf.extend_from_slice(&(ckpt.critics.len() as u32).to_le_bytes());
    let norm = ckpt.policy.normalizer();
    buf.extend_from_slice(&(norm.dim() as u32).to_le_bytes());
    for v in norm.mean.iter().chain(&norm.std) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    write_net(&ckpt.policy.online, &mut buf)?;
    write_net(&ckpt.policy.target, &mut buf)?;
    for (o, t) in ckpt.critics.online.iter().zip(&ckpt.critics.target) {
        write_net(o, &mut buf)?;
        write_net(t, &mut buf)?;
    }
    match &ckpt.optimizers {
        None => buf.push(0),
        Some((actor, critics)) => {
            if critics.len() != ckpt.critics.len() {
                return Err(AgentError::Argument("one optimizer per critic expected".into()));
            }
            buf.push(1);
            for opt in std::iter::once(actor).chain(critics) {
                let c = opt.config;
                for v in [c.learning_rate, c.beta1, c.beta2, c.epsilon] {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
                buf.extend_from_slice(&opt.step_count().to_le_bytes());
                let (m, v) = opt.moments();
                write_moments(m, &mut buf);
                write_moments(v, &mut buf);
            }
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn save_agent(ckpt: &AgentCheckpoint, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_agent(ckpt, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

struct Reader<'a> {
    cur: Cursor<&'a [u8]>,
}

impl Reader<'_> {
    fn offset(&self) -> usize {
        self.cur.position() as usize
    }

    fn bytes<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let at = self.offset();
        let mut buf = [0u8; N];
        self.cur.read_exact(&mut buf).map_err(|_| AgentError::Format {
            offset: at,
            message: format!("truncated while reading {what}"),
        })?;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(what)?))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(what)?))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(what)?))
    }

    fn net(&mut self) -> Result<DenseNet> {
        let base = self.offset();
        read_net(&mut self.cur).map_err(|e| match e {
            NnError::Format { offset, message } => AgentError::Format {
                offset: base + offset,
                message,
            },
            other => AgentError::Nn(other),
        })
    }

    fn moments(&mut self, net: &DenseNet) -> Result<Gradients> {
        let mut g = net.zero_gradients();
        for (w, b) in g.layers_mut() {
            for v in w.iter_mut().chain(b.iter_mut()) {
                *v = self.f64("optimizer moments")?;
            }
        }
        Ok(g)
    }

    fn adam(&mut self, net: &DenseNet) -> Result<Adam> {
        let config = AdamConfig {
            learning_rate: self.f64("learning rate")?,
            beta1: self.f64("beta1")?,
            beta2: self.f64("beta2")?,
            epsilon: self.f64("epsilon")?,
        };
        let step = self.u64("optimizer step")?;
        let first = self.moments(net)?;
        let second = self.moments(net)?;
        Ok(Adam::from_parts(config, step, first, second)?)
    }
}

pub fn read_agent(bytes: &[u8]) -> Result<AgentCheckpoint> {
    let mut r = Reader { cur: Cursor::new(bytes) };
    let magic = r.bytes::<4>("magic")?;
    if magic != AGENT_MAGIC {
        return Err(AgentError::Format {
            offset: 0,
            message: format!("bad magic {magic:?}"),
        });
    }
    let version = r.u32("version")?;
    if version != AGENT_VERSION {
        return Err(AgentError::Format {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let mode = match r.bytes::<1>("target mode")?[0] {
        0 => TargetMode::ClippedDouble,
        1 => TargetMode::Independent,
        t => {
            return Err(AgentError::Format {
                offset: 8,
                message: format!("unknown target mode tag {t}"),
            })
        }
    };
    let count = r.u32("critic count")? as usize;
    if count > 1024 {
        return Err(AgentError::Format {
            offset: 9,
            message: format!("implausible critic count {count}"),
        });
    }
    let sd = r.u32("state dim")? as usize;
    let mean = (0..sd).map(|_| r.f64("normalizer mean")).collect::<Result<Vec<_>>>()?;
    let std = (0..sd).map(|_| r.f64("normalizer std")).collect::<Result<Vec<_>>>()?;
    let at = r.offset();
    let online = r.net()?;
    let target = r.net()?;
    let policy = PolicyNet::from_parts(online, target, StateNormalizer { mean, std }).map_err(|e| AgentError::Format {
        offset: at,
        message: e.to_string(),
    })?;
    let mut critics = CriticEnsemble {
        online: Vec::with_capacity(count),
        target: Vec::with_capacity(count),
        mode,
    };
    for _ in 0..count {
        critics.online.push(r.net()?);
        critics.target.push(r.net()?);
    }
    let optimizers = match r.bytes::<1>("optimizer flag")?[0] {
        0 => None,
        _ => {
            let actor = r.adam(&policy.online)?;
            let opts = critics.online.iter().map(|net| r.adam(net)).collect::<Result<Vec<_>>>()?;
            Some((actor, opts))
        }
    };
    if r.offset() != bytes.len() {
        return Err(AgentError::Format {
            offset: r.offset(),
            message: "trailing bytes".into(),
        });
    }
    Ok(AgentCheckpoint {
        policy,
        critics,
        optimizers,
    })
}

pub fn load_agent(path: &Path) -> Result<AgentCheckpoint> {
    read_agent(&fs::read(path)?)
}
