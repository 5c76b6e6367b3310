//! Binary dataset format, all little-endian:
//!
//! ```text
//! "BSTD"  u32 version  u32 state_dim  u32 action_dim
//! u64 transitions  u64 episodes
//! f32[n·state_dim] states   f32[n·action_dim] actions   f32[n] rewards
//! f32[n·state_dim] next_states   u8[n] done (0/1)
//! u64[episodes] episode start indices
//! u64 metadata_len  u8[metadata_len] generator metadata (UTF-8 JSON, may be empty)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{EnvError, ReplayDataset, Result};

pub const DATASET_MAGIC: [u8; 4] = *b"BSTD";
pub const DATASET_VERSION: u32 = 1;

pub fn write_dataset<W: Write>(d: &ReplayDataset, out: &mut W) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&DATASET_MAGIC);
    buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    buf.extend_from_slice(&(d.state_dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(d.action_dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(d.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(d.episode_starts().len() as u64).to_le_bytes());
    for arr in [d.states_flat(), d.actions_flat(), d.rewards(), d.next_states_flat()] {
        for v in arr {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    buf.extend(d.dones().iter().map(|&b| u8::from(b)));
    for b in d.episode_starts() {
        buf.extend_from_slice(&b.to_le_bytes());
    }
    let meta = match &d.source {
        Some(v) => serde_json::to_vec(v).map_err(|e| EnvError::Argument(e.to_string()))?,
        None => Vec::new(),
    };
    buf.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    buf.extend_from_slice(&meta);
    out.write_all(&buf)?;
    Ok(())
}

pub fn save_dataset(d: &ReplayDataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset(d, &mut w)?;
    w.flush()?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.offset < n {
            return Err(EnvError::Format {
                offset: self.offset,
                message: format!(
                    "file truncated in {what}: need {n} bytes, {} remain",
                    self.bytes.len() - self.offset
                ),
            });
        }
        let s = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f32_array(&mut self, count: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(count.checked_mul(4).ok_or_else(|| self.overflow(what))?, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect())
    }

    fn overflow(&self, what: &str) -> EnvError {
        EnvError::Format {
            offset: self.offset,
            message: format!("{what} size overflows"),
        }
    }
}

pub fn read_dataset(bytes: &[u8]) -> Result<ReplayDataset> {
    let mut r = Reader { bytes, offset: 0 };
    let magic = r.take(4, "magic")?;
    if magic != DATASET_MAGIC {
        return Err(EnvError::Format {
            offset: 0,
            message: format!("bad magic {magic:?}, expected \"BSTD\""),
        });
    }
    let version = r.u32("version")?;
    if version != DATASET_VERSION {
        return Err(EnvError::Format {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let state_dim = r.u32("state dim")? as usize;
    let action_dim = r.u32("action dim")? as usize;
    let n = usize::try_from(r.u64("transition count")?).map_err(|_| r.overflow("transition count"))?;
    let episodes = usize::try_from(r.u64("episode count")?).map_err(|_| r.overflow("episode count"))?;
    let states = r.f32_array(n * state_dim, "states")?;
    let actions = r.f32_array(n * action_dim, "actions")?;
    let rewards = r.f32_array(n, "rewards")?;
    let next_states = r.f32_array(n * state_dim, "next_states")?;
    let done_at = r.offset;
    let dones = r
        .take(n, "done flags")?
        .iter()
        .enumerate()
        .map(|(i, &b)| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(EnvError::Format {
                offset: done_at + i,
                message: format!("done flag {other} is not 0/1"),
            }),
        })
        .collect::<Result<Vec<bool>>>()?;
    let mut starts = Vec::with_capacity(episodes.min(1 << 20));
    for _ in 0..episodes {
        starts.push(r.u64("episode boundaries")?);
    }
    let meta_len = usize::try_from(r.u64("metadata length")?).map_err(|_| r.overflow("metadata"))?;
    let meta_at = r.offset;
    let meta = r.take(meta_len, "metadata")?;
    let source = if meta.is_empty() {
        None
    } else {
        Some(serde_json::from_slice(meta).map_err(|e| EnvError::Format {
            offset: meta_at,
            message: format!("metadata is not JSON: {e}"),
        })?)
    };
    if r.offset != bytes.len() {
        return Err(EnvError::Format {
            offset: r.offset,
            message: format!("{} trailing bytes", bytes.len() - r.offset),
        });
    }
    let mut d = ReplayDataset::from_parts(state_dim, action_dim, states, actions, rewards, next_states, dones, starts);
    d.source = source;
    d.validate().map_err(|message| EnvError::Format {
        offset: r.offset,
        message,
    })?;
    Ok(d)
}

pub fn load_dataset(path: &Path) -> Result<ReplayDataset> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    read_dataset(&bytes)
}
