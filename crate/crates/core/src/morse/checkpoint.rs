//! Morse model checkpoint.
//!
//! ```text
//! "BSTM"  u32 version  u8 kernel  f64 scale  f64 mixture
//! u32 state_dim  u32 action_dim  f64[state_dim] mean  f64[state_dim] std
//! perturbation network in the parameter checkpoint format
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{KernelKind, KernelSpec, MorseError, MorseModel, Result};
use crate::envdata::StateNormalizer;
use crate::nn::{read_net, write_net, NnError};

pub const MORSE_MAGIC: [u8; 4] = *b"BSTM";
pub const MORSE_VERSION: u32 = 1;

pub fn write_morse<W: Write>(model: &MorseModel, out: &mut W) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&MORSE_MAGIC);
    buf.extend_from_slice(&MORSE_VERSION.to_le_bytes());
    let k = model.kernel();
    buf.push(k.kind.tag());
    buf.extend_from_slice(&k.scale.to_le_bytes());
    buf.extend_from_slice(&k.mixture.to_le_bytes());
    buf.extend_from_slice(&(model.state_dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(model.action_dim() as u32).to_le_bytes());
    let norm = model.normalizer();
    for v in norm.mean.iter().chain(&norm.std) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    write_net(model.net(), out)?;
    Ok(())
}

struct Reader<'a, R> {
    inner: &'a mut R,
    offset: usize,
}

impl<R: Read> Reader<'_, R> {
    fn bytes<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => MorseError::Format {
                offset: self.offset,
                message: format!("truncated while reading {what}"),
            },
            _ => MorseError::Io(e),
        })?;
        self.offset += N;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(what)?))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(what)?))
    }
}

pub fn read_morse<R: Read>(input: &mut R) -> Result<MorseModel> {
    let mut r = Reader { inner: input, offset: 0 };
    let magic = r.bytes::<4>("magic")?;
    if magic != MORSE_MAGIC {
        return Err(MorseError::Format {
            offset: 0,
            message: format!("bad magic {magic:?}"),
        });
    }
    let version = r.u32("version")?;
    if version != MORSE_VERSION {
        return Err(MorseError::Format {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let tag = r.bytes::<1>("kernel kind")?[0];
    let kind = KernelKind::from_tag(tag).ok_or_else(|| MorseError::Format {
        offset: 8,
        message: format!("unknown kernel tag {tag}"),
    })?;
    let scale = r.f64("kernel scale")?;
    let mixture = r.f64("kernel mixture")?;
    let state_dim = r.u32("state dim")? as usize;
    let action_dim = r.u32("action dim")? as usize;
    let mut mean = Vec::with_capacity(state_dim);
    for _ in 0..state_dim {
        mean.push(r.f64("normalizer mean")?);
    }
    let mut std = Vec::with_capacity(state_dim);
    for _ in 0..state_dim {
        std.push(r.f64("normalizer std")?);
    }
    let header = r.offset;
    let net = read_net(r.inner).map_err(|e| match e {
        NnError::Format { offset, message } => MorseError::Format {
            offset: header + offset,
            message,
        },
        other => MorseError::Nn(other),
    })?;
    MorseModel::from_parts(
        net,
        KernelSpec { kind, scale, mixture },
        state_dim,
        action_dim,
        StateNormalizer { mean, std },
    )
}

pub fn save_morse(model: &MorseModel, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_morse(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_morse(path: &Path) -> Result<MorseModel> {
    read_morse(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> MorseModel {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let norm = StateNormalizer {
            mean: vec![0.5, -1.0],
            std: vec![2.0, 0.25],
        };
        MorseModel::new(2, 2, &[8, 8], true, KernelSpec::rational_quadratic(1.5, 0.7), norm, &mut rng).unwrap()
    }

    #[test]
    fn roundtrip_preserves_certainty() {
        let m = model();
        let mut bytes = Vec::new();
        write_morse(&m, &mut bytes).unwrap();
        let back = read_morse(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, m);
        let s = [0.3, 0.2];
        let a = [-0.4, 0.9];
        assert_eq!(back.certainty(&s, &a).unwrap(), m.certainty(&s, &a).unwrap());
    }

    #[test]
    fn truncation_reports_offset() {
        let m = model();
        let mut bytes = Vec::new();
        write_morse(&m, &mut bytes).unwrap();
        bytes.truncate(bytes.len() - 3);
        match read_morse(&mut bytes.as_slice()) {
            Err(MorseError::Format { offset, .. }) => assert!(offset > 60),
            other => panic!("{other:?}"),
        }
        let mut bad = Vec::new();
        write_morse(&m, &mut bad).unwrap();
        bad[0] = b'X';
        assert!(matches!(read_morse(&mut bad.as_slice()), Err(MorseError::Format { offset: 0, .. })));
    }
}
