//! Parameter checkpoint format.
//!
//! ```text
//! "BSTW"  u32 version  u32 layer_count  u8 squash
//! per layer: u32 input  u32 output  u8 activation
//! f64 parameters, layer by layer: weight (row-major, input × output), bias
//! ```
//! All integers and floats little-endian.

use std::io::{Read, Write};

use ndarray::{Array1, Array2};

use super::{Activation, Dense, DenseNet, NnError, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"BSTW";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_net<W: Write>(net: &DenseNet, out: &mut W) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + net.parameter_count() * 8);
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
    buf.push(u8::from(net.squashed()));
    for layer in net.layers() {
        buf.extend_from_slice(&(layer.input_width() as u32).to_le_bytes());
        buf.extend_from_slice(&(layer.output_width() as u32).to_le_bytes());
        buf.push(layer.activation.tag());
    }
    for layer in net.layers() {
        for v in layer.weight.iter().chain(layer.bias.iter()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a, R> {
    inner: &'a mut R,
    offset: usize,
}

impl<R: Read> Cursor<'_, R> {
    fn bytes<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => NnError::Format {
                offset: self.offset,
                message: format!("truncated while reading {what}"),
            },
            _ => NnError::Io(e),
        })?;
        self.offset += N;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes::<4>(what)?))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes::<8>(what)?))
    }
}

pub fn read_net<R: Read>(input: &mut R) -> Result<DenseNet> {
    let mut cur = Cursor { inner: input, offset: 0 };
    let magic = cur.bytes::<4>("magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(NnError::Format {
            offset: 0,
            message: format!("bad magic {magic:?}"),
        });
    }
    let version = cur.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(NnError::Format {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let count = cur.u32("layer count")? as usize;
    if count == 0 || count > 1024 {
        return Err(NnError::Format {
            offset: 8,
            message: format!("implausible layer count {count}"),
        });
    }
    let squash = cur.bytes::<1>("squash flag")?[0] != 0;
    let mut shapes = Vec::with_capacity(count);
    for _ in 0..count {
        let input = cur.u32("layer input width")? as usize;
        let output = cur.u32("layer output width")? as usize;
        let at = cur.offset;
        let tag = cur.bytes::<1>("activation tag")?[0];
        let activation = Activation::from_tag(tag).ok_or_else(|| NnError::Format {
            offset: at,
            message: format!("unknown activation tag {tag}"),
        })?;
        shapes.push((input, output, activation));
    }
    let mut layers = Vec::with_capacity(count);
    for (input, output, activation) in shapes {
        let mut weight = Vec::with_capacity(input * output);
        for _ in 0..input * output {
            weight.push(cur.f64("weights")?);
        }
        let mut bias = Vec::with_capacity(output);
        for _ in 0..output {
            bias.push(cur.f64("biases")?);
        }
        layers.push(Dense {
            weight: Array2::from_shape_vec((input, output), weight).expect("sized"),
            bias: Array1::from(bias),
            activation,
        });
    }
    DenseNet::new(layers, squash).map_err(|e| NnError::Format {
        offset: cur.offset,
        message: e.to_string(),
    })
}
