//! Layer checkpoints: the frozen 4-bit base verbatim plus f32 adapters.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "GSQL" | version u8
//! name: len u32, utf8 bytes
//! out_features u64 | in_features u64 | rank u64
//! act_bits u8 | grad_bits u8 | adapter_bits u8 | identity u8
//! group_size u32 | block_len u32 | scale f64
//! frozen base payload (see Nf4Matrix::payload_bytes)
//! A as f32 row-major (rank x in), then B as f32 row-major (out x rank)
//! ```
//!
//! The 4-bit payload is carried byte for byte, so save and load round-trip
//! the frozen base exactly; adapters pass through f32, which is their
//! on-disk master precision.

use std::fs;
use std::path::Path;

use crate::autograd::{LoraLinear, QuantConfig};
use crate::error::{Error, Result};
use crate::formats::nf4::Nf4Matrix;
use crate::io::atomic_write;
use crate::mat::Mat;

const MAGIC: &[u8; 4] = b"GSQL";
const VERSION: u8 = 1;

pub fn layer_to_bytes(layer: &LoraLinear) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    let name = layer.name().as_bytes();
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name);
    out.extend_from_slice(&(layer.out_features() as u64).to_le_bytes());
    out.extend_from_slice(&(layer.in_features() as u64).to_le_bytes());
    let config = layer.config();
    out.extend_from_slice(&(config.rank as u64).to_le_bytes());
    out.push(config.act_bits);
    out.push(config.grad_bits);
    out.push(config.adapter_bits);
    out.push(u8::from(config.identity_mode));
    out.extend_from_slice(&(config.group_size as u32).to_le_bytes());
    out.extend_from_slice(&(layer.frozen_base().vector().block_len() as u32).to_le_bytes());
    out.extend_from_slice(&layer.scale().to_le_bytes());
    out.extend_from_slice(&layer.frozen_base().payload_bytes());
    for &v in layer.a().data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    for &v in layer.b().data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Parse {
                offset: self.pos,
                detail: format!("checkpoint ends inside {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn layer_from_bytes(bytes: &[u8]) -> Result<LoraLinear> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::Parse {
            offset: 0,
            detail: "bad magic, expected GSQL".into(),
        });
    }
    let version = c.u8("version")?;
    if version != VERSION {
        return Err(Error::Parse {
            offset: 4,
            detail: format!("unsupported version {version}"),
        });
    }
    let name_len = c.u32("name length")? as usize;
    let name_at = c.pos;
    let name = std::str::from_utf8(c.take(name_len, "name")?)
        .map_err(|e| Error::Parse {
            offset: name_at,
            detail: format!("name is not utf8: {e}"),
        })?
        .to_string();
    let out_features = c.u64("out features")? as usize;
    let in_features = c.u64("in features")? as usize;
    let rank = c.u64("rank")? as usize;
    let act_bits = c.u8("activation bits")?;
    let grad_bits = c.u8("gradient bits")?;
    let adapter_bits = c.u8("adapter bits")?;
    let identity = c.u8("identity flag")?;
    let group_size = c.u32("group size")? as usize;
    let block_len = c.u32("block length")? as usize;
    let scale = c.f64("scale")?;
    let config_at = c.pos;
    let mut config = QuantConfig {
        act_bits,
        grad_bits,
        adapter_bits,
        group_size,
        rank,
        identity_mode: identity != 0,
    };
    config = config.validated().map_err(|e| Error::Parse {
        offset: config_at,
        detail: format!("invalid config in header: {e}"),
    })?;
    if block_len == 0 {
        return Err(Error::Parse {
            offset: config_at,
            detail: "block length must be >= 1".into(),
        });
    }
    let payload_at = c.pos;
    let payload = c.take(
        Nf4Matrix::payload_len(out_features, in_features, block_len),
        "frozen base payload",
    )?;
    let w_frozen = Nf4Matrix::from_payload_bytes(out_features, in_features, block_len, payload)
        .map_err(|e| match e {
            Error::Parse { offset, detail } => Error::Parse {
                offset: payload_at + offset,
                detail,
            },
            other => other,
        })?;
    let mut read_f32_mat = |rows: usize, cols: usize, what: &str| -> Result<Mat> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(f64::from(f32::from_le_bytes(
                c.take(4, what)?.try_into().unwrap(),
            )));
        }
        Mat::from_vec(rows, cols, data)
    };
    let a = read_f32_mat(rank, in_features, "adapter A")?;
    let b = read_f32_mat(out_features, rank, "adapter B")?;
    if c.pos != bytes.len() {
        return Err(Error::Parse {
            offset: c.pos,
            detail: format!("{} trailing bytes", bytes.len() - c.pos),
        });
    }
    if !scale.is_finite() || scale <= 0.0 {
        return Err(Error::Parse {
            offset: config_at,
            detail: format!("scale {scale} is not positive finite"),
        });
    }
    Ok(LoraLinear::assemble(name, w_frozen, a, b, scale, config))
}

pub fn save_layer(path: &Path, layer: &LoraLinear) -> Result<()> {
    atomic_write(path, &layer_to_bytes(layer))
}

pub fn load_layer(path: &Path) -> Result<LoraLinear> {
    layer_from_bytes(&fs::read(path)?)
}
