//! On-disk formats for dense matrices and packed GSE tensors.
//!
//! Two container formats, both little-endian and fully specified so byte
//! streams can be produced and checked by independent tooling:
//!
//! **Dense tensor (`GSQT`)**: magic `GSQT`, version byte, dtype byte
//! (0 = f32, 1 = f64), rank byte, `rank` dimensions as u64, then the
//! row-major payload of scalars.
//!
//! **Packed GSE tensor (`GSEB`)**: magic `GSEB`, version byte, total bits,
//! exponent bias (i8), group axis byte (0 = rows, 1 = cols), group size
//! (u32), rows and cols and per-line pad length (u64 each), then every
//! group in storage order via [`pack::pack_group`] with each group starting
//! byte-aligned.
//!
//! Quantization flags (clamp counts, saturation) are diagnostics of the
//! originating call and are not stored; a decoded tensor reports default
//! flags.
//!
//! All writes go through [`atomic_write`]: bytes land in a sibling
//! temporary file that is renamed over the target, so readers never observe
//! a partial file.

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::formats::gse::GseSpec;
use crate::kernels::pack::{self, BitReader};
use crate::kernels::{GroupAxis, GseTensor, QuantFlags};
use crate::mat::Mat;

const MAT_MAGIC: &[u8; 4] = b"GSQT";
const GSE_MAGIC: &[u8; 4] = b"GSEB";
const FORMAT_VERSION: u8 = 1;

/// Scalar width of a dense tensor payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    fn from_code(code: u8, offset: usize) -> Result<Self> {
        match code {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F64),
            other => Err(Error::Parse {
                offset,
                detail: format!("unknown dtype code {other}"),
            }),
        }
    }

    fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Byte cursor with offset-carrying errors.
struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Parse {
                offset: self.pos,
                detail: format!("file ends inside {what}"),
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

    fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != magic {
            return Err(Error::Parse {
                offset: 0,
                detail: format!(
                    "bad magic {:02x?}, expected {:?}",
                    got,
                    std::str::from_utf8(magic).unwrap()
                ),
            });
        }
        Ok(())
    }

    fn expect_version(&mut self) -> Result<()> {
        let offset = self.pos;
        let v = self.u8("version")?;
        if v != FORMAT_VERSION {
            return Err(Error::Parse {
                offset,
                detail: format!("unsupported version {v}"),
            });
        }
        Ok(())
    }

    fn expect_end(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Parse {
                offset: self.pos,
                detail: format!("{} trailing bytes", self.bytes.len() - self.pos),
            });
        }
        Ok(())
    }
}

/// Encode a dense matrix (always rank 2 on the wire).
pub fn mat_to_bytes(m: &Mat, dtype: Dtype) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 3 + 16 + m.data().len() * dtype.size());
    out.extend_from_slice(MAT_MAGIC);
    out.push(FORMAT_VERSION);
    out.push(dtype.code());
    out.push(2);
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for &v in m.data() {
        match dtype {
            Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    out
}

/// Decode a dense matrix. Rank 1 payloads load as a single row.
pub fn mat_from_bytes(bytes: &[u8]) -> Result<Mat> {
    let mut c = Cursor::new(bytes);
    c.expect_magic(MAT_MAGIC)?;
    c.expect_version()?;
    let dtype_at = c.pos;
    let dtype = Dtype::from_code(c.u8("dtype")?, dtype_at)?;
    let rank_at = c.pos;
    let rank = c.u8("rank")?;
    let (rows, cols) = match rank {
        1 => (1usize, c.u64("dims")? as usize),
        2 => (c.u64("dims")? as usize, c.u64("dims")? as usize),
        other => {
            return Err(Error::Parse {
                offset: rank_at,
                detail: format!("rank {other} not supported, expected 1 or 2"),
            })
        }
    };
    let count = rows.checked_mul(cols).ok_or(Error::Parse {
        offset: rank_at,
        detail: "dimension product overflows".into(),
    })?;
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        let v = match dtype {
            Dtype::F32 => f64::from(f32::from_le_bytes(
                c.take(4, "payload")?.try_into().unwrap(),
            )),
            Dtype::F64 => f64::from_le_bytes(c.take(8, "payload")?.try_into().unwrap()),
        };
        data.push(v);
    }
    c.expect_end()?;
    Mat::from_vec(rows, cols, data)
}

pub fn write_mat_file(path: &Path, m: &Mat, dtype: Dtype) -> Result<()> {
    atomic_write(path, &mat_to_bytes(m, dtype))
}

pub fn read_mat_file(path: &Path) -> Result<Mat> {
    mat_from_bytes(&fs::read(path)?)
}

fn axis_code(axis: GroupAxis) -> u8 {
    match axis {
        GroupAxis::Rows => 0,
        GroupAxis::Cols => 1,
    }
}

/// Encode a packed GSE tensor.
pub fn gse_to_bytes(t: &GseTensor) -> Result<Vec<u8>> {
    let spec = t.spec();
    let mut out = Vec::new();
    out.extend_from_slice(GSE_MAGIC);
    out.push(FORMAT_VERSION);
    out.push(spec.total_bits());
    out.push(spec.exponent_bias() as u8);
    out.push(axis_code(t.axis()));
    out.extend_from_slice(&(spec.group_size() as u32).to_le_bytes());
    out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
    out.extend_from_slice(&(t.pad_len() as u64).to_le_bytes());
    out.extend_from_slice(&pack::pack_tensor_payload(t)?);
    Ok(out)
}

/// Decode a packed GSE tensor. Flags are not stored and decode as default.
pub fn gse_from_bytes(bytes: &[u8]) -> Result<GseTensor> {
    let mut c = Cursor::new(bytes);
    c.expect_magic(GSE_MAGIC)?;
    c.expect_version()?;
    let header_at = c.pos;
    let total_bits = c.u8("total bits")?;
    let bias = c.u8("bias")? as i8;
    let axis = match c.u8("axis")? {
        0 => GroupAxis::Rows,
        1 => GroupAxis::Cols,
        other => {
            return Err(Error::Parse {
                offset: c.pos - 1,
                detail: format!("unknown axis code {other}"),
            })
        }
    };
    let group_size = c.u32("group size")? as usize;
    let rows = c.u64("rows")? as usize;
    let cols = c.u64("cols")? as usize;
    let pad_len = c.u64("pad length")? as usize;
    let spec =
        GseSpec::with_bias(total_bits, group_size, i32::from(bias)).map_err(|e| Error::Parse {
            offset: header_at,
            detail: format!("invalid spec in header: {e}"),
        })?;
    let lines = match axis {
        GroupAxis::Rows => rows,
        GroupAxis::Cols => cols,
    };
    let reduction = match axis {
        GroupAxis::Rows => cols,
        GroupAxis::Cols => rows,
    };
    let count = lines * reduction.div_ceil(group_size);
    let payload_at = c.pos;
    let payload = c.take(count * spec.group_stride_bytes(), "group payload")?;
    c.expect_end()?;
    let mut r = BitReader::new(payload);
    let mut groups = Vec::with_capacity(count);
    for _ in 0..count {
        groups.push(pack::unpack_group(&mut r, &spec).map_err(|e| match e {
            Error::Parse { offset, detail } => Error::Parse {
                offset: payload_at + offset,
                detail,
            },
            other => other,
        })?);
    }
    GseTensor::from_parts(rows, cols, axis, spec, groups, pad_len, QuantFlags::default())
}

pub fn write_gse_file(path: &Path, t: &GseTensor) -> Result<()> {
    atomic_write(path, &gse_to_bytes(t)?)
}

pub fn read_gse_file(path: &Path) -> Result<GseTensor> {
    gse_from_bytes(&fs::read(path)?)
}

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Write `bytes` to `path` via a same-directory temp file and rename, so a
/// crash mid-write never leaves a truncated artifact at `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let stem = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("cannot write to {}", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp.{}.{}",
        stem.to_string_lossy(),
        std::process::id(),
        TEMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    fs::write(&tmp, bytes)?;
    match fs::rename(&tmp, path) {
        Ok(()) => Ok(()),
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e.into())
        }
    }
}
