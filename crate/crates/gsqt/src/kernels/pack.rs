//! Bit-exact wire encoding for GSE groups.
//!
//! Each group starts on a byte boundary and occupies
//! `group_stride_bytes()` bytes. Inside the group, bits are written
//! LSB-first: the 5-bit biased exponent field comes first, then each
//! mantissa as a sign bit (1 = negative) followed by `M` magnitude bits.
//! The meaningful payload is exactly `N * (M + 1) + 5` bits; the remainder
//! of the last byte is zero.
//!
//! The encoding is canonical: a zero mantissa always carries sign bit 0,
//! and decoding rejects the negative-zero pattern so that
//! pack -> unpack -> pack reproduces input bytes exactly.

use crate::error::{Error, Result};
use crate::formats::gse::{GseGroup, GseSpec};
use crate::kernels::GseTensor;

/// LSB-first bit accumulator over a byte vector.
#[derive(Debug, Default)]
pub struct BitWriter {
    bytes: Vec<u8>,
    /// Bits used in the final byte; 0 means byte-aligned.
    used: u8,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append the low `width` bits of `value`, LSB-first.
    pub fn push(&mut self, value: u32, width: u8) {
        debug_assert!(width <= 32);
        debug_assert!(width == 32 || value < (1u32 << width));
        let mut value = value;
        let mut remaining = width;
        while remaining > 0 {
            if self.used == 0 {
                self.bytes.push(0);
            }
            let free = 8 - self.used;
            let take = free.min(remaining);
            let mask = (1u32 << take) - 1;
            let last = self.bytes.last_mut().expect("byte pushed above");
            *last |= ((value & mask) as u8) << self.used;
            value >>= take;
            self.used = (self.used + take) % 8;
            remaining -= take;
        }
    }

    /// Zero-fill to the next byte boundary.
    pub fn align(&mut self) {
        self.used = 0;
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }

    pub fn len_bytes(&self) -> usize {
        self.bytes.len()
    }
}

/// LSB-first bit cursor over a byte slice.
#[derive(Debug)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    /// Absolute bit position from the start of the slice.
    pos: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    /// Read `width` bits, LSB-first.
    pub fn pull(&mut self, width: u8) -> Result<u32> {
        let mut out = 0u32;
        for i in 0..width {
            let byte = self.pos / 8;
            let bit = self.pos % 8;
            let b = *self.bytes.get(byte).ok_or(Error::Parse {
                offset: byte,
                detail: "bit stream ended mid-group".into(),
            })?;
            out |= u32::from((b >> bit) & 1) << i;
            self.pos += 1;
        }
        Ok(out)
    }

    /// Skip to the next byte boundary, checking the padding bits are zero.
    pub fn align(&mut self) -> Result<()> {
        while self.pos % 8 != 0 {
            if self.pull(1)? != 0 {
                return Err(Error::Parse {
                    offset: (self.pos - 1) / 8,
                    detail: "nonzero padding bit".into(),
                });
            }
        }
        Ok(())
    }

    pub fn byte_offset(&self) -> usize {
        self.pos.div_ceil(8)
    }
}

/// Encode one group; the writer must be byte-aligned on entry.
pub fn pack_group(group: &GseGroup, spec: &GseSpec, w: &mut BitWriter) -> Result<()> {
    if group.len() != spec.group_size() {
        return Err(Error::SpecMismatch {
            op: "pack_group",
            detail: format!(
                "group has {} mantissas, spec wants {}",
                group.len(),
                spec.group_size()
            ),
        });
    }
    let field = group.exponent() + spec.exponent_bias();
    debug_assert!((0..32).contains(&field), "biased exponent out of field");
    w.push(field as u32, 5);
    let m_bits = spec.mantissa_bits() as u8;
    for &m in group.mantissas() {
        debug_assert!(m.unsigned_abs() <= spec.mantissa_max() as u32);
        w.push(u32::from(m < 0), 1);
        w.push(m.unsigned_abs(), m_bits);
    }
    w.align();
    Ok(())
}

/// Decode one group; the reader must be byte-aligned on entry.
pub fn unpack_group(r: &mut BitReader, spec: &GseSpec) -> Result<GseGroup> {
    let start = r.byte_offset();
    let field = r.pull(5)? as i32;
    let exponent = field - spec.exponent_bias();
    let m_bits = spec.mantissa_bits() as u8;
    let mut mantissas = Vec::with_capacity(spec.group_size());
    for _ in 0..spec.group_size() {
        let sign = r.pull(1)?;
        let mag = r.pull(m_bits)? as i32;
        if sign == 1 && mag == 0 {
            return Err(Error::Parse {
                offset: start,
                detail: "negative-zero mantissa encoding".into(),
            });
        }
        mantissas.push(if sign == 1 { -mag } else { mag });
    }
    r.align()?;
    GseGroup::new(exponent, mantissas, spec).map_err(|e| Error::Parse {
        offset: start,
        detail: format!("invalid group: {e}"),
    })
}

/// Pack every group of a tensor, each starting byte-aligned, in storage
/// order (line by line, ascending groups within a line).
pub fn pack_tensor_payload(t: &GseTensor) -> Result<Vec<u8>> {
    let mut w = BitWriter::new();
    for g in t.groups() {
        pack_group(g, t.spec(), &mut w)?;
    }
    debug_assert_eq!(
        w.len_bytes(),
        t.groups().len() * t.spec().group_stride_bytes()
    );
    Ok(w.into_bytes())
}

/// Decode `count` byte-aligned groups from `bytes`.
pub fn unpack_groups(bytes: &[u8], spec: &GseSpec, count: usize) -> Result<Vec<GseGroup>> {
    let need = count * spec.group_stride_bytes();
    if bytes.len() != need {
        return Err(Error::Parse {
            offset: bytes.len().min(need),
            detail: format!("payload is {} bytes, expected {need}", bytes.len()),
        });
    }
    let mut r = BitReader::new(bytes);
    (0..count).map(|_| unpack_group(&mut r, spec)).collect()
}
