//! 4-bit NormalFloat (NF4) block quantization for frozen weights.
//!
//! Each weight is stored as a 4-bit index into a fixed 16-entry codebook of
//! normalized standard-normal quantiles, scaled by its block's absolute
//! maximum. Block scales are themselves quantized to 8 bits against a
//! second-level scale shared by up to [`NF4_BLOCKS_PER_SCALE`] blocks
//! (double quantization), so the per-element overhead stays near
//! `8/block_len` bits.
//!
//! The second-level scale is the smallest power of two `s` with
//! `255 * s >= max(block absmaxes)`. A power of two keeps every decode an
//! exact dyadic product, which makes quantize-of-dequantize a true fixed
//! point: the largest absmax code always lands in `[128, 255]`, so
//! re-quantizing decoded data reproduces the same scale, the same absmax
//! codes, and the same element codes, bit for bit.
//!
//! The codebook constants are frozen here and regenerated by the checked-in
//! generator (`examples/gen_nf4_codebook.rs`); a test cross-checks the two.
//! Construction: 8 evenly spaced upper-tail probabilities from 0.9677083
//! down to 0.5 (endpoint dropped) give the positive quantiles, 7 the
//! negative ones, an exact zero sits between, and everything is normalized
//! by the largest magnitude so the endpoints are exactly -1 and 1.

use crate::error::{Error, Result};
use crate::mat::Mat;

/// Normalized standard-normal quantile codebook, ascending. Regenerate with
/// `cargo run -p gsqt --example gen_nf4_codebook`.
pub const NF4_CODEBOOK: [f64; 16] = [
    -1.00000000000000000e0,
    -6.96192890603720138e-1,
    -5.25073038695229255e-1,
    -3.94917490699309870e-1,
    -2.84441357618107626e-1,
    -1.84773435192888857e-1,
    -9.10499921442793070e-2,
    0.0,
    7.95803290941693720e-2,
    1.60930172704936120e-1,
    2.46112293929935888e-1,
    3.37915193521655055e-1,
    4.40709802413190188e-1,
    5.62616970075237144e-1,
    7.22956727892882345e-1,
    1.00000000000000000e0,
];

/// Default elements per block.
pub const NF4_BLOCK_LEN: usize = 64;

/// Blocks whose absmax codes share one second-level scale.
pub const NF4_BLOCKS_PER_SCALE: usize = 256;

/// Index of the exact zero in [`NF4_CODEBOOK`].
pub const NF4_ZERO_CODE: u8 = 7;

/// Nearest codebook index; ties break toward the smaller index.
pub fn nf4_nearest_code(x: f64) -> u8 {
    let mut best = 0usize;
    let mut best_dist = (x - NF4_CODEBOOK[0]).abs();
    for (i, &c) in NF4_CODEBOOK.iter().enumerate().skip(1) {
        let d = (x - c).abs();
        if d < best_dist {
            best = i;
            best_dist = d;
        }
    }
    best as u8
}

/// One quantized block: 4-bit codes, an 8-bit code for the block's absolute
/// maximum, and the second-level scale that code is taken against.
///
/// Blocks produced by [`nf4_quantize`] share `scale_of_scales` within each
/// run of [`NF4_BLOCKS_PER_SCALE`] consecutive blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Nf4Block {
    codes: Vec<u8>,
    absmax_code: u8,
    scale_of_scales: f64,
}

impl Nf4Block {
    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    pub fn absmax_code(&self) -> u8 {
        self.absmax_code
    }

    pub fn scale_of_scales(&self) -> f64 {
        self.scale_of_scales
    }

    /// Reconstructed block scale.
    pub fn scale(&self) -> f64 {
        f64::from(self.absmax_code) * self.scale_of_scales
    }

    pub(crate) fn from_parts(codes: Vec<u8>, absmax_code: u8, scale_of_scales: f64) -> Result<Self> {
        if let Some(bad) = codes.iter().position(|&c| c >= 16) {
            return Err(Error::Corrupt(format!(
                "NF4 code {} at index {bad} is out of range",
                codes[bad]
            )));
        }
        Ok(Nf4Block {
            codes,
            absmax_code,
            scale_of_scales,
        })
    }
}

/// A quantized vector: a block sequence plus the original length.
#[derive(Debug, Clone, PartialEq)]
pub struct Nf4Vector {
    block_len: usize,
    len: usize,
    blocks: Vec<Nf4Block>,
}

impl Nf4Vector {
    pub fn block_len(&self) -> usize {
        self.block_len
    }

    /// Original (unpadded) element count.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn blocks(&self) -> &[Nf4Block] {
        &self.blocks
    }

    pub(crate) fn from_parts(block_len: usize, len: usize, blocks: Vec<Nf4Block>) -> Result<Self> {
        if block_len == 0 {
            return Err(Error::InvalidFormat("NF4 block length must be >= 1".into()));
        }
        let expected = len.div_ceil(block_len);
        if blocks.len() != expected {
            return Err(Error::Corrupt(format!(
                "NF4 vector of length {len} needs {expected} blocks, got {}",
                blocks.len()
            )));
        }
        if blocks.iter().any(|b| b.codes.len() != block_len) {
            return Err(Error::Corrupt("NF4 block with wrong code count".into()));
        }
        Ok(Nf4Vector {
            block_len,
            len,
            blocks,
        })
    }
}

/// Quantize a slice into NF4 blocks of `block_len` elements.
///
/// The tail block is zero-padded. A block of all zeros keeps a degenerate
/// unit scale during code selection so every element maps to the exact-zero
/// code; its absmax code is 0, so it decodes to zeros. When every block in a
/// second-level chunk has absmax 0 the chunk's scale-of-scales degenerates
/// to 1.
pub fn nf4_quantize(w: &[f64], block_len: usize) -> Result<Nf4Vector> {
    if block_len == 0 {
        return Err(Error::InvalidFormat("NF4 block length must be >= 1".into()));
    }
    if let Some(index) = w.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "nf4_quantize input".into(),
            index,
        });
    }
    let n_blocks = w.len().div_ceil(block_len);
    let mut absmaxes = Vec::with_capacity(n_blocks);
    for b in 0..n_blocks {
        let start = b * block_len;
        let end = (start + block_len).min(w.len());
        let a = w[start..end].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        absmaxes.push(a);
    }
    let mut blocks = Vec::with_capacity(n_blocks);
    for (chunk_idx, chunk) in absmaxes.chunks(NF4_BLOCKS_PER_SCALE).enumerate() {
        let chunk_max = chunk.iter().fold(0.0f64, |m, &v| m.max(v));
        let sos = second_level_scale(chunk_max);
        for (j, &absmax) in chunk.iter().enumerate() {
            let b = chunk_idx * NF4_BLOCKS_PER_SCALE + j;
            let start = b * block_len;
            let end = (start + block_len).min(w.len());
            let norm = if absmax == 0.0 { 1.0 } else { absmax };
            let mut codes = Vec::with_capacity(block_len);
            for &v in &w[start..end] {
                codes.push(nf4_nearest_code(v / norm));
            }
            codes.resize(block_len, NF4_ZERO_CODE);
            let absmax_code = (absmax / sos).round_ties_even().clamp(0.0, 255.0) as u8;
            blocks.push(Nf4Block {
                codes,
                absmax_code,
                scale_of_scales: sos,
            });
        }
    }
    Ok(Nf4Vector {
        block_len,
        len: w.len(),
        blocks,
    })
}

/// Smallest power of two `s` with `255 * s >= chunk_max`; 1 for an all-zero
/// chunk. The comparison is exact because `255 * 2^k` is a short dyadic.
fn second_level_scale(chunk_max: f64) -> f64 {
    if chunk_max == 0.0 {
        return 1.0;
    }
    let mut k = crate::formats::fp::binary_exponent(chunk_max) - 8;
    while crate::formats::fp::exp2i(k) * 255.0 < chunk_max {
        k += 1;
    }
    crate::formats::fp::exp2i(k)
}

/// Decode a quantized vector back to full precision.
pub fn nf4_dequantize(v: &Nf4Vector) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len);
    'outer: for block in &v.blocks {
        let scale = block.scale();
        for &c in &block.codes {
            if out.len() == v.len {
                break 'outer;
            }
            out.push(NF4_CODEBOOK[c as usize] * scale);
        }
    }
    out
}

/// A matrix stored as NF4 blocks over its row-major flattening.
#[derive(Debug, Clone, PartialEq)]
pub struct Nf4Matrix {
    rows: usize,
    cols: usize,
    data: Nf4Vector,
}

impl Nf4Matrix {
    pub fn from_mat(m: &Mat, block_len: usize) -> Result<Self> {
        Ok(Nf4Matrix {
            rows: m.rows(),
            cols: m.cols(),
            data: nf4_quantize(m.data(), block_len)?,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn vector(&self) -> &Nf4Vector {
        &self.data
    }

    pub(crate) fn from_vector(rows: usize, cols: usize, data: Nf4Vector) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Corrupt(format!(
                "NF4 matrix {rows}x{cols} needs {} elements, vector has {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Nf4Matrix { rows, cols, data })
    }

    pub fn dequantize(&self) -> Mat {
        Mat::from_vec(self.rows, self.cols, nf4_dequantize(&self.data))
            .expect("decoded length matches dims by construction")
    }

    /// Canonical byte serialization of the block payload. Scale-of-scales
    /// values are written once per second-level chunk, then per-block absmax
    /// codes, then 4-bit codes packed two per byte (low nibble first).
    pub fn payload_bytes(&self) -> Vec<u8> {
        let v = &self.data;
        let mut out = Vec::new();
        for chunk in v.blocks.chunks(NF4_BLOCKS_PER_SCALE) {
            out.extend_from_slice(&chunk[0].scale_of_scales.to_le_bytes());
        }
        for block in &v.blocks {
            out.push(block.absmax_code);
        }
        for block in &v.blocks {
            let mut i = 0;
            while i < block.codes.len() {
                let lo = block.codes[i] & 0x0f;
                let hi = if i + 1 < block.codes.len() {
                    block.codes[i + 1] & 0x0f
                } else {
                    0
                };
                out.push(lo | (hi << 4));
                i += 2;
            }
        }
        out
    }

    /// Exact [`payload_bytes`] length for a matrix of this shape.
    pub fn payload_len(rows: usize, cols: usize, block_len: usize) -> usize {
        let n_blocks = (rows * cols).div_ceil(block_len);
        let n_chunks = n_blocks.div_ceil(NF4_BLOCKS_PER_SCALE);
        n_chunks * 8 + n_blocks + n_blocks * block_len.div_ceil(2)
    }

    /// Inverse of [`payload_bytes`] for a matrix of known shape.
    pub fn from_payload_bytes(
        rows: usize,
        cols: usize,
        block_len: usize,
        bytes: &[u8],
    ) -> Result<Self> {
        if block_len == 0 {
            return Err(Error::InvalidFormat("NF4 block length must be >= 1".into()));
        }
        let expected = Self::payload_len(rows, cols, block_len);
        if bytes.len() != expected {
            return Err(Error::Parse {
                offset: bytes.len().min(expected),
                detail: format!("NF4 payload is {} bytes, expected {expected}", bytes.len()),
            });
        }
        let n_blocks = (rows * cols).div_ceil(block_len);
        let n_chunks = n_blocks.div_ceil(NF4_BLOCKS_PER_SCALE);
        let mut scales = Vec::with_capacity(n_chunks);
        for i in 0..n_chunks {
            let raw = f64::from_le_bytes(bytes[i * 8..i * 8 + 8].try_into().unwrap());
            if !raw.is_finite() || raw <= 0.0 {
                return Err(Error::Parse {
                    offset: i * 8,
                    detail: format!("second-level scale {raw} is not positive finite"),
                });
            }
            scales.push(raw);
        }
        let absmax_at = n_chunks * 8;
        let codes_at = absmax_at + n_blocks;
        let code_bytes = block_len.div_ceil(2);
        let mut blocks = Vec::with_capacity(n_blocks);
        for b in 0..n_blocks {
            let mut codes = Vec::with_capacity(block_len);
            let base = codes_at + b * code_bytes;
            for i in 0..block_len {
                let byte = bytes[base + i / 2];
                codes.push(if i % 2 == 0 { byte & 0x0f } else { byte >> 4 });
            }
            blocks.push(Nf4Block::from_parts(
                codes,
                bytes[absmax_at + b],
                scales[b / NF4_BLOCKS_PER_SCALE],
            )?);
        }
        Nf4Matrix::from_vector(rows, cols, Nf4Vector::from_parts(block_len, rows * cols, blocks)?)
    }
}
