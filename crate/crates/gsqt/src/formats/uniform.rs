//! Uniform affine scalar quantizer used as a comparison baseline.
//!
//! The scale is set from the absolute maximum of the data,
//! `s = max|x| / (2^(b-1) - 1)`, the zero point sits at the center of the
//! code range, `z = 2^(b-1)`, and codes are clamped to `[0, 2^b - 1]`.
//! Rounding is half-to-even. An all-zero input degenerates to `s = 1` so
//! every element maps to the zero point.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformQuantParams {
    pub scale: f64,
    pub zero_point: i64,
    pub bits: u8,
    pub q_min: i64,
    pub q_max: i64,
}

/// Quantize a slice to `bits`-wide codes. `bits` must lie in `[2, 8]`.
pub fn uniform_quantize(x: &[f64], bits: u8) -> Result<(Vec<u8>, UniformQuantParams)> {
    if !(2..=8).contains(&bits) {
        return Err(Error::InvalidFormat(format!(
            "uniform quantizer bits must be in [2, 8], got {bits}"
        )));
    }
    if let Some(index) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "uniform_quantize input".into(),
            index,
        });
    }
    let q_max = (1i64 << bits) - 1;
    let zero_point = 1i64 << (bits - 1);
    let max_abs = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if max_abs == 0.0 {
        1.0
    } else {
        max_abs / ((1i64 << (bits - 1)) - 1) as f64
    };
    let codes = x
        .iter()
        .map(|&v| {
            let q = (v / scale).round_ties_even() as i64 + zero_point;
            q.clamp(0, q_max) as u8
        })
        .collect();
    Ok((
        codes,
        UniformQuantParams {
            scale,
            zero_point,
            bits,
            q_min: 0,
            q_max,
        },
    ))
}

pub fn uniform_dequantize(codes: &[u8], params: &UniformQuantParams) -> Vec<f64> {
    codes
        .iter()
        .map(|&c| (i64::from(c) - params.zero_point) as f64 * params.scale)
        .collect()
}
