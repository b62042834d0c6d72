//! Emulated low-bit floating-point baselines (FP8/FP7/FP6).
//!
//! A format is described by an exponent width `E`, a mantissa width `M`, and
//! a bias. The significand is stored explicitly, with no implicit leading
//! bit: a normalized code holds `m in [2^(M-1), 2^M - 1]` and decodes to
//!
//! ```text
//! value = (-1)^s * m * 2^(e - (M - 1))
//! ```
//!
//! while codes at the minimum exponent with `m < 2^(M-1)` fill in the
//! subnormal range down to zero. Total storage per element is `1 + E + M`
//! bits. All codes are finite: there are no infinity or NaN encodings, and
//! NaN input is rejected. Values beyond the largest finite code saturate
//! when the format is marked `saturating`, otherwise they are an error.
//!
//! The explicit significand matters for representability. With two mantissa
//! bits the normalized significands are `{2, 3}`, so E5M2 hits 4 and 6 but
//! skips 5, 7, and 9; an implicit-leading-bit variant would not. Group-shared
//! integer formats drop the implicit bit, and these baselines follow the
//! same convention so comparisons are apples-to-apples.
//!
//! ```
//! use gsqt::formats::{fp_encode, FpFormat};
//! let e5m2 = FpFormat::e5m2();
//! assert_eq!(fp_encode(4.0, &e5m2).unwrap(), 4.0);
//! assert_eq!(fp_encode(5.0, &e5m2).unwrap(), 4.0); // tie rounds to even significand
//! assert_eq!(fp_encode(6.0, &e5m2).unwrap(), 6.0);
//! assert_ne!(fp_encode(7.0, &e5m2).unwrap(), 7.0);
//! ```

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Descriptor for an emulated float format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FpFormat {
    exponent_bits: u8,
    mantissa_bits: u8,
    bias: i32,
    saturating: bool,
}

impl FpFormat {
    /// New format with the conventional bias `2^(E-1) - 1`, saturating.
    pub fn new(exponent_bits: u8, mantissa_bits: u8) -> Result<Self> {
        let bias = (1i32 << (exponent_bits.max(1) - 1)) - 1;
        Self::with_bias(exponent_bits, mantissa_bits, bias)
    }

    pub fn with_bias(exponent_bits: u8, mantissa_bits: u8, bias: i32) -> Result<Self> {
        if exponent_bits < 2 {
            return Err(Error::InvalidFormat(format!(
                "need at least 2 exponent bits, got {exponent_bits}"
            )));
        }
        if mantissa_bits < 1 {
            return Err(Error::InvalidFormat("need at least 1 mantissa bit".into()));
        }
        if exponent_bits > 8 || mantissa_bits > 23 {
            return Err(Error::InvalidFormat(format!(
                "format E{exponent_bits}M{mantissa_bits} is wider than the emulation supports"
            )));
        }
        Ok(FpFormat {
            exponent_bits,
            mantissa_bits,
            bias,
            saturating: true,
        })
    }

    /// FP8 E4M3.
    pub fn e4m3() -> Self {
        FpFormat::new(4, 3).expect("static format is valid")
    }

    /// FP8 E5M2.
    pub fn e5m2() -> Self {
        FpFormat::new(5, 2).expect("static format is valid")
    }

    /// FP7 E3M3.
    pub fn e3m3() -> Self {
        FpFormat::new(3, 3).expect("static format is valid")
    }

    /// FP6 E3M2.
    pub fn e3m2() -> Self {
        FpFormat::new(3, 2).expect("static format is valid")
    }

    pub fn saturating(mut self, saturating: bool) -> Self {
        self.saturating = saturating;
        self
    }

    pub fn exponent_bits(&self) -> u8 {
        self.exponent_bits
    }

    pub fn mantissa_bits(&self) -> u8 {
        self.mantissa_bits
    }

    pub fn bias(&self) -> i32 {
        self.bias
    }

    pub fn is_saturating(&self) -> bool {
        self.saturating
    }

    /// Storage width: sign + exponent + mantissa.
    pub fn storage_bits(&self) -> u32 {
        1 + u32::from(self.exponent_bits) + u32::from(self.mantissa_bits)
    }

    /// Smallest exponent field value after bias removal.
    pub fn min_exponent(&self) -> i32 {
        -self.bias
    }

    /// Largest exponent field value after bias removal.
    pub fn max_exponent(&self) -> i32 {
        (1i32 << self.exponent_bits) - 1 - self.bias
    }

    /// Largest finite value: top significand at the top exponent.
    pub fn max_finite(&self) -> f64 {
        let m = ((1i64 << self.mantissa_bits) - 1) as f64;
        m * exp2i(self.max_exponent() - (i32::from(self.mantissa_bits) - 1))
    }

    /// Smallest positive value (bottom subnormal step).
    pub fn min_positive(&self) -> f64 {
        exp2i(self.min_exponent() - (i32::from(self.mantissa_bits) - 1))
    }

    fn name(&self) -> String {
        format!("E{}M{}", self.exponent_bits, self.mantissa_bits)
    }
}

/// Exact `2^e` for moderate exponents.
pub(crate) fn exp2i(e: i32) -> f64 {
    (e as f64).exp2()
}

/// Binary exponent of a finite nonzero value: the `e` with `|x| in [2^e, 2^(e+1))`.
pub(crate) fn binary_exponent(x: f64) -> i32 {
    debug_assert!(x.is_finite() && x != 0.0);
    let bits = x.abs().to_bits();
    let biased = (bits >> 52) as i32;
    if biased == 0 {
        // Subnormal f64: renormalize into the ordinary range first.
        let scaled = x.abs() * exp2i(200);
        (((scaled.to_bits() >> 52) as i32) - 1023) - 200
    } else {
        biased - 1023
    }
}

/// Encode one value to the nearest representable point of `fmt` and decode
/// it back, rounding ties to the even significand.
///
/// Zero is representable exactly. NaN is rejected. Values whose magnitude
/// exceeds the largest finite code saturate to it when the format is
/// saturating and are an overflow error otherwise (infinite input always
/// counts as beyond the largest code).
pub fn fp_encode(v: f64, fmt: &FpFormat) -> Result<f64> {
    if v.is_nan() {
        return Err(Error::NanInput);
    }
    if v == 0.0 {
        return Ok(0.0);
    }
    let a = v.abs();
    let max = fmt.max_finite();
    if a > max {
        return if fmt.saturating {
            Ok(max.copysign(v))
        } else {
            Err(Error::Overflow {
                value: v,
                format: fmt.name(),
                max_finite: max,
            })
        };
    }
    let m_bits = i32::from(fmt.mantissa_bits);
    let e = binary_exponent(a).max(fmt.min_exponent());
    let quantum = exp2i(e - (m_bits - 1));
    let mut m = (a / quantum).round_ties_even();
    let mut e = e;
    if m >= exp2i(m_bits) {
        // Rounding carried into the next binade.
        m = exp2i(m_bits - 1);
        e += 1;
        debug_assert!(e <= fmt.max_exponent());
    }
    Ok((m * exp2i(e - (m_bits - 1))).copysign(v))
}

/// Encode every element of a slice. Fails on the first non-encodable value.
pub fn fp_encode_slice(values: &[f64], fmt: &FpFormat) -> Result<Vec<f64>> {
    values.iter().map(|&v| fp_encode(v, fmt)).collect()
}
