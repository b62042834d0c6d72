//! Group-shared-exponent integer format descriptor.
//!
//! A GSE tensor stores `group_size` consecutive elements against one shared
//! 5-bit exponent. Each element keeps its own sign and an `M`-bit integer
//! mantissa with no implicit leading bit, where `M = total_bits - 1`. The
//! decoded value of an element is
//!
//! ```text
//! value = mantissa * 2^exponent      (mantissa signed, |mantissa| <= 2^M - 1)
//! ```
//!
//! The shared exponent is chosen so the largest-magnitude element of the
//! group lands in the top half of the mantissa range: for a group whose
//! largest binary exponent is `e_max`, the stored shift is
//! `e_max - (M - 1)`. Storage cost per group is `group_size * (M + 1) + 5`
//! bits: one sign + `M` mantissa bits per element plus the shared exponent.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Width of the shared exponent field. Fixed for every spec.
pub const GSE_EXPONENT_BITS: u32 = 5;

/// Default number of elements sharing one exponent.
pub const DEFAULT_GROUP_SIZE: usize = 32;

/// Default bias added to the shift before it is stored in the 5-bit field.
pub const DEFAULT_EXPONENT_BIAS: i32 = 15;

/// Descriptor for one GSE encoding: element width, group length, exponent bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GseSpec {
    total_bits: u8,
    group_size: usize,
    exponent_bias: i32,
}

impl GseSpec {
    /// New spec with the default exponent bias.
    ///
    /// `total_bits` is the per-element width (sign + mantissa) and must lie
    /// in `[5, 8]`; `group_size` must be at least 1.
    pub fn new(total_bits: u8, group_size: usize) -> Result<Self> {
        Self::with_bias(total_bits, group_size, DEFAULT_EXPONENT_BIAS)
    }

    pub fn with_bias(total_bits: u8, group_size: usize, exponent_bias: i32) -> Result<Self> {
        if !(5..=8).contains(&total_bits) {
            return Err(Error::InvalidFormat(format!(
                "GSE total bits must be in [5, 8], got {total_bits}"
            )));
        }
        if group_size == 0 {
            return Err(Error::InvalidFormat("GSE group size must be >= 1".into()));
        }
        if !(0..(1 << GSE_EXPONENT_BITS)).contains(&exponent_bias) {
            return Err(Error::InvalidFormat(format!(
                "GSE exponent bias must lie in [0, 31], got {exponent_bias}"
            )));
        }
        let spec = GseSpec {
            total_bits,
            group_size,
            exponent_bias,
        };
        // Integer dot products accumulate in i64; see `accumulator_headroom_bits`.
        assert!(
            accumulator_headroom_bits(spec.mantissa_bits(), group_size) <= 63,
            "group size {group_size} exceeds i64 accumulator headroom"
        );
        Ok(spec)
    }

    /// 8-bit elements, default group of 32. The highest-precision spec.
    pub fn int8() -> Self {
        GseSpec::new(8, DEFAULT_GROUP_SIZE).expect("static spec is valid")
    }

    pub fn total_bits(&self) -> u8 {
        self.total_bits
    }

    /// Mantissa magnitude bits `M`. One bit of the element width is the sign.
    pub fn mantissa_bits(&self) -> u32 {
        u32::from(self.total_bits) - 1
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn exponent_bias(&self) -> i32 {
        self.exponent_bias
    }

    /// Largest mantissa magnitude, `2^M - 1`.
    pub fn mantissa_max(&self) -> i32 {
        (1 << self.mantissa_bits()) - 1
    }

    /// Smallest storable shift (stored exponent field 0).
    pub fn min_exponent(&self) -> i32 {
        -self.exponent_bias
    }

    /// Largest storable shift (stored exponent field 31).
    pub fn max_exponent(&self) -> i32 {
        (1 << GSE_EXPONENT_BITS) - 1 - self.exponent_bias
    }

    /// Meaningful payload bits per group: `N * (M + 1) + 5`.
    pub fn group_payload_bits(&self) -> usize {
        self.group_size * (self.mantissa_bits() as usize + 1) + GSE_EXPONENT_BITS as usize
    }

    /// Bytes one packed group occupies on the wire. Groups are byte-aligned,
    /// so the payload is zero-padded up to the next byte boundary.
    pub fn group_stride_bytes(&self) -> usize {
        (self.group_payload_bits() + 7) / 8
    }
}

/// Bits of headroom an integer dot-product accumulator needs for one group
/// pair: product magnitudes take `2M` bits, signs and carries two more, and
/// summing `N` terms adds `ceil(log2 N)`.
pub const fn accumulator_headroom_bits(mantissa_bits: u32, group_size: usize) -> u32 {
    2 * mantissa_bits + 2 + usize::BITS - (group_size.saturating_sub(1)).leading_zeros()
}

/// One quantized group: a shared (unbiased) exponent shift and signed
/// integer mantissas.
///
/// `exponent` is stored unbiased in memory; the wire encoding adds the
/// spec's bias to place it in the 5-bit field. Mantissas satisfy
/// `|m| <= 2^M - 1` for the spec the group was built with.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GseGroup {
    exponent: i32,
    mantissas: Vec<i32>,
}

impl GseGroup {
    /// Build a group by hand, validating ranges against `spec`.
    pub fn new(exponent: i32, mantissas: Vec<i32>, spec: &GseSpec) -> Result<Self> {
        if mantissas.len() != spec.group_size() {
            return Err(Error::SpecMismatch {
                op: "GseGroup::new",
                detail: format!(
                    "expected {} mantissas, got {}",
                    spec.group_size(),
                    mantissas.len()
                ),
            });
        }
        if exponent < spec.min_exponent() || exponent > spec.max_exponent() {
            return Err(Error::InvalidFormat(format!(
                "exponent {exponent} outside [{}, {}]",
                spec.min_exponent(),
                spec.max_exponent()
            )));
        }
        let max = spec.mantissa_max();
        if let Some(bad) = mantissas.iter().position(|m| m.abs() > max) {
            return Err(Error::InvalidFormat(format!(
                "mantissa {} at index {bad} exceeds magnitude {max}",
                mantissas[bad]
            )));
        }
        Ok(GseGroup {
            exponent,
            mantissas,
        })
    }

    /// Internal constructor for values the kernels have already validated.
    pub(crate) fn from_parts_unchecked(exponent: i32, mantissas: Vec<i32>) -> Self {
        GseGroup {
            exponent,
            mantissas,
        }
    }

    /// Unbiased shared exponent shift.
    pub fn exponent(&self) -> i32 {
        self.exponent
    }

    pub fn mantissas(&self) -> &[i32] {
        &self.mantissas
    }

    pub fn len(&self) -> usize {
        self.mantissas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mantissas.is_empty()
    }

    /// Decoded unit: the value of mantissa 1, `2^exponent`.
    pub fn unit(&self) -> f64 {
        (self.exponent as f64).exp2()
    }
}
