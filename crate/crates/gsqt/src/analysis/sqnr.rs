//! Signal-to-quantization-noise measurements across the storage formats.
//!
//! SQNR here is `10 log10(sum x^2 / sum (x - x_hat)^2)` over a whole
//! vector; an exact reconstruction reports positive infinity rather than
//! an error, since several formats represent some inputs exactly.

use crate::error::{Error, Result};
use crate::formats::fp::{fp_encode, fp_encode_slice, FpFormat};
use crate::formats::gse::GseSpec;
use crate::formats::nf4::{nf4_dequantize, nf4_quantize, NF4_BLOCK_LEN};
use crate::formats::uniform::{uniform_dequantize, uniform_quantize};
use crate::kernels::{quantize_matrix, GroupAxis};
use crate::mat::Mat;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Signal-to-quantization-noise ratio in decibels.
pub fn sqnr_db(x: &[f64], x_hat: &[f64]) -> Result<f64> {
    if x.len() != x_hat.len() {
        return Err(Error::Config(format!(
            "sqnr over {} values vs {} reconstructions",
            x.len(),
            x_hat.len()
        )));
    }
    if x.is_empty() {
        return Err(Error::Empty("sqnr input"));
    }
    let signal: f64 = x.iter().map(|v| v * v).sum();
    if signal == 0.0 {
        return Err(Error::Config("sqnr undefined for all-zero signal".into()));
    }
    let noise: f64 = x.iter().zip(x_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    if noise == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal / noise).log10())
}

/// Per-group magnitude locality of a vector.
///
/// Splits `x` into full contiguous groups of `group_size` (a short tail is
/// ignored) and reports the sample standard deviation of each group,
/// summarized as the mean and the fraction of groups below `threshold`.
/// Tightly clustered group magnitudes are the regime where one shared
/// exponent loses little information.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalityStats {
    pub groups: usize,
    pub mean_group_std: f64,
    pub fraction_below: f64,
}

pub fn locality_stats(x: &[f64], group_size: usize, threshold: f64) -> Result<LocalityStats> {
    if group_size < 2 {
        return Err(Error::Config("locality groups need >= 2 elements".into()));
    }
    let groups = x.len() / group_size;
    if groups == 0 {
        return Err(Error::Empty("locality_stats input shorter than one group"));
    }
    let mut sum_std = 0.0;
    let mut below = 0usize;
    for g in 0..groups {
        let slice = &x[g * group_size..(g + 1) * group_size];
        let mean = slice.iter().sum::<f64>() / group_size as f64;
        let var = slice.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (group_size as f64 - 1.0);
        let std = var.sqrt();
        sum_std += std;
        if std < threshold {
            below += 1;
        }
    }
    Ok(LocalityStats {
        groups,
        mean_group_std: sum_std / groups as f64,
        fraction_below: below as f64 / groups as f64,
    })
}

/// One format's reconstruction quality on one vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FormatQuality {
    pub name: String,
    /// Stored payload bits per element, amortizing per-group and per-block
    /// overheads; per-tensor constants (a single scale) count as zero.
    pub bits_per_element: f64,
    pub sqnr_db: f64,
    pub max_abs_error: f64,
}

fn quality(name: &str, bits: f64, x: &[f64], decoded: &[f64]) -> Result<FormatQuality> {
    let max_abs_error = x
        .iter()
        .zip(decoded)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    // An all-zero signal has no defined SQNR; every format encodes it
    // exactly, so report the exactness rather than failing the whole table.
    let sqnr_db = if x.iter().all(|v| *v == 0.0) {
        if max_abs_error == 0.0 {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        }
    } else {
        sqnr_db(x, decoded)?
    };
    Ok(FormatQuality {
        name: name.to_string(),
        bits_per_element: bits,
        sqnr_db,
        max_abs_error,
    })
}

/// Reconstruct `x` under every compared format and measure SQNR plus the
/// worst absolute reconstruction error.
///
/// Formats: grouped integer at 5..8 bits, byte-emulated floats E4M3,
/// E5M2, E3M3, and E3M2 (saturating), per-tensor uniform 8-bit, and the
/// 4-bit normal-quantile codebook.
pub fn compare_formats(x: &[f64], group_size: usize) -> Result<Vec<FormatQuality>> {
    let mut out = Vec::new();
    let m = Mat::from_vec(1, x.len(), x.to_vec())?;
    for bits in [5u8, 6, 7, 8] {
        let spec = GseSpec::with_bias(bits, group_size, 15)?;
        let t = quantize_matrix(&m, GroupAxis::Rows, spec)?;
        let decoded = t.dequantize();
        out.push(quality(
            &format!("gse-int{bits}"),
            spec.group_payload_bits() as f64 / group_size as f64,
            x,
            decoded.data(),
        )?);
    }
    let emulated = [
        ("fp8-e4m3", FpFormat::e4m3()),
        ("fp8-e5m2", FpFormat::e5m2()),
        ("fp7-e3m3", FpFormat::e3m3()),
        ("fp6-e3m2", FpFormat::e3m2()),
    ];
    for (name, fmt) in emulated {
        let decoded = fp_encode_slice(x, &fmt)?;
        out.push(quality(name, f64::from(fmt.storage_bits()), x, &decoded)?);
    }
    {
        let (codes, params) = uniform_quantize(x, 8)?;
        let decoded = uniform_dequantize(&codes, &params);
        out.push(quality("uniform-int8", 8.0, x, &decoded)?);
    }
    {
        let q = nf4_quantize(x, NF4_BLOCK_LEN)?;
        let decoded = nf4_dequantize(&q);
        out.push(quality("nf4", 4.0 + 8.0 / NF4_BLOCK_LEN as f64, x, &decoded)?);
    }
    Ok(out)
}

/// Whether a format represents `value` exactly (encode is the identity).
pub fn fp_represents(value: f64, fmt: &FpFormat) -> bool {
    matches!(fp_encode(value, fmt), Ok(v) if v == value)
}

/// One named vector in the locality-controlled comparison suite.
#[derive(Debug, Clone)]
pub struct SuiteCase {
    pub name: &'static str,
    pub values: Vec<f64>,
}

/// Vectors whose within-group magnitude spread is controlled while the
/// across-group scale varies, the regime grouped formats are built for.
///
/// Every case keeps neighbors at a common scale; cases differ in how the
/// scale moves between groups (constant, smooth drift, per-group jumps,
/// and a heavy-tailed variant), plus one anti-local control where scales
/// alternate inside each group.
pub fn locality_suite<R: Rng>(group_size: usize, len: usize, rng: &mut R) -> Vec<SuiteCase> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let groups = len.div_ceil(group_size);
    let mut cases = Vec::new();

    let mut flat = Vec::with_capacity(groups * group_size);
    for _ in 0..groups * group_size {
        flat.push(normal.sample(rng) * 0.05);
    }
    cases.push(SuiteCase {
        name: "constant-scale",
        values: flat,
    });

    let mut drift = Vec::with_capacity(groups * group_size);
    for g in 0..groups {
        // Scale wanders over roughly three decades across the vector.
        let scale = 10f64.powf(-3.0 + 3.0 * g as f64 / groups as f64);
        for _ in 0..group_size {
            drift.push(normal.sample(rng) * scale);
        }
    }
    cases.push(SuiteCase {
        name: "smooth-drift",
        values: drift,
    });

    let mut jumps = Vec::with_capacity(groups * group_size);
    for _ in 0..groups {
        let scale = 10f64.powf(rng.random_range(-4.0..0.0));
        for _ in 0..group_size {
            jumps.push(normal.sample(rng) * scale);
        }
    }
    cases.push(SuiteCase {
        name: "per-group-scale",
        values: jumps,
    });

    let mut heavy = Vec::with_capacity(groups * group_size);
    for _ in 0..groups {
        let scale = (normal.sample(rng) * 2.0).exp() * 0.01;
        for _ in 0..group_size {
            heavy.push(normal.sample(rng) * scale);
        }
    }
    cases.push(SuiteCase {
        name: "lognormal-group-scale",
        values: heavy,
    });

    let mut mixed = Vec::with_capacity(groups * group_size);
    for i in 0..groups * group_size {
        let scale = if i % 2 == 0 { 1.0 } else { 1e-3 };
        mixed.push(normal.sample(rng) * scale);
    }
    cases.push(SuiteCase {
        name: "alternating-in-group",
        values: mixed,
    });

    cases
}
