//! Integer kernels over group-shared-exponent tensors.
//!
//! Quantization maps full-precision values into [`GseGroup`]s; the GEMM
//! multiplies two quantized tensors using only integer mantissa arithmetic
//! inside each group, combining per-group integer sums in full precision
//! across groups. The result is bit-identical to a full-precision product of
//! the dequantized operands up to cross-group accumulation order.
//!
//! Group order inside every dot product is fixed (ascending along the
//! reduction dimension), so results never depend on the number of worker
//! threads. With the `parallel` feature the GEMM and tensor quantization
//! distribute whole output rows / whole lines across threads; the `_seq`
//! variants are always compiled and are the fallback when the feature is
//! off.

pub mod pack;

use crate::error::{Error, Result};
use crate::formats::fp::{binary_exponent, exp2i};
use crate::formats::gse::{GseGroup, GseSpec};
use crate::mat::Mat;
#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Side effects of a quantization call: how many mantissas were clamped to
/// the magnitude limit and whether any group's ideal shift exceeded the
/// 5-bit exponent window (saturation).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct QuantFlags {
    pub clamped: usize,
    pub saturated: bool,
}

impl QuantFlags {
    fn merge(self, other: QuantFlags) -> QuantFlags {
        QuantFlags {
            clamped: self.clamped + other.clamped,
            saturated: self.saturated || other.saturated,
        }
    }
}

/// Quantize one group of `spec.group_size()` values.
///
/// The shared shift is `e_max - (M - 1)` where `e_max` is the largest
/// binary exponent in the group, clamped into the storable window. With the
/// shift in range, the largest-magnitude element's mantissa lands in
/// `[2^(M-1), 2^M)`; a rounding carry to `2^M` clamps to `2^M - 1` instead
/// of bumping the shared exponent, costing that element at most one unit.
/// Every unclamped element round-trips within half a unit,
/// `|decoded - x| <= 2^(shift - 1)`.
///
/// An all-zero group stores the minimum shift and zero mantissas. A group
/// whose ideal shift exceeds the window saturates: the shift pins to the
/// maximum, affected mantissas clamp, and the flag is reported.
pub fn gse_quantize_group(values: &[f64], spec: &GseSpec) -> Result<(GseGroup, QuantFlags)> {
    if values.len() != spec.group_size() {
        return Err(Error::SpecMismatch {
            op: "gse_quantize_group",
            detail: format!(
                "expected {} values, got {}",
                spec.group_size(),
                values.len()
            ),
        });
    }
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "gse_quantize_group input".into(),
            index,
        });
    }
    Ok(quantize_group_unchecked(values, spec))
}

/// Quantization core shared by the tensor paths; length and finiteness are
/// the caller's responsibility.
fn quantize_group_unchecked(values: &[f64], spec: &GseSpec) -> (GseGroup, QuantFlags) {
    let e_max = values
        .iter()
        .filter(|v| **v != 0.0)
        .map(|&v| binary_exponent(v))
        .max();
    let Some(e_max) = e_max else {
        let group =
            GseGroup::from_parts_unchecked(spec.min_exponent(), vec![0; spec.group_size()]);
        return (group, QuantFlags::default());
    };
    let ideal_shift = e_max - (spec.mantissa_bits() as i32 - 1);
    let saturated = ideal_shift > spec.max_exponent();
    let shift = ideal_shift.clamp(spec.min_exponent(), spec.max_exponent());
    let inv_unit = exp2i(-shift);
    let limit = spec.mantissa_max();
    let mut clamped = 0usize;
    let mantissas = values
        .iter()
        .map(|&v| {
            let m = (v * inv_unit).round_ties_even();
            if m.abs() > f64::from(limit) {
                clamped += 1;
                if m < 0.0 {
                    -limit
                } else {
                    limit
                }
            } else {
                m as i32
            }
        })
        .collect();
    (
        GseGroup::from_parts_unchecked(shift, mantissas),
        QuantFlags { clamped, saturated },
    )
}

/// Decode a group to full precision: `mantissa * 2^shift` per element.
pub fn gse_dequantize_group(group: &GseGroup) -> Vec<f64> {
    let unit = exp2i(group.exponent());
    group
        .mantissas()
        .iter()
        .map(|&m| f64::from(m) * unit)
        .collect()
}

/// Integer accumulator for one group pair plus the full-precision
/// cross-group total.
///
/// The per-group sum is exact: products take `2M` bits, signs and the
/// rounding-carry clamp two more, and `N` terms add `ceil(log2 N)` bits,
/// all within i64 for every supported spec (checked at spec construction).
#[derive(Debug, Default, Clone, Copy)]
pub struct Accumulator {
    pub group_sum: i64,
    pub total: f64,
}

impl Accumulator {
    /// Fold one aligned group pair into the running total.
    pub fn accumulate(&mut self, a: &GseGroup, b: &GseGroup) {
        let mut sum = 0i64;
        for (&ma, &mb) in a.mantissas().iter().zip(b.mantissas()) {
            sum += i64::from(ma) * i64::from(mb);
        }
        self.group_sum = sum;
        // Exact: |sum| < 2^21 for the widest spec and the scale is a power
        // of two, so the product is representable; only this cross-group
        // addition rounds.
        self.total += sum as f64 * exp2i(a.exponent() + b.exponent());
    }
}

/// Dot product of two aligned group sequences.
///
/// Groups are paired in order; each pair is reduced in exact integer
/// arithmetic and scaled by `2^(e_a + e_b)`. Group count and per-pair
/// lengths must match.
pub fn gse_dot(a: &[GseGroup], b: &[GseGroup]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::SpecMismatch {
            op: "gse_dot",
            detail: format!("group counts differ: {} vs {}", a.len(), b.len()),
        });
    }
    let mut acc = Accumulator::default();
    for (ga, gb) in a.iter().zip(b) {
        if ga.len() != gb.len() {
            return Err(Error::SpecMismatch {
                op: "gse_dot",
                detail: format!("group lengths differ: {} vs {}", ga.len(), gb.len()),
            });
        }
        acc.accumulate(ga, gb);
    }
    Ok(acc.total)
}

/// Which way groups run through a matrix.
///
/// `Rows`: each row is sliced into groups along its columns (the reduction
/// dimension of a left GEMM operand). `Cols`: each column is sliced into
/// groups along its rows (the reduction dimension of a right operand).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum GroupAxis {
    Rows,
    Cols,
}

/// A matrix quantized into GSE groups along one axis.
///
/// Lines (rows for [`GroupAxis::Rows`], columns for [`GroupAxis::Cols`]) are
/// stored as consecutive runs of `groups_per_line` groups. The reduction
/// dimension is zero-padded up to a whole number of groups; padding
/// mantissas are exactly zero and contribute nothing to dot products.
#[derive(Debug, Clone, PartialEq)]
pub struct GseTensor {
    rows: usize,
    cols: usize,
    axis: GroupAxis,
    spec: GseSpec,
    groups_per_line: usize,
    groups: Vec<GseGroup>,
    pad_len: usize,
    flags: QuantFlags,
}

impl GseTensor {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn axis(&self) -> GroupAxis {
        self.axis
    }

    pub fn spec(&self) -> &GseSpec {
        &self.spec
    }

    /// Groups per row (Rows axis) or per column (Cols axis).
    pub fn groups_per_line(&self) -> usize {
        self.groups_per_line
    }

    /// Number of lines: rows for the Rows axis, columns for the Cols axis.
    pub fn lines(&self) -> usize {
        match self.axis {
            GroupAxis::Rows => self.rows,
            GroupAxis::Cols => self.cols,
        }
    }

    /// Zeros appended to each line to fill the last group.
    pub fn pad_len(&self) -> usize {
        self.pad_len
    }

    /// Clamp/saturation summary aggregated over all groups.
    pub fn flags(&self) -> QuantFlags {
        self.flags
    }

    pub fn groups(&self) -> &[GseGroup] {
        &self.groups
    }

    /// The groups of one line, in ascending reduction order.
    pub fn line_groups(&self, line: usize) -> &[GseGroup] {
        let start = line * self.groups_per_line;
        &self.groups[start..start + self.groups_per_line]
    }

    pub(crate) fn from_parts(
        rows: usize,
        cols: usize,
        axis: GroupAxis,
        spec: GseSpec,
        groups: Vec<GseGroup>,
        pad_len: usize,
        flags: QuantFlags,
    ) -> Result<Self> {
        let lines = match axis {
            GroupAxis::Rows => rows,
            GroupAxis::Cols => cols,
        };
        let reduction = match axis {
            GroupAxis::Rows => cols,
            GroupAxis::Cols => rows,
        };
        let groups_per_line = reduction.div_ceil(spec.group_size());
        if groups.len() != lines * groups_per_line {
            return Err(Error::Corrupt(format!(
                "GSE tensor {rows}x{cols} needs {} groups, got {}",
                lines * groups_per_line,
                groups.len()
            )));
        }
        if pad_len != groups_per_line * spec.group_size() - reduction {
            return Err(Error::Corrupt(format!(
                "GSE tensor pad length {pad_len} inconsistent with dims"
            )));
        }
        Ok(GseTensor {
            rows,
            cols,
            axis,
            spec,
            groups_per_line,
            groups,
            pad_len,
            flags,
        })
    }

    /// Reinterpret as the transposed matrix, flipping the group axis.
    ///
    /// A row-grouped `R x C` tensor stores exactly the groups of the
    /// column-grouped `C x R` transpose (line `i` of one is line `i` of the
    /// other), so this is a relabeling with no requantization.
    pub fn transposed(mut self) -> GseTensor {
        std::mem::swap(&mut self.rows, &mut self.cols);
        self.axis = match self.axis {
            GroupAxis::Rows => GroupAxis::Cols,
            GroupAxis::Cols => GroupAxis::Rows,
        };
        self
    }

    /// Decode back to a dense matrix, dropping padding.
    pub fn dequantize(&self) -> Mat {
        let mut out = Mat::zeros(self.rows, self.cols);
        let n = self.spec.group_size();
        for line in 0..self.lines() {
            for (g_idx, group) in self.line_groups(line).iter().enumerate() {
                let unit = exp2i(group.exponent());
                for (i, &m) in group.mantissas().iter().enumerate() {
                    let k = g_idx * n + i;
                    match self.axis {
                        GroupAxis::Rows => {
                            if k < self.cols {
                                out.set(line, k, f64::from(m) * unit);
                            }
                        }
                        GroupAxis::Cols => {
                            if k < self.rows {
                                out.set(k, line, f64::from(m) * unit);
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Collect the values of one line (a row or a column) padded to whole groups.
fn line_values(m: &Mat, axis: GroupAxis, line: usize, padded_len: usize) -> Vec<f64> {
    let mut buf = Vec::with_capacity(padded_len);
    match axis {
        GroupAxis::Rows => buf.extend_from_slice(m.row(line)),
        GroupAxis::Cols => buf.extend((0..m.rows()).map(|r| m.at(r, line))),
    }
    buf.resize(padded_len, 0.0);
    buf
}

fn quantize_line(m: &Mat, axis: GroupAxis, spec: &GseSpec, line: usize) -> (Vec<GseGroup>, QuantFlags) {
    let reduction = match axis {
        GroupAxis::Rows => m.cols(),
        GroupAxis::Cols => m.rows(),
    };
    let n = spec.group_size();
    let padded = reduction.div_ceil(n) * n;
    let values = line_values(m, axis, line, padded);
    let mut groups = Vec::with_capacity(padded / n);
    let mut flags = QuantFlags::default();
    for chunk in values.chunks_exact(n) {
        let (g, f) = quantize_group_unchecked(chunk, spec);
        flags = flags.merge(f);
        groups.push(g);
    }
    (groups, flags)
}

fn check_matrix_finite(m: &Mat, op: &'static str) -> Result<()> {
    if let Some(index) = m.first_non_finite() {
        return Err(Error::NonFinite {
            what: format!("{op} input"),
            index,
        });
    }
    Ok(())
}

/// Quantize a dense matrix along `axis`. Sequential implementation.
pub fn quantize_matrix_seq(m: &Mat, axis: GroupAxis, spec: GseSpec) -> Result<GseTensor> {
    check_matrix_finite(m, "quantize_matrix")?;
    let lines = match axis {
        GroupAxis::Rows => m.rows(),
        GroupAxis::Cols => m.cols(),
    };
    let mut groups = Vec::new();
    let mut flags = QuantFlags::default();
    for line in 0..lines {
        let (g, f) = quantize_line(m, axis, &spec, line);
        flags = flags.merge(f);
        groups.extend(g);
    }
    finish_tensor(m, axis, spec, groups, flags)
}

/// Quantize a dense matrix along `axis`, distributing lines across workers.
#[cfg(feature = "parallel")]
pub fn quantize_matrix_par(m: &Mat, axis: GroupAxis, spec: GseSpec) -> Result<GseTensor> {
    check_matrix_finite(m, "quantize_matrix")?;
    let lines = match axis {
        GroupAxis::Rows => m.rows(),
        GroupAxis::Cols => m.cols(),
    };
    let per_line: Vec<(Vec<GseGroup>, QuantFlags)> = (0..lines)
        .into_par_iter()
        .map(|line| quantize_line(m, axis, &spec, line))
        .collect();
    let mut groups = Vec::new();
    let mut flags = QuantFlags::default();
    for (g, f) in per_line {
        flags = flags.merge(f);
        groups.extend(g);
    }
    finish_tensor(m, axis, spec, groups, flags)
}

/// Quantize a dense matrix along `axis` into a [`GseTensor`].
///
/// Dispatches to the parallel path when the `parallel` feature is enabled;
/// both paths produce identical tensors.
pub fn quantize_matrix(m: &Mat, axis: GroupAxis, spec: GseSpec) -> Result<GseTensor> {
    #[cfg(feature = "parallel")]
    {
        quantize_matrix_par(m, axis, spec)
    }
    #[cfg(not(feature = "parallel"))]
    {
        quantize_matrix_seq(m, axis, spec)
    }
}

fn finish_tensor(
    m: &Mat,
    axis: GroupAxis,
    spec: GseSpec,
    groups: Vec<GseGroup>,
    flags: QuantFlags,
) -> Result<GseTensor> {
    let reduction = match axis {
        GroupAxis::Rows => m.cols(),
        GroupAxis::Cols => m.rows(),
    };
    let pad = reduction.div_ceil(spec.group_size()) * spec.group_size() - reduction;
    GseTensor::from_parts(m.rows(), m.cols(), axis, spec, groups, pad, flags)
}

fn check_gemm_operands(x: &GseTensor, w: &GseTensor) -> Result<()> {
    if x.axis() != GroupAxis::Rows || w.axis() != GroupAxis::Cols {
        return Err(Error::SpecMismatch {
            op: "gse_gemm",
            detail: format!(
                "left operand must be row-grouped and right column-grouped, got {:?} and {:?}",
                x.axis(),
                w.axis()
            ),
        });
    }
    if x.cols() != w.rows() {
        return Err(Error::ShapeMismatch {
            op: "gse_gemm",
            left_rows: x.rows(),
            left_cols: x.cols(),
            right_rows: w.rows(),
            right_cols: w.cols(),
        });
    }
    if x.spec().group_size() != w.spec().group_size() {
        return Err(Error::SpecMismatch {
            op: "gse_gemm",
            detail: format!(
                "group sizes differ: {} vs {}",
                x.spec().group_size(),
                w.spec().group_size()
            ),
        });
    }
    debug_assert_eq!(x.groups_per_line(), w.groups_per_line());
    Ok(())
}

fn gemm_row(x: &GseTensor, w: &GseTensor, i: usize, out_row: &mut [f64]) {
    let xg = x.line_groups(i);
    for (j, out) in out_row.iter_mut().enumerate() {
        let wg = w.line_groups(j);
        let mut acc = Accumulator::default();
        for (ga, gb) in xg.iter().zip(wg) {
            acc.accumulate(ga, gb);
        }
        *out = acc.total;
    }
}

/// Integer GEMM `x * w` over quantized operands. Sequential implementation.
///
/// `x` is `B x K` grouped along rows; `w` is `K x O` grouped along columns.
/// Both operands must share a group size (mantissa widths may differ).
pub fn gse_gemm_seq(x: &GseTensor, w: &GseTensor) -> Result<Mat> {
    check_gemm_operands(x, w)?;
    let mut out = Mat::zeros(x.rows(), w.cols());
    let cols = w.cols();
    for i in 0..x.rows() {
        gemm_row(x, w, i, &mut out.data_mut()[i * cols..(i + 1) * cols]);
    }
    Ok(out)
}

/// Integer GEMM with output rows distributed across workers.
///
/// Each output element is still reduced by one worker in fixed group order,
/// so the result is bit-identical to [`gse_gemm_seq`] at any thread count.
#[cfg(feature = "parallel")]
pub fn gse_gemm_par(x: &GseTensor, w: &GseTensor) -> Result<Mat> {
    check_gemm_operands(x, w)?;
    let mut out = Mat::zeros(x.rows(), w.cols());
    let cols = w.cols();
    out.data_mut()
        .par_chunks_mut(cols)
        .enumerate()
        .for_each(|(i, row)| gemm_row(x, w, i, row));
    Ok(out)
}

/// Integer GEMM `x * w`. Dispatches on the `parallel` feature.
pub fn gse_gemm(x: &GseTensor, w: &GseTensor) -> Result<Mat> {
    #[cfg(feature = "parallel")]
    {
        gse_gemm_par(x, w)
    }
    #[cfg(not(feature = "parallel"))]
    {
        gse_gemm_seq(x, w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(bits: u8, n: usize) -> GseSpec {
        GseSpec::new(bits, n).unwrap()
    }

    #[test]
    fn power_of_two_ladder_is_exact() {
        // [1, 0.5, 0.25, 0.125] with M=7: unit 2^-6, mantissas 64, 32, 16, 8.
        let s = spec(8, 4);
        let (g, flags) = gse_quantize_group(&[1.0, 0.5, 0.25, 0.125], &s).unwrap();
        assert_eq!(g.exponent(), -6);
        assert_eq!(g.mantissas(), &[64, 32, 16, 8]);
        assert_eq!(flags, QuantFlags::default());
        assert_eq!(gse_dequantize_group(&g), vec![1.0, 0.5, 0.25, 0.125]);
    }

    #[test]
    fn small_elements_flush_under_wide_dynamic_range() {
        // One element 2^10 larger than the rest at M=4: the small ones flush.
        let s = spec(5, 4);
        let (g, _) = gse_quantize_group(&[1024.0, 1.0, -1.0, 0.5], &s).unwrap();
        assert_eq!(g.exponent(), 10 - 3);
        assert_eq!(g.mantissas()[0], 8);
        assert_eq!(&g.mantissas()[1..], &[0, 0, 0]);
    }

    #[test]
    fn all_zero_group_uses_minimum_exponent() {
        let s = spec(8, 4);
        let (g, flags) = gse_quantize_group(&[0.0; 4], &s).unwrap();
        assert_eq!(g.exponent(), s.min_exponent());
        assert_eq!(g.mantissas(), &[0, 0, 0, 0]);
        assert_eq!(flags, QuantFlags::default());
    }

    #[test]
    fn max_element_fills_top_half_of_mantissa_range() {
        // Scales chosen so the shared shift stays inside the exponent
        // window; below the window the shift clamps and small magnitudes
        // are stored as-is (see tiny_values_clamp_shift_at_window_floor).
        let s = spec(8, 4);
        for scale in [0.013, 1.0, 97.5, 2e-3] {
            let (g, _) =
                gse_quantize_group(&[scale, -0.3 * scale, 0.0, 0.1 * scale], &s).unwrap();
            let top = g.mantissas().iter().map(|m| m.abs()).max().unwrap();
            assert!(top >= 1 << (s.mantissa_bits() - 1), "top mantissa {top}");
        }
    }

    #[test]
    fn rounding_carry_clamps_instead_of_bumping_exponent() {
        // 1.9999 has binary exponent 0, unit 2^-6, ideal mantissa 128 -> 127.
        let s = spec(8, 2);
        let (g, flags) = gse_quantize_group(&[1.9999, 0.25], &s).unwrap();
        assert_eq!(g.exponent(), -6);
        assert_eq!(g.mantissas()[0], 127);
        assert_eq!(flags.clamped, 1);
        assert!(!flags.saturated);
        // Error stays within one unit.
        assert!((1.9999 - 127.0 * g.unit()).abs() <= g.unit());
    }

    #[test]
    fn exponent_overflow_saturates_and_flags() {
        let s = spec(8, 2);
        let (g, flags) = gse_quantize_group(&[1.0e12, 0.0], &s).unwrap();
        assert!(flags.saturated);
        assert_eq!(g.exponent(), s.max_exponent());
        assert_eq!(g.mantissas()[0], s.mantissa_max());
    }

    #[test]
    fn tiny_values_clamp_shift_at_window_floor() {
        let s = spec(8, 2);
        let (g, flags) = gse_quantize_group(&[2.0e-7, 1.0e-7], &s).unwrap();
        assert_eq!(g.exponent(), s.min_exponent());
        assert!(!flags.saturated);
        for (&v, &m) in [2.0e-7, 1.0e-7].iter().zip(g.mantissas()) {
            assert!((v - f64::from(m) * g.unit()).abs() <= g.unit() / 2.0);
        }
    }

    #[test]
    fn dot_of_unit_mantissas_is_group_size_times_unit_squared() {
        let s = spec(8, 8);
        let g = GseGroup::new(-3, vec![1; 8], &s).unwrap();
        let d = gse_dot(std::slice::from_ref(&g), std::slice::from_ref(&g)).unwrap();
        assert_eq!(d, 8.0 * exp2i(-6));
    }

    #[test]
    fn hand_built_group_decodes_in_units() {
        let s = spec(5, 2);
        let g = GseGroup::new(0, vec![3, -5], &s).unwrap();
        assert_eq!(gse_dequantize_group(&g), vec![3.0, -5.0]);
    }

    #[test]
    fn dot_rejects_mismatched_group_counts() {
        let s = spec(8, 2);
        let g = GseGroup::new(0, vec![1, 1], &s).unwrap();
        assert!(gse_dot(&[g.clone(), g.clone()], std::slice::from_ref(&g)).is_err());
    }

    #[test]
    fn quantize_matrix_pads_with_exact_zeros() {
        let m = Mat::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let t = quantize_matrix(&m, GroupAxis::Rows, spec(8, 4)).unwrap();
        assert_eq!(t.pad_len(), 1);
        assert_eq!(t.groups_per_line(), 1);
        for line in 0..2 {
            assert_eq!(t.line_groups(line)[0].mantissas()[3], 0);
        }
        assert_eq!(t.dequantize().rows(), 2);
    }

    #[test]
    fn gemm_matches_dequantized_reference_on_small_case() {
        let x = Mat::from_vec(2, 4, vec![1.0, -0.5, 0.25, 2.0, 0.0, 1.5, -1.0, 0.75]).unwrap();
        let w = Mat::from_vec(4, 3, (0..12).map(|i| 0.1 * i as f64 - 0.55).collect()).unwrap();
        let xq = quantize_matrix(&x, GroupAxis::Rows, spec(8, 4)).unwrap();
        let wq = quantize_matrix(&w, GroupAxis::Cols, spec(8, 4)).unwrap();
        let got = gse_gemm(&xq, &wq).unwrap();
        let want = xq.dequantize().matmul(&wq.dequantize()).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                assert!((got.at(i, j) - want.at(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transposed_matches_quantizing_the_transpose() {
        let m = Mat::from_fn(5, 11, |r, c| ((r * 5 + c) % 9) as f64 * 0.4 - 1.7);
        let s = spec(7, 4);
        let a = quantize_matrix(&m, GroupAxis::Rows, s).unwrap().transposed();
        let b = quantize_matrix(&m.transpose(), GroupAxis::Cols, s).unwrap();
        assert_eq!(a, b);
        // Decode of the relabeled tensor is the transpose of the decode.
        let direct = quantize_matrix(&m, GroupAxis::Rows, s).unwrap().dequantize();
        assert_eq!(a.dequantize().data(), direct.transpose().data());
    }

    #[test]
    fn gemm_rejects_wrong_axes_and_shapes() {
        let m = Mat::zeros(4, 4);
        let rows = quantize_matrix(&m, GroupAxis::Rows, spec(8, 4)).unwrap();
        let cols = quantize_matrix(&m, GroupAxis::Cols, spec(8, 4)).unwrap();
        assert!(gse_gemm(&rows, &rows).is_err());
        assert!(gse_gemm(&cols, &cols).is_err());
        let narrow = quantize_matrix(&Mat::zeros(3, 4), GroupAxis::Cols, spec(8, 4)).unwrap();
        assert!(gse_gemm(&rows, &narrow).is_err());
        let other_n = quantize_matrix(&m, GroupAxis::Cols, spec(8, 2)).unwrap();
        assert!(gse_gemm(&rows, &other_n).is_err());
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_and_sequential_paths_agree_bitwise() {
        let m = Mat::from_fn(40, 37, |r, c| ((r * 31 + c * 7) % 13) as f64 * 0.37 - 2.0);
        let w = Mat::from_fn(37, 29, |r, c| ((r * 17 + c * 5) % 11) as f64 * 0.21 - 1.0);
        let s = spec(6, 8);
        let xq_s = quantize_matrix_seq(&m, GroupAxis::Rows, s).unwrap();
        let xq_p = quantize_matrix_par(&m, GroupAxis::Rows, s).unwrap();
        assert_eq!(xq_s, xq_p);
        let wq = quantize_matrix(&w, GroupAxis::Cols, s).unwrap();
        let seq = gse_gemm_seq(&xq_s, &wq).unwrap();
        let par = gse_gemm_par(&xq_p, &wq).unwrap();
        assert_eq!(seq, par);
    }
}
