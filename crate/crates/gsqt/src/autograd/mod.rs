//! Quantize-compute-dequantize matmuls and the low-rank adapter layer.
//!
//! Every matrix product in the forward and backward pass runs on quantized
//! operands through the integer GEMM; full-precision values exist only at
//! stage boundaries, where a GEMM's output is requantized before feeding
//! the next GEMM. Quantizers pass gradients straight through (the backward
//! pass differentiates the dequantized values, not the rounding step).
//!
//! The layer computes `Y = X W' + s (X A') B'` (`'` is transpose) with a
//! frozen 4-bit normal-quantile base `W` and trainable adapters `A`, `B`.
//! The dense product `W + s B A` is never materialized, in either pass.
//!
//! Bit widths per operand:
//!
//! - `X` is quantized once per step at the activation width and cached in
//!   quantized form; the backward pass reuses it.
//! - `W` (dequantized from its 4-bit codes) uses the activation width.
//! - `A` and `B` use the adapter width.
//! - `dY`, and every intermediate GEMM output that involves `dY`, use the
//!   gradient width.
//! - The forward intermediate `X A'` uses the adapter width, in the
//!   forward pass and where the backward pass rebuilds it.
//!
//! One backward product (`dL/dA`'s right operand) reduces over the batch
//! axis, but the cached `X` is grouped along features; the layer decodes
//! the cached tensor and regroups it along the batch axis at the same
//! width, staying inside the quantize-compute-dequantize discipline.
//!
//! In identity mode (`QuantConfig::identity`) every quantizer is the
//! identity and products run in full precision with the same association
//! order, which is the reference the gradient checks compare against. The
//! frozen base stays 4-bit in identity mode; only the group quantizers
//! switch off.

pub mod checkpoint;

use crate::error::{Error, Result};
use crate::formats::gse::{GseSpec, DEFAULT_GROUP_SIZE};
use crate::formats::nf4::{Nf4Matrix, NF4_BLOCK_LEN};
use crate::kernels::{gse_gemm, quantize_matrix, GroupAxis, GseTensor};
use crate::mat::Mat;
use serde::{Deserialize, Serialize};

/// Bit widths and grouping for a fully quantized training setup.
///
/// The frozen base is always 4-bit; the three tunable widths cover
/// activations, gradients, and adapters. `W-A-G` notation (for example
/// `4-5-6`) names the weight, activation, and gradient widths and gives the
/// adapters the activation width; a fourth field overrides the adapter
/// width explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantConfig {
    pub act_bits: u8,
    pub grad_bits: u8,
    pub adapter_bits: u8,
    pub group_size: usize,
    pub rank: usize,
    /// Disable all group quantizers; matmuls run in full precision with
    /// the quantized-path association order.
    #[serde(default)]
    pub identity_mode: bool,
}

/// The base width is not configurable; it names the frozen codebook format.
pub const WEIGHT_BITS: u8 = 4;

impl QuantConfig {
    pub fn new(act_bits: u8, grad_bits: u8, adapter_bits: u8, rank: usize) -> Result<Self> {
        QuantConfig {
            act_bits,
            grad_bits,
            adapter_bits,
            group_size: DEFAULT_GROUP_SIZE,
            rank,
            identity_mode: false,
        }
        .validated()
    }

    /// Full-precision reference configuration: no group quantization.
    pub fn identity(rank: usize) -> Self {
        QuantConfig {
            act_bits: 8,
            grad_bits: 8,
            adapter_bits: 8,
            group_size: DEFAULT_GROUP_SIZE,
            rank,
            identity_mode: true,
        }
    }

    pub fn with_group_size(mut self, group_size: usize) -> Result<Self> {
        self.group_size = group_size;
        self.validated()
    }

    /// Parse `W-A-G` or `W-A-G-P` notation, e.g. `4-5-6` or `4-8-8-5`.
    pub fn from_notation(notation: &str, rank: usize) -> Result<Self> {
        let parts: Vec<&str> = notation.split('-').collect();
        if parts.len() != 3 && parts.len() != 4 {
            return Err(Error::Config(format!(
                "notation {notation:?} must have 3 or 4 dash-separated fields"
            )));
        }
        let field = |i: usize, what: &str| -> Result<u8> {
            parts[i]
                .parse()
                .map_err(|_| Error::Config(format!("bad {what} width {:?} in {notation:?}", parts[i])))
        };
        let w = field(0, "weight")?;
        if w != WEIGHT_BITS {
            return Err(Error::Config(format!(
                "weight width in {notation:?} is {w}, only {WEIGHT_BITS} is supported"
            )));
        }
        let act = field(1, "activation")?;
        let grad = field(2, "gradient")?;
        let adapter = if parts.len() == 4 { field(3, "adapter")? } else { act };
        QuantConfig::new(act, grad, adapter, rank)
    }

    /// Render back to notation; the adapter field appears only when it
    /// differs from the activation width.
    pub fn notation(&self) -> String {
        if self.adapter_bits == self.act_bits {
            format!("{WEIGHT_BITS}-{}-{}", self.act_bits, self.grad_bits)
        } else {
            format!(
                "{WEIGHT_BITS}-{}-{}-{}",
                self.act_bits, self.grad_bits, self.adapter_bits
            )
        }
    }

    pub fn validated(self) -> Result<Self> {
        for (what, bits) in [
            ("activation", self.act_bits),
            ("gradient", self.grad_bits),
            ("adapter", self.adapter_bits),
        ] {
            if !(5..=8).contains(&bits) {
                return Err(Error::Config(format!(
                    "{what} width {bits} outside supported range 5..=8"
                )));
            }
        }
        if self.rank == 0 {
            return Err(Error::Config("rank must be >= 1".into()));
        }
        // Delegates group size and headroom checks.
        GseSpec::new(self.act_bits, self.group_size)?;
        Ok(self)
    }

    pub fn act_spec(&self) -> GseSpec {
        GseSpec::new(self.act_bits, self.group_size).expect("validated at construction")
    }

    pub fn grad_spec(&self) -> GseSpec {
        GseSpec::new(self.grad_bits, self.group_size).expect("validated at construction")
    }

    pub fn adapter_spec(&self) -> GseSpec {
        GseSpec::new(self.adapter_bits, self.group_size).expect("validated at construction")
    }
}

fn q_rows(m: &Mat, spec: GseSpec) -> Result<GseTensor> {
    quantize_matrix(m, GroupAxis::Rows, spec)
}

fn q_cols(m: &Mat, spec: GseSpec) -> Result<GseTensor> {
    quantize_matrix(m, GroupAxis::Cols, spec)
}

/// One quantize-compute-dequantize product: quantize `x` along rows at
/// `x_spec`, `w` along columns at `w_spec`, multiply in integer arithmetic,
/// return the full-precision stage output.
pub fn qcd_matmul(x: &Mat, w: &Mat, x_spec: GseSpec, w_spec: GseSpec) -> Result<Mat> {
    gse_gemm(&q_rows(x, x_spec)?, &q_cols(w, w_spec)?)
}

/// Gradients of one layer application.
#[derive(Debug, Clone)]
pub struct GradBundle {
    /// Gradient w.r.t. the layer input, for chaining into earlier layers.
    pub d_x: Mat,
    /// Gradient w.r.t. the down-projection adapter `A`.
    pub d_a: Mat,
    /// Gradient w.r.t. the up-projection adapter `B`.
    pub d_b: Mat,
}

/// What the forward pass left behind for the backward pass.
#[derive(Debug, Clone)]
enum CachedInput {
    /// Quantized path: the input as quantized for the forward GEMMs.
    Quantized(GseTensor),
    /// Identity path: the exact input.
    Exact(Mat),
}

/// A linear layer with a frozen 4-bit base and trainable low-rank adapters.
///
/// Shapes: base `W` is `out x in`, `A` is `rank x in`, `B` is `out x rank`,
/// inputs are `batch x in`, outputs `batch x out`.
#[derive(Debug, Clone)]
pub struct LoraLinear {
    name: String,
    w_frozen: Nf4Matrix,
    /// Decoded copy of the frozen base, kept because decoding is
    /// deterministic and the base never changes.
    w_dq: Mat,
    a: Mat,
    b: Mat,
    scale: f64,
    config: QuantConfig,
    cache: Option<CachedInput>,
}

impl LoraLinear {
    /// Freeze `w` into 4-bit blocks and attach zero adapters of the
    /// configured rank.
    pub fn new(name: impl Into<String>, w: &Mat, scale: f64, config: QuantConfig) -> Result<Self> {
        let config = config.validated()?;
        if !scale.is_finite() || scale <= 0.0 {
            return Err(Error::Config(format!(
                "adapter scale {scale} must be positive finite"
            )));
        }
        let w_frozen = Nf4Matrix::from_mat(w, NF4_BLOCK_LEN)?;
        Ok(Self::assemble(
            name.into(),
            w_frozen,
            Mat::zeros(config.rank, w.cols()),
            Mat::zeros(w.rows(), config.rank),
            scale,
            config,
        ))
    }

    pub(crate) fn assemble(
        name: String,
        w_frozen: Nf4Matrix,
        a: Mat,
        b: Mat,
        scale: f64,
        config: QuantConfig,
    ) -> Self {
        let w_dq = w_frozen.dequantize();
        LoraLinear {
            name,
            w_frozen,
            w_dq,
            a,
            b,
            scale,
            config,
            cache: None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn in_features(&self) -> usize {
        self.w_dq.cols()
    }

    pub fn out_features(&self) -> usize {
        self.w_dq.rows()
    }

    pub fn config(&self) -> &QuantConfig {
        &self.config
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn frozen_base(&self) -> &Nf4Matrix {
        &self.w_frozen
    }

    /// Decoded frozen base (`out x in`).
    pub fn base_dequantized(&self) -> &Mat {
        &self.w_dq
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }

    pub fn b(&self) -> &Mat {
        &self.b
    }

    /// Replace the adapters, e.g. with optimizer master weights.
    pub fn set_adapters(&mut self, a: Mat, b: Mat) -> Result<()> {
        if a.rows() != self.config.rank || a.cols() != self.in_features() {
            return Err(Error::ShapeMismatch {
                op: "set_adapters(a)",
                left_rows: self.config.rank,
                left_cols: self.in_features(),
                right_rows: a.rows(),
                right_cols: a.cols(),
            });
        }
        if b.rows() != self.out_features() || b.cols() != self.config.rank {
            return Err(Error::ShapeMismatch {
                op: "set_adapters(b)",
                left_rows: self.out_features(),
                left_cols: self.config.rank,
                right_rows: b.rows(),
                right_cols: b.cols(),
            });
        }
        self.a = a;
        self.b = b;
        Ok(())
    }

    fn check_input(&self, x: &Mat, what: &'static str, features: usize) -> Result<()> {
        if x.cols() != features {
            return Err(Error::ShapeMismatch {
                op: what,
                left_rows: x.rows(),
                left_cols: x.cols(),
                right_rows: self.out_features(),
                right_cols: self.in_features(),
            });
        }
        Ok(())
    }

    /// Forward pass, caching the quantized input for [`Self::backward`].
    pub fn forward(&mut self, x: &Mat) -> Result<Mat> {
        self.check_input(x, "forward", self.in_features())?;
        let (y, cache) = self.forward_inner(x)?;
        self.cache = Some(cache);
        Ok(y)
    }

    /// Forward pass without touching the backward cache.
    pub fn infer(&self, x: &Mat) -> Result<Mat> {
        self.check_input(x, "infer", self.in_features())?;
        Ok(self.forward_inner(x)?.0)
    }

    fn forward_inner(&self, x: &Mat) -> Result<(Mat, CachedInput)> {
        if self.config.identity_mode {
            let base = x.matmul(&self.w_dq.transpose())?;
            let h = x.matmul(&self.a.transpose())?;
            let adapter = h.matmul(&self.b.transpose())?;
            let y = base.add(&adapter.scale(self.scale))?;
            return Ok((y, CachedInput::Exact(x.clone())));
        }
        let act = self.config.act_spec();
        let adapter = self.config.adapter_spec();
        let xq = q_rows(x, act)?;
        // Base: X (batch x in) times W' (in x out). Row-grouping W along
        // its input axis and relabeling gives the column-grouped W'.
        let base = gse_gemm(&xq, &q_rows(&self.w_dq, act)?.transposed())?;
        // Down projection: H = X A' (batch x rank).
        let h = gse_gemm(&xq, &q_rows(&self.a, adapter)?.transposed())?;
        // Up projection on the requantized intermediate: (batch x out).
        let up = gse_gemm(&q_rows(&h, adapter)?, &q_rows(&self.b, adapter)?.transposed())?;
        let y = base.add(&up.scale(self.scale))?;
        Ok((y, CachedInput::Quantized(xq)))
    }

    /// Backward pass for the most recent [`Self::forward`] call.
    ///
    /// Returns gradients for the input and both adapters; the frozen base
    /// receives none. The cache is consumed: one backward per forward.
    pub fn backward(&mut self, d_y: &Mat) -> Result<GradBundle> {
        self.check_input(d_y, "backward", self.out_features())?;
        let cache = self.cache.take().ok_or_else(|| Error::MissingCache {
            layer: self.name.clone(),
        })?;
        if d_y.rows() != cached_batch(&cache) {
            return Err(Error::ShapeMismatch {
                op: "backward",
                left_rows: cached_batch(&cache),
                left_cols: self.out_features(),
                right_rows: d_y.rows(),
                right_cols: d_y.cols(),
            });
        }
        match cache {
            CachedInput::Exact(x) => self.backward_identity(&x, d_y),
            CachedInput::Quantized(xq) => self.backward_quantized(&xq, d_y),
        }
    }

    fn backward_identity(&self, x: &Mat, d_y: &Mat) -> Result<GradBundle> {
        // Same association order as the quantized path, with exact products.
        let d_x_base = d_y.matmul(&self.w_dq)?;
        let t = d_y.matmul(&self.b)?;
        let d_x = d_x_base.add(&t.matmul(&self.a)?.scale(self.scale))?;
        let h = x.matmul(&self.a.transpose())?;
        let d_b = d_y.transpose().matmul(&h)?.scale(self.scale);
        let g = self.b.transpose().matmul(&d_y.transpose())?;
        let d_a = g.matmul(x)?.scale(self.scale);
        Ok(GradBundle { d_x, d_a, d_b })
    }

    fn backward_quantized(&self, xq: &GseTensor, d_y: &Mat) -> Result<GradBundle> {
        let act = self.config.act_spec();
        let grad = self.config.grad_spec();
        let adapter = self.config.adapter_spec();
        let dyq = q_rows(d_y, grad)?;

        // Input gradient: dY W plus the adapter path (dY B) A, with the
        // dY-involving intermediate requantized at the gradient width.
        let d_x_base = gse_gemm(&dyq, &q_cols(&self.w_dq, act)?)?;
        let t = gse_gemm(&dyq, &q_cols(&self.b, adapter)?)?;
        let d_x_adapter = gse_gemm(&q_rows(&t, grad)?, &q_cols(&self.a, adapter)?)?;
        let d_x = d_x_base.add(&d_x_adapter.scale(self.scale))?;

        // Up-projection gradient: dY' H with H = X A' rebuilt from the
        // cached quantized input, requantized at the adapter width. dY'
        // reduces over the batch here, so dY is grouped along batch.
        let h = gse_gemm(xq, &q_rows(&self.a, adapter)?.transposed())?;
        let dyt_left = q_cols(d_y, grad)?.transposed();
        let d_b = gse_gemm(&dyt_left, &q_cols(&h, adapter)?)?.scale(self.scale);

        // Down-projection gradient: (B' dY') X. The left factor involves dY
        // and requantizes at the gradient width; its inner product reduces
        // over out features, so the row-grouped dY relabels as the right
        // operand. The final product reduces over the batch axis, which the
        // cached input is not grouped along, so it is decoded and regrouped
        // at the activation width.
        let g = gse_gemm(&q_cols(&self.b, adapter)?.transposed(), &dyq.clone().transposed())?;
        let x_batch_grouped = q_cols(&xq.dequantize(), act)?;
        let d_a = gse_gemm(&q_rows(&g, grad)?, &x_batch_grouped)?.scale(self.scale);

        Ok(GradBundle { d_x, d_a, d_b })
    }
}

fn cached_batch(cache: &CachedInput) -> usize {
    match cache {
        CachedInput::Exact(x) => x.rows(),
        CachedInput::Quantized(t) => t.rows(),
    }
}
