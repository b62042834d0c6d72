//! Numeric format descriptors and scalar codecs.
//!
//! Four families live here:
//!
//! * [`GseSpec`] / [`GseGroup`]: the group-shared-exponent integer format.
//!   Kernels that operate on whole tensors are in [`crate::kernels`].
//! * [`FpFormat`] / [`fp_encode`]: emulated low-bit floats (FP8/FP7/FP6)
//!   used as comparison baselines.
//! * [`uniform_quantize`]: the uniform affine scalar quantizer.
//! * [`nf4_quantize`]: 4-bit NormalFloat block quantization with double
//!   quantization of block scales, used for frozen weights.

pub mod fp;
pub mod gse;
pub mod nf4;
pub mod uniform;

pub use fp::{fp_encode, fp_encode_slice, FpFormat};
pub use gse::{
    accumulator_headroom_bits, GseGroup, GseSpec, DEFAULT_EXPONENT_BIAS, DEFAULT_GROUP_SIZE,
    GSE_EXPONENT_BITS,
};
pub use nf4::{
    nf4_dequantize, nf4_nearest_code, nf4_quantize, Nf4Block, Nf4Matrix, Nf4Vector, NF4_BLOCKS_PER_SCALE,
    NF4_BLOCK_LEN, NF4_CODEBOOK, NF4_ZERO_CODE,
};
pub use uniform::{uniform_dequantize, uniform_quantize, UniformQuantParams};
