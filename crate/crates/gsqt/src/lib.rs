//! Group-shared-exponent integer tensors and a fully quantized low-rank
//! fine-tuning engine.
//!
//! The crate is organized in layers:
//!
//! - [`formats`]: scalar and group codecs. The group-shared-exponent (GSE)
//!   format stores a run of integers under one 5-bit exponent; companions
//!   are emulated low-bit floats, a uniform affine quantizer, and the
//!   4-bit normal-quantile codebook used for frozen weights.
//! - [`kernels`]: quantization of dense matrices into grouped tensors and
//!   the integer GEMM over them, plus the bit-exact wire packing.
//! - [`io`]: on-disk containers for dense and packed tensors.
//! - [`autograd`]: quantize-compute-dequantize matmuls and the low-rank
//!   adapter layer with integer forward and backward passes.
//! - [`trainer`]: deterministic toy tasks and a full-precision optimizer
//!   over the quantized layer.
//! - [`analysis`]: signal-quality metrics, memory models, bit/rank sweeps,
//!   and gradient checks.
//!
//! Heavy loops (GEMM, tensor quantization, sweep grids) are data-parallel
//! via rayon when the default `parallel` feature is on; sequential
//! fallbacks compile unconditionally and produce bit-identical results.

pub mod analysis;
pub mod autograd;
pub mod error;
pub mod formats;
pub mod io;
pub mod kernels;
pub mod mat;
pub mod trainer;

pub use error::{Error, Result};
pub use mat::Mat;

/// Pin the global worker pool to `n` threads. Call once, before any
/// parallel work; later calls return an error from the pool builder.
///
/// With the `parallel` feature off this records nothing and always
/// succeeds, since every kernel already runs sequentially.
pub fn set_worker_threads(n: usize) -> Result<()> {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = n;
        Ok(())
    }
}
