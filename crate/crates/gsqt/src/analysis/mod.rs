//! Measurement tools layered on the formats and the training loop:
//! signal-to-noise comparisons across formats, gradient checks against
//! finite differences and against the full-precision path, a training
//! memory model, and bit-width by rank sweep grids with Pareto flags.

pub mod gradcheck;
pub mod memory;
pub mod pareto;
pub mod sqnr;

pub use gradcheck::{
    fd_check_identity, gradient_error_vs_identity, mean_gradient_error, CheckProblem,
    FdCheckReport, QuantGradReport,
};
pub use memory::{
    decoder_7b_shape, estimate_training_memory, memory_ratio, ActivationAccounting, ElemFormat,
    MemoryComponent, MemoryEstimate, MemoryFormats, ModelShape, ModuleShape,
};
pub use pareto::{mark_dominated, run_sweep, SweepCell, SweepGrid, SweepResult, SweepRun};
pub use sqnr::{
    compare_formats, fp_represents, locality_stats, locality_suite, sqnr_db, FormatQuality,
    LocalityStats, SuiteCase,
};
