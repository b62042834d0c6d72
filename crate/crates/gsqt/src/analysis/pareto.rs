//! Bit-width by rank sweeps with Pareto dominance over (memory, loss).
//!
//! Every grid cell trains the same task at each seed in the grid's seed
//! list, so seeds are paired across cells and per-seed differences between
//! cells are meaningful. The memory axis comes from the model-level
//! estimate at a reference decoder geometry: loss is measured at desk
//! scale, memory at the scale the formats are aimed at.
//!
//! Runs execute in a fixed flattening order (bits, then rank, then seed);
//! with the `parallel` feature they spread across workers and collect back
//! in order, so results do not depend on thread count. A run that diverges
//! is recorded with an infinite loss instead of aborting the sweep, and
//! poisons its cell's mean.

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::memory::{
    estimate_training_memory, ActivationAccounting, MemoryFormats, ModelShape,
};
use crate::autograd::QuantConfig;
use crate::error::{Error, Result};
use crate::trainer::{train, TrainParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub bits: Vec<u8>,
    pub ranks: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Template parameters; each run overrides widths, rank, and seed.
    pub base: TrainParams,
    /// Reference geometry for the memory axis.
    pub memory_shape: ModelShape,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub bits: u8,
    pub rank: usize,
    pub seed: u64,
    pub final_loss: f64,
    pub diverged: bool,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub bits: u8,
    pub rank: usize,
    pub mean_final_loss: f64,
    pub memory_bytes: u64,
    pub dominated: bool,
    pub diverged_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub runs: Vec<SweepRun>,
    pub cells: Vec<SweepCell>,
}

impl SweepResult {
    pub fn cell(&self, bits: u8, rank: usize) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.bits == bits && c.rank == rank)
    }

    /// Per-seed losses of one cell, in the grid's seed order.
    pub fn cell_losses(&self, bits: u8, rank: usize) -> Vec<f64> {
        self.runs
            .iter()
            .filter(|r| r.bits == bits && r.rank == rank)
            .map(|r| r.final_loss)
            .collect()
    }
}

/// Parameters for one run of the grid.
fn run_params(grid: &SweepGrid, bits: u8, rank: usize, seed: u64) -> Result<TrainParams> {
    let mut params = grid.base.clone();
    params.config = QuantConfig {
        act_bits: bits,
        grad_bits: bits,
        adapter_bits: bits,
        group_size: grid.base.config.group_size,
        rank,
        identity_mode: false,
    }
    .validated()?;
    params.seed = seed;
    // Step records are not part of sweep output; keep them sparse.
    params.record_every = params.steps.max(1);
    Ok(params)
}

fn execute(params: &TrainParams, bits: u8, rank: usize, seed: u64) -> Result<SweepRun> {
    match train(params) {
        Ok(run) => Ok(SweepRun {
            bits,
            rank,
            seed,
            final_loss: run.final_eval,
            diverged: false,
            wall_ms: run.wall_ms,
        }),
        Err(Error::Diverged { .. }) => Ok(SweepRun {
            bits,
            rank,
            seed,
            final_loss: f64::INFINITY,
            diverged: true,
            wall_ms: 0,
        }),
        Err(other) => Err(other),
    }
}

pub fn run_sweep(grid: &SweepGrid) -> Result<SweepResult> {
    if grid.bits.is_empty() || grid.ranks.is_empty() || grid.seeds.is_empty() {
        return Err(Error::Config("sweep grid has an empty axis".into()));
    }
    let mut jobs = Vec::new();
    for &bits in &grid.bits {
        for &rank in &grid.ranks {
            for &seed in &grid.seeds {
                jobs.push((bits, rank, seed, run_params(grid, bits, rank, seed)?));
            }
        }
    }

    #[cfg(feature = "parallel")]
    let runs: Vec<SweepRun> = jobs
        .par_iter()
        .map(|(bits, rank, seed, params)| execute(params, *bits, *rank, *seed))
        .collect::<Result<Vec<_>>>()?;
    #[cfg(not(feature = "parallel"))]
    let runs: Vec<SweepRun> = jobs
        .iter()
        .map(|(bits, rank, seed, params)| execute(params, *bits, *rank, *seed))
        .collect::<Result<Vec<_>>>()?;

    let mut cells = Vec::new();
    for &bits in &grid.bits {
        for &rank in &grid.ranks {
            let losses: Vec<f64> = runs
                .iter()
                .filter(|r| r.bits == bits && r.rank == rank)
                .map(|r| r.final_loss)
                .collect();
            let diverged_runs = runs
                .iter()
                .filter(|r| r.bits == bits && r.rank == rank && r.diverged)
                .count();
            let mean = losses.iter().sum::<f64>() / losses.len() as f64;
            let memory = estimate_training_memory(
                &grid.memory_shape,
                rank,
                &MemoryFormats::gse(bits, grid.base.config.group_size),
                ActivationAccounting::CheckpointBoundary,
            )?
            .total_bytes;
            cells.push(SweepCell {
                bits,
                rank,
                mean_final_loss: mean,
                memory_bytes: memory,
                dominated: false,
                diverged_runs,
            });
        }
    }
    mark_dominated(&mut cells);
    Ok(SweepResult { runs, cells })
}

/// A cell is dominated when some other cell is at least as good on both
/// axes and strictly better on one.
pub fn mark_dominated(cells: &mut [SweepCell]) {
    let snapshot: Vec<(u64, f64)> = cells
        .iter()
        .map(|c| (c.memory_bytes, c.mean_final_loss))
        .collect();
    for (i, cell) in cells.iter_mut().enumerate() {
        let (mem_i, loss_i) = snapshot[i];
        cell.dominated = snapshot.iter().enumerate().any(|(j, &(mem_j, loss_j))| {
            j != i
                && mem_j <= mem_i
                && loss_j <= loss_i
                && (mem_j < mem_i || loss_j < loss_i)
        });
    }
}
