//! Training jobs: single runs and bits-by-rank sweep grids.
//!
//! Both commands take a JSON config carrying the full parameter set, with
//! individual flags as overrides, and write their artifacts atomically.
//! Artifacts are deterministic for fixed inputs except for wall-time
//! fields, which report but never feed back into results.

use clap::Args;
use gsqt::analysis::pareto::{run_sweep, SweepGrid, SweepResult};
use gsqt::analysis::{decoder_7b_shape, ModelShape};
use gsqt::autograd::QuantConfig;
use gsqt::io::atomic_write;
use gsqt::trainer::tasks::TaskSpec;
use gsqt::trainer::TrainParams;
use gsqt::Result;
use std::path::PathBuf;

use super::{emit, read_json_config};

#[derive(Args)]
pub struct TrainArgs {
    /// JSON file with the full run parameters; flags below override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Width notation like 4-6-6, or 4-6-6-8 when adapters differ
    #[arg(long)]
    pub notation: Option<String>,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub group_size: Option<usize>,
    /// Full-precision matmuls in the quantized association order
    #[arg(long)]
    pub identity: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Regression width (inputs and outputs) when no config is given
    #[arg(long, default_value_t = 16)]
    pub features: usize,
    /// Write the run artifact (JSON) here
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the loss curve (CSV: step,loss,lr) here
    #[arg(long)]
    pub curve: Option<PathBuf>,
}

fn build_train_params(args: &TrainArgs) -> Result<TrainParams> {
    let mut params = match &args.config {
        Some(path) => read_json_config::<TrainParams>(path)?,
        None => TrainParams::new(
            QuantConfig::new(8, 8, 8, 8)?,
            TaskSpec::regression(args.features, args.features),
            0,
        ),
    };
    if let Some(notation) = &args.notation {
        let rank = args.rank.unwrap_or(params.config.rank);
        let mut config = QuantConfig::from_notation(notation, rank)?;
        config.group_size = params.config.group_size;
        params.config = config;
    } else if let Some(rank) = args.rank {
        params.config.rank = rank;
    }
    if let Some(group) = args.group_size {
        params.config.group_size = group;
    }
    if args.identity {
        params.config.identity_mode = true;
    }
    if let Some(seed) = args.seed {
        params.seed = seed;
    }
    if let Some(steps) = args.steps {
        params.steps = steps;
    }
    if let Some(batch) = args.batch_size {
        params.batch_size = batch;
    }
    if let Some(lr) = args.lr {
        params.lr = lr;
    }
    Ok(params)
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let params = build_train_params(args)?;
    let run = gsqt::trainer::train(&params)?;
    if let Some(out) = &args.out {
        let mut json = serde_json::to_string_pretty(&run).expect("run artifact serializes");
        json.push('\n');
        atomic_write(out, json.as_bytes())?;
        println!("wrote {}", out.display());
    }
    if let Some(curve) = &args.curve {
        let mut csv = String::from("step,loss,lr\n");
        for r in &run.steps {
            csv.push_str(&format!("{},{},{}\n", r.step, r.loss, r.lr));
        }
        atomic_write(curve, csv.as_bytes())?;
        println!("wrote {}", curve.display());
    }
    println!(
        "{}: final eval {:.6e} after {} steps in {} ms",
        run.notation, run.final_eval, params.steps, run.wall_ms
    );
    Ok(())
}

#[derive(Args)]
pub struct SweepArgs {
    /// JSON file with the full grid; flags below override its axes
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated element widths
    #[arg(long, value_delimiter = ',')]
    pub bits: Option<Vec<u8>>,
    /// Comma-separated adapter ranks
    #[arg(long, value_delimiter = ',')]
    pub ranks: Option<Vec<usize>>,
    /// Number of paired seeds (runs use seeds 0..n in every cell)
    #[arg(long)]
    pub seeds: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Regression width (inputs and outputs) when no config is given
    #[arg(long, default_value_t = 16)]
    pub features: usize,
    /// Write the per-run CSV here instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write cell-level plot data here (CSV: memory_bytes,mean_final_loss
    /// first, so columns one and two are the x,y series)
    #[arg(long)]
    pub plot: Option<PathBuf>,
    /// Write a JSON artifact here echoing the effective grid plus the
    /// aggregated cells
    #[arg(long)]
    pub meta: Option<PathBuf>,
}

fn default_grid(features: usize) -> Result<SweepGrid> {
    let mut base = TrainParams::new(
        QuantConfig::new(8, 8, 8, 8)?,
        TaskSpec::regression(features, features),
        0,
    );
    base.steps = 150;
    Ok(SweepGrid {
        bits: vec![5, 6, 7, 8],
        ranks: vec![2, 4, 8, 16],
        seeds: (0..5).collect(),
        base,
        memory_shape: reference_shape(),
    })
}

fn reference_shape() -> ModelShape {
    decoder_7b_shape(16, 2048)
}

pub fn sweep_csv(result: &SweepResult, group_size: usize) -> String {
    let mut csv = String::from("bits,rank,group,seed,final_loss,memory_bytes,dominated,wall_ms\n");
    for run in &result.runs {
        let cell = result
            .cell(run.bits, run.rank)
            .expect("every run belongs to a cell");
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            run.bits,
            run.rank,
            group_size,
            run.seed,
            run.final_loss,
            cell.memory_bytes,
            cell.dominated,
            run.wall_ms
        ));
    }
    csv
}

pub fn sweep(args: &SweepArgs) -> Result<()> {
    let mut grid = match &args.config {
        Some(path) => read_json_config::<SweepGrid>(path)?,
        None => default_grid(args.features)?,
    };
    if let Some(bits) = &args.bits {
        grid.bits = bits.clone();
    }
    if let Some(ranks) = &args.ranks {
        grid.ranks = ranks.clone();
    }
    if let Some(n) = args.seeds {
        grid.seeds = (0..n).collect();
    }
    if let Some(steps) = args.steps {
        grid.base.steps = steps;
    }
    let result = run_sweep(&grid)?;
    for run in result.runs.iter().filter(|r| r.diverged) {
        eprintln!(
            "warning: run {}b/r{} seed {} diverged; its loss is recorded as inf",
            run.bits, run.rank, run.seed
        );
    }
    let csv = sweep_csv(&result, grid.base.config.group_size);
    emit(&args.out, &csv)?;
    if let Some(plot) = &args.plot {
        let mut data = String::from("memory_bytes,mean_final_loss,bits,rank,dominated\n");
        for c in &result.cells {
            data.push_str(&format!(
                "{},{},{},{},{}\n",
                c.memory_bytes, c.mean_final_loss, c.bits, c.rank, c.dominated
            ));
        }
        atomic_write(plot, data.as_bytes())?;
        println!("wrote {}", plot.display());
    }
    if let Some(meta) = &args.meta {
        let doc = serde_json::json!({ "grid": grid, "cells": result.cells });
        let mut text = serde_json::to_string_pretty(&doc).expect("sweep artifact serializes");
        text.push('\n');
        atomic_write(meta, text.as_bytes())?;
        println!("wrote {}", meta.display());
    }
    let frontier: Vec<String> = result
        .cells
        .iter()
        .filter(|c| !c.dominated)
        .map(|c| format!("{}b/r{}", c.bits, c.rank))
        .collect();
    eprintln!("pareto frontier: {}", frontier.join(" "));
    Ok(())
}
