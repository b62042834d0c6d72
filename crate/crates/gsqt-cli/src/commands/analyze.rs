//! Measurement commands: format quality, gradient checks, memory model.
//!
//! Each command takes its parameters either from flags or from a JSON
//! config file (flags override the file), and each artifact embeds the
//! effective configuration it was produced under.

use clap::{Args, ValueEnum};
use gsqt::analysis::{
    compare_formats, decoder_7b_shape, estimate_training_memory, fd_check_identity,
    locality_stats, locality_suite, mean_gradient_error, memory_ratio, ActivationAccounting,
    CheckProblem, MemoryFormats, SuiteCase,
};
use gsqt::autograd::QuantConfig;
use gsqt::io::read_mat_file;
use gsqt::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

use super::{emit, read_json_config};

#[derive(Args)]
pub struct FormatsCompareArgs {
    /// Measure this dense matrix instead of the generated suite
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub group_size: usize,
    /// Length of each generated suite vector
    #[arg(long, default_value_t = 4096)]
    pub len: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the table here instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Emit JSON instead of CSV
    #[arg(long)]
    pub json: bool,
    /// Also report per-case group spread: fraction of groups whose
    /// standard deviation falls below this value
    #[arg(long)]
    pub locality_threshold: Option<f64>,
    /// Write the locality table here (default: after the main table)
    #[arg(long, requires = "locality_threshold")]
    pub locality_out: Option<PathBuf>,
}

/// Numbers that must survive JSON, where bare infinity does not.
fn json_f64(v: f64) -> serde_json::Value {
    serde_json::Number::from_f64(v)
        .map(serde_json::Value::Number)
        .unwrap_or_else(|| serde_json::Value::String(format!("{v}")))
}

pub fn formats_compare(args: &FormatsCompareArgs) -> Result<()> {
    let cases: Vec<SuiteCase> = match &args.input {
        Some(path) => vec![SuiteCase {
            name: "input",
            values: read_mat_file(path)?.data().to_vec(),
        }],
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            locality_suite(args.group_size, args.len, &mut rng)
        }
    };

    let mut csv = String::from("case,format,bits_per_element,sqnr_db,max_abs_error\n");
    let mut json_cases = Vec::new();
    for case in &cases {
        let degenerate = case.values.iter().all(|v| *v == 0.0);
        if degenerate {
            eprintln!(
                "note: case {} is all zero; every format is exact and sqnr is reported as inf",
                case.name
            );
        }
        let rows = compare_formats(&case.values, args.group_size)?;
        let mut json_rows = Vec::new();
        for q in &rows {
            csv.push_str(&format!(
                "{},{},{:.4},{:.3},{:.3e}\n",
                case.name, q.name, q.bits_per_element, q.sqnr_db, q.max_abs_error
            ));
            json_rows.push(serde_json::json!({
                "format": q.name,
                "bits_per_element": q.bits_per_element,
                "sqnr_db": json_f64(q.sqnr_db),
                "max_abs_error": q.max_abs_error,
            }));
        }
        json_cases.push(serde_json::json!({
            "case": case.name,
            "degenerate": degenerate,
            "formats": json_rows,
        }));
    }

    if args.json {
        let doc = serde_json::json!({
            "config": {
                "source": args.input.as_ref().map(|p| p.display().to_string()),
                "group_size": args.group_size,
                "len": args.len,
                "seed": args.seed,
            },
            "cases": json_cases,
        });
        let mut text = serde_json::to_string_pretty(&doc).expect("comparison serializes");
        text.push('\n');
        emit(&args.out, &text)?;
    } else {
        emit(&args.out, &csv)?;
    }

    if let Some(threshold) = args.locality_threshold {
        let mut table = String::from("case,groups,mean_group_std,fraction_below\n");
        for case in &cases {
            let stats = locality_stats(&case.values, args.group_size, threshold)?;
            table.push_str(&format!(
                "{},{},{:.6e},{:.4}\n",
                case.name, stats.groups, stats.mean_group_std, stats.fraction_below
            ));
        }
        match &args.locality_out {
            Some(_) => emit(&args.locality_out, &table)?,
            None => print!("\n{table}"),
        }
    }
    Ok(())
}

#[derive(Clone, Copy, ValueEnum, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Central finite differences against the full-precision path
    Identity,
    /// Quantized-path gradients against full-precision gradients
    Quantized,
}

/// File form of the gradcheck parameters; flags override field by field.
#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub mode: Mode,
    /// Seeds 0..n are checked and averaged
    pub seeds: u64,
    pub bits: Vec<u8>,
    pub tol: f64,
    pub epsilon: f64,
    pub in_features: usize,
    pub out_features: usize,
    pub rank: usize,
    pub batch: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            mode: Mode::Identity,
            seeds: 20,
            bits: vec![5, 6, 7, 8],
            tol: 1e-5,
            epsilon: 1e-5,
            in_features: 12,
            out_features: 10,
            rank: 3,
            batch: 6,
        }
    }
}

#[derive(Args)]
pub struct GradcheckArgs {
    /// JSON file with the full parameter set; flags below override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Seeds 0..n are checked and averaged
    #[arg(long)]
    pub seeds: Option<u64>,
    /// Quantized mode: widths applied to activations, gradients, and
    /// adapters at once
    #[arg(long, value_delimiter = ',')]
    pub bits: Option<Vec<u8>>,
    /// Identity mode fails when any seed's max relative error exceeds this
    #[arg(long)]
    pub tol: Option<f64>,
    /// Central-difference step
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub in_features: Option<usize>,
    #[arg(long)]
    pub out_features: Option<usize>,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Write a JSON report here
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn build_gradcheck_config(args: &GradcheckArgs) -> Result<GradcheckConfig> {
    let mut cfg = match &args.config {
        Some(path) => read_json_config::<GradcheckConfig>(path)?,
        None => GradcheckConfig::default(),
    };
    if let Some(mode) = args.mode {
        cfg.mode = mode;
    }
    if let Some(seeds) = args.seeds {
        cfg.seeds = seeds;
    }
    if let Some(bits) = &args.bits {
        cfg.bits = bits.clone();
    }
    if let Some(tol) = args.tol {
        cfg.tol = tol;
    }
    if let Some(epsilon) = args.epsilon {
        cfg.epsilon = epsilon;
    }
    if let Some(v) = args.in_features {
        cfg.in_features = v;
    }
    if let Some(v) = args.out_features {
        cfg.out_features = v;
    }
    if let Some(v) = args.rank {
        cfg.rank = v;
    }
    if let Some(v) = args.batch {
        cfg.batch = v;
    }
    Ok(cfg)
}

fn write_report(out: &Option<PathBuf>, doc: &serde_json::Value) -> Result<()> {
    if out.is_some() {
        let mut text = serde_json::to_string_pretty(doc).expect("report serializes");
        text.push('\n');
        emit(out, &text)?;
    }
    Ok(())
}

pub fn gradcheck(args: &GradcheckArgs) -> Result<()> {
    let cfg = build_gradcheck_config(args)?;
    let problem = CheckProblem {
        in_features: cfg.in_features,
        out_features: cfg.out_features,
        rank: cfg.rank,
        batch: cfg.batch,
    };
    match cfg.mode {
        Mode::Identity => {
            let mut worst = 0f64;
            let mut mean = 0.0;
            let mut checked = 0;
            for seed in 0..cfg.seeds {
                let report = fd_check_identity(&problem, seed, cfg.epsilon)?;
                worst = worst.max(report.max_rel_error);
                mean += report.mean_rel_error;
                checked += report.checked;
            }
            mean /= cfg.seeds as f64;
            println!(
                "identity gradcheck: {} entries over {} seeds, max rel {:.3e}, mean rel {:.3e}",
                checked, cfg.seeds, worst, mean
            );
            let pass = worst <= cfg.tol;
            write_report(
                &args.out,
                &serde_json::json!({
                    "config": cfg,
                    "checked": checked,
                    "max_rel_error": worst,
                    "mean_rel_error": mean,
                    "pass": pass,
                }),
            )?;
            if !pass {
                eprintln!("FAIL: max relative error exceeds tolerance {:.1e}", cfg.tol);
                std::process::exit(2);
            }
            println!("OK: within tolerance {:.1e}", cfg.tol);
            Ok(())
        }
        Mode::Quantized => {
            let mut csv = String::from("bits,mean_rel_error\n");
            let mut rows = Vec::new();
            for &bits in &cfg.bits {
                let config = QuantConfig::new(bits, bits, bits, problem.rank)?;
                let err = mean_gradient_error(&problem, config, 0..cfg.seeds)?;
                csv.push_str(&format!("{bits},{err:.6e}\n"));
                rows.push(serde_json::json!({"bits": bits, "mean_rel_error": err}));
            }
            print!("{csv}");
            write_report(&args.out, &serde_json::json!({"config": cfg, "rows": rows}))
        }
    }
}

#[derive(Clone, Copy, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Accounting {
    /// Only boundary activations live across the backward pass
    Checkpoint,
    /// Every module keeps its input cached
    PerModule,
}

impl From<Accounting> for ActivationAccounting {
    fn from(a: Accounting) -> ActivationAccounting {
        match a {
            Accounting::Checkpoint => ActivationAccounting::CheckpointBoundary,
            Accounting::PerModule => ActivationAccounting::PerModuleCached,
        }
    }
}

/// File form of the memory-model parameters; flags override field by field.
#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemConfig {
    /// Element width of activations, gradients, and adapters
    pub bits: u8,
    pub group_size: usize,
    pub rank: usize,
    pub batch: usize,
    pub seq: usize,
    pub accounting: Accounting,
}

impl Default for MemConfig {
    fn default() -> Self {
        MemConfig {
            bits: 5,
            group_size: 32,
            rank: 64,
            batch: 16,
            seq: 2048,
            accounting: Accounting::Checkpoint,
        }
    }
}

#[derive(Args)]
pub struct MemArgs {
    /// JSON file with the full parameter set; flags below override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Element width of activations, gradients, and adapters
    #[arg(long)]
    pub bits: Option<u8>,
    #[arg(long)]
    pub group_size: Option<usize>,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub seq: Option<usize>,
    #[arg(long, value_enum)]
    pub accounting: Option<Accounting>,
    /// Emit both estimates as JSON instead of the table
    #[arg(long)]
    pub json: bool,
    /// Write the JSON estimate here
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn build_mem_config(args: &MemArgs) -> Result<MemConfig> {
    let mut cfg = match &args.config {
        Some(path) => read_json_config::<MemConfig>(path)?,
        None => MemConfig::default(),
    };
    if let Some(bits) = args.bits {
        cfg.bits = bits;
    }
    if let Some(group) = args.group_size {
        cfg.group_size = group;
    }
    if let Some(rank) = args.rank {
        cfg.rank = rank;
    }
    if let Some(batch) = args.batch {
        cfg.batch = batch;
    }
    if let Some(seq) = args.seq {
        cfg.seq = seq;
    }
    if let Some(acc) = args.accounting {
        cfg.accounting = acc;
    }
    Ok(cfg)
}

fn gib(bytes: u64) -> f64 {
    bytes as f64 / (1u64 << 30) as f64
}

pub fn mem(args: &MemArgs) -> Result<()> {
    let cfg = build_mem_config(args)?;
    let shape = decoder_7b_shape(cfg.batch, cfg.seq);
    let accounting: ActivationAccounting = cfg.accounting.into();
    let quantized = estimate_training_memory(
        &shape,
        cfg.rank,
        &MemoryFormats::gse(cfg.bits, cfg.group_size),
        accounting,
    )?;
    let dense = estimate_training_memory(&shape, cfg.rank, &MemoryFormats::dense_f16(), accounting)?;

    let doc = serde_json::json!({
        "config": cfg,
        "shape": shape,
        "quantized": quantized,
        "dense_f16": dense,
        "dense_over_quantized": memory_ratio(&dense, &quantized),
    });
    write_report(&args.out, &doc)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&doc).expect("memory estimate serializes"));
        return Ok(());
    }

    println!(
        "reference decoder: {} blocks, hidden {}, batch {} x {} tokens, rank {}",
        shape.blocks, shape.hidden, shape.batch, shape.seq, cfg.rank
    );
    println!("gse{}/{} training memory:", cfg.bits, cfg.group_size);
    for c in &quantized.components {
        println!("  {:<22} {:>9.3} GiB   {}", c.name, gib(c.bytes), c.formula);
    }
    println!("  {:<22} {:>9.3} GiB", "total", gib(quantized.total_bytes));
    println!(
        "dense f16 baseline: {:.3} GiB ({:.3}x the quantized total)",
        gib(dense.total_bytes),
        memory_ratio(&dense, &quantized)
    );
    Ok(())
}
