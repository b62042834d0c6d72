//! File-to-file quantization in both directions.

use clap::{Args, ValueEnum};
use gsqt::formats::gse::GseSpec;
use gsqt::io::{read_gse_file, read_mat_file, write_gse_file, write_mat_file, Dtype};
use gsqt::kernels::{quantize_matrix, GroupAxis};
use gsqt::Result;
use std::path::PathBuf;

#[derive(Clone, Copy, ValueEnum)]
pub enum Axis {
    Rows,
    Cols,
}

impl From<Axis> for GroupAxis {
    fn from(a: Axis) -> GroupAxis {
        match a {
            Axis::Rows => GroupAxis::Rows,
            Axis::Cols => GroupAxis::Cols,
        }
    }
}

#[derive(Args)]
pub struct QuantizeArgs {
    /// Dense input matrix (.gsqt container)
    #[arg(long, conflicts_with = "random")]
    pub input: Option<PathBuf>,
    /// Quantize a standard-normal random matrix of this shape instead,
    /// e.g. 128x64
    #[arg(long)]
    pub random: Option<String>,
    /// Seed for --random
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Packed output tensor (.gseb container)
    #[arg(long)]
    pub out: PathBuf,
    /// Element width in bits including the sign
    #[arg(long, default_value_t = 8)]
    pub bits: u8,
    /// Elements sharing one exponent
    #[arg(long, default_value_t = 32)]
    pub group_size: usize,
    /// Axis the groups run along
    #[arg(long, value_enum, default_value_t = Axis::Rows)]
    pub axis: Axis,
    /// Bias of the 5-bit exponent field
    #[arg(long, default_value_t = 15)]
    pub bias: i32,
}

fn parse_shape(text: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = text.split('x').collect();
    let bad = || gsqt::Error::Config(format!("shape must look like 128x64, got {text:?}"));
    if parts.len() != 2 {
        return Err(bad());
    }
    let rows = parts[0].parse().map_err(|_| bad())?;
    let cols = parts[1].parse().map_err(|_| bad())?;
    Ok((rows, cols))
}

pub fn quantize(args: &QuantizeArgs) -> Result<()> {
    let m = match (&args.input, &args.random) {
        (Some(path), None) => read_mat_file(path)?,
        (None, Some(shape)) => {
            use rand::SeedableRng;
            let (rows, cols) = parse_shape(shape)?;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(args.seed);
            gsqt::Mat::gaussian(rows, cols, 1.0, &mut rng)
        }
        _ => {
            return Err(gsqt::Error::Config(
                "pass exactly one of --input or --random".into(),
            ))
        }
    };
    let spec = GseSpec::with_bias(args.bits, args.group_size, args.bias)?;
    let t = quantize_matrix(&m, args.axis.into(), spec)?;
    let flags = t.flags();
    write_gse_file(&args.out, &t)?;
    if flags.saturated {
        eprintln!("warning: input exceeded the exponent window and saturated");
    }
    let decoded = t.dequantize();
    let mut max_err = 0f64;
    let mut sum_err = 0f64;
    for (a, b) in m.data().iter().zip(decoded.data()) {
        let e = (a - b).abs();
        max_err = max_err.max(e);
        sum_err += e;
    }
    let mean_err = sum_err / m.data().len().max(1) as f64;
    println!(
        "packed {}x{} at {} bits per element, {} groups of {} ({} clamped mantissas), wrote {}",
        t.rows(),
        t.cols(),
        args.bits,
        t.groups().len(),
        args.group_size,
        flags.clamped,
        args.out.display()
    );
    println!("round trip: max abs error {max_err:.3e}, mean abs error {mean_err:.3e}");
    Ok(())
}

#[derive(Clone, Copy, ValueEnum)]
pub enum DtypeArg {
    F32,
    F64,
}

#[derive(Args)]
pub struct DequantizeArgs {
    /// Packed input tensor (.gseb container)
    #[arg(long)]
    pub input: PathBuf,
    /// Dense output matrix (.gsqt container)
    #[arg(long)]
    pub out: PathBuf,
    /// Storage width of the decoded matrix
    #[arg(long, value_enum, default_value_t = DtypeArg::F64)]
    pub dtype: DtypeArg,
}

pub fn dequantize(args: &DequantizeArgs) -> Result<()> {
    let t = read_gse_file(&args.input)?;
    let m = t.dequantize();
    let dtype = match args.dtype {
        DtypeArg::F32 => Dtype::F32,
        DtypeArg::F64 => Dtype::F64,
    };
    write_mat_file(&args.out, &m, dtype)?;
    println!(
        "decoded {}x{} ({} bits per element), wrote {}",
        m.rows(),
        m.cols(),
        t.spec().total_bits(),
        args.out.display()
    );
    Ok(())
}
