//! Regenerates the 16-entry normal-quantile codebook and prints it as Rust
//! source, so the frozen `NF4_CODEBOOK` constant can be audited:
//!
//! ```text
//! cargo run -p gsqt --example gen_nf4_codebook
//! ```
//!
//! Construction: take 8 evenly spaced probabilities from `OFFSET` down to
//! 0.5 (dropping the 0.5 endpoint) for the positive half and 7 from
//! `1 - OFFSET` up to 0.5 mirrored negative for the negative half, map them
//! through the standard normal quantile function, add an exact zero, sort,
//! and divide by the largest magnitude so the ends land exactly on -1 and
//! +1. The offset pins the outermost quantiles so the tails are not pushed
//! to infinity.

use statrs::distribution::{ContinuousCDF, Normal};

const OFFSET: f64 = 0.9677083;

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
        .collect()
}

fn main() {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut values: Vec<f64> = Vec::with_capacity(16);
    // Positive side: 8 quantiles from OFFSET toward 0.5, endpoint dropped.
    for p in &linspace(OFFSET, 0.5, 9)[..8] {
        values.push(normal.inverse_cdf(*p));
    }
    // Negative side: 7 quantiles from 1-OFFSET toward 0.5, endpoint
    // dropped, negated by symmetry of the construction.
    for p in &linspace(OFFSET, 0.5, 8)[..7] {
        values.push(-normal.inverse_cdf(*p));
    }
    values.push(0.0);
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let max_abs = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for v in &mut values {
        *v /= max_abs;
    }

    assert_eq!(values.len(), 16);
    assert_eq!(values[0], -1.0);
    assert_eq!(values[15], 1.0);
    assert_eq!(values[7], 0.0);

    println!("pub const NF4_CODEBOOK: [f64; 16] = [");
    for v in &values {
        if *v == 0.0 {
            println!("    0.0,");
        } else {
            // 17 significant digits: enough to reproduce any f64 exactly.
            println!("    {v:.17e},");
        }
    }
    println!("];");
}
