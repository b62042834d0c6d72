//! Gradient verification for the adapter layer.
//!
//! Two complementary checks:
//!
//! - [`fd_check_identity`] validates the backward-pass calculus: in
//!   identity mode the loss is an ordinary smooth function of the adapter
//!   entries, so central finite differences converge to the analytic
//!   gradient and any disagreement is a bug.
//! - [`gradient_error_vs_identity`] measures quantization noise: the
//!   quantized path's adapter gradients are compared against the identity
//!   path's on identical data. Finite differences are useless here (the
//!   quantized loss is piecewise constant in any single parameter at small
//!   epsilon), so the straight-through reference gradient is the full
//!   precision one, which is also the estimator training actually follows.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{LoraLinear, QuantConfig};
use crate::error::Result;
use crate::mat::Mat;
use crate::trainer::tasks::mse_loss;

/// Outcome of a finite-difference sweep over every adapter entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub mean_rel_error: f64,
}

/// Dimensions of the single-layer check problem.
#[derive(Debug, Clone, Copy)]
pub struct CheckProblem {
    pub in_features: usize,
    pub out_features: usize,
    pub rank: usize,
    pub batch: usize,
}

impl CheckProblem {
    pub fn small() -> Self {
        CheckProblem {
            in_features: 12,
            out_features: 10,
            rank: 3,
            batch: 6,
        }
    }
}

/// Build a layer with nonzero adapters plus a data batch, all from `seed`.
///
/// `B` starts away from zero so the `A` gradient has signal, and targets
/// differ from the layer output so the loss gradient is nonzero.
fn check_setup(
    problem: &CheckProblem,
    config: QuantConfig,
    seed: u64,
) -> Result<(LoraLinear, Mat, Mat)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Mat::gaussian(
        problem.out_features,
        problem.in_features,
        1.0 / (problem.in_features as f64).sqrt(),
        &mut rng,
    );
    let mut layer = LoraLinear::new("check", &w, 2.0, config)?;
    let a = Mat::gaussian(problem.rank, problem.in_features, 0.2, &mut rng);
    let b = Mat::gaussian(problem.out_features, problem.rank, 0.2, &mut rng);
    layer.set_adapters(a, b)?;
    let x = Mat::gaussian(problem.batch, problem.in_features, 1.0, &mut rng);
    let y = Mat::gaussian(problem.batch, problem.out_features, 1.0, &mut rng);
    Ok((layer, x, y))
}

fn loss_of(layer: &LoraLinear, x: &Mat, y: &Mat) -> Result<f64> {
    Ok(mse_loss(&layer.infer(x)?, y)?.0)
}

/// Compare analytic adapter gradients against central finite differences
/// in identity mode.
///
/// Relative error per entry uses a scale-aware denominator,
/// `max(|fd|, |analytic|, 1e-3 * max|gradient|)`, so entries that are tiny
/// relative to the tensor's own gradient scale cannot blow up the ratio.
pub fn fd_check_identity(problem: &CheckProblem, seed: u64, epsilon: f64) -> Result<FdCheckReport> {
    let config = QuantConfig::identity(problem.rank);
    let (mut layer, x, y) = check_setup(problem, config, seed)?;
    let pred = layer.forward(&x)?;
    let (_, d_pred) = mse_loss(&pred, &y)?;
    let bundle = layer.backward(&d_pred)?;

    let mut checked = 0usize;
    let mut max_rel = 0.0f64;
    let mut sum_rel = 0.0f64;
    // Both adapters, every entry.
    for which in 0..2 {
        let analytic = if which == 0 { &bundle.d_a } else { &bundle.d_b };
        let floor = 1e-3 * analytic.max_abs();
        for r in 0..analytic.rows() {
            for c in 0..analytic.cols() {
                let probe = |delta: f64| -> Result<f64> {
                    let mut a = layer.a().clone();
                    let mut b = layer.b().clone();
                    let target = if which == 0 { &mut a } else { &mut b };
                    target.set(r, c, target.at(r, c) + delta);
                    let mut trial = layer.clone();
                    trial.set_adapters(a, b)?;
                    loss_of(&trial, &x, &y)
                };
                let fd = (probe(epsilon)? - probe(-epsilon)?) / (2.0 * epsilon);
                let an = analytic.at(r, c);
                let denom = fd.abs().max(an.abs()).max(floor);
                let rel = (fd - an).abs() / denom;
                checked += 1;
                max_rel = max_rel.max(rel);
                sum_rel += rel;
            }
        }
    }
    Ok(FdCheckReport {
        checked,
        max_rel_error: max_rel,
        mean_rel_error: sum_rel / checked as f64,
    })
}

/// Relative adapter-gradient error of a quantized configuration against
/// the identity path on the same layer, batch, and targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantGradReport {
    /// `||g_q - g_id||_F / ||g_id||_F` over A and B concatenated.
    pub rel_error: f64,
    pub rel_error_a: f64,
    pub rel_error_b: f64,
}

pub fn gradient_error_vs_identity(
    problem: &CheckProblem,
    config: QuantConfig,
    seed: u64,
) -> Result<QuantGradReport> {
    let mut quant_config = config.validated()?;
    quant_config.identity_mode = false;
    let mut id_config = quant_config;
    id_config.identity_mode = true;

    // Identical layer weights and data: the construction stream depends
    // only on the problem and seed.
    let (mut q_layer, x, y) = check_setup(problem, quant_config, seed)?;
    let (mut i_layer, xi, yi) = check_setup(problem, id_config, seed)?;
    debug_assert_eq!(x.data(), xi.data());
    debug_assert_eq!(y.data(), yi.data());

    // Each path differentiates its own forward, as training would.
    let grads = |layer: &mut LoraLinear| -> Result<(Mat, Mat)> {
        let pred = layer.forward(&x)?;
        let (_, d_pred) = mse_loss(&pred, &y)?;
        let bundle = layer.backward(&d_pred)?;
        Ok((bundle.d_a, bundle.d_b))
    };
    let (qa, qb) = grads(&mut q_layer)?;
    let (ia, ib) = grads(&mut i_layer)?;

    let err_a = qa.sub(&ia)?.frobenius_norm();
    let err_b = qb.sub(&ib)?.frobenius_norm();
    let norm_a = ia.frobenius_norm();
    let norm_b = ib.frobenius_norm();
    let total_err = (err_a * err_a + err_b * err_b).sqrt();
    let total_norm = (norm_a * norm_a + norm_b * norm_b).sqrt();
    Ok(QuantGradReport {
        rel_error: total_err / total_norm,
        rel_error_a: err_a / norm_a,
        rel_error_b: err_b / norm_b,
    })
}

/// Mean [`QuantGradReport::rel_error`] over `seeds` at one configuration.
pub fn mean_gradient_error(
    problem: &CheckProblem,
    config: QuantConfig,
    seeds: std::ops::Range<u64>,
) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for seed in seeds {
        sum += gradient_error_vs_identity(problem, config, seed)?.rel_error;
        n += 1;
    }
    Ok(sum / n as f64)
}
