//! Deterministic training loop over the quantized adapter layers.
//!
//! Only the adapters train; the 4-bit base stays frozen. Master adapter
//! weights, optimizer moments, and the loss all live in full precision,
//! while every matrix product inside the layers runs on quantized operands
//! (see [`crate::autograd`]). Bit widths affect training purely through
//! those products.
//!
//! Determinism: the task (teacher, frozen bases, adapter init) and the
//! batch sequence come from two separate streams of one counter-based
//! generator seeded by `TrainParams::seed`, and every kernel is
//! thread-count-independent, so a run's metrics are a pure function of its
//! parameters. Wall-clock time is recorded but is explicitly outside the
//! determinism contract.

pub mod adamw;
pub mod tasks;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::QuantConfig;
use crate::error::{Error, Result};
use crate::mat::Mat;
use adamw::AdamW;
use tasks::{loss_for, make_task, Target, TaskSpec, ToyTask};

/// Loss above which (or at NaN) a run is declared divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainParams {
    pub config: QuantConfig,
    pub task: TaskSpec,
    pub seed: u64,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default)]
    pub warmup_steps: usize,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_adapter_scale")]
    pub adapter_scale: f64,
    #[serde(default = "default_eval_examples")]
    pub eval_examples: usize,
    /// Record every n-th step (step 0 and the last step always record).
    #[serde(default = "default_record_every")]
    pub record_every: usize,
}

fn default_adapter_scale() -> f64 {
    2.0
}

fn default_eval_examples() -> usize {
    256
}

fn default_record_every() -> usize {
    1
}

impl TrainParams {
    pub fn new(config: QuantConfig, task: TaskSpec, seed: u64) -> Self {
        TrainParams {
            config,
            task,
            seed,
            steps: 300,
            batch_size: 16,
            lr: 0.01,
            warmup_steps: 10,
            weight_decay: 0.0,
            adapter_scale: default_adapter_scale(),
            eval_examples: default_eval_examples(),
            record_every: default_record_every(),
        }
    }

    pub fn validated(self) -> Result<Self> {
        self.config.validated()?;
        self.task.validated()?;
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::Config("steps and batch size must be >= 1".into()));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(Error::Config("weight decay must be >= 0".into()));
        }
        if !self.adapter_scale.is_finite() || self.adapter_scale <= 0.0 {
            return Err(Error::Config("adapter scale must be positive".into()));
        }
        if self.eval_examples == 0 {
            return Err(Error::Config("eval set must be >= 1 example".into()));
        }
        if self.record_every == 0 {
            return Err(Error::Config("record_every must be >= 1".into()));
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Everything a finished run reports. Serialized as the training artifact;
/// `wall_ms` is the only field outside the determinism contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub schema_version: u32,
    /// Bit-width notation of the configuration, e.g. `4-5-5`.
    pub notation: String,
    pub params: TrainParams,
    pub steps: Vec<StepRecord>,
    /// Mean loss over the held-out eval set after the final step.
    pub final_eval: f64,
    pub wall_ms: u64,
}

pub const TRAIN_RUN_SCHEMA_VERSION: u32 = 1;

/// RNG streams carved out of the run seed.
const STREAM_TASK: u64 = 0;
const STREAM_BATCH: u64 = 1;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Forward through the whole stack, caching for backward.
fn forward_stack(task: &mut ToyTask, x: &Mat) -> Result<Mat> {
    let mut h = x.clone();
    for layer in &mut task.layers {
        h = layer.forward(&h)?;
    }
    Ok(h)
}

/// Forward without caching, for evaluation.
fn infer_stack(task: &ToyTask, x: &Mat) -> Result<Mat> {
    let mut h = x.clone();
    for layer in &task.layers {
        h = layer.infer(&h)?;
    }
    Ok(h)
}

/// Mean loss of the current adapters over a fixed eval set.
pub fn eval_loss(task: &ToyTask, eval_x: &Mat, eval_y: &Target) -> Result<f64> {
    let pred = infer_stack(task, eval_x)?;
    Ok(loss_for(&pred, eval_y)?.0)
}

/// Run one full training job described by `params`.
pub fn train(params: &TrainParams) -> Result<TrainRun> {
    let params = params.validated()?;
    let started = Instant::now();

    let mut task_rng = stream_rng(params.seed, STREAM_TASK);
    let mut task = make_task(params.task, params.config, params.adapter_scale, &mut task_rng)?;
    let (eval_x, eval_y) = task.sample_batch(params.eval_examples, &mut task_rng)?;

    let mut batch_rng = stream_rng(params.seed, STREAM_BATCH);

    // One flat parameter vector per layer: A row-major, then B.
    let mut masters: Vec<Vec<f64>> = task
        .layers
        .iter()
        .map(|l| {
            let mut p = l.a().data().to_vec();
            p.extend_from_slice(l.b().data());
            p
        })
        .collect();
    let mut opts: Vec<AdamW> = masters
        .iter()
        .map(|p| AdamW::new(p.len(), params.lr, params.weight_decay))
        .collect();

    let mut records = Vec::new();
    for step in 0..params.steps {
        let lr = if step < params.warmup_steps {
            params.lr * (step + 1) as f64 / (params.warmup_steps as f64)
        } else {
            params.lr
        };

        let (x, target) = task.sample_batch(params.batch_size, &mut batch_rng)?;
        let pred = forward_stack(&mut task, &x)?;
        let (loss, d_pred) = loss_for(&pred, &target)?;
        if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
            return Err(Error::Diverged { step, loss });
        }

        // Backward through the stack, collecting adapter gradients.
        let mut d_out = d_pred;
        let mut grads: Vec<(Mat, Mat)> = Vec::with_capacity(task.layers.len());
        for layer in task.layers.iter_mut().rev() {
            let bundle = layer.backward(&d_out)?;
            grads.push((bundle.d_a, bundle.d_b));
            d_out = bundle.d_x;
        }
        grads.reverse();

        for (l, (d_a, d_b)) in grads.into_iter().enumerate() {
            let mut flat = d_a.data().to_vec();
            flat.extend_from_slice(d_b.data());
            opts[l].set_lr(lr);
            opts[l].step(&mut masters[l], &flat)?;
            let layer = &mut task.layers[l];
            let (rank, fan_in, fan_out) =
                (layer.config().rank, layer.in_features(), layer.out_features());
            let a = Mat::from_vec(rank, fan_in, masters[l][..rank * fan_in].to_vec())?;
            let b = Mat::from_vec(fan_out, rank, masters[l][rank * fan_in..].to_vec())?;
            layer.set_adapters(a, b)?;
        }

        if step % params.record_every == 0 || step + 1 == params.steps {
            records.push(StepRecord { step, lr, loss });
        }
    }

    let final_eval = eval_loss(&task, &eval_x, &eval_y)?;
    if !final_eval.is_finite() {
        return Err(Error::Diverged {
            step: params.steps,
            loss: final_eval,
        });
    }

    Ok(TrainRun {
        schema_version: TRAIN_RUN_SCHEMA_VERSION,
        notation: params.config.notation(),
        params,
        steps: records,
        final_eval,
        wall_ms: started.elapsed().as_millis() as u64,
    })
}
