//! Deterministic desk-scale tasks for exercising the quantized trainer.
//!
//! Both tasks are fully determined by a seed. The regression task plants a
//! low-rank residual on top of the student's own frozen base: the teacher
//! is `dequantize(freeze(W)) + s B* A*`, where `freeze` is the same 4-bit
//! codec the student uses. The student starts at the frozen base exactly,
//! so the planted adapters are the unique rank-`r*` residual and a
//! full-precision student can drive the loss to the noise floor (zero by
//! default).
//!
//! The classification task scatters one Gaussian blob per class and labels
//! each sample by its blob.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{LoraLinear, QuantConfig};
use crate::error::{Error, Result};
use crate::mat::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    LowRankRegression,
    BlobClassification,
}

/// Task geometry. `depth` stacks linear layers: `depth - 1` square layers
/// at the input width, then one mapping to the output width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub in_features: usize,
    pub out_features: usize,
    #[serde(default = "default_depth")]
    pub depth: usize,
    /// Rank of the planted residual (regression only).
    #[serde(default = "default_teacher_rank")]
    pub teacher_rank: usize,
    /// Within-blob standard deviation (classification only).
    #[serde(default = "default_blob_std")]
    pub blob_std: f64,
    /// Gaussian noise added to regression targets.
    #[serde(default)]
    pub label_noise: f64,
}

fn default_depth() -> usize {
    1
}

fn default_teacher_rank() -> usize {
    2
}

fn default_blob_std() -> f64 {
    0.5
}

impl TaskSpec {
    pub fn regression(in_features: usize, out_features: usize) -> Self {
        TaskSpec {
            kind: TaskKind::LowRankRegression,
            in_features,
            out_features,
            depth: 1,
            teacher_rank: default_teacher_rank(),
            blob_std: default_blob_std(),
            label_noise: 0.0,
        }
    }

    pub fn classification(in_features: usize, classes: usize) -> Self {
        TaskSpec {
            kind: TaskKind::BlobClassification,
            in_features,
            out_features: classes,
            depth: 1,
            teacher_rank: default_teacher_rank(),
            blob_std: default_blob_std(),
            label_noise: 0.0,
        }
    }

    pub fn validated(self) -> Result<Self> {
        if self.in_features == 0 || self.out_features == 0 {
            return Err(Error::Config("task dimensions must be >= 1".into()));
        }
        if self.depth == 0 {
            return Err(Error::Config("task depth must be >= 1".into()));
        }
        if self.teacher_rank == 0 {
            return Err(Error::Config("teacher rank must be >= 1".into()));
        }
        if self.kind == TaskKind::BlobClassification && self.out_features < 2 {
            return Err(Error::Config("classification needs >= 2 classes".into()));
        }
        if !self.blob_std.is_finite() || self.blob_std <= 0.0 {
            return Err(Error::Config("blob std must be positive".into()));
        }
        if !self.label_noise.is_finite() || self.label_noise < 0.0 {
            return Err(Error::Config("label noise must be >= 0".into()));
        }
        Ok(self)
    }

    /// Layer widths, input first: `depth + 1` entries.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.in_features; self.depth];
        w.push(self.out_features);
        w
    }
}

/// Regression targets are matrices; classification targets are class ids.
#[derive(Debug, Clone)]
pub enum Target {
    Values(Mat),
    Classes(Vec<usize>),
}

/// A materialized task: student layers at their starting point plus
/// whatever ground truth the batches are generated from.
#[derive(Debug, Clone)]
pub struct ToyTask {
    pub spec: TaskSpec,
    /// Student layers: frozen base plus freshly initialized adapters.
    pub layers: Vec<LoraLinear>,
    /// Dense per-layer teacher maps (regression): `out x in` each.
    teachers: Vec<Mat>,
    /// Blob centers (classification): one row per class.
    centers: Option<Mat>,
}

/// Standard deviation for the planted adapters and the student's `A` init.
const TEACHER_ADAPTER_STD: f64 = 0.3;
const STUDENT_A_STD: f64 = 0.02;

/// Build the task and the student stack it trains.
///
/// All draws come from `rng`; two tasks built from identically seeded
/// generators are identical.
pub fn make_task<R: Rng>(
    spec: TaskSpec,
    config: QuantConfig,
    adapter_scale: f64,
    rng: &mut R,
) -> Result<ToyTask> {
    let spec = spec.validated()?;
    let widths = spec.widths();
    let mut layers = Vec::with_capacity(spec.depth);
    let mut teachers = Vec::with_capacity(spec.depth);
    for l in 0..spec.depth {
        let (fan_in, fan_out) = (widths[l], widths[l + 1]);
        let w = Mat::gaussian(fan_out, fan_in, 1.0 / (fan_in as f64).sqrt(), rng);
        let mut layer = LoraLinear::new(format!("layer{l}"), &w, adapter_scale, config)?;
        let a0 = Mat::gaussian(config.rank, fan_in, STUDENT_A_STD, rng);
        let b0 = Mat::zeros(fan_out, config.rank);
        layer.set_adapters(a0, b0)?;
        if spec.kind == TaskKind::LowRankRegression {
            let a_star = Mat::gaussian(spec.teacher_rank, fan_in, TEACHER_ADAPTER_STD, rng);
            let b_star = Mat::gaussian(fan_out, spec.teacher_rank, TEACHER_ADAPTER_STD, rng);
            let teacher = layer
                .base_dequantized()
                .add(&b_star.matmul(&a_star)?.scale(adapter_scale))?;
            teachers.push(teacher);
        }
        layers.push(layer);
    }
    let centers = if spec.kind == TaskKind::BlobClassification {
        Some(Mat::gaussian(spec.out_features, spec.in_features, 1.0, rng))
    } else {
        None
    };
    Ok(ToyTask {
        spec,
        layers,
        teachers,
        centers,
    })
}

impl ToyTask {
    /// Draw one batch of inputs and targets.
    pub fn sample_batch<R: Rng>(&self, batch: usize, rng: &mut R) -> Result<(Mat, Target)> {
        match self.spec.kind {
            TaskKind::LowRankRegression => {
                let x = Mat::gaussian(batch, self.spec.in_features, 1.0, rng);
                let mut y = x.clone();
                for t in &self.teachers {
                    y = y.matmul(&t.transpose())?;
                }
                if self.spec.label_noise > 0.0 {
                    let noise =
                        Mat::gaussian(batch, self.spec.out_features, self.spec.label_noise, rng);
                    y = y.add(&noise)?;
                }
                Ok((x, Target::Values(y)))
            }
            TaskKind::BlobClassification => {
                let centers = self.centers.as_ref().expect("classification has centers");
                let classes: Vec<usize> =
                    (0..batch).map(|_| rng.random_range(0..self.spec.out_features)).collect();
                let noise = Mat::gaussian(batch, self.spec.in_features, self.spec.blob_std, rng);
                let x = Mat::from_fn(batch, self.spec.in_features, |r, c| {
                    centers.at(classes[r], c) + noise.at(r, c)
                });
                Ok((x, Target::Classes(classes)))
            }
        }
    }
}

/// Mean squared error over all entries, with its gradient.
pub fn mse_loss(pred: &Mat, target: &Mat) -> Result<(f64, Mat)> {
    let diff = pred.sub(target)?;
    let n = diff.data().len() as f64;
    let loss = diff.data().iter().map(|d| d * d).sum::<f64>() / n;
    let grad = diff.scale(2.0 / n);
    Ok((loss, grad))
}

/// Mean softmax cross-entropy over the batch, with its logit gradient.
/// The softmax runs in full precision; only matmuls are quantized.
pub fn cross_entropy_loss(logits: &Mat, classes: &[usize]) -> Result<(f64, Mat)> {
    if logits.rows() != classes.len() {
        return Err(Error::ShapeMismatch {
            op: "cross_entropy_loss",
            left_rows: logits.rows(),
            left_cols: logits.cols(),
            right_rows: classes.len(),
            right_cols: 1,
        });
    }
    let batch = logits.rows() as f64;
    let mut loss = 0.0;
    let mut grad = Mat::zeros(logits.rows(), logits.cols());
    for r in 0..logits.rows() {
        let row = logits.row(r);
        let class = classes[r];
        if class >= logits.cols() {
            return Err(Error::Config(format!(
                "class {class} out of range for {} logits",
                logits.cols()
            )));
        }
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let exp_sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        loss += exp_sum.ln() + max - row[class];
        for c in 0..logits.cols() {
            let p = (row[c] - max).exp() / exp_sum;
            grad.set(r, c, (p - f64::from(u8::from(c == class))) / batch);
        }
    }
    Ok((loss / batch, grad))
}

/// Loss against either target kind.
pub fn loss_for(pred: &Mat, target: &Target) -> Result<(f64, Mat)> {
    match target {
        Target::Values(y) => mse_loss(pred, y),
        Target::Classes(c) => cross_entropy_loss(pred, c),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn config() -> QuantConfig {
        QuantConfig::identity(2)
    }

    #[test]
    fn regression_targets_come_from_the_planted_teacher() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let task = make_task(TaskSpec::regression(8, 6), config(), 2.0, &mut rng).unwrap();
        // The teacher sits a low-rank residual away from the student's own
        // frozen base, so the residual is realizable by the adapters.
        let residual = task.teachers[0]
            .sub(task.layers[0].base_dequantized())
            .unwrap();
        assert!(residual.max_abs() > 0.0);
        let (x, target) = task.sample_batch(5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        match target {
            Target::Values(y) => {
                let want = x.matmul(&task.teachers[0].transpose()).unwrap();
                assert_eq!(y.data(), want.data());
            }
            _ => panic!("regression produces values"),
        }
    }

    #[test]
    fn identical_seeds_build_identical_tasks_and_batches() {
        let spec = TaskSpec::regression(6, 4);
        let t1 = make_task(spec, config(), 2.0, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let t2 = make_task(spec, config(), 2.0, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(t1.teachers[0].data(), t2.teachers[0].data());
        let (x1, y1) = t1.sample_batch(4, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let (x2, y2) = t2.sample_batch(4, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(x1.data(), x2.data());
        match (y1, y2) {
            (Target::Values(a), Target::Values(b)) => assert_eq!(a.data(), b.data()),
            _ => panic!(),
        }
    }

    #[test]
    fn depth_stacks_square_layers() {
        let mut spec = TaskSpec::regression(6, 4);
        spec.depth = 3;
        let task = make_task(spec, config(), 2.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(task.layers.len(), 3);
        assert_eq!(
            (task.layers[0].in_features(), task.layers[0].out_features()),
            (6, 6)
        );
        assert_eq!(
            (task.layers[2].in_features(), task.layers[2].out_features()),
            (6, 4)
        );
    }

    #[test]
    fn classification_batches_label_by_blob() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut spec = TaskSpec::classification(8, 4);
        spec.blob_std = 1e-4;
        let task = make_task(spec, config(), 2.0, &mut rng).unwrap();
        let (x, target) = task.sample_batch(32, &mut rng).unwrap();
        let classes = match target {
            Target::Classes(c) => c,
            _ => panic!("classification produces classes"),
        };
        let centers = task.centers.as_ref().unwrap();
        for (r, &class) in classes.iter().enumerate() {
            // With tiny blob noise every sample sits on its center.
            let mut best = (f64::INFINITY, usize::MAX);
            for k in 0..4 {
                let d: f64 = (0..8).map(|c| (x.at(r, c) - centers.at(k, c)).powi(2)).sum();
                if d < best.0 {
                    best = (d, k);
                }
            }
            assert_eq!(best.1, class);
        }
    }

    #[test]
    fn mse_loss_and_gradient_are_consistent() {
        let p = Mat::from_vec(1, 2, vec![1.0, 3.0]).unwrap();
        let t = Mat::from_vec(1, 2, vec![0.0, 1.0]).unwrap();
        let (loss, grad) = mse_loss(&p, &t).unwrap();
        assert!((loss - (1.0 + 4.0) / 2.0).abs() < 1e-15);
        assert_eq!(grad.data(), &[1.0, 2.0]);
    }

    #[test]
    fn cross_entropy_matches_hand_computation() {
        // Two logits, true class 0: loss = ln(1 + e^(b-a)).
        let logits = Mat::from_vec(1, 2, vec![2.0, 0.0]).unwrap();
        let (loss, grad) = cross_entropy_loss(&logits, &[0]).unwrap();
        let want = (1.0 + (-2.0f64).exp()).ln();
        assert!((loss - want).abs() < 1e-12);
        // Gradient rows sum to zero and point from true class to others.
        assert!((grad.at(0, 0) + grad.at(0, 1)).abs() < 1e-12);
        assert!(grad.at(0, 0) < 0.0);
    }

    #[test]
    fn cross_entropy_is_stable_for_large_logits() {
        let logits = Mat::from_vec(1, 3, vec![1e4, 0.0, -1e4]).unwrap();
        let (loss, _) = cross_entropy_loss(&logits, &[0]).unwrap();
        assert!(loss.is_finite());
        assert!(loss.abs() < 1e-6);
    }

    #[test]
    fn spec_validation_rejects_degenerate_shapes() {
        assert!(TaskSpec::regression(0, 4).validated().is_err());
        let mut s = TaskSpec::regression(4, 4);
        s.depth = 0;
        assert!(s.validated().is_err());
        assert!(TaskSpec::classification(4, 1).validated().is_err());
        let mut s = TaskSpec::regression(4, 4);
        s.label_noise = -1.0;
        assert!(s.validated().is_err());
    }
}
