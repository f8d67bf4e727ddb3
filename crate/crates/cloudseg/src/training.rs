//! Deterministic training and evaluation driver.
//!
//! One seed fixes everything: crop centers, hierarchy sampling, dropout
//! masks, and therefore the entire run log and final checkpoint. An epoch
//! is ceil(total_points / (batch_size · points_per_crop)) batched crop
//! steps, so the scene is covered once per epoch in expectation.

use crate::cloud::{crop_indices, crop_indices_at, CloudError, PointCloud};
use crate::loss::{
    aggregation_loss, level_constraint, weighted_cross_entropy, ClassWeights, LossError,
};
use crate::metrics::{ConfusionMatrix, MetricsError};
use crate::mlp::ForwardCtx;
use crate::neighborhood::{build_hierarchy, NeighborhoodError};
use crate::network::{forward, predict, ForwardHooks, Model, NetworkError};
use crate::optim::{AdamState, OptimError};
use crate::params::collect_grads;
use crate::tensor::TensorError;
use crate::{Graph, Scalar};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training: {0}")]
    Validation(String),
    #[error("non-finite loss at epoch {epoch}, step {step}; first non-finite tensor: {tensor}")]
    NonFinite {
        epoch: usize,
        step: usize,
        tensor: String,
    },
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Neighborhood(#[from] NeighborhoodError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] crate::checkpoint::CheckpointError),
}

/// E1 trains on the weighted cross-entropy alone; E2 adds the mean of the
/// per-level constraint terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    WceOnly,
    Aggregation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub points_per_crop: usize,
    pub learning_rate: Scalar,
    /// Multiplicative decay applied per epoch.
    pub lr_decay: Scalar,
    pub beta1: Scalar,
    pub beta2: Scalar,
    pub epsilon: Scalar,
    pub loss_mode: LossMode,
    pub seed: u64,
    /// Write `epoch_NNN.ckpt` every this many epochs (0 disables).
    pub checkpoint_every: usize,
    /// Stop early once the train overall accuracy reaches this value.
    pub stop_at_oa: Option<Scalar>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 6,
            points_per_crop: 40960,
            learning_rate: 0.01,
            lr_decay: 0.95,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            loss_mode: LossMode::Aggregation,
            seed: 1,
            checkpoint_every: 0,
            stop_at_oa: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: String| Err(TrainError::Validation(m));
        if self.epochs == 0 || self.batch_size == 0 || self.points_per_crop == 0 {
            return fail("epochs, batch size, and crop size must be positive".into());
        }
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return fail("learning rate must be non-negative and finite".into());
        }
        if !(0.0..=1.0).contains(&self.lr_decay) || self.lr_decay == 0.0 {
            return fail("lr decay must lie in (0, 1]".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("moment decays must lie in [0, 1)".into());
        }
        Ok(())
    }
}

pub fn steps_per_epoch(total_points: usize, batch_size: usize, points_per_crop: usize) -> usize {
    total_points.div_ceil(batch_size * points_per_crop).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// The mode's training loss (wce alone, or wce plus the constraint
    /// mean).
    pub loss: Scalar,
    /// The cross-entropy component on its own, for convergence
    /// comparisons across loss modes. Not part of the CSV contract.
    pub wce: Scalar,
    pub oa: Scalar,
    pub lr: Scalar,
    pub seconds: Scalar,
}

/// Per-epoch convergence log, serializable as CSV.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub records: Vec<EpochRecord>,
}

impl RunLog {
    pub const CSV_HEADER: &'static str = "epoch,loss,oa,lr,seconds";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{:.12},{:.6},{:.8},{:.3}\n",
                r.epoch, r.loss, r.oa, r.lr, r.seconds
            ));
        }
        out
    }

    /// The CSV with the wall-time column blanked, for reproducibility
    /// comparisons.
    pub fn to_csv_without_time(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{:.12},{:.6},{:.8},\n",
                r.epoch, r.loss, r.oa, r.lr
            ));
        }
        out
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_csv())
    }
}

/// Where training artifacts land.
#[derive(Debug, Clone, Default)]
pub struct TrainOutputs {
    /// Final checkpoint path (and stem for cadence checkpoints).
    pub checkpoint: Option<PathBuf>,
    pub run_log: Option<PathBuf>,
}

fn cadence_path(final_path: &Path, epoch: usize) -> PathBuf {
    let stem = final_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());
    final_path.with_file_name(format!("{stem}_epoch{epoch:04}.ckpt"))
}

/// Train in place; the model's parameters and running statistics are
/// updated and the per-epoch log returned.
pub fn train(
    model: &mut Model,
    dataset: &PointCloud,
    config: &TrainConfig,
    outputs: &TrainOutputs,
) -> Result<RunLog, TrainError> {
    config.validate()?;
    dataset.validate()?;
    let labels = dataset
        .labels
        .as_ref()
        .ok_or_else(|| TrainError::Validation("training data must be labeled".into()))?;
    if dataset.class_count > model.config.classes {
        return Err(TrainError::Validation(format!(
            "dataset has {} classes but the model expects {}",
            dataset.class_count, model.config.classes
        )));
    }
    let weights = ClassWeights::from_labels(labels, model.config.classes)?;
    let steps = steps_per_epoch(dataset.len(), config.batch_size, config.points_per_crop);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(&model.store, config.beta1, config.beta2, config.epsilon);
    let mut log = RunLog::default();

    for epoch in 1..=config.epochs {
        let started = std::time::Instant::now();
        let lr = config.learning_rate * config.lr_decay.powi(epoch as i32 - 1);
        let mut cm = ConfusionMatrix::new(model.config.classes);
        let mut epoch_loss = 0.0;
        let mut epoch_wce = 0.0;

        for step in 1..=steps {
            let mut grad_sum: Option<Vec<Vec<Scalar>>> = None;
            let mut step_loss = 0.0;
            let mut step_wce = 0.0;
            for _ in 0..config.batch_size {
                let idx = crop_indices(dataset, config.points_per_crop, &mut rng)?;
                let crop = dataset.select(&idx);
                let hier_seed: u64 = rng.gen();
                let hierarchy = build_hierarchy(
                    &crop,
                    model.config.levels - 1,
                    model.config.k,
                    model.config.ratio,
                    hier_seed,
                )?;
                let crop_labels = crop.labels.as_ref().expect("selected from labeled data");

                let mut tape = Graph::new();
                let out;
                {
                    let mut ctx = ForwardCtx::train(&mut rng);
                    out = forward(
                        model,
                        &mut tape,
                        &crop,
                        &hierarchy,
                        &mut ctx,
                        ForwardHooks::default(),
                    )?;
                }
                let wce = weighted_cross_entropy(&mut tape, out.logits, crop_labels, &weights)?;
                step_wce += tape.value(wce)[0];
                let loss = match config.loss_mode {
                    LossMode::WceOnly => wce,
                    LossMode::Aggregation => {
                        let mut constraints = Vec::with_capacity(out.aux.len());
                        for aux in &out.aux {
                            match level_constraint(&mut tape, aux)? {
                                Some(c) => constraints.push(c),
                                None => {
                                    return Err(TrainError::Validation(
                                        "aggregation loss requires adaptive weights".into(),
                                    ))
                                }
                            }
                        }
                        aggregation_loss(&mut tape, wce, &constraints)?
                    }
                };
                let loss_value = tape.value(loss)[0];
                if !loss_value.is_finite() {
                    let tensor = tape
                        .first_non_finite()
                        .map(|(label, node)| format!("{label} (node {node})"))
                        .unwrap_or_else(|| "loss".into());
                    return Err(TrainError::NonFinite {
                        epoch,
                        step,
                        tensor,
                    });
                }
                step_loss += loss_value;
                tape.backward(loss)?;
                let grads = collect_grads(&model.store, &tape, &out.bound);
                match &mut grad_sum {
                    None => grad_sum = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(grads.iter()) {
                            for (x, y) in a.iter_mut().zip(g.iter()) {
                                *x += y;
                            }
                        }
                    }
                }
                let preds = predict(tape.value(out.logits), model.config.classes);
                cm.accumulate(crop_labels, &preds)?;
            }
            let mut grads = grad_sum.expect("batch size is positive");
            let inv = 1.0 / config.batch_size as Scalar;
            for g in &mut grads {
                for v in g.iter_mut() {
                    *v *= inv;
                }
            }
            adam.step(&mut model.store, &grads, lr)?;
            epoch_loss += step_loss * inv;
            epoch_wce += step_wce * inv;
        }

        let oa = cm.oa()?;
        log.records.push(EpochRecord {
            epoch,
            loss: epoch_loss / steps as Scalar,
            wce: epoch_wce / steps as Scalar,
            oa,
            lr,
            seconds: started.elapsed().as_secs_f64(),
        });
        if let (Some(path), true) = (
            &outputs.checkpoint,
            config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0,
        ) {
            crate::checkpoint::save_checkpoint(&model.store, &cadence_path(path, epoch))?;
        }
        if config.stop_at_oa.is_some_and(|target| oa >= target) {
            break;
        }
    }

    if let Some(path) = &outputs.checkpoint {
        crate::checkpoint::save_checkpoint(&model.store, path)?;
    }
    if let Some(path) = &outputs.run_log {
        log.write(path).map_err(|source| {
            TrainError::Cloud(CloudError::Io {
                path: path.display().to_string(),
                source,
            })
        })?;
    }
    Ok(log)
}

/// Evaluate with overlapping crops until every point has at least one
/// prediction; multiply-predicted points are settled by majority vote
/// (ties to the smaller class). Returns the confusion matrix and the
/// voted per-point labels.
pub fn evaluate(
    model: &Model,
    dataset: &PointCloud,
    points_per_crop: usize,
    seed: u64,
) -> Result<(ConfusionMatrix, Vec<u32>), TrainError> {
    dataset.validate()?;
    let labels = dataset
        .labels
        .as_ref()
        .ok_or_else(|| TrainError::Validation("evaluation data must be labeled".into()))?;
    let n = dataset.len();
    let classes = model.config.classes;
    let mut votes = vec![0u32; n * classes];
    let mut covered = vec![false; n];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cursor = 0usize;
    loop {
        while cursor < n && covered[cursor] {
            cursor += 1;
        }
        if cursor >= n {
            break;
        }
        let idx = crop_indices_at(dataset, points_per_crop, cursor, &mut rng);
        let crop = dataset.select(&idx);
        let hier_seed: u64 = rng.gen();
        let hierarchy = build_hierarchy(
            &crop,
            model.config.levels - 1,
            model.config.k,
            model.config.ratio,
            hier_seed,
        )?;
        let mut tape = Graph::new();
        let mut ctx = ForwardCtx::eval();
        let out = forward(
            model,
            &mut tape,
            &crop,
            &hierarchy,
            &mut ctx,
            ForwardHooks::default(),
        )?;
        let preds = predict(tape.value(out.logits), classes);
        for (row, &orig) in idx.iter().enumerate() {
            votes[orig * classes + preds[row] as usize] += 1;
            covered[orig] = true;
        }
    }
    let voted: Vec<u32> = (0..n)
        .map(|i| {
            let row = &votes[i * classes..(i + 1) * classes];
            let mut best = 0usize;
            for (c, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] as u32 {
                    best = c;
                }
            }
            best as u32
        })
        .collect();
    let mut cm = ConfusionMatrix::new(classes);
    cm.accumulate(labels, &voted)?;
    Ok((cm, voted))
}
