//! Experiment harness behind the command-line surface: scene generation,
//! training, evaluation, the ablation grid, and kernel micro-benchmarks.

use crate::checkpoint::load_into;
use crate::cloud::synth::{generate_synthetic_scene, SceneSpec};
use crate::cloud::{write_ascii_cloud, PointCloud};
use crate::config::{AblationPreset, ConfigError, RunConfig};
use crate::metrics::{render_report, render_report_csv};
use crate::network::{build_model, count_parameters, summary, Model};
use crate::training::{evaluate, train, RunLog, TrainOutputs};
use crate::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Cloud(#[from] crate::cloud::CloudError),
    #[error(transparent)]
    Network(#[from] crate::network::NetworkError),
    #[error(transparent)]
    Train(#[from] crate::training::TrainError),
    #[error(transparent)]
    Checkpoint(#[from] crate::checkpoint::CheckpointError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
    #[error(transparent)]
    Neighborhood(#[from] crate::neighborhood::NeighborhoodError),
    #[error("harness: {0}")]
    Usage(String),
}

/// Generate a synthetic labeled scene file.
pub fn run_gen(
    classes: usize,
    points: usize,
    seed: u64,
    noise_sigma: Scalar,
    out: &Path,
) -> Result<PointCloud, HarnessError> {
    let mut spec = SceneSpec::default_room(classes, points, seed);
    spec.noise_sigma = noise_sigma;
    let cloud = generate_synthetic_scene(&spec)?;
    write_ascii_cloud(&cloud, out)?;
    Ok(cloud)
}

pub struct TrainedRun {
    pub model: Model,
    pub log: RunLog,
}

/// Build the configured model and train it on the configured dataset.
pub fn run_train(
    config: &RunConfig,
    checkpoint: Option<&Path>,
    run_log: Option<&Path>,
) -> Result<TrainedRun, HarnessError> {
    let dataset = config.dataset()?;
    let mut model = build_model(config.network_config())?;
    let outputs = TrainOutputs {
        checkpoint: checkpoint.map(|p| p.to_path_buf()),
        run_log: run_log.map(|p| p.to_path_buf()),
    };
    let log = train(&mut model, &dataset, &config.train_config(), &outputs)?;
    Ok(TrainedRun { model, log })
}

pub struct EvalReport {
    pub text: String,
    pub csv: String,
    pub miou: Scalar,
    pub oa: Scalar,
}

/// Restore a checkpoint into the configured architecture and evaluate it
/// on the configured dataset.
pub fn run_eval(config: &RunConfig, checkpoint: &Path) -> Result<EvalReport, HarnessError> {
    let dataset = config.dataset()?;
    let mut model = build_model(config.network_config())?;
    load_into(&mut model.store, checkpoint)?;
    eval_model(config, &model, &dataset)
}

pub fn eval_model(
    config: &RunConfig,
    model: &Model,
    dataset: &PointCloud,
) -> Result<EvalReport, HarnessError> {
    let (cm, _) = evaluate(model, dataset, config.train.points_per_crop, 0)?;
    let names: Vec<String> = (0..model.config.classes)
        .map(|c| format!("class{c}"))
        .collect();
    Ok(EvalReport {
        text: render_report(&cm, &names)?,
        csv: render_report_csv(&cm, &names)?,
        miou: cm.miou()?,
        oa: cm.oa()?,
    })
}

/// Model summary (names, shapes, totals) for the configured architecture.
pub fn model_summary(config: &RunConfig) -> Result<String, HarnessError> {
    let model = build_model(config.network_config())?;
    Ok(format!(
        "{}parameters: {}\n",
        summary(&model),
        count_parameters(&model)
    ))
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub preset: &'static str,
    pub miou: Scalar,
    pub oa: Scalar,
    /// First epoch whose training OA reached 0.90, when any did.
    pub converged_epoch: Option<usize>,
    pub final_loss: Scalar,
}

/// Train and evaluate each preset with identical seed and data.
pub fn run_ablation(
    presets: &[AblationPreset],
    base: &RunConfig,
) -> Result<Vec<AblationRow>, HarnessError> {
    if presets.is_empty() {
        return Err(HarnessError::Usage(
            "ablation needs at least one preset id".into(),
        ));
    }
    let mut rows = Vec::with_capacity(presets.len());
    for &preset in presets {
        let mut config = base.clone();
        config.ablation.preset = preset;
        let dataset = config.dataset()?;
        let mut model = build_model(config.network_config())?;
        let log = train(
            &mut model,
            &dataset,
            &config.train_config(),
            &TrainOutputs::default(),
        )?;
        let report = eval_model(&config, &model, &dataset)?;
        let converged_epoch = log
            .records
            .iter()
            .find(|r| r.oa >= 0.90)
            .map(|r| r.epoch);
        rows.push(AblationRow {
            preset: preset.id(),
            miou: report.miou,
            oa: report.oa,
            converged_epoch,
            final_loss: log.records.last().map_or(Scalar::NAN, |r| r.loss),
        });
    }
    Ok(rows)
}

pub fn render_ablation_table(rows: &[AblationRow]) -> String {
    let mut out = format!(
        "{:<8} {:>8} {:>8} {:>10} {:>12}\n",
        "preset", "mIoU", "OA", "conv_epoch", "final_loss"
    );
    for r in rows {
        let conv = r
            .converged_epoch
            .map(|e| e.to_string())
            .unwrap_or_else(|| "-".into());
        out.push_str(&format!(
            "{:<8} {:>8.4} {:>8.4} {:>10} {:>12.6}\n",
            r.preset, r.miou, r.oa, conv, r.final_loss
        ));
    }
    out
}

pub fn render_ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("preset,miou,oa,converged_epoch,final_loss\n");
    for r in rows {
        let conv = r
            .converged_epoch
            .map(|e| e.to_string())
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{:.6},{:.6},{},{:.6}\n",
            r.preset, r.miou, r.oa, conv, r.final_loss
        ));
    }
    out
}

/// Micro-benchmark kernels over synthetic workloads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchKernel {
    Knn,
    Matmul,
    Gather,
}

impl BenchKernel {
    pub fn parse(text: &str) -> Result<BenchKernel, HarnessError> {
        match text.to_ascii_lowercase().as_str() {
            "knn" => Ok(BenchKernel::Knn),
            "matmul" => Ok(BenchKernel::Matmul),
            "gather" => Ok(BenchKernel::Gather),
            other => Err(HarnessError::Usage(format!(
                "unknown kernel {other:?}; valid: knn, matmul, gather"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BenchKernel::Knn => "knn",
            BenchKernel::Matmul => "matmul",
            BenchKernel::Gather => "gather",
        }
    }
}

/// Parse "1k,10k,100k"-style size lists.
pub fn parse_sizes(text: &str) -> Result<Vec<usize>, HarnessError> {
    let mut out = Vec::new();
    for part in text.split(',') {
        let part = part.trim().to_ascii_lowercase();
        if part.is_empty() {
            continue;
        }
        let (digits, mult) = match part.strip_suffix('m') {
            Some(d) => (d, 1_000_000),
            None => match part.strip_suffix('k') {
                Some(d) => (d, 1000),
                None => (part.as_str(), 1),
            },
        };
        let value: usize = digits
            .parse()
            .map_err(|_| HarnessError::Usage(format!("bad size {part:?}")))?;
        out.push(value * mult);
    }
    if out.is_empty() {
        return Err(HarnessError::Usage("no sizes given".into()));
    }
    out.sort_unstable();
    Ok(out)
}

fn bench_once(kernel: BenchKernel, size: usize, rng: &mut ChaCha8Rng) -> Scalar {
    match kernel {
        BenchKernel::Knn => {
            let positions: Vec<Scalar> = (0..3 * size).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let k = 16.min(size);
            let start = std::time::Instant::now();
            let table = crate::neighborhood::knn(&positions, &positions, k).unwrap();
            let elapsed = start.elapsed().as_secs_f64() * 1000.0;
            assert_eq!(table.rows(), size);
            elapsed
        }
        BenchKernel::Matmul => {
            let n = (size as f64).sqrt().ceil() as usize;
            let a: Vec<Scalar> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<Scalar> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut tape = crate::Graph::new();
            let ta = tape.constant(&[n, n], a).unwrap();
            let tb = tape.constant(&[n, n], b).unwrap();
            let start = std::time::Instant::now();
            let c = tape.matmul(ta, tb).unwrap();
            let elapsed = start.elapsed().as_secs_f64() * 1000.0;
            assert_eq!(tape.value(c).len(), n * n);
            elapsed
        }
        BenchKernel::Gather => {
            let c = 32;
            let data: Vec<Scalar> = (0..size * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let k = 16;
            let idx: Vec<u32> = (0..size * k)
                .map(|_| rng.gen_range(0..size as u32))
                .collect();
            let mut tape = crate::Graph::new();
            let x = tape.constant(&[size, c], data).unwrap();
            let start = std::time::Instant::now();
            let g = tape.gather_rows(x, &idx, k).unwrap();
            let elapsed = start.elapsed().as_secs_f64() * 1000.0;
            assert_eq!(tape.value(g).len(), size * k * c);
            elapsed
        }
    }
}

/// CSV of median kernel timings: one row per size (ascending), with one
/// warmup pass and `reps` timed repetitions each.
pub fn run_bench(kernel: BenchKernel, sizes: &[usize], reps: usize) -> Result<String, HarnessError> {
    if reps < 5 {
        return Err(HarnessError::Usage("bench needs at least 5 repetitions".into()));
    }
    let mut out = String::from("kernel,size,reps,median_ms\n");
    for &size in sizes {
        let mut rng = ChaCha8Rng::seed_from_u64(size as u64);
        bench_once(kernel, size, &mut rng);
        let mut times: Vec<Scalar> = (0..reps)
            .map(|_| bench_once(kernel, size, &mut rng))
            .collect();
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = times[times.len() / 2];
        out.push_str(&format!("{},{size},{reps},{median:.3}\n", kernel.name()));
    }
    Ok(out)
}
