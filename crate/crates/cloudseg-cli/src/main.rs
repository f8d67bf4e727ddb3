//! Command-line harness: gen | train | eval | ablate | bench.
//!
//! Exit codes: 0 success, 2 usage error, 3 missing/unreadable file,
//! 4 invalid config or data, 5 non-finite training abort, 1 anything else.

use clap::{Parser, Subcommand};
use cloudseg::checkpoint::CheckpointError;
use cloudseg::cloud::CloudError;
use cloudseg::config::{AblationPreset, ConfigError, RunConfig};
use cloudseg::harness::{
    model_summary, parse_sizes, render_ablation_csv, render_ablation_table, run_ablation,
    run_bench, run_eval, run_gen, run_train, BenchKernel, HarnessError,
};
use cloudseg::training::TrainError;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "cloudseg",
    about = "Point-cloud semantic segmentation experiments",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled scene file.
    Gen {
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 16384)]
        points: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 0.01)]
        noise: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model from a run configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "model.ckpt")]
        checkpoint: PathBuf,
        #[arg(long = "run-log", default_value = "run_log.csv")]
        run_log: PathBuf,
        /// Print the parameter registry before training.
        #[arg(long, default_value_t = false)]
        summary: bool,
    },
    /// Evaluate a checkpoint.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Evaluate on this cloud file instead of the config's dataset.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Also write the report CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run ablation presets with identical seed and data.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated preset ids (e.g. A1,B3,E2) or "all".
        #[arg(long)]
        presets: String,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Micro-benchmark a kernel over a list of sizes.
    Bench {
        /// knn | matmul | gather
        kernel: String,
        #[arg(long)]
        sizes: String,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn write_or_print(path: &Option<PathBuf>, content: &str) -> Result<(), HarnessError> {
    match path {
        Some(p) => std::fs::write(p, content).map_err(|source| {
            HarnessError::Cloud(CloudError::Io {
                path: p.display().to_string(),
                source,
            })
        }),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Gen {
            classes,
            points,
            seed,
            noise,
            out,
        } => {
            let cloud = run_gen(classes, points, seed, noise, &out)?;
            println!(
                "wrote {} points, {} classes to {}",
                cloud.len(),
                cloud.class_count,
                out.display()
            );
            Ok(())
        }
        Command::Train {
            config,
            checkpoint,
            run_log,
            summary,
        } => {
            let cfg = RunConfig::from_path(&config)?;
            if summary {
                print!("{}", model_summary(&cfg)?);
            }
            let run = run_train(&cfg, Some(&checkpoint), Some(&run_log))?;
            if let Some(last) = run.log.records.last() {
                println!(
                    "trained {} epochs: loss {:.6}, train OA {:.4}",
                    last.epoch, last.loss, last.oa
                );
            }
            println!("checkpoint: {}", checkpoint.display());
            println!("run log: {}", run_log.display());
            Ok(())
        }
        Command::Eval {
            config,
            checkpoint,
            data,
            csv,
        } => {
            let mut cfg = RunConfig::from_path(&config)?;
            if let Some(path) = data {
                cfg.data.source = cloudseg::config::DataSource::File;
                cfg.data.path = Some(path);
            }
            let report = run_eval(&cfg, &checkpoint)?;
            print!("{}", report.text);
            if csv.is_some() {
                write_or_print(&csv, &report.csv)?;
            }
            Ok(())
        }
        Command::Ablate {
            config,
            presets,
            csv,
        } => {
            let cfg = RunConfig::from_path(&config)?;
            let list: Vec<AblationPreset> = if presets.eq_ignore_ascii_case("all") {
                AblationPreset::ALL.to_vec()
            } else {
                presets
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| AblationPreset::parse(s.trim()).map_err(HarnessError::Config))
                    .collect::<Result<_, _>>()?
            };
            if list.is_empty() {
                return Err(HarnessError::Usage(
                    "no presets given; use e.g. --presets A1,A4 or --presets all".into(),
                ));
            }
            let rows = run_ablation(&list, &cfg)?;
            print!("{}", render_ablation_table(&rows));
            if csv.is_some() {
                write_or_print(&csv, &render_ablation_csv(&rows))?;
            }
            Ok(())
        }
        Command::Bench {
            kernel,
            sizes,
            reps,
            csv,
        } => {
            let kernel = BenchKernel::parse(&kernel)?;
            let sizes = parse_sizes(&sizes)?;
            let report = run_bench(kernel, &sizes, reps)?;
            write_or_print(&csv, &report)
        }
    }
}

fn exit_code_for(err: &HarnessError) -> u8 {
    match err {
        HarnessError::Usage(_) => 2,
        HarnessError::Config(ConfigError::Io { .. }) => 3,
        HarnessError::Config(_) => 4,
        HarnessError::Cloud(CloudError::Io { .. }) => 3,
        HarnessError::Cloud(_) => 4,
        HarnessError::Checkpoint(CheckpointError::Io { .. }) => 3,
        HarnessError::Checkpoint(_) => 4,
        HarnessError::Train(TrainError::NonFinite { .. }) => 5,
        HarnessError::Train(TrainError::Cloud(CloudError::Io { .. })) => 3,
        HarnessError::Network(_) | HarnessError::Neighborhood(_) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
