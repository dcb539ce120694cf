//! `osq`: analyze activation outliers, derive and fuse suppression
//! transforms, compare calibration methods, and evaluate quantized blocks.
//!
//! Every run resolves its configuration from an optional `--config`
//! key=value file overlaid with flags (flags win), echoes the result into
//! the report, and writes deterministic artifacts under `--out`.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data/parse error,
//! 4 internal invariant violation.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use osq_core::error::{Error, Result};
use osq_core::io::{load_block, read_container_entry, save_block, write_container, Dtype};
use osq_core::pipeline::{self, RunConfig};
use osq_core::report::{trace_csv, Report};
use osq_core::tensor::Matrix;

#[derive(Parser)]
#[command(
    name = "osq",
    version,
    about = "Outlier-suppressing post-training quantization toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand; each maps onto one config key.
#[derive(Args, Default)]
struct CommonFlags {
    /// key=value config file, overridden by flags
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed recorded in the report and used by generate
    #[arg(long)]
    seed: Option<u64>,
    /// Bit-width for activations and weights (4, 6, or 8)
    #[arg(long)]
    bits: Option<u8>,
    /// Activation granularity: tensor | token
    #[arg(long, value_name = "GRAN")]
    act_granularity: Option<String>,
    /// Weight granularity: tensor | channel | group:N
    #[arg(long, value_name = "GRAN")]
    wgt_granularity: Option<String>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a planted-outlier calibration tensor and matching block
    Generate {
        #[command(flatten)]
        common: CommonFlags,
        /// Calibration rows
        #[arg(long)]
        rows: Option<usize>,
        /// Channels
        #[arg(long)]
        cols: Option<usize>,
    },
    /// Per-channel outlier analysis of a tensor
    Analyze {
        #[command(flatten)]
        common: CommonFlags,
        /// Input .ost tensor
        #[arg(long)]
        input: Option<PathBuf>,
        /// Channels listed in the ranking table
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Derive a suppression transform and fuse it into a block
    Suppress {
        #[command(flatten)]
        common: CommonFlags,
        /// Input .ost calibration activation
        #[arg(long)]
        input: Option<PathBuf>,
        /// Block directory
        #[arg(long)]
        block: Option<PathBuf>,
        /// Transform method
        #[arg(long)]
        method: Option<String>,
        /// Threshold grid resolution
        #[arg(long)]
        grid_points: Option<usize>,
    },
    /// Compare calibration methods under identical specs and data
    Compare {
        #[command(flatten)]
        common: CommonFlags,
        /// Input .ost calibration activation
        #[arg(long)]
        input: Option<PathBuf>,
        /// Block directory
        #[arg(long)]
        block: Option<PathBuf>,
        /// Comma-separated method list
        #[arg(long)]
        methods: Option<String>,
        /// Threshold grid resolution
        #[arg(long)]
        grid_points: Option<usize>,
    },
    /// Quantized-vs-FP output change of a whole block
    Eval {
        #[command(flatten)]
        common: CommonFlags,
        /// Input .ost tensor driven through the block
        #[arg(long)]
        input: Option<PathBuf>,
        /// Block directory
        #[arg(long)]
        block: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

/// Folds the config file and the shared flags into one [`RunConfig`].
fn resolve_config(common: &CommonFlags, extra: &[(&str, Option<String>)]) -> Result<RunConfig> {
    let file_cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            RunConfig::parse_text(&text)?
        }
        None => RunConfig::new(),
    };
    let mut flags = RunConfig::new();
    if let Some(seed) = common.seed {
        flags.set("seed", &seed.to_string())?;
    }
    if let Some(bits) = common.bits {
        flags.set("bits", &bits.to_string())?;
    }
    if let Some(g) = &common.act_granularity {
        flags.set("act_granularity", g)?;
    }
    if let Some(g) = &common.wgt_granularity {
        flags.set("wgt_granularity", g)?;
    }
    if let Some(out) = &common.out {
        flags.set("out", &out.display().to_string())?;
    }
    for (key, value) in extra {
        if let Some(value) = value {
            flags.set(key, value)?;
        }
    }
    Ok(file_cfg.merged_with(&flags))
}

fn out_dir(config: &RunConfig) -> Result<PathBuf> {
    let dir = PathBuf::from(
        config
            .get("out")
            .ok_or_else(|| Error::Config("missing output directory (--out or out=)".into()))?,
    );
    fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    Ok(dir)
}

fn load_input(config: &RunConfig) -> Result<(String, Matrix)> {
    let path = config
        .get("input")
        .ok_or_else(|| Error::Config("missing input tensor (--input or input=)".into()))?;
    read_container_entry(Path::new(path))
}

fn load_block_dir(config: &RunConfig) -> Result<osq_core::blocks::BlockGraph> {
    let path = config
        .get("block")
        .ok_or_else(|| Error::Config("missing block directory (--block or block=)".into()))?;
    load_block(Path::new(path))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_report(dir: &Path, report: &Report) -> Result<()> {
    let path = dir.join("report.txt");
    write_text(&path, &report.to_text())?;
    println!("{}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { common, rows, cols } => {
            let config = resolve_config(
                &common,
                &[
                    ("rows", rows.map(|v| v.to_string())),
                    ("cols", cols.map(|v| v.to_string())),
                ],
            )?;
            let dir = out_dir(&config)?;
            let case = pipeline::generate_case(&config)?;
            write_container(
                &dir.join("input.ost"),
                "calibration",
                &case.activation,
                Dtype::F64,
            )?;
            save_block(&dir.join("block"), &case.block)?;
            let mut report = Report::new();
            config.echo_into(&mut report);
            report.set_str("command", "generate");
            report.set_usize("input.rows", case.activation.rows());
            report.set_usize("input.cols", case.activation.cols());
            write_report(&dir, &report)
        }
        Command::Analyze {
            common,
            input,
            top_k,
        } => {
            let config = resolve_config(
                &common,
                &[
                    ("input", input.map(|p| p.display().to_string())),
                    ("top_k", top_k.map(|v| v.to_string())),
                ],
            )?;
            let dir = out_dir(&config)?;
            let (name, tensor) = load_input(&config)?;
            let report = pipeline::analyze(&tensor, &name, &config)?;
            write_report(&dir, &report)
        }
        Command::Suppress {
            common,
            input,
            block,
            method,
            grid_points,
        } => {
            let config = resolve_config(
                &common,
                &[
                    ("input", input.map(|p| p.display().to_string())),
                    ("block", block.map(|p| p.display().to_string())),
                    ("method", method),
                    ("grid_points", grid_points.map(|v| v.to_string())),
                ],
            )?;
            let dir = out_dir(&config)?;
            let (_, activation) = load_input(&config)?;
            let block = load_block_dir(&config)?;
            let outcome = pipeline::suppress(&activation, &block, &config)?;
            write_report(&dir, &outcome.report)?;
            write_text(&dir.join("trace.csv"), &trace_csv(&outcome.trace))?;
            let mut transform = Report::new();
            transform.set_transform("transform", &outcome.transform);
            write_text(&dir.join("transform.txt"), &transform.to_text())?;
            save_block(&dir.join("fused_block"), &outcome.fused)
        }
        Command::Compare {
            common,
            input,
            block,
            methods,
            grid_points,
        } => {
            let config = resolve_config(
                &common,
                &[
                    ("input", input.map(|p| p.display().to_string())),
                    ("block", block.map(|p| p.display().to_string())),
                    ("methods", methods),
                    ("grid_points", grid_points.map(|v| v.to_string())),
                ],
            )?;
            let dir = out_dir(&config)?;
            let (_, activation) = load_input(&config)?;
            let block = load_block_dir(&config)?;
            let (report, records) = pipeline::compare(&activation, &block, &config)?;
            write_report(&dir, &report)?;
            for record in &records {
                if !record.trace.is_empty() {
                    write_text(
                        &dir.join(format!("trace_{}.csv", record.method.name())),
                        &trace_csv(&record.trace),
                    )?;
                }
            }
            Ok(())
        }
        Command::Eval {
            common,
            input,
            block,
        } => {
            let config = resolve_config(
                &common,
                &[
                    ("input", input.map(|p| p.display().to_string())),
                    ("block", block.map(|p| p.display().to_string())),
                ],
            )?;
            let dir = out_dir(&config)?;
            let (_, tensor) = load_input(&config)?;
            let block = load_block_dir(&config)?;
            let report = pipeline::eval(&block, &tensor, &config)?;
            write_report(&dir, &report)
        }
    }
}
