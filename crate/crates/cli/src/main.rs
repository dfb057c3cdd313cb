//! `stdc`: cost reports, receptive fields, detail ground truth, inference,
//! gradient checks, self-test and benchmarks for STDC networks.
//!
//! Exit codes: 0 success, 1 invalid input or failed check, 2 I/O failure.

mod commands;
mod selftest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "stdc", version, about = "STDC networks for real-time semantic segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Network selection shared by several commands.
#[derive(Debug, Args)]
struct NetArgs {
    /// Backbone preset.
    #[arg(long, value_parser = ["stdc1", "stdc2"], conflicts_with = "config")]
    net: Option<String>,
    /// Configuration file (TOML); see the README for the format.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Per-layer parameters, MACs and receptive fields, with totals.
    Describe {
        #[command(flatten)]
        net: NetArgs,
        /// Input resolution HxW; both must be multiples of 32.
        #[arg(long, default_value = "224x224", value_parser = parse_resolution)]
        resolution: (usize, usize),
        /// Describe the segmentation network instead of the classifier.
        #[arg(long)]
        seg: bool,
        /// Emit comma-separated values.
        #[arg(long)]
        csv: bool,
    },
    /// Receptive field of every block of every module in one stage.
    Rf {
        #[command(flatten)]
        net: NetArgs,
        /// Stage index: 3, 4 or 5.
        #[arg(long)]
        stage: usize,
        #[arg(long)]
        csv: bool,
    },
    /// Binary detail ground truth from a label PNG.
    GenDetail {
        /// Single-channel label PNG (pixel value = class id, 255 = ignore).
        #[arg(long)]
        labels: PathBuf,
        /// Output PNG (0 / 255).
        #[arg(long)]
        out: PathBuf,
        /// Final threshold on the fused map.
        #[arg(long)]
        threshold: Option<f32>,
        /// Fusion weights, one per stride, comma separated.
        #[arg(long, value_delimiter = ',')]
        fusion: Option<Vec<f32>>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Segment an RGB PNG and write the label map as an indexed PNG.
    Infer(commands::InferArgs),
    /// Compare analytic loss gradients with central differences.
    Gradcheck {
        /// Maximum allowed relative error.
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        /// Largest map side tested.
        #[arg(long, default_value_t = 16)]
        max_side: usize,
        /// Finite-difference step.
        #[arg(long, default_value_t = 1e-4)]
        step: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the embedded invariant checks.
    Selftest,
    /// Forward latency with one thread and with the full thread pool.
    Bench {
        #[command(flatten)]
        net: NetArgs,
        #[arg(long, default_value = "512x1024", value_parser = parse_resolution)]
        resolution: (usize, usize),
        /// Benchmark the segmentation network instead of the classifier.
        #[arg(long)]
        seg: bool,
        /// Timed runs per setting (after one warm-up run).
        #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u32).range(1..))]
        iterations: u32,
    },
}

fn parse_resolution(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got `{s}`"))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| format!("bad dimension `{v}` in `{s}`"))
    };
    Ok((parse(h)?, parse(w)?))
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Describe {
            net,
            resolution,
            seg,
            csv,
        } => commands::describe(&net, resolution, seg, csv).map(|_| true),
        Command::Rf { net, stage, csv } => commands::rf(&net, stage, csv).map(|_| true),
        Command::GenDetail {
            labels,
            out,
            threshold,
            fusion,
            config,
        } => commands::gen_detail(&labels, &out, threshold, fusion, config.as_deref()).map(|_| true),
        Command::Infer(args) => commands::infer(&args).map(|_| true),
        Command::Gradcheck {
            tol,
            max_side,
            step,
            seed,
        } => commands::gradcheck(tol, max_side, step, seed),
        Command::Selftest => Ok(selftest::run()),
        Command::Bench {
            net,
            resolution,
            seg,
            iterations,
        } => commands::bench(&net, resolution, seg, iterations).map(|_| true),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let io = err.chain().any(|e| {
        e.downcast_ref::<stdc_core::Error>().is_some_and(stdc_core::Error::is_io)
            || e.is::<std::io::Error>()
    });
    if io {
        2
    } else {
        1
    }
}

/// The error chain joined with ": ", skipping causes already quoted by
/// their parent.
fn describe_error(err: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !msg.contains(&text) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&text);
        }
    }
    msg
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {}", describe_error(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
