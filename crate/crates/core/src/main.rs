//! `quantlab` command-line tool.
//!
//! Exit codes: 0 success, 1 I/O or other failure, 2 configuration error,
//! 3 when any run diverged (logs are still written).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use quantlab::experiments::{
    base_config, emit_plot, find_preset, run_group, run_preset, ConfigOverrides, Metric,
};
use quantlab::quantizer::EstimatorKind;
use quantlab::trainer::RunSummary;
use quantlab::Error;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(
    name = "quantlab",
    version,
    about = "Quantizer gradient-estimator test bench"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a preset grid or a single configuration.
    Run(RunArgs),
    /// Plot epoch metrics from one or more CSV logs.
    Plot(PlotArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Named preset: fig3, fig4, fig5 or fig6.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Flat key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    estimator: Option<EstimatorKind>,
    /// Commitment-loss weight.
    #[arg(long)]
    cl: Option<f64>,
    /// Embedding-to-noise ratio for noise addition, in dB.
    #[arg(long = "na-db")]
    na_db: Option<f64>,
    /// Bits per value of the quantizer (2 or 4).
    #[arg(long)]
    bits: Option<u32>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    updates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Maximum number of runs trained concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Full schedule (100 epochs x 2000 updates) instead of the reduced one.
    #[arg(long = "paper-scale")]
    full_scale: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    metric: Metric,
    #[arg(long)]
    log_y: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(required = true)]
    csv: Vec<PathBuf>,
}

impl RunArgs {
    fn flag_overrides(&self) -> ConfigOverrides {
        ConfigOverrides {
            estimator: self.estimator,
            cl_weight: self.cl,
            na_ratio_db: self.na_db,
            quantizer_bits: self.bits,
            epochs: self.epochs,
            updates_per_epoch: self.updates,
            seed: self.seed,
            ..Default::default()
        }
    }
}

fn run(args: RunArgs) -> quantlab::Result<Vec<RunSummary>> {
    let file = match &args.config {
        Some(path) => ConfigOverrides::from_file(path)?,
        None => ConfigOverrides::default(),
    };
    let overrides = file.merge(args.flag_overrides());
    let base = overrides.apply(base_config(args.full_scale))?;
    match &args.preset {
        Some(name) => {
            let preset = find_preset(name)?;
            if args.flag_overrides().sets_run_fields() {
                return Err(Error::Config(
                    "--estimator, --cl and --bits cannot be combined with a preset".into(),
                ));
            }
            run_preset(&preset, &base, &args.out, args.jobs)
        }
        None => run_group(vec![base], &args.out.join("custom"), args.jobs),
    }
}

fn report(summaries: &[RunSummary]) {
    println!("run_id\tfinal_mse\tfinal_ma_e\tdiverged\tseconds");
    for s in summaries {
        println!(
            "{}\t{:.6}\t{:.6}\t{}\t{:.1}",
            s.run_id, s.final_mse, s.final_ma_e, s.diverged, s.wall_time_seconds
        );
    }
}

fn exit_for(err: &Error) -> ExitCode {
    eprintln!("error: {err}");
    match err {
        Error::Config(_) => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run(args) => match run(args) {
            Ok(summaries) => {
                report(&summaries);
                if summaries.iter().any(|s| s.diverged) {
                    ExitCode::from(3)
                } else {
                    ExitCode::SUCCESS
                }
            }
            Err(e) => exit_for(&e),
        },
        Command::Plot(args) => match emit_plot(&args.csv, args.metric, args.log_y, &args.out) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => exit_for(&e),
        },
    }
}
