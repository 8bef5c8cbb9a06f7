mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mfpod::{ErrorClass, Method, SubsetStrategy};

use config::Preset;

/// Multi-fidelity POD + kriging surrogates for wafer temperature fields.
#[derive(Parser, Debug)]
#[command(name = "mfpod", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML run configuration, overlaid on the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "full")]
    preset: Preset,
    /// Keep every grid cell instead of masking to the wafer disc.
    #[arg(long, global = true)]
    no_mask: bool,
    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Latin hypercube design table.
    Doe {
        #[arg(long)]
        n: usize,
        /// Design space as TOML (`names`, `lower`, `upper`); defaults to the ESC space.
        #[arg(long)]
        space: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Runs the analytic generator: LF at every design, HF at a nested subset.
    Simulate {
        #[arg(long)]
        designs: PathBuf,
        #[arg(long)]
        n_hf: usize,
        #[arg(long, value_enum, default_value = "first-n")]
        strategy: Strategy,
        #[arg(long)]
        out_dir: PathBuf,
        /// Write native-mesh CSV fields instead of grid fields.
        #[arg(long)]
        native: bool,
    },
    /// Nearest-neighbour resampling of native-mesh fields onto the grid.
    Regrid {
        /// Dataset manifest whose fields are native-mesh CSV files.
        #[arg(long, conflicts_with = "input", required_unless_present = "input")]
        data: Option<PathBuf>,
        /// Single `x,y,value` CSV file.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "hf")]
        fidelity: FidelityArg,
        /// Output manifest (with `--data`) or grid-field file (with `--input`).
        #[arg(long)]
        out: PathBuf,
    },
    /// POD basis of one fidelity level with its reconstruction error curve.
    Pod {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "hf")]
        fidelity: FidelityArg,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        center: bool,
        #[arg(long)]
        out: PathBuf,
        /// CSV `k,rmse` for ranks 1 up to `--curve-max`.
        #[arg(long)]
        curve: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        curve_max: usize,
    },
    /// Trains a surrogate on a random draw that avoids the validation split.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        method: Method,
        #[arg(long)]
        n_lf: Option<usize>,
        #[arg(long)]
        n_hf: Option<usize>,
        #[arg(long)]
        holdout: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scores a surrogate on the held-out HF points.
    Validate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        holdout: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convergence studies (and, on synthetic data, the optimisation study).
    Study {
        /// Existing dataset; without it the synthetic benchmark is generated.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Skip the optimisation study.
        #[arg(long)]
        no_optimize: bool,
    },
    /// Constrained design optimisation on a trained surrogate.
    Optimize {
        #[arg(long)]
        surrogate: PathBuf,
        #[arg(long, default_value_t = 8)]
        starts: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Also evaluate the optimum with the analytic HF generator.
        #[arg(long)]
        truth: bool,
    },
    /// Summary tables from a study directory.
    Report {
        #[arg(long, required_unless_present = "dump_config")]
        dir: Option<PathBuf>,
        /// Print the resolved configuration as TOML and exit.
        #[arg(long)]
        dump_config: bool,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum Strategy {
    FirstN,
    Maximin,
}

impl From<Strategy> for SubsetStrategy {
    fn from(s: Strategy) -> Self {
        match s {
            Strategy::FirstN => SubsetStrategy::FirstN,
            Strategy::Maximin => SubsetStrategy::Maximin,
        }
    }
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum FidelityArg {
    Lf,
    Hf,
}

impl From<FidelityArg> for mfpod::Fidelity {
    fn from(f: FidelityArg) -> Self {
        match f {
            FidelityArg::Lf => mfpod::Fidelity::Low,
            FidelityArg::Hf => mfpod::Fidelity::High,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(cli.cmd, &cli.common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let class = match e.class() {
                ErrorClass::Data => "data",
                ErrorClass::Numerical => "numerical",
            };
            let msg = serde_json::to_string(&e.to_string()).unwrap_or_default();
            eprintln!("error code={} class={class} message={msg}", e.code());
            ExitCode::from(match e.class() {
                ErrorClass::Data => 2,
                ErrorClass::Numerical => 3,
            })
        }
    }
}
