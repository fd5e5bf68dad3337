//! `flhb`: dataset generation, training, evaluation and sweeps for the
//! federated hybrid beamforming simulator.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use flhb::Error;

#[derive(Parser, Debug)]
#[command(name = "flhb", version, about = "Federated learning for hybrid beamforming")]
struct Cli {
    /// Worker threads for data-parallel work (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// Flat TOML config; missing keys use the desk profile.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override a config key, e.g. `--set rounds=10`. Repeatable; applied
    /// after the file and before the dedicated flags.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a dataset archive.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model on an archive and write a checkpoint and metrics CSV.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        /// `fl` or `cml`.
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        out_checkpoint: Option<PathBuf>,
        #[arg(long)]
        out_metrics: Option<PathBuf>,
        #[arg(long)]
        quant_bits: Option<u32>,
    },
    /// Sum-rate sweep over test SNRs for trained and reference methods.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// `[NAME=]PATH`; repeatable. NAME defaults from the config
        /// (`flhb`, `cml_cnn` or `mlp`).
        #[arg(long)]
        checkpoint: Vec<String>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Comma-separated test SNRs in dB.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        snr_test: Option<Vec<f64>>,
        #[arg(long)]
        sigma2: Option<f64>,
        /// `standard` or `paper`.
        #[arg(long)]
        rate_formula: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Uplink cost of federated versus centralized training.
    Overhead {
        #[arg(long, default_value_t = 500)]
        n: u64,
        #[arg(long, value_delimiter = ',', default_values_t = [100u64, 200, 300])]
        g: Vec<u64>,
        #[arg(long, default_value_t = 8)]
        k: u64,
        #[arg(long = "n-t", value_delimiter = ',', default_values_t = [16u64, 36, 64, 100])]
        n_t: Vec<u64>,
        #[arg(long, default_value_t = 30)]
        rounds: u64,
        /// Learnable parameters per model upload (default: the closed-form
        /// count of the full-size network).
        #[arg(long)]
        p_model: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Federated training at several quantization depths plus an
    /// unquantized baseline.
    QuantSweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Bit depths as a list `1,2,4` or a range `1..8`.
        #[arg(long)]
        bits: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the gradient and cross-mode equivalence oracles.
    Verify {
        /// Number of random micro networks for the gradient check.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidAngle(_) | Error::Dimension(_) | Error::LabelOutOfRange { .. } => 2,
        Error::Io(_) | Error::Format(_) => 3,
        Error::Synthesis(_) | Error::EmptyBatch | Error::Singular(_) | Error::Numeric(_) => 4,
    }
}

fn run(cli: Cli) -> flhb::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot size thread pool: {e}")))?;
    }
    match cli.command {
        Command::GenData { cfg, out } => commands::gen_data(&cfg, out),
        Command::Train {
            cfg,
            data,
            mode,
            out_checkpoint,
            out_metrics,
            quant_bits,
        } => commands::train(&cfg, data, mode, out_checkpoint, out_metrics, quant_bits),
        Command::Eval {
            cfg,
            checkpoint,
            data,
            snr_test,
            sigma2,
            rate_formula,
            out,
        } => commands::eval(&cfg, &checkpoint, data, snr_test, sigma2, rate_formula, out),
        Command::Overhead {
            n,
            g,
            k,
            n_t,
            rounds,
            p_model,
            out,
        } => commands::overhead(n, &g, k, &n_t, rounds, p_model, out),
        Command::QuantSweep { cfg, data, bits, out } => commands::quant_sweep(&cfg, data, bits, out),
        Command::Verify { seeds } => commands::verify(seeds),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
