//! `kfc`: compress dense layers into Kronecker form, train and fine-tune the
//! MNIST presets, evaluate checkpoints and print parameter reports.
//!
//! Exit codes: 0 success, 1 selftest failure, 2 runtime or data error,
//! 64 usage or configuration error.

mod commands;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::CliError;

#[derive(Debug, Parser)]
#[command(name = "kfc", version, about = "Kronecker fully-connected layers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Replace a dense layer of a checkpoint with NKP-initialized KFC weights.
    Compress(CompressArgs),
    /// Train a model preset from a configuration file.
    Train(TrainArgs),
    /// Continue training a checkpoint.
    Finetune(FinetuneArgs),
    /// Print the test error of a checkpoint.
    Eval(EvalArgs),
    /// Compare parameter counts and test errors of checkpoints.
    Report(ReportArgs),
    /// Run the built-in invariant checks.
    Selftest(SelftestArgs),
}

#[derive(Debug, Args)]
struct CompressArgs {
    #[arg(long = "in", value_name = "CKPT")]
    input: std::path::PathBuf,
    #[arg(long, value_name = "NAME")]
    layer: String,
    /// I, II, III, IV or KFCM.
    #[arg(long, value_name = "TAG")]
    formulation: String,
    #[arg(long)]
    k1: usize,
    #[arg(long)]
    k2: usize,
    /// Third output factor (formulation I only).
    #[arg(long)]
    k3: Option<usize>,
    /// Input split for KFCM; defaults to the divisor nearest sqrt(C).
    #[arg(long)]
    c1: Option<usize>,
    /// Tensor view of the layer input as CxHxW (formulations I-IV).
    #[arg(long, value_name = "CxHxW")]
    input_shape: Option<String>,
    /// Number of Kronecker terms, or "full".
    #[arg(long)]
    rank: String,
    #[arg(long, value_name = "CKPT")]
    out: std::path::PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, value_name = "FILE")]
    config: std::path::PathBuf,
    /// Directory with the MNIST IDX files (overrides data_dir).
    #[arg(long, value_name = "DIR")]
    data: Option<std::path::PathBuf>,
    #[arg(long, value_name = "CKPT")]
    out: std::path::PathBuf,
    /// Run seed; overrides the config file and KFC_SEED.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct FinetuneArgs {
    #[arg(long, value_name = "CKPT")]
    from: std::path::PathBuf,
    #[arg(long, value_name = "FILE")]
    config: std::path::PathBuf,
    #[arg(long, value_name = "DIR")]
    data: Option<std::path::PathBuf>,
    #[arg(long, value_name = "CKPT")]
    out: std::path::PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long, value_name = "CKPT")]
    ckpt: std::path::PathBuf,
    #[arg(long, value_name = "DIR")]
    data: std::path::PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    Text,
    Tsv,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long, value_name = "CKPT")]
    ckpt: Vec<std::path::PathBuf>,
    #[arg(long, value_name = "CKPT")]
    baseline: std::path::PathBuf,
    /// Layer whose parameters fill the layer column; `NAME.*` layers are included.
    #[arg(long, default_value = "fc")]
    layer: String,
    #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
    format: ReportFormat,
}

#[derive(Debug, Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, hide = true)]
    inject_fault: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 64 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Compress(a) => commands::compress(a),
        Command::Train(a) => commands::train(a),
        Command::Finetune(a) => commands::finetune(a),
        Command::Eval(a) => commands::eval(a),
        Command::Report(a) => commands::report(a),
        Command::Selftest(a) => commands::selftest(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Failed => {}
                other => eprintln!("error: {other}"),
            }
            ExitCode::from(e.exit_code())
        }
    }
}
