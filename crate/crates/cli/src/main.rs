use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

/// Balance, train and inspect ReLU networks with Equi-normalization.
#[derive(Debug, Parser)]
#[command(name = "enorm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Rescale a network to its minimum-norm equivalent.
    Balance(BalanceArgs),
    /// Train a network from a TOML run configuration.
    Train(TrainArgs),
    /// Print norms and optionally write the energy profile.
    Inspect(InspectArgs),
    /// Check that two networks compute the same function.
    Check(CheckArgs),
    /// Check that random rescalings of a network balance to the same weights.
    Canon(CanonArgs),
    /// Write a randomly initialized network.
    Generate(GenerateArgs),
}

#[derive(Debug, Args)]
struct BalanceArgs {
    #[arg(long)]
    net: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    /// Maximum number of cycles.
    #[arg(long, default_value_t = 100)]
    cycles: usize,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    /// Uniform asymmetric scaling with this base.
    #[arg(long, conflicts_with = "adaptive")]
    uniform_c: Option<f64>,
    /// Weight each layer by its inverse size.
    #[arg(long)]
    adaptive: bool,
    #[arg(long)]
    out: PathBuf,
    /// CSV with one row per cycle.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to `output_dir` of the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Builtin {
    Resnet18c,
}

#[derive(Debug, Args)]
struct InspectArgs {
    #[arg(long, required_unless_present = "arch", conflicts_with = "arch")]
    net: Option<PathBuf>,
    /// Inspect a freshly generated built-in architecture instead of a file.
    #[arg(long)]
    arch: Option<Builtin>,
    #[arg(long)]
    energy: Option<PathBuf>,
    /// Print the number of weights rescaled by one cycle.
    #[arg(long)]
    count_elements: bool,
}

#[derive(Debug, Args)]
struct CheckArgs {
    #[arg(long)]
    net_a: PathBuf,
    #[arg(long)]
    net_b: PathBuf,
    /// Maximum absolute output difference; 1e-10 for f64 networks and 1e-4
    /// for f32 when omitted.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    samples: usize,
}

#[derive(Debug, Args)]
struct CanonArgs {
    #[arg(long)]
    net: PathBuf,
    #[arg(long, default_value_t = 5)]
    rescalings: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    #[arg(long, default_value_t = 10_000)]
    max_cycles: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Arch {
    Mlp,
    Resnet18c,
    AppendixA,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    arch: Arch,
    /// Layer widths of an MLP, input first.
    #[arg(long, value_delimiter = ',', required_if_eq("arch", "mlp"))]
    widths: Vec<usize>,
    #[arg(long)]
    bias: bool,
    #[arg(long, default_value_t = 1000)]
    classes: usize,
    #[arg(long, default_value_t = 20)]
    depth: usize,
    #[arg(long, default_value_t = 500)]
    width: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Balance(a) => commands::balance(a),
        Command::Train(a) => commands::train(a),
        Command::Inspect(a) => commands::inspect(a),
        Command::Check(a) => commands::check(a),
        Command::Canon(a) => commands::canon(a),
        Command::Generate(a) => commands::generate(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
