mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Exit codes.
pub const EXIT_OK: u8 = 0;
pub const EXIT_INVALID: u8 = 1;
pub const EXIT_INCONCLUSIVE: u8 = 2;
pub const EXIT_DIVERGENCE: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "riskmdp", version, about = "Risk-averse dynamic programming for transient Markov models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve a model read from a JSON file.
    Solve(SolveArgs),
    /// Decide whether a policy, or every policy, is risk-transient.
    CheckTransient(CheckArgs),
    /// Run one of the built-in worked examples.
    #[command(subcommand)]
    Example(ExampleCommand),
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[arg(long)]
    model: PathBuf,
    /// finite:T, policy-iter, value-iter or randomized.
    #[arg(long, default_value = "value-iter")]
    method: String,
    /// Overrides the model file's risk map: expectation, semidev:K or avar:A.
    #[arg(long)]
    risk: Option<String>,
    /// Stopping tolerance on the weighted sup-norm residual.
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    #[arg(long, default_value_t = 100_000)]
    max_iter: usize,
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("scope").required(true).args(["policy", "uniform"])))]
struct CheckArgs {
    #[arg(long)]
    model: PathBuf,
    /// JSON map from state name to control name, or a report from `solve`.
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Check all decision rules at once.
    #[arg(long)]
    uniform: bool,
    /// `default` uses the model file's weight if it has one, else w = 1.
    #[arg(long, default_value = "default")]
    weight: String,
    #[arg(long)]
    risk: Option<String>,
    #[arg(long, default_value_t = 100_000)]
    max_iter: usize,
}

#[derive(Subcommand, Debug)]
enum ExampleCommand {
    /// Optimal selling threshold for integer offers.
    AssetSelling(AssetArgs),
    /// Wait-or-transplant decision.
    Transplant(TransplantArgs),
}

#[derive(Args, Debug)]
struct AssetArgs {
    /// Offer probabilities for 0, 1, 2, ..., comma separated.
    #[arg(long)]
    pmf: String,
    #[arg(long)]
    c0: f64,
    #[arg(long, default_value = "expectation")]
    risk: String,
}

#[derive(Args, Debug)]
struct TransplantArgs {
    #[arg(long, default_value_t = 1.0)]
    kappa: f64,
    /// Also solve over randomized decision rules.
    #[arg(long)]
    randomized: bool,
    #[arg(long)]
    q_ss_w: Option<f64>,
    #[arg(long)]
    q_sd_w: Option<f64>,
    #[arg(long)]
    q_sl_t: Option<f64>,
    #[arg(long)]
    q_sd_t: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    w1: Option<f64>,
    #[arg(long)]
    m: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    w2: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
    #[arg(long)]
    alpha_g: Option<f64>,
    #[arg(long)]
    w3: Option<f64>,
    #[arg(long)]
    n_survival: Option<usize>,
    #[arg(long)]
    age_offset: Option<usize>,
    #[arg(long)]
    max_lifetime: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Solve(a) => commands::solve(&a),
        Command::CheckTransient(a) => commands::check_transient(&a),
        Command::Example(ExampleCommand::AssetSelling(a)) => commands::asset_selling(&a),
        Command::Example(ExampleCommand::Transplant(a)) => commands::transplant(&a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
