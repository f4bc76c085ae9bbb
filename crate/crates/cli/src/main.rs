mod commands;
mod config;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Config, KEYS};
use error::CliError;
use io::{Reporter, Summary};

#[derive(Parser)]
#[command(name = "qlbs", version, about = "Option pricing and hedging with the QLBS model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate stock paths and write them as a panel.
    Simulate(RunArgs),
    /// Roll a hedge portfolio backwards along the paths.
    Rollout(RunArgs),
    /// Solve for the optimal hedge and price by backward regression.
    DpSolve(RunArgs),
    /// Learn price and hedge from a transition dataset.
    FqiSolve(RunArgs),
    /// Generate a transition dataset under a behaviour policy.
    MakeDataset(RunArgs),
    /// Tabular Q-learning on a discrete chain, checked against exact induction.
    TabularQ(RunArgs),
    /// Exponential-utility indifference price and hedge.
    UtilityPrice(RunArgs),
    /// Black-Scholes price and delta.
    BsQuote(RunArgs),
    /// Convergence of the backward-regression price over path counts.
    Compare(RunArgs),
    /// Run the solver named by `solver.kind`.
    Run(RunArgs),
    /// List configuration keys with their defaults.
    Keys,
}

#[derive(Args)]
struct RunArgs {
    /// Configuration file of `key=value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory receiving the reports.
    #[arg(long, default_value = "qlbs-out")]
    out: PathBuf,
    /// Overrides such as `--market.sigma 0.2` or `--risk.lambda=0.01`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

type Handler = fn(&Config, &Reporter) -> Result<Summary, CliError>;

fn handler(name: &str) -> Option<Handler> {
    Some(match name {
        "simulate" => commands::simulate,
        "rollout" => commands::rollout,
        "dp-solve" | "dp" => commands::dp_solve,
        "fqi-solve" | "fqi" => commands::fqi_solve,
        "make-dataset" => commands::make_dataset,
        "tabular-q" | "tabular" => commands::tabular_q,
        "utility-price" | "utility" => commands::utility_price,
        "bs-quote" | "bs" => commands::bs_quote_cmd,
        "compare" => commands::compare,
        _ => return None,
    })
}

fn execute(name: &str, args: &RunArgs) -> Result<(), CliError> {
    let mut cfg = Config::default();
    if let Some(path) = &args.config {
        cfg.merge_file(path)?;
    }
    cfg.merge_args(&args.overrides)?;
    let name = if name == "run" { cfg.raw("solver.kind").to_string() } else { name.to_string() };
    let run = handler(&name).ok_or_else(|| {
        CliError::Config(format!("unknown solver.kind `{name}`; use dp, fqi, tabular, utility or bs"))
    })?;
    let rep = Reporter::new(args.out.clone(), &name, &cfg.hash())?;
    rep.write_text("config.txt", &cfg.render())?;
    let summary = run(&cfg, &rep)?;
    print!("{}", rep.summary(&summary)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, args) = match &cli.command {
        Command::Simulate(a) => ("simulate", a),
        Command::Rollout(a) => ("rollout", a),
        Command::DpSolve(a) => ("dp-solve", a),
        Command::FqiSolve(a) => ("fqi-solve", a),
        Command::MakeDataset(a) => ("make-dataset", a),
        Command::TabularQ(a) => ("tabular-q", a),
        Command::UtilityPrice(a) => ("utility-price", a),
        Command::BsQuote(a) => ("bs-quote", a),
        Command::Compare(a) => ("compare", a),
        Command::Run(a) => ("run", a),
        Command::Keys => {
            for (k, v, help) in KEYS {
                println!("{k:<24} {:<18} {help}", if v.is_empty() { "(unset)" } else { v });
            }
            return ExitCode::SUCCESS;
        }
    };
    match execute(name, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qlbs {name}: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
