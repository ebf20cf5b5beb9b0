use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use varoc_cli::run::{run_check, run_solve, run_study};
use varoc_cli::CliError;

/// Variational low-order schemes for optimal control.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one problem and write trajectory, diagnostics and summary.
    Solve { config: PathBuf },
    /// Run a convergence-order study and write the slope table.
    Study { config: PathBuf },
    /// Check the model derivatives against finite differences.
    Check { config: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result: Result<String, CliError> = match &cli.command {
        Command::Solve { config } => run_solve(config).map(|a| {
            format!(
                "converged: residual {:.3e} after {} iterations, wrote {}",
                a.summary.residual_norm,
                a.summary.iterations,
                a.summary_path.display()
            )
        }),
        Command::Study { config } => run_study(config).map(|(path, report)| {
            let slopes: Vec<String> = report.slopes.iter().map(|(id, s)| format!("{id} {s:.3}")).collect();
            format!("slopes: {}; wrote {}", slopes.join(", "), path.display())
        }),
        Command::Check { config } => run_check(config).map(|r| format!("passed: {r}")),
    };
    match result {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
