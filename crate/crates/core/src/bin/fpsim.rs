use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use fpsim::bench::{self, CliError, ExperimentSpec, FitModel};

#[derive(Parser)]
#[command(name = "fpsim", version, about = "Adiabatic-path simulator with fixed-point search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment grid from a JSON spec.
    Run { spec: PathBuf },
    /// Fit a power law to a results file.
    Fit {
        results: PathBuf,
        /// childs_M, fpqs_M or cost_T
        #[arg(long)]
        model: String,
        /// Divide costs by ln^4(Gamma/g) before fitting.
        #[arg(long)]
        strip_logs: bool,
    },
    /// Check the numerical identities of one suite: fpqs, pea, boost, bounds.
    Verify {
        suite: String,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
}

fn configure_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("FPSIM_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Invalid(format!("FPSIM_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Invalid(e.to_string()))?;
    }
    Ok(())
}

fn real_main(cli: Cli) -> Result<bool, CliError> {
    configure_threads()?;
    match cli.command {
        Command::Run { spec } => {
            let spec = ExperimentSpec::load(&spec)?;
            let (jsonl, csv) = bench::cmd_run(&spec)?;
            println!("wrote {}", jsonl.display());
            println!("wrote {}", csv.display());
            Ok(true)
        }
        Command::Fit {
            results,
            model,
            strip_logs,
        } => {
            let model: FitModel = model.parse()?;
            let fit = bench::cmd_fit(&results, model, strip_logs)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&fit).map_err(|e| CliError::Runtime(e.into()))?
            );
            Ok(true)
        }
        Command::Verify { suite, format } => {
            let rows = bench::cmd_verify(&suite)?;
            match format {
                Format::Table => print!("{}", bench::format_table(&rows)),
                Format::Json => println!(
                    "{}",
                    serde_json::to_string_pretty(&rows).map_err(|e| CliError::Runtime(e.into()))?
                ),
            }
            Ok(rows.iter().all(|r| r.passed))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match real_main(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
