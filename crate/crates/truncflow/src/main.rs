use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use truncflow::verify::{self, Fault, Suite, VerifyOptions};
use truncflow::{run, ScenarioConfig};

#[derive(Parser)]
#[command(name = "truncflow", version, about = "Gradient flows of truncation maps in input space")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the scenario in a config file and write its artifacts.
    Run { config: PathBuf },
    /// Run a property suite; exits nonzero if any property fails.
    Verify {
        suite: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Where to write the JSON report.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, hide = true)]
        inject_fault: Option<Fault>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    // property cases stray off separation on purpose; keep their warnings out of the report
    let level = if matches!(cli.command, Command::Verify { .. }) { "error" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match cli.command {
        Command::Run { config } => {
            let outcome = ScenarioConfig::load(&config).and_then(|c| run::run(&c).map(|a| (c, a)));
            match outcome {
                Ok((c, a)) => {
                    println!(
                        "{} mode, s = {}: cost {:.6e} -> {:.6e}, {} events; wrote {}",
                        c.mode,
                        a.summary.final_s,
                        a.summary.initial_cost,
                        a.summary.final_cost,
                        a.summary.events,
                        c.output.display()
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code())
                }
            }
        }
        Command::Verify { suite, seed, out, inject_fault } => {
            let opts = VerifyOptions { seed, threads: verify::threads_from_env(), fault: inject_fault };
            let report = verify::verify(suite, &opts);
            for p in &report.properties {
                println!("{}", p.line());
            }
            if let Some(path) = out {
                if let Err(e) = std::fs::write(&path, report.to_json()) {
                    eprintln!("error: {}: {e}", path.display());
                    return ExitCode::from(1);
                }
            }
            if report.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
