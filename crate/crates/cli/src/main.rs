use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ineqlab::{describe, run, CliError, Config, RunOptions};

#[derive(Parser)]
#[command(name = "ineqlab", version, about = "Numerical checks of functional inequalities and their duals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one suite (or `all`) and write reports into the output directory.
    Run {
        #[arg(long)]
        suite: String,
        /// TOML configuration; omitted keys take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Multiplier applied to every configured sample count.
        #[arg(long, default_value_t = 1.0)]
        samples: f64,
    },
    /// Print what each check of a suite verifies.
    Describe {
        #[arg(long)]
        suite: String,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load(path: Option<PathBuf>) -> Result<Config, CliError> {
    path.map_or_else(|| Ok(Config::default()), |p| Config::load(&p))
}

fn init_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("INEQLAB_THREADS") {
        let n: usize = v.parse().map_err(|_| CliError::BadArgument(format!("INEQLAB_THREADS={v}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::BadArgument(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_threads().and_then(|()| match cli.command {
        Command::Run { suite, config, out, seed, samples } => {
            let summary = run(&RunOptions {
                suite,
                config: load(config)?,
                out,
                seed,
                samples_multiplier: samples,
            })?;
            for r in &summary.reports {
                let margin = r.margin.map_or("-".to_string(), |m| format!("{m:.3e}"));
                println!(
                    "{:<5} {:<9} {:<36} margin {:>11}  budget {:.1e}",
                    if r.pass { "PASS" } else { "FAIL" },
                    r.suite,
                    r.check,
                    margin,
                    r.budget
                );
            }
            Ok(summary.all_pass())
        }
        Command::Describe { suite, config } => {
            print!("{}", describe(&suite, &load(config)?)?);
            Ok(true)
        }
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
