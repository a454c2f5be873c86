use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use stratsearch::config::{ConfigError, RunConfig};
use stratsearch::objectives::EvaluationRequest;
use stratsearch::orchestrator::{
    self, run_baseline, run_search_with, ReportFormat, RunError, RunOptions,
};
use stratsearch::rng::{derive_seed, SeedStream};
use stratsearch::{ClimbMode, StrategyVector};

#[derive(Parser)]
#[command(
    name = "stratsearch",
    version,
    about = "Reinforcement-learning search over training strategies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Start a new search.
    Search {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides run.master_seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides run.workers.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Continue an interrupted search.
    Resume { dir: PathBuf },
    /// Summarize a run directory.
    Report {
        dir: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Hill-climbing baseline from the all-0.5 strategy.
    Baseline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate one normalized strategy, given as a JSON array.
    EvalOnce {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        strategy: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Discrete,
    Continuous,
}

fn invalid(message: String) -> RunError {
    RunError::Config(ConfigError::Invalid(message))
}

fn load(path: &Path) -> Result<RunConfig, RunError> {
    let config = RunConfig::load(path)?;
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Search {
            config,
            out,
            seed,
            workers,
        } => {
            let mut config = load(&config)?;
            config.run.output_dir = Some(out);
            if let Some(seed) = seed {
                config.run.master_seed = seed;
            }
            if let Some(workers) = workers {
                config.run.workers = workers;
            }
            config.validate()?;
            let evaluator = config.build_evaluator()?;
            let run = run_search_with(&config, evaluator.as_ref(), &RunOptions::default())?;
            print_summary(&run);
        }
        Command::Resume { dir } => {
            let run = orchestrator::resume(&dir)?;
            print_summary(&run);
        }
        Command::Report { dir, format } => {
            let format = match format {
                Format::Text => ReportFormat::Text,
                Format::Json => ReportFormat::Json,
            };
            print!("{}", orchestrator::report(&dir)?.render(format));
        }
        Command::Baseline { config, mode, out } => {
            let mut config = load(&config)?;
            config.run.output_dir = Some(out);
            let evaluator = config.build_evaluator()?;
            let mode = match mode {
                Mode::Discrete => ClimbMode::Discrete,
                Mode::Continuous => ClimbMode::Continuous,
            };
            let run = run_baseline(&config, mode, evaluator.as_ref())?;
            println!(
                "best reward {} after {} evaluations",
                run.best_reward, run.evals
            );
            println!("strategy {:?}", run.best.values());
            println!("native   {:?}", run.best_native);
        }
        Command::EvalOnce { config, strategy } => {
            let config = load(&config)?;
            let values: Vec<f64> =
                serde_json::from_str(&strategy).map_err(|e| invalid(format!("--strategy: {e}")))?;
            let strategy =
                StrategyVector::new(values).map_err(|e| invalid(format!("--strategy: {e}")))?;
            let native = config
                .search_space
                .denormalize(&strategy)
                .map_err(|e| invalid(format!("--strategy: {e}")))?;
            let evaluator = config.build_evaluator()?;
            let request = EvaluationRequest {
                trial_id: 0,
                strategy,
                native,
                seed: derive_seed(config.run.master_seed, SeedStream::Trial, 0),
            };
            match evaluator.evaluate(&request) {
                Ok(result) => println!(
                    "{}",
                    serde_json::to_string(&result).expect("result serializes")
                ),
                Err(last) => return Err(RunError::TooManyFailures { count: 1, last }),
            }
        }
    }
    Ok(())
}

fn print_summary(run: &orchestrator::SearchRun) {
    let state = if run.finished { "finished" } else { "stopped" };
    println!(
        "{state}: {} trials, {} succeeded, {} failed",
        run.trials.len(),
        run.succeeded(),
        run.failed()
    );
    if let Some(best) = &run.best_so_far {
        println!("best reward {} (trial {})", best.reward, best.trial_id);
    }
    println!("output in {}", run.output_dir.display());
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
