use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use covad::estimators::EstimatorKind;
use covad::harness::{emit_results, run_scenario, sweep_parameter, OutputFormat, RunConfig, SweepParam};
use covad::lifted::{TheoremParams, TheoryReport};
use covad::model::ScenarioConfig;
use covad::Error;

/// Covariance-based activity detection simulator.
#[derive(Parser)]
#[command(name = "covad", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo run of one scenario.
    Run(RunArgs),
    /// One run per value of a scenario parameter.
    Sweep {
        #[command(flatten)]
        common: RunArgs,
        /// m, k_c, a_c, snr_db or d_c.
        #[arg(long)]
        param: SweepParam,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Evaluate the recovery-guarantee constants and the scaling law.
    CheckTheory {
        #[arg(long, default_value_t = 0.5)]
        delta: f64,
        #[arg(long, default_value_t = 1.0)]
        c_prime: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, default_value_t = 100)]
        pilot_len: usize,
        #[arg(long, default_value_t = 2000)]
        users: usize,
        #[arg(long, default_value_t = 200)]
        s: usize,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated subset of ml,mmv,nnls.
    #[arg(long, value_delimiter = ',')]
    solvers: Option<Vec<EstimatorKind>>,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_) | Error::Parse(_) => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn load(args: &RunArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path).map_err(|e| Failure::Config(e.to_string()))?,
        None => RunConfig {
            scenario: ScenarioConfig::default(),
            solver: Default::default(),
            run: Default::default(),
        },
    };
    if let Some(seed) = args.seed {
        cfg.run.seed = seed;
    }
    if let Some(trials) = args.trials {
        cfg.run.trials = trials;
    }
    if let Some(solvers) = &args.solvers {
        cfg.run.solvers = solvers.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

const FORMATS: [OutputFormat; 2] = [OutputFormat::Csv, OutputFormat::JsonSummary];

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run(args) => {
            let cfg = load(&args)?;
            let record = run_scenario(
                &cfg.scenario,
                &cfg.solver_options(),
                cfg.run.trials,
                cfg.run.seed,
                &cfg.run_options(),
            )?;
            let manifest = emit_results(&record, &args.out, &FORMATS)?;
            for e in &record.aggregates.estimators {
                if let Some(roc) = &e.roc {
                    println!("{}: p_d at p_fa=1e-2 is {:.4}", e.kind, roc.pd_at_pfa(1e-2));
                }
            }
            println!(
                "{} trials ({} flagged), {} files in {}",
                record.trials,
                record.aggregates.flagged_trials,
                manifest.entries.len(),
                args.out.display()
            );
        }
        Command::Sweep { common, param, values } => {
            let cfg = load(&common)?;
            let outcome = sweep_parameter(
                &cfg.scenario,
                param,
                &values,
                &cfg.solver_options(),
                cfg.run.trials,
                cfg.run.seed,
                &cfg.run_options(),
            )?;
            for s in &outcome.skipped {
                eprintln!("skipped {param}={}: {}", s.value, s.reason);
            }
            for (value, record) in &outcome.runs {
                let dir = common.out.join(format!("{param}={value}"));
                emit_results(record, &dir, &FORMATS)?;
                println!("{param}={value}: {}", dir.display());
            }
            if outcome.runs.is_empty() {
                return Err(Failure::Config("every sweep value was invalid".into()));
            }
        }
        Command::CheckTheory {
            delta,
            c_prime,
            lambda,
            pilot_len,
            users,
            s,
        } => {
            let report = TheoryReport::evaluate(pilot_len, users, TheoremParams::new(delta, c_prime, s, lambda))?;
            print!("{}", report.to_lines());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
