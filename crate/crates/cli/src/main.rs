//! `flexsettle`: batch studies of the two market designs.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 solve failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use flexsettle::solver::{backend_from_env, SolverError, SOLVER_ENV_VAR};
use flexsettle::study::{compare, diagnose, run_study, DesignSelection, StudyConfig, StudyMode, StudyOutcome};
use flexsettle::{Error, Result};

#[derive(Parser)]
#[command(name = "flexsettle", version, about)]
#[command(after_help = "The solver backend is chosen with FLEXSETTLE_SOLVER (highs or microlp; default highs).")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Designs {
    Fo,
    Ir,
    Both,
}

impl From<Designs> for DesignSelection {
    fn from(d: Designs) -> Self {
        match d {
            Designs::Fo => DesignSelection::Fo,
            Designs::Ir => DesignSelection::Ir,
            Designs::Both => DesignSelection::Both,
        }
    }
}

#[derive(clap::Args)]
struct Overrides {
    /// Output directory (overrides the config).
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Designs to simulate (overrides the config).
    #[arg(long, value_enum)]
    designs: Option<Designs>,
}

#[derive(Subcommand)]
enum Command {
    /// DA clearing, RT rollout, settlement and reports for every selected week.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Out-of-sample scenarios per day (overrides the config).
        #[arg(long)]
        oos: Option<usize>,
    },
    /// DA clearing and the simple RT model over out-of-sample scenarios.
    Oos {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Scenarios per day.
        #[arg(long)]
        scenarios: Option<usize>,
    },
    /// Deltas (b - a) between the report tables of two run directories.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// System validation and forecast calibration per day.
    Diagnose {
        config: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

fn load(config: &PathBuf, overrides: &Overrides) -> Result<StudyConfig> {
    let mut cfg = StudyConfig::load(config)?;
    if let Some(o) = &overrides.output {
        cfg.output = o.clone();
    }
    if let Some(d) = overrides.designs {
        cfg.designs = d.into();
    }
    Ok(cfg)
}

fn report(outcome: &StudyOutcome, dir: &std::path::Path) {
    println!("wrote {} files to {}", outcome.files.len(), dir.display());
    for (f, sum) in &outcome.files {
        println!("  {f}  {}", &sum[..16]);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, overrides, oos } => {
            let mut cfg = load(&config, &overrides)?;
            if let Some(n) = oos {
                cfg.oos_scenarios = n;
                cfg.check()?;
            }
            let backend = backend_from_env()?;
            let out = run_study(&cfg, StudyMode::Full, backend.as_ref())?;
            report(&out, &cfg.output);
        }
        Command::Oos { config, overrides, scenarios } => {
            let mut cfg = load(&config, &overrides)?;
            if let Some(n) = scenarios {
                cfg.oos_scenarios = n;
            }
            if cfg.oos_scenarios == 0 {
                return Err(Error::input("oos needs a positive scenario count"));
            }
            cfg.check()?;
            let backend = backend_from_env()?;
            let out = run_study(&cfg, StudyMode::OosOnly, backend.as_ref())?;
            report(&out, &cfg.output);
        }
        Command::Compare { a, b, output } => {
            let out = compare(&a, &b, &output)?;
            report(&out, &output);
        }
        Command::Diagnose { config, output } => {
            let mut cfg = StudyConfig::load(&config)?;
            if let Some(o) = output {
                cfg.output = o;
            }
            let d = diagnose(&cfg)?;
            for v in &d.violations {
                println!("violation: {v}");
            }
            println!("{:>5} {:>12} {:>12} {:>12} {:>14}", "day", "mean_err_%", "min_err_%", "max_err_%", "width_5_95_%");
            for (day, mean, lo, hi, width) in &d.days {
                println!("{day:>5} {mean:>12.3} {lo:>12.3} {hi:>12.3} {width:>14.3}");
            }
            if !d.violations.is_empty() {
                return Err(Error::input(format!("{} system violations", d.violations.len())));
            }
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Solve(SolverError::UnknownBackend(_)) => 1,
        e if e.is_input() => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("flexsettle: {e}");
            if matches!(e, Error::Solve(SolverError::UnknownBackend(_))) {
                eprintln!("set {SOLVER_ENV_VAR} to highs or microlp");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
