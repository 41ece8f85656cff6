//! Command-line front end.  `run` executes a scenario and writes its
//! outputs under one directory, `validate` checks a config without
//! writing anything, and `list-scenarios` prints the catalogue.
//!
//! Exit codes: 0 on completed runs (summary lines may still say FAIL),
//! 1 on solver failure, 2 on configuration errors.

use clap::{Args, Parser, Subcommand};
use driftkin::config::{parse_config, serialize_config, ScenarioConfig, ScenarioKind};
use driftkin::error::Error;
use driftkin::scenario::run_scenario;
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_SOLVER: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(
    name = "driftkin",
    version,
    about = "Drift-kinetic scenario runner: particle, guiding-center, and reduction-defect studies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write diagnostics into the output directory.
    Run(RunArgs),
    /// Parse and validate a config, print the resolved form, write nothing.
    Validate {
        /// Config file to check.
        #[arg(long)]
        config: PathBuf,
    },
    /// List the known scenarios.
    ListScenarios,
}

#[derive(Args)]
struct RunArgs {
    /// Config file; omit to run a named scenario with its defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scenario name; overrides the config's scenario.
    #[arg(long)]
    scenario: Option<String>,
    /// Scale-ratio override for single-epsilon scenarios.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Output directory; overrides the config's [output] dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// RNG seed override for particle scenarios.
    #[arg(long)]
    seed: Option<u64>,
    /// Accepted for interface stability; the solvers are single-threaded.
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run(args) => cmd_run(args),
        Command::Validate { config } => cmd_validate(&config),
        Command::ListScenarios => {
            for kind in ScenarioKind::all() {
                println!("{:<14} {}", kind.name(), kind.summary());
            }
            ExitCode::SUCCESS
        }
    }
}

fn config_error(message: impl AsRef<str>) -> ExitCode {
    eprintln!("config error: {}", message.as_ref());
    ExitCode::from(EXIT_CONFIG)
}

fn report_error(err: &Error) -> ExitCode {
    match err {
        Error::Config(issues) => {
            eprintln!("config error:");
            for issue in issues {
                eprintln!("  {issue}");
            }
            ExitCode::from(EXIT_CONFIG)
        }
        Error::UnknownScenario(_) | Error::InvalidParameter(_) | Error::FieldNotPositive(_) => {
            eprintln!("config error: {err}");
            ExitCode::from(EXIT_CONFIG)
        }
        _ => {
            eprintln!("solver error: {err}");
            ExitCode::from(EXIT_SOLVER)
        }
    }
}

fn load_config(args: &RunArgs) -> Result<ScenarioConfig, ExitCode> {
    let mut cfg = match (&args.config, &args.scenario) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                config_error(format!("cannot read {}: {e}", path.display()))
            })?;
            parse_config(&text).map_err(|e| report_error(&e))?
        }
        (None, Some(name)) => {
            let kind = ScenarioKind::from_name(name).ok_or_else(|| {
                config_error(format!(
                    "unknown scenario `{name}` (known: {})",
                    ScenarioKind::all().map(|s| s.name()).join(", ")
                ))
            })?;
            ScenarioConfig::defaults(kind)
        }
        (None, None) => {
            return Err(config_error("pass --config <file> or --scenario <name>"));
        }
    };
    if let Some(name) = &args.scenario {
        cfg.scenario = ScenarioKind::from_name(name).ok_or_else(|| {
            config_error(format!(
                "unknown scenario `{name}` (known: {})",
                ScenarioKind::all().map(|s| s.name()).join(", ")
            ))
        })?;
    }
    if let Some(eps) = args.epsilon {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(config_error(format!(
                "--epsilon must lie in (0, 1), got {eps}"
            )));
        }
        cfg.epsilon = eps;
    }
    if let Some(seed) = args.seed {
        cfg.pic.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.display().to_string();
    }
    if let Some(threads) = args.threads {
        if threads == 0 {
            return Err(config_error("--threads must be at least 1"));
        }
        if threads > 1 {
            eprintln!("note: solvers are single-threaded; --threads {threads} has no effect");
        }
    }
    Ok(cfg)
}

fn cmd_run(args: RunArgs) -> ExitCode {
    let cfg = match load_config(&args) {
        Ok(cfg) => cfg,
        Err(code) => return code,
    };
    let out = PathBuf::from(&cfg.out_dir);
    match run_scenario(&cfg, &out) {
        Ok(report) => {
            for line in &report.lines {
                println!("{line}");
            }
            for file in &report.files {
                println!("wrote {}", file.display());
            }
            println!(
                "{}: {}",
                report.scenario.name(),
                if report.passed { "all checks passed" } else { "some checks FAILED" }
            );
            ExitCode::SUCCESS
        }
        Err(err) => report_error(&err),
    }
}

fn cmd_validate(path: &std::path::Path) -> ExitCode {
    let text = match std::fs::read_to_string(path) {
        Ok(text) => text,
        Err(e) => return config_error(format!("cannot read {}: {e}", path.display())),
    };
    match parse_config(&text) {
        Ok(cfg) => {
            print!("{}", serialize_config(&cfg));
            eprintln!("config ok: scenario {}", cfg.scenario.name());
            ExitCode::SUCCESS
        }
        Err(err) => report_error(&err),
    }
}
