use std::path::PathBuf;
use std::process::ExitCode;

use chaosgraph_cli::{preset, run, Diagnostic, Experiment, ExperimentConfig, RunError, PRESETS};
use clap::{Args, Parser};

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_CHECK: u8 = 3;

/// Chaos decompositions and limit theorems for Poisson random graphs.
#[derive(Parser)]
#[command(name = "chaosgraph", version)]
struct Cli {
    #[arg(value_enum)]
    command: Experiment,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML experiment file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in configuration: flower-a..e, disk-r1..r4.
    #[arg(long)]
    preset: Option<String>,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to all cores.
    #[arg(long, env = "CHAOSGRAPH_THREADS")]
    threads: Option<usize>,
    /// Exit with status 3 when an acceptance check fails.
    #[arg(long)]
    check: bool,
}

fn validation_failure(diags: &[Diagnostic]) -> ExitCode {
    for d in diags {
        eprintln!("error: {d}");
    }
    ExitCode::from(EXIT_VALIDATION)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let c = cli.common;
    let mut cfg = match (&c.config, &c.preset) {
        (Some(path), None) => match ExperimentConfig::load(path) {
            Ok(cfg) => cfg,
            Err(d) => return validation_failure(&[d]),
        },
        (None, Some(name)) => match preset(name) {
            Some(cfg) => cfg,
            None => {
                return validation_failure(&[Diagnostic {
                    path: "--preset".into(),
                    message: format!("unknown preset {name}; available: {}", PRESETS.join(", ")),
                }])
            }
        },
        _ => {
            return validation_failure(&[Diagnostic {
                path: "--config".into(),
                message: "pass exactly one of --config or --preset".into(),
            }])
        }
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = c.out {
        cfg.output = o;
    }
    if c.threads == Some(0) {
        return validation_failure(&[Diagnostic { path: "--threads".into(), message: "must be at least 1".into() }]);
    }
    let diags = cfg.validate(cli.command);
    if !diags.is_empty() {
        return validation_failure(&diags);
    }
    if let Some(n) = c.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    }
    match run(&cfg, cli.command) {
        Err(RunError::Io(e)) | Err(RunError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
        Ok(outcome) => {
            for a in &outcome.artifacts {
                println!("{}", cfg.output.join(a).display());
            }
            for f in &outcome.failures {
                eprintln!("failed: {f}");
            }
            if c.check {
                for f in &outcome.check_failures {
                    eprintln!("check failed: {f}");
                }
            }
            if !outcome.failures.is_empty() {
                ExitCode::from(EXIT_RUNTIME)
            } else if c.check && !outcome.check_failures.is_empty() {
                ExitCode::from(EXIT_CHECK)
            } else {
                ExitCode::SUCCESS
            }
        }
    }
}
