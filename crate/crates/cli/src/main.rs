//! `gate-sim`: batch front-end for the heralded controlled-phase gate
//! simulator. Runs single gates, parameter sweeps, Monte Carlo campaigns and
//! the verification suite from a config file.
//!
//! ```text
//! gate-sim --config run.cfg [--output PATH] [--jobs N] [--seed S] [--quiet]
//! ```
//!
//! Exit codes: 0 success, 1 usage/config error, 2 numeric or I/O failure,
//! 3 verification failure. `GATE_SIM_JOBS` is honored when `--jobs` is absent.

mod config;
mod run;

use std::process::ExitCode;

use run::{Options, RunError};

struct CliArgs {
    config_path: String,
    output: Option<String>,
    jobs: Option<usize>,
    seed: Option<u64>,
    quiet: bool,
}

const USAGE: &str = "usage: gate-sim --config PATH [--output PATH] [--jobs N] [--seed S] [--quiet]";

fn parse_args(argv: &[String]) -> Result<CliArgs, String> {
    let mut config_path = None;
    let mut output = None;
    let mut jobs = None;
    let mut seed = None;
    let mut quiet = false;
    let mut it = argv.iter();
    while let Some(arg) = it.next() {
        let mut value_of = |flag: &str| -> Result<String, String> {
            it.next()
                .cloned()
                .ok_or_else(|| format!("{flag} needs a value\n{USAGE}"))
        };
        match arg.as_str() {
            "--config" => config_path = Some(value_of("--config")?),
            "--output" => output = Some(value_of("--output")?),
            "--jobs" => {
                let v = value_of("--jobs")?;
                jobs = Some(v.parse::<usize>().map_err(|_| format!("bad --jobs value {v:?}"))?);
            }
            "--seed" => {
                let v = value_of("--seed")?;
                seed = Some(v.parse::<u64>().map_err(|_| format!("bad --seed value {v:?}"))?);
            }
            "--quiet" => quiet = true,
            "--help" | "-h" => return Err(USAGE.to_string()),
            other => return Err(format!("unknown flag {other:?}\n{USAGE}")),
        }
    }
    if jobs.is_none() {
        if let Ok(v) = std::env::var("GATE_SIM_JOBS") {
            jobs = Some(
                v.parse::<usize>()
                    .map_err(|_| format!("bad GATE_SIM_JOBS value {v:?}"))?,
            );
        }
    }
    let config_path = config_path.ok_or_else(|| format!("--config is required\n{USAGE}"))?;
    Ok(CliArgs {
        config_path,
        output,
        jobs,
        seed,
        quiet,
    })
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let args = match parse_args(&argv) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("{msg}");
            return ExitCode::from(1);
        }
    };

    let text = match std::fs::read_to_string(&args.config_path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read config {}: {e}", args.config_path);
            return ExitCode::from(1);
        }
    };
    let mut config = match config::parse_config(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(1);
        }
    };
    if let Some(output) = args.output {
        config.output_path = Some(output);
    }
    if let Some(seed) = args.seed {
        config.base_seed = seed;
    }
    if let Some(jobs) = args.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("cannot configure {jobs} worker threads: {e}");
            return ExitCode::from(1);
        }
    }

    match run::run(&config, &Options { quiet: args.quiet }) {
        Ok(()) => ExitCode::SUCCESS,
        Err(RunError::Runtime(m)) => {
            eprintln!("{m}");
            ExitCode::from(2)
        }
        Err(RunError::Verification) => ExitCode::from(3),
    }
}
