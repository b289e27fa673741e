//! Execution of the four run modes. All file output is atomic: data is
//! written to a sibling temp file and renamed into place, so an interrupted
//! run never leaves a truncated CSV behind.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use gate_sim_core::protocol::{run_protocol, sweep_csv_row, GateOutcome, SWEEP_CSV_HEADER};
use gate_sim_core::trajectories::{write_trajectory_log, TrajectoryEngine, TrajectoryRecord};
use gate_sim_core::verify;

use crate::config::{Mode, RunConfig};

/// Exit classification, mapped to process codes in `main` (usage and config
/// problems exit 1 before a run ever starts).
#[derive(Debug)]
pub enum RunError {
    /// Numeric or consistency failures, including I/O on outputs (exit 2).
    Runtime(String),
    /// One or more verification criteria failed (exit 3).
    Verification,
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Runtime(m) => write!(f, "{m}"),
            RunError::Verification => write!(f, "verification failed"),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> RunError {
    RunError::Runtime(e.to_string())
}

/// Write `content` to `path` atomically (temp file + rename).
fn write_atomic(path: &Path, content: &[u8]) -> Result<(), RunError> {
    let tmp: PathBuf = {
        let mut name = path.file_name().unwrap_or_default().to_os_string();
        name.push(format!(".tmp-{}", std::process::id()));
        path.with_file_name(name)
    };
    let mut f = fs::File::create(&tmp)
        .map_err(|e| runtime(format!("cannot create {}: {e}", tmp.display())))?;
    f.write_all(content)
        .and_then(|_| f.sync_all())
        .map_err(|e| runtime(format!("cannot write {}: {e}", tmp.display())))?;
    drop(f);
    fs::rename(&tmp, path)
        .map_err(|e| runtime(format!("cannot rename {} into place: {e}", tmp.display())))
}

pub struct Options {
    pub quiet: bool,
}

pub fn run(config: &RunConfig, opts: &Options) -> Result<(), RunError> {
    match config.mode {
        Mode::Gate => run_gate(config, opts),
        Mode::Sweep => run_sweep(config, opts),
        Mode::Mc => run_mc(config, opts),
        Mode::Verify => run_verify(config, opts),
    }
}

fn run_gate(config: &RunConfig, opts: &Options) -> Result<(), RunError> {
    let outcome = run_protocol(&config.inputs, &config.params, &config.pattern).map_err(runtime)?;
    let csv = format!(
        "{SWEEP_CSV_HEADER}\n{}\n",
        sweep_csv_row(&config.params, &outcome)
    );
    if !opts.quiet {
        print_outcome(&outcome);
        let mut dump = Vec::new();
        gate_sim_core::hilbert::write_amplitude_dump(&outcome.heralded_state, &mut dump)
            .map_err(runtime)?;
        println!("corrected heralded state:");
        print!("{}", String::from_utf8_lossy(&dump));
    }
    print!("{csv}");
    if let Some(path) = &config.output_path {
        write_atomic(Path::new(path), csv.as_bytes())?;
    }
    Ok(())
}

fn print_outcome(outcome: &GateOutcome) {
    println!(
        "pattern {} heralded: fidelity_cz = {:.12}, p_step1 = {:.6}, p_herald = {:.6}, p_total = {:.6}",
        outcome.pattern,
        outcome.fidelity_cz,
        outcome.p_step1,
        outcome.p_herald,
        outcome.p_total()
    );
}

fn run_sweep(config: &RunConfig, opts: &Options) -> Result<(), RunError> {
    // Cartesian product, first axis outermost; deterministic row order.
    let axes_values: Vec<Vec<f64>> = config.sweep_axes.iter().map(|a| a.values()).collect();
    let total: usize = axes_values.iter().map(|v| v.len()).product();
    let points: Vec<Vec<f64>> = (0..total)
        .map(|mut idx| {
            let mut point = Vec::with_capacity(axes_values.len());
            for values in axes_values.iter().rev() {
                point.push(values[idx % values.len()]);
                idx /= values.len();
            }
            point.reverse();
            point
        })
        .collect();

    let rows: Result<Vec<String>, RunError> = points
        .par_iter()
        .map(|point| {
            let mut params = config.params.clone();
            for (axis, value) in config.sweep_axes.iter().zip(point) {
                axis.apply(&mut params, *value);
            }
            let outcome =
                run_protocol(&config.inputs, &params, &config.pattern).map_err(runtime)?;
            Ok(sweep_csv_row(&params, &outcome))
        })
        .collect();
    let rows = rows?;

    let mut csv = String::with_capacity(rows.len() * 128);
    csv.push_str(SWEEP_CSV_HEADER);
    csv.push('\n');
    for row in &rows {
        csv.push_str(row);
        csv.push('\n');
    }
    match &config.output_path {
        Some(path) => write_atomic(Path::new(path), csv.as_bytes())?,
        None => print!("{csv}"),
    }
    if !opts.quiet {
        eprintln!("swept {total} points over {} axes", config.sweep_axes.len());
    }
    Ok(())
}

fn run_mc(config: &RunConfig, opts: &Options) -> Result<(), RunError> {
    let engine = TrajectoryEngine::new(&config.inputs, &config.params).map_err(runtime)?;
    let records: Result<Vec<TrajectoryRecord>, RunError> = (0..config.n_trajectories)
        .into_par_iter()
        .map(|i| {
            engine
                .run(config.base_seed.wrapping_add(i as u64))
                .map_err(runtime)
        })
        .collect();
    let records = records?;

    let survived = records.iter().filter(|r| r.survived_step1).count();
    let heralded = records.iter().filter(|r| r.heralded_pattern.is_some()).count();
    let mean = if survived > 0 {
        heralded as f64 / survived as f64
    } else {
        0.0
    };
    let stderr = if survived > 0 {
        (mean * (1.0 - mean) / survived as f64).sqrt()
    } else {
        0.0
    };
    let closed = gate_sim_core::protocol::success_probability(&config.params).map_err(runtime)?;
    println!(
        "trajectories: {} total, {survived} survived step 1, {heralded} heralded",
        records.len()
    );
    println!(
        "heralding frequency (given step-1 survival): {mean:.6} ± {stderr:.6}; closed form {closed:.6}"
    );

    if let Some(path) = &config.output_path {
        let mut buf = Vec::new();
        write_trajectory_log(&records, &config.inputs, &mut buf).map_err(runtime)?;
        write_atomic(Path::new(path), &buf)?;
        if !opts.quiet {
            eprintln!("trajectory log written to {path}");
        }
    }
    Ok(())
}

fn run_verify(config: &RunConfig, _opts: &Options) -> Result<(), RunError> {
    let results = verify::run_all(config.base_seed);
    let mut all_passed = true;
    for r in &results {
        println!("{}", r.status_line());
        all_passed &= r.passed;
    }
    if all_passed {
        Ok(())
    } else {
        Err(RunError::Verification)
    }
}
