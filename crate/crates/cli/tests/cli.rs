//! End-to-end tests of the `gate-sim` binary: config handling, exit codes,
//! output formats, and byte-level reproducibility.

use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};
use std::sync::atomic::{AtomicU64, Ordering};

static COUNTER: AtomicU64 = AtomicU64::new(0);

fn scratch_dir() -> PathBuf {
    let dir = std::env::temp_dir().join(format!(
        "gate-sim-test-{}-{}",
        std::process::id(),
        COUNTER.fetch_add(1, Ordering::SeqCst)
    ));
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn gate_sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gate-sim"))
        .args(args)
        .output()
        .expect("binary runs")
}

const BASE_CONFIG: &str = "\
[run]
mode = gate
[params]
omega = 1.0
kappa = 0.2
tau = 1.3
t_detect = 25.0
";

#[test]
fn missing_config_flag_is_usage_error() {
    let out = gate_sim(&[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--config"));
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = gate_sim(&["--frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_error_reports_position_and_exits_1() {
    let dir = scratch_dir();
    let cfg = dir.join("bad.cfg");
    fs::write(&cfg, format!("{BASE_CONFIG}eta = 1.5\n")).unwrap();
    let out = gate_sim(&["--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("eta") && err.contains("line 8"), "stderr: {err}");
}

#[test]
fn gate_mode_reports_unit_fidelity() {
    let dir = scratch_dir();
    let cfg = dir.join("gate.cfg");
    fs::write(&cfg, BASE_CONFIG).unwrap();
    let csv_path = dir.join("out.csv");
    let out = gate_sim(&[
        "--config",
        cfg.to_str().unwrap(),
        "--output",
        csv_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));

    let csv = fs::read_to_string(&csv_path).unwrap();
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("omega,kappa,"));
    assert!(header.ends_with(",fidelity_cz"));
    let row = lines.next().unwrap();
    let fidelity: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
    assert!((fidelity - 1.0).abs() < 1e-9, "fidelity {fidelity}");
    assert!(row.contains(",D1D3,"));
}

#[test]
fn sweep_mode_writes_expected_row_count_and_is_reproducible() {
    let dir = scratch_dir();
    let cfg = dir.join("sweep.cfg");
    fs::write(
        &cfg,
        format!(
            "{}[sweep]\naxis = eta 0.0 0.4 3 linear\naxis = phi1 0.0 3.0 3 linear\n",
            BASE_CONFIG.replace("mode = gate", "mode = sweep")
        ),
    )
    .unwrap();
    let out_a = dir.join("a.csv");
    let out_b = dir.join("b.csv");
    for path in [&out_a, &out_b] {
        let out = gate_sim(&[
            "--config",
            cfg.to_str().unwrap(),
            "--output",
            path.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    let a = fs::read(&out_a).unwrap();
    let b = fs::read(&out_b).unwrap();
    assert_eq!(a, b, "sweep output must be byte-identical across runs");

    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 1 + 9, "header plus 3x3 rows");
    // eta is the outer axis: first three rows share eta = 0
    let rows: Vec<&str> = text.lines().skip(1).collect();
    for row in &rows[0..3] {
        let eta_field = row.split(',').nth(6).unwrap();
        assert_eq!(eta_field, "0.0000000000000000e0");
    }
}

#[test]
fn sweep_golden_row_format() {
    // freeze the exact byte format of a one-point sweep so accidental
    // formatting drift is caught
    let dir = scratch_dir();
    let cfg = dir.join("golden.cfg");
    fs::write(
        &cfg,
        format!(
            "{}[sweep]\naxis = eta 0.5 0.5 1 linear\n",
            BASE_CONFIG.replace("mode = gate", "mode = sweep")
        ),
    )
    .unwrap();
    let out_path = dir.join("golden.csv");
    let out = gate_sim(&[
        "--config",
        cfg.to_str().unwrap(),
        "--output",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = fs::read_to_string(&out_path).unwrap();
    let expected_header =
        "omega,kappa,tau,t_detect,phi1,phi2,eta,pattern,p_step1,p_herald,p_total,fidelity_cz";
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), expected_header);
    let row = lines.next().unwrap();
    assert_eq!(
        row,
        "1.0000000000000000e0,2.0000000000000001e-1,1.3000000000000000e0,\
         2.5000000000000000e1,0.0000000000000000e0,0.0000000000000000e0,\
         5.0000000000000000e-1,D1D3,6.8272366728089384e-1,2.3756994599870903e-2,\
         1.6219462476796256e-2,1.0000000000000000e0"
    );
}

#[test]
fn mc_mode_writes_deterministic_log() {
    let dir = scratch_dir();
    let cfg = dir.join("mc.cfg");
    fs::write(
        &cfg,
        BASE_CONFIG.replace(
            "mode = gate",
            "mode = mc\nn_trajectories = 300\nbase_seed = 7",
        ),
    )
    .unwrap();
    let log_a = dir.join("a.jsonl");
    let log_b = dir.join("b.jsonl");
    for path in [&log_a, &log_b] {
        let out = gate_sim(&[
            "--config",
            cfg.to_str().unwrap(),
            "--output",
            path.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
        let stdout = String::from_utf8_lossy(&out.stdout);
        assert!(stdout.contains("heralding frequency"), "stdout: {stdout}");
    }
    let a = fs::read(&log_a).unwrap();
    assert_eq!(a, fs::read(&log_b).unwrap(), "trajectory log must be reproducible");

    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 300);
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first["seed"], 7);
    assert!(first["survived_step1"].is_boolean());
}

#[test]
fn seed_flag_overrides_config() {
    let dir = scratch_dir();
    let cfg = dir.join("mc.cfg");
    fs::write(
        &cfg,
        BASE_CONFIG.replace(
            "mode = gate",
            "mode = mc\nn_trajectories = 50\nbase_seed = 7",
        ),
    )
    .unwrap();
    let log = dir.join("s.jsonl");
    let out = gate_sim(&[
        "--config",
        cfg.to_str().unwrap(),
        "--output",
        log.to_str().unwrap(),
        "--seed",
        "99",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = fs::read_to_string(&log).unwrap();
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first["seed"], 99);
}

#[test]
fn jobs_flag_does_not_change_results() {
    let dir = scratch_dir();
    let cfg = dir.join("mc.cfg");
    fs::write(
        &cfg,
        BASE_CONFIG.replace(
            "mode = gate",
            "mode = mc\nn_trajectories = 400\nbase_seed = 11",
        ),
    )
    .unwrap();
    let log_1 = dir.join("j1.jsonl");
    let log_4 = dir.join("j4.jsonl");
    for (path, jobs) in [(&log_1, "1"), (&log_4, "4")] {
        let out = gate_sim(&[
            "--config",
            cfg.to_str().unwrap(),
            "--output",
            path.to_str().unwrap(),
            "--jobs",
            jobs,
        ]);
        assert_eq!(out.status.code(), Some(0));
    }
    assert_eq!(
        fs::read(&log_1).unwrap(),
        fs::read(&log_4).unwrap(),
        "results must not depend on worker count"
    );
}

#[test]
fn jobs_env_fallback_is_validated() {
    let dir = scratch_dir();
    let cfg = dir.join("gate.cfg");
    fs::write(&cfg, BASE_CONFIG).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_gate-sim"))
        .args(["--config", cfg.to_str().unwrap()])
        .env("GATE_SIM_JOBS", "not-a-number")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("GATE_SIM_JOBS"));

    let out = Command::new(env!("CARGO_BIN_EXE_gate-sim"))
        .args(["--config", cfg.to_str().unwrap(), "--quiet"])
        .env("GATE_SIM_JOBS", "2")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn unwritable_output_exits_2() {
    let dir = scratch_dir();
    let cfg = dir.join("gate.cfg");
    fs::write(&cfg, BASE_CONFIG).unwrap();
    let bogus = dir.join("no-such-dir").join("out.csv");
    let out = gate_sim(&[
        "--config",
        cfg.to_str().unwrap(),
        "--output",
        bogus.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

/// Full verification through the binary; this reruns the whole acceptance
/// suite (~2 minutes), so it is ignored in the default test pass, which
/// already runs the same checks via the `acceptance` target.
#[test]
#[ignore]
fn verify_mode_passes_and_exits_0() {
    let dir = scratch_dir();
    let cfg = dir.join("verify.cfg");
    fs::write(&cfg, BASE_CONFIG.replace("mode = gate", "mode = verify")).unwrap();
    let out = gate_sim(&["--config", cfg.to_str().unwrap()]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "stdout: {stdout}");
    assert_eq!(stdout.matches("PASS").count(), 9, "stdout: {stdout}");
}
