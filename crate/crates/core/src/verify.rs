//! The acceptance suite: every release-gating check with its tolerance
//! pinned, runnable both from the `acceptance` test target and from
//! `gate-sim verify`.

use std::f64::consts::PI;
use std::time::Instant;

use ndarray::Array2;
use num_complex::Complex64;

use crate::dynamics::{
    closed_form_coefficients, lindblad_oracle, p_no_emission, trace_distance, SystemParams,
};
use crate::error::Result;
use crate::hilbert::fidelity;
use crate::linalg;
use crate::optics::{compose_network, reference_netlist_elements, reference_network, Detector};
use crate::protocol::{
    detect_coincidence, per_pattern_probability, reference_heralded_state, run_protocol, step1,
    success_probability, AtomInputs, DetectionPattern, PatternClass,
};
use crate::trajectories::{estimate_heralding, unconditional_average};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Default seed for the stochastic criteria; every run is deterministic.
pub const DEFAULT_SEED: u64 = 42;

/// Reference parameter point used throughout the quantitative criteria.
fn canonical_params() -> SystemParams {
    SystemParams::new(1.0, 0.2, 1.3, 5.0 / 0.2)
}

/// Outcome of one acceptance criterion.
#[derive(Debug, Clone)]
pub struct CriterionResult {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CriterionResult {
    pub fn status_line(&self) -> String {
        format!(
            "criterion {}: {} ... {} ({:.2} s) — {}",
            self.id,
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.seconds,
            self.detail
        )
    }
}

fn run_criterion<F>(id: usize, name: &'static str, f: F) -> CriterionResult
where
    F: FnOnce() -> Result<(bool, String)>,
{
    let start = Instant::now();
    let (passed, detail) = match f() {
        Ok((p, d)) => (p, d),
        Err(e) => (false, format!("error: {e}")),
    };
    CriterionResult {
        id,
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Independent 2×2 oracle for the no-jump block dynamics: the matrix
/// exponential of `−iτ [[0, Ω], [Ω, −iκ]]` applied to `(1, 0)`, returning the
/// unnormalized ground and excited amplitudes (c_g, c_s).
pub fn no_jump_block_oracle(omega: f64, kappa: f64, tau: f64) -> Result<(Complex64, Complex64)> {
    let mut h = Array2::<Complex64>::zeros((2, 2));
    h[[0, 1]] = Complex64::new(omega, 0.0);
    h[[1, 0]] = Complex64::new(omega, 0.0);
    h[[1, 1]] = Complex64::new(0.0, -kappa);
    let u = linalg::expm(&(h * (-I * Complex64::new(tau, 0.0))))?;
    Ok((u[[0, 0]], u[[1, 0]]))
}

/// Criterion 1: closed-form coefficients and no-emission probability agree
/// with the 2×2 matrix-exponential oracle across the damping regimes.
pub fn criterion_1() -> CriterionResult {
    run_criterion(1, "closed-form vs numeric no-jump dynamics", || {
        let started = Instant::now();
        let kappa = 1.0;
        let mut worst = 0.0_f64;
        for omega_ratio in [0.3, 0.5, 1.0, 2.0, 5.0] {
            let omega = omega_ratio * kappa;
            for tau_ratio in [0.1, 0.7, 1.3, 3.0] {
                let tau = tau_ratio / kappa;
                let co = closed_form_coefficients(omega, kappa, tau)?;
                let (cg, cs) = no_jump_block_oracle(omega, kappa, tau)?;
                let norm = (cg.norm_sqr() + cs.norm_sqr()).sqrt();
                worst = worst.max((co.a - cg / norm).norm());
                worst = worst.max((co.b - cs / norm * I).norm());
                let p = p_no_emission(omega, kappa, tau)?;
                worst = worst.max((p - (cg.norm_sqr() + cs.norm_sqr())).abs());
            }
        }
        let elapsed = started.elapsed().as_secs_f64();
        let ok = worst < 1e-10 && elapsed < 1.0;
        Ok((ok, format!("max deviation {worst:.2e} (limit 1e-10), {elapsed:.3} s (limit 1 s)")))
    })
}

/// Criterion 2: the detector-mode matrix is unitary and the calibrated
/// netlist reproduces it.
pub fn criterion_2() -> CriterionResult {
    run_criterion(2, "detector network unitarity and calibration", || {
        let reference = reference_network();
        let residual = reference.unitarity_residual();
        let composed = compose_network(&reference_netlist_elements())?;
        let diff = composed.max_abs_diff(&reference);
        let ok = residual < 1e-12 && diff < 1e-12;
        Ok((ok, format!("unitarity residual {residual:.2e}, netlist deviation {diff:.2e} (limits 1e-12)")))
    })
}

pub struct HeraldedStateChecks {
    pub min_fidelity_a: f64,
    pub min_fidelity_b: f64,
    pub max_partner_diff: f64,
}

pub fn heralded_state_checks(fock_cutoff: u32) -> Result<HeraldedStateChecks> {
    let mut params = canonical_params();
    params.fock_cutoff = fock_cutoff;
    let mut min_fa = 1.0_f64;
    let mut min_fb = 1.0_f64;
    let mut max_diff = 0.0_f64;
    for seed in 0..100u64 {
        let inputs = pseudo_random_inputs(seed);
        let (state, _) = step1(&inputs, &params)?;
        let d13 = DetectionPattern::of(&[Detector::D1, Detector::D3]);
        let d24 = DetectionPattern::of(&[Detector::D2, Detector::D4]);
        let d14 = DetectionPattern::of(&[Detector::D1, Detector::D4]);
        let d23 = DetectionPattern::of(&[Detector::D2, Detector::D3]);
        let (h13, _) = detect_coincidence(&state, &d13, &params)?;
        let (h24, _) = detect_coincidence(&state, &d24, &params)?;
        let (h14, _) = detect_coincidence(&state, &d14, &params)?;
        let (h23, _) = detect_coincidence(&state, &d23, &params)?;
        let ref_a = reference_heralded_state(&inputs, PatternClass::A)?;
        let ref_b = reference_heralded_state(&inputs, PatternClass::B)?;
        min_fa = min_fa.min(fidelity(&h13, &ref_a)?);
        min_fb = min_fb.min(fidelity(&h14, &ref_b)?);
        max_diff = max_diff.max(h13.max_abs_diff(&h24));
        max_diff = max_diff.max(h14.max_abs_diff(&h23));
    }
    Ok(HeraldedStateChecks {
        min_fidelity_a: min_fa,
        min_fidelity_b: min_fb,
        max_partner_diff: max_diff,
    })
}

/// Criterion 3: coincidence projections produce the exact conditional states,
/// and paired patterns agree.
pub fn criterion_3() -> CriterionResult {
    run_criterion(3, "heralded-state exactness", || {
        let checks = heralded_state_checks(1)?;
        let ok = 1.0 - checks.min_fidelity_a < 1e-10
            && 1.0 - checks.min_fidelity_b < 1e-10
            && checks.max_partner_diff < 1e-12;
        Ok((
            ok,
            format!(
                "min fidelities 1-{:.1e} / 1-{:.1e} (limit 1e-10), partner deviation {:.1e} (limit 1e-12)",
                1.0 - checks.min_fidelity_a,
                1.0 - checks.min_fidelity_b,
                checks.max_partner_diff
            ),
        ))
    })
}

pub fn truth_table_min_fidelity(fock_cutoff: u32) -> Result<f64> {
    let mut params = canonical_params();
    params.fock_cutoff = fock_cutoff;
    let inputs_set = [
        AtomInputs::basis(false, false),
        AtomInputs::basis(false, true),
        AtomInputs::basis(true, false),
        AtomInputs::basis(true, true),
        AtomInputs::uniform(),
    ];
    let mut min_f = 1.0_f64;
    for inputs in &inputs_set {
        for pattern in DetectionPattern::heralding_patterns() {
            let outcome = run_protocol(inputs, &params, &pattern)?;
            min_f = min_f.min(outcome.fidelity_cz);
        }
    }
    Ok(min_f)
}

/// Criterion 4: the gate reproduces the controlled-phase truth table for the
/// four basis inputs and the uniform superposition, on every pattern.
pub fn criterion_4() -> CriterionResult {
    run_criterion(4, "controlled-phase truth table", || {
        let min_f = truth_table_min_fidelity(1)?;
        let ok = 1.0 - min_f < 1e-9;
        Ok((ok, format!("min fidelity 1-{:.1e} (limit 1e-9)", 1.0 - min_f)))
    })
}

pub struct SuccessProbabilityChecks {
    pub max_relative_error: f64,
    pub total_probability: f64,
    pub closed_form_total: f64,
    pub mc_mean: f64,
    pub mc_stderr: f64,
    pub mc_within_3_sigma: bool,
}

pub fn success_probability_checks(
    fock_cutoff: u32,
    n_mc: usize,
    base_seed: u64,
) -> Result<SuccessProbabilityChecks> {
    let mut params = canonical_params();
    params.fock_cutoff = fock_cutoff;
    let inputs = AtomInputs::uniform();
    let (state, _) = step1(&inputs, &params)?;
    let per_pattern = per_pattern_probability(&params)?;
    let mut max_rel = 0.0_f64;
    let mut total = 0.0_f64;
    for pattern in DetectionPattern::heralding_patterns() {
        let (_, prob) = detect_coincidence(&state, &pattern, &params)?;
        max_rel = max_rel.max(((prob - per_pattern) / per_pattern).abs());
        total += prob;
    }
    let closed_total = success_probability(&params)?;
    let est = estimate_heralding(&inputs, &params, n_mc, base_seed)?;
    let within = (est.mean - closed_total).abs() <= 3.0 * est.stderr;
    Ok(SuccessProbabilityChecks {
        max_relative_error: max_rel,
        total_probability: total,
        closed_form_total: closed_total,
        mc_mean: est.mean,
        mc_stderr: est.stderr,
        mc_within_3_sigma: within,
    })
}

/// Criterion 5: per-pattern probabilities match the closed-form weight, the
/// four-pattern total matches the success probability, and the Monte Carlo
/// heralding frequency lands within 3 standard errors at n = 10⁵.
pub fn criterion_5(base_seed: u64) -> CriterionResult {
    run_criterion(5, "success probability, closed form vs Monte Carlo", move || {
        let started = Instant::now();
        let checks = success_probability_checks(1, 100_000, base_seed)?;
        let elapsed = started.elapsed().as_secs_f64();
        let total_ok =
            ((checks.total_probability - checks.closed_form_total) / checks.closed_form_total)
                .abs()
                < 1e-8;
        let ok = checks.max_relative_error < 1e-8
            && total_ok
            && checks.mc_within_3_sigma
            && elapsed < 60.0;
        Ok((
            ok,
            format!(
                "per-pattern rel err {:.1e} (limit 1e-8), MC {:.5}±{:.5} vs {:.5}, {elapsed:.1} s (limit 60 s)",
                checks.max_relative_error, checks.mc_mean, checks.mc_stderr, checks.closed_form_total
            ),
        ))
    })
}

/// Criterion 6: gate fidelity is flat over an 8×8 grid of propagation phases.
pub fn criterion_6() -> CriterionResult {
    run_criterion(6, "phase insensitivity", || {
        let inputs = AtomInputs::uniform();
        let mut spread = 0.0_f64;
        for pattern in [
            DetectionPattern::of(&[Detector::D1, Detector::D3]),
            DetectionPattern::of(&[Detector::D2, Detector::D3]),
        ] {
            let mut min_f = f64::INFINITY;
            let mut max_f = f64::NEG_INFINITY;
            for i in 0..8 {
                for j in 0..8 {
                    let mut params = canonical_params();
                    params.phi1 = 2.0 * PI * i as f64 / 8.0;
                    params.phi2 = 2.0 * PI * j as f64 / 8.0;
                    let outcome = run_protocol(&inputs, &params, &pattern)?;
                    min_f = min_f.min(outcome.fidelity_cz);
                    max_f = max_f.max(outcome.fidelity_cz);
                }
            }
            spread = spread.max(max_f - min_f);
        }
        let ok = spread < 1e-10;
        Ok((ok, format!("fidelity spread {spread:.2e} over 8×8 phase grid (limit 1e-10)")))
    })
}

/// Criterion 7: photon loss leaves heralded states untouched and scales the
/// heralding frequency by (1−η)².
pub fn criterion_7(base_seed: u64) -> CriterionResult {
    run_criterion(7, "loss model", move || {
        let inputs = AtomInputs::uniform();
        let pattern = DetectionPattern::of(&[Detector::D1, Detector::D3]);
        let lossless = {
            let params = canonical_params();
            run_protocol(&inputs, &params, &pattern)?
        };
        let p0 = success_probability(&canonical_params())?;
        let mut max_state_drift = 0.0_f64;
        let mut all_within = true;
        let mut detail = String::new();
        for eta in [0.0, 0.3, 0.7] {
            let mut params = canonical_params();
            params.eta = eta;
            let outcome = run_protocol(&inputs, &params, &pattern)?;
            max_state_drift = max_state_drift
                .max(outcome.heralded_state.max_abs_diff(&lossless.heralded_state))
                .max((outcome.fidelity_cz - lossless.fidelity_cz).abs());
            let est = estimate_heralding(&inputs, &params, 30_000, base_seed)?;
            let expected = (1.0 - eta) * (1.0 - eta) * p0;
            let within = (est.mean - expected).abs() <= 3.0 * est.stderr.max(f64::MIN_POSITIVE);
            all_within &= within;
            detail.push_str(&format!("η={eta}: {:.4}±{:.4} vs {:.4}; ", est.mean, est.stderr, expected));
        }
        let ok = max_state_drift < 1e-10 && all_within;
        detail.push_str(&format!("state drift {max_state_drift:.1e} (limit 1e-10)"));
        Ok((ok, detail))
    })
}

/// Criterion 8: the trajectory average matches the master-equation oracle at
/// mid-drive and at the end of the detection window.
///
/// The trace-distance tolerance (5e−3) is asserted at n = 4×10⁵ trajectories:
/// the naive trajectory average is unbiased but its trace-distance noise
/// floor at 10⁴ samples sits at 4–11e−3 for any parameter point with
/// meaningful jump activity, so the tolerance — the substance of the check —
/// is kept and the sample count raised. The 10⁴-trajectory distance is
/// reported alongside for reference.
pub fn criterion_8(base_seed: u64) -> CriterionResult {
    run_criterion(8, "unraveling vs master equation", move || {
        let started = Instant::now();
        let params = canonical_params();
        let inputs = AtomInputs::uniform();
        let space = crate::hilbert::build_space(2, 4, params.fock_cutoff)?;
        let initial = crate::protocol::prepare_inputs(&inputs, &space)?;
        let n = 400_000;
        let n_reference = 10_000;

        let mut worst = 0.0_f64;
        let mut details = Vec::new();
        let horizons = [
            (params.tau / 2.0, 400usize),
            (params.tau + params.t_detect, 1000usize),
        ];
        for (horizon, steps) in horizons {
            let oracle = lindblad_oracle(&initial, &params, horizon, steps)?;
            let avg = unconditional_average(&inputs, &params, n, horizon, base_seed)?;
            let dist = trace_distance(&avg, &oracle)?;
            let avg_ref = unconditional_average(&inputs, &params, n_reference, horizon, base_seed)?;
            let dist_ref = trace_distance(&avg_ref, &oracle)?;
            details.push(format!("t={horizon:.2}: {dist:.2e} (at 1e4: {dist_ref:.2e})"));
            worst = worst.max(dist);
        }
        let elapsed = started.elapsed().as_secs_f64();
        let ok = worst < 5e-3 && elapsed < 120.0;
        Ok((
            ok,
            format!(
                "trace distances {} (limit 5e-3 at n=4e5), {elapsed:.1} s (limit 120 s)",
                details.join(", ")
            ),
        ))
    })
}

/// Criterion 9: raising the Fock cutoff to 2 changes nothing that criteria
/// 3–5 report, beyond 1e−10.
pub fn criterion_9(base_seed: u64) -> CriterionResult {
    run_criterion(9, "truncation sufficiency", move || {
        let mut worst = 0.0_f64;

        let c3_lo = heralded_state_checks(1)?;
        let c3_hi = heralded_state_checks(2)?;
        worst = worst.max((c3_lo.min_fidelity_a - c3_hi.min_fidelity_a).abs());
        worst = worst.max((c3_lo.min_fidelity_b - c3_hi.min_fidelity_b).abs());
        worst = worst.max((c3_lo.max_partner_diff - c3_hi.max_partner_diff).abs());

        let c4_lo = truth_table_min_fidelity(1)?;
        let c4_hi = truth_table_min_fidelity(2)?;
        worst = worst.max((c4_lo - c4_hi).abs());

        let n_mc = 100_000;
        let c5_lo = success_probability_checks(1, n_mc, base_seed)?;
        let c5_hi = success_probability_checks(2, n_mc, base_seed)?;
        worst = worst.max((c5_lo.total_probability - c5_hi.total_probability).abs());
        worst = worst.max((c5_lo.closed_form_total - c5_hi.closed_form_total).abs());
        worst = worst.max((c5_lo.mc_mean - c5_hi.mc_mean).abs());

        let ok = worst < 1e-10;
        Ok((ok, format!("max change at fock_cutoff 2: {worst:.2e} (limit 1e-10)")))
    })
}

/// Run all nine criteria.
pub fn run_all(base_seed: u64) -> Vec<CriterionResult> {
    vec![
        criterion_1(),
        criterion_2(),
        criterion_3(),
        criterion_4(),
        criterion_5(base_seed),
        criterion_6(),
        criterion_7(base_seed),
        criterion_8(base_seed),
        criterion_9(base_seed),
    ]
}

fn pseudo_random_inputs(seed: u64) -> AtomInputs {
    let mut s = seed as f64 * 0.0239 + 0.31;
    let mut draw = || {
        s = (s * 997.0 + 0.618).fract();
        s
    };
    let t1 = draw() * PI;
    let p1 = draw() * 2.0 * PI;
    let t2 = draw() * PI;
    let p2 = draw() * 2.0 * PI;
    AtomInputs::new(
        Complex64::new(t1.cos(), 0.0),
        Complex64::from_polar(t1.sin(), p1),
        Complex64::new(t2.cos(), 0.0),
        Complex64::from_polar(t2.sin(), p2),
    )
}
