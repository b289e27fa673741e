//! Monte Carlo quantum-jump unraveling of the gate protocol: waiting times
//! are drawn from the no-jump norm decay by inverse-transform sampling on a
//! cached survival curve, detector channels from the relative jump-operator
//! weights. Trajectories reproduce the heralding statistics and their
//! unconditional average reproduces the master-equation oracle.
//!
//! Reproducibility contract: all randomness comes from ChaCha12 streams
//! seeded as `base_seed + trajectory_index`, so campaigns are bit-identical
//! regardless of thread count or scheduling. Within a trajectory the draw
//! order is fixed: step-1 waiting time, (channel), step-2 waiting time and
//! channel per jump, then one loss coin per recorded step-2 click.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::dynamics::{
    no_jump_generator, propagator, rk4_evolve, DensityMatrix, SystemParams,
};
use crate::error::{Error, Result};
use crate::hilbert::{build_space, LinearOperator, SpaceDescriptor, StateVector};
use crate::linalg::CMatrix;
use crate::optics::{jump_operators, reference_network, Detector};
use crate::protocol::{apply_correction, ideal_cz, AtomInputs, DetectionPattern};

/// Number of uniform knots in a cached norm-decay curve.
pub const CURVE_KNOTS: usize = 1024;

/// Bisection tolerance for jump times.
pub const TIME_TOLERANCE: f64 = 1e-10;

/// One sampled trajectory.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub seed: u64,
    /// Emission events as (absolute time, detector), strictly increasing.
    pub events: Vec<(f64, Detector)>,
    /// True when no photon left either cavity during the step-1 drive.
    pub survived_step1: bool,
    /// The heralding pair formed by the loss-surviving step-2 clicks, if any.
    pub heralded_pattern: Option<DetectionPattern>,
    pub final_state: StateVector,
}

impl TrajectoryRecord {
    /// Fidelity of the corrected heralded state against the ideal gate
    /// output; `None` for non-heralded trajectories.
    pub fn heralded_fidelity(&self, inputs: &AtomInputs) -> Result<Option<f64>> {
        let Some(pattern) = &self.heralded_pattern else {
            return Ok(None);
        };
        let reduced = crate::hilbert::project_vacuum(&self.final_state, 1e-9)?.normalized()?;
        let corrected = apply_correction(&reduced, pattern)?;
        let ideal = ideal_cz(inputs)?;
        Ok(Some(crate::hilbert::fidelity(&corrected, &ideal)?))
    }
}

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateWithError {
    pub mean: f64,
    /// Bernoulli MLE standard error, `√(p̂(1−p̂)/n)`.
    pub stderr: f64,
    pub n_samples: usize,
}

/// Survival curve S(t) on uniform knots with monotone cubic (Fritsch-Carlson)
/// interpolation; inverted by bisection for waiting-time sampling.
#[derive(Debug, Clone)]
pub struct NormCurve {
    horizon: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl NormCurve {
    /// Build from knot values; tiny non-monotone noise is clipped.
    pub fn from_values(horizon: f64, mut values: Vec<f64>) -> Result<NormCurve> {
        if values.len() < 2 {
            return Err(Error::argument("norm curve needs at least two knots"));
        }
        if !(horizon > 0.0) {
            return Err(Error::argument("norm curve needs a positive horizon"));
        }
        for i in 1..values.len() {
            if values[i] > values[i - 1] {
                values[i] = values[i - 1];
            }
        }
        let n = values.len();
        let h = horizon / (n - 1) as f64;
        let secants: Vec<f64> = (0..n - 1).map(|k| (values[k + 1] - values[k]) / h).collect();
        let mut slopes = vec![0.0; n];
        slopes[0] = secants[0];
        slopes[n - 1] = secants[n - 2];
        for k in 1..n - 1 {
            let (d0, d1) = (secants[k - 1], secants[k]);
            slopes[k] = if d0 * d1 <= 0.0 { 0.0 } else { 0.5 * (d0 + d1) };
        }
        // Fritsch-Carlson monotonicity limiter
        for k in 0..n - 1 {
            let d = secants[k];
            if d == 0.0 {
                slopes[k] = 0.0;
                slopes[k + 1] = 0.0;
                continue;
            }
            let a = slopes[k] / d;
            let b = slopes[k + 1] / d;
            let r = a * a + b * b;
            if r > 9.0 {
                let s = 3.0 / r.sqrt();
                slopes[k] = s * a * d;
                slopes[k + 1] = s * b * d;
            }
        }
        Ok(NormCurve {
            horizon,
            values,
            slopes,
        })
    }

    pub fn end_value(&self) -> f64 {
        *self.values.last().expect("nonempty")
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.values.len();
        let h = self.horizon / (n - 1) as f64;
        if t <= 0.0 {
            return self.values[0];
        }
        if t >= self.horizon {
            return self.end_value();
        }
        let k = ((t / h) as usize).min(n - 2);
        let x = (t - k as f64 * h) / h;
        let (y0, y1) = (self.values[k], self.values[k + 1]);
        let (m0, m1) = (self.slopes[k] * h, self.slopes[k + 1] * h);
        let x2 = x * x;
        let x3 = x2 * x;
        y0 * (2.0 * x3 - 3.0 * x2 + 1.0)
            + m0 * (x3 - 2.0 * x2 + x)
            + y1 * (-2.0 * x3 + 3.0 * x2)
            + m1 * (x3 - x2)
    }

    /// Solve S(t*) = target for decreasing S; `None` when the curve never
    /// drops to `target` within the horizon.
    pub fn invert(&self, target: f64) -> Option<f64> {
        if target > self.values[0] {
            return Some(0.0);
        }
        if target < self.end_value() {
            return None;
        }
        // locate bracketing knot interval, then bisect the interpolant
        let n = self.values.len();
        let h = self.horizon / (n - 1) as f64;
        let mut lo_idx = 0;
        let mut hi_idx = n - 1;
        while hi_idx - lo_idx > 1 {
            let mid = (lo_idx + hi_idx) / 2;
            if self.values[mid] >= target {
                lo_idx = mid;
            } else {
                hi_idx = mid;
            }
        }
        let mut lo = lo_idx as f64 * h;
        let mut hi = hi_idx as f64 * h;
        while hi - lo > TIME_TOLERANCE {
            let mid = 0.5 * (lo + hi);
            if self.eval(mid) >= target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(0.5 * (lo + hi))
    }
}

/// A sampled quantum jump.
#[derive(Debug, Clone)]
pub struct Jump {
    pub time: f64,
    pub detector: Detector,
    pub post_state: StateVector,
}

/// Outcome of sampling one driven (phase-A) segment.
enum DrivenSegment {
    /// Survived the whole segment; carries the unnormalized survivor state.
    NoJump(StateVector),
    Jump {
        t_rel: f64,
        #[allow(dead_code)]
        channel: usize,
        post: StateVector,
    },
}

/// Per-horizon precomputation shared by all trajectories of a campaign.
#[derive(Debug, Clone)]
pub struct HorizonCache {
    horizon: f64,
    end_a: f64,
    survival: f64,
    no_jump_state: StateVector,
}

enum KnotStepper {
    /// One-knot dense propagator (dimension ≤ 300).
    Dense(CMatrix),
    /// Diagonal generator: per-state amplitude factors for one knot.
    Diagonal(Vec<Complex64>),
    /// Large non-diagonal spaces: RK4 substeps per knot.
    Rk4 { substeps: usize },
}

/// Waiting-time and channel sampler for a fixed (jump operators, generator,
/// horizon) triple; caching the one-knot propagator makes repeated draws from
/// the same dynamics cheap.
pub struct JumpSampler {
    jump_ops: Vec<LinearOperator>,
    generator: LinearOperator,
    horizon: f64,
    dt: f64,
    stepper: KnotStepper,
}

fn diagonal_factors(generator: &LinearOperator, dt: f64) -> Option<Vec<Complex64>> {
    let dim = generator.dimension();
    let mut diag = vec![Complex64::ZERO; dim];
    for (r, c, v) in generator.entries() {
        if r != c {
            if v != Complex64::ZERO {
                return None;
            }
            continue;
        }
        diag[r] = v;
    }
    let minus_i = Complex64::new(0.0, -1.0);
    Some(diag.iter().map(|g| (minus_i * g * dt).exp()).collect())
}

impl JumpSampler {
    pub fn new(
        jump_ops: &[LinearOperator],
        generator: &LinearOperator,
        horizon: f64,
    ) -> Result<JumpSampler> {
        if jump_ops.is_empty() {
            return Err(Error::argument("need at least one jump operator"));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::argument("sampler horizon must be positive"));
        }
        for op in jump_ops {
            if op.space() != generator.space() {
                return Err(Error::argument("jump operators and generator on different spaces"));
            }
        }
        let dt = horizon / CURVE_KNOTS as f64;
        let stepper = if let Some(factors) = diagonal_factors(generator, dt) {
            KnotStepper::Diagonal(factors)
        } else if generator.dimension() <= crate::dynamics::DENSE_EXP_MAX_DIM {
            KnotStepper::Dense(propagator(generator, dt)?)
        } else {
            KnotStepper::Rk4 { substeps: 4 }
        };
        Ok(JumpSampler {
            jump_ops: jump_ops.to_vec(),
            generator: generator.clone(),
            horizon,
            dt,
            stepper,
        })
    }

    fn step_knot(&self, state: &StateVector) -> Result<StateVector> {
        match &self.stepper {
            KnotStepper::Dense(u) => Ok(crate::dynamics::apply_dense(u, state)),
            KnotStepper::Diagonal(f) => {
                let mut out = state.clone();
                for (amp, factor) in out.amplitudes_mut().iter_mut().zip(f) {
                    *amp *= factor;
                }
                Ok(out)
            }
            KnotStepper::Rk4 { substeps } => rk4_evolve(state, &self.generator, self.dt, *substeps),
        }
    }

    fn refine(&self, knot_state: &StateVector, delta: f64) -> Result<StateVector> {
        if delta == 0.0 {
            return Ok(knot_state.clone());
        }
        match &self.stepper {
            KnotStepper::Diagonal(_) => {
                let minus_i = Complex64::new(0.0, -1.0);
                let mut out = knot_state.clone();
                for (r, c, v) in self.generator.entries() {
                    if r == c {
                        out.amplitudes_mut()[r] =
                            knot_state.amplitudes()[r] * (minus_i * v * delta).exp();
                    }
                }
                Ok(out)
            }
            _ => rk4_evolve(knot_state, &self.generator, delta, 4),
        }
    }

    /// Draw the next jump for a normalized `state`, or `None` when the state
    /// survives the whole horizon without emitting.
    pub fn sample<R: Rng>(&self, state: &StateVector, rng: &mut R) -> Result<Option<Jump>> {
        if (state.norm_sqr() - 1.0).abs() > 1e-9 {
            return Err(Error::argument("sample requires a normalized state"));
        }
        let u: f64 = rng.gen();

        // cache the norm-decay knots for this state
        let mut knot_states = Vec::with_capacity(CURVE_KNOTS + 1);
        let mut values = Vec::with_capacity(CURVE_KNOTS + 1);
        knot_states.push(state.clone());
        values.push(state.norm_sqr());
        for k in 0..CURVE_KNOTS {
            let next = self.step_knot(&knot_states[k])?;
            values.push(next.norm_sqr());
            knot_states.push(next);
        }
        if u < *values.last().expect("nonempty") {
            return Ok(None);
        }
        let curve = NormCurve::from_values(self.horizon, values)?;
        let time = curve
            .invert(u)
            .ok_or_else(|| Error::numeric("survival inversion failed"))?;
        let k = ((time / self.dt) as usize).min(CURVE_KNOTS - 1);
        let at_jump = self.refine(&knot_states[k], time - k as f64 * self.dt)?;

        let weights: Vec<f64> = self
            .jump_ops
            .iter()
            .map(|op| op.apply(&at_jump).map(|s| s.norm_sqr()))
            .collect::<Result<_>>()?;
        let total: f64 = weights.iter().sum();
        if total < 1e-150 {
            return Err(Error::numeric(
                "all jump amplitudes vanish at the sampled jump time",
            ));
        }
        let mut draw = rng.gen::<f64>() * total;
        let mut channel = weights.len() - 1;
        for (j, w) in weights.iter().enumerate() {
            if draw < *w {
                channel = j;
                break;
            }
            draw -= w;
        }
        let post_state = self.jump_ops[channel].apply(&at_jump)?.normalized()?;
        Ok(Some(Jump {
            time,
            detector: Detector::from_index(channel)?,
            post_state,
        }))
    }
}

/// One-shot form of [`JumpSampler::sample`]: draw the waiting time from
/// `S(t) = ‖exp(−iGt)ψ‖²`, pick the detector with probability ∝ `‖b_jψ(t)‖²`,
/// and return the renormalized post-jump state.
pub fn sample_jump<R: Rng>(
    state: &StateVector,
    jump_ops: &[LinearOperator],
    generator: &LinearOperator,
    horizon: f64,
    rng: &mut R,
) -> Result<Option<Jump>> {
    JumpSampler::new(jump_ops, generator, horizon)?.sample(state, rng)
}

/// Photon-number histogram of a state: weights[n] = Σ_{n_i = n} |ψ_i|².
fn photon_histogram(state: &StateVector) -> Vec<f64> {
    let space = state.space();
    let mut weights = vec![0.0; 4 * space.fock_cutoff() as usize + 1];
    for (i, amp) in state.amplitudes().iter().enumerate() {
        if *amp != Complex64::ZERO {
            weights[space.total_photons(i) as usize] += amp.norm_sqr();
        }
    }
    weights
}

/// Exact survival of a decay-only segment: `Σ_n w_n e^{−2κnt}`.
fn decay_survival(weights: &[f64], kappa: f64, t: f64) -> f64 {
    weights
        .iter()
        .enumerate()
        .map(|(n, w)| w * (-2.0 * kappa * n as f64 * t).exp())
        .sum()
}

/// Apply `e^{−κ n̂ t}` in place (unnormalized decay evolution).
fn decay_evolve(state: &mut StateVector, kappa: f64, t: f64) {
    let space = Arc::clone(state.space());
    for (i, amp) in state.amplitudes_mut().iter_mut().enumerate() {
        if *amp != Complex64::ZERO {
            let n = space.total_photons(i);
            if n > 0 {
                *amp *= Complex64::new((-kappa * n as f64 * t).exp(), 0.0);
            }
        }
    }
}

/// Precomputed machinery for running many trajectories of the same
/// (inputs, params) campaign. Immutable once built; share across threads.
pub struct TrajectoryEngine {
    inputs: AtomInputs,
    params: SystemParams,
    joint_space: Arc<SpaceDescriptor>,
    single_dim: usize,
    /// Maps a (system-1 index, system-2 index) pair, flattened as
    /// `i1 * single_dim + i2`, to the official atom-major joint index.
    sys_to_joint: Vec<usize>,
    /// Per-system knot states over [0, τ] (1025 knots each).
    knots1: Vec<Vec<Complex64>>,
    knots2: Vec<Vec<Complex64>>,
    /// Joint survival curve over [0, τ].
    step1_curve: Option<NormCurve>,
    step1_survival: f64,
    /// Normalized joint no-jump state at τ.
    psi_tau: StateVector,
    /// Detector jump operators (propagation phases folded in).
    jump_ops: [LinearOperator; 4],
    /// Step-2 survival curve from `psi_tau` over [0, t_detect].
    step2_curve: Option<NormCurve>,
    /// Single-system no-jump generator, for refinement inside a knot.
    single_generator: LinearOperator,
    dt1: f64,
}

fn vec_norm_sqr(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

fn dense_matvec(u: &CMatrix, v: &[Complex64]) -> Vec<Complex64> {
    let n = v.len();
    let mut out = vec![Complex64::ZERO; n];
    for r in 0..n {
        let mut acc = Complex64::ZERO;
        for k in 0..n {
            acc += u[[r, k]] * v[k];
        }
        out[r] = acc;
    }
    out
}

impl TrajectoryEngine {
    pub fn new(inputs: &AtomInputs, params: &SystemParams) -> Result<TrajectoryEngine> {
        inputs.validate()?;
        params.validate()?;
        let single = build_space(1, 2, params.fock_cutoff)?;
        let joint = build_space(2, 4, params.fock_cutoff)?;
        let single_dim = single.dimension();
        let generator = no_jump_generator(&single, params.omega, params.kappa, 1)?;

        let dt1 = if params.tau > 0.0 {
            params.tau / CURVE_KNOTS as f64
        } else {
            0.0
        };
        let u_knot = if params.tau > 0.0 {
            propagator(&generator, dt1)?
        } else {
            crate::linalg::identity(single_dim)
        };

        let initial = |alpha: Complex64, beta: Complex64| -> Result<Vec<Complex64>> {
            let mut v = vec![Complex64::ZERO; single_dim];
            v[single.index_of(&[crate::hilbert::AtomLevel::GH], &[0, 0])?] = alpha;
            v[single.index_of(&[crate::hilbert::AtomLevel::GV], &[0, 0])?] = beta;
            Ok(v)
        };
        let mut knots1 = vec![initial(inputs.alpha1, inputs.beta1)?];
        let mut knots2 = vec![initial(inputs.alpha2, inputs.beta2)?];
        if params.tau > 0.0 {
            for k in 0..CURVE_KNOTS {
                knots1.push(dense_matvec(&u_knot, &knots1[k]));
                knots2.push(dense_matvec(&u_knot, &knots2[k]));
            }
        }

        let step1_curve = if params.tau > 0.0 {
            let values: Vec<f64> = knots1
                .iter()
                .zip(&knots2)
                .map(|(v1, v2)| vec_norm_sqr(v1) * vec_norm_sqr(v2))
                .collect();
            Some(NormCurve::from_values(params.tau, values)?)
        } else {
            None
        };
        let step1_survival = step1_curve.as_ref().map_or(1.0, |c| c.end_value());

        // (system1, system2) factor pair -> official atom-major joint index
        let mut sys_to_joint = vec![0usize; single_dim * single_dim];
        for i1 in 0..single_dim {
            let l1 = single.label_of(i1);
            for i2 in 0..single_dim {
                let l2 = single.label_of(i2);
                let atoms = [l1.atoms[0], l2.atoms[0]];
                let photons: Vec<u32> =
                    l1.photons.iter().chain(l2.photons.iter()).copied().collect();
                sys_to_joint[i1 * single_dim + i2] = joint.index_of(&atoms, &photons)?;
            }
        }

        let psi_tau = {
            let joint_amps = joint_from_factors(
                &sys_to_joint,
                joint.dimension(),
                knots1.last().unwrap(),
                knots2.last().unwrap(),
            );
            StateVector::from_amplitudes(&joint, joint_amps)?.normalized()?
        };

        let jump_ops = jump_operators(&reference_network(), &joint, params.phases())?;

        let step2_curve = if params.t_detect > 0.0 && params.kappa > 0.0 {
            let hist = photon_histogram(&psi_tau);
            let values: Vec<f64> = (0..=CURVE_KNOTS)
                .map(|k| {
                    let t = params.t_detect * k as f64 / CURVE_KNOTS as f64;
                    decay_survival(&hist, params.kappa, t)
                })
                .collect();
            Some(NormCurve::from_values(params.t_detect, values)?)
        } else {
            None
        };

        Ok(TrajectoryEngine {
            inputs: *inputs,
            params: params.clone(),
            joint_space: joint,
            single_dim,
            sys_to_joint,
            knots1,
            knots2,
            step1_curve,
            step1_survival,
            psi_tau,
            jump_ops,
            step2_curve,
            single_generator: generator,
            dt1,
        })
    }

    pub fn inputs(&self) -> &AtomInputs {
        &self.inputs
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    pub fn joint_space(&self) -> &Arc<SpaceDescriptor> {
        &self.joint_space
    }

    /// Joint no-jump state at step-1 time `t` (product of the per-system
    /// knot states, refined by RK4 inside the knot).
    fn step1_state_at(&self, t: f64) -> Result<StateVector> {
        let k = ((t / self.dt1) as usize).min(CURVE_KNOTS - 1);
        let delta = t - k as f64 * self.dt1;
        let refine = |knot: &[Complex64]| -> Result<Vec<Complex64>> {
            if delta == 0.0 {
                return Ok(knot.to_vec());
            }
            let single = self.single_generator.space();
            let s = StateVector::from_amplitudes(single, knot.to_vec())?;
            Ok(rk4_evolve(&s, &self.single_generator, delta, 4)?
                .amplitudes()
                .to_vec())
        };
        let v1 = refine(&self.knots1[k])?;
        let v2 = refine(&self.knots2[k])?;
        let amps = joint_from_factors(&self.sys_to_joint, self.joint_space.dimension(), &v1, &v2);
        StateVector::from_amplitudes(&self.joint_space, amps)
    }

    fn channel_weights(&self, state: &StateVector) -> Result<[f64; 4]> {
        let mut w = [0.0; 4];
        for (j, op) in self.jump_ops.iter().enumerate() {
            w[j] = op.apply(state)?.norm_sqr();
        }
        Ok(w)
    }

    fn draw_channel<R: Rng>(&self, weights: &[f64; 4], rng: &mut R) -> Result<usize> {
        let total: f64 = weights.iter().sum();
        if total < 1e-150 {
            return Err(Error::numeric(
                "all jump amplitudes vanish at the sampled jump time",
            ));
        }
        let mut draw = rng.gen::<f64>() * total;
        for (j, w) in weights.iter().enumerate() {
            if draw < *w {
                return Ok(j);
            }
            draw -= w;
        }
        Ok(3)
    }

    /// Sample the next decay jump of a decay-only segment starting from
    /// normalized `state`, within a window of length `span`. The survival
    /// function of a diagonal generator is a short exponential sum, so the
    /// waiting time is found by bisecting it exactly (no interpolation).
    fn sample_decay_jump<R: Rng>(
        &self,
        state: &StateVector,
        span: f64,
        rng: &mut R,
    ) -> Result<Option<(f64, usize, StateVector)>> {
        let kappa = self.params.kappa;
        if span <= 0.0 || kappa == 0.0 {
            // still consume the waiting-time draw for a fixed stream layout
            let _: f64 = rng.gen();
            return Ok(None);
        }
        let hist = photon_histogram(state);
        let u: f64 = rng.gen();
        if u < decay_survival(&hist, kappa, span) {
            return Ok(None);
        }
        let mut lo = 0.0_f64;
        let mut hi = span;
        while hi - lo > TIME_TOLERANCE {
            let mid = 0.5 * (lo + hi);
            if decay_survival(&hist, kappa, mid) >= u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let t_rel = 0.5 * (lo + hi);
        let mut at_jump = state.clone();
        decay_evolve(&mut at_jump, kappa, t_rel);
        let weights = self.channel_weights(&at_jump)?;
        let channel = self.draw_channel(&weights, rng)?;
        let post = self.jump_ops[channel].apply(&at_jump)?.normalized()?;
        Ok(Some((t_rel, channel, post)))
    }

    /// Run one protocol trajectory: step 1 aborts on any emission; step 2
    /// records decay jumps inside the detection window and classifies the
    /// heralding pattern after applying per-click loss coins.
    pub fn run(&self, seed: u64) -> Result<TrajectoryRecord> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut events: Vec<(f64, Detector)> = Vec::new();

        // Step 1: drives on for τ; any jump aborts the trajectory.
        let u1: f64 = rng.gen();
        if self.params.tau > 0.0 && u1 >= self.step1_survival {
            let curve = self.step1_curve.as_ref().expect("curve exists when tau > 0");
            let t1 = curve
                .invert(u1)
                .ok_or_else(|| Error::numeric("step-1 survival inversion failed"))?;
            let at_jump = self.step1_state_at(t1)?;
            let weights = self.channel_weights(&at_jump)?;
            let channel = self.draw_channel(&weights, &mut rng)?;
            let post = self.jump_ops[channel].apply(&at_jump)?.normalized()?;
            events.push((t1, Detector::from_index(channel)?));
            return Ok(TrajectoryRecord {
                seed,
                events,
                survived_step1: false,
                heralded_pattern: None,
                final_state: post,
            });
        }

        // Step 2: drives off, decay only, up to t_detect.
        let mut current = self.psi_tau.clone();
        let mut t_off = 0.0;
        let window = self.params.t_detect;
        let mut first_segment = true;
        loop {
            let span = window - t_off;
            if span <= 0.0 || photon_histogram(&current)[1..].iter().sum::<f64>() < 1e-30 {
                break;
            }
            let jump = if first_segment {
                // shared curve cached in the engine
                match &self.step2_curve {
                    Some(curve) => {
                        let u: f64 = rng.gen();
                        if u < curve.end_value() {
                            None
                        } else {
                            let t_rel = curve
                                .invert(u)
                                .ok_or_else(|| Error::numeric("step-2 inversion failed"))?;
                            let mut at_jump = current.clone();
                            decay_evolve(&mut at_jump, self.params.kappa, t_rel);
                            let weights = self.channel_weights(&at_jump)?;
                            let channel = self.draw_channel(&weights, &mut rng)?;
                            let post = self.jump_ops[channel].apply(&at_jump)?.normalized()?;
                            Some((t_rel, channel, post))
                        }
                    }
                    None => {
                        let _: f64 = rng.gen();
                        None
                    }
                }
            } else {
                self.sample_decay_jump(&current, span, &mut rng)?
            };
            match jump {
                None => break,
                Some((t_rel, channel, post)) => {
                    t_off += t_rel;
                    events.push((self.params.tau + t_off, Detector::from_index(channel)?));
                    current = post;
                    first_segment = false;
                }
            }
        }

        // evolve the survivor to the end of the window and renormalize
        decay_evolve(&mut current, self.params.kappa, window - t_off);
        let final_state = current.normalized()?;

        // loss coins per recorded click, in event order
        let keep = 1.0 - self.params.eta;
        let mut surviving: Vec<Detector> = Vec::new();
        for (_, det) in &events {
            if rng.gen::<f64>() < keep {
                surviving.push(*det);
            }
        }
        let heralded_pattern = if surviving.len() == 2 && surviving[0] != surviving[1] {
            let pattern = DetectionPattern::of(&surviving);
            pattern.is_heralding().then_some(pattern)
        } else {
            None
        };

        Ok(TrajectoryRecord {
            seed,
            events,
            survived_step1: true,
            heralded_pattern,
            final_state,
        })
    }

    /// Shared per-horizon quantities for `run_to_horizon` campaigns.
    pub fn horizon_cache(&self, horizon: f64) -> Result<HorizonCache> {
        if horizon < 0.0 || horizon > self.params.tau + self.params.t_detect + 1e-12 {
            return Err(Error::argument("horizon outside the protocol window"));
        }
        let end_a = horizon.min(self.params.tau);
        let no_jump_state = if end_a >= self.params.tau {
            self.psi_tau.clone()
        } else if end_a > 0.0 {
            self.step1_state_at(end_a)?.normalized()?
        } else {
            self.step1_state_at(0.0)?.normalized()?
        };
        let survival = if end_a > 0.0 && end_a < self.params.tau {
            self.step1_state_at(end_a)?.norm_sqr()
        } else if end_a > 0.0 {
            self.step1_survival
        } else {
            1.0
        };
        Ok(HorizonCache {
            horizon,
            end_a,
            survival,
            no_jump_state,
        })
    }

    /// Full unraveling to `horizon` (no step-1 abort): emissions during the
    /// drive are followed through, as the unconditional average requires.
    pub fn run_to_horizon(&self, seed: u64, horizon: f64) -> Result<StateVector> {
        let cache = self.horizon_cache(horizon)?;
        self.run_to_horizon_cached(seed, &cache)
    }

    pub fn run_to_horizon_cached(&self, seed: u64, cache: &HorizonCache) -> Result<StateVector> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let end_a = cache.end_a;
        let horizon = cache.horizon;

        // Phase A: driven evolution on [0, end_a].
        let mut current: Option<StateVector> = None; // None = still the shared no-jump branch
        if end_a > 0.0 {
            // first segment from the cached curve
            let u: f64 = rng.gen();
            let mut t = end_a;
            if u >= cache.survival {
                let curve = self.step1_curve.as_ref().expect("tau > 0");
                let t1 = curve
                    .invert(u)
                    .ok_or_else(|| Error::numeric("survival inversion failed"))?
                    .min(end_a);
                let at_jump = self.step1_state_at(t1)?;
                let weights = self.channel_weights(&at_jump)?;
                let channel = self.draw_channel(&weights, &mut rng)?;
                current = Some(self.jump_ops[channel].apply(&at_jump)?.normalized()?);
                t = t1;
            }
            // subsequent driven segments from arbitrary post-jump states
            while t < end_a - 1e-15 {
                let state = current.clone().expect("post-jump state present");
                match self.sample_driven_jump(&state, end_a - t, &mut rng)? {
                    DrivenSegment::NoJump(survivor) => {
                        current = Some(survivor.normalized()?);
                        t = end_a;
                    }
                    DrivenSegment::Jump { t_rel, post, .. } => {
                        current = Some(post);
                        t += t_rel;
                    }
                }
            }
        }
        let mut state = match current {
            Some(s) => s,
            None => cache.no_jump_state.clone(),
        };

        // Phase B: decay-only on [τ, horizon].
        let mut remaining = horizon - end_a;
        if horizon > self.params.tau {
            while remaining > 0.0 {
                match self.sample_decay_jump(&state, remaining, &mut rng)? {
                    None => break,
                    Some((t_rel, _, post)) => {
                        state = post;
                        remaining -= t_rel;
                    }
                }
            }
            decay_evolve(&mut state, self.params.kappa, remaining.max(0.0));
            state = state.normalized()?;
        }
        Ok(state)
    }

    /// Kronecker application of the single-system propagator to a joint
    /// state: permute into the (system1, system2) factor layout, hit both
    /// factors as a matrix sandwich, permute back to atom-major order.
    fn kron_step(&self, amps: &[Complex64], u: &CMatrix) -> Vec<Complex64> {
        let d = self.single_dim;
        let mut m = vec![Complex64::ZERO; d * d];
        for (sys, &joint) in self.sys_to_joint.iter().enumerate() {
            m[sys] = amps[joint];
        }
        let mut tmp = vec![Complex64::ZERO; d * d];
        // tmp = U · M (rows are system 1)
        for r in 0..d {
            for k in 0..d {
                let f = u[[r, k]];
                if f == Complex64::ZERO {
                    continue;
                }
                let base_in = k * d;
                let base_out = r * d;
                for c2 in 0..d {
                    tmp[base_out + c2] += f * m[base_in + c2];
                }
            }
        }
        // res = tmp · Uᵀ (columns are system 2)
        let mut out = vec![Complex64::ZERO; d * d];
        for r in 0..d {
            let base = r * d;
            for c2 in 0..d {
                let mut acc = Complex64::ZERO;
                for k in 0..d {
                    acc += tmp[base + k] * u[[c2, k]];
                }
                out[self.sys_to_joint[base + c2]] = acc;
            }
        }
        out
    }

    /// Driven no-jump evolution of an arbitrary joint state for `span`.
    fn evolve_driven(&self, state: &StateVector, span: f64) -> Result<StateVector> {
        let u = propagator(&self.single_generator, span)?;
        let amps = self.kron_step(state.amplitudes(), &u);
        StateVector::from_amplitudes(&self.joint_space, amps)
    }

    /// Sample the next jump of a driven segment from an arbitrary joint
    /// state (used after a step-1 emission, full-unraveling mode only).
    /// These segments are transient per-trajectory states, so instead of a
    /// cached knot curve the survival function is bisected on exact
    /// propagator evaluations; the no-jump survivor state falls out for free.
    fn sample_driven_jump<R: Rng>(
        &self,
        state: &StateVector,
        span: f64,
        rng: &mut R,
    ) -> Result<DrivenSegment> {
        let u_draw: f64 = rng.gen();
        let survivor = self.evolve_driven(state, span)?;
        if u_draw < survivor.norm_sqr() {
            return Ok(DrivenSegment::NoJump(survivor));
        }
        let mut lo = 0.0_f64;
        let mut hi = span;
        while hi - lo > TIME_TOLERANCE {
            let mid = 0.5 * (lo + hi);
            if self.evolve_driven(state, mid)?.norm_sqr() >= u_draw {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let t_rel = 0.5 * (lo + hi);
        let at_jump = self.evolve_driven(state, t_rel)?;
        let weights = self.channel_weights(&at_jump)?;
        let channel = self.draw_channel(&weights, rng)?;
        let post = self.jump_ops[channel].apply(&at_jump)?.normalized()?;
        Ok(DrivenSegment::Jump {
            t_rel,
            channel,
            post,
        })
    }
}

/// Product state of two single-system factor vectors, written straight into
/// the official atom-major joint ordering via the permutation table.
fn joint_from_factors(
    sys_to_joint: &[usize],
    joint_dim: usize,
    v1: &[Complex64],
    v2: &[Complex64],
) -> Vec<Complex64> {
    let mut out = vec![Complex64::ZERO; joint_dim];
    let d = v2.len();
    for (i, a) in v1.iter().enumerate() {
        if *a == Complex64::ZERO {
            continue;
        }
        let base = i * d;
        for (j, b) in v2.iter().enumerate() {
            if *b != Complex64::ZERO {
                out[sys_to_joint[base + j]] = a * b;
            }
        }
    }
    out
}

/// Run a single trajectory; deterministic for a fixed seed.
pub fn run_trajectory(
    inputs: &AtomInputs,
    params: &SystemParams,
    seed: u64,
) -> Result<TrajectoryRecord> {
    TrajectoryEngine::new(inputs, params)?.run(seed)
}

/// Fraction of step-1 survivors that produce a heralding coincidence, over
/// `n` trajectories seeded `base_seed + index`.
///
/// The estimate is conditioned on step-1 survival, so its mean is directly
/// comparable to `protocol::success_probability` (whose closed form is
/// likewise conditioned on step-1 success).
pub fn estimate_heralding(
    inputs: &AtomInputs,
    params: &SystemParams,
    n: usize,
    base_seed: u64,
) -> Result<EstimateWithError> {
    if n < 100 {
        return Err(Error::argument("need at least 100 trajectories"));
    }
    let engine = TrajectoryEngine::new(inputs, params)?;
    let counts: Result<Vec<(u32, u32)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let rec = engine.run(base_seed.wrapping_add(i as u64))?;
            Ok((
                u32::from(rec.survived_step1),
                u32::from(rec.heralded_pattern.is_some()),
            ))
        })
        .collect();
    let counts = counts?;
    let survived: u64 = counts.iter().map(|(s, _)| *s as u64).sum();
    let heralded: u64 = counts.iter().map(|(_, h)| *h as u64).sum();
    if survived == 0 {
        return Ok(EstimateWithError {
            mean: 0.0,
            stderr: 0.0,
            n_samples: 0,
        });
    }
    let m = survived as f64;
    let p = heralded as f64 / m;
    Ok(EstimateWithError {
        mean: p,
        stderr: (p * (1.0 - p) / m).sqrt(),
        n_samples: survived as usize,
    })
}

/// Average of `|ψ_k(horizon)⟩⟨ψ_k(horizon)|` over `n` full-unraveling
/// trajectories (non-heralded ones included). Deterministic: per-chunk
/// partial sums are reduced in index order.
pub fn unconditional_average(
    inputs: &AtomInputs,
    params: &SystemParams,
    n: usize,
    horizon: f64,
    base_seed: u64,
) -> Result<DensityMatrix> {
    if n < 1000 {
        return Err(Error::argument("need at least 1000 trajectories"));
    }
    let engine = TrajectoryEngine::new(inputs, params)?;
    let cache = engine.horizon_cache(horizon)?;
    let chunk = 512;
    let ranges: Vec<(usize, usize)> = (0..n)
        .step_by(chunk)
        .map(|s| (s, (s + chunk).min(n)))
        .collect();
    // sparse per-chunk accumulation: trajectory states have few nonzeros
    let partials: Result<Vec<BTreeMap<(u32, u32), Complex64>>> = ranges
        .par_iter()
        .map(|&(start, end)| {
            let mut acc: BTreeMap<(u32, u32), Complex64> = BTreeMap::new();
            for i in start..end {
                let psi = engine.run_to_horizon_cached(base_seed.wrapping_add(i as u64), &cache)?;
                let nz: Vec<(u32, Complex64)> = psi
                    .amplitudes()
                    .iter()
                    .enumerate()
                    .filter(|(_, z)| z.norm_sqr() > 0.0)
                    .map(|(i, z)| (i as u32, *z))
                    .collect();
                for &(r, zr) in &nz {
                    for &(c2, zc) in &nz {
                        *acc.entry((r, c2)).or_insert(Complex64::ZERO) += zr * zc.conj();
                    }
                }
            }
            Ok(acc)
        })
        .collect();
    let joint = engine.joint_space();
    let mut rho = DensityMatrix::zeros(joint);
    let weight = Complex64::new(1.0 / n as f64, 0.0);
    for map in partials? {
        for ((r, c2), v) in map {
            rho.matrix_mut()[[r as usize, c2 as usize]] += v * weight;
        }
    }
    Ok(rho)
}

/// Write the trajectory log: one JSON record per trajectory.
pub fn write_trajectory_log<W: Write>(
    records: &[TrajectoryRecord],
    inputs: &AtomInputs,
    mut w: W,
) -> Result<()> {
    for rec in records {
        let events: Vec<Value> = rec
            .events
            .iter()
            .map(|(t, d)| json!({"t": t, "detector": d.label()}))
            .collect();
        let fidelity = rec.heralded_fidelity(inputs)?;
        let line = json!({
            "seed": rec.seed,
            "survived_step1": rec.survived_step1,
            "events": events,
            "pattern": rec.heralded_pattern.as_ref().map(|p| p.label()),
            "fidelity_cz": fidelity,
        });
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Minimal reader for the trajectory log (seeds, survival, patterns).
pub fn read_trajectory_log<R: BufRead>(r: R) -> Result<Vec<(u64, bool, Option<String>)>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(&line)
            .map_err(|e| Error::argument(format!("bad trajectory record: {e}")))?;
        let seed = v["seed"]
            .as_u64()
            .ok_or_else(|| Error::argument("trajectory record missing seed"))?;
        let survived = v["survived_step1"]
            .as_bool()
            .ok_or_else(|| Error::argument("trajectory record missing survived_step1"))?;
        let pattern = v["pattern"].as_str().map(str::to_owned);
        out.push((seed, survived, pattern));
    }
    Ok(out)
}
