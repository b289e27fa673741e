//! Single atom-cavity dynamics: the effective driven Hamiltonian, the
//! non-Hermitian no-jump evolution (closed form and numeric), the no-emission
//! probability, and a Lindblad master-equation oracle used to validate the
//! quantum-trajectory unraveling.
//!
//! Rate convention: the no-jump generator carries `-iκ a†a`, so photon
//! *amplitudes* decay as `e^{-κt}` and intensities as `e^{-2κt}`. The Lindblad
//! jump rate that reproduces this norm decay is therefore `2κ` per mode; that
//! reconciliation lives here and nowhere else.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::hilbert::{
    atom_transition, mode_annihilator_by_index, AtomLevel, LinearOperator, SpaceDescriptor,
    StateVector,
};
use crate::linalg::{self, CMatrix};

const I: Complex64 = Complex64::new(0.0, 1.0);

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// All physical knobs of the protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemParams {
    /// Effective atom-cavity coupling rate Ω (1/time).
    pub omega: f64,
    /// Cavity field decay rate κ (1/time); amplitudes decay as e^{-κt}.
    pub kappa: f64,
    /// Step-1 drive duration τ.
    pub tau: f64,
    /// Step-2 detection window t.
    pub t_detect: f64,
    /// Propagation phase picked up by photons from cavity 1 (radians).
    pub phi1: f64,
    /// Propagation phase picked up by photons from cavity 2 (radians).
    pub phi2: f64,
    /// Overall photon loss probability (channel + detector), in [0, 1].
    pub eta: f64,
    /// Max photons per polarization mode; 1 suffices for the protocol.
    pub fock_cutoff: u32,
}

impl SystemParams {
    pub fn new(omega: f64, kappa: f64, tau: f64, t_detect: f64) -> Self {
        SystemParams {
            omega,
            kappa,
            tau,
            t_detect,
            phi1: 0.0,
            phi2: 0.0,
            eta: 0.0,
            fock_cutoff: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0) || !self.omega.is_finite() {
            return Err(Error::argument(format!("omega must be > 0, got {}", self.omega)));
        }
        for (name, v) in [
            ("kappa", self.kappa),
            ("tau", self.tau),
            ("t_detect", self.t_detect),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::argument(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !self.phi1.is_finite() || !self.phi2.is_finite() {
            return Err(Error::argument("phases must be finite"));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::argument(format!("eta must lie in [0, 1], got {}", self.eta)));
        }
        if self.fock_cutoff < 1 {
            return Err(Error::argument("fock_cutoff must be >= 1"));
        }
        Ok(())
    }

    pub fn phases(&self) -> (f64, f64) {
        (self.phi1, self.phi2)
    }
}

/// Normalized no-jump coefficients (a, b) of the entangled atom-cavity state
/// after the step-1 drive, together with Ω_κ = √(Ω² − κ²/4).
#[derive(Debug, Clone, Copy)]
pub struct NoJumpCoefficients {
    pub a: Complex64,
    pub b: Complex64,
    pub omega_kappa: Complex64,
}

/// Effective interaction Hamiltonian of one atom with its two cavity modes:
/// `H_j = Ω (a_jH |gH⟩⟨sH| + a_jH† |sH⟩⟨gH| + a_jV |gV⟩⟨sV| + a_jV† |sV⟩⟨gV|)`.
pub fn effective_hamiltonian(
    space: &Arc<SpaceDescriptor>,
    omega: f64,
    atom: usize,
) -> Result<LinearOperator> {
    if space.n_modes() < 2 * atom {
        return Err(Error::argument(format!(
            "space has {} modes; atom {atom} needs its own H/V pair",
            space.n_modes()
        )));
    }
    let (m_h, m_v) = space.modes_of_atom(atom);
    let a_h = mode_annihilator_by_index(space, m_h);
    let a_v = mode_annihilator_by_index(space, m_v);
    let down_h = a_h.matmul(&atom_transition(space, atom, AtomLevel::SH, AtomLevel::GH)?)?;
    let down_v = a_v.matmul(&atom_transition(space, atom, AtomLevel::SV, AtomLevel::GV)?)?;
    let h = down_h
        .add(&down_h.adjoint())?
        .add(&down_v.add(&down_v.adjoint())?)?;
    Ok(h.scaled(c(omega)))
}

/// Non-Hermitian no-jump generator `H'_j = H_j − iκ (a_jH†a_jH + a_jV†a_jV)`.
pub fn no_jump_generator(
    space: &Arc<SpaceDescriptor>,
    omega: f64,
    kappa: f64,
    atom: usize,
) -> Result<LinearOperator> {
    let h = effective_hamiltonian(space, omega, atom)?;
    let (m_h, m_v) = space.modes_of_atom(atom);
    let n = number_operator(space, m_h).add(&number_operator(space, m_v))?;
    h.add(&n.scaled(-I * c(kappa)))
}

/// `Σ_j H'_j` over every atom in the space.
pub fn total_no_jump_generator(
    space: &Arc<SpaceDescriptor>,
    omega: f64,
    kappa: f64,
) -> Result<LinearOperator> {
    let mut total = no_jump_generator(space, omega, kappa, 1)?;
    for atom in 2..=space.n_atoms() {
        total = total.add(&no_jump_generator(space, omega, kappa, atom)?)?;
    }
    Ok(total)
}

/// Photon number operator of one mode (diagonal).
pub fn number_operator(space: &Arc<SpaceDescriptor>, mode: usize) -> LinearOperator {
    let mut op = LinearOperator::zero(space);
    for i in 0..space.dimension() {
        let n = space.photons_in_mode(i, mode);
        if n > 0 {
            op.add_entry(i, i, c(n as f64));
        }
    }
    op
}

/// Decay-only generator `−iκ Σ_m a_m†a_m` (diagonal); the step-2 dynamics.
pub fn decay_generator(space: &Arc<SpaceDescriptor>, kappa: f64) -> LinearOperator {
    let mut op = LinearOperator::zero(space);
    for i in 0..space.dimension() {
        let n = space.total_photons(i);
        if n > 0 {
            op.add_entry(i, i, -I * c(kappa * n as f64));
        }
    }
    op
}

/// Largest dimension for which `evolve_no_jump` uses the dense scaling-and-
/// squaring matrix exponential; larger spaces fall back to stepwise RK4.
pub const DENSE_EXP_MAX_DIM: usize = 300;

/// Evolve `state` under `exp(−i G · duration)`.
///
/// On spaces of dimension ≤ [`DENSE_EXP_MAX_DIM`] this uses the dense
/// scaling-and-squaring matrix exponential and `steps` is ignored; larger
/// spaces use a classical RK4 integrator with `steps` substeps. The result is
/// deliberately left unnormalized: its squared norm is the no-jump survival
/// probability of the segment.
pub fn evolve_no_jump(
    state: &StateVector,
    generator: &LinearOperator,
    duration: f64,
    steps: usize,
) -> Result<StateVector> {
    if steps < 1 {
        return Err(Error::argument("steps must be >= 1"));
    }
    if !duration.is_finite() || duration < 0.0 {
        return Err(Error::argument(format!("bad duration {duration}")));
    }
    if *state.space() != *generator.space() {
        return Err(Error::argument("state and generator live on different spaces"));
    }
    if duration == 0.0 {
        return Ok(state.clone());
    }
    let out = if state.space().dimension() <= DENSE_EXP_MAX_DIM {
        let u = propagator(generator, duration)?;
        apply_dense(&u, state)
    } else {
        rk4_evolve(state, generator, duration, steps)?
    };
    if out.amplitudes().iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::numeric("no-jump evolution produced non-finite amplitudes"));
    }
    Ok(out)
}

/// Dense propagator `exp(−i G t)`.
pub fn propagator(generator: &LinearOperator, t: f64) -> Result<CMatrix> {
    let g = generator.to_dense();
    linalg::expm(&(g * (-I * c(t))))
}

pub fn apply_dense(u: &CMatrix, state: &StateVector) -> StateVector {
    let n = state.space().dimension();
    let mut out = StateVector::zero(state.space());
    for r in 0..n {
        let mut acc = Complex64::ZERO;
        for k in 0..n {
            acc += u[[r, k]] * state.amplitudes()[k];
        }
        out.amplitudes_mut()[r] = acc;
    }
    out
}

/// RK4 on `ψ' = −i G ψ`.
pub fn rk4_evolve(
    state: &StateVector,
    generator: &LinearOperator,
    duration: f64,
    steps: usize,
) -> Result<StateVector> {
    let h = duration / steps as f64;
    let deriv = |s: &StateVector| -> Result<StateVector> { Ok(generator.apply(s)?.scaled(-I)) };
    let mut psi = state.clone();
    for _ in 0..steps {
        let k1 = deriv(&psi)?;
        let k2 = deriv(&psi.add(&k1.scaled(c(h / 2.0)))?)?;
        let k3 = deriv(&psi.add(&k2.scaled(c(h / 2.0)))?)?;
        let k4 = deriv(&psi.add(&k3.scaled(c(h)))?)?;
        let incr = k1
            .add(&k2.scaled(c(2.0)))?
            .add(&k3.scaled(c(2.0)))?
            .add(&k4)?
            .scaled(c(h / 6.0));
        psi = psi.add(&incr)?;
    }
    Ok(psi)
}

/// Closed-form no-jump coefficients after driving for `tau`.
///
/// Complex Ω_κ keeps one code path across the underdamped, critically damped
/// and overdamped regimes: for Ω < κ/2 the trigonometric functions continue
/// analytically into hyperbolic ones. At |Ω_κ τ| < 1e−6 the removable
/// singularity of sin(Ω_κτ)/Ω_κ is evaluated by its series expansion.
pub fn closed_form_coefficients(omega: f64, kappa: f64, tau: f64) -> Result<NoJumpCoefficients> {
    let (a_un, b_un, omega_kappa) = unnormalized_coefficients(omega, kappa, tau)?;
    if kappa == 0.0 {
        // Unitary Rabi limit, returned without renormalization so that
        // a = cos(Ωτ) and b = sin(Ωτ) hold exactly.
        return Ok(NoJumpCoefficients {
            a: c((omega * tau).cos()),
            b: c((omega * tau).sin()),
            omega_kappa,
        });
    }
    let norm = (a_un.norm_sqr() + b_un.norm_sqr()).sqrt();
    Ok(NoJumpCoefficients {
        a: a_un / norm,
        b: b_un / norm,
        omega_kappa,
    })
}

/// The (a, b) pair before normalization, without the e^{-κτ/2} envelope.
fn unnormalized_coefficients(
    omega: f64,
    kappa: f64,
    tau: f64,
) -> Result<(Complex64, Complex64, Complex64)> {
    if !(omega > 0.0) || !omega.is_finite() {
        return Err(Error::argument("omega must be > 0"));
    }
    if kappa < 0.0 || tau < 0.0 || !kappa.is_finite() || !tau.is_finite() {
        return Err(Error::argument("kappa and tau must be >= 0"));
    }
    let wk2 = omega * omega - kappa * kappa / 4.0;
    let omega_kappa = if wk2 >= 0.0 {
        c(wk2.sqrt())
    } else {
        I * c((-wk2).sqrt())
    };
    let z = omega_kappa * c(tau);
    // sin(Ω_κτ)/Ω_κ, continued through the removable zero at Ω_κ = 0
    let sinc_tau = if z.norm() < 1e-6 {
        let z2 = z * z;
        c(tau) * (Complex64::ONE - z2 / c(6.0) + z2 * z2 / c(120.0))
    } else {
        z.sin() / omega_kappa
    };
    let a_un = z.cos() + c(kappa / 2.0) * sinc_tau;
    let b_un = c(omega) * sinc_tau;
    Ok((a_un, b_un, omega_kappa))
}

/// Probability that no photon is emitted during the step-1 drive. Equals the
/// squared norm of the unnormalized no-jump evolution and is independent of
/// the initial (α, β) superposition, because the H and V blocks share the
/// same 2×2 dynamics.
pub fn p_no_emission(omega: f64, kappa: f64, tau: f64) -> Result<f64> {
    let (a_un, b_un, _) = unnormalized_coefficients(omega, kappa, tau)?;
    if kappa == 0.0 || tau == 0.0 {
        return Ok(1.0);
    }
    Ok((-kappa * tau).exp() * (a_un.norm_sqr() + b_un.norm_sqr()))
}

/// The entangled single-system state of the step-1 no-jump branch:
/// `α (a|gH⟩|0,0⟩ − i b|sH⟩|1,0⟩) + β (a|gV⟩|0,0⟩ − i b|sV⟩|0,1⟩)`.
pub fn single_system_state(
    alpha: Complex64,
    beta: Complex64,
    coeffs: &NoJumpCoefficients,
    space: &Arc<SpaceDescriptor>,
) -> Result<StateVector> {
    if (alpha.norm_sqr() + beta.norm_sqr() - 1.0).abs() > 1e-9 {
        return Err(Error::argument("|alpha|^2 + |beta|^2 must equal 1"));
    }
    if space.n_atoms() != 1 || space.n_modes() != 2 {
        return Err(Error::argument("single_system_state needs a 1-atom, 2-mode space"));
    }
    let mut psi = StateVector::zero(space);
    let idx = |lvl: AtomLevel, nh: u32, nv: u32| space.index_of(&[lvl], &[nh, nv]);
    psi.amplitudes_mut()[idx(AtomLevel::GH, 0, 0)?] = alpha * coeffs.a;
    psi.amplitudes_mut()[idx(AtomLevel::SH, 1, 0)?] = alpha * (-I) * coeffs.b;
    psi.amplitudes_mut()[idx(AtomLevel::GV, 0, 0)?] = beta * coeffs.a;
    psi.amplitudes_mut()[idx(AtomLevel::SV, 0, 1)?] = beta * (-I) * coeffs.b;
    Ok(psi)
}

/// Step-2 free decay: every photon amplitude of cavity `j` acquires
/// `e^{−κt} e^{−iφ_j}` per photon; vacuum amplitudes are untouched; the
/// output is renormalized, like every conditional state in this crate.
pub fn decay_propagate(
    state: &StateVector,
    kappa: f64,
    t: f64,
    phases: (f64, f64),
) -> Result<StateVector> {
    if kappa < 0.0 || t < 0.0 {
        return Err(Error::argument("kappa and t must be >= 0"));
    }
    let space = Arc::clone(state.space());
    let mut out = state.clone();
    let damp = (-kappa * t).exp();
    for (i, amp) in out.amplitudes_mut().iter_mut().enumerate() {
        if *amp == Complex64::ZERO {
            continue;
        }
        let mut factor = Complex64::ONE;
        for m in 0..space.n_modes() {
            let n = space.photons_in_mode(i, m);
            if n == 0 {
                continue;
            }
            let phi = if space.cavity_of_mode(m) == 1 { phases.0 } else { phases.1 };
            factor *= (c(damp) * Complex64::from_polar(1.0, -phi)).powu(n);
        }
        *amp *= factor;
    }
    out.normalized()
}

/// Diagonal phase operator `e^{−i φ_j n̂_j}` per cavity; the phase half of the
/// step-2 map, split out so tests can compose it with pure decay.
pub fn path_phase_operator(space: &Arc<SpaceDescriptor>, phases: (f64, f64)) -> LinearOperator {
    let mut op = LinearOperator::zero(space);
    for i in 0..space.dimension() {
        let mut phi = 0.0;
        for m in 0..space.n_modes() {
            let n = space.photons_in_mode(i, m);
            if n > 0 {
                let p = if space.cavity_of_mode(m) == 1 { phases.0 } else { phases.1 };
                phi += p * n as f64;
            }
        }
        op.add_entry(i, i, Complex64::from_polar(1.0, -phi));
    }
    op
}

/// Density matrix on a descriptor'd space. Mixed states live here (and only
/// here) because nothing outside the master-equation oracle needs them.
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    space: Arc<SpaceDescriptor>,
    matrix: CMatrix,
}

impl DensityMatrix {
    pub fn from_pure(state: &StateVector) -> DensityMatrix {
        let n = state.space().dimension();
        let mut m = CMatrix::zeros((n, n));
        for (i, &ai) in state.amplitudes().iter().enumerate() {
            if ai == Complex64::ZERO {
                continue;
            }
            for (j, &aj) in state.amplitudes().iter().enumerate() {
                m[[i, j]] = ai * aj.conj();
            }
        }
        DensityMatrix {
            space: Arc::clone(state.space()),
            matrix: m,
        }
    }

    pub fn zeros(space: &Arc<SpaceDescriptor>) -> DensityMatrix {
        let n = space.dimension();
        DensityMatrix {
            space: Arc::clone(space),
            matrix: CMatrix::zeros((n, n)),
        }
    }

    pub fn space(&self) -> &Arc<SpaceDescriptor> {
        &self.space
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn matrix_mut(&mut self) -> &mut CMatrix {
        &mut self.matrix
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.matrix.nrows()).map(|i| self.matrix[[i, i]]).sum()
    }

    pub fn purity(&self) -> f64 {
        let m = &self.matrix;
        let mut p = Complex64::ZERO;
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                p += m[[i, j]] * m[[j, i]];
            }
        }
        p.re
    }
}

/// Trace distance `½ ‖ρ − σ‖₁` via the spectrum of the Hermitian difference.
pub fn trace_distance(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    if rho.space != sigma.space {
        return Err(Error::argument("trace distance across different spaces"));
    }
    let diff = &rho.matrix - &sigma.matrix;
    let ev = linalg::hermitian_eigenvalues(&diff)?;
    Ok(0.5 * ev.iter().map(|x| x.abs()).sum::<f64>())
}

/// Integrate the Lindblad master equation
/// `dρ/dt = −i[H, ρ] + Σ_m 2κ (a_m ρ a_m† − ½{a_m†a_m, ρ})`
/// by RK4, with the protocol drive schedule: the interaction Hamiltonian of
/// every atom is on for `t < params.tau` and off afterwards.
///
/// The detector-basis jump operators give the identical equation (the mode
/// transform is unitary, so `Σ_j b_j ρ b_j† = Σ_m a_m ρ a_m†`); that
/// equivalence is asserted in tests, and the per-mode form is integrated.
pub fn lindblad_oracle(
    initial: &StateVector,
    params: &SystemParams,
    horizon: f64,
    steps: usize,
) -> Result<DensityMatrix> {
    params.validate()?;
    if steps < 1 {
        return Err(Error::argument("steps must be >= 1"));
    }
    if horizon < 0.0 || !horizon.is_finite() {
        return Err(Error::argument("horizon must be >= 0"));
    }
    let space = initial.space();
    if space.n_modes() == 0 {
        return Err(Error::argument("lindblad_oracle needs a space with cavity modes"));
    }

    let h_drive = {
        let mut h = effective_hamiltonian(space, params.omega, 1)?;
        for atom in 2..=space.n_atoms() {
            h = h.add(&effective_hamiltonian(space, params.omega, atom)?)?;
        }
        h
    };
    let channels: Vec<(LinearOperator, LinearOperator, LinearOperator)> = (0..space.n_modes())
        .map(|m| {
            let a = mode_annihilator_by_index(space, m);
            let adag = a.adjoint();
            let n = number_operator(space, m);
            (a, adag, n)
        })
        .collect();

    let mut rho = DensityMatrix::from_pure(&initial.normalized()?);
    if horizon == 0.0 {
        return Ok(rho);
    }

    // preallocated RK4 workspace; the RHS accumulates in place
    let dim = space.dimension();
    let mut k1 = CMatrix::zeros((dim, dim));
    let mut k2 = CMatrix::zeros((dim, dim));
    let mut k3 = CMatrix::zeros((dim, dim));
    let mut k4 = CMatrix::zeros((dim, dim));
    let mut stage = CMatrix::zeros((dim, dim));
    let mut channel_tmp = CMatrix::zeros((dim, dim));

    let drive_end = params.tau.min(horizon);
    let segments = [(0.0, drive_end, true), (drive_end, horizon, false)];
    for (t0, t1, drive_on) in segments {
        let span = t1 - t0;
        if span <= 0.0 {
            continue;
        }
        let n_steps = ((steps as f64 * span / horizon).ceil() as usize).max(1);
        let dt = span / n_steps as f64;
        let rhs = |m: &CMatrix, out: &mut CMatrix, tmp: &mut CMatrix| {
            out.fill(Complex64::ZERO);
            if drive_on {
                accumulate_sparse_dense(out, &h_drive, m, -I);
                accumulate_dense_sparse(out, m, &h_drive, I);
            }
            if params.kappa > 0.0 {
                let rate = c(2.0 * params.kappa);
                for (a, adag, n_op) in &channels {
                    tmp.fill(Complex64::ZERO);
                    accumulate_sparse_dense(tmp, a, m, Complex64::ONE);
                    accumulate_dense_sparse(out, tmp, adag, rate);
                    accumulate_sparse_dense(out, n_op, m, -rate * c(0.5));
                    accumulate_dense_sparse(out, m, n_op, -rate * c(0.5));
                }
            }
        };
        for _ in 0..n_steps {
            rhs(&rho.matrix, &mut k1, &mut channel_tmp);
            stage.assign(&rho.matrix);
            stage.scaled_add(c(dt / 2.0), &k1);
            rhs(&stage, &mut k2, &mut channel_tmp);
            stage.assign(&rho.matrix);
            stage.scaled_add(c(dt / 2.0), &k2);
            rhs(&stage, &mut k3, &mut channel_tmp);
            stage.assign(&rho.matrix);
            stage.scaled_add(c(dt), &k3);
            rhs(&stage, &mut k4, &mut channel_tmp);
            rho.matrix.scaled_add(c(dt / 6.0), &k1);
            rho.matrix.scaled_add(c(dt / 3.0), &k2);
            rho.matrix.scaled_add(c(dt / 3.0), &k3);
            rho.matrix.scaled_add(c(dt / 6.0), &k4);
        }
    }

    let tr = rho.trace();
    let trace_ok = (tr.re - 1.0).abs() <= 1e-8 && tr.im.abs() <= 1e-8;
    if !trace_ok {
        // the negated form also catches NaN from an unstable step size
        return Err(Error::numeric(format!(
            "lindblad_oracle trace drifted to {tr}; increase steps (got {steps})"
        )));
    }
    Ok(rho)
}

/// `op · m` with `op` sparse.
pub fn sparse_dense(op: &LinearOperator, m: &CMatrix) -> CMatrix {
    let mut out = CMatrix::zeros((m.nrows(), m.ncols()));
    accumulate_sparse_dense(&mut out, op, m, Complex64::ONE);
    out
}

/// `m · op` with `op` sparse.
pub fn dense_sparse(m: &CMatrix, op: &LinearOperator) -> CMatrix {
    let mut out = CMatrix::zeros((m.nrows(), m.ncols()));
    accumulate_dense_sparse(&mut out, m, op, Complex64::ONE);
    out
}

/// `out += factor · op · m` with `op` sparse.
fn accumulate_sparse_dense(out: &mut CMatrix, op: &LinearOperator, m: &CMatrix, factor: Complex64) {
    let cols = m.ncols();
    for (r, k, v) in op.entries() {
        let fv = factor * v;
        for j in 0..cols {
            out[[r, j]] += fv * m[[k, j]];
        }
    }
}

/// `out += factor · m · op` with `op` sparse.
fn accumulate_dense_sparse(out: &mut CMatrix, m: &CMatrix, op: &LinearOperator, factor: Complex64) {
    let rows = m.nrows();
    for (k, cidx, v) in op.entries() {
        let fv = factor * v;
        for r in 0..rows {
            out[[r, cidx]] += m[[r, k]] * fv;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{build_space, fidelity};
    use crate::verify::no_jump_block_oracle;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn single_space() -> Arc<SpaceDescriptor> {
        build_space(1, 2, 1).unwrap()
    }

    fn basis(space: &Arc<SpaceDescriptor>, lvl: AtomLevel, nh: u32, nv: u32) -> StateVector {
        StateVector::basis_state(space, space.index_of(&[lvl], &[nh, nv]).unwrap()).unwrap()
    }

    fn pseudo_random_state(space: &Arc<SpaceDescriptor>, seed: u64) -> StateVector {
        let mut s = seed as f64 * 0.0137 + 0.123;
        let mut psi = StateVector::zero(space);
        for amp in psi.amplitudes_mut() {
            s = (s * 997.0 + 0.618).fract();
            let re = s - 0.5;
            s = (s * 997.0 + 0.618).fract();
            *amp = Complex64::new(re, s - 0.5);
        }
        psi.normalized().unwrap()
    }

    #[test]
    fn hamiltonian_on_ground_vacuum() {
        let space = single_space();
        let h = effective_hamiltonian(&space, 2.5, 1).unwrap();
        let out = h.apply(&basis(&space, AtomLevel::GH, 0, 0)).unwrap();
        let target = space.index_of(&[AtomLevel::SH], &[1, 0]).unwrap();
        assert!((out.amplitude(target) - c(2.5)).norm() < 1e-15);
        assert!((out.norm_sqr() - 6.25).abs() < 1e-12);
    }

    #[test]
    fn hamiltonian_on_excited_photon() {
        let space = single_space();
        let h = effective_hamiltonian(&space, 1.0, 1).unwrap();
        let out = h.apply(&basis(&space, AtomLevel::SH, 1, 0)).unwrap();
        let target = space.index_of(&[AtomLevel::GH], &[0, 0]).unwrap();
        assert!((out.amplitude(target) - c(1.0)).norm() < 1e-15);
        assert!((out.norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hamiltonian_is_hermitian() {
        let space = build_space(2, 4, 2).unwrap();
        let h = effective_hamiltonian(&space, 1.3, 2).unwrap();
        assert!(h.adjoint().sub(&h).unwrap().is_zero(0.0));
    }

    #[test]
    fn generator_reduces_to_h_at_zero_kappa() {
        let space = single_space();
        let h = effective_hamiltonian(&space, 1.0, 1).unwrap();
        let g = no_jump_generator(&space, 1.0, 0.0, 1).unwrap();
        assert!(g.sub(&h).unwrap().is_zero(0.0));
    }

    #[test]
    fn generator_anti_hermitian_part_is_number_decay() {
        let space = single_space();
        let kappa = 0.7;
        let g = no_jump_generator(&space, 1.0, kappa, 1).unwrap();
        let anti = g.sub(&g.adjoint()).unwrap(); // = −2iκ n̂
        let (m_h, m_v) = space.modes_of_atom(1);
        let n = number_operator(&space, m_h)
            .add(&number_operator(&space, m_v))
            .unwrap();
        let expected = n.scaled(-I * c(2.0 * kappa));
        assert!(anti.sub(&expected).unwrap().is_zero(1e-15));
        // d‖ψ‖²/dt = −⟨ψ| i(G − G†) |ψ⟩ = −2κ⟨n̂⟩ ≤ 0
        for seed in 0..10 {
            let psi = pseudo_random_state(&space, seed);
            let v = psi.inner(&anti.apply(&psi).unwrap()).unwrap() * I;
            assert!(v.im.abs() < 1e-12);
            assert!(v.re >= -1e-12, "norm would grow: d/dt = {}", -v.re);
        }
    }

    #[test]
    fn evolve_zero_duration_is_identity() {
        let space = single_space();
        let g = no_jump_generator(&space, 1.0, 0.3, 1).unwrap();
        let psi = pseudo_random_state(&space, 3);
        let out = evolve_no_jump(&psi, &g, 0.0, 1).unwrap();
        assert!(psi.max_abs_diff(&out) < 1e-300);
    }

    #[test]
    fn evolve_unitary_limit_preserves_norm() {
        let space = single_space();
        let g = no_jump_generator(&space, 1.0, 0.0, 1).unwrap();
        let psi = pseudo_random_state(&space, 5);
        let out = evolve_no_jump(&psi, &g, 2.31, 1).unwrap();
        assert!((out.norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn evolve_matches_two_level_block_oracle() {
        let (omega, kappa, tau) = (1.0, 0.2, 1.3);
        let space = single_space();
        let g = no_jump_generator(&space, omega, kappa, 1).unwrap();
        let psi0 = basis(&space, AtomLevel::GH, 0, 0);
        let out = evolve_no_jump(&psi0, &g, tau, 1).unwrap();
        let (cg, cs) = no_jump_block_oracle(omega, kappa, tau).unwrap();
        let i_g = space.index_of(&[AtomLevel::GH], &[0, 0]).unwrap();
        let i_s = space.index_of(&[AtomLevel::SH], &[1, 0]).unwrap();
        assert!((out.amplitude(i_g) - cg).norm() < 1e-10);
        assert!((out.amplitude(i_s) - cs).norm() < 1e-10);
        let leak: f64 = out
            .amplitudes()
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != i_g && *i != i_s)
            .map(|(_, z)| z.norm_sqr())
            .sum();
        assert!(leak < 1e-24);
    }

    #[test]
    fn rk4_path_converges_with_step_halving() {
        let space = single_space();
        let g = no_jump_generator(&space, 1.0, 0.4, 1).unwrap();
        let psi = pseudo_random_state(&space, 11);
        let dense = evolve_no_jump(&psi, &g, 1.7, 1).unwrap();
        let coarse = rk4_evolve(&psi, &g, 1.7, 400).unwrap();
        let fine = rk4_evolve(&psi, &g, 1.7, 800).unwrap();
        assert!(coarse.max_abs_diff(&fine) < 1e-10);
        assert!(fine.max_abs_diff(&dense) < 1e-10);
    }

    #[test]
    fn closed_form_unitary_quarter_period() {
        let co = closed_form_coefficients(1.0, 0.0, FRAC_PI_2).unwrap();
        assert_eq!(co.a.re, FRAC_PI_2.cos());
        assert!((co.b - c(1.0)).norm() < 1e-15);
        let co2 = closed_form_coefficients(0.7, 0.0, 0.9).unwrap();
        assert_eq!(co2.a.re, (0.7_f64 * 0.9).cos());
        assert_eq!(co2.b.re, (0.7_f64 * 0.9).sin());
    }

    #[test]
    fn closed_form_zero_tau() {
        let co = closed_form_coefficients(2.0, 1.1, 0.0).unwrap();
        assert!((co.a - Complex64::ONE).norm() < 1e-15);
        assert!(co.b.norm() < 1e-15);
    }

    #[test]
    fn closed_form_matches_expm_oracle_all_regimes() {
        // includes overdamped (Ω < κ/2) and exactly critical (Ω = κ/2)
        for &(omega, kappa) in &[(1.0, 0.2), (0.3, 1.0), (0.5, 1.0), (2.0, 1.0), (1.0, 6.0)] {
            for &tau in &[0.1, 0.7, 1.3, 3.0] {
                let co = closed_form_coefficients(omega, kappa, tau).unwrap();
                let (cg, cs) = no_jump_block_oracle(omega, kappa, tau).unwrap();
                let norm = (cg.norm_sqr() + cs.norm_sqr()).sqrt();
                let a_ref = cg / norm;
                let b_ref = cs / norm * I; // cs = −i b
                assert!(
                    (co.a - a_ref).norm() < 1e-10 && (co.b - b_ref).norm() < 1e-10,
                    "mismatch at Ω={omega} κ={kappa} τ={tau}"
                );
            }
        }
    }

    #[test]
    fn p_no_emission_trivial_cases() {
        assert_eq!(p_no_emission(1.0, 0.0, 1.7).unwrap(), 1.0);
        assert_eq!(p_no_emission(1.0, 0.9, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn p_no_emission_matches_evolved_norm_for_any_input() {
        let (omega, kappa, tau) = (1.0, 0.2, 1.3);
        let p = p_no_emission(omega, kappa, tau).unwrap();
        let space = single_space();
        let g = no_jump_generator(&space, omega, kappa, 1).unwrap();
        for seed in 0..10 {
            let mut s = seed as f64 * 0.31 + 0.17;
            s = (s * 997.0 + 0.618).fract();
            let theta = s * PI;
            s = (s * 997.0 + 0.618).fract();
            let phase = s * 2.0 * PI;
            let alpha = c(theta.cos());
            let beta = Complex64::from_polar(theta.sin(), phase);
            let mut psi = StateVector::zero(&space);
            psi.amplitudes_mut()[space.index_of(&[AtomLevel::GH], &[0, 0]).unwrap()] = alpha;
            psi.amplitudes_mut()[space.index_of(&[AtomLevel::GV], &[0, 0]).unwrap()] = beta;
            let out = evolve_no_jump(&psi, &g, tau, 1).unwrap();
            assert!(
                (out.norm_sqr() - p).abs() < 1e-10,
                "seed {seed}: {} vs {p}",
                out.norm_sqr()
            );
        }
    }

    #[test]
    fn p_no_emission_monotone_in_kappa_below_zeno_regime() {
        // Survival decreases with κ on κ ∈ [0, Ω]. Far beyond that the
        // overdamped dynamics suppresses excitation and survival climbs back
        // (the turnaround sits at κ ≈ 1.2 Ω for τ = 2.7/Ω), so the grid
        // deliberately stops at κ = Ω.
        for &tau in &[0.3, 1.0, 2.7, 5.0] {
            let mut last = f64::INFINITY;
            for i in 0..=30 {
                let kappa = i as f64 / 30.0;
                let p = p_no_emission(1.0, kappa, tau).unwrap();
                assert!(p <= last + 1e-12, "not monotone at κ={kappa}, τ={tau}");
                last = p;
            }
        }
    }

    #[test]
    fn single_system_state_examples() {
        let space = single_space();
        let unit = NoJumpCoefficients {
            a: Complex64::ONE,
            b: Complex64::ZERO,
            omega_kappa: Complex64::ONE,
        };
        let s = single_system_state(Complex64::ONE, Complex64::ZERO, &unit, &space).unwrap();
        let expect = basis(&space, AtomLevel::GH, 0, 0);
        assert!(s.max_abs_diff(&expect) < 1e-15);

        let flipped = NoJumpCoefficients {
            a: Complex64::ZERO,
            b: Complex64::ONE,
            omega_kappa: Complex64::ONE,
        };
        let s2 = single_system_state(Complex64::ZERO, Complex64::ONE, &flipped, &space).unwrap();
        let i_sv = space.index_of(&[AtomLevel::SV], &[0, 1]).unwrap();
        assert!((s2.amplitude(i_sv) - (-I)).norm() < 1e-15);
        assert!((s2.norm() - 1.0).abs() < 1e-15);

        assert!(single_system_state(c(0.9), c(0.9), &unit, &space).is_err());
    }

    #[test]
    fn single_system_state_matches_numeric_evolution() {
        let space = single_space();
        for seed in 0..12 {
            let mut s = seed as f64 * 0.71 + 0.05;
            let mut draw = || {
                s = (s * 997.0 + 0.618).fract();
                s
            };
            let theta = draw() * PI;
            let phase = draw() * 2.0 * PI;
            let alpha = c(theta.cos());
            let beta = Complex64::from_polar(theta.sin(), phase);
            let omega = 0.5 + 2.0 * draw();
            let kappa = 2.0 * draw();
            let tau = 2.5 * draw();

            let co = closed_form_coefficients(omega, kappa, tau).unwrap();
            let closed = single_system_state(alpha, beta, &co, &space).unwrap();

            let mut psi0 = StateVector::zero(&space);
            psi0.amplitudes_mut()[space.index_of(&[AtomLevel::GH], &[0, 0]).unwrap()] = alpha;
            psi0.amplitudes_mut()[space.index_of(&[AtomLevel::GV], &[0, 0]).unwrap()] = beta;
            let g = no_jump_generator(&space, omega, kappa, 1).unwrap();
            let numeric = evolve_no_jump(&psi0, &g, tau, 1).unwrap();

            let f = fidelity(&closed, &numeric).unwrap();
            assert!(1.0 - f < 1e-10, "seed {seed}: fidelity {f}");
        }
    }

    #[test]
    fn decay_propagate_identity_at_zero() {
        let space = build_space(2, 4, 1).unwrap();
        let psi = pseudo_random_state(&space, 21);
        let out = decay_propagate(&psi, 1.0, 0.0, (0.0, 0.0)).unwrap();
        assert!(psi.max_abs_diff(&out) < 1e-12);
    }

    #[test]
    fn decay_propagate_long_time_leaves_atomic_part() {
        let space = single_space();
        let co = closed_form_coefficients(1.0, 0.3, 1.0).unwrap();
        let psi = single_system_state(c(0.6), c(0.8), &co, &space).unwrap();
        let out = decay_propagate(&psi, 0.3, 1e6, (0.4, 0.9)).unwrap();
        for (i, amp) in out.amplitudes().iter().enumerate() {
            if space.total_photons(i) > 0 {
                assert!(amp.norm() < 1e-12);
            }
        }
        assert!((out.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn decay_propagate_matches_generator_route() {
        let space = build_space(2, 4, 1).unwrap();
        let psi = pseudo_random_state(&space, 33);
        let (kappa, t, phases) = (1.0, 0.7, (0.3, 1.1));
        let fast = decay_propagate(&psi, kappa, t, phases).unwrap();
        let g = decay_generator(&space, kappa);
        let slow = path_phase_operator(&space, phases)
            .apply(&evolve_no_jump(&psi, &g, t, 1).unwrap())
            .unwrap()
            .normalized()
            .unwrap();
        assert!(fast.max_abs_diff(&slow) < 1e-10);
    }

    #[test]
    fn lindblad_constant_for_vacuum_without_drive() {
        let space = single_space();
        let vac = basis(&space, AtomLevel::GH, 0, 0);
        let params = SystemParams::new(1.0, 0.5, 0.0, 1.0); // tau = 0: drives never on
        let rho = lindblad_oracle(&vac, &params, 0.8, 200).unwrap();
        let expected = DensityMatrix::from_pure(&vac);
        assert!(linalg::max_abs_diff(rho.matrix(), expected.matrix()) < 1e-12);
    }

    #[test]
    fn lindblad_unitary_limit_keeps_purity() {
        let space = single_space();
        let psi = basis(&space, AtomLevel::GH, 0, 0);
        let params = SystemParams::new(1.0, 0.0, 5.0, 0.0);
        let rho = lindblad_oracle(&psi, &params, 1.1, 400).unwrap();
        assert!((rho.purity() - 1.0).abs() < 1e-8);
        assert!((rho.trace().re - 1.0).abs() < 1e-10);
        let g = no_jump_generator(&space, 1.0, 0.0, 1).unwrap();
        let evolved = evolve_no_jump(&psi, &g, 1.1, 1).unwrap();
        let expected = DensityMatrix::from_pure(&evolved);
        assert!(linalg::max_abs_diff(rho.matrix(), expected.matrix()) < 1e-8);
    }

    #[test]
    fn lindblad_joint_factorizes_over_systems() {
        // Σ_j b_j ρ b_j† = Σ_m a_m ρ a_m† (unitarity), so the joint
        // Lindbladian is a sum of independent per-system generators and a
        // product initial state stays a product. Pin the 256-dim integration
        // against the Kronecker square of the 16-dim one.
        let params = SystemParams::new(1.0, 0.25, 0.9, 2.0);
        let horizon = 1.4; // crosses the drive switch-off at τ = 0.9
        let single = single_space();
        let mut psi1 = StateVector::zero(&single);
        psi1.amplitudes_mut()[single.index_of(&[AtomLevel::GH], &[0, 0]).unwrap()] = c(0.6);
        psi1.amplitudes_mut()[single.index_of(&[AtomLevel::GV], &[0, 0]).unwrap()] = c(0.8);
        let rho1 = lindblad_oracle(&psi1, &params, horizon, 1400).unwrap();

        let joint_space = build_space(2, 4, 1).unwrap();
        let joint_initial = crate::hilbert::tensor(&psi1, &psi1).unwrap();
        let rho_joint = lindblad_oracle(&joint_initial, &params, horizon, 1400).unwrap();

        // assemble ρ₁ ⊗ ρ₁ in the atom-major joint ordering
        let mut expected = DensityMatrix::zeros(&joint_space);
        let joint_index = |i: usize, j: usize| -> usize {
            let li = single.label_of(i);
            let lj = single.label_of(j);
            let atoms = [li.atoms[0], lj.atoms[0]];
            let photons: Vec<u32> =
                li.photons.iter().chain(lj.photons.iter()).copied().collect();
            joint_space.index_of(&atoms, &photons).unwrap()
        };
        for r1 in 0..16 {
            for c1 in 0..16 {
                for r2 in 0..16 {
                    for c2 in 0..16 {
                        expected.matrix_mut()[[joint_index(r1, r2), joint_index(c1, c2)]] =
                            rho1.matrix()[[r1, c1]] * rho1.matrix()[[r2, c2]];
                    }
                }
            }
        }
        let dist = trace_distance(&rho_joint, &expected).unwrap();
        assert!(dist < 1e-6, "joint oracle deviates from factorized form: {dist:.2e}");
    }

    #[test]
    fn lindblad_detector_and_mode_channels_agree() {
        // Unitarity of the mode transform: Σ_j b_j ρ b_j† = Σ_m a_m ρ a_m†.
        let space = build_space(2, 4, 1).unwrap();
        let transform = crate::optics::reference_network();
        let jumps = crate::optics::jump_operators(&transform, &space, (0.3, 0.8)).unwrap();
        let psi = pseudo_random_state(&space, 7);
        let rho = DensityMatrix::from_pure(&psi);
        let dim = space.dimension();
        let mut via_detectors = CMatrix::zeros((dim, dim));
        for b in &jumps {
            let bm = sparse_dense(b, rho.matrix());
            via_detectors = via_detectors + dense_sparse(&bm, &b.adjoint());
        }
        let mut via_modes = CMatrix::zeros((dim, dim));
        for m in 0..4 {
            let a = mode_annihilator_by_index(&space, m);
            let am = sparse_dense(&a, rho.matrix());
            via_modes = via_modes + dense_sparse(&am, &a.adjoint());
        }
        assert!(linalg::max_abs_diff(&via_detectors, &via_modes) < 1e-12);
    }

    #[test]
    fn lindblad_reports_trace_drift_with_step_hint() {
        // a deliberately unstable step size blows the integration up; the
        // error message should point at the step count
        let space = single_space();
        let psi = basis(&space, AtomLevel::GH, 0, 0);
        let params = SystemParams::new(1.0, 2.0, 50.0, 0.0);
        match lindblad_oracle(&psi, &params, 50.0, 2) {
            Err(Error::Numeric(msg)) => assert!(msg.contains("steps"), "{msg}"),
            other => panic!("expected trace-drift error, got {other:?}"),
        }
    }

    #[test]
    fn params_validation() {
        assert!(SystemParams::new(1.0, 0.2, 1.3, 5.0).validate().is_ok());
        assert!(SystemParams::new(0.0, 0.2, 1.3, 5.0).validate().is_err());
        assert!(SystemParams::new(1.0, -0.1, 1.3, 5.0).validate().is_err());
        let mut p = SystemParams::new(1.0, 0.2, 1.3, 5.0);
        p.eta = 1.5;
        assert!(p.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn coefficients_normalized_in_all_regimes(
            omega in 0.05f64..5.0,
            kappa in 0.0f64..10.0,
            tau in 0.0f64..5.0,
        ) {
            let co = closed_form_coefficients(omega, kappa, tau).unwrap();
            let norm = co.a.norm_sqr() + co.b.norm_sqr();
            prop_assert!((norm - 1.0).abs() < 1e-12, "|a|²+|b|² = {}", norm);
        }

        #[test]
        fn coefficients_near_critical_damping(omega in 0.05f64..5.0, tau in 0.0f64..5.0) {
            // κ chosen so Ω_κτ sits inside the series guard band
            let kappa = 2.0 * omega * (1.0 - 1e-14);
            let co = closed_form_coefficients(omega, kappa, tau).unwrap();
            let norm = co.a.norm_sqr() + co.b.norm_sqr();
            prop_assert!((norm - 1.0).abs() < 1e-12);
            let (cg, cs) = no_jump_block_oracle(omega, kappa, tau).unwrap();
            let n = (cg.norm_sqr() + cs.norm_sqr()).sqrt();
            prop_assert!((co.a - cg / n).norm() < 1e-9);
            prop_assert!((co.b - cs / n * I).norm() < 1e-9);
        }

        #[test]
        fn survival_equals_norm_squared(
            omega in 0.1f64..3.0,
            kappa in 0.0f64..4.0,
            tau in 0.0f64..3.0,
        ) {
            let p = p_no_emission(omega, kappa, tau).unwrap();
            let (cg, cs) = no_jump_block_oracle(omega, kappa, tau).unwrap();
            prop_assert!((p - (cg.norm_sqr() + cs.norm_sqr())).abs() < 1e-10);
        }
    }
}
