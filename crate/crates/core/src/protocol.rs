//! The full heralded gate: input preparation, simultaneous step-1 no-jump
//! evolution, step-2 decay and two-fold coincidence detection, the
//! pattern-dependent Raman correction, verification against the ideal
//! controlled-phase truth table, and success-probability accounting.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;

use crate::dynamics::{
    closed_form_coefficients, decay_propagate, p_no_emission, SystemParams,
};
use crate::error::{Error, Result};
use crate::hilbert::{
    build_space, fidelity, project_vacuum, tensor, AtomLevel, LinearOperator, SpaceDescriptor,
    StateVector,
};
use crate::optics::{jump_operators, reference_network, Detector};

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// The two input qubits of the gate, each `α|gH⟩ + β|gV⟩`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtomInputs {
    pub alpha1: Complex64,
    pub beta1: Complex64,
    pub alpha2: Complex64,
    pub beta2: Complex64,
}

impl AtomInputs {
    pub fn new(alpha1: Complex64, beta1: Complex64, alpha2: Complex64, beta2: Complex64) -> Self {
        AtomInputs {
            alpha1,
            beta1,
            alpha2,
            beta2,
        }
    }

    /// Computational basis input; `true` selects `|gV⟩` (logic one).
    pub fn basis(one1: bool, one2: bool) -> Self {
        let amp = |one: bool| {
            if one {
                (Complex64::ZERO, Complex64::ONE)
            } else {
                (Complex64::ONE, Complex64::ZERO)
            }
        };
        let (a1, b1) = amp(one1);
        let (a2, b2) = amp(one2);
        AtomInputs::new(a1, b1, a2, b2)
    }

    /// Both atoms in `(|gH⟩ + |gV⟩)/√2`.
    pub fn uniform() -> Self {
        let h = c(std::f64::consts::FRAC_1_SQRT_2);
        AtomInputs::new(h, h, h, h)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, a, b) in [
            ("atom 1", self.alpha1, self.beta1),
            ("atom 2", self.alpha2, self.beta2),
        ] {
            let n = a.norm_sqr() + b.norm_sqr();
            if (n - 1.0).abs() > 1e-9 {
                return Err(Error::argument(format!(
                    "{name} input not normalized: |α|²+|β|² = {n}"
                )));
            }
        }
        Ok(())
    }
}

/// Which heralded-state class a detector pair projects onto.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternClass {
    /// {D1,D3} and {D2,D4}: the (+,+,+,−) conditional state.
    A,
    /// {D1,D4} and {D2,D3}: the (+,+,−,+) conditional state.
    B,
}

/// A set of detectors that clicked during the detection window.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct DetectionPattern {
    clicked: BTreeSet<Detector>,
}

impl DetectionPattern {
    pub fn of(detectors: &[Detector]) -> Self {
        DetectionPattern {
            clicked: detectors.iter().copied().collect(),
        }
    }

    pub fn clicked(&self) -> impl Iterator<Item = Detector> + '_ {
        self.clicked.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.clicked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clicked.is_empty()
    }

    /// The four heralding pairs, in documentation order.
    pub fn heralding_patterns() -> [DetectionPattern; 4] {
        [
            DetectionPattern::of(&[Detector::D1, Detector::D3]),
            DetectionPattern::of(&[Detector::D2, Detector::D4]),
            DetectionPattern::of(&[Detector::D1, Detector::D4]),
            DetectionPattern::of(&[Detector::D2, Detector::D3]),
        ]
    }

    /// Class A for {D1,D3}/{D2,D4}, class B for {D1,D4}/{D2,D3}, `None` for
    /// every other subset (non-heralding).
    pub fn class(&self) -> Option<PatternClass> {
        use Detector::*;
        let v: Vec<Detector> = self.clicked.iter().copied().collect();
        match v.as_slice() {
            [D1, D3] | [D2, D4] => Some(PatternClass::A),
            [D1, D4] | [D2, D3] => Some(PatternClass::B),
            _ => None,
        }
    }

    pub fn is_heralding(&self) -> bool {
        self.class().is_some()
    }

    pub fn label(&self) -> String {
        self.clicked.iter().map(|d| d.label()).collect()
    }

    pub fn parse(s: &str) -> Result<Self> {
        if s.len() % 2 != 0 {
            return Err(Error::argument(format!("bad detection pattern {s:?}")));
        }
        let mut clicked = BTreeSet::new();
        let chars: Vec<char> = s.chars().collect();
        for pair in chars.chunks(2) {
            let token: String = pair.iter().collect();
            let det = Detector::parse(&token)?;
            if !clicked.insert(det) {
                return Err(Error::argument(format!("detector {token} repeated in {s:?}")));
            }
        }
        Ok(DetectionPattern { clicked })
    }
}

impl fmt::Display for DetectionPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Everything a single heralded gate run produces.
#[derive(Debug, Clone)]
pub struct GateOutcome {
    pub pattern: DetectionPattern,
    /// Two-atom state after the coincidence projection and Raman correction.
    pub heralded_state: StateVector,
    /// Probability that step 1 emits no photon from either cavity.
    pub p_step1: f64,
    /// Probability of this heralding pattern given step-1 success, including
    /// the (1−η)² photon-loss factor.
    pub p_herald: f64,
    /// Overlap of the corrected heralded state with the ideal gate output.
    pub fidelity_cz: f64,
    /// Whether the pattern-dependent correction has been applied (always true
    /// for outcomes produced by `run_protocol`).
    pub corrected: bool,
}

impl GateOutcome {
    pub fn p_total(&self) -> f64 {
        self.p_step1 * self.p_herald
    }
}

fn single_space(params: &SystemParams) -> Result<Arc<SpaceDescriptor>> {
    build_space(1, 2, params.fock_cutoff)
}

/// Product state `(α₁|gH⟩+β₁|gV⟩)(α₂|gH⟩+β₂|gV⟩) ⊗ |0,0,0,0⟩`.
pub fn prepare_inputs(inputs: &AtomInputs, space: &Arc<SpaceDescriptor>) -> Result<StateVector> {
    inputs.validate()?;
    if space.n_atoms() != 2 || space.n_modes() != 4 {
        return Err(Error::argument("prepare_inputs needs the joint 2-atom, 4-mode space"));
    }
    let mut psi = StateVector::zero(space);
    for (lvl1, amp1) in [(AtomLevel::GH, inputs.alpha1), (AtomLevel::GV, inputs.beta1)] {
        for (lvl2, amp2) in [(AtomLevel::GH, inputs.alpha2), (AtomLevel::GV, inputs.beta2)] {
            let idx = space.index_of(&[lvl1, lvl2], &[0, 0, 0, 0])?;
            psi.amplitudes_mut()[idx] = amp1 * amp2;
        }
    }
    Ok(psi)
}

/// Step 1: drive both systems simultaneously for τ, conditioned on no
/// emission. Returns the joint post-drive product state and
/// `p_suc = P_single²`, the probability that neither cavity emitted.
pub fn step1(inputs: &AtomInputs, params: &SystemParams) -> Result<(StateVector, f64)> {
    inputs.validate()?;
    params.validate()?;
    let single = single_space(params)?;
    let coeffs = closed_form_coefficients(params.omega, params.kappa, params.tau)?;
    let psi1 = crate::dynamics::single_system_state(inputs.alpha1, inputs.beta1, &coeffs, &single)?;
    let psi2 = crate::dynamics::single_system_state(inputs.alpha2, inputs.beta2, &coeffs, &single)?;
    let joint = tensor(&psi1, &psi2)?;
    let p_single = p_no_emission(params.omega, params.kappa, params.tau)?;
    Ok((joint, p_single * p_single))
}

/// Closed-form per-pattern heralding weight
/// `(1−η)² · |b|⁴ (1−e^{−2κt})² / 8`.
pub fn per_pattern_probability(params: &SystemParams) -> Result<f64> {
    params.validate()?;
    let coeffs = closed_form_coefficients(params.omega, params.kappa, params.tau)?;
    let b2 = coeffs.b.norm_sqr();
    let window = 1.0 - (-2.0 * params.kappa * params.t_detect).exp();
    let survive = (1.0 - params.eta) * (1.0 - params.eta);
    Ok(survive * b2 * b2 * window * window / 8.0)
}

/// Total heralded success probability, summed over the four patterns:
/// `(1−η)² · |b|⁴ (1−e^{−2κt})² / 2`. Independent of the input state.
pub fn success_probability(params: &SystemParams) -> Result<f64> {
    Ok(4.0 * per_pattern_probability(params)?)
}

/// Project the step-1 output onto a two-fold coincidence.
///
/// Applies the step-2 decay with the propagation phases, then the two
/// detector jump operators of the pattern, projects the photon modes on
/// vacuum and renormalizes. The probability is computed from the jump
/// operators acting on the pre-decay state (the branching ratio) times the
/// accumulated-decay window factor `(1−e^{−2κt})²` per photon and the photon
/// survival `(1−η)²`; it equals the closed-form per-pattern weight.
pub fn detect_coincidence(
    state: &StateVector,
    pattern: &DetectionPattern,
    params: &SystemParams,
) -> Result<(StateVector, f64)> {
    params.validate()?;
    if !pattern.is_heralding() {
        return Err(Error::contract(format!(
            "pattern {pattern} is not a heralding coincidence"
        )));
    }
    let space = state.space();
    if space.n_atoms() != 2 || space.n_modes() != 4 {
        return Err(Error::argument("detect_coincidence needs the joint space"));
    }
    let dets: Vec<Detector> = pattern.clicked().collect();

    // The phases ride along in decay_propagate (they multiply each photon
    // amplitude exactly once), so the jump operators here are phase-free.
    let ops = jump_operators(&reference_network(), space, (0.0, 0.0))?;
    let decayed = decay_propagate(state, params.kappa, params.t_detect, params.phases())?;
    let projected = ops[dets[0].index()].apply(&ops[dets[1].index()].apply(&decayed)?)?;
    if projected.norm_sqr() < 1e-30 {
        return Err(Error::numeric(format!(
            "pattern {pattern} has vanishing amplitude for this input"
        )));
    }
    let heralded = project_vacuum(&projected, 1e-12)?.normalized()?;

    let branch = ops[dets[0].index()]
        .apply(&ops[dets[1].index()].apply(state)?)?
        .norm_sqr();
    let window = 1.0 - (-2.0 * params.kappa * params.t_detect).exp();
    let survive = (1.0 - params.eta) * (1.0 - params.eta);
    let probability = survive * branch * window * window;

    Ok((heralded, probability))
}

/// Single-atom 4×4 unitaries of the pattern-dependent Raman correction.
///
/// Class A patterns map `s_H → g_H, s_V → g_V` on both atoms (the g/s swap);
/// class B composes the same relabeling with a phase flip `|gV⟩ → −|gV⟩` on
/// atom 2. (Flipping atom 1 instead would work equally well; atom 2 is the
/// fixed convention here.) Returned operators act on the 4-level atom space.
pub fn correction_unitary(pattern: &DetectionPattern) -> Result<(LinearOperator, LinearOperator)> {
    let class = pattern.class().ok_or_else(|| {
        Error::contract(format!("pattern {pattern} is not a heralding coincidence"))
    })?;
    let atom = SpaceDescriptor::atoms_only(1)?;
    let mut swap = LinearOperator::zero(&atom);
    for (g, s) in [(AtomLevel::GH, AtomLevel::SH), (AtomLevel::GV, AtomLevel::SV)] {
        swap.add_entry(g.index(), s.index(), Complex64::ONE);
        swap.add_entry(s.index(), g.index(), Complex64::ONE);
    }
    let u1 = swap.clone();
    let u2 = match class {
        PatternClass::A => swap,
        PatternClass::B => {
            let mut z = LinearOperator::identity(&atom);
            let mut flip = LinearOperator::zero(&atom);
            flip.add_entry(
                AtomLevel::GV.index(),
                AtomLevel::GV.index(),
                c(-2.0),
            );
            z = z.add(&flip)?;
            z.matmul(&swap)?
        }
    };
    Ok((u1, u2))
}

/// Embed two single-atom operators as `U₁ ⊗ U₂` on the two-atom space.
pub fn two_atom_operator(u1: &LinearOperator, u2: &LinearOperator) -> Result<LinearOperator> {
    let two = SpaceDescriptor::atoms_only(2)?;
    let mut out = LinearOperator::zero(&two);
    for (r1, c1, v1) in u1.entries() {
        for (r2, c2, v2) in u2.entries() {
            out.add_entry(r1 * 4 + r2, c1 * 4 + c2, v1 * v2);
        }
    }
    Ok(out)
}

/// Apply the pattern's correction to a heralded two-atom state.
pub fn apply_correction(state: &StateVector, pattern: &DetectionPattern) -> Result<StateVector> {
    if state.space().n_atoms() != 2 || state.space().n_modes() != 0 {
        return Err(Error::argument("correction applies to the two-atom reduced state"));
    }
    let (u1, u2) = correction_unitary(pattern)?;
    two_atom_operator(&u1, &u2)?.apply(state)
}

/// The ideal controlled-phase action on the inputs, in the `|gH⟩ = |0⟩`,
/// `|gV⟩ = |1⟩` encoding: only `|gV⟩|gV⟩` flips sign.
pub fn ideal_cz(inputs: &AtomInputs) -> Result<StateVector> {
    inputs.validate()?;
    let two = SpaceDescriptor::atoms_only(2)?;
    let mut psi = StateVector::zero(&two);
    let idx = |l1: AtomLevel, l2: AtomLevel| two.index_of(&[l1, l2], &[]);
    psi.amplitudes_mut()[idx(AtomLevel::GH, AtomLevel::GH)?] = inputs.alpha1 * inputs.alpha2;
    psi.amplitudes_mut()[idx(AtomLevel::GV, AtomLevel::GH)?] = inputs.beta1 * inputs.alpha2;
    psi.amplitudes_mut()[idx(AtomLevel::GH, AtomLevel::GV)?] = inputs.alpha1 * inputs.beta2;
    psi.amplitudes_mut()[idx(AtomLevel::GV, AtomLevel::GV)?] = -inputs.beta1 * inputs.beta2;
    Ok(psi)
}

/// Reference conditional two-atom state (s-level basis, before correction)
/// for a pattern class: `(+,+,+,−)` for class A, `(+,+,−,+)` for class B.
pub fn reference_heralded_state(inputs: &AtomInputs, class: PatternClass) -> Result<StateVector> {
    inputs.validate()?;
    let two = SpaceDescriptor::atoms_only(2)?;
    let mut psi = StateVector::zero(&two);
    let idx = |l1: AtomLevel, l2: AtomLevel| two.index_of(&[l1, l2], &[]);
    let (s01, s11) = match class {
        PatternClass::A => (c(1.0), c(-1.0)),
        PatternClass::B => (c(-1.0), c(1.0)),
    };
    psi.amplitudes_mut()[idx(AtomLevel::SH, AtomLevel::SH)?] = inputs.alpha1 * inputs.alpha2;
    psi.amplitudes_mut()[idx(AtomLevel::SV, AtomLevel::SH)?] = inputs.beta1 * inputs.alpha2;
    psi.amplitudes_mut()[idx(AtomLevel::SH, AtomLevel::SV)?] = s01 * inputs.alpha1 * inputs.beta2;
    psi.amplitudes_mut()[idx(AtomLevel::SV, AtomLevel::SV)?] = s11 * inputs.beta1 * inputs.beta2;
    psi.normalized()
}

/// Run the whole gate for one heralding pattern: step 1, coincidence
/// detection, correction, and fidelity against the ideal controlled-phase
/// output.
pub fn run_protocol(
    inputs: &AtomInputs,
    params: &SystemParams,
    pattern: &DetectionPattern,
) -> Result<GateOutcome> {
    let (state, p_step1) = step1(inputs, params)?;
    let (heralded, p_herald) = detect_coincidence(&state, pattern, params)?;
    let corrected = apply_correction(&heralded, pattern)?;
    let ideal = ideal_cz(inputs)?;
    let fidelity_cz = fidelity(&corrected, &ideal)?;
    Ok(GateOutcome {
        pattern: pattern.clone(),
        heralded_state: corrected,
        p_step1,
        p_herald,
        fidelity_cz,
        corrected: true,
    })
}

/// Header of the sweep CSV; every row is written by [`sweep_csv_row`].
pub const SWEEP_CSV_HEADER: &str =
    "omega,kappa,tau,t_detect,phi1,phi2,eta,pattern,p_step1,p_herald,p_total,fidelity_cz";

fn fmt_f64(x: f64) -> String {
    // 17 significant digits: enough to round-trip any f64 bit pattern
    format!("{:.16e}", x)
}

pub fn sweep_csv_row(params: &SystemParams, outcome: &GateOutcome) -> String {
    let fields = [
        fmt_f64(params.omega),
        fmt_f64(params.kappa),
        fmt_f64(params.tau),
        fmt_f64(params.t_detect),
        fmt_f64(params.phi1),
        fmt_f64(params.phi2),
        fmt_f64(params.eta),
        outcome.pattern.label(),
        fmt_f64(outcome.p_step1),
        fmt_f64(outcome.p_herald),
        fmt_f64(outcome.p_total()),
        fmt_f64(outcome.fidelity_cz),
    ];
    fields.join(",")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{evolve_no_jump, total_no_jump_generator};
    use crate::hilbert::StateVector;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, PI};

    const I: Complex64 = Complex64::new(0.0, 1.0);

    fn params() -> SystemParams {
        let mut p = SystemParams::new(1.0, 0.2, 1.3, 25.0);
        p.phi1 = 0.0;
        p.phi2 = 0.0;
        p
    }

    fn random_inputs(seed: u64) -> AtomInputs {
        let mut s = seed as f64 * 0.0193 + 0.07;
        let mut draw = || {
            s = (s * 997.0 + 0.618).fract();
            s
        };
        let t1 = draw() * PI;
        let p1 = draw() * 2.0 * PI;
        let t2 = draw() * PI;
        let p2 = draw() * 2.0 * PI;
        AtomInputs::new(
            c(t1.cos()),
            Complex64::from_polar(t1.sin(), p1),
            c(t2.cos()),
            Complex64::from_polar(t2.sin(), p2),
        )
    }

    #[test]
    fn prepare_basis_inputs() {
        let space = build_space(2, 4, 1).unwrap();
        let psi = prepare_inputs(&AtomInputs::basis(false, false), &space).unwrap();
        let idx = space
            .index_of(&[AtomLevel::GH, AtomLevel::GH], &[0, 0, 0, 0])
            .unwrap();
        assert!((psi.amplitude(idx) - Complex64::ONE).norm() < 1e-15);
        assert!((psi.norm() - 1.0).abs() < 1e-15);

        let psi = prepare_inputs(&AtomInputs::basis(true, true), &space).unwrap();
        let idx = space
            .index_of(&[AtomLevel::GV, AtomLevel::GV], &[0, 0, 0, 0])
            .unwrap();
        assert!((psi.amplitude(idx) - Complex64::ONE).norm() < 1e-15);
    }

    #[test]
    fn prepare_superposition_amplitudes() {
        let space = build_space(2, 4, 1).unwrap();
        let h = c(FRAC_1_SQRT_2);
        let inputs = AtomInputs::new(h, h, Complex64::ONE, Complex64::ZERO);
        let psi = prepare_inputs(&inputs, &space).unwrap();
        for (l1, expected) in [(AtomLevel::GH, h), (AtomLevel::GV, h)] {
            let idx = space.index_of(&[l1, AtomLevel::GH], &[0, 0, 0, 0]).unwrap();
            assert!((psi.amplitude(idx) - expected).norm() < 1e-15);
        }
        assert!(prepare_inputs(&AtomInputs::new(h, h, h, c(0.9)), &space).is_err());
    }

    #[test]
    fn step1_zero_tau_is_input() {
        let mut p = params();
        p.tau = 0.0;
        let inputs = random_inputs(1);
        let (state, p_suc) = step1(&inputs, &p).unwrap();
        let expected = prepare_inputs(&inputs, state.space()).unwrap();
        assert!(state.max_abs_diff(&expected) < 1e-12);
        assert_eq!(p_suc, 1.0);
    }

    #[test]
    fn step1_quarter_period_fully_excites() {
        let mut p = params();
        p.kappa = 0.0;
        p.tau = FRAC_PI_2;
        let (state, p_suc) = step1(&AtomInputs::uniform(), &p).unwrap();
        assert_eq!(p_suc, 1.0);
        let space = state.space();
        // every surviving amplitude lives in the s ⊗ one-photon sector
        for (i, amp) in state.amplitudes().iter().enumerate() {
            if amp.norm() > 1e-12 {
                assert_eq!(space.total_photons(i), 2, "amplitude at {:?}", space.label_of(i));
            }
        }
    }

    #[test]
    fn step1_matches_joint_numeric_evolution() {
        let p = params();
        for seed in [2, 7, 19] {
            let inputs = random_inputs(seed);
            let (closed, p_suc) = step1(&inputs, &p).unwrap();
            let space = closed.space();
            let prepared = prepare_inputs(&inputs, space).unwrap();
            let gen = total_no_jump_generator(space, p.omega, p.kappa).unwrap();
            let numeric = evolve_no_jump(&prepared, &gen, p.tau, 1).unwrap();
            let f = fidelity(&closed, &numeric).unwrap();
            assert!(1.0 - f < 1e-10, "fidelity {f}");
            assert!((numeric.norm_sqr() - p_suc).abs() < 1e-10);
        }
    }

    #[test]
    fn coincidence_on_basis_input() {
        let p = params();
        let inputs = AtomInputs::basis(false, false);
        let (state, _) = step1(&inputs, &p).unwrap();
        let pattern = DetectionPattern::of(&[Detector::D1, Detector::D3]);
        let (heralded, prob) = detect_coincidence(&state, &pattern, &p).unwrap();

        let two = SpaceDescriptor::atoms_only(2).unwrap();
        let idx = two.index_of(&[AtomLevel::SH, AtomLevel::SH], &[]).unwrap();
        assert!((heralded.amplitude(idx).norm() - 1.0).abs() < 1e-12);

        let expected = per_pattern_probability(&p).unwrap();
        assert!(
            ((prob - expected) / expected).abs() < 1e-8,
            "prob {prob} vs closed form {expected}"
        );
    }

    #[test]
    fn coincidence_projected_states_match_both_classes() {
        let p = params();
        let inputs = AtomInputs::uniform();
        let (state, _) = step1(&inputs, &p).unwrap();

        let (h_a, _) = detect_coincidence(
            &state,
            &DetectionPattern::of(&[Detector::D1, Detector::D3]),
            &p,
        )
        .unwrap();
        let ref_a = reference_heralded_state(&inputs, PatternClass::A).unwrap();
        assert!(1.0 - fidelity(&h_a, &ref_a).unwrap() < 1e-12);

        let (h_b, _) = detect_coincidence(
            &state,
            &DetectionPattern::of(&[Detector::D1, Detector::D4]),
            &p,
        )
        .unwrap();
        let ref_b = reference_heralded_state(&inputs, PatternClass::B).unwrap();
        assert!(1.0 - fidelity(&h_b, &ref_b).unwrap() < 1e-12);
    }

    #[test]
    fn coincidence_rejects_non_heralding_patterns() {
        let p = params();
        let (state, _) = step1(&AtomInputs::uniform(), &p).unwrap();
        for pat in [
            DetectionPattern::of(&[Detector::D1, Detector::D2]),
            DetectionPattern::of(&[Detector::D1]),
            DetectionPattern::of(&[Detector::D1, Detector::D2, Detector::D3]),
        ] {
            match detect_coincidence(&state, &pat, &p) {
                Err(Error::Contract(_)) => {}
                other => panic!("expected contract error for {pat}, got {other:?}"),
            }
        }
    }

    #[test]
    fn coincidence_zero_amplitude_guard() {
        let mut p = params();
        p.tau = 0.0; // b = 0: no photons are ever created
        let (state, _) = step1(&AtomInputs::uniform(), &p).unwrap();
        let pattern = DetectionPattern::of(&[Detector::D1, Detector::D3]);
        match detect_coincidence(&state, &pattern, &p) {
            Err(Error::Numeric(_)) => {}
            other => panic!("expected numeric guard, got {other:?}"),
        }
    }

    #[test]
    fn pattern_class_partners_agree_exactly() {
        let p = params();
        for seed in [3, 5, 11] {
            let inputs = random_inputs(seed);
            let (state, _) = step1(&inputs, &p).unwrap();
            let pairs = [
                ([Detector::D1, Detector::D3], [Detector::D2, Detector::D4]),
                ([Detector::D1, Detector::D4], [Detector::D2, Detector::D3]),
            ];
            for (first, partner) in pairs {
                let (s1, p1) =
                    detect_coincidence(&state, &DetectionPattern::of(&first), &p).unwrap();
                let (s2, p2) =
                    detect_coincidence(&state, &DetectionPattern::of(&partner), &p).unwrap();
                assert!(s1.max_abs_diff(&s2) < 1e-12);
                assert!((p1 - p2).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn per_pattern_probability_input_independent() {
        let p = params();
        let reference = per_pattern_probability(&p).unwrap();
        for seed in 0..8 {
            let inputs = random_inputs(seed);
            let (state, _) = step1(&inputs, &p).unwrap();
            for pattern in DetectionPattern::heralding_patterns() {
                let (_, prob) = detect_coincidence(&state, &pattern, &p).unwrap();
                assert!(
                    (prob - reference).abs() < 1e-10,
                    "seed {seed} pattern {pattern}: {prob} vs {reference}"
                );
            }
        }
    }

    #[test]
    fn jump_order_is_irrelevant() {
        let p = params();
        let (state, _) = step1(&AtomInputs::uniform(), &p).unwrap();
        let space = state.space();
        let ops = jump_operators(&reference_network(), space, (0.0, 0.0)).unwrap();
        let decayed = decay_propagate(&state, p.kappa, p.t_detect, p.phases()).unwrap();
        let ab = ops[0].apply(&ops[2].apply(&decayed).unwrap()).unwrap();
        let ba = ops[2].apply(&ops[0].apply(&decayed).unwrap()).unwrap();
        assert!(ab.max_abs_diff(&ba) < 1e-12);
        // and structurally, as operator products
        let comm = ops[0]
            .matmul(&ops[2])
            .unwrap()
            .sub(&ops[2].matmul(&ops[0]).unwrap())
            .unwrap();
        assert!(comm.is_zero(1e-14));
    }

    #[test]
    fn correction_maps_both_classes_to_the_gate_state() {
        for seed in 0..6 {
            let inputs = random_inputs(seed + 100);
            let ideal = ideal_cz(&inputs).unwrap();
            let ref_a = reference_heralded_state(&inputs, PatternClass::A).unwrap();
            let corrected_a =
                apply_correction(&ref_a, &DetectionPattern::of(&[Detector::D1, Detector::D3]))
                    .unwrap();
            assert!(1.0 - fidelity(&corrected_a, &ideal).unwrap() < 1e-12);

            let ref_b = reference_heralded_state(&inputs, PatternClass::B).unwrap();
            let corrected_b =
                apply_correction(&ref_b, &DetectionPattern::of(&[Detector::D2, Detector::D3]))
                    .unwrap();
            assert!(1.0 - fidelity(&corrected_b, &ideal).unwrap() < 1e-12);
        }
    }

    #[test]
    fn class_b_correction_not_involutive() {
        let inputs = AtomInputs::uniform();
        let ref_b = reference_heralded_state(&inputs, PatternClass::B).unwrap();
        let pattern = DetectionPattern::of(&[Detector::D1, Detector::D4]);
        let once = apply_correction(&ref_b, &pattern).unwrap();
        let twice = apply_correction(&once, &pattern).unwrap();
        assert!(once.max_abs_diff(&twice) > 0.1);

        // class A is a plain swap, hence involutive
        let ref_a = reference_heralded_state(&inputs, PatternClass::A).unwrap();
        let pat_a = DetectionPattern::of(&[Detector::D1, Detector::D3]);
        let once_a = apply_correction(&ref_a, &pat_a).unwrap();
        let twice_a = apply_correction(&once_a, &pat_a).unwrap();
        assert!(ref_a.max_abs_diff(&twice_a) < 1e-15);
    }

    #[test]
    fn correction_unitaries_are_unitary() {
        for pattern in DetectionPattern::heralding_patterns() {
            let (u1, u2) = correction_unitary(&pattern).unwrap();
            for u in [u1, u2] {
                let prod = u.adjoint().matmul(&u).unwrap();
                let eye = LinearOperator::identity(u.space());
                assert!(prod.sub(&eye).unwrap().is_zero(1e-15));
            }
        }
        let bad = DetectionPattern::of(&[Detector::D1, Detector::D2]);
        assert!(matches!(correction_unitary(&bad), Err(Error::Contract(_))));
    }

    #[test]
    fn ideal_cz_truth_table() {
        // control |0⟩: no sign anywhere
        let out = ideal_cz(&AtomInputs::basis(false, true)).unwrap();
        let two = SpaceDescriptor::atoms_only(2).unwrap();
        let idx = two.index_of(&[AtomLevel::GH, AtomLevel::GV], &[]).unwrap();
        assert!((out.amplitude(idx) - Complex64::ONE).norm() < 1e-15);

        // |11⟩ picks up the minus sign
        let out = ideal_cz(&AtomInputs::basis(true, true)).unwrap();
        let idx = two.index_of(&[AtomLevel::GV, AtomLevel::GV], &[]).unwrap();
        assert!((out.amplitude(idx) + Complex64::ONE).norm() < 1e-15);
    }

    #[test]
    fn run_protocol_perfect_fidelity_every_pattern() {
        let p = params();
        let inputs = AtomInputs::uniform();
        for pattern in DetectionPattern::heralding_patterns() {
            let outcome = run_protocol(&inputs, &p, &pattern).unwrap();
            assert!(
                1.0 - outcome.fidelity_cz < 1e-10,
                "pattern {pattern}: fidelity {}",
                outcome.fidelity_cz
            );
            assert!(outcome.corrected);
            assert!((outcome.p_total() - outcome.p_step1 * outcome.p_herald).abs() < 1e-18);
        }
    }

    #[test]
    fn run_protocol_phase_and_loss_independent() {
        let mut p = params();
        let inputs = random_inputs(42);
        let pattern = DetectionPattern::of(&[Detector::D2, Detector::D3]);
        let baseline = run_protocol(&inputs, &p, &pattern).unwrap();
        for (phi1, phi2, eta) in [(1.2, 0.0, 0.0), (0.0, 4.4, 0.0), (2.9, 5.1, 0.0), (0.7, 1.3, 0.6)] {
            p.phi1 = phi1;
            p.phi2 = phi2;
            p.eta = eta;
            let outcome = run_protocol(&inputs, &p, &pattern).unwrap();
            assert!((outcome.fidelity_cz - baseline.fidelity_cz).abs() < 1e-12);
            let expected_scale = (1.0 - eta) * (1.0 - eta);
            assert!(
                (outcome.p_herald - baseline.p_herald * expected_scale).abs() < 1e-15,
                "loss scaling broken"
            );
        }
    }

    #[test]
    fn heralded_map_is_linear() {
        // unnormalized heralded amplitudes are linear in the product of the
        // input coefficient vectors
        let p = params();
        let space = build_space(2, 4, 1).unwrap();
        let ops = jump_operators(&reference_network(), &space, (0.0, 0.0)).unwrap();
        let single = build_space(1, 2, 1).unwrap();
        let coeffs = closed_form_coefficients(p.omega, p.kappa, p.tau).unwrap();
        let decay = crate::dynamics::decay_generator(&space, p.kappa);
        let phase_op = crate::dynamics::path_phase_operator(&space, p.phases());

        let unnormalized_map = |a1: Complex64, b1: Complex64, a2: Complex64, b2: Complex64| {
            // bypass the input-normalization contract to probe raw linearity
            let mut s1 = StateVector::zero(&single);
            let g00 = single.index_of(&[AtomLevel::GH], &[0, 0]).unwrap();
            let s10 = single.index_of(&[AtomLevel::SH], &[1, 0]).unwrap();
            let v00 = single.index_of(&[AtomLevel::GV], &[0, 0]).unwrap();
            let sv01 = single.index_of(&[AtomLevel::SV], &[0, 1]).unwrap();
            s1.amplitudes_mut()[g00] = a1 * coeffs.a;
            s1.amplitudes_mut()[s10] = a1 * (-I) * coeffs.b;
            s1.amplitudes_mut()[v00] = b1 * coeffs.a;
            s1.amplitudes_mut()[sv01] = b1 * (-I) * coeffs.b;
            let mut s2 = StateVector::zero(&single);
            s2.amplitudes_mut()[g00] = a2 * coeffs.a;
            s2.amplitudes_mut()[s10] = a2 * (-I) * coeffs.b;
            s2.amplitudes_mut()[v00] = b2 * coeffs.a;
            s2.amplitudes_mut()[sv01] = b2 * (-I) * coeffs.b;
            let joint = tensor(&s1, &s2).unwrap();
            let decayed = phase_op
                .apply(&evolve_no_jump(&joint, &decay, p.t_detect, 1).unwrap())
                .unwrap();
            let projected = ops[0].apply(&ops[2].apply(&decayed).unwrap()).unwrap();
            project_vacuum(&projected, 1e-9).unwrap()
        };

        let one = Complex64::ONE;
        let zero = Complex64::ZERO;
        let basis_images = [
            unnormalized_map(one, zero, one, zero),
            unnormalized_map(zero, one, one, zero),
            unnormalized_map(one, zero, zero, one),
            unnormalized_map(zero, one, zero, one),
        ];
        for seed in 0..50 {
            let inputs = random_inputs(seed + 500);
            let direct = unnormalized_map(inputs.alpha1, inputs.beta1, inputs.alpha2, inputs.beta2);
            let mut combo = basis_images[0].scaled(inputs.alpha1 * inputs.alpha2);
            combo = combo
                .add(&basis_images[1].scaled(inputs.beta1 * inputs.alpha2))
                .unwrap();
            combo = combo
                .add(&basis_images[2].scaled(inputs.alpha1 * inputs.beta2))
                .unwrap();
            combo = combo
                .add(&basis_images[3].scaled(inputs.beta1 * inputs.beta2))
                .unwrap();
            assert!(direct.max_abs_diff(&combo) < 1e-10, "seed {seed}");
        }
    }

    #[test]
    fn no_amplitude_reaches_the_cutoff_boundary() {
        // at fock_cutoff 2 the protocol never populates a two-photon mode:
        // the dynamics closes on the (g,0)/(s,1) blocks
        let mut p = params();
        p.fock_cutoff = 2;
        let (state, _) = step1(&AtomInputs::uniform(), &p).unwrap();
        let space = state.space();
        let boundary_weight: f64 = state
            .amplitudes()
            .iter()
            .enumerate()
            .filter(|(i, _)| (0..4).any(|m| space.photons_in_mode(*i, m) == 2))
            .map(|(_, z)| z.norm_sqr())
            .sum();
        assert!(boundary_weight < 1e-24, "leak {boundary_weight}");

        let decayed = decay_propagate(&state, p.kappa, 0.7, p.phases()).unwrap();
        let boundary_weight: f64 = decayed
            .amplitudes()
            .iter()
            .enumerate()
            .filter(|(i, _)| (0..4).any(|m| space.photons_in_mode(*i, m) == 2))
            .map(|(_, z)| z.norm_sqr())
            .sum();
        assert!(boundary_weight < 1e-24);
    }

    #[test]
    fn success_probability_limits() {
        let mut p = params();
        p.eta = 1.0;
        assert_eq!(success_probability(&p).unwrap(), 0.0);

        // b → 1 and a saturated detection window drive P_s toward 1/2
        let mut p = SystemParams::new(1.0, 1e-8, FRAC_PI_2, 1e12);
        p.eta = 0.0;
        let ps = success_probability(&p).unwrap();
        assert!((ps - 0.5).abs() < 1e-6, "P_s = {ps}");
    }

    #[test]
    fn success_probability_is_four_patterns() {
        let p = params();
        let total = success_probability(&p).unwrap();
        let per = per_pattern_probability(&p).unwrap();
        assert!((total - 4.0 * per).abs() < 1e-18);
    }

    #[test]
    fn pattern_parsing_and_labels() {
        let p = DetectionPattern::parse("D1D3").unwrap();
        assert_eq!(p, DetectionPattern::of(&[Detector::D3, Detector::D1]));
        assert_eq!(p.label(), "D1D3");
        assert_eq!(p.class(), Some(PatternClass::A));
        assert_eq!(
            DetectionPattern::parse("D2D3").unwrap().class(),
            Some(PatternClass::B)
        );
        assert_eq!(DetectionPattern::parse("D1D2").unwrap().class(), None);
        assert!(DetectionPattern::parse("D1D1").is_err());
        assert!(DetectionPattern::parse("D5").is_err());
    }

    #[test]
    fn csv_row_format_is_stable() {
        let p = params();
        let outcome = run_protocol(
            &AtomInputs::uniform(),
            &p,
            &DetectionPattern::of(&[Detector::D1, Detector::D3]),
        )
        .unwrap();
        let row = sweep_csv_row(&p, &outcome);
        assert_eq!(row.split(',').count(), SWEEP_CSV_HEADER.split(',').count());
        assert!(row.starts_with("1.0000000000000000e0,2.0000000000000001e-1,"));
        assert!(row.contains(",D1D3,"));
    }
}
