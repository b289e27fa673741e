//! Basis construction, state vectors, and operator algebra for the joint
//! system of four-level atoms and polarization cavity modes.
//!
//! Basis ordering is part of the public contract: atom factors first (atom 1,
//! then atom 2), then cavity modes in the fixed label order `c1H, c1V, c2H,
//! c2V`, each Fock factor running 0..=fock_cutoff. Indices flatten this
//! mixed-radix tuple most-significant-first, so
//! `index = ((a1·4 + a2)·d + n_c1H)·d + ... ` with `d = fock_cutoff + 1`.

use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;

use num_complex::Complex64;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::linalg::CMatrix;

/// The four long-lived Zeeman sublevels kept per atom. The excited levels are
/// adiabatically eliminated and never appear in the basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AtomLevel {
    GH,
    GV,
    SH,
    SV,
}

pub const ATOM_LEVELS: [AtomLevel; 4] = [AtomLevel::GH, AtomLevel::GV, AtomLevel::SH, AtomLevel::SV];

impl AtomLevel {
    pub fn index(self) -> usize {
        match self {
            AtomLevel::GH => 0,
            AtomLevel::GV => 1,
            AtomLevel::SH => 2,
            AtomLevel::SV => 3,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        ATOM_LEVELS
            .get(i)
            .copied()
            .ok_or_else(|| Error::argument(format!("atom level index {i} out of range")))
    }

    pub fn label(self) -> &'static str {
        match self {
            AtomLevel::GH => "gH",
            AtomLevel::GV => "gV",
            AtomLevel::SH => "sH",
            AtomLevel::SV => "sV",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        ATOM_LEVELS
            .iter()
            .copied()
            .find(|l| l.label() == s)
            .ok_or_else(|| Error::argument(format!("unknown atom level label {s:?}")))
    }
}

impl fmt::Display for AtomLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Shape of a tensor-product space: atoms × polarization modes with a Fock
/// cutoff per mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpaceDescriptor {
    n_atoms: usize,
    n_modes: usize,
    fock_cutoff: u32,
    dimension: usize,
}

/// Build a space descriptor for `n_atoms` atoms and `n_modes` cavity modes.
///
/// `fock_cutoff` is the maximum photon number per mode; the default of 1
/// suffices for the gate protocol because a single s-level excitation never
/// creates more than one photon per polarization mode.
pub fn build_space(n_atoms: usize, n_modes: usize, fock_cutoff: u32) -> Result<Arc<SpaceDescriptor>> {
    if !(n_atoms == 1 || n_atoms == 2) {
        return Err(Error::argument(format!("n_atoms must be 1 or 2, got {n_atoms}")));
    }
    if !(n_modes == 2 || n_modes == 4) {
        return Err(Error::argument(format!("n_modes must be 2 or 4, got {n_modes}")));
    }
    if fock_cutoff < 1 {
        return Err(Error::argument("fock_cutoff must be >= 1"));
    }
    Ok(Arc::new(SpaceDescriptor::raw(n_atoms, n_modes, fock_cutoff)))
}

impl SpaceDescriptor {
    fn raw(n_atoms: usize, n_modes: usize, fock_cutoff: u32) -> Self {
        let d = (fock_cutoff + 1) as usize;
        let dimension = 4usize.pow(n_atoms as u32) * d.pow(n_modes as u32);
        SpaceDescriptor {
            n_atoms,
            n_modes,
            fock_cutoff,
            dimension,
        }
    }

    /// Atom-only space (no photonic factors); used for heralded two-atom
    /// states after the photons have been projected on vacuum.
    pub fn atoms_only(n_atoms: usize) -> Result<Arc<Self>> {
        if !(n_atoms == 1 || n_atoms == 2) {
            return Err(Error::argument(format!("n_atoms must be 1 or 2, got {n_atoms}")));
        }
        Ok(Arc::new(SpaceDescriptor::raw(n_atoms, 0, 1)))
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn fock_cutoff(&self) -> u32 {
        self.fock_cutoff
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    fn fock_dim(&self) -> usize {
        (self.fock_cutoff + 1) as usize
    }

    /// Mode labels in basis order, e.g. `["c1H","c1V","c2H","c2V"]`.
    pub fn mode_labels(&self) -> Vec<String> {
        (0..self.n_modes)
            .map(|m| format!("c{}{}", m / 2 + 1, if m % 2 == 0 { "H" } else { "V" }))
            .collect()
    }

    /// 1-based cavity that mode `m` belongs to (`c1H, c1V` → 1, `c2H, c2V` → 2).
    pub fn cavity_of_mode(&self, m: usize) -> usize {
        m / 2 + 1
    }

    /// The two modes coupled to a given atom (1-based).
    pub fn modes_of_atom(&self, atom: usize) -> (usize, usize) {
        ((atom - 1) * 2, (atom - 1) * 2 + 1)
    }

    pub fn index_of(&self, atoms: &[AtomLevel], photons: &[u32]) -> Result<usize> {
        if atoms.len() != self.n_atoms || photons.len() != self.n_modes {
            return Err(Error::argument(format!(
                "label arity mismatch: got {} atoms / {} modes for a {}-atom / {}-mode space",
                atoms.len(),
                photons.len(),
                self.n_atoms,
                self.n_modes
            )));
        }
        let mut idx = 0usize;
        for a in atoms {
            idx = idx * 4 + a.index();
        }
        let d = self.fock_dim();
        for &n in photons {
            if n as usize >= d {
                return Err(Error::argument(format!(
                    "photon number {n} exceeds fock_cutoff {}",
                    self.fock_cutoff
                )));
            }
            idx = idx * d + n as usize;
        }
        Ok(idx)
    }

    pub fn label_of(&self, index: usize) -> BasisLabel {
        debug_assert!(index < self.dimension);
        let d = self.fock_dim();
        let mut rest = index;
        let mut photons = vec![0u32; self.n_modes];
        for m in (0..self.n_modes).rev() {
            photons[m] = (rest % d) as u32;
            rest /= d;
        }
        let mut atoms = vec![AtomLevel::GH; self.n_atoms];
        for a in (0..self.n_atoms).rev() {
            atoms[a] = AtomLevel::from_index(rest % 4).expect("level index < 4");
            rest /= 4;
        }
        BasisLabel { atoms, photons }
    }

    /// Photon number in mode `m` for basis state `index`.
    pub fn photons_in_mode(&self, index: usize, m: usize) -> u32 {
        let d = self.fock_dim();
        let shift = self.n_modes - 1 - m;
        ((index / d.pow(shift as u32)) % d) as u32
    }

    /// Total photon number of basis state `index`.
    pub fn total_photons(&self, index: usize) -> u32 {
        (0..self.n_modes).map(|m| self.photons_in_mode(index, m)).sum()
    }
}

/// Human-readable basis label, e.g. `gH,gV;0,1,0,0`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasisLabel {
    pub atoms: Vec<AtomLevel>,
    pub photons: Vec<u32>,
}

impl fmt::Display for BasisLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let atoms: Vec<&str> = self.atoms.iter().map(|a| a.label()).collect();
        if self.photons.is_empty() {
            write!(f, "{}", atoms.join(","))
        } else {
            let ns: Vec<String> = self.photons.iter().map(|n| n.to_string()).collect();
            write!(f, "{};{}", atoms.join(","), ns.join(","))
        }
    }
}

impl BasisLabel {
    pub fn parse(s: &str) -> Result<Self> {
        let (atom_part, photon_part) = match s.split_once(';') {
            Some((a, p)) => (a, Some(p)),
            None => (s, None),
        };
        let atoms = atom_part
            .split(',')
            .map(AtomLevel::parse)
            .collect::<Result<Vec<_>>>()?;
        let photons = match photon_part {
            Some(p) => p
                .split(',')
                .map(|n| {
                    n.parse::<u32>()
                        .map_err(|_| Error::argument(format!("bad photon count {n:?} in label {s:?}")))
                })
                .collect::<Result<Vec<_>>>()?,
            None => Vec::new(),
        };
        Ok(BasisLabel { atoms, photons })
    }
}

/// Complex state vector over a space; possibly unnormalized, since the norm
/// carries no-jump survival probability during conditional evolution.
#[derive(Debug, Clone)]
pub struct StateVector {
    space: Arc<SpaceDescriptor>,
    amplitudes: Vec<Complex64>,
}

impl StateVector {
    pub fn zero(space: &Arc<SpaceDescriptor>) -> Self {
        StateVector {
            space: Arc::clone(space),
            amplitudes: vec![Complex64::ZERO; space.dimension()],
        }
    }

    pub fn basis_state(space: &Arc<SpaceDescriptor>, index: usize) -> Result<Self> {
        if index >= space.dimension() {
            return Err(Error::argument(format!(
                "basis index {index} out of range for dimension {}",
                space.dimension()
            )));
        }
        let mut s = StateVector::zero(space);
        s.amplitudes[index] = Complex64::ONE;
        Ok(s)
    }

    pub fn from_amplitudes(space: &Arc<SpaceDescriptor>, amplitudes: Vec<Complex64>) -> Result<Self> {
        if amplitudes.len() != space.dimension() {
            return Err(Error::argument(format!(
                "amplitude vector length {} does not match dimension {}",
                amplitudes.len(),
                space.dimension()
            )));
        }
        Ok(StateVector {
            space: Arc::clone(space),
            amplitudes,
        })
    }

    pub fn space(&self) -> &Arc<SpaceDescriptor> {
        &self.space
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amplitudes
    }

    pub fn amplitude(&self, index: usize) -> Complex64 {
        self.amplitudes[index]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn inner(&self, other: &StateVector) -> Result<Complex64> {
        if self.space != other.space {
            return Err(Error::argument("inner product across different spaces"));
        }
        Ok(self
            .amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    pub fn scaled(&self, factor: Complex64) -> StateVector {
        StateVector {
            space: Arc::clone(&self.space),
            amplitudes: self.amplitudes.iter().map(|z| z * factor).collect(),
        }
    }

    pub fn add(&self, other: &StateVector) -> Result<StateVector> {
        if self.space != other.space {
            return Err(Error::argument("adding states on different spaces"));
        }
        Ok(StateVector {
            space: Arc::clone(&self.space),
            amplitudes: self
                .amplitudes
                .iter()
                .zip(&other.amplitudes)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn normalized(&self) -> Result<StateVector> {
        let n = self.norm();
        if n < 1e-150 {
            return Err(Error::numeric("cannot normalize a zero state"));
        }
        Ok(self.scaled(Complex64::new(1.0 / n, 0.0)))
    }

    /// Largest absolute amplitude difference.
    pub fn max_abs_diff(&self, other: &StateVector) -> f64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// Tensor product of two single-system states, flattened in the documented
/// joint basis ordering (both atoms first, then all modes).
pub fn tensor(left: &StateVector, right: &StateVector) -> Result<StateVector> {
    let ls = left.space();
    let rs = right.space();
    if ls.n_atoms() != 1 || rs.n_atoms() != 1 {
        return Err(Error::argument("tensor expects two single-atom factors"));
    }
    if ls.n_modes() != rs.n_modes() || ls.fock_cutoff() != rs.fock_cutoff() {
        return Err(Error::argument("tensor factors have mismatched mode structure"));
    }
    let joint = if ls.n_modes() == 0 {
        SpaceDescriptor::atoms_only(2)?
    } else {
        build_space(2, 2 * ls.n_modes(), ls.fock_cutoff())?
    };
    let mut out = StateVector::zero(&joint);
    let d = ls.dimension();
    for (il, &al) in left.amplitudes().iter().enumerate() {
        if al == Complex64::ZERO {
            continue;
        }
        let ll = ls.label_of(il);
        for (ir, &ar) in right.amplitudes().iter().enumerate() {
            if ar == Complex64::ZERO {
                continue;
            }
            let lr = rs.label_of(ir);
            let atoms = [ll.atoms[0], lr.atoms[0]];
            let photons: Vec<u32> = ll.photons.iter().chain(lr.photons.iter()).copied().collect();
            let j = joint.index_of(&atoms, &photons)?;
            out.amplitudes[j] = al * ar;
        }
    }
    debug_assert_eq!(d * rs.dimension(), joint.dimension());
    Ok(out)
}

/// `|⟨a|b⟩|² / (‖a‖²‖b‖²)` — insensitive to global phase and normalization.
pub fn fidelity(a: &StateVector, b: &StateVector) -> Result<f64> {
    let na = a.norm_sqr();
    let nb = b.norm_sqr();
    if na < 1e-300 || nb < 1e-300 {
        return Err(Error::argument("fidelity of a zero vector"));
    }
    let ip = a.inner(b)?;
    Ok(ip.norm_sqr() / (na * nb))
}

/// Sparse complex operator stored row-wise.
#[derive(Debug, Clone)]
pub struct LinearOperator {
    space: Arc<SpaceDescriptor>,
    rows: Vec<Vec<(usize, Complex64)>>,
}

impl LinearOperator {
    pub fn zero(space: &Arc<SpaceDescriptor>) -> Self {
        LinearOperator {
            space: Arc::clone(space),
            rows: vec![Vec::new(); space.dimension()],
        }
    }

    pub fn identity(space: &Arc<SpaceDescriptor>) -> Self {
        let mut op = LinearOperator::zero(space);
        for i in 0..space.dimension() {
            op.rows[i].push((i, Complex64::ONE));
        }
        op
    }

    pub fn space(&self) -> &Arc<SpaceDescriptor> {
        &self.space
    }

    pub fn dimension(&self) -> usize {
        self.space.dimension()
    }

    pub fn add_entry(&mut self, row: usize, col: usize, value: Complex64) {
        if value == Complex64::ZERO {
            return;
        }
        let r = &mut self.rows[row];
        match r.iter_mut().find(|(c, _)| *c == col) {
            Some((_, v)) => *v += value,
            None => r.push((col, value)),
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, Complex64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(r, row)| row.iter().map(move |&(c, v)| (r, c, v)))
    }

    pub fn apply(&self, state: &StateVector) -> Result<StateVector> {
        if *state.space() != self.space {
            return Err(Error::argument("operator applied to a state on a different space"));
        }
        let mut out = StateVector::zero(&self.space);
        for (r, row) in self.rows.iter().enumerate() {
            let mut acc = Complex64::ZERO;
            for &(c, v) in row {
                acc += v * state.amplitudes[c];
            }
            out.amplitudes[r] = acc;
        }
        Ok(out)
    }

    pub fn adjoint(&self) -> LinearOperator {
        let mut out = LinearOperator::zero(&self.space);
        for (r, c, v) in self.entries() {
            out.add_entry(c, r, v.conj());
        }
        out
    }

    pub fn scaled(&self, factor: Complex64) -> LinearOperator {
        let mut out = self.clone();
        for row in &mut out.rows {
            for (_, v) in row.iter_mut() {
                *v *= factor;
            }
        }
        out
    }

    pub fn add(&self, other: &LinearOperator) -> Result<LinearOperator> {
        if self.space != other.space {
            return Err(Error::argument("adding operators on different spaces"));
        }
        let mut out = self.clone();
        for (r, c, v) in other.entries() {
            out.add_entry(r, c, v);
        }
        Ok(out)
    }

    pub fn sub(&self, other: &LinearOperator) -> Result<LinearOperator> {
        self.add(&other.scaled(-Complex64::ONE))
    }

    /// Sparse matrix product `self · other`.
    pub fn matmul(&self, other: &LinearOperator) -> Result<LinearOperator> {
        if self.space != other.space {
            return Err(Error::argument("multiplying operators on different spaces"));
        }
        let mut out = LinearOperator::zero(&self.space);
        for (r, row) in self.rows.iter().enumerate() {
            for &(k, v1) in row {
                for &(c, v2) in &other.rows[k] {
                    out.add_entry(r, c, v1 * v2);
                }
            }
        }
        Ok(out)
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.entries().map(|(_, _, v)| v.norm()).fold(0.0, f64::max)
    }

    /// True when every stored entry rounds to zero at `tol` (structural check).
    pub fn is_zero(&self, tol: f64) -> bool {
        self.entries().all(|(_, _, v)| v.norm() <= tol)
    }

    pub fn to_dense(&self) -> CMatrix {
        let n = self.dimension();
        let mut m = CMatrix::zeros((n, n));
        for (r, c, v) in self.entries() {
            m[[r, c]] += v;
        }
        m
    }
}

/// Annihilation operator for one cavity mode: matrix elements √n on
/// (n−1 ← n) in that mode's factor, identity elsewhere.
pub fn mode_annihilator(space: &Arc<SpaceDescriptor>, mode: &str) -> Result<LinearOperator> {
    let labels = space.mode_labels();
    let m = labels
        .iter()
        .position(|l| l == mode)
        .ok_or_else(|| Error::argument(format!("unknown mode label {mode:?} (have {labels:?})")))?;
    Ok(mode_annihilator_by_index(space, m))
}

pub(crate) fn mode_annihilator_by_index(space: &Arc<SpaceDescriptor>, m: usize) -> LinearOperator {
    let mut op = LinearOperator::zero(space);
    let d = (space.fock_cutoff() + 1) as usize;
    let stride = d.pow((space.n_modes() - 1 - m) as u32);
    for i in 0..space.dimension() {
        let n = space.photons_in_mode(i, m);
        if n >= 1 {
            // target has one fewer photon in mode m
            let j = i - stride;
            op.add_entry(j, i, Complex64::new((n as f64).sqrt(), 0.0));
        }
    }
    op
}

/// Atomic ladder operator `|to⟩⟨from|` on one atom, identity elsewhere.
pub fn atom_transition(
    space: &Arc<SpaceDescriptor>,
    atom: usize,
    from: AtomLevel,
    to: AtomLevel,
) -> Result<LinearOperator> {
    if atom == 0 || atom > space.n_atoms() {
        return Err(Error::argument(format!(
            "atom index {atom} out of range for a {}-atom space",
            space.n_atoms()
        )));
    }
    let d = (space.fock_cutoff() + 1) as usize;
    let atom_stride =
        4usize.pow((space.n_atoms() - atom) as u32) * d.pow(space.n_modes() as u32);
    let mut op = LinearOperator::zero(space);
    let shift = (to.index() as isize - from.index() as isize) * atom_stride as isize;
    for i in 0..space.dimension() {
        let level = (i / atom_stride) % 4;
        if level == from.index() {
            let j = (i as isize + shift) as usize;
            op.add_entry(j, i, Complex64::ONE);
        }
    }
    Ok(op)
}

/// Projector onto the all-modes-vacuum sector, returned together with the
/// reduced atom-only state. Errors if the photonic part carries more than
/// `leak_tol` of the squared norm.
pub fn project_vacuum(state: &StateVector, leak_tol: f64) -> Result<StateVector> {
    let space = state.space();
    if space.n_modes() == 0 {
        return Ok(state.clone());
    }
    let atoms_space = SpaceDescriptor::atoms_only(space.n_atoms())?;
    let mut out = StateVector::zero(&atoms_space);
    let mut kept = 0.0;
    for (i, &amp) in state.amplitudes().iter().enumerate() {
        if amp == Complex64::ZERO {
            continue;
        }
        if space.total_photons(i) == 0 {
            let label = space.label_of(i);
            let j = atoms_space.index_of(&label.atoms, &[])?;
            out.amplitudes[j] = amp;
            kept += amp.norm_sqr();
        }
    }
    let total = state.norm_sqr();
    if total - kept > leak_tol * total.max(1e-300) {
        return Err(Error::numeric(format!(
            "vacuum projection discards {:.3e} of the squared norm (tolerance {leak_tol:.1e})",
            total - kept
        )));
    }
    Ok(out)
}

/// Write the amplitude dump: a JSON header record with the basis ordering and
/// cutoff, then one record per nonzero amplitude.
pub fn write_amplitude_dump<W: Write>(state: &StateVector, mut w: W) -> Result<()> {
    let space = state.space();
    let header = json!({
        "atom_levels": ATOM_LEVELS.iter().map(|l| l.label()).collect::<Vec<_>>(),
        "atoms": space.n_atoms(),
        "modes": space.mode_labels(),
        "fock_cutoff": space.fock_cutoff(),
    });
    writeln!(w, "{header}")?;
    for (i, amp) in state.amplitudes().iter().enumerate() {
        if *amp == Complex64::ZERO {
            continue;
        }
        let record = json!({
            "basis_label": space.label_of(i).to_string(),
            "re": amp.re,
            "im": amp.im,
        });
        writeln!(w, "{record}")?;
    }
    Ok(())
}

/// Parse a dump produced by [`write_amplitude_dump`].
pub fn read_amplitude_dump<R: BufRead>(r: R) -> Result<StateVector> {
    let mut lines = r.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::argument("empty amplitude dump"))??;
    let header: Value = serde_json::from_str(&header_line)
        .map_err(|e| Error::argument(format!("bad dump header: {e}")))?;
    let atoms = header["atoms"]
        .as_u64()
        .ok_or_else(|| Error::argument("dump header missing atoms"))? as usize;
    let modes = header["modes"]
        .as_array()
        .ok_or_else(|| Error::argument("dump header missing modes"))?
        .len();
    let cutoff = header["fock_cutoff"]
        .as_u64()
        .ok_or_else(|| Error::argument("dump header missing fock_cutoff"))? as u32;
    let space = if modes == 0 {
        SpaceDescriptor::atoms_only(atoms)?
    } else {
        build_space(atoms, modes, cutoff)?
    };
    let mut state = StateVector::zero(&space);
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Value = serde_json::from_str(&line)
            .map_err(|e| Error::argument(format!("bad dump record: {e}")))?;
        let label = BasisLabel::parse(
            rec["basis_label"]
                .as_str()
                .ok_or_else(|| Error::argument("dump record missing basis_label"))?,
        )?;
        let re = rec["re"]
            .as_f64()
            .ok_or_else(|| Error::argument("dump record missing re"))?;
        let im = rec["im"]
            .as_f64()
            .ok_or_else(|| Error::argument("dump record missing im"))?;
        let idx = space.index_of(&label.atoms, &label.photons)?;
        state.amplitudes_mut()[idx] = Complex64::new(re, im);
    }
    Ok(state)
}
