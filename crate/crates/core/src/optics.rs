//! The linear-optics detection network: PBS/QWP/phase elements composed into
//! a 4×4 transform from the cavity output modes `(a1H, a1V, a2H, a2V)` to the
//! detector modes `(b1, b2, b3, b4)`, and the detector jump operators derived
//! from it.
//!
//! Netlist format (one element per line, `#` comments):
//!
//! ```text
//! qwp <path> <fast-axis angle, rad>     # acts on both rails of path 1 or 2
//! phase <rail> <value, rad>             # e^{iφ} on one rail, e.g. 1V
//! pbs <path> <path>                     # transmit H, exchange the V rails
//! pbs <path> <detector> <detector>      # output splitter: H → first, V → second
//! ```
//!
//! The QWP Jones matrix uses the symmetric retarder convention
//! `cos(π/4)·I − i sin(π/4)·[[cos2θ, sin2θ], [sin2θ, −cos2θ]]`, and the PBS
//! is the plain V-rail exchange; residual reflection phases of the physical
//! elements are absorbed into the `phase` trims of the calibrated netlist.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use serde_json::json;

use crate::error::{Error, Result};
use crate::hilbert::{mode_annihilator_by_index, LinearOperator, SpaceDescriptor};

const I: Complex64 = Complex64::new(0.0, 1.0);

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// The four single-photon detectors at the network outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Detector {
    D1,
    D2,
    D3,
    D4,
}

pub const DETECTORS: [Detector; 4] = [Detector::D1, Detector::D2, Detector::D3, Detector::D4];

impl Detector {
    pub fn index(self) -> usize {
        match self {
            Detector::D1 => 0,
            Detector::D2 => 1,
            Detector::D3 => 2,
            Detector::D4 => 3,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        DETECTORS
            .get(i)
            .copied()
            .ok_or_else(|| Error::argument(format!("detector index {i} out of range")))
    }

    pub fn label(self) -> &'static str {
        match self {
            Detector::D1 => "D1",
            Detector::D2 => "D2",
            Detector::D3 => "D3",
            Detector::D4 => "D4",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        DETECTORS
            .iter()
            .copied()
            .find(|d| d.label() == s)
            .ok_or_else(|| Error::argument(format!("unknown detector {s:?}")))
    }
}

impl fmt::Display for Detector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementKind {
    Pbs,
    Qwp,
    Phase,
}

/// One optical element with the ports it couples and its parameter (QWP
/// fast-axis angle or phase value; unused for PBS).
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkElement {
    pub kind: ElementKind,
    pub ports: Vec<String>,
    pub parameter: f64,
}

impl NetworkElement {
    pub fn qwp(path: &str, angle: f64) -> Self {
        NetworkElement {
            kind: ElementKind::Qwp,
            ports: vec![path.to_string()],
            parameter: angle,
        }
    }

    pub fn phase(rail: &str, value: f64) -> Self {
        NetworkElement {
            kind: ElementKind::Phase,
            ports: vec![rail.to_string()],
            parameter: value,
        }
    }

    pub fn pbs(a: &str, b: &str) -> Self {
        NetworkElement {
            kind: ElementKind::Pbs,
            ports: vec![a.to_string(), b.to_string()],
            parameter: 0.0,
        }
    }

    pub fn pbs_split(path: &str, det_h: &str, det_v: &str) -> Self {
        NetworkElement {
            kind: ElementKind::Pbs,
            ports: vec![path.to_string(), det_h.to_string(), det_v.to_string()],
            parameter: 0.0,
        }
    }
}

pub const INPUT_MODES: [&str; 4] = ["a1H", "a1V", "a2H", "a2V"];
pub const OUTPUT_MODES: [&str; 4] = ["b1", "b2", "b3", "b4"];

/// 4×4 complex map from cavity output modes to detector modes:
/// `b_j = Σ_m matrix[j][m] a_m`, rows in `b1..b4` order, columns in
/// `(a1H, a1V, a2H, a2V)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeTransform {
    pub matrix: [[Complex64; 4]; 4],
}

impl ModeTransform {
    pub fn identity() -> Self {
        let mut matrix = [[Complex64::ZERO; 4]; 4];
        for (j, row) in matrix.iter_mut().enumerate() {
            row[j] = Complex64::ONE;
        }
        ModeTransform { matrix }
    }

    /// Largest entry of `B B† − I`.
    pub fn unitarity_residual(&self) -> f64 {
        let mut worst = 0.0_f64;
        for j in 0..4 {
            for k in 0..4 {
                let mut dot = Complex64::ZERO;
                for m in 0..4 {
                    dot += self.matrix[j][m] * self.matrix[k][m].conj();
                }
                let target = if j == k { Complex64::ONE } else { Complex64::ZERO };
                worst = worst.max((dot - target).norm());
            }
        }
        worst
    }

    pub fn max_abs_diff(&self, other: &ModeTransform) -> f64 {
        let mut worst = 0.0_f64;
        for j in 0..4 {
            for m in 0..4 {
                worst = worst.max((self.matrix[j][m] - other.matrix[j][m]).norm());
            }
        }
        worst
    }

    /// Row-major JSON export, each entry as an `[re, im]` pair.
    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<Vec<[f64; 2]>> = self
            .matrix
            .iter()
            .map(|row| row.iter().map(|z| [z.re, z.im]).collect())
            .collect();
        json!({
            "input_modes": INPUT_MODES,
            "output_modes": OUTPUT_MODES,
            "matrix": rows,
        })
    }
}

/// The detector-mode rows the scheme is built around:
/// `b1 = (a1H+a1V)/2 + a2V/√2`, `b2 = (a1H+a1V)/2 − a2V/√2`,
/// `b3 = (a1H−a1V)/2 + a2H/√2`, `b4 = −(a1H−a1V)/2 + a2H/√2`.
pub fn reference_network() -> ModeTransform {
    let h = 0.5;
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let rows = [
        [h, h, 0.0, r],
        [h, h, 0.0, -r],
        [h, -h, r, 0.0],
        [-h, h, r, 0.0],
    ];
    let mut matrix = [[Complex64::ZERO; 4]; 4];
    for j in 0..4 {
        for m in 0..4 {
            matrix[j][m] = c(rows[j][m]);
        }
    }
    ModeTransform { matrix }
}

/// The calibrated netlist whose composition reproduces [`reference_network`]
/// exactly: a QWP at π/4 between two π/2 phase trims realizes a polarization
/// Hadamard; one such stage sits on the cavity-1 path before the central PBS
/// and one on each output arm.
pub fn reference_netlist() -> &'static str {
    "\
# cavity-1 polarization Hadamard
phase 1V 1.5707963267948966
qwp 1 0.7853981633974483
phase 1V 1.5707963267948966
# central PBS interfering the two cavities
pbs 1 2
# output-arm Hadamards
phase 1V 1.5707963267948966
qwp 1 0.7853981633974483
phase 1V 1.5707963267948966
phase 2V 1.5707963267948966
qwp 2 0.7853981633974483
phase 2V 1.5707963267948966
# output splitters onto the four detectors
pbs 1 D1 D2
pbs 2 D3 D4
"
}

pub fn reference_netlist_elements() -> Vec<NetworkElement> {
    parse_netlist(reference_netlist()).expect("canonical netlist parses")
}

type Row = [Complex64; 4];

struct RailState {
    rails: BTreeMap<String, Row>,
    detectors: BTreeMap<String, Row>,
}

impl RailState {
    fn new() -> Self {
        let mut rails = BTreeMap::new();
        for (m, rail) in ["1H", "1V", "2H", "2V"].iter().enumerate() {
            let mut row = [Complex64::ZERO; 4];
            row[m] = Complex64::ONE;
            rails.insert(rail.to_string(), row);
        }
        RailState {
            rails,
            detectors: BTreeMap::new(),
        }
    }

    fn take(&mut self, rail: &str, pos: usize) -> Result<Row> {
        self.rails
            .remove(rail)
            .ok_or_else(|| Error::topology(pos, 1, format!("port {rail:?} is not live here")))
    }
}

fn validate_path(path: &str, pos: usize) -> Result<()> {
    if path == "1" || path == "2" {
        Ok(())
    } else {
        Err(Error::topology(pos, 1, format!("unknown path {path:?} (expected 1 or 2)")))
    }
}

/// Compose an ordered element list into a [`ModeTransform`].
///
/// An empty list yields the identity transform (rails map straight onto
/// outputs). If any output splitter appears, all four detectors must end up
/// assigned exactly once and no rail may be left dangling.
pub fn compose_network(elements: &[NetworkElement]) -> Result<ModeTransform> {
    let mut st = RailState::new();
    for (idx, el) in elements.iter().enumerate() {
        let pos = idx + 1;
        match el.kind {
            ElementKind::Phase => {
                let [rail] = el.ports.as_slice() else {
                    return Err(Error::topology(pos, 1, "phase needs exactly one rail port"));
                };
                let mut row = st.take(rail, pos)?;
                let f = Complex64::from_polar(1.0, el.parameter);
                for v in &mut row {
                    *v *= f;
                }
                st.rails.insert(rail.clone(), row);
            }
            ElementKind::Qwp => {
                let [path] = el.ports.as_slice() else {
                    return Err(Error::topology(pos, 1, "qwp needs exactly one path port"));
                };
                validate_path(path, pos)?;
                let h_rail = format!("{path}H");
                let v_rail = format!("{path}V");
                let rh = st.take(&h_rail, pos)?;
                let rv = st.take(&v_rail, pos)?;
                // symmetric retarder: cos(π/4) I − i sin(π/4) [[cos2θ, sin2θ],[sin2θ, −cos2θ]]
                let (s2, c2) = (2.0 * el.parameter).sin_cos();
                let half = std::f64::consts::FRAC_1_SQRT_2;
                let q00 = c(half) - I * c(half * c2);
                let q01 = -I * c(half * s2);
                let q10 = q01;
                let q11 = c(half) + I * c(half * c2);
                let mut new_h = [Complex64::ZERO; 4];
                let mut new_v = [Complex64::ZERO; 4];
                for m in 0..4 {
                    new_h[m] = q00 * rh[m] + q01 * rv[m];
                    new_v[m] = q10 * rh[m] + q11 * rv[m];
                }
                st.rails.insert(h_rail, new_h);
                st.rails.insert(v_rail, new_v);
            }
            ElementKind::Pbs => match el.ports.as_slice() {
                [p, q] => {
                    validate_path(p, pos)?;
                    validate_path(q, pos)?;
                    if p == q {
                        return Err(Error::topology(pos, 1, format!("pbs connects path {p:?} to itself")));
                    }
                    // transmit H, exchange the V rails
                    let pv = st.take(&format!("{p}V"), pos)?;
                    let qv = st.take(&format!("{q}V"), pos)?;
                    st.rails.insert(format!("{p}V"), qv);
                    st.rails.insert(format!("{q}V"), pv);
                }
                [path, det_h, det_v] => {
                    validate_path(path, pos)?;
                    for d in [det_h, det_v] {
                        Detector::parse(d).map_err(|_| {
                            Error::topology(pos, 1, format!("unknown detector port {d:?}"))
                        })?;
                        if st.detectors.contains_key(d.as_str()) {
                            return Err(Error::topology(
                                pos,
                                1,
                                format!("detector {d:?} assigned twice"),
                            ));
                        }
                    }
                    if det_h == det_v {
                        return Err(Error::topology(pos, 1, "splitter outputs must differ"));
                    }
                    let rh = st.take(&format!("{path}H"), pos)?;
                    let rv = st.take(&format!("{path}V"), pos)?;
                    st.detectors.insert(det_h.clone(), rh);
                    st.detectors.insert(det_v.clone(), rv);
                }
                _ => return Err(Error::topology(pos, 1, "pbs needs two or three ports")),
            },
        }
    }

    let mut matrix = [[Complex64::ZERO; 4]; 4];
    if st.detectors.is_empty() {
        // no splitters: outputs are the live rails in input order
        for (m, rail) in ["1H", "1V", "2H", "2V"].iter().enumerate() {
            let row = st
                .rails
                .get(*rail)
                .ok_or_else(|| Error::topology(elements.len(), 1, format!("rail {rail:?} was consumed")))?;
            matrix[m] = *row;
        }
    } else {
        for det in DETECTORS {
            let row = st.detectors.get(det.label()).ok_or_else(|| {
                Error::topology(
                    elements.len(),
                    1,
                    format!("detector {} never assigned", det.label()),
                )
            })?;
            matrix[det.index()] = *row;
        }
        if let Some(rail) = st.rails.keys().next() {
            return Err(Error::topology(
                elements.len(),
                1,
                format!("rail {rail:?} left dangling after the output splitters"),
            ));
        }
    }
    Ok(ModeTransform { matrix })
}

/// Parse a netlist file; errors carry line and column.
pub fn parse_netlist(text: &str) -> Result<Vec<NetworkElement>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let body = match raw.split_once('#') {
            Some((before, _)) => before,
            None => raw,
        };
        if body.trim().is_empty() {
            continue;
        }
        let mut tokens = Vec::new();
        let mut col_of = Vec::new();
        let mut chars = body.char_indices().peekable();
        while let Some(&(i, ch)) = chars.peek() {
            if ch.is_whitespace() {
                chars.next();
                continue;
            }
            let start = i;
            let mut end = i;
            while let Some(&(j, c2)) = chars.peek() {
                if c2.is_whitespace() {
                    break;
                }
                end = j + c2.len_utf8();
                chars.next();
            }
            tokens.push(&body[start..end]);
            col_of.push(start + 1);
        }
        let kind = tokens[0];
        let parse_param = |tok: &str, col: usize| -> Result<f64> {
            tok.parse::<f64>()
                .map_err(|_| Error::topology(line, col, format!("bad numeric parameter {tok:?}")))
        };
        let element = match kind {
            "qwp" => {
                if tokens.len() != 3 {
                    return Err(Error::topology(line, 1, "qwp expects: qwp <path> <angle>"));
                }
                NetworkElement::qwp(tokens[1], parse_param(tokens[2], col_of[2])?)
            }
            "phase" => {
                if tokens.len() != 3 {
                    return Err(Error::topology(line, 1, "phase expects: phase <rail> <value>"));
                }
                NetworkElement::phase(tokens[1], parse_param(tokens[2], col_of[2])?)
            }
            "pbs" => match tokens.len() {
                3 => NetworkElement::pbs(tokens[1], tokens[2]),
                4 => NetworkElement::pbs_split(tokens[1], tokens[2], tokens[3]),
                _ => {
                    return Err(Error::topology(
                        line,
                        1,
                        "pbs expects two path ports or one path and two detectors",
                    ))
                }
            },
            other => {
                return Err(Error::topology(
                    line,
                    col_of[0],
                    format!("unknown element kind {other:?}"),
                ))
            }
        };
        out.push(element);
    }
    Ok(out)
}

/// Detector jump operators on the joint space:
/// `b_j = Σ_m B[j,m] e^{−iφ_cavity(m)} a_m`.
///
/// Refuses transforms whose unitarity residual exceeds 1e−9; unitarity is
/// what guarantees `Σ_j b_j†b_j = Σ_m a_m†a_m`.
pub fn jump_operators(
    transform: &ModeTransform,
    space: &Arc<SpaceDescriptor>,
    phases: (f64, f64),
) -> Result<[LinearOperator; 4]> {
    if space.n_modes() != 4 {
        return Err(Error::argument("jump operators need the joint 4-mode space"));
    }
    let residual = transform.unitarity_residual();
    if residual > 1e-9 {
        return Err(Error::calibration(format!(
            "mode transform is not unitary (residual {residual:.3e} > 1e-9)"
        )));
    }
    let annihilators: Vec<LinearOperator> = (0..4)
        .map(|m| mode_annihilator_by_index(space, m))
        .collect();
    let mut ops = Vec::with_capacity(4);
    for j in 0..4 {
        let mut op = LinearOperator::zero(space);
        for (m, a) in annihilators.iter().enumerate() {
            let phi = if space.cavity_of_mode(m) == 1 { phases.0 } else { phases.1 };
            let w = transform.matrix[j][m] * Complex64::from_polar(1.0, -phi);
            if w == Complex64::ZERO {
                continue;
            }
            op = op.add(&a.scaled(w))?;
        }
        ops.push(op);
    }
    Ok(ops.try_into().expect("four detector operators"))
}
