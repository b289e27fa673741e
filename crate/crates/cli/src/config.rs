//! Run-config parsing: flat `key = value` lines under `[section]` headers.
//! Unknown sections or keys are hard errors so typos never silently change a
//! run. Comments start with `#`.
//!
//! ```text
//! [run]
//! mode = gate              # gate | sweep | mc | verify
//! pattern = D1D3
//! output = out.csv
//! n_trajectories = 100000
//! base_seed = 42
//!
//! [params]
//! omega = 1.0
//! kappa = 0.2
//! tau = 1.3
//! t_detect = 25.0
//! # optional: phi1, phi2 (default 0), eta (default 0), fock_cutoff (default 1)
//!
//! [inputs]
//! # optional: atom amplitudes, default is the uniform superposition;
//! # complex values split into _re/_im keys (the _im key may be omitted)
//! alpha1_re = 1.0
//! beta1_re = 0.0
//!
//! [sweep]
//! # one axis per line: field start stop count scale
//! axis = tau 0.1 3.0 50 log
//! axis = eta 0.0 0.6 4 linear
//! ```

use num_complex::Complex64;

use gate_sim_core::dynamics::SystemParams;
use gate_sim_core::protocol::{AtomInputs, DetectionPattern};

#[derive(Debug)]
pub struct ConfigError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl ConfigError {
    fn new(line: usize, column: usize, message: impl Into<String>) -> Self {
        ConfigError {
            line,
            column,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "config error at line {}, column {}: {}",
            self.line, self.column, self.message
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Gate,
    Sweep,
    Mc,
    Verify,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisScale {
    Linear,
    Log,
}

/// A swept parameter axis; both endpoints are included.
#[derive(Debug, Clone)]
pub struct SweepAxis {
    pub field: String,
    pub start: f64,
    pub stop: f64,
    pub count: usize,
    pub scale: AxisScale,
}

pub const SWEEPABLE_FIELDS: [&str; 7] =
    ["omega", "kappa", "tau", "t_detect", "phi1", "phi2", "eta"];

impl SweepAxis {
    /// The axis values, endpoints inclusive; a single-point axis yields
    /// just `start`.
    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.start];
        }
        (0..self.count)
            .map(|i| {
                let f = i as f64 / (self.count - 1) as f64;
                match self.scale {
                    AxisScale::Linear => self.start + (self.stop - self.start) * f,
                    AxisScale::Log => {
                        (self.start.ln() + (self.stop.ln() - self.start.ln()) * f).exp()
                    }
                }
            })
            .collect()
    }

    pub fn apply(&self, params: &mut SystemParams, value: f64) {
        match self.field.as_str() {
            "omega" => params.omega = value,
            "kappa" => params.kappa = value,
            "tau" => params.tau = value,
            "t_detect" => params.t_detect = value,
            "phi1" => params.phi1 = value,
            "phi2" => params.phi2 = value,
            "eta" => params.eta = value,
            other => unreachable!("validated sweep field {other}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mode: Mode,
    pub params: SystemParams,
    pub inputs: AtomInputs,
    pub pattern: DetectionPattern,
    pub sweep_axes: Vec<SweepAxis>,
    pub n_trajectories: usize,
    pub base_seed: u64,
    pub output_path: Option<String>,
}

/// Raw key-value with position, before validation.
struct RawEntry {
    line: usize,
    column: usize,
    value: String,
}

struct RawConfig {
    entries: Vec<(String, RawEntry)>, // "section.key" -> entry, in file order
}

impl RawConfig {
    fn take(&mut self, key: &str) -> Option<RawEntry> {
        let pos = self.entries.iter().position(|(k, _)| k == key)?;
        Some(self.entries.remove(pos).1)
    }

    fn take_all(&mut self, key: &str) -> Vec<RawEntry> {
        let mut out = Vec::new();
        while let Some(e) = self.take(key) {
            out.push(e);
        }
        out
    }
}

fn tokenize(text: &str) -> Result<RawConfig, ConfigError> {
    let mut entries = Vec::new();
    let mut section: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = match raw.split_once('#') {
            Some((before, _)) => before,
            None => raw,
        };
        let trimmed = body.trim();
        if trimmed.is_empty() {
            continue;
        }
        let column = body.find(|c: char| !c.is_whitespace()).unwrap_or(0) + 1;
        if let Some(name) = trimmed.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| ConfigError::new(line, column, "unterminated section header"))?;
            if !["run", "params", "inputs", "sweep"].contains(&name) {
                return Err(ConfigError::new(line, column, format!("unknown section [{name}]")));
            }
            section = Some(name.to_string());
            continue;
        }
        let Some(section) = &section else {
            return Err(ConfigError::new(line, column, "key outside any [section]"));
        };
        let Some((key, value)) = trimmed.split_once('=') else {
            return Err(ConfigError::new(line, column, "expected key = value"));
        };
        let key = key.trim();
        if key.is_empty() {
            return Err(ConfigError::new(line, column, "empty key"));
        }
        entries.push((
            format!("{section}.{key}"),
            RawEntry {
                line,
                column,
                value: value.trim().to_string(),
            },
        ));
    }
    Ok(RawConfig { entries })
}

fn parse_f64(entry: &RawEntry, key: &str) -> Result<f64, ConfigError> {
    entry.value.parse::<f64>().map_err(|_| {
        ConfigError::new(entry.line, entry.column, format!("{key}: bad number {:?}", entry.value))
    })
}

fn parse_usize(entry: &RawEntry, key: &str) -> Result<usize, ConfigError> {
    entry.value.parse::<usize>().map_err(|_| {
        ConfigError::new(entry.line, entry.column, format!("{key}: bad integer {:?}", entry.value))
    })
}

fn parse_u64(entry: &RawEntry, key: &str) -> Result<u64, ConfigError> {
    entry.value.parse::<u64>().map_err(|_| {
        ConfigError::new(entry.line, entry.column, format!("{key}: bad integer {:?}", entry.value))
    })
}

/// Parse and validate a config file. Unknown keys are errors; all physical
/// fields are checked against their invariants with the offending field named.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut raw = tokenize(text)?;

    let mode_entry = raw
        .take("run.mode")
        .ok_or_else(|| ConfigError::new(0, 0, "missing required key: [run] mode"))?;
    let mode = match mode_entry.value.as_str() {
        "gate" => Mode::Gate,
        "sweep" => Mode::Sweep,
        "mc" => Mode::Mc,
        "verify" => Mode::Verify,
        other => {
            return Err(ConfigError::new(
                mode_entry.line,
                mode_entry.column,
                format!("mode must be gate|sweep|mc|verify, got {other:?}"),
            ))
        }
    };

    let take_f64 = |raw: &mut RawConfig, key: &str| -> Result<Option<f64>, ConfigError> {
        match raw.take(key) {
            Some(e) => parse_f64(&e, key).map(Some),
            None => Ok(None),
        }
    };

    // physical parameters: rates and times required, the rest defaulted
    let require_f64 = |raw: &mut RawConfig, key: &str| -> Result<f64, ConfigError> {
        match raw.take(key) {
            Some(e) => parse_f64(&e, key),
            None => Err(ConfigError::new(0, 0, format!("missing required key: {key}"))),
        }
    };
    let omega = require_f64(&mut raw, "params.omega")?;
    let kappa = require_f64(&mut raw, "params.kappa")?;
    let tau = require_f64(&mut raw, "params.tau")?;
    let t_detect = require_f64(&mut raw, "params.t_detect")?;
    let mut params = SystemParams::new(omega, kappa, tau, t_detect);
    if let Some(v) = take_f64(&mut raw, "params.phi1")? {
        params.phi1 = v;
    }
    if let Some(v) = take_f64(&mut raw, "params.phi2")? {
        params.phi2 = v;
    }
    let eta_entry = raw.take("params.eta");
    if let Some(e) = &eta_entry {
        params.eta = parse_f64(e, "params.eta")?;
    }
    if let Some(e) = raw.take("params.fock_cutoff") {
        params.fock_cutoff = parse_usize(&e, "params.fock_cutoff")? as u32;
        if params.fock_cutoff < 1 {
            return Err(ConfigError::new(e.line, e.column, "fock_cutoff must be >= 1"));
        }
    }
    if !(0.0..=1.0).contains(&params.eta) {
        let (line, column) = eta_entry.map(|e| (e.line, e.column)).unwrap_or((0, 0));
        return Err(ConfigError::new(
            line,
            column,
            format!("eta must lie in [0, 1], got {}", params.eta),
        ));
    }
    if let Err(e) = params.validate() {
        return Err(ConfigError::new(0, 0, format!("invalid parameters: {e}")));
    }

    // atom inputs: default uniform superposition
    let mut inputs = AtomInputs::uniform();
    let mut any_input = false;
    let component =
        |raw: &mut RawConfig, name: &str| -> Result<Option<Complex64>, ConfigError> {
            let re = raw.take(&format!("inputs.{name}_re"));
            let im = raw.take(&format!("inputs.{name}_im"));
            if re.is_none() && im.is_none() {
                return Ok(None);
            }
            let re_v = match re {
                Some(e) => parse_f64(&e, &format!("{name}_re"))?,
                None => 0.0,
            };
            let im_v = match im {
                Some(e) => parse_f64(&e, &format!("{name}_im"))?,
                None => 0.0,
            };
            Ok(Some(Complex64::new(re_v, im_v)))
        };
    for name in ["alpha1", "beta1", "alpha2", "beta2"] {
        if let Some(v) = component(&mut raw, name)? {
            match name {
                "alpha1" => inputs.alpha1 = v,
                "beta1" => inputs.beta1 = v,
                "alpha2" => inputs.alpha2 = v,
                _ => inputs.beta2 = v,
            }
            any_input = true;
        }
    }
    if any_input {
        if let Err(e) = inputs.validate() {
            return Err(ConfigError::new(0, 0, format!("invalid inputs: {e}")));
        }
    }

    let pattern = match raw.take("run.pattern") {
        Some(e) => DetectionPattern::parse(&e.value).map_err(|err| {
            ConfigError::new(e.line, e.column, format!("bad pattern: {err}"))
        })?,
        None => DetectionPattern::parse("D1D3").expect("default pattern"),
    };
    if (mode == Mode::Gate || mode == Mode::Sweep) && !pattern.is_heralding() {
        return Err(ConfigError::new(0, 0, format!("pattern {pattern} is not a heralding pair")));
    }

    let n_trajectories = match raw.take("run.n_trajectories") {
        Some(e) => {
            let n = parse_usize(&e, "n_trajectories")?;
            if n == 0 {
                return Err(ConfigError::new(e.line, e.column, "n_trajectories must be >= 1"));
            }
            n
        }
        None => 100_000,
    };
    let base_seed = match raw.take("run.base_seed") {
        Some(e) => parse_u64(&e, "base_seed")?,
        None => 42,
    };
    let output_path = raw.take("run.output").map(|e| e.value);

    let mut sweep_axes = Vec::new();
    for e in raw.take_all("sweep.axis") {
        let tokens: Vec<&str> = e.value.split_whitespace().collect();
        let [field, start, stop, count, scale] = tokens.as_slice() else {
            return Err(ConfigError::new(
                e.line,
                e.column,
                "axis expects: <field> <start> <stop> <count> <linear|log>",
            ));
        };
        if !SWEEPABLE_FIELDS.contains(field) {
            return Err(ConfigError::new(
                e.line,
                e.column,
                format!("axis field {field:?} is not sweepable (expected one of {SWEEPABLE_FIELDS:?})"),
            ));
        }
        let start: f64 = start
            .parse()
            .map_err(|_| ConfigError::new(e.line, e.column, format!("bad axis start {start:?}")))?;
        let stop: f64 = stop
            .parse()
            .map_err(|_| ConfigError::new(e.line, e.column, format!("bad axis stop {stop:?}")))?;
        let count: usize = count
            .parse()
            .map_err(|_| ConfigError::new(e.line, e.column, format!("bad axis count {count:?}")))?;
        if count < 1 {
            return Err(ConfigError::new(e.line, e.column, "axis count must be >= 1"));
        }
        let scale = match *scale {
            "linear" => AxisScale::Linear,
            "log" => AxisScale::Log,
            other => {
                return Err(ConfigError::new(
                    e.line,
                    e.column,
                    format!("axis scale must be linear or log, got {other:?}"),
                ))
            }
        };
        if scale == AxisScale::Log && (start <= 0.0 || stop <= 0.0) {
            return Err(ConfigError::new(e.line, e.column, "log axis needs positive endpoints"));
        }
        sweep_axes.push(SweepAxis {
            field: field.to_string(),
            start,
            stop,
            count,
            scale,
        });
    }
    if mode == Mode::Sweep && sweep_axes.is_empty() {
        return Err(ConfigError::new(0, 0, "sweep mode needs at least one [sweep] axis"));
    }

    // strictness: anything left over is a typo
    if let Some((key, e)) = raw.entries.first() {
        return Err(ConfigError::new(e.line, e.column, format!("unknown key {key:?}")));
    }

    Ok(RunConfig {
        mode,
        params,
        inputs,
        pattern,
        sweep_axes,
        n_trajectories,
        base_seed,
        output_path,
    })
}
