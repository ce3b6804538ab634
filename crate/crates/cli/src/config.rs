//! Run configuration: strict JSON parsing, dot-path overrides and unit
//! normalization to angular frequencies.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use kpo_core::meanfield::SweepAxis;
use kpo_core::model::{calibrate_drive, calibrate_noise, CalibrationInputs, NoiseCalibration};
use nalgebra::DMatrix;
use kpo_core::NetworkParams;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const SCHEMA_VERSION: u32 = 1;

/// Problems found while reading a config; every offending key is listed.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub Vec<String>);

impl ConfigError {
    fn one(msg: impl Into<String>) -> Self {
        ConfigError(vec![msg.into()])
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.join("; "))
    }
}

impl std::error::Error for ConfigError {}

type CfgResult<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Unit {
    /// Plain frequency, multiplied by 2π.
    Hz,
    #[serde(rename = "rad_s")]
    RadS,
    /// Multiples of the Kerr coefficient of site 0.
    #[serde(rename = "V_units")]
    VUnits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Numbers {
    Scalar(f64),
    Vector(Vec<f64>),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantity {
    pub value: Numbers,
    pub unit: Unit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBlock {
    pub n_sites: usize,
    /// Natural frequencies; requires `drive_freq` and excludes `detuning`.
    pub omega: Option<Quantity>,
    pub drive_freq: Option<Quantity>,
    /// Rotating-frame detunings, in place of `omega` and `drive_freq`.
    pub detuning: Option<Quantity>,
    pub kerr: Quantity,
    /// Two-photon drive; taken from the calibration block when absent.
    pub drive: Option<Quantity>,
    /// Scalar (all-to-all) or full matrix; zero when absent.
    pub coupling: Option<Quantity>,
    pub damping: Quantity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBlock {
    /// Volts.
    pub u_drive: f64,
    /// Volts.
    pub u_threshold: f64,
    pub gamma0: Quantity,
    /// V²/Hz.
    pub noise_psd_in: f64,
    /// Hz⁴/V²; the two-resonator value when absent.
    pub coupling_const: Option<f64>,
}

/// Sampled axis: either explicit `values` or `points` evenly spaced from
/// `start` to `stop`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub start: Option<f64>,
    pub stop: Option<f64>,
    pub points: Option<usize>,
    pub values: Option<Vec<f64>>,
    pub unit: Option<Unit>,
}

impl Grid {
    pub fn from_values(values: Vec<f64>, unit: Unit) -> Self {
        Self { start: None, stop: None, points: None, values: Some(values), unit: Some(unit) }
    }

    fn expand(&self, key: &str) -> CfgResult<Vec<f64>> {
        let v = match (&self.values, self.start, self.stop, self.points) {
            (Some(v), None, None, None) => v.clone(),
            (None, Some(a), Some(b), Some(n)) if n >= 2 => {
                (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
            }
            (None, Some(a), Some(b), Some(1)) if a == b => vec![a],
            _ => {
                return Err(ConfigError::one(format!(
                    "{key}: give either `values` or `start`, `stop` and `points` (>= 2)"
                )))
            }
        };
        if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
            return Err(ConfigError::one(format!("{key}: grid must be non-empty and finite")));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StatesTask {
    pub n_starts: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTask {
    pub axis: SweepAxis,
    pub grid: Grid,
    pub n_starts: Option<usize>,
    pub link_radius: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTask {
    pub detuning: Grid,
    pub drive: Grid,
    pub n_starts: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdLangevin {
    pub duration: f64,
    pub dt: Option<f64>,
    pub record_every: Option<usize>,
    pub segment_len: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PsdTask {
    /// Index into the stable steady states, in solver order.
    pub state: Option<usize>,
    /// White-noise PSD σ²; from the calibration block when absent.
    pub noise_psd: Option<f64>,
    pub freq: Option<Grid>,
    pub n_starts: Option<usize>,
    pub langevin: Option<PsdLangevin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeTask {
    pub axis: SweepAxis,
    pub grid: Grid,
    pub noise_psd: Option<f64>,
    pub settle_time: f64,
    pub record_time: f64,
    pub dt: Option<f64>,
    pub record_every: Option<usize>,
    pub segment_len: Option<usize>,
    /// Initial amplitudes as `[re, im]` pairs; the origin when absent.
    pub start: Option<Vec<[f64; 2]>>,
    /// Also run the deterministic sweep and tag points with its branches.
    pub with_sweep: Option<bool>,
    pub n_starts: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LindbladTask {
    pub n_max: Option<usize>,
    pub n_max_limit: Option<usize>,
    pub parity_reduce: Option<bool>,
    pub grid_points: Option<usize>,
    /// Hot-spot matching radius in quadrature units.
    pub correspondence_radius: Option<f64>,
    pub n_starts: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabTask {
    pub hbar: Option<f64>,
    pub x0: Vec<f64>,
    pub v0: Option<Vec<f64>>,
    pub dt: Option<f64>,
    pub duration: f64,
    pub record_every: Option<usize>,
    /// Lock-in bandwidth; 1/50 of the reference when absent.
    pub bandwidth: Option<f64>,
    /// Lock-in reference; `ω_G/2` when absent.
    pub ref_freq: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeScan {
    pub axis: SweepAxis,
    pub grid: Grid,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModesTask {
    /// Origin exponents along a parameter scan.
    pub scan: Option<ModeScan>,
}

/// Config file as written by the user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: Option<u64>,
    pub model: ModelBlock,
    pub calibration: Option<CalibrationBlock>,
    pub states: Option<StatesTask>,
    pub sweep: Option<SweepTask>,
    pub phase_diagram: Option<PhaseTask>,
    pub psd: Option<PsdTask>,
    pub probe: Option<ProbeTask>,
    pub lindblad: Option<LindbladTask>,
    pub labframe: Option<LabTask>,
    pub normal_modes: Option<ModesTask>,
}

/// Model constants in rad/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedModel {
    pub n_sites: usize,
    pub omega: Vec<f64>,
    pub kerr: Vec<f64>,
    pub drive: Vec<f64>,
    pub drive_freq: f64,
    pub coupling: Vec<Vec<f64>>,
    pub damping: Vec<f64>,
    pub detuning: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedCalibration {
    pub inputs: CalibrationInputs,
    pub drive: f64,
    pub noise: Option<NoiseCalibration>,
}

/// Config after unit normalization and override application; task grids
/// are expanded to explicit values in rad/s (Hz for the half drive
/// frequency axis).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolved {
    pub schema_version: u32,
    pub seed: u64,
    pub model: ResolvedModel,
    pub calibration: Option<ResolvedCalibration>,
    pub states: Option<StatesTask>,
    pub sweep: Option<SweepTask>,
    pub phase_diagram: Option<PhaseTask>,
    pub psd: Option<PsdTask>,
    pub probe: Option<ProbeTask>,
    pub lindblad: Option<LindbladTask>,
    pub labframe: Option<LabTask>,
    pub normal_modes: Option<ModesTask>,
}

impl Resolved {
    pub fn params(&self) -> CfgResult<NetworkParams> {
        let m = &self.model;
        let n = m.n_sites;
        let j = DMatrix::from_fn(n, n, |r, c| m.coupling[r][c]);
        NetworkParams::new(m.omega.clone(), m.kerr.clone(), m.drive.clone(), m.drive_freq, j, m.damping.clone())
            .map_err(|e| ConfigError::one(format!("model: {e}")))
    }

    /// Noise PSD from the task value or, failing that, the calibration.
    pub fn noise_psd(&self, task_value: Option<f64>, key: &str) -> CfgResult<f64> {
        task_value
            .or_else(|| self.calibration.as_ref().and_then(|c| c.noise.map(|n| n.sigma2)))
            .ok_or_else(|| ConfigError::one(format!("{key}.noise_psd: missing and no calibration block to derive it")))
    }
}

/// A parsed `--a.b.c=value` flag.
#[derive(Debug, Clone, PartialEq)]
pub struct Override {
    pub path: Vec<String>,
    pub value: Value,
}

impl Override {
    /// Parses `a.b.c=value`; the value is read as JSON when possible and as
    /// a string otherwise.
    pub fn parse(s: &str) -> CfgResult<Self> {
        let s = s.trim_start_matches("--");
        let (path, raw) = s.split_once('=').ok_or_else(|| ConfigError::one(format!("override `{s}` needs `=value`")))?;
        let path: Vec<String> = path.split('.').map(str::to_string).collect();
        if path.iter().any(|p| p.is_empty()) {
            return Err(ConfigError::one(format!("override `{s}` has an empty path segment")));
        }
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        Ok(Self { path, value })
    }

    fn apply(&self, root: &mut Value) -> CfgResult<()> {
        let dotted = self.path.join(".");
        let mut node = root;
        for seg in &self.path {
            node = match node {
                Value::Array(items) => {
                    let i: usize = seg
                        .parse()
                        .ok()
                        .filter(|i| *i < items.len())
                        .ok_or_else(|| ConfigError::one(format!("override {dotted}: bad index `{seg}`")))?;
                    &mut items[i]
                }
                Value::Null => {
                    *node = Value::Object(Default::default());
                    node.as_object_mut().unwrap().entry(seg.clone()).or_insert(Value::Null)
                }
                Value::Object(map) => map.entry(seg.clone()).or_insert(Value::Null),
                _ => return Err(ConfigError::one(format!("override {dotted}: `{seg}` is not inside an object"))),
            };
        }
        *node = self.value.clone();
        Ok(())
    }
}

/// Keys of `raw` that the typed config does not know, as dot paths.
fn unknown_keys(raw: &Value, known: &Value, prefix: &str, out: &mut Vec<String>) {
    match (raw, known) {
        (Value::Object(r), Value::Object(k)) => {
            for (key, v) in r {
                let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
                match k.get(key) {
                    Some(kv) => unknown_keys(v, kv, &path, out),
                    None => out.push(path),
                }
            }
        }
        (Value::Array(r), Value::Array(k)) => {
            for (i, (rv, kv)) in r.iter().zip(k).enumerate() {
                unknown_keys(rv, kv, &format!("{prefix}.{i}"), out);
            }
        }
        _ => {}
    }
}

/// Strict parse of a raw JSON document.
pub fn parse_config(mut raw: Value, overrides: &[Override]) -> CfgResult<RunConfig> {
    for o in overrides {
        o.apply(&mut raw)?;
    }
    let Some(obj) = raw.as_object() else {
        return Err(ConfigError::one("config must be a JSON object"));
    };
    match obj.get("schema_version") {
        None => return Err(ConfigError::one("schema_version: missing")),
        Some(v) if v.as_u64() != Some(SCHEMA_VERSION as u64) => {
            return Err(ConfigError::one(format!("schema_version: expected {SCHEMA_VERSION}, got {v}")))
        }
        _ => {}
    }
    let cfg: RunConfig = serde_json::from_value(raw.clone()).map_err(|e| ConfigError::one(e.to_string()))?;
    let known = serde_json::to_value(&cfg).expect("config serializes");
    let mut unknown = Vec::new();
    unknown_keys(&raw, &known, "", &mut unknown);
    if !unknown.is_empty() {
        return Err(ConfigError(unknown.into_iter().map(|k| format!("{k}: unknown key")).collect()));
    }
    Ok(cfg)
}

/// Reads, overrides, validates and normalizes a config file.
pub fn resolve_config(path: &Path, overrides: &[Override], seed: Option<u64>) -> CfgResult<Resolved> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::one(format!("cannot read {}: {e}", path.display())))?;
    let raw: Value = serde_json::from_str(&text).map_err(|e| ConfigError::one(format!("invalid JSON: {e}")))?;
    let cfg = parse_config(raw, overrides)?;
    resolve(cfg, seed)
}

struct Units {
    v_ref: f64,
}

impl Units {
    fn factor(&self, unit: Unit) -> f64 {
        match unit {
            Unit::Hz => 2.0 * PI,
            Unit::RadS => 1.0,
            Unit::VUnits => self.v_ref,
        }
    }

    fn per_site(&self, q: &Quantity, n: usize, key: &str) -> CfgResult<Vec<f64>> {
        let f = self.factor(q.unit);
        let v = match &q.value {
            Numbers::Scalar(x) => vec![*x; n],
            Numbers::Vector(v) if v.len() == n => v.clone(),
            Numbers::Vector(v) => {
                return Err(ConfigError::one(format!("{key}.value: {} entries, expected {n}", v.len())))
            }
            Numbers::Matrix(_) => return Err(ConfigError::one(format!("{key}.value: expected a scalar or a vector"))),
        };
        Ok(v.into_iter().map(|x| x * f).collect())
    }

    fn scalar(&self, q: &Quantity, key: &str) -> CfgResult<f64> {
        match q.value {
            Numbers::Scalar(x) => Ok(x * self.factor(q.unit)),
            _ => Err(ConfigError::one(format!("{key}.value: expected a scalar"))),
        }
    }

    fn matrix(&self, q: &Quantity, n: usize, key: &str) -> CfgResult<Vec<Vec<f64>>> {
        let f = self.factor(q.unit);
        match &q.value {
            Numbers::Scalar(x) => {
                Ok((0..n).map(|r| (0..n).map(|c| if r == c { 0.0 } else { x * f }).collect()).collect())
            }
            Numbers::Matrix(m) if m.len() == n && m.iter().all(|r| r.len() == n) => {
                Ok(m.iter().map(|r| r.iter().map(|x| x * f).collect()).collect())
            }
            _ => Err(ConfigError::one(format!("{key}.value: expected a scalar or an {n}x{n} matrix"))),
        }
    }

    fn grid(&self, g: &Grid, key: &str, default: Unit) -> CfgResult<Grid> {
        let unit = g.unit.unwrap_or(default);
        let f = self.factor(unit);
        Ok(Grid::from_values(g.expand(key)?.into_iter().map(|x| x * f).collect(), Unit::RadS))
    }

    /// Axis grid: rad/s for detuning and drive, Hz for the half drive
    /// frequency.
    fn axis_grid(&self, axis: SweepAxis, g: &Grid, key: &str) -> CfgResult<Grid> {
        match axis {
            SweepAxis::HalfDriveFreqHz => {
                if g.unit.is_some_and(|u| u != Unit::Hz) {
                    return Err(ConfigError::one(format!("{key}.unit: the half_drive_freq_hz axis takes Hz")));
                }
                Ok(Grid::from_values(g.expand(key)?, Unit::Hz))
            }
            _ => self.grid(g, key, Unit::RadS),
        }
    }
}

fn resolve(cfg: RunConfig, seed: Option<u64>) -> CfgResult<Resolved> {
    let m = &cfg.model;
    let n = m.n_sites;
    if n == 0 {
        return Err(ConfigError::one("model.n_sites: must be at least 1"));
    }
    let mut errors = Vec::new();
    let units = match m.kerr.unit {
        Unit::VUnits => Units { v_ref: 1.0 },
        u => {
            let v0 = match &m.kerr.value {
                Numbers::Scalar(x) => *x,
                Numbers::Vector(v) => v.first().copied().unwrap_or(0.0),
                Numbers::Matrix(_) => 0.0,
            };
            Units { v_ref: (v0 * Units { v_ref: 1.0 }.factor(u)).abs() }
        }
    };
    let uses_v = |q: &Option<Quantity>| q.as_ref().is_some_and(|q| q.unit == Unit::VUnits);
    if units.v_ref == 0.0
        && (uses_v(&m.omega)
            || uses_v(&m.drive_freq)
            || uses_v(&m.detuning)
            || uses_v(&m.drive)
            || uses_v(&m.coupling)
            || m.damping.unit == Unit::VUnits)
    {
        errors.push("model: V_units need a nonzero Kerr coefficient on site 0".to_string());
    }
    let mut collect = |r: CfgResult<Vec<f64>>| -> Vec<f64> {
        r.unwrap_or_else(|e| {
            errors.extend(e.0);
            vec![0.0; n]
        })
    };
    let kerr = collect(units.per_site(&m.kerr, n, "model.kerr"));
    let damping = collect(units.per_site(&m.damping, n, "model.damping"));
    let (omega, drive_freq) = match (&m.omega, &m.drive_freq, &m.detuning) {
        (Some(w), Some(wg), None) => {
            let omega = collect(units.per_site(w, n, "model.omega"));
            let wg = units.scalar(wg, "model.drive_freq").unwrap_or_else(|e| {
                errors.extend(e.0);
                0.0
            });
            (omega, wg)
        }
        (None, None, Some(d)) => {
            let det = collect(units.per_site(d, n, "model.detuning"));
            (det.iter().zip(&kerr).map(|(d, v)| -d - v).collect(), 0.0)
        }
        _ => {
            errors.push("model: give either `omega` and `drive_freq`, or `detuning`".into());
            (vec![0.0; n], 0.0)
        }
    };
    let calibration = match &cfg.calibration {
        Some(c) => {
            let gamma0 = units.scalar(&c.gamma0, "calibration.gamma0").unwrap_or_else(|e| {
                errors.extend(e.0.clone());
                0.0
            });
            let inputs = CalibrationInputs {
                u_drive: c.u_drive,
                u_threshold: c.u_threshold,
                gamma0,
                noise_psd_in: c.noise_psd_in,
                coupling_const: c.coupling_const.unwrap_or(CalibrationInputs::DEFAULT_COUPLING_CONST),
            };
            let drive = calibrate_drive(&inputs).unwrap_or_else(|e| {
                errors.push(format!("calibration: {e}"));
                0.0
            });
            // the noise conversion needs a physical drive frequency
            let noise = (drive_freq > 0.0).then(|| calibrate_noise(&inputs, drive_freq)).transpose().unwrap_or_else(|e| {
                errors.push(format!("calibration: {e}"));
                None
            });
            Some(ResolvedCalibration { inputs, drive, noise })
        }
        None => None,
    };
    let drive = match (&m.drive, &calibration) {
        (Some(g), None) => units.per_site(g, n, "model.drive").unwrap_or_else(|e| {
            errors.extend(e.0);
            vec![0.0; n]
        }),
        (None, Some(c)) => vec![c.drive; n],
        (Some(_), Some(_)) => {
            errors.push("model.drive: also set by the calibration block; give only one".into());
            vec![0.0; n]
        }
        (None, None) => {
            errors.push("model.drive: missing and no calibration block".into());
            vec![0.0; n]
        }
    };
    let coupling = match &m.coupling {
        Some(q) => units.matrix(q, n, "model.coupling").unwrap_or_else(|e| {
            errors.extend(e.0);
            vec![vec![0.0; n]; n]
        }),
        None => vec![vec![0.0; n]; n],
    };
    let detuning = kpo_core::model::detunings(&omega, &kerr, drive_freq);

    let mut task = |r: CfgResult<()>| {
        if let Err(e) = r {
            errors.extend(e.0);
        }
    };
    let mut sweep = cfg.sweep.clone();
    if let Some(s) = sweep.as_mut() {
        task(units.axis_grid(s.axis, &s.grid, "sweep.grid").map(|g| s.grid = g));
    }
    let mut phase = cfg.phase_diagram.clone();
    if let Some(p) = phase.as_mut() {
        task(units.grid(&p.detuning, "phase_diagram.detuning", Unit::RadS).map(|g| p.detuning = g));
        task(units.grid(&p.drive, "phase_diagram.drive", Unit::RadS).map(|g| p.drive = g));
    }
    let mut psd = cfg.psd.clone();
    if let Some(p) = psd.as_mut() {
        if let Some(f) = p.freq.clone() {
            task(units.grid(&f, "psd.freq", Unit::RadS).map(|g| p.freq = Some(g)));
        }
    }
    let mut probe = cfg.probe.clone();
    if let Some(p) = probe.as_mut() {
        task(units.axis_grid(p.axis, &p.grid, "probe.grid").map(|g| p.grid = g));
        if p.start.as_ref().is_some_and(|s| s.len() != n) {
            task(Err(ConfigError::one(format!("probe.start: expected {n} amplitudes"))));
        }
    }
    let mut modes = cfg.normal_modes.clone();
    if let Some(s) = modes.as_mut().and_then(|m| m.scan.as_mut()) {
        task(units.axis_grid(s.axis, &s.grid, "normal_modes.scan.grid").map(|g| s.grid = g));
    }
    if let Some(l) = &cfg.labframe {
        if l.x0.len() != n || l.v0.as_ref().is_some_and(|v| v.len() != n) {
            task(Err(ConfigError::one(format!("labframe: x0 and v0 need {n} entries"))));
        }
    }
    if !errors.is_empty() {
        return Err(ConfigError(errors));
    }
    let resolved = Resolved {
        schema_version: cfg.schema_version,
        seed: seed.or(cfg.seed).unwrap_or(0),
        model: ResolvedModel { n_sites: n, omega, kerr, drive, drive_freq, coupling, damping, detuning },
        calibration,
        states: cfg.states,
        sweep,
        phase_diagram: phase,
        psd,
        probe,
        lindblad: cfg.lindblad,
        labframe: cfg.labframe,
        normal_modes: modes,
    };
    resolved.params()?;
    Ok(resolved)
}
