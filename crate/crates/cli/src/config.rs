//! TOML experiment configuration.
//!
//! Parsing happens in two passes: a schema walk over the raw TOML tree that
//! rejects unknown keys (suggesting the nearest valid one) and wrong types
//! with the full key path, then a serde pass into typed sections. Defaults
//! are materialized into a resolved [`Config`] whose canonical TOML form is
//! written next to every result set; its FNV-1a hash stamps output tables so
//! a result file can always be traced back to the exact inputs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use qmeta_core::disorder::{DisorderShape, DisorderSpec};
use qmeta_core::{CavityParams, QubitParams, SystemConfig};

use crate::error::{CliError, Result};

/// Frequency in MHz, written either as a bare number or `{ ghz = x }`.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(untagged)]
enum FreqValue {
    Mhz(f64),
    Ghz { ghz: f64 },
}

impl FreqValue {
    fn mhz(self) -> f64 {
        match self {
            FreqValue::Mhz(v) => v,
            FreqValue::Ghz { ghz } => 1000.0 * ghz,
        }
    }
}

// ---------------------------------------------------------------------------
// Raw (everything optional) serde mirror of the file.

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    master_seed: Option<u64>,
    system: Option<RawSystem>,
    disorder: Option<RawDisorder>,
    grid: Option<RawGrid>,
    rabi: Option<RawRabi>,
    meso: Option<RawMeso>,
    spectra: Option<RawSpectra>,
    center_sweep: Option<RawCenterSweep>,
    calibrate: Option<RawCalibrate>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    nu_c: Option<FreqValue>,
    kappa: Option<f64>,
    gamma_in: Option<f64>,
    gamma_out: Option<f64>,
    qubit: Option<RawQubit>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawQubit {
    gamma: Option<f64>,
    g: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDisorder {
    mean: Option<FreqValue>,
    spread: Option<f64>,
    jitter_sigma: Option<f64>,
    n_realizations: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    start: FreqValue,
    stop: FreqValue,
    points: usize,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRabi {
    n_min: Option<usize>,
    n_max: Option<usize>,
    total_qubits: Option<usize>,
    detuned_offset: Option<f64>,
    remove_parked: Option<bool>,
    jitter_sigma: Option<f64>,
    jitter_trials: Option<usize>,
    step: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMeso {
    n_min: Option<usize>,
    n_max: Option<usize>,
    deltas: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpectra {
    deltas: Option<Vec<f64>>,
    realizations: Option<usize>,
    n_qubits: Option<usize>,
    noise_sigma: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCenterSweep {
    delta: Option<f64>,
    n_qubits: Option<usize>,
    center_min: Option<f64>,
    center_max: Option<f64>,
    center_points: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCalibrate {
    noise_mhz: Option<f64>,
    observations_per_coil: Option<usize>,
    roundtrip_trials: Option<usize>,
}

// ---------------------------------------------------------------------------
// Schema walk: explicit unknown-key / wrong-type diagnostics with key paths.

enum Kind {
    Float,
    Freq,
    Int,
    Seed,
    Bool,
    FloatList,
    Table(&'static [(&'static str, Kind)]),
}

const QUBIT_KEYS: &[(&str, Kind)] = &[("gamma", Kind::Float), ("g", Kind::Float)];
const SYSTEM_KEYS: &[(&str, Kind)] = &[
    ("nu_c", Kind::Freq),
    ("kappa", Kind::Float),
    ("gamma_in", Kind::Float),
    ("gamma_out", Kind::Float),
    ("qubit", Kind::Table(QUBIT_KEYS)),
];
const DISORDER_KEYS: &[(&str, Kind)] = &[
    ("mean", Kind::Freq),
    ("spread", Kind::Float),
    ("jitter_sigma", Kind::Float),
    ("n_realizations", Kind::Int),
];
const GRID_KEYS: &[(&str, Kind)] = &[
    ("start", Kind::Freq),
    ("stop", Kind::Freq),
    ("points", Kind::Int),
];
const RABI_KEYS: &[(&str, Kind)] = &[
    ("n_min", Kind::Int),
    ("n_max", Kind::Int),
    ("total_qubits", Kind::Int),
    ("detuned_offset", Kind::Float),
    ("remove_parked", Kind::Bool),
    ("jitter_sigma", Kind::Float),
    ("jitter_trials", Kind::Int),
    ("step", Kind::Float),
];
const MESO_KEYS: &[(&str, Kind)] = &[
    ("n_min", Kind::Int),
    ("n_max", Kind::Int),
    ("deltas", Kind::FloatList),
];
const SPECTRA_KEYS: &[(&str, Kind)] = &[
    ("deltas", Kind::FloatList),
    ("realizations", Kind::Int),
    ("n_qubits", Kind::Int),
    ("noise_sigma", Kind::Float),
];
const CENTER_KEYS: &[(&str, Kind)] = &[
    ("delta", Kind::Float),
    ("n_qubits", Kind::Int),
    ("center_min", Kind::Float),
    ("center_max", Kind::Float),
    ("center_points", Kind::Int),
];
const CALIBRATE_KEYS: &[(&str, Kind)] = &[
    ("noise_mhz", Kind::Float),
    ("observations_per_coil", Kind::Int),
    ("roundtrip_trials", Kind::Int),
];
const ROOT_KEYS: &[(&str, Kind)] = &[
    ("master_seed", Kind::Seed),
    ("system", Kind::Table(SYSTEM_KEYS)),
    ("disorder", Kind::Table(DISORDER_KEYS)),
    ("grid", Kind::Table(GRID_KEYS)),
    ("rabi", Kind::Table(RABI_KEYS)),
    ("meso", Kind::Table(MESO_KEYS)),
    ("spectra", Kind::Table(SPECTRA_KEYS)),
    ("center_sweep", Kind::Table(CENTER_KEYS)),
    ("calibrate", Kind::Table(CALIBRATE_KEYS)),
];

fn key_path(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

fn is_number(v: &toml::Value) -> bool {
    v.is_float() || v.is_integer()
}

fn check_table(table: &toml::Table, prefix: &str, allowed: &[(&str, Kind)]) -> Result<()> {
    for (key, value) in table {
        let Some((_, kind)) = allowed.iter().find(|(k, _)| k == key) else {
            let nearest = allowed
                .iter()
                .map(|(k, _)| *k)
                .min_by_key(|k| strsim::levenshtein(key, k))
                .expect("schema tables are nonempty");
            return Err(CliError::Config(format!(
                "unknown key `{}`; nearest valid key is `{}`",
                key_path(prefix, key),
                key_path(prefix, nearest),
            )));
        };
        check_value(value, &key_path(prefix, key), kind)?;
    }
    Ok(())
}

fn check_value(value: &toml::Value, path: &str, kind: &Kind) -> Result<()> {
    let type_error = |expected: &str| {
        Err(CliError::Config(format!(
            "key `{path}` has wrong type: expected {expected}, found {}",
            value.type_str()
        )))
    };
    match kind {
        Kind::Float => {
            if !is_number(value) {
                return type_error("a number");
            }
        }
        Kind::Freq => match value {
            v if is_number(v) => {}
            toml::Value::Table(t) => {
                for (k, v) in t {
                    if k != "ghz" {
                        return Err(CliError::Config(format!(
                            "unknown key `{path}.{k}`; nearest valid key is `{path}.ghz`"
                        )));
                    }
                    if !is_number(v) {
                        return Err(CliError::Config(format!(
                            "key `{path}.ghz` has wrong type: expected a number, found {}",
                            v.type_str()
                        )));
                    }
                }
                if !t.contains_key("ghz") {
                    return Err(CliError::Config(format!(
                        "key `{path}`: missing required key `{path}.ghz`"
                    )));
                }
            }
            _ => return type_error("a frequency (MHz number or { ghz = x })"),
        },
        Kind::Int => {
            if !value.is_integer() {
                return type_error("an integer");
            }
        }
        Kind::Seed => {
            match value.as_integer() {
                Some(n) if n >= 0 => {}
                Some(_) => {
                    return Err(CliError::Config(format!(
                        "key `{path}` has wrong type: expected a non-negative integer"
                    )))
                }
                None => return type_error("an integer"),
            };
        }
        Kind::Bool => {
            if !value.is_bool() {
                return type_error("a boolean");
            }
        }
        Kind::FloatList => {
            let Some(items) = value.as_array() else {
                return type_error("an array of numbers");
            };
            if items.iter().any(|v| !is_number(v)) {
                return type_error("an array of numbers");
            }
        }
        Kind::Table(allowed) => {
            let Some(t) = value.as_table() else {
                return type_error("a table");
            };
            check_table(t, path, allowed)?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Resolved configuration (defaults materialized, frequencies in MHz).
//
// Field order matters for the canonical form: TOML requires scalar keys
// before sub-tables, and serialization follows declaration order.

#[derive(Debug, Clone, Serialize)]
pub struct Config {
    pub master_seed: u64,
    pub system: System,
    pub disorder: Disorder,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<Grid>,
    pub rabi: Rabi,
    pub meso: Meso,
    pub spectra: Spectra,
    pub center_sweep: CenterSweep,
    pub calibrate: Calibrate,
}

#[derive(Debug, Clone, Serialize)]
pub struct System {
    pub nu_c: f64,
    pub kappa: f64,
    pub gamma_in: f64,
    pub gamma_out: f64,
    pub qubit: Qubit,
}

#[derive(Debug, Clone, Serialize)]
pub struct Qubit {
    pub gamma: f64,
    pub g: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Disorder {
    pub mean: f64,
    pub spread: f64,
    pub jitter_sigma: f64,
    pub n_realizations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Grid {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Rabi {
    pub n_min: usize,
    pub n_max: usize,
    pub total_qubits: usize,
    pub detuned_offset: f64,
    pub remove_parked: bool,
    pub jitter_sigma: f64,
    pub jitter_trials: usize,
    pub step: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Meso {
    pub n_min: usize,
    pub n_max: usize,
    pub deltas: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Spectra {
    pub deltas: Vec<f64>,
    pub realizations: usize,
    pub n_qubits: usize,
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CenterSweep {
    pub delta: f64,
    pub n_qubits: usize,
    pub center_min: f64,
    pub center_max: f64,
    pub center_points: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Calibrate {
    pub noise_mhz: f64,
    pub observations_per_coil: usize,
    pub roundtrip_trials: usize,
}

impl Default for Config {
    /// Device-scale defaults: a 30 MHz cavity at 5755 MHz, 42 MHz couplings,
    /// 1 MHz qubit linewidth, and the standard ensemble grids.
    fn default() -> Self {
        Config {
            master_seed: 17,
            system: System {
                nu_c: 5755.0,
                kappa: 30.0,
                gamma_in: 30.0,
                gamma_out: 30.0,
                qubit: Qubit { gamma: 1.0, g: 42.0 },
            },
            disorder: Disorder {
                mean: 5755.0,
                spread: 20.0,
                jitter_sigma: 0.0,
                n_realizations: 1000,
            },
            grid: None,
            rabi: Rabi {
                n_min: 3,
                n_max: 23,
                total_qubits: 25,
                detuned_offset: -755.0,
                remove_parked: false,
                jitter_sigma: 0.0,
                jitter_trials: 20,
                step: 0.5,
            },
            meso: Meso {
                n_min: 3,
                n_max: 17,
                deltas: vec![20.0, 30.0, 50.0, 60.0, 70.0, 80.0, 120.0],
            },
            spectra: Spectra {
                deltas: vec![120.0],
                realizations: 3,
                n_qubits: 17,
                noise_sigma: 0.0,
            },
            center_sweep: CenterSweep {
                delta: 120.0,
                n_qubits: 17,
                center_min: -300.0,
                center_max: 300.0,
                center_points: 61,
            },
            calibrate: Calibrate {
                noise_mhz: 0.0,
                observations_per_coil: 40,
                roundtrip_trials: 1000,
            },
        }
    }
}

impl Config {
    /// Parse, schema-check, and resolve a config. `origin` names the source
    /// in diagnostics; `seed_override` is the `--seed` flag.
    pub fn from_toml_str(text: &str, origin: &str, seed_override: Option<u64>) -> Result<Config> {
        let tree: toml::Table = text
            .parse()
            .map_err(|e| CliError::Config(format!("{origin}: {e}")))?;
        check_table(&tree, "", ROOT_KEYS).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{origin}: {msg}")),
            other => other,
        })?;
        let raw: RawConfig = toml::from_str(text)
            .map_err(|e| CliError::Config(format!("{origin}: {e}")))?;
        let cfg = Self::resolve(raw, seed_override);
        cfg.validate()
            .map_err(|e| match e {
                CliError::Config(msg) => CliError::Config(format!("{origin}: {msg}")),
                other => other,
            })
            .map(|()| cfg)
    }

    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml_str(&text, &path.display().to_string(), seed_override)
    }

    /// Defaults only, seed optionally overridden (no config file given).
    pub fn defaults(seed_override: Option<u64>) -> Config {
        let mut cfg = Config::default();
        if let Some(s) = seed_override {
            cfg.master_seed = s;
        }
        cfg
    }

    fn resolve(raw: RawConfig, seed_override: Option<u64>) -> Config {
        let mut cfg = Config::default();
        if let Some(seed) = raw.master_seed {
            cfg.master_seed = seed;
        }
        if let Some(seed) = seed_override {
            cfg.master_seed = seed;
        }
        if let Some(s) = raw.system {
            if let Some(v) = s.nu_c {
                cfg.system.nu_c = v.mhz();
            }
            if let Some(v) = s.kappa {
                cfg.system.kappa = v;
            }
            if let Some(v) = s.gamma_in {
                cfg.system.gamma_in = v;
            }
            if let Some(v) = s.gamma_out {
                cfg.system.gamma_out = v;
            }
            if let Some(q) = s.qubit {
                if let Some(v) = q.gamma {
                    cfg.system.qubit.gamma = v;
                }
                if let Some(v) = q.g {
                    cfg.system.qubit.g = v;
                }
            }
        }
        // The disorder band is centered on the cavity unless overridden.
        cfg.disorder.mean = cfg.system.nu_c;
        if let Some(d) = raw.disorder {
            if let Some(v) = d.mean {
                cfg.disorder.mean = v.mhz();
            }
            if let Some(v) = d.spread {
                cfg.disorder.spread = v;
            }
            if let Some(v) = d.jitter_sigma {
                cfg.disorder.jitter_sigma = v;
            }
            if let Some(v) = d.n_realizations {
                cfg.disorder.n_realizations = v;
            }
        }
        if let Some(g) = raw.grid {
            cfg.grid = Some(Grid {
                start: g.start.mhz(),
                stop: g.stop.mhz(),
                points: g.points,
            });
        }
        if let Some(r) = raw.rabi {
            if let Some(v) = r.n_min {
                cfg.rabi.n_min = v;
            }
            if let Some(v) = r.n_max {
                cfg.rabi.n_max = v;
            }
            if let Some(v) = r.total_qubits {
                cfg.rabi.total_qubits = v;
            }
            if let Some(v) = r.detuned_offset {
                cfg.rabi.detuned_offset = v;
            }
            if let Some(v) = r.remove_parked {
                cfg.rabi.remove_parked = v;
            }
            if let Some(v) = r.jitter_sigma {
                cfg.rabi.jitter_sigma = v;
            }
            if let Some(v) = r.jitter_trials {
                cfg.rabi.jitter_trials = v;
            }
            if let Some(v) = r.step {
                cfg.rabi.step = v;
            }
        }
        if let Some(m) = raw.meso {
            if let Some(v) = m.n_min {
                cfg.meso.n_min = v;
            }
            if let Some(v) = m.n_max {
                cfg.meso.n_max = v;
            }
            if let Some(v) = m.deltas {
                cfg.meso.deltas = v;
            }
        }
        if let Some(s) = raw.spectra {
            if let Some(v) = s.deltas {
                cfg.spectra.deltas = v;
            }
            if let Some(v) = s.realizations {
                cfg.spectra.realizations = v;
            }
            if let Some(v) = s.n_qubits {
                cfg.spectra.n_qubits = v;
            }
            if let Some(v) = s.noise_sigma {
                cfg.spectra.noise_sigma = v;
            }
        }
        if let Some(c) = raw.center_sweep {
            if let Some(v) = c.delta {
                cfg.center_sweep.delta = v;
            }
            if let Some(v) = c.n_qubits {
                cfg.center_sweep.n_qubits = v;
            }
            if let Some(v) = c.center_min {
                cfg.center_sweep.center_min = v;
            }
            if let Some(v) = c.center_max {
                cfg.center_sweep.center_max = v;
            }
            if let Some(v) = c.center_points {
                cfg.center_sweep.center_points = v;
            }
        }
        if let Some(c) = raw.calibrate {
            if let Some(v) = c.noise_mhz {
                cfg.calibrate.noise_mhz = v;
            }
            if let Some(v) = c.observations_per_coil {
                cfg.calibrate.observations_per_coil = v;
            }
            if let Some(v) = c.roundtrip_trials {
                cfg.calibrate.roundtrip_trials = v;
            }
        }
        cfg
    }

    fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(CliError::Config(msg));
        let s = &self.system;
        if !(s.nu_c.is_finite() && s.nu_c > 0.0) {
            return err(format!("system.nu_c must be positive, got {}", s.nu_c));
        }
        for (name, v) in [
            ("system.kappa", s.kappa),
            ("system.gamma_in", s.gamma_in),
            ("system.gamma_out", s.gamma_out),
            ("system.qubit.gamma", s.qubit.gamma),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return err(format!("{name} must be positive, got {v}"));
            }
        }
        if !(s.qubit.g.is_finite() && s.qubit.g != 0.0) {
            return err(format!("system.qubit.g must be nonzero, got {}", s.qubit.g));
        }
        let d = &self.disorder;
        if !(d.spread.is_finite() && d.spread > 0.0) {
            return err(format!("disorder.spread must be positive, got {}", d.spread));
        }
        if !(d.jitter_sigma.is_finite() && d.jitter_sigma >= 0.0) {
            return err(format!(
                "disorder.jitter_sigma must be >= 0, got {}",
                d.jitter_sigma
            ));
        }
        if d.n_realizations < 2 {
            return err(format!(
                "disorder.n_realizations must be at least 2, got {}",
                d.n_realizations
            ));
        }
        if let Some(g) = &self.grid {
            if !(g.start.is_finite() && g.stop.is_finite() && g.stop > g.start) {
                return err(format!(
                    "grid must satisfy start < stop, got [{}, {}]",
                    g.start, g.stop
                ));
            }
            if g.points < 2 {
                return err(format!("grid.points must be at least 2, got {}", g.points));
            }
        }
        let r = &self.rabi;
        if r.n_min == 0 || r.n_min > r.n_max {
            return err(format!(
                "rabi ensemble sizes must satisfy 1 <= n_min <= n_max, got {}..{}",
                r.n_min, r.n_max
            ));
        }
        if r.n_max > r.total_qubits {
            return err(format!(
                "rabi.n_max ({}) exceeds rabi.total_qubits ({})",
                r.n_max, r.total_qubits
            ));
        }
        if !(r.step.is_finite() && r.step > 0.0) {
            return err(format!("rabi.step must be positive, got {}", r.step));
        }
        if !(r.jitter_sigma.is_finite() && r.jitter_sigma >= 0.0) {
            return err(format!(
                "rabi.jitter_sigma must be >= 0, got {}",
                r.jitter_sigma
            ));
        }
        if r.jitter_sigma > 0.0 && r.jitter_trials == 0 {
            return err("rabi.jitter_trials must be >= 1 when jitter is enabled".into());
        }
        let m = &self.meso;
        if m.n_min == 0 || m.n_min > m.n_max {
            return err(format!(
                "meso ensemble sizes must satisfy 1 <= n_min <= n_max, got {}..{}",
                m.n_min, m.n_max
            ));
        }
        if m.deltas.is_empty() || m.deltas.iter().any(|&x| !(x.is_finite() && x > 0.0)) {
            return err("meso.deltas must be a nonempty list of positive spreads".into());
        }
        let sp = &self.spectra;
        if sp.deltas.is_empty() || sp.deltas.iter().any(|&x| !(x.is_finite() && x >= 0.0)) {
            return err("spectra.deltas must be a nonempty list of spreads >= 0".into());
        }
        if sp.realizations == 0 {
            return err("spectra.realizations must be at least 1".into());
        }
        if sp.n_qubits == 0 {
            return err("spectra.n_qubits must be at least 1".into());
        }
        if !(sp.noise_sigma.is_finite() && sp.noise_sigma >= 0.0) {
            return err(format!(
                "spectra.noise_sigma must be >= 0, got {}",
                sp.noise_sigma
            ));
        }
        let c = &self.center_sweep;
        if !(c.delta.is_finite() && c.delta >= 0.0) {
            return err(format!(
                "center_sweep.delta must be >= 0, got {}",
                c.delta
            ));
        }
        if c.n_qubits == 0 {
            return err("center_sweep.n_qubits must be at least 1".into());
        }
        if c.center_points == 0 {
            return err("center_sweep.center_points must be at least 1".into());
        }
        if c.center_points > 1 && !(c.center_max > c.center_min) {
            return err(format!(
                "center_sweep range must satisfy center_min < center_max, got [{}, {}]",
                c.center_min, c.center_max
            ));
        }
        let cal = &self.calibrate;
        if !(cal.noise_mhz.is_finite() && cal.noise_mhz >= 0.0) {
            return err(format!(
                "calibrate.noise_mhz must be >= 0, got {}",
                cal.noise_mhz
            ));
        }
        if cal.observations_per_coil < 4 {
            return err(format!(
                "calibrate.observations_per_coil must be at least 4, got {}",
                cal.observations_per_coil
            ));
        }
        if cal.roundtrip_trials == 0 {
            return err("calibrate.roundtrip_trials must be at least 1".into());
        }
        Ok(())
    }

    /// Canonical TOML: defaults materialized, frequencies in MHz, fixed key
    /// order. Re-running from this text (with its embedded seed) reproduces
    /// the run.
    pub fn canonical_toml(&self) -> String {
        toml::to_string(self).expect("resolved config always serializes")
    }

    /// FNV-1a 64 over the canonical TOML, as 16 hex digits.
    pub fn hash_hex(&self) -> String {
        format!("{:016x}", fnv1a64(self.canonical_toml().as_bytes()))
    }

    /// One-qubit system template carrying the shared cavity and per-qubit
    /// linewidth/coupling (ensemble builders replicate the qubit).
    pub fn template(&self) -> SystemConfig {
        SystemConfig {
            cavity: CavityParams {
                nu_c: self.system.nu_c,
                kappa: self.system.kappa,
                gamma_in: self.system.gamma_in,
                gamma_out: self.system.gamma_out,
            },
            qubits: vec![QubitParams {
                epsilon: self.system.nu_c,
                gamma: self.system.qubit.gamma,
                g: self.system.qubit.g,
            }],
        }
    }

    /// Disorder spec for one ensemble cell.
    pub fn disorder_spec(&self, spread: f64, master_seed: u64) -> DisorderSpec {
        let shape = if self.disorder.jitter_sigma > 0.0 {
            DisorderShape::FlatPlusGaussianJitter {
                sigma: self.disorder.jitter_sigma,
            }
        } else {
            DisorderShape::Flat
        };
        DisorderSpec {
            mean: self.disorder.mean,
            spread_delta: spread,
            shape,
            master_seed,
        }
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100_0000_01b3);
    }
    hash
}
