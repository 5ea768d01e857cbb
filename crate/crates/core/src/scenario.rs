//! Scenario files: flat `key = value` text with `[section]` headers.
//!
//! Every value that affects a run has a key, so a manifest written by
//! [`Scenario::to_config_string`] reproduces the run on its own.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::bvp::BvpSettings;
use crate::cr3bp::{Cr3bpSystem, Vec3, EARTH_MOON_LENGTH_KM, EARTH_MOON_MU, EARTH_MOON_PERIOD_S};
use crate::error::{Error, Result};
use crate::integrate::IntegratorSettings;
use crate::nmpc::{default_plant_settings, NmpcConfig, StopCriteria, WeightUnits, DEFAULT_EPSILON_SCHEDULE};
use crate::orbit::{CorrectionSettings, DEFAULT_NRHO_SEED};
use crate::pmp::CostWeights;
use crate::relative::RelativeState;

/// Largest accepted initial separation, m.
pub const MAX_INITIAL_RANGE_M: f64 = 10_000.0;

#[derive(Debug, Clone, PartialEq)]
pub enum OrbitSource {
    /// Perpendicular crossing `[x, z, vy]`, normalized, refined by differential correction.
    Seed([f64; 3]),
    File(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl OutputFormat {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Some(Self::Csv),
            "json" => Some(Self::Json),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Csv => "csv",
            Self::Json => "json",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub system: Cr3bpSystem,
    pub orbit_source: OrbitSource,
    pub correction_tolerance: f64,
    pub rendezvous_offset_hours: f64,
    /// Initial relative state, m and m/s.
    pub x0: RelativeState,
    pub nmpc: NmpcConfig,
    pub plant: IntegratorSettings,
    pub stop: StopCriteria,
    pub output_dir: Option<PathBuf>,
    pub format: OutputFormat,
    /// Defaults applied for absent keys.
    pub notes: Vec<String>,
    /// Unknown keys and other non-fatal remarks.
    pub warnings: Vec<String>,
}

impl Scenario {
    /// Scenario of the NRHO rendezvous example with every value at its default.
    pub fn reference() -> Self {
        parse_str(DEFAULT_TEXT, Path::new("<builtin>")).expect("builtin scenario is valid")
    }

    pub fn correction_settings(&self) -> CorrectionSettings {
        CorrectionSettings {
            tolerance: self.correction_tolerance,
            ..CorrectionSettings::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.nmpc.validate()?;
        let range = self.x0.rho.norm();
        if !(range <= MAX_INITIAL_RANGE_M) {
            return Err(Error::Validation(format!(
                "initial separation {range:.1} m exceeds the {MAX_INITIAL_RANGE_M} m envelope"
            )));
        }
        if !self.x0.rho_dot.iter().all(|v| v.is_finite()) {
            return Err(Error::Validation("initial velocity must be finite".into()));
        }
        if let OrbitSource::File(p) = &self.orbit_source {
            if !p.is_file() {
                return Err(Error::Validation(format!("orbit file {} does not exist", p.display())));
            }
        }
        if !(self.rendezvous_offset_hours >= 0.0) {
            return Err(Error::Validation("rendezvous_offset_hours must be non-negative".into()));
        }
        if !(self.stop.max_duration_s > 0.0) {
            return Err(Error::Validation("max_duration_s must be positive".into()));
        }
        if !(self.plant.rtol > 0.0 && self.plant.atol > 0.0) {
            return Err(Error::Validation("integrator tolerances must be positive".into()));
        }
        if !(self.correction_tolerance > 0.0) {
            return Err(Error::Validation("correction_tolerance must be positive".into()));
        }
        Ok(())
    }

    /// Resolved scenario as a scenario file. Floats use the shortest
    /// representation that parses back to the same bits.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let c = &self.nmpc;
        let _ = writeln!(s, "name = {}", self.name);
        let _ = writeln!(s, "\n[system]");
        let _ = writeln!(s, "mu = {:?}", self.system.mu());
        let _ = writeln!(s, "length_unit_km = {:?}", self.system.length_unit_km());
        let _ = writeln!(s, "period_s = {:?}", self.system.period_s());
        let _ = writeln!(s, "\n[orbit]");
        match &self.orbit_source {
            OrbitSource::Seed(seed) => {
                let _ = writeln!(s, "source = seed");
                let _ = writeln!(s, "seed = {}", list(seed));
            }
            OrbitSource::File(p) => {
                let _ = writeln!(s, "source = file");
                let _ = writeln!(s, "file = {}", p.display());
            }
        }
        let _ = writeln!(s, "correction_tolerance = {:?}", self.correction_tolerance);
        let _ = writeln!(s, "rendezvous_offset_hours = {:?}", self.rendezvous_offset_hours);
        let _ = writeln!(s, "\n[initial]");
        let _ = writeln!(s, "rho0_m = {}", list(self.x0.rho.as_slice()));
        let _ = writeln!(s, "rho_dot0_mps = {}", list(self.x0.rho_dot.as_slice()));
        let _ = writeln!(s, "\n[reference]");
        let _ = writeln!(s, "rho_m = {}", list(c.reference.rho.as_slice()));
        let _ = writeln!(s, "rho_dot_mps = {}", list(c.reference.rho_dot.as_slice()));
        let _ = writeln!(s, "\n[nmpc]");
        let _ = writeln!(s, "ts_s = {:?}", c.ts);
        let _ = writeln!(s, "tp_s = {:?}", c.tp);
        let _ = writeln!(s, "u_max_mps2 = {:?}", c.u_max);
        let _ = writeln!(s, "q = {}", list(&c.weights.q));
        let _ = writeln!(s, "p = {}", list(&c.weights.p));
        let _ = writeln!(s, "r = {}", list(&[c.weights.r; 3]));
        let _ = writeln!(s, "weight_units = {}", c.weight_units.label);
        let _ = writeln!(s, "weight_length_m = {:?}", c.weight_units.length_m);
        let _ = writeln!(s, "weight_time_s = {:?}", c.weight_units.time_s);
        let _ = writeln!(s, "epsilon_schedule = {}", list(&c.epsilon_schedule));
        let _ = writeln!(s, "bvp_tolerance = {:?}", c.bvp.tolerance);
        let _ = writeln!(s, "bvp_max_mesh = {}", c.bvp.max_mesh_points);
        let _ = writeln!(s, "bvp_max_newton = {}", c.bvp.max_newton_iterations);
        let _ = writeln!(s, "bvp_max_refinements = {}", c.bvp.max_refinements);
        let _ = writeln!(s, "initial_mesh = {}", c.initial_mesh);
        let _ = writeln!(s, "max_bisections = {}", c.max_bisections);
        let _ = writeln!(s, "\n[integrator]");
        let _ = writeln!(s, "rtol = {:?}", self.plant.rtol);
        let _ = writeln!(s, "atol = {:?}", self.plant.atol);
        let _ = writeln!(s, "\n[stop]");
        let _ = writeln!(s, "max_duration_s = {:?}", self.stop.max_duration_s);
        let _ = writeln!(s, "use_box = {}", self.stop.use_box);
        let _ = writeln!(s, "position_box_m = {}", list(&self.stop.position_box_m));
        let _ = writeln!(s, "velocity_box_mps = {:?}", self.stop.velocity_box_mps);
        let _ = writeln!(s, "\n[output]");
        if let Some(d) = &self.output_dir {
            let _ = writeln!(s, "dir = {}", d.display());
        }
        let _ = writeln!(s, "format = {}", self.format.as_str());
        s
    }
}

fn list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ")
}

const DEFAULT_TEXT: &str = "[initial]\nrho0_km = -5, 0.1, 0.1\nrho_dot0_kmps = 2e-5, 2e-5, 2e-5\n";

struct Entry {
    value: String,
    line: usize,
    used: bool,
}

/// Raw key table keyed by `section.key`.
struct Table<'p> {
    path: &'p Path,
    entries: BTreeMap<String, Entry>,
    notes: Vec<String>,
}

impl<'p> Table<'p> {
    fn parse(text: &str, path: &'p Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = match raw.find('#') {
                Some(k) => &raw[..k],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: format!("unterminated section header `{line}`"),
                })?;
                section = name.trim().to_ascii_lowercase();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = k.trim().to_ascii_lowercase();
            if key.is_empty() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: "empty key".into(),
                });
            }
            let full = if section.is_empty() {
                key
            } else {
                format!("{section}.{key}")
            };
            let entry = Entry {
                value: v.trim().to_string(),
                line: line_no,
                used: false,
            };
            if let Some(prev) = entries.insert(full.clone(), entry) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: format!("duplicate key `{full}` (first set on line {})", prev.line),
                });
            }
        }
        Ok(Self {
            path,
            entries,
            notes: Vec::new(),
        })
    }

    fn err(&self, line: usize, key: &str, message: impl std::fmt::Display) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line,
            message: format!("`{key}`: {message}"),
        }
    }

    fn raw(&mut self, key: &str) -> Option<(String, usize)> {
        self.entries.get_mut(key).map(|e| {
            e.used = true;
            (e.value.clone(), e.line)
        })
    }

    fn has(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    fn get<T: Clone + std::fmt::Debug>(
        &mut self,
        key: &str,
        default: T,
        parse: impl Fn(&str) -> std::result::Result<T, String>,
    ) -> Result<T> {
        match self.raw(key) {
            Some((v, line)) => parse(&v).map_err(|m| self.err(line, key, m)),
            None => {
                self.notes.push(format!("{key} defaulted to {default:?}"));
                Ok(default)
            }
        }
    }

    fn f64(&mut self, key: &str, default: f64) -> Result<f64> {
        self.get(key, default, parse_f64)
    }

    fn usize(&mut self, key: &str, default: usize) -> Result<usize> {
        self.get(key, default, |s| {
            s.parse::<usize>().map_err(|e| format!("{e} in `{s}`"))
        })
    }

    fn vec(&mut self, key: &str, default: Vec<f64>, len: Option<usize>) -> Result<Vec<f64>> {
        self.get(key, default, |s| {
            let v = parse_list(s)?;
            match len {
                Some(n) if v.len() != n => Err(format!("expected {n} values, got {}", v.len())),
                _ => Ok(v),
            }
        })
    }

    fn vec3(&mut self, key: &str, default: [f64; 3]) -> Result<Vec3> {
        let v = self.vec(key, default.to_vec(), Some(3))?;
        Ok(Vec3::new(v[0], v[1], v[2]))
    }

    fn unused(&self) -> Vec<(String, usize)> {
        self.entries
            .iter()
            .filter(|(_, e)| !e.used)
            .map(|(k, e)| (k.clone(), e.line))
            .collect()
    }
}

fn parse_f64(s: &str) -> std::result::Result<f64, String> {
    let v = s.trim().parse::<f64>().map_err(|e| format!("{e} in `{s}`"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{s}` is not finite"))
    }
}

fn parse_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(parse_f64)
        .collect()
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        other => Err(format!("expected a boolean, got `{other}`")),
    }
}

fn arr6(v: &[f64]) -> [f64; 6] {
    let mut a = [0.0; 6];
    a.copy_from_slice(v);
    a
}

pub fn parse_scenario(path: &Path) -> Result<Scenario> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_str(&text, path)
}

/// Parses scenario text. Relative file paths resolve against the
/// directory of `path`.
pub fn parse_str(text: &str, path: &Path) -> Result<Scenario> {
    let mut t = Table::parse(text, path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();

    let name = match t.raw("name") {
        Some((v, _)) => v,
        None => path
            .file_stem()
            .map_or_else(|| "scenario".to_string(), |s| s.to_string_lossy().into_owned()),
    };

    let mu = t.f64("system.mu", EARTH_MOON_MU)?;
    let length_km = t.f64("system.length_unit_km", EARTH_MOON_LENGTH_KM)?;
    let period_s = t.f64("system.period_s", EARTH_MOON_PERIOD_S)?;
    let system = Cr3bpSystem::new(mu, length_km, period_s)?;

    let source = t.get("orbit.source", "seed".to_string(), |s| Ok(s.to_ascii_lowercase()))?;
    let orbit_source = match source.as_str() {
        "seed" => {
            let v = t.vec("orbit.seed", DEFAULT_NRHO_SEED.to_vec(), Some(3))?;
            OrbitSource::Seed([v[0], v[1], v[2]])
        }
        "file" => {
            let (v, line) = t
                .raw("orbit.file")
                .ok_or_else(|| Error::Validation("orbit.source = file requires orbit.file".into()))?;
            if v.is_empty() {
                return Err(t.err(line, "orbit.file", "empty path"));
            }
            let p = PathBuf::from(v);
            OrbitSource::File(if p.is_relative() { base.join(p) } else { p })
        }
        other => {
            let line = t.entries.get("orbit.source").map_or(0, |e| e.line);
            return Err(t.err(
                line,
                "orbit.source",
                format!("expected `seed` or `file`, got `{other}`"),
            ));
        }
    };
    let correction_tolerance = t.f64("orbit.correction_tolerance", CorrectionSettings::default().tolerance)?;
    let rendezvous_offset_hours = t.f64("orbit.rendezvous_offset_hours", 6.0)?;

    let rho0 = if t.has("initial.rho0_km") {
        t.vec3("initial.rho0_km", [0.0; 3])? * 1000.0
    } else {
        t.vec3("initial.rho0_m", [-5000.0, 100.0, 100.0])?
    };
    let rho_dot0 = if t.has("initial.rho_dot0_kmps") {
        t.vec3("initial.rho_dot0_kmps", [0.0; 3])? * 1000.0
    } else {
        t.vec3("initial.rho_dot0_mps", [0.02, 0.02, 0.02])?
    };
    let x0 = RelativeState::new(rho0, rho_dot0, 0.0);

    let reference = RelativeState::new(
        t.vec3("reference.rho_m", [-5.0, 0.0, 0.0])?,
        t.vec3("reference.rho_dot_mps", [0.0; 3])?,
        0.0,
    );

    let ts = t.f64("nmpc.ts_s", 2.0)?;
    let tp = t.f64("nmpc.tp_s", 90.0)?;
    let u_max = t.f64("nmpc.u_max_mps2", 0.02)?;
    let q = t.vec("nmpc.q", vec![5e14, 5e14, 5e14, 9e7, 9e7, 9e7], Some(6))?;
    let p = t.vec("nmpc.p", vec![8.05e10, 8.05e10, 8.05e10, 1.0, 1.0, 1.0], Some(6))?;
    let r = t.vec("nmpc.r", vec![1.0, 1.0, 1.0], None)?;
    let weights = match r.as_slice() {
        [x] => CostWeights::new(arr6(&q), arr6(&p), *x)?,
        [a, b, c] => CostWeights::with_r_diagonal(arr6(&q), arr6(&p), [*a, *b, *c])?,
        _ => {
            let line = t.entries.get("nmpc.r").map_or(0, |e| e.line);
            return Err(t.err(line, "nmpc.r", "expected 1 or 3 values"));
        }
    };
    let units_label = t.get(
        "nmpc.weight_units",
        "custom".to_string(),
        |s| Ok(s.to_ascii_lowercase()),
    )?;
    let weight_units = match units_label.as_str() {
        "si" => WeightUnits::si(),
        "km" => WeightUnits::km(),
        "normalized" => WeightUnits::normalized(&system),
        "custom" => {
            let l = t.f64("nmpc.weight_length_m", 4.6e8)?;
            let tau = t.f64("nmpc.weight_time_s", 375_699.8)?;
            WeightUnits::custom("custom", l, tau)
        }
        other => {
            let line = t.entries.get("nmpc.weight_units").map_or(0, |e| e.line);
            return Err(t.err(
                line,
                "nmpc.weight_units",
                format!("expected si, km, normalized or custom, got `{other}`"),
            ));
        }
    };
    if units_label != "custom" {
        // Fixed modes carry their own scales; explicit values must agree.
        for (key, expect) in [
            ("nmpc.weight_length_m", weight_units.length_m),
            ("nmpc.weight_time_s", weight_units.time_s),
        ] {
            if let Some((v, line)) = t.raw(key) {
                let got = parse_f64(&v).map_err(|m| t.err(line, key, m))?;
                if got != expect {
                    return Err(Error::UnitMismatch(format!(
                        "{key} = {got} conflicts with weight_units = {units_label} ({expect})"
                    )));
                }
            }
        }
    }
    let epsilon_schedule = t.vec("nmpc.epsilon_schedule", DEFAULT_EPSILON_SCHEDULE.to_vec(), None)?;
    let defaults = BvpSettings::default();
    let bvp = BvpSettings {
        tolerance: t.f64("nmpc.bvp_tolerance", 1e-6)?,
        max_mesh_points: t.usize("nmpc.bvp_max_mesh", 3000)?,
        max_newton_iterations: t.usize("nmpc.bvp_max_newton", defaults.max_newton_iterations)?,
        max_refinements: t.usize("nmpc.bvp_max_refinements", defaults.max_refinements)?,
        verbose: false,
    };
    let nmpc = NmpcConfig {
        ts,
        tp,
        u_max,
        weights,
        weight_units,
        reference,
        epsilon_schedule,
        bvp,
        initial_mesh: t.usize("nmpc.initial_mesh", 46)?,
        max_bisections: t.usize("nmpc.max_bisections", 6)?,
    };

    let plant_default = default_plant_settings();
    let plant = IntegratorSettings {
        rtol: t.f64("integrator.rtol", plant_default.rtol)?,
        atol: t.f64("integrator.atol", plant_default.atol)?,
        ..plant_default
    };

    let stop_default = StopCriteria::default();
    let pos_box = t.vec3("stop.position_box_m", stop_default.position_box_m)?;
    let stop = StopCriteria {
        max_duration_s: t.f64("stop.max_duration_s", stop_default.max_duration_s)?,
        use_box: t.get("stop.use_box", stop_default.use_box, parse_bool)?,
        position_box_m: pos_box.into(),
        velocity_box_mps: t.f64("stop.velocity_box_mps", stop_default.velocity_box_mps)?,
    };

    let output_dir = t.raw("output.dir").map(|(v, _)| {
        let p = PathBuf::from(v);
        if p.is_relative() {
            base.join(p)
        } else {
            p
        }
    });
    let format = t.get("output.format", OutputFormat::Csv, |s| {
        OutputFormat::parse(s).ok_or_else(|| format!("expected csv or json, got `{s}`"))
    })?;

    let warnings = t
        .unused()
        .into_iter()
        .map(|(k, line)| format!("{}: line {line}: unknown key `{k}` ignored", path.display()))
        .collect::<Vec<_>>();
    for w in &warnings {
        log::warn!("{w}");
    }

    let scenario = Scenario {
        name,
        system,
        orbit_source,
        correction_tolerance,
        rendezvous_offset_hours,
        x0,
        nmpc,
        plant,
        stop,
        output_dir,
        format,
        notes: t.notes,
        warnings,
    };
    scenario.validate()?;
    Ok(scenario)
}
