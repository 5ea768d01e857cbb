//! Scenario execution, result files and run comparison.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::cr3bp::{Cr3bpSystem, SynodicState, Vec3};
use crate::error::{Error, Result};
use crate::nmpc::{run_closed_loop, ClosedLoopSetup, RunLog, RunSummary, Termination, CSV_HEADER};
use crate::orbit::{
    correct_halo, find_extreme_points, load_orbit, rendezvous_epoch, save_orbit, EventKind, FileUnits, PeriodicOrbit,
};
use crate::relative::TermMask;
use crate::scenario::{parse_scenario, OrbitSource, OutputFormat, Scenario};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Command-line adjustments applied on top of a parsed scenario.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub bvp_tolerance: Option<f64>,
    pub epsilon_schedule: Option<Vec<f64>>,
    pub seed: Option<[f64; 3]>,
    pub format: Option<OutputFormat>,
}

impl Overrides {
    pub fn apply(&self, s: &mut Scenario) -> Result<()> {
        if let Some(tol) = self.bvp_tolerance {
            s.nmpc.bvp.tolerance = tol;
            s.notes.push(format!("nmpc.bvp_tolerance overridden to {tol:?}"));
        }
        if let Some(eps) = &self.epsilon_schedule {
            s.nmpc.epsilon_schedule = eps.clone();
            s.notes.push(format!("nmpc.epsilon_schedule overridden to {eps:?}"));
        }
        if let Some(seed) = self.seed {
            s.orbit_source = OrbitSource::Seed(seed);
            s.notes.push(format!("orbit seed overridden to {seed:?}"));
        }
        if let Some(f) = self.format {
            s.format = f;
        }
        s.validate()
    }
}

pub fn prepare_orbit(s: &Scenario) -> Result<PeriodicOrbit> {
    match &s.orbit_source {
        OrbitSource::Seed([x, z, vy]) => {
            let seed = SynodicState::new(Vec3::new(*x, 0.0, *z), Vec3::new(0.0, *vy, 0.0), 0.0);
            correct_halo(&s.system, &seed, &s.correction_settings())
        }
        OrbitSource::File(p) => load_orbit(p, &s.system),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Calibration {
    pub weight_units: String,
    pub weight_length_m: f64,
    pub weight_time_s: f64,
    pub achieved_impulse_mps: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryFile {
    pub name: String,
    pub version: String,
    pub partial: bool,
    pub orbit_period_s: f64,
    pub orbit_periodicity_error: f64,
    pub start_epoch: f64,
    #[serde(flatten)]
    pub run: RunSummary,
    pub calibration: Calibration,
    pub notes: Vec<String>,
    pub warnings: Vec<String>,
    pub diagnostics: Vec<String>,
}

#[derive(Debug)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub log: RunLog,
    pub summary: SummaryFile,
}

impl RunReport {
    pub fn partial(&self) -> bool {
        self.summary.partial
    }
}

fn write(path: &Path, text: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    files.push(path.to_path_buf());
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

/// Runs the closed loop in memory.
pub fn simulate(s: &Scenario) -> Result<(RunLog, SummaryFile)> {
    let orbit = prepare_orbit(s)?;
    let start_epoch = rendezvous_epoch(&orbit, s.rendezvous_offset_hours, &s.system)?;
    let setup = ClosedLoopSetup {
        x0: s.x0,
        start_epoch,
        stop: s.stop,
        plant: s.plant,
        plant_mask: TermMask::default(),
    };
    let log = run_closed_loop(&setup, &orbit, &s.system, &s.nmpc)?;
    let run = log.summary();
    let summary = SummaryFile {
        name: s.name.clone(),
        version: VERSION.to_string(),
        partial: matches!(log.termination, Termination::Failed(_)),
        orbit_period_s: orbit.period() * s.system.time_unit_s(),
        orbit_periodicity_error: orbit.periodicity_error(),
        start_epoch,
        calibration: Calibration {
            weight_units: s.nmpc.weight_units.label.clone(),
            weight_length_m: s.nmpc.weight_units.length_m,
            weight_time_s: s.nmpc.weight_units.time_s,
            achieved_impulse_mps: run.impulse_mps,
        },
        run,
        notes: s.notes.clone(),
        warnings: s.warnings.clone(),
        diagnostics: log.diagnostics.clone(),
    };
    Ok((log, summary))
}

/// Runs the closed loop and writes every result file into `out_dir`.
///
/// A run that stops on a solver or propagation failure still writes what it
/// has, marks the summary as partial and returns the report; callers decide
/// the exit status from [`RunReport::partial`].
pub fn run_scenario(s: &Scenario, out_dir: &Path) -> Result<RunReport> {
    let (log, summary) = simulate(s)?;
    let partial = summary.partial;
    create_dir(out_dir)?;
    let mut files = Vec::new();
    match s.format {
        OutputFormat::Csv => write(&out_dir.join("run.csv"), &log.to_csv(), &mut files)?,
        OutputFormat::Json => {
            let text = serde_json::to_string_pretty(&log.rows).expect("rows serialize");
            write(&out_dir.join("run.json"), &text, &mut files)?;
        }
    }
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write(&out_dir.join("summary.json"), &json, &mut files)?;
    write(&out_dir.join("manifest.cfg"), &manifest_text(s, &summary), &mut files)?;
    for (name, text) in plot_files(&log) {
        write(&out_dir.join(name), &text, &mut files)?;
    }
    if partial {
        write(
            &out_dir.join("PARTIAL"),
            "run stopped before completion; see summary.json\n",
            &mut files,
        )?;
    }
    Ok(RunReport {
        out_dir: out_dir.to_path_buf(),
        files,
        log,
        summary,
    })
}

fn manifest_text(s: &Scenario, summary: &SummaryFile) -> String {
    let mut m = String::new();
    let _ = writeln!(m, "# lunar-rdv {VERSION} run manifest");
    for n in &s.notes {
        let _ = writeln!(m, "# note: {n}");
    }
    for w in &s.warnings {
        let _ = writeln!(m, "# warning: {w}");
    }
    let r = &summary.run;
    let _ = writeln!(m, "# result: termination = {:?}", r.termination);
    let _ = writeln!(m, "# result: duration_s = {:?}", r.duration_s);
    let _ = writeln!(m, "# result: impulse_mps = {:?}", r.impulse_mps);
    let _ = writeln!(m, "# result: final_position_error_m = {:?}", r.final_position_error_m);
    let _ = writeln!(
        m,
        "# result: final_velocity_error_mps = {:?}",
        r.final_velocity_error_mps
    );
    let _ = writeln!(
        m,
        "# calibration: weight_units = {} (length {:e} m, time {:e} s), I_u = {:.3} m/s",
        summary.calibration.weight_units,
        summary.calibration.weight_length_m,
        summary.calibration.weight_time_s,
        summary.calibration.achieved_impulse_mps
    );
    m.push('\n');
    m.push_str(&s.to_config_string());
    m
}

/// Whitespace-separated columns with a `#` header line.
fn plot_files(log: &RunLog) -> Vec<(&'static str, String)> {
    let table = |header: &str, row: &dyn Fn(&crate::nmpc::LogRow) -> Vec<f64>| {
        let mut s = format!("# {header}\n");
        for r in &log.rows {
            let cols: Vec<String> = row(r).iter().map(|v| format!("{v:e}")).collect();
            s.push_str(&cols.join(" "));
            s.push('\n');
        }
        s
    };
    let refr = log.reference.rho;
    let refv = log.reference.rho_dot;
    vec![
        (
            "trajectory.dat",
            table("t_s rho_x_m rho_y_m rho_z_m", &|r| {
                vec![r.t_s, r.rho_m[0], r.rho_m[1], r.rho_m[2]]
            }),
        ),
        (
            "states.dat",
            table("t_s err_x_m err_y_m err_z_m err_vx_mps err_vy_mps err_vz_mps", &|r| {
                vec![
                    r.t_s,
                    r.rho_m[0] - refr[0],
                    r.rho_m[1] - refr[1],
                    r.rho_m[2] - refr[2],
                    r.v_mps[0] - refv[0],
                    r.v_mps[1] - refv[1],
                    r.v_mps[2] - refv[2],
                ]
            }),
        ),
        (
            "thrust.dat",
            table("t_s u_x_mps2 u_y_mps2 u_z_mps2 u_norm_mps2", &|r| {
                vec![r.t_s, r.u_mps2[0], r.u_mps2[1], r.u_mps2[2], r.u_norm_mps2]
            }),
        ),
        (
            "switching.dat",
            table("t_s upsilon engine_on", &|r| {
                vec![r.t_s, r.upsilon, if r.u_norm_mps2 > 0.0 { 1.0 } else { 0.0 }]
            }),
        ),
    ]
}

/// Writes the corrected target orbit and its apolune/perilune epochs.
pub fn write_orbit_only(s: &Scenario, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let orbit = prepare_orbit(s)?;
    create_dir(out_dir)?;
    let mut files = Vec::new();
    let orbit_path = out_dir.join("orbit.txt");
    save_orbit(&orbit, &orbit_path, &s.system, FileUnits::Normalized)?;
    files.push(orbit_path);
    let events = find_extreme_points(&orbit, &s.system)?;
    let start = rendezvous_epoch(&orbit, s.rendezvous_offset_hours, &s.system)?;
    write(
        &out_dir.join("events.txt"),
        &events_text(&orbit, &events, start, &s.system),
        &mut files,
    )?;
    Ok(files)
}

fn events_text(orbit: &PeriodicOrbit, events: &[crate::orbit::OrbitEvent], start: f64, sys: &Cr3bpSystem) -> String {
    let tu = sys.time_unit_s();
    let lkm = sys.length_unit_km();
    let mut s = String::new();
    let _ = writeln!(
        s,
        "# period {:.17e} (normalized), {:.6} s",
        orbit.period(),
        orbit.period() * tu
    );
    let _ = writeln!(s, "# periodicity_error {:.3e}", orbit.periodicity_error());
    for n in orbit.notes() {
        let _ = writeln!(s, "# note: {n}");
    }
    let _ = writeln!(s, "# kind epoch epoch_s moon_distance_km");
    for e in events {
        let kind = match e.kind {
            EventKind::Apolune => "apolune",
            EventKind::Perilune => "perilune",
        };
        let _ = writeln!(
            s,
            "{kind} {:.17e} {:.6} {:.6}",
            e.epoch,
            e.epoch * tu,
            e.moon_distance * lkm
        );
    }
    let _ = writeln!(s, "rendezvous_start {:.17e} {:.6} -", start, start * tu);
    s
}

/// Runs every `*.cfg` in `dir`, each into `out_root/<file stem>`.
pub fn run_batch(dir: &Path, out_root: &Path, overrides: &Overrides) -> Result<Vec<(PathBuf, Result<RunReport>)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(format!("reading {}", dir.display()), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "cfg"))
        .collect();
    paths.sort();
    Ok(paths
        .into_par_iter()
        .map(|p| {
            let res = parse_scenario(&p).and_then(|mut s| {
                overrides.apply(&mut s)?;
                let stem = p.file_stem().map_or_else(|| "run".into(), |x| x.to_os_string());
                run_scenario(&s, &out_root.join(stem))
            });
            (p, res)
        })
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct ColumnDelta {
    pub column: String,
    pub max_abs: f64,
    pub rms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OffLevelSample {
    /// `"a"` or `"b"`.
    pub run: &'static str,
    pub t_s: f64,
    pub u_norm_mps2: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub rows_a: usize,
    pub rows_b: usize,
    pub compared_rows: usize,
    pub columns: Vec<ColumnDelta>,
    pub impulse_a: f64,
    pub impulse_b: f64,
    pub impulse_delta: f64,
    pub impulse_rel_delta: f64,
    pub switches_a: Vec<f64>,
    pub switches_b: Vec<f64>,
    /// Largest distance from a switch in one run to the nearest in the other.
    pub max_switch_shift_s: f64,
    pub u_max: f64,
    pub off_level: Vec<OffLevelSample>,
}

impl CompareReport {
    pub fn identical(&self) -> bool {
        self.rows_a == self.rows_b && self.columns.iter().all(|c| c.max_abs == 0.0)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "rows: a {} b {} compared {}",
            self.rows_a, self.rows_b, self.compared_rows
        );
        let _ = writeln!(s, "{:<14} {:>14} {:>14}", "column", "max_abs", "rms");
        for c in &self.columns {
            let _ = writeln!(s, "{:<14} {:>14.6e} {:>14.6e}", c.column, c.max_abs, c.rms);
        }
        let _ = writeln!(
            s,
            "impulse: a {:.6} b {:.6} delta {:.6e} ({:.4}%)",
            self.impulse_a,
            self.impulse_b,
            self.impulse_delta,
            100.0 * self.impulse_rel_delta
        );
        let _ = writeln!(
            s,
            "switches: a {} b {} max shift {:.3} s",
            self.switches_a.len(),
            self.switches_b.len(),
            self.max_switch_shift_s
        );
        if self.off_level.is_empty() {
            let _ = writeln!(s, "thrust levels: all samples in {{0, {}}}", self.u_max);
        } else {
            let _ = writeln!(
                s,
                "thrust levels: {} samples outside {{0, {}}}",
                self.off_level.len(),
                self.u_max
            );
            for o in self.off_level.iter().take(20) {
                let _ = writeln!(s, "  run {} t {} |u| {:e}", o.run, o.t_s, o.u_norm_mps2);
            }
        }
        s
    }
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
}

fn read_table(path: &Path) -> Result<Table> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = rdr
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect::<Vec<_>>();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let row = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                message: e.to_string(),
            })?;
        rows.push(row);
    }
    Ok(Table { header, rows })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(format!("reading {}", path.display()), io),
        kind => Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{kind:?}"),
        },
    }
}

fn switch_times(t: &[f64], on: &[bool]) -> Vec<f64> {
    (1..on.len()).filter(|&i| on[i] != on[i - 1]).map(|i| t[i]).collect()
}

fn max_nearest(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .map(|x| b.iter().map(|y| (x - y).abs()).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}

/// Compares two run logs row by row over their common length. `u_max`
/// defaults to the largest thrust magnitude in either file.
pub fn compare_runs(a: &Path, b: &Path, u_max: Option<f64>) -> Result<CompareReport> {
    let ta = read_table(a)?;
    let tb = read_table(b)?;
    if ta.header != tb.header {
        return Err(Error::Schema(format!(
            "column sets differ: {} has [{}], {} has [{}]",
            a.display(),
            ta.header.join(","),
            b.display(),
            tb.header.join(",")
        )));
    }
    let expected: Vec<&str> = CSV_HEADER.split(',').collect();
    if ta.header != expected {
        return Err(Error::Schema(format!("unexpected columns [{}]", ta.header.join(","))));
    }
    let col = |name: &str| expected.iter().position(|c| *c == name).expect("known column");
    let (it, inorm, iimp) = (col("t_s"), col("u_norm_mps2"), col("impulse_mps"));

    let n = ta.rows.len().min(tb.rows.len());
    let columns = expected
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let (mut max_abs, mut sq) = (0.0f64, 0.0);
            for i in 0..n {
                let d = (ta.rows[i][j] - tb.rows[i][j]).abs();
                max_abs = max_abs.max(d);
                sq += d * d;
            }
            ColumnDelta {
                column: name.to_string(),
                max_abs,
                rms: if n > 0 { (sq / n as f64).sqrt() } else { 0.0 },
            }
        })
        .collect();

    let last = |t: &Table| t.rows.last().map_or(0.0, |r| r[iimp]);
    let (ia, ib) = (last(&ta), last(&tb));
    let u_max = u_max.unwrap_or_else(|| ta.rows.iter().chain(&tb.rows).map(|r| r[inorm]).fold(0.0, f64::max));
    let mut off_level = Vec::new();
    for (run, t) in [("a", &ta), ("b", &tb)] {
        for r in &t.rows {
            if r[inorm] != 0.0 && r[inorm] != u_max {
                off_level.push(OffLevelSample {
                    run,
                    t_s: r[it],
                    u_norm_mps2: r[inorm],
                });
            }
        }
    }
    let switches = |t: &Table| {
        let times: Vec<f64> = t.rows.iter().map(|r| r[it]).collect();
        let on: Vec<bool> = t.rows.iter().map(|r| r[inorm] > 0.0).collect();
        switch_times(&times, &on)
    };
    let (sa, sb) = (switches(&ta), switches(&tb));
    let shift = if sa.is_empty() && sb.is_empty() {
        0.0
    } else {
        max_nearest(&sa, &sb).max(max_nearest(&sb, &sa))
    };
    Ok(CompareReport {
        rows_a: ta.rows.len(),
        rows_b: tb.rows.len(),
        compared_rows: n,
        columns,
        impulse_a: ia,
        impulse_b: ib,
        impulse_delta: ib - ia,
        impulse_rel_delta: if ia != 0.0 { (ib - ia) / ia } else { 0.0 },
        switches_a: sa,
        switches_b: sb,
        max_switch_shift_s: shift,
        u_max,
        off_level,
    })
}
