//! Target periodic orbit: differential correction, trajectory files, and
//! apolune/perilune detection.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};

use crate::cr3bp::{Cr3bpSystem, State6, SynodicState, Vec3};
use crate::error::{Error, Result};
use crate::integrate::{self, find_root, IntegratorSettings, Trajectory};

/// Southern L2 NRHO apolune crossing near the 9:2 lunar synodic resonance
/// (x0, z0, vy0) for mu = 0.01215. Stand-in for the Gateway orbit.
pub const DEFAULT_NRHO_SEED: [f64; 3] = [1.0221, -0.1821, -0.1033];

/// Which seed coordinate stays fixed during correction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pinning {
    /// Fix z0, adjust x0, vy0 and the half period.
    FixZ,
    /// Fix x0, adjust z0, vy0 and the half period.
    FixX,
}

#[derive(Debug, Clone, Copy)]
pub struct CorrectionSettings {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub pinning: Pinning,
    pub integrator: IntegratorSettings,
    /// Crossings earlier than this are ignored when bootstrapping the half period.
    pub min_half_period: f64,
    /// STM entries above this trigger a conditioning warning.
    pub conditioning_limit: f64,
}

impl Default for CorrectionSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-11,
            max_iterations: 40,
            pinning: Pinning::FixZ,
            integrator: IntegratorSettings::with_tolerance(1e-13),
            min_half_period: 1e-2,
            conditioning_limit: 1e12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Apolune,
    Perilune,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitEvent {
    pub kind: EventKind,
    pub epoch: f64,
    pub moon_distance: f64,
}

#[derive(Debug, Clone)]
enum OrbitData {
    Integrated(Trajectory<6>),
    Sampled(SampledTrajectory),
}

/// One revolution of a periodic orbit with continuous state access.
#[derive(Debug, Clone)]
pub struct PeriodicOrbit {
    initial_state: SynodicState,
    period: f64,
    data: OrbitData,
    periodicity_error: f64,
    notes: Vec<String>,
}

impl PeriodicOrbit {
    pub fn initial_state(&self) -> SynodicState {
        self.initial_state
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn start_epoch(&self) -> f64 {
        self.initial_state.t
    }

    /// Max component mismatch between the state one period later and the start.
    pub fn periodicity_error(&self) -> f64 {
        self.periodicity_error
    }

    /// Diagnostics gathered while building the orbit.
    pub fn notes(&self) -> &[String] {
        &self.notes
    }

    /// Wraps an epoch into `[start, start + period)`.
    pub fn wrap_epoch(&self, epoch: f64) -> f64 {
        let t0 = self.start_epoch();
        t0 + (epoch - t0).rem_euclid(self.period)
    }

    pub fn state_at(&self, epoch: f64) -> Result<SynodicState> {
        let t = self.wrap_epoch(epoch);
        let y = match &self.data {
            OrbitData::Integrated(tr) => tr.state_at(t)?,
            OrbitData::Sampled(s) => s.state_at(t)?,
        };
        Ok(SynodicState::from_vector(epoch, &y))
    }

    /// Node epochs and states as stored (one revolution).
    pub fn nodes(&self) -> Vec<(f64, State6)> {
        match &self.data {
            OrbitData::Integrated(tr) => tr.nodes(),
            OrbitData::Sampled(s) => s.t.iter().copied().zip(s.y.iter().copied()).collect(),
        }
    }

    /// Builds an orbit by propagating `initial_state` over `period`.
    pub fn from_initial_state(
        sys: &Cr3bpSystem,
        initial_state: SynodicState,
        period: f64,
        settings: &IntegratorSettings,
    ) -> Result<Self> {
        let tr = sys.propagate(&initial_state, period, settings)?;
        let periodicity_error = (tr.final_state() - initial_state.to_vector()).amax();
        Ok(Self {
            initial_state,
            period,
            data: OrbitData::Integrated(tr),
            periodicity_error,
            notes: Vec::new(),
        })
    }
}

/// State plus 6x6 state transition matrix, flattened column-major.
type Augmented = SVector<f64, 42>;

fn variational_rhs(sys: &Cr3bpSystem, y: &Augmented) -> Result<Augmented> {
    let state = State6::from_iterator(y.iter().take(6).copied());
    let r = Vec3::new(state[0], state[1], state[2]);
    let d = sys.rhs(&state)?;
    let hess = sys.potential_hessian(&r)?;
    let mut a = SMatrix::<f64, 6, 6>::zeros();
    a.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
    a.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-hess));
    a[(3, 4)] = 2.0;
    a[(4, 3)] = -2.0;
    let phi = SMatrix::<f64, 6, 6>::from_iterator(y.iter().skip(6).copied());
    let dphi = a * phi;
    let mut out = Augmented::zeros();
    out.fixed_rows_mut::<6>(0).copy_from(&d);
    out.fixed_rows_mut::<36>(6).copy_from_slice(dphi.as_slice());
    Ok(out)
}

/// Propagates state and STM from `s0` over `duration`.
pub fn propagate_with_stm(
    sys: &Cr3bpSystem,
    s0: &SynodicState,
    duration: f64,
    settings: &IntegratorSettings,
) -> Result<(State6, SMatrix<f64, 6, 6>)> {
    let mut y0 = Augmented::zeros();
    y0.fixed_rows_mut::<6>(0).copy_from(&s0.to_vector());
    y0.fixed_rows_mut::<36>(6)
        .copy_from_slice(SMatrix::<f64, 6, 6>::identity().as_slice());
    let tr = integrate::integrate(
        |_t, y: &Augmented| variational_rhs(sys, y),
        s0.t,
        y0,
        s0.t + duration,
        settings,
    )?;
    let yf = tr.final_state();
    let state = State6::from_iterator(yf.iter().take(6).copied());
    let phi = SMatrix::<f64, 6, 6>::from_iterator(yf.iter().skip(6).copied());
    Ok((state, phi))
}

/// First y = 0 crossing after `min_time`, found on the dense output.
fn first_plane_crossing(
    sys: &Cr3bpSystem,
    seed: &SynodicState,
    min_time: f64,
    settings: &IntegratorSettings,
) -> Result<f64> {
    let horizon = 2.0 * std::f64::consts::PI;
    let tr = sys.propagate(seed, horizon, settings)?;
    let nodes = tr.node_epochs();
    let y_of = |t: f64| tr.state_at(t).map(|s| s[1]);
    for w in nodes.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b - seed.t < min_time {
            continue;
        }
        let a = a.max(seed.t + min_time);
        let (ya, yb) = (y_of(a)?, y_of(b)?);
        if ya == 0.0 {
            return Ok(a - seed.t);
        }
        if ya.signum() != yb.signum() {
            let root = find_root(y_of, a, b, 1e-14)?;
            return Ok(root - seed.t);
        }
    }
    Err(Error::CorrectionNotConverged {
        iterations: 0,
        residual: f64::INFINITY,
    })
}

/// Single-shooting symmetric correction of a perpendicular x-z plane crossing.
pub fn correct_halo(sys: &Cr3bpSystem, seed: &SynodicState, settings: &CorrectionSettings) -> Result<PeriodicOrbit> {
    let mut state = SynodicState::new(
        Vec3::new(seed.r.x, 0.0, seed.r.z),
        Vec3::new(0.0, seed.v.y, 0.0),
        seed.t,
    );
    let mut half = first_plane_crossing(sys, &state, settings.min_half_period, &settings.integrator)?;
    let mut notes = Vec::new();
    let mut residual = f64::INFINITY;

    for iteration in 0..settings.max_iterations {
        let (end, phi) = propagate_with_stm(sys, &state, half, &settings.integrator)?;
        let f = Vector3::new(end[1], end[3], end[5]);
        residual = f.amax();
        if residual < settings.tolerance {
            log::debug!("halo correction converged in {iteration} iterations");
            let period = 2.0 * half;
            let mut orbit = PeriodicOrbit::from_initial_state(sys, state, period, &settings.integrator)?;
            if phi.amax() > settings.conditioning_limit {
                let note = format!(
                    "half-period STM magnitude {:.3e} exceeds {:.1e}",
                    phi.amax(),
                    settings.conditioning_limit
                );
                log::warn!("{note}");
                notes.push(note);
            }
            orbit.notes = notes;
            return Ok(orbit);
        }
        let deriv = sys.rhs(&end)?;
        let free_col = match settings.pinning {
            Pinning::FixZ => 0,
            Pinning::FixX => 2,
        };
        let rows = [1usize, 3, 5];
        let mut jac = Matrix3::zeros();
        for (i, &row) in rows.iter().enumerate() {
            jac[(i, 0)] = phi[(row, free_col)];
            jac[(i, 1)] = phi[(row, 4)];
            jac[(i, 2)] = deriv[row];
        }
        let step = jac.lu().solve(&(-f)).ok_or(Error::CorrectionNotConverged {
            iterations: iteration,
            residual,
        })?;
        // Limit wild first steps from poor seeds.
        let scale = (0.05 / step.amax()).min(1.0);
        let step = step * scale;
        match settings.pinning {
            Pinning::FixZ => state.r.x += step[0],
            Pinning::FixX => state.r.z += step[0],
        }
        state.v.y += step[1];
        half += step[2];
        if !half.is_finite() || half <= 0.0 {
            break;
        }
    }
    Err(Error::CorrectionNotConverged {
        iterations: settings.max_iterations,
        residual,
    })
}

/// Default target orbit for the Earth-Moon scenario.
pub fn default_nrho(sys: &Cr3bpSystem) -> Result<PeriodicOrbit> {
    let [x, z, vy] = DEFAULT_NRHO_SEED;
    let seed = SynodicState::new(Vec3::new(x, 0.0, z), Vec3::new(0.0, vy, 0.0), 0.0);
    correct_halo(sys, &seed, &CorrectionSettings::default())
}

fn moon_range_rate(sys: &Cr3bpSystem, s: &SynodicState) -> f64 {
    let d = s.r - sys.moon();
    d.dot(&s.v) / d.norm()
}

/// Extrema of the Moon distance over one revolution, sorted by epoch.
pub fn find_extreme_points(orbit: &PeriodicOrbit, sys: &Cr3bpSystem) -> Result<Vec<OrbitEvent>> {
    const SAMPLES: usize = 4000;
    let period = orbit.period();
    // Offset the scan window so an extremum exactly at the start is interior.
    let start = orbit.start_epoch() - period / 997.0;
    let rate = |t: f64| orbit.state_at(t).map(|s| moon_range_rate(sys, &s));
    let mut events = Vec::new();
    let mut t_prev = start;
    let mut g_prev = rate(t_prev)?;
    for i in 1..=SAMPLES {
        let t = start + period * i as f64 / SAMPLES as f64;
        let g = rate(t)?;
        if g_prev != 0.0 && g.signum() != g_prev.signum() {
            let root = find_root(rate, t_prev, t, 1e-12)?;
            let kind = if g_prev > 0.0 {
                EventKind::Apolune
            } else {
                EventKind::Perilune
            };
            let epoch = orbit.wrap_epoch(root);
            let s = orbit.state_at(epoch)?;
            events.push(OrbitEvent {
                kind,
                epoch,
                moon_distance: (s.r - sys.moon()).norm(),
            });
        }
        t_prev = t;
        g_prev = g;
    }
    events.sort_by(|a, b| a.epoch.total_cmp(&b.epoch));
    Ok(events)
}

/// Epoch `offset_hours` before the first apolune, wrapped into the orbit span.
pub fn rendezvous_epoch(orbit: &PeriodicOrbit, offset_hours: f64, sys: &Cr3bpSystem) -> Result<f64> {
    if !(offset_hours >= 0.0) {
        return Err(Error::Validation(format!(
            "rendezvous offset {offset_hours} h must be non-negative"
        )));
    }
    let apolune = find_extreme_points(orbit, sys)?
        .into_iter()
        .find(|e| e.kind == EventKind::Apolune)
        .ok_or_else(|| Error::Validation("orbit has no apolune".into()))?;
    let offset = offset_hours * 3600.0 / sys.time_unit_s();
    Ok(orbit.wrap_epoch(apolune.epoch - offset))
}

/// Rows of a trajectory file, interpolated with a local 6-point Lagrange stencil.
#[derive(Debug, Clone)]
struct SampledTrajectory {
    t: Vec<f64>,
    y: Vec<State6>,
}

impl SampledTrajectory {
    fn state_at(&self, t: f64) -> Result<State6> {
        let n = self.t.len();
        let (lo, hi) = (self.t[0], self.t[n - 1]);
        let slack = 1e-12 * (hi - lo).abs().max(1.0);
        if !(t >= lo - slack && t <= hi + slack) {
            return Err(Error::OutOfSpan {
                epoch: t,
                start: lo,
                end: hi,
            });
        }
        let idx = self.t.partition_point(|&ti| ti <= t);
        if idx > 0 && self.t[idx - 1] == t {
            return Ok(self.y[idx - 1]);
        }
        let width = 6.min(n);
        let first = idx.saturating_sub(width / 2).min(n - width);
        let mut out = State6::zeros();
        for j in first..first + width {
            let mut w = 1.0;
            for m in first..first + width {
                if m != j {
                    w *= (t - self.t[m]) / (self.t[j] - self.t[m]);
                }
            }
            out += self.y[j] * w;
        }
        Ok(out)
    }
}

/// Unit system of a trajectory file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileUnits {
    Normalized,
    /// Meters, meters per second, seconds.
    Si,
}

pub fn save_orbit(orbit: &PeriodicOrbit, path: &Path, sys: &Cr3bpSystem, units: FileUnits) -> Result<()> {
    let (l, v, t) = match units {
        FileUnits::Normalized => (1.0, 1.0, 1.0),
        FileUnits::Si => (
            sys.length_unit_m(),
            sys.length_unit_m() / sys.time_unit_s(),
            sys.time_unit_s(),
        ),
    };
    let mut out = String::new();
    let label = match units {
        FileUnits::Normalized => "normalized",
        FileUnits::Si => "si",
    };
    let _ = writeln!(out, "# units: {label}");
    let _ = writeln!(out, "# mu: {:.17e}", sys.mu());
    let _ = writeln!(out, "# period: {:.17e}", orbit.period() * t);
    if units == FileUnits::Si {
        let _ = writeln!(out, "# length_unit_km: {:.17e}", sys.length_unit_km());
        let _ = writeln!(out, "# time_unit_s: {:.17e}", sys.time_unit_s());
    }
    let _ = writeln!(out, "# t x y z vx vy vz");
    for (ti, y) in orbit.nodes() {
        let _ = writeln!(
            out,
            "{:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e}",
            ti * t,
            y[0] * l,
            y[1] * l,
            y[2] * l,
            y[3] * v,
            y[4] * v,
            y[5] * v
        );
    }
    fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

pub fn load_orbit(path: &Path, sys: &Cr3bpSystem) -> Result<PeriodicOrbit> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut units = None;
    let mut period = None;
    let mut t = Vec::new();
    let mut y = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('#') {
            let Some((key, value)) = header.split_once(':') else {
                continue;
            };
            let value = value.trim();
            let number = || {
                value
                    .parse::<f64>()
                    .map_err(|_| parse_err(line_no, format!("bad number `{value}`")))
            };
            match key.trim() {
                "units" => {
                    units = Some(match value {
                        "normalized" => FileUnits::Normalized,
                        "si" => FileUnits::Si,
                        other => return Err(parse_err(line_no, format!("unknown units `{other}`"))),
                    })
                }
                "mu" => {
                    let mu = number()?;
                    if !close(mu, sys.mu()) {
                        return Err(Error::UnitMismatch(format!(
                            "file mu {mu} differs from system mu {}",
                            sys.mu()
                        )));
                    }
                }
                "period" => period = Some(number()?),
                "length_unit_km" => {
                    let l = number()?;
                    if !close(l, sys.length_unit_km()) {
                        return Err(Error::UnitMismatch(format!(
                            "file length unit {l} km differs from system {} km",
                            sys.length_unit_km()
                        )));
                    }
                }
                "time_unit_s" => {
                    let tu = number()?;
                    if !close(tu, sys.time_unit_s()) {
                        return Err(Error::UnitMismatch(format!(
                            "file time unit {tu} s differs from system {} s",
                            sys.time_unit_s()
                        )));
                    }
                }
                _ => {}
            }
            continue;
        }
        let fields: Vec<f64> = line
            .split_whitespace()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| parse_err(line_no, format!("row {} is not numeric", t.len() + 1)))?;
        if fields.len() != 7 {
            return Err(parse_err(
                line_no,
                format!("row {} has {} columns, expected 7", t.len() + 1, fields.len()),
            ));
        }
        if let Some(&prev) = t.last() {
            if !(fields[0] > prev) {
                return Err(parse_err(
                    line_no,
                    format!("row {}: epoch {} is not after {}", t.len() + 1, fields[0], prev),
                ));
            }
        }
        t.push(fields[0]);
        y.push(State6::from_column_slice(&fields[1..]));
    }
    let units = units.ok_or_else(|| parse_err(1, "missing `# units:` header".into()))?;
    let period = period.ok_or_else(|| parse_err(1, "missing `# period:` header".into()))?;
    if t.len() < 2 {
        return Err(parse_err(text.lines().count(), "need at least two rows".into()));
    }
    let (period, t, y) = match units {
        FileUnits::Normalized => (period, t, y),
        FileUnits::Si => {
            let tu = sys.time_unit_s();
            let l = sys.length_unit_m();
            let v = l / tu;
            let scale = State6::from_column_slice(&[l, l, l, v, v, v]);
            (
                period / tu,
                t.into_iter().map(|x| x / tu).collect(),
                y.into_iter().map(|s| s.component_div(&scale)).collect(),
            )
        }
    };
    let initial_state = SynodicState::from_vector(t[0], &y[0]);
    let sampled = SampledTrajectory { t, y };
    let end = initial_state.t + period;
    let mut notes = Vec::new();
    let periodicity_error = match sampled.state_at(end) {
        Ok(s) => (s - initial_state.to_vector()).amax(),
        Err(_) => {
            notes.push("trajectory rows do not cover a full period".to_string());
            f64::NAN
        }
    };
    if periodicity_error > 1e-8 {
        notes.push(format!("periodicity mismatch {periodicity_error:.3e}"));
    }
    for n in &notes {
        log::warn!("{}: {n}", path.display());
    }
    Ok(PeriodicOrbit {
        initial_state,
        period,
        data: OrbitData::Sampled(sampled),
        periodicity_error,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_nonmonotone_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.traj");
        fs::write(
            &path,
            "# units: normalized\n# mu: 0.01215\n# period: 1.0\n\
             0.0 1 0 0 0 0 0\n0.5 1 0 0 0 0 0\n0.4 1 0 0 0 0 0\n",
        )
        .unwrap();
        let err = load_orbit(&path, &Cr3bpSystem::earth_moon()).unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 6);
                assert!(message.contains("row 3"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_mismatched_mu() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mu.traj");
        fs::write(
            &path,
            "# units: normalized\n# mu: 0.0123\n# period: 1.0\n0 1 0 0 0 0 0\n1 1 0 0 0 0 0\n",
        )
        .unwrap();
        let err = load_orbit(&path, &Cr3bpSystem::earth_moon()).unwrap_err();
        assert!(matches!(err, Error::UnitMismatch(_)));
    }

    #[test]
    fn sampled_circle_interpolates() {
        // Analytic circle of radius 0.1 around the Moon, 400 samples per revolution.
        let sys = Cr3bpSystem::earth_moon();
        let (radius, rate) = (0.1, 3.0);
        let period = 2.0 * std::f64::consts::PI / rate;
        let circle = |t: f64| {
            let (s, c) = (rate * t).sin_cos();
            State6::from_column_slice(&[
                1.0 - sys.mu() + radius * c,
                radius * s,
                0.0,
                -radius * rate * s,
                radius * rate * c,
                0.0,
            ])
        };
        let mut text = format!("# units: normalized\n# mu: {}\n# period: {period}\n", sys.mu());
        let n = 400;
        for i in 0..=n {
            let t = period * i as f64 / n as f64;
            let y = circle(t);
            text += &format!(
                "{t:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e}\n",
                y[0], y[1], y[2], y[3], y[4], y[5]
            );
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("circle.traj");
        fs::write(&path, text).unwrap();
        let orbit = load_orbit(&path, &sys).unwrap();
        for i in 0..997 {
            let t = period * (i as f64 + 0.37) / 997.0;
            let err = (orbit.state_at(t).unwrap().to_vector() - circle(t)).amax();
            assert!(err < 1e-6, "t {t}: {err}");
        }
        assert!(orbit.periodicity_error() < 1e-12);
    }
}
