//! C ABI for `lunar-rdv`.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_load`
//! functions and released with the matching `*_free`. Every fallible call
//! returns an [`LrdvStatus`]; on failure a message is kept per thread and
//! can be read with [`lrdv_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use lunar_rdv::cr3bp::{Cr3bpSystem, SynodicState, Vec3};
use lunar_rdv::integrate::IntegratorSettings;
use lunar_rdv::nmpc::{RunLog, Termination};
use lunar_rdv::orbit::{default_nrho, load_orbit, PeriodicOrbit};
use lunar_rdv::scenario::{parse_scenario, Scenario};
use lunar_rdv::sim::{run_scenario, simulate, SummaryFile};
use lunar_rdv::Error;

/// Number of values in one run-log row, in CSV column order.
pub const LRDV_ROW_LEN: usize = 14;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrdvStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Solver = 4,
    Io = 5,
    Panic = 6,
    BufferTooSmall = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrdvTermination {
    Converged = 0,
    MaxDuration = 1,
    Failed = 2,
}

pub struct LrdvSystem(Cr3bpSystem);

pub struct LrdvOrbit(PeriodicOrbit);

pub struct LrdvScenario(Scenario);

pub struct LrdvRun {
    log: RunLog,
    summary: SummaryFile,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let mut bytes = msg.into().into_bytes();
    bytes.retain(|&b| b != 0);
    let c = CString::new(bytes).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &Error) -> LrdvStatus {
    match e.exit_code() {
        2 => LrdvStatus::Config,
        4 => LrdvStatus::Io,
        _ => LrdvStatus::Solver,
    }
}

/// Runs `f`, converting errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), LrdvStatus>) -> LrdvStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LrdvStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            LrdvStatus::Panic
        }
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, LrdvStatus>;
}

impl<T> OrStatus<T> for Result<T, Error> {
    fn or_status(self) -> Result<T, LrdvStatus> {
        self.map_err(|e| {
            set_error(e.to_string());
            status_of(&e)
        })
    }
}

unsafe fn href<'a, T>(p: *const T, name: &str) -> Result<&'a T, LrdvStatus> {
    p.as_ref().ok_or_else(|| {
        set_error(format!("{name} is null"));
        LrdvStatus::NullPointer
    })
}

unsafe fn out_ptr<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, LrdvStatus> {
    p.as_mut().ok_or_else(|| {
        set_error(format!("{name} is null"));
        LrdvStatus::NullPointer
    })
}

unsafe fn slice<'a>(p: *const f64, n: usize, name: &str) -> Result<&'a [f64], LrdvStatus> {
    if p.is_null() {
        set_error(format!("{name} is null"));
        return Err(LrdvStatus::NullPointer);
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a>(p: *mut f64, n: usize, name: &str) -> Result<&'a mut [f64], LrdvStatus> {
    if p.is_null() {
        set_error(format!("{name} is null"));
        return Err(LrdvStatus::NullPointer);
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn path_arg<'a>(p: *const c_char, name: &str) -> Result<&'a Path, LrdvStatus> {
    if p.is_null() {
        set_error(format!("{name} is null"));
        return Err(LrdvStatus::NullPointer);
    }
    CStr::from_ptr(p).to_str().map(Path::new).map_err(|_| {
        set_error(format!("{name} is not valid UTF-8"));
        LrdvStatus::InvalidArgument
    })
}

fn state_of(s: &[f64], t: f64) -> SynodicState {
    SynodicState::new(Vec3::new(s[0], s[1], s[2]), Vec3::new(s[3], s[4], s[5]), t)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lrdv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Length in bytes of the last error message on this thread, including
/// the terminating NUL; 0 when there is none.
#[no_mangle]
pub extern "C" fn lrdv_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(0, |c| c.as_bytes_with_nul().len()))
}

/// Copies the last error message into `buf`. Returns `BufferTooSmall`
/// (writing a truncated, terminated message) when `len` is too short.
///
/// # Safety
/// `buf` must be valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn lrdv_last_error_message(buf: *mut c_char, len: usize) -> LrdvStatus {
    if buf.is_null() || len == 0 {
        return LrdvStatus::NullPointer;
    }
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_ref().map_or(&[0u8][..], |c| c.as_bytes_with_nul());
        let n = bytes.len().min(len);
        ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
        if n < bytes.len() {
            *buf.add(len - 1) = 0;
            LrdvStatus::BufferTooSmall
        } else {
            LrdvStatus::Ok
        }
    })
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lrdv_system_new(
    mu: f64,
    length_unit_km: f64,
    period_s: f64,
    out: *mut *mut LrdvSystem,
) -> LrdvStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let sys = Cr3bpSystem::new(mu, length_unit_km, period_s).or_status()?;
        *out = Box::into_raw(Box::new(LrdvSystem(sys)));
        Ok(())
    })
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lrdv_system_earth_moon(out: *mut *mut LrdvSystem) -> LrdvStatus {
    guard(|| {
        *out_ptr(out, "out")? = Box::into_raw(Box::new(LrdvSystem(Cr3bpSystem::earth_moon())));
        Ok(())
    })
}

/// # Safety
/// `sys` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn lrdv_system_free(sys: *mut LrdvSystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

/// Jacobi integral of a normalized synodic state `[x, y, z, vx, vy, vz]`.
///
/// # Safety
/// `state` must hold 6 values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lrdv_system_jacobi(sys: *const LrdvSystem, state: *const f64, out: *mut f64) -> LrdvStatus {
    guard(|| {
        let sys = href(sys, "sys")?;
        let s = slice(state, 6, "state")?;
        *out_ptr(out, "out")? = sys.0.jacobi_integral(&state_of(s, 0.0)).or_status()?;
        Ok(())
    })
}

/// Synodic acceleration of a normalized state, written to `out[3]`.
///
/// # Safety
/// `state` must hold 6 values and `out` 3.
#[no_mangle]
pub unsafe extern "C" fn lrdv_system_accel(sys: *const LrdvSystem, state: *const f64, out: *mut f64) -> LrdvStatus {
    guard(|| {
        let sys = href(sys, "sys")?;
        let s = slice(state, 6, "state")?;
        let out = slice_mut(out, 3, "out")?;
        let a = sys.0.synodic_accel(&state_of(s, 0.0)).or_status()?;
        out.copy_from_slice(a.as_slice());
        Ok(())
    })
}

/// Propagates a normalized state for `duration` time units at relative and
/// absolute tolerance `tolerance`, writing the final state to `out[6]`.
///
/// # Safety
/// `state` and `out` must hold 6 values.
#[no_mangle]
pub unsafe extern "C" fn lrdv_system_propagate(
    sys: *const LrdvSystem,
    state: *const f64,
    duration: f64,
    tolerance: f64,
    out: *mut f64,
) -> LrdvStatus {
    guard(|| {
        let sys = href(sys, "sys")?;
        let s = slice(state, 6, "state")?;
        let out = slice_mut(out, 6, "out")?;
        if !(tolerance > 0.0) || !duration.is_finite() {
            set_error("tolerance must be positive and duration finite");
            return Err(LrdvStatus::InvalidArgument);
        }
        let tr = sys
            .0
            .propagate(
                &state_of(s, 0.0),
                duration,
                &IntegratorSettings::with_tolerance(tolerance),
            )
            .or_status()?;
        out.copy_from_slice(tr.final_state().as_slice());
        Ok(())
    })
}

/// Default NRHO of the Earth-Moon scenario, corrected in `sys`.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lrdv_orbit_default(sys: *const LrdvSystem, out: *mut *mut LrdvOrbit) -> LrdvStatus {
    guard(|| {
        let sys = href(sys, "sys")?;
        let out = out_ptr(out, "out")?;
        let orbit = default_nrho(&sys.0).or_status()?;
        *out = Box::into_raw(Box::new(LrdvOrbit(orbit)));
        Ok(())
    })
}

/// Loads a trajectory file written by the library.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lrdv_orbit_load(
    sys: *const LrdvSystem,
    path: *const c_char,
    out: *mut *mut LrdvOrbit,
) -> LrdvStatus {
    guard(|| {
        let sys = href(sys, "sys")?;
        let path = path_arg(path, "path")?;
        let out = out_ptr(out, "out")?;
        let orbit = load_orbit(path, &sys.0).or_status()?;
        *out = Box::into_raw(Box::new(LrdvOrbit(orbit)));
        Ok(())
    })
}

/// # Safety
/// `orbit` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn lrdv_orbit_free(orbit: *mut LrdvOrbit) {
    if !orbit.is_null() {
        drop(Box::from_raw(orbit));
    }
}

/// Normalized period.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lrdv_orbit_period(orbit: *const LrdvOrbit, out: *mut f64) -> LrdvStatus {
    guard(|| {
        *out_ptr(out, "out")? = href(orbit, "orbit")?.0.period();
        Ok(())
    })
}

/// Normalized state at `epoch` (wrapped into the period), written to `out[6]`.
///
/// # Safety
/// `out` must hold 6 values.
#[no_mangle]
pub unsafe extern "C" fn lrdv_orbit_state_at(orbit: *const LrdvOrbit, epoch: f64, out: *mut f64) -> LrdvStatus {
    guard(|| {
        let orbit = href(orbit, "orbit")?;
        let out = slice_mut(out, 6, "out")?;
        let s = orbit.0.state_at(orbit.0.wrap_epoch(epoch)).or_status()?;
        out.copy_from_slice(s.to_vector().as_slice());
        Ok(())
    })
}

/// Parses and validates a scenario file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lrdv_scenario_load(path: *const c_char, out: *mut *mut LrdvScenario) -> LrdvStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let out = out_ptr(out, "out")?;
        let s = parse_scenario(path).or_status()?;
        *out = Box::into_raw(Box::new(LrdvScenario(s)));
        Ok(())
    })
}

/// Built-in rendezvous scenario with all defaults.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lrdv_scenario_default(out: *mut *mut LrdvScenario) -> LrdvStatus {
    guard(|| {
        *out_ptr(out, "out")? = Box::into_raw(Box::new(LrdvScenario(Scenario::reference())));
        Ok(())
    })
}

/// Caps the simulated duration, in seconds.
///
/// # Safety
/// `scenario` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn lrdv_scenario_set_max_duration(scenario: *mut LrdvScenario, seconds: f64) -> LrdvStatus {
    guard(|| {
        let s = out_ptr(scenario, "scenario")?;
        if !(seconds > 0.0) || !seconds.is_finite() {
            set_error(format!("max duration {seconds} must be positive"));
            return Err(LrdvStatus::InvalidArgument);
        }
        s.0.stop.max_duration_s = seconds;
        Ok(())
    })
}

/// # Safety
/// `scenario` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn lrdv_scenario_free(scenario: *mut LrdvScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Runs the closed loop. With a non-null `out_dir` the result files are
/// written there as well. A run stopped by a solver failure still yields a
/// handle; check [`lrdv_run_termination`].
///
/// # Safety
/// `out_dir` must be null or a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lrdv_run(
    scenario: *const LrdvScenario,
    out_dir: *const c_char,
    out: *mut *mut LrdvRun,
) -> LrdvStatus {
    guard(|| {
        let s = href(scenario, "scenario")?;
        let out = out_ptr(out, "out")?;
        let run = if out_dir.is_null() {
            let (log, summary) = simulate(&s.0).or_status()?;
            LrdvRun { log, summary }
        } else {
            let dir = path_arg(out_dir, "out_dir")?;
            let rep = run_scenario(&s.0, dir).or_status()?;
            LrdvRun {
                log: rep.log,
                summary: rep.summary,
            }
        };
        *out = Box::into_raw(Box::new(run));
        Ok(())
    })
}

/// # Safety
/// `run` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn lrdv_run_free(run: *mut LrdvRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Number of logged samples; 0 for a null handle.
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lrdv_run_row_count(run: *const LrdvRun) -> usize {
    run.as_ref().map_or(0, |r| r.log.rows.len())
}

/// Writes row `index` into `out[LRDV_ROW_LEN]` in CSV column order.
///
/// # Safety
/// `out` must hold `LRDV_ROW_LEN` values.
#[no_mangle]
pub unsafe extern "C" fn lrdv_run_row(run: *const LrdvRun, index: usize, out: *mut f64) -> LrdvStatus {
    guard(|| {
        let run = href(run, "run")?;
        let out = slice_mut(out, LRDV_ROW_LEN, "out")?;
        let Some(r) = run.log.rows.get(index) else {
            set_error(format!("row {index} out of range ({} rows)", run.log.rows.len()));
            return Err(LrdvStatus::InvalidArgument);
        };
        out.copy_from_slice(&[
            r.t_s,
            r.rho_m[0],
            r.rho_m[1],
            r.rho_m[2],
            r.v_mps[0],
            r.v_mps[1],
            r.v_mps[2],
            r.u_mps2[0],
            r.u_mps2[1],
            r.u_mps2[2],
            r.u_norm_mps2,
            r.upsilon,
            r.cost,
            r.impulse_mps,
        ]);
        Ok(())
    })
}

/// Cumulative impulse, m/s.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lrdv_run_impulse(run: *const LrdvRun, out: *mut f64) -> LrdvStatus {
    guard(|| {
        *out_ptr(out, "out")? = href(run, "run")?.summary.run.impulse_mps;
        Ok(())
    })
}

/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lrdv_run_termination(run: *const LrdvRun, out: *mut LrdvTermination) -> LrdvStatus {
    guard(|| {
        let run = href(run, "run")?;
        *out_ptr(out, "out")? = match &run.log.termination {
            Termination::Converged => LrdvTermination::Converged,
            Termination::MaxDuration => LrdvTermination::MaxDuration,
            Termination::Failed(msg) => {
                set_error(msg.clone());
                LrdvTermination::Failed
            }
        };
        Ok(())
    })
}
