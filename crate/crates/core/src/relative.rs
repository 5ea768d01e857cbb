//! Chaser motion relative to the target, in LVLH axes.
//!
//! The plant evaluates the frame kinematics and target position along the
//! true target orbit. The prediction model freezes them at a sampling epoch
//! and drops the angular-acceleration term.

use nalgebra::{Matrix3, SVector};

use crate::cr3bp::{Cr3bpSystem, State6, SynodicState, Vec3};
use crate::error::{Error, Primary, Result};
use crate::integrate::{self, IntegratorSettings, Trajectory};
use crate::lvlh::{lvlh_basis, LvlhKinematics};
use crate::orbit::PeriodicOrbit;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeState {
    pub rho: Vec3,
    pub rho_dot: Vec3,
    pub epoch: f64,
}

impl RelativeState {
    pub fn new(rho: Vec3, rho_dot: Vec3, epoch: f64) -> Self {
        Self { rho, rho_dot, epoch }
    }

    pub fn zero(epoch: f64) -> Self {
        Self::new(Vec3::zeros(), Vec3::zeros(), epoch)
    }

    pub fn to_vector(&self) -> State6 {
        State6::from_column_slice(&[
            self.rho.x,
            self.rho.y,
            self.rho.z,
            self.rho_dot.x,
            self.rho_dot.y,
            self.rho_dot.z,
        ])
    }

    pub fn from_vector(epoch: f64, y: &State6) -> Self {
        Self::new(Vec3::new(y[0], y[1], y[2]), Vec3::new(y[3], y[4], y[5]), epoch)
    }

    /// Rescales position by `length` and velocity by `length / time`.
    pub fn scaled(&self, length: f64, time: f64) -> Self {
        Self::new(self.rho * length, self.rho_dot * (length / time), self.epoch * time)
    }
}

/// Term groups of the relative dynamics; tests switch them off individually.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TermMask {
    pub rotational: bool,
    pub lunar: bool,
    pub terrestrial: bool,
}

impl Default for TermMask {
    fn default() -> Self {
        Self {
            rotational: true,
            lunar: true,
            terrestrial: true,
        }
    }
}

impl TermMask {
    pub const INPUT_ONLY: TermMask = TermMask {
        rotational: false,
        lunar: false,
        terrestrial: false,
    };
}

/// Frame rate, target position and primaries captured at one epoch.
///
/// Positions are in LVLH axes; only the differences `r_ot - r_om` and
/// `r_ot - r_oe` enter the dynamics. Gravitational parameters are stored
/// explicitly so the context can be rescaled into other unit systems.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrozenContext {
    pub omega_il: Vec3,
    pub r_ot: Vec3,
    pub r_om: Vec3,
    pub r_oe: Vec3,
    pub gm_moon: f64,
    pub gm_earth: f64,
    pub mask: TermMask,
}

impl FrozenContext {
    pub fn capture(sys: &Cr3bpSystem, target: &SynodicState, kin: &LvlhKinematics) -> Self {
        let p = sys.primaries();
        Self {
            omega_il: kin.omega_il,
            r_ot: kin.basis * target.r,
            r_om: kin.basis * p.r_om,
            r_oe: kin.basis * p.r_oe,
            gm_moon: sys.mu(),
            gm_earth: 1.0 - sys.mu(),
            mask: TermMask::default(),
        }
    }

    /// Same context expressed with `length` and `time` units multiplied in
    /// (e.g. meters and seconds per normalized unit).
    pub fn rescaled(&self, length: f64, time: f64) -> Self {
        let gm = length.powi(3) / (time * time);
        Self {
            omega_il: self.omega_il / time,
            r_ot: self.r_ot * length,
            r_om: self.r_om * length,
            r_oe: self.r_oe * length,
            gm_moon: self.gm_moon * gm,
            gm_earth: self.gm_earth * gm,
            mask: self.mask,
        }
    }

    pub fn moon_offset(&self) -> Vec3 {
        self.r_ot - self.r_om
    }

    pub fn earth_offset(&self) -> Vec3 {
        self.r_ot - self.r_oe
    }

    /// Sum of the lunar and terrestrial differential gravity terms.
    pub fn gravity_differential(&self, rho: &Vec3) -> Result<Vec3> {
        let mut acc = Vec3::zeros();
        if self.mask.lunar {
            acc += differential_gravity(rho, &self.moon_offset(), self.gm_moon, Primary::Moon)?;
        }
        if self.mask.terrestrial {
            acc += differential_gravity(rho, &self.earth_offset(), self.gm_earth, Primary::Earth)?;
        }
        Ok(acc)
    }

    /// Jacobian of [`Self::gravity_differential`] with respect to `rho`.
    pub fn gravity_gradient(&self, rho: &Vec3) -> Result<Matrix3<f64>> {
        let mut g = Matrix3::zeros();
        if self.mask.lunar {
            g += tidal_matrix(&(rho + self.moon_offset()), self.gm_moon, Primary::Moon)?;
        }
        if self.mask.terrestrial {
            g += tidal_matrix(&(rho + self.earth_offset()), self.gm_earth, Primary::Earth)?;
        }
        Ok(-g)
    }
}

fn check_distance(d: f64, body: Primary) -> Result<()> {
    if d < crate::cr3bp::SINGULAR_DISTANCE {
        Err(Error::SingularPosition { body, distance: d })
    } else {
        Ok(())
    }
}

/// `gm (d/|d|^3 - (rho + d)/|rho + d|^3)` for a target offset `d` from the body.
pub fn differential_gravity(rho: &Vec3, d: &Vec3, gm: f64, body: Primary) -> Result<Vec3> {
    let s = rho + d;
    let dn = d.norm();
    let sn = s.norm();
    check_distance(dn, body)?;
    check_distance(sn, body)?;
    Ok((d / dn.powi(3) - s / sn.powi(3)) * gm)
}

/// `gm (I - 3 s s^T / |s|^2) / |s|^3`.
pub fn tidal_matrix(s: &Vec3, gm: f64, body: Primary) -> Result<Matrix3<f64>> {
    let sn = s.norm();
    check_distance(sn, body)?;
    Ok((Matrix3::identity() - s * s.transpose() * (3.0 / (sn * sn))) * (gm / sn.powi(3)))
}

fn rotational_terms(rho: &Vec3, rho_dot: &Vec3, omega: &Vec3, omega_dot: Option<&Vec3>) -> Vec3 {
    let mut acc = -2.0 * omega.cross(rho_dot) - omega.cross(&omega.cross(rho));
    if let Some(wd) = omega_dot {
        acc -= wd.cross(rho);
    }
    acc
}

/// Full time-varying relative acceleration, LVLH components.
pub fn plant_accel(
    state: &RelativeState,
    kin: &LvlhKinematics,
    target: &SynodicState,
    u: &Vec3,
    sys: &Cr3bpSystem,
) -> Result<Vec3> {
    plant_accel_masked(state, kin, target, u, sys, TermMask::default())
}

pub fn plant_accel_masked(
    state: &RelativeState,
    kin: &LvlhKinematics,
    target: &SynodicState,
    u: &Vec3,
    sys: &Cr3bpSystem,
    mask: TermMask,
) -> Result<Vec3> {
    let mut ctx = FrozenContext::capture(sys, target, kin);
    ctx.mask = mask;
    let mut acc = ctx.gravity_differential(&state.rho)? + u;
    if mask.rotational {
        acc += rotational_terms(&state.rho, &state.rho_dot, &kin.omega_il, Some(&kin.omega_dot_il));
    }
    Ok(acc)
}

/// Frozen-coefficient prediction model (no angular acceleration term).
pub fn prediction_accel(state: &RelativeState, ctx: &FrozenContext, u: &Vec3) -> Result<Vec3> {
    prediction_accel_parts(&state.rho, &state.rho_dot, ctx, u)
}

pub(crate) fn prediction_accel_parts(rho: &Vec3, rho_dot: &Vec3, ctx: &FrozenContext, u: &Vec3) -> Result<Vec3> {
    let mut acc = ctx.gravity_differential(rho)? + u;
    if ctx.mask.rotational {
        acc += rotational_terms(rho, rho_dot, &ctx.omega_il, None);
    }
    Ok(acc)
}

/// Relative state of an absolute chaser w.r.t. an absolute target, from the
/// LVLH basis alone (basis derivative by Richardson central differences).
pub struct AbsoluteToRelative<'a> {
    sys: &'a Cr3bpSystem,
    step: f64,
}

impl<'a> AbsoluteToRelative<'a> {
    pub fn new(sys: &'a Cr3bpSystem) -> Self {
        Self { sys, step: 1e-3 }
    }

    fn basis_at(&self, target: &SynodicState, dt: f64) -> Result<Matrix3<f64>> {
        if dt == 0.0 {
            return lvlh_basis(target, self.sys);
        }
        let settings = IntegratorSettings::with_tolerance(1e-14);
        let end = self.sys.propagate(target, dt, &settings)?.final_state();
        lvlh_basis(&SynodicState::from_vector(target.t + dt, &end), self.sys)
    }

    /// Basis and its first two time derivatives.
    pub fn basis_derivatives(&self, target: &SynodicState) -> Result<(Matrix3<f64>, Matrix3<f64>, Matrix3<f64>)> {
        let h = self.step;
        let b0 = self.basis_at(target, 0.0)?;
        let (bp, bm) = (self.basis_at(target, h)?, self.basis_at(target, -h)?);
        let (bp2, bm2) = (self.basis_at(target, h / 2.0)?, self.basis_at(target, -h / 2.0)?);
        let d1c = (bp - bm) / (2.0 * h);
        let d1f = (bp2 - bm2) / h;
        let d2c = (bp - b0 * 2.0 + bm) / (h * h);
        let d2f = (bp2 - b0 * 2.0 + bm2) / (h * h / 4.0);
        Ok((b0, (d1f * 4.0 - d1c) / 3.0, (d2f * 4.0 - d2c) / 3.0))
    }

    pub fn relative_state(&self, chaser: &SynodicState, target: &SynodicState) -> Result<RelativeState> {
        let (b, bd, _) = self.basis_derivatives(target)?;
        let dr = chaser.r - target.r;
        let dv = chaser.v - target.v;
        Ok(RelativeState::new(b * dr, bd * dr + b * dv, target.t))
    }

    /// Absolute chaser state placing it at `rel` from `target`.
    pub fn chaser_state(&self, rel: &RelativeState, target: &SynodicState) -> Result<SynodicState> {
        let (b, bd, _) = self.basis_derivatives(target)?;
        let dr = b.transpose() * rel.rho;
        let dv = b.transpose() * (rel.rho_dot - bd * dr);
        Ok(SynodicState::new(target.r + dr, target.v + dv, target.t))
    }
}

/// Relative acceleration obtained by differencing the two absolute motions
/// and differentiating the LVLH projection twice. `u` is in LVLH axes.
pub fn oracle_relative_accel(
    chaser_abs: &SynodicState,
    target_abs: &SynodicState,
    u: &Vec3,
    sys: &Cr3bpSystem,
) -> Result<(Vec3, Vec3)> {
    let conv = AbsoluteToRelative::new(sys);
    let (b, bd, bdd) = conv.basis_derivatives(target_abs)?;
    let u_syn = b.transpose() * u;
    let a_c = sys.synodic_accel(chaser_abs)? + u_syn;
    let a_t = sys.synodic_accel(target_abs)?;
    let dr = chaser_abs.r - target_abs.r;
    let dv = chaser_abs.v - target_abs.v;
    let da = a_c - a_t;
    let rho_dot = bd * dr + b * dv;
    let rho_ddot = bdd * dr + bd * dv * 2.0 + b * da;
    Ok((rho_dot, rho_ddot))
}

/// Zero-order-hold control: `(start epoch, u)` pairs sorted by epoch.
#[derive(Debug, Clone, Default)]
pub struct PiecewiseControl {
    pieces: Vec<(f64, Vec3)>,
}

impl PiecewiseControl {
    pub fn constant(start: f64, u: Vec3) -> Self {
        Self {
            pieces: vec![(start, u)],
        }
    }

    pub fn push(&mut self, start: f64, u: Vec3) {
        debug_assert!(self.pieces.last().is_none_or(|p| p.0 < start));
        self.pieces.push((start, u));
    }

    pub fn at(&self, t: f64) -> Vec3 {
        let idx = self.pieces.partition_point(|p| p.0 <= t);
        if idx == 0 {
            self.pieces.first().map_or(Vec3::zeros(), |p| p.1)
        } else {
            self.pieces[idx - 1].1
        }
    }

    fn breakpoints(&self) -> impl Iterator<Item = f64> + '_ {
        self.pieces.iter().map(|p| p.0)
    }
}

/// Which relative model to integrate.
#[derive(Debug, Clone, Copy)]
pub enum RelativeModel<'a> {
    Plant {
        orbit: &'a PeriodicOrbit,
        sys: &'a Cr3bpSystem,
        mask: TermMask,
    },
    Prediction {
        ctx: FrozenContext,
    },
}

impl RelativeModel<'_> {
    fn derivative(&self, t: f64, y: &State6, u: &Vec3) -> Result<State6> {
        let state = RelativeState::from_vector(t, y);
        let acc = match self {
            RelativeModel::Plant { orbit, sys, mask } => {
                let target = orbit.state_at(t)?;
                let kin = LvlhKinematics::at_state(&target, sys)?;
                plant_accel_masked(&state, &kin, &target, u, sys, *mask)?
            }
            RelativeModel::Prediction { ctx } => prediction_accel(&state, ctx, u)?,
        };
        Ok(SVector::from_column_slice(&[y[3], y[4], y[5], acc.x, acc.y, acc.z]))
    }
}

/// Piecewise integration, restarting at every control breakpoint.
#[derive(Debug, Clone)]
pub struct RelativeTrajectory {
    pieces: Vec<Trajectory<6>>,
}

impl RelativeTrajectory {
    pub fn final_state(&self) -> RelativeState {
        let last = self.pieces.last().expect("non-empty trajectory");
        RelativeState::from_vector(last.end(), &last.final_state())
    }

    pub fn state_at(&self, t: f64) -> Result<RelativeState> {
        let idx = self.pieces.partition_point(|p| p.end() < t).min(self.pieces.len() - 1);
        Ok(RelativeState::from_vector(t, &self.pieces[idx].state_at(t)?))
    }
}

pub fn propagate_relative(
    model: &RelativeModel<'_>,
    x0: &RelativeState,
    control: &PiecewiseControl,
    duration: f64,
    settings: &IntegratorSettings,
) -> Result<RelativeTrajectory> {
    let t0 = x0.epoch;
    let tf = t0 + duration;
    let mut cuts: Vec<f64> = control.breakpoints().filter(|&b| b > t0 && b < tf).collect();
    cuts.push(tf);
    let mut pieces = Vec::with_capacity(cuts.len());
    let mut t = t0;
    let mut y = x0.to_vector();
    for cut in cuts {
        let u = control.at(t);
        let tr = integrate::integrate(|tt, yy: &State6| model.derivative(tt, yy, &u), t, y, cut, settings)?;
        y = tr.final_state();
        t = cut;
        pieces.push(tr);
    }
    Ok(RelativeTrajectory { pieces })
}
