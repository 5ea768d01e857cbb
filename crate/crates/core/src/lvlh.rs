//! Target-centered LVLH frame and its angular kinematics.
//!
//! Basis rows are (V-bar, H-bar, R-bar) expressed in synodic axes:
//! `k = -r/|r|`, `j = -(r x v)/|r x v|`, `i = j x k`, where `r` and `v` are
//! the target's Moon-relative position and synodic-frame velocity.

use nalgebra::Matrix3;

use crate::cr3bp::{Cr3bpSystem, SynodicState, Vec3};
use crate::error::{Error, Result};
use crate::orbit::PeriodicOrbit;

/// Rows below this magnitude of `r x v` are treated as rectilinear motion.
pub const DEGENERATE_MOMENTUM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LvlhKinematics {
    /// Rows are the LVLH unit vectors in synodic components.
    pub basis: Matrix3<f64>,
    /// Angular velocity of LVLH w.r.t. inertial space, LVLH components.
    pub omega_il: Vec3,
    pub omega_dot_il: Vec3,
    pub epoch: f64,
}

pub fn skew(w: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

fn unskew(m: &Matrix3<f64>) -> Vec3 {
    Vec3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

fn moon_relative(target: &SynodicState, sys: &Cr3bpSystem) -> (Vec3, Vec3) {
    (target.r - sys.moon(), target.v)
}

pub fn lvlh_basis(target: &SynodicState, sys: &Cr3bpSystem) -> Result<Matrix3<f64>> {
    let (r, v) = moon_relative(target, sys);
    basis_from(&r, &v)
}

fn basis_from(r: &Vec3, v: &Vec3) -> Result<Matrix3<f64>> {
    let h = r.cross(v);
    let hn = h.norm();
    if hn < DEGENERATE_MOMENTUM || r.norm() == 0.0 {
        return Err(Error::DegenerateGeometry(hn));
    }
    let j = -h / hn;
    let k = -r / r.norm();
    let i = j.cross(&k);
    Ok(Matrix3::from_rows(&[i.transpose(), j.transpose(), k.transpose()]))
}

/// Basis and its time derivative as seen in the synodic frame.
pub fn basis_and_rate(target: &SynodicState, sys: &Cr3bpSystem) -> Result<(Matrix3<f64>, Matrix3<f64>)> {
    let (b, bd, _) = basis_rates(target, sys)?;
    Ok((b, bd))
}

/// First and second time derivatives of a unit vector `w/|w|`.
fn unit_rates(w: &Vec3, w_dot: &Vec3, w_ddot: &Vec3) -> (Vec3, Vec3) {
    let wn = w.norm();
    let u = w / wn;
    let u_dot = (w_dot - u * u.dot(w_dot)) / wn;
    let u_ddot =
        (w_ddot - u * u.dot(w_ddot) - u_dot * u.dot(w_dot) - u * u_dot.dot(w_dot)) / wn - u_dot * (u.dot(w_dot) / wn);
    (u_dot, u_ddot)
}

/// Basis with its first and second synodic-frame derivatives, using the
/// CR3BP acceleration and jerk of the target.
pub fn basis_rates(target: &SynodicState, sys: &Cr3bpSystem) -> Result<(Matrix3<f64>, Matrix3<f64>, Matrix3<f64>)> {
    let (r, v) = moon_relative(target, sys);
    let basis = basis_from(&r, &v)?;
    let a = sys.synodic_accel(target)?;
    let jerk = Vec3::new(2.0 * a.y, -2.0 * a.x, 0.0) - sys.potential_hessian(&target.r)? * v;

    let h = r.cross(&v);
    let h_dot = r.cross(&a);
    let h_ddot = v.cross(&a) + r.cross(&jerk);
    let (jd, jdd) = unit_rates(&h, &h_dot, &h_ddot);
    let (kd, kdd) = unit_rates(&r, &v, &a);
    let (j_dot, j_ddot) = (-jd, -jdd);
    let (k_dot, k_ddot) = (-kd, -kdd);
    let j = basis.row(1).transpose();
    let k = basis.row(2).transpose();
    let i_dot = j_dot.cross(&k) + j.cross(&k_dot);
    let i_ddot = j_ddot.cross(&k) + j_dot.cross(&k_dot) * 2.0 + j.cross(&k_ddot);
    let rate = Matrix3::from_rows(&[i_dot.transpose(), j_dot.transpose(), k_dot.transpose()]);
    let accel = Matrix3::from_rows(&[i_ddot.transpose(), j_ddot.transpose(), k_ddot.transpose()]);
    Ok((basis, rate, accel))
}

/// Angular velocity of LVLH w.r.t. the synodic frame, LVLH components.
pub fn omega_relative_to_synodic(basis: &Matrix3<f64>, rate: &Matrix3<f64>) -> Vec3 {
    unskew(&(-rate * basis.transpose()))
}

/// `Omega_IL` in LVLH components: synodic rotation plus LVLH-vs-synodic rotation.
pub fn omega_il(target: &SynodicState, sys: &Cr3bpSystem) -> Result<(Matrix3<f64>, Vec3)> {
    let (basis, rate) = basis_and_rate(target, sys)?;
    let frame_rate = basis * Vec3::z();
    Ok((basis, omega_relative_to_synodic(&basis, &rate) + frame_rate))
}

impl LvlhKinematics {
    pub fn at_state(target: &SynodicState, sys: &Cr3bpSystem) -> Result<Self> {
        let (b, bd, bdd) = basis_rates(target, sys)?;
        let omega = omega_relative_to_synodic(&b, &bd) + b * Vec3::z();
        // d/dt of unskew(-Bd B^T); the symmetric Bd Bd^T part drops out.
        let omega_dot = unskew(&(-bdd * b.transpose())) + bd * Vec3::z();
        Ok(Self {
            basis: b,
            omega_il: omega,
            omega_dot_il: omega_dot,
            epoch: target.t,
        })
    }

    pub fn to_lvlh(&self, synodic: &Vec3) -> Vec3 {
        self.basis * synodic
    }

    pub fn to_synodic(&self, lvlh: &Vec3) -> Vec3 {
        self.basis.transpose() * lvlh
    }
}

pub fn lvlh_kinematics(orbit: &PeriodicOrbit, epoch: f64, sys: &Cr3bpSystem) -> Result<LvlhKinematics> {
    let target = orbit.state_at(epoch)?;
    LvlhKinematics::at_state(&target, sys)
}
