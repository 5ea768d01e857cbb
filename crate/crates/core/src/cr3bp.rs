//! Normalized circular restricted three-body dynamics in the synodic frame.
//!
//! Lengths are in units of the primaries' separation, times in units of
//! `period / 2π`, so the frame rotates at unit rate. The Earth sits at
//! `[-mu, 0, 0]` and the Moon at `[1 - mu, 0, 0]`.

use std::f64::consts::PI;
use std::str::FromStr;

use nalgebra::{SVector, Vector3};

use crate::error::{Error, Primary, Result};
use crate::integrate::{self, IntegratorSettings, Trajectory};

pub type Vec3 = Vector3<f64>;
pub type State6 = SVector<f64, 6>;

/// Distance below which a position is treated as coincident with a primary.
pub const SINGULAR_DISTANCE: f64 = 1e-12;

/// Earth-Moon mass ratio used by the shipped scenario.
pub const EARTH_MOON_MU: f64 = 0.01215;
/// Earth-Moon distance in km.
pub const EARTH_MOON_LENGTH_KM: f64 = 384_400.0;
/// Earth-Moon synodic period in seconds.
pub const EARTH_MOON_PERIOD_S: f64 = 2_360_591.424;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cr3bpSystem {
    mu: f64,
    length_unit_km: f64,
    period_s: f64,
    time_unit_s: f64,
}

impl Cr3bpSystem {
    pub fn new(mu: f64, length_unit_km: f64, period_s: f64) -> Result<Self> {
        if !(mu > 0.0 && mu < 0.5) {
            return Err(Error::InvalidSystem(format!("mass ratio {mu} not in (0, 0.5)")));
        }
        if !(length_unit_km > 0.0 && length_unit_km.is_finite()) {
            return Err(Error::InvalidSystem(format!(
                "length unit {length_unit_km} km must be positive"
            )));
        }
        if !(period_s > 0.0 && period_s.is_finite()) {
            return Err(Error::InvalidSystem(format!("period {period_s} s must be positive")));
        }
        Ok(Self {
            mu,
            length_unit_km,
            period_s,
            time_unit_s: period_s / (2.0 * PI),
        })
    }

    pub fn earth_moon() -> Self {
        Self::new(EARTH_MOON_MU, EARTH_MOON_LENGTH_KM, EARTH_MOON_PERIOD_S).expect("Earth-Moon constants are valid")
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// km per normalized length.
    pub fn length_unit_km(&self) -> f64 {
        self.length_unit_km
    }

    /// Seconds per synodic revolution.
    pub fn period_s(&self) -> f64 {
        self.period_s
    }

    /// Seconds per normalized time unit.
    pub fn time_unit_s(&self) -> f64 {
        self.time_unit_s
    }

    /// Meters per normalized length.
    pub fn length_unit_m(&self) -> f64 {
        self.length_unit_km * 1e3
    }

    pub fn primaries(&self) -> BodyPositions {
        BodyPositions {
            r_oe: Vec3::new(-self.mu, 0.0, 0.0),
            r_om: Vec3::new(1.0 - self.mu, 0.0, 0.0),
        }
    }

    pub fn moon(&self) -> Vec3 {
        Vec3::new(1.0 - self.mu, 0.0, 0.0)
    }

    pub fn earth(&self) -> Vec3 {
        Vec3::new(-self.mu, 0.0, 0.0)
    }

    /// Distances to Earth and Moon, failing if either is below [`SINGULAR_DISTANCE`].
    fn primary_offsets(&self, r: &Vec3) -> Result<(Vec3, f64, Vec3, f64)> {
        let re = r - self.earth();
        let rm = r - self.moon();
        let de = re.norm();
        let dm = rm.norm();
        if de < SINGULAR_DISTANCE {
            return Err(Error::SingularPosition {
                body: Primary::Earth,
                distance: de,
            });
        }
        if dm < SINGULAR_DISTANCE {
            return Err(Error::SingularPosition {
                body: Primary::Moon,
                distance: dm,
            });
        }
        Ok((re, de, rm, dm))
    }

    pub fn effective_potential(&self, r: &Vec3) -> Result<f64> {
        let (_, de, _, dm) = self.primary_offsets(r)?;
        let mu = self.mu;
        Ok(-(r.x * r.x + r.y * r.y) / 2.0 - (1.0 - mu) / de - mu / dm - mu * (1.0 - mu) / 2.0)
    }

    /// Analytic gradient of [`Self::effective_potential`].
    pub fn potential_gradient(&self, r: &Vec3) -> Result<Vec3> {
        let (re, de, rm, dm) = self.primary_offsets(r)?;
        let mu = self.mu;
        let grav = re * ((1.0 - mu) / de.powi(3)) + rm * (mu / dm.powi(3));
        Ok(Vec3::new(-r.x, -r.y, 0.0) + grav)
    }

    /// Hessian of the effective potential; used by the variational equations.
    pub fn potential_hessian(&self, r: &Vec3) -> Result<nalgebra::Matrix3<f64>> {
        let (re, de, rm, dm) = self.primary_offsets(r)?;
        let mu = self.mu;
        let eye = nalgebra::Matrix3::identity();
        let term =
            |d: &Vec3, dist: f64, gm: f64| (eye - d * d.transpose() * (3.0 / (dist * dist))) * (gm / dist.powi(3));
        let mut h = term(&re, de, 1.0 - mu) + term(&rm, dm, mu);
        h[(0, 0)] -= 1.0;
        h[(1, 1)] -= 1.0;
        Ok(h)
    }

    pub fn synodic_accel(&self, s: &SynodicState) -> Result<Vec3> {
        self.accel(&s.r, &s.v)
    }

    pub fn accel(&self, r: &Vec3, v: &Vec3) -> Result<Vec3> {
        let g = self.potential_gradient(r)?;
        Ok(Vec3::new(2.0 * v.y - g.x, -2.0 * v.x - g.y, -g.z))
    }

    pub fn jacobi_integral(&self, s: &SynodicState) -> Result<f64> {
        let u = self.effective_potential(&s.r)?;
        Ok(-(s.v.norm_squared() + 2.0 * u))
    }

    /// Equations of motion in first-order form `[r, v] -> [v, a]`.
    pub fn rhs(&self, y: &State6) -> Result<State6> {
        let r = Vec3::new(y[0], y[1], y[2]);
        let v = Vec3::new(y[3], y[4], y[5]);
        let a = self.accel(&r, &v)?;
        Ok(State6::from_column_slice(&[v.x, v.y, v.z, a.x, a.y, a.z]))
    }

    /// The five equilibrium points, collinear ones by bracketed bisection then Newton.
    pub fn lagrange_points(&self) -> Result<[Vec3; 5]> {
        let mu = self.mu;
        // Shrink brackets away from the singular primaries.
        let gap = 1e-9;
        let l1 = self.collinear_root("L1", -mu + gap, 1.0 - mu - gap)?;
        let l2 = self.collinear_root("L2", 1.0 - mu + gap, 2.0)?;
        let l3 = self.collinear_root("L3", -2.0, -mu - gap)?;
        let h = 3f64.sqrt() / 2.0;
        Ok([
            Vec3::new(l1, 0.0, 0.0),
            Vec3::new(l2, 0.0, 0.0),
            Vec3::new(l3, 0.0, 0.0),
            Vec3::new(0.5 - mu, h, 0.0),
            Vec3::new(0.5 - mu, -h, 0.0),
        ])
    }

    fn axis_gradient(&self, x: f64) -> f64 {
        let mu = self.mu;
        let a = x + mu;
        let b = x - 1.0 + mu;
        -x + (1.0 - mu) * a / a.abs().powi(3) + mu * b / b.abs().powi(3)
    }

    fn axis_curvature(&self, x: f64) -> f64 {
        let mu = self.mu;
        let a = (x + mu).abs();
        let b = (x - 1.0 + mu).abs();
        -1.0 - 2.0 * (1.0 - mu) / a.powi(3) - 2.0 * mu / b.powi(3)
    }

    fn collinear_root(&self, point: &'static str, lower: f64, upper: f64) -> Result<f64> {
        const TOL: f64 = 1e-12;
        const MAX_ITER: usize = 200;
        let (mut a, mut b) = (lower, upper);
        let (mut fa, fb) = (self.axis_gradient(a), self.axis_gradient(b));
        if fa.signum() == fb.signum() {
            return Err(Error::RootNotConverged {
                point,
                lower,
                upper,
                iterations: 0,
                residual: fa.abs().min(fb.abs()),
            });
        }
        let mut iterations = 0;
        while b - a > 1e-4 && iterations < MAX_ITER {
            let m = 0.5 * (a + b);
            let fm = self.axis_gradient(m);
            if fm.signum() == fa.signum() {
                a = m;
                fa = fm;
            } else {
                b = m;
            }
            iterations += 1;
        }
        let mut x = 0.5 * (a + b);
        while iterations < MAX_ITER {
            iterations += 1;
            let f = self.axis_gradient(x);
            let step = f / self.axis_curvature(x);
            let mut next = x - step;
            if !(next > a && next < b) {
                next = 0.5 * (a + b);
            }
            if self.axis_gradient(next).signum() == fa.signum() {
                a = next;
            } else {
                b = next;
            }
            let moved = (next - x).abs();
            x = next;
            if moved < TOL {
                return Ok(x);
            }
        }
        Err(Error::RootNotConverged {
            point,
            lower: a,
            upper: b,
            iterations,
            residual: self.axis_gradient(x).abs(),
        })
    }

    /// Propagates the uncontrolled dynamics; `duration` may be negative.
    pub fn propagate(&self, s0: &SynodicState, duration: f64, settings: &IntegratorSettings) -> Result<Trajectory<6>> {
        integrate::integrate(
            |_t, y: &State6| self.rhs(y),
            s0.t,
            s0.to_vector(),
            s0.t + duration,
            settings,
        )
    }

    pub fn to_si(&self, value: f64, kind: QuantityKind) -> f64 {
        value * self.si_factor(kind)
    }

    pub fn from_si(&self, value: f64, kind: QuantityKind) -> f64 {
        value / self.si_factor(kind)
    }

    /// SI units: m, s, m/s, m/s^2.
    pub fn si_factor(&self, kind: QuantityKind) -> f64 {
        let l = self.length_unit_m();
        let t = self.time_unit_s;
        match kind {
            QuantityKind::Length => l,
            QuantityKind::Time => t,
            QuantityKind::Velocity => l / t,
            QuantityKind::Acceleration => l / (t * t),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantityKind {
    Length,
    Time,
    Velocity,
    Acceleration,
}

impl FromStr for QuantityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "length" => Ok(Self::Length),
            "time" => Ok(Self::Time),
            "velocity" => Ok(Self::Velocity),
            "acceleration" => Ok(Self::Acceleration),
            other => Err(Error::UnknownKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyPositions {
    pub r_oe: Vec3,
    pub r_om: Vec3,
}

/// Position and velocity in the normalized synodic frame at epoch `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynodicState {
    pub r: Vec3,
    pub v: Vec3,
    pub t: f64,
}

impl SynodicState {
    pub fn new(r: Vec3, v: Vec3, t: f64) -> Self {
        Self { r, v, t }
    }

    pub fn from_vector(t: f64, y: &State6) -> Self {
        Self {
            r: Vec3::new(y[0], y[1], y[2]),
            v: Vec3::new(y[3], y[4], y[5]),
            t,
        }
    }

    pub fn to_vector(&self) -> State6 {
        State6::from_column_slice(&[self.r.x, self.r.y, self.r.z, self.v.x, self.v.y, self.v.z])
    }

    pub fn is_finite(&self) -> bool {
        self.r.iter().chain(self.v.iter()).all(|c| c.is_finite()) && self.t.is_finite()
    }
}
