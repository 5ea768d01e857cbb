//! Reference computations shared by the integration tests. Apart from the
//! Hamiltonian being differenced, nothing here calls into the library's
//! relative-motion or control code; quantities are rebuilt from their
//! definitions.
#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::{DVector, Matrix3, SVector};

use lunar_rdv::bvp::{continuation_solve, BvpSettings, FnTpbvp, Guess, TpbvpSolution};
use lunar_rdv::cr3bp::{Cr3bpSystem, SynodicState, Vec3};
use lunar_rdv::integrate::{integrate, IntegratorSettings};
use lunar_rdv::pmp::{hamiltonian, CostWeights, Costate};
use lunar_rdv::relative::{FrozenContext, RelativeState};

/// Basis rows (along-track, anti-momentum, nadir-opposite) from the
/// Moon-relative target position and synodic velocity.
pub fn basis(target: &SynodicState, sys: &Cr3bpSystem) -> Matrix3<f64> {
    let r = target.r - sys.moon();
    let v = target.v;
    let k = -r.normalize();
    let j = -r.cross(&v).normalize();
    let i = j.cross(&k);
    Matrix3::from_rows(&[i.transpose(), j.transpose(), k.transpose()])
}

fn propagate(sys: &Cr3bpSystem, s: &SynodicState, dt: f64) -> SynodicState {
    if dt == 0.0 {
        return *s;
    }
    let y = sys
        .propagate(s, dt, &IntegratorSettings::with_tolerance(1e-14))
        .unwrap()
        .final_state();
    SynodicState::from_vector(s.t + dt, &y)
}

/// Basis and its first two derivatives by five-point central differences.
pub fn basis_fd(target: &SynodicState, sys: &Cr3bpSystem, h: f64) -> (Matrix3<f64>, Matrix3<f64>, Matrix3<f64>) {
    let b = |k: f64| basis(&propagate(sys, target, k * h), sys);
    let (m2, m1, z, p1, p2) = (b(-2.0), b(-1.0), b(0.0), b(1.0), b(2.0));
    let d1 = (m2 - m1 * 8.0 + p1 * 8.0 - p2) / (12.0 * h);
    let d2 = (-m2 + m1 * 16.0 - z * 30.0 + p1 * 16.0 - p2) / (12.0 * h * h);
    (z, d1, d2)
}

/// Chaser absolute state at LVLH offset `(rho, rho_dot)` from the target.
pub fn chaser_from_relative(
    target: &SynodicState,
    rho: &Vec3,
    rho_dot: &Vec3,
    b: &Matrix3<f64>,
    bd: &Matrix3<f64>,
) -> SynodicState {
    let dr = b.transpose() * rho;
    let dv = b.transpose() * (rho_dot - bd * dr);
    SynodicState::new(target.r + dr, target.v + dv, target.t)
}

/// `d²/dt² [B (r_c − r_t)]` with the chaser thrusting `u` (LVLH axes).
pub fn relative_accel(
    sys: &Cr3bpSystem,
    target: &SynodicState,
    chaser: &SynodicState,
    u: &Vec3,
    derivs: &(Matrix3<f64>, Matrix3<f64>, Matrix3<f64>),
) -> Vec3 {
    let (b, bd, bdd) = derivs;
    let dr = chaser.r - target.r;
    let dv = chaser.v - target.v;
    let da = sys.synodic_accel(chaser).unwrap() + b.transpose() * u - sys.synodic_accel(target).unwrap();
    bdd * dr + bd * dv * 2.0 + b * da
}

/// Target and chaser integrated together in synodic coordinates; the
/// chaser thrust `u` is fixed in LVLH axes.
pub fn propagate_pair(
    sys: &Cr3bpSystem,
    target: &SynodicState,
    chaser: &SynodicState,
    u: Vec3,
    duration: f64,
) -> (SynodicState, SynodicState) {
    let mut y0 = SVector::<f64, 12>::zeros();
    y0.fixed_rows_mut::<6>(0).copy_from(&target.to_vector());
    y0.fixed_rows_mut::<6>(6).copy_from(&chaser.to_vector());
    let settings = IntegratorSettings::with_tolerance(1e-14);
    let tr = integrate(
        |t, y: &SVector<f64, 12>| {
            let st = SynodicState::from_vector(t, &y.fixed_rows::<6>(0).into_owned());
            let sc = SynodicState::from_vector(t, &y.fixed_rows::<6>(6).into_owned());
            let at = sys.synodic_accel(&st)?;
            let ac = sys.synodic_accel(&sc)? + basis(&st, sys).transpose() * u;
            let mut d = SVector::<f64, 12>::zeros();
            d.fixed_rows_mut::<3>(0).copy_from(&st.v);
            d.fixed_rows_mut::<3>(3).copy_from(&at);
            d.fixed_rows_mut::<3>(6).copy_from(&sc.v);
            d.fixed_rows_mut::<3>(9).copy_from(&ac);
            Ok(d)
        },
        target.t,
        y0,
        target.t + duration,
        &settings,
    )
    .unwrap();
    let y = tr.final_state();
    let tf = target.t + duration;
    (
        SynodicState::from_vector(tf, &y.fixed_rows::<6>(0).into_owned()),
        SynodicState::from_vector(tf, &y.fixed_rows::<6>(6).into_owned()),
    )
}

/// Rest-to-rest transfer of length `d` in time `t` with `|u| ≤ 1` and
/// minimum `∫|u|`: full thrust on `[0, t1]`, coast, full brake on `[t − t1, t]`.
pub fn bang_off_bang_switches(d: f64, t: f64) -> (f64, f64) {
    assert!(4.0 * d <= t * t, "transfer infeasible");
    let t1 = 0.5 * (t - (t * t - 4.0 * d).sqrt());
    (t1, t - t1)
}

/// Smoothed minimum-fuel double integrator `x'' = u` from `(d, 0)` to
/// `(0, 0)` on `[0, t]`, state `[x, v, λx, λv]`.
pub fn double_integrator(d: f64, t: f64, epsilon: f64) -> FnTpbvp {
    const DELTA: f64 = 1e-12;
    FnTpbvp::new(
        4,
        2,
        (0.0, t),
        move |_t, y, dy| {
            let n = (y[3] * y[3] + DELTA).sqrt();
            let mag = 0.5 * (1.0 + ((n - 1.0) / epsilon).tanh());
            dy[0] = y[1];
            dy[1] = -y[3] / n * mag;
            dy[2] = 0.0;
            dy[3] = -y[2];
        },
        move |ya, r| {
            r[0] = ya[0] - d;
            r[1] = ya[1];
        },
        |yb, r| {
            r[0] = yb[0];
            r[1] = yb[1];
        },
    )
}

pub fn solve_double_integrator(d: f64, t: f64, schedule: &[f64]) -> TpbvpSolution {
    // Straight-line state; a consistent linear costate just over the threshold at both ends.
    let guess = Guess::from_fn((0.0, t), 41, |s| {
        DVector::from_vec(vec![d * (1.0 - s / t), -d / t, 2.4 / t, 1.2 - 2.4 * s / t])
    });
    let settings = BvpSettings {
        tolerance: 1e-9,
        ..BvpSettings::default()
    };
    continuation_solve(|eps| double_integrator(d, t, eps), &guess, schedule, &settings, 8).unwrap()
}

/// Instants where `|λv| = 1`, located by bisection on the dense solution.
pub fn costate_switches(sol: &TpbvpSolution, t: f64) -> Vec<f64> {
    let g = |s: f64| sol.eval(s)[3].abs() - 1.0;
    let n = 4000;
    let mut out = Vec::new();
    let mut a = 0.0;
    let mut ga = g(a);
    for i in 1..=n {
        let b = t * i as f64 / n as f64;
        let gb = g(b);
        if ga.signum() != gb.signum() {
            let (mut lo, mut hi) = (a, b);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if g(mid).signum() == ga.signum() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            out.push(0.5 * (lo + hi));
        }
        a = b;
        ga = gb;
    }
    out
}

/// Random point on a sphere shell, from two uniforms.
pub fn direction(a: f64, b: f64) -> Vec3 {
    let z = 2.0 * a - 1.0;
    let phi = 2.0 * PI * b;
    let s = (1.0 - z * z).sqrt();
    Vec3::new(s * phi.cos(), s * phi.sin(), z)
}

/// `−∂H/∂x` by central differences, one state component at a time, with
/// the roundoff level of each quotient. H is quadratic in velocity, so a
/// large step is exact there; gravity varies on the scale of the orbit
/// radius, so a metre step is far inside the quadratic regime.
pub fn hamiltonian_gradient_fd(
    x: &RelativeState,
    u: &Vec3,
    lam: &Costate,
    ctx: &FrozenContext,
    w: &CostWeights,
    r: &RelativeState,
) -> [(f64, f64); 6] {
    let mut out = [(0.0, 0.0); 6];
    let y = x.to_vector();
    for i in 0..6 {
        let h = if i < 3 { 1.0 } else { 1e-2 };
        let mut yp = y;
        let mut ym = y;
        yp[i] += h;
        ym[i] -= h;
        let hp = hamiltonian(&RelativeState::from_vector(0.0, &yp), u, lam, ctx, w, r).unwrap();
        let hm = hamiltonian(&RelativeState::from_vector(0.0, &ym), u, lam, ctx, w, r).unwrap();
        out[i] = (-(hp - hm) / (2.0 * h), 8.0 * f64::EPSILON * hp.abs().max(hm.abs()) / h);
    }
    out
}
