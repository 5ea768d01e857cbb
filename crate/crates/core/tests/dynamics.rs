mod common;

use std::sync::OnceLock;

use proptest::prelude::*;

use lunar_rdv::cr3bp::{Cr3bpSystem, SynodicState, Vec3};
use lunar_rdv::integrate::IntegratorSettings;
use lunar_rdv::lvlh::{lvlh_basis, LvlhKinematics};
use lunar_rdv::orbit::{default_nrho, PeriodicOrbit};
use lunar_rdv::relative::{
    plant_accel, prediction_accel, propagate_relative, FrozenContext, PiecewiseControl, RelativeModel, RelativeState,
    TermMask,
};

fn setup() -> &'static (Cr3bpSystem, PeriodicOrbit) {
    static CELL: OnceLock<(Cr3bpSystem, PeriodicOrbit)> = OnceLock::new();
    CELL.get_or_init(|| {
        let sys = Cr3bpSystem::earth_moon();
        let orbit = default_nrho(&sys).unwrap();
        (sys, orbit)
    })
}

/// Difference step scaled to the local orbital timescale.
fn fd_step(target: &SynodicState, sys: &Cr3bpSystem) -> f64 {
    3e-3 * (target.r - sys.moon()).norm() / target.v.norm()
}

#[test]
fn basis_is_orthonormal_right_handed() {
    let (sys, orbit) = setup();
    for k in 0..50 {
        let target = orbit.state_at(orbit.period() * k as f64 / 50.0).unwrap();
        let b = lvlh_basis(&target, sys).unwrap();
        assert!((b * b.transpose() - nalgebra::Matrix3::identity()).amax() < 1e-14);
        assert!((b.determinant() - 1.0).abs() < 1e-14);
        assert!((b - common::basis(&target, sys)).amax() < 1e-15);
    }
}

#[test]
fn angular_velocity_matches_basis_differences() {
    // Rotation of LVLH w.r.t. the synodic frame, plus the unit synodic rate.
    let (sys, orbit) = setup();
    for k in 0..40 {
        let target = orbit.state_at(orbit.period() * (k as f64 + 0.3) / 40.0).unwrap();
        let kin = LvlhKinematics::at_state(&target, sys).unwrap();
        let (b, bd, _) = common::basis_fd(&target, sys, fd_step(&target, sys));
        let w = -bd * b.transpose();
        let omega_rel = Vec3::new(w[(2, 1)], w[(0, 2)], w[(1, 0)]);
        let omega = omega_rel + b * Vec3::z();
        assert!(
            (kin.omega_il - omega).amax() < 1e-8 * omega.amax(),
            "epoch {}",
            target.t
        );
    }
}

#[test]
fn prediction_model_drops_only_angular_acceleration() {
    let (sys, orbit) = setup();
    let target = orbit.state_at(0.4).unwrap();
    let kin = LvlhKinematics::at_state(&target, sys).unwrap();
    let ctx = FrozenContext::capture(sys, &target, &kin);
    let x = RelativeState::new(Vec3::new(-1e-5, 2e-7, 3e-7), Vec3::new(1e-4, -2e-4, 5e-5), target.t);
    let u = Vec3::new(0.1, 0.0, -0.2);
    let full = plant_accel(&x, &kin, &target, &u, sys).unwrap();
    let frozen = prediction_accel(&x, &ctx, &u).unwrap();
    let euler = -kin.omega_dot_il.cross(&x.rho);
    assert!((full - frozen - euler).amax() < 1e-15);
}

#[test]
fn absolute_pair_propagation_matches_plant_over_one_hour() {
    let (sys, orbit) = setup();
    let l = sys.length_unit_m();
    let tu = sys.time_unit_s();
    let hour = 3600.0 / tu;
    let settings = IntegratorSettings::with_tolerance(1e-13);
    for (t0, rho_m, v_mps, u_mps2) in [
        (1.45, [-5000.0, 100.0, 100.0], [0.02, 0.02, 0.02], [0.0, 0.0, 0.0]),
        (
            0.2,
            [3000.0, -8000.0, 2000.0],
            [-0.05, 0.01, 0.03],
            [0.001, -0.002, 0.0015],
        ),
        (0.7, [800.0, 400.0, -9000.0], [0.0, 0.0, 0.1], [0.0, 0.0, -0.001]),
    ] {
        let target = orbit.state_at(t0).unwrap();
        let rho = Vec3::from(rho_m) / l;
        let rho_dot = Vec3::from(v_mps) * (tu / l);
        let u = Vec3::from(u_mps2) * (tu * tu / l);
        let d0 = common::basis_fd(&target, sys, fd_step(&target, sys));
        let chaser = common::chaser_from_relative(&target, &rho, &rho_dot, &d0.0, &d0.1);
        let (tf, cf) = common::propagate_pair(sys, &target, &chaser, u, hour);
        let d1 = common::basis_fd(&tf, sys, fd_step(&tf, sys));
        let rho_ref = d1.0 * (cf.r - tf.r);
        let rho_dot_ref = d1.1 * (cf.r - tf.r) + d1.0 * (cf.v - tf.v);

        let model = RelativeModel::Plant {
            orbit,
            sys,
            mask: TermMask::default(),
        };
        let x0 = RelativeState::new(rho, rho_dot, t0);
        let end = propagate_relative(&model, &x0, &PiecewiseControl::constant(t0, u), hour, &settings)
            .unwrap()
            .final_state();
        let err = (end.rho - rho_ref).amax().max((end.rho_dot - rho_dot_ref).amax());
        assert!(err < 1e-8, "t0 {t0}: divergence {err:e}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn plant_matches_two_body_pair_oracle(
        phase in 0.0..1.0f64,
        range_m in 0.0..10_000.0f64,
        (a, b) in (0.0..1.0f64, 0.0..1.0f64),
        speed in 0.0..0.1f64,
        (c, d) in (0.0..1.0f64, 0.0..1.0f64),
        thrust in 0.0..0.02f64,
        (e, f) in (0.0..1.0f64, 0.0..1.0f64),
    ) {
        let (sys, orbit) = setup();
        let l = sys.length_unit_m();
        let tu = sys.time_unit_s();
        let t = orbit.period() * phase;
        let target = orbit.state_at(t).unwrap();
        let rho = common::direction(a, b) * (range_m / l);
        let rho_dot = common::direction(c, d) * (speed * tu / l);
        let u = common::direction(e, f) * (thrust * tu * tu / l);

        let kin = LvlhKinematics::at_state(&target, sys).unwrap();
        let plant = plant_accel(&RelativeState::new(rho, rho_dot, t), &kin, &target, &u, sys).unwrap();

        let derivs = common::basis_fd(&target, sys, fd_step(&target, sys));
        let chaser = common::chaser_from_relative(&target, &rho, &rho_dot, &derivs.0, &derivs.1);
        let oracle = common::relative_accel(sys, &target, &chaser, &u, &derivs);
        prop_assert!((plant - oracle).amax() < 1e-9, "phase {}: {:e}", phase, (plant - oracle).amax());
    }

    #[test]
    fn origin_without_thrust_stays_at_rest(phase in 0.0..1.0f64) {
        let (sys, orbit) = setup();
        let target = orbit.state_at(orbit.period() * phase).unwrap();
        let kin = LvlhKinematics::at_state(&target, sys).unwrap();
        let acc = plant_accel(&RelativeState::zero(target.t), &kin, &target, &Vec3::zeros(), sys).unwrap();
        prop_assert!(acc.amax() < 1e-13);
    }
}
