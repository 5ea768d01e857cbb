use std::sync::OnceLock;

use proptest::prelude::*;

use lunar_rdv::cr3bp::{Cr3bpSystem, SynodicState, Vec3};
use lunar_rdv::integrate::IntegratorSettings;
use lunar_rdv::orbit::{
    correct_halo, default_nrho, find_extreme_points, load_orbit, rendezvous_epoch, save_orbit, CorrectionSettings,
    EventKind, FileUnits, PeriodicOrbit,
};

fn setup() -> &'static (Cr3bpSystem, PeriodicOrbit) {
    static CELL: OnceLock<(Cr3bpSystem, PeriodicOrbit)> = OnceLock::new();
    CELL.get_or_init(|| {
        let sys = Cr3bpSystem::earth_moon();
        let orbit = default_nrho(&sys).unwrap();
        (sys, orbit)
    })
}

fn moon_distance(sys: &Cr3bpSystem, s: &SynodicState) -> f64 {
    (s.r - sys.moon()).norm()
}

#[test]
fn jacobi_conserved_over_one_period() {
    let (sys, orbit) = setup();
    let s0 = orbit.initial_state();
    let tr = sys
        .propagate(&s0, orbit.period(), &IntegratorSettings::with_tolerance(1e-12))
        .unwrap();
    let c0 = sys.jacobi_integral(&s0).unwrap();
    for (t, y) in tr.nodes() {
        let c = sys.jacobi_integral(&SynodicState::from_vector(t, &y)).unwrap();
        assert!((c - c0).abs() <= 1e-9 * c0.abs(), "t {t}: {c} vs {c0}");
    }
}

#[test]
fn corrected_orbit_closes_after_one_period() {
    let (sys, orbit) = setup();
    let s0 = orbit.initial_state();
    let end = sys
        .propagate(&s0, orbit.period(), &IntegratorSettings::with_tolerance(1e-13))
        .unwrap()
        .final_state();
    let y0 = s0.to_vector();
    for i in 0..6 {
        assert!((end[i] - y0[i]).abs() <= 1e-9 * y0.amax(), "component {i}");
    }
    // Southern family: the crossing starts below the ecliptic beyond the Moon.
    assert!(s0.r.z < 0.0 && s0.r.x > sys.moon().x);
}

#[test]
fn orbit_is_symmetric_about_xz_plane() {
    let (_, orbit) = setup();
    let p = orbit.period();
    for k in 1..20 {
        let t = p * k as f64 / 40.0;
        let a = orbit.state_at(t).unwrap();
        let b = orbit.state_at(p - t).unwrap();
        let mirrored = [b.r.x, -b.r.y, b.r.z, -b.v.x, b.v.y, -b.v.z];
        let direct = [a.r.x, a.r.y, a.r.z, a.v.x, a.v.y, a.v.z];
        for i in 0..6 {
            assert!((direct[i] - mirrored[i]).abs() < 1e-9, "t {t} component {i}");
        }
    }
}

#[test]
fn extreme_points_match_dense_scan() {
    let (sys, orbit) = setup();
    let events = find_extreme_points(orbit, sys).unwrap();
    assert_eq!(events.len(), 2);
    assert_ne!(events[0].kind, events[1].kind);
    let apo = events.iter().find(|e| e.kind == EventKind::Apolune).unwrap();
    let peri = events.iter().find(|e| e.kind == EventKind::Perilune).unwrap();
    assert!(apo.moon_distance > peri.moon_distance);

    let n = 20_000;
    let (mut best_max, mut best_min) = ((0.0, f64::MIN), (0.0, f64::MAX));
    for k in 0..n {
        let t = orbit.period() * k as f64 / n as f64;
        let d = moon_distance(sys, &orbit.state_at(t).unwrap());
        if d > best_max.1 {
            best_max = (t, d);
        }
        if d < best_min.1 {
            best_min = (t, d);
        }
    }
    assert!(apo.moon_distance >= best_max.1 && apo.moon_distance - best_max.1 < 1e-9);
    assert!(peri.moon_distance <= best_min.1 && best_min.1 - peri.moon_distance < 1e-6);
    let wrap = |dt: f64| dt.abs().min(orbit.period() - dt.abs());
    assert!(wrap(apo.epoch - best_max.0) < 2.0 * orbit.period() / n as f64);
    assert!(wrap(peri.epoch - best_min.0) < 2.0 * orbit.period() / n as f64);

    // An NRHO: perilune a few thousand km, apolune near 70 000 km.
    let km = sys.length_unit_km();
    assert!((1000.0..6000.0).contains(&(peri.moon_distance * km)));
    assert!((60_000.0..80_000.0).contains(&(apo.moon_distance * km)));
}

#[test]
fn rendezvous_epoch_precedes_apolune() {
    let (sys, orbit) = setup();
    let apo = find_extreme_points(orbit, sys)
        .unwrap()
        .into_iter()
        .find(|e| e.kind == EventKind::Apolune)
        .unwrap();
    let start = rendezvous_epoch(orbit, 6.0, sys).unwrap();
    let dt = (apo.epoch - start).rem_euclid(orbit.period()) * sys.time_unit_s();
    assert!((dt - 6.0 * 3600.0).abs() < 1e-6, "{dt}");
    assert!(rendezvous_epoch(orbit, -1.0, sys).is_err());
}

#[test]
fn orbit_file_round_trip() {
    let (sys, orbit) = setup();
    let dir = tempfile::tempdir().unwrap();
    for units in [FileUnits::Normalized, FileUnits::Si] {
        let path = dir.path().join("orbit.txt");
        save_orbit(orbit, &path, sys, units).unwrap();
        let back = load_orbit(&path, sys).unwrap();
        assert!((back.period() - orbit.period()).abs() < 1e-12 * orbit.period());
        for k in 0..37 {
            let t = orbit.period() * (k as f64 + 0.5) / 37.0;
            let a = orbit.state_at(t).unwrap().to_vector();
            let b = back.state_at(t).unwrap().to_vector();
            assert!((a - b).amax() < 1e-9, "{units:?} t {t}: {:e}", (a - b).amax());
        }
    }
}

#[test]
fn orbit_file_for_other_system_rejected() {
    let (sys, orbit) = setup();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("orbit.txt");
    save_orbit(orbit, &path, sys, FileUnits::Normalized).unwrap();
    let other = Cr3bpSystem::new(0.012, sys.length_unit_km(), sys.period_s()).unwrap();
    assert!(load_orbit(&path, &other).is_err());
}

#[test]
fn nearby_seed_converges_to_same_family() {
    let (sys, orbit) = setup();
    let s0 = orbit.initial_state();
    let seed = SynodicState::new(s0.r + Vec3::new(5e-4, 0.0, 0.0), s0.v + Vec3::new(0.0, 1e-3, 0.0), 0.0);
    let other = correct_halo(sys, &seed, &CorrectionSettings::default()).unwrap();
    assert!(other.periodicity_error() < 1e-9);
    // Same z, so the correction must land back on the same member.
    assert!((other.period() - orbit.period()).abs() < 1e-8);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn jacobi_conserved_along_random_arcs(
        phase in 0.0..1.0f64,
        dv in (-1e-3..1e-3f64, -1e-3..1e-3f64, -1e-3..1e-3f64),
        span in 0.01..0.5f64,
    ) {
        let (sys, orbit) = setup();
        let s = orbit.state_at(orbit.period() * phase).unwrap();
        let s = SynodicState::new(s.r, s.v + Vec3::new(dv.0, dv.1, dv.2), s.t);
        let c0 = sys.jacobi_integral(&s).unwrap();
        let end = sys.propagate(&s, span, &IntegratorSettings::with_tolerance(1e-12)).unwrap().final_state();
        let c1 = sys.jacobi_integral(&SynodicState::from_vector(s.t + span, &end)).unwrap();
        prop_assert!((c1 - c0).abs() <= 1e-9 * c0.abs());
    }

    #[test]
    fn time_reversal_returns_to_start(phase in 0.0..1.0f64, span in 0.01..0.3f64) {
        let (sys, orbit) = setup();
        let s = orbit.state_at(orbit.period() * phase).unwrap();
        let settings = IntegratorSettings::with_tolerance(1e-13);
        let fwd = sys.propagate(&s, span, &settings).unwrap().final_state();
        let back = sys
            .propagate(&SynodicState::from_vector(s.t + span, &fwd), -span, &settings)
            .unwrap()
            .final_state();
        prop_assert!((back - s.to_vector()).amax() < 1e-9);
    }
}
