mod common;

use nalgebra::DVector;
use proptest::prelude::*;

use lunar_rdv::bvp::{solve, BvpSettings, FnTpbvp, Guess};

fn linear(sign: f64, span: f64, ya: f64, yb: f64) -> FnTpbvp {
    FnTpbvp::new(
        2,
        1,
        (0.0, span),
        move |_t, y, dy| {
            dy[0] = y[1];
            dy[1] = sign * y[0];
        },
        move |a, r| r[0] = a[0] - ya,
        move |b, r| r[0] = b[0] - yb,
    )
}

fn max_error(sol: &lunar_rdv::bvp::TpbvpSolution, span: f64, exact: impl Fn(f64) -> f64) -> f64 {
    (0..=500)
        .map(|i| span * i as f64 / 500.0)
        .map(|t| (sol.eval(t)[0] - exact(t)).abs())
        .fold(0.0, f64::max)
}

#[test]
fn oscillator_matches_sine() {
    let span = 1.5;
    let guess = Guess::constant((0.0, span), 6, DVector::zeros(2));
    let sol = solve(&linear(-1.0, span, 0.0, span.sin()), &guess, &BvpSettings::default()).unwrap();
    assert!(max_error(&sol, span, f64::sin) < 1e-6);
}

#[test]
fn growth_matches_sinh() {
    let span = 3.0;
    let guess = Guess::constant((0.0, span), 6, DVector::zeros(2));
    let sol = solve(&linear(1.0, span, 0.0, 1.0), &guess, &BvpSettings::default()).unwrap();
    assert!(max_error(&sol, span, |t| t.sinh() / span.sinh()) < 1e-6);
}

#[test]
fn boundary_layer_refines_mesh() {
    // y'' = y / e² has layers of width e at both ends.
    let e = 0.02;
    let p = FnTpbvp::new(
        2,
        1,
        (0.0, 1.0),
        move |_t, y, dy| {
            dy[0] = y[1];
            dy[1] = y[0] / (e * e);
        },
        |a, r| r[0] = a[0] - 1.0,
        |b, r| r[0] = b[0] - 1.0,
    );
    let sol = solve(
        &p,
        &Guess::constant((0.0, 1.0), 5, DVector::zeros(2)),
        &BvpSettings::default(),
    )
    .unwrap();
    let exact = |t: f64| ((t - 0.5) / e).cosh() / (0.5 / e).cosh();
    assert!(max_error(&sol, 1.0, exact) < 1e-6);
    assert!(sol.mesh.len() > 5);
}

#[test]
fn minimum_fuel_double_integrator_switch_times() {
    let (d, t) = (1.0, 3.0);
    let sol = common::solve_double_integrator(d, t, &[1e-1, 1e-2, 1e-3, 1e-4]);
    let (t1, t2) = common::bang_off_bang_switches(d, t);
    let sw = common::costate_switches(&sol, t);
    assert_eq!(sw.len(), 2, "{sw:?}");
    assert!((sw[0] - t1).abs() < 1e-4, "{} vs {t1}", sw[0]);
    assert!((sw[1] - t2).abs() < 1e-4, "{} vs {t2}", sw[1]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn oscillator_any_boundary_values(ya in -2.0..2.0f64, yb in -2.0..2.0f64, span in 0.3..2.5f64) {
        let guess = Guess::constant((0.0, span), 8, DVector::zeros(2));
        let sol = solve(&linear(-1.0, span, ya, yb), &guess, &BvpSettings::default()).unwrap();
        // y = ya cos t + c sin t with c fixed by the right end.
        let c = (yb - ya * span.cos()) / span.sin();
        let err = max_error(&sol, span, |t| ya * t.cos() + c * t.sin());
        prop_assert!(err < 1e-6 * (1.0 + c.abs()), "err {err}");
    }

    #[test]
    fn double_integrator_switches_any_transfer(d in 0.2..2.0f64, t in 3.0..5.0f64) {
        let sol = common::solve_double_integrator(d, t, &[1e-1, 1e-2, 1e-3, 1e-4]);
        let (t1, t2) = common::bang_off_bang_switches(d, t);
        let sw = common::costate_switches(&sol, t);
        prop_assert_eq!(sw.len(), 2);
        prop_assert!((sw[0] - t1).abs() < 1e-4 && (sw[1] - t2).abs() < 1e-4, "{:?} vs {} {}", sw, t1, t2);
    }
}
