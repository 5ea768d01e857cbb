//! Explicit Runge-Kutta integration with continuous output.
//!
//! The adaptive method is Dormand-Prince 5(4) with its fourth-order
//! continuous extension; classic RK4 with cubic Hermite interpolation is
//! available for fixed-step reproducibility runs.

use nalgebra::SVector;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Dopri5,
    /// Fixed-step classic RK4 with the given step (sign is taken from the span).
    Rk4 {
        step: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorSettings {
    pub method: Method,
    pub rtol: f64,
    pub atol: f64,
    pub initial_step: Option<f64>,
    pub max_step: f64,
    pub min_step: f64,
    pub max_steps: usize,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        Self {
            method: Method::Dopri5,
            rtol: 1e-12,
            atol: 1e-14,
            initial_step: None,
            max_step: f64::INFINITY,
            min_step: 1e-16,
            max_steps: 2_000_000,
        }
    }
}

impl IntegratorSettings {
    pub fn with_tolerance(tol: f64) -> Self {
        Self {
            rtol: tol,
            atol: tol * 1e-2,
            ..Self::default()
        }
    }

    pub fn rk4(step: f64) -> Self {
        Self {
            method: Method::Rk4 { step },
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
enum Interp<const N: usize> {
    /// Dormand-Prince dense output coefficients.
    Dopri([SVector<f64, N>; 5]),
    /// Cubic Hermite on endpoint values and derivatives.
    Hermite {
        y0: SVector<f64, N>,
        y1: SVector<f64, N>,
        f0: SVector<f64, N>,
        f1: SVector<f64, N>,
    },
}

#[derive(Debug, Clone)]
struct Segment<const N: usize> {
    t0: f64,
    h: f64,
    interp: Interp<N>,
}

impl<const N: usize> Segment<N> {
    fn eval(&self, t: f64) -> SVector<f64, N> {
        let theta = (t - self.t0) / self.h;
        match &self.interp {
            Interp::Dopri(r) => {
                let theta1 = 1.0 - theta;
                r[0] + (r[1] + (r[2] + (r[3] + r[4] * theta1) * theta) * theta1) * theta
            }
            Interp::Hermite { y0, y1, f0, f1 } => {
                let t2 = theta * theta;
                let t3 = t2 * theta;
                let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
                let h10 = t3 - 2.0 * t2 + theta;
                let h01 = -2.0 * t3 + 3.0 * t2;
                let h11 = t3 - t2;
                y0 * h00 + f0 * (h10 * self.h) + y1 * h01 + f1 * (h11 * self.h)
            }
        }
    }

    fn start_value(&self) -> SVector<f64, N> {
        match &self.interp {
            Interp::Dopri(r) => r[0],
            Interp::Hermite { y0, .. } => *y0,
        }
    }
}

/// Integrator output: accepted nodes plus a continuous extension between them.
#[derive(Debug, Clone)]
pub struct Trajectory<const N: usize> {
    segments: Vec<Segment<N>>,
    t_end: f64,
    y_end: SVector<f64, N>,
}

impl<const N: usize> Trajectory<N> {
    pub fn start(&self) -> f64 {
        self.segments.first().map_or(self.t_end, |s| s.t0)
    }

    pub fn end(&self) -> f64 {
        self.t_end
    }

    pub fn final_state(&self) -> SVector<f64, N> {
        self.y_end
    }

    pub fn initial_state(&self) -> SVector<f64, N> {
        self.segments.first().map_or(self.y_end, |s| s.start_value())
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Epochs of the accepted steps, including both ends.
    pub fn node_epochs(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.segments.iter().map(|s| s.t0).collect();
        out.push(self.t_end);
        out
    }

    pub fn nodes(&self) -> Vec<(f64, SVector<f64, N>)> {
        let mut out: Vec<_> = self.segments.iter().map(|s| (s.t0, s.start_value())).collect();
        out.push((self.t_end, self.y_end));
        out
    }

    fn forward(&self) -> bool {
        self.t_end >= self.start()
    }

    /// Evaluates the continuous extension; node epochs return node values exactly.
    pub fn state_at(&self, t: f64) -> Result<SVector<f64, N>> {
        let (lo, hi) = if self.forward() {
            (self.start(), self.t_end)
        } else {
            (self.t_end, self.start())
        };
        let slack = 1e-12 * (hi - lo).abs().max(1.0);
        if !(t >= lo - slack && t <= hi + slack) {
            return Err(Error::OutOfSpan {
                epoch: t,
                start: self.start(),
                end: self.t_end,
            });
        }
        if t == self.t_end || self.segments.is_empty() {
            return Ok(self.y_end);
        }
        let fwd = self.forward();
        // Index of the last segment whose start does not lie beyond t.
        let idx = self
            .segments
            .partition_point(|s| if fwd { s.t0 <= t } else { s.t0 >= t })
            .saturating_sub(1);
        let seg = &self.segments[idx];
        if t == seg.t0 {
            return Ok(seg.start_value());
        }
        Ok(seg.eval(t))
    }
}

// Dormand-Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Integrates `dy/dt = f(t, y)` from `t0` to `tf` (either direction).
pub fn integrate<const N: usize, F>(
    mut f: F,
    t0: f64,
    y0: SVector<f64, N>,
    tf: f64,
    settings: &IntegratorSettings,
) -> Result<Trajectory<N>>
where
    F: FnMut(f64, &SVector<f64, N>) -> Result<SVector<f64, N>>,
{
    match settings.method {
        Method::Dopri5 => dopri5(&mut f, t0, y0, tf, settings),
        Method::Rk4 { step } => rk4(&mut f, t0, y0, tf, step),
    }
}

fn error_norm<const N: usize>(
    err: &SVector<f64, N>,
    y0: &SVector<f64, N>,
    y1: &SVector<f64, N>,
    s: &IntegratorSettings,
) -> f64 {
    let mut acc = 0.0;
    for i in 0..N {
        let sc = s.atol + s.rtol * y0[i].abs().max(y1[i].abs());
        acc += (err[i] / sc).powi(2);
    }
    (acc / N as f64).sqrt()
}

fn dopri5<const N: usize, F>(
    f: &mut F,
    t0: f64,
    y0: SVector<f64, N>,
    tf: f64,
    s: &IntegratorSettings,
) -> Result<Trajectory<N>>
where
    F: FnMut(f64, &SVector<f64, N>) -> Result<SVector<f64, N>>,
{
    let span = tf - t0;
    let mut segments = Vec::new();
    if span == 0.0 {
        return Ok(Trajectory {
            segments,
            t_end: t0,
            y_end: y0,
        });
    }
    let dir = span.signum();
    let mut t = t0;
    let mut y = y0;
    let mut k1 = f(t, &y)?;

    let mut h = match s.initial_step {
        Some(h) => h.abs(),
        None => initial_step(f, t, &y, &k1, dir, s)?,
    }
    .min(s.max_step)
    .min(span.abs());

    let mut steps = 0;
    let mut last_rejected = false;
    loop {
        let remaining = (tf - t) * dir;
        if remaining <= 0.0 {
            break;
        }
        if steps >= s.max_steps {
            return Err(Error::ToleranceNotMet {
                t,
                max_steps: s.max_steps,
            });
        }
        if h < s.min_step.max(1e-15 * t.abs()) {
            return Err(Error::StepSizeUnderflow { t, h });
        }
        let mut hs = h.min(remaining);
        // Avoid leaving a sliver step at the end.
        if remaining - hs < 1e-10 * hs {
            hs = remaining;
        }
        let hh = hs * dir;

        let k2 = f(t + C2 * hh, &(y + k1 * (A21 * hh)))?;
        let k3 = f(t + C3 * hh, &(y + (k1 * A31 + k2 * A32) * hh))?;
        let k4 = f(t + C4 * hh, &(y + (k1 * A41 + k2 * A42 + k3 * A43) * hh))?;
        let k5 = f(t + C5 * hh, &(y + (k1 * A51 + k2 * A52 + k3 * A53 + k4 * A54) * hh))?;
        let k6 = f(
            t + hh,
            &(y + (k1 * A61 + k2 * A62 + k3 * A63 + k4 * A64 + k5 * A65) * hh),
        )?;
        let y1 = y + (k1 * A71 + k3 * A73 + k4 * A74 + k5 * A75 + k6 * A76) * hh;
        let t1 = if hs == remaining { tf } else { t + hh };
        let k7 = f(t1, &y1)?;
        steps += 1;

        let err = (k1 * E1 + k3 * E3 + k4 * E4 + k5 * E5 + k6 * E6 + k7 * E7) * hh;
        let en = error_norm(&err, &y, &y1, s);

        if en <= 1.0 {
            let r1 = y;
            let r2 = y1 - y;
            let r3 = k1 * hh - r2;
            let r4 = r2 - k7 * hh - r3;
            let r5 = (k1 * D1 + k3 * D3 + k4 * D4 + k5 * D5 + k6 * D6 + k7 * D7) * hh;
            segments.push(Segment {
                t0: t,
                h: t1 - t,
                interp: Interp::Dopri([r1, r2, r3, r4, r5]),
            });
            t = t1;
            y = y1;
            k1 = k7;
            let mut fac = if en == 0.0 { 5.0 } else { 0.9 * en.powf(-0.2) };
            fac = fac.clamp(0.2, 5.0);
            if last_rejected {
                fac = fac.min(1.0);
            }
            h = (hs * fac).min(s.max_step);
            last_rejected = false;
        } else {
            let fac = (0.9 * en.powf(-0.2)).clamp(0.1, 1.0);
            h = hs * fac;
            last_rejected = true;
        }
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::StepSizeUnderflow { t, h });
        }
    }
    Ok(Trajectory {
        segments,
        t_end: t,
        y_end: y,
    })
}

fn initial_step<const N: usize, F>(
    f: &mut F,
    t: f64,
    y: &SVector<f64, N>,
    f0: &SVector<f64, N>,
    dir: f64,
    s: &IntegratorSettings,
) -> Result<f64>
where
    F: FnMut(f64, &SVector<f64, N>) -> Result<SVector<f64, N>>,
{
    let scale = y.map(|v| s.atol + s.rtol * v.abs());
    let d0 = (y.component_div(&scale).norm_squared() / N as f64).sqrt();
    let d1 = (f0.component_div(&scale).norm_squared() / N as f64).sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let y1 = y + f0 * (h0 * dir);
    let f1 = f(t + h0 * dir, &y1)?;
    let d2 = ((f1 - f0).component_div(&scale).norm_squared() / N as f64).sqrt() / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    Ok((100.0 * h0).min(h1))
}

fn rk4<const N: usize, F>(f: &mut F, t0: f64, y0: SVector<f64, N>, tf: f64, step: f64) -> Result<Trajectory<N>>
where
    F: FnMut(f64, &SVector<f64, N>) -> Result<SVector<f64, N>>,
{
    let span = tf - t0;
    let mut segments = Vec::new();
    if span == 0.0 {
        return Ok(Trajectory {
            segments,
            t_end: t0,
            y_end: y0,
        });
    }
    if !(step.abs() > 0.0) {
        return Err(Error::StepSizeUnderflow { t: t0, h: step });
    }
    let n = (span.abs() / step.abs()).ceil().max(1.0) as usize;
    let h = span / n as f64;
    let mut y = y0;
    let mut fy = f(t0, &y)?;
    for i in 0..n {
        let t = t0 + i as f64 * h;
        let t1 = if i + 1 == n { tf } else { t0 + (i + 1) as f64 * h };
        let hh = t1 - t;
        let k1 = fy;
        let k2 = f(t + 0.5 * hh, &(y + k1 * (0.5 * hh)))?;
        let k3 = f(t + 0.5 * hh, &(y + k2 * (0.5 * hh)))?;
        let k4 = f(t1, &(y + k3 * hh))?;
        let y1 = y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (hh / 6.0);
        let f1 = f(t1, &y1)?;
        segments.push(Segment {
            t0: t,
            h: hh,
            interp: Interp::Hermite { y0: y, y1, f0: fy, f1 },
        });
        y = y1;
        fy = f1;
    }
    Ok(Trajectory {
        segments,
        t_end: tf,
        y_end: y,
    })
}

/// Refines a sign change of `g` on `[a, b]` by bisection then secant steps.
pub fn find_root<G>(mut g: G, mut a: f64, mut b: f64, tol: f64) -> Result<f64>
where
    G: FnMut(f64) -> Result<f64>,
{
    let mut ga = g(a)?;
    let gb = g(b)?;
    if ga == 0.0 {
        return Ok(a);
    }
    if gb == 0.0 {
        return Ok(b);
    }
    if ga.signum() == gb.signum() {
        return Err(Error::RootNotConverged {
            point: "event",
            lower: a,
            upper: b,
            iterations: 0,
            residual: ga.abs().min(gb.abs()),
        });
    }
    let mut gb = gb;
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        // Regula falsi with bisection fallback.
        let mut m = b - gb * (b - a) / (gb - ga);
        let width = (b - a).abs();
        let lo = a.min(b) + 0.05 * width;
        let hi = a.max(b) - 0.05 * width;
        if !(m > lo && m < hi) {
            m = 0.5 * (a + b);
        }
        let gm = g(m)?;
        if gm == 0.0 {
            return Ok(m);
        }
        if gm.signum() == ga.signum() {
            a = m;
            ga = gm;
        } else {
            b = m;
            gb = gm;
        }
    }
    Ok(0.5 * (a + b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector2;

    fn oscillator(_t: f64, y: &Vector2<f64>) -> Result<Vector2<f64>> {
        Ok(Vector2::new(y[1], -y[0]))
    }

    #[test]
    fn harmonic_oscillator_dense_output() {
        let traj = integrate(
            oscillator,
            0.0,
            Vector2::new(0.0, 1.0),
            10.0,
            &IntegratorSettings::with_tolerance(1e-11),
        )
        .unwrap();
        for i in 0..=1000 {
            let t = i as f64 * 0.01;
            let y = traj.state_at(t).unwrap();
            assert!((y[0] - t.sin()).abs() < 1e-8, "t = {t}");
        }
        assert!((traj.final_state()[0] - 10f64.sin()).abs() < 1e-9);
    }

    #[test]
    fn backward_integration() {
        let s = IntegratorSettings::with_tolerance(1e-12);
        let fwd = integrate(oscillator, 0.0, Vector2::new(0.3, 0.2), 3.0, &s).unwrap();
        let back = integrate(oscillator, 3.0, fwd.final_state(), 0.0, &s).unwrap();
        assert!((back.final_state() - Vector2::new(0.3, 0.2)).norm() < 1e-10);
        assert!(back.state_at(1.5).is_ok());
        assert!(back.state_at(3.5).is_err());
    }

    #[test]
    fn nodes_are_reproduced_exactly() {
        let traj = integrate(
            oscillator,
            0.0,
            Vector2::new(1.0, 0.0),
            2.0,
            &IntegratorSettings::with_tolerance(1e-8),
        )
        .unwrap();
        for (t, y) in traj.nodes() {
            assert_eq!(traj.state_at(t).unwrap(), y);
        }
    }

    #[test]
    fn rk4_fixed_step_converges_at_fourth_order() {
        let err = |h: f64| {
            let tr = integrate(
                oscillator,
                0.0,
                Vector2::new(0.0, 1.0),
                1.0,
                &IntegratorSettings::rk4(h),
            )
            .unwrap();
            (tr.final_state()[0] - 1f64.sin()).abs()
        };
        let ratio = err(0.1) / err(0.05);
        assert!(ratio > 14.0 && ratio < 18.0, "ratio {ratio}");
    }

    #[test]
    fn root_finder_locates_crossing() {
        let r = find_root(|t| Ok(t.cos()), 1.0, 2.0, 1e-14).unwrap();
        assert!((r - std::f64::consts::FRAC_PI_2).abs() < 1e-13);
    }
}
