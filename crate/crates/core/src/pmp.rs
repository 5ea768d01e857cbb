//! Pontryagin minimum principle for the minimum-propellant tracking problem.
//!
//! Cost `J = ∫ (x̃ᵀQx̃ + ‖R‖‖u‖) dt + x̃(t_f)ᵀ P x̃(t_f)` with `x̃ = x - x_ref`,
//! dynamics given by the frozen prediction model. All functions here work in
//! whatever consistent unit system the state, context and weights share.

use nalgebra::{DMatrix, DVector, Matrix3, Vector6};

use crate::bvp::{Guess, Tpbvp};
use crate::cr3bp::Vec3;
use crate::error::{Error, Result};
use crate::lvlh::skew;
use crate::relative::{prediction_accel_parts, FrozenContext, RelativeState};

/// Offset added to `‖λ_v‖` in the smoothed thrust direction.
pub const DIRECTION_REGULARIZATION: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostWeights {
    pub q: [f64; 6],
    pub p: [f64; 6],
    /// Common diagonal entry of `R`.
    pub r: f64,
}

impl CostWeights {
    pub fn new(q: [f64; 6], p: [f64; 6], r: f64) -> Result<Self> {
        let w = Self { q, p, r };
        w.validate()?;
        Ok(w)
    }

    /// Builds weights from a full `R` diagonal, which must have equal entries.
    pub fn with_r_diagonal(q: [f64; 6], p: [f64; 6], r: [f64; 3]) -> Result<Self> {
        if r.iter().any(|&x| x != r[0]) {
            return Err(Error::Validation(format!(
                "R diagonal entries must be equal so that ‖Ru‖ = ‖R‖‖u‖ (got {r:?})"
            )));
        }
        Self::new(q, p, r[0])
    }

    pub fn validate(&self) -> Result<()> {
        if self.q.iter().chain(&self.p).any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::Validation(
                "Q and P entries must be finite and non-negative".into(),
            ));
        }
        if !(self.r > 0.0) || !self.r.is_finite() {
            return Err(Error::Validation("R entries must be positive".into()));
        }
        Ok(())
    }

    /// Spectral norm of `R`.
    pub fn r_norm(&self) -> f64 {
        self.r
    }

    /// Weights that give the same optimal control when the state is
    /// expressed in meters/seconds instead of the weight units, where one
    /// weight length unit is `length_m` meters and one weight time unit is
    /// `time_s` seconds. The cost is rescaled by `length_m / time_s` so that
    /// `R` and the velocity costate (and hence the switching function)
    /// are unchanged.
    pub fn to_si(&self, length_m: f64, time_s: f64) -> Self {
        let (l, t) = (length_m, time_s);
        let mut q = self.q;
        let mut p = self.p;
        for i in 0..3 {
            q[i] /= l * t * t;
            q[i + 3] /= l;
            p[i] /= l * t;
            p[i + 3] *= t / l;
        }
        Self { q, p, r: self.r }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Costate {
    pub lambda_r: Vec3,
    pub lambda_v: Vec3,
}

impl Costate {
    pub fn new(lambda_r: Vec3, lambda_v: Vec3) -> Self {
        Self { lambda_r, lambda_v }
    }

    pub fn zero() -> Self {
        Self::new(Vec3::zeros(), Vec3::zeros())
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Self::new(Vec3::new(s[0], s[1], s[2]), Vec3::new(s[3], s[4], s[5]))
    }

    pub fn is_finite(&self) -> bool {
        self.lambda_r.iter().chain(self.lambda_v.iter()).all(|x| x.is_finite())
    }

    /// `p = -λ_v`.
    pub fn primer(&self) -> Vec3 {
        -self.lambda_v
    }
}

impl std::ops::Mul<f64> for Costate {
    type Output = Costate;

    fn mul(self, k: f64) -> Costate {
        Costate::new(self.lambda_r * k, self.lambda_v * k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlSample {
    pub epoch: f64,
    pub u: Vec3,
    pub switching_value: f64,
    pub primer_direction: Option<Vec3>,
}

fn tracking_error(x: &RelativeState, reference: &RelativeState) -> Vector6<f64> {
    x.to_vector() - reference.to_vector()
}

pub fn hamiltonian(
    x: &RelativeState,
    u: &Vec3,
    lam: &Costate,
    ctx: &FrozenContext,
    w: &CostWeights,
    reference: &RelativeState,
) -> Result<f64> {
    let e = tracking_error(x, reference);
    let running: f64 = (0..6).map(|i| w.q[i] * e[i] * e[i]).sum();
    let acc = prediction_accel_parts(&x.rho, &x.rho_dot, ctx, u)?;
    Ok(running + w.r_norm() * u.norm() + lam.lambda_r.dot(&x.rho_dot) + lam.lambda_v.dot(&acc))
}

pub fn switching_function(lam: &Costate, w: &CostWeights) -> f64 {
    lam.lambda_v.norm() - w.r_norm()
}

pub fn optimal_control(lam: &Costate, w: &CostWeights, u_max: f64) -> Vec3 {
    let n = lam.lambda_v.norm();
    if n - w.r_norm() > 0.0 {
        -lam.lambda_v * (u_max / n)
    } else {
        Vec3::zeros()
    }
}

/// Hard-law control sample with its switching value and primer direction.
pub fn control_sample(epoch: f64, lam: &Costate, w: &CostWeights, u_max: f64) -> ControlSample {
    let n = lam.lambda_v.norm();
    ControlSample {
        epoch,
        u: optimal_control(lam, w, u_max),
        switching_value: switching_function(lam, w),
        primer_direction: (n > 0.0).then(|| -lam.lambda_v / n),
    }
}

/// Smoothed thrust `-Γ_ε(Υ) λ_v / (‖λ_v‖ + δ)` with
/// `Γ_ε = u_max (1 + tanh(Υ/ε)) / 2`.
pub fn smoothed_control(lambda_v: &Vec3, r_norm: f64, u_max: f64, epsilon: f64) -> Vec3 {
    let n = lambda_v.norm();
    let gamma = 0.5 * u_max * (1.0 + ((n - r_norm) / epsilon).tanh());
    -lambda_v * (gamma / (n + DIRECTION_REGULARIZATION))
}

/// `d u / d λ_v` of [`smoothed_control`].
fn smoothed_control_jacobian(lambda_v: &Vec3, r_norm: f64, u_max: f64, epsilon: f64) -> Matrix3<f64> {
    let n = lambda_v.norm();
    let th = ((n - r_norm) / epsilon).tanh();
    let gamma = 0.5 * u_max * (1.0 + th);
    let dgamma = 0.5 * u_max * (1.0 - th * th) / epsilon;
    let nd = n + DIRECTION_REGULARIZATION;
    let mut jac = -Matrix3::identity() * (gamma / nd);
    if n > 0.0 {
        let unit = lambda_v / n;
        let outer = lambda_v * unit.transpose();
        jac += outer * (gamma / (nd * nd)) - outer * (dgamma / nd);
    }
    jac
}

/// `−∇_x H`, split into position and velocity blocks.
pub fn costate_rate(
    x: &RelativeState,
    lam: &Costate,
    ctx: &FrozenContext,
    w: &CostWeights,
    reference: &RelativeState,
) -> Result<Costate> {
    let e = tracking_error(x, reference);
    let g = ctx.gravity_gradient(&x.rho)?;
    let mut dr = -(g.transpose() * lam.lambda_v);
    let mut dv = -lam.lambda_r;
    if ctx.mask.rotational {
        let om = skew(&ctx.omega_il);
        dr += om * om * lam.lambda_v;
        dv += om.transpose() * lam.lambda_v * 2.0;
    }
    for i in 0..3 {
        dr[i] -= 2.0 * w.q[i] * e[i];
        dv[i] -= 2.0 * w.q[i + 3] * e[i + 3];
    }
    Ok(Costate::new(dr, dv))
}

pub fn terminal_costate(x_end: &RelativeState, w: &CostWeights, reference: &RelativeState) -> Costate {
    let e = tracking_error(x_end, reference);
    let lam: Vec<f64> = (0..6).map(|i| 2.0 * w.p[i] * e[i]).collect();
    Costate::from_slice(&lam)
}

/// Running plus terminal cost of a sampled trajectory (trapezoidal rule).
pub fn trajectory_cost(
    epochs: &[f64],
    states: &[RelativeState],
    controls: &[Vec3],
    w: &CostWeights,
    reference: &RelativeState,
) -> f64 {
    let rate = |x: &RelativeState, u: &Vec3| {
        let e = tracking_error(x, reference);
        (0..6).map(|i| w.q[i] * e[i] * e[i]).sum::<f64>() + w.r_norm() * u.norm()
    };
    let mut j = 0.0;
    for k in 1..epochs.len() {
        let dt = epochs[k] - epochs[k - 1];
        j += 0.5 * dt * (rate(&states[k - 1], &controls[k - 1]) + rate(&states[k], &controls[k]));
    }
    if let Some(last) = states.last() {
        let e = tracking_error(last, reference);
        j += (0..6).map(|i| w.p[i] * e[i] * e[i]).sum::<f64>();
    }
    j
}

/// State-costate boundary value problem over `[0, horizon]` with the
/// smoothed control law. Unknown ordering: `[ρ, ρ̇, λ_r/σ, λ_v/σ]` where
/// `σ` = [`RendezvousTpbvp::costate_scale`] keeps both halves of the
/// Jacobian comparable when the weights are large.
#[derive(Debug, Clone)]
pub struct RendezvousTpbvp {
    pub x0: RelativeState,
    pub reference: RelativeState,
    pub ctx: FrozenContext,
    pub weights: CostWeights,
    pub u_max: f64,
    pub horizon: f64,
    pub epsilon: f64,
    pub costate_scale: f64,
}

/// Costate magnitude produced by a 1-unit position error held over the
/// horizon, floored at 1.
pub fn costate_scale(weights: &CostWeights, horizon: f64) -> f64 {
    let p = weights.p[..3].iter().copied().fold(0.0, f64::max);
    let q = weights.q[..3].iter().copied().fold(0.0, f64::max);
    (2.0 * p * horizon + q * horizon * horizon).max(1.0)
}

pub fn build_tpbvp(
    x_k: &RelativeState,
    ctx: &FrozenContext,
    weights: &CostWeights,
    reference: &RelativeState,
    u_max: f64,
    horizon: f64,
    epsilon: f64,
) -> RendezvousTpbvp {
    RendezvousTpbvp {
        x0: *x_k,
        reference: *reference,
        ctx: *ctx,
        weights: *weights,
        u_max,
        horizon,
        epsilon,
        costate_scale: costate_scale(weights, horizon),
    }
}

impl RendezvousTpbvp {
    fn split(&self, y: &[f64]) -> (RelativeState, Costate) {
        (RendezvousTpbvp::state(y), self.costate(y))
    }

    pub fn state(y: &[f64]) -> RelativeState {
        RelativeState::new(Vec3::new(y[0], y[1], y[2]), Vec3::new(y[3], y[4], y[5]), 0.0)
    }

    /// Unscaled costate of a solution vector.
    pub fn costate(&self, y: &[f64]) -> Costate {
        Costate::from_slice(&y[6..12]) * self.costate_scale
    }

    pub fn control(&self, y: &[f64]) -> Vec3 {
        let lv = self.costate(y).lambda_v;
        smoothed_control(&lv, self.weights.r_norm(), self.u_max, self.epsilon)
    }

    fn try_rhs(&self, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let (x, lam) = self.split(y);
        let u = self.control(y);
        let acc = prediction_accel_parts(&x.rho, &x.rho_dot, &self.ctx, &u)?;
        let rate = costate_rate(&x, &lam, &self.ctx, &self.weights, &self.reference)?;
        let inv = 1.0 / self.costate_scale;
        dy[..3].copy_from_slice(x.rho_dot.as_slice());
        dy[3..6].copy_from_slice(acc.as_slice());
        dy[6..9].copy_from_slice((rate.lambda_r * inv).as_slice());
        dy[9..12].copy_from_slice((rate.lambda_v * inv).as_slice());
        Ok(())
    }

    /// Exact Jacobian apart from the derivative of the gravity gradient in
    /// the costate block, which is differenced.
    fn try_jacobian(&self, y: &[f64], jac: &mut DMatrix<f64>) -> Result<()> {
        let (x, lam) = self.split(y);
        let sigma = self.costate_scale;
        jac.fill(0.0);
        let eye = Matrix3::<f64>::identity();
        let g = self.ctx.gravity_gradient(&x.rho)?;
        let (om, om2) = if self.ctx.mask.rotational {
            let om = skew(&self.ctx.omega_il);
            (om, om * om)
        } else {
            (Matrix3::zeros(), Matrix3::zeros())
        };
        let du = smoothed_control_jacobian(&lam.lambda_v, self.weights.r_norm(), self.u_max, self.epsilon);
        // d(lambda_r rate)/d(rho): -d(G^T lambda_v)/d(rho), by differences.
        let mut dgl = Matrix3::zeros();
        let scale = x.rho.norm().max(self.ctx.moon_offset().norm() * 1e-6);
        for j in 0..3 {
            let h = 1e-6 * scale;
            let mut p = x.rho;
            let mut m = x.rho;
            p[j] += h;
            m[j] -= h;
            let gp = self.ctx.gravity_gradient(&p)?.transpose() * lam.lambda_v;
            let gm = self.ctx.gravity_gradient(&m)?.transpose() * lam.lambda_v;
            dgl.set_column(j, &(-(gp - gm) / (2.0 * h)));
        }
        let set = |jac: &mut DMatrix<f64>, r0: usize, c0: usize, m: &Matrix3<f64>| {
            jac.view_mut((r0, c0), (3, 3)).copy_from(m);
        };
        set(jac, 0, 3, &eye);
        set(jac, 3, 0, &(g - om2));
        set(jac, 3, 3, &(-om * 2.0));
        set(jac, 3, 9, &(du * sigma));
        let w = &self.weights;
        let qr = Matrix3::from_diagonal(&Vec3::new(w.q[0], w.q[1], w.q[2])) * 2.0;
        let qv = Matrix3::from_diagonal(&Vec3::new(w.q[3], w.q[4], w.q[5])) * 2.0;
        set(jac, 6, 0, &((dgl - qr) / sigma));
        set(jac, 6, 9, &(om2 - g.transpose()));
        set(jac, 9, 3, &(-qv / sigma));
        set(jac, 9, 6, &(-eye));
        set(jac, 9, 9, &(om.transpose() * 2.0));
        Ok(())
    }
}

impl Tpbvp for RendezvousTpbvp {
    fn dim(&self) -> usize {
        12
    }

    fn left_count(&self) -> usize {
        6
    }

    fn span(&self) -> (f64, f64) {
        (0.0, self.horizon)
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        if self.try_rhs(y, dy).is_err() {
            dy.fill(f64::NAN);
        }
    }

    fn jacobian(&self, _t: f64, y: &[f64], jac: &mut DMatrix<f64>) -> bool {
        if self.try_jacobian(y, jac).is_err() {
            jac.fill(f64::NAN);
        }
        true
    }

    fn left_residual(&self, ya: &[f64], out: &mut [f64]) {
        let x0 = self.x0.to_vector();
        for i in 0..6 {
            out[i] = ya[i] - x0[i];
        }
    }

    fn right_residual(&self, yb: &[f64], out: &mut [f64]) {
        let x = RendezvousTpbvp::state(yb);
        let target = terminal_costate(&x, &self.weights, &self.reference);
        let inv = 1.0 / self.costate_scale;
        for i in 0..3 {
            out[i] = yb[6 + i] - target.lambda_r[i] * inv;
            out[i + 3] = yb[9 + i] - target.lambda_v[i] * inv;
        }
    }
}

impl RendezvousTpbvp {
    /// Cold-start guess: straight-line coasting from `x0` with the costate
    /// of that coasting arc (frame rotation and gravity gradient ignored).
    pub fn coast_guess(&self, points: usize) -> Guess {
        let w = &self.weights;
        let e0 = self.x0.to_vector() - self.reference.to_vector();
        let tf = self.horizon;
        let inv = 1.0 / self.costate_scale;
        Guess::from_fn((0.0, tf), points, |t| {
            let mut y = DVector::zeros(12);
            let s = tf - t;
            for i in 0..3 {
                let (e, v) = (e0[i], e0[i + 3]);
                let pos = |tau: f64| e + v * tau;
                // λ_r(t) = 2 P ρ̃(T) + 2 Q ∫_t^T ρ̃, λ_v(t) = 2 P_v ṽ + 2 Q_v ṽ s + ∫_t^T λ_r.
                let int_pos = e * s + 0.5 * v * (tf * tf - t * t);
                let lr = 2.0 * w.p[i] * pos(tf) + 2.0 * w.q[i] * int_pos;
                let int_lr = 2.0 * w.p[i] * pos(tf) * s
                    + 2.0 * w.q[i] * (e * s * s / 2.0 + v * (tf.powi(3) / 3.0 - tf * t * t / 2.0 + t.powi(3) / 6.0));
                let lv = 2.0 * w.p[i + 3] * v + 2.0 * w.q[i + 3] * v * s + int_lr;
                y[i] = self.x0.rho[i] + self.x0.rho_dot[i] * t;
                y[i + 3] = self.x0.rho_dot[i];
                y[6 + i] = lr * inv;
                y[9 + i] = lv * inv;
            }
            y
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relative::TermMask;

    fn weights() -> CostWeights {
        CostWeights::new([2.0, 3.0, 4.0, 0.5, 0.6, 0.7], [1.0; 6], 1.0).unwrap()
    }

    #[test]
    fn switching_function_examples() {
        let w = weights();
        assert_eq!(switching_function(&Costate::zero(), &w), -1.0);
        let lam = Costate::new(Vec3::zeros(), Vec3::new(0.0, 0.0, 2.0));
        assert_eq!(switching_function(&lam, &w), 1.0);
        assert_eq!(optimal_control(&lam, &w, 0.02), Vec3::new(0.0, 0.0, -0.02));
    }

    #[test]
    fn unequal_r_is_rejected() {
        assert!(CostWeights::with_r_diagonal([0.0; 6], [0.0; 6], [1.0, 1.0, 2.0]).is_err());
        assert!(CostWeights::new([0.0; 6], [0.0; 6], 0.0).is_err());
        assert!(CostWeights::new([-1.0, 0.0, 0.0, 0.0, 0.0, 0.0], [0.0; 6], 1.0).is_err());
    }

    #[test]
    fn si_weights_preserve_switching_scale() {
        let w = CostWeights::new([5e14; 6], [8.05e10; 6], 1.0).unwrap();
        let si = w.to_si(1e3, 1.0);
        assert_eq!(si.r, 1.0);
        assert!((si.q[0] - 5e11).abs() < 1.0);
        assert!((si.p[3] - 8.05e7).abs() < 1e-3);
    }

    #[test]
    fn analytic_jacobian_matches_differences() {
        let ctx = FrozenContext {
            omega_il: Vec3::new(1e-6, -3e-6, 2e-7),
            r_ot: Vec3::new(1e7, 2e7, -6e7),
            r_om: Vec3::new(0.0, 0.0, 0.0),
            r_oe: Vec3::new(-3.8e8, 0.0, 0.0),
            gm_moon: 4.9e12,
            gm_earth: 3.98e14,
            mask: TermMask::default(),
        };
        let prob = RendezvousTpbvp {
            x0: RelativeState::zero(0.0),
            reference: RelativeState::new(Vec3::new(-5.0, 0.0, 0.0), Vec3::zeros(), 0.0),
            ctx,
            weights: weights(),
            u_max: 0.02,
            horizon: 90.0,
            epsilon: 0.1,
            costate_scale: 7.0,
        };
        let y = [
            -4000.0, 100.0, 80.0, 0.02, 0.01, -0.03, 1e-3, -2e-3, 5e-4, 0.7, -0.6, 0.4,
        ];
        let mut jac = DMatrix::zeros(12, 12);
        assert!(prob.jacobian(0.0, &y, &mut jac));
        let mut f0 = [0.0; 12];
        for j in 0..12 {
            let h = 1e-6 * y[j].abs().max(1e-3);
            let mut yp = y;
            let mut ym = y;
            yp[j] += h;
            ym[j] -= h;
            let (mut fp, mut fm) = ([0.0; 12], [0.0; 12]);
            prob.rhs(0.0, &yp, &mut fp);
            prob.rhs(0.0, &ym, &mut fm);
            prob.rhs(0.0, &y, &mut f0);
            let scale = f0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for i in 0..12 {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                // Relative agreement plus the differencing roundoff floor.
                let tol = 1e-6 * (fd.abs() + jac[(i, j)].abs()) + 8.0 * f64::EPSILON * scale / h;
                assert!((fd - jac[(i, j)]).abs() <= tol, "({i}, {j}): {fd} vs {}", jac[(i, j)]);
            }
        }
    }
}
