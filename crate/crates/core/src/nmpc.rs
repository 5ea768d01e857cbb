//! Receding-horizon controller and closed-loop driver.
//!
//! Each sampling instant freezes the frame kinematics, solves the
//! state-costate TPBVP in meters and seconds over `[0, Tp]`, and holds the
//! hard-law control for one sampling period on the time-varying plant.

use std::time::Instant;

use log::{debug, warn};
use serde::Serialize;

use crate::bvp::{self, BvpError, BvpSettings, Guess, TpbvpSolution};
use crate::cr3bp::{Cr3bpSystem, Vec3};
use crate::error::{Error, Result};
use crate::integrate::IntegratorSettings;
use crate::lvlh::LvlhKinematics;
use crate::orbit::PeriodicOrbit;
use crate::pmp::{self, ControlSample, CostWeights, Costate};
use crate::relative::{propagate_relative, FrozenContext, PiecewiseControl, RelativeModel, RelativeState, TermMask};

pub const DEFAULT_EPSILON_SCHEDULE: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];

/// Length and time units in which the cost weights are expressed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightUnits {
    pub label: String,
    pub length_m: f64,
    pub time_s: f64,
}

impl WeightUnits {
    pub fn si() -> Self {
        Self::custom("si", 1.0, 1.0)
    }

    pub fn km() -> Self {
        Self::custom("km", 1e3, 1.0)
    }

    pub fn normalized(sys: &Cr3bpSystem) -> Self {
        Self::custom("normalized", sys.length_unit_m(), sys.time_unit_s())
    }

    pub fn custom(label: &str, length_m: f64, time_s: f64) -> Self {
        Self {
            label: label.to_string(),
            length_m,
            time_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmpcConfig {
    /// Sampling time, s.
    pub ts: f64,
    /// Prediction horizon, s.
    pub tp: f64,
    /// Thrust acceleration bound, m/s².
    pub u_max: f64,
    pub weights: CostWeights,
    pub weight_units: WeightUnits,
    /// Constant reference in meters and m/s.
    pub reference: RelativeState,
    pub epsilon_schedule: Vec<f64>,
    pub bvp: BvpSettings,
    /// Initial mesh size of a cold start.
    pub initial_mesh: usize,
    /// Max geometric bisections of a failing continuation stage.
    pub max_bisections: usize,
}

impl NmpcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ts > 0.0) {
            return Err(Error::Validation(format!(
                "sampling time Ts = {} must be positive",
                self.ts
            )));
        }
        if !(self.tp >= self.ts) {
            return Err(Error::Validation(format!(
                "prediction horizon Tp = {} must be at least the sampling time Ts = {}",
                self.tp, self.ts
            )));
        }
        if !(self.u_max > 0.0) {
            return Err(Error::Validation(format!("u_max = {} must be positive", self.u_max)));
        }
        if self.epsilon_schedule.is_empty() || self.epsilon_schedule.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::Validation(
                "smoothing schedule must be non-empty and positive".into(),
            ));
        }
        if !(self.weight_units.length_m > 0.0 && self.weight_units.time_s > 0.0) {
            return Err(Error::Validation("weight units must be positive".into()));
        }
        self.weights.validate()
    }

    /// Weights rescaled to SI from the configured units.
    pub fn si_weights(&self) -> CostWeights {
        self.weights.to_si(self.weight_units.length_m, self.weight_units.time_s)
    }

    /// Schedule with two extra geometric points per original interval.
    fn denser_schedule(&self) -> Vec<f64> {
        let s = &self.epsilon_schedule;
        let mut out = vec![s[0]];
        for w in s.windows(2) {
            let r = (w[1] / w[0]).powf(1.0 / 3.0);
            out.push(w[0] * r);
            out.push(w[0] * r * r);
            out.push(w[1]);
        }
        out
    }
}

/// Result of one controller update.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub sample: ControlSample,
    pub solution: Option<TpbvpSolution>,
    /// The solver failed and the previous control is being held.
    pub degraded: bool,
    pub diagnostic: Option<String>,
    /// Predicted horizon cost in weight units.
    pub predicted_cost: f64,
}

pub struct NmpcController<'a> {
    pub config: NmpcConfig,
    orbit: &'a PeriodicOrbit,
    sys: &'a Cr3bpSystem,
    warm: Option<TpbvpSolution>,
    last: Option<ControlSample>,
}

impl<'a> NmpcController<'a> {
    pub fn new(config: NmpcConfig, orbit: &'a PeriodicOrbit, sys: &'a Cr3bpSystem) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            orbit,
            sys,
            warm: None,
            last: None,
        })
    }

    /// Seeds the warm start (e.g. with a solution from another controller).
    pub fn set_warm_start(&mut self, sol: Option<TpbvpSolution>) {
        self.warm = sol;
    }

    /// Frame context at `epoch` (normalized time) in meters and seconds.
    pub fn context_at(&self, epoch: f64) -> Result<FrozenContext> {
        let target = self.orbit.state_at(epoch)?;
        let kin = LvlhKinematics::at_state(&target, self.sys)?;
        Ok(FrozenContext::capture(self.sys, &target, &kin).rescaled(self.sys.length_unit_m(), self.sys.time_unit_s()))
    }

    fn problem(&self, x_k: &RelativeState, ctx: &FrozenContext, epsilon: f64) -> pmp::RendezvousTpbvp {
        let c = &self.config;
        pmp::build_tpbvp(x_k, ctx, &c.si_weights(), &c.reference, c.u_max, c.tp, epsilon)
    }

    fn solve(&self, x_k: &RelativeState, ctx: &FrozenContext) -> std::result::Result<TpbvpSolution, BvpError> {
        let c = &self.config;
        let make = |eps: f64| self.problem(x_k, ctx, eps);
        let final_eps = *c.epsilon_schedule.last().expect("validated schedule");
        let cold = make(c.epsilon_schedule[0]).coast_guess(c.initial_mesh);

        if let Some(prev) = &self.warm {
            let guess = Guess::shifted(prev, c.ts, (0.0, c.tp));
            match bvp::solve(&make(final_eps), &guess, &c.bvp) {
                Ok(sol) => return Ok(sol),
                Err(e) => debug!("warm start at final epsilon failed: {e}"),
            }
            match bvp::continuation_solve(make, &guess, &c.epsilon_schedule, &c.bvp, c.max_bisections) {
                Ok(sol) => return Ok(sol),
                Err(e) => debug!("warm continuation failed: {e}"),
            }
        }
        match bvp::continuation_solve(make, &cold, &c.epsilon_schedule, &c.bvp, c.max_bisections) {
            Ok(sol) => Ok(sol),
            Err(e) => {
                debug!("cold continuation failed: {e}; retrying with a denser schedule");
                bvp::continuation_solve(make, &cold, &c.denser_schedule(), &c.bvp, c.max_bisections)
            }
        }
    }

    /// One controller update at `epoch` (normalized) for the measured
    /// relative state `x_k` in meters and m/s.
    pub fn step(&mut self, x_k: &RelativeState, epoch: f64) -> Result<StepOutcome> {
        let ctx = self.context_at(epoch)?;
        let x_k = RelativeState::new(x_k.rho, x_k.rho_dot, 0.0);
        match self.solve(&x_k, &ctx) {
            Ok(sol) => {
                let lam = self.problem(&x_k, &ctx, 0.0).costate(sol.values[0].as_slice());
                let sample = pmp::control_sample(epoch, &lam, &self.config.weights, self.config.u_max);
                let predicted_cost = self.predicted_cost(&sol);
                self.warm = Some(sol.clone());
                self.last = Some(sample);
                Ok(StepOutcome {
                    sample,
                    solution: Some(sol),
                    degraded: false,
                    diagnostic: None,
                    predicted_cost,
                })
            }
            Err(e) => {
                let msg = format!("TPBVP failed at epoch {epoch:.9}: {e}");
                warn!("{msg}; holding previous control");
                self.warm = None;
                let held = self.last.unwrap_or(ControlSample {
                    epoch,
                    u: Vec3::zeros(),
                    switching_value: -self.config.weights.r_norm(),
                    primer_direction: None,
                });
                let sample = ControlSample { epoch, ..held };
                self.last = Some(sample);
                Ok(StepOutcome {
                    sample,
                    solution: None,
                    degraded: true,
                    diagnostic: Some(msg),
                    predicted_cost: f64::NAN,
                })
            }
        }
    }

    /// Horizon cost of a converged solution, in weight units.
    fn predicted_cost(&self, sol: &TpbvpSolution) -> f64 {
        let c = &self.config;
        let w = c.si_weights();
        let sigma = pmp::costate_scale(&w, c.tp);
        let states: Vec<RelativeState> = sol
            .values
            .iter()
            .map(|y| pmp::RendezvousTpbvp::state(y.as_slice()))
            .collect();
        let controls: Vec<Vec3> = sol
            .values
            .iter()
            .map(|y| pmp::optimal_control(&(Costate::from_slice(&y.as_slice()[6..12]) * sigma), &w, c.u_max))
            .collect();
        let j_si = pmp::trajectory_cost(&sol.mesh, &states, &controls, &w, &c.reference);
        j_si * c.weight_units.time_s / c.weight_units.length_m
    }
}

/// Run termination rule: maximum duration, or all tracking errors inside
/// the box at a sampling instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StopCriteria {
    pub max_duration_s: f64,
    pub position_box_m: [f64; 3],
    pub velocity_box_mps: f64,
    pub use_box: bool,
}

impl Default for StopCriteria {
    fn default() -> Self {
        Self {
            max_duration_s: 4.0 * 3600.0,
            position_box_m: [1.0, 0.01, 0.01],
            velocity_box_mps: 0.01,
            use_box: true,
        }
    }
}

impl StopCriteria {
    pub fn inside_box(&self, x: &RelativeState, reference: &RelativeState) -> bool {
        let dr = x.rho - reference.rho;
        let dv = x.rho_dot - reference.rho_dot;
        (0..3).all(|i| dr[i].abs() < self.position_box_m[i] && dv[i].abs() < self.velocity_box_mps)
    }
}

#[derive(Debug, Clone)]
pub struct ClosedLoopSetup {
    /// Initial relative state, m and m/s.
    pub x0: RelativeState,
    /// Normalized epoch of the first sample.
    pub start_epoch: f64,
    pub stop: StopCriteria,
    pub plant: IntegratorSettings,
    pub plant_mask: TermMask,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogRow {
    pub t_s: f64,
    pub rho_m: [f64; 3],
    pub v_mps: [f64; 3],
    pub u_mps2: [f64; 3],
    pub u_norm_mps2: f64,
    pub upsilon: f64,
    pub cost: f64,
    pub impulse_mps: f64,
}

pub const CSV_HEADER: &str = "t_s,rho_x_m,rho_y_m,rho_z_m,v_x_mps,v_y_mps,v_z_mps,u_x_mps2,u_y_mps2,u_z_mps2,u_norm_mps2,upsilon,cost,impulse_mps";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Termination {
    Converged,
    MaxDuration,
    Failed(String),
}

#[derive(Debug, Clone)]
pub struct RunLog {
    pub rows: Vec<LogRow>,
    pub reference: RelativeState,
    pub u_max: f64,
    pub termination: Termination,
    pub degraded_steps: usize,
    pub diagnostics: Vec<String>,
    pub step_wall_s: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub termination: Termination,
    pub samples: usize,
    pub duration_s: f64,
    pub final_position_error_m: [f64; 3],
    pub final_velocity_error_mps: [f64; 3],
    pub impulse_mps: f64,
    pub thrust_samples: usize,
    pub degraded_steps: usize,
    pub wall_clock_mean_step_s: f64,
    pub wall_clock_max_step_s: f64,
}

impl RunLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.rows.len() * 200);
        s.push_str(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let fields = [
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
            ];
            let line: Vec<String> = fields.iter().map(|v| format!("{v:e}")).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        s
    }

    pub fn final_row(&self) -> Option<&LogRow> {
        self.rows.last()
    }

    pub fn impulse(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.impulse_mps)
    }

    pub fn summary(&self) -> RunSummary {
        let last = self.rows.last();
        let err = |f: &dyn Fn(&LogRow) -> [f64; 3], refv: Vec3| {
            last.map_or([f64::NAN; 3], |r| {
                let v = f(r);
                [v[0] - refv[0], v[1] - refv[1], v[2] - refv[2]]
            })
        };
        let n = self.step_wall_s.len().max(1) as f64;
        RunSummary {
            termination: self.termination.clone(),
            samples: self.rows.len(),
            duration_s: last.map_or(0.0, |r| r.t_s),
            final_position_error_m: err(&|r| r.rho_m, self.reference.rho),
            final_velocity_error_mps: err(&|r| r.v_mps, self.reference.rho_dot),
            impulse_mps: self.impulse(),
            thrust_samples: self.rows.iter().filter(|r| r.u_norm_mps2 > 0.0).count(),
            degraded_steps: self.degraded_steps,
            wall_clock_mean_step_s: self.step_wall_s.iter().sum::<f64>() / n,
            wall_clock_max_step_s: self.step_wall_s.iter().copied().fold(0.0, f64::max),
        }
    }
}

/// Closed loop on the full time-varying plant. The last row is the state
/// at termination with the controller evaluated there but not applied.
pub fn run_closed_loop(
    setup: &ClosedLoopSetup,
    orbit: &PeriodicOrbit,
    sys: &Cr3bpSystem,
    config: &NmpcConfig,
) -> Result<RunLog> {
    let mut ctrl = NmpcController::new(config.clone(), orbit, sys)?;
    let l = sys.length_unit_m();
    let tu = sys.time_unit_s();
    let ts = config.ts;
    let max_steps = (setup.stop.max_duration_s / ts).round() as usize;
    let mut log = RunLog {
        rows: Vec::with_capacity(max_steps + 1),
        reference: config.reference,
        u_max: config.u_max,
        termination: Termination::MaxDuration,
        degraded_steps: 0,
        diagnostics: Vec::new(),
        step_wall_s: Vec::with_capacity(max_steps + 1),
    };
    let mut x = RelativeState::new(setup.x0.rho, setup.x0.rho_dot, 0.0);
    let mut impulse = 0.0;
    for k in 0..=max_steps {
        let t_s = k as f64 * ts;
        let epoch = setup.start_epoch + t_s / tu;
        let clock = Instant::now();
        let outcome = match ctrl.step(&x, epoch) {
            Ok(o) => o,
            Err(e) => {
                log.termination = Termination::Failed(e.to_string());
                return Ok(log);
            }
        };
        log.step_wall_s.push(clock.elapsed().as_secs_f64());
        if outcome.degraded {
            log.degraded_steps += 1;
        }
        if let Some(d) = outcome.diagnostic {
            log.diagnostics.push(d);
        }
        let u = outcome.sample.u;
        // Commanded magnitude; the vector norm can differ from u_max in the last bit.
        let u_mag = if u == Vec3::zeros() { 0.0 } else { config.u_max };
        log.rows.push(LogRow {
            t_s,
            rho_m: x.rho.into(),
            v_mps: x.rho_dot.into(),
            u_mps2: u.into(),
            u_norm_mps2: u_mag,
            upsilon: outcome.sample.switching_value,
            cost: outcome.predicted_cost,
            impulse_mps: impulse,
        });
        if k > 0 && setup.stop.use_box && setup.stop.inside_box(&x, &config.reference) {
            log.termination = Termination::Converged;
            return Ok(log);
        }
        if k == max_steps {
            break;
        }
        // Apply the sample on [t_k, t_k + Ts) to the plant, normalized units.
        let x_norm = RelativeState::new(x.rho / l, x.rho_dot * (tu / l), epoch);
        let u_norm = u * (tu * tu / l);
        let model = RelativeModel::Plant {
            orbit,
            sys,
            mask: setup.plant_mask,
        };
        let control = PiecewiseControl::constant(epoch, u_norm);
        let next = match propagate_relative(&model, &x_norm, &control, ts / tu, &setup.plant) {
            Ok(tr) => tr.final_state(),
            Err(e) => {
                log.termination = Termination::Failed(e.to_string());
                return Ok(log);
            }
        };
        x = RelativeState::new(next.rho * l, next.rho_dot * (l / tu), 0.0);
        impulse += u_mag * ts;
    }
    Ok(log)
}

/// Integrator settings used for the plant unless a scenario overrides them.
pub fn default_plant_settings() -> IntegratorSettings {
    IntegratorSettings {
        rtol: 1e-11,
        atol: 1e-16,
        ..IntegratorSettings::default()
    }
}
