//! Two-point boundary value problems with separated boundary conditions,
//! solved by three-stage Lobatto IIIA collocation (Simpson's rule with a
//! cubic Hermite interpolant) on an adaptively refined mesh.
//!
//! Each mesh pass runs a damped Newton iteration on the global collocation
//! system, whose Jacobian is block bidiagonal and is factored as a band
//! matrix. The continuous residual `S'(t) - f(t, S(t))` of the interpolant
//! is then sampled at the interior Lobatto points of every interval and the
//! intervals that exceed the tolerance are subdivided.

mod band;

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub use band::{BandLu, BandMatrix, SingularPivot};

/// A boundary value problem `y' = f(t, y)` on `[a, b]` with
/// `g_a(y(a)) = 0` (`left_count` equations) and `g_b(y(b)) = 0` (the rest).
pub trait Tpbvp {
    fn dim(&self) -> usize;
    fn left_count(&self) -> usize;
    fn span(&self) -> (f64, f64);
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]);

    /// Writes `df/dy` into `jac` and returns `true`; the default asks the
    /// solver to difference [`Tpbvp::rhs`] instead.
    fn jacobian(&self, _t: f64, _y: &[f64], _jac: &mut DMatrix<f64>) -> bool {
        false
    }

    fn left_residual(&self, ya: &[f64], out: &mut [f64]);
    fn right_residual(&self, yb: &[f64], out: &mut [f64]);
}

type RhsFn = Box<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
type BcFn = Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Closure-backed problem, mostly for tests and small scripts.
pub struct FnTpbvp {
    dim: usize,
    left_count: usize,
    span: (f64, f64),
    rhs: RhsFn,
    left: BcFn,
    right: BcFn,
}

impl FnTpbvp {
    pub fn new(
        dim: usize,
        left_count: usize,
        span: (f64, f64),
        rhs: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
        left: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        right: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            left_count,
            span,
            rhs: Box::new(rhs),
            left: Box::new(left),
            right: Box::new(right),
        }
    }
}

impl Tpbvp for FnTpbvp {
    fn dim(&self) -> usize {
        self.dim
    }
    fn left_count(&self) -> usize {
        self.left_count
    }
    fn span(&self) -> (f64, f64) {
        self.span
    }
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        (self.rhs)(t, y, dy)
    }
    fn left_residual(&self, ya: &[f64], out: &mut [f64]) {
        (self.left)(ya, out)
    }
    fn right_residual(&self, yb: &[f64], out: &mut [f64]) {
        (self.right)(yb, out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BvpSettings {
    /// Bound on the scaled continuous residual `|r_k| / (1 + |f_k|)`.
    pub tolerance: f64,
    pub max_mesh_points: usize,
    pub max_newton_iterations: usize,
    pub max_refinements: usize,
    /// Record mesh sizes and Newton residuals in [`TpbvpSolution::trace`].
    pub verbose: bool,
}

impl Default for BvpSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_mesh_points: 5000,
            max_newton_iterations: 40,
            max_refinements: 40,
            verbose: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Guess {
    pub mesh: Vec<f64>,
    pub values: Vec<DVector<f64>>,
}

impl Guess {
    pub fn from_fn(span: (f64, f64), points: usize, f: impl Fn(f64) -> DVector<f64>) -> Self {
        let points = points.max(2);
        let mesh: Vec<f64> = (0..points)
            .map(|i| span.0 + (span.1 - span.0) * i as f64 / (points - 1) as f64)
            .collect();
        let values = mesh.iter().map(|&t| f(t)).collect();
        Self { mesh, values }
    }

    pub fn constant(span: (f64, f64), points: usize, y: DVector<f64>) -> Self {
        Self::from_fn(span, points, |_| y.clone())
    }

    pub fn from_solution(sol: &TpbvpSolution) -> Self {
        Self {
            mesh: sol.mesh.clone(),
            values: sol.values.clone(),
        }
    }

    /// Previous solution advanced by `dt` onto `span`.
    pub fn shifted(sol: &TpbvpSolution, dt: f64, span: (f64, f64)) -> Self {
        let old_end = *sol.mesh.last().expect("non-empty mesh");
        let mut mesh: Vec<f64> = sol
            .mesh
            .iter()
            .map(|&t| t - dt)
            .filter(|&t| t > span.0 && t < span.1)
            .collect();
        mesh.insert(0, span.0);
        // Pad the uncovered tail with the old spacing.
        let spacing = (span.1 - span.0) / sol.mesh.len().max(2) as f64;
        let mut t = mesh.last().copied().unwrap_or(span.0);
        while span.1 - t > 1.5 * spacing {
            t += spacing;
            mesh.push(t);
        }
        mesh.push(span.1);
        // Linear extrapolation along the end slope past the old span.
        let values = mesh
            .iter()
            .map(|&t| {
                let s = t + dt;
                if s <= old_end {
                    sol.eval(s)
                } else {
                    sol.end() + sol.slopes.last().expect("non-empty mesh") * (s - old_end)
                }
            })
            .collect();
        Self { mesh, values }
    }
}

#[derive(Debug, Clone)]
pub struct TpbvpSolution {
    pub mesh: Vec<f64>,
    pub values: Vec<DVector<f64>>,
    pub slopes: Vec<DVector<f64>>,
    /// Max scaled continuous residual over the mesh.
    pub residual_norm: f64,
    pub newton_iterations: usize,
    pub trace: Vec<String>,
}

impl TpbvpSolution {
    fn interval(&self, t: f64) -> usize {
        self.mesh
            .partition_point(|&m| m <= t)
            .saturating_sub(1)
            .min(self.mesh.len() - 2)
    }

    /// Cubic Hermite interpolant (the collocation polynomial).
    pub fn eval(&self, t: f64) -> DVector<f64> {
        let i = self.interval(t);
        let h = self.mesh[i + 1] - self.mesh[i];
        let s = (t - self.mesh[i]) / h;
        let (s2, s3) = (s * s, s * s * s);
        &self.values[i] * (2.0 * s3 - 3.0 * s2 + 1.0)
            + &self.slopes[i] * (h * (s3 - 2.0 * s2 + s))
            + &self.values[i + 1] * (-2.0 * s3 + 3.0 * s2)
            + &self.slopes[i + 1] * (h * (s3 - s2))
    }

    pub fn eval_derivative(&self, t: f64) -> DVector<f64> {
        let i = self.interval(t);
        let h = self.mesh[i + 1] - self.mesh[i];
        let s = (t - self.mesh[i]) / h;
        let s2 = s * s;
        (&self.values[i] * (6.0 * s2 - 6.0 * s) + &self.values[i + 1] * (6.0 * s - 6.0 * s2)) / h
            + &self.slopes[i] * (3.0 * s2 - 4.0 * s + 1.0)
            + &self.slopes[i + 1] * (3.0 * s2 - 2.0 * s)
    }

    pub fn start(&self) -> &DVector<f64> {
        &self.values[0]
    }

    pub fn end(&self) -> &DVector<f64> {
        self.values.last().expect("non-empty mesh")
    }
}

#[derive(Debug, Error)]
pub enum BvpError {
    #[error("Newton iteration diverged after {iterations} iterations (residual {residual:e})")]
    NewtonDivergence {
        iterations: usize,
        residual: f64,
        last: Box<TpbvpSolution>,
    },
    #[error("mesh budget of {max_points} points exhausted (residual {residual:e})")]
    MeshBudget {
        max_points: usize,
        residual: f64,
        last: Box<TpbvpSolution>,
    },
    #[error("collocation Jacobian is singular at unknown {column}")]
    SingularJacobian { column: usize, last: Box<TpbvpSolution> },
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("continuation failed at epsilon = {epsilon:e}: {source}")]
    Continuation {
        epsilon: f64,
        #[source]
        source: Box<BvpError>,
    },
}

impl BvpError {
    /// Last iterate carried by the error, usable as a warm start.
    pub fn last_iterate(&self) -> Option<&TpbvpSolution> {
        match self {
            BvpError::NewtonDivergence { last, .. }
            | BvpError::MeshBudget { last, .. }
            | BvpError::SingularJacobian { last, .. } => Some(last),
            BvpError::Continuation { source, .. } => source.last_iterate(),
            BvpError::InvalidProblem(_) => None,
        }
    }
}

/// Adjacent intervals below this fraction of the tolerance are merged.
const COARSEN_FRACTION: f64 = 0.02;

/// Smallest Newton damping factor tried by the line search.
const MIN_DAMPING: f64 = 1.0 / 65536.0;

/// Interior Lobatto points where the Simpson interpolant is not collocated.
const SAMPLE_POINTS: [f64; 2] = [0.172_673_164_646_011_44, 0.827_326_835_353_988_6];

struct Collocation<'a, P: Tpbvp + ?Sized> {
    problem: &'a P,
    n: usize,
    na: usize,
    settings: &'a BvpSettings,
    trace: Vec<String>,
    newton_total: usize,
}

struct Iterate {
    mesh: Vec<f64>,
    y: Vec<DVector<f64>>,
}

impl<'a, P: Tpbvp + ?Sized> Collocation<'a, P> {
    fn f(&self, t: f64, y: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n);
        self.problem.rhs(t, y.as_slice(), out.as_mut_slice());
        out
    }

    fn jac(&self, t: f64, y: &DVector<f64>, fy: &DVector<f64>) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(self.n, self.n);
        if self.problem.jacobian(t, y.as_slice(), &mut jac) {
            return jac;
        }
        let mut yp = y.clone();
        for j in 0..self.n {
            let dh = f64::EPSILON.sqrt() * y[j].abs().max(1.0);
            yp[j] = y[j] + dh;
            let fp = self.f(t, &yp);
            jac.set_column(j, &((fp - fy) / dh));
            yp[j] = y[j];
        }
        jac
    }

    fn bc(&self, ya: &DVector<f64>, yb: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let mut ra = DVector::zeros(self.na);
        let mut rb = DVector::zeros(self.n - self.na);
        self.problem.left_residual(ya.as_slice(), ra.as_mut_slice());
        self.problem.right_residual(yb.as_slice(), rb.as_mut_slice());
        (ra, rb)
    }

    fn bc_jacobians(&self, ya: &DVector<f64>, yb: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let (ra, rb) = self.bc(ya, yb);
        let mut ja = DMatrix::zeros(self.na, self.n);
        let mut jb = DMatrix::zeros(self.n - self.na, self.n);
        let mut y = ya.clone();
        for j in 0..self.n {
            let dh = f64::EPSILON.sqrt() * ya[j].abs().max(1.0);
            y[j] = ya[j] + dh;
            let (rp, _) = self.bc(&y, yb);
            ja.set_column(j, &((rp - &ra) / dh));
            y[j] = ya[j];
        }
        let mut y = yb.clone();
        for j in 0..self.n {
            let dh = f64::EPSILON.sqrt() * yb[j].abs().max(1.0);
            y[j] = yb[j] + dh;
            let (_, rp) = self.bc(ya, &y);
            jb.set_column(j, &((rp - &rb) / dh));
            y[j] = yb[j];
        }
        (ja, jb)
    }

    /// Residual vector ordered `[g_a; Phi_0/h_0; ...; g_b]` and node slopes.
    fn residual(&self, it: &Iterate) -> (Vec<f64>, Vec<DVector<f64>>) {
        let n = self.n;
        let m = it.mesh.len();
        let fs: Vec<DVector<f64>> = it.mesh.iter().zip(&it.y).map(|(&t, y)| self.f(t, y)).collect();
        let mut out = Vec::with_capacity(m * n);
        let (ra, rb) = self.bc(&it.y[0], &it.y[m - 1]);
        out.extend(ra.iter());
        for i in 0..m - 1 {
            let h = it.mesh[i + 1] - it.mesh[i];
            let ym = (&it.y[i] + &it.y[i + 1]) * 0.5 - (&fs[i + 1] - &fs[i]) * (h / 8.0);
            let fm = self.f(it.mesh[i] + 0.5 * h, &ym);
            let phi = (&it.y[i + 1] - &it.y[i]) / h - (&fs[i] + fm * 4.0 + &fs[i + 1]) / 6.0;
            out.extend(phi.iter());
        }
        out.extend(rb.iter());
        (out, fs)
    }

    fn weights(&self, fs: &[DVector<f64>]) -> Vec<f64> {
        let n = self.n;
        let m = fs.len();
        let mut w = Vec::with_capacity(m * n);
        w.extend(std::iter::repeat_n(1.0, self.na));
        for i in 0..m - 1 {
            for k in 0..n {
                w.push(1.0 / (1.0 + 0.5 * (fs[i][k].abs() + fs[i + 1][k].abs())));
            }
        }
        w.extend(std::iter::repeat_n(1.0, n - self.na));
        w
    }

    fn assemble(&self, it: &Iterate, fs: &[DVector<f64>]) -> BandMatrix {
        let n = self.n;
        let na = self.na;
        let m = it.mesh.len();
        let size = m * n;
        let kl = na + n - 1;
        let ku = 2 * n - 1 - na;
        let mut a = BandMatrix::zeros(size, kl, ku);
        let (ja, jb) = self.bc_jacobians(&it.y[0], &it.y[m - 1]);
        for r in 0..na {
            for c in 0..n {
                a.set(r, c, ja[(r, c)]);
            }
        }
        let eye = DMatrix::<f64>::identity(n, n);
        let mut j_left = self.jac(it.mesh[0], &it.y[0], &fs[0]);
        for i in 0..m - 1 {
            let h = it.mesh[i + 1] - it.mesh[i];
            let j_right = self.jac(it.mesh[i + 1], &it.y[i + 1], &fs[i + 1]);
            let ym = (&it.y[i] + &it.y[i + 1]) * 0.5 - (&fs[i + 1] - &fs[i]) * (h / 8.0);
            let tm = it.mesh[i] + 0.5 * h;
            let fm = self.f(tm, &ym);
            let jm = self.jac(tm, &ym, &fm);
            let dym_left = &eye * 0.5 + &j_left * (h / 8.0);
            let dym_right = &eye * 0.5 - &j_right * (h / 8.0);
            let d_left = -&eye / h - (&j_left + &jm * dym_left * 4.0) / 6.0;
            let d_right = &eye / h - (&j_right + &jm * dym_right * 4.0) / 6.0;
            let row0 = na + i * n;
            for r in 0..n {
                for c in 0..n {
                    a.set(row0 + r, i * n + c, d_left[(r, c)]);
                    a.set(row0 + r, (i + 1) * n + c, d_right[(r, c)]);
                }
            }
            j_left = j_right;
        }
        let row0 = na + (m - 1) * n;
        for r in 0..n - na {
            for c in 0..n {
                a.set(row0 + r, (m - 1) * n + c, jb[(r, c)]);
            }
        }
        a
    }

    fn merit(res: &[f64], w: &[f64]) -> f64 {
        res.iter().zip(w).map(|(r, w)| (r * w).powi(2)).sum::<f64>()
    }

    fn max_scaled(res: &[f64], w: &[f64]) -> f64 {
        res.iter().zip(w).fold(0.0, |acc, (r, w)| acc.max((r * w).abs()))
    }

    fn snapshot(&self, it: &Iterate, residual_norm: f64) -> TpbvpSolution {
        let slopes = it.mesh.iter().zip(&it.y).map(|(&t, y)| self.f(t, y)).collect();
        TpbvpSolution {
            mesh: it.mesh.clone(),
            values: it.y.clone(),
            slopes,
            residual_norm,
            newton_iterations: self.newton_total,
            trace: self.trace.clone(),
        }
    }

    fn newton(&mut self, it: &mut Iterate) -> Result<(), BvpError> {
        let tol = self.settings.tolerance * 1e-1;
        let (mut res, mut fs) = self.residual(it);
        for iter in 0..self.settings.max_newton_iterations {
            let w = self.weights(&fs);
            let norm = Self::max_scaled(&res, &w);
            if self.settings.verbose {
                self.trace.push(format!(
                    "  mesh {:5} newton {:2} residual {:.3e}",
                    it.mesh.len(),
                    iter,
                    norm
                ));
            }
            if norm <= tol {
                return Ok(());
            }
            let lu = match self.assemble(it, &fs).factor() {
                Ok(lu) => lu,
                Err(SingularPivot { column }) => {
                    return Err(BvpError::SingularJacobian {
                        column,
                        last: Box::new(self.snapshot(it, norm)),
                    })
                }
            };
            let mut step: Vec<f64> = res.iter().map(|r| -r).collect();
            lu.solve_in_place(&mut step);
            self.newton_total += 1;

            let merit0 = Self::merit(&res, &w);
            let mut lambda = 1.0;
            let mut accepted = false;
            while lambda >= MIN_DAMPING {
                let trial = Iterate {
                    mesh: it.mesh.clone(),
                    y: it
                        .y
                        .iter()
                        .enumerate()
                        .map(|(i, y)| y + DVector::from_column_slice(&step[i * self.n..(i + 1) * self.n]) * lambda)
                        .collect(),
                };
                let (r_trial, f_trial) = self.residual(&trial);
                let m_trial = Self::merit(&r_trial, &w);
                if m_trial.is_finite() && m_trial <= (1.0 - 1e-4 * lambda) * merit0 {
                    *it = trial;
                    res = r_trial;
                    fs = f_trial;
                    accepted = true;
                    break;
                }
                lambda *= 0.5;
            }
            if !accepted {
                // Stalling below the tolerance, or with a negligible step, means the
                // roundoff floor is reached.
                let step_size = step.iter().fold(0.0f64, |a, s| a.max(s.abs()));
                let scale = it.y.iter().fold(1.0f64, |a, y| a.max(y.amax()));
                if step_size <= 1e-13 * scale || norm <= self.settings.tolerance {
                    return Ok(());
                }
                return Err(BvpError::NewtonDivergence {
                    iterations: iter + 1,
                    residual: norm,
                    last: Box::new(self.snapshot(it, norm)),
                });
            }
        }
        let w = self.weights(&fs);
        let norm = Self::max_scaled(&res, &w);
        if norm <= tol * 1e2 {
            return Ok(());
        }
        Err(BvpError::NewtonDivergence {
            iterations: self.settings.max_newton_iterations,
            residual: norm,
            last: Box::new(self.snapshot(it, norm)),
        })
    }

    /// Scaled continuous residual per interval.
    fn interval_residuals(&self, sol: &TpbvpSolution) -> Vec<f64> {
        let m = sol.mesh.len();
        (0..m - 1)
            .map(|i| {
                let h = sol.mesh[i + 1] - sol.mesh[i];
                SAMPLE_POINTS
                    .iter()
                    .map(|&s| {
                        let t = sol.mesh[i] + s * h;
                        let y = sol.eval(t);
                        let dy = sol.eval_derivative(t);
                        let f = self.f(t, &y);
                        (0..self.n)
                            .map(|k| (dy[k] - f[k]).abs() / (1.0 + f[k].abs()))
                            .fold(0.0, f64::max)
                    })
                    .fold(0.0, f64::max)
            })
            .collect()
    }
}

/// Solves `problem` starting from `guess`.
pub fn solve<P: Tpbvp + ?Sized>(problem: &P, guess: &Guess, settings: &BvpSettings) -> Result<TpbvpSolution, BvpError> {
    let n = problem.dim();
    let na = problem.left_count();
    let (a, b) = problem.span();
    if n == 0 || na > n {
        return Err(BvpError::InvalidProblem(format!(
            "dimension {n} with {na} left conditions"
        )));
    }
    if !(b > a) {
        return Err(BvpError::InvalidProblem(format!("degenerate span [{a}, {b}]")));
    }
    if guess.mesh.len() < 2
        || guess.mesh.len() != guess.values.len()
        || guess.values.iter().any(|v| v.len() != n)
        || guess.mesh.windows(2).any(|w| !(w[1] > w[0]))
    {
        return Err(BvpError::InvalidProblem("malformed initial guess".into()));
    }
    let mut ctx = Collocation {
        problem,
        n,
        na,
        settings,
        trace: Vec::new(),
        newton_total: 0,
    };
    // Map the guess mesh onto the problem span.
    let (g0, g1) = (guess.mesh[0], *guess.mesh.last().unwrap());
    let mut it = Iterate {
        mesh: guess.mesh.iter().map(|&t| a + (t - g0) * (b - a) / (g1 - g0)).collect(),
        y: guess.values.clone(),
    };
    let mut coarsened = false;
    for pass in 0..=settings.max_refinements {
        ctx.newton(&mut it)?;
        let mut sol = ctx.snapshot(&it, 0.0);
        let residuals = ctx.interval_residuals(&sol);
        let worst = residuals.iter().copied().fold(0.0, f64::max);
        sol.residual_norm = worst;
        if settings.verbose {
            let mut line = String::new();
            let _ = write!(line, "pass {pass}: {} points, max residual {worst:.3e}", it.mesh.len());
            ctx.trace.push(line);
            sol.trace = ctx.trace.clone();
        }
        let tol = settings.tolerance;
        let removable = |i: usize| residuals[i - 1] < tol * COARSEN_FRACTION && residuals[i] < tol * COARSEN_FRACTION;
        if worst <= tol {
            // One extra pass is spent on shedding a mostly over-resolved mesh.
            let spare = (1..residuals.len()).filter(|&i| removable(i)).count();
            if coarsened || spare * 4 < it.mesh.len() {
                return Ok(sol);
            }
            coarsened = true;
        }
        let mut mesh = Vec::with_capacity(it.mesh.len() * 2);
        let mut values = Vec::with_capacity(it.mesh.len() * 2);
        let mut dropped_previous = false;
        for (i, &r) in residuals.iter().enumerate() {
            let (t0, t1) = (it.mesh[i], it.mesh[i + 1]);
            if i > 0 && !dropped_previous && removable(i) {
                dropped_previous = true;
            } else {
                mesh.push(t0);
                values.push(it.y[i].clone());
                dropped_previous = false;
            }
            let inserts = if r > 100.0 * tol {
                2
            } else if r > tol {
                1
            } else {
                0
            };
            for k in 1..=inserts {
                let t = t0 + (t1 - t0) * k as f64 / (inserts + 1) as f64;
                mesh.push(t);
                values.push(sol.eval(t));
            }
        }
        mesh.push(*it.mesh.last().unwrap());
        values.push(it.y.last().unwrap().clone());
        if mesh.len() > settings.max_mesh_points {
            return Err(BvpError::MeshBudget {
                max_points: settings.max_mesh_points,
                residual: worst,
                last: Box::new(sol),
            });
        }
        it = Iterate { mesh, y: values };
    }
    let sol = ctx.snapshot(&it, f64::INFINITY);
    Err(BvpError::MeshBudget {
        max_points: settings.max_mesh_points,
        residual: f64::INFINITY,
        last: Box::new(sol),
    })
}

/// Solves along a decreasing smoothing schedule, warm-starting each stage.
/// A failed stage is retried after inserting the geometric midpoint between
/// it and the last converged value (up to `max_bisections` times).
pub fn continuation_solve<P, F>(
    make: F,
    guess: &Guess,
    schedule: &[f64],
    settings: &BvpSettings,
    max_bisections: usize,
) -> Result<TpbvpSolution, BvpError>
where
    P: Tpbvp,
    F: Fn(f64) -> P,
{
    if schedule.is_empty() {
        return Err(BvpError::InvalidProblem("empty continuation schedule".into()));
    }
    let mut current = guess.clone();
    let mut last_eps: Option<f64> = None;
    let mut best: Option<TpbvpSolution> = None;
    let mut pending: Vec<f64> = schedule.iter().rev().copied().collect();
    let mut bisections = 0;
    while let Some(eps) = pending.pop() {
        match solve(&make(eps), &current, settings) {
            Ok(sol) => {
                current = Guess::from_solution(&sol);
                last_eps = Some(eps);
                best = Some(sol);
            }
            Err(err) => {
                let Some(prev) = last_eps else {
                    return Err(BvpError::Continuation {
                        epsilon: eps,
                        source: Box::new(err),
                    });
                };
                if bisections >= max_bisections {
                    return Err(BvpError::Continuation {
                        epsilon: eps,
                        source: Box::new(err),
                    });
                }
                bisections += 1;
                pending.push(eps);
                pending.push((prev * eps).sqrt());
            }
        }
    }
    Ok(best.expect("schedule is non-empty"))
}
