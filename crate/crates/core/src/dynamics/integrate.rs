//! Adaptive time integration for controlled systems.
//!
//! Two steppers are available:
//!
//! * an L-stable, stiffly accurate five-stage SDIRK method of order 4 with an
//!   embedded order-3 solution (Hairer & Wanner's SDIRK4, `gamma = 1/4`),
//!   solved by simplified Newton iterations on a finite-difference Jacobian.
//!   The local error estimate is filtered through `(I - h gamma J)^-1` so that
//!   stiff components do not force tiny steps;
//! * the explicit Dormand-Prince 5(4) pair.
//!
//! Steps are truncated so that every requested sample time is hit exactly.

use nalgebra::{DMatrix, DVector, LU};

use crate::dynamics::ControlledSystem;
use crate::error::{Error, Result};

/// Stepper selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    StiffImplicit,
    ExplicitAdaptive,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub method: Method,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-12,
            abs_tol: 1e-12,
            max_step: 0.1,
            method: Method::StiffImplicit,
        }
    }
}

impl IntegratorConfig {
    pub fn with_tolerances(rel_tol: f64, abs_tol: f64) -> Self {
        Self {
            rel_tol,
            abs_tol,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tolerances must be positive (rel {}, abs {})",
                self.rel_tol, self.abs_tol
            )));
        }
        if !(self.max_step > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "max_step must be positive, got {}",
                self.max_step
            )));
        }
        Ok(())
    }
}

/// A control signal. Open-loop signals ignore the state; feedback laws use it.
pub trait ControlLaw: Sync {
    fn control(&self, t: f64, y: &[f64]) -> f64;
}

impl<F> ControlLaw for F
where
    F: Fn(f64, &[f64]) -> f64 + Sync,
{
    fn control(&self, t: f64, y: &[f64]) -> f64 {
        self(t, y)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantControl(pub f64);

impl ControlLaw for ConstantControl {
    fn control(&self, _t: f64, _y: &[f64]) -> f64 {
        self.0
    }
}

/// Control given as a function of time only.
pub struct OpenLoop<F>(pub F);

impl<F: Fn(f64) -> f64 + Sync> ControlLaw for OpenLoop<F> {
    fn control(&self, t: f64, _y: &[f64]) -> f64 {
        (self.0)(t)
    }
}

/// Sampled solution of a controlled system.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<f64>,
    pub derivatives: Option<Vec<Vec<f64>>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> &[f64] {
        self.states.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Integrate `y' = f(y, control(t, y))` and return the solution at
/// `sample_times`.
///
/// Derivatives, when requested, are evaluated from the right-hand side at the
/// sampled states.
pub fn integrate(
    sys: &ControlledSystem,
    y0: &[f64],
    control: &dyn ControlLaw,
    t_span: (f64, f64),
    cfg: &IntegratorConfig,
    sample_times: &[f64],
    with_derivatives: bool,
) -> Result<Trajectory> {
    cfg.validate()?;
    let n = sys.dim();
    if y0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: y0.len(),
        });
    }
    let (t0, t1) = t_span;
    if !(t0 <= t1) {
        return Err(Error::InvalidArgument(format!(
            "time span [{t0}, {t1}] is reversed"
        )));
    }
    let slack = 1e-12 * (1.0 + t0.abs().max(t1.abs()));
    for w in sample_times.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::InvalidArgument(
                "sample times must be strictly increasing".into(),
            ));
        }
    }
    if let (Some(first), Some(last)) = (sample_times.first(), sample_times.last()) {
        if *first < t0 - slack || *last > t1 + slack {
            return Err(Error::InvalidArgument(format!(
                "sample times [{first}, {last}] leave the span [{t0}, {t1}]"
            )));
        }
    }

    let rhs = |t: f64, y: &[f64], out: &mut [f64]| {
        let u = control.control(t, y);
        sys.rhs_into(y, u, out);
    };

    let mut traj = Trajectory {
        times: Vec::with_capacity(sample_times.len()),
        states: Vec::with_capacity(sample_times.len()),
        controls: Vec::with_capacity(sample_times.len()),
        derivatives: with_derivatives.then(Vec::new),
    };
    let mut record = |t: f64, y: &[f64]| {
        let u = control.control(t, y);
        traj.times.push(t);
        traj.states.push(y.to_vec());
        traj.controls.push(u);
        if let Some(d) = traj.derivatives.as_mut() {
            d.push(sys.rhs(y, u));
        }
    };

    let mut stepper = Stepper::new(cfg, n);
    let mut t = t0;
    let mut y = y0.to_vec();
    for &ts in sample_times {
        if ts - t > slack {
            stepper.advance(&rhs, &mut t, &mut y, ts)?;
        }
        record(ts, &y);
    }
    Ok(traj)
}

// Hairer & Wanner, Solving ODEs II, Table IV.6.5 (SDIRK4, first variant).
const SDIRK_GAMMA: f64 = 0.25;
pub(crate) const SDIRK_A: [[f64; 5]; 5] = [
    [0.25, 0.0, 0.0, 0.0, 0.0],
    [0.5, 0.25, 0.0, 0.0, 0.0],
    [17.0 / 50.0, -1.0 / 25.0, 0.25, 0.0, 0.0],
    [371.0 / 1360.0, -137.0 / 2720.0, 15.0 / 544.0, 0.25, 0.0],
    [25.0 / 24.0, -49.0 / 48.0, 125.0 / 16.0, -85.0 / 12.0, 0.25],
];
pub(crate) const SDIRK_C: [f64; 5] = [0.25, 0.75, 11.0 / 20.0, 0.5, 1.0];
pub(crate) const SDIRK_B: [f64; 5] = [25.0 / 24.0, -49.0 / 48.0, 125.0 / 16.0, -85.0 / 12.0, 0.25];
pub(crate) const SDIRK_BHAT: [f64; 5] = [59.0 / 48.0, -17.0 / 96.0, 225.0 / 32.0, -85.0 / 12.0, 0.0];

const DP_C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DP_E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const MAX_STEPS: usize = 5_000_000;
const MAX_NEWTON: usize = 8;
const SAFETY: f64 = 0.9;

struct Stepper {
    rel_tol: f64,
    abs_tol: f64,
    max_step: f64,
    method: Method,
    h: Option<f64>,
    n: usize,
    steps: usize,
}

enum Attempt {
    Accepted { y_new: Vec<f64>, err: f64 },
    Rejected { err: f64 },
    NewtonFailure,
}

impl Stepper {
    fn new(cfg: &IntegratorConfig, n: usize) -> Self {
        Self {
            rel_tol: cfg.rel_tol,
            abs_tol: cfg.abs_tol,
            max_step: cfg.max_step,
            method: cfg.method,
            h: None,
            n,
            steps: 0,
        }
    }

    fn scaled_norm(&self, v: &[f64], y: &[f64], y_new: &[f64]) -> f64 {
        let sum: f64 = v
            .iter()
            .zip(y.iter().zip(y_new))
            .map(|(e, (a, b))| {
                let sc = self.abs_tol + self.rel_tol * a.abs().max(b.abs());
                (e / sc).powi(2)
            })
            .sum();
        (sum / v.len() as f64).sqrt()
    }

    fn initial_step<F>(&self, f: &F, t: f64, y: &[f64], span: f64) -> f64
    where
        F: Fn(f64, &[f64], &mut [f64]),
    {
        let mut f0 = vec![0.0; self.n];
        f(t, y, &mut f0);
        let d0 = self.scaled_norm(y, y, y);
        let d1 = self.scaled_norm(&f0, y, y);
        let order = match self.method {
            Method::StiffImplicit => 4.0,
            Method::ExplicitAdaptive => 5.0,
        };
        let h0 = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        };
        // one explicit Euler probe to estimate the second derivative
        let h0 = h0.min(span).min(self.max_step);
        let y1: Vec<f64> = y.iter().zip(&f0).map(|(a, b)| a + h0 * b).collect();
        let mut f1 = vec![0.0; self.n];
        f(t + h0, &y1, &mut f1);
        let diff: Vec<f64> = f1.iter().zip(&f0).map(|(a, b)| a - b).collect();
        let d2 = self.scaled_norm(&diff, y, y) / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(1.0 / (order + 1.0))
        };
        (100.0 * h0).min(h1).min(span).min(self.max_step)
    }

    fn advance<F>(&mut self, f: &F, t: &mut f64, y: &mut Vec<f64>, t_end: f64) -> Result<()>
    where
        F: Fn(f64, &[f64], &mut [f64]),
    {
        let mut h = match self.h {
            Some(h) => h,
            None => self.initial_step(f, *t, y, t_end - *t),
        };
        let mut fac_max = 4.0;
        let exponent = match self.method {
            Method::StiffImplicit => 0.25,
            Method::ExplicitAdaptive => 0.2,
        };
        while *t < t_end {
            self.steps += 1;
            if self.steps > MAX_STEPS {
                return Err(Error::IntegrationFailure {
                    time: *t,
                    reason: format!("exceeded {MAX_STEPS} steps"),
                });
            }
            let remaining = t_end - *t;
            let mut step = h.min(self.max_step);
            let last = step >= remaining * (1.0 - 1e-10);
            if last {
                step = remaining;
            }
            if step < 1e-14 * (1.0 + t.abs()) {
                return Err(Error::IntegrationFailure {
                    time: *t,
                    reason: format!("step size underflow (h = {step:e})"),
                });
            }
            let attempt = match self.method {
                Method::StiffImplicit => self.sdirk_step(f, *t, y, step),
                Method::ExplicitAdaptive => self.dopri_step(f, *t, y, step),
            };
            match attempt {
                Attempt::Accepted { y_new, err } => {
                    if y_new.iter().any(|v| !v.is_finite()) {
                        return Err(Error::IntegrationFailure {
                            time: *t,
                            reason: "non-finite state".into(),
                        });
                    }
                    *t = if last { t_end } else { *t + step };
                    *y = y_new;
                    let fac = if err == 0.0 {
                        fac_max
                    } else {
                        (SAFETY * err.powf(-exponent)).clamp(0.2, fac_max)
                    };
                    // a step shortened to land on t_end says nothing about h
                    if !last || fac < 1.0 {
                        h = step * fac;
                    }
                    fac_max = 4.0;
                }
                Attempt::Rejected { err } => {
                    let fac = if err.is_finite() {
                        (SAFETY * err.powf(-exponent)).clamp(0.1, 1.0)
                    } else {
                        0.1
                    };
                    h = step * fac;
                    fac_max = 1.0;
                }
                Attempt::NewtonFailure => {
                    h = step * 0.5;
                    fac_max = 1.0;
                }
            }
        }
        self.h = Some(h);
        Ok(())
    }

    fn jacobian<F>(&self, f: &F, t: f64, y: &[f64], fy: &[f64]) -> DMatrix<f64>
    where
        F: Fn(f64, &[f64], &mut [f64]),
    {
        let n = self.n;
        let mut jac = DMatrix::zeros(n, n);
        let mut yp = y.to_vec();
        let mut fp = vec![0.0; n];
        for j in 0..n {
            let delta = (f64::EPSILON * y[j].abs().max(1e-5)).sqrt();
            yp[j] = y[j] + delta;
            f(t, &yp, &mut fp);
            let actual = yp[j] - y[j];
            for i in 0..n {
                jac[(i, j)] = (fp[i] - fy[i]) / actual;
            }
            yp[j] = y[j];
        }
        jac
    }

    fn sdirk_step<F>(&self, f: &F, t: f64, y: &[f64], h: f64) -> Attempt
    where
        F: Fn(f64, &[f64], &mut [f64]),
    {
        let n = self.n;
        let mut fy = vec![0.0; n];
        f(t, y, &mut fy);
        let jac = self.jacobian(f, t, y, &fy);
        let hg = h * SDIRK_GAMMA;
        let iteration = DMatrix::identity(n, n) - jac * hg;
        let lu = iteration.lu();
        let newton_tol = (10.0 * f64::EPSILON / self.rel_tol).max(0.03f64.min(self.rel_tol.sqrt()));

        let mut k: Vec<Vec<f64>> = Vec::with_capacity(5);
        let mut fz = vec![0.0; n];
        for i in 0..5 {
            let mut base = y.to_vec();
            for (j, kj) in k.iter().enumerate() {
                let a = h * SDIRK_A[i][j];
                for (b, v) in base.iter_mut().zip(kj) {
                    *b += a * v;
                }
            }
            let guess = k.last().unwrap_or(&fy);
            let mut z: Vec<f64> = base.iter().zip(guess).map(|(b, g)| b + hg * g).collect();
            let ti = t + SDIRK_C[i] * h;
            let mut prev_norm = f64::NAN;
            let mut converged = false;
            for it in 0..MAX_NEWTON {
                f(ti, &z, &mut fz);
                let residual: Vec<f64> = (0..n).map(|m| base[m] + hg * fz[m] - z[m]).collect();
                // rounding level of the residual evaluation
                let noise: Vec<f64> = (0..n)
                    .map(|m| 4.0 * f64::EPSILON * (base[m].abs() + (hg * fz[m]).abs() + z[m].abs()))
                    .collect();
                let delta = solve(&lu, residual);
                for (zm, d) in z.iter_mut().zip(&delta) {
                    *zm += d;
                }
                let dn = self.scaled_norm(&delta, &z, &z);
                if !dn.is_finite() {
                    return Attempt::NewtonFailure;
                }
                if dn <= 1e-3 * newton_tol || dn <= self.scaled_norm(&noise, &z, &z) {
                    converged = true;
                    break;
                }
                if it > 0 {
                    let theta = dn / prev_norm;
                    if theta >= 0.99 {
                        return Attempt::NewtonFailure;
                    }
                    let eta = theta / (1.0 - theta);
                    if eta * dn <= newton_tol {
                        converged = true;
                        break;
                    }
                }
                prev_norm = dn;
            }
            if !converged {
                return Attempt::NewtonFailure;
            }
            let ki: Vec<f64> = z.iter().zip(&base).map(|(zm, b)| (zm - b) / hg).collect();
            k.push(ki);
        }

        let mut y_new = y.to_vec();
        let mut err = vec![0.0; n];
        for (i, ki) in k.iter().enumerate() {
            let b = h * SDIRK_B[i];
            let e = h * (SDIRK_B[i] - SDIRK_BHAT[i]);
            for m in 0..n {
                y_new[m] += b * ki[m];
                err[m] += e * ki[m];
            }
        }
        let err = solve(&lu, err);
        let norm = self.scaled_norm(&err, y, &y_new);
        if norm <= 1.0 {
            Attempt::Accepted { y_new, err: norm }
        } else {
            Attempt::Rejected { err: norm }
        }
    }

    fn dopri_step<F>(&self, f: &F, t: f64, y: &[f64], h: f64) -> Attempt
    where
        F: Fn(f64, &[f64], &mut [f64]),
    {
        let n = self.n;
        let mut k = vec![vec![0.0; n]; 7];
        let mut stage = vec![0.0; n];
        for s in 0..7 {
            stage.copy_from_slice(y);
            for (j, kj) in k.iter().enumerate().take(s) {
                let a = h * DP_A[s][j];
                if a != 0.0 {
                    for (v, kv) in stage.iter_mut().zip(kj) {
                        *v += a * kv;
                    }
                }
            }
            let mut out = vec![0.0; n];
            f(t + DP_C[s] * h, &stage, &mut out);
            k[s] = out;
        }
        // stage 7 is evaluated at the 5th-order solution
        let y_new = stage;
        let mut err = vec![0.0; n];
        for (s, ks) in k.iter().enumerate() {
            let e = h * DP_E[s];
            if e != 0.0 {
                for (v, kv) in err.iter_mut().zip(ks) {
                    *v += e * kv;
                }
            }
        }
        let norm = self.scaled_norm(&err, y, &y_new);
        if norm <= 1.0 {
            Attempt::Accepted { y_new, err: norm }
        } else {
            Attempt::Rejected { err: norm }
        }
    }
}

fn solve(lu: &LU<f64, nalgebra::Dyn, nalgebra::Dyn>, rhs: Vec<f64>) -> Vec<f64> {
    let mut b = DVector::from_vec(rhs);
    if !lu.solve_mut(&mut b) {
        b.fill(f64::NAN);
    }
    b.data.into()
}
