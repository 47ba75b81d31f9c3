//! Discounted linear-quadratic regulator.
//!
//! With `y~ = e^{-lambda t / 2} y` the discounted problem becomes an
//! undiscounted one for `A - (lambda/2) I`, so the value is `y^T P y` with
//! `P` solving the algebraic Riccati equation of the shifted matrix.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CareSolution {
    pub p: DMatrix<f64>,
    /// `K = R^{-1} b^T P`; the optimal law is `u = -K y`.
    pub gain: DVector<f64>,
    /// `||A^T P + P A - P b R^{-1} b^T P + Q||_F / ||Q||_F` for the shifted `A`.
    pub residual: f64,
    pub newton_steps: usize,
}

const NEWTON_MAX: usize = 60;
const NEWTON_TOL: f64 = 1e-13;
const SIGN_MAX: usize = 100;

fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Solve `A^T X + X A + Q = 0` for stable `A` by the matrix sign iteration.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut ak = a.clone();
    let mut qk = q.clone();
    let mut history = Vec::new();
    for _ in 0..SIGN_MAX {
        let inv = ak.clone().try_inverse().ok_or_else(|| Error::Riccati {
            reason: "singular iterate in Lyapunov sign iteration".into(),
            history: history.clone(),
        })?;
        // determinant scaling keeps the iteration from stalling
        let det = ak.clone().lu().determinant().abs();
        let c = if det.is_finite() && det > 0.0 {
            det.powf(-1.0 / n as f64)
        } else {
            1.0
        };
        let next_a = (&ak * c + &inv / c) * 0.5;
        let mut next_q = (&qk * c + inv.transpose() * &qk * &inv / c) * 0.5;
        symmetrize(&mut next_q);
        let change = frobenius(&(&next_a - &ak)) / frobenius(&next_a).max(1.0);
        history.push(change);
        ak = next_a;
        qk = next_q;
        if change < 1e-14 {
            let x = qk * 0.5;
            let residual = frobenius(&(a.transpose() * &x + &x * a + q));
            if residual > 1e-6 * frobenius(q).max(f64::MIN_POSITIVE) {
                return Err(Error::Riccati {
                    reason: format!("Lyapunov residual {residual:e} (is A stable?)"),
                    history,
                });
            }
            return Ok(x);
        }
    }
    Err(Error::Riccati {
        reason: "Lyapunov sign iteration did not converge".into(),
        history,
    })
}

/// Newton-Kleinman for `Ab^T P + P Ab - P b b^T P / rho + Q = 0` with
/// `Ab = A - (lambda/2) I`, started from the zero gain.
pub fn solve_care(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    q: &DMatrix<f64>,
    rho: f64,
    lambda: f64,
) -> Result<CareSolution> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n || q.nrows() != n || q.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: b.len(),
        });
    }
    if !(rho > 0.0) || !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need R > 0 and lambda >= 0 (R {rho}, lambda {lambda})"
        )));
    }
    let shifted = a - DMatrix::identity(n, n) * (0.5 * lambda);
    let spectral_abscissa = shifted
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    if !(spectral_abscissa < 0.0) {
        return Err(Error::Riccati {
            reason: format!(
                "zero initial gain is not stabilizing (spectral abscissa {spectral_abscissa:e})"
            ),
            history: vec![],
        });
    }
    let q_norm = frobenius(q).max(f64::MIN_POSITIVE);
    let care_residual = |p: &DMatrix<f64>| {
        let pb = p * b;
        let r = shifted.transpose() * p + p * &shifted - &pb * pb.transpose() / rho + q;
        frobenius(&r) / q_norm
    };
    let mut gain = DVector::zeros(n);
    let mut p = DMatrix::zeros(n, n);
    let mut history = Vec::new();
    for step in 1..=NEWTON_MAX {
        let closed = &shifted - b * gain.transpose();
        let rhs = q + &gain * gain.transpose() * rho;
        let mut next = solve_lyapunov(&closed, &rhs).map_err(|e| match e {
            Error::Riccati { reason, .. } => Error::Riccati {
                reason: format!("Newton step {step}: {reason}"),
                history: history.clone(),
            },
            other => other,
        })?;
        symmetrize(&mut next);
        let change = frobenius(&(&next - &p)) / frobenius(&next).max(f64::MIN_POSITIVE);
        p = next;
        gain = p.transpose() * b / rho;
        let residual = care_residual(&p);
        history.push(residual);
        if change < NEWTON_TOL || residual < 1e-14 {
            return Ok(CareSolution {
                p,
                gain,
                residual,
                newton_steps: step,
            });
        }
    }
    let residual = care_residual(&p);
    if residual < 1e-8 {
        return Ok(CareSolution {
            p,
            gain,
            residual,
            newton_steps: NEWTON_MAX,
        });
    }
    Err(Error::Riccati {
        reason: "Newton iteration stagnated".into(),
        history,
    })
}

/// `u = -K y`.
pub fn lqr_feedback(care: &CareSolution, y: &[f64]) -> f64 {
    -care.gain.iter().zip(y).map(|(k, v)| k * v).sum::<f64>()
}

/// Linear state feedback `u = -K y`, clipped to nothing.
#[derive(Debug, Clone)]
pub struct LqrLaw<'a>(pub &'a CareSolution);

impl crate::dynamics::ControlLaw for LqrLaw<'_> {
    fn control(&self, _t: f64, y: &[f64]) -> f64 {
        lqr_feedback(self.0, y)
    }
}

/// Handling of control series sampled on different time grids.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    #[default]
    Fail,
    /// Linearly interpolate the first series onto the second grid.
    Resample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlComparison {
    pub times: Vec<f64>,
    pub relative_errors: Vec<f64>,
    pub median: f64,
    pub max: f64,
}

/// Floor of the denominator in the relative control error.
pub const RELATIVE_FLOOR: f64 = 1e-3;

/// `|u_hjb - u_lqr| / max(1e-3, |u_lqr|)` on the reference time grid.
pub fn compare_controls(
    t_hjb: &[f64],
    u_hjb: &[f64],
    t_lqr: &[f64],
    u_lqr: &[f64],
    alignment: Alignment,
) -> Result<ControlComparison> {
    if t_hjb.len() != u_hjb.len() || t_lqr.len() != u_lqr.len() {
        return Err(Error::DimensionMismatch {
            expected: t_hjb.len(),
            found: u_hjb.len(),
        });
    }
    if u_lqr.is_empty() {
        return Err(Error::InvalidArgument("empty control series".into()));
    }
    let aligned = t_hjb.len() == t_lqr.len()
        && t_hjb.iter().zip(t_lqr).all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + b.abs()));
    let hjb: Vec<f64> = if aligned {
        u_hjb.to_vec()
    } else {
        match alignment {
            Alignment::Fail => {
                return Err(Error::InvalidArgument("control series are on different time grids".into()))
            }
            Alignment::Resample => t_lqr.iter().map(|&t| resample(t_hjb, u_hjb, t)).collect::<Result<_>>()?,
        }
    };
    let relative_errors: Vec<f64> = hjb
        .iter()
        .zip(u_lqr)
        .map(|(a, b)| (a - b).abs() / b.abs().max(RELATIVE_FLOOR))
        .collect();
    let mut sorted = relative_errors.clone();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let median = if m % 2 == 1 {
        sorted[m / 2]
    } else {
        0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
    };
    Ok(ControlComparison {
        times: t_lqr.to_vec(),
        max: sorted[m - 1],
        median,
        relative_errors,
    })
}

fn resample(t: &[f64], u: &[f64], at: f64) -> Result<f64> {
    let (first, last) = match (t.first(), t.last()) {
        (Some(a), Some(b)) => (*a, *b),
        _ => return Err(Error::InvalidArgument("empty series".into())),
    };
    let tol = 1e-12 * (1.0 + last.abs());
    if at < first - tol || at > last + tol {
        return Err(Error::InvalidArgument(format!("time {at} outside [{first}, {last}]")));
    }
    let j = t.partition_point(|s| *s <= at).clamp(1, t.len().max(2) - 1);
    if t.len() == 1 {
        return Ok(u[0]);
    }
    let (t0, t1) = (t[j - 1], t[j]);
    let s = ((at - t0) / (t1 - t0)).clamp(0.0, 1.0);
    Ok(u[j - 1] + s * (u[j] - u[j - 1]))
}
