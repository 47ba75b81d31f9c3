//! Semi-Lagrangian value iteration on the reduced lattice, the interpolated
//! feedback law and closed-loop evaluation.
//!
//! One sweep of the scheme is
//!
//! ```text
//! v'(i) = min_u { (1 - lambda h) I[v](y_i + h f^r(y_i, u)) + h g^r(y_i, u) }
//! ```
//!
//! where `I[v]` is the piecewise linear interpolant on the Kuhn lattice. All
//! arrival stencils are computed once; a sweep is then a sparse gather.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{integrate, ControlLaw, ControlledSystem, IntegratorConfig, Trajectory};
use crate::error::{Error, Result};
use crate::hjbgrid::SimplexGrid;
use crate::pod::PodBasis;
use crate::reduced::{clamp_in_place, InvarianceReport, ReducedSystem};

/// Sorted, finite, nonempty list of admissible control values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSet {
    values: Vec<f64>,
}

impl ControlSet {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("control set is empty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("control values must be finite".into()));
        }
        if values.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument(
                "control values must be strictly increasing".into(),
            ));
        }
        Ok(Self { values })
    }

    /// `count` equally spaced values in `[lo, hi]`.
    pub fn uniform(count: usize, lo: f64, hi: f64) -> Result<Self> {
        match count {
            0 => Err(Error::InvalidArgument("control set is empty".into())),
            1 => Self::new(vec![0.5 * (lo + hi)]),
            _ => Self::new(
                (0..count)
                    .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
                    .collect(),
            ),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check_within(&self, control_box: (f64, f64)) -> Result<()> {
        let (lo, hi) = control_box;
        let tol = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
        if self.values[0] < lo - tol || *self.values.last().unwrap() > hi + tol {
            return Err(Error::InvalidArgument(format!(
                "control set [{}, {}] leaves the control box [{lo}, {hi}]",
                self.values[0],
                self.values.last().unwrap()
            )));
        }
        Ok(())
    }
}

/// Treatment of arrival points outside the reduced box.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClampPolicy {
    /// Replace the arrival by its closest point in the box.
    #[default]
    Clamp,
    /// Drop the control at that node; nodes left without any control fall
    /// back to clamping.
    Reject,
}

impl std::str::FromStr for ClampPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clamp" => Ok(Self::Clamp),
            "reject" => Ok(Self::Reject),
            other => Err(Error::InvalidArgument(format!(
                "unknown clamp policy {other:?} (expected clamp or reject)"
            ))),
        }
    }
}

/// Default memory cap for the arrival cache, in bytes.
pub const DEFAULT_CACHE_BUDGET: usize = 4 << 30;

/// Arrival stencils and stage costs for every (node, control) pair.
#[derive(Debug, Clone)]
pub struct ArrivalCache {
    nodes: usize,
    controls: ControlSet,
    width: usize,
    indices: Vec<u32>,
    weights: Vec<f64>,
    costs: Vec<f64>,
    admissible: Vec<bool>,
    pub report: InvarianceReport,
    pub rejected_nodes: usize,
    pub h: f64,
}

impl ArrivalCache {
    pub fn node_count(&self) -> usize {
        self.nodes
    }

    pub fn controls(&self) -> &ControlSet {
        &self.controls
    }

    fn slot(&self, node: usize, control: usize) -> usize {
        node * self.controls.len() + control
    }

    /// Stencil node indices and weights of one arrival.
    pub fn arrival(&self, node: usize, control: usize) -> (&[u32], &[f64]) {
        let s = self.slot(node, control) * self.width;
        (&self.indices[s..s + self.width], &self.weights[s..s + self.width])
    }

    /// `g^r(y_i, u)`.
    pub fn stage_cost(&self, node: usize, control: usize) -> f64 {
        self.costs[self.slot(node, control)]
    }

    pub fn is_admissible(&self, node: usize, control: usize) -> bool {
        self.admissible[self.slot(node, control)]
    }

    /// Add a constant to every stage cost.
    pub fn shift_costs(&mut self, c: f64) {
        self.costs.iter_mut().for_each(|g| *g += c);
    }
}

/// Evaluate `f^r` and `g^r` at every node and control and store the arrival
/// stencils of `y_i + h f^r(y_i, u)`.
pub fn build_arrival_cache(
    grid: &SimplexGrid,
    rs: &ReducedSystem<'_>,
    controls: &ControlSet,
    h: f64,
    policy: ClampPolicy,
    budget_bytes: usize,
) -> Result<ArrivalCache> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidArgument(format!("h must be positive, got {h}")));
    }
    if rs.dim() != grid.dim() {
        return Err(Error::DimensionMismatch {
            expected: grid.dim(),
            found: rs.dim(),
        });
    }
    if grid.node_count > u32::MAX as usize {
        return Err(Error::GridTooFine {
            nodes: grid.node_count as u128,
            budget: u32::MAX as usize,
        });
    }
    let r = grid.dim();
    let width = r + 1;
    let nc = controls.len();
    let pairs = grid.node_count as u128 * nc as u128;
    let bytes = pairs * (width as u128 * 12 + 9);
    if bytes > budget_bytes as u128 {
        return Err(Error::CacheBudget {
            bytes,
            budget: budget_bytes,
        });
    }

    struct Row {
        indices: Vec<u32>,
        weights: Vec<f64>,
        costs: Vec<f64>,
        admissible: Vec<bool>,
        report: InvarianceReport,
        rejected_all: bool,
    }

    let rows: Vec<Row> = (0..grid.node_count)
        .into_par_iter()
        .map(|i| {
            let y = grid.node(i);
            let evals = rs.evaluate_controls(&y, controls.values());
            let mut row = Row {
                indices: vec![0; nc * width],
                weights: vec![0.0; nc * width],
                costs: Vec::with_capacity(nc),
                admissible: Vec::with_capacity(nc),
                report: InvarianceReport::new(r),
                rejected_all: false,
            };
            let mut scratch = Vec::with_capacity(r);
            let mut arrival = vec![0.0; r];
            for (c, (f, g)) in evals.into_iter().enumerate() {
                for k in 0..r {
                    arrival[k] = y[k] + h * f[k];
                }
                let change = clamp_in_place(&grid.domain, &mut arrival);
                row.report.record(&change);
                let outside = change.iter().any(|d| *d > 0.0);
                row.admissible.push(!(outside && policy == ClampPolicy::Reject));
                row.costs.push(g);
                grid.stencil_into(
                    &arrival,
                    &mut row.indices[c * width..(c + 1) * width],
                    &mut row.weights[c * width..(c + 1) * width],
                    &mut scratch,
                );
            }
            if !row.admissible.iter().any(|a| *a) {
                row.admissible.fill(true);
                row.rejected_all = true;
            }
            row
        })
        .collect();

    let mut cache = ArrivalCache {
        nodes: grid.node_count,
        controls: controls.clone(),
        width,
        indices: Vec::with_capacity(pairs as usize * width),
        weights: Vec::with_capacity(pairs as usize * width),
        costs: Vec::with_capacity(pairs as usize),
        admissible: Vec::with_capacity(pairs as usize),
        report: InvarianceReport::new(r),
        rejected_nodes: 0,
        h,
    };
    for row in rows {
        cache.indices.extend_from_slice(&row.indices);
        cache.weights.extend_from_slice(&row.weights);
        cache.costs.extend_from_slice(&row.costs);
        cache.admissible.extend_from_slice(&row.admissible);
        cache.report.merge(&row.report);
        cache.rejected_nodes += row.rejected_all as usize;
    }
    if cache.rejected_nodes > 0 {
        log::warn!(
            "{} nodes had no arrival inside the box; clamped instead of rejected",
            cache.rejected_nodes
        );
    }
    Ok(cache)
}

/// Minimum over constant controls of the explicitly integrated discounted
/// cost from every node, as a starting iterate.
pub fn initial_value_guess(
    grid: &SimplexGrid,
    rs: &ReducedSystem<'_>,
    guess_controls: &[f64],
    lambda: f64,
    h: f64,
    t_e: f64,
) -> Result<Vec<f64>> {
    if guess_controls.is_empty() {
        return Err(Error::InvalidArgument("no guess controls".into()));
    }
    if !(h > 0.0) || !(t_e >= 0.0) || !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need h > 0, t_e >= 0 and lambda > 0 (h {h}, t_e {t_e}, lambda {lambda})"
        )));
    }
    let steps = (t_e / h).round() as usize;
    let results: Vec<(f64, f64)> = (0..grid.node_count)
        .into_par_iter()
        .map(|i| {
            let start = grid.node(i);
            let mut best = f64::INFINITY;
            let mut max_g = 0.0f64;
            for &u in guess_controls {
                let mut y = start.clone();
                let mut total = 0.0;
                let mut finite = true;
                for j in 0..steps {
                    let g = rs.cost(&y, u);
                    let f = rs.rhs(&y, u);
                    if !g.is_finite() || f.iter().any(|v| !v.is_finite()) {
                        finite = false;
                        break;
                    }
                    max_g = max_g.max(g.abs());
                    total += h * (-lambda * j as f64 * h).exp() * g;
                    for (v, d) in y.iter_mut().zip(&f) {
                        *v += h * d;
                    }
                }
                if finite && total.is_finite() {
                    best = best.min(total);
                }
            }
            (best, max_g)
        })
        .collect();
    let surrogate = results.iter().map(|r| r.1).fold(0.0, f64::max) / lambda;
    let mut flagged = 0;
    let v = results
        .into_iter()
        .map(|(best, _)| {
            if best.is_finite() {
                best
            } else {
                flagged += 1;
                surrogate
            }
        })
        .collect();
    if flagged > 0 {
        log::warn!("initial guess blew up at {flagged} nodes; used max|g|/lambda = {surrogate:e}");
    }
    Ok(v)
}

/// One Jacobi sweep `out = T(v)`, with the argmin control index per node.
///
/// Ties resolve to the smallest control value.
pub fn bellman_sweep(cache: &ArrivalCache, v: &[f64], lambda: f64, out: &mut [f64], argmin: &mut [usize]) {
    let beta = 1.0 - lambda * cache.h;
    let h = cache.h;
    let nc = cache.controls.len();
    out.par_iter_mut()
        .zip(argmin.par_iter_mut())
        .enumerate()
        .for_each(|(i, (o, a))| {
            let mut best = f64::INFINITY;
            let mut best_c = 0;
            for c in 0..nc {
                let slot = i * nc + c;
                if !cache.admissible[slot] {
                    continue;
                }
                let s = slot * cache.width;
                let mut interp = 0.0;
                for k in s..s + cache.width {
                    interp += cache.weights[k] * v[cache.indices[k] as usize];
                }
                let cand = beta * interp + h * cache.costs[slot];
                if cand < best {
                    best = cand;
                    best_c = c;
                }
            }
            *o = best;
            *a = best_c;
        });
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueFunction {
    pub values: Vec<f64>,
    pub lambda: f64,
    pub h: f64,
    pub iterations: usize,
    pub final_residual: f64,
    pub converged: bool,
}

impl ValueFunction {
    /// Bound on the distance to the exact fixed point implied by the last
    /// residual of a `(1 - lambda h)`-contraction.
    pub fn fixed_point_distance(&self) -> f64 {
        let beta = 1.0 - self.lambda * self.h;
        self.final_residual * beta / (1.0 - beta)
    }
}

/// Nodal argmin controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlTable {
    pub controls: Vec<f64>,
    pub control_index: Vec<usize>,
}

/// Iterate sweeps from `v0` until the max-norm update drops below
/// `stop_tol` or `max_iters` sweeps have run.
pub fn value_iteration(
    cache: &ArrivalCache,
    v0: Vec<f64>,
    lambda: f64,
    stop_tol: f64,
    max_iters: usize,
) -> Result<(ValueFunction, ControlTable)> {
    let h = cache.h;
    if !(lambda > 0.0) || !(lambda * h < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < lambda h < 1 (lambda {lambda}, h {h})"
        )));
    }
    if !(stop_tol > 0.0) {
        return Err(Error::InvalidArgument(format!("stop_tol must be positive, got {stop_tol}")));
    }
    if v0.len() != cache.nodes {
        return Err(Error::DimensionMismatch {
            expected: cache.nodes,
            found: v0.len(),
        });
    }
    if lambda * h > 0.5 {
        log::warn!("lambda h = {} exceeds 1/2", lambda * h);
    }
    let mut v = v0;
    let mut next = vec![0.0; cache.nodes];
    let mut argmin = vec![0usize; cache.nodes];
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iters {
        bellman_sweep(cache, &v, lambda, &mut next, &mut argmin);
        iterations += 1;
        residual = next
            .par_iter()
            .zip(v.par_iter())
            .map(|(a, b)| (a - b).abs())
            .reduce(|| 0.0, f64::max);
        std::mem::swap(&mut v, &mut next);
        if !residual.is_finite() {
            break;
        }
        if residual < stop_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("value iteration stopped after {iterations} sweeps, residual {residual:e}");
    }
    let controls = argmin.iter().map(|&c| cache.controls.values[c]).collect();
    Ok((
        ValueFunction {
            values: v,
            lambda,
            h,
            iterations,
            final_residual: residual,
            converged,
        },
        ControlTable {
            controls,
            control_index: argmin,
        },
    ))
}

/// `Phi^r(y)`: interpolated nodal controls at the clamped POD coordinates.
#[derive(Debug, Clone, Copy)]
pub struct Feedback<'a> {
    pub basis: &'a PodBasis,
    pub grid: &'a SimplexGrid,
    pub table: &'a [f64],
    pub control_box: (f64, f64),
}

impl<'a> Feedback<'a> {
    pub fn new(
        basis: &'a PodBasis,
        grid: &'a SimplexGrid,
        table: &'a ControlTable,
        control_box: (f64, f64),
    ) -> Result<Self> {
        if grid.dim() > basis.len() {
            return Err(Error::RankOutOfRange {
                r: grid.dim(),
                d: basis.len(),
            });
        }
        if table.controls.len() != grid.node_count {
            return Err(Error::DimensionMismatch {
                expected: grid.node_count,
                found: table.controls.len(),
            });
        }
        Ok(Self {
            basis,
            grid,
            table: &table.controls,
            control_box,
        })
    }

    pub fn evaluate(&self, y: &[f64]) -> f64 {
        let r = self.grid.dim();
        let mut coeffs: Vec<f64> = self.basis.modes[..r]
            .iter()
            .map(|phi| crate::inner::dot(&self.basis.weight, y, phi))
            .collect();
        if coeffs.iter().any(|c| !c.is_finite()) {
            return f64::NAN;
        }
        clamp_in_place(&self.grid.domain, &mut coeffs);
        let mut idx = vec![0u32; r + 1];
        let mut w = vec![0.0; r + 1];
        self.grid.stencil_into(&coeffs, &mut idx, &mut w, &mut Vec::with_capacity(r));
        let u: f64 = idx.iter().zip(&w).map(|(&i, w)| w * self.table[i as usize]).sum();
        u.clamp(self.control_box.0, self.control_box.1)
    }
}

impl ControlLaw for Feedback<'_> {
    fn control(&self, _t: f64, y: &[f64]) -> f64 {
        self.evaluate(y)
    }
}

pub fn feedback(law: &Feedback<'_>, y: &[f64]) -> f64 {
    law.evaluate(y)
}

/// Integrate the closed loop `y' = f(y, law(t, y))` and sample every `dt`.
///
/// With `hold` the control is frozen on each sampling interval at its value
/// at the left endpoint.
pub fn simulate_closed_loop(
    sys: &ControlledSystem,
    law: &dyn ControlLaw,
    y0: &[f64],
    t_e: f64,
    dt: f64,
    cfg: &IntegratorConfig,
    hold: bool,
) -> Result<Trajectory> {
    if !(dt > 0.0) || !(t_e >= 0.0) {
        return Err(Error::InvalidArgument(format!("need dt > 0 and t_e >= 0 (dt {dt}, t_e {t_e})")));
    }
    let intervals = ((t_e / dt) - 1e-9).ceil().max(0.0) as usize;
    let times: Vec<f64> = (0..=intervals).map(|j| (j as f64 * dt).min(t_e)).collect();
    if !hold {
        return integrate(sys, y0, law, (0.0, t_e), cfg, &times, false);
    }
    let mut states = vec![y0.to_vec()];
    let mut controls = Vec::with_capacity(times.len());
    for w in times.windows(2) {
        let y = states.last().unwrap().clone();
        let u = law.control(w[0], &y);
        controls.push(u);
        let piece = integrate(
            sys,
            &y,
            &crate::dynamics::ConstantControl(u),
            (w[0], w[1]),
            cfg,
            &[w[1]],
            false,
        )?;
        states.push(piece.states.into_iter().next().unwrap());
    }
    let last = states.last().unwrap();
    controls.push(law.control(t_e, last));
    Ok(Trajectory {
        times,
        states,
        controls,
        derivatives: None,
    })
}

/// Trapezoid rule for `int e^{-lambda t} g(y(t), u(t)) dt` on the samples.
pub fn evaluate_cost(sys: &ControlledSystem, traj: &Trajectory, lambda: f64) -> f64 {
    let values: Vec<f64> = traj
        .times
        .iter()
        .zip(traj.states.iter().zip(&traj.controls))
        .map(|(t, (y, u))| (-lambda * t).exp() * sys.running_cost(y, *u))
        .collect();
    traj.times
        .windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum()
}
