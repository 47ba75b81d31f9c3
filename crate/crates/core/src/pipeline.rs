//! End-to-end runs: snapshots, basis, reduced box, lattice, value iteration
//! and closed-loop simulation, driven by one serializable configuration.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dynamics::{build_test1, build_test2, ControlledSystem, IntegratorConfig, Trajectory};
use crate::error::{Error, Result};
use crate::hjbgrid::{SimplexGrid, DEFAULT_NODE_BUDGET};
use crate::hjbsolve::{
    build_arrival_cache, initial_value_guess, simulate_closed_loop, value_iteration, ClampPolicy,
    ControlSet, ControlTable, Feedback, ValueFunction, DEFAULT_CACHE_BUDGET,
};
use crate::pod::{compute_basis, generate_snapshots, PodBasis, SnapshotSet, DEFAULT_DROP_TOL};
use crate::reduced::{build_domain, Hyperbox, InvarianceReport, ReducedSystem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestCase {
    Test1,
    Test2,
}

impl std::str::FromStr for TestCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "test1" => Ok(Self::Test1),
            "test2" => Ok(Self::Test2),
            other => Err(Error::InvalidArgument(format!("unknown test {other:?}"))),
        }
    }
}

/// `count` equally spaced controls in `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSpec {
    pub count: usize,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub test: TestCase,
    /// Spatial cells.
    pub cells: usize,
    pub snapshot_controls: Vec<f64>,
    pub dt: f64,
    /// Snapshot horizon.
    pub horizon: f64,
    /// Derivative time scale; the snapshot horizon when absent.
    pub tau: Option<f64>,
    pub drop_tol: f64,
    pub quotient_at_zero: bool,
    pub r: usize,
    pub k_r: f64,
    /// Scheme step; `0.1 k_r` when absent.
    pub h: Option<f64>,
    pub lambda: f64,
    /// Simulation and initial-guess horizon.
    pub t_e: f64,
    pub controls: ControlSpec,
    /// Constant controls of the initial guess; the snapshot controls when absent.
    pub guess_controls: Option<Vec<f64>>,
    pub stop_tol: f64,
    pub max_iters: usize,
    pub clamp_policy: ClampPolicy,
    pub margin: f64,
    /// Extend the reduced box so the origin is a lattice node.
    pub anchor_origin: bool,
    pub node_budget: usize,
    pub cache_budget: usize,
    pub integrator: IntegratorConfig,
    /// Freeze the feedback on each sampling interval.
    pub sample_and_hold: bool,
    pub seed: u64,
}

impl PipelineConfig {
    pub fn test1() -> Self {
        Self {
            test: TestCase::Test1,
            cells: 100,
            snapshot_controls: vec![-1.0, 0.0, 1.0],
            dt: 0.05,
            horizon: 3.0,
            tau: None,
            drop_tol: DEFAULT_DROP_TOL,
            quotient_at_zero: false,
            r: 4,
            k_r: 0.02,
            h: None,
            lambda: 1.0,
            t_e: 3.0,
            controls: ControlSpec {
                count: 21,
                lo: -1.0,
                hi: 1.0,
            },
            guess_controls: None,
            stop_tol: 5e-4,
            max_iters: 100_000,
            clamp_policy: ClampPolicy::Clamp,
            margin: 0.0,
            anchor_origin: true,
            node_budget: DEFAULT_NODE_BUDGET,
            cache_budget: DEFAULT_CACHE_BUDGET,
            integrator: IntegratorConfig::default(),
            sample_and_hold: false,
            seed: 0,
        }
    }

    pub fn test2() -> Self {
        let (lo, hi) = crate::dynamics::TEST2_CONTROL_BOX;
        Self {
            test: TestCase::Test2,
            snapshot_controls: vec![-2.2, -1.1, 0.0],
            quotient_at_zero: true,
            k_r: 0.1,
            controls: ControlSpec { count: 21, lo, hi },
            ..Self::test1()
        }
    }

    pub fn preset(test: TestCase) -> Self {
        match test {
            TestCase::Test1 => Self::test1(),
            TestCase::Test2 => Self::test2(),
        }
    }

    pub fn tau(&self) -> f64 {
        self.tau.unwrap_or(self.horizon)
    }

    pub fn h(&self) -> f64 {
        self.h.unwrap_or(0.1 * self.k_r)
    }

    pub fn guess_controls(&self) -> &[f64] {
        self.guess_controls.as_deref().unwrap_or(&self.snapshot_controls)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.cells < 4 {
            return Err(Error::InvalidDiscretization(format!(
                "need at least 4 cells, got {}",
                self.cells
            )));
        }
        if !(self.horizon > 0.0) {
            return bad(format!("snapshot horizon must be positive, got {}", self.horizon));
        }
        if !(self.dt > 0.0) || self.dt > self.horizon {
            return bad(format!("need 0 < dt <= horizon, got dt = {}", self.dt));
        }
        let ratio = self.horizon / self.dt;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio {
            return bad(format!("dt = {} does not divide the horizon {}", self.dt, self.horizon));
        }
        if self.snapshot_controls.is_empty() {
            return bad("no snapshot controls".into());
        }
        if !(self.tau() > 0.0) {
            return Err(Error::InvalidScale(format!("tau must be positive, got {}", self.tau())));
        }
        if self.r == 0 {
            return Err(Error::RankOutOfRange { r: 0, d: 0 });
        }
        if !(self.k_r > 0.0) {
            return bad(format!("k_r must be positive, got {}", self.k_r));
        }
        let h = self.h();
        if !(self.lambda > 0.0) || !(h > 0.0) || !(self.lambda * h < 1.0) {
            return bad(format!("need lambda > 0 and 0 < lambda h < 1 (lambda {}, h {h})", self.lambda));
        }
        if self.lambda * h > 0.5 {
            log::warn!("h = {h} exceeds 1/(2 lambda)");
        }
        if !(self.t_e > 0.0) {
            return bad(format!("t_e must be positive, got {}", self.t_e));
        }
        if !(self.stop_tol > 0.0) {
            return bad(format!("stop_tol must be positive, got {}", self.stop_tol));
        }
        if !(self.margin >= 0.0) {
            return bad(format!("margin must be >= 0, got {}", self.margin));
        }
        if self.controls.count == 0 || !(self.controls.lo <= self.controls.hi) {
            return bad("control set spec is empty".into());
        }
        self.integrator.validate()
    }

    pub fn system(&self) -> Result<ControlledSystem> {
        let sys = match self.test {
            TestCase::Test1 => build_test1(self.cells)?,
            TestCase::Test2 => build_test2(self.cells)?,
        };
        sys.with_control_box((self.controls.lo, self.controls.hi))
    }

    pub fn control_set(&self) -> Result<ControlSet> {
        ControlSet::uniform(self.controls.count, self.controls.lo, self.controls.hi)
    }
}

pub fn snapshots(sys: &ControlledSystem, cfg: &PipelineConfig) -> Result<SnapshotSet> {
    let y0 = sys
        .initial_state()
        .ok_or_else(|| Error::InvalidArgument("system has no initial state".into()))?;
    generate_snapshots(
        sys,
        &cfg.snapshot_controls,
        y0,
        cfg.dt,
        cfg.horizon,
        &cfg.integrator,
        cfg.quotient_at_zero,
    )
}

pub fn basis(snap: &SnapshotSet, cfg: &PipelineConfig) -> Result<PodBasis> {
    compute_basis(snap, cfg.tau(), cfg.drop_tol)
}

/// Reduced box of the snapshot projections, lattice on it (anchored at the
/// origin when configured).
pub fn domain_and_grid(
    basis: &PodBasis,
    snap: &SnapshotSet,
    cfg: &PipelineConfig,
) -> Result<(Hyperbox, SimplexGrid)> {
    let domain = build_domain(basis, snap, cfg.r, cfg.margin)?;
    let origin = vec![0.0; cfg.r];
    let anchor = cfg.anchor_origin.then_some(origin.as_slice());
    let grid = SimplexGrid::build_anchored(&domain, cfg.k_r, cfg.node_budget, anchor)?;
    Ok((domain, grid))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveOutcome {
    /// Box of the snapshot projections before anchoring.
    pub snapshot_box: Hyperbox,
    pub grid: SimplexGrid,
    pub value: ValueFunction,
    pub table: ControlTable,
    pub invariance: InvarianceReport,
    pub rejected_nodes: usize,
    pub eigenvalue_tail: f64,
    pub timings: Timings,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Timings {
    pub cache_seconds: f64,
    pub guess_seconds: f64,
    pub iteration_seconds: f64,
}

pub fn solve(
    sys: &ControlledSystem,
    basis: &PodBasis,
    snap: &SnapshotSet,
    cfg: &PipelineConfig,
) -> Result<SolveOutcome> {
    if cfg.r > basis.len() {
        return Err(Error::RankOutOfRange {
            r: cfg.r,
            d: basis.len(),
        });
    }
    let controls = cfg.control_set()?;
    controls.check_within(sys.control_box())?;
    let (snapshot_box, grid) = domain_and_grid(basis, snap, cfg)?;
    let rs = ReducedSystem::new(sys, basis, cfg.r)?;
    let h = cfg.h();
    log::info!(
        "r = {}: {} nodes, cells {:?}, k_r = {:.4e}",
        cfg.r,
        grid.node_count,
        grid.cells_per_axis,
        grid.k_r
    );
    let clock = Instant::now();
    let cache = build_arrival_cache(&grid, &rs, &controls, h, cfg.clamp_policy, cfg.cache_budget)?;
    let cache_seconds = clock.elapsed().as_secs_f64();
    let clock = Instant::now();
    let v0 = initial_value_guess(&grid, &rs, cfg.guess_controls(), cfg.lambda, h, cfg.t_e)?;
    let guess_seconds = clock.elapsed().as_secs_f64();
    let clock = Instant::now();
    let (value, table) = value_iteration(&cache, v0, cfg.lambda, cfg.stop_tol, cfg.max_iters)?;
    let iteration_seconds = clock.elapsed().as_secs_f64();
    log::info!(
        "value iteration: {} sweeps, residual {:.3e}, converged {}",
        value.iterations,
        value.final_residual,
        value.converged
    );
    Ok(SolveOutcome {
        snapshot_box,
        grid,
        value,
        table,
        invariance: cache.report.clone(),
        rejected_nodes: cache.rejected_nodes,
        eigenvalue_tail: basis.tail(cfg.r),
        timings: Timings {
            cache_seconds,
            guess_seconds,
            iteration_seconds,
        },
    })
}

/// Closed loop under the interpolated feedback from the system's initial state.
pub fn simulate(
    sys: &ControlledSystem,
    basis: &PodBasis,
    outcome: &SolveOutcome,
    cfg: &PipelineConfig,
) -> Result<Trajectory> {
    let law = Feedback::new(basis, &outcome.grid, &outcome.table, sys.control_box())?;
    let y0 = sys
        .initial_state()
        .ok_or_else(|| Error::InvalidArgument("system has no initial state".into()))?;
    simulate_closed_loop(sys, &law, y0, cfg.t_e, cfg.dt, &cfg.integrator, cfg.sample_and_hold)
}
