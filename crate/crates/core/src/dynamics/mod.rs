//! Controlled ODE systems `y' = f(y, u)` with running cost `g(y, u)`.
//!
//! Besides general closure-backed systems this module provides the two
//! semidiscretized convection-reaction-diffusion benchmarks:
//!
//! * Test 1: `z_t = z_xx/10 + z - z^3 + u b` on `(0, 1)`, compact fourth-order
//!   stencil `C y' = A y / 10 + C (F(y) + u B)`.
//! * Test 2: `z_t = z_xx/10 - z_x + u 1_(1/2,1)` on `(0, 2)`, central
//!   second-order differences.
//!
//! Both keep interior nodes only (homogeneous Dirichlet data eliminated), use
//! the weights `w_j = dx` for the inner product and the cost
//! `g(y, u) = ||y||^2 + u^2 / 100`.

mod integrate;
mod tridiag;

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::inner;

pub use integrate::{
    integrate, ConstantControl, ControlLaw, IntegratorConfig, Method, OpenLoop, Trajectory,
};
pub use tridiag::TridiagonalLu;

type RhsFn = dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync;
type CostFn = dyn Fn(&[f64], f64) -> f64 + Send + Sync;

/// Control weight in the benchmark running cost `||y||^2 + u^2 / 100`.
pub const CONTROL_COST_WEIGHT: f64 = 0.01;

/// Diffusion coefficient shared by both benchmarks.
pub const DIFFUSION: f64 = 0.1;

/// A controlled system together with its running cost and inner product.
///
/// Immutable after construction; cloning shares the underlying closures.
#[derive(Clone)]
pub struct ControlledSystem {
    label: String,
    weight: Vec<f64>,
    control_box: (f64, f64),
    rhs: Arc<RhsFn>,
    cost: Arc<CostFn>,
    input: Option<Vec<f64>>,
    initial_state: Option<Vec<f64>>,
    nodes: Option<Vec<f64>>,
}

impl fmt::Debug for ControlledSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlledSystem")
            .field("label", &self.label)
            .field("n", &self.dim())
            .field("control_box", &self.control_box)
            .field("control_affine", &self.input.is_some())
            .finish()
    }
}

impl ControlledSystem {
    /// Build a system from closures. `weight` fixes the state dimension.
    pub fn new<F, G>(
        label: impl Into<String>,
        weight: Vec<f64>,
        control_box: (f64, f64),
        rhs: F,
        cost: G,
    ) -> Result<Self>
    where
        F: Fn(&[f64], f64, &mut [f64]) + Send + Sync + 'static,
        G: Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
    {
        if weight.is_empty() {
            return Err(Error::InvalidArgument("state dimension must be positive".into()));
        }
        if let Some(w) = weight.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "inner-product weights must be positive, found {w}"
            )));
        }
        if !(control_box.0 <= control_box.1) {
            return Err(Error::InvalidArgument(format!(
                "control box [{}, {}] is empty",
                control_box.0, control_box.1
            )));
        }
        Ok(Self {
            label: label.into(),
            weight,
            control_box,
            rhs: Arc::new(rhs),
            cost: Arc::new(cost),
            input: None,
            initial_state: None,
            nodes: None,
        })
    }

    /// Declare the system control-affine, `f(y, u) = f(y, 0) + u * input`.
    ///
    /// The caller guarantees the identity; it lets reduced models evaluate the
    /// drift once per state instead of once per control.
    pub fn with_input_vector(mut self, input: Vec<f64>) -> Result<Self> {
        self.check_len(&input)?;
        self.input = Some(input);
        Ok(self)
    }

    pub fn with_initial_state(mut self, y0: Vec<f64>) -> Result<Self> {
        self.check_len(&y0)?;
        self.initial_state = Some(y0);
        Ok(self)
    }

    pub fn with_nodes(mut self, nodes: Vec<f64>) -> Result<Self> {
        self.check_len(&nodes)?;
        self.nodes = Some(nodes);
        Ok(self)
    }

    pub fn with_control_box(mut self, control_box: (f64, f64)) -> Result<Self> {
        if !(control_box.0 <= control_box.1) {
            return Err(Error::InvalidArgument(format!(
                "control box [{}, {}] is empty",
                control_box.0, control_box.1
            )));
        }
        self.control_box = control_box;
        Ok(self)
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: v.len(),
            });
        }
        Ok(())
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim(&self) -> usize {
        self.weight.len()
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn control_box(&self) -> (f64, f64) {
        self.control_box
    }

    pub fn input_vector(&self) -> Option<&[f64]> {
        self.input.as_deref()
    }

    pub fn initial_state(&self) -> Option<&[f64]> {
        self.initial_state.as_deref()
    }

    /// Spatial node coordinates for semidiscretized PDEs.
    pub fn nodes(&self) -> Option<&[f64]> {
        self.nodes.as_deref()
    }

    #[inline]
    pub fn rhs_into(&self, y: &[f64], u: f64, out: &mut [f64]) {
        (self.rhs)(y, u, out)
    }

    pub fn rhs(&self, y: &[f64], u: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.rhs_into(y, u, &mut out);
        out
    }

    #[inline]
    pub fn running_cost(&self, y: &[f64], u: f64) -> f64 {
        (self.cost)(y, u)
    }

    pub fn norm(&self, y: &[f64]) -> f64 {
        inner::norm(&self.weight, y)
    }

    /// Dense `(A, b)` of an affine-in-state, affine-in-control system,
    /// assembled by probing `f` with unit vectors at `u = 0` and `u = 1`.
    pub fn assemble_linear(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.dim();
        let zero = vec![0.0; n];
        let f0 = self.rhs(&zero, 0.0);
        let mut a = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            self.rhs_into(&e, 0.0, &mut col);
            for i in 0..n {
                a[(i, j)] = col[i] - f0[i];
            }
            e[j] = 0.0;
        }
        let f1 = self.rhs(&zero, 1.0);
        let b = DVector::from_iterator(n, f1.iter().zip(&f0).map(|(x, y)| x - y));
        (a, b)
    }
}

/// Running cost `||y||^2 + u^2/100` in the weighted norm.
pub fn eval_cost_density(sys: &ControlledSystem, y: &[f64], u: f64) -> f64 {
    sys.running_cost(y, u)
}

fn check_cells(cells: usize) -> Result<()> {
    if cells < 4 {
        return Err(Error::InvalidDiscretization(format!(
            "need at least 4 cells, got {cells}"
        )));
    }
    Ok(())
}

fn quadratic_cost(weight: Vec<f64>) -> impl Fn(&[f64], f64) -> f64 + Send + Sync + 'static {
    move |y: &[f64], u: f64| inner::norm_sq(&weight, y) + CONTROL_COST_WEIGHT * u * u
}

/// Semilinear reaction-diffusion benchmark on `(0, 1)` with `cells` cells.
pub fn build_test1(cells: usize) -> Result<ControlledSystem> {
    check_cells(cells)?;
    let n = cells - 1;
    let dx = 1.0 / cells as f64;
    let x: Vec<f64> = (1..cells).map(|j| j as f64 * dx).collect();
    let input: Vec<f64> = x.iter().map(|x| 2.0 * x * (1.0 - x)).collect();
    let mass = TridiagonalLu::toeplitz(n, 1.0 / 12.0, 10.0 / 12.0, 1.0 / 12.0);
    let scale = DIFFUSION / (dx * dx);
    let b = input.clone();
    let rhs = move |y: &[f64], u: f64, out: &mut [f64]| {
        let n = y.len();
        for j in 0..n {
            let left = if j > 0 { y[j - 1] } else { 0.0 };
            let right = if j + 1 < n { y[j + 1] } else { 0.0 };
            out[j] = scale * (left - 2.0 * y[j] + right);
        }
        mass.solve_in_place(out);
        for j in 0..n {
            out[j] += y[j] * (1.0 - y[j] * y[j]) + u * b[j];
        }
    };
    let weight = vec![dx; n];
    ControlledSystem::new("test1", weight.clone(), (-1.0, 1.0), rhs, quadratic_cost(weight))?
        .with_input_vector(input.clone())?
        .with_initial_state(input)?
        .with_nodes(x)
}

/// Default admissible control interval for Test 2, spanning the snapshot
/// controls `{-2.2, -1.1, 0}`.
pub const TEST2_CONTROL_BOX: (f64, f64) = (-2.2, 0.0);

/// Advection-diffusion benchmark on `(0, 2)` with `cells` cells.
pub fn build_test2(cells: usize) -> Result<ControlledSystem> {
    check_cells(cells)?;
    let n = cells - 1;
    let dx = 2.0 / cells as f64;
    let x: Vec<f64> = (1..cells).map(|j| j as f64 * dx).collect();
    let input: Vec<f64> = x
        .iter()
        .map(|&x| if x > 0.5 && x < 1.0 { 1.0 } else { 0.0 })
        .collect();
    let diff = DIFFUSION / (dx * dx);
    let adv = 1.0 / (2.0 * dx);
    let b = input.clone();
    let rhs = move |y: &[f64], u: f64, out: &mut [f64]| {
        let n = y.len();
        for j in 0..n {
            let left = if j > 0 { y[j - 1] } else { 0.0 };
            let right = if j + 1 < n { y[j + 1] } else { 0.0 };
            out[j] = diff * (right - 2.0 * y[j] + left) - adv * (right - left) + u * b[j];
        }
    };
    let y0: Vec<f64> = x
        .iter()
        .map(|&x| (0.5 * (std::f64::consts::PI * x).sin()).max(0.0))
        .collect();
    let weight = vec![dx; n];
    ControlledSystem::new("test2", weight.clone(), TEST2_CONTROL_BOX, rhs, quadratic_cost(weight))?
        .with_input_vector(input)?
        .with_initial_state(y0)?
        .with_nodes(x)
}

/// Write `t, y_1..y_n, u` rows.
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, mut out: W) -> std::io::Result<()> {
    let n = traj.states.first().map_or(0, Vec::len);
    let mut header = String::from("t");
    for j in 1..=n {
        header.push_str(&format!(",y_{j}"));
    }
    header.push_str(",u");
    writeln!(out, "{header}")?;
    for (k, t) in traj.times.iter().enumerate() {
        write!(out, "{t}")?;
        for v in &traj.states[k] {
            write!(out, ",{v}")?;
        }
        writeln!(out, ",{}", traj.controls[k])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_coarse_grids() {
        assert!(matches!(build_test1(3), Err(Error::InvalidDiscretization(_))));
        assert!(matches!(build_test2(2), Err(Error::InvalidDiscretization(_))));
        assert!(build_test1(4).is_ok());
    }

    #[test]
    fn test1_zero_state() {
        let sys = build_test1(100).unwrap();
        let zero = vec![0.0; 99];
        assert!(sys.rhs(&zero, 0.0).iter().all(|v| *v == 0.0));
        let f = sys.rhs(&zero, 1.0);
        let x = sys.nodes().unwrap();
        for j in 0..99 {
            assert_eq!(f[j], 2.0 * x[j] * (1.0 - x[j]));
        }
    }

    #[test]
    fn test2_source_term() {
        let sys = build_test2(100).unwrap();
        let zero = vec![0.0; 99];
        assert!(sys.rhs(&zero, 0.0).iter().all(|v| *v == 0.0));
        let f = sys.rhs(&zero, 1.0);
        for (j, x) in sys.nodes().unwrap().iter().enumerate() {
            let expected = if *x > 0.5 && *x < 1.0 { 1.0 } else { 0.0 };
            assert_eq!(f[j], expected, "node {x}");
        }
        assert_eq!(sys.control_box(), (-2.2, 0.0));
    }

    #[test]
    fn cost_density_values() {
        let sys = build_test1(100).unwrap();
        let zero = vec![0.0; 99];
        assert_eq!(eval_cost_density(&sys, &zero, 0.0), 0.0);
        assert!((eval_cost_density(&sys, &zero, 10.0) - 1.0).abs() < 1e-15);
        let ones = vec![1.0; 99];
        let expected = 0.01 * 99.0;
        assert!((eval_cost_density(&sys, &ones, 0.0) - expected).abs() < 1e-14);
        assert!((sys.norm(&ones) - expected.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn rejects_nonpositive_weights() {
        let r = ControlledSystem::new("bad", vec![1.0, 0.0], (0.0, 1.0), |_, _, _| {}, |_, _| 0.0);
        assert!(r.is_err());
    }

    #[test]
    fn assemble_linear_recovers_input() {
        let sys = build_test2(8).unwrap();
        let (a, b) = sys.assemble_linear();
        assert_eq!(a.nrows(), 7);
        for (j, v) in sys.input_vector().unwrap().iter().enumerate() {
            assert_eq!(b[j], *v);
        }
        // tridiagonal
        assert_eq!(a[(0, 3)], 0.0);
    }
}
