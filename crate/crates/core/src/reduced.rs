//! Galerkin-reduced dynamics in POD coordinates and the reduced state box.

use serde::{Deserialize, Serialize};

use crate::dynamics::ControlledSystem;
use crate::error::{Error, Result};
use crate::inner;
use crate::pod::{PodBasis, SnapshotSet};

/// `f^r(y_r, u) = P_c f(phi y_r, u)` and `g^r(y_r, u) = g(phi y_r, u)`.
#[derive(Debug, Clone)]
pub struct ReducedSystem<'a> {
    sys: &'a ControlledSystem,
    basis: &'a PodBasis,
    r: usize,
    /// `P_c b` when the full system is control-affine.
    input_coeffs: Option<Vec<f64>>,
}

impl<'a> ReducedSystem<'a> {
    pub fn new(sys: &'a ControlledSystem, basis: &'a PodBasis, r: usize) -> Result<Self> {
        if r == 0 || r > basis.len() {
            return Err(Error::RankOutOfRange { r, d: basis.len() });
        }
        if basis.dim() != sys.dim() {
            return Err(Error::DimensionMismatch {
                expected: sys.dim(),
                found: basis.dim(),
            });
        }
        let mut rs = Self {
            sys,
            basis,
            r,
            input_coeffs: None,
        };
        rs.input_coeffs = sys.input_vector().map(|b| rs.project(b));
        Ok(rs)
    }

    pub fn dim(&self) -> usize {
        self.r
    }

    pub fn system(&self) -> &'a ControlledSystem {
        self.sys
    }

    pub fn basis(&self) -> &'a PodBasis {
        self.basis
    }

    pub fn lift(&self, yr: &[f64]) -> Vec<f64> {
        debug_assert_eq!(yr.len(), self.r);
        let mut y = vec![0.0; self.sys.dim()];
        for (c, phi) in yr.iter().zip(&self.basis.modes) {
            for (v, p) in y.iter_mut().zip(phi) {
                *v += c * p;
            }
        }
        y
    }

    pub fn project(&self, y: &[f64]) -> Vec<f64> {
        self.basis.modes[..self.r]
            .iter()
            .map(|phi| inner::dot(&self.basis.weight, y, phi))
            .collect()
    }

    pub fn rhs(&self, yr: &[f64], u: f64) -> Vec<f64> {
        self.project(&self.sys.rhs(&self.lift(yr), u))
    }

    pub fn cost(&self, yr: &[f64], u: f64) -> f64 {
        self.sys.running_cost(&self.lift(yr), u)
    }

    /// `(f^r(y_r, u), g^r(y_r, u))` for every control, lifting once.
    ///
    /// Control-affine systems evaluate the full right-hand side once.
    pub fn evaluate_controls(&self, yr: &[f64], controls: &[f64]) -> Vec<(Vec<f64>, f64)> {
        let y = self.lift(yr);
        match &self.input_coeffs {
            Some(b) => {
                let drift = self.project(&self.sys.rhs(&y, 0.0));
                controls
                    .iter()
                    .map(|&u| {
                        let f = drift.iter().zip(b).map(|(d, b)| d + u * b).collect();
                        (f, self.sys.running_cost(&y, u))
                    })
                    .collect()
            }
            None => controls
                .iter()
                .map(|&u| {
                    (
                        self.project(&self.sys.rhs(&y, u)),
                        self.sys.running_cost(&y, u),
                    )
                })
                .collect(),
        }
    }
}

pub fn reduced_rhs(rs: &ReducedSystem<'_>, yr: &[f64], u: f64) -> Vec<f64> {
    rs.rhs(yr, u)
}

pub fn reduced_cost(rs: &ReducedSystem<'_>, yr: &[f64], u: f64) -> f64 {
    rs.cost(yr, u)
}

/// Closed axis-aligned box `[lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperbox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Width given to axes on which all projections coincide.
pub const MIN_AXIS_WIDTH: f64 = 1e-6;

impl Hyperbox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                found: upper.len(),
            });
        }
        if lower.is_empty() {
            return Err(Error::InvalidArgument("box must have at least one axis".into()));
        }
        for (k, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l < u) || !l.is_finite() || !u.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "axis {k}: need lower < upper, got [{l}, {u}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn width(&self, k: usize) -> f64 {
        self.upper[k] - self.lower[k]
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    /// Smallest box containing `self` and `x`.
    pub fn enclose(&self, x: &[f64]) -> Self {
        Self {
            lower: self.lower.iter().zip(x).map(|(l, v)| l.min(*v)).collect(),
            upper: self.upper.iter().zip(x).map(|(u, v)| u.max(*v)).collect(),
        }
    }
}

/// Bounding box of the projected snapshot states, inflated by
/// `margin * width` on each side.
pub fn build_domain(basis: &PodBasis, snap: &SnapshotSet, r: usize, margin: f64) -> Result<Hyperbox> {
    if r == 0 || r > basis.len() {
        return Err(Error::RankOutOfRange { r, d: basis.len() });
    }
    let points: Vec<Vec<f64>> = snap
        .all_states()
        .map(|y| crate::pod::project_coeffs(basis, y, r))
        .collect::<Result<_>>()?;
    bounding_box(&points, margin)
}

/// Bounding box of a point cloud, inflated by `margin * width` per side.
pub fn bounding_box(points: &[Vec<f64>], margin: f64) -> Result<Hyperbox> {
    if !(margin >= 0.0) || !margin.is_finite() {
        return Err(Error::InvalidArgument(format!("margin must be >= 0, got {margin}")));
    }
    let first = points
        .first()
        .ok_or_else(|| Error::InvalidArgument("no points to bound".into()))?;
    let r = first.len();
    let mut lower = first.clone();
    let mut upper = first.clone();
    for p in points {
        if p.len() != r {
            return Err(Error::DimensionMismatch {
                expected: r,
                found: p.len(),
            });
        }
        for k in 0..r {
            lower[k] = lower[k].min(p[k]);
            upper[k] = upper[k].max(p[k]);
        }
    }
    for k in 0..r {
        let w = upper[k] - lower[k];
        if w > 0.0 {
            lower[k] -= margin * w;
            upper[k] += margin * w;
        } else {
            log::warn!("reduced box axis {k} is degenerate; widening to {MIN_AXIS_WIDTH:e}");
            lower[k] -= 0.5 * MIN_AXIS_WIDTH;
            upper[k] += 0.5 * MIN_AXIS_WIDTH;
        }
    }
    Hyperbox::new(lower, upper)
}

/// Closest point of the box and `|delta_k| / width_k` per axis.
pub fn clamp_to_domain(domain: &Hyperbox, point: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut out = point.to_vec();
    let change = clamp_in_place(domain, &mut out);
    (out, change)
}

pub(crate) fn clamp_in_place(domain: &Hyperbox, point: &mut [f64]) -> Vec<f64> {
    point
        .iter_mut()
        .enumerate()
        .map(|(k, v)| {
            let c = v.clamp(domain.lower[k], domain.upper[k]);
            let rel = (c - *v).abs() / domain.width(k);
            *v = c;
            rel
        })
        .collect()
}

/// How often explicit Euler arrivals leave the box and by how much.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub checked: usize,
    pub violations: usize,
    /// Per axis, largest clamping displacement as a fraction of the width.
    pub max_displacement: Vec<f64>,
}

impl InvarianceReport {
    pub fn new(r: usize) -> Self {
        Self {
            checked: 0,
            violations: 0,
            max_displacement: vec![0.0; r],
        }
    }

    /// Account for one arrival given its per-axis relative clamp change.
    pub fn record(&mut self, change: &[f64]) {
        self.checked += 1;
        if change.iter().any(|c| *c > 0.0) {
            self.violations += 1;
        }
        for (m, c) in self.max_displacement.iter_mut().zip(change) {
            *m = m.max(*c);
        }
    }

    pub fn merge(&mut self, other: &Self) {
        self.checked += other.checked;
        self.violations += other.violations;
        for (m, c) in self.max_displacement.iter_mut().zip(&other.max_displacement) {
            *m = m.max(*c);
        }
    }

    pub fn is_invariant(&self) -> bool {
        self.violations == 0
    }
}

/// Test `y + h f^r(y, u)` against the box for every node and control.
pub fn check_invariance(
    rs: &ReducedSystem<'_>,
    domain: &Hyperbox,
    nodes: &[Vec<f64>],
    controls: &[f64],
    h: f64,
) -> Result<InvarianceReport> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("h must be positive, got {h}")));
    }
    let mut report = InvarianceReport::new(domain.dim());
    for y in nodes {
        for (f, _) in rs.evaluate_controls(y, controls) {
            let mut arrival: Vec<f64> = y.iter().zip(&f).map(|(a, b)| a + h * b).collect();
            let change = clamp_in_place(domain, &mut arrival);
            report.record(&change);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::build_test1;
    use crate::pod::{basis_from_vectors, lift, project_coeffs, DEFAULT_DROP_TOL};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_system(n: usize, f: f64) -> ControlledSystem {
        ControlledSystem::new(
            "const",
            vec![1.0; n],
            (-1.0, 1.0),
            move |_, _, out| out.fill(f),
            |_, _| 0.0,
        )
        .unwrap()
    }

    #[test]
    fn identity_reduction_is_exact() {
        let sys = ControlledSystem::new(
            "lin",
            vec![1.0; 3],
            (-1.0, 1.0),
            |y, u, out| {
                out[0] = -y[0] + y[2];
                out[1] = 2.0 * y[1] * y[0];
                out[2] = u - y[2];
            },
            |y, u| y[0] * y[0] + u,
        )
        .unwrap();
        let basis = PodBasis::identity(vec![1.0; 3]);
        let rs = ReducedSystem::new(&sys, &basis, 3).unwrap();
        let y = [0.3, -1.0, 2.0];
        assert_eq!(rs.rhs(&y, 0.5), sys.rhs(&y, 0.5));
        assert_eq!(rs.cost(&y, 0.5), sys.running_cost(&y, 0.5));
        assert!(matches!(
            ReducedSystem::new(&sys, &basis, 4),
            Err(Error::RankOutOfRange { .. })
        ));
    }

    #[test]
    fn zero_field_gives_zero() {
        let sys = unit_system(4, 0.0);
        let basis = PodBasis::identity(vec![1.0; 4]);
        let rs = ReducedSystem::new(&sys, &basis, 2).unwrap();
        assert_eq!(reduced_rhs(&rs, &[1.0, 2.0], 0.3), vec![0.0, 0.0]);
    }

    #[test]
    fn test1_composition_oracle() {
        let sys = build_test1(20).unwrap();
        let n = sys.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let vecs: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let basis = basis_from_vectors(&vecs, sys.weight(), DEFAULT_DROP_TOL).unwrap();
        let rs = ReducedSystem::new(&sys, &basis, 4).unwrap();
        for _ in 0..5 {
            let yr: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let u = rng.random_range(-1.0..1.0);
            let full = lift(&basis, &yr).unwrap();
            let expected = project_coeffs(&basis, &sys.rhs(&full, u), 4).unwrap();
            let got = reduced_rhs(&rs, &yr, u);
            assert!(inner::max_abs_diff(&got, &expected) < 1e-14);
            let pair = &rs.evaluate_controls(&yr, &[u])[0];
            assert!(inner::max_abs_diff(&pair.0, &expected) < 1e-12);
            assert_eq!(reduced_cost(&rs, &yr, u), crate::dynamics::eval_cost_density(&sys, &full, u));
        }
        assert_eq!(reduced_cost(&rs, &[0.0; 4], 0.0), 0.0);
        assert!((reduced_cost(&rs, &[0.0; 4], 10.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bounding_box_of_two_points() {
        let b = bounding_box(&[vec![0.0, 0.0], vec![1.0, 2.0]], 0.0).unwrap();
        assert_eq!(b.lower, vec![0.0, 0.0]);
        assert_eq!(b.upper, vec![1.0, 2.0]);
        let m = bounding_box(&[vec![0.0, 0.0], vec![1.0, 2.0]], 0.1).unwrap();
        assert!((m.lower[1] + 0.2).abs() < 1e-15 && (m.upper[0] - 1.1).abs() < 1e-15);
        let d = bounding_box(&[vec![1.0], vec![1.0]], 0.0).unwrap();
        assert!((d.width(0) - MIN_AXIS_WIDTH).abs() < 1e-15);
        assert!(bounding_box(&[vec![1.0]], -1.0).is_err());
    }

    #[test]
    fn clamp_examples() {
        let b = Hyperbox::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let (p, c) = clamp_to_domain(&b, &[0.5, 0.25]);
        assert_eq!(p, vec![0.5, 0.25]);
        assert_eq!(c, vec![0.0, 0.0]);
        let (p, c) = clamp_to_domain(&b, &[1.2, 0.5]);
        assert_eq!(p, vec![1.0, 0.5]);
        assert!((c[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn invariance_hand_example() {
        let sys = unit_system(1, 1.0);
        let basis = PodBasis::identity(vec![1.0]);
        let rs = ReducedSystem::new(&sys, &basis, 1).unwrap();
        let b = Hyperbox::new(vec![0.0], vec![1.0]).unwrap();
        let rep = check_invariance(&rs, &b, &[vec![1.0]], &[0.0], 0.5).unwrap();
        assert_eq!(rep.checked, 1);
        assert_eq!(rep.violations, 1);
        assert!((rep.max_displacement[0] - 0.5).abs() < 1e-15);

        let still = unit_system(2, 0.0);
        let basis2 = PodBasis::identity(vec![1.0; 2]);
        let rs2 = ReducedSystem::new(&still, &basis2, 2).unwrap();
        let b2 = Hyperbox::new(vec![0.0; 2], vec![1.0; 2]).unwrap();
        let nodes = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.5, 0.0]];
        let rep = check_invariance(&rs2, &b2, &nodes, &[-1.0, 1.0], 0.1).unwrap();
        assert_eq!((rep.checked, rep.violations), (6, 0));
        assert!(check_invariance(&rs2, &b2, &nodes, &[0.0], 0.0).is_err());
    }
}
