//! Proper orthogonal decomposition from mean and time-derivative snapshots.
//!
//! For trajectories `y^nu`, `nu = 1..p`, sampled at `t_j = j dt`, `j = 0..M`,
//! the snapshot family is
//!
//! ```text
//! z_1^nu = sqrt(N) * mean_j y^nu(t_j)
//! z_j^nu = tau * y_t^nu(t_{j-1}),   j = 2..N        (N = M + 1)
//! ```
//!
//! The basis comes from the eigenpairs of the `pN x pN` correlation matrix
//! `K_ab = (w_a, w_b) / (pN)` (method of snapshots) in the weighted inner
//! product of the system.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::dynamics::{integrate, ConstantControl, ControlledSystem, IntegratorConfig, Trajectory};
use crate::error::{Error, Result};
use crate::inner;

/// Sampled trajectories and their time derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotSet {
    pub dt: f64,
    pub horizon: f64,
    /// `states[nu][j] = y^nu(t_j)`
    pub states: Vec<Vec<Vec<f64>>>,
    /// `derivs[nu][j] = y_t^nu(t_j)`
    pub derivs: Vec<Vec<Vec<f64>>>,
    pub controls: Vec<f64>,
    pub weight: Vec<f64>,
}

impl SnapshotSet {
    pub fn new(
        dt: f64,
        states: Vec<Vec<Vec<f64>>>,
        derivs: Vec<Vec<Vec<f64>>>,
        controls: Vec<f64>,
        weight: Vec<f64>,
    ) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::DegenerateSnapshots("no trajectories".into()));
        }
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        let samples = states[0].len();
        if samples == 0 {
            return Err(Error::DegenerateSnapshots("no samples".into()));
        }
        if derivs.len() != states.len() || controls.len() != states.len() {
            return Err(Error::DimensionMismatch {
                expected: states.len(),
                found: derivs.len().min(controls.len()),
            });
        }
        for (s, d) in states.iter().zip(&derivs) {
            if s.len() != samples || d.len() != samples {
                return Err(Error::DimensionMismatch {
                    expected: samples,
                    found: s.len().min(d.len()),
                });
            }
            for v in s.iter().chain(d) {
                if v.len() != weight.len() {
                    return Err(Error::DimensionMismatch {
                        expected: weight.len(),
                        found: v.len(),
                    });
                }
            }
        }
        let horizon = dt * (samples - 1) as f64;
        Ok(Self {
            dt,
            horizon,
            states,
            derivs,
            controls,
            weight,
        })
    }

    pub fn trajectories(&self) -> usize {
        self.states.len()
    }

    /// Samples per trajectory, `N = M + 1`.
    pub fn samples(&self) -> usize {
        self.states[0].len()
    }

    /// Interval count `M`.
    pub fn intervals(&self) -> usize {
        self.samples() - 1
    }

    pub fn dim(&self) -> usize {
        self.weight.len()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.samples()).map(|j| j as f64 * self.dt).collect()
    }

    pub fn all_states(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.states.iter().flatten()
    }
}

/// Integrate one trajectory per constant control from `y0` and sample states
/// and right-hand-side derivatives every `dt` up to `horizon`.
///
/// With `quotient_at_zero` the derivative at `t = 0` is replaced by the
/// forward difference `(y(dt) - y(0)) / dt`, for initial data too rough for
/// `f(y0, u)` to be meaningful.
pub fn generate_snapshots(
    sys: &ControlledSystem,
    controls: &[f64],
    y0: &[f64],
    dt: f64,
    horizon: f64,
    cfg: &IntegratorConfig,
    quotient_at_zero: bool,
) -> Result<SnapshotSet> {
    if controls.is_empty() {
        return Err(Error::InvalidArgument("no snapshot controls".into()));
    }
    if !(dt > 0.0) || !(horizon >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need dt > 0 and horizon >= 0 (dt {dt}, horizon {horizon})"
        )));
    }
    let ratio = horizon / dt;
    let intervals = ratio.round();
    if (ratio - intervals).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "dt = {dt} does not divide the horizon {horizon}"
        )));
    }
    let intervals = intervals as usize;
    let times: Vec<f64> = (0..=intervals).map(|j| j as f64 * dt).collect();
    let t_end = *times.last().unwrap();

    let mut states = Vec::with_capacity(controls.len());
    let mut derivs = Vec::with_capacity(controls.len());
    for (index, &u) in controls.iter().enumerate() {
        let traj = integrate(sys, y0, &ConstantControl(u), (0.0, t_end), cfg, &times, true)
            .map_err(|e| Error::TrajectoryFailure {
                index,
                source: Box::new(e),
            })?;
        let Trajectory {
            states: ys,
            derivatives,
            ..
        } = traj;
        let mut ds = derivatives.expect("derivatives requested");
        if quotient_at_zero && ys.len() > 1 {
            ds[0] = ys[1].iter().zip(&ys[0]).map(|(a, b)| (a - b) / dt).collect();
        }
        states.push(ys);
        derivs.push(ds);
    }
    SnapshotSet::new(dt, states, derivs, controls.to_vec(), sys.weight().to_vec())
}

/// The `pN` snapshot vectors, grouped by trajectory.
pub fn assemble_snapshot_vectors(snap: &SnapshotSet, tau: f64) -> Result<Vec<Vec<f64>>> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidScale(format!("tau must be positive, got {tau}")));
    }
    let samples = snap.samples();
    let n = snap.dim();
    let root = (samples as f64).sqrt();
    let mut out = Vec::with_capacity(snap.trajectories() * samples);
    for (ys, ds) in snap.states.iter().zip(&snap.derivs) {
        let mut mean = vec![0.0; n];
        for y in ys {
            for (m, v) in mean.iter_mut().zip(y) {
                *m += v;
            }
        }
        out.push(mean.iter().map(|m| root * m / samples as f64).collect());
        for d in ds.iter().take(samples - 1) {
            out.push(d.iter().map(|v| tau * v).collect());
        }
    }
    Ok(out)
}

/// `K_ab = (w_a, w_b) / len`.
pub fn correlation_matrix(vectors: &[Vec<f64>], weight: &[f64]) -> Result<DMatrix<f64>> {
    if vectors.is_empty() {
        return Err(Error::InvalidArgument("empty snapshot list".into()));
    }
    for v in vectors {
        if v.len() != weight.len() {
            return Err(Error::DimensionMismatch {
                expected: weight.len(),
                found: v.len(),
            });
        }
    }
    let m = vectors.len();
    let scale = 1.0 / m as f64;
    let mut k = DMatrix::zeros(m, m);
    for a in 0..m {
        for b in a..m {
            let v = scale * inner::dot(weight, &vectors[a], &vectors[b]);
            k[(a, b)] = v;
            k[(b, a)] = v;
        }
    }
    Ok(k)
}

/// Orthonormal POD modes with their eigenvalues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PodBasis {
    pub modes: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub tau: f64,
    pub trajectories: usize,
    pub samples: usize,
    pub weight: Vec<f64>,
}

/// Deviation tolerance for mode orthonormality.
pub const ORTHONORMALITY_TOL: f64 = 1e-10;

impl PodBasis {
    /// The canonical basis scaled to be orthonormal in `weight`.
    ///
    /// Used to run the reduced solver as a full-space solver.
    pub fn identity(weight: Vec<f64>) -> Self {
        let n = weight.len();
        let modes = (0..n)
            .map(|k| {
                let mut e = vec![0.0; n];
                e[k] = 1.0 / weight[k].sqrt();
                e
            })
            .collect();
        Self {
            modes,
            eigenvalues: vec![1.0; n],
            tau: 1.0,
            trajectories: 0,
            samples: 0,
            weight,
        }
    }

    /// Number of retained modes `d`.
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.weight.len()
    }

    /// `sum_{k > r} lambda_k`.
    pub fn tail(&self, r: usize) -> f64 {
        self.eigenvalues.iter().skip(r).sum()
    }

    fn check_rank(&self, r: usize) -> Result<()> {
        if r == 0 || r > self.len() {
            return Err(Error::RankOutOfRange { r, d: self.len() });
        }
        Ok(())
    }

    /// Max-norm deviation of the mode Gram matrix from the identity.
    pub fn orthonormality_defect(&self) -> f64 {
        gram_defect(&self.modes, &self.weight)
    }

    /// Write `k, lambda_k` rows.
    pub fn write_spectrum_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "k,lambda_k")?;
        for (k, l) in self.eigenvalues.iter().enumerate() {
            writeln!(out, "{},{}", k + 1, l)?;
        }
        Ok(())
    }
}

fn gram_defect(modes: &[Vec<f64>], weight: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..modes.len() {
        for j in i..modes.len() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((inner::dot(weight, &modes[i], &modes[j]) - target).abs());
        }
    }
    worst
}

/// Default relative eigenvalue cut-off.
pub const DEFAULT_DROP_TOL: f64 = 1e-12;

/// POD basis of the snapshot set with time scale `tau`, keeping eigenpairs
/// with `lambda_k > drop_tol * lambda_1`.
pub fn compute_basis(snap: &SnapshotSet, tau: f64, drop_tol: f64) -> Result<PodBasis> {
    let vectors = assemble_snapshot_vectors(snap, tau)?;
    let mut basis = basis_from_vectors(&vectors, &snap.weight, drop_tol)?;
    basis.tau = tau;
    basis.trajectories = snap.trajectories();
    basis.samples = snap.samples();
    Ok(basis)
}

/// Method of snapshots on an arbitrary vector family.
pub fn basis_from_vectors(vectors: &[Vec<f64>], weight: &[f64], drop_tol: f64) -> Result<PodBasis> {
    let k = correlation_matrix(vectors, weight)?;
    let m = vectors.len();
    let eig = SymmetricEigen::new(k);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let lambda_1 = eig.eigenvalues[order[0]];
    if !(lambda_1 > 0.0) {
        return Err(Error::DegenerateSnapshots(
            "correlation matrix has no positive eigenvalue".into(),
        ));
    }
    let cutoff = drop_tol * lambda_1;
    let n = weight.len();
    let mut modes = Vec::new();
    let mut eigenvalues = Vec::new();
    for &idx in &order {
        let lambda = eig.eigenvalues[idx];
        if !(lambda > cutoff) || modes.len() == n {
            break;
        }
        let v = eig.eigenvectors.column(idx);
        let scale = 1.0 / ((m as f64).sqrt() * lambda.sqrt());
        let mut phi = vec![0.0; n];
        for (a, w) in vectors.iter().enumerate() {
            let c = scale * v[a];
            for (p, x) in phi.iter_mut().zip(w) {
                *p += c * x;
            }
        }
        modes.push(phi);
        eigenvalues.push(lambda);
    }
    if modes.is_empty() {
        return Err(Error::DegenerateSnapshots("all eigenvalues below the drop threshold".into()));
    }
    // Modes of tiny eigenvalues inherit roundoff amplified by 1/sqrt(lambda);
    // two Gram-Schmidt passes restore orthonormality without changing spans.
    if gram_defect(&modes, weight) > 0.1 * ORTHONORMALITY_TOL {
        for _ in 0..2 {
            reorthonormalize(&mut modes, weight);
        }
    }
    for phi in modes.iter_mut() {
        if let Some(first) = phi.iter().find(|v| v.abs() > 1e-14) {
            if *first < 0.0 {
                phi.iter_mut().for_each(|v| *v = -*v);
            }
        }
    }
    let defect = gram_defect(&modes, weight);
    if defect > ORTHONORMALITY_TOL {
        return Err(Error::DegenerateSnapshots(format!(
            "modes lost orthonormality (defect {defect:e})"
        )));
    }
    Ok(PodBasis {
        modes,
        eigenvalues,
        tau: 1.0,
        trajectories: 0,
        samples: m,
        weight: weight.to_vec(),
    })
}

fn reorthonormalize(modes: &mut [Vec<f64>], weight: &[f64]) {
    for i in 0..modes.len() {
        let (done, rest) = modes.split_at_mut(i);
        let phi = &mut rest[0];
        for q in done.iter() {
            let c = inner::dot(weight, phi, q);
            for (p, v) in phi.iter_mut().zip(q) {
                *p -= c * v;
            }
        }
        let nrm = inner::norm(weight, phi);
        phi.iter_mut().for_each(|v| *v /= nrm);
    }
}

/// Coordinates `{(y, phi_k)}_{k=1..r}`.
pub fn project_coeffs(basis: &PodBasis, y: &[f64], r: usize) -> Result<Vec<f64>> {
    basis.check_rank(r)?;
    if y.len() != basis.dim() {
        return Err(Error::DimensionMismatch {
            expected: basis.dim(),
            found: y.len(),
        });
    }
    Ok(basis.modes[..r]
        .iter()
        .map(|phi| inner::dot(&basis.weight, y, phi))
        .collect())
}

/// `sum_k coeffs[k] * phi_k`.
pub fn lift(basis: &PodBasis, coeffs: &[f64]) -> Result<Vec<f64>> {
    basis.check_rank(coeffs.len())?;
    let mut y = vec![0.0; basis.dim()];
    for (c, phi) in coeffs.iter().zip(&basis.modes) {
        for (v, p) in y.iter_mut().zip(phi) {
            *v += c * p;
        }
    }
    Ok(y)
}

/// Orthogonal projection `P^r y`.
pub fn project(basis: &PodBasis, y: &[f64], r: usize) -> Result<Vec<f64>> {
    lift(basis, &project_coeffs(basis, y, r)?)
}

fn residual_sq(basis: &PodBasis, y: &[f64], r: usize) -> Result<f64> {
    let p = project(basis, y, r)?;
    let diff: Vec<f64> = y.iter().zip(&p).map(|(a, b)| a - b).collect();
    Ok(inner::norm_sq(&basis.weight, &diff))
}

/// Projection errors of a snapshot set against their a-priori bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionDiagnostics {
    pub r: usize,
    /// `sum_{k > r} lambda_k`
    pub tail: f64,
    /// Mean squared projection residual of the snapshot vectors.
    pub snapshot_residual: f64,
    /// Per trajectory: `||ybar - P^r ybar||^2`.
    pub mean_errors: Vec<f64>,
    /// Per trajectory: `tau^2/(M+1) sum_{j=1..M} ||y_t(t_j) - P^r y_t(t_j)||^2`.
    pub derivative_errors: Vec<f64>,
    /// Bound on `mean_errors + derivative_errors`: `p * tail`.
    pub mean_derivative_bound: f64,
    /// Per trajectory: `max_j ||y(t_j) - P^r y(t_j)||^2`.
    pub pointwise_errors: Vec<f64>,
    /// Per trajectory: `int_0^T ||y_tt||^2`, trapezoid on differenced derivatives.
    pub second_derivative_energy: Vec<f64>,
    /// Per trajectory right side of the pointwise estimate.
    pub pointwise_bounds: Vec<f64>,
}

impl ProjectionDiagnostics {
    /// Smallest `bound - measured` over the pointwise estimates.
    pub fn pointwise_slack(&self) -> f64 {
        self.pointwise_bounds
            .iter()
            .zip(&self.pointwise_errors)
            .map(|(b, e)| b - e)
            .fold(f64::INFINITY, f64::min)
    }

    /// Smallest slack in the mean-plus-derivative estimate.
    pub fn mean_derivative_slack(&self) -> f64 {
        self.mean_errors
            .iter()
            .zip(&self.derivative_errors)
            .map(|(m, d)| self.mean_derivative_bound - m - d)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Measured projection errors of the snapshot trajectories and the
/// computable right-hand sides of the a-priori estimates.
pub fn projection_error_stats(
    basis: &PodBasis,
    snap: &SnapshotSet,
    r: usize,
) -> Result<ProjectionDiagnostics> {
    basis.check_rank(r)?;
    let tau = basis.tau;
    let p = snap.trajectories() as f64;
    let samples = snap.samples();
    let horizon = snap.horizon;
    let dt = snap.dt;
    let tail = basis.tail(r);
    let vectors = assemble_snapshot_vectors(snap, tau)?;
    let mut total = 0.0;
    for w in &vectors {
        total += residual_sq(basis, w, r)?;
    }
    let snapshot_residual = total / vectors.len() as f64;

    let mut mean_errors = Vec::new();
    let mut derivative_errors = Vec::new();
    let mut pointwise_errors = Vec::new();
    let mut energies = Vec::new();
    let mut bounds = Vec::new();
    for (ys, ds) in snap.states.iter().zip(&snap.derivs) {
        let mut mean = vec![0.0; snap.dim()];
        for y in ys {
            for (m, v) in mean.iter_mut().zip(y) {
                *m += v / samples as f64;
            }
        }
        mean_errors.push(residual_sq(basis, &mean, r)?);
        let mut deriv = 0.0;
        for d in ds.iter().skip(1) {
            deriv += residual_sq(basis, d, r)?;
        }
        derivative_errors.push(tau * tau / samples as f64 * deriv);
        let mut worst = 0.0f64;
        for y in ys {
            worst = worst.max(residual_sq(basis, y, r)?);
        }
        pointwise_errors.push(worst);
        let energy = second_derivative_energy(ds, dt, &snap.weight);
        energies.push(energy);
        bounds.push(
            (3.0 + 24.0 * horizon * horizon / (tau * tau)) * p * tail
                + 16.0 * horizon / 3.0 * dt * dt * energy,
        );
    }
    Ok(ProjectionDiagnostics {
        r,
        tail,
        snapshot_residual,
        mean_errors,
        derivative_errors,
        mean_derivative_bound: p * tail,
        pointwise_errors,
        second_derivative_energy: energies,
        pointwise_bounds: bounds,
    })
}

/// Trapezoid approximation of `int ||y_tt||^2` from sampled first
/// derivatives (central differences inside, one-sided at the ends).
fn second_derivative_energy(ds: &[Vec<f64>], dt: f64, weight: &[f64]) -> f64 {
    let m = ds.len();
    if m < 2 {
        return 0.0;
    }
    let values: Vec<f64> = (0..m)
        .map(|j| {
            let (lo, hi, span) = if j == 0 {
                (0, 1, dt)
            } else if j == m - 1 {
                (m - 2, m - 1, dt)
            } else {
                (j - 1, j + 1, 2.0 * dt)
            };
            let ytt: Vec<f64> = ds[hi].iter().zip(&ds[lo]).map(|(a, b)| (a - b) / span).collect();
            inner::norm_sq(weight, &ytt)
        })
        .collect();
    let mut integral = 0.0;
    for j in 0..m - 1 {
        integral += 0.5 * dt * (values[j] + values[j + 1]);
    }
    integral
}

/// Residual of the right-hand side outside the reduced space along a
/// trajectory, with the computable pieces of its a-priori bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhsProjectionSeries {
    pub times: Vec<f64>,
    /// `||(I - P^r) f(y(s), u(s))||`
    pub residuals: Vec<f64>,
    /// `min_{l, n} ||f(y(s), u(s)) - f(y^l(t_n), u^l)||`
    pub snapshot_distance: Vec<f64>,
    /// `(M+1)/tau^2 * p * tail`
    pub tail_term: f64,
}

pub fn rhs_projection_diagnostic(
    basis: &PodBasis,
    sys: &ControlledSystem,
    traj: &Trajectory,
    snap: &SnapshotSet,
    r: usize,
) -> Result<RhsProjectionSeries> {
    basis.check_rank(r)?;
    let snapshot_rhs: Vec<Vec<f64>> = snap
        .states
        .iter()
        .zip(&snap.controls)
        .flat_map(|(ys, &u)| ys.iter().map(move |y| sys.rhs(y, u)))
        .collect();
    let mut residuals = Vec::with_capacity(traj.len());
    let mut distance = Vec::with_capacity(traj.len());
    for (y, &u) in traj.states.iter().zip(&traj.controls) {
        let f = sys.rhs(y, u);
        residuals.push(residual_sq(basis, &f, r)?.sqrt());
        let nearest = snapshot_rhs
            .iter()
            .map(|g| {
                let d: Vec<f64> = f.iter().zip(g).map(|(a, b)| a - b).collect();
                inner::norm(&basis.weight, &d)
            })
            .fold(f64::INFINITY, f64::min);
        distance.push(nearest);
    }
    let tail_term = snap.samples() as f64 / (basis.tau * basis.tau)
        * snap.trajectories() as f64
        * basis.tail(r);
    Ok(RhsProjectionSeries {
        times: traj.times.clone(),
        residuals,
        snapshot_distance: distance,
        tail_term,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_snapshots(seed: u64, n: usize, p: usize, samples: usize) -> SnapshotSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gen = |len: usize| -> Vec<Vec<f64>> {
            (0..len)
                .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect()
        };
        let states: Vec<_> = (0..p).map(|_| gen(samples)).collect();
        let derivs: Vec<_> = (0..p).map(|_| gen(samples)).collect();
        let weight = vec![1.0 / n as f64; n];
        SnapshotSet::new(0.1, states, derivs, vec![0.0; p], weight).unwrap()
    }

    #[test]
    fn snapshot_vectors_follow_definition() {
        let a = vec![1.0, 2.0];
        let b = vec![3.0, -1.0];
        let snap = SnapshotSet::new(
            0.5,
            vec![vec![a.clone(), b.clone()]],
            vec![vec![vec![0.5, 0.25], vec![9.0, 9.0]]],
            vec![0.0],
            vec![1.0, 1.0],
        )
        .unwrap();
        let w = assemble_snapshot_vectors(&snap, 2.0).unwrap();
        assert_eq!(w.len(), 2);
        let root2 = 2f64.sqrt();
        assert!((w[0][0] - root2 * 2.0).abs() < 1e-15);
        assert!((w[0][1] - root2 * 0.5).abs() < 1e-15);
        assert_eq!(w[1], vec![1.0, 0.5]);
        let w4 = assemble_snapshot_vectors(&snap, 4.0).unwrap();
        assert_eq!(w4[0], w[0]);
        assert_eq!(w4[1], vec![2.0, 1.0]);
        assert!(matches!(
            assemble_snapshot_vectors(&snap, 0.0),
            Err(Error::InvalidScale(_))
        ));
    }

    #[test]
    fn correlation_of_orthonormal_pair() {
        let k = correlation_matrix(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[1.0, 1.0]).unwrap();
        assert_eq!(k, DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]));
        let single = correlation_matrix(&[vec![0.6, 0.8]], &[1.0, 1.0]).unwrap();
        assert!((single[(0, 0)] - 1.0).abs() < 1e-15);
        assert!(correlation_matrix(&[vec![1.0]], &[1.0, 1.0]).is_err());
        assert!(correlation_matrix(&[], &[1.0]).is_err());
    }

    #[test]
    fn correlation_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let weight: Vec<f64> = (0..5).map(|_| rng.random_range(0.1..1.0)).collect();
        let vecs: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let k = correlation_matrix(&vecs, &weight).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                let mut s = 0.0;
                for j in 0..5 {
                    s += weight[j] * vecs[a][j] * vecs[b][j];
                }
                assert!((k[(a, b)] - s / 3.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn line_snapshots_give_one_mode() {
        let dir = [3.0, 4.0];
        let vecs: Vec<Vec<f64>> = [1.0, -2.0, 0.5].iter().map(|c| vec![c * dir[0], c * dir[1]]).collect();
        let basis = basis_from_vectors(&vecs, &[1.0, 1.0], DEFAULT_DROP_TOL).unwrap();
        assert_eq!(basis.len(), 1);
        assert!((basis.modes[0][0] - 0.6).abs() < 1e-12);
        assert!((basis.modes[0][1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn orthonormal_snapshots_have_flat_spectrum() {
        let vecs = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        let basis = basis_from_vectors(&vecs, &[1.0; 3], DEFAULT_DROP_TOL).unwrap();
        assert_eq!(basis.len(), 2);
        for l in &basis.eigenvalues {
            assert!((l - 0.5).abs() < 1e-14);
        }
        for v in &vecs {
            assert!(residual_sq(&basis, v, 2).unwrap() < 1e-28);
        }
    }

    #[test]
    fn zero_snapshots_are_degenerate() {
        let vecs = vec![vec![0.0; 3]; 4];
        assert!(matches!(
            basis_from_vectors(&vecs, &[1.0; 3], DEFAULT_DROP_TOL),
            Err(Error::DegenerateSnapshots(_))
        ));
    }

    #[test]
    fn exactness_identity_on_random_sets() {
        let snap = random_snapshots(11, 20, 2, 10);
        let basis = compute_basis(&snap, 1.0, DEFAULT_DROP_TOL).unwrap();
        let vecs = assemble_snapshot_vectors(&snap, 1.0).unwrap();
        for r in 1..=basis.len() {
            let lhs: f64 =
                vecs.iter().map(|w| residual_sq(&basis, w, r).unwrap()).sum::<f64>() / vecs.len() as f64;
            assert!((lhs - basis.tail(r)).abs() < 1e-10, "r = {r}");
        }
        assert!(basis.orthonormality_defect() < ORTHONORMALITY_TOL);
    }

    #[test]
    fn projection_and_lift() {
        let snap = random_snapshots(5, 12, 2, 4);
        let basis = compute_basis(&snap, 1.0, DEFAULT_DROP_TOL).unwrap();
        let c = project_coeffs(&basis, &basis.modes[0], 3).unwrap();
        assert!((c[0] - 1.0).abs() < 1e-12 && c[1].abs() < 1e-12 && c[2].abs() < 1e-12);
        assert_eq!(lift(&basis, &[0.0, 0.0]).unwrap(), vec![0.0; 12]);
        let e1 = lift(&basis, &[1.0]).unwrap();
        assert_eq!(e1, basis.modes[0]);
        assert!(matches!(project_coeffs(&basis, &e1, 0), Err(Error::RankOutOfRange { .. })));
        assert!(matches!(
            project_coeffs(&basis, &e1, basis.len() + 1),
            Err(Error::RankOutOfRange { .. })
        ));
        let in_span = lift(&basis, &[0.3, -1.2, 0.7]).unwrap();
        let back = project(&basis, &in_span, 3).unwrap();
        assert!(inner::max_abs_diff(&back, &in_span) < 1e-12);
    }

    #[test]
    fn full_rank_diagnostics_vanish() {
        let snap = random_snapshots(8, 6, 2, 5);
        let basis = compute_basis(&snap, 1.0, DEFAULT_DROP_TOL).unwrap();
        assert_eq!(basis.len(), 6);
        let diag = projection_error_stats(&basis, &snap, 6).unwrap();
        assert_eq!(diag.tail, 0.0);
        assert!(diag.pointwise_errors.iter().all(|e| *e < 1e-24));
        assert!(diag.mean_errors.iter().all(|e| *e < 1e-24));
    }

    #[test]
    fn constant_snapshots_pointwise_equals_mean_error() {
        let c = vec![1.0, 2.0, -1.0];
        let other = vec![0.0, 1.0, 1.0];
        let snap = SnapshotSet::new(
            0.1,
            vec![vec![c.clone(); 4], vec![other.clone(); 4]],
            vec![vec![vec![0.0; 3]; 4]; 2],
            vec![0.0, 1.0],
            vec![1.0; 3],
        )
        .unwrap();
        let basis = compute_basis(&snap, 1.0, DEFAULT_DROP_TOL).unwrap();
        assert_eq!(basis.len(), 2);
        let diag = projection_error_stats(&basis, &snap, 1).unwrap();
        for (p, m) in diag.pointwise_errors.iter().zip(&diag.mean_errors) {
            assert!((p - m).abs() <= 1e-14 * p.max(1.0));
        }
    }

    #[test]
    fn spectrum_csv_format() {
        let basis = PodBasis::identity(vec![1.0, 1.0]);
        let mut buf = Vec::new();
        basis.write_spectrum_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "k,lambda_k\n1,1\n2,1\n");
    }
}
