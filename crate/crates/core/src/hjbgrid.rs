//! Uniform lattice on a box with the implicit Kuhn triangulation.
//!
//! Every cell is split into `r!` simplices, one per ordering of the axes; the
//! simplex containing a point is the one whose axis ordering sorts the
//! fractional cell coordinates in decreasing order. Nothing beyond the lattice
//! shape is stored.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reduced::Hyperbox;

/// Default cap on the number of lattice nodes.
pub const DEFAULT_NODE_BUDGET: usize = 5_000_000;

/// Fractional coordinates within this distance of a lattice plane snap to it.
const SNAP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexGrid {
    pub domain: Hyperbox,
    pub cells_per_axis: Vec<usize>,
    pub edge: Vec<f64>,
    pub node_count: usize,
    /// Largest simplex diameter, equal to the cell diagonal.
    pub k_r: f64,
    /// Lattice index of the anchor node per axis (zero when unanchored).
    pub anchor_index: Vec<usize>,
    /// Coordinates of the anchor node (the lower corner when unanchored).
    pub anchor: Vec<f64>,
    strides: Vec<usize>,
}

/// Barycentric interpolation weights on the vertices of one simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct Stencil {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
}

impl Stencil {
    pub fn apply(&self, nodal: &[f64]) -> f64 {
        self.indices
            .iter()
            .zip(&self.weights)
            .map(|(&i, w)| w * nodal[i])
            .sum()
    }
}

/// Per-axis cell counts with cell diagonal at most `diameter` and the fewest
/// nodes among lattices with a common target edge.
fn choose_counts(widths: &[f64], diameter: f64, budget: usize) -> Result<Vec<usize>> {
    let r = widths.len();
    let floor_edge = diameter / (r as f64).sqrt();
    let counts_for = |edge: f64| -> Vec<usize> {
        widths
            .iter()
            .map(|w| ((w / edge) * (1.0 - 1e-14)).ceil().max(1.0) as usize)
            .collect()
    };
    let feasible = |n: &[usize]| -> bool {
        let d2: f64 = widths.iter().zip(n).map(|(w, c)| (w / *c as f64).powi(2)).sum();
        d2 <= diameter * diameter * (1.0 + 1e-12)
    };
    let lower_bound: f64 = widths
        .iter()
        .map(|w| (w / diameter).ceil().max(1.0) + 1.0)
        .product();
    if lower_bound > budget as f64 {
        return Err(Error::GridTooFine {
            nodes: lower_bound.min(u128::MAX as f64) as u128,
            budget,
        });
    }
    // Counts are monotone in the target edge, so the largest feasible
    // breakpoint `w_k / m` gives the fewest nodes.
    let mut candidates = vec![floor_edge];
    for w in widths {
        let m_max = (w / floor_edge).ceil() as usize;
        for m in 1..=m_max {
            let e = w / m as f64;
            if e >= floor_edge {
                candidates.push(e);
            }
        }
    }
    candidates.sort_by(|a, b| b.total_cmp(a));
    let counts = candidates
        .into_iter()
        .map(counts_for)
        .find(|n| feasible(n))
        .unwrap_or_else(|| counts_for(floor_edge));
    Ok(counts)
}

fn node_total(counts: &[usize], budget: usize) -> Result<usize> {
    let total: u128 = counts.iter().map(|c| *c as u128 + 1).product();
    if total > budget as u128 {
        return Err(Error::GridTooFine {
            nodes: total,
            budget,
        });
    }
    Ok(total as usize)
}

impl SimplexGrid {
    /// Lattice on `domain` with simplex diameter at most `diameter`.
    pub fn build(domain: &Hyperbox, diameter: f64, budget: usize) -> Result<Self> {
        Self::build_anchored(domain, diameter, budget, None)
    }

    /// As [`SimplexGrid::build`], and with `anchor` the box grows outward to
    /// the lattice through that point so it becomes a node exactly.
    pub fn build_anchored(
        domain: &Hyperbox,
        diameter: f64,
        budget: usize,
        anchor: Option<&[f64]>,
    ) -> Result<Self> {
        if !(diameter > 0.0) || !diameter.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "target diameter must be positive, got {diameter}"
            )));
        }
        let r = domain.dim();
        let widths: Vec<f64> = (0..r).map(|k| domain.width(k)).collect();
        let mut counts = choose_counts(&widths, diameter, budget)?;
        let edge: Vec<f64> = widths.iter().zip(&counts).map(|(w, c)| w / *c as f64).collect();
        let (domain, anchor_index, anchor) = match anchor {
            None => (domain.clone(), vec![0; r], domain.lower.clone()),
            Some(a) => {
                if a.len() != r {
                    return Err(Error::DimensionMismatch {
                        expected: r,
                        found: a.len(),
                    });
                }
                let mut lower = vec![0.0; r];
                let mut upper = vec![0.0; r];
                let mut index = vec![0; r];
                for k in 0..r {
                    // steps from the anchor; the anchor is always a node
                    let lo_n = ((domain.lower[k] - a[k]) / edge[k] + 1e-9).floor().min(0.0);
                    let hi_n = ((domain.upper[k] - a[k]) / edge[k] - 1e-9).ceil().max(0.0);
                    lower[k] = a[k] + lo_n * edge[k];
                    upper[k] = a[k] + hi_n * edge[k];
                    counts[k] = (hi_n - lo_n) as usize;
                    index[k] = (-lo_n) as usize;
                }
                (Hyperbox::new(lower, upper)?, index, a.to_vec())
            }
        };
        let node_count = node_total(&counts, budget)?;
        let mut strides = vec![1; r];
        for k in 1..r {
            strides[k] = strides[k - 1] * (counts[k - 1] + 1);
        }
        let k_r = edge.iter().map(|e| e * e).sum::<f64>().sqrt();
        Ok(Self {
            domain,
            cells_per_axis: counts,
            edge,
            node_count,
            k_r,
            anchor_index,
            anchor,
            strides,
        })
    }

    pub fn dim(&self) -> usize {
        self.edge.len()
    }

    /// Flat index of a lattice multi-index; axis 0 varies fastest.
    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for k in (0..self.dim()).rev() {
            out[k] = flat / self.strides[k];
            flat %= self.strides[k];
        }
        out
    }

    pub fn axis_coordinate(&self, k: usize, j: usize) -> f64 {
        self.anchor[k] + (j as f64 - self.anchor_index[k] as f64) * self.edge[k]
    }

    pub fn node(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .iter()
            .enumerate()
            .map(|(k, &j)| self.axis_coordinate(k, j))
            .collect()
    }

    pub fn nodes(&self) -> Vec<Vec<f64>> {
        (0..self.node_count).map(|i| self.node(i)).collect()
    }

    /// Stencil into caller buffers of length `r + 1`; the point must be
    /// finite and inside the box (coordinates outside are clamped).
    pub(crate) fn stencil_into(
        &self,
        point: &[f64],
        indices: &mut [u32],
        weights: &mut [f64],
        scratch: &mut Vec<(f64, usize)>,
    ) {
        let r = self.dim();
        scratch.clear();
        let mut base = 0usize;
        for k in 0..r {
            let n = self.cells_per_axis[k];
            let mut q = (point[k] - self.domain.lower[k]) / self.edge[k];
            let nearest = q.round();
            if (q - nearest).abs() < SNAP_TOL {
                q = nearest;
            }
            let q = q.clamp(0.0, n as f64);
            // half-open cells; the upper face belongs to the last cell
            let cell = (q.floor() as usize).min(n - 1);
            base += cell * self.strides[k];
            scratch.push((q - cell as f64, k));
        }
        // stable: equal fractions keep axis order
        scratch.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut idx = base;
        indices[0] = idx as u32;
        weights[0] = 1.0 - scratch[0].0;
        for j in 0..r {
            idx += self.strides[scratch[j].1];
            indices[j + 1] = idx as u32;
            let next = if j + 1 < r { scratch[j + 1].0 } else { 0.0 };
            weights[j + 1] = scratch[j].0 - next;
        }
    }

    /// Kuhn-simplex stencil of a point; exterior points are clamped.
    pub fn stencil(&self, point: &[f64]) -> Result<Stencil> {
        self.check_point(point)?;
        let r = self.dim();
        let mut idx = vec![0u32; r + 1];
        let mut w = vec![0.0; r + 1];
        self.stencil_into(point, &mut idx, &mut w, &mut Vec::with_capacity(r));
        Ok(Stencil {
            indices: idx.into_iter().map(|i| i as usize).collect(),
            weights: w,
        })
    }

    /// Stencil of `point` on the Kuhn simplex of the given cell and axis
    /// ordering, even if the point lies outside it (weights may be negative).
    pub fn stencil_in_cell(&self, point: &[f64], cell: &[usize], order: &[usize]) -> Stencil {
        let r = self.dim();
        let theta: Vec<f64> = (0..r)
            .map(|k| (point[k] - self.domain.lower[k]) / self.edge[k] - cell[k] as f64)
            .collect();
        let mut idx = self.flat_index(cell);
        let mut indices = vec![idx];
        let mut weights = vec![1.0 - theta[order[0]]];
        for j in 0..r {
            idx += self.strides[order[j]];
            indices.push(idx);
            let next = if j + 1 < r { theta[order[j + 1]] } else { 0.0 };
            weights.push(theta[order[j]] - next);
        }
        Stencil { indices, weights }
    }

    fn check_point(&self, point: &[f64]) -> Result<()> {
        if point.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: point.len(),
            });
        }
        if point.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidPoint(format!("{point:?}")));
        }
        Ok(())
    }

    pub fn interpolate(&self, nodal: &[f64], point: &[f64]) -> Result<f64> {
        if nodal.len() != self.node_count {
            return Err(Error::DimensionMismatch {
                expected: self.node_count,
                found: nodal.len(),
            });
        }
        Ok(self.stencil(point)?.apply(nodal))
    }
}

pub fn build_grid(domain: &Hyperbox, target_diameter: f64) -> Result<SimplexGrid> {
    SimplexGrid::build(domain, target_diameter, DEFAULT_NODE_BUDGET)
}

pub fn interpolation_stencil(grid: &SimplexGrid, point: &[f64]) -> Result<Stencil> {
    grid.stencil(point)
}

pub fn interpolate(grid: &SimplexGrid, nodal: &[f64], point: &[f64]) -> Result<f64> {
    grid.interpolate(nodal, point)
}
