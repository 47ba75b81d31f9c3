/// LU factors of a constant-coefficient tridiagonal matrix, computed once.
///
/// Stores the Thomas-algorithm multipliers so each solve is a forward and a
/// backward sweep with no divisions beyond the stored pivots.
#[derive(Debug, Clone)]
pub struct TridiagonalLu {
    lower: Vec<f64>,
    pivots: Vec<f64>,
    upper: Vec<f64>,
}

impl TridiagonalLu {
    /// Factor the `n x n` Toeplitz tridiagonal matrix with the given bands.
    pub fn toeplitz(n: usize, sub: f64, diag: f64, sup: f64) -> Self {
        let mut lower = vec![0.0; n];
        let mut pivots = vec![0.0; n];
        pivots[0] = diag;
        for i in 1..n {
            lower[i] = sub / pivots[i - 1];
            pivots[i] = diag - lower[i] * sup;
        }
        Self {
            lower,
            pivots,
            upper: vec![sup; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.pivots.len()
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.pivots.len();
        debug_assert_eq!(x.len(), n);
        for i in 1..n {
            x[i] -= self.lower[i] * x[i - 1];
        }
        x[n - 1] /= self.pivots[n - 1];
        for i in (0..n - 1).rev() {
            x[i] = (x[i] - self.upper[i] * x[i + 1]) / self.pivots[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn matches_dense_solve() {
        let n = 7;
        let lu = TridiagonalLu::toeplitz(n, 1.0 / 12.0, 10.0 / 12.0, 1.0 / 12.0);
        let dense = DMatrix::from_fn(n, n, |i, j| match i.abs_diff(j) {
            0 => 10.0 / 12.0,
            1 => 1.0 / 12.0,
            _ => 0.0,
        });
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
        let expected = dense.lu().solve(&DVector::from_vec(rhs.clone())).unwrap();
        let mut x = rhs;
        lu.solve_in_place(&mut x);
        for i in 0..n {
            assert!((x[i] - expected[i]).abs() < 1e-14);
        }
    }
}
