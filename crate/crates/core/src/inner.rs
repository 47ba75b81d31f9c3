//! Weighted Euclidean inner products `(y, z) = Σ_j w_j y_j z_j`.

#[inline]
pub fn dot(weight: &[f64], a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(weight.len(), a.len());
    debug_assert_eq!(weight.len(), b.len());
    weight
        .iter()
        .zip(a.iter().zip(b))
        .map(|(w, (x, y))| w * x * y)
        .sum()
}

#[inline]
pub fn norm_sq(weight: &[f64], a: &[f64]) -> f64 {
    dot(weight, a, a)
}

#[inline]
pub fn norm(weight: &[f64], a: &[f64]) -> f64 {
    norm_sq(weight, a).sqrt()
}

/// Plain Euclidean norm.
#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
