//! Central finite differences, used to check tape gradients.

use super::matrix::Matrix;

/// Numerical gradient of `f` at `x` by central differences with step `h`.
pub fn central_difference(x: &Matrix, h: f64, mut f: impl FnMut(&Matrix) -> f64) -> Matrix {
    let mut probe = x.clone();
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for k in 0..x.len() {
        let orig = probe.as_slice()[k];
        probe.as_mut_slice()[k] = orig + h;
        let up = f(&probe);
        probe.as_mut_slice()[k] = orig - h;
        let down = f(&probe);
        probe.as_mut_slice()[k] = orig;
        out.as_mut_slice()[k] = (up - down) / (2.0 * h);
    }
    out
}

/// Largest elementwise relative error `|a-n| / max(|a|, |n|, floor)`.
///
/// The floor keeps entries whose true gradient is ~0 from dominating the
/// ratio with pure rounding noise.
pub fn max_relative_error(analytic: &Matrix, numeric: &Matrix, floor: f64) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .as_slice()
        .iter()
        .zip(numeric.as_slice())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
