//! Finite-difference primitives shared by the derivative fallbacks and checks.

use crate::model::{Matrix, Vector};

/// Central-difference step used by the derivative fallbacks.
pub fn central_step(x: f64) -> f64 {
    1e-6 * (1.0 + x.abs())
}

/// Step used by the fourth-order checking stencil.
pub fn check_step(x: f64) -> f64 {
    1e-3 * (1.0 + x.abs())
}

/// Central-difference Jacobian of a vector map, column `j` perturbing `x_j`
/// by [`central_step`].
pub fn central_jacobian<F>(f: F, x: &Vector) -> Matrix
where
    F: Fn(&Vector) -> Vector,
{
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    let mut xp = x.clone();
    for j in 0..n {
        let step = central_step(x[j]);
        xp[j] = x[j] + step;
        let fp = f(&xp);
        xp[j] = x[j] - step;
        let fm = f(&xp);
        xp[j] = x[j];
        cols.push((fp - fm) / (2.0 * step));
    }
    if cols.is_empty() {
        return Matrix::zeros(f(x).len(), 0);
    }
    Matrix::from_columns(&cols)
}

/// Fourth-order (five-point) derivative of a vector-valued function of one
/// scalar variable.
pub fn five_point<F>(f: F, t: f64, step: f64) -> Vector
where
    F: Fn(f64) -> Vector,
{
    let p2 = f(t + 2.0 * step);
    let p1 = f(t + step);
    let m1 = f(t - step);
    let m2 = f(t - 2.0 * step);
    (m2 - p2 + (p1 - m1) * 8.0) / (12.0 * step)
}

/// Scalar version of [`five_point`].
pub fn five_point_scalar<F>(f: F, t: f64, step: f64) -> f64
where
    F: Fn(f64) -> f64,
{
    (f(t - 2.0 * step) - f(t + 2.0 * step) + 8.0 * (f(t + step) - f(t - step))) / (12.0 * step)
}

/// Fourth-order Jacobian of a vector map (used for checks, not on hot paths).
pub fn five_point_jacobian<F>(f: F, x: &Vector) -> Matrix
where
    F: Fn(&Vector) -> Vector,
{
    let n = x.len();
    let cols: Vec<Vector> = (0..n)
        .map(|j| {
            let step = check_step(x[j]);
            five_point(
                |t| {
                    let mut xp = x.clone();
                    xp[j] = t;
                    f(&xp)
                },
                x[j],
                step,
            )
        })
        .collect();
    if cols.is_empty() {
        return Matrix::zeros(f(x).len(), 0);
    }
    Matrix::from_columns(&cols)
}

/// Fourth-order gradient of a scalar function.
pub fn five_point_gradient<F>(f: F, x: &Vector) -> Vector
where
    F: Fn(&Vector) -> f64,
{
    Vector::from_iterator(
        x.len(),
        (0..x.len()).map(|j| {
            five_point_scalar(
                |t| {
                    let mut xp = x.clone();
                    xp[j] = t;
                    f(&xp)
                },
                x[j],
                check_step(x[j]),
            )
        }),
    )
}

/// Mixed relative error `‖a − b‖∞ / max(1, ‖b‖∞)`; `b` is the reference.
pub fn mixed_error(analytic: &[f64], reference: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let scale = reference.iter().map(|b| b.abs()).fold(1.0, f64::max);
    diff / scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn five_point_is_exact_on_quartics() {
        let d = five_point_scalar(|t| t.powi(4) - 3.0 * t.powi(3), 1.3, 0.1);
        assert_relative_eq!(d, 4.0 * 1.3f64.powi(3) - 9.0 * 1.3 * 1.3, epsilon = 1e-11);
    }

    #[test]
    fn central_jacobian_of_linear_map() {
        let a = Matrix::from_row_slice(2, 2, &[1.0, 2.0, -3.0, 0.5]);
        let x = Vector::from_vec(vec![0.3, -0.7]);
        let j = central_jacobian(|y| &a * y, &x);
        assert!((j - &a).amax() < 1e-9);
    }
}
