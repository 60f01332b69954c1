//! Sequential vector kernels. Summation order is fixed so results do not
//! depend on how the caller is scheduled.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += a * x`
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `‖a - b‖ / ‖b‖`, or `‖a - b‖` when `b` is zero.
pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let d = norm(&sub(a, b));
    let n = norm(b);
    if n > 0.0 {
        d / n
    } else {
        d
    }
}
