//! Small dense 3×3 helpers: principal square root and logarithm.

use nalgebra::Matrix3;

/// Principal square root by Denman–Beavers iteration.
pub fn matrix_sqrt(a: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let mut y = *a;
    let mut z = Matrix3::identity();
    for _ in 0..100 {
        let y_inv = y.try_inverse()?;
        let z_inv = z.try_inverse()?;
        let y_next = (y + z_inv) * 0.5;
        let z_next = (z + y_inv) * 0.5;
        let delta = (y_next - y).norm();
        y = y_next;
        z = z_next;
        if delta <= 1e-15 * y.norm().max(1.0) {
            break;
        }
    }
    y.iter().all(|x| x.is_finite()).then_some(y)
}

/// Principal logarithm via inverse scaling and squaring: take square roots
/// until the matrix is close to the identity, sum the Mercator series, then
/// scale back.
pub fn matrix_log(a: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let id = Matrix3::identity();
    let mut x = *a;
    let mut doublings = 0;
    while (x - id).norm() > 0.2 {
        if doublings >= 40 {
            return None;
        }
        x = matrix_sqrt(&x)?;
        doublings += 1;
    }
    let e = x - id;
    let mut term = e;
    let mut sum = Matrix3::zeros();
    for k in 1..=60 {
        let contrib = term / k as f64;
        if k % 2 == 1 {
            sum += contrib;
        } else {
            sum -= contrib;
        }
        if contrib.norm() < 1e-18 {
            break;
        }
        term *= e;
    }
    let out = sum * f64::powi(2.0, doublings);
    out.iter().all(|v| v.is_finite()).then_some(out)
}
