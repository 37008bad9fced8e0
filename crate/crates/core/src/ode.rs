//! Fixed-step explicit integration.

/// One classical fourth-order Runge-Kutta step of an autonomous system.
pub fn rk4_step<const N: usize, F>(y: &[f64; N], dt: f64, mut rhs: F) -> [f64; N]
where
    F: FnMut(&[f64; N]) -> [f64; N],
{
    let k1 = rhs(y);
    let k2 = rhs(&axpy(y, 0.5 * dt, &k1));
    let k3 = rhs(&axpy(y, 0.5 * dt, &k2));
    let k4 = rhs(&axpy(y, dt, &k3));
    let mut out = *y;
    for i in 0..N {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

#[inline]
fn axpy<const N: usize>(y: &[f64; N], a: f64, x: &[f64; N]) -> [f64; N] {
    let mut out = *y;
    for i in 0..N {
        out[i] += a * x[i];
    }
    out
}
