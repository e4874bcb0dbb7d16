//! Fixed-step integrators shared by the simulator and the transition-matrix
//! estimator.

/// One classical fourth-order Runge-Kutta step of `y' = f(t, y)`, written into
/// `out`. `scratch` must hold at least `5 * y.len()` values.
pub(crate) fn rk4_step<F>(f: &mut F, t: f64, y: &[f64], h: f64, out: &mut [f64], scratch: &mut [f64])
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y.len();
    let (k1, rest) = scratch.split_at_mut(n);
    let (k2, rest) = rest.split_at_mut(n);
    let (k3, rest) = rest.split_at_mut(n);
    let (k4, rest) = rest.split_at_mut(n);
    let tmp = &mut rest[..n];

    f(t, y, k1);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k1[i];
    }
    f(t + 0.5 * h, tmp, k2);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k2[i];
    }
    f(t + 0.5 * h, tmp, k3);
    for i in 0..n {
        tmp[i] = y[i] + h * k3[i];
    }
    f(t + h, tmp, k4);
    for i in 0..n {
        out[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Splits `[t0, t1]` at the sorted `nodes` lying strictly inside it.
pub(crate) fn pieces(t0: f64, t1: f64, nodes: &[f64]) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(nodes.len() + 1);
    let mut a = t0;
    for &b in nodes {
        if b > a && b < t1 {
            out.push((a, b));
            a = b;
        }
    }
    out.push((a, t1));
    out
}
