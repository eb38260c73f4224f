//! Scalar root finding on a sign-changing bracket.

/// Newton's method safeguarded by bisection.
///
/// `f` returns the pair `(value, derivative)`. The bracket `[lo, hi]` must
/// satisfy `f(lo) * f(hi) <= 0`; it is shrunk on every step so the iteration
/// can never leave it. A Newton step that would land outside the current
/// bracket, or that fails to halve the residual, is replaced by bisection.
///
/// Returns `None` when the endpoints do not bracket a root.
pub fn newton_bisect<F>(mut f: F, mut lo: f64, mut hi: f64, ftol: f64, max_iter: usize) -> Option<f64>
where
    F: FnMut(f64) -> (f64, f64),
{
    let (mut flo, _) = f(lo);
    let (fhi, _) = f(hi);
    if flo == 0.0 {
        return Some(lo);
    }
    if fhi == 0.0 {
        return Some(hi);
    }
    if flo.signum() == fhi.signum() {
        return None;
    }

    let mut x = 0.5 * (lo + hi);
    let mut prev_abs = f64::INFINITY;
    for _ in 0..max_iter {
        let (fx, dfx) = f(x);
        if fx.abs() <= ftol {
            return Some(x);
        }
        if fx.signum() == flo.signum() {
            lo = x;
            flo = fx;
        } else {
            hi = x;
        }
        if hi - lo <= 2.0 * f64::EPSILON * x.abs().max(f64::MIN_POSITIVE) {
            return Some(x);
        }

        let newton = x - fx / dfx;
        let accept = dfx.is_finite() && dfx != 0.0 && newton > lo && newton < hi && fx.abs() <= 0.5 * prev_abs;
        prev_abs = fx.abs();
        let next = if accept { newton } else { 0.5 * (lo + hi) };
        if next == x {
            return Some(x);
        }
        x = next;
    }
    Some(x)
}

/// Golden-section search for a minimum of `f` on `[lo, hi]`.
pub fn golden_section<F>(f: F, mut lo: f64, mut hi: f64, xtol: f64) -> f64
where
    F: Fn(f64) -> f64,
{
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    while hi - lo > xtol {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}
