//! Small numeric helpers: adaptive Simpson quadrature and bracketed root finding.

/// Adaptive Simpson integration of `f` over `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    if a >= b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 50)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

/// Bisection on a sign change. `f(lo)` and `f(hi)` must have opposite signs.
/// Returns the midpoint of the final bracket.
pub fn bisect<F: Fn(f64) -> f64>(f: &F, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let mut flo = f(lo);
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let fmid = f(mid);
        if fmid == 0.0 {
            return mid;
        }
        if (flo < 0.0) == (fmid < 0.0) {
            lo = mid;
            flo = fmid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_matches_exponential_integral() {
        let v = adaptive_simpson(&|t: f64| (-t).exp(), 0.0, 30.0, 1e-12);
        assert!((v - 1.0).abs() < 1e-10, "got {v}");
    }

    #[test]
    fn simpson_polynomial_exact() {
        let v = adaptive_simpson(&|t: f64| t * t * t, 0.0, 2.0, 1e-12);
        assert!((v - 4.0).abs() < 1e-12);
    }

    #[test]
    fn bisect_finds_root() {
        let r = bisect(&|x: f64| x * x - 2.0, 0.0, 2.0, 1e-13);
        assert!((r - std::f64::consts::SQRT_2).abs() < 1e-12);
    }
}
