//! Adaptive Simpson quadrature, used for profile normalization, lap times
//! and the compactified antiderivative.

use crate::real::Real;

fn simpson<R: Real, F: Fn(R) -> R>(f: &F, a: R, fa: R, b: R, fb: R) -> (R, R, R) {
    let m = (a + b) * R::lit(0.5);
    let fm = f(m);
    let s = (b - a) / R::lit(6.0) * (fa + R::lit(4.0) * fm + fb);
    (m, fm, s)
}

#[allow(clippy::too_many_arguments)]
fn recurse<R: Real, F: Fn(R) -> R>(
    f: &F,
    a: R,
    fa: R,
    b: R,
    fb: R,
    whole: R,
    m: R,
    fm: R,
    tol: R,
    depth: usize,
) -> R {
    let (lm, flm, left) = simpson(f, a, fa, m, fm);
    let (rm, frm, right) = simpson(f, m, fm, b, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= R::lit(15.0) * tol {
        left + right + delta / R::lit(15.0)
    } else {
        let half = tol * R::lit(0.5);
        recurse(f, a, fa, m, fm, left, lm, flm, half, depth - 1)
            + recurse(f, m, fm, b, fb, right, rm, frm, half, depth - 1)
    }
}

/// Integrate `f` over `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<R: Real, F: Fn(R) -> R>(f: F, a: R, b: R, tol: R) -> R {
    if a == b {
        return R::zero();
    }
    let fa = f(a);
    let fb = f(b);
    let (m, fm, whole) = simpson(&f, a, fa, b, fb);
    recurse(&f, a, fa, b, fb, whole, m, fm, tol, 48)
}
