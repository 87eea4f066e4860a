//! Catalog of smooth scalar profiles: compactly supported bumps, smooth
//! steps obtained by integrating a bump, plateaus, constants and parsed
//! expressions.
//!
//! The bump family is fixed to `amplitude * exp(1 - 1/(1 - u^2))` with
//! `u = (x - center)/radius`; it peaks at `amplitude`, vanishes with all
//! derivatives at the support boundary and has a closed-form derivative.

use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::expr::ScalarExpr;
use crate::quad::adaptive_simpson;
use crate::real::Real;

/// The reference bump shape `exp(1 - 1/(1 - u^2))` on `(-1, 1)`, zero outside.
pub fn bump_shape<R: Real>(u: R) -> R {
    if u.abs() >= R::one() {
        return R::zero();
    }
    let w = R::one() - u * u;
    (R::one() - w.recip()).exp()
}

/// Derivative of [`bump_shape`].
pub fn bump_shape_deriv<R: Real>(u: R) -> R {
    if u.abs() >= R::one() {
        return R::zero();
    }
    let w = R::one() - u * u;
    let s = (R::one() - w.recip()).exp();
    -R::lit(2.0) * u / (w * w) * s
}

#[derive(Clone)]
enum Kind<R: Real> {
    Constant(R),
    Bump {
        center: R,
        radius: R,
        amplitude: R,
    },
    /// Antiderivative of a bump, rising from 0 at the left edge of the bump
    /// support; divided by the total mass when `normalize` is set.
    IntegratedBump {
        center: R,
        radius: R,
        amplitude: R,
        normalize: bool,
        table: Arc<OnceLock<CumulativeTable<R>>>,
    },
    /// 0 outside `[a, d]`, 1 on `[b, c]`, monotone smooth ramps between.
    Plateau {
        a: R,
        b: R,
        c: R,
        d: R,
        rise: Box<ScalarProfile<R>>,
        fall: Box<ScalarProfile<R>>,
    },
    /// `1 - inner`; not compactly supported.
    Complement(Box<ScalarProfile<R>>),
    Expression(ScalarExpr<R>),
}

/// A smooth scalar function of one variable with declared compact support
/// (when applicable) and sampled derivatives up to order 4.
#[derive(Clone)]
pub struct ScalarProfile<R: Real> {
    kind: Kind<R>,
    support: Option<(R, R)>,
}

impl<R: Real> std::fmt::Debug for ScalarProfile<R> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.kind {
            Kind::Constant(c) => write!(f, "Constant({c:?})"),
            Kind::Bump { center, radius, amplitude } => {
                write!(f, "Bump(center={center:?}, radius={radius:?}, amplitude={amplitude:?})")
            }
            Kind::IntegratedBump { center, radius, normalize, .. } => {
                write!(f, "IntegratedBump(center={center:?}, radius={radius:?}, normalized={normalize})")
            }
            Kind::Plateau { a, b, c, d, .. } => write!(f, "Plateau({a:?}, {b:?}, {c:?}, {d:?})"),
            Kind::Complement(p) => write!(f, "Complement({p:?})"),
            Kind::Expression(e) => write!(f, "Expression({e})"),
        }
    }
}

/// Dense cumulative Simpson table for antiderivatives of bumps, refined
/// enough that cubic Hermite interpolation stays at machine precision.
#[derive(Debug, Clone)]
struct CumulativeTable<R: Real> {
    lo: R,
    hi: R,
    step: R,
    cumulative: Vec<R>,
    total: R,
}

const TABLE_PANELS: usize = 4096;

impl<R: Real> CumulativeTable<R> {
    fn build<F: Fn(R) -> R>(f: F, lo: R, hi: R) -> Self {
        let n = TABLE_PANELS;
        let step = (hi - lo) / R::of_usize(n);
        let mut cumulative = Vec::with_capacity(n + 1);
        let mut acc = R::zero();
        cumulative.push(acc);
        let six = R::lit(6.0);
        for i in 0..n {
            let a = lo + step * R::of_usize(i);
            let b = a + step;
            let m = (a + b) * R::lit(0.5);
            acc += step / six * (f(a) + R::lit(4.0) * f(m) + f(b));
            cumulative.push(acc);
        }
        CumulativeTable { lo, hi, step, cumulative, total: acc }
    }

    /// Antiderivative value at `x`, Hermite-interpolated with the exact
    /// integrand values as slopes.
    fn eval<F: Fn(R) -> R>(&self, f: F, x: R) -> R {
        if x <= self.lo {
            return R::zero();
        }
        if x >= self.hi {
            return self.total;
        }
        let pos = (x - self.lo) / self.step;
        let i = pos.floor().to_f64_lossy() as usize;
        let i = i.min(self.cumulative.len() - 2);
        let x0 = self.lo + self.step * R::of_usize(i);
        let t = (x - x0) / self.step;
        let f0 = self.cumulative[i];
        let f1 = self.cumulative[i + 1];
        let d0 = f(x0) * self.step;
        let d1 = f(x0 + self.step) * self.step;
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = R::lit(2.0) * t3 - R::lit(3.0) * t2 + R::one();
        let h10 = t3 - R::lit(2.0) * t2 + t;
        let h01 = -R::lit(2.0) * t3 + R::lit(3.0) * t2;
        let h11 = t3 - t2;
        h00 * f0 + h10 * d0 + h01 * f1 + h11 * d1
    }
}

/// `exp(1 - 1/(1-u^2))` bump scaled to `amplitude` at `center`.
pub fn make_bump<R: Real>(center: R, radius: R, amplitude: R) -> Result<ScalarProfile<R>> {
    if radius <= R::zero() {
        return Err(Error::InvalidParameter(format!(
            "bump radius must be positive, got {radius:?}"
        )));
    }
    Ok(ScalarProfile {
        support: Some((center - radius, center + radius)),
        kind: Kind::Bump { center, radius, amplitude },
    })
}

/// Bump with unit integral over its support (a mollifier).
pub fn make_normalized_bump<R: Real>(center: R, radius: R) -> Result<ScalarProfile<R>> {
    if radius <= R::zero() {
        return Err(Error::InvalidParameter(format!(
            "bump radius must be positive, got {radius:?}"
        )));
    }
    let mass_unit = adaptive_simpson(bump_shape::<R>, -R::one(), R::one(), R::lit(1e-14));
    let amplitude = (radius * mass_unit).recip();
    make_bump(center, radius, amplitude)
}

/// Smooth step `tau: T -> [0, 1]`: 0 on `[0, 1/8]`, 1 on `[7/8, 1)`, a
/// normalized bump antiderivative in between, flat to all orders at both
/// plateaus.
pub fn make_smooth_step<R: Real>() -> ScalarProfile<R> {
    make_integrated_bump(R::lit(0.5), R::lit(0.375), R::one(), true)
        .expect("fixed parameters are valid")
}

/// Antiderivative of `bump(center, radius, amplitude)`; `normalize` divides
/// by total mass so the result climbs from 0 to 1.
pub fn make_integrated_bump<R: Real>(
    center: R,
    radius: R,
    amplitude: R,
    normalize: bool,
) -> Result<ScalarProfile<R>> {
    if radius <= R::zero() {
        return Err(Error::InvalidParameter(format!(
            "bump radius must be positive, got {radius:?}"
        )));
    }
    Ok(ScalarProfile {
        support: None,
        kind: Kind::IntegratedBump {
            center,
            radius,
            amplitude,
            normalize,
            table: Arc::new(OnceLock::new()),
        },
    })
}

/// Smooth plateau: 0 outside `[a, d]`, exactly 1 on `[b, c]`.
pub fn make_plateau<R: Real>(a: R, b: R, c: R, d: R) -> Result<ScalarProfile<R>> {
    if !(a < b && b <= c && c < d) {
        return Err(Error::InvalidParameter(format!(
            "plateau needs a < b <= c < d, got {a:?} {b:?} {c:?} {d:?}"
        )));
    }
    let half = R::lit(0.5);
    let rise = make_integrated_bump((a + b) * half, (b - a) * half, R::one(), true)?;
    let fall = make_integrated_bump((c + d) * half, (d - c) * half, R::one(), true)?;
    Ok(ScalarProfile {
        support: Some((a, d)),
        kind: Kind::Plateau { a, b, c, d, rise: Box::new(rise), fall: Box::new(fall) },
    })
}

pub fn make_constant<R: Real>(c: R) -> ScalarProfile<R> {
    ScalarProfile { support: None, kind: Kind::Constant(c) }
}

/// The profile `1 - p`.
pub fn make_complement<R: Real>(p: ScalarProfile<R>) -> ScalarProfile<R> {
    ScalarProfile { support: None, kind: Kind::Complement(Box::new(p)) }
}

/// Profile backed by a parsed expression; every variable of the expression
/// is bound to the profile argument.
pub fn make_expression<R: Real>(expr: ScalarExpr<R>) -> ScalarProfile<R> {
    ScalarProfile { support: None, kind: Kind::Expression(expr) }
}

impl<R: Real> ScalarProfile<R> {
    /// Declared compact support, if any.
    pub fn support(&self) -> Option<(R, R)> {
        self.support
    }

    pub fn value(&self, x: R) -> R {
        match &self.kind {
            Kind::Constant(c) => *c,
            Kind::Bump { center, radius, amplitude } => {
                *amplitude * bump_shape((x - *center) / *radius)
            }
            Kind::IntegratedBump { center, radius, amplitude, normalize, table } => {
                let (c, r, a) = (*center, *radius, *amplitude);
                let tab = table.get_or_init(|| {
                    CumulativeTable::build(|x| a * bump_shape((x - c) / r), c - r, c + r)
                });
                let v = tab.eval(|x| a * bump_shape((x - c) / r), x);
                if *normalize {
                    v / tab.total
                } else {
                    v
                }
            }
            Kind::Plateau { a, b: _, c, rise, fall, .. } => {
                if x <= *a {
                    R::zero()
                } else if x < *c {
                    rise.value(x)
                } else {
                    R::one() - fall.value(x)
                }
            }
            Kind::Complement(p) => R::one() - p.value(x),
            Kind::Expression(e) => e.eval(x, x, x),
        }
    }

    /// First derivative, analytic for every kind except `Expression`,
    /// whose derivative sums the symbolic partials of all variables.
    pub fn deriv(&self, x: R) -> R {
        match &self.kind {
            Kind::Constant(_) => R::zero(),
            Kind::Bump { center, radius, amplitude } => {
                *amplitude * bump_shape_deriv((x - *center) / *radius) / *radius
            }
            Kind::IntegratedBump { center, radius, amplitude, normalize, table } => {
                let raw = *amplitude * bump_shape((x - *center) / *radius);
                if *normalize {
                    let (c, r, a) = (*center, *radius, *amplitude);
                    let tab = table.get_or_init(|| {
                        CumulativeTable::build(|x| a * bump_shape((x - c) / r), c - r, c + r)
                    });
                    raw / tab.total
                } else {
                    raw
                }
            }
            Kind::Plateau { a, b: _, c, rise, fall, .. } => {
                if x <= *a {
                    R::zero()
                } else if x < *c {
                    rise.deriv(x)
                } else {
                    -fall.deriv(x)
                }
            }
            Kind::Complement(p) => -p.deriv(x),
            Kind::Expression(e) => {
                e.diff(crate::expr::Var::Theta).eval(x, x, x)
                    + e.diff(crate::expr::Var::Y).eval(x, x, x)
                    + e.diff(crate::expr::Var::T).eval(x, x, x)
            }
        }
    }

    /// Sampled derivative of order `n <= 4`: analytic through order 1,
    /// centered differences above.
    pub fn deriv_n(&self, x: R, n: usize) -> R {
        match n {
            0 => self.value(x),
            1 => self.deriv(x),
            _ => {
                let h = R::lit(1e-4);
                (self.deriv_n(x + h, n - 1) - self.deriv_n(x - h, n - 1)) / (R::lit(2.0) * h)
            }
        }
    }

    /// Canonical source text when the profile wraps a parsed expression.
    pub fn expression_source(&self) -> Option<String> {
        match &self.kind {
            Kind::Expression(e) => Some(e.to_string()),
            _ => None,
        }
    }

    /// Peak of `|value|` scanned on a uniform sample (support-aware).
    pub fn sup_abs(&self, samples: usize) -> R {
        let (lo, hi) = self.support.unwrap_or((R::zero(), R::one()));
        let mut best = R::zero();
        for i in 0..=samples {
            let x = lo + (hi - lo) * R::of_usize(i) / R::of_usize(samples);
            best = best.max(self.value(x).abs());
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bump_peak_and_support() {
        let b = make_bump(0.5f64, 0.5, 1.0).unwrap();
        assert_eq!(b.value(0.5), 1.0);
        assert_eq!(b.value(0.0), 0.0);
        assert_eq!(b.value(1.0), 0.0);
        assert_eq!(b.value(-3.0), 0.0);
    }

    #[test]
    fn bump_closed_form_value() {
        // frozen from an independent high-precision evaluation of
        // 0.3 * exp(1 - 1/(1 - 0.16))
        let b = make_bump(0.5f64, 0.25, 0.3).unwrap();
        assert!((b.value(0.4) - 0.24796963128727142).abs() < 1e-15);
    }

    #[test]
    fn bump_rejects_bad_radius() {
        assert!(make_bump(0.0f64, 0.0, 1.0).is_err());
        assert!(make_bump(0.0f64, -1.0, 1.0).is_err());
    }

    #[test]
    fn bump_derivative_matches_finite_difference() {
        let b = make_bump(0.3f64, 0.2, 0.7).unwrap();
        let h = 1e-6;
        for i in 0..50 {
            let x = 0.11 + 0.378 * (i as f64) / 50.0;
            let fd = (b.value(x + h) - b.value(x - h)) / (2.0 * h);
            assert!(
                (b.deriv(x) - fd).abs() < 1e-7,
                "x={x}: analytic {} vs fd {}",
                b.deriv(x),
                fd
            );
        }
    }

    #[test]
    fn profile_vanishes_outside_support_with_derivatives() {
        let b = make_bump(0.5f64, 0.25, 1.0).unwrap();
        let (lo, hi) = b.support().unwrap();
        // inflate by the widest difference stencil (order 4, h = 1e-4)
        let pad = 5e-4;
        for &x in &[lo - pad, lo - 0.1, hi + pad, hi + 0.1, -1.0, 2.0] {
            for n in 0..=4 {
                assert!(b.deriv_n(x, n).abs() <= 1e-8, "order {n} at {x}");
            }
        }
    }

    #[test]
    fn smooth_step_flat_zones_and_midpoint() {
        let s = make_smooth_step::<f64>();
        assert_eq!(s.value(0.05), 0.0);
        assert_eq!(s.value(0.0), 0.0);
        assert_eq!(s.value(0.95), 1.0);
        // symmetric generating bump: half-mass point at 1/2
        assert!((s.value(0.5) - 0.5).abs() < 1e-10);
        for n in 1..=4 {
            assert!(s.deriv_n(0.05, n).abs() <= 1e-8);
            assert!(s.deriv_n(0.95, n).abs() <= 1e-8);
        }
    }

    #[test]
    fn smooth_step_monotone_on_dense_sample() {
        let s = make_smooth_step::<f64>();
        let mut prev = -1.0f64;
        for i in 0..=10_000 {
            let x = i as f64 / 10_000.0;
            let v = s.value(x);
            assert!(v >= prev - 1e-12, "monotonicity broke at {x}");
            prev = v;
        }
    }

    #[test]
    fn normalized_bump_has_unit_mass() {
        let b = make_normalized_bump(0.5f64, 1.0 / 6.0).unwrap();
        let mass = adaptive_simpson(|x| b.value(x), 1.0 / 3.0, 2.0 / 3.0, 1e-13);
        assert!((mass - 1.0).abs() < 1e-10, "mass {mass}");
    }

    #[test]
    fn plateau_shape() {
        let p = make_plateau(0.45f64, 0.5, 0.75, 0.8).unwrap();
        assert_eq!(p.value(0.4), 0.0);
        assert_eq!(p.value(0.6), 1.0);
        assert_eq!(p.value(0.5), 1.0);
        assert_eq!(p.value(0.75), 1.0);
        assert_eq!(p.value(0.85), 0.0);
        let v = p.value(0.475);
        assert!(v > 0.0 && v < 1.0);
        let v = p.value(0.78);
        assert!(v > 0.0 && v < 1.0);
    }

    #[test]
    fn integrated_bump_tracks_quadrature() {
        let ib = make_integrated_bump(0.5f64, 0.375, 1.0, true).unwrap();
        for &x in &[0.2, 0.35, 0.5, 0.61, 0.874] {
            let direct = adaptive_simpson(
                |t| bump_shape::<f64>((t - 0.5) / 0.375),
                0.125,
                x,
                1e-13,
            ) / adaptive_simpson(
                |t| bump_shape::<f64>((t - 0.5) / 0.375),
                0.125,
                0.875,
                1e-13,
            );
            assert!(
                (ib.value(x) - direct).abs() < 1e-10,
                "x={x}: table {} vs quad {direct}",
                ib.value(x)
            );
        }
    }
}
