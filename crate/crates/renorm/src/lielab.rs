//! Adjoint eigen-pairs on the line, the closed-form compactification of the
//! pair `X = -y`, `Y = 1`, and the theta-component splitting identity used
//! to reduce arbitrary fields to fields with null circle coordinate.

use std::sync::Arc;

use crate::circle::SampleGrid;
use crate::error::{Error, Result};
use crate::field::{lie_bracket, Component, CylField};
use crate::profile::{make_plateau, ScalarProfile};
use crate::real::Real;

type LineFn<R> = Arc<dyn Fn(R) -> R + Send + Sync>;

/// A scalar field on `R` with compact support, sampled derivatives to
/// order 4 by centered differences.
#[derive(Clone)]
pub struct LineField<R: Real> {
    f: LineFn<R>,
    /// Declared support `[lo, hi]`.
    pub support: (R, R),
}

impl<R: Real> std::fmt::Debug for LineField<R> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "LineField(support [{:?}, {:?}])", self.support.0, self.support.1)
    }
}

impl<R: Real> LineField<R> {
    pub fn from_fn(f: impl Fn(R) -> R + Send + Sync + 'static, support: (R, R)) -> Self {
        LineField { f: Arc::new(f), support }
    }

    pub fn from_profile(p: ScalarProfile<R>) -> Self {
        let support = p.support().unwrap_or((-R::one(), R::one()));
        LineField { f: Arc::new(move |y| p.value(y)), support }
    }

    pub fn zero() -> Self {
        LineField { f: Arc::new(|_| R::zero()), support: (R::zero(), R::zero()) }
    }

    pub fn value(&self, y: R) -> R {
        (self.f)(y)
    }

    /// Centered-difference derivative of order `n <= 4`.
    pub fn deriv_n(&self, y: R, n: usize) -> R {
        if n == 0 {
            return self.value(y);
        }
        let h = R::lit(1e-4);
        (self.deriv_n(y + h, n - 1) - self.deriv_n(y - h, n - 1)) / (R::lit(2.0) * h)
    }
}

/// 1-D Lie bracket `[f, g] = g' f - f' g`.
pub fn line_bracket<R: Real>(f: &LineField<R>, g: &LineField<R>) -> LineField<R> {
    let fa = f.clone();
    let ga = g.clone();
    let lo = f.support.0.min(g.support.0);
    let hi = f.support.1.max(g.support.1);
    LineField {
        f: Arc::new(move |y| ga.deriv_n(y, 1) * fa.value(y) - fa.deriv_n(y, 1) * ga.value(y)),
        support: (lo, hi),
    }
}

/// Sup over a uniform sample of `|[f, g] - target|`.
pub fn line_bracket_residual<R: Real>(
    f: &LineField<R>,
    g: &LineField<R>,
    target: &LineField<R>,
    range: (R, R),
    samples: usize,
) -> R {
    let b = line_bracket(f, g);
    let mut worst = R::zero();
    for i in 0..samples {
        let y = range.0 + (range.1 - range.0) * R::of_usize(i) / R::of_usize(samples - 1);
        worst = worst.max((b.value(y) - target.value(y)).abs());
    }
    worst
}

/// The compactified triple on `(-a, a)`: `[X, Y] = Y` and `[Y, Z] = T`.
#[derive(Debug, Clone)]
pub struct EigenTriple<R: Real> {
    pub x: LineField<R>,
    pub y: LineField<R>,
    pub z: LineField<R>,
    pub a: R,
    pub big_a: R,
}

fn compact_u<R: Real>(a: R, y: R) -> R {
    (a * a - y * y).recip()
}

/// `phi(y) = 1 + 2 y^2 (a^2-y^2)^-2 e^{1/(a^2-y^2)}`, the non-exponential
/// factor of the compactifying derivative.
fn compact_phi<R: Real>(a: R, y: R) -> R {
    let w = a * a - y * y;
    R::one() + R::lit(2.0) * y * y / (w * w) * compact_u(a, y).exp()
}

/// `psi'(y) = phi(y) e^{e^{1/(a^2-y^2)}}`.
fn compact_psi_deriv<R: Real>(a: R, y: R) -> R {
    compact_phi(a, y) * compact_u(a, y).exp().exp()
}

/// Build the compactified eigen-triple for a target field supported in
/// `[-A, A] ⊂ (-a, a)`:
///
/// * `X(y) = -y / phi(y)` (pullback of `-y` along `psi(y) = y e^{e^{1/(a^2-y^2)}}`),
/// * `Y(y) = 1 / psi'(y)`,
/// * `Z(y) = (1/psi'(y)) * ∫_{-A}^{y} psi'(s)^2 T(s) ds`.
pub fn decompose_compactify<R: Real>(
    t: &LineField<R>,
    a: R,
    big_a: R,
) -> Result<EigenTriple<R>> {
    if !(R::zero() < big_a && big_a < a) {
        return Err(Error::InvalidParameter("need 0 < A < a".into()));
    }
    if t.support.0 < -big_a || t.support.1 > big_a {
        return Err(Error::InvalidParameter(format!(
            "target support [{:?}, {:?}] escapes [-A, A]",
            t.support.0, t.support.1
        )));
    }
    // psi'(s)^2 appears in the antiderivative integrand; it must stay finite
    // on [-A, A]
    let u_max = compact_u(a, big_a);
    if R::lit(2.0) * u_max.exp() > R::lit(690.0) {
        return Err(Error::NumericFailure(format!(
            "compactification overflows: 2 e^{{u(A)}} = {:?}",
            R::lit(2.0) * u_max.exp()
        )));
    }

    let x = {
        LineField::from_fn(
            move |y: R| {
                if y.abs() >= a {
                    R::zero()
                } else {
                    -y / compact_phi(a, y)
                }
            },
            (-a, a),
        )
    };
    let yf = {
        LineField::from_fn(
            move |y: R| {
                if y.abs() >= a {
                    R::zero()
                } else {
                    // e^{-e^u} / phi, written to underflow gracefully
                    (-compact_u(a, y).exp()).exp() / compact_phi(a, y)
                }
            },
            (-a, a),
        )
    };

    // cumulative antiderivative Q(y) = int_{-A}^{y} psi'(s)^2 T(s) ds by
    // adaptive Simpson on a dense cache
    let tt = t.clone();
    let integrand = move |s: R| compact_psi_deriv(a, s).powi(2) * tt.value(s);
    let n_nodes = 2048usize;
    let mut cumulative = Vec::with_capacity(n_nodes + 1);
    let mut acc = R::zero();
    cumulative.push(acc);
    let step = R::lit(2.0) * big_a / R::of_usize(n_nodes);
    for i in 0..n_nodes {
        let lo = -big_a + step * R::of_usize(i);
        acc += crate::quad::adaptive_simpson(&integrand, lo, lo + step, R::lit(1e-14));
        if !acc.is_finite() {
            return Err(Error::NumericFailure("antiderivative quadrature diverged".into()));
        }
        cumulative.push(acc);
    }
    let q = move |y: R| -> R {
        if y <= -big_a {
            return R::zero();
        }
        if y >= big_a {
            return cumulative[n_nodes];
        }
        let pos = (y + big_a) / step;
        let i = (pos.floor().to_f64_lossy() as usize).min(n_nodes - 1);
        let lo = -big_a + step * R::of_usize(i);
        cumulative[i] + crate::quad::adaptive_simpson(&integrand, lo, y, R::lit(1e-14))
    };
    let zf = LineField::from_fn(
        move |y: R| {
            if y.abs() >= a {
                R::zero()
            } else {
                q(y) * (-compact_u(a, y).exp()).exp() / compact_phi(a, y)
            }
        },
        (-a, a),
    );

    Ok(EigenTriple { x, y: yf, z: zf, a, big_a })
}

impl<R: Real> EigenTriple<R> {
    /// `sup |[X, Y] - Y|` on a uniform sample of `(-a, a)`.
    pub fn eigen_residual(&self, samples: usize) -> R {
        let margin = R::lit(1e-3);
        line_bracket_residual(
            &self.x,
            &self.y,
            &self.y,
            (-self.a + margin, self.a - margin),
            samples,
        )
    }

    /// `sup |[Y, Z] - T|` on a uniform sample of `(-a, a)`.
    pub fn decomposition_residual(&self, t: &LineField<R>, samples: usize) -> R {
        let margin = R::lit(1e-3);
        line_bracket_residual(
            &self.y,
            &self.z,
            t,
            (-self.a + margin, self.a - margin),
            samples,
        )
    }

    /// Max of `|d^n f|`, `n <= 4`, over the three fields at `|y| = a - eps`.
    pub fn boundary_decay(&self, eps: R) -> R {
        let mut worst = R::zero();
        for field in [&self.x, &self.y, &self.z] {
            for s in [-R::one(), R::one()] {
                let y = s * (self.a - eps);
                for n in 0..=4 {
                    worst = worst.max(field.deriv_n(y, n).abs());
                }
            }
        }
        worst
    }

    /// Lift the pair to vertical cylinder fields on an unbounded fiber, for
    /// the flow-identity check.
    pub fn cylinder_pair(&self) -> (CylField<R>, CylField<R>) {
        let xf = self.x.clone();
        let yf = self.y.clone();
        let cx = CylField::from_fns(move |_, _, _| R::zero(), move |_, y, _| xf.value(y))
            .with_fiber(crate::circle::FiberKind::Line);
        let cy = CylField::from_fns(move |_, _, _| R::zero(), move |_, y, _| yf.value(y))
            .with_fiber(crate::circle::FiberKind::Line);
        (cx, cy)
    }
}

/// Grid residual of `|[X, Y] - Y|` for cylinder fields (certificate that
/// `Y` is an adjoint eigenvector of `X`).
pub fn certify_eigen_pair<R: Real>(
    x: &CylField<R>,
    y: &CylField<R>,
    grid: &SampleGrid<R>,
) -> R {
    let b = lie_bracket(x, y);
    let mut worst = R::zero();
    for p in grid.points() {
        let (th, yy) = (p.theta.reduced(), p.y);
        let bv = b.eval(th, yy, R::zero());
        let yv = y.eval(th, yy, R::zero());
        let (du, dv) = (bv.0 - yv.0, bv.1 - yv.1);
        worst = worst.max((du * du + dv * dv).sqrt());
    }
    worst
}

/// Residual of `[X, phi(theta) Y] = phi(theta) Y` for a certified pair with
/// `X` of null theta component.
pub fn scale_eigen_bracket_check<R: Real>(
    x: &CylField<R>,
    y: &CylField<R>,
    phi: ScalarProfile<R>,
    grid: &SampleGrid<R>,
) -> Result<R> {
    for p in grid.points() {
        let u = x.eval(p.theta.reduced(), p.y, R::zero()).0;
        if u.abs() > R::lit(1e-12) {
            return Err(Error::InvalidParameter(
                "scale_eigen_bracket_check needs X with zero theta component".into(),
            ));
        }
    }
    let phi_y = y.scale_by_theta_profile(phi);
    let b = lie_bracket(x, &phi_y);
    let mut worst = R::zero();
    for p in grid.points() {
        let (th, yy) = (p.theta.reduced(), p.y);
        let bv = b.eval(th, yy, R::zero());
        let tv = phi_y.eval(th, yy, R::zero());
        let (du, dv) = (bv.0 - tv.0, bv.1 - tv.1);
        worst = worst.max((du * du + dv * dv).sqrt());
    }
    Ok(worst)
}

/// Result of splitting off the theta component of a field.
#[derive(Debug, Clone)]
pub struct ThetaSplit<R: Real> {
    /// `W = (0, f)` where `f` is the theta component of the input.
    pub w: CylField<R>,
    /// `Y = (rho(theta) * y, 0)`.
    pub y_bracket: CylField<R>,
    /// `X - [W, Y]`, numerically of null theta component.
    pub remainder: CylField<R>,
}

/// Split `X = [W, Y] + remainder` with `remainder` in the null-theta
/// subalgebra: `[W, Y] = (f, -df/dtheta * y)` wherever `rho == 1`.
///
/// `rho` defaults to the constant 1; when the input declares a theta support
/// strictly inside `(0, 1)`, a plateau equal to 1 on an inflated copy of
/// that support is used instead.
pub fn split_theta_component<R: Real>(x: &CylField<R>) -> ThetaSplit<R> {
    let f = x.theta_component().clone();
    let w = CylField::from_components(Component::Zero, f.clone());

    let rho: ScalarProfile<R> = match x.support {
        Some(((t_lo, t_hi), _)) if t_lo > R::lit(0.05) && t_hi < R::lit(0.95) => {
            let pad = R::lit(0.02);
            make_plateau(
                (t_lo - R::lit(2.0) * pad).max(R::lit(0.005)),
                t_lo - pad,
                t_hi + pad,
                (t_hi + R::lit(2.0) * pad).min(R::lit(0.995)),
            )
            .unwrap_or_else(|_| crate::profile::make_constant(R::one()))
        }
        _ => crate::profile::make_constant(R::one()),
    };
    let rho_c = rho.clone();
    let y_bracket = CylField::from_fns(move |th, y, _| rho_c.value(th) * y, |_, _, _| R::zero());
    let bracket = lie_bracket(&w, &y_bracket);
    let remainder = x.linear_comb(R::one(), &bracket, -R::one());
    ThetaSplit { w, y_bracket, remainder }
}

/// Sup of the theta component of a field over the grid.
pub fn theta_component_sup<R: Real>(x: &CylField<R>, grid: &SampleGrid<R>) -> R {
    let mut worst = R::zero();
    for p in grid.points() {
        worst = worst.max(x.eval(p.theta.reduced(), p.y, R::zero()).0.abs());
    }
    worst
}

/// Sup over the grid of `|[W, Y].theta - f|`, the bracket identity check.
pub fn bracket_theta_matches<R: Real>(split: &ThetaSplit<R>, grid: &SampleGrid<R>) -> R {
    let bracket = lie_bracket(&split.w, &split.y_bracket);
    let mut worst = R::zero();
    for p in grid.points() {
        let (th, yy) = (p.theta.reduced(), p.y);
        let f = split.w.fiber_component().clone();
        let fv = match &f {
            Component::Zero => R::zero(),
            Component::Expr(e) => e.eval(th, yy, R::zero()),
            Component::Func(g) => g(th, yy, R::zero()),
        };
        worst = worst.max((bracket.eval(th, yy, R::zero()).0 - fv).abs());
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;
    use crate::profile::make_bump;

    #[test]
    fn compactified_x_matches_closed_form() {
        // frozen from an independent high-precision evaluation:
        // X(0.5) = -0.5 / phi(0.5) with a = 1
        let t = LineField::<f64>::zero();
        let triple = decompose_compactify(&t, 1.0, 0.6).unwrap();
        assert!((triple.x.value(0.5) - (-0.11436023168143412)).abs() < 1e-12);
    }

    #[test]
    fn zero_target_still_yields_eigen_pair() {
        let t = LineField::<f64>::zero();
        let triple = decompose_compactify(&t, 1.0, 0.6).unwrap();
        for i in 0..100 {
            let y = -0.99 + 0.02 * i as f64;
            assert_eq!(triple.z.value(y), 0.0);
        }
        let r = triple.eigen_residual(2048);
        assert!(r <= 1e-7, "eigen residual {r}");
    }

    #[test]
    fn bump_target_decomposes() {
        let t = LineField::from_profile(make_bump(0.0f64, 0.5, 1.0).unwrap());
        let triple = decompose_compactify(&t, 1.0, 0.6).unwrap();
        let r1 = triple.eigen_residual(2048);
        let r2 = triple.decomposition_residual(&t, 2048);
        assert!(r1 <= 1e-6, "eigen residual {r1}");
        assert!(r2 <= 1e-6, "decomposition residual {r2}");
        assert!(triple.boundary_decay(1e-3) <= 1e-8);
    }

    #[test]
    fn refinement_stability() {
        let t = LineField::from_profile(make_bump(0.0f64, 0.5, 1.0).unwrap());
        let triple = decompose_compactify(&t, 1.0, 0.6).unwrap();
        let coarse = triple.decomposition_residual(&t, 2048);
        let fine = triple.decomposition_residual(&t, 4096);
        assert!(fine <= coarse + 1e-8, "refinement: {fine} vs {coarse}");
    }

    #[test]
    fn rejects_bad_supports() {
        let t = LineField::from_profile(make_bump(0.0f64, 0.9, 1.0).unwrap());
        assert!(decompose_compactify(&t, 1.0, 0.6).is_err());
        let t = LineField::<f64>::zero();
        assert!(decompose_compactify(&t, 0.5, 0.6).is_err());
    }

    #[test]
    fn certify_fiber_pair_and_negative_control() {
        let grid = SampleGrid::<f64>::new(12, 12).with_fiber(crate::circle::FiberKind::Line);
        let x = CylField::from_exprs(parse_expr("0").unwrap(), parse_expr("-y").unwrap())
            .with_fiber(crate::circle::FiberKind::Line);
        let y = CylField::from_exprs(parse_expr("0").unwrap(), parse_expr("1").unwrap())
            .with_fiber(crate::circle::FiberKind::Line);
        assert!(certify_eigen_pair(&x, &y, &grid) <= 1e-10);
        // generic pair: residual is large, reported rather than failing
        let g: CylField<f64> = CylField::from_exprs(
            parse_expr("0").unwrap(),
            parse_expr("bump(y, 0.5, 0.4, 1)").unwrap(),
        );
        let r = certify_eigen_pair(&g, &g, &SampleGrid::new(12, 12));
        assert!(r > 1e-2, "negative control too small: {r}");
    }

    #[test]
    fn scaled_eigen_bracket() {
        let grid = SampleGrid::new(16, 12).with_fiber(crate::circle::FiberKind::Line);
        let x = CylField::from_exprs(parse_expr("0").unwrap(), parse_expr("-y").unwrap())
            .with_fiber(crate::circle::FiberKind::Line);
        let y = CylField::from_exprs(parse_expr("0").unwrap(), parse_expr("1").unwrap())
            .with_fiber(crate::circle::FiberKind::Line);
        // phi == 1 reduces to the plain certificate
        let r = scale_eigen_bracket_check(
            &x,
            &y,
            crate::profile::make_constant(1.0),
            &grid,
        )
        .unwrap();
        assert!(r <= 1e-10);
        // phi = cos(2 pi theta)
        let phi = crate::profile::make_expression(
            parse_expr("cos(2*3.14159265358979312*theta)").unwrap(),
        );
        let r = scale_eigen_bracket_check(&x, &y, phi, &grid).unwrap();
        assert!(r <= 1e-6, "cosine-scaled residual {r}");
        // phi == 0 kills everything
        let r = scale_eigen_bracket_check(
            &x,
            &y,
            crate::profile::make_constant(0.0),
            &grid,
        )
        .unwrap();
        assert!(r <= 1e-15);
    }

    #[test]
    fn split_theta_component_identities() {
        let grid = SampleGrid::new(24, 24);
        let x = CylField::from_exprs(
            parse_expr("bump(theta, 0.5, 0.3, 1) * bump(y, 0.5, 0.4, 1)").unwrap(),
            parse_expr("0").unwrap(),
        );
        let split = split_theta_component(&x);
        assert!(theta_component_sup(&split.remainder, &grid) <= 1e-6);
        assert!(bracket_theta_matches(&split, &grid) <= 1e-8);
        // zero theta component: W = 0, remainder = X
        let g: CylField<f64> = CylField::from_exprs(
            parse_expr("0").unwrap(),
            parse_expr("bump(y, 0.5, 0.3, 1)").unwrap(),
        );
        let split = split_theta_component(&g);
        for p in grid.points() {
            let (th, y) = (p.theta.reduced(), p.y);
            let r = split.remainder.eval(th, y, 0.0);
            let gx = g.eval(th, y, 0.0);
            assert!((r.0 - gx.0).abs() < 1e-12 && (r.1 - gx.1).abs() < 1e-12);
        }
    }

    #[test]
    fn split_is_linear() {
        let grid = SampleGrid::new(12, 12);
        let x1: CylField<f64> = CylField::from_exprs(
            parse_expr("bump(theta, 0.5, 0.3, 1) * bump(y, 0.5, 0.4, 1)").unwrap(),
            parse_expr("0").unwrap(),
        );
        let x2 = CylField::from_exprs(
            parse_expr("bump(theta, 0.4, 0.2, 1) * bump(y, 0.6, 0.3, 1)").unwrap(),
            parse_expr("bump(y, 0.5, 0.4, 0.5)").unwrap(),
        );
        let (a, b) = (2.0, -0.5);
        let combo = x1.linear_comb(a, &x2, b);
        let s_combo = split_theta_component(&combo);
        let s1 = split_theta_component(&x1);
        let s2 = split_theta_component(&x2);
        for p in grid.points() {
            let (th, y) = (p.theta.reduced(), p.y);
            let rc = s_combo.remainder.eval(th, y, 0.0);
            let r1 = s1.remainder.eval(th, y, 0.0);
            let r2 = s2.remainder.eval(th, y, 0.0);
            assert!((rc.0 - (a * r1.0 + b * r2.0)).abs() < 1e-10);
            assert!((rc.1 - (a * r1.1 + b * r2.1)).abs() < 1e-10);
        }
    }
}
