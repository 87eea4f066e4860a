//! Vector fields on the cylinder, their flows (classical fixed-step RK4),
//! Lie brackets, and the flow-composition asymptotics (Trotter products and
//! group commutators).

use std::sync::Arc;

use crate::circle::{reduce_mod1, CylPoint, FiberKind, SampleGrid};
use crate::error::{Error, Result};
use crate::expr::{ScalarExpr, Var};
use crate::profile::ScalarProfile;
use crate::real::Real;

/// Fixed-step classical Runge-Kutta options. `step` is the time step; the
/// integration interval is split into an integer number of substeps.
#[derive(Debug, Clone, Copy)]
pub struct IntegratorOpts<R: Real> {
    pub step: R,
}

impl<R: Real> Default for IntegratorOpts<R> {
    fn default() -> Self {
        IntegratorOpts { step: R::lit(1.0 / 64.0) }
    }
}

impl<R: Real> IntegratorOpts<R> {
    pub fn with_step(step: R) -> Self {
        assert!(step > R::zero());
        IntegratorOpts { step }
    }

    fn substeps(&self, span: R) -> usize {
        let n = (span.abs() / self.step).ceil().to_f64_lossy() as usize;
        n.max(1)
    }
}

type ScalarFn<R> = Arc<dyn Fn(R, R, R) -> R + Send + Sync>;

/// One scalar component of a field: an expression tree with symbolic
/// partials, or an opaque function differentiated by centered differences.
#[derive(Clone)]
pub enum Component<R: Real> {
    Zero,
    Expr(ScalarExpr<R>),
    Func(ScalarFn<R>),
}

impl<R: Real> Component<R> {
    fn eval(&self, theta: R, y: R, t: R) -> R {
        match self {
            Component::Zero => R::zero(),
            Component::Expr(e) => e.eval(theta, y, t),
            Component::Func(f) => f(theta, y, t),
        }
    }

    fn is_analytic(&self) -> bool {
        !matches!(self, Component::Func(_))
    }
}

impl<R: Real> std::fmt::Debug for Component<R> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Component::Zero => write!(f, "0"),
            Component::Expr(e) => write!(f, "{e}"),
            Component::Func(_) => write!(f, "<fn>"),
        }
    }
}

/// A (possibly time-dependent) vector field `(u, v)` on `T x M`, tangent to
/// the fiber boundary when `M` is the interval.
#[derive(Debug, Clone)]
pub struct CylField<R: Real> {
    u: Component<R>,
    v: Component<R>,
    pub time_dependent: bool,
    pub fiber: FiberKind,
    /// Declared support rectangle `(theta range, y range)`, if known.
    pub support: Option<((R, R), (R, R))>,
    h_fd: R,
}

impl<R: Real> CylField<R> {
    pub fn zero() -> Self {
        CylField {
            u: Component::Zero,
            v: Component::Zero,
            time_dependent: false,
            fiber: FiberKind::Interval,
            support: None,
            h_fd: R::lit(1e-5),
        }
    }

    pub fn from_exprs(u: ScalarExpr<R>, v: ScalarExpr<R>) -> Self {
        CylField {
            u: Component::Expr(u),
            v: Component::Expr(v),
            ..Self::zero()
        }
    }

    pub fn from_fns(
        u: impl Fn(R, R, R) -> R + Send + Sync + 'static,
        v: impl Fn(R, R, R) -> R + Send + Sync + 'static,
    ) -> Self {
        CylField {
            u: Component::Func(Arc::new(u)),
            v: Component::Func(Arc::new(v)),
            ..Self::zero()
        }
    }

    pub fn from_components(u: Component<R>, v: Component<R>) -> Self {
        CylField { u, v, ..Self::zero() }
    }

    /// Constant horizontal field `(c, 0)`.
    pub fn constant_theta(c: R) -> Self {
        CylField {
            u: Component::Expr(ScalarExpr::num(c)),
            v: Component::Zero,
            ..Self::zero()
        }
    }

    /// A field `(xi(y), 0)`: flows are twists.
    pub fn horizontal(xi: ScalarProfile<R>) -> Self {
        CylField {
            u: Component::Func(Arc::new(move |_, y, _| xi.value(y))),
            v: Component::Zero,
            ..Self::zero()
        }
    }

    /// A field `(0, f(y))`: flows act on the fiber alone.
    pub fn vertical(f: ScalarProfile<R>) -> Self {
        CylField {
            u: Component::Zero,
            v: Component::Func(Arc::new(move |_, y, _| f.value(y))),
            ..Self::zero()
        }
    }

    pub fn time_dependent(mut self, yes: bool) -> Self {
        self.time_dependent = yes;
        self
    }

    pub fn with_fiber(mut self, fiber: FiberKind) -> Self {
        self.fiber = fiber;
        self
    }

    pub fn with_support(mut self, theta: (R, R), y: (R, R)) -> Self {
        self.support = Some((theta, y));
        self
    }

    /// Both components carry symbolic partials.
    pub fn is_analytic(&self) -> bool {
        self.u.is_analytic() && self.v.is_analytic()
    }

    /// Field value; `theta` may be any lift, components see it reduced.
    pub fn eval(&self, theta: R, y: R, t: R) -> (R, R) {
        let th = reduce_mod1(theta);
        (self.u.eval(th, y, t), self.v.eval(th, y, t))
    }

    pub fn theta_component(&self) -> &Component<R> {
        &self.u
    }

    pub fn fiber_component(&self) -> &Component<R> {
        &self.v
    }

    fn partial(&self, comp: &Component<R>, var: Var, theta: R, y: R, t: R) -> R {
        let th = reduce_mod1(theta);
        match comp {
            Component::Zero => R::zero(),
            Component::Expr(e) => e.diff(var).eval(th, y, t),
            Component::Func(f) => {
                let h = self.h_fd;
                match var {
                    Var::Theta => (f(reduce_mod1(th + h), y, t) - f(reduce_mod1(th - h), y, t))
                        / (R::lit(2.0) * h),
                    Var::Y => {
                        // one-sided stencils at the interval boundary
                        if self.fiber == FiberKind::Interval && y + h > R::one() {
                            (f(th, y, t) - f(th, y - h, t)) / h
                        } else if self.fiber == FiberKind::Interval && y - h < R::zero() {
                            (f(th, y + h, t) - f(th, y, t)) / h
                        } else {
                            (f(th, y + h, t) - f(th, y - h, t)) / (R::lit(2.0) * h)
                        }
                    }
                    Var::T => (f(th, y, t + h) - f(th, y, t - h)) / (R::lit(2.0) * h),
                }
            }
        }
    }

    /// Jacobian of the field `[[du/dtheta, du/dy], [dv/dtheta, dv/dy]]`.
    pub fn jacobian(&self, theta: R, y: R, t: R) -> [[R; 2]; 2] {
        [
            [
                self.partial(&self.u, Var::Theta, theta, y, t),
                self.partial(&self.u, Var::Y, theta, y, t),
            ],
            [
                self.partial(&self.v, Var::Theta, theta, y, t),
                self.partial(&self.v, Var::Y, theta, y, t),
            ],
        ]
    }

    /// Pointwise linear combination `a*self + b*other`.
    pub fn linear_comb(&self, a: R, other: &CylField<R>, b: R) -> CylField<R> {
        let combine = |x: &Component<R>, y: &Component<R>| -> Component<R> {
            match (x, y) {
                (Component::Expr(e1), Component::Expr(e2)) => Component::Expr(ScalarExpr::add(
                    ScalarExpr::mul(ScalarExpr::num(a), e1.clone()),
                    ScalarExpr::mul(ScalarExpr::num(b), e2.clone()),
                )),
                (Component::Zero, Component::Zero) => Component::Zero,
                (Component::Zero, Component::Expr(e2)) => {
                    Component::Expr(ScalarExpr::mul(ScalarExpr::num(b), e2.clone()))
                }
                (Component::Expr(e1), Component::Zero) => {
                    Component::Expr(ScalarExpr::mul(ScalarExpr::num(a), e1.clone()))
                }
                _ => {
                    let x = x.clone();
                    let y = y.clone();
                    Component::Func(Arc::new(move |th, yy, t| {
                        a * x.eval(th, yy, t) + b * y.eval(th, yy, t)
                    }))
                }
            }
        };
        CylField {
            u: combine(&self.u, &other.u),
            v: combine(&self.v, &other.v),
            time_dependent: self.time_dependent || other.time_dependent,
            fiber: self.fiber,
            support: None,
            h_fd: self.h_fd,
        }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(&self, other: &CylField<R>) -> CylField<R> {
        self.linear_comb(R::one(), other, R::one())
    }

    pub fn scale(&self, a: R) -> CylField<R> {
        self.linear_comb(a, &CylField::zero().with_fiber(self.fiber), R::zero())
    }

    /// Multiply both components by a profile of `theta`.
    pub fn scale_by_theta_profile(&self, phi: ScalarProfile<R>) -> CylField<R> {
        let u = self.u.clone();
        let v = self.v.clone();
        let phi_u = phi.clone();
        let phi_v = phi;
        CylField {
            u: Component::Func(Arc::new(move |th, y, t| phi_u.value(th) * u.eval(th, y, t))),
            v: Component::Func(Arc::new(move |th, y, t| phi_v.value(th) * v.eval(th, y, t))),
            time_dependent: self.time_dependent,
            fiber: self.fiber,
            support: self.support,
            h_fd: self.h_fd,
        }
    }
}

const BOUNDARY_TOL: f64 = 1e-9;

/// Flow the point for time `t` (any sign) under fixed-step RK4, tracking the
/// theta lift. Errors with `NumericFailure` if the state leaves `M` by more
/// than the boundary tolerance or stops being finite.
pub fn flow_lift<R: Real>(
    field: &CylField<R>,
    t: R,
    start: (R, R),
    opts: IntegratorOpts<R>,
) -> Result<(R, R)> {
    flow_lift_from(field, R::zero(), t, start, opts)
}

/// Flow from time `t0` to `t0 + span` (non-autonomous fields read the clock).
pub fn flow_lift_from<R: Real>(
    field: &CylField<R>,
    t0: R,
    span: R,
    start: (R, R),
    opts: IntegratorOpts<R>,
) -> Result<(R, R)> {
    let n = opts.substeps(span);
    let h = span / R::of_usize(n);
    let mut th = start.0;
    let mut y = start.1;
    let mut t = t0;
    let half = R::lit(0.5);
    let sixth = R::lit(1.0 / 6.0);
    let two = R::lit(2.0);
    for _ in 0..n {
        let (k1u, k1v) = field.eval(th, y, t);
        let (k2u, k2v) = field.eval(th + half * h * k1u, y + half * h * k1v, t + half * h);
        let (k3u, k3v) = field.eval(th + half * h * k2u, y + half * h * k2v, t + half * h);
        let (k4u, k4v) = field.eval(th + h * k3u, y + h * k3v, t + h);
        th += h * sixth * (k1u + two * k2u + two * k3u + k4u);
        y += h * sixth * (k1v + two * k2v + two * k3v + k4v);
        t += h;
        if !th.is_finite() || !y.is_finite() {
            return Err(Error::NumericFailure("flow state not finite".into()));
        }
        if field.fiber == FiberKind::Interval
            && !(y >= -R::lit(BOUNDARY_TOL) && y <= R::one() + R::lit(BOUNDARY_TOL))
        {
            return Err(Error::NumericFailure(format!(
                "flow left the fiber interval: y = {y:?}"
            )));
        }
    }
    Ok((th, y))
}

/// Flow as a point map on the cylinder.
pub fn flow<R: Real>(
    field: &CylField<R>,
    t: R,
    p: CylPoint<R>,
    opts: IntegratorOpts<R>,
) -> Result<CylPoint<R>> {
    let (th, y) = flow_lift(field, t, (p.theta.lift(), p.y), opts)?;
    Ok(CylPoint::new(th, y))
}

/// RK4 on the pair (point, tangent matrix): integrates the variational
/// equation `J' = DX(x(t)) J` alongside the flow.
#[allow(clippy::type_complexity)]
pub fn flow_with_jacobian<R: Real>(
    field: &CylField<R>,
    t0: R,
    span: R,
    start: (R, R),
    opts: IntegratorOpts<R>,
) -> Result<((R, R), [[R; 2]; 2])> {
    let n = opts.substeps(span);
    let h = span / R::of_usize(n);
    let mut th = start.0;
    let mut y = start.1;
    let mut j = [[R::one(), R::zero()], [R::zero(), R::one()]];
    let mut t = t0;
    let half = R::lit(0.5);
    let sixth = R::lit(1.0 / 6.0);
    let two = R::lit(2.0);

    let deriv = |th: R, y: R, j: &[[R; 2]; 2], t: R| -> ((R, R), [[R; 2]; 2]) {
        let v = field.eval(th, y, t);
        let a = field.jacobian(th, y, t);
        let mut dj = [[R::zero(); 2]; 2];
        for r in 0..2 {
            for c in 0..2 {
                dj[r][c] = a[r][0] * j[0][c] + a[r][1] * j[1][c];
            }
        }
        (v, dj)
    };

    for _ in 0..n {
        let (v1, dj1) = deriv(th, y, &j, t);
        let j2 = mat_add(&j, &mat_scale(&dj1, half * h));
        let (v2, dj2) = deriv(th + half * h * v1.0, y + half * h * v1.1, &j2, t + half * h);
        let j3 = mat_add(&j, &mat_scale(&dj2, half * h));
        let (v3, dj3) = deriv(th + half * h * v2.0, y + half * h * v2.1, &j3, t + half * h);
        let j4 = mat_add(&j, &mat_scale(&dj3, h));
        let (v4, dj4) = deriv(th + h * v3.0, y + h * v3.1, &j4, t + h);

        th += h * sixth * (v1.0 + two * v2.0 + two * v3.0 + v4.0);
        y += h * sixth * (v1.1 + two * v2.1 + two * v3.1 + v4.1);
        for r in 0..2 {
            for c in 0..2 {
                j[r][c] += h * sixth
                    * (dj1[r][c] + two * dj2[r][c] + two * dj3[r][c] + dj4[r][c]);
            }
        }
        t += h;
        if !th.is_finite() || !y.is_finite() {
            return Err(Error::NumericFailure("variational flow state not finite".into()));
        }
    }
    Ok(((th, y), j))
}

fn mat_add<R: Real>(a: &[[R; 2]; 2], b: &[[R; 2]; 2]) -> [[R; 2]; 2] {
    [
        [a[0][0] + b[0][0], a[0][1] + b[0][1]],
        [a[1][0] + b[1][0], a[1][1] + b[1][1]],
    ]
}

fn mat_scale<R: Real>(a: &[[R; 2]; 2], s: R) -> [[R; 2]; 2] {
    [[a[0][0] * s, a[0][1] * s], [a[1][0] * s, a[1][1] * s]]
}

/// Lie bracket `[X, Y] = DY(X) - DX(Y)`. Symbolic when both operands are
/// expression-backed, finite-difference closures otherwise.
pub fn lie_bracket<R: Real>(x: &CylField<R>, y: &CylField<R>) -> CylField<R> {
    match (&x.u, &x.v, &y.u, &y.v) {
        (Component::Expr(_) | Component::Zero, Component::Expr(_) | Component::Zero,
         Component::Expr(_) | Component::Zero, Component::Expr(_) | Component::Zero) => {
            let as_expr = |c: &Component<R>| -> ScalarExpr<R> {
                match c {
                    Component::Expr(e) => e.clone(),
                    _ => ScalarExpr::num(R::zero()),
                }
            };
            let (xu, xv) = (as_expr(&x.u), as_expr(&x.v));
            let (yu, yv) = (as_expr(&y.u), as_expr(&y.v));
            let dir = |target: &ScalarExpr<R>, wu: &ScalarExpr<R>, wv: &ScalarExpr<R>| {
                ScalarExpr::add(
                    ScalarExpr::mul(target.diff(Var::Theta), wu.clone()),
                    ScalarExpr::mul(target.diff(Var::Y), wv.clone()),
                )
            };
            let bu = ScalarExpr::sub(dir(&yu, &xu, &xv), dir(&xu, &yu, &yv));
            let bv = ScalarExpr::sub(dir(&yv, &xu, &xv), dir(&xv, &yu, &yv));
            CylField {
                u: Component::Expr(bu),
                v: Component::Expr(bv),
                time_dependent: x.time_dependent || y.time_dependent,
                fiber: x.fiber,
                support: None,
                h_fd: x.h_fd,
            }
        }
        _ => {
            let xc = x.clone();
            let yc = y.clone();
            let xc2 = x.clone();
            let yc2 = y.clone();
            let bu = move |th: R, yy: R, t: R| {
                let xv = xc.eval(th, yy, t);
                let yv = yc.eval(th, yy, t);
                let jy = yc.jacobian(th, yy, t);
                let jx = xc.jacobian(th, yy, t);
                jy[0][0] * xv.0 + jy[0][1] * xv.1 - (jx[0][0] * yv.0 + jx[0][1] * yv.1)
            };
            let bv = move |th: R, yy: R, t: R| {
                let xv = xc2.eval(th, yy, t);
                let yv = yc2.eval(th, yy, t);
                let jy = yc2.jacobian(th, yy, t);
                let jx = xc2.jacobian(th, yy, t);
                jy[1][0] * xv.0 + jy[1][1] * xv.1 - (jx[1][0] * yv.0 + jx[1][1] * yv.1)
            };
            CylField {
                u: Component::Func(Arc::new(bu)),
                v: Component::Func(Arc::new(bv)),
                time_dependent: x.time_dependent || y.time_dependent,
                fiber: x.fiber,
                support: None,
                h_fd: x.h_fd,
            }
        }
    }
}

/// Residual of the adjoint-eigenvector flow identity
/// `Fl_Y^t = Fl_X^{-s} ∘ Fl_Y^{t e^{-s}} ∘ Fl_X^{s}`:
/// sup over the grid of the distance between the two sides.
pub fn check_ad_eigen<R: Real>(
    x: &CylField<R>,
    y: &CylField<R>,
    s: R,
    t: R,
    grid: &SampleGrid<R>,
    opts: IntegratorOpts<R>,
) -> Result<R> {
    let mut worst = R::zero();
    for p in grid.points() {
        let start = (p.theta.lift(), p.y);
        let lhs = flow_lift(y, t, start, opts)?;
        let a = flow_lift(x, s, start, opts)?;
        let b = flow_lift(y, t * (-s).exp(), a, opts)?;
        let rhs = flow_lift(x, -s, b, opts)?;
        let d = CylPoint::new(lhs.0, lhs.1).dist_in(CylPoint::new(rhs.0, rhs.1), grid.fiber);
        worst = worst.max(d);
    }
    Ok(worst)
}

/// The `N`-fold splitting `(Fl_X^{1/N} ∘ Fl_Y^{1/N})^N` as a map expression;
/// its `C^0` distance to `Fl_{X+Y}^1` decays like `O(1/N)`.
pub fn trotter_compose<R: Real>(
    x: &CylField<R>,
    y: &CylField<R>,
    n: usize,
    opts: IntegratorOpts<R>,
) -> crate::mapexpr::MapExpr<R> {
    use crate::mapexpr::MapExpr;
    assert!(n >= 1);
    let tn = R::one() / R::of_usize(n);
    let pair = MapExpr::compose(
        MapExpr::flow_map(x.clone(), tn, opts),
        MapExpr::flow_map(y.clone(), tn, opts),
    );
    let mut acc = pair.clone();
    for _ in 1..n {
        acc = MapExpr::compose(pair.clone(), acc);
    }
    acc
}

/// Group commutator of the two flows at time `tau`, approximating
/// `Fl_{[X,Y]}^{tau^2}` to `O(tau^3)`.
///
/// The operand order is `Fl_Y^{-tau} ∘ Fl_X^{-tau} ∘ Fl_Y^{tau} ∘ Fl_X^{tau}`
/// (X flows first); it is pinned by requiring the pair `X = -y`, `Y = 1`,
/// which satisfies `[X, Y] = Y`, to converge to the flow of `+Y`.
pub fn commutator_flow<R: Real>(
    x: &CylField<R>,
    y: &CylField<R>,
    tau: R,
    opts: IntegratorOpts<R>,
) -> crate::mapexpr::MapExpr<R> {
    use crate::mapexpr::MapExpr;
    MapExpr::compose(
        MapExpr::flow_map(y.clone(), -tau, opts),
        MapExpr::compose(
            MapExpr::flow_map(x.clone(), -tau, opts),
            MapExpr::compose(
                MapExpr::flow_map(y.clone(), tau, opts),
                MapExpr::flow_map(x.clone(), tau, opts),
            ),
        ),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;

    fn grid16() -> SampleGrid<f64> {
        SampleGrid::new(16, 16)
    }

    #[test]
    fn constant_field_flows_exactly() {
        let x = CylField::constant_theta(2f64.powi(-6));
        let p = CylPoint::new(0.5, 0.5);
        let q = flow(&x, 1.0, p, IntegratorOpts::default()).unwrap();
        assert_eq!(q.theta.lift(), 0.5 + 2f64.powi(-6));
        assert_eq!(q.y, 0.5);
        // full lap
        let q = flow(&x, 2f64.powi(6), CylPoint::new(0.0, 0.3), IntegratorOpts::default())
            .unwrap();
        assert!((q.theta.lift() - 1.0).abs() < 1e-12);
        assert!((q.theta.reduced()).min(1.0 - q.theta.reduced()) < 1e-12);
    }

    #[test]
    fn exponential_contraction_flow() {
        // dy/ds = -y  =>  y(s) = y0 e^-s ; fiber must be unbounded
        let x = CylField::from_exprs(
            parse_expr("0").unwrap(),
            parse_expr("-y").unwrap(),
        )
        .with_fiber(FiberKind::Line);
        let q = flow(
            &x,
            1.0,
            CylPoint::new(0.2, 0.7),
            IntegratorOpts::with_step(1.0 / 256.0),
        )
        .unwrap();
        assert!((q.y - 0.7 * (-1f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn bracket_horocycle_pair() {
        // X = -y, Y = 1 on the fiber line: [X, Y] = Y
        let x = CylField::from_exprs(parse_expr("0").unwrap(), parse_expr("-y").unwrap())
            .with_fiber(FiberKind::Line);
        let y = CylField::from_exprs(parse_expr("0").unwrap(), parse_expr("1").unwrap())
            .with_fiber(FiberKind::Line);
        let b = lie_bracket(&x, &y);
        for i in 0..20 {
            let yy = -2.0 + 0.2 * i as f64;
            let (bu, bv) = b.eval(0.0, yy, 0.0);
            assert!(bu.abs() < 1e-12);
            assert!((bv - 1.0).abs() < 1e-12, "bv = {bv}");
        }
    }

    #[test]
    fn bracket_theta_split_formula() {
        // W = (0, f(theta, y)), Y = (rho * y, 0) with rho == 1:
        // [W, Y] = (f, -df/dtheta * y)
        let f_src = "bump(theta, 0.5, 0.3, 1) * bump(y, 0.5, 0.4, 1)";
        let w = CylField::from_exprs(parse_expr("0").unwrap(), parse_expr(f_src).unwrap());
        let yfield = CylField::from_exprs(parse_expr("y").unwrap(), parse_expr("0").unwrap());
        let b = lie_bracket(&w, &yfield);
        let f: ScalarExpr<f64> = parse_expr(f_src).unwrap();
        let df = f.diff(Var::Theta);
        for p in grid16().points() {
            let (th, y) = (p.theta.reduced(), p.y);
            let (bu, bv) = b.eval(th, y, 0.0);
            assert!((bu - f.eval(th, y, 0.0)).abs() < 1e-10);
            assert!((bv + df.eval(th, y, 0.0) * y).abs() < 1e-10);
        }
    }

    #[test]
    fn bracket_antisymmetry_and_bilinearity() {
        let x = CylField::from_exprs(
            parse_expr("bump(theta, 0.5, 0.4, 1)").unwrap(),
            parse_expr("bump(y, 0.5, 0.3, 0.5)").unwrap(),
        );
        let y = CylField::from_exprs(
            parse_expr("sin(2*3.14159265358979312*theta) * 0.3").unwrap(),
            parse_expr("bump(y, 0.4, 0.3, 1)").unwrap(),
        );
        let z = CylField::from_exprs(
            parse_expr("0.2").unwrap(),
            parse_expr("y * (1 - y) * 0.4").unwrap(),
        );
        let xy = lie_bracket(&x, &y);
        let yx = lie_bracket(&y, &x);
        let lin_left = lie_bracket(&x.linear_comb(2.0, &z, -0.5), &y);
        let xz_b = lie_bracket(&z, &y);
        for p in grid16().points() {
            let (th, yy) = (p.theta.reduced(), p.y);
            let a = xy.eval(th, yy, 0.0);
            let b = yx.eval(th, yy, 0.0);
            assert!((a.0 + b.0).abs() < 1e-10 && (a.1 + b.1).abs() < 1e-10);
            let l = lin_left.eval(th, yy, 0.0);
            let r0 = 2.0 * a.0 - 0.5 * xz_b.eval(th, yy, 0.0).0;
            let r1 = 2.0 * a.1 - 0.5 * xz_b.eval(th, yy, 0.0).1;
            assert!((l.0 - r0).abs() < 1e-10 && (l.1 - r1).abs() < 1e-10);
        }
    }

    #[test]
    fn bracket_jacobi_identity_on_grid() {
        let x = CylField::from_exprs(
            parse_expr("bump(theta, 0.5, 0.4, 1)").unwrap(),
            parse_expr("0").unwrap(),
        );
        let y = CylField::from_exprs(
            parse_expr("0").unwrap(),
            parse_expr("bump(y, 0.5, 0.35, 1)").unwrap(),
        );
        let z = CylField::from_exprs(
            parse_expr("0.3 * cos(2*3.14159265358979312*theta)").unwrap(),
            parse_expr("0.2 * y * (1 - y)").unwrap(),
        );
        let j1 = lie_bracket(&x, &lie_bracket(&y, &z));
        let j2 = lie_bracket(&y, &lie_bracket(&z, &x));
        let j3 = lie_bracket(&z, &lie_bracket(&x, &y));
        for p in grid16().points() {
            let (th, yy) = (p.theta.reduced(), p.y);
            let s0 = j1.eval(th, yy, 0.0).0 + j2.eval(th, yy, 0.0).0 + j3.eval(th, yy, 0.0).0;
            let s1 = j1.eval(th, yy, 0.0).1 + j2.eval(th, yy, 0.0).1 + j3.eval(th, yy, 0.0).1;
            assert!(s0.abs() < 1e-5 && s1.abs() < 1e-5, "jacobi residual {s0} {s1}");
        }
    }

    #[test]
    fn bracket_sign_crosscheck_fd() {
        // X = (v(y), 0), Y = (0, g(y)): [X, Y] = (-v'(y) g(y), 0)
        let x = CylField::from_exprs(
            parse_expr("bump(y, 0.5, 0.4, 1)").unwrap(),
            parse_expr("0").unwrap(),
        );
        let y = CylField::from_exprs(
            parse_expr("0").unwrap(),
            parse_expr("bump(y, 0.5, 0.3, 0.5)").unwrap(),
        );
        let b = lie_bracket(&x, &y);
        let v: ScalarExpr<f64> = parse_expr("bump(y, 0.5, 0.4, 1)").unwrap();
        let g: ScalarExpr<f64> = parse_expr("bump(y, 0.5, 0.3, 0.5)").unwrap();
        for i in 1..32 {
            let yy = i as f64 / 32.0;
            let expect = -v.diff(Var::Y).eval(0.0, yy, 0.0) * g.eval(0.0, yy, 0.0);
            let got = b.eval(0.3, yy, 0.0);
            assert!((got.0 - expect).abs() < 1e-6, "at y={yy}: {} vs {expect}", got.0);
            assert!(got.1.abs() < 1e-12);
        }
    }

    #[test]
    fn ad_eigen_identity_fiber_pair() {
        let x = CylField::from_exprs(parse_expr("0").unwrap(), parse_expr("-y").unwrap())
            .with_fiber(FiberKind::Line);
        let y = CylField::from_exprs(parse_expr("0").unwrap(), parse_expr("1").unwrap())
            .with_fiber(FiberKind::Line);
        let grid = SampleGrid::new(8, 9).with_fiber(FiberKind::Line).with_y_range(0.0, 1.0);
        let opts = IntegratorOpts::with_step(1e-3);
        let r = check_ad_eigen(&x, &y, 2.0, 0.5, &grid, opts).unwrap();
        assert!(r <= 1e-8, "residual {r}");
        let r = check_ad_eigen(&x, &y, -1.0, 0.0, &grid, opts).unwrap();
        assert!(r <= 1e-9, "t=0 residual {r}");
    }

    #[test]
    fn boundary_escape_detected() {
        let x = CylField::from_exprs(parse_expr("0").unwrap(), parse_expr("1").unwrap());
        let err = flow(&x, 1.0, CylPoint::new(0.0, 0.5), IntegratorOpts::default());
        assert!(err.is_err());
    }

    #[test]
    fn twist_field_lap_time_formula() {
        // X_eps(theta) = 2^-k / (1 + eps * rho(theta)) with unit-mass rho:
        // the lap time is 2^k (1 + eps), found by bisecting the flow.
        let k = 5i32;
        let rho = crate::profile::make_normalized_bump(0.5f64, 1.0 / 6.0).unwrap();
        for eps in [2f64.powi(-k - 2), -2f64.powi(-k - 2), 0.01] {
            let sigma = 2f64.powi(-k);
            let rho_f = rho.clone();
            let field = CylField::from_fns(
                move |th, _, _| sigma / (1.0 + eps * rho_f.value(th)),
                |_, _, _| 0.0,
            );
            let opts = IntegratorOpts::with_step(1.0 / 64.0);
            // bisection on the time needed for the lift to advance by 1
            let (mut lo, mut hi) = (2f64.powi(k) * 0.5, 2f64.powi(k) * 1.5);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                let (th, _) = flow_lift(&field, mid, (0.0, 0.5), opts).unwrap();
                if th < 1.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let lap = 0.5 * (lo + hi);
            let expect = 2f64.powi(k) * (1.0 + eps);
            assert!(
                (lap - expect).abs() <= 1e-9,
                "eps={eps}: lap {lap} vs {expect}"
            );
        }
    }

    #[test]
    fn trotter_commuting_constant_fields() {
        let x = CylField::constant_theta(0.01f64);
        let y = CylField::constant_theta(0.01f64);
        let m = trotter_compose(&x, &y, 4, IntegratorOpts::default());
        let q = m.evaluate(CylPoint::new(0.25, 0.5)).unwrap();
        assert!((q.theta.reduced() - 0.27).abs() < 1e-13);
    }

    #[test]
    fn commutator_of_commuting_fields_is_identity() {
        let x = CylField::constant_theta(0.02f64);
        let y = CylField::constant_theta(0.03f64);
        let m = commutator_flow(&x, &y, 0.25, IntegratorOpts::default());
        let q = m.evaluate(CylPoint::new(0.3, 0.4)).unwrap();
        assert!(q.dist(CylPoint::new(0.3, 0.4)) < 1e-12);
    }

    #[test]
    fn commutator_orientation_pinned_by_horocycle_pair() {
        // [X, Y] = Y for X = -y, Y = 1: the commutator must track Fl_{+Y}^{tau^2},
        // i.e. move y upward by about tau^2.
        let x = CylField::from_exprs(parse_expr("0").unwrap(), parse_expr("-y").unwrap())
            .with_fiber(FiberKind::Line);
        let y = CylField::from_exprs(parse_expr("0").unwrap(), parse_expr("1").unwrap())
            .with_fiber(FiberKind::Line);
        let tau = 0.1f64;
        let m = commutator_flow(&x, &y, tau, IntegratorOpts::with_step(1e-3));
        let q = m.evaluate(CylPoint::new(0.0, 0.5)).unwrap();
        let drift = q.y - 0.5;
        assert!(
            (drift - tau * tau).abs() < 2.0 * tau.powi(3),
            "drift {drift} vs tau^2 {}",
            tau * tau
        );
    }
}
