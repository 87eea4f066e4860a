//! Immutable expression DAG of cylinder diffeomorphisms with evaluation,
//! Jacobians, inversion and sampled `C^r` distances.
//!
//! Every evaluation runs on the theta lift: `eval_lift` satisfies
//! `f(theta + 1) = f(theta) + 1`, and reduction mod 1 happens only at the
//! boundary of an operation. All maps emitted by this crate are within
//! `C^0` distance 1/4 of the identity (or are flows, inverted by time
//! reversal), which keeps the canonical lift and the Newton inversion seeded
//! at the target point well defined.

use std::sync::Arc;

use rayon::prelude::*;

use crate::circle::{reduce_mod1, CylPoint, FiberKind, SampleGrid};
use crate::error::{Error, Result};
use crate::field::{flow_lift, flow_lift_from, flow_with_jacobian, CylField, IntegratorOpts};
use crate::gridmap::GridMapData;
use crate::plugin;
use crate::profile::ScalarProfile;
use crate::real::Real;

pub type Jacobian2<R> = [[R; 2]; 2];

#[derive(Debug)]
pub enum MapNode<R: Real> {
    Identity,
    /// `(theta, y) -> (theta + sigma, y)`
    Rotation { sigma: R },
    /// `(theta, y) -> (theta + nu(y), y)`
    Twist { nu: ScalarProfile<R> },
    /// `(theta, y) -> (theta, y + d(y))`
    FiberMap { displacement: ScalarProfile<R> },
    /// Time-`time` map of an autonomous field.
    FlowMap { field: CylField<R>, time: R, opts: IntegratorOpts<R> },
    /// Flow of a time-dependent field from `t0` to `t1`.
    NonAutonomousFlowMap { field: CylField<R>, t0: R, t1: R, opts: IntegratorOpts<R> },
    Compose { outer: MapExpr<R>, inner: MapExpr<R> },
    Inverse { inner: MapExpr<R> },
    /// Concatenation through the two-sheeted cover: `g0` acts on the first
    /// sheet, `g1` on the second; both must be step-`sigma` plugin maps.
    Star { g1: MapExpr<R>, g0: MapExpr<R>, sigma: R },
    /// Equal to `base` outside `[theta_a, theta_a + scale) x M`; inside, the
    /// affine-conjugated copy of `local` (canonical lift fixing `{0} x M`):
    /// `(theta_a + x, y) -> (theta_a + offset + scale*L_t(x/scale, y), L_y)`.
    BandInsert {
        base: MapExpr<R>,
        theta_a: R,
        local: MapExpr<R>,
        offset: R,
        scale: R,
    },
    /// Conjugation by `psi: (theta, y) -> (theta, s + l*y)`.
    FiberAffineConjugate { inner: MapExpr<R>, s: R, l: R },
    /// Disjoint fiber bands `T x [y_lo, y_hi]`, each carrying the fiber
    /// affine conjugate of its map; identity outside all bands.
    FiberBands { bands: Vec<(R, R, MapExpr<R>)> },
    /// `x -> x + rho(theta) * d(x)` where `d` is the lifted displacement of
    /// `inner` (the flat-cylinder exponential form of fragmentation).
    ScaledDisplacement { inner: MapExpr<R>, rho: ScalarProfile<R> },
    /// Bicubic interpolation of imported displacement samples.
    GridImport { data: Arc<GridMapData<R>> },
    /// Rescaled first-return map of a step-`2^-k` plugin map.
    PluginOutput { inner: MapExpr<R>, k: u32, cap: u64 },
}

/// Reference-counted immutable map expression; cloning shares the DAG.
#[derive(Debug, Clone)]
pub struct MapExpr<R: Real>(Arc<MapNode<R>>);

pub const NEWTON_TOL: f64 = 1e-12;
pub const NEWTON_MAX_ITER: usize = 50;

impl<R: Real> MapExpr<R> {
    pub fn node(&self) -> &MapNode<R> {
        &self.0
    }

    pub fn identity() -> Self {
        MapExpr(Arc::new(MapNode::Identity))
    }

    pub fn rotation(sigma: R) -> Self {
        MapExpr(Arc::new(MapNode::Rotation { sigma }))
    }

    pub fn twist(nu: ScalarProfile<R>) -> Self {
        MapExpr(Arc::new(MapNode::Twist { nu }))
    }

    pub fn fiber_map(displacement: ScalarProfile<R>) -> Self {
        MapExpr(Arc::new(MapNode::FiberMap { displacement }))
    }

    pub fn flow_map(field: CylField<R>, time: R, opts: IntegratorOpts<R>) -> Self {
        MapExpr(Arc::new(MapNode::FlowMap { field, time, opts }))
    }

    pub fn non_autonomous_flow_map(
        field: CylField<R>,
        t0: R,
        t1: R,
        opts: IntegratorOpts<R>,
    ) -> Self {
        MapExpr(Arc::new(MapNode::NonAutonomousFlowMap { field, t0, t1, opts }))
    }

    pub fn compose(outer: Self, inner: Self) -> Self {
        MapExpr(Arc::new(MapNode::Compose { outer, inner }))
    }

    pub fn inverse(inner: Self) -> Self {
        MapExpr(Arc::new(MapNode::Inverse { inner }))
    }

    pub fn star(g1: Self, g0: Self, sigma: R) -> Self {
        MapExpr(Arc::new(MapNode::Star { g1, g0, sigma }))
    }

    pub fn band_insert(base: Self, theta_a: R, local: Self, offset: R, scale: R) -> Self {
        MapExpr(Arc::new(MapNode::BandInsert { base, theta_a, local, offset, scale }))
    }

    pub fn fiber_affine_conjugate(inner: Self, s: R, l: R) -> Self {
        MapExpr(Arc::new(MapNode::FiberAffineConjugate { inner, s, l }))
    }

    pub fn fiber_bands(bands: Vec<(R, R, MapExpr<R>)>) -> Self {
        MapExpr(Arc::new(MapNode::FiberBands { bands }))
    }

    pub fn scaled_displacement(inner: Self, rho: ScalarProfile<R>) -> Self {
        MapExpr(Arc::new(MapNode::ScaledDisplacement { inner, rho }))
    }

    pub fn grid_import(data: Arc<GridMapData<R>>) -> Self {
        MapExpr(Arc::new(MapNode::GridImport { data }))
    }

    pub fn plugin_output(inner: Self, k: u32, cap: u64) -> Self {
        MapExpr(Arc::new(MapNode::PluginOutput { inner, k, cap }))
    }

    /// Rebuild the DAG with every flow node set to the given RK4 time step
    /// (used for long orbit scans where a coarser fixed step suffices).
    pub fn with_integrator_step(&self, step: R) -> Self {
        let opts = IntegratorOpts::with_step(step);
        match &*self.0 {
            MapNode::Identity
            | MapNode::Rotation { .. }
            | MapNode::Twist { .. }
            | MapNode::FiberMap { .. }
            | MapNode::GridImport { .. } => self.clone(),
            MapNode::FlowMap { field, time, .. } => {
                MapExpr::flow_map(field.clone(), *time, opts)
            }
            MapNode::NonAutonomousFlowMap { field, t0, t1, .. } => {
                MapExpr::non_autonomous_flow_map(field.clone(), *t0, *t1, opts)
            }
            MapNode::Compose { outer, inner } => MapExpr::compose(
                outer.with_integrator_step(step),
                inner.with_integrator_step(step),
            ),
            MapNode::Inverse { inner } => MapExpr::inverse(inner.with_integrator_step(step)),
            MapNode::Star { g1, g0, sigma } => MapExpr::star(
                g1.with_integrator_step(step),
                g0.with_integrator_step(step),
                *sigma,
            ),
            MapNode::BandInsert { base, theta_a, local, offset, scale } => MapExpr::band_insert(
                base.with_integrator_step(step),
                *theta_a,
                local.with_integrator_step(step),
                *offset,
                *scale,
            ),
            MapNode::FiberAffineConjugate { inner, s, l } => {
                MapExpr::fiber_affine_conjugate(inner.with_integrator_step(step), *s, *l)
            }
            MapNode::FiberBands { bands } => MapExpr::fiber_bands(
                bands
                    .iter()
                    .map(|(lo, hi, m)| (*lo, *hi, m.with_integrator_step(step)))
                    .collect(),
            ),
            MapNode::ScaledDisplacement { inner, rho } => {
                MapExpr::scaled_displacement(inner.with_integrator_step(step), rho.clone())
            }
            MapNode::PluginOutput { inner, k, cap } => {
                MapExpr::plugin_output(inner.with_integrator_step(step), *k, *cap)
            }
        }
    }

    /// Whether the DAG contains imported sampled data, making order-2
    /// distance claims invalid.
    pub fn finite_smoothness(&self) -> bool {
        match &*self.0 {
            MapNode::GridImport { .. } => true,
            MapNode::Identity
            | MapNode::Rotation { .. }
            | MapNode::Twist { .. }
            | MapNode::FiberMap { .. }
            | MapNode::FlowMap { .. }
            | MapNode::NonAutonomousFlowMap { .. } => false,
            MapNode::Compose { outer, inner } => {
                outer.finite_smoothness() || inner.finite_smoothness()
            }
            MapNode::Inverse { inner }
            | MapNode::ScaledDisplacement { inner, .. }
            | MapNode::FiberAffineConjugate { inner, .. }
            | MapNode::PluginOutput { inner, .. } => inner.finite_smoothness(),
            MapNode::Star { g1, g0, .. } => g1.finite_smoothness() || g0.finite_smoothness(),
            MapNode::BandInsert { base, local, .. } => {
                base.finite_smoothness() || local.finite_smoothness()
            }
            MapNode::FiberBands { bands } => bands.iter().any(|(_, _, m)| m.finite_smoothness()),
        }
    }

    /// Lift-equivariant evaluation: `f(theta + 1, y) = f(theta, y) + (1, 0)`.
    pub fn eval_lift(&self, th: R, y: R) -> Result<(R, R)> {
        match &*self.0 {
            MapNode::Identity => Ok((th, y)),
            MapNode::Rotation { sigma } => Ok((th + *sigma, y)),
            MapNode::Twist { nu } => Ok((th + nu.value(y), y)),
            MapNode::FiberMap { displacement } => Ok((th, y + displacement.value(y))),
            MapNode::FlowMap { field, time, opts } => flow_lift(field, *time, (th, y), *opts),
            MapNode::NonAutonomousFlowMap { field, t0, t1, opts } => {
                flow_lift_from(field, *t0, *t1 - *t0, (th, y), *opts)
            }
            MapNode::Compose { outer, inner } => {
                let mid = inner.eval_lift(th, y)?;
                outer.eval_lift(mid.0, mid.1)
            }
            MapNode::Inverse { inner } => inner.inverse_lift(th, y),
            MapNode::Star { g1, g0, .. } => {
                let bar = th * R::lit(2.0);
                let frac2 = bar - (bar / R::lit(2.0)).floor() * R::lit(2.0);
                let branch = if frac2 < R::one() { g0 } else { g1 };
                let (bt, by) = branch.eval_lift(bar, y)?;
                Ok((bt * R::lit(0.5), by))
            }
            MapNode::BandInsert { base, theta_a, local, offset, scale } => {
                let frac = reduce_mod1(th);
                if frac >= *theta_a && frac < *theta_a + *scale {
                    let u = (frac - *theta_a) / *scale;
                    let (lu, ly) = local.eval_lift(u, y)?;
                    Ok((th - frac + *theta_a + *offset + *scale * lu, ly))
                } else {
                    base.eval_lift(th, y)
                }
            }
            MapNode::FiberAffineConjugate { inner, s, l } => {
                let eta = (y - *s) / *l;
                let (it, iy) = inner.eval_lift(th, eta)?;
                Ok((it, *s + *l * iy))
            }
            MapNode::FiberBands { bands } => {
                for (lo, hi, m) in bands {
                    if y >= *lo && y <= *hi {
                        let eta = (y - *lo) / (*hi - *lo);
                        let (it, iy) = m.eval_lift(th, eta)?;
                        return Ok((it, *lo + (*hi - *lo) * iy));
                    }
                }
                Ok((th, y))
            }
            MapNode::ScaledDisplacement { inner, rho } => {
                let (it, iy) = inner.eval_lift(th, y)?;
                let r = rho.value(reduce_mod1(th));
                Ok((th + r * (it - th), y + r * (iy - y)))
            }
            MapNode::GridImport { data } => {
                let (dt, dy) = data.displacement(th, y);
                Ok((th + dt, y + dy))
            }
            MapNode::PluginOutput { inner, k, cap } => {
                plugin::output_eval_lift(inner, *k, *cap, th, y)
            }
        }
    }

    /// Jacobian in lift coordinates, chain rule across the DAG.
    pub fn jacobian_lift(&self, th: R, y: R) -> Result<Jacobian2<R>> {
        match &*self.0 {
            MapNode::Identity | MapNode::Rotation { .. } => Ok(ident2()),
            MapNode::Twist { nu } => Ok([[R::one(), nu.deriv(y)], [R::zero(), R::one()]]),
            MapNode::FiberMap { displacement } => {
                Ok([[R::one(), R::zero()], [R::zero(), R::one() + displacement.deriv(y)]])
            }
            MapNode::FlowMap { field, time, opts } => {
                let (_, j) = flow_with_jacobian(field, R::zero(), *time, (th, y), *opts)?;
                Ok(j)
            }
            MapNode::NonAutonomousFlowMap { field, t0, t1, opts } => {
                let (_, j) = flow_with_jacobian(field, *t0, *t1 - *t0, (th, y), *opts)?;
                Ok(j)
            }
            MapNode::Compose { outer, inner } => {
                let mid = inner.eval_lift(th, y)?;
                let ji = inner.jacobian_lift(th, y)?;
                let jo = outer.jacobian_lift(mid.0, mid.1)?;
                Ok(mat_mul(&jo, &ji))
            }
            MapNode::Inverse { inner } => {
                let pre = inner.inverse_lift(th, y)?;
                let j = inner.jacobian_lift(pre.0, pre.1)?;
                mat_inv(&j)
            }
            MapNode::Star { g1, g0, .. } => {
                let bar = th * R::lit(2.0);
                let frac2 = bar - (bar / R::lit(2.0)).floor() * R::lit(2.0);
                let branch = if frac2 < R::one() { g0 } else { g1 };
                let j = branch.jacobian_lift(bar, y)?;
                Ok([
                    [j[0][0], j[0][1] * R::lit(0.5)],
                    [j[1][0] * R::lit(2.0), j[1][1]],
                ])
            }
            MapNode::BandInsert { base, theta_a, local, offset: _, scale } => {
                let frac = reduce_mod1(th);
                if frac >= *theta_a && frac < *theta_a + *scale {
                    let u = (frac - *theta_a) / *scale;
                    let j = local.jacobian_lift(u, y)?;
                    Ok([
                        [j[0][0], j[0][1] * *scale],
                        [j[1][0] / *scale, j[1][1]],
                    ])
                } else {
                    base.jacobian_lift(th, y)
                }
            }
            MapNode::FiberAffineConjugate { inner, s, l } => {
                let eta = (y - *s) / *l;
                let j = inner.jacobian_lift(th, eta)?;
                Ok([[j[0][0], j[0][1] / *l], [j[1][0] * *l, j[1][1]]])
            }
            MapNode::FiberBands { bands } => {
                for (lo, hi, m) in bands {
                    if y >= *lo && y <= *hi {
                        let l = *hi - *lo;
                        let eta = (y - *lo) / l;
                        let j = m.jacobian_lift(th, eta)?;
                        return Ok([[j[0][0], j[0][1] / l], [j[1][0] * l, j[1][1]]]);
                    }
                }
                Ok(ident2())
            }
            MapNode::ScaledDisplacement { inner, rho } => {
                let frac = reduce_mod1(th);
                let r = rho.value(frac);
                let rp = rho.deriv(frac);
                let (it, iy) = inner.eval_lift(th, y)?;
                let j = inner.jacobian_lift(th, y)?;
                let (dt, dy) = (it - th, iy - y);
                Ok([
                    [
                        R::one() + r * (j[0][0] - R::one()) + dt * rp,
                        r * j[0][1],
                    ],
                    [
                        r * j[1][0] + dy * rp,
                        R::one() + r * (j[1][1] - R::one()),
                    ],
                ])
            }
            MapNode::GridImport { .. } => {
                // centered differences of the interpolated displacement
                let h = R::lit(1e-4);
                let pt = self.eval_lift(th + h, y)?;
                let mt = self.eval_lift(th - h, y)?;
                let py = self.eval_lift(th, y + h)?;
                let my = self.eval_lift(th, y - h)?;
                let two_h = R::lit(2.0) * h;
                Ok([
                    [(pt.0 - mt.0) / two_h, (py.0 - my.0) / two_h],
                    [(pt.1 - mt.1) / two_h, (py.1 - my.1) / two_h],
                ])
            }
            MapNode::PluginOutput { inner, k, cap } => {
                plugin::output_jacobian_lift(inner, *k, *cap, th, y)
            }
        }
    }

    /// Structure-aware inverse: reverses time for flows, unwinds
    /// compositions, and falls back to damped Newton seeded at the target
    /// (valid for the near-identity maps this crate emits).
    pub fn inverse_lift(&self, th: R, y: R) -> Result<(R, R)> {
        match &*self.0 {
            MapNode::Identity => Ok((th, y)),
            MapNode::Rotation { sigma } => Ok((th - *sigma, y)),
            MapNode::Twist { nu } => Ok((th - nu.value(y), y)),
            MapNode::FiberMap { displacement } => {
                // 1-D Newton on the fiber
                let mut x = y;
                for _ in 0..NEWTON_MAX_ITER {
                    let r = x + displacement.value(x) - y;
                    if r.abs() <= R::lit(NEWTON_TOL) {
                        return Ok((th, x));
                    }
                    x = x - r / (R::one() + displacement.deriv(x));
                }
                Err(Error::InversionFailure {
                    iterations: NEWTON_MAX_ITER,
                    residual: (x + displacement.value(x) - y).abs().to_f64_lossy(),
                })
            }
            MapNode::FlowMap { field, time, opts } => flow_lift(field, -*time, (th, y), *opts),
            MapNode::NonAutonomousFlowMap { field, t0, t1, opts } => {
                flow_lift_from(field, *t1, *t0 - *t1, (th, y), *opts)
            }
            MapNode::Compose { outer, inner } => {
                let mid = outer.inverse_lift(th, y)?;
                inner.inverse_lift(mid.0, mid.1)
            }
            MapNode::Inverse { inner } => inner.eval_lift(th, y),
            MapNode::FiberAffineConjugate { inner, s, l } => {
                let eta = (y - *s) / *l;
                let (it, iy) = inner.inverse_lift(th, eta)?;
                Ok((it, *s + *l * iy))
            }
            MapNode::FiberBands { bands } => {
                for (lo, hi, m) in bands {
                    if y >= *lo && y <= *hi {
                        let l = *hi - *lo;
                        let eta = (y - *lo) / l;
                        let (it, iy) = m.inverse_lift(th, eta)?;
                        return Ok((it, *lo + l * iy));
                    }
                }
                Ok((th, y))
            }
            MapNode::PluginOutput { inner, k, cap } => {
                plugin::output_inverse_eval_lift(inner, *k, *cap, th, y)
            }
            MapNode::Star { g1, g0, .. } => {
                // the patched double-cover map has exactly one preimage;
                // probe both sheets, fall back to Newton near seams
                let bar = th * R::lit(2.0);
                for (branch, lo) in [(g0, R::zero()), (g1, R::one())] {
                    if let Ok((bt, by)) = branch.inverse_lift(bar, y) {
                        let frac2 = bt - (bt / R::lit(2.0)).floor() * R::lit(2.0);
                        if frac2 >= lo && frac2 < lo + R::one() {
                            return Ok((bt * R::lit(0.5), by));
                        }
                    }
                }
                self.newton_invert(th, y)
            }
            MapNode::BandInsert { base, theta_a, local, offset, scale } => {
                let frac = reduce_mod1(th);
                let in_image = frac >= *theta_a + *offset && frac < *theta_a + *offset + *scale;
                if in_image {
                    let u_out = (frac - *theta_a - *offset) / *scale;
                    let (u, ly) = local.inverse_lift(u_out, y)?;
                    return Ok((th - frac + *theta_a + u * *scale, ly));
                }
                let pre = base.inverse_lift(th, y)?;
                let pf = reduce_mod1(pre.0);
                if pf >= *theta_a && pf < *theta_a + *scale {
                    // base preimage falls in the overridden band: the point
                    // has no base preimage, resolve through Newton
                    return self.newton_invert(th, y);
                }
                Ok(pre)
            }
            _ => self.newton_invert(th, y),
        }
    }

    fn newton_invert(&self, th: R, y: R) -> Result<(R, R)> {
        let mut p = (th, y);
        let mut res = {
            let f = self.eval_lift(p.0, p.1)?;
            (f.0 - th, f.1 - y)
        };
        let norm = |v: (R, R)| (v.0 * v.0 + v.1 * v.1).sqrt();
        for _ in 0..NEWTON_MAX_ITER {
            if norm(res) <= R::lit(NEWTON_TOL) {
                return Ok(p);
            }
            let j = self.jacobian_lift(p.0, p.1)?;
            let jinv = mat_inv(&j)?;
            let full = (
                -(jinv[0][0] * res.0 + jinv[0][1] * res.1),
                -(jinv[1][0] * res.0 + jinv[1][1] * res.1),
            );
            // damped update: halve until the residual decreases
            let mut lambda = R::one();
            let mut accepted = false;
            for _ in 0..12 {
                let cand = (p.0 + lambda * full.0, p.1 + lambda * full.1);
                let f = self.eval_lift(cand.0, cand.1)?;
                let cres = (f.0 - th, f.1 - y);
                if norm(cres) < norm(res) {
                    p = cand;
                    res = cres;
                    accepted = true;
                    break;
                }
                lambda *= R::lit(0.5);
            }
            if !accepted {
                break;
            }
        }
        if norm(res) <= R::lit(NEWTON_TOL) {
            Ok(p)
        } else {
            Err(Error::InversionFailure {
                iterations: NEWTON_MAX_ITER,
                residual: norm(res).to_f64_lossy(),
            })
        }
    }

    /// Evaluate at a cylinder point, reducing theta at the boundary.
    pub fn evaluate(&self, p: CylPoint<R>) -> Result<CylPoint<R>> {
        let (t, y) = self.eval_lift(p.theta.reduced(), p.y)?;
        Ok(CylPoint::new(reduce_mod1(t), y))
    }

    /// Point `p` with `evaluate(p) = q`, within the Newton tolerance.
    pub fn inverse_evaluate(&self, q: CylPoint<R>) -> Result<CylPoint<R>> {
        let (t, y) = self.inverse_lift(q.theta.reduced(), q.y)?;
        Ok(CylPoint::new(reduce_mod1(t), y))
    }

    /// Jacobian at a cylinder point (theta entries in the lift).
    pub fn jacobian(&self, p: CylPoint<R>) -> Result<Jacobian2<R>> {
        self.jacobian_lift(p.theta.reduced(), p.y)
    }

    /// Lifted displacement `f(p) - p` at a point.
    pub fn displacement(&self, p: CylPoint<R>) -> Result<(R, R)> {
        let th = p.theta.reduced();
        let (t, y) = self.eval_lift(th, p.y)?;
        Ok((t - th, y - p.y))
    }
}

pub fn ident2<R: Real>() -> Jacobian2<R> {
    [[R::one(), R::zero()], [R::zero(), R::one()]]
}

pub fn mat_mul<R: Real>(a: &Jacobian2<R>, b: &Jacobian2<R>) -> Jacobian2<R> {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        ],
    ]
}

pub fn mat_det<R: Real>(a: &Jacobian2<R>) -> R {
    a[0][0] * a[1][1] - a[0][1] * a[1][0]
}

pub fn mat_inv<R: Real>(a: &Jacobian2<R>) -> Result<Jacobian2<R>> {
    let det = mat_det(a);
    if det == R::zero() || !det.is_finite() {
        return Err(Error::NumericFailure("singular jacobian".into()));
    }
    Ok([
        [a[1][1] / det, -a[0][1] / det],
        [-a[1][0] / det, a[0][0] / det],
    ])
}

fn frobenius_diff<R: Real>(a: &Jacobian2<R>, b: &Jacobian2<R>) -> R {
    let mut s = R::zero();
    for r in 0..2 {
        for c in 0..2 {
            let d = a[r][c] - b[r][c];
            s += d * d;
        }
    }
    s.sqrt()
}

/// Bring a displacement difference into `[-1/2, 1/2]`, bit-symmetric in the
/// sign of its argument so sampled distances are exactly symmetric.
fn wrap_half<R: Real>(x: R) -> R {
    if x > R::lit(0.5) {
        wrap_half(x - R::one())
    } else if x < R::lit(-0.5) {
        wrap_half(x + R::one())
    } else {
        x
    }
}

/// Truncated sampled `C^r` distance:
/// `max over grid of sum_{k<=r} 2^-k min(1, |D^k f - D^k g|)`,
/// with `D^0` the lifted displacement difference, `D^1` the Jacobian
/// difference (Frobenius) and `D^2` a finite-difference Hessian difference.
pub fn cr_distance<R: Real>(
    f: &MapExpr<R>,
    g: &MapExpr<R>,
    r: usize,
    grid: &SampleGrid<R>,
) -> Result<R> {
    if r > 2 {
        return Err(Error::InvalidParameter(format!("cr_distance order {r} > 2")));
    }
    if r == 2 && (f.finite_smoothness() || g.finite_smoothness()) {
        return Err(Error::InvalidParameter(
            "imported sampled maps carry finite smoothness; order-2 distances are not claimed"
                .into(),
        ));
    }
    let pts = grid.points();
    let fiber = grid.fiber;
    let vals: Result<Vec<R>> = pts
        .par_iter()
        .map(|p| -> Result<R> {
            let th = p.theta.reduced();
            let y = p.y;
            let fe = f.eval_lift(th, y)?;
            let ge = g.eval_lift(th, y)?;
            let dtheta = wrap_half(fe.0 - ge.0);
            let dy = match fiber {
                FiberKind::Circle => wrap_half(fe.1 - ge.1),
                _ => fe.1 - ge.1,
            };
            let mut total = (dtheta * dtheta + dy * dy).sqrt().min(R::one());
            if r >= 1 {
                let jf = f.jacobian_lift(th, y)?;
                let jg = g.jacobian_lift(th, y)?;
                total += R::lit(0.5) * frobenius_diff(&jf, &jg).min(R::one());
            }
            if r >= 2 {
                let h = R::lit(1e-3);
                let mut acc = R::zero();
                for dir in 0..2 {
                    let (dt, dyv) = if dir == 0 { (h, R::zero()) } else { (R::zero(), h) };
                    let jf_p = f.jacobian_lift(th + dt, y + dyv)?;
                    let jf_m = f.jacobian_lift(th - dt, y - dyv)?;
                    let jg_p = g.jacobian_lift(th + dt, y + dyv)?;
                    let jg_m = g.jacobian_lift(th - dt, y - dyv)?;
                    for a in 0..2 {
                        for b in 0..2 {
                            let hf = (jf_p[a][b] - jf_m[a][b]) / (R::lit(2.0) * h);
                            let hg = (jg_p[a][b] - jg_m[a][b]) / (R::lit(2.0) * h);
                            let d = hf - hg;
                            acc += d * d;
                        }
                    }
                }
                total += R::lit(0.25) * acc.sqrt().min(R::one());
            }
            Ok(total)
        })
        .collect();
    let vals = vals?;
    Ok(vals.into_iter().fold(R::zero(), |a, b| a.max(b)))
}

/// Sup over the grid of the lifted displacement norm (distance to identity
/// before the min(1, .) truncation).
pub fn sup_displacement<R: Real>(m: &MapExpr<R>, grid: &SampleGrid<R>) -> Result<R> {
    let pts = grid.points();
    let vals: Result<Vec<R>> = pts
        .par_iter()
        .map(|p| {
            let (dt, dy) = m.displacement(*p)?;
            Ok((dt * dt + dy * dy).sqrt())
        })
        .collect();
    Ok(vals?.into_iter().fold(R::zero(), |a, b| a.max(b)))
}

/// Minimum Jacobian determinant over the grid (orientation check).
pub fn min_jacobian_det<R: Real>(m: &MapExpr<R>, grid: &SampleGrid<R>) -> Result<R> {
    let pts = grid.points();
    let vals: Result<Vec<R>> = pts
        .par_iter()
        .map(|p| Ok(mat_det(&m.jacobian(*p)?)))
        .collect();
    Ok(vals?.into_iter().fold(R::infinity(), |a, b| a.min(b)))
}

/// Sup over the grid of the distance between images of two maps
/// (plain `C^0` comparison without derivative terms or truncation).
pub fn c0_grid_distance<R: Real>(
    f: &MapExpr<R>,
    g: &MapExpr<R>,
    grid: &SampleGrid<R>,
) -> Result<R> {
    let pts = grid.points();
    let fiber = grid.fiber;
    let vals: Result<Vec<R>> = pts
        .par_iter()
        .map(|p| {
            let th = p.theta.reduced();
            let fe = f.eval_lift(th, p.y)?;
            let ge = g.eval_lift(th, p.y)?;
            let dt = wrap_half(fe.0 - ge.0);
            let dy = match fiber {
                FiberKind::Circle => wrap_half(fe.1 - ge.1),
                _ => fe.1 - ge.1,
            };
            Ok((dt * dt + dy * dy).sqrt())
        })
        .collect();
    Ok(vals?.into_iter().fold(R::zero(), |a, b| a.max(b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;
    use crate::profile::{make_bump, make_plateau};

    fn grid(n: usize) -> SampleGrid<f64> {
        SampleGrid::new(n, n)
    }

    #[test]
    fn rotation_evaluates_mod_one() {
        let m = MapExpr::<f64>::rotation(0.125);
        let q = m.evaluate(CylPoint::new(0.95, 0.3)).unwrap();
        assert!((q.theta.reduced() - 0.075).abs() < 1e-15);
        assert_eq!(q.y, 0.3);
    }

    #[test]
    fn twist_matches_formula() {
        let nu = make_bump(0.5f64, 0.5, 0.2).unwrap();
        let m = MapExpr::twist(nu.clone());
        for i in 0..20 {
            let (th, y) = (0.05 * i as f64, 0.05 * i as f64);
            let q = m.evaluate(CylPoint::new(th, y)).unwrap();
            assert!((q.theta.reduced() - reduce_mod1(th + nu.value(y))).abs() < 1e-14);
            assert_eq!(q.y, y);
        }
    }

    #[test]
    fn constant_flow_map_is_exact() {
        let field = CylField::constant_theta(2f64.powi(-6));
        let m = MapExpr::flow_map(field, 1.0, IntegratorOpts::default());
        let q = m.evaluate(CylPoint::new(0.5, 0.5)).unwrap();
        assert_eq!(q.theta.reduced(), 0.515625);
        assert_eq!(q.y, 0.5);
    }

    #[test]
    fn jacobian_rotation_identity() {
        let m = MapExpr::rotation(0.3);
        let j = m.jacobian(CylPoint::new(0.2, 0.7)).unwrap();
        assert_eq!(j, ident2());
    }

    #[test]
    fn jacobian_twist_analytic_vs_fd() {
        let nu = make_bump(0.5f64, 0.4, 0.2).unwrap();
        let m = MapExpr::twist(nu.clone());
        for i in 1..10 {
            let y = i as f64 / 10.0;
            let j = m.jacobian(CylPoint::new(0.3, y)).unwrap();
            assert!((j[0][0] - 1.0).abs() < 1e-14);
            assert!((j[1][0]).abs() < 1e-14);
            assert!((j[1][1] - 1.0).abs() < 1e-14);
            let h = 1e-6;
            let fd = (m.eval_lift(0.3, y + h).unwrap().0 - m.eval_lift(0.3, y - h).unwrap().0)
                / (2.0 * h);
            assert!((j[0][1] - fd).abs() <= 1e-7, "{} vs {}", j[0][1], fd);
        }
    }

    #[test]
    fn jacobian_chain_rule_exact_at_point() {
        let f = MapExpr::twist(make_bump(0.5f64, 0.4, 0.2).unwrap());
        let g = MapExpr::fiber_map(make_bump(0.5f64, 0.3, 0.1).unwrap());
        let comp = MapExpr::compose(f.clone(), g.clone());
        let p = CylPoint::new(0.37, 0.52);
        let jg = g.jacobian(p).unwrap();
        let gp = g.evaluate(p).unwrap();
        let jf = f.jacobian(gp).unwrap();
        let expect = mat_mul(&jf, &jg);
        let got = comp.jacobian(p).unwrap();
        for r in 0..2 {
            for c in 0..2 {
                assert!((expect[r][c] - got[r][c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn inverse_round_trips_catalog() {
        let maps: Vec<MapExpr<f64>> = vec![
            MapExpr::rotation(0.11),
            MapExpr::twist(make_bump(0.5, 0.4, 0.2).unwrap()),
            MapExpr::fiber_map(make_bump(0.5, 0.3, 0.1).unwrap()),
            MapExpr::compose(
                MapExpr::twist(make_bump(0.5, 0.4, 0.15).unwrap()),
                MapExpr::fiber_map(make_bump(0.4, 0.3, 0.1).unwrap()),
            ),
            MapExpr::scaled_displacement(
                MapExpr::twist(make_bump(0.5, 0.4, 0.1).unwrap()),
                make_plateau(0.05, 0.45, 0.55, 0.95).unwrap(),
            ),
        ];
        for m in &maps {
            for i in 0..100 {
                let p = CylPoint::new(
                    reduce_mod1(0.017 * i as f64 + 0.005),
                    reduce_mod1(0.031 * i as f64 + 0.4).min(0.999),
                );
                let q = m.evaluate(p).unwrap();
                let back = m.inverse_evaluate(q).unwrap();
                assert!(back.dist(p) <= 1e-9, "round trip {:?} vs {:?}", back, p);
            }
        }
    }

    #[test]
    fn flow_inverse_is_time_reversal() {
        let field = CylField::from_exprs(
            parse_expr("0.01 + 0.005 * bump(theta, 0.5, 0.3, 1)").unwrap(),
            parse_expr("0.01 * bump(y, 0.5, 0.3, 1)").unwrap(),
        );
        let m = MapExpr::flow_map(field.clone(), 1.0, IntegratorOpts::default());
        let back = MapExpr::flow_map(field, -1.0, IntegratorOpts::default());
        let g = grid(32);
        for p in g.points() {
            let q = m.evaluate(p).unwrap();
            let a = m.inverse_evaluate(q).unwrap();
            let b = back.evaluate(q).unwrap();
            assert!(a.dist(b) <= 1e-9);
            assert!(a.dist(p) <= 1e-9);
        }
    }

    #[test]
    fn flow_group_law_on_grid() {
        let field = CylField::from_exprs(
            parse_expr("0.02 * (1 + 0.5 * cos(2*3.14159265358979312*theta))").unwrap(),
            parse_expr("0.03 * bump(y, 0.5, 0.4, 1)").unwrap(),
        );
        let opts = IntegratorOpts::with_step(1.0 / 64.0);
        let sum = MapExpr::flow_map(field.clone(), 0.7 + 0.6, opts);
        let two_step = MapExpr::compose(
            MapExpr::flow_map(field.clone(), 0.7, opts),
            MapExpr::flow_map(field.clone(), 0.6, opts),
        );
        let tol = 10.0 * (1.0f64 / 64.0).powi(4);
        let d = c0_grid_distance(&sum, &two_step, &grid(16)).unwrap();
        assert!(d <= tol, "group law distance {d} vs tol {tol}");
    }

    #[test]
    fn cr_distance_basics() {
        let g = grid(16);
        let f = MapExpr::twist(make_bump(0.5f64, 0.4, 0.2).unwrap());
        assert_eq!(cr_distance(&f, &f, 2, &g).unwrap(), 0.0);
        let rot = MapExpr::rotation(2f64.powi(-5));
        let d = cr_distance(&rot, &MapExpr::identity(), 0, &g).unwrap();
        assert!((d - 2f64.powi(-5)).abs() < 1e-15);
        // derivative terms vanish for rigid rotation
        let d1 = cr_distance(&rot, &MapExpr::identity(), 1, &g).unwrap();
        assert!((d1 - 2f64.powi(-5)).abs() < 1e-9);
    }

    #[test]
    fn cr_distance_twist_matches_analytic() {
        let nu = make_bump(0.5f64, 0.4, 0.2).unwrap();
        let f = MapExpr::twist(nu.clone());
        let g = SampleGrid::new(64, 64);
        let d = cr_distance(&f, &MapExpr::identity(), 1, &g).unwrap();
        // analytic: max over grid of |nu(y)| + 0.5*|nu'(y)|
        let mut expect = 0.0f64;
        for j in 0..64 {
            let y = j as f64 / 63.0;
            expect = expect.max(nu.value(y).abs().min(1.0) + 0.5 * nu.deriv(y).abs().min(1.0));
        }
        assert!((d - expect).abs() <= 1e-6, "sampled {d} vs analytic {expect}");
    }

    #[test]
    fn cr_distance_pseudometric_properties() {
        let g = grid(12);
        let a = MapExpr::twist(make_bump(0.5f64, 0.4, 0.2).unwrap());
        let b = MapExpr::fiber_map(make_bump(0.5f64, 0.3, 0.1).unwrap());
        let c = MapExpr::rotation(0.05);
        for r in 0..=2 {
            let dab = cr_distance(&a, &b, r, &g).unwrap();
            let dba = cr_distance(&b, &a, r, &g).unwrap();
            assert_eq!(dab, dba, "symmetry exact");
            let dac = cr_distance(&a, &c, r, &g).unwrap();
            let dcb = cr_distance(&c, &b, r, &g).unwrap();
            assert!(dab <= dac + dcb + 1e-12, "triangle at order {r}");
        }
    }

    #[test]
    fn non_autonomous_flow_and_reverse() {
        // dy/dt = sin(pi t): y(1) - y(0) = 2/pi, independent of y
        let field = CylField::from_exprs(
            parse_expr("0").unwrap(),
            parse_expr("sin(3.14159265358979312 * t)").unwrap(),
        )
        .with_fiber(crate::circle::FiberKind::Line)
        .time_dependent(true);
        let m = MapExpr::non_autonomous_flow_map(field, 0.0, 1.0, IntegratorOpts::with_step(1.0 / 128.0));
        let p = CylPoint::new(0.3, 0.2);
        let q = m.evaluate(p).unwrap();
        assert!((q.y - (0.2 + 2.0 / std::f64::consts::PI)).abs() < 1e-8, "y = {}", q.y);
        // inverse integrates backwards in time
        let back = m.inverse_evaluate(q).unwrap();
        assert!(back.dist(p) < 1e-9);
    }

    #[test]
    fn f32_instantiation_works_at_reduced_precision() {
        let m = MapExpr::<f32>::rotation(0.125);
        let q = m.evaluate(CylPoint::new(0.95f32, 0.3)).unwrap();
        assert!((q.theta.reduced() - 0.075).abs() < 1e-6);
        let b = make_bump(0.5f32, 0.5, 1.0).unwrap();
        assert!((b.value(0.5) - 1.0).abs() < 1e-6);
        let g = SampleGrid::<f32>::new(8, 8);
        let d = cr_distance(&m, &MapExpr::identity(), 0, &g).unwrap();
        assert!((d - 0.125).abs() < 1e-6);
    }

    #[test]
    fn grid_import_finite_smoothness_guard() {
        let gr = SampleGrid::<f64>::new(32, 17);
        let data = crate::gridmap::sample_displacements(&gr, |t, y| (reduce_mod1(t + 0.05), y));
        let m = MapExpr::grid_import(data);
        assert!(m.finite_smoothness());
        assert!(cr_distance(&m, &MapExpr::identity(), 2, &grid(8)).is_err());
        let d = cr_distance(&m, &MapExpr::rotation(0.05), 0, &grid(8)).unwrap();
        assert!(d < 1e-10, "imported rotation mismatch {d}");
    }

    #[test]
    fn orientation_positive_for_catalog() {
        let g = grid(16);
        for m in [
            MapExpr::twist(make_bump(0.5f64, 0.4, 0.24).unwrap()),
            MapExpr::fiber_map(make_bump(0.5f64, 0.4, 0.1).unwrap()),
        ] {
            assert!(min_jacobian_det(&m, &g).unwrap() > 0.0);
        }
    }
}
