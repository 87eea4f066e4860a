//! The explicit plugin constructions: rotations, twists, fiber maps, the
//! star product, the zooming flow, band insertion, fragmentation, the full
//! compiler for arbitrary targets, the multi-band universal assembly and the
//! square-to-cylinder embedding.

use crate::circle::{reduce_mod1, CylPoint, SampleGrid};
use crate::error::{Error, Result};
use crate::field::{CylField, IntegratorOpts};
use crate::mapexpr::{c0_grid_distance, min_jacobian_det, sup_displacement, MapExpr};
use crate::plugin::Plugin;
use crate::profile::{make_normalized_bump, make_plateau, make_smooth_step, ScalarProfile};
use crate::real::Real;

/// Integrator for time-1 plugin maps built from step-`sigma` fields: time
/// step 1/64, i.e. an arc step of `sigma`/64 for speed-`sigma` fields.
pub fn plugin_integrator<R: Real>() -> IntegratorOpts<R> {
    IntegratorOpts::with_step(R::lit(1.0 / 64.0))
}

/// Default zoom band width: 1/32, independent of the step exponent (the
/// compiler shrinks the per-factor displacement, not the band, as `k`
/// grows). Requires `2^-k < 1/32`, i.e. `k >= 6`.
pub fn default_delta<R: Real>(_k: u32) -> R {
    R::lit(1.0 / 32.0)
}

/// The rigid rotation plugin `g_k = R_{2^-k}`: return time `2^k`, output the
/// identity.
pub fn rotation_plugin<R: Real>(k: u32) -> Plugin<R> {
    Plugin::new(MapExpr::rotation(R::exp2i(-(k as i32))), k)
}

/// Twist plugin: the time-1 map of the circle field
/// `theta -> sigma / (1 + eps(y) rho(theta))` with unit-mass `rho` supported
/// in `[1/3, 2/3]`. The lap time is `2^k (1 + eps)`, so taking
/// `eps(y) = -sigma nu(y)` makes the rescaled return map the twist
/// `(theta, y) -> (theta + nu(y), y)`.
pub fn twist_plugin<R: Real>(nu: ScalarProfile<R>, k: u32) -> Result<Plugin<R>> {
    let amp = nu.sup_abs(2048);
    if amp > R::lit(0.25) {
        return Err(Error::InvalidParameter(format!(
            "twist amplitude {amp:?} exceeds 1/4"
        )));
    }
    if k < 3 {
        return Err(Error::InvalidParameter("twist plugin needs k >= 3".into()));
    }
    let sigma = R::exp2i(-(k as i32));
    let rho = make_normalized_bump(R::lit(0.5), R::lit(1.0 / 6.0))?;
    let field = CylField::from_fns(
        move |th, y, _| sigma / (R::one() - sigma * nu.value(y) * rho.value(th)),
        |_, _, _| R::zero(),
    );
    let map = MapExpr::flow_map(field, R::one(), plugin_integrator());
    Ok(Plugin::new(map, k))
}

/// Fiber plugin realizing the output `(theta, y) -> (theta, y + d(y))`.
///
/// The linear interpolation isotopy `F_t(y) = y + t d(y)` generates the
/// non-autonomous fiber field `Y(t, w) = d(F_t^-1(w))`; the plugin is the
/// time-1 map of `(sigma, sigma * tau'(theta) * Y(tau(theta), y))` with a
/// smooth step `tau`.
pub fn fiber_plugin<R: Real>(d: ScalarProfile<R>, k: u32) -> Result<Plugin<R>> {
    if k < 3 {
        return Err(Error::InvalidParameter("fiber plugin needs k >= 3".into()));
    }
    // isotopy must stay a diffeomorphism: 1 + t d'(y) > 0; linear in t, so
    // checking t = 1 on a dense fiber sample suffices
    for j in 0..=2048 {
        let y = R::of_usize(j) / R::lit(2048.0);
        let slope = R::one() + d.deriv(y);
        if slope <= R::lit(1e-6) {
            return Err(Error::InvalidIsotopy { t: 1.0, y: y.to_f64_lossy() });
        }
    }
    let sigma = R::exp2i(-(k as i32));
    let tau = make_smooth_step::<R>();
    let tau_deriv = tau.clone();
    let isotopy_inverse = move |t: R, w: R, d: &ScalarProfile<R>| -> R {
        // solve x + t d(x) = w by Newton, seeded at w
        let mut x = w;
        for _ in 0..30 {
            let r = x + t * d.value(x) - w;
            if r.abs() <= R::lit(1e-14) {
                break;
            }
            x = x - r / (R::one() + t * d.deriv(x));
        }
        x
    };
    let d_y = d.clone();
    let v = move |th: R, y: R, _t: R| {
        let tp = tau_deriv.deriv(th);
        if tp == R::zero() {
            return R::zero();
        }
        let s = tau.value(th);
        let x = isotopy_inverse(s, y, &d_y);
        sigma * tp * d_y.value(x)
    };
    let field = CylField::from_fns(move |_, _, _| sigma, v);
    let map = MapExpr::flow_map(field, R::one(), plugin_integrator());
    Ok(Plugin::new(map, k))
}

/// Star product of two plugins of equal step: a plugin of half the step
/// whose output is the composition of the outputs.
pub fn star_product<R: Real>(g1: &Plugin<R>, g0: &Plugin<R>) -> Result<Plugin<R>> {
    if g1.k != g0.k {
        return Err(Error::InvalidParameter(format!(
            "star product needs equal steps, got k = {} and {}",
            g1.k, g0.k
        )));
    }
    let probe = SampleGrid::new(32, 9);
    for g in [g0, g1] {
        let disp = sup_displacement(&g.map, &probe)?;
        if disp >= R::lit(0.25) {
            return Err(Error::LiftFailure { displacement: disp.to_f64_lossy() });
        }
    }
    let sigma = g1.sigma();
    Ok(Plugin::new(
        MapExpr::star(g1.map.clone(), g0.map.clone(), sigma),
        g1.k + 1,
    ))
}

/// Parameters resolved while building a zoom plugin.
#[derive(Debug, Clone, Copy)]
pub struct ZoomParams<R: Real> {
    pub delta: R,
    pub k: u32,
    /// Flow speed on the band `B` solving lap-time = `2^k`.
    pub beta: R,
    /// First orbit point of 0 in `[1/2, 1]`.
    pub theta_k: R,
    /// Minimal iterate count with `phi^n(0) >= 1/2`.
    pub n_k: u64,
    pub lap_residual: R,
}

/// The zooming plugin: a circle flow moving at speed `delta` across
/// `A = [1/2, 2/3]`, speed `beta` across `B = [1/4, 1/3]` and speed `2^-k`
/// elsewhere, with `beta` solved so one lap takes exactly `2^k`. Its output
/// is the identity and it translates by `delta` on the `A` plateau.
pub fn zoom_plugin<R: Real>(delta: R, k: u32) -> Result<(Plugin<R>, ZoomParams<R>)> {
    let sigma = R::exp2i(-(k as i32));
    if !(delta > sigma && delta < R::lit(1.0 / 24.0)) {
        return Err(Error::InvalidParameter(format!(
            "zoom needs 2^-k < delta < 1/24, got delta = {delta:?} at k = {k}"
        )));
    }
    let psi_a = make_plateau(R::lit(0.45), R::lit(0.5), R::lit(0.75), R::lit(0.8))?;
    let psi_b = make_plateau(R::lit(0.20), R::lit(0.25), R::lit(1.0 / 3.0), R::lit(0.38))?;

    let speed = {
        let psi_a = psi_a.clone();
        let psi_b = psi_b.clone();
        move |beta: R, th: R| -> R {
            let a = psi_a.value(th);
            let b = psi_b.value(th);
            delta * a + beta * b + (R::one() - a - b) * sigma
        }
    };
    let lap = |beta: R| -> R {
        crate::quad::adaptive_simpson(|th| speed(beta, th).recip(), R::zero(), R::one(), R::lit(1e-12))
    };
    let target = R::exp2i(k as i32);
    let mut lo = sigma * R::lit(0.25);
    let mut hi = sigma * R::lit(4.0);
    let (flo, fhi) = (lap(lo) - target, lap(hi) - target);
    if !(flo > R::zero() && fhi < R::zero()) {
        return Err(Error::InvalidParameter(format!(
            "zoom lap-time bracket failed: lap({lo:?})-2^k = {flo:?}, lap({hi:?})-2^k = {fhi:?}"
        )));
    }
    let mut mid = (lo + hi) * R::lit(0.5);
    for _ in 0..90 {
        mid = (lo + hi) * R::lit(0.5);
        let f = lap(mid) - target;
        if f > R::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= R::lit(1e-16) {
            break;
        }
    }

    // Refine beta against the discrete 2^k-step orbit of the RK4 time-1 map
    // itself: the corner of Delta must land back on an integer within the
    // membership snap, and the quadrature solve cannot see the integrator's
    // accumulated error.
    let build_map = |beta: R| -> MapExpr<R> {
        let sp = speed.clone();
        let field = CylField::from_fns(move |th, _, _| sp(beta, th), |_, _, _| R::zero());
        MapExpr::flow_map(field, R::one(), plugin_integrator())
    };
    let orbit_gap = |beta: R| -> Result<R> {
        let m = build_map(beta);
        let mut th = R::zero();
        for _ in 0..(1u64 << k) {
            th = m.eval_lift(th, R::lit(0.5))?.0;
        }
        Ok(th - R::one())
    };
    let beta = {
        let mut lo = mid * (R::one() - R::lit(2e-6));
        let mut hi = mid * (R::one() + R::lit(2e-6));
        let mut widen = 0;
        while !(orbit_gap(lo)? < R::zero() && orbit_gap(hi)? > R::zero()) {
            lo *= R::one() - R::lit(2e-6);
            hi *= R::one() + R::lit(2e-6);
            widen += 1;
            if widen > 8 {
                return Err(Error::InvalidParameter(
                    "zoom orbit calibration bracket failed".into(),
                ));
            }
        }
        let mut best = mid;
        for _ in 0..80 {
            best = (lo + hi) * R::lit(0.5);
            let g = orbit_gap(best)?;
            if g.abs() <= R::lit(1e-15) {
                break;
            }
            if g < R::zero() {
                lo = best;
            } else {
                hi = best;
            }
            if hi - lo <= best.abs() * R::lit(1e-18) {
                break;
            }
        }
        best
    };
    // residual of the realized map's lap, in time units: the orbit gap
    // divided by the speed at the fundamental domain
    let lap_residual = orbit_gap(beta)?.abs() / sigma;
    if lap_residual > R::lit(1e-9) {
        return Err(Error::InvalidParameter(format!(
            "zoom lap-time residual {lap_residual:?} above 1e-9"
        )));
    }

    let map = build_map(beta);

    // theta_k = first orbit point of 0 in [1/2, 1]
    let mut th = R::zero();
    let mut n_k = 0u64;
    while th < R::lit(0.5) {
        let (nt, _) = map.eval_lift(th, R::lit(0.5))?;
        th = nt;
        n_k += 1;
        if n_k > 8 << k {
            return Err(Error::NumericFailure("zoom orbit failed to reach 1/2".into()));
        }
    }
    let theta_k = th;
    if theta_k > R::lit(2.0 / 3.0) - R::lit(1.5) * delta {
        return Err(Error::InvalidParameter(format!(
            "theta_k = {theta_k:?} violates theta_k <= 2/3 - 3delta/2"
        )));
    }

    let params = ZoomParams { delta, k, beta, theta_k, n_k, lap_residual };
    Ok((Plugin::new(map, k), params))
}

/// Which section of the cylinder the insertion target must fix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertCase {
    /// Target is the identity near `{0} x M`; band at `theta_k`.
    Near0,
    /// Target is the identity near `{1/2} x M`; band at `theta_k + delta/2`.
    Near12,
}

/// Margin (in theta) over which the insertion precondition is sampled.
const INSERT_MARGIN: f64 = 1.0 / 32.0;
const INSERT_ID_TOL: f64 = 1e-9;

/// Verify that `target` is the identity within 1e-9 on a neighborhood of the
/// section `{at} x M`; returns the worst sampled residual.
fn section_identity_residual<R: Real>(target: &MapExpr<R>, at: R) -> Result<R> {
    let mut worst = R::zero();
    for i in -4i32..=4 {
        let th = reduce_mod1(at + R::lit(i as f64 / 4.0 * INSERT_MARGIN));
        for j in 0..=32 {
            let y = R::of_usize(j) / R::lit(32.0);
            let p = CylPoint::new(th, y);
            let (dt, dy) = target.displacement(p)?;
            worst = worst.max((dt * dt + dy * dy).sqrt());
        }
    }
    Ok(worst)
}

/// Zoom-insert construction: replace the zoom translation on a width-`delta`
/// band by an affine-conjugated copy of the lift of `target`, producing a
/// plugin whose output is `target`.
pub fn insert_plugin<R: Real>(
    target: &MapExpr<R>,
    k: u32,
    delta: R,
    case: InsertCase,
) -> Result<(Plugin<R>, ZoomParams<R>)> {
    let section = match case {
        InsertCase::Near0 => R::zero(),
        InsertCase::Near12 => R::lit(0.5),
    };
    let residual = section_identity_residual(target, section)?;
    if residual > R::lit(INSERT_ID_TOL) {
        return Err(Error::InvalidTarget {
            residual: residual.to_f64_lossy(),
            place: match case {
                InsertCase::Near0 => "{0} x M".into(),
                InsertCase::Near12 => "{1/2} x M".into(),
            },
        });
    }
    let probe = SampleGrid::new(48, 17);
    let disp = sup_displacement(target, &probe)?;
    if disp >= R::lit(0.25) {
        return Err(Error::LiftFailure { displacement: disp.to_f64_lossy() });
    }
    let det = min_jacobian_det(target, &probe)?;
    if det <= R::zero() {
        return Err(Error::InvalidTarget {
            residual: det.to_f64_lossy(),
            place: "jacobian determinant".into(),
        });
    }

    let (zoom, params) = zoom_plugin(delta, k)?;
    let (theta_a, local) = match case {
        InsertCase::Near0 => (params.theta_k, target.clone()),
        InsertCase::Near12 => (
            params.theta_k + delta * R::lit(0.5),
            MapExpr::compose(
                MapExpr::rotation(-R::lit(0.5)),
                MapExpr::compose(target.clone(), MapExpr::rotation(R::lit(0.5))),
            ),
        ),
    };
    let map = MapExpr::band_insert(zoom.map, theta_a, local, delta, delta);
    Ok((Plugin::new(map, k), params))
}

/// Cutoff profile for fragmentation: 1 near `{0} x M` (two-sided on the
/// circle), 0 near `{1/2} x M`, built from smooth steps in theta only.
pub fn fragmentation_cutoff<R: Real>() -> ScalarProfile<R> {
    // 1 - plateau: equals 1 on [0, 1/8] and [7/8, 1), equals 0 on [3/8, 5/8]
    let pl = make_plateau(
        R::lit(1.0 / 8.0),
        R::lit(3.0 / 8.0),
        R::lit(5.0 / 8.0),
        R::lit(7.0 / 8.0),
    )
    .expect("fixed parameters are valid");
    crate::profile::make_complement(pl)
}

/// Fragment `G = G1 ∘ G0` with `G0 = x + rho(theta) d(x)` (`d` the lifted
/// displacement of `G`): `G0` is the identity near `{1/2} x M`, `G1` near
/// `{0} x M`.
pub fn fragment<R: Real>(g: &MapExpr<R>) -> Result<(MapExpr<R>, MapExpr<R>)> {
    let probe = SampleGrid::new(48, 17);
    let disp = sup_displacement(g, &probe)?;
    if disp >= R::lit(0.25) {
        return Err(Error::LiftFailure { displacement: disp.to_f64_lossy() });
    }
    let rho = fragmentation_cutoff::<R>();
    let g0 = MapExpr::scaled_displacement(g.clone(), rho);
    let det = min_jacobian_det(&g0, &SampleGrid::new(64, 33))?;
    if det <= R::zero() {
        return Err(Error::FragmentationFailure(format!(
            "scaled-displacement factor is not a diffeomorphism (min det {det:?})"
        )));
    }
    let g1 = MapExpr::compose(g.clone(), MapExpr::inverse(g0.clone()));
    Ok((g0, g1))
}

/// Insertion-case selector for the compiler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CompileCase {
    /// Fragment into two factors and star them (works for any target).
    #[default]
    Auto,
    /// Single insertion, target must already fix a neighborhood of `{0} x M`.
    Near0,
    /// Same near `{1/2} x M`.
    Near12,
}

#[derive(Debug, Clone)]
pub struct CompileOptions<R: Real> {
    /// Zoom step exponent of each fragment insertion.
    pub k: u32,
    /// Zoom band width; defaults to `5 * 2^-(k+1)`.
    pub delta: Option<R>,
    /// Isotopy subdivision count (power of two); default: least power of two
    /// bringing the per-factor displacement under `min(0.05, 0.75 delta)`.
    pub n_factors: Option<usize>,
    /// Target `C^0` tolerance for the output guarantee.
    pub tol: R,
    pub case: CompileCase,
    /// When set, the compiler measures its output error and distance to the
    /// identity on this grid.
    pub verify_grid: Option<SampleGrid<R>>,
}

impl<R: Real> Default for CompileOptions<R> {
    fn default() -> Self {
        CompileOptions {
            k: 7,
            delta: None,
            n_factors: None,
            tol: R::lit(5e-3),
            case: CompileCase::Auto,
            verify_grid: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CompileReport<R: Real> {
    pub construction: &'static str,
    /// Step exponent of the returned plugin (sigma = 2^-final_k).
    pub final_k: u32,
    pub n_factors: usize,
    pub delta: R,
    pub output_c0_error: Option<R>,
    pub dist_to_identity: Option<R>,
    pub meets_tol: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct Compiled<R: Real> {
    pub plugin: Plugin<R>,
    pub report: CompileReport<R>,
}

/// Compile an arbitrary compactly supported target into a plugin whose
/// output is the target: fragment each isotopy factor, insert the two pieces
/// through zoom plugins, and fold the factors with star products.
pub fn compile<R: Real>(target: &MapExpr<R>, opts: &CompileOptions<R>) -> Result<Compiled<R>> {
    let delta = opts.delta.unwrap_or_else(|| default_delta(opts.k));
    let probe = SampleGrid::new(64, 33);
    let disp = sup_displacement(target, &probe)?;

    // trivial path
    if disp <= R::lit(1e-12) {
        let plugin = rotation_plugin(opts.k);
        let report = finish_report(
            &plugin,
            target,
            opts,
            CompileReport {
                construction: "compile",
                final_k: opts.k,
                n_factors: 1,
                delta,
                output_c0_error: None,
                dist_to_identity: None,
                meets_tol: None,
            },
        )?;
        return Ok(Compiled { plugin, report });
    }

    match opts.case {
        CompileCase::Near0 | CompileCase::Near12 => {
            let case = if opts.case == CompileCase::Near0 {
                InsertCase::Near0
            } else {
                InsertCase::Near12
            };
            let (plugin, params) = insert_plugin(target, opts.k, delta, case)?;
            let report = finish_report(
                &plugin,
                target,
                opts,
                CompileReport {
                    construction: "zoom-insert",
                    final_k: opts.k,
                    n_factors: 1,
                    delta: params.delta,
                    output_c0_error: None,
                    dist_to_identity: None,
                    meets_tol: None,
                },
            )?;
            Ok(Compiled { plugin, report })
        }
        CompileCase::Auto => {
            if disp >= R::lit(0.25) {
                return Err(Error::NotCompilable(format!(
                    "target displacement {disp:?} >= 1/4: supply factors or an isotopy"
                )));
            }
            // isotopy G_t = x + t d(x) must stay a diffeomorphism
            for t in [0.25, 0.5, 0.75, 1.0] {
                let gt = MapExpr::scaled_displacement(
                    target.clone(),
                    crate::profile::make_constant(R::lit(t)),
                );
                if min_jacobian_det(&gt, &probe)? <= R::zero() {
                    return Err(Error::NotCompilable(format!(
                        "linear interpolation isotopy degenerates at t = {t}"
                    )));
                }
            }

            // Per-factor displacement cap: 0.05 keeps every factor inside the
            // fragmentation and insertion preconditions; the 2^-k term makes
            // the compiled plugin's distance to the identity halve when k
            // steps up (the star product halves theta displacements but the
            // inserted fiber displacement only shrinks with the factor count).
            let per_factor_cap =
                R::lit(0.05).min(R::lit(0.8) * R::exp2i(-(opts.k as i32 - 2)));
            let n = opts.n_factors.unwrap_or_else(|| {
                let mut n = 1usize;
                while disp / R::of_usize(n) > per_factor_cap {
                    n *= 2;
                }
                n
            });
            if !n.is_power_of_two() {
                return Err(Error::InvalidParameter(format!(
                    "n_factors must be a power of two, got {n}"
                )));
            }

            // telescoping factors F_i = G_{(i+1)/N} ∘ G_{i/N}^{-1}
            let time_map = |t: R| -> MapExpr<R> {
                MapExpr::scaled_displacement(target.clone(), crate::profile::make_constant(t))
            };
            let mut level: Vec<Plugin<R>> = Vec::with_capacity(n);
            for i in 0..n {
                let t0 = R::of_usize(i) / R::of_usize(n);
                let t1 = R::of_usize(i + 1) / R::of_usize(n);
                let factor = if n == 1 {
                    target.clone()
                } else {
                    MapExpr::compose(time_map(t1), MapExpr::inverse(time_map(t0)))
                };
                let (f0, f1) = fragment(&factor)?;
                let (p1, _) = insert_plugin(&f1, opts.k, delta, InsertCase::Near0)?;
                let (p0, _) = insert_plugin(&f0, opts.k, delta, InsertCase::Near12)?;
                level.push(star_product(&p1, &p0)?);
            }
            // balanced star fold preserving composition order
            while level.len() > 1 {
                let mut next = Vec::with_capacity(level.len() / 2);
                for pair in level.chunks(2) {
                    next.push(star_product(&pair[1], &pair[0])?);
                }
                level = next;
            }
            let plugin = level.pop().expect("at least one factor");
            let final_k = plugin.k;
            let report = finish_report(
                &plugin,
                target,
                opts,
                CompileReport {
                    construction: "compile",
                    final_k,
                    n_factors: n,
                    delta,
                    output_c0_error: None,
                    dist_to_identity: None,
                    meets_tol: None,
                },
            )?;
            Ok(Compiled { plugin, report })
        }
    }
}

/// Grid for distance-to-identity measurements: prime-sized so the nodes do
/// not alias with the dyadic sheet structure of folded star products.
pub fn displacement_grid<R: Real>() -> SampleGrid<R> {
    SampleGrid::new(509, 17)
}

fn finish_report<R: Real>(
    plugin: &Plugin<R>,
    target: &MapExpr<R>,
    opts: &CompileOptions<R>,
    mut report: CompileReport<R>,
) -> Result<CompileReport<R>> {
    if let Some(grid) = &opts.verify_grid {
        let out = plugin.output_map();
        let err = c0_grid_distance(&out, target, grid)?;
        let dist = sup_displacement(&plugin.map, &displacement_grid())?;
        report.meets_tol = Some(err <= opts.tol);
        report.output_c0_error = Some(err);
        report.dist_to_identity = Some(dist);
    }
    Ok(report)
}

/// One requested renormalization band of a universal map.
#[derive(Debug, Clone)]
pub struct UniversalBand<R: Real> {
    pub target: MapExpr<R>,
    /// Orbit volume of the band's renormalization domain.
    pub ell: R,
    /// Slack width; bands are placed at `s_i = sum_{j<i} ell'_j`.
    pub ell_prime: R,
    pub k: u32,
}

#[derive(Debug, Clone)]
pub struct BandReport<R: Real> {
    pub s: R,
    pub ell: R,
    pub sigma: R,
    pub final_k: u32,
    /// Renormalization domain `[0, sigma) x [s, s + ell]`.
    pub delta_domain: ((R, R), (R, R)),
    /// Exact orbit volume (analytic: the band has full theta extent).
    pub orbit_volume: R,
    pub output_error: Option<R>,
}

#[derive(Debug, Clone)]
pub struct UniversalAssembly<R: Real> {
    pub map: MapExpr<R>,
    pub bands: Vec<BandReport<R>>,
}

/// Assemble a single map of `T x [0, 1]` carrying one renormalization domain
/// per requested band: the fiber affine conjugate of a compiled plugin on
/// each `T x [s_i, s_i + ell_i]`, the identity elsewhere.
pub fn universal_assemble<R: Real>(
    bands: &[UniversalBand<R>],
    opts: &CompileOptions<R>,
) -> Result<UniversalAssembly<R>> {
    if bands.is_empty() {
        return Err(Error::InvalidParameter("universal map needs at least one band".into()));
    }
    let total: R = bands.iter().map(|b| b.ell_prime).fold(R::zero(), |a, b| a + b);
    if total >= R::one() {
        return Err(Error::InvalidParameter(format!(
            "sum of slack widths must stay below 1, got {total:?}"
        )));
    }
    for b in bands {
        if b.ell_prime <= b.ell || b.ell <= R::zero() {
            return Err(Error::InvalidParameter(
                "each band needs 0 < ell < ell'".into(),
            ));
        }
    }
    let mut s = R::zero();
    let mut fiber_bands = Vec::with_capacity(bands.len());
    let mut reports = Vec::with_capacity(bands.len());
    for b in bands {
        let mut band_opts = opts.clone();
        band_opts.k = b.k;
        let compiled = compile(&b.target, &band_opts)?;
        let sigma = compiled.plugin.sigma();
        fiber_bands.push((s, s + b.ell, compiled.plugin.map.clone()));
        reports.push(BandReport {
            s,
            ell: b.ell,
            sigma,
            final_k: compiled.report.final_k,
            delta_domain: ((R::zero(), sigma), (s, s + b.ell)),
            orbit_volume: b.ell,
            output_error: compiled.report.output_c0_error,
        });
        s += b.ell_prime;
    }
    Ok(UniversalAssembly { map: MapExpr::fiber_bands(fiber_bands), bands: reports })
}

/// Place a compactly supported map of the unit square as an affine copy in
/// `[1/4, 3/4] x [1/4, 3/4]`, extended by the identity: the embedded support
/// avoids `{0} x M` and the cylinder boundary, so the result is a compile
/// target.
pub fn embed_ball<R: Real>(g: &MapExpr<R>, margin: R) -> Result<MapExpr<R>> {
    if margin <= R::zero() || margin >= R::lit(0.5) {
        return Err(Error::InvalidParameter("embed margin must lie in (0, 1/2)".into()));
    }
    // support check: displacement must vanish on the margin collar
    let mut worst = R::zero();
    let n = 48;
    for i in 0..=n {
        let a = R::of_usize(i) / R::of_usize(n);
        for edge in 0..4 {
            for off in 0..=4 {
                let m = margin * R::of_usize(off) / R::lit(4.0);
                let (x, y) = match edge {
                    0 => (a, m),
                    1 => (a, R::one() - m),
                    2 => (m, a),
                    _ => (R::one() - m, a),
                };
                let (dt, dy) = g.displacement(CylPoint::new(x, y))?;
                worst = worst.max((dt * dt + dy * dy).sqrt());
            }
        }
    }
    if worst > R::lit(1e-12) {
        return Err(Error::InvalidParameter(format!(
            "map is not supported away from the square boundary (residual {worst:?})"
        )));
    }
    let local = MapExpr::fiber_affine_conjugate(g.clone(), R::lit(0.25), R::lit(0.5));
    Ok(MapExpr::band_insert(
        MapExpr::identity(),
        R::lit(0.25),
        local,
        R::zero(),
        R::lit(0.5),
    ))
}
