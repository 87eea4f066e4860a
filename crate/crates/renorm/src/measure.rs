//! Invariant-density transfer between a plugin and its output, invariance
//! residuals, and the return-time/Lyapunov relation.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::circle::{reduce_mod1, SampleGrid};
use crate::error::{Error, Result};
use crate::mapexpr::{mat_det, mat_mul, MapExpr};
use crate::plugin::{in_delta, Plugin};
use crate::real::Real;

enum Density<R: Real> {
    Analytic(Arc<dyn Fn(R, R) -> R + Send + Sync>),
    /// Row-major samples (theta outer), bilinear interpolation, theta
    /// periodic, y clamped.
    Grid { n_theta: usize, n_y: usize, values: Vec<R> },
}

/// A probability density on `T x M`, normalized on construction.
pub struct DensitySampler<R: Real> {
    density: Density<R>,
    /// Constant the raw values were divided by.
    pub normalization: R,
    pub provenance: &'static str,
}

impl<R: Real> std::fmt::Debug for DensitySampler<R> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "DensitySampler({}, norm {:?})", self.provenance, self.normalization)
    }
}

/// Fiber-direction quadrature weight: composite Simpson when the panel
/// count `n_y - 1` is even, trapezoid otherwise. Only weight ratios matter;
/// every normalization divides by the weight sum.
fn y_weight<R: Real>(n_y: usize, j: usize) -> R {
    if n_y >= 3 && (n_y - 1).is_multiple_of(2) {
        if j == 0 || j == n_y - 1 {
            R::one()
        } else if j % 2 == 1 {
            R::lit(4.0)
        } else {
            R::lit(2.0)
        }
    } else if j == 0 || j == n_y - 1 {
        R::lit(0.5)
    } else {
        R::one()
    }
}

/// Circle-direction weight: periodic composite Simpson when `n_theta` is
/// even (node 0 doubles as the endpoint), uniform otherwise.
fn theta_weight<R: Real>(n_theta: usize, i: usize) -> R {
    if n_theta >= 4 && n_theta.is_multiple_of(2) {
        if i % 2 == 1 {
            R::lit(4.0)
        } else {
            R::lit(2.0)
        }
    } else {
        R::one()
    }
}

fn node_weight_2d<R: Real>(n_theta: usize, n_y: usize, i: usize, j: usize) -> R {
    theta_weight::<R>(n_theta, i) * y_weight::<R>(n_y, j)
}

impl<R: Real> DensitySampler<R> {
    pub fn lebesgue() -> Self {
        DensitySampler {
            density: Density::Analytic(Arc::new(|_, _| R::one())),
            normalization: R::one(),
            provenance: "analytic",
        }
    }

    /// Wrap a nonnegative function; the grid fixes the normalization
    /// constant (integral 1 under trapezoid quadrature).
    pub fn from_fn(
        f: impl Fn(R, R) -> R + Send + Sync + 'static,
        grid: &SampleGrid<R>,
    ) -> Result<Self> {
        let f = Arc::new(f);
        let mut mass = R::zero();
        let mut weight_sum = R::zero();
        for i in 0..grid.n_theta {
            for j in 0..grid.n_y {
                let v = f(grid.theta_at(i), grid.y_at(j));
                if v < R::zero() {
                    return Err(Error::DegenerateMeasure("negative density sample".into()));
                }
                let w = node_weight_2d::<R>(grid.n_theta, grid.n_y, i, j);
                mass += v * w;
                weight_sum += w;
            }
        }
        let mass = mass / weight_sum;
        if mass <= R::zero() {
            return Err(Error::DegenerateMeasure("zero total mass".into()));
        }
        Ok(DensitySampler {
            density: Density::Analytic(Arc::new(move |t, y| f(t, y) / mass)),
            normalization: mass,
            provenance: "analytic",
        })
    }

    fn from_grid_values(grid: &SampleGrid<R>, raw: Vec<R>, provenance: &'static str) -> Result<Self> {
        let mut mass = R::zero();
        let mut weight_sum = R::zero();
        for i in 0..grid.n_theta {
            for j in 0..grid.n_y {
                let w = node_weight_2d::<R>(grid.n_theta, grid.n_y, i, j);
                mass += raw[i * grid.n_y + j] * w;
                weight_sum += w;
            }
        }
        let mass = mass / weight_sum;
        // NaN-safe: a NaN mass must also land here
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(mass > R::zero()) || !mass.is_finite() {
            return Err(Error::DegenerateMeasure(format!("grid mass {mass:?}")));
        }
        let values = raw.into_iter().map(|v| v / mass).collect();
        Ok(DensitySampler {
            density: Density::Grid { n_theta: grid.n_theta, n_y: grid.n_y, values },
            normalization: mass,
            provenance,
        })
    }

    pub fn value(&self, theta: R, y: R) -> R {
        match &self.density {
            Density::Analytic(f) => f(reduce_mod1(theta), y),
            Density::Grid { n_theta, n_y, values } => {
                let tpos = reduce_mod1(theta) * R::of_usize(*n_theta);
                let i0 = tpos.floor().to_f64_lossy() as usize % n_theta;
                let ts = tpos - tpos.floor();
                let ypos = y.max(R::zero()).min(R::one()) * R::of_usize(n_y - 1);
                let j0 = (ypos.floor().to_f64_lossy() as usize).min(n_y - 2);
                let ys = ypos - R::of_usize(j0);
                let at = |i: usize, j: usize| values[(i % n_theta) * n_y + j];
                let a = at(i0, j0) * (R::one() - ts) + at(i0 + 1, j0) * ts;
                let b = at(i0, j0 + 1) * (R::one() - ts) + at(i0 + 1, j0 + 1) * ts;
                a * (R::one() - ys) + b * ys
            }
        }
    }

    /// Export as a `theta,y,value` text table on the given grid.
    pub fn to_table(&self, grid: &SampleGrid<R>) -> String {
        let mut s = String::from("theta,y,value\n");
        for i in 0..grid.n_theta {
            for j in 0..grid.n_y {
                let (t, y) = (grid.theta_at(i), grid.y_at(j));
                s.push_str(&format!("{:.16e},{:.16e},{:.16e}\n", t, y, self.value(t, y)));
            }
        }
        s
    }

    /// Import from a `theta,y,value` table (must be a row-major grid).
    pub fn from_table(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == "theta,y,value" => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    column: 1,
                    message: "expected header `theta,y,value`".into(),
                })
            }
        }
        let mut rows: Vec<(R, R, R)> = Vec::new();
        for (ln, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split(',');
            let mut take = || -> Result<R> {
                let raw = it.next().ok_or_else(|| Error::Parse {
                    line: ln + 1,
                    column: 1,
                    message: "missing field".into(),
                })?;
                raw.trim().parse::<f64>().map(R::lit).map_err(|_| Error::Parse {
                    line: ln + 1,
                    column: 1,
                    message: format!("malformed number `{raw}`"),
                })
            };
            rows.push((take()?, take()?, take()?));
        }
        let first_theta = rows.first().map(|r| r.0).ok_or(Error::Parse {
            line: 1,
            column: 1,
            message: "empty table".into(),
        })?;
        let n_y = rows
            .iter()
            .take_while(|r| (r.0 - first_theta).abs() < R::lit(1e-12))
            .count();
        if n_y < 2 || !rows.len().is_multiple_of(n_y) {
            return Err(Error::Parse {
                line: 1,
                column: 1,
                message: "rows do not form a grid".into(),
            });
        }
        let n_theta = rows.len() / n_y;
        let grid = SampleGrid::new(n_theta, n_y);
        Self::from_grid_values(&grid, rows.into_iter().map(|r| r.2).collect(), "analytic")
    }
}

/// Pull a density invariant for the output back to a density invariant for
/// the plugin: each point `z` has a unique ancestor `w` in `Delta_sigma`
/// with `g^N(w) = z`, `N < tau(w)`; the density at `z` is
/// `rho_G(H(w)) |det D(H ∘ g^-N)(z)|`, renormalized on the grid.
pub fn transfer_to_plugin<R: Real>(
    rho_g_out: &DensitySampler<R>,
    plugin: &Plugin<R>,
    grid: &SampleGrid<R>,
) -> Result<DensitySampler<R>> {
    let sigma = plugin.sigma();
    let raw: Result<Vec<R>> = grid
        .points()
        .par_iter()
        .map(|z| {
            let mut p = (z.theta.reduced(), z.y);
            let mut det = R::one();
            let mut found = in_delta(p.0, sigma);
            if !found {
                for _ in 0..plugin.cap {
                    // det D g^-1 (current) = 1 / det D g (preimage)
                    let pre = plugin.map.inverse_lift(p.0, p.1)?;
                    let j = plugin.map.jacobian_lift(pre.0, pre.1)?;
                    det /= mat_det(&j).abs();
                    p = pre;
                    if in_delta(p.0, sigma) {
                        found = true;
                        break;
                    }
                }
            }
            if !found {
                return Err(Error::ReturnTimeOverflow {
                    theta: z.theta.reduced().to_f64_lossy(),
                    y: z.y.to_f64_lossy(),
                    cap: plugin.cap,
                });
            }
            let mut frac = reduce_mod1(p.0);
            if frac > R::one() - R::lit(crate::plugin::EDGE_SNAP) {
                frac = R::zero();
            }
            // H stretches theta by 1/sigma
            let h_det = sigma.recip();
            Ok(rho_g_out.value(frac / sigma, p.1) * h_det * det)
        })
        .collect();
    DensitySampler::from_grid_values(grid, raw?, "transferred")
}

/// Push a plugin-invariant density to its output:
/// `rho_G(p) = rho_g(H^-1 p) * sigma / mass(Delta)`.
pub fn transfer_to_output<R: Real>(
    rho_g: &DensitySampler<R>,
    plugin: &Plugin<R>,
    grid: &SampleGrid<R>,
) -> Result<DensitySampler<R>> {
    let sigma = plugin.sigma();
    // mass of Delta under rho_g (area sigma x 1)
    let mut mass = R::zero();
    let mut wsum = R::zero();
    for i in 0..grid.n_theta {
        let th = sigma * R::of_usize(i) / R::of_usize(grid.n_theta);
        for j in 0..grid.n_y {
            let w = y_weight::<R>(grid.n_y, j);
            mass += rho_g.value(th, grid.y_at(j)) * w;
            wsum += w;
        }
    }
    let mass = mass / wsum * sigma;
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(mass > R::zero()) {
        return Err(Error::DegenerateMeasure("plugin density vanishes on Delta".into()));
    }
    let raw: Vec<R> = grid
        .points()
        .iter()
        .map(|p| rho_g.value(sigma * p.theta.reduced(), p.y) * sigma / mass)
        .collect();
    DensitySampler::from_grid_values(grid, raw, "transferred")
}

/// Change-of-variables residual of `rho` under `f`:
/// `max over grid of |rho(f^-1 z) |det Df^-1(z)| - rho(z)|`.
pub fn invariance_residual<R: Real>(
    rho: &DensitySampler<R>,
    f: &MapExpr<R>,
    grid: &SampleGrid<R>,
) -> Result<R> {
    let vals: Result<Vec<R>> = grid
        .points()
        .par_iter()
        .map(|z| {
            let pre = f.inverse_lift(z.theta.reduced(), z.y)?;
            let j = f.jacobian_lift(pre.0, pre.1)?;
            let det_inv = mat_det(&j).abs().recip();
            Ok((rho.value(pre.0, pre.1) * det_inv - rho.value(z.theta.reduced(), z.y)).abs())
        })
        .collect();
    Ok(vals?.into_iter().fold(R::zero(), |a, b| a.max(b)))
}

#[derive(Debug, Clone)]
pub struct LyapunovOptions {
    /// Plugin orbit length per seed; the orbit runs to the first return
    /// after this many steps so both exponent estimates end on a return.
    pub n_iter: usize,
    pub seeds: usize,
    pub seed_base: u64,
    /// Fixed RK4 time step used while tracking orbits (coarser than the
    /// certification step; the estimates tolerate it).
    pub orbit_step: f64,
}

impl Default for LyapunovOptions {
    fn default() -> Self {
        LyapunovOptions { n_iter: 10_000, seeds: 32, seed_base: 0x5eed, orbit_step: 1.0 / 8.0 }
    }
}

#[derive(Debug, Clone)]
pub struct LyapunovReport<R: Real> {
    /// Finite-time exponents of the plugin (top, bottom), averaged over seeds.
    pub lambda_g: [R; 2],
    /// Same for the output map.
    pub lambda_capital_g: [R; 2],
    /// Mean return time under the transferred measure.
    pub tau_bar: R,
    /// `max_i |lambda_G,i - tau_bar * lambda_g,i|`.
    pub defect: R,
    /// Defect relative to the exponent scale (floored at 1e-3).
    pub relative_defect: R,
    /// Spread (max - min over seeds) of the top plugin exponent.
    pub spread_g: R,
}

/// QR-accumulating exponent tracker for 2x2 cocycles.
struct QrAccumulator<R: Real> {
    q: [[R; 2]; 2],
    log_sum: [R; 2],
    steps: u64,
}

impl<R: Real> QrAccumulator<R> {
    fn new() -> Self {
        QrAccumulator {
            q: [[R::one(), R::zero()], [R::zero(), R::one()]],
            log_sum: [R::zero(), R::zero()],
            steps: 0,
        }
    }

    /// Push one cocycle matrix: B = J Q, QR-decompose, accumulate log |r_ii|.
    fn push(&mut self, j: &[[R; 2]; 2]) {
        let b = mat_mul(j, &self.q);
        // Gram-Schmidt on columns
        let c0 = (b[0][0], b[1][0]);
        let c1 = (b[0][1], b[1][1]);
        let r00 = (c0.0 * c0.0 + c0.1 * c0.1).sqrt();
        let q0 = (c0.0 / r00, c0.1 / r00);
        let r01 = q0.0 * c1.0 + q0.1 * c1.1;
        let d = (c1.0 - r01 * q0.0, c1.1 - r01 * q0.1);
        let r11 = (d.0 * d.0 + d.1 * d.1).sqrt();
        let q1 = if r11 > R::zero() {
            (d.0 / r11, d.1 / r11)
        } else {
            (-q0.1, q0.0)
        };
        self.q = [[q0.0, q1.0], [q0.1, q1.1]];
        self.log_sum[0] += r00.max(R::lit(1e-300)).ln();
        self.log_sum[1] += r11.max(R::lit(1e-300)).ln();
        self.steps += 1;
    }

    fn exponents(&self) -> [R; 2] {
        if self.steps == 0 {
            return [R::zero(), R::zero()];
        }
        let n = R::lit(self.steps as f64);
        [self.log_sum[0] / n, self.log_sum[1] / n]
    }
}

/// Finite-time Lyapunov estimates for a plugin and its output along matched
/// orbits, plus the measure-weighted mean return time; the defect checks the
/// relation "output exponents = mean return time x plugin exponents".
pub fn lyapunov_relation<R: Real>(
    plugin: &Plugin<R>,
    rho_output: &DensitySampler<R>,
    grid: &SampleGrid<R>,
    opts: &LyapunovOptions,
) -> Result<LyapunovReport<R>> {
    let sigma = plugin.sigma();
    // coarser integrator for the long orbit scans
    let orbit_map = plugin.map.with_integrator_step(R::lit(opts.orbit_step));

    // mean return time under the transferred measure, over Delta samples
    let rho_plug = transfer_to_plugin(rho_output, plugin, grid)?;
    let mut delta_samples = Vec::with_capacity(grid.n_theta * grid.n_y);
    for i in 0..grid.n_theta {
        let th = sigma * R::of_usize(i) / R::of_usize(grid.n_theta);
        for j in 0..grid.n_y {
            delta_samples.push((th, grid.y_at(j), y_weight::<R>(grid.n_y, j)));
        }
    }
    let tau_rows: Result<Vec<(R, R)>> = delta_samples
        .par_iter()
        .map(|&(th, y, wq)| {
            let w = rho_plug.value(th, y) * wq;
            let (_, tau) =
                crate::plugin::return_orbit_lift(&orbit_map, sigma, plugin.cap, (th, y))?;
            Ok((w * R::lit(tau as f64), w))
        })
        .collect();
    let mut tau_weighted = R::zero();
    let mut weight = R::zero();
    for (tw, w) in tau_rows? {
        tau_weighted += tw;
        weight += w;
    }
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(weight > R::zero()) {
        return Err(Error::DegenerateMeasure("transferred measure vanishes on Delta".into()));
    }
    let tau_bar = tau_weighted / weight;

    // matched-orbit exponents
    let seeds: Vec<u64> = (0..opts.seeds as u64).collect();
    let per_seed: Result<Vec<([R; 2], [R; 2])>> = seeds
        .par_iter()
        .map(|&s| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed_base.wrapping_add(s));
            let th0: f64 = rng.gen_range(0.0..1.0);
            let y0: f64 = rng.gen_range(0.05..0.95);
            let mut p = (sigma * R::lit(th0), R::lit(y0));
            let mut acc_g = QrAccumulator::new();
            let mut acc_out = QrAccumulator::new();
            let mut since_return = crate::mapexpr::ident2::<R>();
            let mut steps = 0u64;
            // run to the first return after n_iter steps, so both exponent
            // estimates close on a return boundary
            let budget = opts.n_iter as u64 + plugin.cap;
            while steps < budget {
                let j = orbit_map.jacobian_lift(p.0, p.1)?;
                acc_g.push(&j);
                since_return = mat_mul(&j, &since_return);
                p = orbit_map.eval_lift(p.0, p.1)?;
                steps += 1;
                if in_delta(p.0, sigma) {
                    // output-step jacobian: DH (product since last return) DH^-1
                    let m = [
                        [since_return[0][0], since_return[0][1] / sigma],
                        [since_return[1][0] * sigma, since_return[1][1]],
                    ];
                    acc_out.push(&m);
                    since_return = crate::mapexpr::ident2();
                    if steps >= opts.n_iter as u64 {
                        break;
                    }
                }
            }
            Ok((acc_g.exponents(), acc_out.exponents()))
        })
        .collect();
    let per_seed = per_seed?;
    let n_seeds = R::of_usize(per_seed.len());
    let mut lambda_g = [R::zero(); 2];
    let mut lambda_out = [R::zero(); 2];
    let mut top_min = R::infinity();
    let mut top_max = R::neg_infinity();
    for (g, o) in &per_seed {
        lambda_g[0] += g[0] / n_seeds;
        lambda_g[1] += g[1] / n_seeds;
        lambda_out[0] += o[0] / n_seeds;
        lambda_out[1] += o[1] / n_seeds;
        top_min = top_min.min(g[0]);
        top_max = top_max.max(g[0]);
    }
    let defect = (lambda_out[0] - tau_bar * lambda_g[0])
        .abs()
        .max((lambda_out[1] - tau_bar * lambda_g[1]).abs());
    let scale = lambda_out[0]
        .abs()
        .max(lambda_out[1].abs())
        .max(R::lit(1e-3));
    Ok(LyapunovReport {
        lambda_g,
        lambda_capital_g: lambda_out,
        tau_bar,
        defect,
        relative_defect: defect / scale,
        spread_g: top_max - top_min,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::construct::{rotation_plugin, twist_plugin};
    use crate::profile::make_bump;

    fn grid(n: usize) -> SampleGrid<f64> {
        SampleGrid::new(n, n)
    }

    #[test]
    fn lebesgue_through_rotation_stays_lebesgue() {
        let p = rotation_plugin::<f64>(3);
        let rho = transfer_to_plugin(&DensitySampler::lebesgue(), &p, &grid(24)).unwrap();
        for q in grid(13).points() {
            let v = rho.value(q.theta.reduced(), q.y);
            assert!((v - 1.0).abs() <= 1e-10, "density {v}");
        }
        let back = transfer_to_output(&rho, &p, &grid(24)).unwrap();
        for q in grid(13).points() {
            assert!((back.value(q.theta.reduced(), q.y) - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn invariance_residual_examples() {
        let g = grid(16);
        let leb = DensitySampler::lebesgue();
        // rotations preserve Lebesgue exactly
        let r = invariance_residual(&leb, &MapExpr::rotation(0.11), &g).unwrap();
        assert!(r <= 1e-12);
        // twists have unit jacobian determinant
        let tw = MapExpr::twist(make_bump(0.5f64, 0.4, 0.2).unwrap());
        let r = invariance_residual(&leb, &tw, &g).unwrap();
        assert!(r <= 1e-8, "twist residual {r}");
        // a fiber map distorts area: negative control
        let fm = MapExpr::fiber_map(make_bump(0.5f64, 0.4, 0.15).unwrap());
        let r = invariance_residual(&leb, &fm, &g).unwrap();
        assert!(r > 1e-2, "fiber residual unexpectedly small: {r}");
    }

    #[test]
    fn mass_conservation_under_refinement() {
        let nu = make_bump(0.5f64, 0.4, 0.2).unwrap();
        let p = twist_plugin(nu, 5).unwrap();
        let coarse =
            transfer_to_plugin(&DensitySampler::lebesgue(), &p, &SampleGrid::new(256, 33))
                .unwrap();
        let fine =
            transfer_to_plugin(&DensitySampler::lebesgue(), &p, &SampleGrid::new(512, 33))
                .unwrap();
        assert!(
            (coarse.normalization - fine.normalization).abs() <= 1e-6,
            "normalization drift {} vs {}",
            coarse.normalization,
            fine.normalization
        );
    }

    #[test]
    fn rotation_lyapunov_is_flat() {
        let p = rotation_plugin::<f64>(3);
        let opts = LyapunovOptions { n_iter: 200, seeds: 4, ..Default::default() };
        let rep =
            lyapunov_relation(&p, &DensitySampler::lebesgue(), &grid(12), &opts).unwrap();
        assert!((rep.tau_bar - 8.0).abs() < 1e-9);
        assert!(rep.lambda_g[0].abs() <= 1e-6);
        assert!(rep.lambda_capital_g[0].abs() <= 1e-6);
        assert!(rep.defect <= 1e-6, "defect {}", rep.defect);
    }

    #[test]
    fn density_table_roundtrip() {
        let g = grid(12);
        let rho = DensitySampler::from_fn(|t: f64, y: f64| 1.0 + 0.3 * y + 0.1 * t, &g).unwrap();
        let text = rho.to_table(&g);
        let back = DensitySampler::from_table(&text).unwrap();
        for q in grid(7).points() {
            let a = rho.value(q.theta.reduced(), q.y);
            let b = back.value(q.theta.reduced(), q.y);
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }
}
