//! The plugin type: validation of the three plugin axioms, discrete
//! first-return times, the horizontal rescaling `H_sigma` and the output map
//! `H ∘ g^tau ∘ H^-1`.

use rayon::prelude::*;

use crate::circle::{reduce_mod1, CylPoint, SampleGrid};
use crate::error::{Error, Result};
use crate::mapexpr::{mat_mul, MapExpr};
use crate::real::Real;

/// Default residual tolerance for axiom (i).
pub const AXIOM_TOL: f64 = 1e-10;
/// Left-edge snap for the half-open membership test `theta in [0, sigma)`.
pub const EDGE_SNAP: f64 = 1e-12;

/// Membership of a lifted theta in `Delta_sigma = [0, sigma) x M`, with the
/// left edge snapped: orbits landing within 1e-12 of an integer count as
/// inside (rotation plugins land there exactly in exact arithmetic).
pub fn in_delta<R: Real>(th: R, sigma: R) -> bool {
    let f = reduce_mod1(th);
    f < sigma || f > R::one() - R::lit(EDGE_SNAP)
}

/// Forward orbit to the first return into `Delta_sigma`; returns the landing
/// point (on the lift) and the number of steps `tau >= 1`.
pub(crate) fn return_orbit_lift<R: Real>(
    map: &MapExpr<R>,
    sigma: R,
    cap: u64,
    start: (R, R),
) -> Result<((R, R), u64)> {
    let mut p = start;
    for n in 1..=cap {
        p = map.eval_lift(p.0, p.1)?;
        if in_delta(p.0, sigma) {
            return Ok((p, n));
        }
    }
    Err(Error::ReturnTimeOverflow {
        theta: reduce_mod1(start.0).to_f64_lossy(),
        y: start.1.to_f64_lossy(),
        cap,
    })
}

/// Output evaluation on the lift: `H ∘ g^tau ∘ H^-1` at `(th, y)` with
/// `H(theta, y) = (theta/sigma, y)` on `Delta_sigma`.
pub(crate) fn output_eval_lift<R: Real>(
    map: &MapExpr<R>,
    k: u32,
    cap: u64,
    th: R,
    y: R,
) -> Result<(R, R)> {
    let sigma = R::exp2i(-(k as i32));
    let frac = reduce_mod1(th);
    let base = th - frac;
    let w = (sigma * frac, y);
    let (end, _tau) = return_orbit_lift(map, sigma, cap, w)?;
    let mut end_frac = reduce_mod1(end.0);
    if end_frac > R::one() - R::lit(EDGE_SNAP) {
        end_frac = R::zero();
    }
    Ok((base + end_frac / sigma, end.1))
}

/// Inverse of the output map through the backward return orbit.
pub(crate) fn output_inverse_eval_lift<R: Real>(
    map: &MapExpr<R>,
    k: u32,
    cap: u64,
    th: R,
    y: R,
) -> Result<(R, R)> {
    let sigma = R::exp2i(-(k as i32));
    let frac = reduce_mod1(th);
    let base = th - frac;
    let mut p = (sigma * frac, y);
    for _ in 1..=cap {
        p = map.inverse_lift(p.0, p.1)?;
        if in_delta(p.0, sigma) {
            let mut end_frac = reduce_mod1(p.0);
            if end_frac > R::one() - R::lit(EDGE_SNAP) {
                end_frac = R::zero();
            }
            return Ok((base + end_frac / sigma, p.1));
        }
    }
    Err(Error::ReturnTimeOverflow { theta: frac.to_f64_lossy(), y: y.to_f64_lossy(), cap })
}

/// Output Jacobian: the chain of step Jacobians along the actual return
/// orbit, conjugated by `DH = diag(1/sigma, 1)`.
pub(crate) fn output_jacobian_lift<R: Real>(
    map: &MapExpr<R>,
    k: u32,
    cap: u64,
    th: R,
    y: R,
) -> Result<[[R; 2]; 2]> {
    let sigma = R::exp2i(-(k as i32));
    let frac = reduce_mod1(th);
    let mut p = (sigma * frac, y);
    let mut j = [[R::one(), R::zero()], [R::zero(), R::one()]];
    for _ in 1..=cap {
        let step = map.jacobian_lift(p.0, p.1)?;
        j = mat_mul(&step, &j);
        p = map.eval_lift(p.0, p.1)?;
        if in_delta(p.0, sigma) {
            return Ok([
                [j[0][0], j[0][1] / sigma],
                [j[1][0] * sigma, j[1][1]],
            ]);
        }
    }
    Err(Error::ReturnTimeOverflow { theta: frac.to_f64_lossy(), y: y.to_f64_lossy(), cap })
}

/// Certificate of the three plugin axioms on a sampling grid.
#[derive(Debug, Clone)]
pub struct ValidationReport<R: Real> {
    pub axiom_i_residual: R,
    pub max_return_time: u64,
    pub coverage_fraction: R,
    pub samples: (usize, usize),
    pub pass: bool,
    /// First offending point when a return-time scan exceeded the cap.
    pub overflow_at: Option<(R, R)>,
}

impl<R: Real> ValidationReport<R> {
    /// Flat key-value serialization.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("axiom_i_residual={:.16e}\n", self.axiom_i_residual));
        s.push_str(&format!("max_return_time={}\n", self.max_return_time));
        s.push_str(&format!("coverage_fraction={:.16e}\n", self.coverage_fraction));
        s.push_str(&format!("samples={}x{}\n", self.samples.0, self.samples.1));
        s.push_str(&format!("pass={}\n", self.pass));
        if let Some((t, y)) = self.overflow_at {
            s.push_str(&format!("overflow_at={:.16e},{:.16e}\n", t, y));
        }
        s
    }
}

/// A map expression together with its step exponent `k` (step `sigma =
/// 2^-k`), an iteration cap, and an optional validation certificate.
#[derive(Debug, Clone)]
pub struct Plugin<R: Real> {
    pub map: MapExpr<R>,
    pub k: u32,
    pub cap: u64,
    pub certificate: Option<ValidationReport<R>>,
}

impl<R: Real> Plugin<R> {
    /// Wrap a map as a step-`2^-k` plugin candidate. The default cap is
    /// `4 * 2^k`: the constructions achieve `2^k + O(1)`, so fourfold
    /// headroom makes overflow a diagnostic rather than a crash.
    pub fn new(map: MapExpr<R>, k: u32) -> Self {
        assert!(k >= 1, "plugin step exponent must satisfy k >= 1");
        Plugin { map, k, cap: 4u64 << k, certificate: None }
    }

    pub fn with_cap(mut self, cap: u64) -> Self {
        self.cap = cap;
        self
    }

    pub fn sigma(&self) -> R {
        R::exp2i(-(self.k as i32))
    }

    /// First return time of a point of `Delta_sigma`.
    pub fn return_time(&self, p: CylPoint<R>) -> Result<u64> {
        let th = p.theta.reduced();
        if !in_delta(th, self.sigma()) {
            return Err(Error::InvalidParameter(format!(
                "return_time needs a point of Delta_sigma, got theta = {th:?}"
            )));
        }
        let (_, tau) = return_orbit_lift(&self.map, self.sigma(), self.cap, (th, p.y))?;
        Ok(tau)
    }

    /// Rescaled first-return image of a point of `T x M`.
    pub fn output_point(&self, p: CylPoint<R>) -> Result<CylPoint<R>> {
        let (t, y) = output_eval_lift(&self.map, self.k, self.cap, p.theta.reduced(), p.y)?;
        Ok(CylPoint::new(reduce_mod1(t), y))
    }

    /// The output as a map expression (Jacobians by chained step Jacobians
    /// along the return orbit).
    pub fn output_map(&self) -> MapExpr<R> {
        MapExpr::plugin_output(self.map.clone(), self.k, self.cap)
    }

    /// Check the three plugin axioms on the grid.
    ///
    /// (i) sup over sampled `Delta_sigma` of `d(g(p), R_sigma(p))`;
    /// (ii) every sampled `Delta_sigma` point returns within the cap;
    /// (iii) every grid node of `T x M` reaches `Delta_sigma` under `g^-1`
    /// within the cap; `coverage_fraction` is the fraction succeeding.
    pub fn validate(&self, grid: &SampleGrid<R>) -> Result<ValidationReport<R>> {
        let sigma = self.sigma();
        let cap = self.cap;
        let map = &self.map;

        // Delta sample: theta_i = sigma * i / n_theta, y from the grid.
        let mut delta_pts = Vec::with_capacity(grid.n_theta * grid.n_y);
        for i in 0..grid.n_theta {
            let th = sigma * R::of_usize(i) / R::of_usize(grid.n_theta);
            for j in 0..grid.n_y {
                delta_pts.push((th, grid.y_at(j)));
            }
        }

        // axiom (i)
        let residuals: Result<Vec<R>> = delta_pts
            .par_iter()
            .map(|&(th, y)| {
                let (ot, oy) = map.eval_lift(th, y)?;
                let dt = ot - (th + sigma);
                let dy = oy - y;
                Ok((dt * dt + dy * dy).sqrt())
            })
            .collect();
        let axiom_i_residual = residuals?.into_iter().fold(R::zero(), |a, b| a.max(b));

        // axiom (ii)
        let times: Result<Vec<std::result::Result<u64, (R, R)>>> = delta_pts
            .par_iter()
            .map(|&(th, y)| match return_orbit_lift(map, sigma, cap, (th, y)) {
                Ok((_, tau)) => Ok(Ok(tau)),
                Err(Error::ReturnTimeOverflow { .. }) => Ok(Err((th, y))),
                Err(e) => Err(e),
            })
            .collect();
        let mut max_return_time = 0u64;
        let mut overflow_at = None;
        for t in times? {
            match t {
                Ok(tau) => max_return_time = max_return_time.max(tau),
                Err(pt) => {
                    if overflow_at.is_none() {
                        overflow_at = Some(pt);
                    }
                }
            }
        }

        // axiom (iii)
        let covered: Result<Vec<bool>> = grid
            .points()
            .par_iter()
            .map(|p| {
                let mut z = (p.theta.reduced(), p.y);
                if in_delta(z.0, sigma) {
                    return Ok(true);
                }
                for _ in 0..cap {
                    z = map.inverse_lift(z.0, z.1)?;
                    if in_delta(z.0, sigma) {
                        return Ok(true);
                    }
                }
                Ok(false)
            })
            .collect();
        let covered = covered?;
        let hits = covered.iter().filter(|c| **c).count();
        let coverage_fraction = R::of_usize(hits) / R::of_usize(covered.len());

        let pass = axiom_i_residual <= R::lit(AXIOM_TOL)
            && overflow_at.is_none()
            && coverage_fraction == R::one();
        Ok(ValidationReport {
            axiom_i_residual,
            max_return_time,
            coverage_fraction,
            samples: (grid.n_theta, grid.n_y),
            pass,
            overflow_at,
        })
    }

    /// Validate and remember the certificate.
    pub fn validated(mut self, grid: &SampleGrid<R>) -> Result<Self> {
        let report = self.validate(grid)?;
        self.certificate = Some(report);
        Ok(self)
    }

    /// All sampled return times over `Delta_sigma`.
    pub fn sampled_return_times(&self, grid: &SampleGrid<R>) -> Result<Vec<u64>> {
        let sigma = self.sigma();
        let mut pts = Vec::new();
        for i in 0..grid.n_theta {
            let th = sigma * R::of_usize(i) / R::of_usize(grid.n_theta);
            for j in 0..grid.n_y {
                pts.push((th, grid.y_at(j)));
            }
        }
        pts.par_iter()
            .map(|&(th, y)| Ok(return_orbit_lift(&self.map, sigma, self.cap, (th, y))?.1))
            .collect()
    }

    /// True iff all sampled return times coincide. When the output fixes
    /// `{0} x M`, the return time must be constant; this checks that
    /// property on a concrete instance.
    pub fn constant_return_check(&self, grid: &SampleGrid<R>) -> Result<bool> {
        let times = self.sampled_return_times(grid)?;
        Ok(times.windows(2).all(|w| w[0] == w[1]))
    }

    /// Sup displacement of the output over `{0} x M` samples.
    pub fn output_zero_section_displacement(&self, n_samples: usize) -> Result<R> {
        let mut worst = R::zero();
        for j in 0..=n_samples {
            let y = R::of_usize(j) / R::of_usize(n_samples);
            let q = self.output_point(CylPoint::new(R::zero(), y))?;
            let d = q.dist(CylPoint::new(R::zero(), y));
            worst = worst.max(d);
        }
        Ok(worst)
    }
}
