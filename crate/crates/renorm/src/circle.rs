//! Circle arithmetic, cylinder points and sampling grids.
//!
//! Angles live on `T = R/Z`. Internally every angle keeps its real lift and
//! reduction happens only when a caller asks for the representative in
//! `[0, 1)`; orbit iteration therefore never sees wraparound jitter near 0.

use crate::real::Real;

/// A point of the circle `T = R/Z`, stored as an unreduced lift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Angle<R: Real> {
    lift: R,
}

impl<R: Real> Angle<R> {
    pub fn new(value: R) -> Self {
        Angle { lift: value }
    }

    pub fn zero() -> Self {
        Angle { lift: R::zero() }
    }

    /// The stored lift, an arbitrary real representative.
    pub fn lift(self) -> R {
        self.lift
    }

    /// Representative reduced into `[0, 1)`.
    pub fn reduced(self) -> R {
        reduce_mod1(self.lift)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(self, d: R) -> Self {
        Angle { lift: self.lift + d }
    }

    /// Circle distance `d(a, b) = min(|a - b|, 1 - |a - b|) <= 1/2`.
    pub fn dist(self, other: Self) -> R {
        let d = (self.reduced() - other.reduced()).abs();
        d.min(R::one() - d)
    }
}

/// Reduce a lift into `[0, 1)`.
pub fn reduce_mod1<R: Real>(x: R) -> R {
    let r = x - x.floor();
    // x.floor() can round such that r == 1 for tiny negative x.
    if r >= R::one() {
        r - R::one()
    } else {
        r
    }
}

/// Signed displacement `d` in `(-1/2, 1/2]` with `(a + d) mod 1 = b`.
///
/// This is the canonical small lift used by the star product, isotopies and
/// every "distance to identity" computation.
pub fn circle_lift_displacement<R: Real>(a: Angle<R>, b: Angle<R>) -> R {
    let raw = reduce_mod1(b.reduced() - a.reduced()); // in [0, 1)
    if raw > R::lit(0.5) {
        raw - R::one()
    } else {
        raw
    }
}

/// Fiber manifold selector for `M`.
///
/// The constructions default to the interval `[0, 1]`. `Circle` wraps the
/// fiber mod 1; `Line` leaves it unbounded (used by the Lie-algebra lab where
/// fields like `y -> -y` are not compactly supported).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FiberKind {
    #[default]
    Interval,
    Circle,
    Line,
}

impl FiberKind {
    /// Distance between fiber coordinates.
    pub fn dist<R: Real>(self, a: R, b: R) -> R {
        match self {
            FiberKind::Circle => {
                let d = reduce_mod1(a - b);
                d.min(R::one() - d)
            }
            _ => (a - b).abs(),
        }
    }

    /// Whether `y` lies within the fiber bounds (with tolerance).
    pub fn contains<R: Real>(self, y: R, tol: R) -> bool {
        match self {
            FiberKind::Interval => y >= -tol && y <= R::one() + tol,
            _ => true,
        }
    }
}

/// A point of the cylinder `T x M`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CylPoint<R: Real> {
    pub theta: Angle<R>,
    pub y: R,
}

impl<R: Real> CylPoint<R> {
    pub fn new(theta: R, y: R) -> Self {
        CylPoint { theta: Angle::new(theta), y }
    }

    /// Product distance on `T x M` (fiber treated as `Interval` by default).
    pub fn dist(self, other: Self) -> R {
        self.dist_in(other, FiberKind::Interval)
    }

    pub fn dist_in(self, other: Self, fiber: FiberKind) -> R {
        let dt = self.theta.dist(other.theta);
        let dy = fiber.dist(self.y, other.y);
        (dt * dt + dy * dy).sqrt()
    }
}

/// Uniform product grid on `T x M` with deterministic row-major ordering
/// (theta outer, y inner).
#[derive(Debug, Clone, Copy)]
pub struct SampleGrid<R: Real> {
    pub n_theta: usize,
    pub n_y: usize,
    pub fiber: FiberKind,
    pub y_lo: R,
    pub y_hi: R,
}

impl<R: Real> SampleGrid<R> {
    pub fn new(n_theta: usize, n_y: usize) -> Self {
        assert!(n_theta > 0 && n_y > 0, "grid sides must be positive");
        SampleGrid {
            n_theta,
            n_y,
            fiber: FiberKind::Interval,
            y_lo: R::zero(),
            y_hi: R::one(),
        }
    }

    pub fn with_fiber(mut self, fiber: FiberKind) -> Self {
        self.fiber = fiber;
        self
    }

    pub fn with_y_range(mut self, lo: R, hi: R) -> Self {
        assert!(lo < hi);
        self.y_lo = lo;
        self.y_hi = hi;
        self
    }

    pub fn len(&self) -> usize {
        self.n_theta * self.n_y
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn theta_at(&self, i: usize) -> R {
        R::of_usize(i) / R::of_usize(self.n_theta)
    }

    pub fn y_at(&self, j: usize) -> R {
        let span = self.y_hi - self.y_lo;
        match self.fiber {
            // Circle fiber: j/n, endpoint excluded.
            FiberKind::Circle => self.y_lo + span * R::of_usize(j) / R::of_usize(self.n_y),
            // Interval or line: endpoints included.
            _ => {
                if self.n_y == 1 {
                    self.y_lo + span * R::lit(0.5)
                } else {
                    self.y_lo + span * R::of_usize(j) / R::of_usize(self.n_y - 1)
                }
            }
        }
    }

    /// All grid nodes in row-major order (theta outer, y inner).
    pub fn points(&self) -> Vec<CylPoint<R>> {
        let mut out = Vec::with_capacity(self.len());
        for i in 0..self.n_theta {
            let t = self.theta_at(i);
            for j in 0..self.n_y {
                out.push(CylPoint::new(t, self.y_at(j)));
            }
        }
        out
    }
}
