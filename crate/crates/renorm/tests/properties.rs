//! Property tests for the sampled invariants: circle lifts, inverse round
//! trips, profile supports and distance symmetry.

use proptest::prelude::*;

use renorm::circle::{circle_lift_displacement, reduce_mod1, Angle, CylPoint, SampleGrid};
use renorm::mapexpr::{cr_distance, MapExpr};
use renorm::profile::make_bump;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn lift_displacement_is_small_and_exact(a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let d = circle_lift_displacement(Angle::new(a), Angle::new(b));
        prop_assert!(d > -0.5 - 1e-15 && d <= 0.5 + 1e-15);
        let back = reduce_mod1(a + d);
        let err = (back - b).abs().min(1.0 - (back - b).abs());
        prop_assert!(err <= 1e-12, "a={a} b={b} d={d} back={back}");
    }

    #[test]
    fn bump_vanishes_outside_support(
        center in -1.0f64..2.0,
        radius in 0.01f64..0.7,
        amplitude in -2.0f64..2.0,
        x in -2.0f64..3.0,
    ) {
        let b = make_bump(center, radius, amplitude).unwrap();
        if (x - center).abs() >= radius {
            prop_assert_eq!(b.value(x), 0.0);
            prop_assert_eq!(b.deriv(x), 0.0);
        } else {
            prop_assert!(b.value(x).abs() <= amplitude.abs() + 1e-15);
        }
    }

    #[test]
    fn twist_fiber_round_trip(
        t_amp in -0.24f64..0.24,
        f_amp in -0.15f64..0.15,
        theta in 0.0f64..1.0,
        y in 0.0f64..1.0,
    ) {
        // fiber slope bound: |f_amp| * max|bump'| / radius < 1 keeps the
        // fiber map a diffeomorphism
        let m = MapExpr::compose(
            MapExpr::twist(make_bump(0.5, 0.4, t_amp).unwrap()),
            MapExpr::fiber_map(make_bump(0.5, 0.4, f_amp).unwrap()),
        );
        let p = CylPoint::new(theta, y);
        let q = m.evaluate(p).unwrap();
        let back = m.inverse_evaluate(q).unwrap();
        prop_assert!(back.dist(p) <= 1e-9, "{:?} -> {:?} -> {:?}", p, q, back);
    }

    #[test]
    fn cr_distance_symmetric_bitwise(
        s1 in -0.45f64..0.45,
        amp in -0.2f64..0.2,
        order in 0usize..=2,
    ) {
        let f = MapExpr::rotation(s1);
        let g = MapExpr::twist(make_bump(0.5, 0.4, amp).unwrap());
        let grid = SampleGrid::new(7, 7);
        let ab = cr_distance(&f, &g, order, &grid).unwrap();
        let ba = cr_distance(&g, &f, order, &grid).unwrap();
        prop_assert_eq!(ab, ba);
    }
}
