use std::f64::consts::TAU;

use proptest::prelude::*;
use rotor_core::rotation::{check_monotonicity, default_eps_origin, rotation_trace};
use rotor_core::{
    parse_expression, reverse_field, rotation, IntegratorOptions, PhasePoint, PlanarField, RotationOutcome,
};

fn catalogue() -> Vec<PlanarField> {
    let parametric =
        PlanarField::forced_general("parametric", TAU, parse_expression("x^3 + 0.05*cos(t)*x").unwrap(), None).unwrap();
    vec![
        PlanarField::linear(1.0),
        PlanarField::linear(1.5),
        PlanarField::duffing(0.05),
        PlanarField::superlinear_poly(1.0, 0.1),
        parametric,
    ]
}

fn finite(o: RotationOutcome) -> Option<(f64, PhasePoint)> {
    match o {
        RotationOutcome::Finite { rho, terminal } => Some((rho, terminal)),
        _ => None,
    }
}

fn rho(field: &PlanarField, t0: f64, t1: f64, z: PhasePoint) -> Option<(f64, PhasePoint)> {
    finite(rotation(field, t0, t1, z, &IntegratorOptions::default(), default_eps_origin(z)).unwrap())
}

fn nonzero_point() -> impl Strategy<Value = PhasePoint> {
    (0.2f64..2.5, 0.0f64..TAU).prop_map(|(r, phi)| PhasePoint::new(r * phi.cos(), r * phi.sin()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn lift_matches_cartesian_state(idx in 0usize..5, z in nonzero_point(), t0 in 0.0f64..2.0) {
        let field = &catalogue()[idx];
        let trace = rotation_trace(field, t0, TAU, z, &IntegratorOptions::default(), default_eps_origin(z)).unwrap();
        for (_, s) in trace.path.resample(200) {
            let r = (s[0] * s[0] + s[1] * s[1]).sqrt();
            let p = PhasePoint::from_clockwise_polar(trace.theta0 + s[2], r);
            prop_assert!(p.distance(&PhasePoint::new(s[0], s[1])) < 1e-6 * (1.0 + r));
        }
    }

    #[test]
    fn rotation_is_additive(idx in 0usize..5, z in nonzero_point(), t1 in 0.3f64..3.0, t2 in 3.1f64..6.2) {
        let field = &catalogue()[idx];
        let (Some((whole, _)), Some((first, mid))) = (rho(field, 0.0, t2, z), rho(field, 0.0, t1, z)) else {
            return Ok(());
        };
        let Some((second, _)) = rho(field, t1, t2, mid) else {
            return Ok(());
        };
        prop_assert!((whole - first - second).abs() < 1e-8, "{} vs {}", whole, first + second);
    }

    #[test]
    fn reversal_identity_holds(idx in 0usize..5, z in nonzero_point(), t in 0.2f64..6.2) {
        let field = &catalogue()[idx];
        let Some((forward, zt)) = rho(field, 0.0, t, z) else {
            return Ok(());
        };
        let start = PhasePoint::new(-zt.x, zt.y);
        let (backward, _) = rho(&reverse_field(field), TAU - t, TAU, start).expect("finite reversed run");
        prop_assert!((forward - backward).abs() < 1e-6, "{} vs {}", forward, backward);
    }

    #[test]
    fn rotation_is_continuous(z in nonzero_point(), phi in 0.0f64..TAU) {
        let field = PlanarField::duffing(0.05);
        let dz = PhasePoint::new(1e-6 * phi.cos(), 1e-6 * phi.sin());
        let (Some((a, _)), Some((b, _))) = (rho(&field, 0.0, TAU, z), rho(&field, 0.0, TAU, z + dz)) else {
            return Ok(());
        };
        prop_assert!((a - b).abs() < 1e-3);
    }

    #[test]
    fn rotation_is_clockwise_on_the_y_axis(idx in 0usize..5, z in nonzero_point()) {
        let field = &catalogue()[idx];
        let trace = rotation_trace(field, 0.0, TAU, z, &IntegratorOptions::default(), default_eps_origin(z)).unwrap();
        let samples = trace.path.resample(400);
        for w in samples.windows(2) {
            let (a, b) = (w[0].1, w[1].1);
            // Both ends near the axis on the same side of the origin.
            if a[0] * b[0] <= 0.0 && a[1] * b[1] > 0.0 && a[1].abs() > 1e-3 {
                prop_assert!(b[2] >= a[2] - 1e-9, "angle decreased across the y axis");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn half_turn_monotonicity(idx in 2usize..5, seed_points in proptest::collection::vec((0.0f64..TAU, -3.0f64..3.0, -3.0f64..3.0), 8)) {
        let field = &catalogue()[idx];
        let samples: Vec<(f64, PhasePoint)> = seed_points.iter().map(|&(t, x, y)| (t, PhasePoint::new(x, y))).collect();
        let report = check_monotonicity(field, &samples, 16, &IntegratorOptions::default(), 1e-6).unwrap();
        prop_assert!(report.violations.is_empty(), "{:?}", report.violations);
    }
}
