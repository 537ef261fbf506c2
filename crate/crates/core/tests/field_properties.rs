use std::f64::consts::TAU;

use proptest::prelude::*;
use rotor_core::{
    flow, parse_expression, reverse_field, translate_field, FlowOutcome, IntegratorOptions, PeriodicFunction,
    PhasePoint, PlanarField,
};

fn catalogue() -> Vec<PlanarField> {
    let damped = PlanarField::forced_general(
        "damped",
        TAU,
        parse_expression("x^3 + 0.2*sin(t)*x").unwrap(),
        Some(parse_expression("0.1*y - 0.3*cos(t)").unwrap()),
    )
    .unwrap();
    vec![
        PlanarField::linear(1.0),
        PlanarField::linear(1.5),
        PlanarField::duffing(0.05),
        PlanarField::superlinear_poly(1.0, 0.1),
        damped,
    ]
}

fn point(o: FlowOutcome) -> PhasePoint {
    o.point().expect("bounded run")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reversal_is_an_involution(idx in 0usize..5, t in -10.0f64..10.0, x in -5.0f64..5.0, y in -5.0f64..5.0) {
        let field = &catalogue()[idx];
        let twice = reverse_field(&reverse_field(field));
        let z = PhasePoint::new(x, y);
        let (a, b) = (field.eval_rhs(t, z).unwrap(), twice.eval_rhs(t, z).unwrap());
        // `T - (T - t)` differs from `t` by rounding only.
        prop_assert_eq!(a.0, b.0);
        prop_assert!((a.1 - b.1).abs() <= 1e-12 * (1.0 + a.1.abs()), "{:?} vs {:?}", a, b);
    }

    #[test]
    fn builtins_are_periodic(idx in 0usize..4, t in -10.0f64..10.0, x in -5.0f64..5.0, y in -5.0f64..5.0) {
        let field = &catalogue()[idx];
        let z = PhasePoint::new(x, y);
        // `t + T` is rounded, so the periodic argument is compared through the rounded sum.
        let shifted = t + field.period();
        let a = field.eval_rhs(shifted, z).unwrap();
        let b = field.eval_rhs(shifted - field.period(), z).unwrap();
        let c = field.eval_rhs(t, z).unwrap();
        prop_assert!((a.0 - b.0).abs() <= 1e-12 * (1.0 + a.0.abs()));
        prop_assert!((a.1 - b.1).abs() <= 1e-12 * (1.0 + a.1.abs()));
        prop_assert!((a.1 - c.1).abs() <= 1e-12 * (1.0 + a.1.abs()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn reversed_trajectory_solves_reversed_system(
        idx in 0usize..5,
        t0 in 0.0f64..3.0,
        x in -1.5f64..1.5,
        y in -1.5f64..1.5,
        frac in 0.1f64..0.9,
    ) {
        let field = &catalogue()[idx];
        let reversed = reverse_field(field);
        let period = field.period();
        let opts = IntegratorOptions::default();
        let z0 = PhasePoint::new(x, y);
        let s = t0 + frac * (period - t0);
        let z_end = point(flow(field, t0, period, z0, &opts).unwrap());
        let z_s = point(flow(field, t0, s, z0, &opts).unwrap());
        // x̂(τ) = -x(T - τ), ŷ(τ) = y(T - τ).
        let start = PhasePoint::new(-z_end.x, z_end.y);
        let hat = point(flow(&reversed, 0.0, period - s, start, &opts).unwrap());
        prop_assert!(hat.distance(&PhasePoint::new(-z_s.x, z_s.y)) < 1e-6, "{:?} vs {:?}", hat, z_s);
    }

    #[test]
    fn translation_conjugates_flows(
        idx in 0usize..5,
        c in -0.5f64..0.5,
        s in -0.5f64..0.5,
        x in -1.5f64..1.5,
        y in -1.5f64..1.5,
        t1 in 0.5f64..6.0,
    ) {
        let field = &catalogue()[idx];
        let a = PeriodicFunction::harmonic(field.period(), c, s).unwrap();
        let moved = translate_field(field, &a).unwrap();
        let opts = IntegratorOptions::default();
        let z0 = PhasePoint::new(x, y);
        let original = point(flow(field, 0.0, t1, z0, &opts).unwrap());
        let u0 = PhasePoint::new(x - a.value(0.0), y - a.derivative(0.0));
        let u1 = point(flow(&moved, 0.0, t1, u0, &opts).unwrap());
        let back = PhasePoint::new(u1.x + a.value(t1), u1.y + a.derivative(t1));
        prop_assert!(back.distance(&original) < 1e-7 * (1.0 + original.norm()), "{:?} vs {:?}", back, original);
    }
}
