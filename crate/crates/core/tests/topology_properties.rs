use std::f64::consts::TAU;

use proptest::prelude::*;
use rotor_core::topology::{multiplicity_search, AnnulusHint};
use rotor_core::{
    build_capture_set, degree_fixed_point, Error, find_periodic, find_periodic_in, parse_expression, poincare_map,
    winding_number, IntegratorOptions, PhasePoint, PlanarField, PolyCurve, Region,
};

/// Vectors `M (z - c)` sampled densely along the polygon.
fn linear_field_vectors(poly: &[PhasePoint], m: [[f64; 2]; 2], c: PhasePoint) -> Vec<PhasePoint> {
    let mut out = Vec::new();
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        for k in 0..200 {
            let p = a + (b - a) * (k as f64 / 200.0);
            let d = p - c;
            out.push(PhasePoint::new(m[0][0] * d.x + m[0][1] * d.y, m[1][0] * d.x + m[1][1] * d.y));
        }
    }
    out
}

fn rect(x0: f64, x1: f64, y0: f64, y1: f64) -> Vec<PhasePoint> {
    vec![
        PhasePoint::new(x0, y0),
        PhasePoint::new(x1, y0),
        PhasePoint::new(x1, y1),
        PhasePoint::new(x0, y1),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn winding_is_additive_across_a_chord(
        chord in -0.9f64..0.9,
        cx in -0.95f64..0.95,
        cy in -0.95f64..0.95,
        m in proptest::array::uniform4(-2.0f64..2.0),
    ) {
        let m = [[m[0], m[1]], [m[2], m[3]]];
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        prop_assume!(det.abs() > 0.1);
        prop_assume!((cx - chord).abs() > 0.02);
        let c = PhasePoint::new(cx, cy);
        let w = |poly: &[PhasePoint]| winding_number(&linear_field_vectors(poly, m, c)).unwrap();
        let whole = w(&rect(-1.0, 1.0, -1.0, 1.0));
        let left = w(&rect(-1.0, chord, -1.0, 1.0));
        let right = w(&rect(chord, 1.0, -1.0, 1.0));
        prop_assert_eq!(whole, left + right);
        prop_assert_eq!(whole, det.signum() as i64);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn integer_free_boundary_has_degree_one(omega in 0.3f64..3.7, radius in 0.2f64..2.0, eps in 0.0f64..0.1) {
        let field = if eps == 0.0 { PlanarField::linear(omega) } else {
            let f = parse_expression(&format!("{}*x + x^3", omega * omega)).unwrap();
            let p = parse_expression(&format!("-{eps}*cos(t)")).unwrap();
            PlanarField::forced_general("forced", TAU, f, Some(p)).unwrap()
        };
        let curve = PolyCurve::circle(PhasePoint::ORIGIN, radius, 48).unwrap();
        // A fixed point on the circle leaves the degree undefined.
        let report = match degree_fixed_point(&field, &curve, &IntegratorOptions::default()) {
            Ok(r) => r,
            Err(Error::ZeroVector { .. }) => return Ok(()),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        if report.boundary_int_free {
            prop_assert_eq!(report.degree, 1);
        }
    }
}

#[test]
fn capture_set_and_orbit_invariants_on_duffing() {
    let field = PlanarField::duffing(0.05);
    let opts = IntegratorOptions::default();
    let cs = build_capture_set(&field, 1, Region::square(3.0), 40, 40, &opts).unwrap();
    for rho in &cs.vertex_rho {
        assert!((rho - (cs.n_bar as f64 + 0.5)).abs() <= cs.level_tol, "vertex rho {rho}");
    }
    let orbit = find_periodic_in(&field, &cs.inner_component, &opts).unwrap();
    let tight = opts.tightened(10.0);
    let end = poincare_map(&field, orbit.z_star, &tight).unwrap().point().unwrap();
    let residual = end.distance(&orbit.z_star);
    assert!(residual < 10.0 * orbit.residual, "{residual:e} vs {:e}", orbit.residual);
}

#[test]
fn multiplicity_orbits_have_separated_rotations() {
    let f = parse_expression("x^3 + 0.05*cos(t)*x").unwrap();
    let field = PlanarField::forced_general("parametric", TAU, f, None).unwrap();
    let opts = IntegratorOptions::default();
    let base = find_periodic(&field, PhasePoint::ORIGIN, &opts).unwrap();
    let report = multiplicity_search(&field, &base, &[1, 2], &AnnulusHint::default(), &opts).unwrap();
    for a in &report.found {
        for b in &report.found {
            if a.k != b.k {
                assert!((a.orbit.rho - b.orbit.rho).abs() > 0.5);
            }
        }
        let tight = opts.tightened(10.0);
        let end = poincare_map(&field, a.orbit.z_star, &tight).unwrap().point().unwrap();
        assert!(end.distance(&a.orbit.z_star) < 10.0 * a.orbit.residual);
    }
}
