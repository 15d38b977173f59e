//! Randomized invariant checks for the MILP encoding helpers, the hyperbox
//! gauge, the redistribution law, and the uniqueness bound.

use gridflex::grid::{parse_grid_str, redistribution_offsets, uniqueness_bound_raw, Grid};
use gridflex::milp::{
    encode_abs, encode_clamp, encode_max_eq, encode_min2, LinExpr, Model, Sense, SolveOptions, Status,
};
use gridflex::region::HyperboxRegion;
use proptest::prelude::*;

fn mid(lo: f64, v: f64, hi: f64) -> f64 {
    v.clamp(lo, hi)
}

/// Minimize `objective_of(v)` for an encoded variable `v` under a fixed
/// input value and return the optimum of v.
fn solve_min(model: Model, v: gridflex::milp::Var) -> f64 {
    let mut model = model;
    model.set_objective(LinExpr::var(v));
    let out = model.solve(&SolveOptions::default());
    assert_eq!(out.status, Status::Optimal, "expected optimal solve: {:?}", out.message);
    out.value(v)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn abs_encoding_matches_abs(input in -40.0_f64..40.0) {
        let mut m = Model::new(Sense::Minimize);
        let x = m.add_cont("x", -50.0, 50.0);
        m.fix(x, input);
        let v = encode_abs(&mut m, &LinExpr::var(x), 50.0, "a");
        let got = solve_min(m, v);
        prop_assert!((got - input.abs()).abs() < 1e-6, "abs({input}) = {got}");
    }

    #[test]
    fn min2_encoding_matches_min(a in -30.0_f64..30.0, b in -30.0_f64..30.0) {
        let mut m = Model::new(Sense::Minimize);
        let xa = m.add_cont("a", -40.0, 40.0);
        let xb = m.add_cont("b", -40.0, 40.0);
        m.fix(xa, a);
        m.fix(xb, b);
        let v = encode_min2(&mut m, &LinExpr::var(xa), &LinExpr::var(xb), "m");
        // min2 is an exact equality encoding, so any objective works.
        let mut m2 = m;
        m2.set_objective(LinExpr::var(v).scaled(-1.0));
        let out = m2.solve(&SolveOptions::default());
        prop_assert_eq!(out.status, Status::Optimal);
        let got = out.value(v);
        prop_assert!((got - a.min(b)).abs() < 1e-6, "min({a},{b}) = {got}");
    }

    #[test]
    fn clamp_encoding_matches_mid(input in -50.0_f64..50.0, lo in -20.0_f64..0.0, width in 0.1_f64..25.0) {
        let hi = lo + width;
        let mut m = Model::new(Sense::Minimize);
        let x = m.add_cont("x", -60.0, 60.0);
        m.fix(x, input);
        let v = encode_clamp(&mut m, &LinExpr::var(x), lo, hi, "c");
        let mut m2 = m;
        m2.set_objective(LinExpr::var(v).scaled(-1.0));
        let out = m2.solve(&SolveOptions::default());
        prop_assert_eq!(out.status, Status::Optimal);
        let got = out.value(v);
        prop_assert!((got - mid(lo, input, hi)).abs() < 1e-6,
            "mid({lo},{input},{hi}) = {got}");
    }

    #[test]
    fn max_eq_encoding_matches_max(vals in proptest::collection::vec(-25.0_f64..25.0, 1..5)) {
        let mut m = Model::new(Sense::Minimize);
        let exprs: Vec<LinExpr> = vals
            .iter()
            .enumerate()
            .map(|(i, &val)| {
                let x = m.add_cont(format!("x{i}"), -30.0, 30.0);
                m.fix(x, val);
                LinExpr::var(x)
            })
            .collect();
        let v = encode_max_eq(&mut m, &exprs, "mx");
        let got = solve_min(m, v);
        let want = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!((got - want).abs() < 1e-6, "max{vals:?} = {got}");
    }

    #[test]
    fn hyperbox_gauge_is_positively_homogeneous(
        y in proptest::collection::vec(-5.0_f64..5.0, 3),
        scale in 0.01_f64..10.0,
    ) {
        let region = HyperboxRegion {
            y0: vec![0.0; 3],
            delta_minus: vec![1.0, 2.0, 0.5],
            delta_plus: vec![1.0, 1.0, 2.0],
            host_radius: 100.0,
        };
        let h1 = region.h(&y);
        let scaled: Vec<f64> = y.iter().map(|v| v * scale).collect();
        let h2 = region.h(&scaled);
        prop_assert!((h2 - scale * h1).abs() < 1e-9 * (1.0 + h1.abs()),
            "h(s*y) = {h2}, s*h(y) = {}", scale * h1);
    }

    #[test]
    fn hyperbox_gauge_certifies_membership(
        y in proptest::collection::vec(-3.0_f64..3.0, 2),
        delta in 0.0_f64..4.0,
    ) {
        let region = HyperboxRegion {
            y0: vec![0.0; 2],
            delta_minus: vec![1.0, 2.0],
            delta_plus: vec![1.0, 1.0],
            host_radius: 100.0,
        };
        let h = region.h(&y);
        let inside = y[0] >= -delta - 1e-12
            && y[0] <= delta + 1e-12
            && y[1] >= -2.0 * delta - 1e-12
            && y[1] <= delta + 1e-12;
        prop_assert_eq!(h <= delta + 1e-12, inside, "h = {}, delta = {}", h, delta);
    }
}

fn two_gen_grid(b1: (f64, f64), b2: (f64, f64)) -> Grid {
    let text = format!(
        r#"{{
        "units": {{"power": "MW", "angle": "rad"}},
        "reference_node": "A",
        "nodes": [
            {{"id": "A", "injection0": 0.0}},
            {{"id": "B", "injection0": 0.0, "dy_minus": 1.0, "dy_plus": 1.0}}
        ],
        "generators": [
            {{"id": "g1", "node": "A", "x_min": {}, "x_max": {}, "contribution": 0.5}},
            {{"id": "g2", "node": "B", "x_min": {}, "x_max": {}, "contribution": 0.5}}
        ],
        "edges": [{{"id": "L", "from": "A", "to": "B", "susceptance": 1.0, "limit": 100.0}}],
        "merge_pairs": []
    }}"#,
        b1.0, b1.1, b2.0, b2.1
    );
    parse_grid_str(&text, false).expect("valid grid")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn redistribution_balances_and_respects_bounds(
        x1 in -5.0_f64..5.0,
        x2 in -5.0_f64..5.0,
        need in -25.0_f64..25.0,
    ) {
        let grid = two_gen_grid((-8.0, 6.0), (-6.0, 9.0));
        let x = vec![x1.clamp(-8.0, 6.0), x2.clamp(-6.0, 9.0)];
        match redistribution_offsets(&grid, &x, need) {
            Some(dz) => {
                let total: f64 = dz.iter().sum();
                prop_assert!((total - need).abs() < 1e-7, "sum {total} != {need}");
                for (g, d) in dz.iter().enumerate() {
                    let out = x[g] + d;
                    let gen = &grid.generators[g];
                    prop_assert!(out >= gen.x_min - 1e-9 && out <= gen.x_max + 1e-9);
                }
            }
            None => {
                // Must genuinely exceed the aggregate headroom.
                let head_up: f64 = grid.generators.iter().zip(&x).map(|(g, xi)| g.x_max - xi).sum();
                let head_dn: f64 = grid.generators.iter().zip(&x).map(|(g, xi)| g.x_min - xi).sum();
                prop_assert!(need > head_up + 1e-9 || need < head_dn - 1e-9);
            }
        }
    }

    #[test]
    fn uniqueness_bound_is_monotone_in_generator_headroom(
        grow in 0.0_f64..5.0,
        y0 in -2.0_f64..2.0,
    ) {
        let base = two_gen_grid((-4.0, 4.0), (-4.0, 4.0));
        let wide = two_gen_grid((-4.0 - grow, 4.0 + grow), (-4.0, 4.0));
        let y0v = vec![0.0, y0];
        let dm = vec![0.0, 1.0];
        let dp = vec![0.0, 1.0];
        let narrow_bound = uniqueness_bound_raw(&base, &y0v, &dm, &dp, 1e6);
        let wide_bound = uniqueness_bound_raw(&wide, &y0v, &dm, &dp, 1e6);
        prop_assert!(wide_bound >= narrow_bound - 1e-9,
            "widening bounds shrank the uniqueness bound: {narrow_bound} -> {wide_bound}");
    }
}
