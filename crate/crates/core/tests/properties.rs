mod common;

use std::sync::OnceLock;

use common::{chart, random_net};
use lander_core::abstraction::{transition_monotonicity_check, Abstraction};
use lander_core::checker::{check, mu_search, BoundedSpec};
use lander_core::network::LayeredReluNetwork;
use lander_core::perception::{assemble_perception_network, build_augmented_network, PerceptionBuildSpec};
use lander_core::verifier::{staged_bounds, symbolic_bounds, InputBox};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn desk() -> &'static (Abstraction, LayeredReluNetwork, usize) {
    static CELL: OnceLock<(Abstraction, LayeredReluNetwork, usize)> = OnceLock::new();
    CELL.get_or_init(|| {
        let model = assemble_perception_network(&PerceptionBuildSpec::new(8, 2)).unwrap();
        let ctrl = random_net(&mut ChaCha8Rng::seed_from_u64(2), 64, &[16, 16]);
        let aug = build_augmented_network(&model.network, &ctrl).unwrap();
        (common::desk_abstraction(2), aug, model.network.layers().len())
    })
}

/// A box of the desk grid: a corner and extents, biased toward the
/// awkward parts of the chart (the center column `ζ = 4` and `ζ1 ≈ ζ3`).
fn working_box() -> impl Strategy<Value = ([f64; 3], [f64; 3])> {
    (0.0..8.0f64, 0.0..8.0f64, 0.0..8.0f64, 0.0..1.0f64, 0.0..2.0f64, 0.0..1.0f64, 0u8..3)
        .prop_map(|(a, b, c, da, db, dc, kind)| {
            let (mut lo, mut hi) = ([a, b, c], [a + da, b + db, c + dc]);
            match kind {
                0 => {
                    lo[0] = 4.0 - da;
                    hi[0] = 4.0;
                }
                1 => {
                    lo[2] = lo[0];
                    hi[2] = (lo[0] + dc * 0.1).max(hi[0]);
                }
                _ => {}
            }
            (lo.map(|v| v.clamp(0.0, 8.0)), hi.map(|v| v.clamp(0.0, 8.0)))
        })
}

fn points_in(lo: [f64; 3], hi: [f64; 3], n: usize) -> Vec<[f64; 3]> {
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let t = |a: usize, s: usize| lo[a] + (hi[a] - lo[a]) * s as f64 / (n - 1) as f64;
                out.push([t(0, i), t(1, j), t(2, k)]);
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn chart_enclosure_contains_every_input((lo, hi) in working_box()) {
        let chart = chart(8);
        let enc = chart.enclose_input(lo, hi);
        for w in points_in(lo, hi, 7) {
            if let Ok(x) = chart.input_at(w) {
                let enc = enc.as_ref().expect("box holds a chart point");
                for (v, iv) in x.iter().zip(enc) {
                    let tol = 1e-9 * v.abs().max(1.0);
                    prop_assert!(iv.lo - tol <= *v && *v <= iv.hi + tol, "{v} not in {iv:?} at {w:?}");
                }
            }
        }
    }

    #[test]
    fn contraction_keeps_every_chart_point((lo, hi) in working_box()) {
        let chart = chart(8);
        let contracted = chart.contract(lo, hi);
        for w in points_in(lo, hi, 6) {
            if chart.state_at(w).is_ok() {
                let (clo, chi) = contracted.expect("box holds a chart point");
                for a in 0..3 {
                    prop_assert!(clo[a] - 1e-9 <= w[a] && w[a] <= chi[a] + 1e-9);
                }
            }
        }
    }

    #[test]
    fn pitch_range_contains_sampled_pitch((lo, hi) in working_box()) {
        let chart = chart(8);
        let range = chart.pitch_range(lo, hi);
        for w in points_in(lo, hi, 6) {
            if let Ok(s) = chart.state_at(w) {
                let r = range.expect("box holds a chart point");
                prop_assert!(r.lo - 1e-12 <= s.theta && s.theta <= r.hi + 1e-12);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn relaxed_bounds_of_the_composed_network_are_sound(cell in 0usize..512) {
        let (abs, aug, perception_layers) = desk();
        let (lo, hi) = abs.partition.cell_box(cell);
        let Ok(enc) = abs.chart.enclose_input(lo, hi) else { return Ok(()) };
        let b = InputBox::from_intervals(&enc);
        let boxes = [symbolic_bounds(aug, &b), staged_bounds(aug, &b, *perception_layers)];
        for w in points_in(lo, hi, 4) {
            if let Ok(x) = abs.chart.input_at(w) {
                let y = aug.forward(&x)[0];
                for o in &boxes {
                    prop_assert!(o.lower[0] - 1e-9 <= y && y <= o.upper[0] + 1e-9);
                }
            }
        }
    }

    #[test]
    fn transitions_grow_with_mu(a in 0.0..1.5f64, b in 0.0..1.5f64) {
        let (abs, _, _) = desk();
        let (small, large) = if a <= b { (a, b) } else { (b, a) };
        let check = transition_monotonicity_check(&abs.fsm(small, &[]), &abs.fsm(large, &[]));
        prop_assert!(check.holds, "witness {:?}", check.witness);
    }

    #[test]
    fn mu_search_pass_set_is_a_prefix(goal in proptest::collection::vec(0usize..512, 1..6), horizon in 1usize..12) {
        let (abs, _, _) = desk();
        let initial = abs.traversable_cells().into_iter().take(10).collect();
        let spec = BoundedSpec::invariant(horizon, initial, goal);
        let mus = [0.0, 0.1, 0.3, 0.6, 1.1, 2.0];
        let out = mu_search(&mus, &spec, true, |m| abs.fsm(m, &[])).unwrap();
        prop_assert!(out.pass_set_is_prefix && out.monotone);
        for s in &out.steps {
            prop_assert_eq!(s.result.holds(), check(&abs.fsm(s.mu, &[]), &spec).unwrap().holds());
        }
    }

    #[test]
    fn composition_is_function_composition(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_net(&mut rng, 3, &[5]);
        let g0 = random_net(&mut rng, 1, &[4, 3]);
        let both = LayeredReluNetwork::compose(&f, &g0).unwrap();
        let fused = LayeredReluNetwork::compose_fused(&f, &g0).unwrap();
        for x in [[0.1, -0.2, 0.3], [1.0, 1.0, -1.0], [-0.7, 0.0, 0.25]] {
            let y = g0.forward(&f.forward(&x))[0];
            prop_assert!((both.forward(&x)[0] - y).abs() <= 1e-12 * y.abs().max(1.0));
            prop_assert!((fused.forward(&x)[0] - y).abs() <= 1e-9 * y.abs().max(1.0));
        }
    }

    #[test]
    fn perception_matches_the_rasterizer(q in prop::sample::select(vec![2usize, 4, 8]), w in prop::array::uniform3(0.0..1.0f64)) {
        let chart = chart(q);
        let w = w.map(|t| t * q as f64);
        let Ok(s) = chart.state_at(w) else { return Ok(()) };
        let (Ok(input), Ok(image)) = (chart.geometry.network_input(&s), chart.geometry.render(&s)) else { return Ok(()) };
        let model = assemble_perception_network(&PerceptionBuildSpec::new(q, 2)).unwrap();
        let bits = model.binarize(&model.network.forward(&input));
        let margins = model.pixel_margins(&input);
        for (p, lit) in image.bits().iter().enumerate() {
            if margins[p].abs() > model.spec.degeneracy_margin {
                prop_assert_eq!(bits[p], *lit, "pixel {} at {:?}", p, w);
            }
        }
    }

    #[test]
    fn weights_round_trip_exactly(seed in 0u64..1000) {
        let net = random_net(&mut ChaCha8Rng::seed_from_u64(seed), 4, &[6, 3]);
        let back = LayeredReluNetwork::from_weights_str(&net.to_weights_string()).unwrap();
        prop_assert_eq!(back.to_weights_string(), net.to_weights_string());
    }
}
