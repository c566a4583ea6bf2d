mod common;

use common::{chart, chart_sample, containment_violations, delta_fc_violations, desk_abstraction};
use lander_core::dynamics::DynamicsParams;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn delta_fc_bound_holds_on_samples() {
    assert_eq!(delta_fc_violations(&chart(8), &DynamicsParams::default(), 3000, 21), 0);
}

#[test]
fn abstraction_contains_sampled_successors() {
    let abs = desk_abstraction(4);
    for mu in [0.1, 1.1] {
        assert_eq!(containment_violations(&abs, mu, 2000, 9), 0, "mu = {mu}");
    }
}

#[test]
fn round_trip_through_the_chart() {
    let chart = chart(8);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..2000 {
        let (_, s) = chart_sample(&chart, [0.0; 3], [8.0; 3], &mut rng);
        let back = chart.state_at(chart.working_coords(&s).unwrap()).unwrap();
        for (a, b) in [(s.theta, back.theta), (s.y, back.y), (s.z, back.z)] {
            assert!((a - b).abs() <= 1e-7 * a.abs().max(1.0), "{s:?} vs {back:?}");
        }
    }
}
