use mtvbo::mountain_car::{evaluate_controller_seeded, MAX_STEPS};
use proptest::prelude::*;

// Found by a coarse random search over a 0.05 grid of the unit box.
const GOAL_REACHING: [f64; 3] = [0.6, 0.55, 0.6];

#[test]
fn searched_controller_reaches_goal() {
    for seed in 0..3 {
        let r = evaluate_controller_seeded(&GOAL_REACHING, 30, seed);
        assert!(r > 50.0, "seed {seed}: {r}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn returns_are_bounded(p in prop::array::uniform3(0.0f64..=1.0), seed in any::<u64>()) {
        let r = evaluate_controller_seeded(&p, 2, seed);
        prop_assert!(r <= 100.0 && r >= -0.1 * MAX_STEPS as f64);
    }

    #[test]
    fn zero_gain_ignores_weights(b1 in 0.0f64..=1.0, b2 in 0.0f64..=1.0, seed in any::<u64>()) {
        prop_assert_eq!(evaluate_controller_seeded(&[0.5, b1, b2], 2, seed), 0.0);
    }
}
