use lds_robust::adversaries::random_energy_script;
use lds_robust::metrics::{gain_report, l2_gain_log, opt_bounds, oracle_controller, peak_prefix_gain_log};
use lds_robust::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn gain_ignores_time_labels(seed in any::<u64>(), d in 1usize..=3, shift in 0usize..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sys = SystemInstance::random(d, 2.0, 0.5, &mut rng).unwrap();
        let mut f = random_energy_script(d, 20, 1.0, seed);
        let traj = rollout(&sys, &mut ZeroController { p: d }, &mut NoMisspecification, &mut f, 40).unwrap();
        let mut relabeled = traj.clone();
        relabeled.steps.iter_mut().for_each(|s| s.t += shift);
        prop_assert_eq!(l2_gain_log(&traj), l2_gain_log(&relabeled));
        prop_assert_eq!(peak_prefix_gain_log(&traj), peak_prefix_gain_log(&relabeled));
        prop_assert!(peak_prefix_gain_log(&traj).unwrap() >= l2_gain_log(&traj).unwrap());
    }

    #[test]
    fn oracle_cost_is_sandwiched(seed in any::<u64>(), d in 1usize..=3, m in 1.0f64..4.0, h in 0.0f64..0.49) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sys = SystemInstance::random(d, m, 0.3f64.min(m * 0.9), &mut rng).unwrap();
        let mut f = random_energy_script(d, 30, 2.0, seed);
        let mut ctrl = oracle_controller(&sys).unwrap();
        let mut delta = DeltaBudget::new(h, DeltaPolicy::GreedyRandom(seed));
        let traj = rollout(&sys, &mut ctrl, &mut delta, &mut f, 60).unwrap();
        let (lo, hi) = opt_bounds(2.0, m, sys.l);
        let cost = lds_robust::metrics::cost_lqr(&traj);
        prop_assert!(lo <= cost && cost <= hi, "{} not in [{}, {}]", cost, lo, hi);
    }
}

#[test]
fn report_serializes_undefined_and_overflow() {
    let sys = SystemInstance::scalar(0.5, 1.0, 1.0, 1.0);
    let traj = rollout(&sys, &mut ZeroController { p: 1 }, &mut NoMisspecification, &mut NoDisturbance, 3).unwrap();
    let report = gain_report(&traj, None, 0, 0, Vec::new());
    let json = serde_json::to_value(&report).unwrap();
    assert_eq!(json["realized_gain"], "undefined");
    assert_eq!(serde_json::to_value(Gain::Defined(f64::INFINITY)).unwrap(), "overflow");
    assert_eq!(serde_json::to_value(Gain::Defined(2.5)).unwrap(), 2.5);
}
