use lds_robust::adversaries::{random_energy_script, EpochChaser};
use lds_robust::linalg::{sigma_min, spectral_norm};
use lds_robust::metrics::{adaptive_invariants, l2_gain_log};
use lds_robust::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const LN4: f64 = 2.0 * std::f64::consts::LN_2;

struct KnownRun {
    sys: SystemInstance,
    ctrl: L2GainController,
    traj: Trajectory,
    q: f64,
    h: f64,
}

fn known_budget(d: usize, m: f64, seed: u64, energy: f64, len: usize, anti_k: bool) -> KnownRun {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sys = SystemInstance::random(d, m, 1.0, &mut rng).unwrap();
    let h = 1.0 / (12.0 * (d as f64).sqrt());
    let mut f = random_energy_script(d, len, energy, seed ^ 7);
    let q = f.values.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt();
    let mut cfg = L2GainConfig::new(m, 1.0, d);
    cfg.initial_budget = Some(q);
    let mut ctrl = L2GainController::new(&cfg).unwrap();
    let policy = if anti_k { DeltaPolicy::GreedyAntiK } else { DeltaPolicy::GreedyAligned };
    let mut delta = DeltaBudget::new(h, policy);
    let traj = rollout(&sys, &mut ctrl, &mut delta, &mut f, 200).unwrap();
    KnownRun { sys, ctrl, traj, q, h }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 40, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn control_id_energy_stays_under_schedule(
        d in 1usize..=3, m in 1.5f64..4.0, seed in any::<u64>(), energy in 1e-2f64..1e2, len in 1usize..200, anti_k in any::<bool>(),
    ) {
        let r = known_budget(d, m, seed, energy, len, anti_k);
        let eps = r.ctrl.state.eps;
        // the first probe is played at t = 1
        for i in 0..=d {
            let fi = i as f64;
            let bound = 2.0 * fi * LN4 + 2.0 * fi * m.ln() + r.q.ln() - fi * eps.ln();
            let got = r.traj.ln_prefix_x(1 + i);
            prop_assert!(got <= bound + 1e-9, "i={} ln‖x‖={} bound={}", i, got, bound);
        }
    }

    #[test]
    fn estimates_meet_lemma_bounds(
        d in 1usize..=3, m in 1.5f64..4.0, seed in any::<u64>(), energy in 1e-2f64..1e2, len in 1usize..200, anti_k in any::<bool>(),
    ) {
        let r = known_budget(d, m, seed, energy, len, anti_k);
        let df = d as f64;
        let (eps, l) = (r.ctrl.state.eps, r.sys.l);
        prop_assert!(!r.ctrl.identifications.is_empty());
        for id in &r.ctrl.identifications {
            prop_assert!((&id.b_hat - &r.sys.b).norm() <= 3.0 * eps * df.sqrt() * (1.0 + 1e-9));
            prop_assert!(sigma_min(&id.b_hat) >= l / 2.0);
            let inv = id.b_hat.clone().try_inverse().unwrap();
            let dev = spectral_norm(&(&r.sys.b * inv - DMatrix::identity(d, d)));
            prop_assert!(dev <= (6.0 * eps * df.sqrt() / l) * (1.0 + 1e-9) && dev <= 0.5);
            let diff = &r.sys.a - &id.a_hat;
            let col = (0..d).map(|i| diff.column(i).norm()).fold(0.0, f64::max);
            prop_assert!(col <= (28.0 * eps * m * df.sqrt() / l + 3.0 * r.h) * (1.0 + 1e-9));
            prop_assert!(spectral_norm(&(&r.sys.a - &r.sys.b * &id.k)) <= 0.5);
        }
    }

    #[test]
    fn exploit_energy_obeys_stable_phase_bound(
        d in 1usize..=3, m in 1.5f64..4.0, seed in any::<u64>(), energy in 1e-2f64..1e2, len in 1usize..200, anti_k in any::<bool>(),
    ) {
        let r = known_budget(d, m, seed, energy, len, anti_k);
        let t_star = r.ctrl.identifications[0].t;
        let t_end = r.traj.horizon();
        let lhs = r.traj.prefix_x(t_end).powi(2);
        let rhs = (18.0 * r.traj.prefix_x(t_star).powi(2) + 72.0 * r.q * r.q) / 7.0;
        prop_assert!(lhs <= rhs * (1.0 + 1e-9), "{} > {}", lhs, rhs);
        prop_assert_eq!(r.ctrl.restarts(), 0);
    }

    #[test]
    fn library_invariants_hold_under_valid_budget(
        d in 1usize..=3, m in 1.5f64..4.0, seed in any::<u64>(), energy in 1e-2f64..1e2, len in 1usize..200,
    ) {
        let r = known_budget(d, m, seed, energy, len, false);
        for inv in adaptive_invariants(&r.traj, &r.ctrl, &r.sys, r.h) {
            prop_assert!(inv.pass, "{} margin {}", inv.name, inv.margin);
        }
    }

    #[test]
    fn unknown_budget_grows_geometrically_and_stays_certified(
        d in 1usize..=3, m in 1.2f64..4.0, l in 0.2f64..1.0, seed in any::<u64>(),
        initial in 1e-3f64..1e3, factor in 1.0f64..1e3, delay in 0usize..12, impulses in 1usize..6,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sys = SystemInstance::random(d, m, l, &mut rng).unwrap();
        let h = 1.0 / (12.0 * (d as f64).sqrt());
        let mut ctrl = L2GainController::new(&L2GainConfig::new(m, l, d)).unwrap();
        let mut delta = DeltaBudget::new(h, DeltaPolicy::GreedyRandom(seed));
        let mut f = EpochChaser::new(initial, factor, delay, impulses, seed);
        let traj = rollout(&sys, &mut ctrl, &mut delta, &mut f, 250).unwrap();
        let alpha_log = ctrl.state.alpha_log;
        let raises: Vec<_> = traj
            .events
            .iter()
            .filter(|e| e.event == "epoch_start" || (e.event == "restart" && e.reason.as_deref() == Some("Threshold")))
            .collect();
        for e in &raises {
            // the first raise is from q = 0
            prop_assert!(e.ln_q_old == f64::NEG_INFINITY || e.ln_q_new > alpha_log + e.ln_q_old);
        }
        if let (Some(first), Some(last)) = (raises.first(), raises.last()) {
            prop_assert!(raises.len() as f64 <= 1.0 + (last.ln_q_new - first.ln_q_new) / alpha_log + 1e-9);
        }
        for e in traj.events.iter().filter(|e| e.event != "phase") {
            prop_assert!(e.ln_q_new >= e.ln_q_old);
        }
        let cert = gain_certificate_log(m, l, d, Variant::StandardBasis).unwrap();
        let g = l2_gain_log(&traj).unwrap();
        prop_assert!(g <= cert, "ln gain {} > {}", g, cert);
        prop_assert!(robustness_check(&traj, h).pass());
    }
}

#[test]
fn certificate_matches_hand_formula() {
    // d = 1, M = 2, L = 1: ln α = 14 ln 4 + 8 ln 2, certificate = ln 40 + 2 ln α
    let alpha_log = 14.0 * LN4 + 8.0 * 2f64.ln();
    let expect = 40f64.ln() + 2.0 * alpha_log;
    let got = gain_certificate_log(2.0, 1.0, 1, Variant::StandardBasis).unwrap();
    assert!((got - expect).abs() < 1e-12);
    let p = default_parameters(2.0, 1.0, 1, Variant::StandardBasis).unwrap();
    assert_eq!(p.eps, 1.0 / 300.0);
}
