use cpsrl::agents::GammaSchedule;
use cpsrl::envs::make_random_dirichlet;
use cpsrl::experiment::output::{read_curve, write_curve};
use cpsrl::experiment::CurvePoint;
use cpsrl::mdp::{Policy, TabularMdp};
use cpsrl::planning::{evaluate_discounted, q_values, solve_discounted};
use cpsrl::posterior::{sample_dirichlet, PosteriorState};
use ndarray::{Array1, Array3};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mdp_strategy() -> impl Strategy<Value = TabularMdp> {
    (1usize..=5, 1usize..=3, any::<u64>())
        .prop_map(|(s, a, seed)| make_random_dirichlet(s, a, 1.0, seed).unwrap())
}

fn permuted(mdp: &TabularMdp, perm: &[usize]) -> TabularMdp {
    let (n, m) = (mdp.n_states(), mdp.n_actions());
    let p = Array3::from_shape_fn((m, n, n), |(a, s, t)| {
        mdp.transitions()[[a, perm[s], perm[t]]]
    });
    let r = ndarray::Array2::from_shape_fn((n, m), |(s, a)| mdp.rewards()[[perm[s], a]]);
    TabularMdp::new(p, r, 0).unwrap()
}

/// Sparse random MDP: each row puts its mass on one or two successors, so
/// some draws are not communicating.
fn sparse_mdp(n: usize, m: usize, seed: u64) -> TabularMdp {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Array3::zeros((m, n, n));
    for a in 0..m {
        for s in 0..n {
            let t1 = rng.random_range(0..n);
            let t2 = rng.random_range(0..n);
            p[[a, s, t1]] += 0.5;
            p[[a, s, t2]] += 0.5;
        }
    }
    TabularMdp::new(p, ndarray::Array2::zeros((n, m)), 0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_rows_are_distributions(mdp in mdp_strategy()) {
        for a in 0..mdp.n_actions() {
            for s in 0..mdp.n_states() {
                let row = mdp.row(s, a);
                prop_assert!(row.iter().all(|&p| p >= 0.0));
                prop_assert!((row.sum() - 1.0).abs() <= 1e-12);
            }
        }
        prop_assert!(mdp.check_communicating());
    }

    #[test]
    fn communicating_is_permutation_invariant(n in 2usize..7, m in 1usize..3, seed: u64, shift in 0usize..7) {
        let mdp = sparse_mdp(n, m, seed);
        let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
        prop_assert_eq!(mdp.check_communicating(), permuted(&mdp, &perm).check_communicating());
    }

    #[test]
    fn posterior_updates_commute(
        transitions in prop::collection::vec((0usize..3, 0usize..2, 0usize..3), 0..40),
        seed: u64,
    ) {
        let mut forward = PosteriorState::new(3, 2, 1.0).unwrap();
        let mut backward = forward.clone();
        for &(s, a, t) in &transitions {
            forward.update(s, a, t).unwrap();
        }
        let mut shuffled = transitions.clone();
        shuffled.rotate_left(seed as usize % transitions.len().max(1));
        shuffled.reverse();
        for &(s, a, t) in &shuffled {
            backward.update(s, a, t).unwrap();
        }
        prop_assert_eq!(&forward, &backward);
        prop_assert_eq!(forward.total_steps(), transitions.len() as u64);
        prop_assert_eq!(forward.visit_counts().sum(), transitions.len() as u64);
    }

    #[test]
    fn mdp_json_round_trip(mdp in mdp_strategy()) {
        let text = mdp.to_json().unwrap();
        prop_assert_eq!(TabularMdp::from_json(&text).unwrap(), mdp);
    }

    #[test]
    fn schedules_stay_in_unit_interval(
        t in 1u64..1_000_000_000,
        horizon in 1u64..10_000_000,
        s in 1usize..50,
        a in 1usize..10,
        fixed in 0.0f64..1.0,
    ) {
        for schedule in [
            GammaSchedule::Fixed(fixed),
            GammaSchedule::HorizonTuned { horizon, n_states: s, n_actions: a },
            GammaSchedule::DoublingTrick { n_states: s, n_actions: a },
        ] {
            let gamma = schedule.gamma_at(t);
            prop_assert!((0.0..1.0).contains(&gamma), "{schedule:?} at {t}: {gamma}");
        }
    }

    #[test]
    fn doubling_gamma_never_decreases(s in 1usize..20, a in 1usize..5, t in 1u64..1_000_000) {
        let schedule = GammaSchedule::DoublingTrick { n_states: s, n_actions: a };
        prop_assert!(schedule.gamma_at(t + 1) >= schedule.gamma_at(t));
    }

    #[test]
    fn dirichlet_samples_are_distributions(alpha in prop::collection::vec(0.05f64..20.0, 1..8), seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = sample_dirichlet(&Array1::from(alpha), &mut rng);
        prop_assert!(x.iter().all(|&p| p >= 0.0));
        prop_assert!((x.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn evaluation_solves_the_bellman_equation(mdp in mdp_strategy(), gamma in 0.0f64..0.99) {
        let policy = Policy::uniform(mdp.n_states(), mdp.n_actions());
        let v = evaluate_discounted(&mdp, &policy, gamma, 1e-12).unwrap().v;
        let p = mdp.policy_transition_matrix(&policy).unwrap();
        let r = mdp.policy_reward_vector(&policy).unwrap();
        let residual = (&r + &(p.dot(&v) * gamma) - &v).iter().fold(0.0f64, |m, x| m.max(x.abs()));
        prop_assert!(residual < 1e-9);
        prop_assert!(v.iter().all(|&x| x >= -1e-12 && x <= 1.0 / (1.0 - gamma) + 1e-9));
    }

    #[test]
    fn optimal_value_dominates_and_is_greedy(mdp in mdp_strategy(), gamma in 0.0f64..0.95) {
        let report = solve_discounted(&mdp, gamma, 1e-10).unwrap();
        let uniform = Policy::uniform(mdp.n_states(), mdp.n_actions());
        let v_uniform = evaluate_discounted(&mdp, &uniform, gamma, 1e-12).unwrap().v;
        for (best, other) in report.v.iter().zip(&v_uniform) {
            prop_assert!(best + 1e-8 >= *other);
        }
        let q = q_values(&mdp, &report.v, gamma);
        let actions = report.policy.as_deterministic().unwrap();
        for (s, &a) in actions.iter().enumerate() {
            let row = q.row(s);
            let max = row.iter().copied().fold(f64::MIN, f64::max);
            prop_assert!(row[a] >= max - 1e-8);
        }
    }

    #[test]
    fn curve_csv_round_trip(values in prop::collection::vec((any::<f64>().prop_filter("finite", |x| x.is_finite()), 0u64..100, prop::option::of(0.0f64..1.0)), 1..30)) {
        let curve: Vec<CurvePoint> = values
            .iter()
            .enumerate()
            .map(|(i, &(r, k, gamma))| CurvePoint { t: i as u64 + 1, cumulative_regret: r, k, gamma })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curve.csv");
        write_curve(&path, &curve).unwrap();
        prop_assert_eq!(read_curve(&path).unwrap(), curve);
    }
}
