use nalgebra::DVector;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tdlab::engine::{aggregate, run, RunConfig, Variant};
use tdlab::lemmas::{check_iid_lemmas, check_lipschitz_and_norm_bounds, evaluate, LemmaContext};
use tdlab::mdp::{make_random_mdp, GeneratorFamily, Problem};
use tdlab::oracle::{mean_path_direction, solve_fixed_point};
use tdlab::sampling::{compute_tau, tv_curve_to_floor, MixingProfile, Regime, TV_NOISE_FLOOR};
use tdlab::schedules::{Schedule, ScheduleKind};

fn family() -> impl Strategy<Value = GeneratorFamily> {
    prop_oneof![
        Just(GeneratorFamily::DenseDirichlet),
        Just(GeneratorFamily::Chain),
        (2usize..4).prop_map(|branching| GeneratorFamily::Garnet { branching }),
    ]
}

fn instance() -> impl Strategy<Value = Problem> {
    (any::<u64>(), 2usize..=20, 1usize..=8, family()).prop_filter_map("generator gave up", |(seed, n, d, fam)| {
        let fam = match fam {
            GeneratorFamily::Garnet { branching } => GeneratorFamily::Garnet { branching: branching.min(n) },
            f => f,
        };
        let (spec, features) = make_random_mdp(seed, n, d.min(n), fam).ok()?;
        Problem::new(spec, features).ok()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fixed_points_zero_the_mean_direction(p in instance(), lambda in 1e-4f64..10.0) {
        let fp = solve_fixed_point(&p, lambda).unwrap();
        let scale = fp.w_star.norm().max(1.0);
        prop_assert!(mean_path_direction(&p, &fp.w_star, 0.0).unwrap().norm() <= 1e-10 * scale);
        prop_assert!(mean_path_direction(&p, &fp.w_reg_star, lambda).unwrap().norm() <= 1e-10 * scale);
        let bound = lambda * fp.w_star.norm() / (lambda + p.omega() * (1.0 - p.gamma()));
        prop_assert!((&fp.w_star - &fp.w_reg_star).norm() <= bound * (1.0 + 1e-9));
    }

    #[test]
    fn envelope_dominates_the_tv_curve(p in instance()) {
        let curve = tv_curve_to_floor(&p, 100_000);
        let profile = MixingProfile::for_run(&p, 0.5, 0.0, 1024).unwrap();
        for (t, &tv) in curve.iter().enumerate() {
            if tv > TV_NOISE_FLOOR {
                prop_assert!(profile.envelope.at(t as u64) >= tv, "t = {}", t);
            }
        }
        prop_assert!(curve.windows(2).all(|w| w[1] <= w[0] + 1e-15));
        let tau = compute_tau(&profile.envelope, 0.01).unwrap();
        prop_assert!(profile.envelope.at(tau) <= 0.01);
    }

    #[test]
    fn lemma_witnesses_replay(p in instance(), lambda in 1e-3f64..2.0, seed in any::<u64>()) {
        let ctx = LemmaContext::new(p, lambda).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut checks = check_iid_lemmas(&ctx, 20, &mut rng).unwrap();
        checks.extend(check_lipschitz_and_norm_bounds(&ctx, 20, &mut rng).unwrap());
        for c in checks {
            prop_assert!(c.passed(), "{} {}", c.id, c.max_violation);
            let replay = evaluate(c.id, &ctx, c.witness.as_ref().unwrap()).unwrap();
            prop_assert_eq!(replay, c.max_violation);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn aggregation_ignores_execution_order(order in Just((0u64..12).collect::<Vec<_>>()).prop_shuffle()) {
        let (spec, features) = tdlab::mdp::reference_two_state();
        let p = Problem::new(spec, features).unwrap();
        let schedule = Schedule::new(ScheduleKind::Exponential, 0.5, 256).unwrap();
        let records: Vec<_> = order
            .iter()
            .map(|&k| run(&RunConfig::new(Variant::Standard, schedule, Regime::Markovian, 5, k), &p).unwrap())
            .collect();
        let sorted: Vec<_> = (0..12)
            .map(|k| run(&RunConfig::new(Variant::Standard, schedule, Regime::Markovian, 5, k), &p).unwrap())
            .collect();
        prop_assert_eq!(aggregate(&records).unwrap(), aggregate(&sorted).unwrap());
    }

    #[test]
    fn runs_are_pure_functions_of_their_config(p in instance(), seed in any::<u64>(), stream in 0u64..100) {
        let schedule = Schedule::new(ScheduleKind::Exponential, 0.5, 300).unwrap();
        let mut rc = RunConfig::new(Variant::Regularized { lambda: 0.05 }, schedule, Regime::Markovian, seed, stream);
        rc.w_init = Some(DVector::from_element(p.d(), 0.3));
        prop_assert_eq!(run(&rc, &p).unwrap(), run(&rc, &p).unwrap());
    }
}
