use std::sync::OnceLock;

use im_core::builder::*;
use im_core::dbn::*;
use im_core::eval::*;
use im_core::fatigue::*;
use im_core::heuristics::*;
use im_core::interchange::{export_interchange, import_interchange};
use im_core::pomdp::{BeliefState, STOCHASTIC_TOL};
use im_core::toys::random_pomdp;
use proptest::prelude::*;

fn dbn() -> &'static CompiledDbn {
    static D: OnceLock<CompiledDbn> = OnceLock::new();
    D.get_or_init(|| {
        let p = CrackGrowthParams::default();
        let s = DiscretizationScheme::from_name("DR_d30", &p).unwrap();
        let cfg = CompileConfig {
            trajectories: 50_000,
            ..Default::default()
        };
        compile_transition(&s, &p, &cfg).unwrap()
    })
}

fn pod() -> PodCurve {
    PodCurve::new(8.0).unwrap()
}

fn traditional() -> &'static ImPomdp {
    static M: OnceLock<ImPomdp> = OnceLock::new();
    M.get_or_init(|| {
        let g = traditional_groups(1.0, 50.0, pod());
        assemble_infinite(dbn(), &g, &CostSpec::new(1e3, 0.95), &AssembleOptions::default()).unwrap()
    })
}

fn belief_from(weights: Vec<f64>) -> BeliefState {
    BeliefState::from_unnormalized(weights).unwrap()
}

fn sparse_weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
    // mostly-zero weights with at least one positive entry
    (prop::collection::vec(prop_oneof![3 => Just(0.0), 1 => 0.0..1.0f64], n), 0..n).prop_map(|(mut w, k)| {
        w[k] += 0.5;
        w
    })
}

fn stochastic(v: &[f64]) -> bool {
    v.iter().all(|p| *p >= 0.0) && (v.iter().sum::<f64>() - 1.0).abs() < STOCHASTIC_TOL
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_models_validate_and_filter_to_distributions(
        ns in 2usize..9, na in 1usize..4, no in 1usize..4, seed in any::<u64>(),
        w in prop::collection::vec(0.01..1.0f64, 8),
    ) {
        let m = random_pomdp(ns, na, no, seed);
        prop_assert!(m.validate().is_empty());
        let b = belief_from(w[..ns].to_vec());
        for a in 0..na {
            prop_assert!(stochastic(&m.predict(&b, a).unwrap()));
            let mut total = 0.0;
            for o in 0..no {
                let (post, p) = m.belief_update(&b, a, o).unwrap();
                prop_assert!(stochastic(post.probs()));
                total += p;
            }
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn interchange_round_trip_is_identity(
        ns in 2usize..9, na in 1usize..4, no in 1usize..4, seed in any::<u64>(),
    ) {
        let m = random_pomdp(ns, na, no, seed);
        let back = import_interchange(&export_interchange(&m).unwrap()).unwrap();
        prop_assert_eq!(back, m);
    }

    #[test]
    fn seed_stable_parallel_reductions(seed in any::<u64>(), threads in 2usize..5) {
        let m = traditional();
        let rule = HeuristicRule::new(
            InspectionPlan::Equidistant { interval: 7 },
            "DN-I",
            MaintenanceRule::RepairOnDetection,
        );
        let policy = HeuristicPolicy::new(m, &rule).unwrap();
        let cfg = SimulationConfig::new(300, 30, seed);
        let run = |n: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .unwrap()
                .install(|| simulate_policy(m, &policy, &cfg).unwrap())
        };
        let (a, b) = (run(1), run(threads));
        prop_assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        prop_assert_eq!(a.ci95.to_bits(), b.ci95.to_bits());
        prop_assert_eq!(a.histogram, b.histogram);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn perfect_repair_resets_to_prior(w in sparse_weights(930)) {
        let d = dbn();
        let p = perfect_repair_matrix(&d.initial_belief);
        let b = belief_from(w);
        let after = BeliefState::new_unchecked(p.left_multiply(b.probs()));
        prop_assert!(after.l1_distance(&d.initial_belief) < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn filter_step_matches_model_update(w in sparse_weights(930), o in 0usize..2) {
        let d = dbn();
        let m = traditional();
        let a = m.group_index("DN-I").unwrap();
        let b = belief_from(w);
        let z = d.observation_matrix(&Inspection::Detection(pod()));
        let via_dbn = forward_step(d, &b, Some((&z, o)));
        let via_model = m.model.belief_update(&b, a, o);
        match (via_dbn, via_model) {
            (Ok(x), Ok((y, _))) => prop_assert!(x.l1_distance(&y) < 1e-12),
            (Err(_), Err(_)) => {}
            (x, y) => prop_assert!(false, "disagree: {:?} vs {:?}", x.is_ok(), y.is_ok()),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn confidence_interval_shrinks_with_root_n(seed in any::<u64>()) {
        let m = traditional();
        let rule = HeuristicRule::new(
            InspectionPlan::Equidistant { interval: 5 },
            "DN-I",
            MaintenanceRule::RepairOnDetection,
        );
        let small = evaluate_simulated(m, &rule, &SimulationConfig::new(2_000, 30, seed)).unwrap();
        let large = evaluate_simulated(m, &rule, &SimulationConfig::new(8_000, 30, seed)).unwrap();
        let ratio = large.ci95.unwrap() / small.ci95.unwrap();
        // expected 1/2; the sample standard deviation wobbles by a few percent
        prop_assert!((ratio - 0.5).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn prohibitive_inspection_cost_means_no_inspections(scale in 1e6..1e9f64) {
        let d = dbn();
        let g = traditional_groups(scale, 50.0, pod());
        let c = CostSpec::new(1e3, 0.95);
        let rod = MaintenanceRule::RepairOnDetection;
        let mut rules = vec![HeuristicRule::new(InspectionPlan::None, "DN-I", rod.clone())];
        rules.extend(equidistant_grid(1..=30, "DN-I", &rod));
        rules.extend(threshold_grid([1e-5, 1e-4, 1e-3, 1e-2], "DN-I", &rod));
        let best = grid_search(rules, |r| evaluate_analytic(d, &g, r, &c)).unwrap();
        let years = analytic_inspection_years(d, &g, &best.best().rule).unwrap();
        prop_assert!(years.is_empty(), "{} inspects at {years:?}", best.best().rule.label());
        prop_assert_eq!(best.best().cost.inspection, 0.0);
    }
}
