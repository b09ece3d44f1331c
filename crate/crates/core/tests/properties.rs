//! Invariants that must hold for every environment, seed and input.

use proptest::prelude::*;
use rcm_lab::config::{Experiment, ExperimentConfig};
use rcm_lab::elliptic::{
    apply_generator, apply_generator_divergence_form, contract_phi, solve_corrector_direction,
    CorrectorBundle,
};
use rcm_lab::environment::{sample_environment, Environment, EnvironmentLaw};
use rcm_lab::lattice::{divergence, gradient, EdgeField, TorusLattice, VertexField};
use rcm_lab::parabolic::heat_kernel;
use rcm_lab::solver::SolverConfig;
use rcm_lab::stats::{kolmogorov_distance, rate_fit, FitWindow};
use rcm_lab::walk::{haeusler_bound, martingale_series, simulate_vsrw};

fn env_strategy() -> impl Strategy<Value = Environment> {
    (1usize..=3, 2usize..=5, 1.0f64..6.0, any::<u64>()).prop_map(|(d, side, c, seed)| {
        let side = if d == 3 { side.min(4) } else { side };
        let lat = TorusLattice::new(d, side).unwrap();
        sample_environment(&EnvironmentLaw::UniformElliptic { c }, &lat, seed).unwrap()
    })
}

fn field(lat: &TorusLattice, seed: u64) -> VertexField {
    VertexField::from_fn(lat, |x| {
        let h = rcm_lab::seed::derive_seed(seed, "field", x as u64);
        (h >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    })
}

fn tight() -> SolverConfig {
    SolverConfig::with_tol(1e-12)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn gradient_and_divergence_are_adjoint(env in env_strategy(), seed in any::<u64>()) {
        let lat = *env.lattice();
        let f = field(&lat, seed);
        let g = EdgeField::from_fn(&lat, |x, i| ((x * 31 + i * 7) % 11) as f64 - 5.0);
        let lhs = gradient(&f, &lat).unwrap().inner(&g).unwrap();
        let rhs = f.inner(&divergence(&g, &lat).unwrap()).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn generator_forms_agree_and_kill_constants(env in env_strategy(), seed in any::<u64>()) {
        let lat = *env.lattice();
        let f = field(&lat, seed);
        let a = apply_generator(&env, &f).unwrap();
        let b = apply_generator_divergence_form(&env, &f).unwrap();
        let diff = a.values().iter().zip(b.values()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        prop_assert!(diff < 1e-12);
        let c = apply_generator(&env, &VertexField::constant(&lat, 2.5)).unwrap();
        prop_assert!(c.max_abs() < 1e-12);
    }

    #[test]
    fn heat_kernel_is_a_symmetric_probability(env in env_strategy(), t in 0.01f64..4.0, s in 0.01f64..2.0) {
        let lat = *env.lattice();
        let n = lat.num_vertices();
        let rows: Vec<_> = (0..n).map(|x| heat_kernel(&env, x, &[s, t, s + t]).unwrap()).collect();
        for x in 0..n {
            let p = &rows[x][1].p;
            prop_assert!((p.sum() - 1.0).abs() < 1e-10);
            prop_assert!(p.values().iter().all(|&v| v >= -1e-12));
            for y in 0..n {
                prop_assert!((p.get(y) - rows[y][1].p.get(x)).abs() < 1e-10);
            }
        }
        // Chapman-Kolmogorov from vertex 0.
        for z in 0..n {
            let composed: f64 = (0..n).map(|y| rows[0][0].p.get(y) * rows[y][1].p.get(z)).sum();
            prop_assert!((composed - rows[0][2].p.get(z)).abs() < 1e-9);
        }
    }

    #[test]
    fn corrector_bundle_invariants(env in env_strategy()) {
        let lat = *env.lattice();
        let d = lat.dim();
        let bundle = CorrectorBundle::solve(&env, &tight()).unwrap();
        prop_assert!(bundle.max_corrector_residual() <= 1e-12);
        for i in 0..d {
            prop_assert!(bundle.phi.channel(i).iter().sum::<f64>().abs() < 1e-9);
            for k in 0..d {
                for l in 0..d {
                    let a = bundle.sigma.component(i, k, l);
                    let b = bundle.sigma.component(i, l, k);
                    prop_assert!(a.iter().zip(b).all(|(x, y)| x + y == 0.0));
                }
            }
        }
        let hom = &bundle.omega_hom;
        prop_assert!(hom.discrepancy < 1e-8);
        // Voigt-Reuss bracket on the diagonal, symmetry off it.
        let omega = env.conductances();
        for i in 0..d {
            let vals: Vec<f64> = (0..lat.num_vertices()).map(|x| omega.get(x, i)).collect();
            let arith = vals.iter().sum::<f64>() / vals.len() as f64;
            let harm = vals.len() as f64 / vals.iter().map(|v| 1.0 / v).sum::<f64>();
            let a = hom.energy.get(i, i);
            prop_assert!(a >= harm - 1e-9 && a <= arith + 1e-9, "{harm} <= {a} <= {arith}");
            for j in 0..d {
                prop_assert!((hom.energy.get(i, j) - hom.energy.get(j, i)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn corrector_is_linear_in_direction(env in env_strategy(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let d = env.lattice().dim();
        let xi: Vec<f64> = (0..d).map(|i| if i == 0 { a } else { b / i as f64 }).collect();
        let bundle = CorrectorBundle::solve(&env, &tight()).unwrap();
        let direct = solve_corrector_direction(&env, &xi, &tight()).unwrap().phi;
        let combined = contract_phi(&bundle.phi, &xi);
        let diff = direct.values().iter().zip(combined.values()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        prop_assert!(diff < 1e-8);
    }

    #[test]
    fn walk_decomposition_is_exact(env in env_strategy(), seed in any::<u64>()) {
        let d = env.lattice().dim();
        let xi: Vec<f64> = (0..d).map(|i| 1.0 / (i + 1) as f64).collect();
        let bundle = CorrectorBundle::solve(&env, &tight()).unwrap();
        let phi_xi = contract_phi(&bundle.phi, &xi);
        let path = simulate_vsrw(&env, 20.0, seed).unwrap();
        prop_assert_eq!(&path, &simulate_vsrw(&env, 20.0, seed).unwrap());
        let series = martingale_series(&path, &phi_xi, &xi, &env, &[0.0, 1.0, 5.0, 10.0, 20.0]).unwrap();
        prop_assert!(series.max_decomposition_residual < 1e-12);
        // Quadratic variation is additive and nondecreasing.
        prop_assert!(series.qv.windows(2).all(|w| w[1] >= w[0]));
        prop_assert_eq!(series.qv[0], 0.0);
    }

    #[test]
    fn kolmogorov_distance_is_scale_invariant(
        samples in prop::collection::vec(-5.0f64..5.0, 1..60),
        sigma in 0.1f64..3.0,
        t in 0.1f64..50.0,
        scale in 0.01f64..100.0,
    ) {
        let base = kolmogorov_distance(&samples, sigma, t).unwrap();
        let scaled: Vec<f64> = samples.iter().map(|s| s * scale).collect();
        let other = kolmogorov_distance(&scaled, sigma * scale, t).unwrap();
        prop_assert!((0.0..=1.0).contains(&base));
        prop_assert!((base - other).abs() < 1e-12);
    }

    #[test]
    fn haeusler_bound_is_monotone(a in 0.0f64..10.0, b in 0.0f64..10.0, da in 0.0f64..1.0, db in 0.0f64..1.0, n in 1u32..4) {
        let base = haeusler_bound(a, b, n);
        prop_assert!(haeusler_bound(a + da, b, n) >= base);
        prop_assert!(haeusler_bound(a, b + db, n) >= base);
    }

    #[test]
    fn rate_fit_recovers_exact_power_laws(slope in -3.0f64..1.0, scale in 0.01f64..100.0) {
        let times: Vec<f64> = (0..12).map(|k| 2f64.powi(k)).collect();
        let values: Vec<f64> = times.iter().map(|t| scale * t.powf(slope)).collect();
        let fit = rate_fit(&times, &values, None, Some(&FitWindow::new(1.0, 1e6))).unwrap();
        prop_assert!((fit.slope - slope).abs() < 1e-10);
        prop_assert!((fit.intercept - scale.ln()).abs() < 1e-9);
    }

    #[test]
    fn torus_translation_round_trips(d in 1usize..=3, side in 2usize..=7, x in any::<usize>(), off in prop::collection::vec(-20i64..20, 3)) {
        let lat = TorusLattice::new(d, side).unwrap();
        let x = x % lat.num_vertices();
        let off = &off[..d];
        let neg: Vec<i64> = off.iter().map(|v| -v).collect();
        prop_assert_eq!(lat.translate(lat.translate(x, off), &neg), x);
        prop_assert_eq!(lat.index_of(&lat.coords(x)), x);
        for i in 0..d {
            prop_assert_eq!(lat.backward(lat.forward(x, i), i), x);
        }
    }

    #[test]
    fn configs_round_trip(which in 0usize..13, seed in any::<u64>(), n_env in 1usize..50, side in 2usize..20) {
        let experiment = Experiment::ALL[which];
        let text = format!(
            r#"{{"experiment": "{}", "lattice": {{"d": 2, "side": {side}}},
                "law": {{"kind": "uniform_elliptic", "c": 2.0}},
                "times": {{"log": {{"start": 1.0, "end": 8.0, "points": 4}}}},
                "ensemble": {{"n_env": {n_env}}}, "seed": {seed}}}"#,
            experiment.name()
        );
        let cfg = ExperimentConfig::from_json(&text).unwrap();
        prop_assert_eq!(cfg.experiment, experiment);
        let again = ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        prop_assert_eq!(cfg, again);
    }
}
