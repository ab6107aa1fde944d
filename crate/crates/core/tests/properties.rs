//! Property tests over the problem zoo.

mod common;

use proptest::prelude::*;

use monoflow::config::{ExperimentConfig, MethodSpec, ProblemSpec, RateSettings};
use monoflow::feedback::phi;
use monoflow::hpe::{exact_oracle, verify_step, HpeConfig};
use monoflow::metrics::{self, fit_rate};
use monoflow::operator::resolvent;
use monoflow::problems::{make_bilinear_saddle, zoo};
use monoflow::{ProblemInstance, Vector};

fn instance(i: usize) -> ProblemInstance {
    let all = zoo().unwrap();
    all[i % all.len()].clone()
}

fn point(coords: &[f64], d: usize) -> Vector {
    Vector::from_fn(d, |i, _| coords[i % coords.len()])
}

fn coords() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, 1..=6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn resolvent_is_nonexpansive(i in 0usize..64, a in coords(), b in coords(), log_l in -2.0f64..2.0) {
        let problem = instance(i);
        let d = problem.dim();
        let (x1, x2) = (point(&a, d), point(&b, d));
        let lambda = 10f64.powf(log_l);
        let y1 = resolvent(&problem.operator, lambda, &x1).unwrap().y;
        let y2 = resolvent(&problem.operator, lambda, &x2).unwrap().y;
        let gap = (&x1 - &x2).norm();
        prop_assert!((&y1 - &y2).norm() <= gap * (1.0 + 1e-9) + 1e-10);
    }

    #[test]
    fn resolvent_pair_lies_on_the_graph(i in 0usize..64, a in coords(), log_l in -3.0f64..3.0) {
        let problem = instance(i);
        let x = point(&a, problem.dim());
        let lambda = 10f64.powf(log_l);
        let r = resolvent(&problem.operator, lambda, &x).unwrap();
        let scale = 1f64.max(x.norm());
        prop_assert!(r.residual <= 1e-9 * scale, "residual {}", r.residual);
        prop_assert!(problem.operator.in_domain(&r.y, 1e-9));
        prop_assert!(problem.operator.membership_defect(&r.y, &r.v).unwrap() <= 1e-8 * scale);
    }

    #[test]
    fn phi_sandwich(i in 0usize..64, a in coords(), p in 2usize..=4, log_l in -2.0f64..1.0, log_r in 0.0f64..1.5) {
        let problem = instance(i);
        let op = &problem.operator;
        let x = point(&a, problem.dim());
        let l1 = 10f64.powf(log_l);
        let ratio = 10f64.powf(log_r);
        let (f1, f2) = (phi(op, l1, &x, p).unwrap(), phi(op, l1 * ratio, &x, p).unwrap());
        let e = 1.0 / (p as f64 - 1.0);
        let tol = 1e-8 * (f1 + f2) + 1e-12;
        prop_assert!(f2 + tol >= ratio.powf(e) * f1);
        prop_assert!(f2 <= ratio.powf(p as f64 * e) * f1 + tol);
    }

    #[test]
    fn exact_oracle_steps_pass_the_certificate(a in coords(), p in 1usize..=3, log_t in -3.0f64..0.0) {
        let problem = make_bilinear_saddle(4, 1.0).unwrap();
        let x = problem.operator.project_domain(&point(&a, 4)).unwrap();
        prop_assume!(metrics::residue(&problem, &x).unwrap() > 1e-6);
        let cfg = HpeConfig::new(0.0, 10f64.powf(log_t), p, 1).unwrap();
        let s = exact_oracle(&problem, &x, &cfg).unwrap();
        prop_assert!(verify_step(&cfg, &x, s.lambda, &s.y, &s.v, s.eps).passed());
    }

    #[test]
    fn gap_is_nonnegative_and_dominates_samples(a in coords(), b in coords()) {
        let problem = make_bilinear_saddle(4, 1.0).unwrap();
        let op = &problem.operator;
        let x = op.project_domain(&point(&a, 4)).unwrap();
        let z = op.project_domain(&point(&b, 4)).unwrap();
        let g = metrics::gap(&problem, &x).unwrap();
        let sampled = op.eval_single_valued(&z).unwrap().dot(&(&x - &z));
        prop_assert!(g >= 0.0);
        prop_assert!(g + 1e-12 >= sampled);
    }

    #[test]
    fn power_law_slope_recovered(c in 0.1f64..10.0, b in -3.0f64..-0.1) {
        let series: Vec<(f64, f64)> = (1..=200).map(|k| (k as f64, c * (k as f64).powf(b))).collect();
        let fit = fit_rate(&series, 0.5).unwrap();
        prop_assert!((fit.slope - b).abs() < 1e-9);
    }

    #[test]
    fn config_round_trips(d in 1usize..5, theta in 1e-4f64..0.99, p in 1usize..4, seed in any::<u64>(), flow in any::<bool>()) {
        let method = if flow {
            MethodSpec::Flow { theta, p, horizon: 5.0, step: 0.01, sample_stride: 3 }
        } else {
            MethodSpec::HpeExact { sigma: 0.25, theta, p, max_iters: 50, stop_res: 1e-9 }
        };
        let cfg = ExperimentConfig {
            seed,
            output: None,
            x0: None,
            problem: ProblemSpec::BilinearSaddle { d: 2 * d, scale: 1.5 },
            method,
            rates: RateSettings { tail_fraction: 0.4 },
        };
        cfg.validate().unwrap();
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        prop_assert_eq!(cfg, again);
    }
}

#[test]
fn gap_matches_grid_on_the_box_instance() {
    let problem = monoflow::problems::make_affine_box(2).unwrap();
    for x in [[0.0, 0.0], [0.9, -0.4], [-1.0, 1.0], [0.3, 0.7]] {
        let x = Vector::from_column_slice(&x);
        let g = metrics::gap(&problem, &x).unwrap();
        assert!((g - common::grid_gap_2d(&problem, &x)).abs() < 1e-6);
    }
}
