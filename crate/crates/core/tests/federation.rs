use fedomg::aggregator::{aggregate_round, apply_global_update, AggregationConfig, AggregatorKind};
use fedomg::data::{gen_blobs, gen_rect4, BlobsConfig, Rect4Config};
use fedomg::federation::{initial_params, run_experiment, run_fdg_experiment, run_round, Client, EvalSets};
use fedomg::models::ModelSpec;
use fedomg::oracle::random_instance;
use fedomg::{ExperimentConfig, GradientSet, ParamVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rect4_cfg(aggregator: AggregatorKind) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(ModelSpec::linear_binary(), 6, 0.05, 16);
    cfg.aggregator = aggregator;
    cfg.seed = 3;
    cfg
}

#[test]
fn identical_clients_get_uniform_weights() {
    let data = gen_blobs(&BlobsConfig::new(3, 40, 5)).unwrap();
    let clients: Vec<Client> = (0..4).map(|id| Client { id, train: data.clone() }).collect();
    let mut cfg = ExperimentConfig::new(ModelSpec::logistic(2, 3), 1, 0.05, 200);
    cfg.local_epochs = 1;
    let theta = initial_params(&cfg);
    let (_, report) = run_round(&theta, &clients, &EvalSets::default(), &cfg, 0).unwrap();
    for &w in report.aggregation.gamma_star.as_slice() {
        assert!((w - 0.25).abs() < 1e-3, "{w}");
    }
    let fl = report.aggregation.g_fl.as_slice();
    let igd = report.aggregation.g_igd.as_slice();
    for (a, b) in fl.iter().zip(igd) {
        assert!((b - a * 1.5).abs() < 1e-9 * (1.0 + a.abs()));
    }
}

#[test]
fn rect4_run_is_deterministic() {
    let domains = gen_rect4(&Rect4Config::new(60, 9)).unwrap();
    let cfg = rect4_cfg(AggregatorKind::FedOmg);
    let a = run_fdg_experiment(&domains, 2, &cfg).unwrap();
    let b = run_fdg_experiment(&domains, 2, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.reports.len(), 6);
    for r in &a.reports {
        assert_eq!(r.sampled_clients.len(), 3);
        assert!(r.metrics.target_accuracy.is_some());
    }
}

#[test]
fn kappa_zero_tracks_fedavg_in_a_full_run() {
    let domains = gen_rect4(&Rect4Config::new(60, 11)).unwrap();
    let mut omg = rect4_cfg(AggregatorKind::FedOmg);
    omg.aggregation.kappa = 0.0;
    let avg = rect4_cfg(AggregatorKind::FedAvg);
    let a = run_fdg_experiment(&domains, 0, &omg).unwrap();
    let b = run_fdg_experiment(&domains, 0, &avg).unwrap();
    for (x, y) in a.final_theta.iter().zip(b.final_theta.iter()) {
        assert!((x - y).abs() < 1e-12, "{x} vs {y}");
    }
}

#[test]
fn partial_participation_samples_a_subset() {
    let data = gen_blobs(&BlobsConfig::new(2, 30, 1)).unwrap();
    let clients: Vec<Client> = (0..10).map(|id| Client { id, train: data.clone() }).collect();
    let mut cfg = ExperimentConfig::new(ModelSpec::logistic(2, 2), 4, 0.05, 32);
    cfg.participation_ratio = 0.3;
    cfg.local_epochs = 1;
    let run = run_experiment(&clients, &EvalSets::default(), &cfg).unwrap();
    for r in &run.reports {
        assert_eq!(r.sampled_clients.len(), 3);
        assert_eq!(r.aggregation.gamma_star.len(), 3);
    }
}

#[test]
fn global_update_moves_against_direction() {
    let theta = ParamVector::new(vec![1.0, -2.0]).unwrap();
    let g = ParamVector::new(vec![0.5, 0.5]).unwrap();
    let next = apply_global_update(&theta, &g, 2.0).unwrap();
    assert_eq!(next.as_slice(), &[0.0, -3.0]);
}

fn normalized(kappa: f64) -> AggregationConfig {
    AggregationConfig {
        kappa,
        normalize_gradients: true,
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn direction_is_scale_equivariant(
        seed in any::<u64>(),
        u in 2usize..6,
        m in 2usize..12,
        kappa in 0.05f64..1.5,
        c in 1e-3f64..1e3,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_instance(&mut rng, u, m);
        let cfg = normalized(kappa);
        let base = aggregate_round(&g, &cfg, None).unwrap();
        let scaled = aggregate_round(&g.scaled(c), &cfg, None).unwrap();
        let expected = base.g_igd.scale(c);
        let err = expected.sub(&scaled.g_igd).unwrap();
        let rel = fedomg::vector::norm(&err) / fedomg::vector::norm(&expected).max(1e-300);
        prop_assert!(rel < 1e-9, "relative error {rel}");
    }

    #[test]
    fn direction_lies_on_the_ball_boundary(
        seed in any::<u64>(),
        u in 1usize..6,
        m in 1usize..12,
        kappa in 0.0f64..1.5,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g: GradientSet = random_instance(&mut rng, u, m);
        let r = aggregate_round(&g, &AggregationConfig { kappa, ..Default::default() }, None).unwrap();
        let offset = fedomg::vector::norm(&r.g_igd.sub(&r.g_fl).unwrap());
        let radius = kappa * fedomg::vector::norm(&r.g_fl);
        prop_assert!((offset - radius).abs() <= 1e-9 * (1.0 + radius));
        prop_assert!(r.min_inner_product <= r.mean_inner_product + 1e-12);
    }
}
