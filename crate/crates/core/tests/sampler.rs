//! End-to-end checks of the public sampler API.

use gjn_core::batch::try_run_batch;
use gjn_core::config::RunConfig;
use gjn_core::dcftp::naive_steady_state_sim;
use gjn_core::oracle_stats::summarize;
use gjn_core::{sample_stationary, DistributionSpec, NetworkSpec, ProductFormOracle, SamplerContext, SamplerError, SamplerOptions};

fn tandem() -> NetworkSpec {
    NetworkSpec::new(
        vec![Some(DistributionSpec::erlang(2, 1.0)), None],
        vec![DistributionSpec::uniform(0.4, 1.2), DistributionSpec::hyperexponential(vec![0.5, 0.5], vec![4.0, 4.0 / 3.0])],
        vec![vec![0.0, 1.0], vec![0.0, 0.0]],
    )
    .unwrap()
}

#[test]
fn mm1_queue_length_is_geometric() {
    let spec = NetworkSpec::single_station(DistributionSpec::exponential(0.6), DistributionSpec::exponential(1.0));
    let ctx = SamplerContext::new(&spec, &SamplerOptions::default()).unwrap();
    let states: Vec<Vec<u64>> = try_run_batch(&ctx, 4000, 3, None)
        .unwrap()
        .into_iter()
        .map(|(s, _)| s.y)
        .collect();
    let oracle = ProductFormOracle::new(&spec).unwrap();
    let s = summarize(&states, Some(&oracle)).unwrap();
    // Mean 1.5.
    assert!((s.stations[0].mean - 1.5).abs() < 2.0 * s.stations[0].half_width + 0.05, "{:?}", s.stations[0]);
    assert!(s.stations[0].chi_square.unwrap().p_value > 1e-3);
}

#[test]
fn non_markovian_tandem_agrees_with_long_forward_run() {
    let spec = tandem();
    let ctx = SamplerContext::new(&spec, &SamplerOptions::default()).unwrap();
    let exact: Vec<Vec<u64>> = try_run_batch(&ctx, 3000, 21, None)
        .unwrap()
        .into_iter()
        .map(|(s, _)| s.y)
        .collect();
    let naive = naive_steady_state_sim(&spec, 2_000.0, 400_000.0, 20.0, 5).unwrap();
    let e = summarize(&exact, None).unwrap();
    let n = summarize(&naive, None).unwrap();
    for i in 0..2 {
        let gap = (e.stations[i].mean - n.stations[i].mean).abs();
        // The forward run is autocorrelated; give its CI a generous factor.
        let tol = 1.5 * (e.stations[i].half_width + 3.0 * n.stations[i].half_width);
        assert!(gap < tol, "station {i}: exact {:?} naive {:?}", e.stations[i], n.stations[i]);
    }
}

#[test]
fn residuals_are_consistent_with_state() {
    let spec = tandem();
    for seed in 0..50 {
        let (s, r) = sample_stationary(&spec, seed, &SamplerOptions::default()).unwrap();
        for i in 0..2 {
            assert_eq!(s.y[i] > 0, s.residual_service[i] > 0.0);
        }
        assert!(s.residual_arrival[0].unwrap() > 0.0);
        assert_eq!(s.residual_arrival[1], None);
        assert!(r.tau <= 0.0 && r.tau > -r.horizon);
    }
}

#[test]
fn budget_is_resumable() {
    let spec = NetworkSpec::table1_column(4);
    let capped = SamplerOptions {
        max_rounds: Some(1),
        block_length: Some(0.5),
        ..SamplerOptions::default()
    };
    let free = SamplerOptions {
        block_length: Some(0.5),
        ..SamplerOptions::default()
    };
    let ctx = SamplerContext::new(&spec, &capped).unwrap();
    let run = match ctx.sample(12) {
        Err(SamplerError::BudgetExceeded(run)) => *run,
        other => panic!("expected the cap to trigger, got {other:?}"),
    };
    let resumed = SamplerContext::new(&spec, &free).unwrap().resume(run).unwrap();
    let direct = SamplerContext::new(&spec, &free).unwrap().sample(12).unwrap();
    assert_eq!(resumed, direct);
}

#[test]
fn config_drives_the_sampler() {
    let cfg = RunConfig::from_toml_str(
        r#"
[network]
d = 1
arrival = ["exp(rate=0.5)"]
service = ["erlang(k=3, rate=6)"]
Q = [[0.0]]

[sampler]
debug = true
"#,
    )
    .unwrap();
    let a = sample_stationary(&cfg.network, 9, &cfg.sampler).unwrap();
    let b = sample_stationary(&cfg.network, 9, &cfg.sampler).unwrap();
    assert_eq!(a, b);
}
