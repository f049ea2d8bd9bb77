//! Library results checked against independently computed references.

use itertools::Itertools;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use smcts::bench::brute_force_optimal;
use smcts::evaluation::{calibrate_on_states, sample_states};
use smcts::ingest::{generate_synthetic, SyntheticSpec};
use smcts::*;

/// Plain great-circle distance, written out independently of the library.
fn reference_miles(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let h = ((lat2 - lat1) / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * ((lon2 - lon1) / 2.0).sin().powi(2);
    2.0 * 3958.8 * h.sqrt().asin()
}

fn six_store_fixture() -> StoreNetwork {
    StoreNetwork::with_defaults(vec![
        StoreRecord::new(11, 41.6005, -93.6091, 1200.0),
        StoreRecord::new(12, 41.6040, -93.6091, 800.0),
        StoreRecord::new(13, 41.6005, -93.6010, 450.0),
        StoreRecord::new(14, 41.6400, -93.6500, 2000.0),
        StoreRecord::new(15, 41.6420, -93.6500, 150.0),
        StoreRecord::new(16, 41.7000, -93.5000, 975.0),
    ])
    .unwrap()
}

#[test]
fn haversine_matches_reference_geodesic() {
    let a = LatLon::<f64>::new(41.6005, -93.6091);
    let b = LatLon::new(41.6105, -93.6091);
    assert!((haversine_miles(a, b) - 0.6905).abs() < 1e-3);
    assert_eq!(haversine_miles(a, a), 0.0);
}

#[test]
fn neighbor_index_matches_pairwise_scan() {
    let net = six_store_fixture();
    for (i, s) in net.stores().iter().enumerate() {
        let expected: Vec<u64> = net
            .stores()
            .iter()
            .enumerate()
            .filter(|&(j, o)| j != i && reference_miles((s.latitude, s.longitude), (o.latitude, o.longitude)) <= 0.5)
            .map(|(_, o)| o.id)
            .collect();
        assert_eq!(net.neighbors_within(s.id).unwrap(), expected, "store {}", s.id);
    }
}

/// Loss of a closure set from the closed form, using only pairwise distances.
fn reference_loss(net: &StoreNetwork, closed: &[usize]) -> f64 {
    let gamma = net.recapture_gamma();
    closed
        .iter()
        .map(|&k| {
            let sk = net.store(k);
            let has_open_neighbor = (0..net.len()).any(|j| {
                let sj = net.store(j);
                j != k
                    && !closed.contains(&j)
                    && reference_miles((sk.latitude, sk.longitude), (sj.latitude, sj.longitude)) <= net.radius_miles()
            });
            sk.base_sales * if has_open_neighbor { 1.0 - gamma } else { 1.0 }
        })
        .sum()
}

#[test]
fn naive_sigma_equals_rmse_of_omitted_recapture() {
    let net = six_store_fixture();
    let n = net.len();
    let subsets: Vec<Vec<usize>> = (1..n).flat_map(|k| (0..n).combinations(k)).collect();
    let states: Vec<ClosureState> = subsets
        .iter()
        .map(|s| ClosureState::from_indices(n, s.iter().copied()).unwrap())
        .collect();

    let mut sq = 0.0;
    let mut max_loss = 0.0f64;
    for subset in &subsets {
        let naive: f64 = subset.iter().map(|&k| net.store(k).base_sales).sum();
        let truth = reference_loss(&net, subset);
        max_loss = max_loss.max(truth);
        sq += (naive - truth).powi(2);
    }
    let expected = (sq / subsets.len() as f64).sqrt();

    let report = calibrate_on_states(&NaiveSurrogate, &MainModel, &net, &states).unwrap();
    assert_eq!(report.sample_count, 62);
    assert_eq!(report.rmse_main, 0.0);
    assert!(
        (report.sigma_s - expected).abs() <= 1e-9 * expected,
        "{} vs {expected}",
        report.sigma_s
    );
    assert!((report.normalizer - max_loss).abs() <= 1e-9 * max_loss);
}

#[test]
fn exact_loss_matches_reference_closed_form() {
    let net = six_store_fixture();
    let n = net.len();
    for k in 0..=n {
        for subset in (0..n).combinations(k) {
            let state = ClosureState::from_indices(n, subset.iter().copied()).unwrap();
            let got = net.total_loss(&state).unwrap();
            let want = reference_loss(&net, &subset);
            assert!(
                (got - want).abs() <= 1e-9 * want.max(1.0),
                "{subset:?}: {got} vs {want}"
            );
        }
    }
}

#[test]
fn noisy_surrogate_hits_target_nrmse_on_fresh_states() {
    let net: StoreNetwork = generate_synthetic(&SyntheticSpec::new(25, 4)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(991);
    let states = sample_states(&net, 1000, &mut rng).unwrap();
    for target in [0.05, 0.1, 0.3] {
        let noisy = NoisySurrogate::new(&net, target, 17).unwrap();
        let report = calibrate_on_states(&noisy, &MainModel, &net, &states).unwrap();
        let nrmse = report.nrmse_surrogate();
        assert!(
            (nrmse - target).abs() <= 0.15 * target,
            "target {target}, measured {nrmse}"
        );
    }
    let exact = NoisySurrogate::new(&net, 0.0, 17).unwrap();
    for state in states.iter().take(50) {
        assert_eq!(exact.loss(&net, state).unwrap(), net.total_loss(state).unwrap());
    }
}

#[test]
fn synthetic_instances_have_neighbors() {
    for seed in 0..10 {
        let net: StoreNetwork = generate_synthetic(&SyntheticSpec::new(30, seed)).unwrap();
        assert!(net.mean_neighbor_degree() > 0.0, "seed {seed}");
    }
}

#[test]
fn oracle_picks_cheapest_of_three() {
    // isolated stores: closing one loses exactly its sales
    let net = StoreNetwork::with_defaults(vec![
        StoreRecord::new(1, 41.0, -93.0, 5.0),
        StoreRecord::new(2, 41.5, -93.0, 1.0),
        StoreRecord::new(3, 42.0, -93.0, 9.0),
    ])
    .unwrap();
    assert_eq!(brute_force_optimal(&net, 1, &MainModel).unwrap(), (vec![2], 1.0));
}

#[test]
fn searches_never_beat_the_oracle() {
    for seed in 0..5 {
        let net: StoreNetwork = generate_synthetic(&SyntheticSpec::new(9, seed)).unwrap();
        let (_, best) = brute_force_optimal(&net, 3, &MainModel).unwrap();
        let config = SearchConfig {
            budget_iterations: 600,
            seed,
            ..SearchConfig::with_closures(3)
        };
        let mcts = run_mcts(&net, &MainModel, &config).unwrap();
        let smcts = run_smcts(&net, &MainModel, &NaiveSurrogate, 500.0, &config).unwrap();
        assert!(mcts.best_loss_main >= best - 1e-9);
        assert!(smcts.best_loss_main >= best - 1e-9);
    }
}

#[test]
fn zero_sigma_ratio_counts_only_the_final_rescore() {
    let net: StoreNetwork = generate_synthetic(&SyntheticSpec::new(12, 3)).unwrap();
    let config = SearchConfig {
        budget_iterations: 400,
        ..SearchConfig::with_closures(2)
    };
    let result = run_smcts(&net, &MainModel, &AsSurrogate(MainModel), 0.0, &config).unwrap();
    assert_eq!(result.reevaluated_children, 0);
    assert_eq!((result.fs_calls, result.fm_calls), (400, 1));
    let ratio = smcts::bench::surrogate_ratio(&result).unwrap();
    assert!((ratio - 400.0 / 401.0).abs() < 1e-15);
}
