use std::collections::BTreeSet;

use proptest::collection::vec;
use proptest::prelude::*;

use smcts::bench::{dice_coefficient, spearman};
use smcts::tree::ROOT;
use smcts::*;

/// Stores scattered over roughly a 1.5 x 1.5 mile square, so some pairs
/// fall inside the default radius and some do not.
fn network(max_stores: usize) -> impl Strategy<Value = StoreNetwork> {
    vec((0.0..0.02f64, 0.0..0.03f64, 0.0..5000.0f64), 2..=max_stores).prop_map(|rows| {
        let stores = rows
            .into_iter()
            .enumerate()
            .map(|(i, (dlat, dlon, sales))| StoreRecord::new(i as u64 * 3 + 1, 41.6 + dlat, -93.6 + dlon, sales))
            .collect();
        StoreNetwork::with_defaults(stores).unwrap()
    })
}

fn network_and_mask(max_stores: usize) -> impl Strategy<Value = (StoreNetwork, Vec<bool>)> {
    network(max_stores).prop_flat_map(|net| {
        let n = net.len();
        (Just(net), vec(any::<bool>(), n))
    })
}

fn state_of(mask: &[bool]) -> ClosureState {
    ClosureState::from_indices(mask.len(), mask.iter().enumerate().filter(|(_, &c)| c).map(|(i, _)| i)).unwrap()
}

fn close_enough(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #[test]
    fn haversine_symmetric_and_nonnegative(
        a in (-90.0..90.0f64, -180.0..180.0f64),
        b in (-90.0..90.0f64, -180.0..180.0f64),
    ) {
        let (pa, pb) = (LatLon::new(a.0, a.1), LatLon::new(b.0, b.1));
        let d = haversine_miles(pa, pb);
        prop_assert!(d >= 0.0);
        prop_assert_eq!(d, haversine_miles(pb, pa));
    }

    #[test]
    fn neighbors_symmetric_irreflexive_and_within_radius(net in network(12)) {
        for (i, s) in net.stores().iter().enumerate() {
            let mine = net.neighbors_within(s.id).unwrap();
            prop_assert!(!mine.contains(&s.id));
            for (j, o) in net.stores().iter().enumerate() {
                if i == j {
                    continue;
                }
                let close = haversine_miles(s.location(), o.location()) <= net.radius_miles();
                prop_assert_eq!(mine.contains(&o.id), close);
                prop_assert_eq!(close, net.neighbors_within(o.id).unwrap().contains(&s.id));
            }
        }
    }

    #[test]
    fn loss_is_bounded_and_consistent((net, mask) in network_and_mask(10)) {
        let state = state_of(&mask);
        let loss = net.total_loss(&state).unwrap();
        let naive = NaiveSurrogate.loss(&net, &state).unwrap();
        prop_assert!(loss >= -1e-9);
        prop_assert!(loss <= naive + 1e-9 * naive.max(1.0));
        prop_assert!(close_enough(loss, net.loss_by_recomputation(&state).unwrap()));
        prop_assert!(close_enough(net.network_sales(&state).unwrap() + loss, net.total_base_sales()));
    }

    #[test]
    fn closing_another_store_never_lowers_loss((net, mask) in network_and_mask(10), pick in any::<prop::sample::Index>()) {
        let state = state_of(&mask);
        let open: Vec<usize> = (0..net.len()).filter(|&i| !mask[i]).collect();
        prop_assume!(!open.is_empty());
        let mut bigger = state.clone();
        bigger.close(open[pick.index(open.len())]).unwrap();
        let (before, after) = (net.total_loss(&state).unwrap(), net.total_loss(&bigger).unwrap());
        prop_assert!(after >= before - 1e-9 * before.max(1.0));
    }

    #[test]
    fn dice_is_symmetric_and_bounded(a in vec(0u64..12, 0..8), b in vec(0u64..12, 0..8)) {
        let ab = dice_coefficient(&a, &b);
        prop_assert_eq!(ab, dice_coefficient(&b, &a));
        prop_assert!((0.0..=1.0).contains(&ab));
        let (sa, sb): (BTreeSet<_>, BTreeSet<_>) = (a.iter().collect(), b.iter().collect());
        if !sa.is_empty() || !sb.is_empty() {
            prop_assert_eq!(ab == 1.0, sa == sb);
        }
    }

    #[test]
    fn spearman_is_bounded(pairs in vec((-5.0..5.0f64, -5.0..5.0f64), 2..20)) {
        let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        if let Some(rho) = spearman(&x, &y) {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&rho));
        }
    }

    #[test]
    fn noisy_surrogate_is_deterministic_per_state((net, mask) in network_and_mask(8), seed in any::<u64>()) {
        let noisy = NoisySurrogate::new(&net, 0.2, seed).unwrap();
        let state = state_of(&mask);
        prop_assert_eq!(noisy.loss(&net, &state).unwrap(), noisy.loss(&net, &state).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn search_tree_accounting(
        net in network(9),
        m_frac in 0.0..1.0f64,
        extra_budget in 0u64..400,
        seed in any::<u64>(),
        sigma in prop_oneof![Just(0.0), 0.0..3000.0f64],
    ) {
        let m = 1 + ((net.len() - 1) as f64 * m_frac) as usize;
        prop_assume!(m < net.len());
        let budget = m as u64 + extra_budget;
        let config = SearchConfig { budget_iterations: budget, seed, ..SearchConfig::with_closures(m) };
        let (result, tree) = Searcher::smcts(&net, &MainModel, &NaiveSurrogate, sigma, config.clone())
            .unwrap()
            .run()
            .unwrap();

        prop_assert_eq!(tree.node(ROOT).visits, result.iterations_used);
        prop_assert_eq!(result.iterations_used, budget);
        prop_assert_eq!(result.fs_calls, budget);
        prop_assert_eq!(result.fm_calls, result.reevaluated_children + 1);
        prop_assert_eq!(result.best_closure_set.len(), m);

        for (_, node) in tree.nodes() {
            if let Some(mean) = node.mean() {
                prop_assert!(close_enough(mean * node.visits as f64, node.value_sum));
            }
            prop_assert_eq!(node.reevaluated, node.refined_visits > 0);
            let actions: BTreeSet<usize> = node.children.iter().map(|&c| tree.node(c).action().unwrap()).collect();
            prop_assert_eq!(actions.len(), node.children.len());
            for &c in &node.children {
                prop_assert!(!node.removed_path.contains(&tree.node(c).action().unwrap()));
            }
            prop_assert_eq!(node.terminal, node.depth() == m);
        }

        let mcts = run_mcts(&net, &MainModel, &config).unwrap();
        prop_assert_eq!((mcts.fs_calls, mcts.fm_calls), (0, budget));
        prop_assert_eq!(mcts.reevaluated_children, 0);
        prop_assert!(close_enough(
            mcts.best_loss_main,
            net.total_loss(&ClosureState::from_ids(&net, mcts.best_closure_set.iter().copied()).unwrap()).unwrap()
        ));
    }
}

#[test]
fn single_precision_search_runs() {
    let stores = (0..6)
        .map(|i| smcts::StoreRecord32::new(i + 1, 41.6 + 0.003 * i as f32, -93.6, 100.0 + 10.0 * i as f32))
        .collect();
    let net = smcts::StoreNetwork32::with_defaults(stores).unwrap();
    let config = SearchConfig {
        budget_iterations: 300,
        ..SearchConfig::with_closures(2)
    };
    let result: smcts::SearchResult32 = run_smcts(&net, &MainModel, &NaiveSurrogate, 5.0f32, &config).unwrap();
    assert_eq!(result.best_closure_set.len(), 2);
    assert!(result.best_loss_main > 0.0);
}
