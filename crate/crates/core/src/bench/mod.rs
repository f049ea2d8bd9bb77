//! Exhaustive oracle, comparison metrics and experiment sweeps.

use std::collections::BTreeSet;

use itertools::Itertools;

use crate::error::{Error, Result};
use crate::evaluation::LossModel;
use crate::network::{ClosureState, StoreNetwork};
use crate::scalar::Scalar;
use crate::search::SearchResult;

pub mod sweep;

pub use sweep::{
    run_sweep, InstanceSource, SummaryRow, SurrogateKind, SweepFailure, SweepOutcome, SweepRecord, SweepSpec,
};

/// Largest number of subsets [`brute_force_optimal`] will enumerate.
pub const BRUTE_FORCE_LIMIT: u128 = 1_000_000;

/// `C(n, k)`, saturating at `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Minimum-loss closure set of size `closures`, by enumerating every subset
/// in lexicographic id order. The first minimum wins ties.
pub fn brute_force_optimal<T: Scalar>(
    network: &StoreNetwork<T>,
    closures: usize,
    model: &dyn LossModel<T>,
) -> Result<(Vec<u64>, T)> {
    let n = network.len();
    if closures > n {
        return Err(Error::Config(format!("cannot close {closures} of {n} stores")));
    }
    let count = binomial(n, closures);
    if count > BRUTE_FORCE_LIMIT {
        return Err(Error::Oracle(format!(
            "C({n}, {closures}) = {count} subsets exceeds the enumeration limit of {BRUTE_FORCE_LIMIT}; use the tree search instead"
        )));
    }
    if closures == 0 {
        return Ok((Vec::new(), T::zero()));
    }

    let mut best: Option<(Vec<usize>, T)> = None;
    for subset in (0..n).combinations(closures) {
        let state = ClosureState::from_indices(n, subset.iter().copied())?;
        let loss = model.loss(network, &state)?;
        if best.as_ref().is_none_or(|(_, b)| loss < *b) {
            best = Some((subset, loss));
        }
    }
    let (subset, loss) = best.expect("at least one subset");
    Ok((network.ids_of(&subset), loss))
}

/// Sørensen–Dice similarity `2|A∩B| / (|A|+|B|)`; 1 when both are empty.
pub fn dice_coefficient<I: Ord + Copy>(a: &[I], b: &[I]) -> f64 {
    let a: BTreeSet<I> = a.iter().copied().collect();
    let b: BTreeSet<I> = b.iter().copied().collect();
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let shared = a.intersection(&b).count();
    2.0 * shared as f64 / (a.len() + b.len()) as f64
}

/// Fraction of evaluator calls served by the surrogate.
pub fn surrogate_ratio<T: Scalar>(result: &SearchResult<T>) -> Result<f64> {
    let total = result.fs_calls + result.fm_calls;
    if total == 0 {
        return Err(Error::Search("no evaluator calls recorded".into()));
    }
    Ok(result.fs_calls as f64 / total as f64)
}

/// Ranks starting at 1, ties sharing their average rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation. `None` when lengths differ, fewer than two
/// points are given, or either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::MainModel;
    use crate::network::StoreRecord;

    #[test]
    fn dice_reference_values() {
        assert_eq!(dice_coefficient(&[1, 2], &[2, 1]), 1.0);
        assert_eq!(dice_coefficient(&[1, 2], &[3, 4]), 0.0);
        assert!((dice_coefficient(&[1, 2, 3], &[2, 3, 4]) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(dice_coefficient::<u64>(&[], &[]), 1.0);
    }

    #[test]
    fn ratio_reference_values() {
        let result = SearchResult::<f64> {
            best_closure_set: vec![1],
            best_loss_main: 0.0,
            fs_calls: 80,
            fm_calls: 20,
            reevaluated_children: 0,
            reevaluation_invocations: 0,
            iterations_used: 80,
            wall_seconds: 0.0,
            seed: 0,
            trace: Vec::new(),
        };
        assert!((surrogate_ratio(&result).unwrap() - 0.8).abs() < 1e-15);
        let baseline = SearchResult {
            fs_calls: 0,
            ..result.clone()
        };
        assert_eq!(surrogate_ratio(&baseline).unwrap(), 0.0);
        let empty = SearchResult {
            fs_calls: 0,
            fm_calls: 0,
            ..result
        };
        assert!(surrogate_ratio(&empty).is_err());
    }

    #[test]
    fn binomial_values() {
        assert_eq!(binomial(10, 2), 45);
        assert_eq!(binomial(30, 15), 155_117_520);
        assert_eq!(binomial(3, 5), 0);
        assert_eq!(binomial(200, 100), u128::MAX);
    }

    #[test]
    fn oracle_picks_cheapest_and_guards_size() {
        let net = StoreNetwork::<f64>::with_defaults(vec![
            StoreRecord::new(1, 41.0, -93.0, 5.0),
            StoreRecord::new(2, 41.2, -93.0, 1.0),
            StoreRecord::new(3, 41.4, -93.0, 9.0),
        ])
        .unwrap();
        assert_eq!(brute_force_optimal(&net, 1, &MainModel).unwrap(), (vec![2], 1.0));
        assert_eq!(brute_force_optimal(&net, 0, &MainModel).unwrap(), (vec![], 0.0));

        let many: Vec<_> = (0..40)
            .map(|i| StoreRecord::new(i, 40.0 + i as f64 * 0.1, -93.0, 1.0))
            .collect();
        let big = StoreNetwork::<f64>::with_defaults(many).unwrap();
        let err = brute_force_optimal(&big, 10, &MainModel).unwrap_err();
        assert!(err.to_string().contains("search"));
    }

    #[test]
    fn oracle_tie_break_is_lexicographic() {
        let net = StoreNetwork::<f64>::with_defaults(vec![
            StoreRecord::new(4, 41.0, -93.0, 2.0),
            StoreRecord::new(7, 41.2, -93.0, 2.0),
            StoreRecord::new(9, 41.4, -93.0, 2.0),
        ])
        .unwrap();
        assert_eq!(brute_force_optimal(&net, 2, &MainModel).unwrap().0, vec![4, 7]);
    }

    #[test]
    fn spearman_cases() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 2.0], &[5.0, 5.0]), None);
        // ties share ranks: x ranks 1,2,3,4 vs y ranks 1.5,1.5,3,4
        let rho = spearman(&[1.0, 2.0, 3.0, 4.0], &[0.0, 0.0, 1.0, 2.0]).unwrap();
        assert!((rho - 0.9486832980505138).abs() < 1e-12);
    }
}
