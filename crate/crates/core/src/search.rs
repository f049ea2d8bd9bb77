//! Surrogate-assisted MCTS and the unassisted MCTS baseline.
//!
//! One iteration is a single step of the descent: select a child, expand it
//! if it is a fresh leaf, score it with the per-iteration evaluator, back the
//! reward up to the root, and, if the child's own children are now equally
//! visited, run the re-evaluation pass on them. A descent ends at a terminal
//! node, so a full descent spans `M` iterations. Partial removal sets are
//! scored directly; there is no rollout.
//!
//! The re-evaluation pass sorts the children by value and walks adjacent
//! pairs once. When `v[i+1] − σ < v[i] + σ` both children are re-scored by
//! the main evaluator and the scores go into their refined statistics. A
//! child is re-scored at most once per pass.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{Evaluator, LossModel};
use crate::network::StoreNetwork;
use crate::scalar::Scalar;
use crate::tree::{pick, NodeId, SearchConfig, SearchTree, TieBreak, ROOT};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", tag = "event", rename_all = "snake_case")]
pub enum TraceEvent<T> {
    /// Descent step into the child removing `store`, scored `reward`.
    Step { depth: usize, store: u64, reward: T },
    /// Main-evaluator refinement of the node with removal path `path`.
    Refine { path: Vec<u64>, reward: T },
}

/// Outcome of a search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SearchResult<T> {
    /// Closed store ids, ascending.
    #[serde(rename = "closed")]
    pub best_closure_set: Vec<u64>,
    /// Main-evaluator loss of `best_closure_set`.
    #[serde(rename = "loss")]
    pub best_loss_main: T,
    pub fs_calls: u64,
    pub fm_calls: u64,
    /// Re-evaluated children, summed over all passes.
    #[serde(rename = "reevals")]
    pub reevaluated_children: u64,
    #[serde(rename = "reeval_passes")]
    pub reevaluation_invocations: u64,
    #[serde(rename = "iterations")]
    pub iterations_used: u64,
    #[serde(rename = "seconds")]
    pub wall_seconds: f64,
    pub seed: u64,
    #[serde(skip)]
    pub trace: Vec<TraceEvent<T>>,
}

/// True iff all children have equal visit counts, each at least one.
pub fn equally_visited<T: Scalar>(tree: &SearchTree<T>, node: NodeId) -> bool {
    tree.children_equally_visited(node)
}

/// Re-scores overlapping adjacent children of `node` with the main
/// evaluator. `sigma` is in reward units. Returns how many distinct children
/// were re-scored.
pub fn reevaluate_children<T: Scalar>(
    tree: &mut SearchTree<T>,
    node: NodeId,
    network: &StoreNetwork<T>,
    main: &Evaluator<'_, T>,
    sigma: T,
    reward_scale: T,
    trace: &mut Vec<TraceEvent<T>>,
) -> Result<usize> {
    let children = tree.node(node).children.clone();
    if children.len() < 2 {
        return Ok(0);
    }
    let mut ranked = Vec::with_capacity(children.len());
    for &child in &children {
        let value = tree
            .node(child)
            .effective_mean()
            .ok_or_else(|| Error::Search("re-evaluation requires every child to be visited".into()))?;
        ranked.push((value, child));
    }
    // stable: equal values keep store order
    ranked.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite node values"));

    let mut done = vec![false; ranked.len()];
    let mut count = 0;
    for i in 0..ranked.len() - 1 {
        let (low, high) = (ranked[i].0, ranked[i + 1].0);
        if high - sigma < low + sigma {
            for pos in [i + 1, i] {
                if done[pos] {
                    continue;
                }
                let child = ranked[pos].1;
                let state = tree.closure_state(child);
                let reward = -main.evaluate(network, &state)? / reward_scale;
                tree.node_mut(child).record_refinement(reward);
                trace.push(TraceEvent::Refine {
                    path: network.ids_of(&tree.node(child).removed_path),
                    reward,
                });
                done[pos] = true;
                count += 1;
            }
        }
    }
    Ok(count)
}

/// Visited terminal node with the highest effective mean reward.
pub fn best_terminal<T: Scalar, R: Rng + ?Sized>(
    tree: &SearchTree<T>,
    tie_break: TieBreak,
    rng: &mut R,
) -> Result<NodeId> {
    let mut best: Vec<NodeId> = Vec::new();
    let mut best_value = T::neg_infinity();
    for (id, node) in tree.nodes() {
        if !node.terminal {
            continue;
        }
        let Some(value) = node.effective_mean() else {
            continue;
        };
        if value > best_value {
            best_value = value;
            best.clear();
            best.push(id);
        } else if value == best_value {
            best.push(id);
        }
    }
    if best.is_empty() {
        return Err(Error::Search(
            "no terminal node was reached within the budget; increase the iteration or time budget".into(),
        ));
    }
    if tie_break == TieBreak::LowestId {
        let key = |id: &NodeId| {
            let mut set = tree.node(*id).removed_path.clone();
            set.sort_unstable();
            (set, *id)
        };
        best.sort_by_key(key);
    }
    Ok(pick(&best, tie_break, rng))
}

/// Best visited terminal, re-scored once with the main evaluator.
/// Returns `(closed ids ascending, main loss)`.
pub fn extract_solution<T: Scalar, R: Rng + ?Sized>(
    tree: &SearchTree<T>,
    network: &StoreNetwork<T>,
    main: &Evaluator<'_, T>,
    tie_break: TieBreak,
    rng: &mut R,
) -> Result<(Vec<u64>, T)> {
    let node = best_terminal(tree, tie_break, rng)?;
    let state = tree.closure_state(node);
    let loss = main.evaluate(network, &state)?;
    Ok((state.closed_ids(network), loss))
}

/// A configured search over one network. Owns its tree, RNG and counters.
pub struct Searcher<'a, T: Scalar> {
    network: &'a StoreNetwork<T>,
    config: SearchConfig,
    per_iteration: Evaluator<'a, T>,
    /// Main evaluator and σ (reward units) when running SMCTS.
    refinement: Option<(Evaluator<'a, T>, T)>,
    reward_scale: T,
    tree: SearchTree<T>,
    rng: ChaCha8Rng,
    trace: Vec<TraceEvent<T>>,
    reevaluation_invocations: u64,
    reevaluated_children: u64,
}

impl<'a, T: Scalar> Searcher<'a, T> {
    /// SMCTS: per-iteration scores from `surrogate`, refinements and the
    /// final re-score from `main`. `sigma_s` is in loss units.
    pub fn smcts(
        network: &'a StoreNetwork<T>,
        main: &'a dyn LossModel<T>,
        surrogate: &'a dyn LossModel<T>,
        sigma_s: T,
        config: SearchConfig,
    ) -> Result<Self> {
        if !(sigma_s.is_finite() && sigma_s >= T::zero()) {
            return Err(Error::Config(format!("sigma_s must be finite and >= 0, got {sigma_s}")));
        }
        let mut searcher = Self::build(network, surrogate, config)?;
        let sigma = sigma_s / searcher.reward_scale;
        searcher.refinement = Some((Evaluator::new(main), sigma));
        Ok(searcher)
    }

    /// Unassisted MCTS: every evaluation uses `main`, no re-evaluation.
    pub fn mcts(network: &'a StoreNetwork<T>, main: &'a dyn LossModel<T>, config: SearchConfig) -> Result<Self> {
        Self::build(network, main, config)
    }

    fn build(network: &'a StoreNetwork<T>, per_iteration: &'a dyn LossModel<T>, config: SearchConfig) -> Result<Self> {
        config.validate(network.len())?;
        let total = network.total_base_sales();
        let reward_scale = if total > T::zero() { total } else { T::one() };
        let tree = SearchTree::new(network.len(), config.closures)?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            network,
            config,
            per_iteration: Evaluator::new(per_iteration),
            refinement: None,
            reward_scale,
            tree,
            rng,
            trace: Vec::new(),
            reevaluation_invocations: 0,
            reevaluated_children: 0,
        })
    }

    pub fn tree(&self) -> &SearchTree<T> {
        &self.tree
    }

    /// Losses are divided by this before being stored as rewards.
    pub fn reward_scale(&self) -> T {
        self.reward_scale
    }

    fn reevaluation_active(&self) -> bool {
        self.config.reevaluation_enabled && self.refinement.is_some()
    }

    pub fn run(mut self) -> Result<(SearchResult<T>, SearchTree<T>)> {
        let started = Instant::now();
        let budget = self.config.budget_iterations;
        let out_of_time = |started: &Instant| {
            self.config
                .budget_seconds
                .is_some_and(|limit| started.elapsed().as_secs_f64() >= limit)
        };

        self.tree.expand(ROOT)?;
        let mut iterations = 0u64;
        let mut path: Vec<NodeId> = Vec::with_capacity(self.config.closures + 1);
        'budget: loop {
            path.clear();
            path.push(ROOT);
            let mut current = ROOT;
            while !self.tree.node(current).terminal {
                if iterations >= budget || out_of_time(&started) {
                    break 'budget;
                }
                current = self.tree.select_child(current, &self.config, &mut self.rng)?;
                path.push(current);
                if self.tree.node(current).leaf && !self.tree.node(current).terminal {
                    self.tree.expand(current)?;
                }

                let state = self.tree.closure_state(current);
                let loss = self.per_iteration.evaluate(self.network, &state)?;
                let reward = -loss / self.reward_scale;
                {
                    let node = self.tree.node_mut(current);
                    node.evaluations += 1;
                    node.last_loss = Some(loss);
                }
                self.tree.backup(&path, reward)?;
                self.trace.push(TraceEvent::Step {
                    depth: path.len() - 1,
                    store: self.network.id_of(self.tree.node(current).action().expect("non-root")),
                    reward,
                });
                iterations += 1;

                if self.reevaluation_active() && !self.tree.node(current).leaf && equally_visited(&self.tree, current) {
                    let (main, sigma) = self.refinement.as_ref().expect("active refinement");
                    let count = reevaluate_children(
                        &mut self.tree,
                        current,
                        self.network,
                        main,
                        *sigma,
                        self.reward_scale,
                        &mut self.trace,
                    )?;
                    self.reevaluation_invocations += 1;
                    self.reevaluated_children += count as u64;
                }
            }
        }

        let (closed, loss) = match &self.refinement {
            Some((main, _)) => extract_solution(&self.tree, self.network, main, self.config.tie_break, &mut self.rng)?,
            None => {
                // every score of a terminal already came from the main evaluator
                let node = best_terminal(&self.tree, self.config.tie_break, &mut self.rng)?;
                let loss = self.tree.node(node).last_loss.expect("visited terminal");
                (self.tree.closure_state(node).closed_ids(self.network), loss)
            }
        };

        let (fs_calls, fm_calls) = match &self.refinement {
            Some((main, _)) => (self.per_iteration.call_count(), main.call_count()),
            None => (0, self.per_iteration.call_count()),
        };
        let result = SearchResult {
            best_closure_set: closed,
            best_loss_main: loss,
            fs_calls,
            fm_calls,
            reevaluated_children: self.reevaluated_children,
            reevaluation_invocations: self.reevaluation_invocations,
            iterations_used: iterations,
            wall_seconds: started.elapsed().as_secs_f64(),
            seed: self.config.seed,
            trace: self.trace,
        };
        Ok((result, self.tree))
    }
}

/// Runs SMCTS. `sigma_s` is the surrogate error bound in loss units.
pub fn run_smcts<T: Scalar>(
    network: &StoreNetwork<T>,
    main: &dyn LossModel<T>,
    surrogate: &dyn LossModel<T>,
    sigma_s: T,
    config: &SearchConfig,
) -> Result<SearchResult<T>> {
    Ok(Searcher::smcts(network, main, surrogate, sigma_s, config.clone())?
        .run()?
        .0)
}

/// Runs the unassisted MCTS baseline.
pub fn run_mcts<T: Scalar>(
    network: &StoreNetwork<T>,
    main: &dyn LossModel<T>,
    config: &SearchConfig,
) -> Result<SearchResult<T>> {
    Ok(Searcher::mcts(network, main, config.clone())?.run()?.0)
}
