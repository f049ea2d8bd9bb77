//! Search tree over removal sequences.
//!
//! A node is the ordered list of stores removed on the path from the root;
//! depth-`M` nodes are terminal. Each node carries its regular statistics
//! `(value_sum, visits)` and a duplicate refined set that is populated once
//! the node has been re-scored by the main evaluator. Selection reads the
//! refined set of re-evaluated nodes.
//!
//! Node values are rewards (`-loss / reward_scale`), so selection maximizes.
//! Permutations of the same removal set are distinct nodes.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{ClosureState, StoreNetwork};
use crate::scalar::Scalar;

pub type NodeId = usize;

pub const ROOT: NodeId = 0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UcbVariant {
    /// `mean + C·sqrt(N_p / N_s)`, no logarithm.
    #[default]
    Paper,
    /// Classic UCB1, `mean + C·sqrt(ln N_p / N_s)`.
    Log,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    #[default]
    LowestId,
    RandomSeeded,
}

/// Search parameters. `closures` is M, the number of stores to remove.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub closures: usize,
    pub exploration_c: f64,
    pub budget_iterations: u64,
    pub budget_seconds: Option<f64>,
    pub seed: u64,
    pub ucb_variant: UcbVariant,
    pub tie_break: TieBreak,
    pub reevaluation_enabled: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            closures: 1,
            exploration_c: 1.0,
            budget_iterations: 5_000,
            budget_seconds: None,
            seed: 0,
            ucb_variant: UcbVariant::Paper,
            tie_break: TieBreak::LowestId,
            reevaluation_enabled: true,
        }
    }
}

impl SearchConfig {
    pub fn with_closures(closures: usize) -> Self {
        Self {
            closures,
            ..Self::default()
        }
    }

    /// Checks the config against a network of `store_count` stores.
    pub fn validate(&self, store_count: usize) -> Result<()> {
        if self.closures == 0 {
            return Err(Error::Config("number of closures M must be >= 1".into()));
        }
        if self.closures >= store_count {
            return Err(Error::Config(format!(
                "number of closures M = {} must be smaller than the number of stores N = {}",
                self.closures, store_count
            )));
        }
        if self.budget_iterations == 0 {
            return Err(Error::Config("iteration budget must be >= 1".into()));
        }
        if let Some(seconds) = self.budget_seconds {
            if !(seconds.is_finite() && seconds > 0.0) {
                return Err(Error::Config(format!("time budget must be > 0 s, got {seconds}")));
            }
        }
        if !(self.exploration_c.is_finite() && self.exploration_c >= 0.0) {
            return Err(Error::Config(format!(
                "exploration constant C must be >= 0, got {}",
                self.exploration_c
            )));
        }
        Ok(())
    }
}

/// UCB1 score of a child. Visit counts are scalars so that fractional
/// parent counts are admissible.
pub fn ucb1_score<T: Scalar>(mean: T, visits: T, parent_visits: T, exploration_c: T, variant: UcbVariant) -> Result<T> {
    if !(visits >= T::one() && parent_visits >= T::one()) {
        return Err(Error::Search(format!(
            "UCB1 needs visits >= 1 (node {visits}, parent {parent_visits}); unvisited children are selected first"
        )));
    }
    let ratio = match variant {
        UcbVariant::Paper => parent_visits / visits,
        UcbVariant::Log => parent_visits.ln() / visits,
    };
    Ok(mean + exploration_c * ratio.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchNode<T> {
    /// Store indices removed from the root to this node, in order.
    pub removed_path: Vec<usize>,
    pub value_sum: T,
    pub visits: u64,
    pub refined_value_sum: T,
    pub refined_visits: u64,
    pub reevaluated: bool,
    /// Child ids, ordered by the removed store's index.
    pub children: Vec<NodeId>,
    pub terminal: bool,
    pub leaf: bool,
    /// Primary (per-iteration) evaluations of this node itself.
    pub evaluations: u64,
    /// Loss returned by the most recent primary evaluation.
    pub last_loss: Option<T>,
    pub parent: Option<NodeId>,
}

impl<T: Scalar> SearchNode<T> {
    fn new(removed_path: Vec<usize>, terminal: bool, parent: Option<NodeId>) -> Self {
        Self {
            removed_path,
            value_sum: T::zero(),
            visits: 0,
            refined_value_sum: T::zero(),
            refined_visits: 0,
            reevaluated: false,
            children: Vec::new(),
            terminal,
            leaf: true,
            evaluations: 0,
            last_loss: None,
            parent,
        }
    }

    pub fn depth(&self) -> usize {
        self.removed_path.len()
    }

    /// Store index removed by the edge into this node.
    pub fn action(&self) -> Option<usize> {
        self.removed_path.last().copied()
    }

    pub fn mean(&self) -> Option<T> {
        (self.visits > 0).then(|| self.value_sum / T::of_count(self.visits))
    }

    pub fn refined_mean(&self) -> Option<T> {
        (self.refined_visits > 0).then(|| self.refined_value_sum / T::of_count(self.refined_visits))
    }

    /// Mean read by selection: refined once re-evaluated.
    pub fn effective_mean(&self) -> Option<T> {
        if self.reevaluated {
            self.refined_mean()
        } else {
            self.mean()
        }
    }

    pub fn effective_visits(&self) -> u64 {
        if self.reevaluated {
            self.refined_visits
        } else {
            self.visits
        }
    }

    /// Adds a main-evaluator score to the refined statistics.
    pub fn record_refinement(&mut self, reward: T) {
        self.reevaluated = true;
        self.refined_visits += 1;
        self.refined_value_sum += reward;
    }

    pub fn closure_state(&self, store_count: usize) -> ClosureState {
        ClosureState::from_indices(store_count, self.removed_path.iter().copied())
            .expect("tree paths hold distinct in-range stores")
    }
}

/// One line of the debugging dump.
#[derive(Debug, Serialize, Deserialize)]
pub struct NodeDump {
    pub path: Vec<u64>,
    pub visits: u64,
    pub mean: Option<f64>,
    pub refined_mean: Option<f64>,
    pub reevaluated: bool,
}

/// Arena-backed search tree rooted at the all-open network.
#[derive(Clone, Debug)]
pub struct SearchTree<T> {
    nodes: Vec<SearchNode<T>>,
    store_count: usize,
    closures: usize,
}

impl<T: Scalar> SearchTree<T> {
    pub fn new(store_count: usize, closures: usize) -> Result<Self> {
        if closures == 0 || closures >= store_count {
            return Err(Error::Config(format!(
                "need 1 <= M < N, got M = {closures}, N = {store_count}"
            )));
        }
        Ok(Self {
            nodes: vec![SearchNode::new(Vec::new(), false, None)],
            store_count,
            closures,
        })
    }

    pub fn store_count(&self) -> usize {
        self.store_count
    }

    pub fn closures(&self) -> usize {
        self.closures
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &SearchNode<T> {
        &self.nodes[id]
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut SearchNode<T> {
        &mut self.nodes[id]
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, &SearchNode<T>)> {
        self.nodes.iter().enumerate()
    }

    /// Creates one child per store not yet removed on the path.
    pub fn expand(&mut self, id: NodeId) -> Result<()> {
        let node = &self.nodes[id];
        if node.terminal {
            return Err(Error::Search(format!(
                "cannot expand terminal node at depth {}",
                node.depth()
            )));
        }
        if !node.leaf {
            return Err(Error::Search("node already expanded".into()));
        }
        let mut removed = vec![false; self.store_count];
        for &s in &node.removed_path {
            removed[s] = true;
        }
        let base_path = node.removed_path.clone();
        let child_terminal = base_path.len() + 1 == self.closures;

        let mut children = Vec::with_capacity(self.store_count - base_path.len());
        for store in (0..self.store_count).filter(|&s| !removed[s]) {
            let mut path = base_path.clone();
            path.push(store);
            children.push(self.nodes.len());
            self.nodes.push(SearchNode::new(path, child_terminal, Some(id)));
        }
        let node = &mut self.nodes[id];
        node.children = children;
        node.leaf = false;
        Ok(())
    }

    /// Adds `reward` to every node on `path`. Nodes that have been
    /// re-evaluated also accumulate it into their refined statistics.
    pub fn backup(&mut self, path: &[NodeId], reward: T) -> Result<()> {
        if path.is_empty() {
            return Err(Error::Search("backup along an empty path".into()));
        }
        for &id in path {
            let node = &mut self.nodes[id];
            node.visits += 1;
            node.value_sum += reward;
            if node.reevaluated {
                node.refined_visits += 1;
                node.refined_value_sum += reward;
            }
        }
        Ok(())
    }

    /// Picks the child to descend into: unvisited children first, otherwise
    /// the UCB1 argmax over effective statistics.
    pub fn select_child<R: Rng + ?Sized>(&self, id: NodeId, config: &SearchConfig, rng: &mut R) -> Result<NodeId> {
        let node = &self.nodes[id];
        if node.children.is_empty() {
            return Err(Error::Search(format!(
                "select on node at depth {} with no children",
                node.depth()
            )));
        }

        let unvisited: Vec<NodeId> = node
            .children
            .iter()
            .copied()
            .filter(|&c| self.nodes[c].visits == 0)
            .collect();
        if !unvisited.is_empty() {
            return Ok(pick(&unvisited, config.tie_break, rng));
        }

        let parent_visits = T::of_count(node.effective_visits().max(1));
        let c = T::of(config.exploration_c);
        let mut best: Vec<NodeId> = Vec::new();
        let mut best_score = T::neg_infinity();
        for &child in &node.children {
            let stats = &self.nodes[child];
            let mean = stats.effective_mean().unwrap_or_else(T::zero);
            let visits = T::of_count(stats.effective_visits());
            let score = ucb1_score(mean, visits, parent_visits, c, config.ucb_variant)?;
            if score > best_score {
                best_score = score;
                best.clear();
                best.push(child);
            } else if score == best_score {
                best.push(child);
            }
        }
        Ok(pick(&best, config.tie_break, rng))
    }

    /// True iff every child has the same visit count and that count is >= 1.
    pub fn children_equally_visited(&self, id: NodeId) -> bool {
        let node = &self.nodes[id];
        let mut counts = node.children.iter().map(|&c| self.nodes[c].visits);
        match counts.next() {
            Some(first) if first >= 1 => counts.all(|v| v == first),
            _ => false,
        }
    }

    /// Ids from the root down to `id`, inclusive.
    pub fn path_to(&self, id: NodeId) -> Vec<NodeId> {
        let mut path = vec![id];
        let mut cursor = id;
        while let Some(parent) = self.nodes[cursor].parent {
            path.push(parent);
            cursor = parent;
        }
        path.reverse();
        path
    }

    pub fn closure_state(&self, id: NodeId) -> ClosureState {
        self.nodes[id].closure_state(self.store_count)
    }

    /// Writes one JSON object per node, paths as store ids.
    pub fn dump_jsonl<W: Write>(&self, network: &StoreNetwork<T>, mut out: W) -> Result<()> {
        for node in &self.nodes {
            let line = NodeDump {
                path: network.ids_of(&node.removed_path),
                visits: node.visits,
                mean: node.mean().map(Scalar::as_f64),
                refined_mean: node.refined_mean().map(Scalar::as_f64),
                reevaluated: node.reevaluated,
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n").map_err(|e| Error::io("tree dump", e))?;
        }
        Ok(())
    }
}

/// `candidates` is non-empty and in ascending store order.
pub(crate) fn pick<R: Rng + ?Sized>(candidates: &[NodeId], tie_break: TieBreak, rng: &mut R) -> NodeId {
    match tie_break {
        TieBreak::LowestId => candidates[0],
        TieBreak::RandomSeeded if candidates.len() == 1 => candidates[0],
        TieBreak::RandomSeeded => candidates[rng.random_range(0..candidates.len())],
    }
}
