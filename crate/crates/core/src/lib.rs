//! Surrogate-assisted Monte Carlo tree search for choosing which `M` of `N`
//! retail stores to close with the least network sales loss.
//!
//! The solver pairs a cheap surrogate loss estimate, used on every tree
//! iteration, with an accurate main evaluator that re-scores sibling nodes
//! whose surrogate values are too close to call.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`). The
//! aliases at the crate root fix the scalar to `f64`; the `*32` aliases
//! use `f32`.

pub mod bench;
pub mod error;
pub mod evaluation;
pub mod ingest;
pub mod network;
pub mod scalar;
pub mod search;
pub mod tree;

pub use error::{Error, Result};
pub use evaluation::{AsSurrogate, Evaluator, Fidelity, LossModel, MainModel, NaiveSurrogate};
pub use network::{haversine_miles, ClosureState, LatLon};
pub use scalar::Scalar;
pub use search::{run_mcts, run_smcts, TraceEvent};
pub use tree::{SearchConfig, TieBreak, UcbVariant};

pub type StoreRecord = network::StoreRecord<f64>;
pub type StoreNetwork = network::StoreNetwork<f64>;
pub type NoisySurrogate = evaluation::NoisySurrogate<f64>;
pub type CalibrationReport = evaluation::CalibrationReport<f64>;
pub type SearchNode = tree::SearchNode<f64>;
pub type SearchTree = tree::SearchTree<f64>;
pub type SearchResult = search::SearchResult<f64>;
pub type Searcher<'a> = search::Searcher<'a, f64>;

pub type StoreRecord32 = network::StoreRecord<f32>;
pub type StoreNetwork32 = network::StoreNetwork<f32>;
pub type NoisySurrogate32 = evaluation::NoisySurrogate<f32>;
pub type SearchResult32 = search::SearchResult<f32>;
