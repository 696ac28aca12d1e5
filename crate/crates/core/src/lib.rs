//! Learning structured-decomposable probabilistic circuits from binary data.
//!
//! The pipeline starts from a Chow-Liu tree, extracts a vtree from it,
//! compiles the tree into a smooth, deterministic circuit normalized for that
//! vtree, and then grows the circuit greedily with split operations guided
//! by circuit flows. Circuits sharing one structure can be combined into
//! mixtures whose likelihoods reuse a single flow computation.

pub mod bits;
pub mod circuit;
pub mod cli;
pub mod cltree;
pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod flows;
pub mod logspace;
pub mod search;
pub mod vtree;

pub use circuit::{check_structure, compile_clt, Circuit, Node, NodeId, StructureReport};
pub use cltree::{estimate_mi, learn_clt, ChowLiuTree, MutualInfoMatrix};
pub use dataset::Dataset;
pub use ensemble::{bem_fit, em_fit, EmConfig, SharedMixture};
pub use error::{Error, Result};
pub use flows::{aggregate_flows, compute_flows, log_likelihood, mixture_log_likelihood, AggregateFlows, FlowMatrix};
pub use search::{strudel_learn, Heuristic, SearchConfig};
pub use vtree::Vtree;

/// Bits per dimension: `-sum(LL) / (ln 2 * |D| * m)`.
pub fn bits_per_dimension(total_ll: f64, num_samples: f64, num_vars: usize) -> f64 {
    -total_ll / (std::f64::consts::LN_2 * num_samples * num_vars as f64)
}
