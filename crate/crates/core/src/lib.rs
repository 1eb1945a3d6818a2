//! Incentive allocation on social networks.
//!
//! The crate bundles an agent-based social simulation (users pick the
//! behaviour with the highest utility: preference plus neighbour influence
//! plus any incentive offered for the target behaviour) with a
//! twin-critic actor-critic learner whose networks encode the directed
//! topology through GraphSage and DIFFPOOL layers.

pub mod baselines;
pub mod error;
pub mod gnn;
pub mod graph;
pub mod policy;
pub mod simenv;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::{AdjacencyPair, DirectedSocialNetwork};
pub use simenv::{EnvState, Environment, Population, StepLog};
pub use tensor::DenseMatrix;
