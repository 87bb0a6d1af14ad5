//! Model-free entropy-regularized inverse reinforcement learning on finite MDPs.
//!
//! The learning algorithm ([`irl::run_irl`]) pairs stochastic soft policy
//! iteration on the policy with projected stochastic gradient descent on a
//! linear reward, using only generative-model access ([`sampling`]). The
//! [`solver`] module provides exact dynamic-programming oracles used to build
//! experts and score recovered rewards ([`metrics`]).

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod env;
pub mod error;
pub mod io;
pub mod irl;
pub mod mdp;
pub mod metrics;
pub mod sampling;
pub mod solver;
pub mod verify;

pub use env::EnvironmentBundle;
pub use error::{Error, Result};
pub use irl::{run_irl, IrlConfig, IrlTrace, Stepsize, StepsizeRule};
pub use mdp::{
    reward_of, shannon_entropy, validate_mdp, FeatureMap, Mdp, MdpParts, Policy, RewardTable, RewardWeights,
    ValidationReport,
};
pub use metrics::MetricReport;
pub use sampling::{GenerativeModel, RngStream, Simulator};
pub use solver::{OccupancyPair, ValuePair};
