//! The federated protocol: local training, prototype and weight
//! aggregation, client sampling, and the per-round driver.

mod aggregate;
mod client;
mod round;
mod sampling;

pub use aggregate::{aggregate_prototypes, aggregate_prototypes_or_keep, aggregate_weights};
pub use client::{
    client_local_training, compute_prototypes, loss_and_gradients, ClientUpdate, LocalTrainingConfig, Objective,
    EVAL_CHUNK,
};
pub use round::{Federation, FederationState, RoundMetrics};
pub use sampling::sample_clients;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    /// Blended prototypical contrastive + cross-entropy objective.
    FedProc,
    /// Cross-entropy only; prototypes ignored.
    FedAvg,
    /// Cross-entropy, no aggregation: every client keeps its own model.
    Solo,
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StrategyKind::FedProc => "fedproc",
            StrategyKind::FedAvg => "fedavg",
            StrategyKind::Solo => "solo",
        })
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fedproc" => Ok(StrategyKind::FedProc),
            "fedavg" => Ok(StrategyKind::FedAvg),
            "solo" => Ok(StrategyKind::Solo),
            other => Err(Error::Config(format!("unknown strategy {other:?}"))),
        }
    }
}
