//! Deterministic simulator for prototypical contrastive federated learning.
//!
//! Clients train a local network (encoder, projection head, output layer)
//! on a blend of a prototype-contrastive loss and cross-entropy; the server
//! averages client prototypes per class and client weights by data size.
//! FedAvg and SOLO baselines run on the same machinery.

pub mod autograd;
pub mod data;
pub mod error;
pub mod federation;
pub mod gradcheck;
pub mod harness;
pub mod layers;
pub mod losses;
pub mod model;
pub mod params;
pub mod prototype;
pub mod seed;
pub mod tensor;

pub use error::{Error, Result};
pub use federation::{Federation, FederationState, RoundMetrics, StrategyKind};
pub use harness::{run_experiment, Experiment, ExperimentConfig};
pub use model::{build_network, EncoderKind, ForwardActivations, Network, NetworkSpec};
pub use params::{sgd_step, GradientSet, ModelParameters};
pub use prototype::PrototypeSet;
pub use tensor::Tensor;
