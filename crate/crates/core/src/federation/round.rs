use rayon::prelude::*;

use crate::data::{ClientDataset, LabeledDataset};
use crate::error::{Error, Result};
use crate::harness::evaluate;
use crate::losses::alpha;
use crate::model::Network;
use crate::params::ModelParameters;
use crate::prototype::PrototypeSet;
use crate::seed::{derive_seed, stream};

use super::{
    aggregate_prototypes, aggregate_prototypes_or_keep, aggregate_weights, client_local_training, compute_prototypes,
    sample_clients, ClientUpdate, LocalTrainingConfig, StrategyKind,
};

/// Server-side state between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct FederationState {
    /// `w^t`. Under SOLO this stays at the shared initialization.
    pub global_params: ModelParameters,
    /// `c^t`; only FedProc maintains it.
    pub global_prototypes: Option<PrototypeSet>,
    /// SOLO only: each client's private model, indexed by client id.
    pub solo_params: Option<Vec<ModelParameters>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    /// Scheduled blend weight `1 − t/T` for this round.
    pub alpha: f64,
    /// Unweighted mean over participants of their last-epoch loss.
    pub mean_train_loss: f64,
    /// Global model accuracy, or the mean over client models under SOLO.
    pub top1_accuracy: f64,
    /// Standard deviation across client models under SOLO, else 0.
    pub top1_std: f64,
    pub participants: Vec<usize>,
}

/// A simulated federation: the network, the client shards, and the
/// server's held-out test set.
#[derive(Debug, Clone)]
pub struct Federation {
    network: Network,
    clients: Vec<ClientDataset>,
    test: LabeledDataset,
    local: LocalTrainingConfig,
    gamma: f64,
    parallel: bool,
}

impl Federation {
    pub fn new(
        network: Network,
        clients: Vec<ClientDataset>,
        test: LabeledDataset,
        local: LocalTrainingConfig,
        gamma: f64,
    ) -> Result<Self> {
        local.validate()?;
        if clients.is_empty() {
            return Err(Error::Config("federation needs at least one client".into()));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::Config(format!("sampling rate must be in (0, 1], got {gamma}")));
        }
        for (i, c) in clients.iter().enumerate() {
            if c.client_id != i {
                return Err(Error::Config(format!("client at position {i} has id {}", c.client_id)));
            }
        }
        Ok(Federation {
            network,
            clients,
            test,
            local,
            gamma,
            parallel: true,
        })
    }

    /// Runs client training serially instead of on the rayon pool.
    pub fn with_parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn clients(&self) -> &[ClientDataset] {
        &self.clients
    }

    pub fn test_set(&self) -> &LabeledDataset {
        &self.test
    }

    pub fn local_config(&self) -> &LocalTrainingConfig {
        &self.local
    }

    pub fn strategy(&self) -> StrategyKind {
        self.local.strategy
    }

    /// `w^0` from the experiment seed and, for FedProc, `c^0`: every client
    /// computes prototypes under `w^0` and the server averages them.
    pub fn initial_state(&self) -> Result<FederationState> {
        let w0 = self.network.init_params(derive_seed(self.local.seed, &[stream::INIT]));
        let global_prototypes = match self.local.strategy {
            StrategyKind::FedProc => {
                let updates = self
                    .map_clients(&(0..self.clients.len()).collect::<Vec<_>>(), |c| {
                        Ok(ClientUpdate {
                            client_id: c.client_id,
                            new_params: w0.clone(),
                            new_prototypes: compute_prototypes(&self.network, &w0, c)?,
                            num_samples: c.len(),
                            mean_train_loss: 0.0,
                        })
                    })
                    .map_err(|e| e.with_context("initial prototypes"))?;
                Some(aggregate_prototypes(&updates).map_err(|e| e.with_context("initial prototypes"))?)
            }
            _ => None,
        };
        let solo_params = (self.local.strategy == StrategyKind::Solo).then(|| vec![w0.clone(); self.clients.len()]);
        Ok(FederationState {
            global_params: w0,
            global_prototypes,
            solo_params,
        })
    }

    fn map_clients<F>(&self, ids: &[usize], f: F) -> Result<Vec<ClientUpdate>>
    where
        F: Fn(&ClientDataset) -> Result<ClientUpdate> + Sync,
    {
        let run = |&i: &usize| f(&self.clients[i]);
        if self.parallel {
            ids.par_iter().map(run).collect()
        } else {
            ids.iter().map(run).collect()
        }
    }

    /// One communication round: sample, train locally from a shared
    /// snapshot, aggregate over the participants, and evaluate.
    pub fn run_round(&self, round: usize, state: &FederationState) -> Result<(FederationState, RoundMetrics)> {
        let ctx = |e: Error| e.with_context(format!("round {round}"));
        let scheduled_alpha = alpha(round, self.local.total_rounds).map_err(ctx)?;
        let strategy = self.local.strategy;

        let participants = if strategy == StrategyKind::Solo {
            (0..self.clients.len()).collect()
        } else {
            let seed = derive_seed(self.local.seed, &[stream::SAMPLING, round as u64]);
            sample_clients(self.clients.len(), self.gamma, seed).map_err(ctx)?
        };

        let updates = self
            .map_clients(&participants, |c| {
                let start = match &state.solo_params {
                    Some(models) => &models[c.client_id],
                    None => &state.global_params,
                };
                client_local_training(
                    &self.network,
                    c.client_id,
                    round,
                    start,
                    state.global_prototypes.as_ref(),
                    c,
                    &self.local,
                )
            })
            .map_err(ctx)?;

        let mean_train_loss = updates.iter().map(|u| u.mean_train_loss).sum::<f64>() / updates.len() as f64;

        let (next, top1_accuracy, top1_std) = match strategy {
            StrategyKind::Solo => {
                let models: Vec<ModelParameters> = updates.into_iter().map(|u| u.new_params).collect();
                let accs = models
                    .iter()
                    .map(|p| evaluate(&self.network, p, &self.test))
                    .collect::<Result<Vec<_>>>()
                    .map_err(ctx)?;
                let (mean, std) = mean_std(&accs);
                let next = FederationState {
                    global_params: state.global_params.clone(),
                    global_prototypes: None,
                    solo_params: Some(models),
                };
                (next, mean, std)
            }
            StrategyKind::FedProc | StrategyKind::FedAvg => {
                let global_prototypes = match &state.global_prototypes {
                    Some(prev) if strategy == StrategyKind::FedProc => {
                        Some(aggregate_prototypes_or_keep(&updates, prev).map_err(ctx)?)
                    }
                    _ => None,
                };
                let global_params = aggregate_weights(&updates).map_err(ctx)?;
                let acc = evaluate(&self.network, &global_params, &self.test).map_err(ctx)?;
                let next = FederationState {
                    global_params,
                    global_prototypes,
                    solo_params: None,
                };
                (next, acc, 0.0)
            }
        };

        Ok((
            next,
            RoundMetrics {
                round,
                alpha: scheduled_alpha,
                mean_train_loss,
                top1_accuracy,
                top1_std,
                participants,
            },
        ))
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
