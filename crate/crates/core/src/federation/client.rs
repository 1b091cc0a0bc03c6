use std::sync::Arc;

use crate::autograd::Graph;
use crate::data::{batches, ClientDataset};
use crate::error::{Error, Result};
use crate::losses::alpha;
use crate::model::Network;
use crate::params::{sgd_step_in_place, GradientSet, ModelParameters};
use crate::prototype::{PrototypeSet, UnitPrototypes};
use crate::seed::{derive_seed, stream};

use super::StrategyKind;

/// Rows per forward pass when computing prototypes or accuracy.
pub const EVAL_CHUNK: usize = 512;

/// What a client sends back at the end of its local phase.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub new_params: ModelParameters,
    pub new_prototypes: PrototypeSet,
    pub num_samples: usize,
    /// Mean batch loss over the last local epoch.
    pub mean_train_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalTrainingConfig {
    pub strategy: StrategyKind,
    pub epochs: usize,
    pub batch_size: usize,
    /// Zero turns local training into a no-op.
    pub learning_rate: f64,
    pub total_rounds: usize,
    /// Debug: replaces the `1 − t/T` blend weight.
    pub alpha_override: Option<f64>,
    pub seed: u64,
}

impl LocalTrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.total_rounds == 0 {
            return Err(Error::Config("epochs, batch size and rounds must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        if let Some(a) = self.alpha_override {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Config(format!("alpha override must be in [0, 1], got {a}")));
            }
        }
        Ok(())
    }

    /// Blend weight used in round `t`.
    pub fn alpha(&self, round: usize) -> Result<f64> {
        match self.alpha_override {
            Some(a) => Ok(a),
            None => alpha(round, self.total_rounds),
        }
    }
}

/// The per-batch training objective.
#[derive(Debug, Clone)]
pub enum Objective {
    CrossEntropy,
    Blended {
        alpha: f64,
        prototypes: Arc<UnitPrototypes>,
    },
}

/// Mean batch loss and its gradient with respect to every parameter.
pub fn loss_and_gradients(
    network: &Network,
    params: &ModelParameters,
    ds: &ClientDataset,
    batch: &[usize],
    objective: &Objective,
) -> Result<(f64, GradientSet)> {
    let labels = ds.data.batch_labels(batch);
    let mut g = Graph::new();
    let vars = g.params(params);
    let x = g.input(ds.data.batch_tensor(batch));
    let (_, z, s) = network.record(&mut g, &vars, x)?;
    let loss = match objective {
        Objective::CrossEntropy => g.cross_entropy(s, &labels)?,
        Objective::Blended { alpha, prototypes } => {
            let gpc = g.gpc(z, &labels, prototypes)?;
            let ce = g.cross_entropy(s, &labels)?;
            let a = g.scale(gpc, *alpha);
            let b = g.scale(ce, 1.0 - alpha);
            g.add(a, b)?
        }
    };
    let value = g.value(loss).data()[0];
    Ok((value, g.backward(loss, params)?))
}

/// Per-class mean of the projected representation over the client's data.
/// Classes the client does not hold are left absent.
pub fn compute_prototypes(network: &Network, params: &ModelParameters, ds: &ClientDataset) -> Result<PrototypeSet> {
    let q = network.spec().projection_dim;
    let k = ds.data.num_classes();
    let mut sums = vec![vec![0.0; q]; k];
    let indices: Vec<usize> = (0..ds.len()).collect();
    for chunk in indices.chunks(EVAL_CHUNK) {
        let z = network.extract_representation(params, &ds.data.batch_tensor(chunk))?;
        for (row, &i) in chunk.iter().enumerate() {
            let y = ds.data.labels()[i];
            for (s, v) in sums[y].iter_mut().zip(z.row(row)) {
                *s += v;
            }
        }
    }
    let mut out = PrototypeSet::empty(k, q);
    for (class, sum) in sums.into_iter().enumerate() {
        let n = ds.class_members(class).len();
        if n > 0 {
            out.set(class, sum.into_iter().map(|s| s / n as f64).collect())?;
        }
    }
    Ok(out)
}

/// Runs `E` epochs of mini-batch SGD from `global_params`, then recomputes
/// the client's prototypes with the final weights.
///
/// `global_prototypes` is required for FedProc and ignored otherwise.
pub fn client_local_training(
    network: &Network,
    client_id: usize,
    round: usize,
    global_params: &ModelParameters,
    global_prototypes: Option<&PrototypeSet>,
    ds: &ClientDataset,
    cfg: &LocalTrainingConfig,
) -> Result<ClientUpdate> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::Protocol(format!("client {client_id} has no data")));
    }
    let ctx = |e: Error| e.with_context(format!("client {client_id}, round {round}"));
    let objective = match cfg.strategy {
        StrategyKind::FedProc => {
            let protos = global_prototypes
                .ok_or_else(|| Error::Protocol("fedproc local training needs global prototypes".into()))
                .map_err(ctx)?;
            Objective::Blended {
                alpha: cfg.alpha(round).map_err(ctx)?,
                prototypes: Arc::new(UnitPrototypes::new(protos).map_err(ctx)?),
            }
        }
        StrategyKind::FedAvg | StrategyKind::Solo => Objective::CrossEntropy,
    };

    let mut params = global_params.clone();
    let mut last_epoch_loss = 0.0;
    for epoch in 0..cfg.epochs {
        let epoch_seed = derive_seed(
            cfg.seed,
            &[stream::CLIENT, round as u64, client_id as u64, epoch as u64],
        );
        let epoch_batches = batches(ds, cfg.batch_size, epoch_seed)?;
        let mut total = 0.0;
        for (b, batch) in epoch_batches.iter().enumerate() {
            let (loss, grads) = loss_and_gradients(network, &params, ds, batch, &objective)
                .map_err(|e| ctx(e.with_context(format!("epoch {epoch}, batch {b}"))))?;
            if cfg.learning_rate > 0.0 {
                sgd_step_in_place(&mut params, &grads, cfg.learning_rate)?;
            }
            total += loss;
        }
        last_epoch_loss = total / epoch_batches.len() as f64;
    }

    let new_prototypes = compute_prototypes(network, &params, ds).map_err(ctx)?;
    Ok(ClientUpdate {
        client_id,
        new_params: params,
        new_prototypes,
        num_samples: ds.len(),
        mean_train_loss: last_epoch_loss,
    })
}
