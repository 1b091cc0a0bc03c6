use std::path::Path;

use crate::data::{dirichlet_partition, generate_blobs, load_idx, LabeledDataset, PartitionConfig};
use crate::error::{Error, Result};
use crate::federation::{Federation, FederationState, RoundMetrics};
use crate::model::{EncoderKind, Network};
use crate::seed::{derive_seed, stream};

use super::metrics::{DerivedSeeds, FinalSummary, MetricsWriter, RunRecord, METRICS_FILE, RUN_RECORD_FILE};
use super::{DatasetConfig, ExperimentConfig};

/// A fully prepared experiment: data generated, split and partitioned,
/// network built. Nothing has been trained yet.
#[derive(Debug, Clone)]
pub struct Experiment {
    config: ExperimentConfig,
    seeds: DerivedSeeds,
    federation: Federation,
}

impl Experiment {
    pub fn prepare(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let seeds = DerivedSeeds {
            data: derive_seed(config.seed, &[stream::DATA]),
            split: derive_seed(config.seed, &[stream::SPLIT]),
            partition: derive_seed(config.seed, &[stream::PARTITION]),
            init: derive_seed(config.seed, &[stream::INIT]),
        };
        let (train, test) = load_dataset(config, &seeds)?;
        let (train, test) = match config.network.encoder {
            EncoderKind::Mlp => (train.flattened(), test.flattened()),
            EncoderKind::SmallCnn => (train, test),
        };
        if test.num_classes() > train.num_classes() {
            return Err(Error::Config("test set has classes the training set lacks".into()));
        }
        let clients = dirichlet_partition(
            &train,
            &PartitionConfig {
                num_clients: config.num_clients,
                beta: config.beta,
                seed: seeds.partition,
            },
        )?;
        let spec = config.network_spec(train.sample_shape(), train.num_classes());
        let network = Network::new(spec)?;
        let federation = Federation::new(network, clients, test, config.local_training(), config.sample_rate)?
            .with_parallel(config.parallel);
        Ok(Experiment {
            config: config.clone(),
            seeds,
            federation,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn federation(&self) -> &Federation {
        &self.federation
    }

    pub fn seeds(&self) -> &DerivedSeeds {
        &self.seeds
    }

    /// Runs all `T` rounds, handing each round's metrics and new state to
    /// `on_round` before starting the next.
    pub fn run_with<F>(&self, mut on_round: F) -> Result<(Vec<RoundMetrics>, FederationState)>
    where
        F: FnMut(&RoundMetrics, &FederationState) -> Result<()>,
    {
        let mut state = self.federation.initial_state()?;
        let mut history = Vec::with_capacity(self.config.rounds);
        for t in 0..self.config.rounds {
            let (next, metrics) = self.federation.run_round(t, &state)?;
            on_round(&metrics, &next)?;
            history.push(metrics);
            state = next;
        }
        Ok((history, state))
    }

    /// Runs without writing anything.
    pub fn run_in_memory(&self) -> Result<(Vec<RoundMetrics>, FederationState)> {
        self.run_with(|_, _| Ok(()))
    }

    /// Runs and writes `metrics.csv`, `run.json` and optional checkpoints
    /// under `dir`.
    pub fn run_to_dir(&self, dir: &Path) -> Result<Vec<RoundMetrics>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let mut record = RunRecord {
            config: self.config.clone(),
            seeds: self.seeds.clone(),
            client_sizes: self.federation.clients().iter().map(|c| c.len()).collect(),
            summary: None,
        };
        record.write(&dir.join(RUN_RECORD_FILE))?;
        let mut writer = MetricsWriter::create(&dir.join(METRICS_FILE))?;
        let checkpoint_dir = dir.join("checkpoints");
        if self.config.checkpoints {
            std::fs::create_dir_all(&checkpoint_dir)
                .map_err(|e| Error::io(format!("creating {}", checkpoint_dir.display()), e))?;
        }
        let (history, _) = self.run_with(|m, state| {
            writer.append(m)?;
            if self.config.checkpoints {
                state
                    .global_params
                    .save(&checkpoint_dir.join(format!("round_{:04}.fpck", m.round)))?;
            }
            Ok(())
        })?;
        let last = history.last().expect("at least one round");
        record.summary = Some(FinalSummary {
            rounds_completed: history.len(),
            top1_accuracy: last.top1_accuracy,
            top1_std: last.top1_std,
        });
        record.write(&dir.join(RUN_RECORD_FILE))?;
        Ok(history)
    }
}

fn load_dataset(config: &ExperimentConfig, seeds: &DerivedSeeds) -> Result<(LabeledDataset, LabeledDataset)> {
    match &config.dataset {
        DatasetConfig::Blobs {
            classes,
            dim,
            per_class,
            spread,
            test_fraction,
        } => generate_blobs(*classes, *dim, *per_class, *spread, seeds.data)?.split(*test_fraction, seeds.split),
        DatasetConfig::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => Ok((
            load_idx(train_images, train_labels)?,
            load_idx(test_images, test_labels)?,
        )),
    }
}

/// Prepares and runs `cfg`, writing outputs to its resolved output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RoundMetrics>> {
    let experiment = Experiment::prepare(cfg)?;
    experiment.run_to_dir(&cfg.resolved_output_dir())
}
