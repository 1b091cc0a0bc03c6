use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use super::{ClientDataset, LabeledDataset};
use crate::error::{Error, Result};
use crate::seed::derive_seed;

/// Full re-draws attempted before giving up on a partition with an empty client.
pub const MAX_PARTITION_RETRIES: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionConfig {
    pub num_clients: usize,
    pub beta: f64,
    pub seed: u64,
}

impl PartitionConfig {
    fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::Config("need at least one client".into()));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::Config(format!(
                "dirichlet beta must be positive, got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

/// Dirichlet(β, …, β) draw via normalized Gamma(β, 1) variates.
fn dirichlet(rng: &mut ChaCha8Rng, m: usize, beta: f64) -> Vec<f64> {
    let gamma = Gamma::new(beta, 1.0).expect("beta validated positive");
    loop {
        let draws: Vec<f64> = (0..m).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        // every component can underflow for tiny beta
        if total > 0.0 && total.is_finite() {
            return draws.into_iter().map(|g| g / total).collect();
        }
    }
}

/// Splits `count` items by `shares` with largest-remainder rounding.
/// Remainder ties go to the lower client index.
fn largest_remainder(count: usize, shares: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = shares.iter().map(|p| p * count as f64).collect();
    let mut alloc: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = alloc.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(count.saturating_sub(assigned)) {
        alloc[i] += 1;
    }
    alloc
}

fn draw_assignment(data: &LabeledDataset, m: usize, beta: f64, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![Vec::new(); m];
    for mut members in data.class_indices() {
        let shares = dirichlet(&mut rng, m, beta);
        let counts = largest_remainder(members.len(), &shares);
        members.shuffle(&mut rng);
        let mut start = 0;
        for (client, &c) in counts.iter().enumerate() {
            assignment[client].extend_from_slice(&members[start..start + c]);
            start += c;
        }
    }
    for a in &mut assignment {
        a.sort_unstable();
    }
    assignment
}

/// Per class, draws client shares from Dirichlet(β) and hands out that
/// class's samples accordingly. If any client ends up empty the whole
/// partition is re-drawn with the next sub-seed.
pub fn dirichlet_partition(data: &LabeledDataset, cfg: &PartitionConfig) -> Result<Vec<ClientDataset>> {
    cfg.validate()?;
    if data.len() < cfg.num_clients {
        return Err(Error::Config(format!(
            "{} samples cannot cover {} clients",
            data.len(),
            cfg.num_clients
        )));
    }
    for attempt in 0..MAX_PARTITION_RETRIES {
        let assignment = draw_assignment(data, cfg.num_clients, cfg.beta, derive_seed(cfg.seed, &[attempt]));
        if assignment.iter().any(Vec::is_empty) {
            continue;
        }
        return assignment
            .iter()
            .enumerate()
            .map(|(id, idx)| Ok(ClientDataset::new(id, data.subset(idx)?)))
            .collect();
    }
    Err(Error::Config(format!(
        "every one of {MAX_PARTITION_RETRIES} dirichlet draws (beta = {}) left a client empty",
        cfg.beta
    )))
}
