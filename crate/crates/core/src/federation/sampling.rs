use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Picks `max(1, round(γ·m))` distinct clients uniformly without
/// replacement, returned in ascending id order.
pub fn sample_clients(num_clients: usize, gamma: f64, round_seed: u64) -> Result<Vec<usize>> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Config(format!("sampling rate must be in (0, 1], got {gamma}")));
    }
    let count = ((gamma * num_clients as f64).round() as usize).clamp(1, num_clients.max(1));
    if count >= num_clients {
        return Ok((0..num_clients).collect());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(round_seed);
    let mut picked = rand::seq::index::sample(&mut rng, num_clients, count).into_vec();
    picked.sort_unstable();
    Ok(picked)
}
