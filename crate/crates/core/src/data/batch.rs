use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ClientDataset;
use crate::error::{Error, Result};

/// Sample indices (into the client's dataset) of one mini-batch.
pub type Batch = Vec<usize>;

/// One epoch of mini-batches: a seeded shuffle cut into chunks of
/// `batch_size`, keeping the final partial batch.
pub fn batches(ds: &ClientDataset, batch_size: usize, epoch_seed: u64) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabeledDataset;

    fn client(n: usize) -> ClientDataset {
        let ds = LabeledDataset::new(vec![1], (0..n).map(|i| i as f64).collect(), vec![0; n], 1).unwrap();
        ClientDataset::new(0, ds)
    }

    #[test]
    fn keeps_partial_batch() {
        let sizes: Vec<usize> = batches(&client(10), 4, 0).unwrap().iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
    }

    #[test]
    fn epoch_is_a_permutation() {
        let c = client(37);
        let a = batches(&c, 5, 42).unwrap();
        assert_eq!(a, batches(&c, 5, 42).unwrap());
        let mut all: Vec<usize> = a.concat();
        all.sort_unstable();
        assert_eq!(all, (0..37).collect::<Vec<_>>());
        assert_ne!(a, batches(&c, 5, 43).unwrap());
    }

    #[test]
    fn zero_batch_size_rejected() {
        assert!(batches(&client(3), 0, 0).is_err());
    }
}
