//! Labeled datasets, client shards, and mini-batching.

mod batch;
mod blobs;
mod idx;
mod partition;

pub use batch::{batches, Batch};
pub use blobs::{blob_means, generate_blobs};
pub use idx::{load_idx, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use partition::{dirichlet_partition, PartitionConfig, MAX_PARTITION_RETRIES};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Samples with class labels in `0..num_classes`, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    sample_shape: Vec<usize>,
    features: Vec<f64>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(sample_shape: Vec<usize>, features: Vec<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let width: usize = sample_shape.iter().product();
        if labels.is_empty() {
            return Err(Error::Usage("dataset is empty".into()));
        }
        if width == 0 || features.len() != width * labels.len() {
            return Err(Error::shape(
                "dataset features",
                &[labels.len(), width],
                &[features.len()],
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Usage(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(LabeledDataset {
            sample_shape,
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    pub fn sample_width(&self) -> usize {
        self.sample_shape.iter().product()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self, i: usize) -> &[f64] {
        let w = self.sample_width();
        &self.features[i * w..(i + 1) * w]
    }

    pub fn sample(&self, i: usize) -> (&[f64], usize) {
        (self.features(i), self.labels[i])
    }

    /// Stacks the given samples into a `(n, ..sample_shape)` tensor.
    pub fn batch_tensor(&self, indices: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(indices.len() * self.sample_width());
        for &i in indices {
            data.extend_from_slice(self.features(i));
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(&self.sample_shape);
        Tensor::new(shape, data).expect("batch shape matches data")
    }

    pub fn batch_labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    /// All features as one batched tensor.
    pub fn all_features(&self) -> Tensor {
        let mut shape = vec![self.len()];
        shape.extend_from_slice(&self.sample_shape);
        Tensor::new(shape, self.features.clone()).expect("dataset shape is consistent")
    }

    pub fn subset(&self, indices: &[usize]) -> Result<LabeledDataset> {
        LabeledDataset::new(
            self.sample_shape.clone(),
            self.batch_tensor(indices).into_data(),
            self.batch_labels(indices),
            self.num_classes,
        )
    }

    /// Same samples with each feature array viewed as a flat vector.
    pub fn flattened(&self) -> LabeledDataset {
        LabeledDataset {
            sample_shape: vec![self.sample_width()],
            ..self.clone()
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Indices of each class, in dataset order.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut idx = vec![Vec::new(); self.num_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            idx[y].push(i);
        }
        idx
    }

    /// Stratified split: a seeded `test_fraction` of every class goes to the
    /// second dataset. Returns `(train, test)`.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
        if !(0.0..1.0).contains(&test_fraction) || test_fraction == 0.0 {
            return Err(Error::Config(format!(
                "test fraction must be in (0, 1), got {test_fraction}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut train = Vec::new();
        let mut test = Vec::new();
        for mut members in self.class_indices() {
            members.shuffle(&mut rng);
            let n_test = (members.len() as f64 * test_fraction).round() as usize;
            test.extend_from_slice(&members[..n_test]);
            train.extend_from_slice(&members[n_test..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        Ok((self.subset(&train)?, self.subset(&test)?))
    }
}

/// One client's shard, with its per-class index.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub client_id: usize,
    pub data: LabeledDataset,
    per_class_index: Vec<Vec<usize>>,
}

impl ClientDataset {
    pub fn new(client_id: usize, data: LabeledDataset) -> Self {
        let per_class_index = data.class_indices();
        ClientDataset {
            client_id,
            data,
            per_class_index,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Local indices of samples with label `class`.
    pub fn class_members(&self, class: usize) -> &[usize] {
        &self.per_class_index[class]
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        self.per_class_index.iter().map(Vec::len).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> LabeledDataset {
        LabeledDataset::new(
            vec![2],
            (0..20).map(f64::from).collect(),
            vec![0, 1, 0, 1, 2, 2, 0, 1, 2, 0],
            3,
        )
        .unwrap()
    }

    #[test]
    fn rejects_bad_labels_and_lengths() {
        assert!(LabeledDataset::new(vec![2], vec![0.0; 4], vec![0, 3], 3).is_err());
        assert!(LabeledDataset::new(vec![2], vec![0.0; 5], vec![0, 1], 3).is_err());
        assert!(LabeledDataset::new(vec![2], vec![], vec![], 3).is_err());
    }

    #[test]
    fn per_class_index_partitions_samples() {
        let c = ClientDataset::new(0, toy());
        let mut all: Vec<usize> = (0..3).flat_map(|k| c.class_members(k).to_vec()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(c.class_histogram(), vec![4, 3, 3]);
    }

    #[test]
    fn split_is_stratified_and_disjoint() {
        let (train, test) = toy().split(0.34, 5).unwrap();
        assert_eq!(train.len() + test.len(), 10);
        assert_eq!(test.class_counts(), vec![1, 1, 1]);
    }
}
