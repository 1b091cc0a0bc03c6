use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::LabeledDataset;
use crate::error::{Error, Result};

/// Class means `e_k / √2`: every pair of means is exactly distance 1 apart.
pub fn blob_means(num_classes: usize, dim: usize) -> Vec<Vec<f64>> {
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    (0..num_classes)
        .map(|k| (0..dim).map(|j| if j == k { scale } else { 0.0 }).collect())
        .collect()
}

/// Isotropic Gaussian clusters around [`blob_means`], `per_class` samples
/// each, stored class by class.
pub fn generate_blobs(
    num_classes: usize,
    dim: usize,
    per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if num_classes < 2 {
        return Err(Error::Config(format!(
            "blobs need at least 2 classes, got {num_classes}"
        )));
    }
    if dim < num_classes {
        return Err(Error::Config(format!(
            "blob dimension {dim} must be at least the class count {num_classes}"
        )));
    }
    if per_class == 0 {
        return Err(Error::Config("blobs need at least one sample per class".into()));
    }
    if !(spread.is_finite() && spread >= 0.0) {
        return Err(Error::Config(format!("blob spread must be non-negative, got {spread}")));
    }
    let means = blob_means(num_classes, dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut features = Vec::with_capacity(num_classes * per_class * dim);
    let mut labels = Vec::with_capacity(num_classes * per_class);
    for (k, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            features.extend(mean.iter().map(|&m| m + spread * noise.sample(&mut rng)));
            labels.push(k);
        }
    }
    LabeledDataset::new(vec![dim], features, labels, num_classes)
}
