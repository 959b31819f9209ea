use rand::Rng;
use rand_distr::StandardNormal;

use super::dataset::{Dataset, PartitionMap};
use crate::error::{config_err, Result};
use crate::rng::{self, tag};

/// Noise standard deviation for client `client` of `clients`: a linear ramp
/// from 0 (client 0) to `sigma_max` (last client).
pub fn noise_level(sigma_max: f64, client: usize, clients: usize) -> f64 {
    if clients <= 1 {
        0.0
    } else {
        sigma_max * client as f64 / (clients - 1) as f64
    }
}

/// Noise-based feature imbalance: adds `N(0, sigma_k^2)` to every feature of
/// client `k`'s rows, with `sigma_k` from [`noise_level`]. Rows outside the
/// partition and rows of zero-noise clients are copied bit for bit.
pub fn apply_feature_noise(
    dataset: &Dataset,
    partition: &PartitionMap,
    sigma_max: f64,
    seed: u64,
) -> Result<Dataset> {
    if !(sigma_max >= 0.0 && sigma_max.is_finite()) {
        return config_err(format!("sigma_max must be finite and >= 0, got {sigma_max}"));
    }
    if let Some(&bad) = partition.assignments().iter().flatten().find(|&&i| i >= dataset.len()) {
        return config_err(format!("partition index {bad} out of range"));
    }
    let clients = partition.num_clients();
    let mut features = dataset.features.clone();
    for k in 0..clients {
        let sigma = noise_level(sigma_max, k, clients);
        if sigma == 0.0 {
            continue;
        }
        let mut rng = rng::stream(seed, &[tag::NOISE, k as u64]);
        for &i in partition.indices(k) {
            for v in features.row_mut(i) {
                let z: f64 = rng.sample(StandardNormal);
                *v += sigma * z;
            }
        }
    }
    Dataset::new(
        features,
        dataset.labels.clone(),
        dataset.num_classes,
        dataset.source_ids.clone(),
    )
}
