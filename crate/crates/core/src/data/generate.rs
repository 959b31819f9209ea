use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::dataset::Dataset;
use crate::error::{config_err, Result};
use crate::nn::Matrix;
use crate::rng::{self, tag, SimRng};

/// Half-width of the box blob centers are drawn from.
const CENTER_BOX: f64 = 2.0;
/// Target minimum pairwise distance between blob centers.
const MIN_CENTER_SEPARATION: f64 = 1.0;
const CENTER_TRIES: usize = 1000;

/// Points closer than this to an axis plane are never generated by [`gen_cube`].
pub const CUBE_PLANE_BAND: f64 = 1e-9;

/// Seeded class centers, uniform in `[-2, 2]^dim`.
///
/// Each center is rejection-sampled to sit at least 1.0 away from the
/// previous ones; if that fails after 1000 tries the farthest candidate seen
/// is used instead.
pub fn blob_centers(num_classes: usize, dim: usize, seed: u64) -> Result<Matrix> {
    if num_classes < 2 {
        return config_err("blobs need at least 2 classes");
    }
    if dim == 0 {
        return config_err("blob dimension must be positive");
    }
    let mut rng = rng::stream(seed, &[tag::DATA, 0]);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(num_classes);
    for _ in 0..num_classes {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for _ in 0..CENTER_TRIES {
            let cand: Vec<f64> = (0..dim)
                .map(|_| rng.random_range(-CENTER_BOX..CENTER_BOX))
                .collect();
            let nearest = centers
                .iter()
                .map(|c| dist(c, &cand))
                .fold(f64::INFINITY, f64::min);
            if best.as_ref().is_none_or(|(d, _)| nearest > *d) {
                best = Some((nearest, cand));
            }
            if nearest >= MIN_CENTER_SEPARATION {
                break;
            }
        }
        centers.push(best.expect("at least one try").1);
    }
    Matrix::from_rows(&centers)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `per_class` isotropic Gaussian points around each center, rows grouped by class.
pub fn sample_blobs(
    centers: &Matrix,
    per_class: usize,
    spread: f64,
    rng: &mut SimRng,
) -> Result<Dataset> {
    if per_class == 0 {
        return config_err("per_class must be at least 1");
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return config_err(format!("spread must be finite and >= 0, got {spread}"));
    }
    let (classes, dim) = (centers.rows(), centers.cols());
    let mut data = Vec::with_capacity(classes * per_class * dim);
    let mut labels = Vec::with_capacity(classes * per_class);
    for (class, center) in centers.iter_rows().enumerate() {
        for _ in 0..per_class {
            for &c in center {
                let z: f64 = rng.sample(StandardNormal);
                data.push(c + spread * z);
            }
            labels.push(class);
        }
    }
    Dataset::new(
        Matrix::from_vec(labels.len(), dim, data)?,
        labels,
        classes,
        None,
    )
}

/// One Gaussian cluster per class around seeded centers ([`blob_centers`]).
pub fn gen_blobs(
    num_classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    let centers = blob_centers(num_classes, dim, seed)?;
    sample_blobs(&centers, per_class, spread, &mut rng::stream(seed, &[tag::DATA, 1]))
}

/// Octant label of a 3-d point: bit 0 is `x > 0`, bit 1 `y > 0`, bit 2 `z > 0`.
pub fn octant_of(point: &[f64]) -> usize {
    point
        .iter()
        .take(3)
        .enumerate()
        .map(|(bit, &v)| usize::from(v > 0.0) << bit)
        .sum()
}

/// Uniform points in `[-scale, scale]^3` labelled by octant, `per_octant` per label.
pub fn gen_cube(per_octant: usize, scale: f64, seed: u64) -> Result<Dataset> {
    if per_octant == 0 {
        return config_err("per_octant must be at least 1");
    }
    if !(scale > CUBE_PLANE_BAND && scale.is_finite()) {
        return config_err(format!("cube scale must exceed {CUBE_PLANE_BAND}, got {scale}"));
    }
    let mut rng = rng::stream(seed, &[tag::DATA, 2]);
    let mut data = Vec::with_capacity(8 * per_octant * 3);
    let mut labels = Vec::with_capacity(8 * per_octant);
    for octant in 0..8 {
        for _ in 0..per_octant {
            for axis in 0..3 {
                let magnitude = rng.random_range(CUBE_PLANE_BAND..=scale);
                let sign = if octant >> axis & 1 == 1 { 1.0 } else { -1.0 };
                data.push(sign * magnitude);
            }
            labels.push(octant);
        }
    }
    Dataset::new(Matrix::from_vec(labels.len(), 3, data)?, labels, 8, None)
}

/// Tags every row with one of `num_sources` provenance ids and shifts each
/// source's rows by its own offset, uniform in `[-shift, shift]^dim`.
///
/// Rows are dealt to sources round-robin after a seeded shuffle, so every
/// source is present and sources are near-equal in size.
pub fn assign_sources(dataset: &Dataset, num_sources: usize, shift: f64, seed: u64) -> Result<Dataset> {
    if num_sources == 0 || num_sources > dataset.len() {
        return config_err(format!(
            "num_sources must be in 1..={}, got {num_sources}",
            dataset.len()
        ));
    }
    if !(shift >= 0.0 && shift.is_finite()) {
        return config_err(format!("source shift must be finite and >= 0, got {shift}"));
    }
    let mut rng = rng::stream(seed, &[tag::SOURCES]);
    let dim = dataset.dim();
    let offsets: Vec<Vec<f64>> = (0..num_sources)
        .map(|_| (0..dim).map(|_| rng.random_range(-shift..=shift)).collect())
        .collect();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);
    let mut source_ids = vec![0; dataset.len()];
    for (pos, &row) in order.iter().enumerate() {
        source_ids[row] = pos % num_sources;
    }
    let mut features = dataset.features.clone();
    for (row, &s) in source_ids.iter().enumerate() {
        for (v, o) in features.row_mut(row).iter_mut().zip(&offsets[s]) {
            *v += o;
        }
    }
    Dataset::new(
        features,
        dataset.labels.clone(),
        dataset.num_classes,
        Some(source_ids),
    )
}
