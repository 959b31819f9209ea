use std::collections::BTreeSet;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use super::dataset::{Dataset, PartitionMap};
use crate::error::{config_err, Result};
use crate::rng::{self, tag, SimRng};

/// Maximum redraws before a randomized partitioner gives up.
pub const RESAMPLE_BUDGET: usize = 1000;

/// Splits `items` into `parts` consecutive chunks whose sizes differ by at most one.
/// The first `len % parts` chunks are the larger ones.
fn split_even(items: &[usize], parts: usize) -> Vec<Vec<usize>> {
    let (base, extra) = (items.len() / parts, items.len() % parts);
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for k in 0..parts {
        let size = base + usize::from(k < extra);
        out.push(items[start..start + size].to_vec());
        start += size;
    }
    out
}

fn split_by_counts(items: &[usize], counts: &[usize]) -> Vec<Vec<usize>> {
    let mut start = 0;
    counts
        .iter()
        .map(|&c| {
            let chunk = items[start..start + c].to_vec();
            start += c;
            chunk
        })
        .collect()
}

/// Seeded shuffle split into `clients` near-equal parts.
pub fn partition_iid(dataset: &Dataset, clients: usize, seed: u64) -> Result<PartitionMap> {
    if clients == 0 {
        return config_err("need at least one client");
    }
    if dataset.len() < clients {
        return config_err(format!(
            "{} samples cannot cover {clients} clients",
            dataset.len()
        ));
    }
    let mut rng = rng::stream(seed, &[tag::PARTITION]);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);
    PartitionMap::new(dataset, split_even(&order, clients))
}

/// Draws `labels_per_client` labels per client.
///
/// Client `k`'s first label is `perm[k % L]` for a seeded label permutation,
/// so every label is owned whenever `clients >= L`; the remaining labels are
/// uniform without replacement.
fn draw_label_sets(rng: &mut SimRng, clients: usize, num_labels: usize, q: usize) -> Vec<BTreeSet<usize>> {
    let mut perm: Vec<usize> = (0..num_labels).collect();
    perm.shuffle(rng);
    (0..clients)
        .map(|k| {
            let mut set = BTreeSet::from([perm[k % num_labels]]);
            while set.len() < q {
                set.insert(rng.random_range(0..num_labels));
            }
            set
        })
        .collect()
}

/// Quantity-based label imbalance: each client owns exactly `labels_per_client`
/// labels, and each label's samples are split near-equally among its owners.
pub fn partition_label_quantity(
    dataset: &Dataset,
    clients: usize,
    labels_per_client: usize,
    seed: u64,
) -> Result<PartitionMap> {
    let num_labels = dataset.num_classes;
    if clients == 0 {
        return config_err("need at least one client");
    }
    if labels_per_client == 0 || labels_per_client > num_labels {
        return config_err(format!(
            "labels_per_client must be in 1..={num_labels}, got {labels_per_client}"
        ));
    }
    let mut rng = rng::stream(seed, &[tag::PARTITION]);
    let by_label = dataset.indices_by_label();

    for _ in 0..RESAMPLE_BUDGET {
        let sets = draw_label_sets(&mut rng, clients, num_labels, labels_per_client);
        let owners: Vec<Vec<usize>> = (0..num_labels)
            .map(|label| (0..clients).filter(|&k| sets[k].contains(&label)).collect())
            .collect();
        // Every label needs an owner, and enough samples for each owner to get one.
        let feasible = owners
            .iter()
            .zip(&by_label)
            .all(|(o, samples)| !o.is_empty() && samples.len() >= o.len());
        if !feasible {
            continue;
        }
        let mut assignments = vec![Vec::new(); clients];
        for (label, label_owners) in owners.iter().enumerate() {
            let mut samples = by_label[label].clone();
            samples.shuffle(&mut rng);
            let mut order = label_owners.clone();
            order.shuffle(&mut rng);
            for (owner, chunk) in order.iter().zip(split_even(&samples, order.len())) {
                assignments[*owner].extend(chunk);
            }
        }
        return PartitionMap::new(dataset, assignments);
    }
    config_err(format!(
        "no label assignment covering all {num_labels} labels found in {RESAMPLE_BUDGET} draws \
         ({clients} clients, {labels_per_client} labels each)"
    ))
}

/// Normalized `Gamma(beta, 1)` draws; `None` when every draw underflowed.
pub fn sample_dirichlet(beta: f64, k: usize, rng: &mut SimRng) -> Result<Option<Vec<f64>>> {
    let gamma = Gamma::new(beta, 1.0)
        .map_err(|e| crate::FedError::Config(format!("invalid Dirichlet concentration {beta}: {e}")))?;
    let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Ok(None);
    }
    Ok(Some(draws.into_iter().map(|g| g / total).collect()))
}

/// Integer counts proportional to `proportions` that sum exactly to `total`.
///
/// Floors every quota, then hands the leftover units to the largest
/// fractional parts (ties go to the lower index).
pub fn largest_remainder(proportions: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = proportions.iter().sum();
    if proportions.is_empty() {
        return Vec::new();
    }
    if sum.is_nan() || sum <= 0.0 {
        let mut even = vec![total / proportions.len(); proportions.len()];
        for slot in even.iter_mut().take(total % proportions.len()) {
            *slot += 1;
        }
        return even;
    }
    let quotas: Vec<f64> = proportions.iter().map(|p| p / sum * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut by_fraction: Vec<usize> = (0..quotas.len()).collect();
    by_fraction.sort_by(|&a, &b| {
        let (fa, fb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let assigned: usize = counts.iter().sum();
    if assigned <= total {
        for &i in by_fraction.iter().cycle().take(total - assigned) {
            counts[i] += 1;
        }
    } else {
        // Only reachable through rounding noise: take back from the smallest fractions.
        let mut excess = assigned - total;
        for &i in by_fraction.iter().rev().cycle() {
            if excess == 0 {
                break;
            }
            if counts[i] > 0 {
                counts[i] -= 1;
                excess -= 1;
            }
        }
    }
    counts
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta.is_finite()) {
        return config_err(format!("Dirichlet concentration must be positive, got {beta}"));
    }
    Ok(())
}

/// Distribution-based label imbalance: each label's samples are spread over
/// clients by proportions drawn from `Dirichlet(beta)`.
pub fn partition_label_dirichlet(
    dataset: &Dataset,
    clients: usize,
    beta: f64,
    seed: u64,
) -> Result<PartitionMap> {
    check_beta(beta)?;
    if clients == 0 {
        return config_err("need at least one client");
    }
    let mut rng = rng::stream(seed, &[tag::PARTITION]);
    let by_label = dataset.indices_by_label();

    'attempt: for _ in 0..RESAMPLE_BUDGET {
        let mut assignments = vec![Vec::new(); clients];
        for samples in &by_label {
            if samples.is_empty() {
                continue;
            }
            let Some(props) = sample_dirichlet(beta, clients, &mut rng)? else {
                continue 'attempt;
            };
            let counts = largest_remainder(&props, samples.len());
            let mut shuffled = samples.clone();
            shuffled.shuffle(&mut rng);
            for (k, chunk) in split_by_counts(&shuffled, &counts).into_iter().enumerate() {
                assignments[k].extend(chunk);
            }
        }
        if assignments.iter().all(|a| !a.is_empty()) {
            return PartitionMap::new(dataset, assignments);
        }
    }
    config_err(format!(
        "every Dirichlet draw left a client empty after {RESAMPLE_BUDGET} attempts \
         (beta = {beta}, {clients} clients)"
    ))
}

/// Quantity skew: client sizes follow `Dirichlet(beta)`; rows are assigned by
/// a seeded shuffle so label mixes stay close to the global one.
pub fn partition_quantity_dirichlet(
    dataset: &Dataset,
    clients: usize,
    beta: f64,
    seed: u64,
) -> Result<PartitionMap> {
    check_beta(beta)?;
    if clients == 0 {
        return config_err("need at least one client");
    }
    if dataset.len() < clients {
        return config_err(format!(
            "{} samples cannot cover {clients} clients",
            dataset.len()
        ));
    }
    let mut rng = rng::stream(seed, &[tag::PARTITION]);
    for _ in 0..RESAMPLE_BUDGET {
        let Some(props) = sample_dirichlet(beta, clients, &mut rng)? else {
            continue;
        };
        let counts = largest_remainder(&props, dataset.len());
        if counts.contains(&0) {
            continue;
        }
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut rng);
        return PartitionMap::new(dataset, split_by_counts(&order, &counts));
    }
    config_err(format!(
        "every Dirichlet size draw left a client empty after {RESAMPLE_BUDGET} attempts \
         (beta = {beta}, {clients} clients)"
    ))
}

/// Synthetic feature imbalance over a [`super::gen_cube`] dataset.
///
/// Octants pair up with their bitwise complement (`o` and `7 - o` are mirror
/// images through the origin); pair `i` goes to client `i % clients`. Each
/// client then receives a seeded subset of its pairs' samples, all subsets
/// trimmed to the smallest client pool so clients hold equal amounts. With
/// balanced octants and `clients` in {1, 2, 4} nothing is trimmed.
pub fn partition_cube_symmetric(dataset: &Dataset, clients: usize, seed: u64) -> Result<PartitionMap> {
    if dataset.num_classes != 8 || dataset.dim() != 3 {
        return config_err("the symmetric cube partition needs an 8-label, 3-d cube dataset");
    }
    if clients == 0 || clients > 4 {
        return config_err(format!(
            "the symmetric cube partition supports 1 to 4 clients (4 mirror pairs), got {clients}"
        ));
    }
    let mut rng = rng::stream(seed, &[tag::PARTITION]);
    let by_label = dataset.indices_by_label();
    let pools: Vec<Vec<usize>> = (0..clients)
        .map(|k| {
            (0..4)
                .filter(|pair| pair % clients == k)
                .flat_map(|pair| by_label[pair].iter().chain(&by_label[7 - pair]).copied())
                .collect()
        })
        .collect();
    let take = pools.iter().map(Vec::len).min().unwrap_or(0);
    let assignments = pools
        .iter()
        .map(|pool| {
            index::sample(&mut rng, pool.len(), take)
                .into_iter()
                .map(|i| pool[i])
                .collect()
        })
        .collect();
    PartitionMap::new(dataset, assignments)
}

/// Real-world feature imbalance: whole sources are dealt round-robin (in a
/// seeded order) to clients, so no two clients share a source.
pub fn partition_by_source(dataset: &Dataset, clients: usize, seed: u64) -> Result<PartitionMap> {
    let Some(source_ids) = &dataset.source_ids else {
        return config_err("dataset carries no source ids");
    };
    let mut sources: Vec<usize> = source_ids.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if clients == 0 || sources.len() < clients {
        return config_err(format!(
            "{} distinct sources cannot cover {clients} clients",
            sources.len()
        ));
    }
    let mut rng = rng::stream(seed, &[tag::PARTITION]);
    sources.shuffle(&mut rng);
    let owner: std::collections::HashMap<usize, usize> = sources
        .iter()
        .enumerate()
        .map(|(pos, &s)| (s, pos % clients))
        .collect();
    let mut assignments = vec![Vec::new(); clients];
    for (i, s) in source_ids.iter().enumerate() {
        assignments[owner[s]].push(i);
    }
    PartitionMap::new(dataset, assignments)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{assign_sources, gen_blobs, gen_cube};
    use proptest::prelude::*;

    fn blobs(classes: usize, per_class: usize) -> Dataset {
        gen_blobs(classes, per_class, 2, 0.3, 5).unwrap()
    }

    #[test]
    fn iid_single_client_and_pigeonhole() {
        let d = blobs(2, 5);
        let p = partition_iid(&d, 1, 0).unwrap();
        assert_eq!(p.indices(0), (0..10).collect::<Vec<_>>().as_slice());
        let mut sizes = partition_iid(&d, 3, 0).unwrap().sizes();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![3, 3, 4]);
        assert!(partition_iid(&d, 11, 0).is_err());
    }

    #[test]
    fn label_quantity_full_ownership_is_per_label_iid() {
        let d = blobs(4, 21);
        let p = partition_label_quantity(&d, 5, 4, 1).unwrap();
        for k in 0..5 {
            assert_eq!(p.label_set(k).len(), 4);
            for c in d.label_histogram(p.indices(k).iter().copied()) {
                assert!(c == 4 || c == 5);
            }
        }
        assert!(p.is_full_coverage());
    }

    #[test]
    fn label_quantity_one_label_each() {
        let d = blobs(6, 10);
        let p = partition_label_quantity(&d, 6, 1, 9).unwrap();
        let mut owned: Vec<usize> = (0..6).map(|k| *p.label_set(k).iter().next().unwrap()).collect();
        owned.sort_unstable();
        assert_eq!(owned, (0..6).collect::<Vec<_>>());
        assert!(p.sizes().iter().all(|&s| s == 10));
    }

    #[test]
    fn label_quantity_rejects_bad_q() {
        let d = blobs(3, 5);
        assert!(partition_label_quantity(&d, 2, 0, 0).is_err());
        assert!(partition_label_quantity(&d, 2, 4, 0).is_err());
        // Two clients with one label each can never cover three labels.
        assert!(partition_label_quantity(&d, 2, 1, 0).is_err());
    }

    #[test]
    fn dirichlet_single_client() {
        let d = blobs(3, 7);
        for beta in [0.01, 1.0, 100.0] {
            let p = partition_label_dirichlet(&d, 1, beta, 2).unwrap();
            assert_eq!(p.n_k(0), 21);
            let q = partition_quantity_dirichlet(&d, 1, beta, 2).unwrap();
            assert_eq!(q.n_k(0), 21);
        }
        assert!(partition_label_dirichlet(&d, 2, 0.0, 2).is_err());
        assert!(partition_quantity_dirichlet(&d, 2, -1.0, 2).is_err());
    }

    #[test]
    fn quantity_dirichlet_concentrated_is_near_equal() {
        let d = blobs(10, 1000);
        let p = partition_quantity_dirichlet(&d, 10, 10000.0, 3).unwrap();
        let sizes = p.sizes();
        let (max, min) = (*sizes.iter().max().unwrap(), *sizes.iter().min().unwrap());
        assert!(max as f64 / min as f64 <= 1.2, "{sizes:?}");
        assert_eq!(sizes.iter().sum::<usize>(), 10000);
    }

    #[test]
    fn largest_remainder_examples() {
        assert_eq!(largest_remainder(&[0.5, 0.5], 3), vec![2, 1]);
        assert_eq!(largest_remainder(&[0.1, 0.2, 0.7], 10), vec![1, 2, 7]);
        assert_eq!(largest_remainder(&[1.0 / 3.0; 3], 100), vec![34, 33, 33]);
        assert_eq!(largest_remainder(&[0.0, 0.0], 5), vec![3, 2]);
    }

    #[test]
    fn cube_pairs() {
        let d = gen_cube(10, 1.0, 1).unwrap();
        let p4 = partition_cube_symmetric(&d, 4, 0).unwrap();
        for k in 0..4 {
            assert_eq!(p4.label_set(k), &BTreeSet::from([k, 7 - k]));
        }
        assert!(p4.is_full_coverage());
        let p1 = partition_cube_symmetric(&d, 1, 0).unwrap();
        assert_eq!(p1.label_set(0).len(), 8);
        assert!(p1.is_full_coverage());
        let p3 = partition_cube_symmetric(&d, 3, 0).unwrap();
        assert_eq!(p3.sizes(), vec![20, 20, 20]);
        assert!(!p3.is_full_coverage());
        assert!(partition_cube_symmetric(&d, 5, 0).is_err());
    }

    #[test]
    fn sources_bijection_and_errors() {
        let d = assign_sources(&blobs(3, 20), 4, 0.5, 1).unwrap();
        let p = partition_by_source(&d, 4, 2).unwrap();
        assert!(p.is_full_coverage());
        let ids = d.source_ids.as_ref().unwrap();
        for k in 0..4 {
            let srcs: BTreeSet<usize> = p.indices(k).iter().map(|&i| ids[i]).collect();
            assert_eq!(srcs.len(), 1);
        }
        assert!(partition_by_source(&d, 5, 2).is_err());
        assert!(partition_by_source(&blobs(3, 20), 2, 2).is_err());
    }

    proptest! {
        #[test]
        fn largest_remainder_conserves(
            raw in proptest::collection::vec(0.0f64..10.0, 1..12),
            total in 0usize..5000,
        ) {
            let counts = largest_remainder(&raw, total);
            prop_assert_eq!(counts.iter().sum::<usize>(), total);
            let sum: f64 = raw.iter().sum();
            if sum > 0.0 {
                for (c, p) in counts.iter().zip(&raw) {
                    prop_assert!((*c as f64 - p / sum * total as f64).abs() < 1.0 + 1e-9);
                }
            }
        }

        #[test]
        fn dirichlet_normalized(beta in 0.05f64..100.0, k in 1usize..20, seed in 0u64..500) {
            let mut rng = rng::stream(seed, &[]);
            if let Some(p) = sample_dirichlet(beta, k, &mut rng).unwrap() {
                prop_assert!(p.iter().all(|&v| v >= 0.0));
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }
}
