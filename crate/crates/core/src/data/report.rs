use std::fmt::Write as _;

use super::dataset::{Dataset, PartitionMap};
use crate::error::{config_err, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ClientSkew {
    pub client: usize,
    pub n_k: usize,
    pub num_labels: usize,
    pub histogram: Vec<usize>,
    /// L2 distance between the client's feature mean and the global feature mean.
    pub mean_distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkewReport {
    pub clients: Vec<ClientSkew>,
    /// Largest client size over smallest.
    pub size_ratio: f64,
}

fn feature_mean(dataset: &Dataset, indices: &[usize]) -> Vec<f64> {
    let mut mean = vec![0.0; dataset.dim()];
    for &i in indices {
        for (m, v) in mean.iter_mut().zip(dataset.features.row(i)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= indices.len() as f64;
    }
    mean
}

pub fn skew_report(dataset: &Dataset, partition: &PartitionMap) -> Result<SkewReport> {
    if let Some(&bad) = partition.assignments().iter().flatten().find(|&&i| i >= dataset.len()) {
        return config_err(format!("partition index {bad} out of range"));
    }
    let all: Vec<usize> = (0..dataset.len()).collect();
    let global = feature_mean(dataset, &all);
    let clients: Vec<ClientSkew> = (0..partition.num_clients())
        .map(|k| {
            let idx = partition.indices(k);
            let mean = feature_mean(dataset, idx);
            let histogram = dataset.label_histogram(idx.iter().copied());
            ClientSkew {
                client: k,
                n_k: idx.len(),
                num_labels: histogram.iter().filter(|&&c| c > 0).count(),
                histogram,
                mean_distance: mean
                    .iter()
                    .zip(&global)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt(),
            }
        })
        .collect();
    let max = clients.iter().map(|c| c.n_k).max().unwrap_or(0);
    let min = clients.iter().map(|c| c.n_k).min().unwrap_or(0);
    Ok(SkewReport {
        clients,
        size_ratio: max as f64 / min as f64,
    })
}

/// One line of a partition manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestLine {
    pub client: usize,
    pub n_k: usize,
    pub histogram: Vec<usize>,
}

/// Renders `client<TAB>n_k<TAB>h_0,h_1,...` per client.
pub fn write_manifest(report: &SkewReport) -> String {
    let mut out = String::new();
    for c in &report.clients {
        let hist: Vec<String> = c.histogram.iter().map(usize::to_string).collect();
        writeln!(out, "{}\t{}\t{}", c.client, c.n_k, hist.join(",")).expect("writing to a String");
    }
    out
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestLine>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(no, line)| {
            let bad = |what: &str| config_err(format!("manifest line {}: {what}", no + 1));
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return bad("expected 3 tab-separated fields");
            }
            let (Ok(client), Ok(n_k)) = (fields[0].parse(), fields[1].parse()) else {
                return bad("client id and n_k must be integers");
            };
            let histogram: std::result::Result<Vec<usize>, _> = fields[2].split(',').map(str::parse).collect();
            let Ok(histogram) = histogram else {
                return bad("histogram must be comma-separated integers");
            };
            Ok(ManifestLine { client, n_k, histogram })
        })
        .collect()
}
