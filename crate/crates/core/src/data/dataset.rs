use std::collections::BTreeSet;

use crate::error::{config_err, Result};
use crate::nn::{Batch, Matrix};

/// Feature matrix with class labels and optional provenance ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    /// Source (collection site) of each row, when the data simulates provenance.
    pub source_ids: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        num_classes: usize,
        source_ids: Option<Vec<usize>>,
    ) -> Result<Self> {
        if labels.is_empty() {
            return config_err("dataset is empty");
        }
        if features.rows() != labels.len() {
            return config_err(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return config_err(format!("label {bad} out of range for {num_classes} classes"));
        }
        if let Some(s) = &source_ids {
            if s.len() != labels.len() {
                return config_err("source id count does not match row count");
            }
        }
        if !features.is_finite() {
            return config_err("non-finite feature value");
        }
        Ok(Self {
            features,
            labels,
            num_classes,
            source_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Rows at `indices`, in that order. Panics on out-of-range indices.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            source_ids: self
                .source_ids
                .as_ref()
                .map(|s| indices.iter().map(|&i| s[i]).collect()),
        }
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        Batch::new(
            self.features.select_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    pub fn as_batch(&self) -> Result<Batch> {
        Batch::new(self.features.clone(), self.labels.clone())
    }

    pub fn label_histogram(&self, indices: impl IntoIterator<Item = usize>) -> Vec<usize> {
        let mut hist = vec![0; self.num_classes];
        for i in indices {
            hist[self.labels[i]] += 1;
        }
        hist
    }

    /// Row indices grouped by label.
    pub(crate) fn indices_by_label(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.num_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            groups[y].push(i);
        }
        groups
    }
}

/// Assignment of dataset rows to clients.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionMap {
    assignments: Vec<Vec<usize>>,
    label_sets: Vec<BTreeSet<usize>>,
    dataset_len: usize,
}

impl PartitionMap {
    /// Validates and normalizes (sorts) client index sets.
    ///
    /// Every client must be nonempty, indices must be in range, and no index
    /// may belong to two clients.
    pub fn new(dataset: &Dataset, mut assignments: Vec<Vec<usize>>) -> Result<Self> {
        if assignments.is_empty() {
            return config_err("a partition needs at least one client");
        }
        let n = dataset.len();
        let mut seen = vec![false; n];
        for (k, idx) in assignments.iter_mut().enumerate() {
            if idx.is_empty() {
                return config_err(format!("client {k} received no samples"));
            }
            idx.sort_unstable();
            for &i in idx.iter() {
                if i >= n {
                    return config_err(format!("client {k} index {i} out of range"));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return config_err(format!("sample {i} assigned twice"));
                }
            }
        }
        let label_sets = assignments
            .iter()
            .map(|idx| idx.iter().map(|&i| dataset.labels[i]).collect())
            .collect();
        Ok(Self {
            assignments,
            label_sets,
            dataset_len: n,
        })
    }

    pub fn num_clients(&self) -> usize {
        self.assignments.len()
    }

    pub fn indices(&self, client: usize) -> &[usize] {
        &self.assignments[client]
    }

    pub fn assignments(&self) -> &[Vec<usize>] {
        &self.assignments
    }

    pub fn n_k(&self, client: usize) -> usize {
        self.assignments[client].len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.assignments.iter().map(Vec::len).collect()
    }

    pub fn label_set(&self, client: usize) -> &BTreeSet<usize> {
        &self.label_sets[client]
    }

    pub fn assigned(&self) -> usize {
        self.assignments.iter().map(Vec::len).sum()
    }

    pub fn is_full_coverage(&self) -> bool {
        self.assigned() == self.dataset_len
    }
}
