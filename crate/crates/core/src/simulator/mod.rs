//! Experiment orchestration: client sampling, local training, per-algorithm
//! rounds, evaluation and metrics.
//!
//! Randomness is drawn from streams keyed by `(master_seed, purpose, round,
//! client)`, so `run_simulation` is a pure function of its [`SimConfig`] and
//! parallel execution reproduces serial execution exactly.

mod config;
mod engine;
mod local;
mod metrics;

pub use config::{
    Algorithm, DataConfig, FedDfConfig, Generator, PartitionConfig, PartitionStrategy, SimConfig, CONFIG_KEYS,
};
pub use engine::{
    build_partition, evaluate, prepare, run_round, run_simulation, sample_clients, Prepared, RoundRecord, SimState,
};
pub use local::{local_train, split_client, ClientData, LocalConfig, VALIDATION_FRACTION};
pub use metrics::{
    metrics_csv, parse_metrics_csv, series_by_run, summarize, MetricsLog, MetricsRow, RunKey, SeriesSummary, METRICS_HEADER,
};

use rayon::prelude::*;

use crate::error::Result;

/// Maps `f` over `items`, on the rayon pool when `parallel` is set. Output
/// order always follows input order.
pub(crate) fn map_clients<T, U, F>(items: &[T], parallel: bool, f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync + Send,
{
    if parallel {
        items.par_iter().map(f).collect()
    } else {
        items.iter().map(f).collect()
    }
}
