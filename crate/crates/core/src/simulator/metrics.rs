use crate::error::{config_err, FedError, Result};

use super::config::Algorithm;
use super::engine::RoundRecord;

pub const METRICS_HEADER: [&str; 7] = [
    "round",
    "algorithm",
    "partition",
    "test_accuracy",
    "test_loss",
    "participants",
    "seed",
];

/// Share of the final rounds the oscillation statistic looks at.
const OSCILLATION_WINDOW: f64 = 0.2;

/// Complete per-round history of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsLog {
    pub algorithm: Algorithm,
    /// Partition label, e.g. `label_quantity:q=1`.
    pub partition: String,
    pub seed: u64,
    pub records: Vec<RoundRecord>,
}

impl MetricsLog {
    /// `(round, accuracy)` for every evaluated round.
    pub fn accuracy_series(&self) -> Vec<(usize, f64)> {
        self.records
            .iter()
            .filter_map(|r| r.test_accuracy.map(|a| (r.round, a)))
            .collect()
    }
}

/// One parsed line of a metrics table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub round: usize,
    pub algorithm: String,
    pub partition: String,
    pub test_accuracy: Option<f64>,
    pub test_loss: Option<f64>,
    pub participants: Vec<usize>,
    pub seed: u64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_err(e: impl std::fmt::Display) -> FedError {
    FedError::Config(format!("metrics table: {e}"))
}

/// Renders one or more logs as a single table with a header row. Wall time
/// is left out so equal runs produce equal bytes.
pub fn metrics_csv(logs: &[MetricsLog]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRICS_HEADER).map_err(csv_err)?;
    for log in logs {
        for r in &log.records {
            let participants: Vec<String> = r.participants.iter().map(usize::to_string).collect();
            w.write_record([
                r.round.to_string(),
                log.algorithm.to_string(),
                log.partition.clone(),
                opt(r.test_accuracy),
                opt(r.test_loss),
                participants.join(";"),
                log.seed.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    let bytes = w.into_inner().map_err(csv_err)?;
    String::from_utf8(bytes).map_err(csv_err)
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = reader.headers().map_err(csv_err)?;
    if header.iter().ne(METRICS_HEADER) {
        return config_err(format!(
            "metrics table: header must be `{}`",
            METRICS_HEADER.join(",")
        ));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| FedError::Config(format!("metrics table line {line}: {e}")))?;
        let bad = |field: &str| FedError::Config(format!("metrics table line {line}: invalid {field}"));
        let float = |j: usize, field: &str| -> Result<Option<f64>> {
            match &rec[j] {
                "" => Ok(None),
                s => s.parse().map(Some).map_err(|_| bad(field)),
            }
        };
        let participants = match &rec[5] {
            "" => Vec::new(),
            s => s
                .split(';')
                .map(|p| p.parse().map_err(|_| bad("participants")))
                .collect::<Result<_>>()?,
        };
        rows.push(MetricsRow {
            round: rec[0].parse().map_err(|_| bad("round"))?,
            algorithm: rec[1].to_string(),
            partition: rec[2].to_string(),
            test_accuracy: float(3, "test_accuracy")?,
            test_loss: float(4, "test_loss")?,
            participants,
            seed: rec[6].parse().map_err(|_| bad("seed"))?,
        });
    }
    Ok(rows)
}

/// Identifies one run inside a merged table: `(algorithm, partition, seed)`.
pub type RunKey = (String, String, u64);

/// Accuracy series of each run in a table, in order of first appearance.
pub fn series_by_run(rows: &[MetricsRow]) -> Vec<(RunKey, Vec<(usize, f64)>)> {
    let mut out: Vec<(RunKey, Vec<(usize, f64)>)> = Vec::new();
    for r in rows {
        let key = (r.algorithm.clone(), r.partition.clone(), r.seed);
        let pos = match out.iter().position(|(k, _)| *k == key) {
            Some(p) => p,
            None => {
                out.push((key, Vec::new()));
                out.len() - 1
            }
        };
        if let Some(a) = r.test_accuracy {
            out[pos].1.push((r.round, a));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesSummary {
    pub final_accuracy: f64,
    pub best_accuracy: f64,
    /// Earliest round reaching `best_accuracy`.
    pub best_round: usize,
    /// Population standard deviation of accuracy over the last 20% of points
    /// (at least one point).
    pub oscillation: f64,
}

pub fn summarize(series: &[(usize, f64)]) -> Result<SeriesSummary> {
    let Some(&(_, final_accuracy)) = series.last() else {
        return config_err("no evaluated rounds to summarize");
    };
    let (mut best_round, mut best_accuracy) = series[0];
    for &(round, acc) in series {
        if acc > best_accuracy {
            (best_round, best_accuracy) = (round, acc);
        }
    }
    let window = ((series.len() as f64 * OSCILLATION_WINDOW).ceil() as usize).max(1);
    let tail: Vec<f64> = series[series.len() - window..].iter().map(|p| p.1).collect();
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    let var = tail.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / tail.len() as f64;
    Ok(SeriesSummary { final_accuracy, best_accuracy, best_round, oscillation: var.sqrt() })
}
