use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use fedsim_core::data::{skew_report, write_manifest, SkewReport};
use fedsim_core::simulator::{
    metrics_csv, parse_metrics_csv, prepare, run_simulation, series_by_run, summarize, Algorithm, MetricsLog,
    SimConfig,
};

use crate::error::CliError;
use crate::experiment::Experiment;

fn output_path(exp: &Experiment, flag: Option<PathBuf>, default: &str) -> PathBuf {
    flag.or_else(|| exp.out.clone()).unwrap_or_else(|| PathBuf::from(default))
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

/// `compare.csv` -> `compare.summary.csv`.
fn sibling(path: &Path, tag: &str) -> PathBuf {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("txt");
    path.with_extension(format!("{tag}.{ext}"))
}

pub fn run(config: Option<&Path>, overrides: &[String], out: Option<PathBuf>) -> Result<(), CliError> {
    let exp = Experiment::load(config, overrides)?;
    let log = run_simulation(&exp.sim)?;
    let path = output_path(&exp, out, "metrics.csv");
    write(&path, &metrics_csv(std::slice::from_ref(&log))?)?;
    let s = summarize(&log.accuracy_series())?;
    println!(
        "{} on {}: final accuracy {:.4}, best {:.4} (round {}), oscillation {:.4} -> {}",
        log.algorithm,
        log.partition,
        s.final_accuracy,
        s.best_accuracy,
        s.best_round,
        s.oscillation,
        path.display()
    );
    Ok(())
}

fn skew_table(report: &SkewReport) -> String {
    let mut out = String::from("client\tn_k\tnum_labels\tmean_distance\n");
    for c in &report.clients {
        writeln!(out, "{}\t{}\t{}\t{:.6}", c.client, c.n_k, c.num_labels, c.mean_distance).expect("writing to a String");
    }
    writeln!(out, "# size_ratio\t{:.6}", report.size_ratio).expect("writing to a String");
    out
}

pub fn partition(config: Option<&Path>, overrides: &[String], out: Option<PathBuf>) -> Result<(), CliError> {
    let exp = Experiment::load(config, overrides)?;
    let prepared = prepare(&exp.sim)?;
    let report = skew_report(&prepared.train, &prepared.partition)?;
    let path = output_path(&exp, out, "partition.tsv");
    let skew_path = sibling(&path, "skew");
    let table = skew_table(&report);
    write(&path, &write_manifest(&report))?;
    write(&skew_path, &table)?;
    print!("{table}");
    println!("manifest -> {}, skew table -> {}", path.display(), skew_path.display());
    Ok(())
}

fn summary_table(logs: &[MetricsLog]) -> Result<String, CliError> {
    let mut out = String::from("algorithm,final_accuracy,best_accuracy,best_round,oscillation\n");
    for log in logs {
        let s = summarize(&log.accuracy_series())?;
        writeln!(
            out,
            "{},{},{},{},{}",
            log.algorithm, s.final_accuracy, s.best_accuracy, s.best_round, s.oscillation
        )
        .expect("writing to a String");
    }
    Ok(out)
}

pub fn compare(
    config: Option<&Path>,
    overrides: &[String],
    out: Option<PathBuf>,
    algorithms: &[String],
) -> Result<(), CliError> {
    let exp = Experiment::load(config, overrides)?;
    let algorithms: Vec<Algorithm> = if algorithms.is_empty() {
        exp.compare.clone()
    } else {
        algorithms
            .iter()
            .map(|a| a.trim().parse().map_err(CliError::Config))
            .collect::<Result<_, _>>()?
    };
    if algorithms.len() < 2 {
        return Err(CliError::Config(
            "compare needs at least 2 algorithms (--algorithms or compare.algorithms)".into(),
        ));
    }
    let configs: Vec<SimConfig> = algorithms
        .iter()
        .map(|&algorithm| SimConfig { algorithm, ..exp.sim.clone() })
        .collect();
    for c in &configs {
        c.validate()?;
    }
    let logs = std::thread::scope(|s| {
        let handles: Vec<_> = configs.iter().map(|c| s.spawn(move || run_simulation(c))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("simulation thread panicked"))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let path = output_path(&exp, out, "compare.csv");
    let summary_path = sibling(&path, "summary");
    let summary = summary_table(&logs)?;
    write(&path, &metrics_csv(&logs)?)?;
    write(&summary_path, &summary)?;
    print!("{summary}");
    println!("merged table -> {}, summary -> {}", path.display(), summary_path.display());
    Ok(())
}

pub fn report(metrics: &Path) -> Result<(), CliError> {
    let text = std::fs::read_to_string(metrics)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", metrics.display())))?;
    let rows = parse_metrics_csv(&text).map_err(|e| CliError::Config(format!("{}: {e}", metrics.display())))?;
    let runs = series_by_run(&rows);
    if runs.is_empty() {
        return Err(CliError::Config(format!("{}: no metric rows", metrics.display())));
    }
    println!("algorithm\tpartition\tseed\tfinal_accuracy\tbest_accuracy\tbest_round\toscillation");
    for ((algorithm, partition, seed), series) in &runs {
        let s = summarize(series).map_err(|e| CliError::Config(format!("{algorithm}: {e}")))?;
        println!(
            "{algorithm}\t{partition}\t{seed}\t{:.6}\t{:.6}\t{}\t{:.6}",
            s.final_accuracy, s.best_accuracy, s.best_round, s.oscillation
        );
    }
    Ok(())
}
