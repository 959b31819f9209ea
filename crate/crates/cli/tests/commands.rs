use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fedsim_core::data::parse_manifest;
use fedsim_core::simulator::parse_metrics_csv;

const MINIMAL: &str = "\
# four clients, two rounds
clients = 4
participation = 0.5
rounds = 2
algorithm = fedavg
data.generator = blobs
data.classes = 3
data.per_class = 20
data.dim = 2
partition.strategy = iid
batch_size = 8
";

fn fedsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedsim")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn setup(config: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.cfg");
    std::fs::write(&path, config).unwrap();
    (dir, path)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_minimal_config() {
    let (dir, cfg) = setup(MINIMAL);
    let out = dir.path().join("m.csv");
    let o = fedsim(&["run", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.starts_with("round,algorithm,partition,test_accuracy,test_loss,participants,seed\n"));
    let rows = parse_metrics_csv(&text).unwrap();
    assert!(rows.iter().all(|r| r.participants.len() == 2 && r.algorithm == "fedavg"));

    let again = dir.path().join("again.csv");
    assert_eq!(code(&fedsim(&["run", "--config", s(&cfg), "--out", s(&again)])), 0);
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn fedprox_zero_lambda_matches_fedavg() {
    let (dir, cfg) = setup(MINIMAL);
    let (avg, prox) = (dir.path().join("avg.csv"), dir.path().join("prox.csv"));
    let a = fedsim(&["run", "--config", s(&cfg), "--set", "algorithm=fedavg", "--out", s(&avg)]);
    let p = fedsim(&["run", "--config", s(&cfg), "--set", "algorithm=fedprox", "--set", "lambda=0.0", "--out", s(&prox)]);
    assert_eq!((code(&a), code(&p)), (0, 0));
    let (a, p) = (
        parse_metrics_csv(&std::fs::read_to_string(avg).unwrap()).unwrap(),
        parse_metrics_csv(&std::fs::read_to_string(prox).unwrap()).unwrap(),
    );
    for (x, y) in a.iter().zip(&p) {
        assert_eq!((x.round, x.test_accuracy, x.test_loss, &x.participants), (y.round, y.test_accuracy, y.test_loss, &y.participants));
    }
}

#[test]
fn overrides_take_precedence_and_out_key_is_used() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    let out = dir.path().join("from_file.csv");
    std::fs::write(&cfg, format!("{MINIMAL}out = {}\n", out.display())).unwrap();
    let o = fedsim(&["run", "--config", s(&cfg), "--set", "rounds=3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 4);
}

#[test]
fn config_errors_exit_two() {
    let (dir, cfg) = setup(&format!("{MINIMAL}algoritm = fedavg\n"));
    let o = fedsim(&["run", "--config", s(&cfg), "--out", s(&dir.path().join("x.csv"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("algoritm") && stderr(&o).contains("line 12"), "{}", stderr(&o));

    let (_, cfg) = setup(MINIMAL);
    let o = fedsim(&["run", "--config", s(&cfg), "--set", "clients=0"]);
    assert_eq!(code(&o), 2);
    let o = fedsim(&["run", "--config", s(&dir.path().join("missing.cfg"))]);
    assert_eq!(code(&o), 2);
    let o = fedsim(&["run", "--bogus"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn runtime_failures_exit_one() {
    let (dir, cfg) = setup(MINIMAL);
    let o = fedsim(&["run", "--config", s(&cfg), "--set", "local_eta=1e300", "--out", s(&dir.path().join("x.csv"))]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    let o = fedsim(&["run", "--config", s(&cfg), "--out", s(&dir.path().join("no/such/dir.csv"))]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}

fn manifest(dir: &Path, cfg: &Path, sets: &[&str]) -> Vec<fedsim_core::data::ManifestLine> {
    let out = dir.join("p.tsv");
    let mut args = vec!["partition", "--config", s(cfg), "--out", s(&out)];
    for set in sets {
        args.extend(["--set", set]);
    }
    let o = fedsim(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(dir.join("p.skew.tsv").exists());
    parse_manifest(&std::fs::read_to_string(out).unwrap()).unwrap()
}

#[test]
fn partition_manifests() {
    let (dir, cfg) = setup(MINIMAL);
    let lines = manifest(dir.path(), &cfg, &["clients=1", "participation=1"]);
    assert_eq!(lines.len(), 1);
    assert_eq!(lines[0].n_k, 60);

    let lines = manifest(dir.path(), &cfg, &["clients=3", "partition.strategy=label_quantity", "partition.q=1"]);
    assert_eq!(lines.len(), 3);
    assert!(lines.iter().all(|l| l.histogram.iter().filter(|&&h| h > 0).count() == 1));

    let lines = manifest(
        dir.path(),
        &cfg,
        &["clients=10", "data.classes=10", "data.per_class=1000", "partition.strategy=label_dirichlet", "partition.beta=10000"],
    );
    for l in &lines {
        for &h in &l.histogram {
            let share = h as f64 / l.n_k as f64;
            assert!((share - 0.1).abs() / 0.1 < 0.05, "{share}");
        }
    }
}

#[test]
fn compare_tables() {
    let (dir, cfg) = setup(MINIMAL);
    let out = dir.path().join("cmp.csv");
    let o = fedsim(&["compare", "--config", s(&cfg), "--algorithms", "fedavg,fedavg", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = parse_metrics_csv(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[..2].iter().map(|r| r.test_accuracy).collect::<Vec<_>>(), rows[2..].iter().map(|r| r.test_accuracy).collect::<Vec<_>>());

    let o = fedsim(&[
        "compare", "--config", s(&cfg), "--algorithms", "fedavg,fedprox,defkt",
        "--set", "partition.strategy=label_quantity", "--set", "partition.q=1", "--set", "defkt.q=1",
        "--out", s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(parse_metrics_csv(&std::fs::read_to_string(&out).unwrap()).unwrap().len(), 3 * 2);
    let summary = std::fs::read_to_string(dir.path().join("cmp.summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], "algorithm,final_accuracy,best_accuracy,best_round,oscillation");
    for (line, name) in lines[1..].iter().zip(["fedavg", "fedprox", "defkt"]) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[0], name);
        let acc: f64 = fields[1].parse().unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }

    assert_eq!(code(&fedsim(&["compare", "--config", s(&cfg), "--algorithms", "fedavg"])), 2);
    assert_eq!(code(&fedsim(&["compare", "--config", s(&cfg), "--algorithms", "fedavg,sgd"])), 2);
}

fn report_of(text: &str) -> (i32, String) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    std::fs::write(&path, text).unwrap();
    let o = fedsim(&["report", s(&path)]);
    (code(&o), stdout(&o))
}

const HEADER: &str = "round,algorithm,partition,test_accuracy,test_loss,participants,seed\n";

#[test]
fn report_statistics() {
    let constant: String = (1..=10).map(|r| format!("{r},fedavg,iid,0.75,0.5,0;1,3\n")).collect();
    let (c, out) = report_of(&format!("{HEADER}{constant}"));
    assert_eq!(c, 0);
    let fields: Vec<&str> = out.lines().nth(1).unwrap().split('\t').collect();
    assert_eq!(fields[..4], ["fedavg", "iid", "3", "0.750000"]);
    assert_eq!(fields[6], "0.000000");

    let (c, out) = report_of(&format!("{HEADER}7,fedprox,iid,0.4,1.2,2,0\n"));
    assert_eq!(c, 0);
    assert_eq!(out.lines().nth(1).unwrap(), "fedprox\tiid\t0\t0.400000\t0.400000\t7\t0.000000");

    // Last 20% of 10 rounds = rounds 9 and 10: accuracies 0.2 and 0.6, population sd 0.2.
    let series = [0.1, 0.5, 0.3, 0.9, 0.4, 0.2, 0.8, 0.7, 0.2, 0.6];
    let rows: String = series.iter().enumerate().map(|(i, a)| format!("{},fedavg,iid,{a},1,0,0\n", i + 1)).collect();
    let (_, out) = report_of(&format!("{HEADER}{rows}"));
    assert_eq!(out.lines().nth(1).unwrap(), "fedavg\tiid\t0\t0.600000\t0.900000\t4\t0.200000");
}

#[test]
fn report_rejects_bad_input() {
    assert_eq!(report_of("not,a,metrics,file\n1,2,3,4\n").0, 2);
    assert_eq!(report_of(&format!("{HEADER}1,fedavg,iid,high,1,0,0\n")).0, 2);
    assert_eq!(report_of(HEADER).0, 2);
    assert_eq!(code(&fedsim(&["report", "/nonexistent/metrics.csv"])), 2);
}
