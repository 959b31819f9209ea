use fedsim_core::data::{gen_blobs, partition_iid, partition_label_quantity, skew_report, write_manifest, parse_manifest};
use fedsim_core::simulator::{prepare, run_round, Algorithm, PartitionStrategy, SimConfig, SimState};
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[test]
fn iid_histograms_pass_chi_square_independence() {
    let classes = 6;
    let clients = 8;
    let d = gen_blobs(classes, 400, 2, 0.5, 3).unwrap();
    let critical = ChiSquared::new(((clients - 1) * (classes - 1)) as f64).unwrap().inverse_cdf(0.999);
    for seed in 0..10 {
        let p = partition_iid(&d, clients, seed).unwrap();
        let n = d.len() as f64;
        let global = d.label_histogram(0..d.len());
        let mut stat = 0.0;
        for k in 0..clients {
            let h = d.label_histogram(p.indices(k).iter().copied());
            for (l, &obs) in h.iter().enumerate() {
                let expected = p.n_k(k) as f64 * global[l] as f64 / n;
                stat += (obs as f64 - expected).powi(2) / expected;
            }
        }
        assert!(stat < critical, "seed {seed}: chi-square {stat} >= {critical}");
    }
}

#[test]
fn one_label_per_client_manifest() {
    let d = gen_blobs(5, 30, 2, 0.5, 1).unwrap();
    let p = partition_label_quantity(&d, 5, 1, 2).unwrap();
    let lines = parse_manifest(&write_manifest(&skew_report(&d, &p).unwrap())).unwrap();
    assert_eq!(lines.len(), 5);
    let mut owned: Vec<usize> = lines
        .iter()
        .map(|l| {
            let nonzero: Vec<usize> = (0..5).filter(|&c| l.histogram[c] > 0).collect();
            assert_eq!(nonzero.len(), 1);
            nonzero[0]
        })
        .collect();
    owned.sort_unstable();
    assert_eq!(owned, vec![0, 1, 2, 3, 4]);
}

fn small(algorithm: Algorithm) -> SimConfig {
    let mut c = SimConfig { algorithm, clients: 10, participation: 0.3, peers: 2, rounds: 4, batch_size: 8, ..SimConfig::default() };
    c.data.classes = 4;
    c.data.per_class = 30;
    c.data.dim = 3;
    c.partition.strategy = PartitionStrategy::LabelQuantity;
    c.partition.q = 2;
    c
}

#[test]
fn participant_counts_are_constant() {
    for algorithm in Algorithm::ALL {
        let cfg = small(algorithm);
        let prepared = prepare(&cfg).unwrap();
        let mut state = SimState::initial(&prepared);
        let expected = if algorithm.is_decentralized() { 2 * cfg.peers } else { 3 };
        for round in 1..=cfg.rounds {
            let (next, record) = run_round(&prepared, &state, round).unwrap();
            assert_eq!(record.participants.len(), expected, "{algorithm}");
            match (&state, &next) {
                (SimState::PerClient(before), SimState::PerClient(after)) => {
                    assert!(algorithm.is_decentralized());
                    for k in 0..cfg.clients {
                        if !record.participants.contains(&k) {
                            assert_eq!(before[k], after[k], "{algorithm}: client {k} changed");
                        }
                    }
                }
                (SimState::Global(_), SimState::Global(_)) => assert!(!algorithm.is_decentralized()),
                _ => panic!("{algorithm}: state shape changed"),
            }
            state = next;
        }
    }
}

#[test]
fn metrics_stay_in_range() {
    for algorithm in Algorithm::ALL {
        let log = fedsim_core::simulator::run_simulation(&small(algorithm)).unwrap();
        assert_eq!(log.records.len(), 4);
        for (i, r) in log.records.iter().enumerate() {
            assert_eq!(r.round, i + 1);
            let acc = r.test_accuracy.unwrap();
            assert!((0.0..=1.0).contains(&acc));
            assert!(r.test_loss.unwrap() >= 0.0);
            if let Some(v) = r.validation_accuracy {
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
