use std::time::Instant;

use rand::seq::index;

use crate::data::{
    apply_feature_noise, assign_sources, blob_centers, gen_cube, partition_by_source, partition_cube_symmetric,
    partition_iid, partition_label_dirichlet, partition_label_quantity, partition_quantity_dirichlet, sample_blobs,
    Dataset, PartitionMap,
};
use crate::decentralized::{combo_round, defkt_round, fullavg_round, plan_peer_round};
use crate::error::{config_err, Result};
use crate::fedalgos::{fedavg_aggregate, feddf_fuse, fedlbl_aggregate, fednova_global_step, ClientUpdate};
use crate::nn::{cross_entropy, predict_proba, Batch, ModelSpec, ParamVector};
use crate::rng::{self, tag};

use super::config::{Algorithm, Generator, PartitionStrategy, SimConfig};
use super::local::{local_train, split_client, ClientData};
use super::map_clients;
use super::metrics::MetricsLog;

/// `floor(C K)` distinct clients, ascending, from the stream for `round`.
pub fn sample_clients(clients: usize, participation: f64, round: u64, master_seed: u64) -> Result<Vec<usize>> {
    if !(participation > 0.0 && participation <= 1.0) {
        return config_err(format!("participation must lie in (0, 1], got {participation}"));
    }
    let m = (participation * clients as f64 + 1e-9).floor() as usize;
    if m == 0 {
        return config_err(format!("participation {participation} of {clients} clients selects nobody"));
    }
    let mut rng = rng::stream(master_seed, &[tag::SAMPLE_CLIENTS, round]);
    let mut ids = index::sample(&mut rng, clients, m).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// Test accuracy (argmax, ties to the lowest class) and mean cross-entropy.
pub fn evaluate(spec: &ModelSpec, params: &ParamVector, test: &Dataset) -> Result<(f64, f64)> {
    if test.is_empty() {
        return config_err("empty evaluation set");
    }
    let probs = predict_proba(spec, params, &test.features)?;
    let correct = probs
        .iter_rows()
        .zip(&test.labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    let loss = cross_entropy(&probs, &test.labels)?;
    Ok((correct as f64 / test.len() as f64, loss))
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Data, model and initial weights derived from a config.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: SimConfig,
    pub spec: ModelSpec,
    /// Training pool after any feature transformation.
    pub train: Dataset,
    pub test: Dataset,
    pub partition: PartitionMap,
    pub clients: Vec<ClientData>,
    /// Unlabelled batches for FedDF.
    pub distill: Vec<Batch>,
    pub init: ParamVector,
}

fn generate(config: &SimConfig, per_class: usize, stream_tag: u64) -> Result<Dataset> {
    let d = &config.data;
    let seed = config.master_seed;
    let data = match d.generator {
        Generator::Blobs => {
            let centers = blob_centers(d.classes, d.dim, seed)?;
            sample_blobs(&centers, per_class, d.spread, &mut rng::stream(seed, &[stream_tag]))?
        }
        Generator::Cube => gen_cube(per_class, d.cube_scale, rng::derive_seed(seed, &[stream_tag]))?,
    };
    if d.sources > 0 {
        assign_sources(&data, d.sources, d.source_shift, seed)
    } else {
        Ok(data)
    }
}

/// Partitions `train` per the config; returns the possibly transformed pool.
pub fn build_partition(config: &SimConfig, train: &Dataset) -> Result<(Dataset, PartitionMap)> {
    let (k, seed, p) = (config.clients, config.master_seed, &config.partition);
    let map = match p.strategy {
        PartitionStrategy::Iid | PartitionStrategy::Noise => partition_iid(train, k, seed)?,
        PartitionStrategy::LabelQuantity => partition_label_quantity(train, k, p.q, seed)?,
        PartitionStrategy::LabelDirichlet => partition_label_dirichlet(train, k, p.beta, seed)?,
        PartitionStrategy::QuantityDirichlet => partition_quantity_dirichlet(train, k, p.beta, seed)?,
        PartitionStrategy::Cube => partition_cube_symmetric(train, k, seed)?,
        PartitionStrategy::Source => partition_by_source(train, k, seed)?,
    };
    let pool = match p.strategy {
        PartitionStrategy::Noise => apply_feature_noise(train, &map, p.sigma_max, seed)?,
        _ => train.clone(),
    };
    Ok((pool, map))
}

/// Builds datasets, the partition, client splits and the shared initial weights.
pub fn prepare(config: &SimConfig) -> Result<Prepared> {
    config.validate()?;
    let spec = config.model_spec()?;
    let raw = generate(config, config.data.per_class, tag::DATA)?;
    let test = generate(config, config.data.test_per_class, tag::TEST_DATA)?;
    let (train, partition) = build_partition(config, &raw)?;
    let clients = (0..partition.num_clients())
        .map(|k| split_client(&train, k, partition.indices(k), config.master_seed))
        .collect::<Result<Vec<_>>>()?;
    let distill = if config.algorithm == Algorithm::FedDf {
        let pool = generate(config, config.feddf.per_class, tag::DISTILL_DATA)?;
        let all: Vec<usize> = (0..pool.len()).collect();
        all.chunks(config.feddf.batch_size)
            .map(|c| pool.batch(c))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let init = spec.init_params(&mut rng::stream(config.master_seed, &[tag::INIT]));
    Ok(Prepared { config: config.clone(), spec, train, test, partition, clients, distill, init })
}

/// Model state between rounds.
#[derive(Debug, Clone, PartialEq)]
pub enum SimState {
    /// One server model (centralized algorithms).
    Global(ParamVector),
    /// One model per client (peer protocols).
    PerClient(Vec<ParamVector>),
}

impl SimState {
    pub fn initial(prepared: &Prepared) -> Self {
        if prepared.config.algorithm.is_decentralized() {
            SimState::PerClient(vec![prepared.init.clone(); prepared.clients.len()])
        } else {
            SimState::Global(prepared.init.clone())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    /// 1-based round index.
    pub round: usize,
    /// `None` on rounds skipped by `eval_every`.
    pub test_accuracy: Option<f64>,
    pub test_loss: Option<f64>,
    /// Mean accuracy of the participants' resulting models on their own
    /// validation rows.
    pub validation_accuracy: Option<f64>,
    /// Ascending client ids that took part.
    pub participants: Vec<usize>,
    pub wall_time_ms: f64,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn validation_accuracy<'a>(
    spec: &ModelSpec,
    pairs: impl Iterator<Item = (&'a ParamVector, &'a ClientData)>,
) -> Result<Option<f64>> {
    let mut accs = Vec::new();
    for (params, client) in pairs {
        if let Some(v) = &client.validation {
            accs.push(evaluate(spec, params, v)?.0);
        }
    }
    Ok((!accs.is_empty()).then(|| mean(&accs)))
}

fn centralized_step(prepared: &Prepared, global: &ParamVector, participants: &[usize], round: u64) -> Result<ParamVector> {
    let cfg = &prepared.config;
    let local = cfg.local_config();
    let proximal = (cfg.algorithm == Algorithm::FedProx).then_some((global, cfg.lambda));
    let updates: Vec<ClientUpdate> = map_clients(participants, cfg.parallel, |&k| {
        let mut rng = rng::stream(cfg.master_seed, &[tag::LOCAL_TRAIN, round, k as u64]);
        local_train(&prepared.spec, global, &prepared.clients[k], &local, proximal, &mut rng)
    })?;
    match cfg.algorithm {
        Algorithm::FedAvg | Algorithm::FedProx => fedavg_aggregate(&updates, cfg.weighting),
        Algorithm::FedNova => fednova_global_step(global, &updates, &cfg.fednova, cfg.local_eta),
        Algorithm::FedLbl => fedlbl_aggregate(&updates, &cfg.fedlbl),
        Algorithm::FedDf => {
            let student = fedavg_aggregate(&updates, cfg.weighting)?;
            let teachers: Vec<ParamVector> = updates.into_iter().map(|u| u.params).collect();
            feddf_fuse(&teachers, &student, &prepared.spec, &prepared.distill, cfg.feddf.eta, cfg.feddf.steps)
        }
        other => config_err(format!("{other} is not a centralized algorithm")),
    }
}

/// Executes round `round` (1-based) and evaluates the result when due.
pub fn run_round(prepared: &Prepared, state: &SimState, round: usize) -> Result<(SimState, RoundRecord)> {
    let started = Instant::now();
    let cfg = &prepared.config;
    let spec = &prepared.spec;
    let r = round as u64;
    let evaluate_now = round.is_multiple_of(cfg.eval_every) || round == cfg.rounds;
    let (next, participants, test, validation) = match (state, cfg.algorithm.is_decentralized()) {
        (SimState::Global(global), false) => {
            let participants = sample_clients(cfg.clients, cfg.participation, r, cfg.master_seed)?;
            let next = centralized_step(prepared, global, &participants, r)?;
            let (test, validation) = if evaluate_now {
                let v = validation_accuracy(spec, participants.iter().map(|&k| (&next, &prepared.clients[k])))?;
                (Some(evaluate(spec, &next, &prepared.test)?), v)
            } else {
                (None, None)
            };
            (SimState::Global(next), participants, test, validation)
        }
        (SimState::PerClient(states), true) => {
            let plan = plan_peer_round(cfg.clients, cfg.peers, &mut rng::stream(cfg.master_seed, &[tag::PEER_PLAN, r]))?;
            let round_fn = match cfg.algorithm {
                Algorithm::DefKt => defkt_round,
                Algorithm::FullAvg => fullavg_round,
                _ => combo_round,
            };
            let next = round_fn(spec, states, &plan, &prepared.clients, &cfg.peer_config(), cfg.master_seed, r)?;
            let participants = plan.participants();
            let (test, validation) = if evaluate_now {
                let scores = map_clients(&next, cfg.parallel, |p| evaluate(spec, p, &prepared.test))?;
                let accs: Vec<f64> = scores.iter().map(|s| s.0).collect();
                let losses: Vec<f64> = scores.iter().map(|s| s.1).collect();
                let v = validation_accuracy(spec, participants.iter().map(|&k| (&next[k], &prepared.clients[k])))?;
                (Some((mean(&accs), mean(&losses))), v)
            } else {
                (None, None)
            };
            (SimState::PerClient(next), participants, test, validation)
        }
        (_, decentralized) => {
            return config_err(format!(
                "{} expects {} state",
                cfg.algorithm,
                if decentralized { "per-client" } else { "global" }
            ))
        }
    };
    let record = RoundRecord {
        round,
        test_accuracy: test.map(|t| t.0),
        test_loss: test.map(|t| t.1),
        validation_accuracy: validation,
        participants,
        wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
    };
    Ok((next, record))
}

/// Runs all rounds of `config` from scratch.
pub fn run_simulation(config: &SimConfig) -> Result<MetricsLog> {
    let prepared = prepare(config)?;
    let mut state = SimState::initial(&prepared);
    let mut records = Vec::with_capacity(config.rounds);
    for round in 1..=config.rounds {
        let (next, record) = run_round(&prepared, &state, round)?;
        state = next;
        records.push(record);
    }
    Ok(MetricsLog {
        algorithm: config.algorithm,
        partition: config.partition.label(),
        seed: config.master_seed,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{self, sgd_step, LossKind, Matrix};
    use crate::simulator::PartitionConfig;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn small() -> SimConfig {
        SimConfig {
            clients: 4,
            participation: 1.0,
            rounds: 3,
            data: crate::simulator::DataConfig { classes: 3, per_class: 20, test_per_class: 10, dim: 2, ..Default::default() },
            hidden: vec![4],
            batch_size: 8,
            ..SimConfig::default()
        }
    }

    fn strip(log: &MetricsLog) -> Vec<RoundRecord> {
        log.records.iter().map(|r| RoundRecord { wall_time_ms: 0.0, ..r.clone() }).collect()
    }

    #[test]
    fn sample_clients_examples() {
        assert_eq!(sample_clients(7, 1.0, 3, 1).unwrap(), (0..7).collect::<Vec<_>>());
        assert_eq!(sample_clients(100, 0.05, 0, 1).unwrap().len(), 5);
        assert_eq!(sample_clients(100, 0.2, 4, 9).unwrap(), sample_clients(100, 0.2, 4, 9).unwrap());
        assert_ne!(sample_clients(100, 0.2, 4, 9).unwrap(), sample_clients(100, 0.2, 5, 9).unwrap());
        assert!(sample_clients(10, 0.05, 0, 1).is_err());
    }

    #[test]
    fn evaluate_examples() {
        let spec = ModelSpec::new(vec![2, 2]).unwrap();
        let test = Dataset::new(Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(), vec![0, 1], 2, None).unwrap();
        // Identity weights, zero bias: logits equal the features.
        let perfect = ParamVector::new(vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(evaluate(&spec, &perfect, &test).unwrap().0, 1.0);
        let constant = ParamVector::zeros(6);
        let (acc, loss) = evaluate(&spec, &constant, &test).unwrap();
        assert_eq!(acc, 0.5);
        assert!((loss - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn evaluate_matches_row_oracle() {
        let mut r = rng::stream(4, &[]);
        let spec = ModelSpec::new(vec![3, 5, 4]).unwrap();
        for _ in 0..20 {
            let params = spec.init_params(&mut r);
            let rows: Vec<Vec<f64>> = (0..30).map(|_| (0..3).map(|_| r.random_range(-2.0..2.0)).collect()).collect();
            let labels: Vec<usize> = (0..30).map(|_| r.random_range(0..4)).collect();
            let test = Dataset::new(Matrix::from_rows(&rows).unwrap(), labels.clone(), 4, None).unwrap();
            let mut correct = 0;
            for (row, &y) in rows.iter().zip(&labels) {
                let logits = nn::forward(&spec, &params, &Matrix::from_rows(std::slice::from_ref(row)).unwrap()).unwrap();
                let l = logits.row(0);
                let best = (0..4).fold(0, |b, i| if l[i] > l[b] { i } else { b });
                correct += usize::from(best == y);
            }
            assert_eq!(evaluate(&spec, &params, &test).unwrap().0, correct as f64 / 30.0);
        }
    }

    #[test]
    fn one_round_one_record() {
        let log = run_simulation(&SimConfig { rounds: 1, ..small() }).unwrap();
        assert_eq!(log.records.len(), 1);
        assert_eq!(log.records[0].round, 1);
        assert!(run_simulation(&SimConfig { rounds: 0, ..small() }).is_err());
    }

    #[test]
    fn runs_are_deterministic_and_parallel_agnostic() {
        for algorithm in Algorithm::ALL {
            let cfg = SimConfig { algorithm, peers: 1, ..small() };
            let a = run_simulation(&cfg).unwrap();
            let b = run_simulation(&SimConfig { parallel: true, ..cfg.clone() }).unwrap();
            assert_eq!(strip(&a), strip(&b), "{algorithm}");
            assert_eq!(a.records.len(), 3);
        }
    }

    #[test]
    fn fedprox_zero_lambda_is_fedavg() {
        let cfg = SimConfig { participation: 0.5, ..small() };
        let avg = run_simulation(&cfg).unwrap();
        let prox = run_simulation(&SimConfig { algorithm: Algorithm::FedProx, lambda: 0.0, ..cfg }).unwrap();
        assert_eq!(strip(&avg), strip(&prox));
    }

    #[test]
    fn participants_match_sampler() {
        let cfg = SimConfig { participation: 0.5, rounds: 4, ..small() };
        let log = run_simulation(&cfg).unwrap();
        for rec in &log.records {
            assert_eq!(rec.participants, sample_clients(4, 0.5, rec.round as u64, cfg.master_seed).unwrap());
        }
        let peer = run_simulation(&SimConfig { algorithm: Algorithm::FullAvg, peers: 2, ..cfg }).unwrap();
        assert!(peer.records.iter().all(|r| r.participants.len() == 4));
    }

    #[test]
    fn zero_rate_identical_clients_is_fixed_point() {
        let cfg = SimConfig { local_eta: 0.0, ..small() };
        let prepared = prepare(&cfg).unwrap();
        let state = SimState::initial(&prepared);
        let (next, _) = run_round(&prepared, &state, 1).unwrap();
        assert_eq!(next, state);
    }

    #[test]
    fn single_client_round_is_plain_sgd() {
        let cfg = SimConfig { clients: 1, participation: 1.0, rounds: 1, weight_decay: 0.01, ..small() };
        let prepared = prepare(&cfg).unwrap();
        let state = SimState::initial(&prepared);
        let (next, _) = run_round(&prepared, &state, 1).unwrap();

        let client = &prepared.clients[0];
        let mut order: Vec<usize> = (0..client.train.len()).collect();
        order.shuffle(&mut rng::stream(cfg.master_seed, &[tag::LOCAL_TRAIN, 1, 0]));
        let mut w = prepared.init.clone();
        for chunk in order.chunks(cfg.batch_size) {
            let b = client.train.batch(chunk).unwrap();
            let g = nn::grad(&prepared.spec, &w, &b, &LossKind::CrossEntropy).unwrap();
            w = sgd_step(&w, &g, cfg.local_eta, cfg.weight_decay).unwrap();
        }
        assert_eq!(next, SimState::Global(w));
    }

    #[test]
    fn state_shape_mismatch_is_config_error() {
        let prepared = prepare(&small()).unwrap();
        let wrong = SimState::PerClient(vec![prepared.init.clone(); 4]);
        assert!(matches!(run_round(&prepared, &wrong, 1), Err(crate::FedError::Config(_))));
    }

    #[test]
    fn eval_stride_skips_rounds() {
        let log = run_simulation(&SimConfig { rounds: 5, eval_every: 2, ..small() }).unwrap();
        let evaluated: Vec<usize> = log.records.iter().filter(|r| r.test_accuracy.is_some()).map(|r| r.round).collect();
        assert_eq!(evaluated, vec![2, 4, 5]);
    }

    #[test]
    fn every_partition_strategy_runs() {
        let cube = crate::simulator::DataConfig { generator: Generator::Cube, per_class: 10, ..small().data };
        let sourced = crate::simulator::DataConfig { sources: 8, ..small().data };
        for (strategy, data) in [
            (PartitionStrategy::Iid, small().data),
            (PartitionStrategy::LabelQuantity, small().data),
            (PartitionStrategy::LabelDirichlet, small().data),
            (PartitionStrategy::QuantityDirichlet, small().data),
            (PartitionStrategy::Noise, small().data),
            (PartitionStrategy::Cube, cube),
            (PartitionStrategy::Source, sourced),
        ] {
            let cfg = SimConfig {
                rounds: 1,
                partition: PartitionConfig { strategy, q: 1, beta: 1.0, ..PartitionConfig::default() },
                data,
                ..small()
            };
            let log = run_simulation(&cfg).unwrap_or_else(|e| panic!("{strategy:?}: {e}"));
            let acc = log.records[0].test_accuracy.unwrap();
            assert!((0.0..=1.0).contains(&acc));
        }
    }

    #[test]
    fn iid_blobs_fedavg_learns() {
        let cfg = SimConfig {
            clients: 10,
            participation: 1.0,
            rounds: 30,
            data: crate::simulator::DataConfig { classes: 4, per_class: 100, dim: 4, spread: 0.15, ..Default::default() },
            batch_size: 16,
            ..SimConfig::default()
        };
        let centers = blob_centers(4, 4, cfg.master_seed).unwrap();
        let mut min_gap = f64::INFINITY;
        for i in 0..4 {
            for j in 0..i {
                let d: f64 = centers.row(i).iter().zip(centers.row(j)).map(|(a, b)| (a - b).powi(2)).sum();
                min_gap = min_gap.min(d.sqrt());
            }
        }
        assert!(min_gap >= 6.0 * 0.15);
        let log = run_simulation(&cfg).unwrap();
        let acc = log.records.last().unwrap().test_accuracy.unwrap();
        assert!(acc > 0.9, "{acc}");
    }
}
