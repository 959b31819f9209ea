use std::collections::BTreeSet;

use rand::seq::SliceRandom;

use crate::data::Dataset;
use crate::error::{config_err, protocol_err, Result};
use crate::fedalgos::{fedprox_gradient, ClientUpdate};
use crate::nn::{self, sgd_step, Criterion, LossKind, ModelSpec, ParamVector};
use crate::rng::{self, tag, SimRng};

/// Share of each client's samples held out as a local validation set.
pub const VALIDATION_FRACTION: f64 = 0.2;

/// A client's private data.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientData {
    pub id: usize,
    pub train: Dataset,
    pub validation: Option<Dataset>,
}

impl ClientData {
    pub fn num_labels(&self) -> usize {
        self.train.labels.iter().collect::<BTreeSet<_>>().len()
    }
}

/// Splits a client's rows into training and validation parts
/// (`floor(0.2 n)` validation rows, chosen by a seeded shuffle).
pub fn split_client(dataset: &Dataset, id: usize, indices: &[usize], seed: u64) -> Result<ClientData> {
    if indices.is_empty() {
        return protocol_err(format!("client {id} has no data"));
    }
    let mut order = indices.to_vec();
    order.shuffle(&mut rng::stream(seed, &[tag::SPLIT, id as u64]));
    let n_val = (indices.len() as f64 * VALIDATION_FRACTION).floor() as usize;
    let (val, train) = order.split_at(n_val);
    let (mut val, mut train) = (val.to_vec(), train.to_vec());
    val.sort_unstable();
    train.sort_unstable();
    Ok(ClientData {
        id,
        train: dataset.subset(&train),
        validation: (!val.is_empty()).then(|| dataset.subset(&val)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub eta: f64,
    pub weight_decay: f64,
    pub criterion: Criterion,
}

impl LocalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return config_err("local_epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return config_err("batch_size must be at least 1");
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return config_err(format!("local_eta must be finite and >= 0, got {}", self.eta));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return config_err(format!(
                "weight_decay must be finite and >= 0, got {}",
                self.weight_decay
            ));
        }
        Ok(())
    }
}

/// `epochs` passes of shuffled mini-batch SGD over the client's training rows
/// (the last partial batch is kept). With `proximal = Some((theta_old, lambda))`
/// every step uses the FedProx gradient.
pub fn local_train(
    spec: &ModelSpec,
    start: &ParamVector,
    client: &ClientData,
    cfg: &LocalConfig,
    proximal: Option<(&ParamVector, f64)>,
    rng: &mut SimRng,
) -> Result<ClientUpdate> {
    cfg.validate()?;
    spec.check_params(start)?;
    let data = &client.train;
    if data.is_empty() {
        return protocol_err(format!("client {} has no training data", client.id));
    }
    let loss = LossKind::from(cfg.criterion);
    let mut params = start.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut steps = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.batch(chunk)?;
            let g = match proximal {
                Some((anchor, lambda)) => fedprox_gradient(spec, &params, anchor, lambda, &batch, &loss)?,
                None => nn::grad(spec, &params, &batch, &loss)?,
            };
            params = sgd_step(&params, &g, cfg.eta, cfg.weight_decay)?;
            steps += 1;
        }
    }
    Ok(ClientUpdate {
        client: client.id,
        delta: params.sub(start)?,
        params,
        n_k: data.len(),
        num_labels: client.num_labels(),
        local_steps: steps,
    })
}
