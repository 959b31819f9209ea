//! Serverless rounds over a simulated peer network.
//!
//! Every protocol starts the same way: `Q` senders train locally and each
//! ships its weights to one paired receiver. They differ in what the receiver
//! does with them:
//!
//! - **Def-KT**: the receiver trains the shared weights and its own weights
//!   side by side, each distilling from the other's predictions, then keeps
//!   the trained shared weights.
//! - **FullAvg**: the receiver averages the shared weights with its own.
//! - **Combo**: sender and receiver swap half-vectors and average them in.

use std::collections::BTreeSet;

use rand::seq::{index, SliceRandom};

use crate::error::{config_err, protocol_err, Result};
use crate::fedalgos::average_params;
use crate::nn::{self, check_same_len, predict_proba, sgd_step, Batch, Criterion, LossKind, ModelSpec, ParamVector};
use crate::rng::{self, tag, SimRng};
use crate::simulator::{local_train, map_clients, ClientData, LocalConfig};

/// Who talks to whom in one round: `senders[i]` ships to `receivers[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeerRoundPlan {
    senders: Vec<usize>,
    receivers: Vec<usize>,
}

impl PeerRoundPlan {
    pub fn new(senders: Vec<usize>, receivers: Vec<usize>) -> Result<Self> {
        if senders.is_empty() || senders.len() != receivers.len() {
            return protocol_err("a plan needs equally many senders and receivers, at least one each");
        }
        let all: BTreeSet<usize> = senders.iter().chain(&receivers).copied().collect();
        if all.len() != 2 * senders.len() {
            return protocol_err("plan clients must be distinct and senders disjoint from receivers");
        }
        Ok(Self { senders, receivers })
    }

    pub fn senders(&self) -> &[usize] {
        &self.senders
    }

    pub fn receivers(&self) -> &[usize] {
        &self.receivers
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.senders.iter().copied().zip(self.receivers.iter().copied())
    }

    /// Every client touched by the round, ascending.
    pub fn participants(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.senders.iter().chain(&self.receivers).copied().collect();
        all.sort_unstable();
        all
    }
}

/// Draws `2Q` distinct clients; the first `Q` drawn send, the next `Q` receive,
/// paired in draw order.
pub fn plan_peer_round(clients: usize, q: usize, rng: &mut SimRng) -> Result<PeerRoundPlan> {
    if q == 0 {
        return config_err("Q must be at least 1");
    }
    if 2 * q > clients {
        return config_err(format!("2Q = {} exceeds the {clients} clients", 2 * q));
    }
    let drawn = index::sample(rng, clients, 2 * q).into_vec();
    let (senders, receivers) = drawn.split_at(q);
    PeerRoundPlan::new(senders.to_vec(), receivers.to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MutualLossConfig {
    /// Learning rate of the shared (sender's) weights.
    pub eta1: f64,
    /// Learning rate of the receiver's own weights.
    pub eta2: f64,
    /// Coefficient on the KL terms; 1 in the standard loss.
    pub kl_weight: f64,
    /// Supervised term `L_c`.
    pub criterion: Criterion,
}

impl MutualLossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("defkt.eta1", self.eta1), ("defkt.eta2", self.eta2), ("defkt.kl_weight", self.kl_weight)] {
            if !(v >= 0.0 && v.is_finite()) {
                return config_err(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        Ok(())
    }
}

/// Settings shared by all peer protocols.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeerConfig {
    /// Sender-side local training.
    pub local: LocalConfig,
    pub mutual: MutualLossConfig,
    pub parallel: bool,
}

fn mutual_loss<'a>(cfg: &MutualLossConfig, partner: &'a nn::Matrix) -> LossKind<'a> {
    LossKind::Composite(vec![
        (1.0, cfg.criterion.into()),
        (cfg.kl_weight, LossKind::KlFromTarget(partner)),
    ])
}

/// One simultaneous mutual-transfer update.
///
/// Both prediction sets come from the pre-step weights. `w_shared` descends
/// `L_c(P1, y) + KL(P2 || P1)` and `w_local` descends `L_c(P2, y) + KL(P1 || P2)`,
/// each treating its partner's predictions as constants.
pub fn mutual_transfer_step(
    spec: &ModelSpec,
    w_shared: &ParamVector,
    w_local: &ParamVector,
    batch: &Batch,
    cfg: &MutualLossConfig,
) -> Result<(ParamVector, ParamVector)> {
    cfg.validate()?;
    check_same_len(w_shared, w_local)?;
    let p1 = predict_proba(spec, w_shared, &batch.features)?;
    let p2 = predict_proba(spec, w_local, &batch.features)?;
    let g1 = nn::grad(spec, w_shared, batch, &mutual_loss(cfg, &p2))?;
    let g2 = nn::grad(spec, w_local, batch, &mutual_loss(cfg, &p1))?;
    Ok((
        sgd_step(w_shared, &g1, cfg.eta1, 0.0)?,
        sgd_step(w_local, &g2, cfg.eta2, 0.0)?,
    ))
}

/// Runs [`mutual_transfer_step`] over one shuffled epoch of the receiver's
/// mini-batches.
pub fn mutual_transfer_epoch(
    spec: &ModelSpec,
    w_shared: &ParamVector,
    w_local: &ParamVector,
    receiver: &ClientData,
    batch_size: usize,
    cfg: &MutualLossConfig,
    rng: &mut SimRng,
) -> Result<(ParamVector, ParamVector)> {
    if batch_size == 0 {
        return config_err("batch_size must be at least 1");
    }
    if receiver.train.is_empty() {
        return protocol_err(format!("client {} has no training data", receiver.id));
    }
    let mut order: Vec<usize> = (0..receiver.train.len()).collect();
    order.shuffle(rng);
    let (mut shared, mut local) = (w_shared.clone(), w_local.clone());
    for chunk in order.chunks(batch_size) {
        let batch = receiver.train.batch(chunk)?;
        (shared, local) = mutual_transfer_step(spec, &shared, &local, &batch, cfg)?;
    }
    Ok((shared, local))
}

fn check_round(states: &[ParamVector], plan: &PeerRoundPlan, clients: &[ClientData]) -> Result<()> {
    if states.len() != clients.len() {
        return protocol_err(format!(
            "{} client states but {} client datasets",
            states.len(),
            clients.len()
        ));
    }
    if let Some(&bad) = plan.participants().iter().find(|&&c| c >= states.len()) {
        return protocol_err(format!("plan references unknown client {bad}"));
    }
    if let Some(c) = clients.iter().enumerate().find(|(i, c)| c.id != *i) {
        return protocol_err(format!("client data at position {} carries id {}", c.0, c.1.id));
    }
    Ok(())
}

fn sender_rng(seed: u64, round: u64, client: usize) -> SimRng {
    rng::stream(seed, &[tag::LOCAL_TRAIN, round, client as u64])
}

/// Local training of every sender, in plan order.
fn train_senders(
    spec: &ModelSpec,
    states: &[ParamVector],
    plan: &PeerRoundPlan,
    clients: &[ClientData],
    cfg: &PeerConfig,
    seed: u64,
    round: u64,
) -> Result<Vec<ParamVector>> {
    map_clients(plan.senders(), cfg.parallel, |&s| {
        local_train(spec, &states[s], &clients[s], &cfg.local, None, &mut sender_rng(seed, round, s))
            .map(|u| u.params)
    })
}

/// Def-KT round: senders keep their trained weights; each receiver is
/// replaced by the shared weights after a mutual-transfer epoch on its data.
pub fn defkt_round(
    spec: &ModelSpec,
    states: &[ParamVector],
    plan: &PeerRoundPlan,
    clients: &[ClientData],
    cfg: &PeerConfig,
    seed: u64,
    round: u64,
) -> Result<Vec<ParamVector>> {
    check_round(states, plan, clients)?;
    let shared = train_senders(spec, states, plan, clients, cfg, seed, round)?;
    let pairs: Vec<(usize, usize)> = plan.pairs().enumerate().map(|(i, (_, r))| (i, r)).collect();
    let received = map_clients(&pairs, cfg.parallel, |&(i, r)| {
        let mut rng = rng::stream(seed, &[tag::MUTUAL, round, r as u64]);
        mutual_transfer_epoch(spec, &shared[i], &states[r], &clients[r], cfg.local.batch_size, &cfg.mutual, &mut rng)
            .map(|(w, _)| w)
    })?;
    let mut next = states.to_vec();
    for ((s, r), (w_s, w_r)) in plan.pairs().zip(shared.into_iter().zip(received)) {
        next[s] = w_s;
        next[r] = w_r;
    }
    Ok(next)
}

/// Receiver's new weights under FullAvg: the mean of shared and own weights.
pub fn fullavg_merge(shared: &ParamVector, local: &ParamVector) -> Result<ParamVector> {
    average_params(&[shared, local])
}

/// FullAvg round: each receiver averages its sender's trained weights into its own.
pub fn fullavg_round(
    spec: &ModelSpec,
    states: &[ParamVector],
    plan: &PeerRoundPlan,
    clients: &[ClientData],
    cfg: &PeerConfig,
    seed: u64,
    round: u64,
) -> Result<Vec<ParamVector>> {
    check_round(states, plan, clients)?;
    let shared = train_senders(spec, states, plan, clients, cfg, seed, round)?;
    let mut next = states.to_vec();
    for ((s, r), w_s) in plan.pairs().zip(shared) {
        next[r] = fullavg_merge(&w_s, &states[r])?;
        next[s] = w_s;
    }
    Ok(next)
}

/// Combo exchange between a sender and its receiver.
///
/// With `split = len / 2`, the sender transmits coordinates `split..` and the
/// receiver transmits `..split`. Each side averages the received segment into
/// the same coordinates of its own vector and leaves the others untouched.
pub fn combo_exchange(sender: &ParamVector, receiver: &ParamVector) -> Result<(ParamVector, ParamVector)> {
    check_same_len(sender, receiver)?;
    if sender.len() < 2 {
        return config_err("Combo needs at least 2 parameters to split");
    }
    let split = sender.len() / 2;
    let mid = |a: f64, b: f64| if a == b { a } else { (a + b) / 2.0 };
    let mut s = sender.to_vec();
    let mut r = receiver.to_vec();
    for j in 0..split {
        s[j] = mid(sender[j], receiver[j]);
    }
    for j in split..sender.len() {
        r[j] = mid(receiver[j], sender[j]);
    }
    Ok((ParamVector::new(s)?, ParamVector::new(r)?))
}

/// Combo round: senders train locally, then each pair runs [`combo_exchange`].
pub fn combo_round(
    spec: &ModelSpec,
    states: &[ParamVector],
    plan: &PeerRoundPlan,
    clients: &[ClientData],
    cfg: &PeerConfig,
    seed: u64,
    round: u64,
) -> Result<Vec<ParamVector>> {
    check_round(states, plan, clients)?;
    let trained = train_senders(spec, states, plan, clients, cfg, seed, round)?;
    let mut next = states.to_vec();
    for ((s, r), w_s) in plan.pairs().zip(trained) {
        let (new_s, new_r) = combo_exchange(&w_s, &states[r])?;
        next[s] = new_s;
        next[r] = new_r;
    }
    Ok(next)
}
