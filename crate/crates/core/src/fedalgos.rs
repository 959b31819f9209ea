//! Server-side aggregation and fusion.
//!
//! All aggregates are order-invariant bit for bit: each coordinate's terms
//! are sorted before summation, so shuffling the update list never changes a
//! result.

use crate::error::{config_err, protocol_err, Result};
use crate::nn::{self, check_same_len, softmax_rows, Batch, LossKind, Matrix, ModelSpec, ParamVector};

/// Outcome of one client's local training.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client: usize,
    /// Post-training weights.
    pub params: ParamVector,
    /// `params` minus the round-start weights.
    pub delta: ParamVector,
    /// Number of training samples.
    pub n_k: usize,
    /// Distinct labels among the training samples.
    pub num_labels: usize,
    /// SGD steps taken.
    pub local_steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Weighting {
    /// Plain arithmetic mean over clients.
    #[default]
    Uniform,
    /// Weight client `k` by `n_k / sum(n)`.
    BySamples,
}

impl std::str::FromStr for Weighting {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "uniform" => Ok(Weighting::Uniform),
            "by_samples" | "samples" => Ok(Weighting::BySamples),
            other => Err(format!("unknown weighting `{other}` (expected uniform or by_samples)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FedNovaConfig {
    pub alpha_scale: f64,
    pub beta_floor: f64,
    /// Reference variance `D_ref`.
    pub d_ref: f64,
}

impl FedNovaConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("fednova.alpha", self.alpha_scale),
            ("fednova.beta", self.beta_floor),
            ("fednova.d_ref", self.d_ref),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return config_err(format!("{name} must be positive, got {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FedLblConfig {
    /// Share of the weight driven by label counts rather than sample counts.
    pub alpha: f64,
    /// Share of the label-driven weight given to the many-label group.
    pub nu: f64,
    /// Clients with fewer labels than this form the few-label group.
    pub label_threshold: usize,
}

impl FedLblConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("fedlbl.alpha", self.alpha), ("fedlbl.nu", self.nu)] {
            if !(0.0..=1.0).contains(&v) {
                return config_err(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if self.label_threshold == 0 {
            return config_err("fedlbl.threshold must be positive");
        }
        Ok(())
    }
}

fn sorted_sum(terms: &mut [f64]) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    terms.iter().sum()
}

fn check_updates(updates: &[ClientUpdate]) -> Result<usize> {
    let Some(first) = updates.first() else {
        return protocol_err("no client updates to aggregate");
    };
    let len = first.params.len();
    for u in updates {
        check_same_len(&u.params, &first.params)?;
        check_same_len(&u.delta, &first.params)?;
    }
    Ok(len)
}

/// `sum_k weights[k] * vectors[k]` for nonnegative weights summing to one.
///
/// Each coordinate is clamped into the range of its inputs (where the exact
/// convex combination lies) and returned unchanged when all inputs agree.
fn convex_combination(vectors: &[&[f64]], weights: &[f64]) -> Result<ParamVector> {
    let len = vectors[0].len();
    let mut terms = vec![0.0; vectors.len()];
    let mut out = Vec::with_capacity(len);
    for j in 0..len {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for ((t, v), w) in terms.iter_mut().zip(vectors).zip(weights) {
            lo = lo.min(v[j]);
            hi = hi.max(v[j]);
            *t = w * v[j];
        }
        out.push(if lo == hi { lo } else { sorted_sum(&mut terms).clamp(lo, hi) });
    }
    ParamVector::new(out)
}

fn uniform_mean(vectors: &[&[f64]]) -> Result<ParamVector> {
    let len = vectors[0].len();
    let k = vectors.len() as f64;
    let mut terms = vec![0.0; vectors.len()];
    let mut out = Vec::with_capacity(len);
    for j in 0..len {
        for (t, v) in terms.iter_mut().zip(vectors) {
            *t = v[j];
        }
        let sum = sorted_sum(&mut terms);
        let (lo, hi) = (terms[0], terms[terms.len() - 1]);
        out.push(if lo == hi { lo } else { (sum / k).clamp(lo, hi) });
    }
    ParamVector::new(out)
}

/// Federated averaging of client weights.
pub fn fedavg_aggregate(updates: &[ClientUpdate], weighting: Weighting) -> Result<ParamVector> {
    check_updates(updates)?;
    let params: Vec<&[f64]> = updates.iter().map(|u| u.params.as_slice()).collect();
    match weighting {
        Weighting::Uniform => uniform_mean(&params),
        Weighting::BySamples => {
            let total: usize = updates.iter().map(|u| u.n_k).sum();
            if total == 0 {
                return protocol_err("sample-weighted averaging with zero total samples");
            }
            let weights: Vec<f64> = updates.iter().map(|u| u.n_k as f64 / total as f64).collect();
            convex_combination(&params, &weights)
        }
    }
}

/// Uniform mean of raw parameter vectors (FedDF's fusion initialisation,
/// FullAvg's merge).
pub fn average_params(vectors: &[&ParamVector]) -> Result<ParamVector> {
    let Some(first) = vectors.first() else {
        return protocol_err("nothing to average");
    };
    for v in vectors {
        check_same_len(v, first)?;
    }
    let slices: Vec<&[f64]> = vectors.iter().map(|v| v.as_slice()).collect();
    uniform_mean(&slices)
}

/// Local-loss gradient plus the proximal pull `lambda * (params - theta_old)`.
pub fn fedprox_gradient(
    spec: &ModelSpec,
    params: &ParamVector,
    theta_old: &ParamVector,
    lambda: f64,
    batch: &Batch,
    loss: &LossKind,
) -> Result<ParamVector> {
    check_same_len(params, theta_old)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return config_err(format!("proximal lambda must be finite and >= 0, got {lambda}"));
    }
    let g = nn::grad(spec, params, batch, loss)?;
    if lambda == 0.0 {
        return Ok(g);
    }
    ParamVector::new(
        g.iter()
            .zip(params.iter().zip(theta_old.iter()))
            .map(|(gi, (p, o))| gi + lambda * (p - o))
            .collect(),
    )
}

/// Mean over coordinates of the population variance (across clients) of the
/// update deltas.
pub fn update_variance(updates: &[ClientUpdate]) -> Result<f64> {
    let len = check_updates(updates)?;
    if len == 0 {
        return Ok(0.0);
    }
    let k = updates.len() as f64;
    let mut terms = vec![0.0; updates.len()];
    let mut per_coord = Vec::with_capacity(len);
    for j in 0..len {
        for (t, u) in terms.iter_mut().zip(updates) {
            *t = u.delta[j];
        }
        let mean = sorted_sum(&mut terms) / k;
        for (t, u) in terms.iter_mut().zip(updates) {
            *t = (u.delta[j] - mean).powi(2);
        }
        per_coord.push(sorted_sum(&mut terms) / k);
    }
    Ok(per_coord.iter().sum::<f64>() / len as f64)
}

/// Variance-adaptive server learning rate `alpha * max(sqrt(d_t / d_ref), beta)`.
pub fn fednova_lr(d_t: f64, cfg: &FedNovaConfig) -> f64 {
    cfg.alpha_scale * (d_t / cfg.d_ref).sqrt().max(cfg.beta_floor)
}

/// One FedNova server step `global - eta * grad`.
///
/// The server has no labelled loss, so `grad` is the gradient implied by the
/// clients' displacement: `-(1/K) sum_k delta_k / (steps_k * local_eta)`.
pub fn fednova_global_step(
    global: &ParamVector,
    updates: &[ClientUpdate],
    cfg: &FedNovaConfig,
    local_eta: f64,
) -> Result<ParamVector> {
    let len = check_updates(updates)?;
    check_same_len(global, &updates[0].params)?;
    cfg.validate()?;
    if !(local_eta > 0.0 && local_eta.is_finite()) {
        return config_err(format!("FedNova needs a positive local learning rate, got {local_eta}"));
    }
    if updates.iter().any(|u| u.local_steps == 0) {
        return protocol_err("client update reports zero local steps");
    }
    let eta = fednova_lr(update_variance(updates)?, cfg);
    let k = updates.len() as f64;
    let mut terms = vec![0.0; updates.len()];
    let mut out = Vec::with_capacity(len);
    for j in 0..len {
        for (t, u) in terms.iter_mut().zip(updates) {
            *t = u.delta[j] / (u.local_steps as f64 * local_eta);
        }
        let grad = -(sorted_sum(&mut terms) / k);
        out.push(global[j] - eta * grad);
    }
    ParamVector::new(out)
}

/// Per-client FedLbl weights; they sum to one.
///
/// Clients with at least `label_threshold` labels form the many-label group;
/// the rest form the few-label group. If one group is empty its share of the
/// label-driven mass moves to the other.
pub fn fedlbl_weights(updates: &[ClientUpdate], cfg: &FedLblConfig) -> Result<Vec<f64>> {
    check_updates(updates)?;
    cfg.validate()?;
    let n: usize = updates.iter().map(|u| u.n_k).sum();
    if n == 0 {
        return protocol_err("FedLbl aggregation with zero total samples");
    }
    let many = |u: &ClientUpdate| u.num_labels >= cfg.label_threshold;
    let m_count = updates.iter().filter(|u| many(u)).count();
    let z_count = updates.len() - m_count;
    let nu = match (m_count, z_count) {
        (_, 0) => 1.0,
        (0, _) => 0.0,
        _ => cfg.nu,
    };
    Ok(updates
        .iter()
        .map(|u| {
            let data_share = (1.0 - cfg.alpha) * (u.n_k as f64 / n as f64);
            let label_share = if many(u) {
                cfg.alpha * nu / m_count as f64
            } else {
                cfg.alpha * (1.0 - nu) / z_count as f64
            };
            data_share + label_share
        })
        .collect())
}

pub fn fedlbl_aggregate(updates: &[ClientUpdate], cfg: &FedLblConfig) -> Result<ParamVector> {
    let weights = fedlbl_weights(updates, cfg)?;
    let params: Vec<&[f64]> = updates.iter().map(|u| u.params.as_slice()).collect();
    convex_combination(&params, &weights)
}

/// Softmax of the teachers' mean logits on `features`.
pub fn ensemble_targets(spec: &ModelSpec, teachers: &[ParamVector], features: &Matrix) -> Result<Matrix> {
    if teachers.is_empty() {
        return protocol_err("no teachers");
    }
    let logits = teachers
        .iter()
        .map(|t| nn::forward(spec, t, features))
        .collect::<Result<Vec<_>>>()?;
    let k = teachers.len() as f64;
    let mut terms = vec![0.0; teachers.len()];
    let mut mean = Vec::with_capacity(logits[0].as_slice().len());
    for j in 0..logits[0].as_slice().len() {
        for (t, l) in terms.iter_mut().zip(&logits) {
            *t = l.as_slice()[j];
        }
        mean.push(sorted_sum(&mut terms) / k);
    }
    Ok(softmax_rows(&Matrix::from_vec(features.rows(), spec.num_classes(), mean)?))
}

/// Ensemble distillation: `steps` SGD steps on
/// `KL(softmax(mean teacher logits) || softmax(student logits))`, cycling
/// through `distill_batches`. Batch labels are ignored.
pub fn feddf_fuse(
    teachers: &[ParamVector],
    student_init: &ParamVector,
    spec: &ModelSpec,
    distill_batches: &[Batch],
    eta: f64,
    steps: usize,
) -> Result<ParamVector> {
    if teachers.is_empty() {
        return protocol_err("FedDF needs at least one teacher");
    }
    spec.check_params(student_init)?;
    if steps > 0 && distill_batches.is_empty() {
        return config_err("FedDF needs distillation data");
    }
    let targets = distill_batches
        .iter()
        .map(|b| ensemble_targets(spec, teachers, &b.features))
        .collect::<Result<Vec<_>>>()?;
    let mut student = student_init.clone();
    for step in 0..steps {
        let i = step % distill_batches.len();
        let g = nn::grad(spec, &student, &distill_batches[i], &LossKind::KlFromTarget(&targets[i]))?;
        student = nn::sgd_step(&student, &g, eta, 0.0)?;
    }
    Ok(student)
}
