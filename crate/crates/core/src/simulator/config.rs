use std::fmt;
use std::str::FromStr;

use crate::decentralized::MutualLossConfig;
use crate::error::{config_err, Result};
use crate::fedalgos::{FedLblConfig, FedNovaConfig, Weighting};
use crate::nn::{Criterion, ModelSpec};

use super::local::LocalConfig;
use crate::decentralized::PeerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Algorithm {
    #[default]
    FedAvg,
    FedProx,
    FedNova,
    FedLbl,
    FedDf,
    DefKt,
    FullAvg,
    Combo,
}

impl Algorithm {
    pub const ALL: [Algorithm; 8] = [
        Algorithm::FedAvg,
        Algorithm::FedProx,
        Algorithm::FedNova,
        Algorithm::FedLbl,
        Algorithm::FedDf,
        Algorithm::DefKt,
        Algorithm::FullAvg,
        Algorithm::Combo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::FedAvg => "fedavg",
            Algorithm::FedProx => "fedprox",
            Algorithm::FedNova => "fednova",
            Algorithm::FedLbl => "fedlbl",
            Algorithm::FedDf => "feddf",
            Algorithm::DefKt => "defkt",
            Algorithm::FullAvg => "fullavg",
            Algorithm::Combo => "combo",
        }
    }

    /// Serverless protocols keep one model per client.
    pub fn is_decentralized(self) -> bool {
        matches!(self, Algorithm::DefKt | Algorithm::FullAvg | Algorithm::Combo)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Algorithm::ALL.iter().map(|a| a.name()).collect();
                format!("unknown algorithm `{s}` (expected one of {})", names.join(", "))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Generator {
    /// Gaussian clusters, one per class.
    #[default]
    Blobs,
    /// Uniform points in a cube, labelled by octant (8 classes, 3-d).
    Cube,
}

impl FromStr for Generator {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "blobs" => Ok(Generator::Blobs),
            "cube" => Ok(Generator::Cube),
            other => Err(format!("unknown generator `{other}` (expected blobs or cube)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub generator: Generator,
    /// Number of classes (blobs only; the cube always has 8).
    pub classes: usize,
    /// Training samples per class (per octant for the cube).
    pub per_class: usize,
    /// Test samples per class.
    pub test_per_class: usize,
    /// Feature dimension (blobs only; the cube is 3-d).
    pub dim: usize,
    pub spread: f64,
    pub cube_scale: f64,
    /// Number of synthetic provenance sources; 0 disables them.
    pub sources: usize,
    pub source_shift: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            generator: Generator::Blobs,
            classes: 10,
            per_class: 100,
            test_per_class: 50,
            dim: 8,
            spread: 0.5,
            cube_scale: 1.0,
            sources: 0,
            source_shift: 1.0,
        }
    }
}

impl DataConfig {
    pub fn num_classes(&self) -> usize {
        match self.generator {
            Generator::Blobs => self.classes,
            Generator::Cube => 8,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self.generator {
            Generator::Blobs => self.dim,
            Generator::Cube => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PartitionStrategy {
    #[default]
    Iid,
    /// Each client owns exactly `q` labels.
    LabelQuantity,
    /// Per-label client proportions from `Dirichlet(beta)`.
    LabelDirichlet,
    /// Client sizes from `Dirichlet(beta)`.
    QuantityDirichlet,
    /// IID split plus Gaussian feature noise ramping up to `sigma_max`.
    Noise,
    /// Mirror-octant pairs of the cube dataset.
    Cube,
    /// Whole provenance sources per client.
    Source,
}

impl PartitionStrategy {
    pub const ALL: [PartitionStrategy; 7] = [
        PartitionStrategy::Iid,
        PartitionStrategy::LabelQuantity,
        PartitionStrategy::LabelDirichlet,
        PartitionStrategy::QuantityDirichlet,
        PartitionStrategy::Noise,
        PartitionStrategy::Cube,
        PartitionStrategy::Source,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PartitionStrategy::Iid => "iid",
            PartitionStrategy::LabelQuantity => "label_quantity",
            PartitionStrategy::LabelDirichlet => "label_dirichlet",
            PartitionStrategy::QuantityDirichlet => "quantity_dirichlet",
            PartitionStrategy::Noise => "noise",
            PartitionStrategy::Cube => "cube",
            PartitionStrategy::Source => "source",
        }
    }
}

impl FromStr for PartitionStrategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        PartitionStrategy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = PartitionStrategy::ALL.iter().map(|p| p.name()).collect();
                format!("unknown partition strategy `{s}` (expected one of {})", names.join(", "))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionConfig {
    pub strategy: PartitionStrategy,
    /// Labels per client for `label_quantity`.
    pub q: usize,
    /// Dirichlet concentration for the Dirichlet strategies.
    pub beta: f64,
    /// Largest client noise level for `noise`.
    pub sigma_max: f64,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self { strategy: PartitionStrategy::Iid, q: 2, beta: 0.5, sigma_max: 1.0 }
    }
}

impl PartitionConfig {
    /// Strategy name plus its parameter, e.g. `label_quantity:q=1`.
    pub fn label(&self) -> String {
        let name = self.strategy.name();
        match self.strategy {
            PartitionStrategy::LabelQuantity => format!("{name}:q={}", self.q),
            PartitionStrategy::LabelDirichlet | PartitionStrategy::QuantityDirichlet => {
                format!("{name}:beta={}", self.beta)
            }
            PartitionStrategy::Noise => format!("{name}:sigma={}", self.sigma_max),
            _ => name.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FedDfConfig {
    pub eta: f64,
    pub steps: usize,
    /// Unlabelled distillation samples generated per class.
    pub per_class: usize,
    pub batch_size: usize,
}

impl Default for FedDfConfig {
    fn default() -> Self {
        Self { eta: 0.05, steps: 50, per_class: 20, batch_size: 64 }
    }
}

/// Everything a run depends on.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Number of clients `K`.
    pub clients: usize,
    /// Participation fraction `C` of the centralized algorithms.
    pub participation: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub rounds: usize,
    pub local_eta: f64,
    pub weight_decay: f64,
    /// Supervised loss of centralized local training.
    pub criterion: Criterion,
    pub algorithm: Algorithm,
    pub weighting: Weighting,
    /// FedProx proximal coefficient.
    pub lambda: f64,
    pub fednova: FedNovaConfig,
    pub fedlbl: FedLblConfig,
    pub feddf: FedDfConfig,
    /// Sender/receiver pairs per decentralized round.
    pub peers: usize,
    pub mutual: MutualLossConfig,
    pub data: DataConfig,
    pub partition: PartitionConfig,
    /// Hidden layer widths of the MLP.
    pub hidden: Vec<usize>,
    pub master_seed: u64,
    /// Evaluate every this many rounds (and always after the last).
    pub eval_every: usize,
    /// Train clients on the rayon pool. Results are identical either way.
    pub parallel: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            clients: 20,
            participation: 0.2,
            local_epochs: 1,
            batch_size: 64,
            rounds: 50,
            local_eta: 0.1,
            weight_decay: 0.004,
            criterion: Criterion::CrossEntropy,
            algorithm: Algorithm::FedAvg,
            weighting: Weighting::Uniform,
            lambda: 0.1,
            fednova: FedNovaConfig { alpha_scale: 0.5, beta_floor: 1.0, d_ref: 1e-3 },
            fedlbl: FedLblConfig { alpha: 0.5, nu: 0.5, label_threshold: 2 },
            feddf: FedDfConfig::default(),
            peers: 2,
            mutual: MutualLossConfig { eta1: 0.1, eta2: 0.1, kl_weight: 1.0, criterion: Criterion::MseOneHot },
            data: DataConfig::default(),
            partition: PartitionConfig::default(),
            hidden: vec![16],
            master_seed: 0,
            eval_every: 1,
            parallel: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .or_else(|e| config_err(format!("invalid value `{value}` for {key}: {e}")))
}

/// Keys accepted by [`SimConfig::set`].
pub const CONFIG_KEYS: &[&str] = &[
    "clients",
    "participation",
    "local_epochs",
    "batch_size",
    "rounds",
    "local_eta",
    "weight_decay",
    "criterion",
    "algorithm",
    "weighting",
    "seed",
    "eval_every",
    "parallel",
    "model.hidden",
    "fedprox.lambda",
    "lambda",
    "fednova.alpha",
    "fednova.beta",
    "fednova.d_ref",
    "fedlbl.alpha",
    "fedlbl.nu",
    "fedlbl.threshold",
    "feddf.eta",
    "feddf.steps",
    "feddf.per_class",
    "feddf.batch_size",
    "defkt.q",
    "defkt.eta1",
    "defkt.eta2",
    "defkt.kl_weight",
    "defkt.criterion",
    "data.generator",
    "data.classes",
    "data.per_class",
    "data.test_per_class",
    "data.dim",
    "data.spread",
    "data.cube_scale",
    "data.sources",
    "data.source_shift",
    "partition.strategy",
    "partition.q",
    "partition.beta",
    "partition.sigma_max",
];

impl SimConfig {
    /// Sets one `key = value` pair. Keys are listed in [`CONFIG_KEYS`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "clients" => self.clients = parse(key, v)?,
            "participation" => self.participation = parse(key, v)?,
            "local_epochs" => self.local_epochs = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "rounds" => self.rounds = parse(key, v)?,
            "local_eta" => self.local_eta = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "criterion" => self.criterion = parse(key, v)?,
            "algorithm" => self.algorithm = parse(key, v)?,
            "weighting" => self.weighting = parse(key, v)?,
            "seed" => self.master_seed = parse(key, v)?,
            "eval_every" => self.eval_every = parse(key, v)?,
            "parallel" => self.parallel = parse(key, v)?,
            "model.hidden" => {
                self.hidden = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse(key, s))
                    .collect::<Result<_>>()?
            }
            "fedprox.lambda" | "lambda" => self.lambda = parse(key, v)?,
            "fednova.alpha" => self.fednova.alpha_scale = parse(key, v)?,
            "fednova.beta" => self.fednova.beta_floor = parse(key, v)?,
            "fednova.d_ref" => self.fednova.d_ref = parse(key, v)?,
            "fedlbl.alpha" => self.fedlbl.alpha = parse(key, v)?,
            "fedlbl.nu" => self.fedlbl.nu = parse(key, v)?,
            "fedlbl.threshold" => self.fedlbl.label_threshold = parse(key, v)?,
            "feddf.eta" => self.feddf.eta = parse(key, v)?,
            "feddf.steps" => self.feddf.steps = parse(key, v)?,
            "feddf.per_class" => self.feddf.per_class = parse(key, v)?,
            "feddf.batch_size" => self.feddf.batch_size = parse(key, v)?,
            "defkt.q" => self.peers = parse(key, v)?,
            "defkt.eta1" => self.mutual.eta1 = parse(key, v)?,
            "defkt.eta2" => self.mutual.eta2 = parse(key, v)?,
            "defkt.kl_weight" => self.mutual.kl_weight = parse(key, v)?,
            "defkt.criterion" => self.mutual.criterion = parse(key, v)?,
            "data.generator" => self.data.generator = parse(key, v)?,
            "data.classes" => self.data.classes = parse(key, v)?,
            "data.per_class" => self.data.per_class = parse(key, v)?,
            "data.test_per_class" => self.data.test_per_class = parse(key, v)?,
            "data.dim" => self.data.dim = parse(key, v)?,
            "data.spread" => self.data.spread = parse(key, v)?,
            "data.cube_scale" => self.data.cube_scale = parse(key, v)?,
            "data.sources" => self.data.sources = parse(key, v)?,
            "data.source_shift" => self.data.source_shift = parse(key, v)?,
            "partition.strategy" => self.partition.strategy = parse(key, v)?,
            "partition.q" => self.partition.q = parse(key, v)?,
            "partition.beta" => self.partition.beta = parse(key, v)?,
            "partition.sigma_max" => self.partition.sigma_max = parse(key, v)?,
            other => return config_err(format!("unknown key `{other}`")),
        }
        Ok(())
    }
}

impl SimConfig {
    pub fn model_spec(&self) -> Result<ModelSpec> {
        let mut dims = vec![self.data.input_dim()];
        dims.extend(&self.hidden);
        dims.push(self.data.num_classes());
        ModelSpec::new(dims)
    }

    /// Local training settings of the centralized algorithms.
    pub fn local_config(&self) -> LocalConfig {
        LocalConfig {
            epochs: self.local_epochs,
            batch_size: self.batch_size,
            eta: self.local_eta,
            weight_decay: self.weight_decay,
            criterion: self.criterion,
        }
    }

    /// Peer-protocol settings; senders train with the mutual-transfer criterion.
    pub fn peer_config(&self) -> PeerConfig {
        PeerConfig {
            local: LocalConfig { criterion: self.mutual.criterion, ..self.local_config() },
            mutual: self.mutual,
            parallel: self.parallel,
        }
    }

    /// Clients sampled per centralized round, `floor(C K)`.
    pub fn sampled_per_round(&self) -> usize {
        (self.participation * self.clients as f64 + 1e-9).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 {
            return config_err("clients must be at least 1");
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return config_err(format!("participation must lie in (0, 1], got {}", self.participation));
        }
        if self.rounds == 0 {
            return config_err("rounds must be at least 1");
        }
        if self.eval_every == 0 {
            return config_err("eval_every must be at least 1");
        }
        self.local_config().validate()?;
        self.model_spec()?;
        if self.algorithm.is_decentralized() {
            if self.peers == 0 || 2 * self.peers > self.clients {
                return config_err(format!(
                    "defkt.q must satisfy 1 <= q and 2q <= clients, got q = {} with {} clients",
                    self.peers, self.clients
                ));
            }
            self.mutual.validate()?;
        } else if self.sampled_per_round() == 0 {
            return config_err(format!(
                "participation {} of {} clients selects nobody",
                self.participation, self.clients
            ));
        }
        match self.algorithm {
            Algorithm::FedProx if !(self.lambda >= 0.0 && self.lambda.is_finite()) => {
                return config_err(format!("fedprox.lambda must be finite and >= 0, got {}", self.lambda));
            }
            Algorithm::FedNova => {
                self.fednova.validate()?;
                if self.local_eta == 0.0 {
                    return config_err("fednova needs local_eta > 0");
                }
            }
            Algorithm::FedLbl => self.fedlbl.validate()?,
            Algorithm::FedDf => {
                let df = &self.feddf;
                if !(df.eta >= 0.0 && df.eta.is_finite()) {
                    return config_err(format!("feddf.eta must be finite and >= 0, got {}", df.eta));
                }
                if df.per_class == 0 || df.batch_size == 0 {
                    return config_err("feddf.per_class and feddf.batch_size must be at least 1");
                }
            }
            _ => {}
        }
        self.validate_data()
    }

    fn validate_data(&self) -> Result<()> {
        let d = &self.data;
        if d.per_class == 0 || d.test_per_class == 0 {
            return config_err("data.per_class and data.test_per_class must be at least 1");
        }
        if !(d.spread >= 0.0 && d.spread.is_finite()) {
            return config_err(format!("data.spread must be finite and >= 0, got {}", d.spread));
        }
        let p = &self.partition;
        match p.strategy {
            PartitionStrategy::Cube if d.generator != Generator::Cube => {
                return config_err("partition.strategy=cube needs data.generator=cube");
            }
            PartitionStrategy::Source if d.sources == 0 => {
                return config_err("partition.strategy=source needs data.sources >= 1");
            }
            PartitionStrategy::LabelQuantity if p.q == 0 || p.q > d.num_classes() => {
                return config_err(format!(
                    "partition.q must lie in 1..={}, got {}",
                    d.num_classes(),
                    p.q
                ));
            }
            PartitionStrategy::LabelDirichlet | PartitionStrategy::QuantityDirichlet
                if !(p.beta > 0.0 && p.beta.is_finite()) =>
            {
                return config_err(format!("partition.beta must be positive, got {}", p.beta));
            }
            PartitionStrategy::Noise if !(p.sigma_max >= 0.0 && p.sigma_max.is_finite()) => {
                return config_err(format!("partition.sigma_max must be finite and >= 0, got {}", p.sigma_max));
            }
            _ => {}
        }
        Ok(())
    }
}
