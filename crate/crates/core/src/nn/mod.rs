//! Minimal neural-network substrate: every federated algorithm in this crate
//! operates on flat [`ParamVector`]s interpreted through a [`ModelSpec`].

mod loss;
mod matrix;
mod mlp;
mod params;

pub use loss::{
    cross_entropy, kl_divergence, mse_onehot, softmax, softmax_rows, Criterion, LossKind,
    PROB_FLOOR,
};
pub use matrix::Matrix;
pub use mlp::{forward, grad, loss_value, predict_proba};
pub use params::{sgd_step, Batch, ModelSpec, ParamVector};
pub(crate) use params::check_same_len;
