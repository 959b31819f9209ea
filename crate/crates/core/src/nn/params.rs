use std::ops::Deref;

use rand::Rng;

use super::matrix::Matrix;
use crate::error::{config_err, FedError, Result};

/// Flat vector holding every weight and bias of a model.
///
/// Layer `l` occupies a contiguous block: a `fan_out x fan_in` row-major
/// weight matrix followed by `fan_out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    /// Wraps raw values, rejecting NaN and infinities.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(FedError::Numerical(format!(
                "parameter {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        check_same_len(self, other)?;
        ParamVector::new(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    /// Elementwise `self + scale * other`.
    pub fn add_scaled(&self, other: &ParamVector, scale: f64) -> Result<ParamVector> {
        check_same_len(self, other)?;
        ParamVector::new(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a + scale * b)
                .collect(),
        )
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = FedError;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

pub(crate) fn check_same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return config_err(format!("length mismatch: {} vs {}", a.len(), b.len()));
    }
    Ok(())
}

/// MLP architecture: `layer_dims = [input, hidden.., classes]`, ReLU between
/// layers, softmax over the last.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    layer_dims: Vec<usize>,
}

impl ModelSpec {
    pub fn new(layer_dims: Vec<usize>) -> Result<Self> {
        if layer_dims.len() < 2 {
            return config_err("a model needs at least an input and an output dimension");
        }
        if layer_dims.contains(&0) {
            return config_err("layer dimensions must be positive");
        }
        if *layer_dims.last().unwrap() < 2 {
            return config_err("the output layer needs at least 2 classes");
        }
        Ok(Self { layer_dims })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims
            .windows(2)
            .map(|w| (w[0] + 1) * w[1])
            .sum()
    }

    /// `(fan_in, fan_out, offset)` for each layer.
    pub(crate) fn layers(&self) -> Vec<(usize, usize, usize)> {
        let mut offset = 0;
        self.layer_dims
            .windows(2)
            .map(|w| {
                let entry = (w[0], w[1], offset);
                offset += (w[0] + 1) * w[1];
                entry
            })
            .collect()
    }

    pub fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return config_err(format!(
                "model expects {} parameters, got {}",
                self.param_count(),
                params.len()
            ));
        }
        Ok(())
    }

    /// Uniform `[-s, s]` weights with `s = sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut values = Vec::with_capacity(self.param_count());
        for (fan_in, fan_out, _) in self.layers() {
            let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
            values.extend((0..fan_in * fan_out).map(|_| rng.random_range(-s..=s)));
            values.extend(std::iter::repeat_n(0.0, fan_out));
        }
        ParamVector(values)
    }
}

/// A mini-batch: `n x m` features with one class id per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(features: Matrix, labels: Vec<usize>) -> Result<Self> {
        if features.rows() == 0 {
            return config_err("empty batch");
        }
        if features.rows() != labels.len() {
            return config_err(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            ));
        }
        if !features.is_finite() {
            return config_err("non-finite feature value");
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// One SGD step with L2 weight decay: `params - eta * (gradient + weight_decay * params)`.
///
/// `eta = 0` is accepted and returns the input unchanged.
pub fn sgd_step(
    params: &ParamVector,
    gradient: &ParamVector,
    eta: f64,
    weight_decay: f64,
) -> Result<ParamVector> {
    check_same_len(params, gradient)?;
    if !(eta >= 0.0 && eta.is_finite()) {
        return config_err(format!("learning rate must be finite and >= 0, got {eta}"));
    }
    if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
        return config_err(format!("weight decay must be finite and >= 0, got {weight_decay}"));
    }
    ParamVector::new(
        params
            .iter()
            .zip(gradient.iter())
            .map(|(p, g)| p - eta * (g + weight_decay * p))
            .collect(),
    )
}
