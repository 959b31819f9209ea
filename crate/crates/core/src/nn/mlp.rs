//! Forward pass and hand-written backprop for the fixed ReLU MLP.

use super::loss::{softmax_rows, LossKind};
use super::matrix::Matrix;
use super::params::{Batch, ModelSpec, ParamVector};
use crate::error::{config_err, FedError, Result};

struct Trace {
    /// Input to each layer (`inputs[0]` is the batch itself).
    inputs: Vec<Matrix>,
    logits: Matrix,
}

fn affine(input: &Matrix, params: &[f64], fan_in: usize, fan_out: usize, offset: usize) -> Matrix {
    let weights = &params[offset..offset + fan_in * fan_out];
    let biases = &params[offset + fan_in * fan_out..offset + (fan_in + 1) * fan_out];
    let mut out = Matrix::zeros(input.rows(), fan_out);
    for r in 0..input.rows() {
        let x = input.row(r);
        for (o, slot) in out.row_mut(r).iter_mut().enumerate() {
            let w = &weights[o * fan_in..(o + 1) * fan_in];
            *slot = biases[o] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    out
}

fn check_inputs(spec: &ModelSpec, params: &[f64], features: &Matrix) -> Result<()> {
    spec.check_params(params)?;
    if features.cols() != spec.input_dim() {
        return config_err(format!(
            "features have {} columns, model expects {}",
            features.cols(),
            spec.input_dim()
        ));
    }
    Ok(())
}

fn run(spec: &ModelSpec, params: &[f64], features: &Matrix) -> Trace {
    let layers = spec.layers();
    let mut inputs = Vec::with_capacity(layers.len());
    let mut current = features.clone();
    for (l, &(fan_in, fan_out, offset)) in layers.iter().enumerate() {
        let mut z = affine(&current, params, fan_in, fan_out, offset);
        inputs.push(current);
        if l + 1 == layers.len() {
            return Trace { inputs, logits: z };
        }
        for r in 0..z.rows() {
            for v in z.row_mut(r) {
                *v = v.max(0.0);
            }
        }
        current = z;
    }
    unreachable!("ModelSpec guarantees at least one layer")
}

/// Logits (`n x classes`) of the model on each feature row.
pub fn forward(spec: &ModelSpec, params: &ParamVector, features: &Matrix) -> Result<Matrix> {
    check_inputs(spec, params, features)?;
    let logits = run(spec, params, features).logits;
    if !logits.is_finite() {
        return Err(FedError::Numerical("non-finite logits".into()));
    }
    Ok(logits)
}

/// Softmax of [`forward`].
pub fn predict_proba(spec: &ModelSpec, params: &ParamVector, features: &Matrix) -> Result<Matrix> {
    Ok(softmax_rows(&forward(spec, params, features)?))
}

fn check_batch(spec: &ModelSpec, params: &[f64], batch: &Batch, loss: &LossKind) -> Result<()> {
    check_inputs(spec, params, &batch.features)?;
    let classes = spec.num_classes();
    if let Some(&bad) = batch.labels.iter().find(|&&y| y >= classes) {
        return config_err(format!("label {bad} out of range for {classes} classes"));
    }
    loss.validate(batch.len(), classes)
}

/// Mean loss of the model over the batch.
pub fn loss_value(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &Batch,
    loss: &LossKind,
) -> Result<f64> {
    check_batch(spec, params, batch, loss)?;
    let probs = softmax_rows(&run(spec, params, &batch.features).logits);
    Ok(loss.value(&probs, &batch.labels))
}

/// Gradient of the batch-mean loss with respect to every parameter.
pub fn grad(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &Batch,
    loss: &LossKind,
) -> Result<ParamVector> {
    check_batch(spec, params, batch, loss)?;
    let trace = run(spec, params, &batch.features);
    let probs = softmax_rows(&trace.logits);
    let n = batch.len();

    let mut delta = Matrix::zeros(n, spec.num_classes());
    loss.accumulate_logit_grad(&probs, &batch.labels, 1.0 / n as f64, &mut delta);

    let mut out = vec![0.0; params.len()];
    let layers = spec.layers();
    for (l, &(fan_in, fan_out, offset)) in layers.iter().enumerate().rev() {
        let input = &trace.inputs[l];
        let (w_grad, b_grad) = out[offset..offset + (fan_in + 1) * fan_out].split_at_mut(fan_in * fan_out);
        for r in 0..n {
            let d = delta.row(r);
            let x = input.row(r);
            for o in 0..fan_out {
                if d[o] == 0.0 {
                    continue;
                }
                b_grad[o] += d[o];
                for (g, xi) in w_grad[o * fan_in..(o + 1) * fan_in].iter_mut().zip(x) {
                    *g += d[o] * xi;
                }
            }
        }
        if l == 0 {
            break;
        }
        // Propagate through W, then through the ReLU that produced `input`.
        let weights = &params[offset..offset + fan_in * fan_out];
        let mut prev = Matrix::zeros(n, fan_in);
        for r in 0..n {
            let d = delta.row(r);
            let x = input.row(r);
            let p = prev.row_mut(r);
            for o in 0..fan_out {
                if d[o] == 0.0 {
                    continue;
                }
                for (i, pi) in p.iter_mut().enumerate() {
                    *pi += d[o] * weights[o * fan_in + i];
                }
            }
            for (pi, &xi) in p.iter_mut().zip(x) {
                if xi <= 0.0 {
                    *pi = 0.0;
                }
            }
        }
        delta = prev;
    }
    ParamVector::new(out)
}
