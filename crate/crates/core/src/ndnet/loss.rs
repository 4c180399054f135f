use serde::{Deserialize, Serialize};

use super::mlp::MlpModel;
use super::tensor::Tensor2;
use crate::error::{Error, Result};
use crate::optim::ParamVector;

/// Loss the bounds are evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossKind {
    /// Mean softmax cross-entropy.
    CrossEntropy,
    /// Per-sample cross-entropy capped at `c0`, so the loss lies in `[0, c0]`.
    TruncatedCrossEntropy { c0: f64 },
    /// `½‖θ‖²`, independent of the data. Analytic oracle loss.
    PureQuadratic,
}

impl LossKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LossKind::TruncatedCrossEntropy { c0 } if !(c0 > 0.0 && c0.is_finite()) => Err(
                Error::InvalidArgument(format!("truncation level c0 must be positive, got {c0}")),
            ),
            _ => Ok(()),
        }
    }
}

fn check_labels(logits: &Tensor2, labels: &[usize]) -> Result<()> {
    if labels.len() != logits.rows() {
        return Err(Error::shape("labels", logits.rows(), labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= logits.cols()) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            classes: logits.cols(),
        });
    }
    Ok(())
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Softmax cross-entropy of every row.
pub fn per_sample_cross_entropy(logits: &Tensor2, labels: &[usize]) -> Result<Vec<f64>> {
    check_labels(logits, labels)?;
    Ok((0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            // clamp the rounding residue when the target dominates
            (log_sum_exp(row) - row[labels[r]]).max(0.0)
        })
        .collect())
}

/// Gradient of the batch-mean (optionally truncated) cross-entropy w.r.t. the logits.
/// Rows whose loss is at or above the truncation level get zero gradient.
pub(crate) fn cross_entropy_logit_grad(logits: &Tensor2, labels: &[usize], truncate: Option<f64>) -> Result<Tensor2> {
    check_labels(logits, labels)?;
    let (rows, cols) = (logits.rows(), logits.cols());
    let scale = 1.0 / rows as f64;
    let mut g = Tensor2::zeros(rows, cols);
    let gd = g.data_mut();
    for r in 0..rows {
        let row = logits.row(r);
        let lse = log_sum_exp(row);
        if let Some(c0) = truncate {
            if lse - row[labels[r]] >= c0 {
                continue;
            }
        }
        let out = &mut gd[r * cols..(r + 1) * cols];
        for (o, &z) in out.iter_mut().zip(row) {
            *o = (z - lse).exp() * scale;
        }
        out[labels[r]] -= scale;
    }
    Ok(g)
}

fn quadratic(model: &MlpModel) -> (f64, ParamVector) {
    let theta = model.flatten();
    let loss = 0.5 * theta.iter().map(|v| v * v).sum::<f64>();
    (loss, theta)
}

/// Mean loss of `kind` over the batch.
pub fn loss_eval(kind: LossKind, model: &MlpModel, batch: &Tensor2, labels: &[usize]) -> Result<f64> {
    kind.validate()?;
    match kind {
        LossKind::PureQuadratic => {
            if batch.cols() != model.input_dim() {
                return Err(Error::shape("loss_eval input", model.input_dim(), batch.cols()));
            }
            Ok(quadratic(model).0)
        }
        LossKind::CrossEntropy | LossKind::TruncatedCrossEntropy { .. } => {
            let (logits, _) = model.forward(batch)?;
            let ce = per_sample_cross_entropy(&logits, labels)?;
            let cap = match kind {
                LossKind::TruncatedCrossEntropy { c0 } => c0,
                _ => f64::INFINITY,
            };
            Ok(ce.iter().map(|&v| v.min(cap)).sum::<f64>() / ce.len().max(1) as f64)
        }
    }
}

/// Mean loss and its parameter gradient.
pub fn loss_and_grad(kind: LossKind, model: &MlpModel, batch: &Tensor2, labels: &[usize]) -> Result<(f64, ParamVector)> {
    kind.validate()?;
    match kind {
        LossKind::PureQuadratic => {
            if batch.cols() != model.input_dim() {
                return Err(Error::shape("loss_and_grad input", model.input_dim(), batch.cols()));
            }
            Ok(quadratic(model))
        }
        LossKind::CrossEntropy | LossKind::TruncatedCrossEntropy { .. } => {
            let truncate = match kind {
                LossKind::TruncatedCrossEntropy { c0 } => Some(c0),
                _ => None,
            };
            let (logits, cache) = model.forward(batch)?;
            let ce = per_sample_cross_entropy(&logits, labels)?;
            let cap = truncate.unwrap_or(f64::INFINITY);
            let loss = ce.iter().map(|&v| v.min(cap)).sum::<f64>() / ce.len().max(1) as f64;
            let dlogits = cross_entropy_logit_grad(&logits, labels, truncate)?;
            Ok((loss, model.backward_from_logits(&cache, dlogits)?))
        }
    }
}

/// Streams the gradient of each sample's own loss, `∇f(x_i, θ)`.
pub fn per_sample_gradients<F>(kind: LossKind, model: &MlpModel, batch: &Tensor2, labels: &[usize], mut f: F) -> Result<()>
where
    F: FnMut(usize, &[f64]),
{
    kind.validate()?;
    match kind {
        LossKind::PureQuadratic => {
            let theta = model.flatten();
            for i in 0..batch.rows() {
                f(i, &theta);
            }
            Ok(())
        }
        LossKind::CrossEntropy | LossKind::TruncatedCrossEntropy { .. } => {
            let truncate = match kind {
                LossKind::TruncatedCrossEntropy { c0 } => Some(c0),
                _ => None,
            };
            let (logits, cache) = model.forward(batch)?;
            let mut dlogits = cross_entropy_logit_grad(&logits, labels, truncate)?;
            let rows = batch.rows() as f64;
            dlogits.data_mut().iter_mut().for_each(|v| *v *= rows);
            model.for_each_sample_gradient(&cache, dlogits, f)
        }
    }
}

/// Fraction of rows whose arg-max logit equals the label.
pub fn accuracy(model: &MlpModel, batch: &Tensor2, labels: &[usize]) -> Result<f64> {
    let (logits, _) = model.forward(batch)?;
    check_labels(&logits, labels)?;
    let hits = (0..logits.rows())
        .filter(|&r| {
            let row = logits.row(r);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best == labels[r]
        })
        .count();
    Ok(hits as f64 / logits.rows().max(1) as f64)
}
