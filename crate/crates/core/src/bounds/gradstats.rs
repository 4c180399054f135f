use crate::error::{Error, Result};
use crate::ndnet::{per_sample_gradients, LossKind, MlpModel, Tensor2};
use crate::optim::ParamVector;

/// Mean and (population) variance trace of a set of per-sample gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradStats {
    pub mean: ParamVector,
    /// `(1/m) Σ_i ‖g_i − ḡ‖²`.
    pub trace: f64,
    pub count: usize,
}

/// Coordinate-wise Welford accumulator; O(d) memory regardless of sample count.
#[derive(Debug, Clone)]
pub struct GradVarianceAccumulator {
    mean: Vec<f64>,
    m2: Vec<f64>,
    count: usize,
}

impl GradVarianceAccumulator {
    pub fn new(d: usize) -> Self {
        GradVarianceAccumulator {
            mean: vec![0.0; d],
            m2: vec![0.0; d],
            count: 0,
        }
    }

    pub fn push(&mut self, g: &[f64]) -> Result<()> {
        if g.len() != self.mean.len() {
            return Err(Error::shape("per-sample gradient", self.mean.len(), g.len()));
        }
        self.count += 1;
        let inv = 1.0 / self.count as f64;
        for ((m, s), &x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(g) {
            let delta = x - *m;
            *m += delta * inv;
            *s += delta * (x - *m);
        }
        Ok(())
    }

    pub fn finish(self) -> Result<GradStats> {
        if self.count < 2 {
            return Err(Error::InvalidArgument(format!(
                "gradient variance needs at least 2 samples, got {}",
                self.count
            )));
        }
        let trace = self.m2.iter().sum::<f64>() / self.count as f64;
        Ok(GradStats {
            mean: self.mean.into(),
            trace: trace.max(0.0),
            count: self.count,
        })
    }
}

pub fn grad_variance_trace(grads: &[ParamVector]) -> Result<GradStats> {
    let d = grads.first().map_or(0, |g| g.len());
    let mut acc = GradVarianceAccumulator::new(d);
    for g in grads {
        acc.push(g)?;
    }
    acc.finish()
}

/// Per-sample gradient statistics of `kind` on a batch, streamed without
/// materializing the gradients.
pub fn batch_grad_stats(kind: LossKind, model: &MlpModel, batch: &Tensor2, labels: &[usize]) -> Result<GradStats> {
    let mut acc = GradVarianceAccumulator::new(model.num_params());
    let mut failure = None;
    per_sample_gradients(kind, model, batch, labels, |_, g| {
        if failure.is_none() {
            failure = acc.push(g).err();
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    acc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn opposite_gradients() {
        let s = grad_variance_trace(&[vec![1.0, 0.0].into(), vec![-1.0, 0.0].into()]).unwrap();
        assert_eq!(s.mean.as_slice(), &[0.0, 0.0]);
        assert_eq!(s.trace, 1.0);
    }

    #[test]
    fn identical_gradients_have_zero_trace() {
        let g: ParamVector = vec![0.3, -1.7, 2.0].into();
        let s = grad_variance_trace(&[g.clone(), g.clone(), g]).unwrap();
        assert_eq!(s.trace, 0.0);
    }

    #[test]
    fn needs_two() {
        assert!(grad_variance_trace(&[vec![1.0].into()]).is_err());
        assert!(grad_variance_trace(&[]).is_err());
    }
}
