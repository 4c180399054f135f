use std::sync::atomic::{AtomicU64, Ordering};

use super::tensor::{gemm, Tensor2};
use crate::error::{Error, Result};
use crate::optim::ParamVector;
use crate::rng::RngStream;

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

/// Fully connected layer. `weight` is `in × out`, `bias` is `1 × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor2,
    pub bias: Tensor2,
}

/// Multilayer perceptron: ReLU on hidden layers, identity on the output layer.
///
/// Canonical parameter layout: layers in order, each as its weight matrix
/// (row-major, `in × out`) followed by its bias.
#[derive(Debug, Clone)]
pub struct MlpModel {
    dims: Vec<usize>,
    layers: Vec<Dense>,
    // Changes on every parameter mutation; forward caches record it.
    version: u64,
}

/// Activations recorded by [`MlpModel::forward`], sufficient for exact backprop.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    dims: Vec<usize>,
    /// Input to each layer: the batch, then the post-ReLU hidden activations.
    inputs: Vec<Tensor2>,
    logits: Tensor2,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.logits.rows()
    }

    pub fn logits(&self) -> &Tensor2 {
        &self.logits
    }
}

impl MlpModel {
    /// Number of parameters of an MLP with the given layer widths.
    pub fn param_count(dims: &[usize]) -> usize {
        dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn check_dims(dims: &[usize]) -> Result<()> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "layer dims must list at least input and output widths, all positive; got {dims:?}"
            )));
        }
        Ok(())
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::check_dims(dims)?;
        let layers = dims
            .windows(2)
            .map(|w| Dense {
                weight: Tensor2::zeros(w[0], w[1]),
                bias: Tensor2::zeros(1, w[1]),
            })
            .collect();
        Ok(MlpModel {
            dims: dims.to_vec(),
            layers,
            version: fresh_version(),
        })
    }

    /// He-style uniform init: weights `U(-√(6/fan_in), √(6/fan_in))`, zero bias.
    pub fn init(dims: &[usize], rng: &mut RngStream) -> Result<Self> {
        let mut model = Self::zeros(dims)?;
        for layer in &mut model.layers {
            let bound = (6.0 / layer.weight.rows() as f64).sqrt();
            for w in layer.weight.data_mut() {
                *w = bound * (2.0 * rng.uniform() - 1.0);
            }
        }
        Ok(model)
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        let mut dims = Vec::with_capacity(layers.len() + 1);
        for (i, l) in layers.iter().enumerate() {
            if l.bias.rows() != 1 || l.bias.cols() != l.weight.cols() {
                return Err(Error::shape(
                    "MlpModel::from_layers bias",
                    format!("1x{}", l.weight.cols()),
                    format!("{}x{}", l.bias.rows(), l.bias.cols()),
                ));
            }
            if i == 0 {
                dims.push(l.weight.rows());
            } else if dims[i] != l.weight.rows() {
                return Err(Error::shape("MlpModel::from_layers chaining", dims[i], l.weight.rows()));
            }
            dims.push(l.weight.cols());
        }
        Self::check_dims(&dims)?;
        Ok(MlpModel {
            dims,
            layers,
            version: fresh_version(),
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        Self::param_count(&self.dims)
    }

    pub fn flatten(&self) -> ParamVector {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(l.bias.data());
        }
        ParamVector::from(out)
    }

    pub fn unflatten(dims: &[usize], params: &[f64]) -> Result<Self> {
        let mut model = Self::zeros(dims)?;
        model.set_params(params)?;
        Ok(model)
    }

    /// Overwrite every parameter from a flat vector in canonical layout.
    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::shape("MlpModel::set_params", self.num_params(), params.len()));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let w = l.weight.data_mut();
            w.copy_from_slice(&params[off..off + w.len()]);
            off += w.len();
            let b = l.bias.data_mut();
            b.copy_from_slice(&params[off..off + b.len()]);
            off += b.len();
        }
        self.version = fresh_version();
        Ok(())
    }

    pub fn forward(&self, batch: &Tensor2) -> Result<(Tensor2, ForwardCache)> {
        if batch.cols() != self.input_dim() {
            return Err(Error::shape("mlp_forward input", self.input_dim(), batch.cols()));
        }
        let rows = batch.rows();
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut current = batch.clone();
        for (i, l) in self.layers.iter().enumerate() {
            let (fan_in, fan_out) = (l.weight.rows(), l.weight.cols());
            let mut z = Tensor2::zeros(rows, fan_out);
            {
                let zd = z.data_mut();
                for r in 0..rows {
                    zd[r * fan_out..(r + 1) * fan_out].copy_from_slice(l.bias.data());
                }
                gemm(current.data(), false, l.weight.data(), false, zd, rows, fan_in, fan_out, 1.0);
                if i != last {
                    for v in zd.iter_mut() {
                        if *v < 0.0 {
                            *v = 0.0;
                        }
                    }
                }
            }
            inputs.push(std::mem::replace(&mut current, z));
        }
        if current.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("forward pass produced non-finite logits".into()));
        }
        let cache = ForwardCache {
            version: self.version,
            dims: self.dims.clone(),
            inputs,
            logits: current.clone(),
        };
        Ok((current, cache))
    }

    fn check_cache(&self, cache: &ForwardCache) -> Result<()> {
        if cache.dims != self.dims {
            return Err(Error::StaleCache(format!(
                "cache built for dims {:?}, model has {:?}",
                cache.dims, self.dims
            )));
        }
        if cache.version != self.version {
            return Err(Error::StaleCache("model parameters changed since the forward pass".into()));
        }
        Ok(())
    }

    /// Pre-activation deltas `∂L/∂z_l` for every layer, given `∂L/∂logits`.
    fn layer_deltas(&self, cache: &ForwardCache, dlogits: Tensor2) -> Vec<Tensor2> {
        let rows = dlogits.rows();
        let mut deltas = vec![dlogits];
        for l in (1..self.layers.len()).rev() {
            let w = &self.layers[l].weight;
            let (fan_in, fan_out) = (w.rows(), w.cols());
            let mut d = Tensor2::zeros(rows, fan_in);
            gemm(
                deltas.last().unwrap().data(),
                false,
                w.data(),
                true,
                d.data_mut(),
                rows,
                fan_out,
                fan_in,
                0.0,
            );
            // ReLU mask: the layer input is relu(z), so z > 0 exactly where it is > 0
            for (dv, &a) in d.data_mut().iter_mut().zip(cache.inputs[l].data()) {
                if a <= 0.0 {
                    *dv = 0.0;
                }
            }
            deltas.push(d);
        }
        deltas.reverse();
        deltas
    }

    /// Parameter gradient for an arbitrary upstream gradient on the logits.
    pub fn backward_from_logits(&self, cache: &ForwardCache, dlogits: Tensor2) -> Result<ParamVector> {
        self.check_cache(cache)?;
        if dlogits.rows() != cache.batch_size() || dlogits.cols() != self.output_dim() {
            return Err(Error::shape(
                "mlp_backward logits gradient",
                format!("{}x{}", cache.batch_size(), self.output_dim()),
                format!("{}x{}", dlogits.rows(), dlogits.cols()),
            ));
        }
        let rows = cache.batch_size();
        let deltas = self.layer_deltas(cache, dlogits);
        let mut grad = vec![0.0; self.num_params()];
        let mut off = 0;
        for (l, layer) in self.layers.iter().enumerate() {
            let (fan_in, fan_out) = (layer.weight.rows(), layer.weight.cols());
            let nw = fan_in * fan_out;
            gemm(
                cache.inputs[l].data(),
                true,
                deltas[l].data(),
                false,
                &mut grad[off..off + nw],
                fan_in,
                rows,
                fan_out,
                0.0,
            );
            off += nw;
            let gb = &mut grad[off..off + fan_out];
            for r in 0..rows {
                for (g, d) in gb.iter_mut().zip(deltas[l].row(r)) {
                    *g += d;
                }
            }
            off += fan_out;
        }
        Ok(ParamVector::from(grad))
    }

    /// Gradient of the mean softmax cross-entropy over the cached batch.
    pub fn backward(&self, cache: &ForwardCache, labels: &[usize]) -> Result<ParamVector> {
        let dlogits = super::loss::cross_entropy_logit_grad(&cache.logits, labels, None)?;
        self.backward_from_logits(cache, dlogits)
    }

    /// Calls `f(i, g_i)` with the gradient of the *unaveraged* per-sample loss for
    /// every row `i`, given per-sample logit gradients `dlogits` (one row each).
    /// One buffer is reused, so memory stays at one parameter vector.
    pub fn for_each_sample_gradient<F>(&self, cache: &ForwardCache, dlogits: Tensor2, mut f: F) -> Result<()>
    where
        F: FnMut(usize, &[f64]),
    {
        self.check_cache(cache)?;
        let rows = cache.batch_size();
        let deltas = self.layer_deltas(cache, dlogits);
        let mut g = vec![0.0; self.num_params()];
        for r in 0..rows {
            let mut off = 0;
            for (l, layer) in self.layers.iter().enumerate() {
                let (fan_in, fan_out) = (layer.weight.rows(), layer.weight.cols());
                let a = cache.inputs[l].row(r);
                let d = deltas[l].row(r);
                for (i, &ai) in a.iter().enumerate() {
                    let dst = &mut g[off + i * fan_out..off + (i + 1) * fan_out];
                    if ai == 0.0 {
                        dst.iter_mut().for_each(|v| *v = 0.0);
                    } else {
                        for (v, &dj) in dst.iter_mut().zip(d) {
                            *v = ai * dj;
                        }
                    }
                }
                off += fan_in * fan_out;
                g[off..off + fan_out].copy_from_slice(d);
                off += fan_out;
            }
            f(r, &g);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seeded(dims: &[usize], seed: u64) -> MlpModel {
        MlpModel::init(dims, &mut RngStream::new(seed, 0)).unwrap()
    }

    #[test]
    fn param_count_formula() {
        assert_eq!(MlpModel::param_count(&[784, 512, 10]), 784 * 512 + 512 + 512 * 10 + 10);
        let m = seeded(&[3, 4, 2], 1);
        assert_eq!(m.flatten().len(), 3 * 4 + 4 + 4 * 2 + 2);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let layer = Dense {
            weight: Tensor2::identity(3),
            bias: Tensor2::zeros(1, 3),
        };
        let m = MlpModel::from_layers(vec![layer]).unwrap();
        let x = Tensor2::from_vec(2, 3, vec![1.0, -2.0, 3.5, 0.0, 0.25, -7.0]).unwrap();
        let (y, _) = m.forward(&x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let m = seeded(&[3, 2], 0);
        let x = Tensor2::zeros(1, 4);
        assert!(matches!(m.forward(&x), Err(Error::Shape { .. })));
    }

    #[test]
    fn backward_rejects_stale_cache() {
        let mut m = seeded(&[3, 4, 2], 0);
        let x = Tensor2::from_vec(1, 3, vec![0.1, 0.2, 0.3]).unwrap();
        let (_, cache) = m.forward(&x).unwrap();
        let p = m.flatten();
        m.set_params(&p).unwrap();
        assert!(matches!(m.backward(&cache, &[1]), Err(Error::StaleCache(_))));

        let other = seeded(&[3, 5, 2], 0);
        assert!(matches!(other.backward(&cache, &[1]), Err(Error::StaleCache(_))));
    }

    #[test]
    fn zero_input_gives_zero_first_layer_weight_grad() {
        let mut m = seeded(&[5, 6, 3], 4);
        let mut p = m.flatten();
        // zero every bias so the input layer sees exactly zero activations
        let mut off = 0;
        for w in m.dims().to_vec().windows(2) {
            off += w[0] * w[1];
            for v in &mut p[off..off + w[1]] {
                *v = 0.0;
            }
            off += w[1];
        }
        m.set_params(&p).unwrap();
        let x = Tensor2::zeros(3, 5);
        let (_, cache) = m.forward(&x).unwrap();
        let g = m.backward(&cache, &[0, 1, 2]).unwrap();
        assert!(g[..5 * 6].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicated_sample_matches_single() {
        let m = seeded(&[4, 8, 3], 9);
        let one = Tensor2::from_vec(1, 4, vec![0.3, -0.1, 0.9, 0.5]).unwrap();
        let two = one.gather_rows(&[0, 0]);
        let (_, c1) = m.forward(&one).unwrap();
        let (_, c2) = m.forward(&two).unwrap();
        let g1 = m.backward(&c1, &[2]).unwrap();
        let g2 = m.backward(&c2, &[2, 2]).unwrap();
        for (a, b) in g1.iter().zip(g2.iter()) {
            assert!((a - b).abs() <= 1e-15 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn per_sample_gradients_average_to_batch_gradient() {
        let m = seeded(&[4, 7, 3], 2);
        let mut rng = RngStream::new(5, 5);
        let x = Tensor2::from_vec(6, 4, (0..24).map(|_| rng.uniform()).collect()).unwrap();
        let labels = [0, 1, 2, 2, 1, 0];
        let (_, cache) = m.forward(&x).unwrap();
        let batch = m.backward(&cache, &labels).unwrap();
        let dl = crate::ndnet::loss::cross_entropy_logit_grad(cache.logits(), &labels, None).unwrap();
        let mut unscaled = dl;
        unscaled.data_mut().iter_mut().for_each(|v| *v *= 6.0);
        let mut acc = vec![0.0; m.num_params()];
        m.for_each_sample_gradient(&cache, unscaled, |_, g| {
            for (a, v) in acc.iter_mut().zip(g) {
                *a += v / 6.0;
            }
        })
        .unwrap();
        for (a, b) in acc.iter().zip(batch.iter()) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }
}
