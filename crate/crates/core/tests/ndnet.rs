use genbound::data::synth_gaussian_mixture;
use genbound::ndnet::{loss_and_grad, loss_eval, per_sample_cross_entropy, LossKind, MlpModel, Tensor2};
use genbound::rng::{streams, RngStream};
use proptest::prelude::*;

fn model(dims: &[usize], seed: u64) -> MlpModel {
    MlpModel::init(dims, &mut RngStream::new(seed, streams::INIT)).unwrap()
}

/// Straight-line forward pass written from the layer definition, without gemm.
#[allow(clippy::needless_range_loop)]
fn reference_logits(m: &MlpModel, x: &Tensor2) -> Vec<Vec<f64>> {
    let last = m.layers().len() - 1;
    (0..x.rows())
        .map(|r| {
            let mut a = x.row(r).to_vec();
            for (li, l) in m.layers().iter().enumerate() {
                let (fan_in, fan_out) = (l.weight.rows(), l.weight.cols());
                let mut z = l.bias.data().to_vec();
                for j in 0..fan_out {
                    for i in 0..fan_in {
                        z[j] += a[i] * l.weight.get(i, j);
                    }
                }
                if li != last {
                    z.iter_mut().for_each(|v| *v = v.max(0.0));
                }
                a = z;
            }
            a
        })
        .collect()
}

#[test]
fn forward_matches_reference_implementation() {
    let data = synth_gaussian_mixture(37, 9, 4, 2).unwrap();
    for dims in [vec![9, 4], vec![9, 16, 4], vec![9, 64, 8, 4]] {
        let m = model(&dims, 1);
        let (logits, _) = m.forward(data.features()).unwrap();
        let reference = reference_logits(&m, data.features());
        for (r, row) in reference.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                assert!((logits.get(r, c) - v).abs() <= 1e-12 * (1.0 + v.abs()));
            }
        }
    }
}

#[test]
fn backprop_matches_central_differences() {
    let data = synth_gaussian_mixture(12, 6, 3, 5).unwrap();
    for width in [4, 16, 64] {
        let dims = [6, width, 3];
        let m = model(&dims, width as u64);
        let theta = m.flatten().into_vec();
        let (_, grad) = loss_and_grad(LossKind::CrossEntropy, &m, data.features(), data.labels()).unwrap();
        let f = |p: &[f64]| {
            let m = MlpModel::unflatten(&dims, p).unwrap();
            loss_eval(LossKind::CrossEntropy, &m, data.features(), data.labels()).unwrap()
        };
        let mut rng = RngStream::new(99, streams::CHECKS);
        for _ in 0..200 {
            let i = rng.index(theta.len());
            let h = 1e-5 * (1.0 + theta[i].abs());
            let mut p = theta.clone();
            p[i] += h;
            let up = f(&p);
            p[i] -= 2.0 * h;
            let fd = (up - f(&p)) / (2.0 * h);
            let rel = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-6);
            assert!(rel < 1e-4, "width {width}, coord {i}: {} vs {fd}", grad[i]);
        }
    }
}

#[test]
fn cross_entropy_known_value() {
    // uniform logits over 4 classes
    let logits = Tensor2::from_vec(2, 4, vec![0.0; 8]).unwrap();
    let ce = per_sample_cross_entropy(&logits, &[0, 3]).unwrap();
    for v in ce {
        assert!((v - 4f64.ln()).abs() < 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn flatten_unflatten_round_trip(hidden in 1usize..12, seed in any::<u64>()) {
        let dims = [5, hidden, 3];
        let m = model(&dims, seed);
        let flat = m.flatten();
        prop_assert_eq!(flat.len(), MlpModel::param_count(&dims));
        let back = MlpModel::unflatten(&dims, &flat).unwrap();
        prop_assert_eq!(back.flatten().into_vec(), flat.into_vec());
    }

    #[test]
    fn forward_is_deterministic(seed in any::<u64>(), n in 1usize..20) {
        let data = synth_gaussian_mixture(n.max(3), 7, 3, seed).unwrap();
        let m = model(&[7, 10, 3], seed);
        let (a, _) = m.forward(data.features()).unwrap();
        let (b, _) = m.forward(data.features()).unwrap();
        prop_assert_eq!(a.data(), b.data());
    }

    #[test]
    fn truncated_loss_is_capped(seed in any::<u64>(), c0 in 0.05f64..3.0, scale in 0.1f64..20.0) {
        let data = synth_gaussian_mixture(24, 5, 4, seed).unwrap();
        let mut m = model(&[5, 8, 4], seed);
        let theta: Vec<f64> = m.flatten().iter().map(|v| v * scale).collect();
        m.set_params(&theta).unwrap();
        let ce = loss_eval(LossKind::CrossEntropy, &m, data.features(), data.labels()).unwrap();
        let tr = loss_eval(LossKind::TruncatedCrossEntropy { c0 }, &m, data.features(), data.labels()).unwrap();
        prop_assert!(tr >= 0.0);
        prop_assert!(tr <= c0 + 1e-15);
        prop_assert!(tr <= ce + 1e-15);
    }

    #[test]
    fn pure_quadratic_loss_and_gradient(seed in any::<u64>()) {
        let data = synth_gaussian_mixture(6, 3, 2, seed).unwrap();
        let m = model(&[3, 4, 2], seed);
        let theta = m.flatten();
        let (loss, grad) = loss_and_grad(LossKind::PureQuadratic, &m, data.features(), data.labels()).unwrap();
        let half_sq = 0.5 * theta.iter().map(|v| v * v).sum::<f64>();
        prop_assert!((loss - half_sq).abs() <= 1e-12 * (1.0 + half_sq));
        prop_assert_eq!(grad.into_vec(), theta.into_vec());
    }
}
