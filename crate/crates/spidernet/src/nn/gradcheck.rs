//! Central finite-difference checking of every layer's backward pass.
//!
//! The scalar probe is `loss = sum(direction ⊙ forward(inputs))` for a fixed
//! random `direction`, so the analytic gradient is whatever the layer's
//! backward returns for `grad_out = direction`. The numeric side never
//! touches the backward kernels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::{self, Mode};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Max over all coordinates of `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`
/// using central differences with step `h`.
pub fn grad_check<F>(mut loss: F, inputs: &[Tensor], analytic: &[Tensor], h: f64) -> f64
where
    F: FnMut(&[Tensor]) -> f64,
{
    assert_eq!(inputs.len(), analytic.len(), "one gradient per input tensor");
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut max_rel = 0.0f64;
    for i in 0..inputs.len() {
        assert_eq!(inputs[i].shape(), analytic[i].shape());
        for j in 0..inputs[i].len() {
            let orig = inputs[i].values()[j];
            work[i].values_mut()[j] = orig + h;
            let up = loss(&work);
            work[i].values_mut()[j] = orig - h;
            let down = loss(&work);
            work[i].values_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[i].values()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            max_rel = max_rel.max(rel);
        }
    }
    max_rel
}

/// Layer kinds covered by [`layer_grad_check`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckedLayer {
    Conv1d,
    Dense,
    BatchNorm,
    Relu,
    MaxPool,
    GlobalAvgPool,
    Dropout,
    SoftmaxCrossEntropy,
    Concat,
    Flatten,
}

impl CheckedLayer {
    pub const ALL: [CheckedLayer; 10] = [
        CheckedLayer::Conv1d,
        CheckedLayer::Dense,
        CheckedLayer::BatchNorm,
        CheckedLayer::Relu,
        CheckedLayer::MaxPool,
        CheckedLayer::GlobalAvgPool,
        CheckedLayer::Dropout,
        CheckedLayer::SoftmaxCrossEntropy,
        CheckedLayer::Concat,
        CheckedLayer::Flatten,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            CheckedLayer::Conv1d => "conv1d",
            CheckedLayer::Dense => "dense",
            CheckedLayer::BatchNorm => "batchnorm",
            CheckedLayer::Relu => "relu",
            CheckedLayer::MaxPool => "maxpool",
            CheckedLayer::GlobalAvgPool => "globalavgpool",
            CheckedLayer::Dropout => "dropout",
            CheckedLayer::SoftmaxCrossEntropy => "softmax_ce",
            CheckedLayer::Concat => "concat",
            CheckedLayer::Flatten => "flatten",
        }
    }
}

/// Build a small random instance of the given layer (dropout mask frozen),
/// run its backward pass, and return the finite-difference discrepancy.
pub fn layer_grad_check(layer: CheckedLayer, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = DEFAULT_STEP;
    match layer {
        CheckedLayer::Conv1d => {
            let stride = 1 + (seed % 2) as usize;
            let x = Tensor::uniform(&[2, 2, 9], -1.0, 1.0, &mut rng);
            let w = Tensor::uniform(&[3, 2, 3], -1.0, 1.0, &mut rng);
            let b = Tensor::uniform(&[3], -0.5, 0.5, &mut rng);
            let (out, cache) = nn::conv1d_forward(&x, &w, b.values(), stride)?;
            let direction = Tensor::uniform(out.shape(), -1.0, 1.0, &mut rng);
            let (gx, gw, gb) = nn::conv1d_backward(&cache, &direction)?;
            let analytic = vec![gx, gw, Tensor::new(&[3], gb)?];
            let loss = |vars: &[Tensor]| {
                let (out, _) = nn::conv1d_forward(&vars[0], &vars[1], vars[2].values(), stride).unwrap();
                dot(&out, &direction)
            };
            Ok(grad_check(loss, &[x, w, b], &analytic, h))
        }
        CheckedLayer::Dense => {
            let x = Tensor::uniform(&[3, 5], -1.0, 1.0, &mut rng);
            let w = Tensor::uniform(&[4, 5], -1.0, 1.0, &mut rng);
            let b = Tensor::uniform(&[4], -0.5, 0.5, &mut rng);
            let out = nn::dense_forward(&x, &w, b.values())?;
            let direction = Tensor::uniform(out.shape(), -1.0, 1.0, &mut rng);
            let (gx, gw, gb) = nn::dense_backward(&x, &w, &direction)?;
            let analytic = vec![gx, gw, Tensor::new(&[4], gb)?];
            let loss = |vars: &[Tensor]| {
                let out = nn::dense_forward(&vars[0], &vars[1], vars[2].values()).unwrap();
                dot(&out, &direction)
            };
            Ok(grad_check(loss, &[x, w, b], &analytic, h))
        }
        CheckedLayer::BatchNorm => {
            let eps = 1e-5;
            let x = Tensor::uniform(&[3, 2, 4], -2.0, 2.0, &mut rng);
            let gamma = Tensor::uniform(&[2], 0.5, 1.5, &mut rng);
            let beta = Tensor::uniform(&[2], -0.5, 0.5, &mut rng);
            let bn = |vars: &[Tensor]| -> Tensor {
                let mut rm = vec![0.0; 2];
                let mut rv = vec![1.0; 2];
                let (out, _) =
                    nn::batchnorm_train(&vars[0], vars[1].values(), vars[2].values(), eps, 0.9, &mut rm, &mut rv)
                        .unwrap();
                out
            };
            let inputs = vec![x.clone(), gamma.clone(), beta.clone()];
            let out = bn(&inputs);
            let direction = Tensor::uniform(out.shape(), -1.0, 1.0, &mut rng);
            let mut rm = vec![0.0; 2];
            let mut rv = vec![1.0; 2];
            let (_, cache) = nn::batchnorm_train(&x, gamma.values(), beta.values(), eps, 0.9, &mut rm, &mut rv)?;
            let (gx, gg, gb) = nn::batchnorm_backward(&cache, &direction)?;
            let analytic = vec![gx, Tensor::new(&[2], gg)?, Tensor::new(&[2], gb)?];
            let loss = |vars: &[Tensor]| dot(&bn(vars), &direction);
            Ok(grad_check(loss, &inputs, &analytic, h))
        }
        CheckedLayer::Relu => {
            let mut x = Tensor::uniform(&[2, 3, 5], -1.0, 1.0, &mut rng);
            nudge_from_zero(&mut x, 10.0 * h);
            let out = nn::relu(&x);
            let direction = Tensor::uniform(out.shape(), -1.0, 1.0, &mut rng);
            let analytic = vec![nn::relu_backward(&x, &direction)?];
            let loss = |vars: &[Tensor]| dot(&nn::relu(&vars[0]), &direction);
            Ok(grad_check(loss, &[x], &analytic, h))
        }
        CheckedLayer::MaxPool => {
            let x = Tensor::uniform(&[2, 2, 9], -1.0, 1.0, &mut rng);
            let (out, cache) = nn::maxpool1d(&x, 2, 2)?;
            let direction = Tensor::uniform(out.shape(), -1.0, 1.0, &mut rng);
            let analytic = vec![nn::maxpool1d_backward(&cache, &direction)?];
            let loss = |vars: &[Tensor]| {
                let (out, _) = nn::maxpool1d(&vars[0], 2, 2).unwrap();
                dot(&out, &direction)
            };
            Ok(grad_check(loss, &[x], &analytic, h))
        }
        CheckedLayer::GlobalAvgPool => {
            let x = Tensor::uniform(&[2, 3, 7], -1.0, 1.0, &mut rng);
            let out = nn::global_avg_pool(&x)?;
            let direction = Tensor::uniform(out.shape(), -1.0, 1.0, &mut rng);
            let analytic = vec![nn::global_avg_pool_backward(x.shape(), &direction)?];
            let loss = |vars: &[Tensor]| dot(&nn::global_avg_pool(&vars[0]).unwrap(), &direction);
            Ok(grad_check(loss, &[x], &analytic, h))
        }
        CheckedLayer::Dropout => {
            let p = 0.3;
            let x = Tensor::uniform(&[2, 3, 5], -1.0, 1.0, &mut rng);
            let mask = nn::dropout_mask(x.shape(), p, &mut rng)?;
            let out = nn::dropout_forward(&x, p, Mode::Train, Some(&mask))?;
            let direction = Tensor::uniform(out.shape(), -1.0, 1.0, &mut rng);
            let analytic = vec![nn::dropout_backward(&direction, p, Mode::Train, Some(&mask))?];
            let loss = |vars: &[Tensor]| {
                let out = nn::dropout_forward(&vars[0], p, Mode::Train, Some(&mask)).unwrap();
                dot(&out, &direction)
            };
            Ok(grad_check(loss, &[x], &analytic, h))
        }
        CheckedLayer::SoftmaxCrossEntropy => {
            let logits = Tensor::uniform(&[4, 2], -3.0, 3.0, &mut rng);
            let labels: Vec<u8> = (0..4).map(|_| (rng.random::<f64>() < 0.5) as u8).collect();
            let (_, grad) = nn::softmax_cross_entropy(&logits, &labels)?;
            let analytic = vec![grad];
            let labels2 = labels.clone();
            let loss = move |vars: &[Tensor]| nn::softmax_cross_entropy(&vars[0], &labels2).unwrap().0;
            Ok(grad_check(loss, &[logits], &analytic, h))
        }
        CheckedLayer::Concat => {
            let a = Tensor::uniform(&[2, 3], -1.0, 1.0, &mut rng);
            let b = Tensor::uniform(&[2, 4], -1.0, 1.0, &mut rng);
            let cat = concat_features(&[&a, &b]);
            let direction = Tensor::uniform(cat.shape(), -1.0, 1.0, &mut rng);
            let parts = split_features(&direction, &[3, 4]);
            let analytic = vec![parts[0].clone(), parts[1].clone()];
            let loss = |vars: &[Tensor]| dot(&concat_features(&[&vars[0], &vars[1]]), &direction);
            Ok(grad_check(loss, &[a, b], &analytic, h))
        }
        CheckedLayer::Flatten => {
            let x = Tensor::uniform(&[2, 3, 4], -1.0, 1.0, &mut rng);
            let out = nn::flatten(&x)?;
            let direction = Tensor::uniform(out.shape(), -1.0, 1.0, &mut rng);
            let analytic = vec![nn::flatten_backward(x.shape(), &direction)?];
            let loss = |vars: &[Tensor]| dot(&nn::flatten(&vars[0]).unwrap(), &direction);
            Ok(grad_check(loss, &[x], &analytic, h))
        }
    }
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum()
}

fn nudge_from_zero(t: &mut Tensor, margin: f64) {
    for v in t.values_mut() {
        if v.abs() < margin {
            *v += if *v >= 0.0 { margin } else { -margin };
        }
    }
}

fn concat_features(parts: &[&Tensor]) -> Tensor {
    let batch = parts[0].shape()[0];
    let total: usize = parts.iter().map(|p| p.shape()[1]).sum();
    let mut out = Tensor::zeros(&[batch, total]);
    for n in 0..batch {
        let mut off = 0;
        for p in parts {
            for f in 0..p.shape()[1] {
                out.set2(n, off + f, p.at2(n, f));
            }
            off += p.shape()[1];
        }
    }
    out
}

fn split_features(t: &Tensor, widths: &[usize]) -> Vec<Tensor> {
    let batch = t.shape()[0];
    let mut parts = Vec::with_capacity(widths.len());
    let mut off = 0;
    for &w in widths {
        let mut p = Tensor::zeros(&[batch, w]);
        for n in 0..batch {
            for f in 0..w {
                p.set2(n, f, t.at2(n, off + f));
            }
        }
        off += w;
        parts.push(p);
    }
    parts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_layer_kind_passes_a_quick_check() {
        for layer in CheckedLayer::ALL {
            for seed in 0..3u64 {
                let err = layer_grad_check(layer, seed).unwrap();
                assert!(err < 1e-4, "{} seed {} rel err {}", layer.name(), seed, err);
            }
        }
    }
}
