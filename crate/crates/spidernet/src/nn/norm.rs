//! Batch normalization over the `(batch, length)` axes of each channel.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Intermediates for the train-mode backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub normalized: Tensor,
    pub inv_std: Vec<f64>,
    pub gamma: Vec<f64>,
}

/// Train-mode batchnorm: normalize each channel with the biased (1/N) batch
/// statistics, scale and shift, and fold the batch statistics into the
/// running estimates as `running = momentum * running + (1 - momentum) * batch`.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_train(
    x: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
    momentum: f64,
    running_mean: &mut [f64],
    running_var: &mut [f64],
) -> Result<(Tensor, BatchNormCache)> {
    if x.rank() != 3 {
        return Err(Error::shape("batchnorm input", "(B, C, L)", format!("{:?}", x.shape())));
    }
    if eps <= 0.0 {
        return Err(Error::hyper("batchnorm eps", "must be > 0"));
    }
    let (batch, channels, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    check_channel_dims(channels, gamma, beta)?;
    if running_mean.len() != channels || running_var.len() != channels {
        return Err(Error::shape(
            "batchnorm running stats",
            format!("{} channels", channels),
            format!("{}/{}", running_mean.len(), running_var.len()),
        ));
    }
    let n = batch * len;
    if n < 2 {
        return Err(Error::InvalidInput(
            "batchnorm train mode needs batch*length >= 2 for a variance estimate".into(),
        ));
    }

    let mut out = Tensor::zeros(x.shape());
    let mut normalized = Tensor::zeros(x.shape());
    let mut inv_std = vec![0.0; channels];
    for c in 0..channels {
        let mut mean = 0.0;
        for b in 0..batch {
            for l in 0..len {
                mean += x.at3(b, c, l);
            }
        }
        mean /= n as f64;
        let mut var = 0.0;
        for b in 0..batch {
            for l in 0..len {
                let d = x.at3(b, c, l) - mean;
                var += d * d;
            }
        }
        var /= n as f64;
        let istd = 1.0 / (var + eps).sqrt();
        inv_std[c] = istd;
        for b in 0..batch {
            for l in 0..len {
                let xn = (x.at3(b, c, l) - mean) * istd;
                normalized.set3(b, c, l, xn);
                out.set3(b, c, l, gamma[c] * xn + beta[c]);
            }
        }
        running_mean[c] = momentum * running_mean[c] + (1.0 - momentum) * mean;
        running_var[c] = momentum * running_var[c] + (1.0 - momentum) * var;
    }
    Ok((
        out,
        BatchNormCache {
            normalized,
            inv_std,
            gamma: gamma.to_vec(),
        },
    ))
}

/// Eval-mode batchnorm using the running statistics.
pub fn batchnorm_eval(
    x: &Tensor,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
    running_mean: &[f64],
    running_var: &[f64],
) -> Result<Tensor> {
    if x.rank() != 3 {
        return Err(Error::shape("batchnorm input", "(B, C, L)", format!("{:?}", x.shape())));
    }
    if eps <= 0.0 {
        return Err(Error::hyper("batchnorm eps", "must be > 0"));
    }
    let (batch, channels, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    check_channel_dims(channels, gamma, beta)?;
    let mut out = Tensor::zeros(x.shape());
    for c in 0..channels {
        let istd = 1.0 / (running_var[c] + eps).sqrt();
        for b in 0..batch {
            for l in 0..len {
                let xn = (x.at3(b, c, l) - running_mean[c]) * istd;
                out.set3(b, c, l, gamma[c] * xn + beta[c]);
            }
        }
    }
    Ok(out)
}

/// Train-mode backward. Returns `(grad_x, grad_gamma, grad_beta)`.
pub fn batchnorm_backward(cache: &BatchNormCache, grad_out: &Tensor) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    let xn = &cache.normalized;
    if grad_out.shape() != xn.shape() {
        return Err(Error::shape(
            "batchnorm grad_out",
            format!("{:?}", xn.shape()),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let (batch, channels, len) = (xn.shape()[0], xn.shape()[1], xn.shape()[2]);
    let n = (batch * len) as f64;
    let mut grad_x = Tensor::zeros(xn.shape());
    let mut grad_gamma = vec![0.0; channels];
    let mut grad_beta = vec![0.0; channels];
    for c in 0..channels {
        let mut sum_g = 0.0;
        let mut sum_gxn = 0.0;
        for b in 0..batch {
            for l in 0..len {
                let g = grad_out.at3(b, c, l);
                sum_g += g;
                sum_gxn += g * xn.at3(b, c, l);
            }
        }
        grad_beta[c] = sum_g;
        grad_gamma[c] = sum_gxn;
        let scale = cache.gamma[c] * cache.inv_std[c];
        for b in 0..batch {
            for l in 0..len {
                let g = grad_out.at3(b, c, l);
                let gx = scale * (g - sum_g / n - xn.at3(b, c, l) * sum_gxn / n);
                grad_x.set3(b, c, l, gx);
            }
        }
    }
    Ok((grad_x, grad_gamma, grad_beta))
}

fn check_channel_dims(channels: usize, gamma: &[f64], beta: &[f64]) -> Result<()> {
    if gamma.len() != channels || beta.len() != channels {
        return Err(Error::shape(
            "batchnorm gamma/beta",
            format!("{} channels", channels),
            format!("{}/{}", gamma.len(), beta.len()),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_channel_normalizes_to_unit() {
        // mean 2, biased variance 1 -> [-1, 1]
        let x = Tensor::new(&[2, 1, 1], vec![1.0, 3.0]).unwrap();
        let mut rm = vec![0.0];
        let mut rv = vec![1.0];
        let (out, _) = batchnorm_train(&x, &[1.0], &[0.0], 1e-12, 0.9, &mut rm, &mut rv).unwrap();
        assert!((out.values()[0] + 1.0).abs() < 1e-6);
        assert!((out.values()[1] - 1.0).abs() < 1e-6);
        // running = 0.9*prior + 0.1*batch
        assert!((rm[0] - 0.1 * 2.0).abs() < 1e-12);
        assert!((rv[0] - (0.9 + 0.1 * 1.0)).abs() < 1e-12);
    }

    #[test]
    fn zero_gain_outputs_constant_beta() {
        let x = Tensor::new(&[1, 1, 4], vec![5.0, -3.0, 2.0, 0.1]).unwrap();
        let mut rm = vec![0.0];
        let mut rv = vec![1.0];
        let (out, _) = batchnorm_train(&x, &[0.0], &[0.7], 1e-5, 0.9, &mut rm, &mut rv).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn normalized_output_has_zero_mean_unit_variance() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::uniform(&[4, 2, 9], -3.0, 7.0, &mut rng);
        let mut rm = vec![0.0; 2];
        let mut rv = vec![1.0; 2];
        let (out, _) = batchnorm_train(&x, &[1.0, 1.0], &[0.0, 0.0], 1e-10, 0.9, &mut rm, &mut rv).unwrap();
        for c in 0..2 {
            let n = (4 * 9) as f64;
            let mut mean = 0.0;
            let mut var = 0.0;
            for b in 0..4 {
                for l in 0..9 {
                    mean += out.at3(b, c, l);
                }
            }
            mean /= n;
            for b in 0..4 {
                for l in 0..9 {
                    var += (out.at3(b, c, l) - mean).powi(2);
                }
            }
            var /= n;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn train_mode_requires_two_samples() {
        let x = Tensor::new(&[1, 1, 1], vec![1.0]).unwrap();
        let mut rm = vec![0.0];
        let mut rv = vec![1.0];
        assert!(batchnorm_train(&x, &[1.0], &[0.0], 1e-5, 0.9, &mut rm, &mut rv).is_err());
    }

    #[test]
    fn eps_must_be_positive() {
        let x = Tensor::zeros(&[2, 1, 2]);
        let mut rm = vec![0.0];
        let mut rv = vec![1.0];
        assert!(batchnorm_train(&x, &[1.0], &[0.0], 0.0, 0.9, &mut rm, &mut rv).is_err());
        assert!(batchnorm_eval(&x, &[1.0], &[0.0], 0.0, &rm, &rv).is_err());
    }

    #[test]
    fn eval_uses_running_stats() {
        let x = Tensor::new(&[1, 1, 2], vec![3.0, 5.0]).unwrap();
        let rm = vec![3.0];
        let rv = vec![4.0];
        let out = batchnorm_eval(&x, &[1.0], &[0.0], 1e-12, &rm, &rv).unwrap();
        assert!((out.values()[0] - 0.0).abs() < 1e-6);
        assert!((out.values()[1] - 1.0).abs() < 1e-6);
    }
}
