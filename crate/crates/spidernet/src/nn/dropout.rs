//! Inverted dropout: surviving units are scaled by `1/(1-p)` at train time
//! so eval mode is the identity.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::tensor::Tensor;

/// Draw a 0/1 keep mask. Entries are kept with probability `1 - p`.
pub fn dropout_mask(shape: &[usize], p: f64, rng: &mut impl Rng) -> Result<Tensor> {
    validate_rate(p)?;
    let n: usize = shape.iter().product();
    let values = (0..n)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { 1.0 })
        .collect();
    Tensor::new(shape, values)
}

/// Apply dropout. In eval mode (or with `p = 0`) the input passes through
/// and no mask is consumed; in train mode the given mask must match the
/// input shape.
pub fn dropout_forward(x: &Tensor, p: f64, mode: Mode, mask: Option<&Tensor>) -> Result<Tensor> {
    validate_rate(p)?;
    if mode == Mode::Eval || p == 0.0 {
        return Ok(x.clone());
    }
    let mask = mask.ok_or_else(|| Error::InvalidInput("dropout in train mode needs a mask".into()))?;
    if mask.shape() != x.shape() {
        return Err(Error::shape(
            "dropout mask",
            format!("{:?}", x.shape()),
            format!("{:?}", mask.shape()),
        ));
    }
    let scale = 1.0 / (1.0 - p);
    let mut out = x.clone();
    for (v, &m) in out.values_mut().iter_mut().zip(mask.values()) {
        *v *= m * scale;
    }
    Ok(out)
}

pub fn dropout_backward(grad_out: &Tensor, p: f64, mode: Mode, mask: Option<&Tensor>) -> Result<Tensor> {
    // same linear map as the forward pass
    dropout_forward(grad_out, p, mode, mask)
}

fn validate_rate(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::hyper("dropout p", format!("must be in [0, 1), got {}", p)));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rate_zero_is_identity_in_both_modes() {
        let x = Tensor::new(&[1, 4], vec![1.0, -2.0, 3.0, 4.0]).unwrap();
        let train = dropout_forward(&x, 0.0, Mode::Train, None).unwrap();
        let eval = dropout_forward(&x, 0.0, Mode::Eval, None).unwrap();
        assert_eq!(train.values(), x.values());
        assert_eq!(eval.values(), x.values());
    }

    #[test]
    fn eval_mode_ignores_rate() {
        let x = Tensor::new(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let out = dropout_forward(&x, 0.7, Mode::Eval, None).unwrap();
        assert_eq!(out.values(), x.values());
    }

    #[test]
    fn invalid_rates_are_rejected() {
        let x = Tensor::zeros(&[1, 2]);
        assert!(dropout_forward(&x, 1.0, Mode::Train, None).is_err());
        assert!(dropout_forward(&x, -0.1, Mode::Train, None).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(dropout_mask(&[2, 2], 1.5, &mut rng).is_err());
    }

    #[test]
    fn inverted_scaling_preserves_expectation() {
        // mean over many masks stays within 2% of the input
        let x = Tensor::filled(&[1, 8], 1.0);
        let p = 0.3;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let trials = 10_000;
        let mut acc = vec![0.0; 8];
        for _ in 0..trials {
            let mask = dropout_mask(x.shape(), p, &mut rng).unwrap();
            let out = dropout_forward(&x, p, Mode::Train, Some(&mask)).unwrap();
            for (a, &v) in acc.iter_mut().zip(out.values()) {
                *a += v;
            }
        }
        for a in acc {
            let mean = a / trials as f64;
            assert!((mean - 1.0).abs() < 0.02, "mean {} drifted", mean);
        }
    }

    #[test]
    fn backward_reuses_the_mask() {
        let x = Tensor::new(&[1, 4], vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let mask = Tensor::new(&[1, 4], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let out = dropout_forward(&x, 0.5, Mode::Train, Some(&mask)).unwrap();
        assert_eq!(out.values(), &[2.0, 0.0, 2.0, 0.0]);
        let g = dropout_backward(&x, 0.5, Mode::Train, Some(&mask)).unwrap();
        assert_eq!(g.values(), &[2.0, 0.0, 2.0, 0.0]);
    }
}
