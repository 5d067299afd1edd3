//! Adam update with bias correction and grouped coupled weight decay.

use crate::error::{Error, Result};
use crate::nn::{DecayGroup, Parameter};
use crate::train::TrainConfig;

/// One optimizer step over all parameters. The decay coefficient is chosen
/// per group (`weight_decay` for conv/dense weights, `l2_batch` for
/// batchnorm gains, none for biases and shifts) and enters as an additive
/// `lambda * w` gradient term before the moment updates.
pub fn adam_step(params: &mut [Parameter], config: &TrainConfig, t: usize) -> Result<()> {
    if t < 1 {
        return Err(Error::hyper("t", "step index starts at 1"));
    }
    let bc1 = 1.0 - config.beta1.powi(t as i32);
    let bc2 = 1.0 - config.beta2.powi(t as i32);
    for p in params.iter_mut() {
        let lambda = match p.decay_group {
            DecayGroup::ConvWeight | DecayGroup::DenseWeight => config.weight_decay,
            DecayGroup::BatchNormGain => config.l2_batch,
            DecayGroup::Bias => 0.0,
        };
        let n = p.value.len();
        for i in 0..n {
            let raw = p.grad.values()[i];
            if !raw.is_finite() {
                return Err(Error::NonFiniteGradient { name: p.name.clone() });
            }
            let g = raw + lambda * p.value.values()[i];
            let m = config.beta1 * p.adam_m.values()[i] + (1.0 - config.beta1) * g;
            let v = config.beta2 * p.adam_v.values()[i] + (1.0 - config.beta2) * g * g;
            p.adam_m.values_mut()[i] = m;
            p.adam_v.values_mut()[i] = v;
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            p.value.values_mut()[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.adam_eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_param(value: f64, grad: f64, group: DecayGroup) -> Parameter {
        let mut p = Parameter::new("w", Tensor::new(&[1], vec![value]).unwrap(), group);
        p.grad = Tensor::new(&[1], vec![grad]).unwrap();
        p
    }

    fn config(lr: f64, weight_decay: f64) -> TrainConfig {
        TrainConfig {
            learning_rate: lr,
            weight_decay,
            l2_batch: 0.0,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn first_step_matches_hand_evaluation() {
        // w=0, g=1, lr=0.001, t=1: m_hat=1, v_hat=1, step = lr/(1+eps)
        let mut params = vec![scalar_param(0.0, 1.0, DecayGroup::DenseWeight)];
        adam_step(&mut params, &config(0.001, 0.0), 1).unwrap();
        let expected = -0.001 / (1.0 + 1e-8);
        let got = params[0].value.values()[0];
        assert!((got - expected).abs() < 1e-15, "got {}", got);
        // magnitude is lr up to the epsilon correction
        assert!((got + 0.001).abs() < 1e-9);
    }

    #[test]
    fn first_step_direction_is_negative_gradient_sign() {
        for &g in &[3.0, -0.25, 1e-6, -42.0] {
            let mut params = vec![scalar_param(0.0, g, DecayGroup::ConvWeight)];
            adam_step(&mut params, &config(0.01, 0.0), 1).unwrap();
            let w = params[0].value.values()[0];
            assert_eq!(w.signum(), -g.signum());
            // hand-computed magnitude at t=1: lr * |g| / (|g| + eps)
            let expected = 0.01 * g.abs() / (g.abs() + 1e-8);
            assert!((w.abs() - expected).abs() < 1e-9, "g={} w={}", g, w);
        }
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut params = vec![scalar_param(1.5, 0.0, DecayGroup::DenseWeight)];
        adam_step(&mut params, &config(0.01, 0.0), 1).unwrap();
        assert_eq!(params[0].value.values()[0], 1.5);
    }

    #[test]
    fn decay_only_step_matches_hand_evaluation() {
        // g=0, decay=0.1, w=1: g_eff=0.1, m_hat=0.1, v_hat=0.01,
        // step = lr * 0.1 / (0.1 + eps)
        let mut params = vec![scalar_param(1.0, 0.0, DecayGroup::DenseWeight)];
        adam_step(&mut params, &config(0.01, 0.1), 1).unwrap();
        let expected = 1.0 - 0.01 * 0.1 / (0.1 + 1e-8);
        let got = params[0].value.values()[0];
        assert!((got - expected).abs() < 1e-15, "got {}", got);
        assert!(got < 1.0);
    }

    #[test]
    fn biases_and_batchnorm_shifts_are_not_decayed() {
        let mut params = vec![scalar_param(1.0, 0.0, DecayGroup::Bias)];
        adam_step(&mut params, &config(0.01, 0.5), 1).unwrap();
        assert_eq!(params[0].value.values()[0], 1.0);
    }

    #[test]
    fn batchnorm_gain_uses_l2_batch() {
        let mut params = vec![scalar_param(1.0, 0.0, DecayGroup::BatchNormGain)];
        let mut cfg = config(0.01, 0.0);
        cfg.l2_batch = 0.1;
        adam_step(&mut params, &cfg, 1).unwrap();
        assert!(params[0].value.values()[0] < 1.0);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut params = vec![scalar_param(0.0, f64::NAN, DecayGroup::DenseWeight)];
        let err = adam_step(&mut params, &config(0.01, 0.0), 1).unwrap_err();
        assert!(err.to_string().contains("`w`"));
    }
}
