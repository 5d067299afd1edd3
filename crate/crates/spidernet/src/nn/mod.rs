//! Minimal differentiable compute engine.
//!
//! Each layer is a pair of free functions: a forward kernel that returns the
//! output plus a cache of whatever the backward pass needs, and a backward
//! kernel that turns an upstream gradient into exact input/parameter
//! gradients. Everything is f64 and deterministic given explicit rng state.

pub mod conv;
pub mod dense;
pub mod dropout;
pub mod gradcheck;
pub mod loss;
pub mod norm;
pub mod pool;

pub use conv::{conv1d_backward, conv1d_forward, Conv1dCache};
pub use dense::{dense_backward, dense_forward, flatten, flatten_backward, relu, relu_backward};
pub use dropout::{dropout_backward, dropout_forward, dropout_mask};
pub use gradcheck::{grad_check, layer_grad_check, CheckedLayer};
pub use loss::{softmax, softmax_cross_entropy};
pub use norm::{batchnorm_backward, batchnorm_eval, batchnorm_train, BatchNormCache};
pub use pool::{global_avg_pool, global_avg_pool_backward, maxpool1d, maxpool1d_backward, MaxPoolCache};

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

/// Which weight-decay coefficient applies to a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecayGroup {
    ConvWeight,
    DenseWeight,
    BatchNormGain,
    Bias,
}

/// A trainable tensor with its gradient and Adam moment buffers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub adam_m: Tensor,
    pub adam_v: Tensor,
    pub decay_group: DecayGroup,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor, decay_group: DecayGroup) -> Self {
        let shape = value.shape().to_vec();
        Parameter {
            name: name.into(),
            value,
            grad: Tensor::zeros(&shape),
            adam_m: Tensor::zeros(&shape),
            adam_v: Tensor::zeros(&shape),
            decay_group,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.values_mut().fill(0.0);
    }
}

/// Forward/eval mode switch for dropout and batch normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}
