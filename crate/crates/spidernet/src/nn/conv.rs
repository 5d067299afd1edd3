//! Valid (no-padding) 1D convolution.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Saved inputs for the backward pass.
#[derive(Debug, Clone)]
pub struct Conv1dCache {
    pub x: Tensor,
    pub w: Tensor,
    pub stride: usize,
}

/// `out[n,co,t] = b[co] + sum_{ci,k} x[n,ci,t*stride+k] * w[co,ci,k]`
///
/// `x` is `(B, Cin, L)`, `w` is `(Cout, Cin, K)`, `b` has one entry per
/// output channel. Output length is `floor((L - K) / stride) + 1`.
pub fn conv1d_forward(x: &Tensor, w: &Tensor, b: &[f64], stride: usize) -> Result<(Tensor, Conv1dCache)> {
    if x.rank() != 3 {
        return Err(Error::shape("conv1d input", "(B, Cin, L)", format!("{:?}", x.shape())));
    }
    if w.rank() != 3 {
        return Err(Error::shape("conv1d weight", "(Cout, Cin, K)", format!("{:?}", w.shape())));
    }
    let (batch, c_in, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (c_out, w_cin, kernel) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    if stride < 1 {
        return Err(Error::hyper("stride", "must be >= 1"));
    }
    if kernel < 1 {
        return Err(Error::hyper("kernel", "must be >= 1"));
    }
    if w_cin != c_in {
        return Err(Error::shape(
            "conv1d channel dimension",
            format!("Cin={}", c_in),
            format!("Cin={}", w_cin),
        ));
    }
    if b.len() != c_out {
        return Err(Error::shape(
            "conv1d bias dimension",
            format!("Cout={}", c_out),
            format!("{}", b.len()),
        ));
    }
    if kernel > len {
        return Err(Error::KernelExceedsInput { kernel, length: len });
    }

    let l_out = (len - kernel) / stride + 1;
    let mut out = Tensor::zeros(&[batch, c_out, l_out]);
    for n in 0..batch {
        for co in 0..c_out {
            for t in 0..l_out {
                let mut acc = b[co];
                for ci in 0..c_in {
                    for k in 0..kernel {
                        acc += x.at3(n, ci, t * stride + k) * w.at3(co, ci, k);
                    }
                }
                out.set3(n, co, t, acc);
            }
        }
    }
    let cache = Conv1dCache {
        x: x.clone(),
        w: w.clone(),
        stride,
    };
    Ok((out, cache))
}

/// Exact gradients of [`conv1d_forward`] with respect to input, weight, bias.
pub fn conv1d_backward(cache: &Conv1dCache, grad_out: &Tensor) -> Result<(Tensor, Tensor, Vec<f64>)> {
    let x = &cache.x;
    let w = &cache.w;
    let stride = cache.stride;
    let (batch, c_in, _len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (c_out, _, kernel) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    if grad_out.rank() != 3 || grad_out.shape()[0] != batch || grad_out.shape()[1] != c_out {
        return Err(Error::shape(
            "conv1d grad_out",
            format!("(B={}, Cout={}, Lout)", batch, c_out),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let l_out = grad_out.shape()[2];

    let mut grad_x = Tensor::zeros(x.shape());
    let mut grad_w = Tensor::zeros(w.shape());
    let mut grad_b = vec![0.0; c_out];
    for n in 0..batch {
        for co in 0..c_out {
            for t in 0..l_out {
                let g = grad_out.at3(n, co, t);
                grad_b[co] += g;
                for ci in 0..c_in {
                    for k in 0..kernel {
                        let pos = t * stride + k;
                        let gx = grad_x.at3(n, ci, pos) + w.at3(co, ci, k) * g;
                        grad_x.set3(n, ci, pos, gx);
                        let gw = grad_w.at3(co, ci, k) + x.at3(n, ci, pos) * g;
                        grad_w.set3(co, ci, k, gw);
                    }
                }
            }
        }
    }
    Ok((grad_x, grad_w, grad_b))
}
