//! Fully connected layer, ReLU, and flattening.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `out = x W^T + b` with `x: (B, F)`, `w: (H, F)`, `b: (H)`.
pub fn dense_forward(x: &Tensor, w: &Tensor, b: &[f64]) -> Result<Tensor> {
    if x.rank() != 2 {
        return Err(Error::shape("dense input", "(B, F)", format!("{:?}", x.shape())));
    }
    if w.rank() != 2 {
        return Err(Error::shape("dense weight", "(H, F)", format!("{:?}", w.shape())));
    }
    let (batch, features) = (x.shape()[0], x.shape()[1]);
    let (hidden, w_features) = (w.shape()[0], w.shape()[1]);
    if w_features != features {
        return Err(Error::shape(
            "dense feature dimension",
            format!("F={}", features),
            format!("F={}", w_features),
        ));
    }
    if b.len() != hidden {
        return Err(Error::shape("dense bias", format!("H={}", hidden), format!("{}", b.len())));
    }
    let mut out = Tensor::zeros(&[batch, hidden]);
    for n in 0..batch {
        for h in 0..hidden {
            let mut acc = b[h];
            for f in 0..features {
                acc += x.at2(n, f) * w.at2(h, f);
            }
            out.set2(n, h, acc);
        }
    }
    Ok(out)
}

/// Returns `(grad_x, grad_w, grad_b)`.
pub fn dense_backward(x: &Tensor, w: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor, Vec<f64>)> {
    let (batch, features) = (x.shape()[0], x.shape()[1]);
    let hidden = w.shape()[0];
    if grad_out.shape() != [batch, hidden] {
        return Err(Error::shape(
            "dense grad_out",
            format!("({}, {})", batch, hidden),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let mut grad_x = Tensor::zeros(x.shape());
    let mut grad_w = Tensor::zeros(w.shape());
    let mut grad_b = vec![0.0; hidden];
    for n in 0..batch {
        for h in 0..hidden {
            let g = grad_out.at2(n, h);
            grad_b[h] += g;
            for f in 0..features {
                let gx = grad_x.at2(n, f) + w.at2(h, f) * g;
                grad_x.set2(n, f, gx);
                let gw = grad_w.at2(h, f) + x.at2(n, f) * g;
                grad_w.set2(h, f, gw);
            }
        }
    }
    Ok((grad_x, grad_w, grad_b))
}

/// Elementwise `max(0, x)`.
pub fn relu(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for v in out.values_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Gradient passes where the forward input was strictly positive.
pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if x.shape() != grad_out.shape() {
        return Err(Error::shape(
            "relu grad_out",
            format!("{:?}", x.shape()),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let mut grad = grad_out.clone();
    for (g, &v) in grad.values_mut().iter_mut().zip(x.values()) {
        if v <= 0.0 {
            *g = 0.0;
        }
    }
    Ok(grad)
}

/// `(B, C, L) -> (B, C*L)` in row-major order; rank-2 input is returned as is.
pub fn flatten(x: &Tensor) -> Result<Tensor> {
    match x.rank() {
        2 => Ok(x.clone()),
        3 => x.reshape(&[x.shape()[0], x.shape()[1] * x.shape()[2]]),
        _ => Err(Error::shape("flatten input", "rank 2 or 3", format!("{:?}", x.shape()))),
    }
}

pub fn flatten_backward(in_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    grad_out.reshape(in_shape)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weight_maps_input_through() {
        let x = Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let out = dense_forward(&x, &w, &[0.0, 0.0]).unwrap();
        assert_eq!(out.values(), &[1.0, 2.0]);
    }

    #[test]
    fn feature_mismatch_is_rejected() {
        let x = Tensor::zeros(&[1, 3]);
        let w = Tensor::zeros(&[2, 2]);
        assert!(dense_forward(&x, &w, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn relu_clamps_negatives() {
        let x = Tensor::new(&[1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).values(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn flatten_is_row_major_and_invertible() {
        let x = Tensor::new(&[1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let f = flatten(&x).unwrap();
        assert_eq!(f.shape(), &[1, 6]);
        assert_eq!(f.values(), x.values());
        let back = flatten_backward(&[1, 2, 3], &f).unwrap();
        assert_eq!(back.shape(), x.shape());
    }

    #[test]
    fn dense_backward_shapes_and_values() {
        let x = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::new(&[1, 2], vec![0.5, -0.5]).unwrap();
        let go = Tensor::new(&[2, 1], vec![1.0, 2.0]).unwrap();
        let (gx, gw, gb) = dense_backward(&x, &w, &go).unwrap();
        assert_eq!(gx.values(), &[0.5, -0.5, 1.0, -1.0]);
        assert_eq!(gw.values(), &[1.0 + 6.0, 2.0 + 8.0]);
        assert_eq!(gb, vec![3.0]);
    }
}
