//! Max pooling and global average pooling.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Backward bookkeeping for max pooling.
#[derive(Debug, Clone)]
pub struct MaxPoolCache {
    pub in_shape: Vec<usize>,
    /// Flat input index of the (first) max per output position; empty when
    /// the layer degenerated to a pass-through.
    pub argmax: Vec<usize>,
    pub passthrough: bool,
}

/// Window max over the length axis. A window longer than the input passes
/// the input through unchanged so that deep pooling stacks on short
/// sequences keep a valid shape.
pub fn maxpool1d(x: &Tensor, kernel: usize, stride: usize) -> Result<(Tensor, MaxPoolCache)> {
    if x.rank() != 3 {
        return Err(Error::shape("maxpool input", "(B, C, L)", format!("{:?}", x.shape())));
    }
    if kernel < 1 || stride < 1 {
        return Err(Error::hyper("maxpool kernel/stride", "must be >= 1"));
    }
    let (batch, channels, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if len < kernel {
        return Ok((
            x.clone(),
            MaxPoolCache {
                in_shape: x.shape().to_vec(),
                argmax: Vec::new(),
                passthrough: true,
            },
        ));
    }
    let l_out = (len - kernel) / stride + 1;
    let mut out = Tensor::zeros(&[batch, channels, l_out]);
    let mut argmax = vec![0usize; batch * channels * l_out];
    for n in 0..batch {
        for c in 0..channels {
            for t in 0..l_out {
                let start = t * stride;
                let mut best = x.at3(n, c, start);
                let mut best_pos = start;
                for k in 1..kernel {
                    let v = x.at3(n, c, start + k);
                    // strict > keeps the first maximal position on ties
                    if v > best {
                        best = v;
                        best_pos = start + k;
                    }
                }
                out.set3(n, c, t, best);
                argmax[(n * channels + c) * l_out + t] = (n * channels + c) * len + best_pos;
            }
        }
    }
    Ok((
        out,
        MaxPoolCache {
            in_shape: x.shape().to_vec(),
            argmax,
            passthrough: false,
        },
    ))
}

/// Routes each output gradient to the input position that produced the max.
pub fn maxpool1d_backward(cache: &MaxPoolCache, grad_out: &Tensor) -> Result<Tensor> {
    if cache.passthrough {
        return Ok(grad_out.clone());
    }
    let mut grad_x = Tensor::zeros(&cache.in_shape);
    if grad_out.len() != cache.argmax.len() {
        return Err(Error::shape(
            "maxpool grad_out",
            format!("{} values", cache.argmax.len()),
            format!("{}", grad_out.len()),
        ));
    }
    for (i, &src) in cache.argmax.iter().enumerate() {
        grad_x.values_mut()[src] += grad_out.values()[i];
    }
    Ok(grad_x)
}

/// `out[n,c] = mean_t x[n,c,t]`, collapsing `(B, C, L)` to `(B, C)`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    if x.rank() != 3 {
        return Err(Error::shape("global_avg_pool input", "(B, C, L)", format!("{:?}", x.shape())));
    }
    let (batch, channels, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if len < 1 {
        return Err(Error::InvalidInput("global_avg_pool on empty length axis".into()));
    }
    let mut out = Tensor::zeros(&[batch, channels]);
    for n in 0..batch {
        for c in 0..channels {
            let mut acc = 0.0;
            for t in 0..len {
                acc += x.at3(n, c, t);
            }
            out.set2(n, c, acc / len as f64);
        }
    }
    Ok(out)
}

pub fn global_avg_pool_backward(in_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let (batch, channels, len) = (in_shape[0], in_shape[1], in_shape[2]);
    if grad_out.shape() != [batch, channels] {
        return Err(Error::shape(
            "global_avg_pool grad_out",
            format!("({}, {})", batch, channels),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let mut grad_x = Tensor::zeros(in_shape);
    for n in 0..batch {
        for c in 0..channels {
            let g = grad_out.at2(n, c) / len as f64;
            for t in 0..len {
                grad_x.set3(n, c, t, g);
            }
        }
    }
    Ok(grad_x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn window_max_fixture() {
        let x = t(&[1, 1, 4], &[3.0, 1.0, 4.0, 1.0]);
        let (out, _) = maxpool1d(&x, 2, 2).unwrap();
        assert_eq!(out.values(), &[3.0, 4.0]);
    }

    #[test]
    fn trailing_element_dropped_by_floor() {
        let x = t(&[1, 1, 3], &[3.0, 1.0, 4.0]);
        let (out, _) = maxpool1d(&x, 2, 2).unwrap();
        assert_eq!(out.values(), &[3.0]);
    }

    #[test]
    fn short_input_passes_through() {
        let x = t(&[1, 1, 1], &[42.0]);
        let (out, cache) = maxpool1d(&x, 2, 2).unwrap();
        assert_eq!(out.values(), &[42.0]);
        assert!(cache.passthrough);
        let go = t(&[1, 1, 1], &[2.0]);
        let gx = maxpool1d_backward(&cache, &go).unwrap();
        assert_eq!(gx.values(), &[2.0]);
    }

    #[test]
    fn kernel_one_stride_one_is_identity() {
        let x = t(&[1, 2, 3], &[1.0, -2.0, 3.0, 0.0, 5.0, -1.0]);
        let (out, _) = maxpool1d(&x, 1, 1).unwrap();
        assert_eq!(out.values(), x.values());
    }

    #[test]
    fn tie_routes_gradient_to_first_position() {
        let x = t(&[1, 1, 2], &[7.0, 7.0]);
        let (_, cache) = maxpool1d(&x, 2, 2).unwrap();
        let go = t(&[1, 1, 1], &[1.0]);
        let gx = maxpool1d_backward(&cache, &go).unwrap();
        assert_eq!(gx.values(), &[1.0, 0.0]);
    }

    #[test]
    fn gap_channel_means() {
        let x = t(&[1, 2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let out = global_avg_pool(&x).unwrap();
        assert_eq!(out.values(), &[2.0, 5.0]);
    }

    #[test]
    fn gap_length_one_squeezes() {
        let x = t(&[2, 3, 1], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let out = global_avg_pool(&x).unwrap();
        assert_eq!(out.shape(), &[2, 3]);
        assert_eq!(out.values(), x.values());
    }

    #[test]
    fn gap_matches_independent_summation() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::uniform(&[3, 4, 17], -5.0, 5.0, &mut rng);
        let out = global_avg_pool(&x).unwrap();
        for n in 0..3 {
            for c in 0..4 {
                // oracle: pairwise summation via iterator sum over a collected slice
                let vals: Vec<f64> = (0..17).map(|l| x.at3(n, c, l)).collect();
                let mean = vals.iter().sum::<f64>() / 17.0;
                assert!((out.at2(n, c) - mean).abs() < 1e-12);
            }
        }
    }
}
