//! Softmax and the fused softmax + cross-entropy loss for two classes.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-wise softmax with max-subtraction for numerical stability.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    if logits.rank() != 2 {
        return Err(Error::shape("softmax input", "(B, C)", format!("{:?}", logits.shape())));
    }
    let (batch, classes) = (logits.shape()[0], logits.shape()[1]);
    let mut out = Tensor::zeros(logits.shape());
    for n in 0..batch {
        let mut max = f64::NEG_INFINITY;
        for c in 0..classes {
            max = max.max(logits.at2(n, c));
        }
        let mut denom = 0.0;
        for c in 0..classes {
            denom += (logits.at2(n, c) - max).exp();
        }
        for c in 0..classes {
            out.set2(n, c, (logits.at2(n, c) - max).exp() / denom);
        }
    }
    Ok(out)
}

/// Mean negative log-likelihood over the batch plus the gradient with
/// respect to the logits, `(softmax - onehot) / B`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[u8]) -> Result<(f64, Tensor)> {
    if logits.rank() != 2 || logits.shape()[1] != 2 {
        return Err(Error::shape("softmax_cross_entropy logits", "(B, 2)", format!("{:?}", logits.shape())));
    }
    let batch = logits.shape()[0];
    if labels.len() != batch {
        return Err(Error::shape(
            "softmax_cross_entropy labels",
            format!("{} labels", batch),
            format!("{}", labels.len()),
        ));
    }
    if let Some(bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::InvalidInput(format!("label {} outside {{0,1}}", bad)));
    }
    let probs = softmax(logits)?;
    let mut loss = 0.0;
    let mut grad = probs.clone();
    for n in 0..batch {
        let y = labels[n] as usize;
        // log prob via the stabilized form to avoid ln(0) on extreme logits
        let mut max = f64::NEG_INFINITY;
        for c in 0..2 {
            max = max.max(logits.at2(n, c));
        }
        let denom: f64 = (0..2).map(|c| (logits.at2(n, c) - max).exp()).sum();
        loss -= logits.at2(n, y) - max - denom.ln();
        let g = grad.at2(n, y) - 1.0;
        grad.set2(n, y, g);
    }
    loss /= batch as f64;
    for v in grad.values_mut() {
        *v /= batch as f64;
    }
    Ok((loss, grad))
}
