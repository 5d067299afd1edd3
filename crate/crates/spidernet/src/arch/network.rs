//! Compiled, executable networks: parameter storage, forward passes in
//! train and eval mode, exact backpropagation, and checkpoint I/O.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arch::graph::{self, CompiledGraph, Init, Op, Shape, BN_EPS, BN_MOMENTUM};
use crate::arch::NetworkSpec;
use crate::error::{Error, Result};
use crate::nn::{self, BatchNormCache, Conv1dCache, MaxPoolCache, Mode, Parameter};
use crate::tensor::Tensor;

/// Running batchnorm statistics (not trained by gradient descent).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnRunning {
    pub name: String,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// All trainable parameters plus batchnorm running statistics.
#[derive(Debug, Clone)]
pub struct ParamStore {
    pub params: Vec<Parameter>,
    pub bn: Vec<BnRunning>,
}

impl ParamStore {
    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.zero_grad();
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

#[derive(Debug, Clone)]
enum NodeCache {
    None,
    Conv(Conv1dCache),
    Bn(BatchNormCache),
    Pool(MaxPoolCache),
    Dropout { mask: Tensor, p: f64 },
    Relu { x: Tensor },
    Gap { in_shape: Vec<usize> },
    Flatten { in_shape: Vec<usize> },
    ConcatFlat { in_shapes: Vec<Vec<usize>> },
    ConcatChannels { in_shapes: Vec<Vec<usize>>, out_len: usize },
    Dense { x: Tensor },
}

/// Per-node records from a training forward pass, consumed by backward.
pub struct Tape {
    caches: Vec<NodeCache>,
    shapes: Vec<Vec<usize>>,
}

impl Tape {
    /// Concrete activation shape of every node, for comparison against the
    /// symbolic trace.
    pub fn activation_shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }
}

/// A compiled network ready to run.
pub struct Network {
    spec: NetworkSpec,
    graph: CompiledGraph,
    pub store: ParamStore,
}

impl Network {
    /// Compile the spec and initialize parameters (He-uniform conv/dense
    /// weights, unit batchnorm gains, zero shifts and biases).
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let graph = graph::compile(&spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = graph
            .param_plans
            .iter()
            .map(|plan| {
                let value = match plan.init {
                    Init::HeUniform { fan_in } => {
                        let limit = (6.0 / fan_in as f64).sqrt();
                        Tensor::uniform(&plan.shape, -limit, limit, &mut rng)
                    }
                    Init::Zero => Tensor::zeros(&plan.shape),
                    Init::One => Tensor::filled(&plan.shape, 1.0),
                };
                Parameter::new(plan.name.clone(), value, plan.group)
            })
            .collect();
        let bn = graph
            .bn_plans
            .iter()
            .map(|plan| BnRunning {
                name: plan.name.clone(),
                mean: vec![0.0; plan.channels],
                var: vec![1.0; plan.channels],
            })
            .collect();
        Ok(Network {
            spec,
            graph,
            store: ParamStore { params, bn },
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn parameter_count(&self) -> usize {
        self.store.parameter_count()
    }

    /// Symbolic shape of every graph node.
    pub fn symbolic_shapes(&self) -> Vec<(String, Shape)> {
        self.graph
            .nodes
            .iter()
            .zip(&self.graph.shapes)
            .map(|(n, s)| (n.label.clone(), *s))
            .collect()
    }

    pub fn zero_grad(&mut self) {
        self.store.zero_grad();
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.rank() != 3 || x.shape()[1] != 1 {
            return Err(Error::shape("network input", "(B, 1, L)", format!("{:?}", x.shape())));
        }
        if x.shape()[2] != self.spec.input_length {
            return Err(Error::shape(
                "network input length",
                format!("{}", self.spec.input_length),
                format!("{}", x.shape()[2]),
            ));
        }
        Ok(())
    }

    /// Eval-mode forward pass returning class probabilities `(B, 2)`.
    /// Read-only: batchnorm uses running statistics, dropout is identity.
    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        nn::softmax(&self.forward_logits_eval(x)?)
    }

    /// Eval-mode logits.
    pub fn forward_logits_eval(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let acts = self.run_eval(x)?;
        Ok(acts[self.graph.output].clone())
    }

    /// Eval-mode forward recording concrete activation shapes per node.
    pub fn trace_shapes(&self, x: &Tensor) -> Result<Vec<Vec<usize>>> {
        self.check_input(x)?;
        let acts = self.run_eval(x)?;
        Ok(acts.iter().map(|a| a.shape().to_vec()).collect())
    }

    fn run_eval(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut acts: Vec<Tensor> = Vec::with_capacity(self.graph.nodes.len());
        for node in &self.graph.nodes {
            let out = match &node.op {
                Op::Input => x.clone(),
                Op::ConcatFlat => concat_flat(&gather(&acts, &node.inputs))?,
                Op::ConcatChannels => concat_channels(&gather(&acts, &node.inputs))?.0,
                Op::Dropout { .. } => acts[node.inputs[0]].clone(),
                Op::Conv1d { w, b, stride } => {
                    let (out, _) = nn::conv1d_forward(
                        &acts[node.inputs[0]],
                        &self.store.params[*w].value,
                        self.store.params[*b].value.values(),
                        *stride,
                    )?;
                    out
                }
                Op::BatchNorm { gamma, beta, stats } => {
                    let bn = &self.store.bn[*stats];
                    nn::batchnorm_eval(
                        &acts[node.inputs[0]],
                        self.store.params[*gamma].value.values(),
                        self.store.params[*beta].value.values(),
                        BN_EPS,
                        &bn.mean,
                        &bn.var,
                    )?
                }
                Op::Relu => nn::relu(&acts[node.inputs[0]]),
                Op::MaxPool { kernel, stride } => nn::maxpool1d(&acts[node.inputs[0]], *kernel, *stride)?.0,
                Op::GlobalAvgPool => nn::global_avg_pool(&acts[node.inputs[0]])?,
                Op::Flatten => nn::flatten(&acts[node.inputs[0]])?,
                Op::Dense { w, b } => nn::dense_forward(
                    &acts[node.inputs[0]],
                    &self.store.params[*w].value,
                    self.store.params[*b].value.values(),
                )?,
            };
            acts.push(out);
        }
        Ok(acts)
    }

    /// Train-mode forward pass: dropout masks are drawn from `rng` in node
    /// order and batchnorm running statistics are updated. Returns the
    /// logits and the tape for [`Network::backward`].
    pub fn forward_train(&mut self, x: &Tensor, rng: &mut ChaCha8Rng) -> Result<(Tensor, Tape)> {
        self.check_input(x)?;
        let n = self.graph.nodes.len();
        let mut acts: Vec<Tensor> = Vec::with_capacity(n);
        let mut caches: Vec<NodeCache> = Vec::with_capacity(n);
        for node in &self.graph.nodes {
            let (out, cache) = match &node.op {
                Op::Input => (x.clone(), NodeCache::None),
                Op::ConcatFlat => {
                    let inputs = gather(&acts, &node.inputs);
                    let in_shapes = inputs.iter().map(|t| t.shape().to_vec()).collect();
                    (concat_flat(&inputs)?, NodeCache::ConcatFlat { in_shapes })
                }
                Op::ConcatChannels => {
                    let inputs = gather(&acts, &node.inputs);
                    let in_shapes = inputs.iter().map(|t| t.shape().to_vec()).collect();
                    let (out, out_len) = concat_channels(&inputs)?;
                    (out, NodeCache::ConcatChannels { in_shapes, out_len })
                }
                Op::Dropout { p } => {
                    let xin = &acts[node.inputs[0]];
                    let mask = nn::dropout_mask(xin.shape(), *p, rng)?;
                    let out = nn::dropout_forward(xin, *p, Mode::Train, Some(&mask))?;
                    (out, NodeCache::Dropout { mask, p: *p })
                }
                Op::Conv1d { w, b, stride } => {
                    let (out, cache) = nn::conv1d_forward(
                        &acts[node.inputs[0]],
                        &self.store.params[*w].value,
                        self.store.params[*b].value.values(),
                        *stride,
                    )?;
                    (out, NodeCache::Conv(cache))
                }
                Op::BatchNorm { gamma, beta, stats } => {
                    let bn = &mut self.store.bn[*stats];
                    let (out, cache) = nn::batchnorm_train(
                        &acts[node.inputs[0]],
                        self.store.params[*gamma].value.values(),
                        self.store.params[*beta].value.values(),
                        BN_EPS,
                        BN_MOMENTUM,
                        &mut bn.mean,
                        &mut bn.var,
                    )?;
                    (out, NodeCache::Bn(cache))
                }
                Op::Relu => {
                    let xin = acts[node.inputs[0]].clone();
                    (nn::relu(&xin), NodeCache::Relu { x: xin })
                }
                Op::MaxPool { kernel, stride } => {
                    let (out, cache) = nn::maxpool1d(&acts[node.inputs[0]], *kernel, *stride)?;
                    (out, NodeCache::Pool(cache))
                }
                Op::GlobalAvgPool => {
                    let in_shape = acts[node.inputs[0]].shape().to_vec();
                    (nn::global_avg_pool(&acts[node.inputs[0]])?, NodeCache::Gap { in_shape })
                }
                Op::Flatten => {
                    let in_shape = acts[node.inputs[0]].shape().to_vec();
                    (nn::flatten(&acts[node.inputs[0]])?, NodeCache::Flatten { in_shape })
                }
                Op::Dense { w, b } => {
                    let xin = acts[node.inputs[0]].clone();
                    let out = nn::dense_forward(&xin, &self.store.params[*w].value, self.store.params[*b].value.values())?;
                    (out, NodeCache::Dense { x: xin })
                }
            };
            caches.push(cache);
            acts.push(out);
        }
        let logits = acts[self.graph.output].clone();
        let shapes = acts.iter().map(|a| a.shape().to_vec()).collect();
        Ok((logits, Tape { caches, shapes }))
    }

    /// Backpropagate `grad_logits` through the taped forward pass,
    /// accumulating parameter gradients in the store.
    pub fn backward(&mut self, tape: &Tape, grad_logits: &Tensor) -> Result<()> {
        let n = self.graph.nodes.len();
        if tape.caches.len() != n {
            return Err(Error::InvalidInput("tape does not match this network".into()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[self.graph.output] = Some(grad_logits.clone());
        for id in (0..n).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.graph.nodes[id];
            match (&node.op, &tape.caches[id]) {
                (Op::Input, _) => {}
                (Op::ConcatFlat, NodeCache::ConcatFlat { in_shapes }) => {
                    let parts = split_flat(&g, in_shapes)?;
                    for (src, part) in node.inputs.iter().zip(parts) {
                        accumulate(&mut grads[*src], part);
                    }
                }
                (Op::ConcatChannels, NodeCache::ConcatChannels { in_shapes, out_len }) => {
                    let parts = split_channels(&g, in_shapes, *out_len)?;
                    for (src, part) in node.inputs.iter().zip(parts) {
                        accumulate(&mut grads[*src], part);
                    }
                }
                (Op::Dropout { .. }, NodeCache::Dropout { mask, p }) => {
                    let gx = nn::dropout_backward(&g, *p, Mode::Train, Some(mask))?;
                    accumulate(&mut grads[node.inputs[0]], gx);
                }
                (Op::Conv1d { w, b, .. }, NodeCache::Conv(cache)) => {
                    let (gx, gw, gb) = nn::conv1d_backward(cache, &g)?;
                    add_assign(&mut self.store.params[*w].grad, &gw);
                    add_assign_slice(&mut self.store.params[*b].grad, &gb);
                    accumulate(&mut grads[node.inputs[0]], gx);
                }
                (Op::BatchNorm { gamma, beta, .. }, NodeCache::Bn(cache)) => {
                    let (gx, gg, gb) = nn::batchnorm_backward(cache, &g)?;
                    add_assign_slice(&mut self.store.params[*gamma].grad, &gg);
                    add_assign_slice(&mut self.store.params[*beta].grad, &gb);
                    accumulate(&mut grads[node.inputs[0]], gx);
                }
                (Op::Relu, NodeCache::Relu { x }) => {
                    let gx = nn::relu_backward(x, &g)?;
                    accumulate(&mut grads[node.inputs[0]], gx);
                }
                (Op::MaxPool { .. }, NodeCache::Pool(cache)) => {
                    let gx = nn::maxpool1d_backward(cache, &g)?;
                    accumulate(&mut grads[node.inputs[0]], gx);
                }
                (Op::GlobalAvgPool, NodeCache::Gap { in_shape }) => {
                    let gx = nn::global_avg_pool_backward(in_shape, &g)?;
                    accumulate(&mut grads[node.inputs[0]], gx);
                }
                (Op::Flatten, NodeCache::Flatten { in_shape }) => {
                    let gx = nn::flatten_backward(in_shape, &g)?;
                    accumulate(&mut grads[node.inputs[0]], gx);
                }
                (Op::Dense { w, b }, NodeCache::Dense { x }) => {
                    let (gx, gw, gb) = nn::dense_backward(x, &self.store.params[*w].value, &g)?;
                    add_assign(&mut self.store.params[*w].grad, &gw);
                    add_assign_slice(&mut self.store.params[*b].grad, &gb);
                    accumulate(&mut grads[node.inputs[0]], gx);
                }
                _ => {
                    return Err(Error::InvalidInput(format!(
                        "stale or missing cache for node `{}`",
                        node.label
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            spec: self.spec.clone(),
            params: self
                .store
                .params
                .iter()
                .map(|p| NamedTensor {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    values: p.value.values().to_vec(),
                })
                .collect(),
            bn_stats: self.store.bn.clone(),
        }
    }

    pub fn from_checkpoint(checkpoint: &Checkpoint) -> Result<Self> {
        let mut net = Network::new(checkpoint.spec.clone(), 0)?;
        if checkpoint.params.len() != net.store.params.len() {
            return Err(Error::InvalidInput(format!(
                "checkpoint has {} parameter arrays, network expects {}",
                checkpoint.params.len(),
                net.store.params.len()
            )));
        }
        for (param, saved) in net.store.params.iter_mut().zip(&checkpoint.params) {
            if param.name != saved.name || param.value.shape() != saved.shape.as_slice() {
                return Err(Error::InvalidInput(format!(
                    "checkpoint parameter `{}` {:?} does not match network `{}` {:?}",
                    saved.name,
                    saved.shape,
                    param.name,
                    param.value.shape()
                )));
            }
            param.value = Tensor::new(&saved.shape, saved.values.clone())?;
        }
        if checkpoint.bn_stats.len() != net.store.bn.len() {
            return Err(Error::InvalidInput("checkpoint batchnorm stats do not match".into()));
        }
        for (bn, saved) in net.store.bn.iter_mut().zip(&checkpoint.bn_stats) {
            if bn.name != saved.name || bn.mean.len() != saved.mean.len() {
                return Err(Error::InvalidInput(format!("checkpoint batchnorm `{}` mismatch", saved.name)));
            }
            *bn = saved.clone();
        }
        Ok(net)
    }

    /// Snapshot of parameter values and batchnorm statistics, for keeping
    /// the best epoch during training.
    pub fn snapshot(&self) -> Vec<Tensor> {
        self.store.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn bn_snapshot(&self) -> Vec<BnRunning> {
        self.store.bn.clone()
    }

    pub fn restore(&mut self, params: &[Tensor], bn: &[BnRunning]) {
        for (p, saved) in self.store.params.iter_mut().zip(params) {
            p.value = saved.clone();
        }
        for (b, saved) in self.store.bn.iter_mut().zip(bn) {
            *b = saved.clone();
        }
    }
}

/// Named flat parameter array inside a checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Serialized model: the spec plus flat named parameter arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub params: Vec<NamedTensor>,
    pub bn_stats: Vec<BnRunning>,
}

fn gather<'a>(acts: &'a [Tensor], ids: &[usize]) -> Vec<&'a Tensor> {
    ids.iter().map(|&i| &acts[i]).collect()
}

fn concat_flat(inputs: &[&Tensor]) -> Result<Tensor> {
    if inputs.is_empty() {
        return Err(Error::InvalidInput("concat of zero inputs".into()));
    }
    let batch = inputs[0].shape()[0];
    let widths: Vec<usize> = inputs
        .iter()
        .map(|t| match t.rank() {
            2 => t.shape()[1],
            _ => t.shape()[1] * t.shape()[2],
        })
        .collect();
    let total: usize = widths.iter().sum();
    let mut out = Tensor::zeros(&[batch, 1, total]);
    for n in 0..batch {
        let mut off = 0;
        for (t, &w) in inputs.iter().zip(&widths) {
            if t.shape()[0] != batch {
                return Err(Error::shape("concat batch", format!("{}", batch), format!("{}", t.shape()[0])));
            }
            // row-major layout makes each example's block contiguous
            let src = &t.values()[n * w..(n + 1) * w];
            let base = n * total + off;
            out.values_mut()[base..base + w].copy_from_slice(src);
            off += w;
        }
    }
    Ok(out)
}

fn split_flat(grad: &Tensor, in_shapes: &[Vec<usize>]) -> Result<Vec<Tensor>> {
    let batch = grad.shape()[0];
    let total = grad.len() / batch;
    let widths: Vec<usize> = in_shapes.iter().map(|s| s[1..].iter().product()).collect();
    let mut parts = Vec::with_capacity(in_shapes.len());
    let mut off = 0;
    for (shape, &w) in in_shapes.iter().zip(&widths) {
        let mut part = Tensor::zeros(shape);
        for n in 0..batch {
            let base = n * total + off;
            part.values_mut()[n * w..(n + 1) * w].copy_from_slice(&grad.values()[base..base + w]);
        }
        off += w;
        parts.push(part);
    }
    Ok(parts)
}

fn concat_channels(inputs: &[&Tensor]) -> Result<(Tensor, usize)> {
    if inputs.is_empty() {
        return Err(Error::InvalidInput("concat of zero inputs".into()));
    }
    let batch = inputs[0].shape()[0];
    let mut out_len = usize::MAX;
    let mut channels = 0;
    for t in inputs {
        if t.rank() != 3 || t.shape()[0] != batch {
            return Err(Error::shape("concat_channels input", "(B, C, L)", format!("{:?}", t.shape())));
        }
        out_len = out_len.min(t.shape()[2]);
        channels += t.shape()[1];
    }
    let mut out = Tensor::zeros(&[batch, channels, out_len]);
    for n in 0..batch {
        let mut c_off = 0;
        for t in inputs {
            for c in 0..t.shape()[1] {
                for l in 0..out_len {
                    out.set3(n, c_off + c, l, t.at3(n, c, l));
                }
            }
            c_off += t.shape()[1];
        }
    }
    Ok((out, out_len))
}

fn split_channels(grad: &Tensor, in_shapes: &[Vec<usize>], out_len: usize) -> Result<Vec<Tensor>> {
    let batch = grad.shape()[0];
    let mut parts = Vec::with_capacity(in_shapes.len());
    let mut c_off = 0;
    for shape in in_shapes {
        let mut part = Tensor::zeros(shape);
        for n in 0..batch {
            for c in 0..shape[1] {
                for l in 0..out_len {
                    part.set3(n, c, l, grad.at3(n, c_off + c, l));
                }
            }
        }
        c_off += shape[1];
        parts.push(part);
    }
    Ok(parts)
}

fn accumulate(slot: &mut Option<Tensor>, grad: Tensor) {
    match slot {
        None => *slot = Some(grad),
        Some(existing) => {
            for (a, b) in existing.values_mut().iter_mut().zip(grad.values()) {
                *a += b;
            }
        }
    }
}

fn add_assign(target: &mut Tensor, source: &Tensor) {
    for (a, b) in target.values_mut().iter_mut().zip(source.values()) {
        *a += b;
    }
}

fn add_assign_slice(target: &mut Tensor, source: &[f64]) {
    for (a, b) in target.values_mut().iter_mut().zip(source) {
        *a += b;
    }
}
