//! Compilation of a [`NetworkSpec`] into a flat operator graph.
//!
//! Compilation is purely symbolic: it lays out nodes, plans parameter
//! shapes, and propagates shapes through every operator. The per-node shape
//! trace doubles as an independent oracle for the concrete forward pass.

use crate::arch::{ArchKind, BlockSpec, NetworkSpec, NodeRef};
use crate::error::{Error, Result};
use crate::nn::DecayGroup;

/// Pooling window used wherever a block calls for a maxpool.
pub const POOL_KERNEL: usize = 2;
pub const POOL_STRIDE: usize = 2;
/// Batchnorm defaults.
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Batch-independent activation shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    /// `(B, channels, len)`
    Seq { channels: usize, len: usize },
    /// `(B, features)`
    Flat { features: usize },
}

impl Shape {
    pub fn flat_size(&self) -> usize {
        match *self {
            Shape::Seq { channels, len } => channels * len,
            Shape::Flat { features } => features,
        }
    }

    /// Concrete tensor shape for a given batch size.
    pub fn with_batch(&self, batch: usize) -> Vec<usize> {
        match *self {
            Shape::Seq { channels, len } => vec![batch, channels, len],
            Shape::Flat { features } => vec![batch, features],
        }
    }
}

#[derive(Debug, Clone)]
pub enum Op {
    Input,
    /// Flatten each input to `(B, f_i)` and lay the pieces out as one
    /// single-channel sequence `(B, 1, sum f_i)`.
    ConcatFlat,
    /// Channel-wise concatenation; inputs are cropped to the shortest
    /// length (leading positions kept) so valid convolutions compose.
    ConcatChannels,
    Dropout { p: f64 },
    Conv1d { w: usize, b: usize, stride: usize },
    BatchNorm { gamma: usize, beta: usize, stats: usize },
    Relu,
    MaxPool { kernel: usize, stride: usize },
    GlobalAvgPool,
    Flatten,
    Dense { w: usize, b: usize },
}

#[derive(Debug, Clone)]
pub struct Node {
    pub label: String,
    pub op: Op,
    pub inputs: Vec<usize>,
}

#[derive(Debug, Clone)]
pub(crate) enum Init {
    HeUniform { fan_in: usize },
    Zero,
    One,
}

#[derive(Debug, Clone)]
pub(crate) struct ParamPlan {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: DecayGroup,
    pub init: Init,
}

#[derive(Debug, Clone)]
pub(crate) struct BnPlan {
    pub name: String,
    pub channels: usize,
}

#[derive(Debug, Clone)]
pub struct CompiledGraph {
    pub nodes: Vec<Node>,
    /// Node producing the two-class logits.
    pub output: usize,
    pub shapes: Vec<Shape>,
    pub(crate) param_plans: Vec<ParamPlan>,
    pub(crate) bn_plans: Vec<BnPlan>,
}

struct Builder {
    nodes: Vec<Node>,
    shapes: Vec<Shape>,
    param_plans: Vec<ParamPlan>,
    bn_plans: Vec<BnPlan>,
}

impl Builder {
    fn push(&mut self, label: String, op: Op, inputs: Vec<usize>, shape: Shape) -> usize {
        self.nodes.push(Node { label, op, inputs });
        self.shapes.push(shape);
        self.nodes.len() - 1
    }

    fn shape(&self, id: usize) -> Shape {
        self.shapes[id]
    }

    fn seq_shape(&self, id: usize, context: &str) -> Result<(usize, usize)> {
        match self.shape(id) {
            Shape::Seq { channels, len } => Ok((channels, len)),
            Shape::Flat { .. } => Err(Error::InvalidArchitecture(format!(
                "{} expects a sequence input, got a flat vector",
                context
            ))),
        }
    }

    fn plan_param(&mut self, name: String, shape: Vec<usize>, group: DecayGroup, init: Init) -> usize {
        self.param_plans.push(ParamPlan { name, shape, group, init });
        self.param_plans.len() - 1
    }

    fn plan_bn(&mut self, name: String, channels: usize) -> usize {
        self.bn_plans.push(BnPlan { name, channels });
        self.bn_plans.len() - 1
    }

    fn concat_flat(&mut self, label: &str, sources: Vec<usize>) -> usize {
        let features = sources.iter().map(|&s| self.shape(s).flat_size()).sum();
        self.push(
            format!("{}.concat", label),
            Op::ConcatFlat,
            sources,
            Shape::Seq { channels: 1, len: features },
        )
    }

    fn dropout(&mut self, label: &str, input: usize, p: f64) -> usize {
        let shape = self.shape(input);
        self.push(format!("{}.dropout", label), Op::Dropout { p }, vec![input], shape)
    }

    /// conv -> batchnorm -> relu. The kernel is clamped to the incoming
    /// length so pooling stacks on short sequences stay valid.
    fn conv_bn_relu(&mut self, label: &str, input: usize, filters: usize, kernel: usize, stride: usize) -> Result<usize> {
        let (c_in, l_in) = self.seq_shape(input, label)?;
        let k_eff = kernel.min(l_in);
        let w = self.plan_param(
            format!("{}.conv.w", label),
            vec![filters, c_in, k_eff],
            DecayGroup::ConvWeight,
            Init::HeUniform { fan_in: c_in * k_eff },
        );
        let b = self.plan_param(format!("{}.conv.b", label), vec![filters], DecayGroup::Bias, Init::Zero);
        let l_out = (l_in - k_eff) / stride + 1;
        let conv = self.push(
            format!("{}.conv", label),
            Op::Conv1d { w, b, stride },
            vec![input],
            Shape::Seq { channels: filters, len: l_out },
        );
        let bn = self.batchnorm(label, conv, filters)?;
        Ok(self.relu(label, bn))
    }

    /// A bare convolution (used by DenseNet pre-activation composites).
    fn conv(&mut self, label: &str, input: usize, filters: usize, kernel: usize, stride: usize) -> Result<usize> {
        let (c_in, l_in) = self.seq_shape(input, label)?;
        let k_eff = kernel.min(l_in);
        let w = self.plan_param(
            format!("{}.w", label),
            vec![filters, c_in, k_eff],
            DecayGroup::ConvWeight,
            Init::HeUniform { fan_in: c_in * k_eff },
        );
        let b = self.plan_param(format!("{}.b", label), vec![filters], DecayGroup::Bias, Init::Zero);
        let l_out = (l_in - k_eff) / stride + 1;
        Ok(self.push(
            label.to_string(),
            Op::Conv1d { w, b, stride },
            vec![input],
            Shape::Seq { channels: filters, len: l_out },
        ))
    }

    fn batchnorm(&mut self, label: &str, input: usize, channels: usize) -> Result<usize> {
        let shape = self.shape(input);
        let gamma = self.plan_param(
            format!("{}.bn.gamma", label),
            vec![channels],
            DecayGroup::BatchNormGain,
            Init::One,
        );
        let beta = self.plan_param(format!("{}.bn.beta", label), vec![channels], DecayGroup::Bias, Init::Zero);
        let stats = self.plan_bn(format!("{}.bn", label), channels);
        Ok(self.push(format!("{}.bn", label), Op::BatchNorm { gamma, beta, stats }, vec![input], shape))
    }

    fn relu(&mut self, label: &str, input: usize) -> usize {
        let shape = self.shape(input);
        self.push(format!("{}.relu", label), Op::Relu, vec![input], shape)
    }

    fn maxpool(&mut self, label: &str, input: usize, kernel: usize, stride: usize) -> Result<usize> {
        let (channels, len) = self.seq_shape(input, label)?;
        let out_len = if len < kernel { len } else { (len - kernel) / stride + 1 };
        Ok(self.push(
            format!("{}.pool", label),
            Op::MaxPool { kernel, stride },
            vec![input],
            Shape::Seq { channels, len: out_len },
        ))
    }

    fn gap(&mut self, label: &str, input: usize) -> Result<usize> {
        let (channels, _) = self.seq_shape(input, label)?;
        Ok(self.push(
            format!("{}.gap", label),
            Op::GlobalAvgPool,
            vec![input],
            Shape::Flat { features: channels },
        ))
    }

    fn flatten(&mut self, label: &str, input: usize) -> usize {
        let features = self.shape(input).flat_size();
        self.push(format!("{}.flatten", label), Op::Flatten, vec![input], Shape::Flat { features })
    }

    fn dense(&mut self, label: &str, input: usize, out_features: usize) -> Result<usize> {
        let in_features = match self.shape(input) {
            Shape::Flat { features } => features,
            Shape::Seq { .. } => {
                return Err(Error::InvalidArchitecture(format!("{} expects a flat input", label)));
            }
        };
        let w = self.plan_param(
            format!("{}.w", label),
            vec![out_features, in_features],
            DecayGroup::DenseWeight,
            Init::HeUniform { fan_in: in_features },
        );
        let b = self.plan_param(format!("{}.b", label), vec![out_features], DecayGroup::Bias, Init::Zero);
        Ok(self.push(
            label.to_string(),
            Op::Dense { w, b },
            vec![input],
            Shape::Flat { features: out_features },
        ))
    }

    fn concat_channels(&mut self, label: &str, sources: Vec<usize>) -> Result<usize> {
        let mut channels = 0;
        let mut min_len = usize::MAX;
        for &s in &sources {
            let (c, l) = self.seq_shape(s, label)?;
            channels += c;
            min_len = min_len.min(l);
        }
        Ok(self.push(
            format!("{}.concat_ch", label),
            Op::ConcatChannels,
            sources,
            Shape::Seq { channels, len: min_len },
        ))
    }
}

/// Compile a validated spec into an operator graph with parameter plans.
pub fn compile(spec: &NetworkSpec) -> Result<CompiledGraph> {
    spec.validate()?;
    let mut b = Builder {
        nodes: Vec::new(),
        shapes: Vec::new(),
        param_plans: Vec::new(),
        bn_plans: Vec::new(),
    };
    let input = b.push(
        "input".into(),
        Op::Input,
        vec![],
        Shape::Seq { channels: 1, len: spec.input_length },
    );

    let mut block_out: Vec<usize> = Vec::with_capacity(spec.n_blocks());
    let resolve = |block_out: &[usize], r: NodeRef| -> usize {
        match r {
            NodeRef::Input => input,
            NodeRef::Block(k) => block_out[k - 1],
            NodeRef::Head => unreachable!("head is never a source"),
        }
    };

    for (i, block) in spec.blocks.iter().enumerate() {
        let k = i + 1;
        let label = format!("block{}", k);
        let sources: Vec<usize> = spec
            .sources_of(NodeRef::Block(k))
            .into_iter()
            .map(|r| resolve(&block_out, r))
            .collect();
        let out = match block {
            BlockSpec::ConvPool {
                filters,
                kernel,
                stride,
                n_pool,
                input_dropout,
                has_gap,
            } => {
                // SpiderNet blocks read their sources as one flattened
                // single-channel sequence; the sequential CNN keeps the
                // channel structure of its single predecessor.
                let mut cur = match spec.arch_kind {
                    ArchKind::SpiderNet => b.concat_flat(&label, sources),
                    _ => {
                        if sources.len() != 1 {
                            b.concat_flat(&label, sources)
                        } else {
                            sources[0]
                        }
                    }
                };
                if *input_dropout > 0.0 {
                    cur = b.dropout(&label, cur, *input_dropout);
                }
                cur = b.conv_bn_relu(&label, cur, *filters, *kernel, *stride)?;
                for p in 0..*n_pool {
                    cur = b.maxpool(&format!("{}.p{}", label, p + 1), cur, POOL_KERNEL, POOL_STRIDE)?;
                }
                if *has_gap {
                    cur = b.gap(&label, cur)?;
                }
                cur
            }
            BlockSpec::Stem {
                filters,
                conv_width,
                conv_stride,
                pool_width,
                pool_stride,
            } => {
                if sources.len() != 1 {
                    return Err(Error::InvalidArchitecture("stem expects a single source".into()));
                }
                let cur = b.conv_bn_relu(&label, sources[0], *filters, *conv_width, *conv_stride)?;
                b.maxpool(&label, cur, *pool_width, *pool_stride)?
            }
            BlockSpec::Dense {
                layers,
                growth,
                bottleneck,
                kernel,
                has_gap,
            } => {
                if sources.len() != 1 {
                    return Err(Error::InvalidArchitecture("dense block expects a single source".into()));
                }
                let mut running = sources[0];
                for layer in 1..=*layers {
                    let ll = format!("{}.l{}", label, layer);
                    let (c_run, _) = b.seq_shape(running, &ll)?;
                    let t = b.batchnorm(&format!("{}.a", ll), running, c_run)?;
                    let t = b.relu(&format!("{}.a", ll), t);
                    let t = b.conv(&format!("{}.bottleneck", ll), t, bottleneck * growth, 1, 1)?;
                    let (c_mid, _) = b.seq_shape(t, &ll)?;
                    let t = b.batchnorm(&format!("{}.b", ll), t, c_mid)?;
                    let t = b.relu(&format!("{}.b", ll), t);
                    let t = b.conv(&format!("{}.conv", ll), t, *growth, *kernel, 1)?;
                    running = b.concat_channels(&ll, vec![running, t])?;
                }
                if *has_gap {
                    let (c_run, _) = b.seq_shape(running, &label)?;
                    let t = b.batchnorm(&format!("{}.final", label), running, c_run)?;
                    let t = b.relu(&format!("{}.final", label), t);
                    b.gap(&label, t)?
                } else {
                    running
                }
            }
            BlockSpec::Transition {
                theta,
                pool_width,
                pool_stride,
            } => {
                if sources.len() != 1 {
                    return Err(Error::InvalidArchitecture("transition expects a single source".into()));
                }
                let (c_in, _) = b.seq_shape(sources[0], &label)?;
                let compressed = ((c_in as f64) * theta).floor().max(1.0) as usize;
                let t = b.batchnorm(&label, sources[0], c_in)?;
                let t = b.relu(&label, t);
                let t = b.conv(&format!("{}.compress", label), t, compressed, 1, 1)?;
                b.maxpool(&label, t, *pool_width, *pool_stride)?
            }
            BlockSpec::FDense {
                convs,
                filters,
                kernel,
                input_dropout,
            } => {
                let mut base = b.concat_flat(&label, sources);
                if *input_dropout > 0.0 {
                    base = b.dropout(&label, base, *input_dropout);
                }
                // dense connectivity inside the block is channel-wise, as
                // in DenseNet; pooled outputs are cropped to the shortest
                // length when concatenated
                let mut outs: Vec<usize> = Vec::with_capacity(*convs);
                for j in 1..=*convs {
                    let ll = format!("{}.c{}", label, j);
                    let cur = if outs.is_empty() {
                        base
                    } else {
                        let mut srcs = vec![base];
                        srcs.extend(&outs);
                        b.concat_channels(&ll, srcs)?
                    };
                    let cur = b.conv_bn_relu(&ll, cur, *filters, *kernel, 1)?;
                    let cur = b.maxpool(&ll, cur, POOL_KERNEL, POOL_STRIDE)?;
                    outs.push(cur);
                }
                if outs.len() == 1 {
                    outs[0]
                } else {
                    b.concat_channels(&format!("{}.out", label), outs)?
                }
            }
        };
        block_out.push(out);
    }

    // head: concat -> flatten -> dense -> relu -> dropout -> dense(classes)
    let head_sources: Vec<usize> = spec
        .sources_of(NodeRef::Head)
        .into_iter()
        .map(|r| resolve(&block_out, r))
        .collect();
    let joined = if head_sources.len() == 1 {
        head_sources[0]
    } else {
        b.concat_flat("head", head_sources)
    };
    let flat = b.flatten("head", joined);
    let fc1 = b.dense("head.fc1", flat, spec.head.hidden)?;
    let act = b.relu("head.fc1", fc1);
    let dropped = if spec.head.dropout > 0.0 {
        b.dropout("head", act, spec.head.dropout)
    } else {
        act
    };
    let logits = b.dense("head.fc2", dropped, spec.head.classes)?;

    Ok(CompiledGraph {
        nodes: b.nodes,
        output: logits,
        shapes: b.shapes,
        param_plans: b.param_plans,
        bn_plans: b.bn_plans,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::build::{build_cnn1d, build_densenet1d, build_spidernet, DenseNetConfig, DropoutSchedule};

    #[test]
    fn cnn_shape_stack_follows_the_halving_formula() {
        let spec = build_cnn1d(3, 10, 3, 100, 128).unwrap();
        let g = compile(&spec).unwrap();
        // conv3: 128->126, pool: 63, conv: 61, pool: 30, conv: 28, pool: 14
        let pooled: Vec<usize> = g
            .nodes
            .iter()
            .zip(&g.shapes)
            .filter(|(n, _)| matches!(n.op, Op::MaxPool { .. }))
            .map(|(_, s)| match s {
                Shape::Seq { len, .. } => *len,
                _ => 0,
            })
            .collect();
        assert_eq!(pooled, vec![63, 30, 14]);
    }

    #[test]
    fn shapes_never_collapse_to_zero() {
        let spec = build_spidernet(8, 10, 3, 100, DropoutSchedule::default(), 128).unwrap();
        let g = compile(&spec).unwrap();
        for s in &g.shapes {
            match *s {
                Shape::Seq { channels, len } => assert!(channels >= 1 && len >= 1),
                Shape::Flat { features } => assert!(features >= 1),
            }
        }
    }

    #[test]
    fn densenet_channel_growth_rule() {
        let config = DenseNetConfig::default();
        let spec = build_densenet1d(&config, 163).unwrap();
        let g = compile(&spec).unwrap();
        // after the first dense block the running map has initial + 4*growth channels
        let after_block1 = g
            .nodes
            .iter()
            .zip(&g.shapes)
            .filter(|(n, _)| n.label == "block2.l4.concat_ch")
            .map(|(_, s)| match s {
                Shape::Seq { channels, .. } => *channels,
                _ => 0,
            })
            .next()
            .unwrap();
        assert_eq!(after_block1, config.initial_filters + 4 * config.growth);
    }

    #[test]
    fn transition_with_theta_one_preserves_channels() {
        let config = DenseNetConfig {
            theta: 1.0,
            ..DenseNetConfig::default()
        };
        let spec = build_densenet1d(&config, 163).unwrap();
        let g = compile(&spec).unwrap();
        let grown = config.initial_filters + 4 * config.growth;
        let after_transition = g
            .nodes
            .iter()
            .zip(&g.shapes)
            .filter(|(n, _)| n.label == "block3.pool")
            .map(|(_, s)| match s {
                Shape::Seq { channels, .. } => *channels,
                _ => 0,
            })
            .next()
            .unwrap();
        assert_eq!(after_transition, grown);
    }
}
