//! Builders for the four architecture families.

use serde::{Deserialize, Serialize};

use crate::arch::{ArchKind, BlockSpec, Edge, HeadSpec, NetworkSpec, NodeRef};
use crate::error::{Error, Result};

/// Default dropout rate of the fully connected head.
pub const DEFAULT_HEAD_DROPOUT: f64 = 0.25;

/// Block-input dropout schedule for architectures with concatenated inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "schedule", rename_all = "snake_case")]
pub enum DropoutSchedule {
    /// No block-input dropout anywhere.
    None,
    /// The same rate on every block that receives a concatenation
    /// (blocks 2..=n).
    Constant { rate: f64 },
    /// `p_k = min(coeff * k^4, cap)` on blocks `4..=n-1`; earlier blocks see
    /// little concatenated input and the last block feeds the head directly.
    ExpQuartic { coeff: f64, cap: f64 },
}

impl Default for DropoutSchedule {
    fn default() -> Self {
        DropoutSchedule::ExpQuartic { coeff: 0.001, cap: 0.9 }
    }
}

impl DropoutSchedule {
    /// Input-dropout rate for block `k` (1-based) of an `n_blocks` network.
    pub fn rate_for_block(&self, k: usize, n_blocks: usize) -> f64 {
        match *self {
            DropoutSchedule::None => 0.0,
            DropoutSchedule::Constant { rate } => {
                if k >= 2 {
                    rate
                } else {
                    0.0
                }
            }
            DropoutSchedule::ExpQuartic { coeff, cap } => {
                if k >= 4 && k + 1 <= n_blocks {
                    (coeff * (k as f64).powi(4)).min(cap)
                } else {
                    0.0
                }
            }
        }
    }
}

fn head(hidden: usize) -> HeadSpec {
    HeadSpec {
        hidden,
        dropout: DEFAULT_HEAD_DROPOUT,
        classes: 2,
    }
}

/// Fully connected residual network: block 1 consumes the raw input and
/// every block forwards its (flattened) output to all later blocks; only the
/// last block, after global average pooling, feeds the head.
pub fn build_spidernet(
    n_blocks: usize,
    filters: usize,
    kernel: usize,
    hidden: usize,
    dropout_schedule: DropoutSchedule,
    input_length: usize,
) -> Result<NetworkSpec> {
    if !(2..=10).contains(&n_blocks) {
        return Err(Error::hyper("n_blocks", format!("must be in 2..=10, got {}", n_blocks)));
    }
    validate_common(filters, kernel, hidden, input_length)?;
    let recommended = 1usize << (n_blocks - 1);
    if input_length < recommended {
        log::warn!(
            "input_length {} is below the recommended {} for {} blocks; deep pooling stacks will degenerate to pass-throughs",
            input_length,
            recommended,
            n_blocks
        );
    }

    let blocks = (1..=n_blocks)
        .map(|k| BlockSpec::ConvPool {
            filters,
            kernel,
            stride: 1,
            n_pool: if k < n_blocks { n_blocks - k } else { 1 },
            input_dropout: dropout_schedule.rate_for_block(k, n_blocks),
            has_gap: k == n_blocks,
        })
        .collect();

    let mut edges = vec![Edge::new(NodeRef::Input, NodeRef::Block(1))];
    for i in 1..=n_blocks {
        for j in (i + 1)..=n_blocks {
            edges.push(Edge::new(NodeRef::Block(i), NodeRef::Block(j)));
        }
    }
    edges.push(Edge::new(NodeRef::Block(n_blocks), NodeRef::Head));

    let spec = NetworkSpec {
        arch_kind: ArchKind::SpiderNet,
        input_length,
        blocks,
        head: head(hidden),
        edges,
    };
    spec.validate()?;
    Ok(spec)
}

/// Classical alternation of conv and pooling layers followed by the dense
/// head; strictly sequential, no skip edges.
pub fn build_cnn1d(
    n_conv: usize,
    filters: usize,
    kernel: usize,
    hidden: usize,
    input_length: usize,
) -> Result<NetworkSpec> {
    if ![3, 6, 8].contains(&n_conv) {
        return Err(Error::hyper("n_conv", format!("supported depths are 3, 6, 8; got {}", n_conv)));
    }
    validate_common(filters, kernel, hidden, input_length)?;

    let blocks = (0..n_conv)
        .map(|_| BlockSpec::ConvPool {
            filters,
            kernel,
            stride: 1,
            n_pool: 1,
            input_dropout: 0.0,
            has_gap: false,
        })
        .collect();
    let spec = NetworkSpec {
        arch_kind: ArchKind::Cnn1d,
        input_length,
        blocks,
        head: head(hidden),
        edges: chain_edges(n_conv),
        };
    spec.validate()?;
    Ok(spec)
}

/// Hyperparameters of the 1D DenseNet baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNetConfig {
    pub block_sizes: Vec<usize>,
    pub growth: usize,
    pub bottleneck_size: usize,
    pub theta: f64,
    pub conv_kernel: usize,
    pub initial_filters: usize,
    pub initial_conv_width: usize,
    pub initial_stride: usize,
    pub initial_pool_width: usize,
    pub initial_pool_stride: usize,
    pub transition_pool_width: usize,
    pub transition_pool_stride: usize,
    pub hidden: usize,
}

impl Default for DenseNetConfig {
    fn default() -> Self {
        DenseNetConfig {
            block_sizes: vec![4, 4],
            growth: 5,
            bottleneck_size: 2,
            theta: 0.5,
            conv_kernel: 3,
            initial_filters: 5,
            initial_conv_width: 5,
            initial_stride: 1,
            initial_pool_width: 2,
            initial_pool_stride: 2,
            transition_pool_width: 2,
            transition_pool_stride: 1,
            hidden: 100,
        }
    }
}

/// Classic DenseNet adapted to one-dimensional inputs: stem, dense blocks
/// with channel-wise concatenation and 1x1 bottlenecks, compression
/// transitions between blocks.
pub fn build_densenet1d(config: &DenseNetConfig, input_length: usize) -> Result<NetworkSpec> {
    if config.block_sizes.is_empty() {
        return Err(Error::hyper("block_sizes", "must name at least one dense block"));
    }
    if !(config.theta > 0.0 && config.theta <= 1.0) {
        return Err(Error::hyper("theta", format!("must be in (0, 1], got {}", config.theta)));
    }
    if config.growth < 1 || config.bottleneck_size < 1 {
        return Err(Error::hyper("growth/bottleneck_size", "must be >= 1"));
    }
    validate_common(config.initial_filters, config.conv_kernel, config.hidden, input_length)?;

    let mut blocks = vec![BlockSpec::Stem {
        filters: config.initial_filters,
        conv_width: config.initial_conv_width,
        conv_stride: config.initial_stride,
        pool_width: config.initial_pool_width,
        pool_stride: config.initial_pool_stride,
    }];
    let last = config.block_sizes.len() - 1;
    for (i, &layers) in config.block_sizes.iter().enumerate() {
        if layers == 0 {
            return Err(Error::hyper("block_sizes", "dense blocks need at least one layer"));
        }
        blocks.push(BlockSpec::Dense {
            layers,
            growth: config.growth,
            bottleneck: config.bottleneck_size,
            kernel: config.conv_kernel,
            has_gap: i == last,
        });
        if i != last {
            blocks.push(BlockSpec::Transition {
                theta: config.theta,
                pool_width: config.transition_pool_width,
                pool_stride: config.transition_pool_stride,
            });
        }
    }
    let n = blocks.len();
    let spec = NetworkSpec {
        arch_kind: ArchKind::DenseNet1d,
        input_length,
        blocks,
        head: head(config.hidden),
        edges: chain_edges(n),
    };
    spec.validate()?;
    Ok(spec)
}

/// DenseNet adapted for fraud prediction: two densely connected
/// convolutional blocks without a bottleneck between them. The second block
/// and the head both receive concatenated inputs, giving exactly two skip
/// edges at the block level.
pub fn build_fdensenet(
    n_blocks: usize,
    convs_per_block: usize,
    filters: usize,
    kernel: usize,
    hidden: usize,
    input_length: usize,
) -> Result<NetworkSpec> {
    if n_blocks != 2 {
        return Err(Error::hyper("n_blocks", format!("the two-block form is supported, got {}", n_blocks)));
    }
    if ![3, 4].contains(&convs_per_block) {
        return Err(Error::hyper(
            "convs_per_block",
            format!("must be 3 or 4, got {}", convs_per_block),
        ));
    }
    validate_common(filters, kernel, hidden, input_length)?;

    let blocks = (0..n_blocks)
        .map(|_| BlockSpec::FDense {
            convs: convs_per_block,
            filters,
            kernel,
            input_dropout: DEFAULT_HEAD_DROPOUT,
        })
        .collect();
    let edges = vec![
        Edge::new(NodeRef::Input, NodeRef::Block(1)),
        Edge::new(NodeRef::Input, NodeRef::Block(2)),
        Edge::new(NodeRef::Block(1), NodeRef::Block(2)),
        Edge::new(NodeRef::Block(1), NodeRef::Head),
        Edge::new(NodeRef::Block(2), NodeRef::Head),
    ];
    let spec = NetworkSpec {
        arch_kind: ArchKind::FDenseNet,
        input_length,
        blocks,
        head: head(hidden),
        edges,
    };
    spec.validate()?;
    Ok(spec)
}

fn chain_edges(n_blocks: usize) -> Vec<Edge> {
    let mut edges = vec![Edge::new(NodeRef::Input, NodeRef::Block(1))];
    for k in 1..n_blocks {
        edges.push(Edge::new(NodeRef::Block(k), NodeRef::Block(k + 1)));
    }
    edges.push(Edge::new(NodeRef::Block(n_blocks), NodeRef::Head));
    edges
}

fn validate_common(filters: usize, kernel: usize, hidden: usize, input_length: usize) -> Result<()> {
    if filters < 1 {
        return Err(Error::hyper("filters", "must be >= 1"));
    }
    if kernel < 1 {
        return Err(Error::hyper("kernel", "must be >= 1"));
    }
    if hidden < 1 {
        return Err(Error::hyper("hidden", "must be >= 1"));
    }
    if input_length < 1 {
        return Err(Error::hyper("input_length", "must be >= 1"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::count_connections;

    #[test]
    fn spidernet6_has_ten_skip_connections() {
        let spec = build_spidernet(6, 10, 3, 100, DropoutSchedule::default(), 128).unwrap();
        let (total, skip) = count_connections(&spec);
        assert_eq!(skip, 10);
        // INPUT->1, C(6,2) block pairs, 6->HEAD
        assert_eq!(total, 1 + 15 + 1);
    }

    #[test]
    fn spidernet8_has_twenty_one_skip_connections() {
        let spec = build_spidernet(8, 10, 3, 100, DropoutSchedule::default(), 128).unwrap();
        assert_eq!(count_connections(&spec).1, 21);
    }

    #[test]
    fn skip_count_formula_holds_for_all_depths() {
        for n in 2..=10 {
            let spec = build_spidernet(n, 4, 3, 16, DropoutSchedule::None, 1 << (n - 1)).unwrap();
            let expected = n * (n - 1) / 2 - (n - 1);
            assert_eq!(count_connections(&spec).1, expected, "n={}", n);
        }
    }

    #[test]
    fn cnn8_has_zero_skip_connections() {
        let spec = build_cnn1d(8, 10, 3, 100, 128).unwrap();
        let (total, skip) = count_connections(&spec);
        assert_eq!(skip, 0);
        assert_eq!(total, 8 + 1);
    }

    #[test]
    fn cnn_edges_form_a_single_path() {
        let spec = build_cnn1d(3, 10, 3, 100, 128).unwrap();
        let n = spec.n_blocks();
        for (i, e) in spec.edges.iter().enumerate() {
            assert_eq!(e.from.index(n), i);
            assert_eq!(e.to.index(n), i + 1);
        }
    }

    #[test]
    fn fdensenet_has_two_skip_connections() {
        let spec = build_fdensenet(2, 3, 15, 7, 60, 128).unwrap();
        assert_eq!(count_connections(&spec).1, 2);
    }

    #[test]
    fn densenet_is_sequential() {
        let spec = build_densenet1d(&DenseNetConfig::default(), 163).unwrap();
        assert_eq!(count_connections(&spec).1, 0);
    }

    #[test]
    fn exp_quartic_schedule_matches_block_numbers() {
        let s = DropoutSchedule::default();
        assert_eq!(s.rate_for_block(4, 6), 0.256);
        assert_eq!(s.rate_for_block(5, 6), 0.625);
        assert_eq!(s.rate_for_block(3, 6), 0.0);
        assert_eq!(s.rate_for_block(6, 6), 0.0);
        // the cap kicks in for deeper networks
        assert_eq!(s.rate_for_block(6, 8), 0.9);
    }

    #[test]
    fn unsupported_depths_are_rejected() {
        assert!(build_spidernet(1, 4, 3, 8, DropoutSchedule::None, 32).is_err());
        assert!(build_spidernet(11, 4, 3, 8, DropoutSchedule::None, 32).is_err());
        assert!(build_cnn1d(5, 4, 3, 8, 32).is_err());
        assert!(build_fdensenet(2, 5, 4, 3, 8, 32).is_err());
        assert!(build_fdensenet(3, 3, 4, 3, 8, 32).is_err());
        let bad = DenseNetConfig {
            theta: 0.0,
            ..DenseNetConfig::default()
        };
        assert!(build_densenet1d(&bad, 64).is_err());
    }
}
