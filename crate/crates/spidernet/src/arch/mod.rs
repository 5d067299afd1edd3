//! Declarative network architectures and topology introspection.
//!
//! A [`NetworkSpec`] is a pure description: an ordered list of blocks, a
//! fully connected head, and an explicit edge list over `INPUT`, the blocks,
//! and `HEAD`. Builders in [`build`] produce specs for the four supported
//! architecture families; [`network::Network`] compiles a spec into an
//! executable graph with parameters.

pub mod build;
pub mod graph;
pub mod network;

pub use build::{build_cnn1d, build_densenet1d, build_fdensenet, build_spidernet, DenseNetConfig, DropoutSchedule};
pub use graph::Shape;
pub use network::{Checkpoint, Network, ParamStore};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchKind {
    SpiderNet,
    Cnn1d,
    DenseNet1d,
    FDenseNet,
}

/// A vertex in the block-level topology. Blocks are numbered from 1; the
/// network input is index 0 and the head sits after the last block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRef {
    Input,
    Block(usize),
    Head,
}

impl NodeRef {
    pub fn index(&self, n_blocks: usize) -> usize {
        match self {
            NodeRef::Input => 0,
            NodeRef::Block(k) => *k,
            NodeRef::Head => n_blocks + 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub from: NodeRef,
    pub to: NodeRef,
}

impl Edge {
    pub fn new(from: NodeRef, to: NodeRef) -> Self {
        Edge { from, to }
    }
}

/// One block of the architecture. `ConvPool` is the Spider-block /
/// plain-CNN shape; the remaining kinds exist for the DenseNet baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BlockSpec {
    /// input-dropout -> conv -> batchnorm -> ReLU -> `n_pool` maxpools
    /// (-> global average pooling when `has_gap`).
    ConvPool {
        filters: usize,
        kernel: usize,
        stride: usize,
        n_pool: usize,
        input_dropout: f64,
        has_gap: bool,
    },
    /// DenseNet stem: conv then maxpool.
    Stem {
        filters: usize,
        conv_width: usize,
        conv_stride: usize,
        pool_width: usize,
        pool_stride: usize,
    },
    /// DenseNet dense block: `layers` composite layers, each
    /// BN -> ReLU -> 1x1 bottleneck conv -> BN -> ReLU -> conv(`kernel`),
    /// concatenated channel-wise onto the running feature map. When
    /// `has_gap`, a final BN -> ReLU -> global average pooling follows.
    Dense {
        layers: usize,
        growth: usize,
        bottleneck: usize,
        kernel: usize,
        has_gap: bool,
    },
    /// DenseNet transition: BN -> ReLU -> 1x1 conv compressing channels by
    /// `theta`, then maxpool.
    Transition {
        theta: f64,
        pool_width: usize,
        pool_stride: usize,
    },
    /// F-DenseNet block: input dropout, then `convs` conv+BN+ReLU+maxpool
    /// layers densely connected by flatten-concatenation inside the block.
    FDense {
        convs: usize,
        filters: usize,
        kernel: usize,
        input_dropout: f64,
    },
}

/// Fully connected classifier head:
/// dense(`hidden`) -> ReLU -> dropout -> dense(2) -> softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub hidden: usize,
    pub dropout: f64,
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub arch_kind: ArchKind,
    pub input_length: usize,
    pub blocks: Vec<BlockSpec>,
    pub head: HeadSpec,
    pub edges: Vec<Edge>,
}

impl NetworkSpec {
    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Sources feeding `target`, in ascending topology-index order.
    pub fn sources_of(&self, target: NodeRef) -> Vec<NodeRef> {
        let n = self.n_blocks();
        let mut sources: Vec<NodeRef> = self
            .edges
            .iter()
            .filter(|e| e.to == target)
            .map(|e| e.from)
            .collect();
        sources.sort_by_key(|s| s.index(n));
        sources
    }

    /// Edges must form a DAG consistent with block order and every block
    /// and the head must be fed.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_blocks();
        if n == 0 {
            return Err(Error::InvalidArchitecture("no blocks".into()));
        }
        if self.input_length == 0 {
            return Err(Error::InvalidArchitecture("input_length must be positive".into()));
        }
        for e in &self.edges {
            let from = e.from.index(n);
            let to = e.to.index(n);
            if from >= to {
                return Err(Error::InvalidArchitecture(format!(
                    "edge {:?} -> {:?} violates block order",
                    e.from, e.to
                )));
            }
            if matches!(e.to, NodeRef::Input) || matches!(e.from, NodeRef::Head) {
                return Err(Error::InvalidArchitecture("edge endpoints out of range".into()));
            }
            if let NodeRef::Block(k) = e.from {
                if k == 0 || k > n {
                    return Err(Error::InvalidArchitecture(format!("unknown source block {}", k)));
                }
            }
            if let NodeRef::Block(k) = e.to {
                if k == 0 || k > n {
                    return Err(Error::InvalidArchitecture(format!("unknown destination block {}", k)));
                }
            }
        }
        for k in 1..=n {
            if self.sources_of(NodeRef::Block(k)).is_empty() {
                return Err(Error::InvalidArchitecture(format!("block {} has no incoming edge", k)));
            }
        }
        if self.sources_of(NodeRef::Head).is_empty() {
            return Err(Error::InvalidArchitecture("head has no incoming edge".into()));
        }
        Ok(())
    }

    /// Total parameter count the compiled network would have.
    pub fn parameter_count(&self) -> Result<usize> {
        let compiled = graph::compile(self)?;
        Ok(compiled.param_plans.iter().map(|p| p.shape.iter().product::<usize>()).sum())
    }

    /// Symbolic per-node shape trace of the compiled graph.
    pub fn shape_trace(&self) -> Result<Vec<(String, Shape)>> {
        let compiled = graph::compile(self)?;
        Ok(compiled
            .nodes
            .iter()
            .zip(&compiled.shapes)
            .map(|(node, shape)| (node.label.clone(), *shape))
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: NetworkSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// `(total_edges, skip_edges)`: a skip edge is one whose destination is not
/// the node immediately after its source.
pub fn count_connections(spec: &NetworkSpec) -> (usize, usize) {
    let n = spec.n_blocks();
    let total = spec.edges.len();
    let skip = spec
        .edges
        .iter()
        .filter(|e| e.to.index(n) != e.from.index(n) + 1)
        .count();
    (total, skip)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_indices_bracket_blocks() {
        assert_eq!(NodeRef::Input.index(6), 0);
        assert_eq!(NodeRef::Block(3).index(6), 3);
        assert_eq!(NodeRef::Head.index(6), 7);
    }

    #[test]
    fn spec_json_round_trips() {
        let spec = build::build_spidernet(4, 8, 3, 32, DropoutSchedule::default(), 64).unwrap();
        let json = spec.to_json().unwrap();
        let back = NetworkSpec::from_json(&json).unwrap();
        assert_eq!(spec, back);
    }

    #[test]
    fn backwards_edge_is_rejected() {
        let mut spec = build::build_spidernet(3, 4, 3, 8, DropoutSchedule::None, 32).unwrap();
        spec.edges.push(Edge::new(NodeRef::Block(3), NodeRef::Block(1)));
        assert!(spec.validate().is_err());
    }
}
