//! Fraud-detection modeling toolkit.
//!
//! The crate bundles everything needed to train and evaluate convolutional
//! fraud models on tabular data, end to end and without any external ML
//! runtime:
//!
//! - [`nn`] — a minimal differentiable engine (1D convolution, batchnorm,
//!   pooling, dropout, dense layers, softmax cross-entropy) with a
//!   finite-difference gradient-check harness;
//! - [`arch`] — declarative builders for the SpiderNet fully connected
//!   residual network and its baselines (1D-CNN, 1D-DenseNet, F-DenseNet),
//!   plus topology introspection and a compiled forward/backward executor;
//! - [`train`] — Adam with grouped weight decay, fraud-rate-leveled batch
//!   sampling, early stopping on validation AUC-PR, and grid search;
//! - [`features`] — B-test / W-test anomaly features per entity and the
//!   fill-rate / cross-correlation feature-selection pipeline;
//! - [`metrics`] — AUC-ROC / AUC-PR with asymptotic confidence intervals,
//!   Prevented Loss, and the one-sided sign test;
//! - [`data`] — CSV datasets with schema sidecars, stratified splitting,
//!   and a synthetic fraud-data generator;
//! - [`pipeline`] — reproducible command pipelines with run manifests,
//!   shared by the CLI binary and the examples.

pub mod arch;
pub mod data;
pub mod error;
pub mod features;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
