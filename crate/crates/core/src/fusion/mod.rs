//! Differentiable fusion search: the six fusion operators, the relaxed
//! fusion hypernetwork (cells of gated nodes with architecture weights
//! α/β/γ), its hardware-aware training loss, and discretization of a
//! trained hypernetwork into a concrete [`FusionGraph`].

mod features;
mod graph;
mod hypernet;
mod ops;

pub use features::{SourceBatch, SourceFeatures, SourceSpec};
pub use graph::{FusionGraph, GraphCell, GraphNode, ParamBlob};
pub(crate) use graph::count_argmax_hits;
pub use hypernet::{
    fusion_loss, gated_mix, mix_ops, one_hot_gamma, relaxed_accuracy, train_fusion, ArchParams,
    FusionHypernet, FusionTrainConfig, GammaMode, LossExponents,
};
pub use ops::{apply_fusion_op, op_param_shapes, FusionOpKind, InputGate, ALL_FUSION_OPS, GATES};
