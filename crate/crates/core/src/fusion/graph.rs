//! The discrete fusion network a trained hypernetwork collapses into:
//! per cell a chosen input pair, per node a chosen input pair and a
//! single operator with frozen parameters. Serializes to JSON (with
//! bit-exact parameter blobs) and exports as a DOT digraph.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::features::{SourceBatch, SourceFeatures, SourceSpec};
use super::ops::{apply_fusion_op, op_param_shapes, FusionOpKind};

/// Frozen parameter tensor stored as raw IEEE-754 bit patterns, so a
/// save/load round trip reproduces values exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBlob {
    pub shape: Vec<usize>,
    pub bits: Vec<u64>,
}

impl ParamBlob {
    pub fn from_tensor(t: &Tensor) -> ParamBlob {
        ParamBlob {
            shape: t.shape().to_vec(),
            bits: t.data().iter().map(|v| v.to_bits()).collect(),
        }
    }

    pub fn values(&self) -> Vec<f64> {
        self.bits.iter().map(|b| f64::from_bits(*b)).collect()
    }

    /// Rebuild as a constant tensor (no gradient: the graph is frozen).
    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::from_vec(self.values(), &self.shape)
    }

    /// Rebuild as a trainable leaf, for checkpoints of live parameters.
    pub fn to_param(&self) -> Result<Tensor> {
        Tensor::param(self.values(), &self.shape)
    }
}

/// One fusion node: two candidate indices into `[cell input X, cell
/// input Y, node 0, node 1, ...]` and the operator applied to them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub x: usize,
    pub y: usize,
    pub op: FusionOpKind,
    pub params: Vec<ParamBlob>,
}

/// One cell: two candidate indices into `[sources..., earlier cells...]`
/// plus its node sequence. The last node's output is the cell output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphCell {
    pub x: usize,
    pub y: usize,
    pub nodes: Vec<GraphNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionGraph {
    pub c_f: usize,
    pub num_classes: usize,
    pub sources: Vec<SourceSpec>,
    /// Per-source 1x1 conv weights `(C_f, C_s, 1)` aligning channel widths.
    pub projections: Vec<ParamBlob>,
    pub cells: Vec<GraphCell>,
    /// Classifier over the length-pooled last cell output: `(K, C_f)` + `(K,)`.
    pub head_w: ParamBlob,
    pub head_b: ParamBlob,
}

impl FusionGraph {
    /// Structural validation: acyclicity by construction (indices only
    /// reach earlier producers), distinct input pairs, parameter shapes.
    pub fn validate(&self) -> Result<()> {
        if self.c_f == 0 || self.num_classes == 0 {
            return Err(Error::invalid("graph", "c_f and num_classes must be positive"));
        }
        if self.cells.is_empty() {
            return Err(Error::invalid("cells", "graph needs at least one cell"));
        }
        if self.projections.len() != self.sources.len() {
            return Err(Error::invalid(
                "projections",
                format!("{} projections for {} sources", self.projections.len(), self.sources.len()),
            ));
        }
        for (s, (spec, proj)) in self.sources.iter().zip(&self.projections).enumerate() {
            let want = vec![self.c_f, spec.channels, 1];
            if proj.shape != want {
                return Err(Error::invalid(
                    "projections",
                    format!("source {s}: shape {:?}, want {want:?}", proj.shape),
                ));
            }
        }
        for (p, cell) in self.cells.iter().enumerate() {
            let n_cand = self.sources.len() + p;
            if cell.x >= n_cand || cell.y >= n_cand || cell.x == cell.y {
                return Err(Error::invalid(
                    "cells",
                    format!("cell {p}: inputs ({}, {}) must be distinct and < {n_cand}", cell.x, cell.y),
                ));
            }
            if cell.nodes.is_empty() {
                return Err(Error::invalid("cells", format!("cell {p} has no nodes")));
            }
            for (d, node) in cell.nodes.iter().enumerate() {
                let n_node_cand = 2 + d;
                if node.x >= n_node_cand || node.y >= n_node_cand || node.x == node.y {
                    return Err(Error::invalid(
                        "cells",
                        format!(
                            "cell {p} node {d}: inputs ({}, {}) must be distinct and < {n_node_cand}",
                            node.x, node.y
                        ),
                    ));
                }
                let spec = op_param_shapes(node.op, self.c_f);
                if node.params.len() != spec.len()
                    || node.params.iter().zip(&spec).any(|(p, (_, s))| &p.shape != s)
                {
                    return Err(Error::invalid(
                        "cells",
                        format!("cell {p} node {d}: parameter blobs do not match {}", node.op.name()),
                    ));
                }
            }
        }
        if self.head_w.shape != [self.num_classes, self.c_f] {
            return Err(Error::invalid(
                "head_w",
                format!("shape {:?}, want [{}, {}]", self.head_w.shape, self.num_classes, self.c_f),
            ));
        }
        if self.head_b.shape != [self.num_classes] {
            return Err(Error::invalid(
                "head_b",
                format!("shape {:?}, want [{}]", self.head_b.shape, self.num_classes),
            ));
        }
        Ok(())
    }

    /// The operator of every node, cell-major — the unit the hardware
    /// cost model charges for.
    pub fn ops_used(&self) -> Vec<FusionOpKind> {
        self.cells.iter().flat_map(|c| c.nodes.iter().map(|n| n.op)).collect()
    }

    /// Discrete inference: logits `(B, K)` for one batch.
    pub fn forward(&self, batch: &SourceBatch) -> Result<Tensor> {
        if batch.inputs.len() != self.sources.len() {
            return Err(Error::ShapeMismatch {
                op: "graph_forward",
                detail: format!(
                    "{} input tensors for {} sources",
                    batch.inputs.len(),
                    self.sources.len()
                ),
            });
        }
        let mut available: Vec<Tensor> = Vec::with_capacity(self.sources.len() + self.cells.len());
        for (input, proj) in batch.inputs.iter().zip(&self.projections) {
            available.push(input.conv1d(&proj.to_tensor()?, None)?);
        }
        for cell in &self.cells {
            let cx = available[cell.x].clone();
            let cy = available[cell.y].clone();
            let mut produced: Vec<Tensor> = Vec::with_capacity(cell.nodes.len());
            for node in &cell.nodes {
                let pick = |i: usize| -> Tensor {
                    match i {
                        0 => cx.clone(),
                        1 => cy.clone(),
                        _ => produced[i - 2].clone(),
                    }
                };
                let params: Vec<Tensor> =
                    node.params.iter().map(|b| b.to_tensor()).collect::<Result<_>>()?;
                produced.push(apply_fusion_op(node.op, &pick(node.x), &pick(node.y), &params)?);
            }
            available.push(produced.pop().expect("validated non-empty"));
        }
        let pooled = available.last().expect("at least one cell").mean_axis(2)?;
        pooled.matmul2(&self.head_w.to_tensor()?.transpose_last()?)?.add_row(&self.head_b.to_tensor()?)
    }

    /// Top-1 accuracy over a whole feature set, evaluated in batches.
    pub fn accuracy(&self, features: &SourceFeatures, batch_size: usize) -> Result<f64> {
        if features.is_empty() {
            return Err(Error::EmptyDataset("fusion graph evaluation".into()));
        }
        if batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be positive"));
        }
        let idxs: Vec<usize> = (0..features.len()).collect();
        let mut correct = 0usize;
        for chunk in idxs.chunks(batch_size) {
            let batch = features.batch(chunk)?;
            let logits = self.forward(&batch)?;
            correct += count_argmax_hits(&logits, &batch.labels);
        }
        Ok(correct as f64 / features.len() as f64)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::parse(path.display().to_string(), format!("serialize: {e}")))?;
        fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<FusionGraph> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let graph: FusionGraph = serde_json::from_str(&text)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        graph.validate()?;
        Ok(graph)
    }

    /// Render as a DOT digraph: sources, fusion nodes labeled by
    /// operator, and the classifier head.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph fusion {\n  rankdir=LR;\n");
        for (s, spec) in self.sources.iter().enumerate() {
            let _ = writeln!(out, "  src{s} [shape=box, label=\"{}[b{}]\"];", spec.modality, spec.block);
        }
        // Resolve a cell-level candidate index to the DOT id of its producer.
        let cell_input_id = |idx: usize| -> String {
            if idx < self.sources.len() {
                format!("src{idx}")
            } else {
                let p = idx - self.sources.len();
                format!("c{p}_n{}", self.cells[p].nodes.len() - 1)
            }
        };
        for (p, cell) in self.cells.iter().enumerate() {
            let _ = writeln!(out, "  subgraph cluster_{p} {{ label=\"cell {p}\";");
            for (d, node) in cell.nodes.iter().enumerate() {
                let _ = writeln!(out, "    c{p}_n{d} [label=\"{}\"];", node.op.name());
            }
            let _ = writeln!(out, "  }}");
            for (d, node) in cell.nodes.iter().enumerate() {
                for (slot, idx) in [("x", node.x), ("y", node.y)] {
                    let from = match idx {
                        0 => cell_input_id(cell.x),
                        1 => cell_input_id(cell.y),
                        _ => format!("c{p}_n{}", idx - 2),
                    };
                    let _ = writeln!(out, "  {from} -> c{p}_n{d} [label=\"{slot}\"];");
                }
            }
        }
        let _ = writeln!(out, "  head [shape=box, label=\"head ({} classes)\"];", self.num_classes);
        let last = self.cells.len() - 1;
        let _ = writeln!(out, "  c{last}_n{} -> head;", self.cells[last].nodes.len() - 1);
        out.push_str("}\n");
        out
    }
}

/// Count rows whose argmax (lowest index on ties) equals the label.
pub(crate) fn count_argmax_hits(logits: &Tensor, labels: &[usize]) -> usize {
    let [b, k] = *logits.shape() else { return 0 };
    let data = logits.data();
    labels
        .iter()
        .enumerate()
        .filter(|&(i, &label)| {
            let row = &data[i * k..(i + 1) * k];
            let mut best = 0usize;
            for (j, v) in row.iter().enumerate().skip(1) {
                if *v > row[best] {
                    best = j;
                }
            }
            debug_assert!(i < b);
            best == label
        })
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn blob(data: &[f64], shape: &[usize]) -> ParamBlob {
        ParamBlob::from_tensor(&Tensor::from_vec(data.to_vec(), shape).unwrap())
    }

    /// Two single-channel sources, c_f = 1, one cell with one Sum node.
    fn tiny_graph() -> FusionGraph {
        FusionGraph {
            c_f: 1,
            num_classes: 2,
            sources: vec![
                SourceSpec { modality: "a".into(), block: 0, channels: 1 },
                SourceSpec { modality: "b".into(), block: 0, channels: 1 },
            ],
            projections: vec![blob(&[2.0], &[1, 1, 1]), blob(&[3.0], &[1, 1, 1])],
            cells: vec![GraphCell {
                x: 0,
                y: 1,
                nodes: vec![GraphNode { x: 0, y: 1, op: FusionOpKind::Sum, params: vec![] }],
            }],
            head_w: blob(&[1.0, -1.0], &[2, 1]),
            head_b: blob(&[0.0, 0.5], &[2]),
        }
    }

    fn tiny_features() -> SourceFeatures {
        SourceFeatures::new(
            tiny_graph().sources,
            2,
            vec![vec![1.0, 2.0], vec![3.0, 4.0]],
            vec![0],
        )
        .unwrap()
    }

    #[test]
    fn forward_matches_hand_composition() {
        // proj0 = 2*[1,2] = [2,4]; proj1 = 3*[3,4] = [9,12];
        // sum = [11,16]; mean = 13.5; logits = [13.5, -13.0].
        let g = tiny_graph();
        let batch = tiny_features().full_batch().unwrap();
        let logits = g.forward(&batch).unwrap();
        assert_eq!(logits.shape(), &[1, 2]);
        assert_abs_diff_eq!(logits.data()[0], 13.5, epsilon = 1e-12);
        assert_abs_diff_eq!(logits.data()[1], -13.0, epsilon = 1e-12);
    }

    #[test]
    fn save_load_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("graph.json");
        let g = tiny_graph();
        g.save(&path).unwrap();
        let back = FusionGraph::load(&path).unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn structural_defects_are_rejected() {
        let mut g = tiny_graph();
        g.cells[0].y = 0; // duplicate input pair
        assert!(g.validate().is_err());

        let mut g = tiny_graph();
        g.cells[0].x = 7; // dangling source index
        assert!(g.validate().is_err());

        let mut g = tiny_graph();
        g.cells[0].nodes[0].op = FusionOpKind::ConcatFC; // params missing
        assert!(g.validate().is_err());

        let mut g = tiny_graph();
        g.head_w = blob(&[1.0], &[1, 1]);
        assert!(g.validate().is_err());
    }

    #[test]
    fn accuracy_is_order_invariant_and_empty_is_an_error() {
        let g = tiny_graph();
        let specs = tiny_graph().sources;
        // 4 examples with distinguishable features; labels picked so some hit.
        let s0: Vec<f64> = vec![1.0, 2.0, -5.0, -6.0, 1.0, 1.0, -2.0, -2.0];
        let s1: Vec<f64> = vec![3.0, 4.0, -1.0, -1.0, 0.0, 0.0, -1.0, -1.0];
        let fwd =
            SourceFeatures::new(specs.clone(), 2, vec![s0.clone(), s1.clone()], vec![0, 1, 0, 1])
                .unwrap();
        // Reverse example order (and labels with it).
        let rev_rows = |v: &[f64]| -> Vec<f64> {
            v.chunks(2).rev().flatten().copied().collect()
        };
        let rev = SourceFeatures::new(specs, 2, vec![rev_rows(&s0), rev_rows(&s1)], vec![1, 0, 1, 0])
            .unwrap();
        let a = g.accuracy(&fwd, 3).unwrap();
        let b = g.accuracy(&rev, 2).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 0.0);

        let empty = SourceFeatures::new(tiny_graph().sources, 2, vec![vec![], vec![]], vec![]).unwrap();
        assert!(g.accuracy(&empty, 4).is_err());
    }

    #[test]
    fn dot_export_names_every_node() {
        let g = tiny_graph();
        let dot = g.to_dot();
        assert!(dot.starts_with("digraph fusion {"));
        assert!(dot.contains("src0"));
        assert!(dot.contains("c0_n0 [label=\"Sum\"]"));
        assert!(dot.contains("c0_n0 -> head"));
        assert_eq!(dot.matches('{').count(), dot.matches('}').count());
    }

    #[test]
    fn param_blob_round_trips_bit_patterns() {
        let vals = [0.1 + 0.2, f64::MIN_POSITIVE, -0.0, 1e300];
        let b = blob(&vals, &[4]);
        let text = serde_json::to_string(&b).unwrap();
        let back: ParamBlob = serde_json::from_str(&text).unwrap();
        for (orig, got) in vals.iter().zip(back.values()) {
            assert_eq!(orig.to_bits(), got.to_bits());
        }
    }
}
