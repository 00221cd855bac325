//! The relaxed fusion hypernetwork and its differentiable search.
//!
//! Every choice the discrete fusion graph makes — which two inputs a
//! cell taps, which two inputs each node consumes, which operator the
//! node applies — is relaxed into a continuous mixture. Input choices
//! use per-candidate Identity/Zero gates (two gate-logit matrices per
//! consumer, one for each input slot); operator choice uses a softmax
//! over the six-way operator set. Training moves the gate and operator
//! logits jointly with the network weights; `discretize` then commits
//! each mixture to its argmax.

use crate::error::{Error, Result};
use crate::hwcost::{fusion_relaxed_cost, CostMetric, DeviceLut};
use crate::searchspace::FusionMacroConfig;
use crate::seeds::{self, tag};
use crate::tensor::{AdamConfig, AdamState, CosineSchedule, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{SourceBatch, SourceFeatures, SourceSpec};
use super::graph::{count_argmax_hits, FusionGraph, GraphCell, GraphNode, ParamBlob};
use super::ops::{apply_fusion_op, op_param_shapes, FusionOpKind, ALL_FUSION_OPS};

/// Architecture logits. Gate matrices are `(candidates, 2)` with column
/// 0 the Identity gate and column 1 the Zero gate; `gamma` holds one
/// operator row per (cell, node), cell-major.
#[derive(Debug, Clone)]
pub struct ArchParams {
    /// Per cell: gate matrices for input slots X and Y over
    /// `[sources..., earlier cells...]`.
    pub alpha: Vec<[Tensor; 2]>,
    /// Per cell, per node: gate matrices for slots X and Y over
    /// `[cell X, cell Y, earlier nodes...]`.
    pub beta: Vec<Vec<[Tensor; 2]>>,
    /// `(cells * nodes, 6)` operator logits.
    pub gamma: Tensor,
}

/// How the operator logits behave during training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GammaMode {
    /// Learned jointly with everything else.
    Train,
    /// Pinned to the uniform mixture (all-zero logits).
    FrozenUniform,
    /// Pinned one-hot on a single operator; the relaxed hardware cost
    /// then equals that operator's table cost exactly.
    FrozenOneHot(FusionOpKind),
}

/// Exponents (a, b, c) applied to the task, latency, and energy terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossExponents {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Default for LossExponents {
    fn default() -> Self {
        LossExponents { a: 1.0, b: 1.0, c: 1.0 }
    }
}

impl LossExponents {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("a", self.a), ("b", self.b), ("c", self.c)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(name, format!("exponent {v} must be >= 0")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub min_lr: f64,
    pub adam: AdamConfig,
    pub exponents: LossExponents,
    pub gamma_mode: GammaMode,
    /// When false, the Identity/Zero gate logits stay at their current
    /// values and only weights (and gamma, per its mode) move.
    pub train_input_gates: bool,
    pub seed: u64,
}

impl Default for FusionTrainConfig {
    fn default() -> Self {
        FusionTrainConfig {
            epochs: 25,
            batch_size: 32,
            base_lr: 1e-4,
            min_lr: 1e-6,
            adam: AdamConfig::default(),
            exponents: LossExponents::default(),
            gamma_mode: GammaMode::Train,
            train_input_gates: true,
            seed: 0,
        }
    }
}

impl FusionTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be positive"));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(Error::invalid("base_lr", format!("{} must be > 0", self.base_lr)));
        }
        if !(self.min_lr.is_finite() && self.min_lr >= 0.0 && self.min_lr <= self.base_lr) {
            return Err(Error::invalid("min_lr", format!("{} must be in [0, base_lr]", self.min_lr)));
        }
        self.adam.validate()?;
        self.exponents.validate()
    }
}

/// Mix candidates through per-candidate Identity/Zero gates: softmax
/// each `(candidate, 2)` logit row, weight the candidate by its Identity
/// probability, and sum. The Zero gate contributes nothing, so a row
/// saturated toward Zero removes its candidate from the mixture.
pub fn gated_mix(gate_logits: &Tensor, candidates: &[Tensor]) -> Result<Tensor> {
    if gate_logits.shape() != [candidates.len(), 2] {
        return Err(Error::ShapeMismatch {
            op: "gated_mix",
            detail: format!(
                "gate logits {:?} for {} candidates",
                gate_logits.shape(),
                candidates.len()
            ),
        });
    }
    if candidates.is_empty() {
        return Err(Error::invalid("candidates", "nothing to mix"));
    }
    let soft = gate_logits.softmax(1)?;
    let mut out: Option<Tensor> = None;
    for (k, cand) in candidates.iter().enumerate() {
        let w = soft.narrow(0, k, 1)?.narrow(1, 0, 1)?;
        let term = cand.scale_by(&w)?;
        out = Some(match out {
            None => term,
            Some(acc) => acc.add(&term)?,
        });
    }
    Ok(out.expect("candidates checked non-empty"))
}

/// The softmax-weighted operator mixture of one node: `op_logits` is a
/// `(1, 6)` row, `params[j]` the parameter bundle of `ALL_FUSION_OPS[j]`.
pub fn mix_ops(op_logits: &Tensor, x: &Tensor, y: &Tensor, params: &[Vec<Tensor>]) -> Result<Tensor> {
    let n_ops = ALL_FUSION_OPS.len();
    if op_logits.shape() != [1, n_ops] || params.len() != n_ops {
        return Err(Error::ShapeMismatch {
            op: "mix_ops",
            detail: format!("logits {:?}, {} param bundles", op_logits.shape(), params.len()),
        });
    }
    let soft = op_logits.softmax(1)?;
    let mut out: Option<Tensor> = None;
    for (j, op) in ALL_FUSION_OPS.into_iter().enumerate() {
        let w = soft.narrow(1, j, 1)?;
        let term = apply_fusion_op(op, x, y, &params[j])?.scale_by(&w)?;
        out = Some(match out {
            None => term,
            Some(acc) => acc.add(&term)?,
        });
    }
    Ok(out.expect("operator set is non-empty"))
}

/// All-zero logits except `gap` on `op`'s column, one row per node.
/// A gap of 1000 saturates the softmax to an exact one-hot in f64.
pub fn one_hot_gamma(macro_cfg: FusionMacroConfig, op: FusionOpKind, gap: f64) -> Result<Tensor> {
    let rows = macro_cfg.cells * macro_cfg.nodes;
    let n_ops = ALL_FUSION_OPS.len();
    let mut data = vec![0.0; rows * n_ops];
    for r in 0..rows {
        data[r * n_ops + op.index()] = gap;
    }
    Tensor::from_vec(data, &[rows, n_ops])
}

/// The relaxed fusion network: per-source projections into a common
/// width, gated cells of operator-mixture nodes, and a linear head over
/// the length-pooled last cell output.
#[derive(Debug, Clone)]
pub struct FusionHypernet {
    macro_cfg: FusionMacroConfig,
    c_f: usize,
    num_classes: usize,
    sources: Vec<SourceSpec>,
    /// Per source: `(C_f, C_s, 1)` projection kernels.
    projections: Vec<Tensor>,
    arch: ArchParams,
    /// `[cell][node][op][param]` in `ALL_FUSION_OPS` order.
    op_params: Vec<Vec<Vec<Vec<Tensor>>>>,
    head_w: Tensor,
    head_b: Tensor,
}

fn init_weight(shape: &[usize], rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let fan_in: usize = shape[1..].iter().product();
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::param(data, shape)
}

impl FusionHypernet {
    /// Fresh hypernet with zero-initialized architecture logits (every
    /// mixture starts uniform) and small random operator weights.
    pub fn new(
        sources: Vec<SourceSpec>,
        macro_cfg: FusionMacroConfig,
        c_f: usize,
        num_classes: usize,
        seed: u64,
    ) -> Result<FusionHypernet> {
        if sources.len() < 2 {
            return Err(Error::invalid(
                "sources",
                format!("{} source(s); the first cell needs at least 2 candidates", sources.len()),
            ));
        }
        if macro_cfg.cells == 0 || macro_cfg.nodes == 0 {
            return Err(Error::invalid("macro_cfg", format!("{macro_cfg:?} must be >= 1x1")));
        }
        if c_f == 0 {
            return Err(Error::invalid("c_f", "fusion width must be positive"));
        }
        if num_classes < 2 {
            return Err(Error::invalid("num_classes", "need at least 2 classes"));
        }
        let mut rng = seeds::rng_for(seed, tag::FUSION_INIT, 0, 0);
        let projections = sources
            .iter()
            .map(|s| init_weight(&[c_f, s.channels, 1], &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let mut alpha = Vec::with_capacity(macro_cfg.cells);
        let mut beta = Vec::with_capacity(macro_cfg.cells);
        let mut op_params = Vec::with_capacity(macro_cfg.cells);
        for p in 0..macro_cfg.cells {
            let n_cand = sources.len() + p;
            alpha.push([
                Tensor::param(vec![0.0; n_cand * 2], &[n_cand, 2])?,
                Tensor::param(vec![0.0; n_cand * 2], &[n_cand, 2])?,
            ]);
            let mut cell_beta = Vec::with_capacity(macro_cfg.nodes);
            let mut cell_ops = Vec::with_capacity(macro_cfg.nodes);
            for d in 0..macro_cfg.nodes {
                let n_node = 2 + d;
                cell_beta.push([
                    Tensor::param(vec![0.0; n_node * 2], &[n_node, 2])?,
                    Tensor::param(vec![0.0; n_node * 2], &[n_node, 2])?,
                ]);
                let mut per_op = Vec::with_capacity(ALL_FUSION_OPS.len());
                for op in ALL_FUSION_OPS {
                    let bundle = op_param_shapes(op, c_f)
                        .iter()
                        .map(|(name, shape)| {
                            if *name == "b" {
                                Tensor::param(vec![0.0; shape.iter().product()], shape)
                            } else {
                                init_weight(shape, &mut rng)
                            }
                        })
                        .collect::<Result<Vec<_>>>()?;
                    per_op.push(bundle);
                }
                cell_ops.push(per_op);
            }
            beta.push(cell_beta);
            op_params.push(cell_ops);
        }
        let rows = macro_cfg.cells * macro_cfg.nodes;
        let gamma = Tensor::param(vec![0.0; rows * ALL_FUSION_OPS.len()], &[rows, ALL_FUSION_OPS.len()])?;
        let head_w = init_weight(&[num_classes, c_f], &mut rng)?;
        let head_b = Tensor::param(vec![0.0; num_classes], &[num_classes])?;
        Ok(FusionHypernet {
            macro_cfg,
            c_f,
            num_classes,
            sources,
            projections,
            arch: ArchParams { alpha, beta, gamma },
            op_params,
            head_w,
            head_b,
        })
    }

    pub fn macro_cfg(&self) -> FusionMacroConfig {
        self.macro_cfg
    }

    pub fn c_f(&self) -> usize {
        self.c_f
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn sources(&self) -> &[SourceSpec] {
        &self.sources
    }

    pub fn arch(&self) -> &ArchParams {
        &self.arch
    }

    pub fn gamma(&self) -> &Tensor {
        &self.arch.gamma
    }

    pub fn set_gamma(&mut self, gamma: Tensor) -> Result<()> {
        if gamma.shape() != self.arch.gamma.shape() {
            return Err(Error::ShapeMismatch {
                op: "set_gamma",
                detail: format!("{:?}, want {:?}", gamma.shape(), self.arch.gamma.shape()),
            });
        }
        self.arch.gamma = gamma;
        Ok(())
    }

    pub fn set_alpha(&mut self, cell: usize, slot: usize, logits: Tensor) -> Result<()> {
        let current = self
            .arch
            .alpha
            .get(cell)
            .and_then(|s| s.get(slot))
            .ok_or_else(|| Error::invalid("alpha", format!("no cell {cell} slot {slot}")))?;
        if logits.shape() != current.shape() {
            return Err(Error::ShapeMismatch {
                op: "set_alpha",
                detail: format!("{:?}, want {:?}", logits.shape(), current.shape()),
            });
        }
        self.arch.alpha[cell][slot] = logits;
        Ok(())
    }

    pub fn set_beta(&mut self, cell: usize, node: usize, slot: usize, logits: Tensor) -> Result<()> {
        let current = self
            .arch
            .beta
            .get(cell)
            .and_then(|c| c.get(node))
            .and_then(|s| s.get(slot))
            .ok_or_else(|| Error::invalid("beta", format!("no cell {cell} node {node} slot {slot}")))?;
        if logits.shape() != current.shape() {
            return Err(Error::ShapeMismatch {
                op: "set_beta",
                detail: format!("{:?}, want {:?}", logits.shape(), current.shape()),
            });
        }
        self.arch.beta[cell][node][slot] = logits;
        Ok(())
    }

    fn check_batch(&self, batch: &SourceBatch) -> Result<()> {
        if batch.inputs.len() != self.sources.len() {
            return Err(Error::ShapeMismatch {
                op: "hypernet_forward",
                detail: format!("{} inputs for {} sources", batch.inputs.len(), self.sources.len()),
            });
        }
        let b = batch.labels.len();
        for (input, spec) in batch.inputs.iter().zip(&self.sources) {
            match input.shape() {
                [bi, c, _] if *bi == b && *c == spec.channels => {}
                other => {
                    return Err(Error::ShapeMismatch {
                        op: "hypernet_forward",
                        detail: format!(
                            "source {}/block{}: input {:?}, want [{b}, {}, L]",
                            spec.modality, spec.block, other, spec.channels
                        ),
                    })
                }
            }
        }
        Ok(())
    }

    /// Relaxed forward pass: logits `(B, num_classes)`.
    pub fn forward(&self, batch: &SourceBatch) -> Result<Tensor> {
        self.check_batch(batch)?;
        let mut available: Vec<Tensor> = batch
            .inputs
            .iter()
            .zip(&self.projections)
            .map(|(x, w)| x.conv1d(w, None))
            .collect::<Result<_>>()?;
        for p in 0..self.macro_cfg.cells {
            let [ax, ay] = &self.arch.alpha[p];
            let x = gated_mix(ax, &available)?;
            let y = gated_mix(ay, &available)?;
            let mut produced: Vec<Tensor> = Vec::with_capacity(self.macro_cfg.nodes);
            for d in 0..self.macro_cfg.nodes {
                let mut cands = Vec::with_capacity(2 + d);
                cands.push(x.clone());
                cands.push(y.clone());
                cands.extend(produced.iter().cloned());
                let [bx, by] = &self.arch.beta[p][d];
                let nx = gated_mix(bx, &cands)?;
                let ny = gated_mix(by, &cands)?;
                let row = self.arch.gamma.narrow(0, p * self.macro_cfg.nodes + d, 1)?;
                produced.push(mix_ops(&row, &nx, &ny, &self.op_params[p][d])?);
            }
            available.push(produced.pop().expect("nodes >= 1"));
        }
        let pooled = available.last().expect("cells >= 1").mean_axis(2)?;
        pooled.matmul2(&self.head_w.transpose_last()?)?.add_row(&self.head_b)
    }

    /// Operator weights, projections, and head, in a fixed order.
    pub fn collect_weight_params(&self) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = self.projections.to_vec();
        for cell in &self.op_params {
            for node in cell {
                for bundle in node {
                    out.extend(bundle.iter().cloned());
                }
            }
        }
        out.push(self.head_w.clone());
        out.push(self.head_b.clone());
        out
    }

    pub fn replace_weight_params(&mut self, new: Vec<Tensor>) -> Result<()> {
        let want = self.collect_weight_params().len();
        if new.len() != want {
            return Err(Error::invalid("weights", format!("{} tensors, want {want}", new.len())));
        }
        let mut it = new.into_iter();
        for slot in self.projections.iter_mut() {
            *slot = it.next().expect("counted");
        }
        for cell in self.op_params.iter_mut() {
            for node in cell.iter_mut() {
                for bundle in node.iter_mut() {
                    for p in bundle.iter_mut() {
                        *p = it.next().expect("counted");
                    }
                }
            }
        }
        self.head_w = it.next().expect("counted");
        self.head_b = it.next().expect("counted");
        Ok(())
    }

    /// All Identity/Zero gate logit matrices, in a fixed order.
    pub fn collect_gate_params(&self) -> Vec<Tensor> {
        let mut out = Vec::new();
        for slots in &self.arch.alpha {
            out.extend(slots.iter().cloned());
        }
        for cell in &self.arch.beta {
            for slots in cell {
                out.extend(slots.iter().cloned());
            }
        }
        out
    }

    pub fn replace_gate_params(&mut self, new: Vec<Tensor>) -> Result<()> {
        let want = self.collect_gate_params().len();
        if new.len() != want {
            return Err(Error::invalid("gates", format!("{} tensors, want {want}", new.len())));
        }
        let mut it = new.into_iter();
        for slots in self.arch.alpha.iter_mut() {
            for s in slots.iter_mut() {
                *s = it.next().expect("counted");
            }
        }
        for cell in self.arch.beta.iter_mut() {
            for slots in cell.iter_mut() {
                for s in slots.iter_mut() {
                    *s = it.next().expect("counted");
                }
            }
        }
        Ok(())
    }

    /// Commit every relaxed choice to its argmax: per slot pair, the
    /// distinct (i, j) maximizing the product of Identity probabilities;
    /// per node, the operator with the largest logit. Ties go to the
    /// lowest index. Chosen operator parameters are copied frozen.
    pub fn discretize(&self) -> Result<FusionGraph> {
        let mut cells = Vec::with_capacity(self.macro_cfg.cells);
        for p in 0..self.macro_cfg.cells {
            let (cx, cy) = best_pair(
                &identity_probs(&self.arch.alpha[p][0]),
                &identity_probs(&self.arch.alpha[p][1]),
            )?;
            let mut nodes = Vec::with_capacity(self.macro_cfg.nodes);
            for d in 0..self.macro_cfg.nodes {
                let (nx, ny) = best_pair(
                    &identity_probs(&self.arch.beta[p][d][0]),
                    &identity_probs(&self.arch.beta[p][d][1]),
                )?;
                let row = p * self.macro_cfg.nodes + d;
                let n_ops = ALL_FUSION_OPS.len();
                let logits = &self.arch.gamma.data()[row * n_ops..(row + 1) * n_ops];
                let op = ALL_FUSION_OPS[argmax(logits)];
                let params = self.op_params[p][d][op.index()]
                    .iter()
                    .map(ParamBlob::from_tensor)
                    .collect();
                nodes.push(GraphNode { x: nx, y: ny, op, params });
            }
            cells.push(GraphCell { x: cx, y: cy, nodes });
        }
        let graph = FusionGraph {
            c_f: self.c_f,
            num_classes: self.num_classes,
            sources: self.sources.clone(),
            projections: self.projections.iter().map(ParamBlob::from_tensor).collect(),
            cells,
            head_w: ParamBlob::from_tensor(&self.head_w),
            head_b: ParamBlob::from_tensor(&self.head_b),
        };
        graph.validate()?;
        Ok(graph)
    }
}

/// Identity-gate probability of each candidate row: softmax over the
/// two gate logits, column 0.
fn identity_probs(gate_logits: &Tensor) -> Vec<f64> {
    gate_logits
        .data()
        .chunks(2)
        .map(|row| {
            let d = row[0] - row[1];
            if d >= 0.0 {
                1.0 / (1.0 + (-d).exp())
            } else {
                let e = d.exp();
                e / (1.0 + e)
            }
        })
        .collect()
}

/// The ordered distinct pair maximizing `px[i] * py[j]`, scanning
/// lexicographically so ties resolve to the lowest indices.
fn best_pair(px: &[f64], py: &[f64]) -> Result<(usize, usize)> {
    let n = px.len();
    if n < 2 {
        return Err(Error::invalid("candidates", format!("{n} candidate(s); need at least 2")));
    }
    let mut best = (0, 1);
    let mut best_v = f64::NEG_INFINITY;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let v = px[i] * py[j];
            if v > best_v {
                best_v = v;
                best = (i, j);
            }
        }
    }
    Ok(best)
}

fn argmax(vals: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in vals.iter().enumerate().skip(1) {
        if *v > vals[best] {
            best = i;
        }
    }
    best
}

/// The stage-two objective: `clamp(CE)^a + Lat(gamma)^b + Enrg(gamma)^c`,
/// with the hardware terms read off the device table under the softmax
/// of the operator logits. Differentiable end to end.
pub fn fusion_loss(
    hypernet: &FusionHypernet,
    batch: &SourceBatch,
    lut: &DeviceLut,
    exponents: &LossExponents,
) -> Result<Tensor> {
    exponents.validate()?;
    let logits = hypernet.forward(batch)?;
    let task = logits
        .cross_entropy(&batch.labels)?
        .clamp_min(1e-12)?
        .pow_scalar(exponents.a)?;
    let lat = fusion_relaxed_cost(hypernet.gamma(), hypernet.macro_cfg(), lut, CostMetric::Latency)?
        .pow_scalar(exponents.b)?;
    let ergy = fusion_relaxed_cost(hypernet.gamma(), hypernet.macro_cfg(), lut, CostMetric::Energy)?
        .pow_scalar(exponents.c)?;
    task.add(&lat)?.add(&ergy)
}

/// Top-1 accuracy of the relaxed network over a whole feature set.
pub fn relaxed_accuracy(
    hypernet: &FusionHypernet,
    features: &SourceFeatures,
    batch_size: usize,
) -> Result<f64> {
    if features.is_empty() {
        return Err(Error::EmptyDataset("relaxed fusion evaluation".into()));
    }
    if batch_size == 0 {
        return Err(Error::invalid("batch_size", "must be positive"));
    }
    let idxs: Vec<usize> = (0..features.len()).collect();
    let mut correct = 0;
    for chunk in idxs.chunks(batch_size) {
        let batch = features.batch(chunk)?;
        let logits = hypernet.forward(&batch)?;
        correct += count_argmax_hits(&logits, &batch.labels);
    }
    Ok(correct as f64 / features.len() as f64)
}

/// Train the hypernetwork with Adam under a cosine schedule, shuffling
/// example order each epoch. Returns the mean batch loss per epoch.
///
/// The gamma mode is applied up front: frozen modes overwrite the
/// operator logits with the pinned constant; `Train` re-enables them if
/// a previous run froze them. Backbones are untouched by construction —
/// the features were extracted before this call.
pub fn train_fusion(
    hypernet: &mut FusionHypernet,
    features: &SourceFeatures,
    lut: &DeviceLut,
    cfg: &FusionTrainConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if features.is_empty() {
        return Err(Error::EmptyDataset("fusion training".into()));
    }
    if features.specs != hypernet.sources {
        return Err(Error::invalid(
            "features",
            "feature sources do not match the hypernet's sources",
        ));
    }
    match cfg.gamma_mode {
        GammaMode::Train => {
            if !hypernet.gamma().requires_grad() {
                let g = hypernet.gamma();
                let revived = Tensor::param(g.data().to_vec(), g.shape())?;
                hypernet.set_gamma(revived)?;
            }
        }
        GammaMode::FrozenUniform => {
            let shape = hypernet.gamma().shape().to_vec();
            hypernet.set_gamma(Tensor::zeros(&shape)?)?;
        }
        GammaMode::FrozenOneHot(op) => {
            hypernet.set_gamma(one_hot_gamma(hypernet.macro_cfg(), op, 1000.0)?)?;
        }
    }
    if cfg.epochs == 0 {
        return Ok(Vec::new());
    }

    let n = features.len();
    let batches_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = (cfg.epochs * batches_per_epoch) as u64;
    let schedule = CosineSchedule::new(cfg.base_lr, cfg.min_lr, total_steps)?;

    let train_gamma = cfg.gamma_mode == GammaMode::Train;
    let group_sizes = |h: &FusionHypernet| {
        let w = h.collect_weight_params();
        let g = if cfg.train_input_gates { h.collect_gate_params() } else { Vec::new() };
        (w, g)
    };
    let (w0, g0) = group_sizes(hypernet);
    let mut all_sizes: Vec<usize> = w0.iter().chain(&g0).map(Tensor::numel).collect();
    if train_gamma {
        all_sizes.push(hypernet.gamma().numel());
    }
    let mut adam = AdamState::new(cfg.adam, &all_sizes)?;

    let mut rng = seeds::rng_for(cfg.seed, tag::FUSION_TRAIN, 0, 0);
    let mut idxs: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut step = 0u64;
    for _ in 0..cfg.epochs {
        idxs.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in idxs.chunks(cfg.batch_size) {
            let batch = features.batch(chunk)?;
            let (weights, gates) = group_sizes(hypernet);
            let mut trained: Vec<Tensor> = weights.iter().chain(&gates).cloned().collect();
            if train_gamma {
                trained.push(hypernet.gamma().clone());
            }
            for t in &trained {
                t.zero_grad();
            }
            let loss = fusion_loss(hypernet, &batch, lut, &cfg.exponents)?;
            epoch_loss += loss.item()?;
            loss.backward()?;
            let lr = schedule.at(step)?;
            step += 1;
            let mut updated = adam.step_tensors(&trained, lr)?;
            if train_gamma {
                hypernet.set_gamma(updated.pop().expect("gamma was appended"))?;
            }
            let gate_part = updated.split_off(weights.len());
            hypernet.replace_weight_params(updated)?;
            if cfg.train_input_gates {
                hypernet.replace_gate_params(gate_part)?;
            }
        }
        trace.push(epoch_loss / batches_per_epoch as f64);
    }
    Ok(trace)
}
