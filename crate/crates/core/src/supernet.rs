//! Elastic weight-sharing unimodal backbones.
//!
//! One maximal set of tensors holds every subnet: a subnet with depth
//! d, kernel k, and expand e per block runs the first d layer slots of
//! each block, the center k columns of each kernel, and the first
//! base·e channels. Nothing is copied out — subnet forwards slice the
//! shared tensors, so their gradients accumulate straight back into
//! them.
//!
//! Training follows the sandwich rule: every step runs a fixed set of
//! anchor subnets (largest and smallest by default) plus a few random
//! ones, sums their task losses, and distills each non-maximal subnet
//! toward the detached logits of the maximal one.

use crate::data::MultimodalDataset;
use crate::error::{Error, Result};
use crate::fusion::{count_argmax_hits, ParamBlob, SourceSpec};
use crate::searchspace::{max_subnet, min_subnet, sample_uniform, BackboneGenome, SpaceConfig};
use crate::seeds::{self, tag};
use crate::tensor::{AdamConfig, AdamState, CosineSchedule, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::path::Path;

const CHECKPOINT_FILE_VERSION: u32 = 1;

/// One backbone block output: `(B, C, L)` values tagged with where they
/// came from.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    pub values: Tensor,
    pub modality: String,
    pub block: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnchorKind {
    Max,
    Min,
}

/// Which subnets each training step runs: the fixed anchors plus
/// `n_random` uniform draws, with distillation weight `lambda_kd`
/// applied to every sampled subnet other than the maximal one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPolicy {
    pub anchors: Vec<AnchorKind>,
    pub n_random: usize,
    pub lambda_kd: f64,
}

impl Default for SamplingPolicy {
    fn default() -> Self {
        SamplingPolicy { anchors: vec![AnchorKind::Max, AnchorKind::Min], n_random: 2, lambda_kd: 1.0 }
    }
}

impl SamplingPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.anchors.is_empty() {
            return Err(Error::invalid("anchors", "need at least one anchor subnet"));
        }
        if !self.lambda_kd.is_finite() || self.lambda_kd < 0.0 {
            return Err(Error::invalid(
                "lambda_kd",
                format!("{} must be finite and >= 0", self.lambda_kd),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupernetTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub min_lr: f64,
    pub adam: AdamConfig,
    pub policy: SamplingPolicy,
    pub seed: u64,
}

impl Default for SupernetTrainConfig {
    fn default() -> Self {
        SupernetTrainConfig {
            epochs: 8,
            batch_size: 64,
            base_lr: 1e-3,
            min_lr: 1e-5,
            adam: AdamConfig::default(),
            policy: SamplingPolicy::default(),
            seed: 0,
        }
    }
}

impl SupernetTrainConfig {
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
        self.policy.validate()
    }
}

#[derive(Debug, Clone)]
struct LayerParam {
    w: Tensor,
    b: Tensor,
}

/// Stable per-modality stream id so two supernets trained from the same
/// master seed do not share random draws.
fn modality_stream(name: &str) -> u64 {
    name.bytes()
        .fold(0xcbf29ce484222325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x100000001b3))
}

/// The shared-weight store plus the fixed skeleton around it: a stem
/// conv bringing the input to `base` channels, `num_blocks` blocks of
/// elastic conv+relu layers, and a linear head over the mean-pooled
/// final block output.
#[derive(Debug, Clone)]
pub struct ElasticSupernet {
    modality: String,
    space: SpaceConfig,
    in_channels: usize,
    base: usize,
    num_classes: usize,
    stem_w: Tensor,
    stem_b: Tensor,
    /// `[block][layer slot]`, each kernel at full width and max kernel size.
    layers: Vec<Vec<LayerParam>>,
    head_w: Tensor,
    head_b: Tensor,
}

impl ElasticSupernet {
    pub fn new(
        modality: &str,
        space: SpaceConfig,
        in_channels: usize,
        base: usize,
        num_classes: usize,
        seed: u64,
    ) -> Result<ElasticSupernet> {
        space.validate()?;
        if in_channels == 0 || base == 0 {
            return Err(Error::invalid("channels", "in_channels and base must be positive"));
        }
        if num_classes < 2 {
            return Err(Error::invalid("num_classes", "need at least 2 classes"));
        }
        let mut rng = seeds::rng_for(seed, tag::SUPERNET_INIT, modality_stream(modality), 0);
        let mut init = |shape: &[usize]| -> Result<Tensor> {
            use rand::Rng;
            let fan_in: usize = shape[1..].iter().product();
            let bound = 1.0 / (fan_in as f64).sqrt();
            let n: usize = shape.iter().product();
            Tensor::param((0..n).map(|_| rng.random_range(-bound..bound)).collect(), shape)
        };
        let c_max = base * space.max_expand();
        let k_max = space.max_kernel();
        let stem_w = init(&[base, in_channels, 1])?;
        let stem_b = Tensor::param(vec![0.0; base], &[base])?;
        let mut layers = Vec::with_capacity(space.num_blocks);
        for block in 0..space.num_blocks {
            let mut slots = Vec::with_capacity(space.max_depth());
            for slot in 0..space.max_depth() {
                // The first layer of block 0 only ever sees the stem's
                // `base` channels; every other layer can see up to c_max.
                let c_in_max = if block == 0 && slot == 0 { base } else { c_max };
                slots.push(LayerParam {
                    w: init(&[c_max, c_in_max, k_max])?,
                    b: Tensor::param(vec![0.0; c_max], &[c_max])?,
                });
            }
            layers.push(slots);
        }
        let head_w = init(&[num_classes, c_max])?;
        let head_b = Tensor::param(vec![0.0; num_classes], &[num_classes])?;
        Ok(ElasticSupernet {
            modality: modality.to_string(),
            space,
            in_channels,
            base,
            num_classes,
            stem_w,
            stem_b,
            layers,
            head_w,
            head_b,
        })
    }

    pub fn modality(&self) -> &str {
        &self.modality
    }

    pub fn space(&self) -> &SpaceConfig {
        &self.space
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn base(&self) -> usize {
        self.base
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn max_genome(&self) -> BackboneGenome {
        max_subnet(&self.space, &self.modality)
    }

    pub fn min_genome(&self) -> BackboneGenome {
        min_subnet(&self.space, &self.modality)
    }

    /// Output channel count of block `j` under `genome`.
    pub fn block_width(&self, genome: &BackboneGenome, block: usize) -> Result<usize> {
        let b = genome
            .blocks
            .get(block)
            .ok_or_else(|| Error::invalid("block", format!("index {block} out of range")))?;
        let last = *b.active_expands().last().expect("depth >= 1");
        Ok(self.base * last)
    }

    /// The live weight views of one layer: center `k` kernel columns,
    /// first `c_out` filters, first `c_in` input channels.
    fn layer_view(&self, block: usize, slot: usize, c_out: usize, c_in: usize, k: usize) -> Result<(Tensor, Tensor)> {
        let full = &self.layers[block][slot];
        let pad = (self.space.max_kernel() - k) / 2;
        let w = full.w.narrow(0, 0, c_out)?.narrow(1, 0, c_in)?.narrow(2, pad, k)?;
        let b = full.b.narrow(0, 0, c_out)?;
        Ok((w, b))
    }

    fn check_input(&self, genome: &BackboneGenome, x: &Tensor) -> Result<()> {
        genome.validate(&self.space)?;
        if genome.modality != self.modality {
            return Err(Error::invalid(
                "genome",
                format!("genome is for `{}`, supernet for `{}`", genome.modality, self.modality),
            ));
        }
        match x.shape() {
            [_, c, _] if *c == self.in_channels => Ok(()),
            s => Err(Error::ShapeMismatch {
                op: "subnet_forward",
                detail: format!("input {s:?}, want (B, {}, L)", self.in_channels),
            }),
        }
    }

    fn run(&self, genome: &BackboneGenome, x: &Tensor, want_features: bool) -> Result<(Vec<FeatureMap>, Tensor)> {
        self.check_input(genome, x)?;
        let mut h = x.conv1d(&self.stem_w, Some(&self.stem_b))?;
        let mut width = self.base;
        let mut features = Vec::new();
        for (j, block) in genome.blocks.iter().enumerate() {
            for (l, (&k, &e)) in block.active_kernels().iter().zip(block.active_expands()).enumerate()
            {
                let c_out = self.base * e;
                let (w, b) = self.layer_view(j, l, c_out, width, k)?;
                h = h.conv1d(&w, Some(&b))?.relu()?;
                width = c_out;
            }
            if want_features {
                features.push(FeatureMap {
                    values: h.clone(),
                    modality: self.modality.clone(),
                    block: j,
                });
            }
        }
        let pooled = h.mean_axis(2)?;
        let head = self.head_w.narrow(1, 0, width)?;
        let logits = pooled.matmul2(&head.transpose_last()?)?.add_row(&self.head_b)?;
        Ok((features, logits))
    }

    /// Classifier logits of one subnet on a `(B, C, L)` batch; gradients
    /// flow into the shared tensors.
    pub fn forward_subnet(&self, genome: &BackboneGenome, x: &Tensor) -> Result<Tensor> {
        Ok(self.run(genome, x, false)?.1)
    }

    /// Per-block feature maps plus the classifier logits.
    pub fn extract_features(&self, genome: &BackboneGenome, x: &Tensor) -> Result<(Vec<FeatureMap>, Tensor)> {
        self.run(genome, x, true)
    }

    /// Top-1 accuracy of one subnet over a whole dataset.
    pub fn evaluate_subnet(
        &self,
        genome: &BackboneGenome,
        dataset: &MultimodalDataset,
        batch_size: usize,
    ) -> Result<f64> {
        if dataset.is_empty() {
            return Err(Error::EmptyDataset("subnet evaluation".into()));
        }
        if batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be positive"));
        }
        let m = dataset.modality_index(&self.modality)?;
        let idxs: Vec<usize> = (0..dataset.len()).collect();
        let mut correct = 0;
        for chunk in idxs.chunks(batch_size) {
            let (x, labels) = dataset.modality_batch(m, chunk)?;
            let logits = self.forward_subnet(genome, &x)?;
            correct += count_argmax_hits(&logits, &labels);
        }
        Ok(correct as f64 / dataset.len() as f64)
    }

    /// One block's features over a whole dataset, flattened example-major
    /// — the backbone side of a fusion input.
    pub fn dataset_block_features(
        &self,
        genome: &BackboneGenome,
        dataset: &MultimodalDataset,
        block: usize,
        batch_size: usize,
    ) -> Result<(SourceSpec, Vec<f64>)> {
        if dataset.is_empty() {
            return Err(Error::EmptyDataset("feature extraction".into()));
        }
        if batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be positive"));
        }
        if block >= self.space.num_blocks {
            return Err(Error::invalid("block", format!("index {block} out of range")));
        }
        let m = dataset.modality_index(&self.modality)?;
        let channels = self.block_width(genome, block)?;
        let mut flat = Vec::with_capacity(dataset.len() * channels * dataset.signal_len());
        let idxs: Vec<usize> = (0..dataset.len()).collect();
        for chunk in idxs.chunks(batch_size) {
            let (x, _) = dataset.modality_batch(m, chunk)?;
            let (features, _) = self.extract_features(genome, &x)?;
            flat.extend_from_slice(features[block].values.data());
        }
        let spec = SourceSpec { modality: self.modality.clone(), block, channels };
        Ok((spec, flat))
    }

    /// Every trainable tensor, in a fixed order.
    pub fn collect_params(&self) -> Vec<Tensor> {
        let mut out = vec![self.stem_w.clone(), self.stem_b.clone()];
        for block in &self.layers {
            for layer in block {
                out.push(layer.w.clone());
                out.push(layer.b.clone());
            }
        }
        out.push(self.head_w.clone());
        out.push(self.head_b.clone());
        out
    }

    pub fn replace_params(&mut self, new: Vec<Tensor>) -> Result<()> {
        let want = self.collect_params().len();
        if new.len() != want {
            return Err(Error::invalid("params", format!("{} tensors, want {want}", new.len())));
        }
        let mut it = new.into_iter();
        self.stem_w = it.next().expect("counted");
        self.stem_b = it.next().expect("counted");
        for block in self.layers.iter_mut() {
            for layer in block.iter_mut() {
                layer.w = it.next().expect("counted");
                layer.b = it.next().expect("counted");
            }
        }
        self.head_w = it.next().expect("counted");
        self.head_b = it.next().expect("counted");
        Ok(())
    }

    /// Detached copy of the whole network as plain data. Unlike the live
    /// supernet (whose tensors are `Rc`-shared and stay on one thread), a
    /// snapshot is `Send`, so worker threads can carry one and rebuild a
    /// private supernet on their side. Checkpoints on disk are snapshots
    /// serialized as JSON.
    pub fn snapshot(&self) -> SupernetSnapshot {
        SupernetSnapshot {
            version: CHECKPOINT_FILE_VERSION,
            modality: self.modality.clone(),
            space: self.space.clone(),
            in_channels: self.in_channels,
            base: self.base,
            num_classes: self.num_classes,
            stem_w: ParamBlob::from_tensor(&self.stem_w),
            stem_b: ParamBlob::from_tensor(&self.stem_b),
            blocks: self
                .layers
                .iter()
                .map(|block| {
                    block
                        .iter()
                        .map(|l| LayerRecord {
                            w: ParamBlob::from_tensor(&l.w),
                            b: ParamBlob::from_tensor(&l.b),
                        })
                        .collect()
                })
                .collect(),
            head_w: ParamBlob::from_tensor(&self.head_w),
            head_b: ParamBlob::from_tensor(&self.head_b),
        }
    }

    pub fn from_snapshot(snap: &SupernetSnapshot) -> Result<ElasticSupernet> {
        if snap.version != CHECKPOINT_FILE_VERSION {
            return Err(Error::invalid(
                "snapshot",
                format!("version {} (expected {CHECKPOINT_FILE_VERSION})", snap.version),
            ));
        }
        // Rebuild a reference skeleton to know every expected shape, then
        // overwrite its tensors with the stored bit patterns.
        let mut sup = ElasticSupernet::new(
            &snap.modality,
            snap.space.clone(),
            snap.in_channels,
            snap.base,
            snap.num_classes,
            0,
        )?;
        if snap.blocks.len() != sup.layers.len()
            || snap.blocks.iter().zip(&sup.layers).any(|(a, b)| a.len() != b.len())
        {
            return Err(Error::invalid(
                "snapshot",
                "block/layer layout does not match its space",
            ));
        }
        let mut stored = vec![&snap.stem_w, &snap.stem_b];
        for block in &snap.blocks {
            for layer in block {
                stored.push(&layer.w);
                stored.push(&layer.b);
            }
        }
        stored.push(&snap.head_w);
        stored.push(&snap.head_b);
        let current = sup.collect_params();
        let mut rebuilt = Vec::with_capacity(stored.len());
        for (blob, want) in stored.iter().zip(&current) {
            if blob.shape != want.shape() {
                return Err(Error::invalid(
                    "snapshot",
                    format!("stored tensor shape {:?}, expected {:?}", blob.shape, want.shape()),
                ));
            }
            rebuilt.push(blob.to_param()?);
        }
        sup.replace_params(rebuilt)?;
        Ok(sup)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.snapshot())
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<ElasticSupernet> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let snap: SupernetSnapshot = serde_json::from_str(&text)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        Self::from_snapshot(&snap)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayerRecord {
    w: ParamBlob,
    b: ParamBlob,
}

/// See [`ElasticSupernet::snapshot`]. Field layout doubles as the on-disk
/// checkpoint format, so changing it means bumping the version constant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SupernetSnapshot {
    version: u32,
    modality: String,
    space: SpaceConfig,
    in_channels: usize,
    base: usize,
    num_classes: usize,
    stem_w: ParamBlob,
    stem_b: ParamBlob,
    blocks: Vec<Vec<LayerRecord>>,
    head_w: ParamBlob,
    head_b: ParamBlob,
}

impl SupernetSnapshot {
    pub fn modality(&self) -> &str {
        &self.modality
    }

    pub fn space(&self) -> &SpaceConfig {
        &self.space
    }
}

/// Sandwich-rule training. Each batch runs the anchor subnets plus
/// `n_random` uniform ones, sums their cross-entropies, and adds
/// `lambda_kd * KL(student || detached max-subnet logits)` for every
/// sampled subnet that is not the maximal one. Returns the mean batch
/// loss per epoch.
pub fn train_supernet(
    sup: &mut ElasticSupernet,
    dataset: &MultimodalDataset,
    cfg: &SupernetTrainConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset("supernet training".into()));
    }
    let m = dataset.modality_index(sup.modality())?;
    if dataset.modalities()[m].channels != sup.in_channels() {
        return Err(Error::invalid(
            "dataset",
            format!(
                "modality `{}` has {} channels, supernet expects {}",
                sup.modality(),
                dataset.modalities()[m].channels,
                sup.in_channels()
            ),
        ));
    }
    if dataset.num_classes() != sup.num_classes() {
        return Err(Error::invalid(
            "dataset",
            format!(
                "{} classes, supernet head has {}",
                dataset.num_classes(),
                sup.num_classes()
            ),
        ));
    }
    if cfg.epochs == 0 {
        return Ok(Vec::new());
    }
    let n = dataset.len();
    let batches_per_epoch = n.div_ceil(cfg.batch_size);
    let schedule =
        CosineSchedule::new(cfg.base_lr, cfg.min_lr, (cfg.epochs * batches_per_epoch) as u64)?;
    let sizes: Vec<usize> = sup.collect_params().iter().map(Tensor::numel).collect();
    let mut adam = AdamState::new(cfg.adam, &sizes)?;
    let max_g = sup.max_genome();
    let min_g = sup.min_genome();

    let mut rng = seeds::rng_for(cfg.seed, tag::SUPERNET_TRAIN, modality_stream(sup.modality()), 0);
    let mut idxs: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut step = 0u64;
    for _ in 0..cfg.epochs {
        idxs.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in idxs.chunks(cfg.batch_size) {
            let (x, labels) = dataset.modality_batch(m, chunk)?;
            let mut sampled: Vec<BackboneGenome> = cfg
                .policy
                .anchors
                .iter()
                .map(|a| match a {
                    AnchorKind::Max => max_g.clone(),
                    AnchorKind::Min => min_g.clone(),
                })
                .collect();
            for _ in 0..cfg.policy.n_random {
                sampled.push(sample_uniform(sup.space(), sup.modality(), &mut rng));
            }

            let params = sup.collect_params();
            for p in &params {
                p.zero_grad();
            }
            let needs_teacher =
                cfg.policy.lambda_kd > 0.0 && sampled.iter().any(|g| *g != max_g);
            let teacher = if needs_teacher {
                Some(sup.forward_subnet(&max_g, &x)?.detach())
            } else {
                None
            };
            let mut loss: Option<Tensor> = None;
            for genome in &sampled {
                let logits = sup.forward_subnet(genome, &x)?;
                let mut term = logits.cross_entropy(&labels)?;
                if let Some(t) = &teacher {
                    if *genome != max_g {
                        let kd = Tensor::kl_div_rows(&logits, t)?.scale(cfg.policy.lambda_kd)?;
                        term = term.add(&kd)?;
                    }
                }
                loss = Some(match loss {
                    None => term,
                    Some(acc) => acc.add(&term)?,
                });
            }
            let loss = loss.expect("anchors are non-empty");
            epoch_loss += loss.item()?;
            loss.backward()?;
            let lr = schedule.at(step)?;
            step += 1;
            let updated = adam.step_tensors(&params, lr)?;
            sup.replace_params(updated)?;
        }
        trace.push(epoch_loss / batches_per_epoch as f64);
    }
    Ok(trace)
}
