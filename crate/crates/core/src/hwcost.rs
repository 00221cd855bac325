//! Device cost models: lookup tables for per-layer and per-fusion-op
//! latency/energy, additive backbone and pipeline costs, the
//! differentiable relaxed fusion hardware loss, and synthetic device
//! generation.
//!
//! A table is immutable once built; every cost operation here is pure
//! and safe to call concurrently.

use crate::error::{Error, Result};
use crate::fusion::{FusionGraph, FusionOpKind, ALL_FUSION_OPS};
use crate::searchspace::{BackboneGenome, FusionMacroConfig, MultimodalGenome, SpaceConfig};
use crate::seeds::{self, tag};
use crate::tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

pub const LUT_FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMetric {
    Latency,
    Energy,
}

/// A (latency ms, energy mJ) measurement.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostPair {
    pub lat_ms: f64,
    pub ergy_mj: f64,
}

impl CostPair {
    pub const ZERO: CostPair = CostPair { lat_ms: 0.0, ergy_mj: 0.0 };

    pub fn new(lat_ms: f64, ergy_mj: f64) -> CostPair {
        CostPair { lat_ms, ergy_mj }
    }

    pub fn get(self, metric: CostMetric) -> f64 {
        match metric {
            CostMetric::Latency => self.lat_ms,
            CostMetric::Energy => self.ergy_mj,
        }
    }

    fn finite(self) -> bool {
        self.lat_ms.is_finite() && self.ergy_mj.is_finite()
    }
}

impl std::ops::Add for CostPair {
    type Output = CostPair;
    fn add(self, rhs: CostPair) -> CostPair {
        CostPair { lat_ms: self.lat_ms + rhs.lat_ms, ergy_mj: self.ergy_mj + rhs.ergy_mj }
    }
}

/// Identifies one backbone layer configuration in a device table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct LayerKey {
    pub block: usize,
    pub slot: usize,
    pub k: usize,
    pub e: usize,
}

impl fmt::Display for LayerKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "block {} slot {} k={} e={}", self.block, self.slot, self.k, self.e)
    }
}

/// One device's cost profile. Layer entries are keyed at the finest
/// granularity the genome exposes — (block, slot, kernel, expand) — so
/// backbone cost is exactly additive; fusion entries are per-operator
/// scalars independent of tensor width.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceLut {
    device: String,
    overheads: CostPair,
    layer_costs: BTreeMap<LayerKey, CostPair>,
    fusion_costs: BTreeMap<FusionOpKind, CostPair>,
}

impl DeviceLut {
    /// Build a table, rejecting non-finite or non-positive entries
    /// (overheads may be zero).
    pub fn new(
        device: impl Into<String>,
        overheads: CostPair,
        layer_costs: BTreeMap<LayerKey, CostPair>,
        fusion_costs: BTreeMap<FusionOpKind, CostPair>,
    ) -> Result<DeviceLut> {
        if !overheads.finite() || overheads.lat_ms < 0.0 || overheads.ergy_mj < 0.0 {
            return Err(Error::invalid("overheads", format!("{overheads:?} must be >= 0")));
        }
        for (key, cost) in &layer_costs {
            if !cost.finite() || cost.lat_ms <= 0.0 || cost.ergy_mj <= 0.0 {
                return Err(Error::invalid("layer_costs", format!("{key}: {cost:?} must be > 0")));
            }
        }
        for (op, cost) in &fusion_costs {
            if !cost.finite() || cost.lat_ms <= 0.0 || cost.ergy_mj <= 0.0 {
                return Err(Error::invalid(
                    "fusion_costs",
                    format!("{}: {cost:?} must be > 0", op.name()),
                ));
            }
        }
        Ok(DeviceLut { device: device.into(), overheads, layer_costs, fusion_costs })
    }

    pub fn device(&self) -> &str {
        &self.device
    }

    pub fn overheads(&self) -> CostPair {
        self.overheads
    }

    pub fn layer_cost(&self, key: LayerKey) -> Result<CostPair> {
        self.layer_costs.get(&key).copied().ok_or_else(|| Error::MissingLutEntry {
            device: self.device.clone(),
            key: key.to_string(),
        })
    }

    pub fn fusion_cost(&self, op: FusionOpKind) -> Result<CostPair> {
        self.fusion_costs.get(&op).copied().ok_or_else(|| Error::MissingLutEntry {
            device: self.device.clone(),
            key: format!("fusion op {}", op.name()),
        })
    }

    pub fn layer_entries(&self) -> impl Iterator<Item = (&LayerKey, &CostPair)> {
        self.layer_costs.iter()
    }

    pub fn fusion_entries(&self) -> impl Iterator<Item = (&FusionOpKind, &CostPair)> {
        self.fusion_costs.iter()
    }

    /// Check the table covers every legal layer configuration of the
    /// space and all six fusion operators.
    pub fn validate_complete(&self, space: &SpaceConfig) -> Result<()> {
        for block in 0..space.num_blocks {
            for slot in 0..space.max_depth() {
                for &k in &space.kernel_choices {
                    for &e in &space.expand_choices {
                        let key = LayerKey { block, slot, k, e };
                        if !self.layer_costs.contains_key(&key) {
                            return Err(Error::MissingLutEntry {
                                device: self.device.clone(),
                                key: key.to_string(),
                            });
                        }
                    }
                }
            }
        }
        for op in ALL_FUSION_OPS {
            if !self.fusion_costs.contains_key(&op) {
                return Err(Error::MissingLutEntry {
                    device: self.device.clone(),
                    key: format!("fusion op {}", op.name()),
                });
            }
        }
        Ok(())
    }
}

/// Fixed stem/head overhead plus the sum of the genome's active layers.
pub fn backbone_cost(genome: &BackboneGenome, lut: &DeviceLut) -> Result<CostPair> {
    let mut total = lut.overheads;
    for (block, cfg) in genome.blocks.iter().enumerate() {
        for (slot, (&k, &e)) in cfg.active_kernels().iter().zip(cfg.active_expands()).enumerate() {
            total = total + lut.layer_cost(LayerKey { block, slot, k, e })?;
        }
    }
    Ok(total)
}

/// The relaxed fusion hardware term: per node row, softmax the operator
/// logits and take the expected cost under that distribution, summed
/// over all `cells x nodes` rows. Differentiable in `gamma`.
pub fn fusion_relaxed_cost(
    gamma: &Tensor,
    macro_cfg: FusionMacroConfig,
    lut: &DeviceLut,
    metric: CostMetric,
) -> Result<Tensor> {
    let rows = macro_cfg.cells * macro_cfg.nodes;
    let n_ops = ALL_FUSION_OPS.len();
    if gamma.shape() != [rows, n_ops] {
        return Err(Error::ShapeMismatch {
            op: "fusion_relaxed_cost",
            detail: format!("gamma {:?}, macro wants [{rows}, {n_ops}]", gamma.shape()),
        });
    }
    // Finiteness needs no check here: tensors reject non-finite values at
    // construction.
    let costs: Vec<f64> = ALL_FUSION_OPS
        .iter()
        .map(|&op| lut.fusion_cost(op).map(|c| c.get(metric)))
        .collect::<Result<_>>()?;
    let col = Tensor::from_vec(costs, &[n_ops, 1])?;
    gamma.softmax(1)?.matmul2(&col)?.sum_all()
}

/// Cost of a committed fusion network: the sum of its nodes' op costs.
pub fn fusion_discrete_cost(ops: &[FusionOpKind], lut: &DeviceLut) -> Result<CostPair> {
    let mut total = CostPair::ZERO;
    for &op in ops {
        total = total + lut.fusion_cost(op)?;
    }
    Ok(total)
}

/// End-to-end pipeline cost of one multimodal candidate: all backbones
/// run in sequence (each paying its own overhead), then the fusion graph.
pub fn candidate_cost(
    mm: &MultimodalGenome,
    fusion_ops: &[FusionOpKind],
    lut: &DeviceLut,
) -> Result<CostPair> {
    let mut total = CostPair::ZERO;
    for backbone in &mm.backbones {
        total = total + backbone_cost(backbone, lut)?;
    }
    Ok(total + fusion_discrete_cost(fusion_ops, lut)?)
}

/// As [`candidate_cost`], charging the nodes of a concrete graph.
pub fn candidate_graph_cost(
    mm: &MultimodalGenome,
    graph: &FusionGraph,
    lut: &DeviceLut,
) -> Result<CostPair> {
    candidate_cost(mm, &graph.ops_used(), lut)
}

/// Base multipliers for a synthetic device. The two presets mirror a
/// fast-but-hungry GPU board and a slow-but-frugal edge module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleProfile {
    pub device: String,
    pub lat_scale: f64,
    pub ergy_scale: f64,
}

impl ScaleProfile {
    pub fn fast_gpu() -> ScaleProfile {
        ScaleProfile { device: "fast-gpu".into(), lat_scale: 1.0, ergy_scale: 2.0 }
    }

    pub fn slow_edge() -> ScaleProfile {
        ScaleProfile { device: "slow-edge".into(), lat_scale: 2.5, ergy_scale: 0.8 }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lat_scale.is_finite() && self.lat_scale > 0.0) {
            return Err(Error::invalid("lat_scale", format!("{} must be > 0", self.lat_scale)));
        }
        if !(self.ergy_scale.is_finite() && self.ergy_scale > 0.0) {
            return Err(Error::invalid("ergy_scale", format!("{} must be > 0", self.ergy_scale)));
        }
        Ok(())
    }
}

// Per-op base costs (latency, energy) before profile scaling, in
// ALL_FUSION_OPS order; attention is the priciest, plain addition the
// cheapest.
const FUSION_BASE: [(f64, f64); 6] =
    [(0.2, 0.4), (1.4, 2.8), (0.8, 1.6), (0.9, 1.8), (0.6, 1.2), (1.1, 2.2)];

/// Generate a complete, deterministic device table over `space`.
///
/// Each layer's cost is `scale * slot_factor * (0.3 + 0.1*k*e)`: the
/// `k*e` term makes cost strictly monotone in kernel size and expansion
/// within a slot, while the per-slot jitter factor (drawn from the seed
/// alone, independent of the profile) varies the landscape across blocks
/// and devices without breaking that monotonicity. Two profiles built
/// from the same seed therefore differ entrywise only by their scales.
pub fn synth_device(seed: u64, profile: &ScaleProfile, space: &SpaceConfig) -> Result<DeviceLut> {
    profile.validate()?;
    space.validate()?;
    let mut rng = seeds::rng_for(seed, tag::LUT, 0, 0);
    let mut layer_costs = BTreeMap::new();
    for block in 0..space.num_blocks {
        for slot in 0..space.max_depth() {
            let jitter_lat: f64 = rng.random_range(0.9..1.1);
            let jitter_ergy: f64 = rng.random_range(0.9..1.1);
            let position = (1.0 + 0.15 * block as f64) * (1.0 + 0.05 * slot as f64);
            for &k in &space.kernel_choices {
                for &e in &space.expand_choices {
                    let base = 0.3 + 0.1 * (k * e) as f64;
                    layer_costs.insert(
                        LayerKey { block, slot, k, e },
                        CostPair {
                            lat_ms: profile.lat_scale * position * jitter_lat * base,
                            ergy_mj: profile.ergy_scale * position * jitter_ergy * 2.0 * base,
                        },
                    );
                }
            }
        }
    }
    let mut fusion_costs = BTreeMap::new();
    for (op, (base_lat, base_ergy)) in ALL_FUSION_OPS.into_iter().zip(FUSION_BASE) {
        let jitter_lat: f64 = rng.random_range(0.9..1.1);
        let jitter_ergy: f64 = rng.random_range(0.9..1.1);
        fusion_costs.insert(
            op,
            CostPair {
                lat_ms: profile.lat_scale * jitter_lat * base_lat,
                ergy_mj: profile.ergy_scale * jitter_ergy * base_ergy,
            },
        );
    }
    let overheads =
        CostPair { lat_ms: 0.5 * profile.lat_scale, ergy_mj: 1.0 * profile.ergy_scale };
    DeviceLut::new(profile.device.clone(), overheads, layer_costs, fusion_costs)
}

#[derive(Serialize, Deserialize)]
struct LayerCostRecord {
    block: usize,
    slot: usize,
    k: usize,
    e: usize,
    lat_ms: f64,
    ergy_mj: f64,
}

#[derive(Serialize, Deserialize)]
struct FusionCostRecord {
    op: FusionOpKind,
    lat_ms: f64,
    ergy_mj: f64,
}

#[derive(Serialize, Deserialize)]
struct LutFile {
    device: String,
    version: u32,
    overheads: CostPair,
    layer_costs: Vec<LayerCostRecord>,
    fusion_costs: Vec<FusionCostRecord>,
}

/// Write a table as JSON. Entries are emitted in key order, so equal
/// tables produce byte-identical files.
pub fn save_lut(lut: &DeviceLut, path: &Path) -> Result<()> {
    let file = LutFile {
        device: lut.device.clone(),
        version: LUT_FILE_VERSION,
        overheads: lut.overheads,
        layer_costs: lut
            .layer_costs
            .iter()
            .map(|(key, c)| LayerCostRecord {
                block: key.block,
                slot: key.slot,
                k: key.k,
                e: key.e,
                lat_ms: c.lat_ms,
                ergy_mj: c.ergy_mj,
            })
            .collect(),
        fusion_costs: lut
            .fusion_costs
            .iter()
            .map(|(&op, c)| FusionCostRecord { op, lat_ms: c.lat_ms, ergy_mj: c.ergy_mj })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&file)
        .map_err(|e| Error::parse(path.display().to_string(), format!("serialize: {e}")))?;
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Read a table back and verify it is positive, duplicate-free, and
/// complete over `space`; partial tables are rejected, never defaulted.
pub fn load_lut(path: &Path, space: &SpaceConfig) -> Result<DeviceLut> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let file: LutFile = serde_json::from_str(&text)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    if file.version != LUT_FILE_VERSION {
        return Err(Error::parse(
            path.display().to_string(),
            format!("version {} (this build reads {LUT_FILE_VERSION})", file.version),
        ));
    }
    let mut layer_costs = BTreeMap::new();
    for rec in &file.layer_costs {
        let key = LayerKey { block: rec.block, slot: rec.slot, k: rec.k, e: rec.e };
        let dup = layer_costs.insert(key, CostPair { lat_ms: rec.lat_ms, ergy_mj: rec.ergy_mj });
        if dup.is_some() {
            return Err(Error::parse(path.display().to_string(), format!("duplicate entry {key}")));
        }
    }
    let mut fusion_costs = BTreeMap::new();
    for rec in &file.fusion_costs {
        let dup =
            fusion_costs.insert(rec.op, CostPair { lat_ms: rec.lat_ms, ergy_mj: rec.ergy_mj });
        if dup.is_some() {
            return Err(Error::parse(
                path.display().to_string(),
                format!("duplicate entry for op {}", rec.op.name()),
            ));
        }
    }
    let lut = DeviceLut::new(file.device, file.overheads, layer_costs, fusion_costs)?;
    lut.validate_complete(space)?;
    Ok(lut)
}
