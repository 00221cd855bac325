//! Value-encoded genomes for unimodal backbones and the fusion
//! macro-architecture, with uniform sampling, mutation, crossover, and
//! exact space counting.
//!
//! A backbone genome is a list of block configs; each block carries a
//! depth plus fixed-length kernel/expansion vectors of which only the
//! first `depth` entries are active. Inert tail entries are retained and
//! inherited through mutation and crossover (this keeps the integer
//! encoding fixed-width), so *architectural* equality compares active
//! entries only — that is what `PartialEq` implements.

use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Legal choice sets for one modality's backbone space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpaceConfig {
    pub num_blocks: usize,
    pub depth_choices: Vec<usize>,
    pub kernel_choices: Vec<usize>,
    pub expand_choices: Vec<usize>,
}

impl Default for SpaceConfig {
    fn default() -> Self {
        SpaceConfig {
            num_blocks: 3,
            depth_choices: vec![2, 3, 4],
            kernel_choices: vec![3, 5, 7],
            expand_choices: vec![3, 4, 6],
        }
    }
}

fn check_choice_set(field: &str, xs: &[usize]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::invalid(field, "empty choice set".to_string()));
    }
    if !xs.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::invalid(field, format!("{xs:?} must be strictly increasing")));
    }
    if xs[0] == 0 {
        return Err(Error::invalid(field, "choices must be positive".to_string()));
    }
    Ok(())
}

impl SpaceConfig {
    pub fn validate(&self) -> Result<()> {
        check_choice_set("depth_choices", &self.depth_choices)?;
        check_choice_set("kernel_choices", &self.kernel_choices)?;
        check_choice_set("expand_choices", &self.expand_choices)?;
        if self.kernel_choices.iter().any(|k| k % 2 == 0) {
            return Err(Error::invalid(
                "kernel_choices",
                format!("{:?}: kernels must be odd for symmetric padding", self.kernel_choices),
            ));
        }
        Ok(())
    }

    /// Longest legal depth; kernel/expand vectors carry this many slots.
    pub fn max_depth(&self) -> usize {
        *self.depth_choices.last().expect("validated non-empty")
    }

    pub fn max_kernel(&self) -> usize {
        *self.kernel_choices.last().expect("validated non-empty")
    }

    pub fn max_expand(&self) -> usize {
        *self.expand_choices.last().expect("validated non-empty")
    }

    pub fn min_kernel(&self) -> usize {
        self.kernel_choices[0]
    }

    pub fn min_expand(&self) -> usize {
        self.expand_choices[0]
    }

    /// Length of a backbone genome's integer encoding.
    pub fn encoded_len(&self) -> usize {
        self.num_blocks * (1 + 2 * self.max_depth())
    }
}

/// One block of a backbone: depth plus per-slot kernel widths and channel
/// expansion ratios. Slots at index >= depth are carried but inert.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockConfig {
    pub depth: usize,
    pub kernels: Vec<usize>,
    pub expands: Vec<usize>,
}

impl BlockConfig {
    pub fn validate(&self, space: &SpaceConfig) -> Result<()> {
        if !space.depth_choices.contains(&self.depth) {
            return Err(Error::invalid(
                "depth",
                format!("{} not in {:?}", self.depth, space.depth_choices),
            ));
        }
        let md = space.max_depth();
        if self.kernels.len() != md || self.expands.len() != md {
            return Err(Error::invalid(
                "block",
                format!(
                    "kernel/expand vectors must have {md} slots, got {}/{}",
                    self.kernels.len(),
                    self.expands.len()
                ),
            ));
        }
        for k in &self.kernels {
            if !space.kernel_choices.contains(k) {
                return Err(Error::invalid("kernels", format!("{k} not in {:?}", space.kernel_choices)));
            }
        }
        for e in &self.expands {
            if !space.expand_choices.contains(e) {
                return Err(Error::invalid("expands", format!("{e} not in {:?}", space.expand_choices)));
            }
        }
        Ok(())
    }

    /// The architecturally meaningful slice of the kernel vector.
    pub fn active_kernels(&self) -> &[usize] {
        &self.kernels[..self.depth]
    }

    pub fn active_expands(&self) -> &[usize] {
        &self.expands[..self.depth]
    }
}

impl PartialEq for BlockConfig {
    /// Architectural equality: inert tail entries are ignored.
    fn eq(&self, other: &Self) -> bool {
        self.depth == other.depth
            && self.active_kernels() == other.active_kernels()
            && self.active_expands() == other.active_expands()
    }
}

impl Eq for BlockConfig {}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct BackboneGenome {
    pub modality: String,
    pub blocks: Vec<BlockConfig>,
}

impl BackboneGenome {
    pub fn validate(&self, space: &SpaceConfig) -> Result<()> {
        if self.blocks.len() != space.num_blocks {
            return Err(Error::invalid(
                "blocks",
                format!("{} blocks, space has {}", self.blocks.len(), space.num_blocks),
            ));
        }
        for b in &self.blocks {
            b.validate(space)?;
        }
        Ok(())
    }

    /// Flatten to the canonical integer vector:
    /// per block `[depth, kernels..., expands...]`, inert slots included.
    pub fn encode(&self, space: &SpaceConfig) -> Result<Vec<usize>> {
        self.validate(space)?;
        let mut v = Vec::with_capacity(space.encoded_len());
        for b in &self.blocks {
            v.push(b.depth);
            v.extend_from_slice(&b.kernels);
            v.extend_from_slice(&b.expands);
        }
        Ok(v)
    }

    pub fn decode(space: &SpaceConfig, modality: &str, v: &[usize]) -> Result<BackboneGenome> {
        if v.len() != space.encoded_len() {
            return Err(Error::invalid(
                "vector",
                format!("length {} for a space wanting {}", v.len(), space.encoded_len()),
            ));
        }
        let md = space.max_depth();
        let stride = 1 + 2 * md;
        let blocks = (0..space.num_blocks)
            .map(|j| {
                let s = &v[j * stride..(j + 1) * stride];
                BlockConfig {
                    depth: s[0],
                    kernels: s[1..1 + md].to_vec(),
                    expands: s[1 + md..].to_vec(),
                }
            })
            .collect();
        let g = BackboneGenome { modality: modality.to_string(), blocks };
        g.validate(space)?;
        Ok(g)
    }
}

fn pick(rng: &mut ChaCha8Rng, xs: &[usize]) -> usize {
    xs[rng.random_range(0..xs.len())]
}

/// Uniform draw over the legal set (inert slots too, so fresh genomes
/// carry unbiased tails into later mutations).
pub fn sample_uniform(space: &SpaceConfig, modality: &str, rng: &mut ChaCha8Rng) -> BackboneGenome {
    let md = space.max_depth();
    let blocks = (0..space.num_blocks)
        .map(|_| {
            let depth = pick(rng, &space.depth_choices);
            let kernels = (0..md).map(|_| pick(rng, &space.kernel_choices)).collect();
            let expands = (0..md).map(|_| pick(rng, &space.expand_choices)).collect();
            BlockConfig { depth, kernels, expands }
        })
        .collect();
    BackboneGenome { modality: modality.to_string(), blocks }
}

/// Largest subnet: maximal depth, kernel, and expansion everywhere.
pub fn max_subnet(space: &SpaceConfig, modality: &str) -> BackboneGenome {
    let md = space.max_depth();
    BackboneGenome {
        modality: modality.to_string(),
        blocks: (0..space.num_blocks)
            .map(|_| BlockConfig {
                depth: md,
                kernels: vec![space.max_kernel(); md],
                expands: vec![space.max_expand(); md],
            })
            .collect(),
    }
}

/// Smallest subnet: minimal depth, kernel, and expansion everywhere.
pub fn min_subnet(space: &SpaceConfig, modality: &str) -> BackboneGenome {
    let md = space.max_depth();
    BackboneGenome {
        modality: modality.to_string(),
        blocks: (0..space.num_blocks)
            .map(|_| BlockConfig {
                depth: space.depth_choices[0],
                kernels: vec![space.min_kernel(); md],
                expands: vec![space.min_expand(); md],
            })
            .collect(),
    }
}

/// Block-level uniform mutation: independently per block, with
/// probability `p_mut` the whole block is resampled — a new depth, then
/// fresh kernel and expansion values for every slot up to that depth
/// (in that order; inert tails are inherited).
pub fn mutate(
    genome: &BackboneGenome,
    space: &SpaceConfig,
    p_mut: f64,
    rng: &mut ChaCha8Rng,
) -> Result<BackboneGenome> {
    if !(0.0..=1.0).contains(&p_mut) {
        return Err(Error::invalid("p_mut", format!("{p_mut} outside [0, 1]")));
    }
    let mut out = genome.clone();
    for b in &mut out.blocks {
        if rng.random_range(0.0..1.0) < p_mut {
            b.depth = pick(rng, &space.depth_choices);
            for l in 0..b.depth {
                b.kernels[l] = pick(rng, &space.kernel_choices);
            }
            for l in 0..b.depth {
                b.expands[l] = pick(rng, &space.expand_choices);
            }
        }
    }
    Ok(out)
}

/// Block-position crossover: per position, with probability `p_cross`
/// the parents' blocks are swapped between the two children.
pub fn crossover(
    g1: &BackboneGenome,
    g2: &BackboneGenome,
    p_cross: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(BackboneGenome, BackboneGenome)> {
    if !(0.0..=1.0).contains(&p_cross) {
        return Err(Error::invalid("p_cross", format!("{p_cross} outside [0, 1]")));
    }
    if g1.modality != g2.modality {
        return Err(Error::invalid(
            "modality",
            format!("cannot cross `{}` with `{}`", g1.modality, g2.modality),
        ));
    }
    if g1.blocks.len() != g2.blocks.len() {
        return Err(Error::invalid(
            "blocks",
            format!("{} vs {} blocks", g1.blocks.len(), g2.blocks.len()),
        ));
    }
    let (mut c1, mut c2) = (g1.clone(), g2.clone());
    for j in 0..c1.blocks.len() {
        if rng.random_range(0.0..1.0) < p_cross {
            std::mem::swap(&mut c1.blocks[j], &mut c2.blocks[j]);
        }
    }
    Ok((c1, c2))
}

/// Exact number of distinct genomes in the space (inert tails do not
/// count as distinct). Errors rather than saturating beyond 2^63.
pub fn space_size(space: &SpaceConfig) -> Result<u64> {
    space.validate()?;
    let per_layer = (space.kernel_choices.len() as u128) * (space.expand_choices.len() as u128);
    let mut per_block: u128 = 0;
    for &d in &space.depth_choices {
        let mut p: u128 = 1;
        for _ in 0..d {
            p = p.checked_mul(per_layer).ok_or(Error::SpaceOverflow)?;
        }
        per_block = per_block.checked_add(p).ok_or(Error::SpaceOverflow)?;
    }
    let mut total: u128 = 1;
    for _ in 0..space.num_blocks {
        total = total.checked_mul(per_block).ok_or(Error::SpaceOverflow)?;
    }
    if total > (1u128 << 63) {
        return Err(Error::SpaceOverflow);
    }
    Ok(total as u64)
}

/// Macro-architecture of the fusion network: number of cells and
/// fusion nodes per cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionMacroConfig {
    pub cells: usize,
    pub nodes: usize,
}

/// Inclusive bounds the macro config is sampled and mutated within.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MacroBounds {
    pub cells_min: usize,
    pub cells_max: usize,
    pub nodes_min: usize,
    pub nodes_max: usize,
}

impl Default for MacroBounds {
    fn default() -> Self {
        MacroBounds { cells_min: 1, cells_max: 2, nodes_min: 1, nodes_max: 3 }
    }
}

impl MacroBounds {
    pub fn validate(&self) -> Result<()> {
        if self.cells_min < 1 || self.cells_min > self.cells_max {
            return Err(Error::invalid(
                "cells_min",
                format!("need 1 <= {} <= {}", self.cells_min, self.cells_max),
            ));
        }
        if self.nodes_min < 1 || self.nodes_min > self.nodes_max {
            return Err(Error::invalid(
                "nodes_min",
                format!("need 1 <= {} <= {}", self.nodes_min, self.nodes_max),
            ));
        }
        Ok(())
    }

    pub fn contains(&self, m: FusionMacroConfig) -> bool {
        (self.cells_min..=self.cells_max).contains(&m.cells)
            && (self.nodes_min..=self.nodes_max).contains(&m.nodes)
    }
}

pub fn sample_macro(bounds: &MacroBounds, rng: &mut ChaCha8Rng) -> FusionMacroConfig {
    FusionMacroConfig {
        cells: rng.random_range(bounds.cells_min..=bounds.cells_max),
        nodes: rng.random_range(bounds.nodes_min..=bounds.nodes_max),
    }
}

/// Macro mutation mirrors block mutation: with probability `p_mut` both
/// fields are resampled uniformly from their bounds.
pub fn mutate_macro(
    m: FusionMacroConfig,
    bounds: &MacroBounds,
    p_mut: f64,
    rng: &mut ChaCha8Rng,
) -> Result<FusionMacroConfig> {
    if !(0.0..=1.0).contains(&p_mut) {
        return Err(Error::invalid("p_mut", format!("{p_mut} outside [0, 1]")));
    }
    if rng.random_range(0.0..1.0) < p_mut {
        Ok(sample_macro(bounds, rng))
    } else {
        Ok(m)
    }
}

/// The unit the evolutionary loop evolves: one backbone per modality plus
/// the fusion macro shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultimodalGenome {
    pub backbones: Vec<BackboneGenome>,
    pub macro_cfg: FusionMacroConfig,
}

impl MultimodalGenome {
    pub fn validate(&self, space: &SpaceConfig, bounds: &MacroBounds) -> Result<()> {
        for b in &self.backbones {
            b.validate(space)?;
        }
        let mut tags: Vec<&str> = self.backbones.iter().map(|b| b.modality.as_str()).collect();
        tags.sort_unstable();
        tags.dedup();
        if tags.len() != self.backbones.len() {
            return Err(Error::invalid("backbones", "duplicate modality tags".to_string()));
        }
        if !bounds.contains(self.macro_cfg) {
            return Err(Error::invalid(
                "macro_cfg",
                format!("{:?} outside bounds {:?}", self.macro_cfg, bounds),
            ));
        }
        Ok(())
    }
}
