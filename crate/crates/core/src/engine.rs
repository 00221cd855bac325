//! The two-tier orchestration loop.
//!
//! Each generation runs in two stages. The first evaluates every member's
//! backbones against the frozen supernets (accuracy on the validation
//! split, latency and energy from the device table) and keeps the top
//! fraction per modality. The second pairs the survivors across
//! modalities, trains a relaxed fusion network per pair, commits it to a
//! discrete graph and records the multimodal metrics. Elites feed the
//! next population; the archive of everything ever evaluated yields the
//! final non-dominated front.
//!
//! Candidate work inside a stage is embarrassingly parallel, but tensors
//! are `Rc`-based and pinned to one thread, so workers carry
//! [`SupernetSnapshot`]s and rebuild private supernets per item. Fusion
//! seeds derive from the run seed plus the candidate's own genome, which
//! makes results independent of scheduling *and* of how often the same
//! genome reappears: re-evaluating an elite reproduces its metrics bit
//! for bit, and the optional result cache is a pure speed knob.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::MultimodalDataset;
use crate::error::{Error, Result};
use crate::fusion::{
    relaxed_accuracy, train_fusion, FusionGraph, FusionHypernet, FusionTrainConfig, GammaMode,
    LossExponents, SourceFeatures, ALL_FUSION_OPS,
};
use crate::hwcost::{
    backbone_cost, candidate_graph_cost, fusion_relaxed_cost, CostMetric, CostPair, DeviceLut,
};
use crate::moo::{
    eval_score, non_dominated_sort, select_fraction, ObjectivePoint, ScoredCandidate,
    ACC_LAT_ERGY,
};
use crate::par::{try_maybe_par_map, Parallelism};
use crate::searchspace::{
    crossover, mutate, mutate_macro, sample_macro, sample_uniform, BackboneGenome,
    FusionMacroConfig, MacroBounds, MultimodalGenome,
};
use crate::seeds::{self, tag};
use crate::supernet::{ElasticSupernet, SupernetSnapshot};
use crate::tensor::Tensor;

/// Everything a search run reads but never owns: trained (frozen)
/// supernets in modality order, the device cost table, and the train/val
/// splits. Fusion networks train on `train` features; all reported
/// accuracies come from `val`.
#[derive(Clone, Copy)]
pub struct SearchContext<'a> {
    pub supernets: &'a [ElasticSupernet],
    pub lut: &'a DeviceLut,
    pub train: &'a MultimodalDataset,
    pub val: &'a MultimodalDataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub seed: u64,
    /// Evolutionary budget. The full-scale default is 30 generations of
    /// 128; desk runs scale both down by config.
    pub generations: usize,
    pub population_size: usize,
    /// Per-block mutation probability.
    pub p_mut: f64,
    /// Per-block-position crossover probability.
    pub p_cross: f64,
    /// Fraction of each modality's population that reaches stage two.
    pub stage_one_fraction: f64,
    /// Fraction of scored multimodal candidates kept as elites.
    pub elite_fraction: f64,
    pub macro_bounds: MacroBounds,
    /// Template for second-stage training. Its `seed` field is ignored:
    /// every candidate trains under a seed derived from the run seed and
    /// its own genome, so identical genomes always land on identical
    /// fusion results.
    pub fusion: FusionTrainConfig,
    /// Channel width all fused sources are projected to.
    pub fusion_width: usize,
    /// Supernet block whose features feed fusion; `None` means the last.
    pub tap_block: Option<usize>,
    /// Batch size for accuracy evaluation and feature extraction.
    pub eval_batch: usize,
    /// Pair the per-modality selections randomly instead of rank-aligned.
    pub random_pairing: bool,
    /// Reuse fusion results for genomes already trained in this run.
    /// Purely a speed knob — per-genome seeds make a hit bit-identical
    /// to retraining.
    pub cache_fusion: bool,
    pub parallelism: Parallelism,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            seed: 0,
            generations: 30,
            population_size: 128,
            p_mut: 0.4,
            p_cross: 0.8,
            stage_one_fraction: 0.25,
            elite_fraction: 0.5,
            macro_bounds: MacroBounds::default(),
            fusion: FusionTrainConfig::default(),
            fusion_width: 8,
            tap_block: None,
            eval_batch: 256,
            random_pairing: false,
            cache_fusion: false,
            parallelism: Parallelism::default(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population_size == 0 {
            return Err(Error::invalid("population_size", "must be positive"));
        }
        for (name, p) in [("p_mut", self.p_mut), ("p_cross", self.p_cross)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(name, format!("{p} outside [0, 1]")));
            }
        }
        for (name, f) in
            [("stage_one_fraction", self.stage_one_fraction), ("elite_fraction", self.elite_fraction)]
        {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::invalid(name, format!("{f} outside (0, 1]")));
            }
        }
        if self.fusion_width == 0 {
            return Err(Error::invalid("fusion_width", "must be positive"));
        }
        if self.eval_batch == 0 {
            return Err(Error::invalid("eval_batch", "must be positive"));
        }
        self.macro_bounds.validate()?;
        self.fusion.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub generation: usize,
    pub members: Vec<MultimodalGenome>,
}

/// One backbone's measured objectives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityMetrics {
    pub modality: String,
    pub acc: f64,
    pub lat_ms: f64,
    pub ergy_mj: f64,
}

/// One committed multimodal candidate's objectives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateMetrics {
    pub acc: f64,
    pub lat_ms: f64,
    pub ergy_mj: f64,
}

/// One line of the append-only run log: everything needed to reconstruct
/// and re-evaluate a second-stage candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub generation: usize,
    /// Unique per run, assigned in evaluation order.
    pub candidate_id: u64,
    pub genome: MultimodalGenome,
    pub unimodal: Vec<ModalityMetrics>,
    pub multimodal: CandidateMetrics,
    pub graph: FusionGraph,
    /// Derived seed the fusion network was initialized and trained under.
    pub seed: u64,
}

fn check_supernets(supernets: &[ElasticSupernet]) -> Result<()> {
    if supernets.len() < 2 {
        return Err(Error::invalid(
            "supernets",
            format!("{} supernet(s); fusion needs at least two modalities", supernets.len()),
        ));
    }
    let mut names: Vec<&str> = supernets.iter().map(ElasticSupernet::modality).collect();
    names.sort_unstable();
    names.dedup();
    if names.len() != supernets.len() {
        return Err(Error::invalid("supernets", "duplicate modality tags"));
    }
    Ok(())
}

pub fn init_population(cfg: &EngineConfig, supernets: &[ElasticSupernet]) -> Result<Population> {
    cfg.validate()?;
    check_supernets(supernets)?;
    let mut rng = seeds::rng_for(cfg.seed, tag::POP_INIT, 0, 0);
    let members = (0..cfg.population_size)
        .map(|_| MultimodalGenome {
            backbones: supernets
                .iter()
                .map(|s| sample_uniform(s.space(), s.modality(), &mut rng))
                .collect(),
            macro_cfg: sample_macro(&cfg.macro_bounds, &mut rng),
        })
        .collect();
    Ok(Population { generation: 0, members })
}

/// FNV-1a over the genome's canonical encoding. Genomes that compare
/// equal hash equal, which is what ties a candidate's fusion seed to what
/// it *is* rather than where in the run it showed up.
fn genome_stream(genome: &MultimodalGenome, snaps: &[SupernetSnapshot]) -> Result<u64> {
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let eat = |h: u64, v: u64| (h ^ v).wrapping_mul(PRIME);
    for (b, snap) in genome.backbones.iter().zip(snaps) {
        for byte in b.modality.bytes() {
            h = eat(h, u64::from(byte));
        }
        for v in b.encode(snap.space())? {
            h = eat(h, v as u64);
        }
    }
    h = eat(h, genome.macro_cfg.cells as u64);
    h = eat(h, genome.macro_cfg.nodes as u64);
    Ok(h)
}

fn candidate_seed(
    cfg: &EngineConfig,
    genome: &MultimodalGenome,
    snaps: &[SupernetSnapshot],
) -> Result<u64> {
    Ok(seeds::derive(cfg.seed, tag::FUSION_INIT, genome_stream(genome, snaps)?, 0))
}

/// Run every backbone of `genome` over `dataset` and package the tapped
/// block's activations as fusion sources. Workers call this with their
/// own rebuilt supernets, so it takes snapshots.
fn extract_sources(
    snaps: &[SupernetSnapshot],
    genome: &MultimodalGenome,
    dataset: &MultimodalDataset,
    tap_block: Option<usize>,
    batch: usize,
) -> Result<SourceFeatures> {
    let mut specs = Vec::with_capacity(snaps.len());
    let mut per_source = Vec::with_capacity(snaps.len());
    for (m, snap) in snaps.iter().enumerate() {
        let backbone = genome.backbones.get(m).ok_or_else(|| {
            Error::invalid("genome", format!("no backbone for modality {}", snap.modality()))
        })?;
        let sup = ElasticSupernet::from_snapshot(snap)?;
        let tap = tap_block.unwrap_or(sup.space().num_blocks - 1);
        let (spec, flat) = sup.dataset_block_features(backbone, dataset, tap, batch)?;
        specs.push(spec);
        per_source.push(flat);
    }
    SourceFeatures::new(specs, dataset.signal_len(), per_source, dataset.labels().to_vec())
}

struct FusionOutcome {
    acc: f64,
    graph: FusionGraph,
    cost: CostPair,
}

/// Second-stage unit of work: train a relaxed fusion network on the train
/// features, commit it, score the discrete graph on the val features.
fn fuse_and_score(
    genome: &MultimodalGenome,
    train: &SourceFeatures,
    val: &SourceFeatures,
    lut: &DeviceLut,
    template: &FusionTrainConfig,
    fusion_width: usize,
    num_classes: usize,
    sub_seed: u64,
    eval_batch: usize,
) -> Result<FusionOutcome> {
    let mut hyper = FusionHypernet::new(
        train.specs.clone(),
        genome.macro_cfg,
        fusion_width,
        num_classes,
        sub_seed,
    )?;
    let mut fcfg = template.clone();
    fcfg.seed = sub_seed;
    train_fusion(&mut hyper, train, lut, &fcfg)?;
    let graph = hyper.discretize()?;
    let acc = graph.accuracy(val, eval_batch)?;
    let cost = candidate_graph_cost(genome, &graph, lut)?;
    Ok(FusionOutcome { acc, graph, cost })
}

#[derive(Debug, Clone)]
pub struct StageOneResult {
    /// Per modality: the whole population in evaluation order
    /// (rank, then crowding, then id). Point ids are member indices.
    pub ordered: Vec<Vec<ScoredCandidate>>,
    /// Per modality: surviving member indices, still in evaluation order.
    pub selected: Vec<Vec<usize>>,
    /// Per modality, per member index: the measured objectives.
    pub metrics: Vec<Vec<ModalityMetrics>>,
}

pub fn run_first_stage(
    pop: &Population,
    ctx: &SearchContext,
    cfg: &EngineConfig,
) -> Result<StageOneResult> {
    cfg.validate()?;
    check_supernets(ctx.supernets)?;
    if pop.members.is_empty() {
        return Err(Error::invalid("population", "no members"));
    }
    let mut ordered = Vec::with_capacity(ctx.supernets.len());
    let mut selected = Vec::with_capacity(ctx.supernets.len());
    let mut metrics = Vec::with_capacity(ctx.supernets.len());
    for (m, sup) in ctx.supernets.iter().enumerate() {
        let genomes: Vec<BackboneGenome> = pop
            .members
            .iter()
            .map(|g| {
                g.backbones
                    .get(m)
                    .filter(|b| b.modality == sup.modality())
                    .cloned()
                    .ok_or_else(|| {
                        Error::invalid(
                            "population",
                            format!("member backbones misaligned with supernet `{}`", sup.modality()),
                        )
                    })
            })
            .collect::<Result<_>>()?;
        let snap = sup.snapshot();
        let (val_ds, lut) = (ctx.val, ctx.lut);
        let evals: Vec<ModalityMetrics> = try_maybe_par_map(&genomes, cfg.parallelism, |g| {
            let local = ElasticSupernet::from_snapshot(&snap)?;
            let acc = local.evaluate_subnet(g, val_ds, cfg.eval_batch)?;
            let cost = backbone_cost(g, lut)?;
            Ok(ModalityMetrics {
                modality: g.modality.clone(),
                acc,
                lat_ms: cost.lat_ms,
                ergy_mj: cost.ergy_mj,
            })
        })?;
        let points: Vec<ObjectivePoint> = evals
            .iter()
            .enumerate()
            .map(|(i, e)| ObjectivePoint::new(i as u64, vec![e.acc, e.lat_ms, e.ergy_mj]))
            .collect();
        let scored = eval_score(&points, &ACC_LAT_ERGY)?;
        let chosen = select_fraction(&scored, cfg.stage_one_fraction)?;
        selected.push(chosen.iter().map(|s| s.point.id as usize).collect());
        ordered.push(scored);
        metrics.push(evals);
    }
    Ok(StageOneResult { ordered, selected, metrics })
}

/// A multimodal candidate assembled from per-modality survivors, carrying
/// their stage-one metrics along for the record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedCandidate {
    pub genome: MultimodalGenome,
    pub unimodal: Vec<ModalityMetrics>,
}

/// Combine the per-modality selections into multimodal candidates.
/// Default is rank-aligned (i-th best with i-th best); `random_pairing`
/// shuffles each modality's list first. The macro config rides with the
/// first modality's member at each rank.
pub fn pair_candidates(
    pop: &Population,
    stage1: &StageOneResult,
    cfg: &EngineConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<PairedCandidate>> {
    if stage1.selected.is_empty() || stage1.selected.iter().any(Vec::is_empty) {
        return Err(Error::invalid("stage1", "empty selection"));
    }
    let mut orders: Vec<Vec<usize>> = stage1.selected.clone();
    if cfg.random_pairing {
        for order in &mut orders {
            order.shuffle(rng);
        }
    }
    let n_pairs = orders.iter().map(Vec::len).min().expect("nonempty");
    let mut out = Vec::with_capacity(n_pairs);
    for r in 0..n_pairs {
        let backbones: Vec<BackboneGenome> = (0..orders.len())
            .map(|m| pop.members[orders[m][r]].backbones[m].clone())
            .collect();
        let unimodal: Vec<ModalityMetrics> =
            (0..orders.len()).map(|m| stage1.metrics[m][orders[m][r]].clone()).collect();
        out.push(PairedCandidate {
            genome: MultimodalGenome {
                backbones,
                macro_cfg: pop.members[orders[0][r]].macro_cfg,
            },
            unimodal,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
struct CachedFusion {
    seed: u64,
    acc: f64,
    graph: FusionGraph,
    cost: CostPair,
}

fn make_record(
    generation: usize,
    candidate_id: u64,
    pair: PairedCandidate,
    hit: CachedFusion,
) -> RunRecord {
    RunRecord {
        generation,
        candidate_id,
        genome: pair.genome,
        unimodal: pair.unimodal,
        multimodal: CandidateMetrics {
            acc: hit.acc,
            lat_ms: hit.cost.lat_ms,
            ergy_mj: hit.cost.ergy_mj,
        },
        graph: hit.graph,
        seed: hit.seed,
    }
}

fn second_stage_impl(
    pairs: &[PairedCandidate],
    ctx: &SearchContext,
    cfg: &EngineConfig,
    generation: usize,
    first_id: u64,
    mut cache: Option<&mut Vec<(MultimodalGenome, CachedFusion)>>,
) -> Result<Vec<RunRecord>> {
    if pairs.is_empty() {
        return Err(Error::invalid("pairs", "nothing selected for fusion search"));
    }
    let snaps: Vec<SupernetSnapshot> =
        ctx.supernets.iter().map(ElasticSupernet::snapshot).collect();
    let num_classes = ctx.train.num_classes();

    struct Fresh {
        idx: usize,
        seed: u64,
        genome: MultimodalGenome,
    }
    let mut records: Vec<Option<RunRecord>> = (0..pairs.len()).map(|_| None).collect();
    let mut fresh: Vec<Fresh> = Vec::new();
    for (r, pair) in pairs.iter().enumerate() {
        let seed = candidate_seed(cfg, &pair.genome, &snaps)?;
        let hit = cache
            .as_deref()
            .and_then(|c| c.iter().find(|(g, _)| *g == pair.genome))
            .map(|(_, v)| v.clone());
        match hit {
            Some(v) => records[r] = Some(make_record(generation, first_id + r as u64, pair.clone(), v)),
            None => fresh.push(Fresh { idx: r, seed, genome: pair.genome.clone() }),
        }
    }

    let (train_ds, val_ds, lut) = (ctx.train, ctx.val, ctx.lut);
    let computed: Vec<(usize, CachedFusion)> =
        try_maybe_par_map(&fresh, cfg.parallelism, |item| {
            let train_feats =
                extract_sources(&snaps, &item.genome, train_ds, cfg.tap_block, cfg.eval_batch)?;
            let val_feats =
                extract_sources(&snaps, &item.genome, val_ds, cfg.tap_block, cfg.eval_batch)?;
            let out = fuse_and_score(
                &item.genome,
                &train_feats,
                &val_feats,
                lut,
                &cfg.fusion,
                cfg.fusion_width,
                num_classes,
                item.seed,
                cfg.eval_batch,
            )?;
            Ok((item.idx, CachedFusion { seed: item.seed, acc: out.acc, graph: out.graph, cost: out.cost }))
        })?;
    for (idx, v) in computed {
        let pair = &pairs[idx];
        if let Some(c) = cache.as_deref_mut() {
            if !c.iter().any(|(g, _)| *g == pair.genome) {
                c.push((pair.genome.clone(), v.clone()));
            }
        }
        records[idx] = Some(make_record(generation, first_id + idx as u64, pair.clone(), v));
    }
    Ok(records.into_iter().map(|r| r.expect("every pair scored")).collect())
}

pub fn run_second_stage(
    pairs: &[PairedCandidate],
    ctx: &SearchContext,
    cfg: &EngineConfig,
    generation: usize,
    first_id: u64,
) -> Result<Vec<RunRecord>> {
    second_stage_impl(pairs, ctx, cfg, generation, first_id, None)
}

/// Breed generation `g+1`: the top `elite_fraction` of the scored
/// candidates survive unchanged, and parent pairs drawn from them refill
/// the rest through crossover and mutation.
pub fn next_generation(
    pop: &Population,
    records: &[RunRecord],
    ctx: &SearchContext,
    cfg: &EngineConfig,
) -> Result<Population> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(Error::invalid("records", "no scored candidates"));
    }
    let points: Vec<ObjectivePoint> = records
        .iter()
        .map(|r| {
            ObjectivePoint::new(
                r.candidate_id,
                vec![r.multimodal.acc, r.multimodal.lat_ms, r.multimodal.ergy_mj],
            )
        })
        .collect();
    let ordered = eval_score(&points, &ACC_LAT_ERGY)?;
    let elite_scored = select_fraction(&ordered, cfg.elite_fraction)?;
    let elites: Vec<&MultimodalGenome> = elite_scored
        .iter()
        .map(|s| {
            records
                .iter()
                .find(|r| r.candidate_id == s.point.id)
                .map(|r| &r.genome)
                .expect("scored ids come from these records")
        })
        .collect();

    let mut members: Vec<MultimodalGenome> =
        elites.iter().take(cfg.population_size).map(|g| (*g).clone()).collect();
    let mut rng = seeds::rng_for(cfg.seed, tag::MUTATE, pop.generation as u64, 0);
    while members.len() < cfg.population_size {
        let a = elites[rng.random_range(0..elites.len())];
        let b = elites[rng.random_range(0..elites.len())];
        let mut backbones = Vec::with_capacity(ctx.supernets.len());
        for (m, sup) in ctx.supernets.iter().enumerate() {
            let (child, _) = crossover(&a.backbones[m], &b.backbones[m], cfg.p_cross, &mut rng)?;
            backbones.push(mutate(&child, sup.space(), cfg.p_mut, &mut rng)?);
        }
        let macro_cfg = mutate_macro(a.macro_cfg, &cfg.macro_bounds, cfg.p_mut, &mut rng)?;
        members.push(MultimodalGenome { backbones, macro_cfg });
    }
    Ok(Population { generation: pop.generation + 1, members })
}

/// The non-dominated subset of a run log, in candidate-id order.
pub fn cumulative_front(log: &[RunRecord]) -> Result<Vec<RunRecord>> {
    if log.is_empty() {
        return Ok(Vec::new());
    }
    let points: Vec<ObjectivePoint> = log
        .iter()
        .map(|r| {
            ObjectivePoint::new(
                r.candidate_id,
                vec![r.multimodal.acc, r.multimodal.lat_ms, r.multimodal.ergy_mj],
            )
        })
        .collect();
    let fronts = non_dominated_sort(&points, &ACC_LAT_ERGY)?;
    let mut front: Vec<RunRecord> = fronts[0].iter().map(|&i| log[i].clone()).collect();
    front.sort_by_key(|r| r.candidate_id);
    Ok(front)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    /// Every second-stage record, append-only, in candidate-id order.
    pub log: Vec<RunRecord>,
    /// Non-dominated subset of `log`.
    pub front: Vec<RunRecord>,
}

fn preflight(ctx: &SearchContext) -> Result<()> {
    check_supernets(ctx.supernets)?;
    for sup in ctx.supernets {
        ctx.lut.validate_complete(sup.space())?;
    }
    if ctx.train.is_empty() || ctx.val.is_empty() {
        return Err(Error::EmptyDataset("search".into()));
    }
    Ok(())
}

/// The full two-tier loop. `on_record` sees every record the moment its
/// generation completes (in id order), so callers can stream the log to
/// disk and keep what was done even if a later generation fails.
pub fn run(
    cfg: &EngineConfig,
    ctx: &SearchContext,
    on_record: &mut dyn FnMut(&RunRecord) -> Result<()>,
) -> Result<RunOutcome> {
    cfg.validate()?;
    preflight(ctx)?;
    let mut pop = init_population(cfg, ctx.supernets)?;
    let mut log: Vec<RunRecord> = Vec::new();
    let mut cache: Vec<(MultimodalGenome, CachedFusion)> = Vec::new();
    let mut next_id = 0u64;
    for _ in 0..cfg.generations {
        let stage1 = run_first_stage(&pop, ctx, cfg)?;
        let mut pair_rng = seeds::rng_for(cfg.seed, tag::MUTATE, pop.generation as u64, 1);
        let pairs = pair_candidates(&pop, &stage1, cfg, &mut pair_rng)?;
        let records = second_stage_impl(
            &pairs,
            ctx,
            cfg,
            pop.generation,
            next_id,
            if cfg.cache_fusion { Some(&mut cache) } else { None },
        )?;
        next_id += records.len() as u64;
        for r in &records {
            on_record(r)?;
        }
        pop = next_generation(&pop, &records, ctx, cfg)?;
        log.extend(records);
    }
    let front = cumulative_front(&log)?;
    Ok(RunOutcome { log, front })
}

/// Re-score a committed candidate on another split (typically test).
/// Extraction must reproduce the sources the graph was built from.
pub fn graph_accuracy_on(
    supernets: &[ElasticSupernet],
    genome: &MultimodalGenome,
    graph: &FusionGraph,
    dataset: &MultimodalDataset,
    tap_block: Option<usize>,
    batch: usize,
) -> Result<f64> {
    let snaps: Vec<SupernetSnapshot> = supernets.iter().map(ElasticSupernet::snapshot).collect();
    let feats = extract_sources(&snaps, genome, dataset, tap_block, batch)?;
    if feats.specs != graph.sources {
        return Err(Error::invalid("graph", "graph sources do not match the extracted features"));
    }
    graph.accuracy(&feats, batch)
}

/// Which design dimensions an ablation unlocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationMode {
    /// Max-capacity backbones, dense fusion (every source passed through,
    /// uniform frozen operator mix). No search at all.
    FixedBoth,
    /// Max-capacity backbones, searched fusion.
    FixedBackbone,
    /// Full two-tier search with a task-only fusion loss (b = c = 0).
    SearchedTaskOnly,
    /// Full two-tier search with the hardware-aware loss.
    SearchedHwAware,
    /// Max-capacity backbones; one row per fusion operator pinned
    /// everywhere, plus one row with the operator mix searched.
    SingleOpSweep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub acc: f64,
    pub lat_ms: f64,
    pub ergy_mj: f64,
}

fn max_capacity_genome(ctx: &SearchContext, cfg: &EngineConfig) -> MultimodalGenome {
    MultimodalGenome {
        backbones: ctx.supernets.iter().map(ElasticSupernet::max_genome).collect(),
        macro_cfg: FusionMacroConfig {
            cells: cfg.macro_bounds.cells_max,
            nodes: cfg.macro_bounds.nodes_max,
        },
    }
}

/// Pin every input gate to pass its candidate through: a saturated logit
/// gap makes the Identity probability exactly 1 in f64.
fn saturate_gates_open(hyper: &mut FusionHypernet) -> Result<()> {
    let open = |t: &Tensor| -> Result<Tensor> {
        let rows = t.shape()[0];
        let mut data = Vec::with_capacity(rows * 2);
        for _ in 0..rows {
            data.extend_from_slice(&[1000.0, -1000.0]);
        }
        Tensor::from_vec(data, &[rows, 2])
    };
    let arch = hyper.arch();
    let alpha: Vec<Vec<Tensor>> = arch
        .alpha
        .iter()
        .map(|slots| slots.iter().map(&open).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let beta: Vec<Vec<Vec<Tensor>>> = arch
        .beta
        .iter()
        .map(|cell| {
            cell.iter()
                .map(|slots| slots.iter().map(&open).collect::<Result<Vec<_>>>())
                .collect::<Result<_>>()
        })
        .collect::<Result<_>>()?;
    for (c, slots) in alpha.into_iter().enumerate() {
        for (s, t) in slots.into_iter().enumerate() {
            hyper.set_alpha(c, s, t)?;
        }
    }
    for (c, cell) in beta.into_iter().enumerate() {
        for (n, slots) in cell.into_iter().enumerate() {
            for (s, t) in slots.into_iter().enumerate() {
                hyper.set_beta(c, n, s, t)?;
            }
        }
    }
    Ok(())
}

fn noop_record(_: &RunRecord) -> Result<()> {
    Ok(())
}

fn best_accuracy_row(front: &[RunRecord], label: &str) -> Result<AblationRow> {
    let best = front
        .iter()
        .max_by(|a, b| {
            a.multimodal
                .acc
                .partial_cmp(&b.multimodal.acc)
                .expect("accuracies are finite")
                .then(b.candidate_id.cmp(&a.candidate_id))
        })
        .ok_or_else(|| Error::invalid("config", "ablation search produced an empty front"))?;
    Ok(AblationRow {
        label: label.to_string(),
        acc: best.multimodal.acc,
        lat_ms: best.multimodal.lat_ms,
        ergy_mj: best.multimodal.ergy_mj,
    })
}

/// Progressive-unlock ablations. Fixed modes evaluate a single
/// hand-picked candidate (no evolution); searched modes run the full
/// loop and report the best-accuracy front member.
pub fn ablation_run(
    mode: AblationMode,
    cfg: &EngineConfig,
    ctx: &SearchContext,
) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    preflight(ctx)?;
    match mode {
        AblationMode::FixedBoth => {
            let genome = max_capacity_genome(ctx, cfg);
            let snaps: Vec<SupernetSnapshot> =
                ctx.supernets.iter().map(ElasticSupernet::snapshot).collect();
            let train_feats =
                extract_sources(&snaps, &genome, ctx.train, cfg.tap_block, cfg.eval_batch)?;
            let val_feats =
                extract_sources(&snaps, &genome, ctx.val, cfg.tap_block, cfg.eval_batch)?;
            let sub_seed = candidate_seed(cfg, &genome, &snaps)?;
            let mut hyper = FusionHypernet::new(
                train_feats.specs.clone(),
                genome.macro_cfg,
                cfg.fusion_width,
                ctx.train.num_classes(),
                sub_seed,
            )?;
            saturate_gates_open(&mut hyper)?;
            let mut fcfg = cfg.fusion.clone();
            fcfg.seed = sub_seed;
            fcfg.gamma_mode = GammaMode::FrozenUniform;
            fcfg.train_input_gates = false;
            train_fusion(&mut hyper, &train_feats, ctx.lut, &fcfg)?;
            let acc = relaxed_accuracy(&hyper, &val_feats, cfg.eval_batch)?;
            let mut cost = CostPair::ZERO;
            for b in &genome.backbones {
                cost = cost + backbone_cost(b, ctx.lut)?;
            }
            let lat = fusion_relaxed_cost(hyper.gamma(), genome.macro_cfg, ctx.lut, CostMetric::Latency)?
                .item()?;
            let ergy = fusion_relaxed_cost(hyper.gamma(), genome.macro_cfg, ctx.lut, CostMetric::Energy)?
                .item()?;
            Ok(vec![AblationRow {
                label: "fixed-backbone+fixed-fusion".to_string(),
                acc,
                lat_ms: cost.lat_ms + lat,
                ergy_mj: cost.ergy_mj + ergy,
            }])
        }
        AblationMode::FixedBackbone => {
            let genome = max_capacity_genome(ctx, cfg);
            let snaps: Vec<SupernetSnapshot> =
                ctx.supernets.iter().map(ElasticSupernet::snapshot).collect();
            let train_feats =
                extract_sources(&snaps, &genome, ctx.train, cfg.tap_block, cfg.eval_batch)?;
            let val_feats =
                extract_sources(&snaps, &genome, ctx.val, cfg.tap_block, cfg.eval_batch)?;
            let sub_seed = candidate_seed(cfg, &genome, &snaps)?;
            let mut fcfg = cfg.fusion.clone();
            fcfg.gamma_mode = GammaMode::Train;
            fcfg.train_input_gates = true;
            let out = fuse_and_score(
                &genome,
                &train_feats,
                &val_feats,
                ctx.lut,
                &fcfg,
                cfg.fusion_width,
                ctx.train.num_classes(),
                sub_seed,
                cfg.eval_batch,
            )?;
            Ok(vec![AblationRow {
                label: "fixed-backbone+searched-fusion".to_string(),
                acc: out.acc,
                lat_ms: out.cost.lat_ms,
                ergy_mj: out.cost.ergy_mj,
            }])
        }
        AblationMode::SearchedTaskOnly => {
            let mut task_cfg = cfg.clone();
            task_cfg.fusion.exponents =
                LossExponents { a: cfg.fusion.exponents.a, b: 0.0, c: 0.0 };
            let outcome = run(&task_cfg, ctx, &mut noop_record)?;
            Ok(vec![best_accuracy_row(&outcome.front, "searched+task-only")?])
        }
        AblationMode::SearchedHwAware => {
            if cfg.fusion.exponents.b <= 0.0 && cfg.fusion.exponents.c <= 0.0 {
                return Err(Error::invalid(
                    "exponents",
                    "hardware-aware mode needs b > 0 or c > 0",
                ));
            }
            let outcome = run(cfg, ctx, &mut noop_record)?;
            Ok(vec![best_accuracy_row(&outcome.front, "searched+hardware-aware")?])
        }
        AblationMode::SingleOpSweep => {
            let genome = max_capacity_genome(ctx, cfg);
            let snaps: Vec<SupernetSnapshot> =
                ctx.supernets.iter().map(ElasticSupernet::snapshot).collect();
            let train_feats =
                extract_sources(&snaps, &genome, ctx.train, cfg.tap_block, cfg.eval_batch)?;
            let val_feats =
                extract_sources(&snaps, &genome, ctx.val, cfg.tap_block, cfg.eval_batch)?;
            let sub_seed = candidate_seed(cfg, &genome, &snaps)?;
            let mut rows: Vec<(String, GammaMode)> = ALL_FUSION_OPS
                .iter()
                .map(|&op| (format!("single-op:{op:?}"), GammaMode::FrozenOneHot(op)))
                .collect();
            rows.push(("searched-ops".to_string(), GammaMode::Train));
            let num_classes = ctx.train.num_classes();
            let lut = ctx.lut;
            try_maybe_par_map(&rows, cfg.parallelism, |(label, mode)| {
                let mut fcfg = cfg.fusion.clone();
                fcfg.gamma_mode = *mode;
                fcfg.train_input_gates = true;
                let out = fuse_and_score(
                    &genome,
                    &train_feats,
                    &val_feats,
                    lut,
                    &fcfg,
                    cfg.fusion_width,
                    num_classes,
                    sub_seed,
                    cfg.eval_batch,
                )?;
                Ok(AblationRow {
                    label: label.clone(),
                    acc: out.acc,
                    lat_ms: out.cost.lat_ms,
                    ergy_mj: out.cost.ergy_mj,
                })
            })
        }
    }
}
