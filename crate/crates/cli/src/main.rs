//! `fusenas` — command-line driver for the two-tier multimodal
//! architecture search. Each subcommand reads and writes plain files
//! under the output directory, so a full experiment is a short shell
//! script: gen-data, gen-lut, train-supernet, search, then the export
//! and ablation commands as needed.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use fusenas_cli::config::{Overrides, RunConfig};
use fusenas_cli::exports;
use fusenas_core::data::{generate_all, MultimodalDataset, Split, NUM_CLASSES, NUM_MODALITIES};
use fusenas_core::engine::{self, AblationMode, EngineConfig, RunRecord, SearchContext};
use fusenas_core::hwcost::{load_lut, save_lut, synth_device, DeviceLut, ScaleProfile};
use fusenas_core::supernet::{train_supernet, ElasticSupernet};

#[derive(Parser)]
#[command(name = "fusenas", version, about = "Hardware-aware two-tier search over multimodal networks")]
struct Cli {
    /// TOML run configuration; command-line flags override its fields.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic multimodal dataset splits.
    GenData,
    /// Synthesize a device latency/energy lookup table.
    GenLut {
        #[arg(long, value_enum, default_value_t = Profile::FastGpu)]
        profile: Profile,
        /// Defaults to `<output_dir>/lut-<profile>.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one elastic supernet per dataset modality.
    TrainSupernet,
    /// Run the search; emits the run log, the front CSV, and one DOT
    /// graph per front member.
    Search,
    /// Re-run a single configuration with parts of the search disabled.
    Ablate {
        #[arg(long, value_enum)]
        mode: AblateArg,
    },
    /// Rebuild the front CSV from an existing run log.
    ExportFront {
        #[arg(long)]
        log: PathBuf,
        /// Defaults to `<output_dir>/front.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render one logged candidate's fusion graph as DOT.
    ExportGraph {
        #[arg(long)]
        log: PathBuf,
        /// Candidate id; defaults to the most accurate front member.
        #[arg(long)]
        candidate: Option<u64>,
        /// Defaults to `<output_dir>/graph-<id>.dot`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Profile {
    FastGpu,
    SlowEdge,
}

impl Profile {
    fn scale(self) -> ScaleProfile {
        match self {
            Profile::FastGpu => ScaleProfile::fast_gpu(),
            Profile::SlowEdge => ScaleProfile::slow_edge(),
        }
    }

    fn slug(self) -> &'static str {
        match self {
            Profile::FastGpu => "fast-gpu",
            Profile::SlowEdge => "slow-edge",
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AblateArg {
    FixedBoth,
    FixedBackbone,
    SearchedTaskOnly,
    SearchedHwAware,
    SingleOpSweep,
}

impl AblateArg {
    fn mode(self) -> AblationMode {
        match self {
            AblateArg::FixedBoth => AblationMode::FixedBoth,
            AblateArg::FixedBackbone => AblationMode::FixedBackbone,
            AblateArg::SearchedTaskOnly => AblationMode::SearchedTaskOnly,
            AblateArg::SearchedHwAware => AblationMode::SearchedHwAware,
            AblateArg::SingleOpSweep => AblationMode::SingleOpSweep,
        }
    }

    fn slug(self) -> &'static str {
        match self {
            AblateArg::FixedBoth => "fixed-both",
            AblateArg::FixedBackbone => "fixed-backbone",
            AblateArg::SearchedTaskOnly => "searched-task-only",
            AblateArg::SearchedHwAware => "searched-hw-aware",
            AblateArg::SingleOpSweep => "single-op-sweep",
        }
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)
        .context("loading run configuration")?;
    match cli.command {
        Command::GenData => cmd_gen_data(&cfg),
        Command::GenLut { profile, out } => cmd_gen_lut(&cfg, profile, out),
        Command::TrainSupernet => cmd_train_supernet(&cfg),
        Command::Search => cmd_search(&cfg),
        Command::Ablate { mode } => cmd_ablate(&cfg, mode),
        Command::ExportFront { log, out } => cmd_export_front(&cfg, &log, out),
        Command::ExportGraph { log, candidate, out } => {
            cmd_export_graph(&cfg, &log, candidate, out)
        }
    }
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path)
        .with_context(|| format!("creating output directory {}", path.display()))
}

fn cmd_gen_data(cfg: &RunConfig) -> Result<()> {
    ensure_dir(&cfg.output_dir)?;
    let (train, val, test) =
        generate_all(&cfg.dataset, cfg.seed).context("generating synthetic dataset")?;
    for (split, ds) in [(Split::Train, &train), (Split::Val, &val), (Split::Test, &test)] {
        let path = cfg.data_path(split);
        ds.save(&path)
            .with_context(|| format!("writing {} split", split.name()))?;
        println!("wrote {} ({} examples)", path.display(), ds.len());
    }
    Ok(())
}

fn cmd_gen_lut(cfg: &RunConfig, profile: Profile, out: Option<PathBuf>) -> Result<()> {
    let path =
        out.unwrap_or_else(|| cfg.output_dir.join(format!("lut-{}.json", profile.slug())));
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    let lut = synth_device(cfg.seed, &profile.scale(), &cfg.space)
        .context("synthesizing device profile")?;
    save_lut(&lut, &path).context("writing device LUT")?;
    println!(
        "wrote {} (device {}, {} layer entries, {} fusion entries)",
        path.display(),
        lut.device(),
        lut.layer_entries().count(),
        lut.fusion_entries().count()
    );
    Ok(())
}

fn load_split(cfg: &RunConfig, split: Split) -> Result<MultimodalDataset> {
    MultimodalDataset::load(&cfg.data_path(split))
        .with_context(|| format!("loading {} split (run gen-data first?)", split.name()))
}

fn cmd_train_supernet(cfg: &RunConfig) -> Result<()> {
    let train = load_split(cfg, Split::Train)?;
    ensure_dir(&cfg.output_dir)?;
    let tcfg = cfg.supernet_train_config();
    for info in train.modalities() {
        let mut sup = ElasticSupernet::new(
            &info.name,
            cfg.space.clone(),
            info.channels,
            cfg.supernet_base,
            NUM_CLASSES,
            cfg.seed,
        )
        .with_context(|| format!("building {} supernet", info.name))?;
        let trace = train_supernet(&mut sup, &train, &tcfg)
            .with_context(|| format!("training {} supernet", info.name))?;
        let path = cfg.supernet_path(&info.name);
        sup.save(&path)
            .with_context(|| format!("writing {} checkpoint", info.name))?;
        let mut csv = String::from("epoch,loss\n");
        for (i, loss) in trace.iter().enumerate() {
            csv.push_str(&format!("{},{}\n", i + 1, loss));
        }
        let trace_path = cfg.supernet_trace_path(&info.name);
        fs::write(&trace_path, csv)
            .with_context(|| format!("writing {} loss trace", info.name))?;
        println!(
            "trained {}: epoch loss {:.4} -> {:.4}; wrote {}",
            info.name,
            trace.first().copied().unwrap_or(f64::NAN),
            trace.last().copied().unwrap_or(f64::NAN),
            path.display()
        );
    }
    Ok(())
}

/// Everything the search and the ablations need from disk.
struct Prereqs {
    train: MultimodalDataset,
    val: MultimodalDataset,
    supernets: Vec<ElasticSupernet>,
    lut: DeviceLut,
}

impl Prereqs {
    fn load(cfg: &RunConfig) -> Result<Prereqs> {
        let train = load_split(cfg, Split::Train)?;
        let val = load_split(cfg, Split::Val)?;
        let supernets = train
            .modalities()
            .iter()
            .map(|info| {
                ElasticSupernet::load(&cfg.supernet_path(&info.name)).with_context(|| {
                    format!("loading {} checkpoint (run train-supernet first?)", info.name)
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let lut = load_lut(&cfg.lut_path, &cfg.space)
            .with_context(|| format!("loading device LUT {}", cfg.lut_path.display()))?;
        Ok(Prereqs { train, val, supernets, lut })
    }

    fn context(&self) -> SearchContext<'_> {
        SearchContext {
            supernets: &self.supernets,
            lut: &self.lut,
            train: &self.train,
            val: &self.val,
        }
    }

    fn modalities(&self) -> Vec<String> {
        self.train.modalities().iter().map(|m| m.name.clone()).collect()
    }
}

fn write_front(
    cfg: &RunConfig,
    log: &[RunRecord],
    front: &[RunRecord],
    modalities: &[String],
    path: &Path,
) -> Result<()> {
    let csv = exports::front_csv(log, front, modalities, &cfg.space)
        .context("assembling front CSV")?;
    fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn cmd_search(cfg: &RunConfig) -> Result<()> {
    let pre = Prereqs::load(cfg)?;
    ensure_dir(&cfg.output_dir)?;
    let ecfg: EngineConfig = cfg.engine_config();
    let log_path = cfg.log_path();
    let mut log_file = fs::File::create(&log_path)
        .with_context(|| format!("creating {}", log_path.display()))?;
    // Stream records as they are produced so an interrupted run still
    // leaves a usable partial log.
    let mut on_record = |rec: &RunRecord| -> fusenas_core::Result<()> {
        let line = serde_json::to_string(rec)
            .map_err(|e| fusenas_core::Error::parse(log_path.display().to_string(), e.to_string()))?;
        writeln!(log_file, "{line}")
            .and_then(|_| log_file.flush())
            .map_err(|e| fusenas_core::Error::io(log_path.display().to_string(), e))
    };
    let outcome = engine::run(&ecfg, &pre.context(), &mut on_record).context("running search")?;

    let modalities = pre.modalities();
    write_front(cfg, &outcome.log, &outcome.front, &modalities, &cfg.front_path())?;
    for rec in &outcome.front {
        let dot = exports::graph_dot(rec);
        let path = cfg.graph_path(rec.candidate_id);
        fs::write(&path, dot).with_context(|| format!("writing {}", path.display()))?;
    }
    println!(
        "evaluated {} candidates over {} generations",
        outcome.log.len(),
        cfg.generations
    );
    if let Some(best) = outcome
        .front
        .iter()
        .max_by(|a, b| a.multimodal.acc.total_cmp(&b.multimodal.acc))
    {
        println!(
            "front: {} members; best accuracy {:.4} at {:.3} ms / {:.3} mJ (candidate {})",
            outcome.front.len(),
            best.multimodal.acc,
            best.multimodal.lat_ms,
            best.multimodal.ergy_mj,
            best.candidate_id
        );
    } else {
        println!("front: empty (zero-generation run)");
    }
    println!(
        "wrote {}, {}, {} graph files",
        log_path.display(),
        cfg.front_path().display(),
        outcome.front.len()
    );
    Ok(())
}

fn cmd_ablate(cfg: &RunConfig, arg: AblateArg) -> Result<()> {
    let pre = Prereqs::load(cfg)?;
    ensure_dir(&cfg.output_dir)?;
    let rows = engine::ablation_run(arg.mode(), &cfg.engine_config(), &pre.context())
        .with_context(|| format!("running {} ablation", arg.slug()))?;
    let csv = exports::ablation_csv(&rows);
    let path = cfg.output_dir.join(format!("ablation-{}.csv", arg.slug()));
    fs::write(&path, &csv).with_context(|| format!("writing {}", path.display()))?;
    print!("{csv}");
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_export_front(cfg: &RunConfig, log_path: &Path, out: Option<PathBuf>) -> Result<()> {
    let log = exports::read_log(log_path).context("reading run log")?;
    let front = engine::cumulative_front(&log).context("ranking the log")?;
    // Modalities come from the records themselves; an empty log falls
    // back to the fixed task layout so the header is still complete.
    let modalities: Vec<String> = match log.first() {
        Some(rec) => rec.genome.backbones.iter().map(|b| b.modality.clone()).collect(),
        None => (0..NUM_MODALITIES).map(|i| format!("m{i}")).collect(),
    };
    let path = out.unwrap_or_else(|| cfg.front_path());
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    write_front(cfg, &log, &front, &modalities, &path)?;
    println!("wrote {} ({} front members)", path.display(), front.len());
    Ok(())
}

fn cmd_export_graph(
    cfg: &RunConfig,
    log_path: &Path,
    candidate: Option<u64>,
    out: Option<PathBuf>,
) -> Result<()> {
    let log = exports::read_log(log_path).context("reading run log")?;
    let rec: RunRecord = match candidate {
        Some(id) => log
            .iter()
            .find(|r| r.candidate_id == id)
            .cloned()
            .ok_or_else(|| anyhow!("candidate {id} is not in the log"))?,
        None => {
            let front = engine::cumulative_front(&log).context("ranking the log")?;
            // Most accurate front member; ties go to the earlier candidate.
            front
                .into_iter()
                .max_by(|a, b| {
                    a.multimodal
                        .acc
                        .total_cmp(&b.multimodal.acc)
                        .then(b.candidate_id.cmp(&a.candidate_id))
                })
                .ok_or_else(|| anyhow!("the log is empty; nothing to render"))?
        }
    };
    let path = out.unwrap_or_else(|| cfg.graph_path(rec.candidate_id));
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    fs::write(&path, exports::graph_dot(&rec))
        .with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {} (candidate {})", path.display(), rec.candidate_id);
    Ok(())
}
