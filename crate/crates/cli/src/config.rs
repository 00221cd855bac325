//! Run configuration: a TOML file supplies any subset of fields, command
//! line flags override it, and everything is range-checked with errors
//! that name the offending field.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use fusenas_core::data::{Split, SyntheticTaskSpec};
use fusenas_core::engine::EngineConfig;
use fusenas_core::fusion::{FusionTrainConfig, LossExponents};
use fusenas_core::par::Parallelism;
use fusenas_core::searchspace::{MacroBounds, SpaceConfig};
use fusenas_core::supernet::SupernetTrainConfig;
use fusenas_core::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub generations: usize,
    pub population: usize,
    pub p_mut: f64,
    pub p_cross: f64,
    pub stage_one_fraction: f64,
    pub elite_fraction: f64,
    pub supernet_epochs: usize,
    pub supernet_batch: usize,
    /// Stem width of every supernet; block widths scale from it.
    pub supernet_base: usize,
    pub fusion_epochs: usize,
    pub fusion_batch: usize,
    /// Channel width fused sources are projected to.
    pub fusion_width: usize,
    /// Loss exponents: task^a + latency^b + energy^c.
    pub exponent_a: f64,
    pub exponent_b: f64,
    pub exponent_c: f64,
    pub eval_batch: usize,
    /// Supernet block whose features feed fusion; absent = last block.
    pub tap_block: Option<usize>,
    pub random_pairing: bool,
    pub cache_fusion: bool,
    /// Disable the rayon pool; results are identical either way.
    pub sequential: bool,
    pub lut_path: PathBuf,
    pub output_dir: PathBuf,
    pub dataset: SyntheticTaskSpec,
    pub macro_bounds: MacroBounds,
    pub space: SpaceConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            // Desk-scale budget; the paper-scale run is 30 generations of
            // 128 with top-quartile selection.
            generations: 6,
            population: 16,
            p_mut: 0.4,
            p_cross: 0.8,
            stage_one_fraction: 0.25,
            elite_fraction: 0.5,
            supernet_epochs: 8,
            supernet_batch: 64,
            supernet_base: 4,
            fusion_epochs: 25,
            fusion_batch: 32,
            fusion_width: 8,
            exponent_a: 1.0,
            exponent_b: 1.0,
            exponent_c: 1.0,
            eval_batch: 256,
            tap_block: None,
            random_pairing: false,
            cache_fusion: false,
            sequential: false,
            lut_path: PathBuf::from("out/lut-fast-gpu.json"),
            output_dir: PathBuf::from("out"),
            dataset: SyntheticTaskSpec::default(),
            macro_bounds: MacroBounds::default(),
            space: SpaceConfig::default(),
        }
    }
}

/// Command-line overrides for every scalar [`RunConfig`] field. The
/// search-space choice lists are config-file only. Boolean flags can
/// switch a behavior on but not back off.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub generations: Option<usize>,
    #[arg(long, global = true)]
    pub population: Option<usize>,
    #[arg(long, global = true)]
    pub p_mut: Option<f64>,
    #[arg(long, global = true)]
    pub p_cross: Option<f64>,
    #[arg(long, global = true)]
    pub stage_one_fraction: Option<f64>,
    #[arg(long, global = true)]
    pub elite_fraction: Option<f64>,
    #[arg(long, global = true)]
    pub supernet_epochs: Option<usize>,
    #[arg(long, global = true)]
    pub supernet_batch: Option<usize>,
    #[arg(long, global = true)]
    pub supernet_base: Option<usize>,
    #[arg(long, global = true)]
    pub fusion_epochs: Option<usize>,
    #[arg(long, global = true)]
    pub fusion_batch: Option<usize>,
    #[arg(long, global = true)]
    pub fusion_width: Option<usize>,
    #[arg(long, global = true)]
    pub exponent_a: Option<f64>,
    #[arg(long, global = true)]
    pub exponent_b: Option<f64>,
    #[arg(long, global = true)]
    pub exponent_c: Option<f64>,
    #[arg(long, global = true)]
    pub eval_batch: Option<usize>,
    #[arg(long, global = true)]
    pub tap_block: Option<usize>,
    #[arg(long, global = true)]
    pub random_pairing: bool,
    #[arg(long, global = true)]
    pub cache_fusion: bool,
    #[arg(long, global = true)]
    pub sequential: bool,
    #[arg(long, global = true)]
    pub lut_path: Option<PathBuf>,
    /// Where artifacts land; FUSENAS_OUT_DIR overrides the config file,
    /// the flag overrides both.
    #[arg(long, global = true, env = "FUSENAS_OUT_DIR")]
    pub output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub train_samples: Option<usize>,
    #[arg(long, global = true)]
    pub val_samples: Option<usize>,
    #[arg(long, global = true)]
    pub test_samples: Option<usize>,
    #[arg(long, global = true)]
    pub signal_len: Option<usize>,
    #[arg(long, global = true)]
    pub channels: Option<usize>,
    #[arg(long, global = true)]
    pub noise_sigma: Option<f64>,
    #[arg(long, global = true)]
    pub cells_min: Option<usize>,
    #[arg(long, global = true)]
    pub cells_max: Option<usize>,
    #[arg(long, global = true)]
    pub nodes_min: Option<usize>,
    #[arg(long, global = true)]
    pub nodes_max: Option<usize>,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        macro_rules! set {
            ($field:ident) => {
                if let Some(v) = &self.$field {
                    cfg.$field = v.clone();
                }
            };
            ($field:ident, $($path:ident).+) => {
                if let Some(v) = &self.$field {
                    cfg.$($path).+ = v.clone();
                }
            };
        }
        set!(seed);
        set!(generations);
        set!(population);
        set!(p_mut);
        set!(p_cross);
        set!(stage_one_fraction);
        set!(elite_fraction);
        set!(supernet_epochs);
        set!(supernet_batch);
        set!(supernet_base);
        set!(fusion_epochs);
        set!(fusion_batch);
        set!(fusion_width);
        set!(exponent_a);
        set!(exponent_b);
        set!(exponent_c);
        set!(eval_batch);
        set!(lut_path);
        set!(output_dir);
        set!(train_samples, dataset.train_samples);
        set!(val_samples, dataset.val_samples);
        set!(test_samples, dataset.test_samples);
        set!(signal_len, dataset.signal_len);
        set!(channels, dataset.channels);
        set!(noise_sigma, dataset.noise_sigma);
        set!(cells_min, macro_bounds.cells_min);
        set!(cells_max, macro_bounds.cells_max);
        set!(nodes_min, macro_bounds.nodes_min);
        set!(nodes_max, macro_bounds.nodes_max);
        if self.tap_block.is_some() {
            cfg.tap_block = self.tap_block;
        }
        if self.random_pairing {
            cfg.random_pairing = true;
        }
        if self.cache_fusion {
            cfg.cache_fusion = true;
        }
        if self.sequential {
            cfg.sequential = true;
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig> {
        let mut cfg = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| Error::io(p.display().to_string(), e))?;
                toml::from_str(&text)
                    .map_err(|e| Error::parse(p.display().to_string(), e.to_string()))?
            }
        };
        overrides.apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_mut", self.p_mut), ("p_cross", self.p_cross)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(name, format!("{p} outside [0, 1]")));
            }
        }
        for (name, f) in [
            ("stage_one_fraction", self.stage_one_fraction),
            ("elite_fraction", self.elite_fraction),
        ] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::invalid(name, format!("{f} outside (0, 1]")));
            }
        }
        for (name, v) in [
            ("exponent_a", self.exponent_a),
            ("exponent_b", self.exponent_b),
            ("exponent_c", self.exponent_c),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(name, format!("{v} must be finite and >= 0")));
            }
        }
        for (name, v) in [
            ("population", self.population),
            ("supernet_batch", self.supernet_batch),
            ("supernet_base", self.supernet_base),
            ("fusion_batch", self.fusion_batch),
            ("fusion_width", self.fusion_width),
            ("eval_batch", self.eval_batch),
        ] {
            if v == 0 {
                return Err(Error::invalid(name, "must be positive"));
            }
        }
        if let Some(tap) = self.tap_block {
            if tap >= self.space.num_blocks {
                return Err(Error::invalid(
                    "tap_block",
                    format!("block {tap} outside the {}-block space", self.space.num_blocks),
                ));
            }
        }
        self.dataset.validate()?;
        self.macro_bounds.validate()?;
        self.space.validate()
    }

    pub fn data_path(&self, split: Split) -> PathBuf {
        self.output_dir.join(format!("data-{}.jsonl", split.name()))
    }

    pub fn supernet_path(&self, modality: &str) -> PathBuf {
        self.output_dir.join(format!("supernet-{modality}.json"))
    }

    pub fn supernet_trace_path(&self, modality: &str) -> PathBuf {
        self.output_dir.join(format!("supernet-{modality}-loss.csv"))
    }

    pub fn log_path(&self) -> PathBuf {
        self.output_dir.join("search-log.jsonl")
    }

    pub fn front_path(&self) -> PathBuf {
        self.output_dir.join("front.csv")
    }

    pub fn graph_path(&self, candidate_id: u64) -> PathBuf {
        self.output_dir.join(format!("graph-{candidate_id}.dot"))
    }

    pub fn supernet_train_config(&self) -> SupernetTrainConfig {
        SupernetTrainConfig {
            epochs: self.supernet_epochs,
            batch_size: self.supernet_batch,
            seed: self.seed,
            ..SupernetTrainConfig::default()
        }
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            seed: self.seed,
            generations: self.generations,
            population_size: self.population,
            p_mut: self.p_mut,
            p_cross: self.p_cross,
            stage_one_fraction: self.stage_one_fraction,
            elite_fraction: self.elite_fraction,
            macro_bounds: self.macro_bounds,
            fusion: FusionTrainConfig {
                epochs: self.fusion_epochs,
                batch_size: self.fusion_batch,
                exponents: LossExponents {
                    a: self.exponent_a,
                    b: self.exponent_b,
                    c: self.exponent_c,
                },
                ..FusionTrainConfig::default()
            },
            fusion_width: self.fusion_width,
            tap_block: self.tap_block,
            eval_batch: self.eval_batch,
            random_pairing: self.random_pairing,
            cache_fusion: self.cache_fusion,
            parallelism: if self.sequential {
                Parallelism::Sequential
            } else {
                Parallelism::Rayon
            },
        }
    }
}
