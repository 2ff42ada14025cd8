use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffusion::{ModelSpec, ScheduleKind, TrainConfig};
use crate::error::{Error, Result};
use crate::fusion::{EtaSchedule, FusionConfig, TimestepPolicy};
use crate::rng::derive_seed;
use crate::turbsim::PAPER_CN2_GRID;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Paper,
    Desk,
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            _ => Err(Error::Config(format!("unknown preset '{s}' (expected paper or desk)"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Paper => "paper",
            Preset::Desk => "desk",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub size: usize,
    pub channels: usize,
    pub train_scenes: usize,
    pub eval_scenes: usize,
    pub cn2_grid: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    /// Write a grid of samples every this many steps; 0 disables.
    pub sample_every: usize,
}

impl TrainSection {
    fn from_train(t: &TrainConfig, sample_every: usize) -> Self {
        TrainSection {
            steps: t.steps,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            warmup_fraction: t.warmup_fraction,
            sample_every,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            warmup_fraction: self.warmup_fraction,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FuseSection {
    pub iterations: usize,
    pub eta_start: f64,
    pub eta_end: f64,
    pub lambda_prior: f64,
    pub lambda_lik: f64,
    pub t_start_fraction: f64,
    /// Fixed fusion seed; derived from the global seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub policy: TimestepPolicy,
    pub init_noise: f64,
    pub eta_schedule: EtaSchedule,
    #[serde(default)]
    pub final_denoise: bool,
    /// Write per-iteration diagnostics CSV.
    pub diagnostics: bool,
}

impl From<&FusionConfig> for FuseSection {
    fn from(c: &FusionConfig) -> Self {
        FuseSection {
            iterations: c.iterations,
            eta_start: c.eta_start,
            eta_end: c.eta_end,
            lambda_prior: c.lambda_prior,
            lambda_lik: c.lambda_lik,
            t_start_fraction: c.t_start_fraction,
            seed: None,
            policy: c.policy,
            init_noise: c.init_noise,
            eta_schedule: c.eta_schedule,
            final_denoise: c.final_denoise,
            diagnostics: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Images processed together by restore; results do not depend on it.
    pub batch_size: usize,
}

/// Fully resolved configuration of a pipeline run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub threads: usize,
    pub data: DataSection,
    pub model: ModelSpec,
    pub train_prior: TrainSection,
    pub train_restore: TrainSection,
    pub fuse: FuseSection,
    pub eval: EvalSection,
}

/// Values given on the command line; each one overrides file and preset.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub threads: Option<usize>,
}

impl RunConfig {
    /// 256x256 RGB, 50k steps at batch 8 with the optimiser settings of the reference setup.
    /// Not runnable to completion on a desk machine.
    pub fn paper() -> Self {
        let train = TrainSection::from_train(&TrainConfig::paper(), 5_000);
        RunConfig {
            preset: Preset::Paper,
            seed: 0,
            out_dir: "runs/paper".into(),
            threads: 8,
            data: DataSection { size: 256, channels: 3, train_scenes: 1024, eval_scenes: 5, cn2_grid: PAPER_CN2_GRID.to_vec() },
            model: ModelSpec { widths: vec![64, 128, 256, 256], time_dim: 128, schedule: "cosine".into(), timesteps: 1000 },
            train_prior: train.clone(),
            train_restore: train,
            fuse: FuseSection::from(&preset_fusion()),
            eval: EvalSection { batch_size: 4 },
        }
    }

    /// 64x64 grayscale, T=200, 5k steps.
    pub fn desk() -> Self {
        let train = TrainSection::from_train(&TrainConfig::desk(), 1_000);
        RunConfig {
            preset: Preset::Desk,
            seed: 0,
            out_dir: "runs/desk".into(),
            threads: 8,
            data: DataSection { size: 64, channels: 1, train_scenes: 128, eval_scenes: 5, cn2_grid: PAPER_CN2_GRID.to_vec() },
            model: ModelSpec::desk(),
            train_prior: train.clone(),
            train_restore: train,
            fuse: FuseSection::from(&preset_fusion()),
            eval: EvalSection { batch_size: 16 },
        }
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Paper => Self::paper(),
            Preset::Desk => Self::desk(),
        }
    }

    /// Preset defaults, overlaid by the keys present in `file_text`, overlaid by `flags`.
    pub fn resolve(preset: Option<Preset>, file_text: Option<&str>, flags: &Overrides) -> Result<Self> {
        let file: Option<toml::Table> = file_text
            .map(|t| t.parse::<toml::Table>().map_err(|e| Error::Config(format!("config parse: {e}"))))
            .transpose()?;
        let file_preset = file
            .as_ref()
            .and_then(|f| f.get("preset"))
            .map(|v| v.as_str().ok_or_else(|| Error::Config("preset must be a string".into())).and_then(str::parse))
            .transpose()?;
        let base = Self::preset(preset.or(file_preset).unwrap_or(Preset::Desk));
        let mut merged = toml::Table::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(f) = file {
            merge(&mut merged, f);
        }
        if let Some(p) = preset {
            merged.insert("preset".into(), toml::Value::String(p.to_string()));
        }
        let mut cfg: RunConfig = merged.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if let Some(s) = flags.seed {
            cfg.seed = s;
        }
        if let Some(o) = &flags.out_dir {
            cfg.out_dir = o.clone();
        }
        if let Some(t) = flags.threads {
            cfg.threads = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, preset: Option<Preset>, flags: &Overrides) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::resolve(preset, Some(&text), flags)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serialises")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        crate::diffusion::validate_image_shape(self.data.channels, self.data.size, self.data.size)
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.data.train_scenes == 0 || self.data.eval_scenes == 0 || self.data.cn2_grid.is_empty() {
            return bad("data needs train_scenes, eval_scenes and cn2_grid to be non-empty".into());
        }
        for &c in &self.data.cn2_grid {
            crate::turbsim::cn2_to_bucket(c).map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.threads == 0 {
            return bad("threads must be at least 1".into());
        }
        self.model.schedule.parse::<ScheduleKind>().map_err(|e| Error::Config(e.to_string()))?;
        if self.model.timesteps < 2 {
            return bad("model.timesteps must be at least 2".into());
        }
        self.model.unet(self.data.channels, self.data.channels).validate().map_err(|e| Error::Config(e.to_string()))?;
        let mult = 1usize << (self.model.widths.len() - 1);
        if self.data.size % mult != 0 {
            return bad(format!("image size {} not divisible by {mult} for {} levels", self.data.size, self.model.widths.len()));
        }
        for (name, t) in [("train_prior", &self.train_prior), ("train_restore", &self.train_restore)] {
            t.train_config(0).validate().map_err(|e| Error::Config(format!("{name}: {e}")))?;
        }
        self.fusion_config().validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.eval.batch_size == 0 {
            return bad("eval.batch_size must be at least 1".into());
        }
        Ok(())
    }

    pub fn fusion_config(&self) -> FusionConfig {
        let f = &self.fuse;
        FusionConfig {
            iterations: f.iterations,
            eta_start: f.eta_start,
            eta_end: f.eta_end,
            lambda_prior: f.lambda_prior,
            lambda_lik: f.lambda_lik,
            t_start_fraction: f.t_start_fraction,
            seed: f.seed.unwrap_or_else(|| derive_seed(self.seed, "fuse", 0)),
            policy: f.policy,
            init_noise: f.init_noise,
            eta_schedule: f.eta_schedule,
            final_denoise: f.final_denoise,
        }
    }
}

/// Step sizes follow the noise level; the fixed geometric decay mixes too slowly for 400 iterations.
fn preset_fusion() -> FusionConfig {
    FusionConfig { eta_schedule: EtaSchedule::NoiseScaled, eta_start: 0.8, final_denoise: true, ..FusionConfig::default() }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
