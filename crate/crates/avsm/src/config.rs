//! The JSON run configuration shared by `train`, `enhance` and `eval`.

use std::path::{Path, PathBuf};

use avsm_core::autodiff::AdamWConfig;
use avsm_core::loss::LossWeights;
use avsm_core::model::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
    /// Examples averaged per optimizer step.
    pub grad_accum: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let a = AdamWConfig::default();
        OptimizerConfig { lr: a.lr, betas: a.betas, eps: a.eps, weight_decay: a.weight_decay, grad_accum: 2 }
    }
}

impl OptimizerConfig {
    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig { lr: self.lr, betas: self.betas, eps: self.eps, weight_decay: self.weight_decay }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub max_steps: u64,
    /// Optimizer steps between evaluations and checkpoints.
    pub eval_every: u64,
    /// Drives the scene order.
    pub seed: u64,
    /// Scene scored in the log; defaults to the first training scene.
    pub held_scene: Option<String>,
    /// Restricts training to these scene ids; all scenes when absent.
    pub scenes: Option<Vec<String>>,
    /// Stop once the held scene's SI-SDR improvement reaches this many dB.
    pub target_improvement_db: Option<f64>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            max_steps: 2000,
            eval_every: 50,
            seed: 0,
            held_scene: None,
            scenes: None,
            target_improvement_db: None,
        }
    }
}

/// Relative paths resolve against the directory of the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub manifest: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub report_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            manifest: PathBuf::from("corpus/manifest.json"),
            checkpoint_dir: PathBuf::from("run/checkpoints"),
            report_dir: PathBuf::from("run/reports"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub optimizer: OptimizerConfig,
    pub training: TrainingConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let within = |section: &'static str| {
            move |e: avsm_core::Error| match e {
                avsm_core::Error::Config(msg) if msg.starts_with(section) => Error::Config(msg),
                avsm_core::Error::Config(msg) => Error::Config(format!("{section}.{msg}")),
                other => Error::Config(other.to_string()),
            }
        };
        self.model.validate().map_err(within("model"))?;
        self.loss.validate().map_err(within("loss"))?;
        self.optimizer.adamw().validate().map_err(within("optimizer"))?;
        if self.optimizer.grad_accum == 0 {
            return Err(Error::Config("optimizer.grad_accum must be at least 1".into()));
        }
        if self.training.max_steps == 0 {
            return Err(Error::Config("training.max_steps must be at least 1".into()));
        }
        if self.training.eval_every == 0 {
            return Err(Error::Config("training.eval_every must be at least 1".into()));
        }
        if let Some(t) = self.training.target_improvement_db {
            if !t.is_finite() {
                return Err(Error::Config("training.target_improvement_db must be finite".into()));
            }
        }
        Ok(())
    }

    /// Makes relative paths absolute against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.paths.manifest, &mut self.paths.checkpoint_dir, &mut self.paths.report_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

/// Parses a config document; errors name the offending field.
pub fn parse_run_config(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::Config(format!("field `{path}`: {}", e.into_inner()))
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads, validates and resolves paths relative to the file's directory.
pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut cfg = parse_run_config(&text)?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    Ok(cfg)
}
