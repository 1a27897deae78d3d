//! Per-scene intrusive metrics over a manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use avsm_core::metrics::{si_sdr_samples, stoi};
use avsm_core::model::{Model, ModelConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::load_checkpoint;
use crate::error::{Error, Result};
use crate::manifest::{load_manifest, manifest_dir};
use crate::train::load_scene;

pub const REPORT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneMetrics {
    pub scene_id: String,
    pub stoi: f64,
    pub si_sdr_db: f64,
    pub si_sdr_improvement_db: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsMean {
    pub stoi: f64,
    pub si_sdr_db: f64,
    pub si_sdr_improvement_db: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub version: u32,
    /// `passthrough` or the checkpoint file name.
    pub method: String,
    /// The evaluated model's configuration; absent for passthrough.
    pub model: Option<ModelConfig>,
    pub rows: Vec<SceneMetrics>,
    pub mean: MetricsMean,
}

impl MetricsReport {
    pub fn new(method: String, model: Option<ModelConfig>, rows: Vec<SceneMetrics>) -> Self {
        let n = rows.len().max(1) as f64;
        let mut mean = MetricsMean::default();
        for r in &rows {
            mean.stoi += r.stoi;
            mean.si_sdr_db += r.si_sdr_db;
            mean.si_sdr_improvement_db += r.si_sdr_improvement_db;
        }
        mean.stoi /= n;
        mean.si_sdr_db /= n;
        mean.si_sdr_improvement_db /= n;
        MetricsReport { version: REPORT_VERSION, method, model, rows, mean }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Aligned plain-text table, one row per scene plus the mean.
    pub fn to_table(&self) -> String {
        let id_w = self.rows.iter().map(|r| r.scene_id.len()).chain([5]).max().unwrap_or(5);
        let meth_w = self.method.len().max(6);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<meth_w$}  {:<id_w$}  {:>7}  {:>10}  {:>10}",
            "Method", "Scene", "STOI", "SI-SDR", "SI-SDRi"
        );
        let rule = meth_w + id_w + 7 + 10 + 10 + 8;
        let _ = writeln!(out, "{}", "-".repeat(rule));
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<meth_w$}  {:<id_w$}  {:>7.4}  {:>10.3}  {:>10.3}",
                self.method, r.scene_id, r.stoi, r.si_sdr_db, r.si_sdr_improvement_db
            );
        }
        let _ = writeln!(out, "{}", "-".repeat(rule));
        let _ = writeln!(
            out,
            "{:<meth_w$}  {:<id_w$}  {:>7.4}  {:>10.3}  {:>10.3}",
            self.method, "mean", self.mean.stoi, self.mean.si_sdr_db, self.mean.si_sdr_improvement_db
        );
        out
    }
}

#[derive(Clone, Debug)]
pub enum EvalSource {
    /// Scores the noisy input itself.
    Passthrough,
    Checkpoint(PathBuf),
}

/// Scores every scene of the manifest. Rows follow manifest order.
pub fn evaluate(manifest_path: &Path, source: &EvalSource) -> Result<MetricsReport> {
    let manifest = load_manifest(manifest_path)?;
    let base = manifest_dir(manifest_path);
    let (method, model) = match source {
        EvalSource::Passthrough => ("passthrough".to_string(), None),
        EvalSource::Checkpoint(p) => {
            let name = p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned());
            (name, Some(load_checkpoint(p)?.into_model()?))
        }
    };
    if let Some(m) = &model {
        if m.config().use_visual {
            if let Some(s) = manifest.scenes.iter().find(|s| s.visual_path.is_none()) {
                return Err(Error::Config(format!("use_visual is true but scene `{}` has no visual_path", s.scene_id)));
            }
        }
    }
    let rows = manifest
        .scenes
        .par_iter()
        .map(|spec| score_scene(&manifest, base, &spec.scene_id, model.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport::new(method, model.map(|m| m.config().clone()), rows))
}

fn score_scene(manifest: &crate::manifest::SceneManifest, base: &Path, id: &str, model: Option<&Model>) -> Result<SceneMetrics> {
    let scene = load_scene(manifest, base, id)?;
    let processed = match model {
        None => scene.noisy.clone(),
        Some(m) => m.forward(&scene.noisy, scene.visual.as_ref())?.enhanced,
    };
    let sdr = si_sdr_samples(&scene.clean.samples, &processed.samples)?;
    let base_sdr = si_sdr_samples(&scene.clean.samples, &scene.noisy.samples)?;
    Ok(SceneMetrics {
        scene_id: id.to_string(),
        stoi: stoi(&scene.clean, &processed)?,
        si_sdr_db: sdr,
        si_sdr_improvement_db: sdr - base_sdr,
    })
}

/// Evaluates and writes the JSON report to `out` and the table next to it
/// with a `.txt` extension.
pub fn evaluate_manifest(manifest_path: &Path, source: &EvalSource, out: &Path) -> Result<MetricsReport> {
    let report = evaluate(manifest_path, source)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(out, report.to_json()).map_err(|e| Error::io(out, e))?;
    let table = out.with_extension("txt");
    std::fs::write(&table, report.to_table()).map_err(|e| Error::io(&table, e))?;
    Ok(report)
}
