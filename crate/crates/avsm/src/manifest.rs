//! Scene manifests, file-backed mixing and the toy corpus generator.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use avsm_core::data::{mix_sources, synthesize_sources, MixOutput, MixSource, SceneSpec, ToyCorpusConfig};
use avsm_core::dsp::AudioBuffer;
use avsm_core::model::{stub_visual_encoder, VisualEmbeddingSequence};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vemb::{read_vemb, write_vemb};
use crate::wav::{read_wav, write_wav, WAV_SAMPLE_RATE};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Scene list; relative paths resolve against the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneManifest {
    pub version: u32,
    pub sample_rate: u32,
    pub scenes: Vec<SceneSpec>,
}

impl SceneManifest {
    pub fn new(scenes: Vec<SceneSpec>) -> Self {
        SceneManifest { version: MANIFEST_VERSION, sample_rate: WAV_SAMPLE_RATE, scenes }
    }

    pub fn scene(&self, id: &str) -> Option<&SceneSpec> {
        self.scenes.iter().find(|s| s.scene_id == id)
    }

    /// Checks everything that does not touch the filesystem.
    pub fn validate_schema(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::Validation(format!(
                "manifest version {} is not supported (expected {MANIFEST_VERSION})",
                self.version
            )));
        }
        if self.sample_rate != WAV_SAMPLE_RATE {
            return Err(Error::Validation(format!(
                "manifest sample_rate must be {WAV_SAMPLE_RATE}, got {}",
                self.sample_rate
            )));
        }
        let mut seen = BTreeSet::new();
        for s in &self.scenes {
            if !seen.insert(s.scene_id.as_str()) {
                return Err(Error::Validation(format!("duplicate scene_id `{}`", s.scene_id)));
            }
            s.validate().map_err(|e| Error::Validation(e.to_string()))?;
        }
        Ok(())
    }

    /// Schema checks plus: every referenced file exists, and every audio
    /// file is 16 kHz mono 16-bit PCM.
    pub fn validate_files(&self, base: &Path) -> Result<()> {
        self.validate_schema()?;
        let mut dangling = Vec::new();
        for s in &self.scenes {
            for p in scene_paths(s) {
                let full = base.join(p);
                if !full.is_file() {
                    dangling.push(full.display().to_string());
                }
            }
        }
        if !dangling.is_empty() {
            return Err(Error::Validation(format!("missing files: {}", dangling.join(", "))));
        }
        for s in &self.scenes {
            for p in audio_paths(s) {
                let full = base.join(p);
                let r = hound::WavReader::open(&full).map_err(|e| Error::Wav { path: full.clone(), reason: e.to_string() })?;
                let spec = r.spec();
                if spec.sample_rate != WAV_SAMPLE_RATE {
                    return Err(Error::ResampleRequired { path: full, found: spec.sample_rate, expected: WAV_SAMPLE_RATE });
                }
                if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
                    return Err(Error::Validation(format!("{}: must be mono 16-bit PCM", full.display())));
                }
            }
        }
        Ok(())
    }
}

fn audio_paths(s: &SceneSpec) -> impl Iterator<Item = &String> {
    std::iter::once(&s.target_path).chain(&s.interferer_path).chain(&s.noise_path)
}

fn scene_paths(s: &SceneSpec) -> impl Iterator<Item = &String> {
    audio_paths(s).chain(&s.visual_path)
}

pub fn parse_manifest(text: &str, path: &Path) -> Result<SceneManifest> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        Error::Validation(format!("{}: field `{}`: {}", path.display(), e.path(), e.inner()))
    })
}

/// Parses and validates, including the referenced files.
pub fn load_manifest(path: &Path) -> Result<SceneManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m = parse_manifest(&text, path)?;
    m.validate_files(manifest_dir(path))?;
    Ok(m)
}

pub fn manifest_dir(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new("."))
}

pub fn write_manifest(path: &Path, m: &SceneManifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(m).map_err(|e| Error::Validation(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// A mixed scene with the stems needed for an SNR audit.
#[derive(Clone, Debug)]
pub struct MixedScene {
    pub noisy: AudioBuffer,
    pub clean: AudioBuffer,
    pub interferer_scaled: Option<AudioBuffer>,
    pub noise_scaled: Option<AudioBuffer>,
    pub mix: MixOutput,
}

/// Reads the scene's sources from disk and mixes them.
pub fn mix_scene(spec: &SceneSpec, base: &Path) -> Result<MixedScene> {
    spec.validate().map_err(|e| Error::Validation(e.to_string()))?;
    let target = read_wav(&base.join(&spec.target_path))?;
    let interferer = spec.interferer_path.as_ref().map(|p| read_wav(&base.join(p))).transpose()?;
    let noise = spec.noise_path.as_ref().map(|p| read_wav(&base.join(p))).transpose()?;
    let mut sources = Vec::new();
    if let Some(i) = &interferer {
        sources.push(MixSource {
            name: "interferer",
            samples: &i.samples,
            placement: spec.interferer_placement,
            snr_db: spec.snr_interferer_db,
        });
    }
    if let Some(n) = &noise {
        sources.push(MixSource { name: "noise", samples: &n.samples, placement: spec.noise_placement, snr_db: spec.snr_noise_db });
    }
    let mix = mix_sources(&target.samples, &sources)?;
    let buf = |v: &[f64]| AudioBuffer::new(v.to_vec(), WAV_SAMPLE_RATE);
    let mut stems = mix.stems.iter();
    let interferer_scaled = interferer.as_ref().and_then(|_| stems.next()).map(|s| buf(s)).transpose()?;
    let noise_scaled = noise.as_ref().and_then(|_| stems.next()).map(|s| buf(s)).transpose()?;
    Ok(MixedScene { noisy: buf(&mix.noisy)?, clean: buf(&mix.clean)?, interferer_scaled, noise_scaled, mix })
}

pub fn scene_dir(base: &Path, id: &str) -> PathBuf {
    base.join("scenes").join(id)
}

/// Writes `scenes/<id>/{noisy,clean,interferer_scaled,noise_scaled}.wav`.
pub fn write_mixed_scene(base: &Path, id: &str, scene: &MixedScene) -> Result<()> {
    let dir = scene_dir(base, id);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_wav(&dir.join("noisy.wav"), &scene.noisy)?;
    write_wav(&dir.join("clean.wav"), &scene.clean)?;
    if let Some(i) = &scene.interferer_scaled {
        write_wav(&dir.join("interferer_scaled.wav"), i)?;
    }
    if let Some(n) = &scene.noise_scaled {
        write_wav(&dir.join("noise_scaled.wav"), n)?;
    }
    Ok(())
}

/// Pre-mixed noisy/clean pair of a scene, as written by [`write_mixed_scene`].
pub fn read_scene_pair(base: &Path, id: &str) -> Result<(AudioBuffer, AudioBuffer)> {
    let dir = scene_dir(base, id);
    Ok((read_wav(&dir.join("noisy.wav"))?, read_wav(&dir.join("clean.wav"))?))
}

pub fn read_scene_visual(base: &Path, spec: &SceneSpec) -> Result<Option<VisualEmbeddingSequence>> {
    spec.visual_path.as_ref().map(|p| read_vemb(&base.join(p))).transpose()
}

pub fn toy_scene_id(index: usize) -> String {
    format!("scene_{index:04}")
}

/// Synthesizes `n_scenes` scenes under `out_dir`: source WAVs in
/// `sources/`, mixtures and stems in `scenes/<id>/`, stub embeddings in
/// `scenes/<id>.vemb`, and `manifest.json`.
pub fn generate_toy_corpus(n_scenes: usize, seed: u64, out_dir: &Path, cfg: &ToyCorpusConfig) -> Result<SceneManifest> {
    cfg.validate()?;
    let sources = out_dir.join("sources");
    let scenes = out_dir.join("scenes");
    for d in [&sources, &scenes] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let specs = (0..n_scenes)
        .into_par_iter()
        .map(|i| generate_scene(i, seed, out_dir, cfg))
        .collect::<Result<Vec<_>>>()?;
    let manifest = SceneManifest::new(specs);
    write_manifest(&out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

fn generate_scene(index: usize, seed: u64, out_dir: &Path, cfg: &ToyCorpusConfig) -> Result<SceneSpec> {
    let id = toy_scene_id(index);
    let src = synthesize_sources(cfg, seed, index)?;
    let rel = |name: &str| format!("sources/{id}_{name}.wav");
    for (name, samples) in [("target", &src.target), ("interferer", &src.interferer), ("noise", &src.noise)] {
        write_wav(&out_dir.join(rel(name)), &AudioBuffer::new(samples.clone(), cfg.sample_rate)?)?;
    }
    let visual_rel = format!("scenes/{id}.vemb");
    let emb = stub_visual_encoder(Some(&src.video), cfg.visual_dim, seed)
        .ok_or_else(|| Error::Validation("stub encoder produced no embeddings".into()))?;
    write_vemb(&out_dir.join(&visual_rel), &emb)?;
    let spec = SceneSpec {
        scene_id: id.clone(),
        target_path: rel("target"),
        interferer_path: Some(rel("interferer")),
        noise_path: Some(rel("noise")),
        snr_interferer_db: src.snr_interferer_db,
        snr_noise_db: src.snr_noise_db,
        seed,
        interferer_placement: src.interferer_placement,
        noise_placement: src.noise_placement,
        visual_path: Some(visual_rel),
    };
    let mixed = mix_scene(&spec, out_dir)?;
    write_mixed_scene(out_dir, &id, &mixed)?;
    Ok(spec)
}
