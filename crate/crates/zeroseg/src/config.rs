//! Run configuration: one JSON file, strict about unknown keys, with dotted
//! CLI overrides (`train.steps=500`) applied before deserialization.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use zeroseg_core::backbone::BackboneConfig;
use zeroseg_core::model::ModelConfig;
use zeroseg_core::optim::AdamWConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub teacher: TeacherConfig,
    pub inference: InferenceConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub steps: u64,
    /// Linear ramp length; the cosine decay covers the remaining steps.
    pub warmup_steps: u64,
    pub batch_size: usize,
    pub base_lr: f32,
    pub min_lr: f32,
    pub weight_decay: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    /// A checkpoint directory is written every this many steps, plus one at
    /// the final step. 0 disables periodic checkpoints (final still written).
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            steps: 200,
            warmup_steps: 20,
            batch_size: 4,
            base_lr: 3e-3,
            min_lr: 1e-5,
            weight_decay: 0.05,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            checkpoint_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.base_lr,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            bail!("train.steps must be positive");
        }
        if self.batch_size == 0 {
            bail!("train.batch_size must be positive");
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            bail!("train.base_lr must be positive, got {}", self.base_lr);
        }
        if !(self.min_lr.is_finite() && self.min_lr >= 0.0 && self.min_lr <= self.base_lr) {
            bail!("train.min_lr must lie in [0, base_lr], got {}", self.min_lr);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherKind {
    /// Deterministic pooled-color projection built into the repo.
    Synthetic,
    /// Pre-extracted per-image feature files supplied by an external encoder.
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherConfig {
    pub kind: TeacherKind,
    /// Embedding width D of the teacher (and of the class table).
    pub dim: usize,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig { kind: TeacherKind::Synthetic, dim: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceConfig {
    /// Minimum best-class cosine a segment needs to escape the background
    /// label. Dataset-scale reference values: 0.95 (VOC), 0.05 (Context),
    /// 0.35 (COCO); the synthetic smoke corpus uses 0.3.
    pub threshold: f32,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig { threshold: 0.3 }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            teacher: TeacherConfig::default(),
            inference: InferenceConfig::default(),
        }
    }
}

impl RunConfig {
    /// The in-repo smoke preset: 64×64 synthetic corpus, desk-scale model,
    /// 200 steps. Everything the end-to-end tests run on.
    pub fn desk_smoke() -> Self {
        RunConfig::default()
    }

    /// Reference hyperparameters at publication scale (224×224 input,
    /// ViT-S/16 encoder, 1.3M-image corpus). Not runnable in this repo —
    /// kept so the desk values can be compared against their origin.
    pub fn full_scale_reference() -> Self {
        let mut cfg = RunConfig::default();
        cfg.model.backbone = BackboneConfig {
            image_size: 224,
            patch_size: 16,
            embed_dim: 384,
            encoder_layers: 12,
            encoder_heads: 6,
            decoder_layers: 8,
            decoder_dim: 512,
            mask_ratio: 0.6,
        };
        cfg.model.teacher_dim = 512;
        cfg.teacher.dim = 512;
        cfg.train.base_lr = LR_PRESETS[0].1;
        cfg.train.weight_decay = 0.05;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(|e| anyhow::anyhow!("model config: {e}"))?;
        self.train.validate()?;
        if self.teacher.dim == 0 {
            bail!("teacher.dim must be positive");
        }
        if self.teacher.dim != self.model.teacher_dim {
            bail!(
                "teacher.dim ({}) must match model.teacher_dim ({})",
                self.teacher.dim,
                self.model.teacher_dim
            );
        }
        if !(-1.0..=1.0).contains(&self.inference.threshold) {
            bail!("inference.threshold must lie in [-1,1], got {}", self.inference.threshold);
        }
        Ok(())
    }
}

/// Both published base learning rates, named by where they appear. The two
/// sources disagree; neither is treated as canonical here.
pub const LR_PRESETS: [(&str, f32); 2] = [("method_section", 1.5e-4), ("supplement_table", 1e-4)];

/// Reads a config file and applies `key.path=value` overrides, where the
/// value is parsed as JSON (bare words fall back to strings). Unknown keys
/// anywhere in the result are rejected.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let mut value: Value = serde_json::from_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))?;
    for spec in overrides {
        apply_override(&mut value, spec)?;
    }
    let cfg: RunConfig = serde_json::from_value(value).context("interpreting config")?;
    cfg.validate()?;
    Ok(cfg)
}

/// Applies dotted-key overrides to an in-memory config — the path taken when
/// a command starts from a built-in preset instead of a file.
pub fn override_config(cfg: RunConfig, overrides: &[String]) -> Result<RunConfig> {
    if overrides.is_empty() {
        cfg.validate()?;
        return Ok(cfg);
    }
    let mut value = serde_json::to_value(&cfg).context("serializing preset")?;
    for spec in overrides {
        apply_override(&mut value, spec)?;
    }
    let cfg: RunConfig = serde_json::from_value(value).context("interpreting config")?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn apply_override(root: &mut Value, spec: &str) -> Result<()> {
    let Some((path, raw)) = spec.split_once('=') else {
        bail!("override `{spec}` must look like key.path=value");
    };
    if path.is_empty() {
        bail!("override `{spec}` has an empty key path");
    }
    let leaf_value: Value =
        serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cursor = root;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        if seg.is_empty() {
            bail!("override `{spec}` has an empty path segment");
        }
        if !cursor.is_object() {
            bail!("override `{spec}`: `{}` is not an object", segments[..i].join("."));
        }
        let map = cursor.as_object_mut().unwrap();
        if i + 1 == segments.len() {
            map.insert(seg.to_string(), leaf_value);
            return Ok(());
        }
        cursor = map.entry(seg.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("loop returns on the last segment");
}

pub fn write_config(path: &Path, cfg: &RunConfig) -> Result<()> {
    let text = serde_json::to_string_pretty(cfg).context("serializing config")?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}
