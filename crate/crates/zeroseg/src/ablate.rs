//! Ablation harness: trains one short run per setting along a chosen axis
//! (view grids, loss terms, or mask ratio) on the synthetic corpus and
//! reports final losses plus smoke-eval mIoU for each row.

use std::fmt;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use zeroseg_core::backbone;
use zeroseg_core::model::TrainExample;
use zeroseg_core::teacher::{multiscale_features, SyntheticTeacher};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::corpus::{self, CorpusSpec};
use crate::formats;
use crate::pipeline;
use crate::store;
use crate::trainer::{self, TrainingSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Grids,
    Losses,
    MaskRatio,
}

impl Axis {
    pub fn parse(s: &str) -> Result<Axis> {
        match s {
            "grids" => Ok(Axis::Grids),
            "losses" => Ok(Axis::Losses),
            "mask_ratio" => Ok(Axis::MaskRatio),
            other => bail!("unknown ablation axis `{other}` (grids | losses | mask_ratio)"),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Axis::Grids => "grids",
            Axis::Losses => "losses",
            Axis::MaskRatio => "mask_ratio",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub recon: f32,
    pub distill: f32,
    #[serde(rename = "match")]
    pub matching: f32,
    pub total: f32,
    pub miou: f32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationTable {
    pub axis: Axis,
    pub rows: Vec<AblationRow>,
}

fn grid_label(grids: &[usize]) -> String {
    grids.iter().map(|k| format!("{k}x{k}")).collect::<Vec<_>>().join("+")
}

/// The per-row configuration edits for each axis. Grid rows sweep which
/// views feed distillation and matching; with only the 1x1 view there is
/// nothing local to match against, so that row turns matching off rather
/// than erroring. Loss rows reproduce the four on/off combinations of
/// multi-scale distillation and segment matching over a fixed grid set.
fn settings(axis: Axis, base: &RunConfig) -> Result<Vec<(String, RunConfig)>> {
    let mut out = Vec::new();
    match axis {
        Axis::Grids => {
            for grids in [vec![1], vec![1, 2], vec![1, 3], vec![1, 4], vec![1, 2, 3, 4]] {
                let mut run = base.clone();
                run.model.grids = grids.clone();
                if grids == [1] {
                    run.model.segment_matching = false;
                }
                out.push((grid_label(&grids), run));
            }
        }
        Axis::Losses => {
            for (label, multi, matching) in [
                ("Base", false, false),
                ("Base+Multi-scale", true, false),
                ("Base+segment matching", false, true),
                ("Base+Multi-scale+segment matching", true, true),
            ] {
                let mut run = base.clone();
                run.model.multiscale_distill = multi;
                run.model.segment_matching = matching;
                out.push((label.to_string(), run));
            }
        }
        Axis::MaskRatio => {
            for ratio in [0.0f32, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8] {
                let mut run = base.clone();
                run.model.backbone.mask_ratio = ratio;
                out.push((format!("{}%", (ratio * 100.0).round() as u32), run));
            }
        }
    }
    for (_, run) in &out {
        run.validate()?;
    }
    Ok(out)
}

/// Builds the training set for one setting directly in memory; grid rows
/// change the view geometry, so features cannot be shared across rows.
fn training_set_for(corpus_dir: &Path, run: &RunConfig) -> Result<TrainingSet> {
    let teacher = SyntheticTeacher::new(run.model.teacher_dim);
    let images = store::list_images(&corpus_dir.join(corpus::IMAGES_DIR))?;
    let size = run.model.backbone.image_size;
    let mut ids = Vec::new();
    let mut examples = Vec::new();
    for (id, path) in images {
        let (image, h, w) =
            formats::read_ppm(&path).with_context(|| format!("reading {}", path.display()))?;
        if (h, w) != (size, size) {
            bail!("{}: expected {size}x{size}, got {w}x{h}", path.display());
        }
        let patches = backbone::patchify(&image, &run.model.backbone)?;
        let features = multiscale_features(&image, size, &run.model.grids, &teacher)?;
        ids.push(id);
        examples.push(TrainExample { patches, features });
    }
    Ok(TrainingSet { ids, examples })
}

/// Runs every setting along `axis` end to end: short train, then smoke-eval
/// against the corpus ground truth. `work_dir` receives the corpus plus one
/// run directory per row (reused by callers that want the checkpoints).
pub fn run_axis(axis: Axis, base: &RunConfig, work_dir: &Path) -> Result<AblationTable> {
    base.validate()?;
    let corpus_dir = work_dir.join("corpus");
    let spec = CorpusSpec {
        image_size: base.model.backbone.image_size,
        teacher_dim: base.model.teacher_dim,
        ..CorpusSpec::default()
    };
    corpus::generate(&corpus_dir, &spec)?;
    let table = corpus::read_class_table(&corpus_dir)?;

    let mut rows = Vec::new();
    for (i, (label, run)) in settings(axis, base)?.into_iter().enumerate() {
        let set = training_set_for(&corpus_dir, &run)?;
        let out = work_dir.join(format!("{axis}-{i:02}"));
        let outcome = trainer::train(&run, &set, &out, None, None)
            .with_context(|| format!("ablation row `{label}`"))?;
        let ckpt = checkpoint::load(&outcome.final_checkpoint)?;
        let summary = pipeline::evaluate_corpus(
            &ckpt.params,
            &run.model,
            &corpus_dir,
            &table,
            run.inference.threshold,
        )
        .with_context(|| format!("evaluating ablation row `{label}`"))?;
        let losses = outcome.final_losses.unwrap_or_default();
        rows.push(AblationRow {
            label,
            recon: losses.recon,
            distill: losses.distill,
            matching: losses.matching,
            total: losses.total,
            miou: summary.miou as f32,
        });
    }
    Ok(AblationTable { axis, rows })
}

pub fn render_table(table: &AblationTable) -> String {
    let mut width = "setting".len();
    for row in &table.rows {
        width = width.max(row.label.len());
    }
    let mut out = format!(
        "{:<width$}  {:>8}  {:>8}  {:>8}  {:>8}  {:>6}\n",
        "setting", "recon", "distill", "match", "total", "miou"
    );
    for row in &table.rows {
        out.push_str(&format!(
            "{:<width$}  {:>8.4}  {:>8.4}  {:>8.4}  {:>8.4}  {:>6.3}\n",
            row.label, row.recon, row.distill, row.matching, row.total, row.miou
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_run() -> RunConfig {
        let mut run = RunConfig::default();
        run.model.backbone.image_size = 32;
        run.model.backbone.embed_dim = 32;
        run.model.backbone.encoder_layers = 2;
        run.model.backbone.decoder_layers = 1;
        run.model.backbone.decoder_dim = 16;
        run.model.seghead.layers = 3;
        run.model.seghead.grouping_after = (1, 2);
        run.model.seghead.stage_tokens = (8, 4);
        run.model.teacher_dim = 16;
        run.teacher.dim = 16;
        run.model.grids = vec![1, 2];
        run.train.steps = 2;
        run.train.warmup_steps = 1;
        run.train.batch_size = 2;
        run.train.checkpoint_every = 0;
        run
    }

    #[test]
    fn loss_axis_enumerates_the_four_combinations() {
        let rows = settings(Axis::Losses, &base_run()).unwrap();
        let labels: Vec<&str> = rows.iter().map(|(l, _)| l.as_str()).collect();
        assert_eq!(
            labels,
            [
                "Base",
                "Base+Multi-scale",
                "Base+segment matching",
                "Base+Multi-scale+segment matching"
            ]
        );
        assert!(!rows[0].1.model.multiscale_distill && !rows[0].1.model.segment_matching);
        assert!(rows[3].1.model.multiscale_distill && rows[3].1.model.segment_matching);
    }

    #[test]
    fn grid_axis_enumerates_five_rows_and_disables_matching_without_local_views() {
        let rows = settings(Axis::Grids, &base_run()).unwrap();
        let labels: Vec<&str> = rows.iter().map(|(l, _)| l.as_str()).collect();
        assert_eq!(labels, ["1x1", "1x1+2x2", "1x1+3x3", "1x1+4x4", "1x1+2x2+3x3+4x4"]);
        assert!(!rows[0].1.model.segment_matching);
        assert!(rows[1].1.model.segment_matching);
    }

    #[test]
    fn mask_ratio_axis_covers_the_published_sweep() {
        let rows = settings(Axis::MaskRatio, &base_run()).unwrap();
        let labels: Vec<&str> = rows.iter().map(|(l, _)| l.as_str()).collect();
        assert_eq!(labels, ["0%", "20%", "30%", "40%", "50%", "60%", "70%", "80%"]);
        assert_eq!(rows[5].1.model.backbone.mask_ratio, 0.6);
    }

    #[test]
    fn unknown_axis_is_rejected() {
        assert!(Axis::parse("optimizer").is_err());
        assert_eq!(Axis::parse("mask_ratio").unwrap(), Axis::MaskRatio);
    }

    #[test]
    fn loss_axis_runs_end_to_end_on_a_tiny_config() {
        let dir = tempfile::tempdir().unwrap();
        let table = run_axis(Axis::Losses, &base_run(), dir.path()).unwrap();
        assert_eq!(table.rows.len(), 4);
        assert!(table.rows.iter().all(|r| r.total.is_finite()));
        // Base rows must not report a matching loss; matching rows must.
        assert_eq!(table.rows[0].matching, 0.0);
        assert!(table.rows[3].matching != 0.0);
        let text = render_table(&table);
        assert!(text.contains("Base+Multi-scale+segment matching"));
    }
}
