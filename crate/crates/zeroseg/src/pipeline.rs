//! Zero-shot inference on files and mIoU evaluation over directories:
//! thin file-level composition of the in-memory model code.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use zeroseg_core::backbone;
use zeroseg_core::evalsuite::ConfusionMatrix;
use zeroseg_core::inference::{
    classify_segments, preprocess_eval_image, render_label_map, ClassEmbeddingTable, LabelMap,
};
use zeroseg_core::model::{infer_image, ModelConfig, ParamSet};

use crate::corpus;
use crate::formats;
use crate::parallel::parallel_map;

/// Segments a single channel-first [3,h,w] image. Inputs whose size differs
/// from the model's are bilinearly resized (short side) and center-cropped
/// first. Fully deterministic: no masking, no noise, hard assignments.
pub fn segment_image(
    params: &ParamSet,
    cfg: &ModelConfig,
    image: &[f32],
    height: usize,
    width: usize,
    table: &ClassEmbeddingTable,
    threshold: f32,
) -> Result<LabelMap> {
    if table.dim() != cfg.teacher_dim {
        bail!(
            "class table dim {} does not match the model's embedding dim {}",
            table.dim(),
            cfg.teacher_dim
        );
    }
    let size = cfg.backbone.image_size;
    let square;
    let pixels = if (height, width) == (size, size) {
        image
    } else {
        square = preprocess_eval_image(image, width, height, size)?;
        &square
    };
    let patches = backbone::patchify(pixels, &cfg.backbone)?;
    let out = infer_image(params, cfg, &patches)?;
    let labels = classify_segments(&out.segment_tokens, out.m, out.dim, table, threshold)?;
    Ok(render_label_map(
        &out.assignment,
        out.n_patches,
        out.m,
        &labels,
        size,
        cfg.backbone.patch_size,
    )?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferArtifacts {
    pub label_map: String,
    pub legend: String,
}

/// File-level inference: reads a PPM, writes `<out_prefix>.pgm` and a JSON
/// legend mapping PGM byte values to class names.
pub fn infer_to_files(
    params: &ParamSet,
    cfg: &ModelConfig,
    image_path: &Path,
    table: &ClassEmbeddingTable,
    threshold: f32,
    out_prefix: &Path,
) -> Result<InferArtifacts> {
    let (image, h, w) = formats::read_ppm(image_path)
        .with_context(|| format!("reading {}", image_path.display()))?;
    let map = segment_image(params, cfg, &image, h, w, table, threshold)?;
    let pgm = out_prefix.with_extension("pgm");
    formats::write_pgm_labels(&pgm, &map.labels, map.height, map.width)?;

    #[derive(Serialize)]
    struct Legend<'a> {
        background_value: u8,
        /// PGM byte value for each class name (class c is stored as c+1).
        classes: Vec<(u8, &'a str)>,
        threshold: f32,
    }
    let legend = Legend {
        background_value: 0,
        classes: table.names().iter().enumerate().map(|(c, n)| (c as u8 + 1, n.as_str())).collect(),
        threshold,
    };
    let legend_path = out_prefix.with_extension("json");
    fs::write(&legend_path, serde_json::to_string_pretty(&legend)? + "\n")?;
    Ok(InferArtifacts {
        label_map: pgm.display().to_string(),
        legend: legend_path.display().to_string(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSummary {
    /// Mean IoU over foreground classes that appear in gt or prediction.
    pub miou: f64,
    pub miou_with_background: f64,
    pub per_class_iou: Vec<(String, Option<f64>)>,
    pub background_iou: Option<f64>,
    pub pixel_count: u64,
}

fn summarize(cm: &ConfusionMatrix, names: &[String]) -> Result<EvalSummary> {
    let fg = cm.miou(false)?;
    let with_bg = cm.miou(true)?;
    Ok(EvalSummary {
        miou: fg.mean,
        miou_with_background: with_bg.mean,
        per_class_iou: names.iter().cloned().zip(fg.per_class.iter().copied()).collect(),
        background_iou: with_bg.background,
        pixel_count: cm.total(),
    })
}

fn label_map_from_pgm(path: &Path) -> Result<LabelMap> {
    let (labels, h, w) =
        formats::read_pgm_labels(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(LabelMap::new(w, h, labels)?)
}

/// Scores a directory of predicted label maps against ground truth. Both
/// directories must contain the same set of `<id>.pgm` files; any id present
/// on only one side is an error listing every offender.
pub fn eval_dirs(pred_dir: &Path, gt_dir: &Path, class_names: &[String]) -> Result<EvalSummary> {
    let list = |dir: &Path| -> Result<BTreeSet<String>> {
        let mut out = BTreeSet::new();
        for entry in
            fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))?
        {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) == Some("pgm") {
                out.insert(path.file_stem().unwrap().to_string_lossy().into_owned());
            }
        }
        Ok(out)
    };
    let pred_ids = list(pred_dir)?;
    let gt_ids = list(gt_dir)?;
    if pred_ids.is_empty() && gt_ids.is_empty() {
        bail!("no .pgm files in either directory");
    }
    let only_pred: Vec<&String> = pred_ids.difference(&gt_ids).collect();
    let only_gt: Vec<&String> = gt_ids.difference(&pred_ids).collect();
    if !only_pred.is_empty() || !only_gt.is_empty() {
        bail!(
            "prediction/ground-truth sets differ; only in predictions: [{}], only in ground truth: [{}]",
            only_pred.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", "),
            only_gt.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", "),
        );
    }

    let ids: Vec<String> = pred_ids.into_iter().collect();
    let partials = parallel_map(&ids, |id| -> Result<ConfusionMatrix> {
        let mut cm = ConfusionMatrix::new(class_names.len());
        let pred = label_map_from_pgm(&pred_dir.join(format!("{id}.pgm")))?;
        let gt = label_map_from_pgm(&gt_dir.join(format!("{id}.pgm")))?;
        cm.accumulate(&pred, &gt).with_context(|| format!("scoring {id}"))?;
        Ok(cm)
    });
    let mut total = ConfusionMatrix::new(class_names.len());
    for partial in partials {
        total.merge(&partial?)?;
    }
    summarize(&total, class_names)
}

/// Runs the model over every image of a generated corpus and scores it
/// against the corpus ground truth in one pass (no files written). The
/// smoke-eval used by the ablation table and the end-to-end tests.
pub fn evaluate_corpus(
    params: &ParamSet,
    cfg: &ModelConfig,
    corpus_dir: &Path,
    table: &ClassEmbeddingTable,
    threshold: f32,
) -> Result<EvalSummary> {
    let images = crate::store::list_images(&corpus_dir.join(corpus::IMAGES_DIR))?;
    let partials = parallel_map(&images, |(id, path)| -> Result<ConfusionMatrix> {
        let (image, h, w) = formats::read_ppm(path)?;
        let pred = segment_image(params, cfg, &image, h, w, table, threshold)?;
        let gt = label_map_from_pgm(&corpus::mask_path(corpus_dir, id))?;
        let mut cm = ConfusionMatrix::new(table.len());
        cm.accumulate(&pred, &gt).with_context(|| format!("scoring {id}"))?;
        Ok(cm)
    });
    let mut total = ConfusionMatrix::new(table.len());
    for partial in partials {
        total.merge(&partial?)?;
    }
    summarize(&total, table.names())
}
