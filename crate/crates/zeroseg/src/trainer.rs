//! The training loop: deterministic sequential batching, warmup+cosine
//! learning rate, per-step JSONL metrics, periodic checkpoints, bit-exact
//! resume, and a last-good checkpoint if the loss ever leaves ℝ.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use zeroseg_core::backbone;
use zeroseg_core::model::{init_params, train_step, ParamSet, StepLosses, TrainExample};
use zeroseg_core::optim::{lr_at, AdamW};
use zeroseg_core::Rng;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::corpus;
use crate::formats;
use crate::store::FeatureStore;

pub const LOG_FILE: &str = "train_log.jsonl";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LogLine {
    pub step: u64,
    pub lr: f32,
    pub recon: f32,
    pub distill: f32,
    #[serde(rename = "match")]
    pub matching: f32,
    pub total: f32,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub steps_run: u64,
    pub final_step: u64,
    pub final_losses: Option<StepLosses>,
    pub final_checkpoint: PathBuf,
    pub log_path: PathBuf,
}

/// One image's training inputs, paired with its id for error messages.
pub struct TrainingSet {
    pub ids: Vec<String>,
    pub examples: Vec<TrainExample>,
}

/// Loads every image the store indexes, in index (= id-sorted) order.
/// Features come from the store, never recomputed, so training consumes
/// exactly what `precompute` wrote.
pub fn load_training_set(
    images_dir: &Path,
    store: &FeatureStore,
    run: &RunConfig,
) -> Result<TrainingSet> {
    let size = run.model.backbone.image_size;
    if store.index.image_size != size {
        bail!(
            "feature store was built at {}px but the model runs at {size}px",
            store.index.image_size
        );
    }
    if store.index.grids != run.model.grids {
        bail!(
            "feature store grids {:?} do not match the configured grids {:?}",
            store.index.grids,
            run.model.grids
        );
    }
    if store.index.dim != run.model.teacher_dim {
        bail!(
            "feature store dim {} does not match model.teacher_dim {}",
            store.index.dim,
            run.model.teacher_dim
        );
    }
    let mut ids = Vec::new();
    let mut examples = Vec::new();
    for id in store.image_ids() {
        let path = images_dir.join(format!("{id}.ppm"));
        let (image, h, w) =
            formats::read_ppm(&path).with_context(|| format!("reading {}", path.display()))?;
        if (h, w) != (size, size) {
            bail!("{}: expected {size}x{size}, got {w}x{h}", path.display());
        }
        let patches = backbone::patchify(&image, &run.model.backbone)?;
        let features = store.features_for(id)?;
        ids.push(id.to_string());
        examples.push(TrainExample { patches, features });
    }
    Ok(TrainingSet { ids, examples })
}

/// Indices of the batch consumed by 0-based step `s`: a deterministic
/// round-robin over the id-sorted corpus, independent of history, so a
/// resumed run selects exactly the batches the uninterrupted run would.
pub fn batch_indices(step: u64, batch_size: usize, n_examples: usize) -> Vec<usize> {
    (0..batch_size)
        .map(|k| ((step as usize).wrapping_mul(batch_size) + k) % n_examples)
        .collect()
}

fn checkpoint_dir(out_dir: &Path, step: u64) -> PathBuf {
    out_dir.join(format!("ckpt-{step:06}"))
}

pub fn abort_checkpoint_dir(out_dir: &Path) -> PathBuf {
    out_dir.join("ckpt-abort")
}

fn params_are_finite(params: &ParamSet) -> bool {
    params.iter().all(|(_, t)| t.data().iter().all(|v| v.is_finite()))
}

/// Trains from scratch or from `resume` up to `train.steps` (or `stop_at`,
/// for deliberately interrupted runs). Appends one JSONL line per step to
/// `train_log.jsonl` in `out_dir` and returns the final checkpoint location.
pub fn train(
    run: &RunConfig,
    set: &TrainingSet,
    out_dir: &Path,
    resume: Option<&Path>,
    stop_at: Option<u64>,
) -> Result<TrainOutcome> {
    run.validate()?;
    if set.examples.is_empty() {
        bail!("training set is empty");
    }
    fs::create_dir_all(out_dir)?;

    let (mut params, mut optimizer, mut rng, start_step) = match resume {
        None => {
            let mut rng = Rng::seed_from_u64(run.train.seed);
            let params = init_params(&run.model, &mut rng)?;
            (params, AdamW::new(run.train.adamw()), rng, 0u64)
        }
        Some(dir) => {
            let ckpt = checkpoint::load(dir)
                .with_context(|| format!("resuming from {}", dir.display()))?;
            if ckpt.config != *run {
                bail!(
                    "checkpoint {} was written under a different configuration; \
                     resume with the same config to keep the run bit-exact",
                    dir.display()
                );
            }
            (ckpt.params, ckpt.optimizer, ckpt.rng, ckpt.step)
        }
    };

    let end_step = stop_at.map_or(run.train.steps, |s| s.min(run.train.steps));
    if start_step > end_step {
        bail!("checkpoint is already at step {start_step}, beyond the requested {end_step}");
    }

    let log_path = out_dir.join(LOG_FILE);
    let mut log = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .with_context(|| format!("opening {}", log_path.display()))?;

    let mut last_losses = None;
    let mut last_ckpt = None;
    for step in start_step..end_step {
        let lr = lr_at(step, run.train.steps, run.train.warmup_steps, run.train.base_lr, run.train.min_lr);
        let idx = batch_indices(step, run.train.batch_size, set.examples.len());
        let batch: Vec<TrainExample> = idx.iter().map(|&i| set.examples[i].clone()).collect();

        let snapshot = params.clone();
        let losses = match train_step(&mut params, &run.model, &batch, &mut rng) {
            Ok(l) => l,
            Err(e) => {
                // forward refused a non-finite loss before any update was
                // applied, so the in-memory params are still the last good ones
                let abort = abort_checkpoint_dir(out_dir);
                checkpoint::save(&abort, step, &params, &optimizer, &rng, run, last_losses)?;
                bail!(
                    "training diverged at step {}: {e}; last-good state saved to {}",
                    step + 1,
                    abort.display()
                );
            }
        };
        optimizer.step(params.entries_mut(), lr)?;
        if !params_are_finite(&params) {
            let abort = abort_checkpoint_dir(out_dir);
            checkpoint::save(&abort, step, &snapshot, &optimizer, &rng, run, last_losses)?;
            bail!(
                "parameters left ℝ during the update at step {}; last-good state saved to {}",
                step + 1,
                abort.display()
            );
        }

        let line = LogLine {
            step: step + 1,
            lr,
            recon: losses.recon,
            distill: losses.distill,
            matching: losses.matching,
            total: losses.total,
        };
        writeln!(log, "{}", serde_json::to_string(&line)?)?;
        last_losses = Some(losses);

        let done = step + 1;
        let periodic = run.train.checkpoint_every > 0 && done % run.train.checkpoint_every == 0;
        if periodic || done == end_step {
            let dir = checkpoint_dir(out_dir, done);
            checkpoint::save(&dir, done, &params, &optimizer, &rng, run, last_losses)?;
            last_ckpt = Some(dir);
        }
    }
    log.flush()?;

    let final_checkpoint = match last_ckpt {
        Some(dir) => dir,
        None => {
            // zero steps ran (resume already at the target); still leave a
            // checkpoint so callers always get a loadable result
            let dir = checkpoint_dir(out_dir, end_step);
            checkpoint::save(&dir, end_step, &params, &optimizer, &rng, run, last_losses)?;
            dir
        }
    };

    Ok(TrainOutcome {
        steps_run: end_step - start_step,
        final_step: end_step,
        final_losses: last_losses,
        final_checkpoint,
        log_path,
    })
}

pub fn read_log(path: &Path) -> Result<Vec<LogLine>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .map(|l| serde_json::from_str(l).with_context(|| format!("parsing log line `{l}`")))
        .collect()
}

/// Generates a corpus, precomputes features, and loads the training set —
/// the standard setup for the smoke pipeline and the ablation harness.
pub fn prepare_smoke_inputs(
    dir: &Path,
    spec: &corpus::CorpusSpec,
    run: &RunConfig,
) -> Result<TrainingSet> {
    corpus::generate(dir, spec)?;
    let teacher = zeroseg_core::teacher::SyntheticTeacher::new(run.model.teacher_dim);
    let images = dir.join(corpus::IMAGES_DIR);
    let features = dir.join("features");
    let report = crate::store::precompute(&images, &features, &run.model.grids, &teacher, false)?;
    if !report.failed.is_empty() {
        bail!("feature precompute failed for {:?}", report.failed);
    }
    let store = FeatureStore::open(&features)?;
    load_training_set(&images, &store, run)
}
