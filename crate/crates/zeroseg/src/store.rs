//! Pre-computed multi-scale feature store: one `<image_id>.ztf` of shape
//! [n_views, D] per image plus an `index.json` describing view order.
//! Rows are L2-normalized on load, so training sees unit vectors even if a
//! file-backed teacher wrote raw embeddings.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use zeroseg_core::teacher::{
    l2_normalize_in_place, multiscale_features, view_specs, MultiScaleFeatureSet, TeacherEncoder,
};
use zeroseg_core::Tensor;

use crate::formats;
use crate::parallel::parallel_map;

pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexEntry {
    pub image_id: String,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreIndex {
    pub image_size: usize,
    pub grids: Vec<usize>,
    pub dim: usize,
    pub entries: Vec<IndexEntry>,
}

impl StoreIndex {
    pub fn n_views(&self) -> usize {
        self.grids.iter().map(|k| k * k).sum()
    }
}

pub struct FeatureStore {
    dir: PathBuf,
    pub index: StoreIndex,
}

#[derive(Debug, Default)]
pub struct PrecomputeReport {
    pub written: Vec<String>,
    pub skipped: Vec<String>,
    /// (image_id, what went wrong) — the command exits nonzero if non-empty.
    pub failed: Vec<(String, String)>,
}

/// Sorted (id, path) pairs for every `.ppm` in a directory.
pub fn list_images(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    let entries =
        fs::read_dir(dir).with_context(|| format!("listing images in {}", dir.display()))?;
    for entry in entries {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("ppm") {
            let id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| anyhow!("non-UTF-8 image name: {}", path.display()))?
                .to_string();
            out.push((id, path));
        }
    }
    if out.is_empty() {
        bail!("no .ppm images found in {}", dir.display());
    }
    out.sort();
    Ok(out)
}

/// Computes features for every image in `images_dir` with the given teacher
/// and writes the store into `out_dir`. Existing per-image files are kept
/// unless `force`; the index is always rewritten to match the directory.
pub fn precompute(
    images_dir: &Path,
    out_dir: &Path,
    grids: &[usize],
    teacher: &dyn TeacherEncoder,
    force: bool,
) -> Result<PrecomputeReport> {
    let images = list_images(images_dir)?;
    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating store dir {}", out_dir.display()))?;

    // the first image fixes the size every other one must match
    let (first, h0, w0) = formats::read_ppm(&images[0].1)
        .with_context(|| format!("reading {}", images[0].1.display()))?;
    if h0 != w0 {
        bail!("images must be square, {} is {w0}x{h0}", images[0].1.display());
    }
    drop(first);
    let size = h0;
    let n_views: usize = grids.iter().map(|k| k * k).sum();

    enum Outcome {
        Written(String),
        Skipped(String),
        Failed(String, String),
    }

    let outcomes = parallel_map(&images, |(id, path)| {
        let file = format!("{id}.ztf");
        let target = out_dir.join(&file);
        if target.exists() && !force {
            return Outcome::Skipped(id.clone());
        }
        let work = || -> Result<()> {
            let (image, h, w) = formats::read_ppm(path)?;
            if h != size || w != size {
                bail!("expected {size}x{size} like the rest of the corpus, got {w}x{h}");
            }
            let feats = multiscale_features(&image, size, grids, teacher)?;
            formats::write_ztf(
                &target,
                &[feats.len() as u32, feats.dim() as u32],
                feats.features.data(),
            )?;
            Ok(())
        };
        match work() {
            Ok(()) => Outcome::Written(id.clone()),
            Err(e) => Outcome::Failed(id.clone(), format!("{e:#}")),
        }
    });

    let mut report = PrecomputeReport::default();
    let mut entries = Vec::new();
    for (outcome, (id, _)) in outcomes.into_iter().zip(&images) {
        match outcome {
            Outcome::Written(id) => report.written.push(id),
            Outcome::Skipped(id) => report.skipped.push(id),
            Outcome::Failed(id, err) => {
                report.failed.push((id, err));
                continue;
            }
        }
        entries.push(IndexEntry { image_id: id.clone(), file: format!("{id}.ztf") });
    }

    let index = StoreIndex { image_size: size, grids: grids.to_vec(), dim: teacher.dim(), entries };
    let text = serde_json::to_string_pretty(&index).context("serializing index")?;
    fs::write(out_dir.join(INDEX_FILE), text + "\n")
        .with_context(|| format!("writing {}", out_dir.join(INDEX_FILE).display()))?;
    let _ = n_views; // view count is validated on load, where specs are rebuilt
    Ok(report)
}

/// Copies raw per-image feature files from an external encoder into a store,
/// validating shape [n_views, dim] and normalizing rows.
pub fn import_file_teacher(
    raw_dir: &Path,
    out_dir: &Path,
    image_size: usize,
    grids: &[usize],
    dim: usize,
) -> Result<PrecomputeReport> {
    let n_views: usize = grids.iter().map(|k| k * k).sum();
    let mut files: Vec<PathBuf> = fs::read_dir(raw_dir)
        .with_context(|| format!("listing {}", raw_dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("ztf"))
        .collect();
    if files.is_empty() {
        bail!("no .ztf feature files found in {}", raw_dir.display());
    }
    files.sort();
    fs::create_dir_all(out_dir)?;

    let mut report = PrecomputeReport::default();
    let mut entries = Vec::new();
    for path in &files {
        let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let work = || -> Result<()> {
            let (dims, mut data) = formats::read_ztf(path)?;
            if dims != [n_views as u32, dim as u32] {
                bail!("expected [{n_views}, {dim}], got {dims:?}");
            }
            for row in data.chunks_mut(dim) {
                l2_normalize_in_place(row);
            }
            formats::write_ztf(&out_dir.join(format!("{id}.ztf")), &dims, &data)?;
            Ok(())
        };
        match work() {
            Ok(()) => {
                report.written.push(id.clone());
                entries.push(IndexEntry { image_id: id.clone(), file: format!("{id}.ztf") });
            }
            Err(e) => report.failed.push((id, format!("{e:#}"))),
        }
    }
    let index = StoreIndex { image_size, grids: grids.to_vec(), dim, entries };
    fs::write(
        out_dir.join(INDEX_FILE),
        serde_json::to_string_pretty(&index).context("serializing index")? + "\n",
    )?;
    Ok(report)
}

impl FeatureStore {
    pub fn open(dir: &Path) -> Result<Self> {
        let index_path = dir.join(INDEX_FILE);
        let text = fs::read_to_string(&index_path)
            .with_context(|| format!("reading {}", index_path.display()))?;
        let index: StoreIndex = serde_json::from_str(&text)
            .with_context(|| format!("parsing {}", index_path.display()))?;
        let ids: BTreeSet<&str> = index.entries.iter().map(|e| e.image_id.as_str()).collect();
        if ids.len() != index.entries.len() {
            bail!("duplicate image ids in {}", index_path.display());
        }
        Ok(FeatureStore { dir: dir.to_path_buf(), index })
    }

    pub fn image_ids(&self) -> impl Iterator<Item = &str> {
        self.index.entries.iter().map(|e| e.image_id.as_str())
    }

    fn entry(&self, image_id: &str) -> Result<&IndexEntry> {
        self.index
            .entries
            .iter()
            .find(|e| e.image_id == image_id)
            .ok_or_else(|| anyhow!("feature store has no image `{image_id}`"))
    }

    /// Full per-image feature set with view geometry rebuilt from the index's
    /// size and grids. Rows are validated (finite, unit norm) but returned
    /// exactly as stored, so a load round trip is bit-exact.
    pub fn features_for(&self, image_id: &str) -> Result<MultiScaleFeatureSet> {
        let entry = self.entry(image_id)?;
        let path = self.dir.join(&entry.file);
        let (dims, data) =
            formats::read_ztf(&path).with_context(|| format!("reading {}", path.display()))?;
        let specs = view_specs(self.index.image_size, &self.index.grids)?;
        if dims.len() != 2 || dims[0] as usize != specs.len() || dims[1] as usize != self.index.dim
        {
            bail!(
                "{}: expected [{}, {}], got {dims:?}",
                path.display(),
                specs.len(),
                self.index.dim
            );
        }
        for (i, row) in data.chunks(self.index.dim).enumerate() {
            let norm2: f32 = row.iter().map(|v| v * v).sum();
            if !norm2.is_finite() || (norm2 - 1.0).abs() > 1e-3 {
                bail!(
                    "{}: view {i} is not unit-norm (|v|^2 = {norm2}); \
                     regenerate the store with `precompute --force`",
                    path.display()
                );
            }
        }
        let features = Tensor::new(vec![dims[0] as usize, dims[1] as usize], data)?;
        Ok(MultiScaleFeatureSet::new(features, specs)?)
    }

    /// One stored view vector, normalized. Errors name both the image and
    /// the view index.
    pub fn lookup(&self, image_id: &str, view_index: usize) -> Result<Vec<f32>> {
        let feats = self
            .features_for(image_id)
            .with_context(|| format!("looking up image `{image_id}`"))?;
        if view_index >= feats.len() {
            bail!("image `{image_id}` has {} views, view {view_index} does not exist", feats.len());
        }
        Ok(feats.row(view_index).to_vec())
    }
}
