//! Writes the deterministic smoke corpus to disk: PPM images, PGM ground
//! truth, the class-name list, and a class-embedding table consistent with
//! the synthetic teacher.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use zeroseg_core::inference::ClassEmbeddingTable;
use zeroseg_core::synth;
use zeroseg_core::teacher::{SyntheticTeacher, TeacherEncoder};
use zeroseg_core::Tensor;

use crate::formats;

pub const IMAGES_DIR: &str = "images";
pub const MASKS_DIR: &str = "masks";
pub const CLASSES_TXT: &str = "classes.txt";
pub const CLASSES_ZTF: &str = "classes.ztf";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub seed: u64,
    pub count: usize,
    pub num_classes: usize,
    pub image_size: usize,
    pub teacher_dim: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec { seed: 0, count: 8, num_classes: 3, image_size: 64, teacher_dim: 64 }
    }
}

pub fn image_id(i: usize) -> String {
    format!("img-{i:03}")
}

/// Generates `count` scenes and writes the full corpus. The class table is
/// computed from color swatches quantized through the same PPM round trip the
/// images go through, so stored features, training targets, and the
/// classification table all live in exactly the same embedding geometry.
pub fn generate(dir: &Path, spec: &CorpusSpec) -> Result<()> {
    let scenes = synth::corpus_scenes(spec.seed, spec.count, spec.num_classes, spec.image_size)?;
    let images_dir = dir.join(IMAGES_DIR);
    let masks_dir = dir.join(MASKS_DIR);
    fs::create_dir_all(&images_dir)?;
    fs::create_dir_all(&masks_dir)?;

    for (i, scene) in scenes.iter().enumerate() {
        let (image, mask) = synth::render(scene)?;
        let id = image_id(i);
        formats::write_ppm(&images_dir.join(format!("{id}.ppm")), &image, spec.image_size, spec.image_size)
            .with_context(|| format!("writing image {id}"))?;
        formats::write_pgm_labels(
            &masks_dir.join(format!("{id}.pgm")),
            &mask.labels,
            mask.height,
            mask.width,
        )
        .with_context(|| format!("writing mask {id}"))?;
    }

    let teacher = SyntheticTeacher::new(spec.teacher_dim);
    let table = quantized_class_table(spec.num_classes, spec.image_size, &teacher)?;
    write_class_table(dir, &table)?;
    Ok(())
}

/// Class embeddings of full-canvas swatches after the PPM quantization round
/// trip (what a teacher sees when the swatch comes back off disk).
pub fn quantized_class_table(
    num_classes: usize,
    size: usize,
    teacher: &dyn TeacherEncoder,
) -> Result<ClassEmbeddingTable> {
    let palette = synth::class_palette(num_classes)?;
    let d = teacher.dim();
    let mut rows = Vec::with_capacity(num_classes * d);
    let mut names = Vec::with_capacity(num_classes);
    for (color, name) in palette {
        let mut swatch = vec![0.0f32; 3 * size * size];
        for c in 0..3 {
            swatch[c * size * size..(c + 1) * size * size].fill(color[c]);
        }
        formats::quantize_roundtrip(&mut swatch);
        rows.extend_from_slice(&teacher.encode(&swatch, size));
        names.push(name.to_string());
    }
    let embeddings = Tensor::new(vec![num_classes, d], rows)?;
    Ok(ClassEmbeddingTable::new(embeddings, names)?)
}

pub fn write_class_table(dir: &Path, table: &ClassEmbeddingTable) -> Result<()> {
    formats::write_ztf(
        &dir.join(CLASSES_ZTF),
        &[table.len() as u32, table.dim() as u32],
        table.embeddings().data(),
    )?;
    let mut text = String::new();
    for name in table.names() {
        text.push_str(name);
        text.push('\n');
    }
    fs::write(dir.join(CLASSES_TXT), text).context("writing class names")?;
    Ok(())
}

/// Loads `classes.ztf` + `classes.txt` from a directory. Rows are
/// re-normalized so tables written by other tools are accepted.
pub fn read_class_table(dir: &Path) -> Result<ClassEmbeddingTable> {
    let ztf = dir.join(CLASSES_ZTF);
    let (dims, mut data) =
        formats::read_ztf(&ztf).with_context(|| format!("reading {}", ztf.display()))?;
    if dims.len() != 2 {
        anyhow::bail!("{}: expected a [C, D] table, got dims {dims:?}", ztf.display());
    }
    let (c, d) = (dims[0] as usize, dims[1] as usize);
    for row in data.chunks_mut(d) {
        zeroseg_core::teacher::l2_normalize_in_place(row);
    }
    let txt = dir.join(CLASSES_TXT);
    let names: Vec<String> = fs::read_to_string(&txt)
        .with_context(|| format!("reading {}", txt.display()))?
        .lines()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect();
    if names.len() != c {
        anyhow::bail!("{} names for {c} embedding rows", names.len());
    }
    let embeddings = Tensor::new(vec![c, d], data)?;
    Ok(ClassEmbeddingTable::new(embeddings, names)?)
}

pub fn mask_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(MASKS_DIR).join(format!("{id}.pgm"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
        let mut out = Vec::new();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for entry in fs::read_dir(&d).unwrap() {
                let path = entry.unwrap().path();
                if path.is_dir() {
                    stack.push(path);
                } else {
                    let rel = path.strip_prefix(dir).unwrap().display().to_string();
                    out.push((rel, fs::read(&path).unwrap()));
                }
            }
        }
        out.sort();
        out
    }

    #[test]
    fn same_seed_writes_a_byte_identical_corpus() {
        let a = tempdir().unwrap();
        let b = tempdir().unwrap();
        let spec = CorpusSpec { count: 4, teacher_dim: 16, ..Default::default() };
        generate(a.path(), &spec).unwrap();
        generate(b.path(), &spec).unwrap();
        assert_eq!(tree_bytes(a.path()), tree_bytes(b.path()));
    }

    #[test]
    fn corpus_has_expected_file_counts_and_table_shape() {
        let dir = tempdir().unwrap();
        let spec =
            CorpusSpec { count: 8, num_classes: 4, teacher_dim: 16, ..Default::default() };
        generate(dir.path(), &spec).unwrap();
        let images = fs::read_dir(dir.path().join(IMAGES_DIR)).unwrap().count();
        let masks = fs::read_dir(dir.path().join(MASKS_DIR)).unwrap().count();
        assert_eq!((images, masks), (8, 8));
        let table = read_class_table(dir.path()).unwrap();
        assert_eq!((table.len(), table.dim()), (4, 16));
        assert_eq!(table.names()[0], "red");
    }

    #[test]
    fn table_rows_equal_teacher_encode_of_stored_swatches() {
        // write the swatch to disk, read it back, encode: must equal the
        // table row exactly, because both sides quantize identically
        let dir = tempdir().unwrap();
        let spec = CorpusSpec { num_classes: 3, teacher_dim: 16, ..Default::default() };
        generate(dir.path(), &spec).unwrap();
        let table = read_class_table(dir.path()).unwrap();
        let teacher = SyntheticTeacher::new(16);
        let palette = synth::class_palette(3).unwrap();
        for (c, (color, _)) in palette.iter().enumerate() {
            let s = spec.image_size;
            let mut swatch = vec![0.0f32; 3 * s * s];
            for ch in 0..3 {
                swatch[ch * s * s..(ch + 1) * s * s].fill(color[ch]);
            }
            let ppm = dir.path().join("swatch.ppm");
            formats::write_ppm(&ppm, &swatch, s, s).unwrap();
            let (back, _, _) = formats::read_ppm(&ppm).unwrap();
            let encoded = teacher.encode(&back, s);
            assert_eq!(
                table.row(c).iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                encoded.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                "class {c} table row is not the disk-round-trip embedding"
            );
        }
    }

    #[test]
    fn masks_agree_with_rerendered_scenes() {
        let dir = tempdir().unwrap();
        let spec = CorpusSpec { count: 3, teacher_dim: 8, ..Default::default() };
        generate(dir.path(), &spec).unwrap();
        let scenes =
            synth::corpus_scenes(spec.seed, spec.count, spec.num_classes, spec.image_size)
                .unwrap();
        for (i, scene) in scenes.iter().enumerate() {
            let (_, mask) = synth::render(scene).unwrap();
            let (stored, h, w) = read_pgm(&mask_path(dir.path(), &image_id(i)));
            assert_eq!((h, w), (spec.image_size, spec.image_size));
            assert_eq!(stored, mask.labels);
        }
    }

    fn read_pgm(path: &Path) -> (Vec<i32>, usize, usize) {
        formats::read_pgm_labels(path).unwrap()
    }

    #[test]
    fn class_names_file_is_one_name_per_line() {
        let dir = tempdir().unwrap();
        generate(dir.path(), &CorpusSpec { teacher_dim: 8, ..Default::default() }).unwrap();
        let text = fs::read_to_string(dir.path().join(CLASSES_TXT)).unwrap();
        assert_eq!(text, "red\ngreen\nyellow\n");
    }
}
