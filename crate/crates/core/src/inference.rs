//! Zero-shot segmentation: score segment tokens against class embeddings,
//! apply the background threshold, and paint a per-pixel label map.

use crate::error::{CoreError, Result};
use crate::teacher::{l2_normalize_in_place, resize_bilinear};
use crate::tensor::Tensor;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

/// Per-class embedding rows t_c plus their display names.
#[derive(Debug, Clone)]
pub struct ClassEmbeddingTable {
    embeddings: Tensor,
    names: Vec<String>,
}

impl ClassEmbeddingTable {
    pub fn new(embeddings: Tensor, names: Vec<String>) -> Result<Self> {
        let shape = embeddings.shape();
        if shape.len() != 2 || shape[0] == 0 {
            return Err(CoreError::ShapeMismatch {
                op: "class_table",
                detail: format!("want non-empty [C,D], got {shape:?}"),
            });
        }
        if shape[0] != names.len() {
            return Err(CoreError::ShapeMismatch {
                op: "class_table",
                detail: format!("{} rows vs {} names", shape[0], names.len()),
            });
        }
        for (i, name) in names.iter().enumerate() {
            if names[..i].contains(name) {
                return Err(CoreError::InvalidArg {
                    what: "class names",
                    detail: format!("duplicate name {name:?}"),
                });
            }
        }
        let d = shape[1];
        for (c, row) in embeddings.data().chunks(d).enumerate() {
            let norm = libm::sqrtf(row.iter().map(|v| v * v).sum::<f32>());
            if (norm - 1.0).abs() > 1e-6 {
                return Err(CoreError::InvalidArg {
                    what: "class embeddings",
                    detail: format!("row {c} has norm {norm}, want 1"),
                });
            }
        }
        Ok(ClassEmbeddingTable { embeddings, names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.shape()[1]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn row(&self, c: usize) -> &[f32] {
        let d = self.dim();
        &self.embeddings.data()[c * d..(c + 1) * d]
    }

    pub fn embeddings(&self) -> &Tensor {
        &self.embeddings
    }
}

/// Per-pixel class indices; −1 marks background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<i32>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, labels: Vec<i32>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(CoreError::ShapeMismatch {
                op: "label_map",
                detail: format!("{}×{} vs {} labels", width, height, labels.len()),
            });
        }
        if labels.iter().any(|&l| l < -1) {
            return Err(CoreError::InvalidArg {
                what: "label map",
                detail: "labels must be ≥ -1".into(),
            });
        }
        Ok(LabelMap { width, height, labels })
    }

    pub fn filled(width: usize, height: usize, label: i32) -> Self {
        LabelMap { width, height, labels: vec![label; width * height] }
    }

    pub fn get(&self, x: usize, y: usize) -> i32 {
        self.labels[y * self.width + x]
    }
}

/// Nearest class per segment by cosine similarity, backgrounded below the
/// threshold. Tokens are re-normalized here so the decision is invariant to
/// positive rescaling upstream. Ties pick the lowest class index.
pub fn classify_segments(
    segment_tokens: &[f32],
    m: usize,
    dim: usize,
    table: &ClassEmbeddingTable,
    threshold: f32,
) -> Result<Vec<i32>> {
    if !(-1.0..=1.0).contains(&threshold) {
        return Err(CoreError::InvalidArg {
            what: "background threshold",
            detail: format!("{threshold} outside [-1, 1]"),
        });
    }
    if dim != table.dim() || segment_tokens.len() != m * dim {
        return Err(CoreError::ShapeMismatch {
            op: "classify_segments",
            detail: format!(
                "{} values as [{m},{dim}] vs table dim {}",
                segment_tokens.len(),
                table.dim()
            ),
        });
    }
    let mut labels = Vec::with_capacity(m);
    for i in 0..m {
        let mut g = segment_tokens[i * dim..(i + 1) * dim].to_vec();
        l2_normalize_in_place(&mut g);
        let mut best = 0usize;
        let mut best_cos = f32::NEG_INFINITY;
        for c in 0..table.len() {
            let cos: f32 = g.iter().zip(table.row(c)).map(|(a, b)| a * b).sum();
            if cos > best_cos {
                best_cos = cos;
                best = c;
            }
        }
        labels.push(if best_cos >= threshold { best as i32 } else { -1 });
    }
    Ok(labels)
}

/// Patch → segment by row argmax (ties → lowest segment), segment → class via
/// `segment_labels`, then nearest-neighbor upsample of the patch grid to
/// pixels.
pub fn render_label_map(
    assignment: &[f32],
    n_patches: usize,
    n_segments: usize,
    segment_labels: &[i32],
    image_size: usize,
    patch_size: usize,
) -> Result<LabelMap> {
    if patch_size == 0 || image_size % patch_size != 0 {
        return Err(CoreError::InvalidArg {
            what: "render_label_map",
            detail: format!("image size {image_size} not divisible by patch {patch_size}"),
        });
    }
    let grid = image_size / patch_size;
    if n_patches != grid * grid {
        return Err(CoreError::ShapeMismatch {
            op: "render_label_map",
            detail: format!("{n_patches} patches vs {grid}×{grid} grid"),
        });
    }
    if assignment.len() != n_patches * n_segments || segment_labels.len() != n_segments {
        return Err(CoreError::ShapeMismatch {
            op: "render_label_map",
            detail: format!(
                "assignment {} as [{n_patches},{n_segments}], {} segment labels",
                assignment.len(),
                segment_labels.len()
            ),
        });
    }
    let patch_segments = crate::seghead::assignment_to_mask(assignment, n_patches, n_segments);
    let mut labels = vec![0i32; image_size * image_size];
    for y in 0..image_size {
        for x in 0..image_size {
            let patch = (y / patch_size) * grid + x / patch_size;
            labels[y * image_size + x] = segment_labels[patch_segments[patch]];
        }
    }
    LabelMap::new(image_size, image_size, labels)
}

/// Bilinear resize so the short side hits `target`, then a centered square
/// crop. Input and output are channel-first [3,h,w].
pub fn preprocess_eval_image(
    image: &[f32],
    width: usize,
    height: usize,
    target: usize,
) -> Result<Vec<f32>> {
    if width == 0 || height == 0 || target == 0 {
        return Err(CoreError::InvalidArg {
            what: "preprocess_eval_image",
            detail: format!("zero dimension: {width}×{height} → {target}"),
        });
    }
    let (out_w, out_h) = if width <= height {
        let h = ((height as f64 * target as f64 / width as f64) as usize).max(target);
        (target, h)
    } else {
        let w = ((width as f64 * target as f64 / height as f64) as usize).max(target);
        (w, target)
    };
    let resized = resize_bilinear(image, 3, height, width, out_h, out_w)?;
    if (out_w, out_h) == (target, target) {
        return Ok(resized);
    }
    let x0 = (out_w - target) / 2;
    let y0 = (out_h - target) / 2;
    let mut out = vec![0.0f32; 3 * target * target];
    for c in 0..3 {
        for y in 0..target {
            for x in 0..target {
                out[c * target * target + y * target + x] =
                    resized[c * out_h * out_w + (y0 + y) * out_w + (x0 + x)];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::teacher::l2_normalize_in_place;

    fn unit_table(c: usize, d: usize, seed: u64) -> ClassEmbeddingTable {
        let mut rng = Rng::seed_from_u64(seed);
        let mut data = Vec::with_capacity(c * d);
        for _ in 0..c {
            let mut row: Vec<f32> = (0..d).map(|_| rng.normal_f64() as f32).collect();
            l2_normalize_in_place(&mut row);
            data.extend_from_slice(&row);
        }
        let names = (0..c).map(|i| format!("class{i}")).collect();
        ClassEmbeddingTable::new(Tensor::new(vec![c, d], data).unwrap(), names).unwrap()
    }

    #[test]
    fn table_rejects_bad_norms_and_duplicate_names() {
        let t = Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap();
        assert!(ClassEmbeddingTable::new(t, vec!["a".into()]).is_err());
        let ok = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(ClassEmbeddingTable::new(ok.clone(), vec!["a".into(), "a".into()]).is_err());
        assert!(ClassEmbeddingTable::new(ok, vec!["a".into(), "b".into()]).is_ok());
    }

    #[test]
    fn exact_match_beats_a_high_threshold() {
        let table = unit_table(5, 8, 3);
        let g = table.row(3).to_vec();
        let labels = classify_segments(&g, 1, 8, &table, 0.95).unwrap();
        assert_eq!(labels, vec![3]);
    }

    #[test]
    fn orthogonal_token_is_background() {
        let ok = Tensor::new(vec![2, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let table = ClassEmbeddingTable::new(ok, vec!["a".into(), "b".into()]).unwrap();
        let labels = classify_segments(&[0.0, 0.0, 1.0], 1, 3, &table, 0.35).unwrap();
        assert_eq!(labels, vec![-1]);
    }

    #[test]
    fn matches_exhaustive_cosine_scan() {
        let table = unit_table(5, 16, 11);
        let mut rng = Rng::seed_from_u64(12);
        for trial in 0..50 {
            let mut g: Vec<f32> = (0..16).map(|_| rng.normal_f64() as f32).collect();
            l2_normalize_in_place(&mut g);
            let labels = classify_segments(&g, 1, 16, &table, -1.0).unwrap();

            let mut best = 0usize;
            let mut best_cos = f32::NEG_INFINITY;
            for c in 0..5 {
                let cos: f32 = g.iter().zip(table.row(c)).map(|(a, b)| a * b).sum();
                if cos > best_cos {
                    best_cos = cos;
                    best = c;
                }
            }
            assert_eq!(labels[0], best as i32, "trial {trial}");
        }
    }

    #[test]
    fn classification_invariant_to_positive_rescaling() {
        let table = unit_table(4, 8, 21);
        let mut rng = Rng::seed_from_u64(22);
        let g: Vec<f32> = (0..8).map(|_| rng.normal_f64() as f32).collect();
        let scaled: Vec<f32> = g.iter().map(|v| v * 37.5).collect();
        let a = classify_segments(&g, 1, 8, &table, 0.1).unwrap();
        let b = classify_segments(&scaled, 1, 8, &table, 0.1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn threshold_monotonically_grows_background() {
        let table = unit_table(4, 8, 31);
        let mut rng = Rng::seed_from_u64(32);
        let toks: Vec<f32> = (0..8 * 8).map(|_| rng.normal_f64() as f32).collect();
        let mut prev_bg = 0usize;
        for t in [-1.0f32, -0.5, 0.0, 0.3, 0.7, 1.0] {
            let labels = classify_segments(&toks, 8, 8, &table, t).unwrap();
            let bg = labels.iter().filter(|&&l| l == -1).count();
            assert!(bg >= prev_bg, "threshold {t}");
            prev_bg = bg;
        }
    }

    #[test]
    fn threshold_range_is_validated() {
        let table = unit_table(2, 4, 41);
        assert!(classify_segments(&[1.0, 0.0, 0.0, 0.0], 1, 4, &table, 1.5).is_err());
        assert!(classify_segments(&[1.0, 0.0, 0.0, 0.0], 1, 4, &table, -1.5).is_err());
    }

    #[test]
    fn all_background_segments_render_all_background() {
        let assignment = vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0];
        let map = render_label_map(&assignment, 4, 2, &[-1, -1], 4, 2).unwrap();
        assert!(map.labels.iter().all(|&l| l == -1));
    }

    #[test]
    fn one_hot_quadrants() {
        // 2×2 patch grid, patch i → segment i, labels 0..3 → uniform quadrants
        let mut assignment = vec![0.0f32; 4 * 4];
        for i in 0..4 {
            assignment[i * 4 + i] = 1.0;
        }
        let map = render_label_map(&assignment, 4, 4, &[0, 1, 2, 3], 4, 2).unwrap();
        assert_eq!(map.get(0, 0), 0);
        assert_eq!(map.get(1, 1), 0);
        assert_eq!(map.get(2, 0), 1);
        assert_eq!(map.get(3, 1), 1);
        assert_eq!(map.get(0, 2), 2);
        assert_eq!(map.get(1, 3), 2);
        assert_eq!(map.get(2, 2), 3);
        assert_eq!(map.get(3, 3), 3);
    }

    #[test]
    fn random_map_equals_composition_oracle() {
        let mut rng = Rng::seed_from_u64(55);
        let (grid, patch, m) = (4, 2, 3);
        let n = grid * grid;
        let size = grid * patch;
        let assignment: Vec<f32> = (0..n * m).map(|_| rng.uniform_f64() as f32).collect();
        let labels_per_seg: Vec<i32> = (0..m).map(|i| (i as i32) - 1).collect(); // includes -1
        let map =
            render_label_map(&assignment, n, m, &labels_per_seg, size, patch).unwrap();

        for y in 0..size {
            for x in 0..size {
                let p = (y / patch) * grid + x / patch;
                let row = &assignment[p * m..(p + 1) * m];
                let mut seg = 0usize;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[seg] {
                        seg = j;
                    }
                }
                assert_eq!(map.get(x, y), labels_per_seg[seg], "pixel ({x},{y})");
            }
        }
    }

    #[test]
    fn output_labels_come_from_segment_labels() {
        let mut rng = Rng::seed_from_u64(66);
        let assignment: Vec<f32> = (0..16 * 4).map(|_| rng.uniform_f64() as f32).collect();
        let seg_labels = [7, -1, 2, 7];
        let map = render_label_map(&assignment, 16, 4, &seg_labels, 8, 2).unwrap();
        assert!(map.labels.iter().all(|l| seg_labels.contains(l)));
    }

    #[test]
    fn indivisible_patch_size_rejected() {
        assert!(render_label_map(&[1.0], 1, 1, &[0], 5, 2).is_err());
    }

    #[test]
    fn square_input_at_target_is_unchanged() {
        let img: Vec<f32> = (0..3 * 6 * 6).map(|i| i as f32 * 0.01).collect();
        let out = preprocess_eval_image(&img, 6, 6, 6).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn tall_input_resizes_then_center_crops() {
        // 100 wide × 200 tall, target 50 → 50×100, crop rows 25..75
        let (w, h) = (100usize, 200usize);
        let img: Vec<f32> = (0..3 * w * h).map(|i| ((i % 251) as f32) / 251.0).collect();
        let out = preprocess_eval_image(&img, w, h, 50).unwrap();
        assert_eq!(out.len(), 3 * 50 * 50);

        let resized = resize_bilinear(&img, 3, h, w, 100, 50).unwrap();
        for c in 0..3 {
            for y in 0..50 {
                for x in 0..50 {
                    assert_eq!(
                        out[c * 50 * 50 + y * 50 + x],
                        resized[c * 100 * 50 + (y + 25) * 50 + x]
                    );
                }
            }
        }
    }
}
