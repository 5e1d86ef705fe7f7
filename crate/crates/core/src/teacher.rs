//! Multi-scale view extraction and the pluggable teacher encoder producing
//! the distillation targets v_1..v_n.

use crate::error::{CoreError, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;
use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

/// One cell of a k×k grid over the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ViewSpec {
    pub grid: usize,
    /// (row, col) within the grid.
    pub cell: (usize, usize),
    /// Pixel rect (x0, y0, x1, y1), half-open.
    pub rect: (usize, usize, usize, usize),
}

/// Cell boundaries follow [floor(i·S/k), floor((i+1)·S/k)), so every grid
/// tiles the image exactly even when k does not divide S.
pub fn view_specs(size: usize, grids: &[usize]) -> Result<Vec<ViewSpec>> {
    if grids.is_empty() {
        return Err(CoreError::Empty { what: "grid set" });
    }
    let mut specs = Vec::new();
    for &k in grids {
        if k == 0 || k > size {
            return Err(CoreError::InvalidArg {
                what: "view grid",
                detail: format!("grid {k} invalid for image size {size}"),
            });
        }
        let edge = |i: usize| i * size / k;
        for row in 0..k {
            for col in 0..k {
                specs.push(ViewSpec {
                    grid: k,
                    cell: (row, col),
                    rect: (edge(col), edge(row), edge(col + 1), edge(row + 1)),
                });
            }
        }
    }
    Ok(specs)
}

/// Crops a channel-first [3,S,S] image to a rect, returning (w, h, pixels).
pub fn extract_view(image: &[f32], size: usize, rect: (usize, usize, usize, usize)) -> (usize, usize, Vec<f32>) {
    let (x0, y0, x1, y1) = rect;
    let (w, h) = (x1 - x0, y1 - y0);
    let mut out = vec![0.0f32; 3 * w * h];
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                out[c * w * h + y * w + x] = image[c * size * size + (y0 + y) * size + (x0 + x)];
            }
        }
    }
    (w, h, out)
}

/// Bilinear resize of a [c,h,w] image (align-corners = false convention).
pub fn resize_bilinear(
    image: &[f32],
    channels: usize,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
) -> Result<Vec<f32>> {
    if in_h == 0 || in_w == 0 || out_h == 0 || out_w == 0 {
        return Err(CoreError::InvalidArg {
            what: "resize_bilinear",
            detail: format!("zero dimension: in {in_h}x{in_w}, out {out_h}x{out_w}"),
        });
    }
    let mut out = vec![0.0f32; channels * out_h * out_w];
    let sy = in_h as f64 / out_h as f64;
    let sx = in_w as f64 / out_w as f64;
    for c in 0..channels {
        let plane = &image[c * in_h * in_w..(c + 1) * in_h * in_w];
        for oy in 0..out_h {
            let fy = ((oy as f64 + 0.5) * sy - 0.5).max(0.0);
            let y0 = fy as usize;
            let y1 = (y0 + 1).min(in_h - 1);
            let wy = (fy - y0 as f64) as f32;
            for ox in 0..out_w {
                let fx = ((ox as f64 + 0.5) * sx - 0.5).max(0.0);
                let x0 = fx as usize;
                let x1 = (x0 + 1).min(in_w - 1);
                let wx = (fx - x0 as f64) as f32;
                // factored lerp keeps constants exactly constant
                let top = {
                    let a = plane[y0 * in_w + x0];
                    let b = plane[y0 * in_w + x1];
                    a + (b - a) * wx
                };
                let bot = {
                    let a = plane[y1 * in_w + x0];
                    let b = plane[y1 * in_w + x1];
                    a + (b - a) * wx
                };
                out[c * out_h * out_w + oy * out_w + ox] = top + (bot - top) * wy;
            }
        }
    }
    Ok(out)
}

/// A frozen image-embedding model: deterministic per input, and shareable
/// across threads so callers can fan out per-view encoding.
pub trait TeacherEncoder: Sync {
    fn dim(&self) -> usize;
    /// `view` is channel-first [3,size,size], already resized.
    fn encode(&self, view: &[f32], size: usize) -> Vec<f32>;
}

/// Stand-in teacher: 3-channel 4×4 spatial mean-pool (48 values) pushed
/// through a fixed seeded random projection, then L2-normalized. Content
/// dependent and localized, so distillation targets are learnable without
/// a real pretrained encoder.
#[derive(Debug, Clone)]
pub struct SyntheticTeacher {
    dim: usize,
    /// [48, dim] row-major.
    proj: Vec<f32>,
}

pub const SYNTHETIC_TEACHER_SEED: u64 = 0x7EAC_4E2C_0DE5_EEDE;

impl SyntheticTeacher {
    pub fn new(dim: usize) -> Self {
        Self::with_seed(dim, SYNTHETIC_TEACHER_SEED)
    }

    pub fn with_seed(dim: usize, seed: u64) -> Self {
        let mut rng = Rng::seed_from_u64(seed);
        let proj = (0..48 * dim).map(|_| rng.normal_f64() as f32).collect();
        SyntheticTeacher { dim, proj }
    }

    fn pool_4x4(view: &[f32], size: usize) -> [f32; 48] {
        let mut pooled = [0.0f32; 48];
        let edge = |i: usize| i * size / 4;
        for c in 0..3 {
            for ty in 0..4 {
                for tx in 0..4 {
                    let (x0, x1) = (edge(tx), edge(tx + 1));
                    let (y0, y1) = (edge(ty), edge(ty + 1));
                    let mut sum = 0.0f32;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            sum += view[c * size * size + y * size + x];
                        }
                    }
                    let count = ((x1 - x0) * (y1 - y0)).max(1) as f32;
                    pooled[c * 16 + ty * 4 + tx] = sum / count;
                }
            }
        }
        pooled
    }
}

impl TeacherEncoder for SyntheticTeacher {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, view: &[f32], size: usize) -> Vec<f32> {
        debug_assert_eq!(view.len(), 3 * size * size);
        let pooled = Self::pool_4x4(view, size);
        let mut out = vec![0.0f32; self.dim];
        for (k, &p) in pooled.iter().enumerate() {
            let row = &self.proj[k * self.dim..(k + 1) * self.dim];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += p * w;
            }
        }
        l2_normalize_in_place(&mut out);
        out
    }
}

pub fn l2_normalize_in_place(v: &mut [f32]) {
    let norm = libm::sqrtf(v.iter().map(|x| x * x).sum::<f32>());
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
}

/// The v_j features of one image plus the view geometry they came from.
#[derive(Debug, Clone)]
pub struct MultiScaleFeatureSet {
    /// [n, D], rows L2-normalized.
    pub features: Tensor,
    pub specs: Vec<ViewSpec>,
    global: Option<usize>,
}

impl MultiScaleFeatureSet {
    pub fn new(features: Tensor, specs: Vec<ViewSpec>) -> Result<Self> {
        let n = specs.len();
        let shape = features.shape();
        if shape.len() != 2 || shape[0] != n {
            return Err(CoreError::ShapeMismatch {
                op: "feature_set",
                detail: format!("{n} view specs vs features {shape:?}"),
            });
        }
        let global = specs.iter().position(|s| s.grid == 1);
        Ok(MultiScaleFeatureSet { features, specs, global })
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let d = self.dim();
        &self.features.data()[i * d..(i + 1) * d]
    }

    /// Row index of the 1×1 (full image) view.
    pub fn global_index(&self) -> Result<usize> {
        self.global.ok_or(CoreError::NotFound { what: "global view", key: alloc::string::String::from("grid 1") })
    }

    /// Every row except the global view, in order.
    pub fn local_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| Some(i) != self.global).collect()
    }
}

/// Extracts all views, resizes each to the teacher's input size (the model
/// image size at desk scale), and encodes them.
pub fn multiscale_features(
    image: &[f32],
    size: usize,
    grids: &[usize],
    teacher: &dyn TeacherEncoder,
) -> Result<MultiScaleFeatureSet> {
    let specs = view_specs(size, grids)?;
    let d = teacher.dim();
    let mut data = Vec::with_capacity(specs.len() * d);
    for spec in &specs {
        let (w, h, view) = extract_view(image, size, spec.rect);
        let resized = resize_bilinear(&view, 3, h, w, size, size)?;
        let mut feat = teacher.encode(&resized, size);
        l2_normalize_in_place(&mut feat);
        data.extend_from_slice(&feat);
    }
    let features = Tensor::new(vec![specs.len(), d], data)?;
    MultiScaleFeatureSet::new(features, specs)
}

/// Boxing helper for harness code that switches teachers at runtime.
pub fn boxed_synthetic(dim: usize) -> Box<dyn TeacherEncoder> {
    Box::new(SyntheticTeacher::new(dim))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn thirty_views_for_full_grid_set() {
        let specs = view_specs(224, &[1, 2, 3, 4]).unwrap();
        assert_eq!(specs.len(), 30);
        assert_eq!(specs[0].grid, 1);
        assert_eq!(specs[0].rect, (0, 0, 224, 224));
    }

    #[test]
    fn single_grid_is_whole_image() {
        let specs = view_specs(64, &[1]).unwrap();
        assert_eq!(specs.len(), 1);
        assert_eq!(specs[0].rect, (0, 0, 64, 64));
    }

    #[test]
    fn two_by_two_rects_at_224() {
        let specs = view_specs(224, &[2]).unwrap();
        let rects: Vec<_> = specs.iter().map(|s| s.rect).collect();
        assert_eq!(rects, vec![
            (0, 0, 112, 112),
            (112, 0, 224, 112),
            (0, 112, 112, 224),
            (112, 112, 224, 224),
        ]);
    }

    #[test]
    fn grids_tile_exactly_even_for_indivisible_sizes() {
        for size in [63usize, 64, 224] {
            for k in [1usize, 2, 3, 4] {
                let specs = view_specs(size, &[k]).unwrap();
                let mut cover = vec![0u32; size * size];
                for s in &specs {
                    let (x0, y0, x1, y1) = s.rect;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            cover[y * size + x] += 1;
                        }
                    }
                }
                assert!(cover.iter().all(|&c| c == 1), "size {size}, grid {k}");
            }
        }
    }

    #[test]
    fn empty_grid_set_rejected() {
        assert!(view_specs(64, &[]).is_err());
    }

    #[test]
    fn resize_to_same_size_is_identity() {
        let img: Vec<f32> = (0..3 * 5 * 7).map(|i| i as f32 * 0.01).collect();
        let out = resize_bilinear(&img, 3, 5, 7, 5, 7).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn resize_constant_image_stays_constant() {
        let img = vec![0.42f32; 3 * 3 * 3];
        let out = resize_bilinear(&img, 3, 3, 3, 8, 5).unwrap();
        assert!(out.iter().all(|&v| v == 0.42));
    }

    #[test]
    fn checkerboard_upscale_matches_hand_weights() {
        // 2×2 [0,1;1,0] → 4×4 with align-corners=false
        let img = vec![0.0f32, 1.0, 1.0, 0.0];
        let out = resize_bilinear(&img, 1, 2, 2, 4, 4).unwrap();
        let expected = [
            0.0, 0.25, 0.75, 1.0,
            0.25, 0.375, 0.625, 0.75,
            0.75, 0.625, 0.375, 0.25,
            1.0, 0.75, 0.25, 0.0,
        ];
        assert_eq!(out, expected);
    }

    #[test]
    fn resize_rejects_zero_dims() {
        assert!(resize_bilinear(&[], 1, 0, 2, 4, 4).is_err());
        assert!(resize_bilinear(&[0.0; 4], 1, 2, 2, 0, 4).is_err());
    }

    #[test]
    fn synthetic_teacher_is_deterministic() {
        let t = SyntheticTeacher::new(16);
        let img: Vec<f32> = (0..3 * 8 * 8).map(|i| (i as f32 * 0.37).sin().abs()).collect();
        assert_eq!(t.encode(&img, 8), t.encode(&img, 8));
        // and across constructions
        let t2 = SyntheticTeacher::new(16);
        assert_eq!(t.encode(&img, 8), t2.encode(&img, 8));
    }

    #[test]
    fn synthetic_teacher_outputs_unit_norm() {
        let t = SyntheticTeacher::new(32);
        let img: Vec<f32> = (0..3 * 16 * 16).map(|i| ((i * 31 % 97) as f32) / 97.0).collect();
        let e = t.encode(&img, 16);
        let n: f32 = e.iter().map(|v| v * v).sum::<f32>();
        assert_relative_eq!(libm::sqrtf(n), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn disjoint_solid_colors_are_distinguishable() {
        let t = SyntheticTeacher::new(64);
        let size = 16;
        let solid = |r: f32, g: f32, b: f32| {
            let mut img = vec![0.0f32; 3 * size * size];
            img[..size * size].fill(r);
            img[size * size..2 * size * size].fill(g);
            img[2 * size * size..].fill(b);
            img
        };
        let red = t.encode(&solid(1.0, 0.0, 0.0), size);
        let blue = t.encode(&solid(0.0, 0.0, 1.0), size);
        let cos: f32 = red.iter().zip(&blue).map(|(a, b)| a * b).sum();
        assert!(cos < 0.99, "red vs blue cosine {cos}");
    }

    #[test]
    fn feature_set_counts_and_norms() {
        let teacher = SyntheticTeacher::new(24);
        let size = 12;
        let img: Vec<f32> = (0..3 * size * size).map(|i| ((i * 13 % 29) as f32) / 29.0).collect();
        let set = multiscale_features(&img, size, &[1, 2, 3, 4], &teacher).unwrap();
        assert_eq!(set.len(), 30);
        assert_eq!(set.dim(), 24);
        assert_eq!(set.global_index().unwrap(), 0);
        assert_eq!(set.local_indices().len(), 29);
        for i in 0..set.len() {
            let n: f32 = set.row(i).iter().map(|v| v * v).sum();
            assert_relative_eq!(libm::sqrtf(n), 1.0, epsilon = 1e-6);
        }
    }
}
