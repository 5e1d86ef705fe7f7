//! Deterministic synthetic corpus: colored rects and disks on dark
//! backgrounds, with exact ground-truth masks and a class-embedding table
//! derived from the same teacher used for distillation.

use crate::error::{CoreError, Result};
use crate::inference::{ClassEmbeddingTable, LabelMap};
use crate::rng::Rng;
use crate::teacher::TeacherEncoder;
use crate::tensor::Tensor;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum ShapeKind {
    Rect,
    Disk,
}

/// One shape: class-colored, bounding box half-open in pixels.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Shape {
    pub kind: ShapeKind,
    pub class: usize,
    pub color: [f32; 3],
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SceneSpec {
    pub size: usize,
    pub background: [f32; 3],
    pub shapes: Vec<Shape>,
}

/// Class colors live in the red–green plane while backgrounds sit in dark
/// blues, so the synthetic teacher (a linear map of pooled color) separates
/// foreground classes from background by direction.
const PALETTE: [([f32; 3], &str); 6] = [
    ([0.95, 0.10, 0.08], "red"),
    ([0.10, 0.90, 0.12], "green"),
    ([0.95, 0.90, 0.10], "yellow"),
    ([0.95, 0.50, 0.08], "orange"),
    ([0.55, 0.10, 0.85], "purple"),
    ([0.92, 0.92, 0.92], "white"),
];

// Kept near-orthogonal (in color-space cosine) to the first four palette
// entries so that a threshold as low as 0.3 still separates background
// regions from every class direction after teacher pooling.
const BACKGROUNDS: [[f32; 3]; 3] = [
    [0.04, 0.01, 0.40],
    [0.02, 0.00, 0.12],
    [0.05, 0.02, 0.30],
];

pub fn class_palette(num_classes: usize) -> Result<Vec<([f32; 3], &'static str)>> {
    if num_classes == 0 || num_classes > PALETTE.len() {
        return Err(CoreError::InvalidArg {
            what: "num_classes",
            detail: format!("want 1..={}, got {num_classes}", PALETTE.len()),
        });
    }
    Ok(PALETTE[..num_classes].to_vec())
}

/// Rasterizes a scene. Later shapes overdraw earlier ones in both the image
/// and the mask; disks include a pixel iff its center is within the radius.
pub fn render(spec: &SceneSpec) -> Result<(Vec<f32>, LabelMap)> {
    let s = spec.size;
    if s == 0 {
        return Err(CoreError::InvalidArg { what: "scene size", detail: "zero canvas".into() });
    }
    for (i, sh) in spec.shapes.iter().enumerate() {
        if sh.x0 >= sh.x1 || sh.y0 >= sh.y1 || sh.x1 > s || sh.y1 > s {
            return Err(CoreError::InvalidArg {
                what: "shape bounds",
                detail: format!(
                    "shape {i}: ({},{})–({},{}) outside {s}×{s} canvas",
                    sh.x0, sh.y0, sh.x1, sh.y1
                ),
            });
        }
    }
    let mut image = vec![0.0f32; 3 * s * s];
    for c in 0..3 {
        image[c * s * s..(c + 1) * s * s].fill(spec.background[c]);
    }
    let mut mask = vec![-1i32; s * s];

    for sh in &spec.shapes {
        match sh.kind {
            ShapeKind::Rect => {
                for y in sh.y0..sh.y1 {
                    for x in sh.x0..sh.x1 {
                        paint(&mut image, &mut mask, s, x, y, sh);
                    }
                }
            }
            ShapeKind::Disk => {
                // center and radius from the bbox; pixel centers at +0.5.
                // All quantities are multiples of 0.5, so the squared
                // comparison below is exact in f64.
                let cx = (sh.x0 + sh.x1) as f64 / 2.0;
                let cy = (sh.y0 + sh.y1) as f64 / 2.0;
                let r = (sh.x1 - sh.x0).min(sh.y1 - sh.y0) as f64 / 2.0;
                for y in sh.y0..sh.y1 {
                    for x in sh.x0..sh.x1 {
                        let dx = (x as f64 + 0.5) - cx;
                        let dy = (y as f64 + 0.5) - cy;
                        if dx * dx + dy * dy <= r * r {
                            paint(&mut image, &mut mask, s, x, y, sh);
                        }
                    }
                }
            }
        }
    }
    Ok((image, LabelMap::new(s, s, mask)?))
}

fn paint(image: &mut [f32], mask: &mut [i32], s: usize, x: usize, y: usize, sh: &Shape) {
    for c in 0..3 {
        image[c * s * s + y * s + x] = sh.color[c];
    }
    mask[y * s + x] = sh.class as i32;
}

/// Deterministic scene list: 1–3 shapes per image, classes cycling through
/// the palette, shape extents large enough that several patches are fully
/// inside each shape.
pub fn corpus_scenes(seed: u64, count: usize, num_classes: usize, size: usize) -> Result<Vec<SceneSpec>> {
    if count == 0 {
        return Err(CoreError::InvalidArg { what: "corpus count", detail: "want ≥ 1".into() });
    }
    if size < 32 {
        return Err(CoreError::InvalidArg {
            what: "corpus canvas",
            detail: format!("want ≥ 32 px, got {size}"),
        });
    }
    let palette = class_palette(num_classes)?;
    let mut rng = Rng::seed_from_u64(seed);
    let mut scenes = Vec::with_capacity(count);
    let min_extent = size / 3;
    let max_extent = 2 * size / 3;
    for _ in 0..count {
        let background = BACKGROUNDS[rng.next_below(BACKGROUNDS.len())];
        let n_shapes = 1 + rng.next_below(3);
        let mut shapes = Vec::with_capacity(n_shapes);
        for _ in 0..n_shapes {
            let class = rng.next_below(num_classes);
            let kind = if rng.next_below(2) == 0 { ShapeKind::Rect } else { ShapeKind::Disk };
            let w = min_extent + rng.next_below(max_extent - min_extent + 1);
            let h = min_extent + rng.next_below(max_extent - min_extent + 1);
            let x0 = rng.next_below(size - w + 1);
            let y0 = rng.next_below(size - h + 1);
            shapes.push(Shape {
                kind,
                class,
                color: palette[class].0,
                x0,
                y0,
                x1: x0 + w,
                y1: y0 + h,
            });
        }
        scenes.push(SceneSpec { size, background, shapes });
    }
    Ok(scenes)
}

/// Row c is the teacher's embedding of a full-canvas swatch of class c's
/// color, so zero-shot cosine scoring against this table measures how well a
/// segment token landed on the teacher's idea of that color.
pub fn class_table(
    num_classes: usize,
    size: usize,
    teacher: &dyn TeacherEncoder,
) -> Result<ClassEmbeddingTable> {
    let palette = class_palette(num_classes)?;
    let d = teacher.dim();
    let mut data = Vec::with_capacity(num_classes * d);
    let mut names: Vec<String> = Vec::with_capacity(num_classes);
    for (color, name) in &palette {
        let mut swatch = vec![0.0f32; 3 * size * size];
        for c in 0..3 {
            swatch[c * size * size..(c + 1) * size * size].fill(color[c]);
        }
        data.extend_from_slice(&teacher.encode(&swatch, size));
        names.push(name.to_string());
    }
    ClassEmbeddingTable::new(Tensor::new(vec![num_classes, d], data)?, names)
}
