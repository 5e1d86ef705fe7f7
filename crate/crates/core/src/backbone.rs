//! Masked-autoencoder backbone: patchify → random masking → ViT encoder on
//! visible tokens → full-sequence rebuild with a learnable mask token →
//! reconstruction decoder with pixel-space MSE on masked patches.

use crate::error::{CoreError, Result};
use crate::graph::{Graph, TensorId};
use crate::model::{Binding, ParamSet};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct BackboneConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub encoder_layers: usize,
    pub encoder_heads: usize,
    pub decoder_layers: usize,
    pub decoder_dim: usize,
    pub mask_ratio: f32,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            image_size: 64,
            patch_size: 8,
            embed_dim: 64,
            encoder_layers: 4,
            encoder_heads: 2,
            decoder_layers: 2,
            decoder_dim: 32,
            mask_ratio: 0.6,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.image_size % self.patch_size != 0 {
            return Err(CoreError::InvalidArg {
                what: "backbone config",
                detail: format!("image_size {} not divisible by patch_size {}", self.image_size, self.patch_size),
            });
        }
        if self.encoder_heads == 0 || self.embed_dim % self.encoder_heads != 0 {
            return Err(CoreError::InvalidArg {
                what: "backbone config",
                detail: format!("encoder_heads {} must divide embed_dim {}", self.encoder_heads, self.embed_dim),
            });
        }
        if self.decoder_dim % self.encoder_heads != 0 {
            return Err(CoreError::InvalidArg {
                what: "backbone config",
                detail: format!("encoder_heads {} must divide decoder_dim {}", self.encoder_heads, self.decoder_dim),
            });
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return Err(CoreError::InvalidArg {
                what: "backbone config",
                detail: format!("mask_ratio {} outside [0,1)", self.mask_ratio),
            });
        }
        Ok(())
    }

    pub fn patch_dim(&self) -> usize {
        3 * self.patch_size * self.patch_size
    }
}

pub fn n_patches(cfg: &BackboneConfig) -> usize {
    let side = cfg.image_size / cfg.patch_size;
    side * side
}

/// Splits a channel-first [3,S,S] image into raster-ordered patch rows of
/// length 3·p². Within a row, values are ordered channel, then y, then x.
pub fn patchify(image: &[f32], cfg: &BackboneConfig) -> Result<Tensor> {
    let s = cfg.image_size;
    let p = cfg.patch_size;
    if image.len() != 3 * s * s {
        return Err(CoreError::ShapeMismatch {
            op: "patchify",
            detail: format!("expected 3x{s}x{s} = {} values, got {}", 3 * s * s, image.len()),
        });
    }
    let side = s / p;
    let n = side * side;
    let pd = cfg.patch_dim();
    let mut data = vec![0.0f32; n * pd];
    for py in 0..side {
        for px in 0..side {
            let row = py * side + px;
            let mut k = 0;
            for c in 0..3 {
                for dy in 0..p {
                    for dx in 0..p {
                        let y = py * p + dy;
                        let x = px * p + dx;
                        data[row * pd + k] = image[c * s * s + y * s + x];
                        k += 1;
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, pd], data)
}

/// Exact inverse of `patchify`.
pub fn unpatchify(patches: &Tensor, cfg: &BackboneConfig) -> Result<Vec<f32>> {
    let s = cfg.image_size;
    let p = cfg.patch_size;
    let side = s / p;
    let n = side * side;
    let pd = cfg.patch_dim();
    if patches.shape() != [n, pd] {
        return Err(CoreError::ShapeMismatch {
            op: "unpatchify",
            detail: format!("expected [{n},{pd}], got {:?}", patches.shape()),
        });
    }
    let data = patches.data();
    let mut image = vec![0.0f32; 3 * s * s];
    for py in 0..side {
        for px in 0..side {
            let row = py * side + px;
            let mut k = 0;
            for c in 0..3 {
                for dy in 0..p {
                    for dx in 0..p {
                        let y = py * p + dy;
                        let x = px * p + dx;
                        image[c * s * s + y * s + x] = data[row * pd + k];
                        k += 1;
                    }
                }
            }
        }
    }
    Ok(image)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPlan {
    /// Sorted. |visible| = floor(N·(1−mask_ratio)).
    pub visible: Vec<usize>,
    /// Sorted complement of `visible`.
    pub masked: Vec<usize>,
}

/// Uniform random subset without replacement.
pub fn random_mask(n_patches: usize, mask_ratio: f32, rng: &mut Rng) -> Result<MaskPlan> {
    if !(0.0..1.0).contains(&mask_ratio) {
        return Err(CoreError::InvalidArg {
            what: "random_mask",
            detail: format!("mask_ratio {mask_ratio} outside [0,1)"),
        });
    }
    let n_visible = ((n_patches as f64) * (1.0 - mask_ratio as f64)) as usize;
    let mut visible = rng.choose_indices(n_patches, n_visible);
    visible.sort_unstable();
    let mut is_visible = vec![false; n_patches];
    for &i in &visible {
        is_visible[i] = true;
    }
    let masked = (0..n_patches).filter(|&i| !is_visible[i]).collect();
    Ok(MaskPlan { visible, masked })
}

// ---- parameter init -----------------------------------------------------

const INIT_STD: f32 = 0.02;

pub(crate) fn init_linear(params: &mut ParamSet, prefix: &str, d_in: usize, d_out: usize, rng: &mut Rng) {
    params.insert(format!("{prefix}.w"), Tensor::randn_trunc(vec![d_in, d_out], INIT_STD, rng));
    params.insert(format!("{prefix}.b"), Tensor::zeros(vec![1, d_out]));
}

pub(crate) fn init_layer_norm(params: &mut ParamSet, prefix: &str, dim: usize) {
    params.insert(format!("{prefix}.g"), Tensor::full(vec![1, dim], 1.0));
    params.insert(format!("{prefix}.b"), Tensor::zeros(vec![1, dim]));
}

pub(crate) fn init_transformer_block(
    params: &mut ParamSet,
    prefix: &str,
    dim: usize,
    hidden: usize,
    rng: &mut Rng,
) {
    init_layer_norm(params, &format!("{prefix}.ln1"), dim);
    init_linear(params, &format!("{prefix}.attn.q"), dim, dim, rng);
    init_linear(params, &format!("{prefix}.attn.k"), dim, dim, rng);
    init_linear(params, &format!("{prefix}.attn.v"), dim, dim, rng);
    init_linear(params, &format!("{prefix}.attn.o"), dim, dim, rng);
    init_layer_norm(params, &format!("{prefix}.ln2"), dim);
    init_linear(params, &format!("{prefix}.mlp.fc1"), dim, hidden, rng);
    init_linear(params, &format!("{prefix}.mlp.fc2"), hidden, dim, rng);
}

pub fn init_backbone(params: &mut ParamSet, cfg: &BackboneConfig, rng: &mut Rng) {
    let n = n_patches(cfg);
    let d = cfg.embed_dim;
    init_linear(params, "enc.embed", cfg.patch_dim(), d, rng);
    params.insert("enc.pos", Tensor::randn_trunc(vec![n, d], INIT_STD, rng));
    params.insert("enc.mask_token", Tensor::randn_trunc(vec![1, d], INIT_STD, rng));
    for i in 0..cfg.encoder_layers {
        init_transformer_block(params, &format!("enc.layer{i}"), d, 4 * d, rng);
    }
    init_layer_norm(params, "enc.norm", d);

    let dd = cfg.decoder_dim;
    init_linear(params, "dec.embed", d, dd, rng);
    params.insert("dec.pos", Tensor::randn_trunc(vec![n, dd], INIT_STD, rng));
    for i in 0..cfg.decoder_layers {
        init_transformer_block(params, &format!("dec.layer{i}"), dd, 4 * dd, rng);
    }
    init_layer_norm(params, "dec.norm", dd);
    init_linear(params, "dec.out", dd, cfg.patch_dim(), rng);
}

// ---- forward pieces ------------------------------------------------------

pub(crate) fn affine_layer_norm<S: Scalar>(
    g: &mut Graph<S>,
    bind: &Binding,
    prefix: &str,
    x: TensorId,
) -> Result<TensorId> {
    let normed = g.layer_norm(x);
    let scaled = g.mul_row(normed, bind.id(&format!("{prefix}.g"))?)?;
    g.add_row(scaled, bind.id(&format!("{prefix}.b"))?)
}

pub(crate) fn bound_linear<S: Scalar>(
    g: &mut Graph<S>,
    bind: &Binding,
    prefix: &str,
    x: TensorId,
) -> Result<TensorId> {
    g.linear(x, bind.id(&format!("{prefix}.w"))?, bind.id(&format!("{prefix}.b"))?)
}

fn multi_head_attention<S: Scalar>(
    g: &mut Graph<S>,
    bind: &Binding,
    prefix: &str,
    x: TensorId,
    heads: usize,
) -> Result<TensorId> {
    let (_, d) = g.shape(x);
    let dh = d / heads;
    let q = bound_linear(g, bind, &format!("{prefix}.q"), x)?;
    let k = bound_linear(g, bind, &format!("{prefix}.k"), x)?;
    let v = bound_linear(g, bind, &format!("{prefix}.v"), x)?;
    let mut merged: Option<TensorId> = None;
    for h in 0..heads {
        let qs = g.slice_cols(q, h * dh, (h + 1) * dh)?;
        let ks = g.slice_cols(k, h * dh, (h + 1) * dh)?;
        let vs = g.slice_cols(v, h * dh, (h + 1) * dh)?;
        let head = g.scaled_dot_attention(qs, ks, vs)?;
        merged = Some(match merged {
            Some(acc) => g.concat_cols(acc, head)?,
            None => head,
        });
    }
    bound_linear(g, bind, &format!("{prefix}.o"), merged.expect("heads >= 1"))
}

/// One pre-norm ViT block: x + Attn(LN(x)), then x + MLP(LN(x)).
pub(crate) fn transformer_block<S: Scalar>(
    g: &mut Graph<S>,
    bind: &Binding,
    prefix: &str,
    x: TensorId,
    heads: usize,
) -> Result<TensorId> {
    let h = affine_layer_norm(g, bind, &format!("{prefix}.ln1"), x)?;
    let attn = multi_head_attention(g, bind, &format!("{prefix}.attn"), h, heads)?;
    let x = g.add(x, attn)?;
    let h = affine_layer_norm(g, bind, &format!("{prefix}.ln2"), x)?;
    let m = bound_linear(g, bind, &format!("{prefix}.mlp.fc1"), h)?;
    let m = g.gelu(m);
    let m = bound_linear(g, bind, &format!("{prefix}.mlp.fc2"), m)?;
    g.add(x, m)
}

/// Encoder over visible patches only. Returns the encoded tokens
/// [V, embed_dim] and the number of tokens processed across all layers
/// (the throughput measurement used by the masking-arithmetic checks).
pub fn encoder_forward<S: Scalar>(
    g: &mut Graph<S>,
    bind: &Binding,
    cfg: &BackboneConfig,
    patches: TensorId,
    visible: &[usize],
) -> Result<(TensorId, usize)> {
    if visible.is_empty() {
        return Err(CoreError::Empty { what: "visible patch set" });
    }
    let (rows, pd) = g.shape(patches);
    if pd != cfg.patch_dim() || rows != n_patches(cfg) {
        return Err(CoreError::ShapeMismatch {
            op: "encoder_forward",
            detail: format!("patches [{rows},{pd}] vs expected [{},{}]", n_patches(cfg), cfg.patch_dim()),
        });
    }
    let vis = g.gather_rows(patches, visible)?;
    let embedded = bound_linear(g, bind, "enc.embed", vis)?;
    let pos = g.gather_rows(bind.id("enc.pos")?, visible)?;
    let mut x = g.add(embedded, pos)?;
    for i in 0..cfg.encoder_layers {
        x = transformer_block(g, bind, &format!("enc.layer{i}"), x, cfg.encoder_heads)?;
    }
    let x = affine_layer_norm(g, bind, "enc.norm", x)?;
    Ok((x, visible.len() * cfg.encoder_layers))
}

/// Rebuilds the full N-token sequence: encoded tokens at visible positions,
/// mask token + positional embedding at masked positions, raster order.
pub fn full_sequence<S: Scalar>(
    g: &mut Graph<S>,
    bind: &Binding,
    cfg: &BackboneConfig,
    encoded: TensorId,
    plan: &MaskPlan,
) -> Result<TensorId> {
    let n = n_patches(cfg);
    if plan.visible.len() + plan.masked.len() != n {
        return Err(CoreError::InvalidArg {
            what: "full_sequence",
            detail: format!("plan covers {} patches, expected {n}", plan.visible.len() + plan.masked.len()),
        });
    }
    if plan.masked.is_empty() {
        return Ok(encoded);
    }
    let mask_tok = bind.id("enc.mask_token")?;
    let mrows = g.broadcast_row(mask_tok, plan.masked.len())?;
    let mpos = g.gather_rows(bind.id("enc.pos")?, &plan.masked)?;
    let mrows = g.add(mrows, mpos)?;
    let cat = g.concat_rows(encoded, mrows)?;
    // cat row order is visible ++ masked; invert to raster order.
    let mut inverse = vec![0usize; n];
    for (slot, &p) in plan.visible.iter().chain(plan.masked.iter()).enumerate() {
        inverse[p] = slot;
    }
    g.gather_rows(cat, &inverse)
}

/// Reconstruction decoder over the full sequence → pixel patches [N, 3p²].
pub fn decoder_forward<S: Scalar>(
    g: &mut Graph<S>,
    bind: &Binding,
    cfg: &BackboneConfig,
    full: TensorId,
) -> Result<TensorId> {
    let proj = bound_linear(g, bind, "dec.embed", full)?;
    let mut x = g.add(proj, bind.id("dec.pos")?)?;
    for i in 0..cfg.decoder_layers {
        x = transformer_block(g, bind, &format!("dec.layer{i}"), x, cfg.encoder_heads)?;
    }
    let x = affine_layer_norm(g, bind, "dec.norm", x)?;
    bound_linear(g, bind, "dec.out", x)
}

/// MSE over masked patches only. The bool is the empty-mask warning flag.
pub fn reconstruction_loss<S: Scalar>(
    g: &mut Graph<S>,
    decoded: TensorId,
    target_patches: TensorId,
    plan: &MaskPlan,
) -> Result<(TensorId, bool)> {
    if plan.masked.is_empty() {
        return Ok((g.scalar(S::ZERO), true));
    }
    let pred = g.gather_rows(decoded, &plan.masked)?;
    let tgt = g.gather_rows(target_patches, &plan.masked)?;
    Ok((g.mse(pred, tgt)?, false))
}
