//! Segmentation head: transformer layers interleaved with two grouping
//! stages that merge patch tokens into a fixed set of segment tokens, plus
//! the composed patch→segment assignment used downstream for masks.

use crate::backbone::{init_linear, init_transformer_block, transformer_block};
use crate::error::{CoreError, Result};
use crate::graph::{Graph, TensorId};
use crate::model::{Binding, ParamSet};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

/// Guards the normalized weighted average against empty groups.
const GROUP_DENOM_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct SegHeadConfig {
    pub layers: usize,
    /// Grouping stages run after these (1-based) layer positions.
    pub grouping_after: (usize, usize),
    /// Learnable group tokens per stage; the second count is the final
    /// number of segment tokens m.
    pub stage_tokens: (usize, usize),
    pub temperature: f32,
    /// Straight-through hard assignment during training.
    pub hard_assign: bool,
    /// Let group tokens attend to each other (one extra self-attention
    /// block per stage) before computing assignment logits. Off by default:
    /// group tokens otherwise interact only with patch tokens.
    pub group_self_attention: bool,
}

impl Default for SegHeadConfig {
    fn default() -> Self {
        SegHeadConfig {
            layers: 5,
            grouping_after: (2, 4),
            stage_tokens: (32, 8),
            temperature: 1.0,
            hard_assign: true,
            group_self_attention: false,
        }
    }
}

impl SegHeadConfig {
    pub fn validate(&self) -> Result<()> {
        let (g1, g2) = self.grouping_after;
        if !(1 <= g1 && g1 < g2 && g2 <= self.layers) {
            return Err(CoreError::InvalidArg {
                what: "seghead config",
                detail: format!("grouping_after {:?} must satisfy 1 <= a < b <= layers ({})", self.grouping_after, self.layers),
            });
        }
        let (t1, t2) = self.stage_tokens;
        if !(t1 > t2 && t2 >= 1) {
            return Err(CoreError::InvalidArg {
                what: "seghead config",
                detail: format!("stage_tokens {:?} must be strictly decreasing and >= 1", self.stage_tokens),
            });
        }
        if !(self.temperature > 0.0) {
            return Err(CoreError::InvalidArg {
                what: "seghead config",
                detail: format!("temperature must be > 0, got {}", self.temperature),
            });
        }
        Ok(())
    }

    pub fn num_segments(&self) -> usize {
        self.stage_tokens.1
    }
}

pub fn init_seghead(params: &mut ParamSet, cfg: &SegHeadConfig, embed_dim: usize, rng: &mut Rng) {
    let d = embed_dim;
    for i in 0..cfg.layers {
        init_transformer_block(params, &format!("seg.layer{i}"), d, 4 * d, rng);
    }
    for (s, tokens) in [(1usize, cfg.stage_tokens.0), (2, cfg.stage_tokens.1)] {
        let prefix = format!("seg.stage{s}");
        // Group tokens start at unit scale, not the 0.02 used for weights:
        // with near-identical tokens every one projects to the same point,
        // picks the same nearest view in the matching loss, and the head
        // collapses into a single segment that no gradient ever splits.
        // Diverse starts give each token a different nearest view to chase.
        params.insert(format!("{prefix}.tokens"), Tensor::randn_trunc(vec![tokens, d], 1.0, rng));
        init_linear(params, &format!("{prefix}.q"), d, d, rng);
        init_linear(params, &format!("{prefix}.k"), d, d, rng);
        init_linear(params, &format!("{prefix}.mlp.fc1"), d, d, rng);
        init_linear(params, &format!("{prefix}.mlp.fc2"), d, d, rng);
        if cfg.group_self_attention {
            init_transformer_block(params, &format!("{prefix}.selfattn"), d, 4 * d, rng);
        }
    }
}

/// Output of one grouping stage.
pub struct GroupingOutput {
    /// Updated group-token carriers [G, d].
    pub tokens: TensorId,
    /// Patch→group assignment [T, G], rows on the simplex (one-hot in hard
    /// mode).
    pub assign: TensorId,
}

/// Assigns patch tokens to group tokens via (gumbel-)softmax over learned
/// similarity logits, then updates each group token with an MLP of the
/// normalized assignment-weighted patch average plus a residual.
pub fn grouping_block<S: Scalar>(
    g: &mut Graph<S>,
    bind: &Binding,
    prefix: &str,
    group_tokens: TensorId,
    patch_tokens: TensorId,
    temperature: f32,
    hard: bool,
    rng: Option<&mut Rng>,
) -> Result<GroupingOutput> {
    let (gn, gd) = g.shape(group_tokens);
    let (_, pd) = g.shape(patch_tokens);
    if gn == 0 {
        return Err(CoreError::Empty { what: "group tokens" });
    }
    if gd != pd {
        return Err(CoreError::ShapeMismatch {
            op: "grouping_block",
            detail: format!("group dim {gd} vs patch dim {pd}"),
        });
    }
    // Cosine similarity of the projections, not a raw dot product: with a
    // plain inner product one group whose query is merely longer than the
    // rest out-scores every patch row at once, and the head degenerates to
    // a single segment before content routing can form. Unit rows make the
    // competition directional only.
    let q = bound_linear(g, bind, &format!("{prefix}.q"), group_tokens)?;
    let k = bound_linear(g, bind, &format!("{prefix}.k"), patch_tokens)?;
    let q = g.l2_normalize_rows(q);
    let k = g.l2_normalize_rows(k);
    let qt = g.transpose(q);
    let logits = g.matmul(k, qt)?; // [T, G]
    let assign = g.gumbel_softmax_st(logits, temperature, hard, rng)?;

    // normalized weighted average: (assignᵀ·x)[g] / (Σ_t assign[t,g] + eps)
    let at = g.transpose(assign);
    let num = g.matmul(at, patch_tokens)?; // [G, d]
    let den = g.sum_rows(assign); // [1, G]
    let den = g.transpose(den); // [G, 1]
    let den = g.add_const(den, S::from_f64(GROUP_DENOM_EPS));
    let inv = g.recip(den);
    let avg = g.scale_rows(num, inv)?;

    let h = bound_linear(g, bind, &format!("{prefix}.mlp.fc1"), avg)?;
    let h = g.gelu(h);
    let h = bound_linear(g, bind, &format!("{prefix}.mlp.fc2"), h)?;
    let tokens = g.add(group_tokens, h)?;
    Ok(GroupingOutput { tokens, assign })
}

fn bound_linear<S: Scalar>(g: &mut Graph<S>, bind: &Binding, prefix: &str, x: TensorId) -> Result<TensorId> {
    g.linear(x, bind.id(&format!("{prefix}.w"))?, bind.id(&format!("{prefix}.b"))?)
}

/// Everything the rest of the pipeline needs from the head.
pub struct SegmentOutput {
    /// Final segment tokens g_1..g_m, [m, d].
    pub segment_tokens: TensorId,
    /// Composed patch→segment assignment [N, m] = stage1 · stage2.
    pub assignment: TensorId,
    pub stage1_assign: TensorId,
    pub stage2_assign: TensorId,
}

/// Layers 1..a₁, grouping stage 1 (N→t₁ carriers), layers a₁+1..a₂,
/// grouping stage 2 (t₁→t₂), remaining layers on the t₂ tokens.
pub fn seghead_forward<S: Scalar>(
    g: &mut Graph<S>,
    bind: &Binding,
    cfg: &SegHeadConfig,
    heads: usize,
    tokens: TensorId,
    mut rng: Option<&mut Rng>,
    hard: bool,
) -> Result<SegmentOutput> {
    cfg.validate()?;
    let mut x = tokens;
    let mut stage1: Option<TensorId> = None;
    let mut stage2: Option<TensorId> = None;
    for i in 0..cfg.layers {
        x = transformer_block(g, bind, &format!("seg.layer{i}"), x, heads)?;
        let pos = i + 1;
        if pos == cfg.grouping_after.0 || pos == cfg.grouping_after.1 {
            let stage = if pos == cfg.grouping_after.0 { 1 } else { 2 };
            let prefix = format!("seg.stage{stage}");
            let mut group_tokens = bind.id(&format!("{prefix}.tokens"))?;
            if cfg.group_self_attention {
                group_tokens =
                    transformer_block(g, bind, &format!("{prefix}.selfattn"), group_tokens, heads)?;
            }
            let out = grouping_block(
                g,
                bind,
                &prefix,
                group_tokens,
                x,
                cfg.temperature,
                hard,
                rng.as_deref_mut(),
            )?;
            x = out.tokens;
            if stage == 1 {
                stage1 = Some(out.assign);
            } else {
                stage2 = Some(out.assign);
            }
        }
    }
    let (a1, a2) = (stage1.expect("validated"), stage2.expect("validated"));
    let assignment = g.matmul(a1, a2)?;
    Ok(SegmentOutput { segment_tokens: x, assignment, stage1_assign: a1, stage2_assign: a2 })
}

/// Per-patch argmax over segments (ties → lowest index), host-side.
pub fn assignment_to_mask(assign: &[f32], n_rows: usize, n_groups: usize) -> Vec<usize> {
    debug_assert_eq!(assign.len(), n_rows * n_groups);
    (0..n_rows)
        .map(|r| {
            let row = &assign[r * n_groups..(r + 1) * n_groups];
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
