//! Central finite-difference verification of the reverse pass.
//!
//! The forward computation is replayed entirely in f64 so the comparison
//! measures autodiff correctness rather than f32 rounding. Relative error is
//! |a − n| / max(1, |a|, |n|).

use crate::error::{CoreError, Result};
use crate::graph::{Graph, TensorId};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

/// One named leaf of the checked function.
#[derive(Debug, Clone)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, rows: usize, cols: usize, data: Vec<f64>) -> Self {
        ParamSpec { name: name.into(), rows, cols, data }
    }

    pub fn from_f32(name: impl Into<String>, rows: usize, cols: usize, data: &[f32]) -> Self {
        ParamSpec { name: name.into(), rows, cols, data: data.iter().map(|&v| v as f64).collect() }
    }
}

#[derive(Debug, Clone)]
pub struct ParamReport {
    pub name: String,
    pub max_rel_err: f64,
    /// Flat element index where the worst error occurred.
    pub worst_index: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub params: Vec<ParamReport>,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tol
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    let denom = 1.0f64.max(a.abs()).max(n.abs());
    (a - n).abs() / denom
}

/// Checks d(build)/d(params) against central differences with step `h`,
/// covering every element of every parameter.
///
/// `build` must be deterministic: it is re-invoked twice per checked element
/// with perturbed leaf data, so any randomness has to be frozen outside.
pub fn grad_check<F>(build: F, params: &[ParamSpec], h: f64, tol: f64) -> Result<GradReport>
where
    F: Fn(&mut Graph<f64>, &[TensorId]) -> Result<TensorId>,
{
    grad_check_sampled(build, params, h, tol, usize::MAX)
}

/// Like `grad_check`, but checks at most `max_per_param` evenly strided
/// elements of each parameter. The subset is deterministic, so failures
/// reproduce. Intended for configurations whose full element count would
/// make 2·numel forward replays impractical.
pub fn grad_check_sampled<F>(
    build: F,
    params: &[ParamSpec],
    h: f64,
    tol: f64,
    max_per_param: usize,
) -> Result<GradReport>
where
    F: Fn(&mut Graph<f64>, &[TensorId]) -> Result<TensorId>,
{
    let eval = |data: &[Vec<f64>]| -> Result<f64> {
        let mut g: Graph<f64> = Graph::new();
        let mut ids = Vec::with_capacity(params.len());
        for (spec, d) in params.iter().zip(data) {
            ids.push(g.input(spec.rows, spec.cols, d.clone(), true)?);
        }
        let loss = build(&mut g, &ids)?;
        let (lr, lc) = g.shape(loss);
        if (lr, lc) != (1, 1) {
            return Err(CoreError::InvalidArg {
                what: "grad_check",
                detail: format!("build must return a scalar, got [{lr},{lc}]"),
            });
        }
        let value = g.scalar_value(loss);
        if !value.is_finite() {
            return Err(CoreError::NonFinite {
                where_: "grad_check forward",
                detail: format!("loss = {value}"),
            });
        }
        Ok(value)
    };

    let base: Vec<Vec<f64>> = params.iter().map(|p| p.data.clone()).collect();

    // Analytic pass.
    let mut g: Graph<f64> = Graph::new();
    let mut ids = Vec::with_capacity(params.len());
    for spec in params {
        ids.push(g.input(spec.rows, spec.cols, spec.data.clone(), true)?);
    }
    let loss = build(&mut g, &ids)?;
    let grads = g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .zip(&ids)
        .map(|(spec, &id)| match grads.grad(id) {
            Some(gr) => gr.to_vec(),
            None => alloc::vec![0.0; spec.rows * spec.cols],
        })
        .collect();
    for (spec, a) in params.iter().zip(&analytic) {
        if a.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite {
                where_: "grad_check analytic gradient",
                detail: spec.name.clone(),
            });
        }
    }

    // Numeric pass: one central difference per element.
    let mut reports = Vec::with_capacity(params.len());
    let mut overall = 0.0f64;
    for (pi, spec) in params.iter().enumerate() {
        let mut worst = ParamReport {
            name: spec.name.clone(),
            max_rel_err: 0.0,
            worst_index: 0,
            analytic_at_worst: analytic[pi].first().copied().unwrap_or(0.0),
            numeric_at_worst: 0.0,
        };
        let len = spec.data.len();
        let stride = if max_per_param == 0 || len <= max_per_param {
            1
        } else {
            len.div_ceil(max_per_param)
        };
        for i in (0..len).step_by(stride) {
            let mut data = base.clone();
            data[pi][i] = base[pi][i] + h;
            let plus = eval(&data)?;
            data[pi][i] = base[pi][i] - h;
            let minus = eval(&data)?;
            let numeric = (plus - minus) / (2.0 * h);
            if !numeric.is_finite() {
                return Err(CoreError::NonFinite {
                    where_: "grad_check numeric gradient",
                    detail: format!("{}[{i}]", spec.name),
                });
            }
            let e = rel_err(analytic[pi][i], numeric);
            if e >= worst.max_rel_err {
                worst.max_rel_err = e;
                worst.worst_index = i;
                worst.analytic_at_worst = analytic[pi][i];
                worst.numeric_at_worst = numeric;
            }
        }
        overall = overall.max(worst.max_rel_err);
        reports.push(worst);
    }

    Ok(GradReport { params: reports, max_rel_err: overall, tol })
}

// ---- op catalog ---------------------------------------------------------

type OpBuilder = fn(&mut Graph<f64>, &[TensorId]) -> Result<TensorId>;

/// One differentiable op paired with representative inputs, packaged so a
/// driver can sweep the whole kernel set and report per-op results.
pub struct OpCheck {
    pub name: &'static str,
    params: Vec<ParamSpec>,
    builder: OpBuilder,
}

impl OpCheck {
    pub fn run(&self, h: f64, tol: f64) -> Result<GradReport> {
        grad_check(self.builder, &self.params, h, tol)
    }
}

/// Collapses `t` to a scalar through an asymmetric fixed probe, so that a
/// wrong-by-permutation gradient cannot cancel out the way it would under a
/// plain `sum_all`.
fn probed_sum(g: &mut Graph<f64>, t: TensorId) -> Result<TensorId> {
    let (r, c) = g.shape(t);
    let probe: Vec<f64> = (0..r * c).map(|k| libm::sin(0.7 + 0.37 * k as f64)).collect();
    let probe = g.constant(r, c, probe)?;
    let prod = g.mul(t, probe)?;
    Ok(g.sum_all(prod))
}

fn normal_spec(name: &'static str, rows: usize, cols: usize, seed: u64) -> ParamSpec {
    let mut rng = crate::rng::Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.normal_f64() * 0.8).collect();
    ParamSpec::new(name, rows, cols, data)
}

/// Strictly positive data bounded away from zero, for ops with poles there.
fn positive_spec(name: &'static str, rows: usize, cols: usize, seed: u64) -> ParamSpec {
    let mut rng = crate::rng::Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..rows * cols).map(|_| 1.2 + 0.8 * rng.uniform_f64()).collect();
    ParamSpec::new(name, rows, cols, data)
}

/// Partner for `l1_distance`: offsets `base` by at least 0.4 per element so
/// no |·| kink sits within a finite-difference step of the base point.
fn offset_spec(name: &'static str, base: &ParamSpec, seed: u64) -> ParamSpec {
    let mut rng = crate::rng::Rng::seed_from_u64(seed);
    let data: Vec<f64> = base
        .data
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let mag = 0.4 + 0.6 * rng.uniform_f64();
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            v + sign * mag
        })
        .collect();
    ParamSpec::new(name, base.rows, base.cols, data)
}

/// Every differentiable tape kernel with inputs sized to exercise
/// non-square shapes, duplicate gather indices and broadcasting.
pub fn op_catalog() -> Vec<OpCheck> {
    let mut out = Vec::new();
    let mut push = |name: &'static str, params: Vec<ParamSpec>, builder: OpBuilder| {
        out.push(OpCheck { name, params, builder });
    };

    push("matmul", alloc::vec![normal_spec("a", 3, 4, 11), normal_spec("b", 4, 5, 12)], |g, ids| {
        let m = g.matmul(ids[0], ids[1])?;
        probed_sum(g, m)
    });
    push("add", alloc::vec![normal_spec("a", 3, 4, 13), normal_spec("b", 3, 4, 14)], |g, ids| {
        let s = g.add(ids[0], ids[1])?;
        probed_sum(g, s)
    });
    push("sub", alloc::vec![normal_spec("a", 3, 4, 15), normal_spec("b", 3, 4, 16)], |g, ids| {
        let s = g.sub(ids[0], ids[1])?;
        probed_sum(g, s)
    });
    push("mul", alloc::vec![normal_spec("a", 3, 4, 17), normal_spec("b", 3, 4, 18)], |g, ids| {
        let s = g.mul(ids[0], ids[1])?;
        probed_sum(g, s)
    });
    push("scale_add_const", alloc::vec![normal_spec("a", 3, 4, 19)], |g, ids| {
        let s = g.scale(ids[0], -1.75);
        let s = g.add_const(s, 0.3);
        probed_sum(g, s)
    });
    push("add_row", alloc::vec![normal_spec("a", 3, 4, 20), normal_spec("row", 1, 4, 21)], |g, ids| {
        let s = g.add_row(ids[0], ids[1])?;
        probed_sum(g, s)
    });
    push("mul_row", alloc::vec![normal_spec("a", 3, 4, 22), normal_spec("row", 1, 4, 23)], |g, ids| {
        let s = g.mul_row(ids[0], ids[1])?;
        probed_sum(g, s)
    });
    push("scale_rows", alloc::vec![normal_spec("a", 3, 4, 24), normal_spec("s", 3, 1, 25)], |g, ids| {
        let s = g.scale_rows(ids[0], ids[1])?;
        probed_sum(g, s)
    });
    push("transpose", alloc::vec![normal_spec("a", 3, 4, 26)], |g, ids| {
        let t = g.transpose(ids[0]);
        probed_sum(g, t)
    });
    push("reshape", alloc::vec![normal_spec("a", 3, 4, 27)], |g, ids| {
        let r = g.reshape(ids[0], 2, 6)?;
        probed_sum(g, r)
    });
    push("gelu", alloc::vec![normal_spec("a", 3, 4, 28)], |g, ids| {
        let s = g.gelu(ids[0]);
        probed_sum(g, s)
    });
    push("softmax", alloc::vec![normal_spec("a", 3, 5, 29)], |g, ids| {
        let s = g.softmax(ids[0]);
        probed_sum(g, s)
    });
    push("layer_norm", alloc::vec![normal_spec("a", 3, 6, 30)], |g, ids| {
        let s = g.layer_norm(ids[0]);
        probed_sum(g, s)
    });
    push("l2_normalize_rows", alloc::vec![normal_spec("a", 3, 5, 31)], |g, ids| {
        let s = g.l2_normalize_rows(ids[0]);
        probed_sum(g, s)
    });
    push("mean_rows_mean_all", alloc::vec![normal_spec("a", 3, 4, 32)], |g, ids| {
        let mr = g.mean_rows(ids[0]);
        let pm = probed_sum(g, mr)?;
        let ma = g.mean_all(ids[0]);
        g.add(pm, ma)
    });
    push("sum_rows", alloc::vec![normal_spec("a", 3, 4, 33)], |g, ids| {
        let s = g.sum_rows(ids[0]);
        probed_sum(g, s)
    });
    push("gather_rows", alloc::vec![normal_spec("a", 4, 3, 34)], |g, ids| {
        // index 3 appears twice: its gradient must accumulate both pulls
        let s = g.gather_rows(ids[0], &[2, 0, 3, 3, 1])?;
        probed_sum(g, s)
    });
    push("slice_cols", alloc::vec![normal_spec("a", 3, 6, 35)], |g, ids| {
        let s = g.slice_cols(ids[0], 1, 4)?;
        probed_sum(g, s)
    });
    push("concat_rows", alloc::vec![normal_spec("a", 2, 3, 36), normal_spec("b", 3, 3, 37)], |g, ids| {
        let s = g.concat_rows(ids[0], ids[1])?;
        probed_sum(g, s)
    });
    push("concat_cols", alloc::vec![normal_spec("a", 2, 2, 38), normal_spec("b", 2, 4, 39)], |g, ids| {
        let s = g.concat_cols(ids[0], ids[1])?;
        probed_sum(g, s)
    });
    push("broadcast_row", alloc::vec![normal_spec("row", 1, 4, 40)], |g, ids| {
        let s = g.broadcast_row(ids[0], 3)?;
        probed_sum(g, s)
    });
    push("recip", alloc::vec![positive_spec("a", 2, 3, 41)], |g, ids| {
        let s = g.recip(ids[0]);
        probed_sum(g, s)
    });
    push("mse", alloc::vec![normal_spec("a", 3, 4, 42), normal_spec("b", 3, 4, 43)], |g, ids| {
        g.mse(ids[0], ids[1])
    });
    {
        let a = normal_spec("a", 2, 6, 44);
        let b = offset_spec("b", &a, 45);
        push("l1_distance", alloc::vec![a, b], |g, ids| g.l1_distance(ids[0], ids[1]));
    }
    push(
        "linear",
        alloc::vec![normal_spec("x", 2, 3, 46), normal_spec("w", 3, 4, 47), normal_spec("b", 1, 4, 48)],
        |g, ids| {
            let y = g.linear(ids[0], ids[1], ids[2])?;
            probed_sum(g, y)
        },
    );
    push(
        "scaled_dot_attention",
        alloc::vec![normal_spec("q", 3, 4, 49), normal_spec("k", 3, 4, 50), normal_spec("v", 3, 4, 51)],
        |g, ids| {
            let y = g.scaled_dot_attention(ids[0], ids[1], ids[2])?;
            probed_sum(g, y)
        },
    );
    // Noise off and soft output: the straight-through hard path is
    // non-differentiable by construction and is covered by its own
    // forward-equality test instead.
    push("gumbel_softmax_soft", alloc::vec![normal_spec("logits", 3, 5, 52)], |g, ids| {
        let y = g.gumbel_softmax_st(ids[0], 0.7, false, None)?;
        probed_sum(g, y)
    });
    push("sum_scalars_min_scalars", alloc::vec![normal_spec("a", 1, 4, 53)], |g, ids| {
        // distinct scalars via slicing, through min (picks one) plus sum (all)
        let parts: Vec<TensorId> = (0..4)
            .map(|i| {
                let col = g.slice_cols(ids[0], i, i + 1)?;
                Ok(g.reshape(col, 1, 1)?)
            })
            .collect::<Result<_>>()?;
        let (lo, _) = g.min_scalars(&parts)?;
        let total = g.sum_scalars(&parts)?;
        g.add(lo, total)
    });

    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn linear_function_is_exact() {
        // f(x) = 3·Σx with a power-of-two step: central difference is exact,
        // so the relative error is identically zero.
        let spec = [ParamSpec::new("x", 1, 2, vec![0.5, -0.25])];
        let report = grad_check(
            |g, ids| {
                let three = g.scale(ids[0], 3.0);
                Ok(g.sum_all(three))
            },
            &spec,
            0.0009765625, // 2^-10
            1e-3,
        )
        .unwrap();
        assert_eq!(report.max_rel_err, 0.0);
        assert!(report.passed());
    }

    #[test]
    fn constant_function_has_zero_grads() {
        let spec = [ParamSpec::new("x", 1, 3, vec![1.0, 2.0, 3.0])];
        let report = grad_check(
            |g, _ids| {
                let c = g.constant(1, 1, vec![7.0])?;
                Ok(g.sum_all(c))
            },
            &spec,
            1e-3,
            1e-3,
        )
        .unwrap();
        assert_eq!(report.max_rel_err, 0.0);
        for p in &report.params {
            assert_eq!(p.analytic_at_worst, 0.0);
            assert_eq!(p.numeric_at_worst, 0.0);
        }
    }

    #[test]
    fn two_layer_mlp_passes() {
        // x → gelu(x·W1 + b1) → ·W2 → mse against a fixed target
        let specs = [
            ParamSpec::new("x", 2, 3, vec![0.1, -0.4, 0.7, 0.3, 0.9, -0.2]),
            ParamSpec::new("w1", 3, 4, (0..12).map(|i| ((i * 7 % 11) as f64 - 5.0) / 10.0).collect()),
            ParamSpec::new("b1", 1, 4, vec![0.05, -0.1, 0.2, 0.0]),
            ParamSpec::new("w2", 4, 2, (0..8).map(|i| ((i * 5 % 9) as f64 - 4.0) / 8.0).collect()),
        ];
        let report = grad_check(
            |g, ids| {
                let h1 = g.linear(ids[0], ids[1], ids[2])?;
                let a1 = g.gelu(h1);
                let y = g.matmul(a1, ids[3])?;
                let target = g.constant(2, 2, vec![0.25, -0.5, 0.75, 0.1])?;
                g.mse(y, target)
            },
            &specs,
            1e-3,
            1e-3,
        )
        .unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let spec = [ParamSpec::new("x", 1, 1, vec![0.0])];
        let err = grad_check(
            |g, ids| {
                let r = g.recip(ids[0]); // 1/0 at the base point
                Ok(g.sum_all(r))
            },
            &spec,
            1e-3,
            1e-3,
        )
        .unwrap_err();
        assert!(matches!(err, CoreError::NonFinite { .. }));
    }

    #[test]
    fn every_catalog_op_matches_central_differences() {
        let catalog = op_catalog();
        assert!(catalog.len() >= 25, "catalog shrank to {}", catalog.len());
        for op in &catalog {
            let report = op.run(1e-3, 1e-3).unwrap_or_else(|e| panic!("{}: {e}", op.name));
            assert!(
                report.passed(),
                "{}: max rel err {} at {}[{}] (analytic {}, numeric {})",
                op.name,
                report.max_rel_err,
                report.params.iter().max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err)).map(|p| p.name.as_str()).unwrap_or("?"),
                report.params.iter().max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err)).map(|p| p.worst_index).unwrap_or(0),
                report.params.iter().max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err)).map(|p| p.analytic_at_worst).unwrap_or(0.0),
                report.params.iter().max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err)).map(|p| p.numeric_at_worst).unwrap_or(0.0),
            );
        }
    }

    #[test]
    fn catalog_names_are_unique() {
        let catalog = op_catalog();
        for (i, a) in catalog.iter().enumerate() {
            for b in &catalog[i + 1..] {
                assert_ne!(a.name, b.name);
            }
        }
    }
}
