//! Numeric kernels behind the graph ops. All kernels are single-threaded and
//! loop in a fixed order so results are bit-reproducible across runs.

use crate::scalar::Scalar;
use alloc::vec;
use alloc::vec::Vec;

/// `a` is [m,k], `b` is [k,n], output [m,n]. ikj order keeps the inner loop
/// streaming over both `b` and `out`.
pub fn matmul<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut out = vec![S::ZERO; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] = orow[j] + av * brow[j];
            }
        }
    }
    out
}

pub fn transpose<S: Scalar>(a: &[S], rows: usize, cols: usize) -> Vec<S> {
    let mut out = vec![S::ZERO; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// Row-wise softmax with max-subtraction for stability.
pub fn softmax_rows<S: Scalar>(x: &[S], rows: usize, cols: usize) -> Vec<S> {
    let mut out = vec![S::ZERO; rows * cols];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let mut mx = row[0];
        for &v in &row[1..] {
            mx = mx.max(v);
        }
        let mut sum = S::ZERO;
        for (o, &v) in out[r * cols..(r + 1) * cols].iter_mut().zip(row) {
            let e = (v - mx).exp();
            *o = e;
            sum = sum + e;
        }
        for o in &mut out[r * cols..(r + 1) * cols] {
            *o = *o / sum;
        }
    }
    out
}

/// dL/dx for y = softmax(x) per row: y ⊙ (g − Σ g⊙y).
pub fn softmax_backward_rows<S: Scalar>(y: &[S], g: &[S], rows: usize, cols: usize) -> Vec<S> {
    let mut out = vec![S::ZERO; rows * cols];
    for r in 0..rows {
        let yr = &y[r * cols..(r + 1) * cols];
        let gr = &g[r * cols..(r + 1) * cols];
        let mut dot = S::ZERO;
        for (&yv, &gv) in yr.iter().zip(gr) {
            dot = dot + yv * gv;
        }
        for ((o, &yv), &gv) in out[r * cols..(r + 1) * cols].iter_mut().zip(yr).zip(gr) {
            *o = yv * (gv - dot);
        }
    }
    out
}

/// Row-wise (x − mean) / sqrt(var + eps); the affine part is composed outside.
pub fn layernorm_rows<S: Scalar>(x: &[S], rows: usize, cols: usize, eps: S) -> Vec<S> {
    let mut out = vec![S::ZERO; rows * cols];
    let n = S::from_f64(cols as f64);
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let mut mean = S::ZERO;
        for &v in row {
            mean = mean + v;
        }
        mean = mean / n;
        let mut var = S::ZERO;
        for &v in row {
            let c = v - mean;
            var = var + c * c;
        }
        var = var / n;
        let inv = S::ONE / (var + eps).sqrt();
        for (o, &v) in out[r * cols..(r + 1) * cols].iter_mut().zip(row) {
            *o = (v - mean) * inv;
        }
    }
    out
}

/// dx = (1/σ)(g − mean(g) − y·mean(g⊙y)) per row, recomputing σ from x.
pub fn layernorm_backward_rows<S: Scalar>(
    x: &[S],
    y: &[S],
    g: &[S],
    rows: usize,
    cols: usize,
    eps: S,
) -> Vec<S> {
    let mut out = vec![S::ZERO; rows * cols];
    let n = S::from_f64(cols as f64);
    for r in 0..rows {
        let xr = &x[r * cols..(r + 1) * cols];
        let yr = &y[r * cols..(r + 1) * cols];
        let gr = &g[r * cols..(r + 1) * cols];
        let mut mean = S::ZERO;
        for &v in xr {
            mean = mean + v;
        }
        mean = mean / n;
        let mut var = S::ZERO;
        for &v in xr {
            let c = v - mean;
            var = var + c * c;
        }
        var = var / n;
        let inv = S::ONE / (var + eps).sqrt();
        let mut gmean = S::ZERO;
        let mut gy = S::ZERO;
        for (&gv, &yv) in gr.iter().zip(yr) {
            gmean = gmean + gv;
            gy = gy + gv * yv;
        }
        gmean = gmean / n;
        gy = gy / n;
        for ((o, &gv), &yv) in out[r * cols..(r + 1) * cols].iter_mut().zip(gr).zip(yr) {
            *o = (gv - gmean - yv * gy) * inv;
        }
    }
    out
}

/// Exact GELU: 0.5·x·(1 + erf(x/√2)).
pub fn gelu<S: Scalar>(x: &[S]) -> Vec<S> {
    let half = S::from_f64(0.5);
    let inv_sqrt2 = S::from_f64(core::f64::consts::FRAC_1_SQRT_2);
    x.iter().map(|&v| half * v * (S::ONE + (v * inv_sqrt2).erf())).collect()
}

pub fn gelu_backward<S: Scalar>(x: &[S], g: &[S]) -> Vec<S> {
    let half = S::from_f64(0.5);
    let inv_sqrt2 = S::from_f64(core::f64::consts::FRAC_1_SQRT_2);
    // d/dx = Φ(x) + x·φ(x) with Φ the normal CDF and φ its density.
    let inv_sqrt_2pi = S::from_f64(1.0 / (2.0 * core::f64::consts::PI).sqrt());
    x.iter()
        .zip(g)
        .map(|(&v, &gv)| {
            let cdf = half * (S::ONE + (v * inv_sqrt2).erf());
            let pdf = inv_sqrt_2pi * (S::from_f64(-0.5) * v * v).exp();
            gv * (cdf + v * pdf)
        })
        .collect()
}

/// Per-row x / (‖x‖₂ + eps).
pub fn l2_normalize_rows<S: Scalar>(x: &[S], rows: usize, cols: usize, eps: S) -> Vec<S> {
    let mut out = vec![S::ZERO; rows * cols];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let mut sq = S::ZERO;
        for &v in row {
            sq = sq + v * v;
        }
        let inv = S::ONE / (sq.sqrt() + eps);
        for (o, &v) in out[r * cols..(r + 1) * cols].iter_mut().zip(row) {
            *o = v * inv;
        }
    }
    out
}

pub fn l2_normalize_backward_rows<S: Scalar>(
    x: &[S],
    g: &[S],
    rows: usize,
    cols: usize,
    eps: S,
) -> Vec<S> {
    let mut out = vec![S::ZERO; rows * cols];
    for r in 0..rows {
        let xr = &x[r * cols..(r + 1) * cols];
        let gr = &g[r * cols..(r + 1) * cols];
        let mut sq = S::ZERO;
        for &v in xr {
            sq = sq + v * v;
        }
        let norm = sq.sqrt();
        let rdenom = norm + eps;
        let mut gx = S::ZERO;
        for (&gv, &xv) in gr.iter().zip(xr) {
            gx = gx + gv * xv;
        }
        // y = x/r with r = ‖x‖+eps: dx = g/r − x·(g·x)/(r²‖x‖); the second
        // term vanishes in the limit of a zero vector.
        let corr = if norm.to_f64() > 0.0 { gx / (rdenom * rdenom * norm) } else { S::ZERO };
        for ((o, &gv), &xv) in out[r * cols..(r + 1) * cols].iter_mut().zip(gr).zip(xr) {
            *o = gv / rdenom - xv * corr;
        }
    }
    out
}
