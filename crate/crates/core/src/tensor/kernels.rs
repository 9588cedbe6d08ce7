//! Shared dense-math kernels.
//!
//! Every forward path in the crate (taped training, inference, baselines)
//! funnels through these functions, so taped and untaped evaluation of the
//! same op sequence is bitwise identical. Each output row is produced by a
//! fixed sequential loop; the parallel matmul variant only distributes whole
//! rows across threads, which keeps results independent of thread count.

use crate::error::{Error, Result};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Row count × inner × col count above which matmul fans out over rows.
const PAR_FLOPS_THRESHOLD: usize = 1 << 18;

fn matmul_row(out_row: &mut [f64], a_row: &[f64], b: &[f64], inner: usize, cols: usize) {
    debug_assert_eq!(out_row.len(), cols);
    for (kk, &av) in a_row.iter().enumerate().take(inner) {
        let b_row = &b[kk * cols..(kk + 1) * cols];
        for (o, &bv) in out_row.iter_mut().zip(b_row) {
            *o += av * bv;
        }
    }
}

/// C[rows×cols] = A[rows×inner] · B[inner×cols].
pub fn matmul(a: &[f64], b: &[f64], rows: usize, inner: usize, cols: usize) -> Vec<f64> {
    let mut c = vec![0.0; rows * cols];
    #[cfg(feature = "parallel")]
    if rows > 1 && rows * inner * cols >= PAR_FLOPS_THRESHOLD {
        c.par_chunks_mut(cols)
            .zip(a.par_chunks(inner))
            .for_each(|(out_row, a_row)| matmul_row(out_row, a_row, b, inner, cols));
        return c;
    }
    for (out_row, a_row) in c.chunks_mut(cols).zip(a.chunks(inner)) {
        matmul_row(out_row, a_row, b, inner, cols);
    }
    c
}

/// Always-sequential matmul, kept for the bench suite.
pub fn matmul_seq(a: &[f64], b: &[f64], rows: usize, inner: usize, cols: usize) -> Vec<f64> {
    let mut c = vec![0.0; rows * cols];
    for (out_row, a_row) in c.chunks_mut(cols).zip(a.chunks(inner)) {
        matmul_row(out_row, a_row, b, inner, cols);
    }
    c
}

/// C[rows×cols] = A[rows×inner] · B[cols×inner]ᵀ (B given untransposed).
pub fn matmul_nt(a: &[f64], b: &[f64], rows: usize, inner: usize, cols: usize) -> Vec<f64> {
    let mut c = vec![0.0; rows * cols];
    for (out_row, a_row) in c.chunks_mut(cols).zip(a.chunks(inner)) {
        for (o, b_row) in out_row.iter_mut().zip(b.chunks(inner)) {
            *o = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
        }
    }
    c
}

/// C[rows×cols] = A[inner×rows]ᵀ · B[inner×cols] (A given untransposed).
pub fn matmul_tn(a: &[f64], b: &[f64], rows: usize, inner: usize, cols: usize) -> Vec<f64> {
    let mut c = vec![0.0; rows * cols];
    for (a_row, b_row) in a.chunks(rows).zip(b.chunks(cols)).take(inner) {
        for (i, &av) in a_row.iter().enumerate() {
            let out_row = &mut c[i * cols..(i + 1) * cols];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    c
}

pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// Row-wise softmax with per-row max subtraction. `-inf` entries act as
/// mask sentinels and get weight exactly 0.
pub fn softmax_rows(a: &[f64], rows: usize, cols: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        let row = &a[r * cols..(r + 1) * cols];
        if row.iter().any(|x| x.is_nan()) {
            return Err(Error::Numeric(format!("softmax: NaN in row {r}")));
        }
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::Numeric(format!(
                "softmax: row {r} is fully masked (all -inf)"
            )));
        }
        let out_row = &mut out[r * cols..(r + 1) * cols];
        let mut sum = 0.0;
        for (o, &x) in out_row.iter_mut().zip(row) {
            let e = (x - max).exp();
            *o = e;
            sum += e;
        }
        for o in out_row.iter_mut() {
            *o /= sum;
        }
    }
    Ok(out)
}

/// Numerically stable logistic function, exact odd symmetry around 0.
pub fn sigmoid_scalar(x: f64) -> f64 {
    0.5 * (1.0 + (0.5 * x).tanh())
}

pub fn sigmoid(a: &[f64]) -> Vec<f64> {
    a.iter().map(|&x| sigmoid_scalar(x)).collect()
}

pub fn relu(a: &[f64]) -> Vec<f64> {
    a.iter().map(|&x| x.max(0.0)).collect()
}

/// Row-wise layer normalization with population variance.
pub fn layer_norm(
    a: &[f64],
    rows: usize,
    cols: usize,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    let d = cols as f64;
    for (out_row, row) in out.chunks_mut(cols).zip(a.chunks(cols)) {
        let mean = row.iter().sum::<f64>() / d;
        let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / d;
        let inv_std = 1.0 / (var + eps).sqrt();
        for ((o, &x), (&g, &b)) in out_row.iter_mut().zip(row).zip(gamma.iter().zip(beta)) {
            *o = (x - mean) * inv_std * g + b;
        }
    }
    out
}

/// Mean over the rows where `mask` is nonzero; returns a length-`cols` vector.
pub fn masked_mean_pool(a: &[f64], rows: usize, cols: usize, mask: &[u8]) -> Result<Vec<f64>> {
    let count = mask.iter().take(rows).filter(|&&m| m != 0).count();
    if count == 0 {
        return Err(Error::Data("masked mean pool: all-zero mask".into()));
    }
    let mut out = vec![0.0; cols];
    for (row, &m) in a.chunks(cols).zip(mask) {
        if m != 0 {
            for (o, &x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
    }
    let scale = 1.0 / count as f64;
    for o in out.iter_mut() {
        *o *= scale;
    }
    Ok(out)
}

/// Mean binary cross-entropy over labels, with probabilities clamped to
/// `[clamp, 1 - clamp]` before the logs.
pub fn bce(probs: &[f64], targets: &[f64], clamp: f64) -> f64 {
    let m = probs.len() as f64;
    let mut total = 0.0;
    for (&p, &y) in probs.iter().zip(targets) {
        let pc = p.clamp(clamp, 1.0 - clamp);
        total += y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
    }
    -total / m
}

/// d(bce)/d(probs). Zero where the clamp saturates.
pub fn bce_grad(probs: &[f64], targets: &[f64], clamp: f64) -> Vec<f64> {
    let m = probs.len() as f64;
    probs
        .iter()
        .zip(targets)
        .map(|(&p, &y)| {
            if p >= clamp && p <= 1.0 - clamp {
                -(y / p - (1.0 - y) / (1.0 - p)) / m
            } else {
                0.0
            }
        })
        .collect()
}
