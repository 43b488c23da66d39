//! Dense kernels for the denoiser.
//!
//! Batched activations are stored unit-major: a matrix of `dim` rows and
//! `batch` columns lives in a flat slice with the batch contiguous,
//! `a[row * batch + col]`. The inner loops then run over independent
//! batch lanes, which the compiler vectorizes without any float
//! reassociation, so results are bit-identical for every batch width and
//! run-to-run.

/// out[o][b] += sum_i w[o][i] * x[i][b]
pub(crate) fn matmul_acc(
    out: &mut [f64],
    w: &[f64],
    x: &[f64],
    out_dim: usize,
    in_dim: usize,
    batch: usize,
) {
    debug_assert_eq!(out.len(), out_dim * batch);
    debug_assert_eq!(w.len(), out_dim * in_dim);
    debug_assert_eq!(x.len(), in_dim * batch);
    for o in 0..out_dim {
        let row = &w[o * in_dim..(o + 1) * in_dim];
        let out_row = &mut out[o * batch..(o + 1) * batch];
        for (i, &wv) in row.iter().enumerate() {
            let x_row = &x[i * batch..(i + 1) * batch];
            for (ov, &xv) in out_row.iter_mut().zip(x_row) {
                *ov += wv * xv;
            }
        }
    }
}

/// dx[i][b] += sum_o w[o][i] * dy[o][b]  (transpose apply)
pub(crate) fn matmul_t_acc(
    dx: &mut [f64],
    w: &[f64],
    dy: &[f64],
    out_dim: usize,
    in_dim: usize,
    batch: usize,
) {
    debug_assert_eq!(dx.len(), in_dim * batch);
    debug_assert_eq!(w.len(), out_dim * in_dim);
    debug_assert_eq!(dy.len(), out_dim * batch);
    for o in 0..out_dim {
        let row = &w[o * in_dim..(o + 1) * in_dim];
        let dy_row = &dy[o * batch..(o + 1) * batch];
        for (i, &wv) in row.iter().enumerate() {
            let dx_row = &mut dx[i * batch..(i + 1) * batch];
            for (dv, &gv) in dx_row.iter_mut().zip(dy_row) {
                *dv += wv * gv;
            }
        }
    }
}

/// dw[o][i] += sum_b dy[o][b] * x[i][b]
pub(crate) fn outer_acc(
    dw: &mut [f64],
    dy: &[f64],
    x: &[f64],
    out_dim: usize,
    in_dim: usize,
    batch: usize,
) {
    debug_assert_eq!(dw.len(), out_dim * in_dim);
    for o in 0..out_dim {
        let dy_row = &dy[o * batch..(o + 1) * batch];
        let dw_row = &mut dw[o * in_dim..(o + 1) * in_dim];
        for i in 0..in_dim {
            let x_row = &x[i * batch..(i + 1) * batch];
            let mut acc = 0.0;
            for (&g, &xv) in dy_row.iter().zip(x_row) {
                acc += g * xv;
            }
            dw_row[i] += acc;
        }
    }
}

pub(crate) fn add_bias(out: &mut [f64], bias: &[f64], batch: usize) {
    for (o, &bv) in bias.iter().enumerate() {
        for v in &mut out[o * batch..(o + 1) * batch] {
            *v += bv;
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// SiLU x * sigmoid(x), the crate's one smooth nonlinearity.
#[inline]
pub(crate) fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// d/dx SiLU(x) = sigmoid(x) * (1 + x * (1 - sigmoid(x)))
#[inline]
pub(crate) fn silu_deriv(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}
