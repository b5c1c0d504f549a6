//! Forward and backward compute kernels for the network operators.
//!
//! All kernels are plain functions over [`Tensor`]s. Backward kernels are
//! gather-style: every output buffer is partitioned into planes and each
//! plane is written by exactly one task, which keeps floating-point results
//! independent of thread scheduling.

use crate::error::{Error, Result};
use crate::parallel::for_each_plane;
use crate::tensor::Tensor;

/// Sigmoid outputs are clamped this far inside (0, 1) so downstream
/// logistic losses stay finite in 64-bit arithmetic.
pub const SIGMOID_MARGIN: f64 = 1e-12;

pub fn conv_out_size(input: usize, kernel: usize, stride: usize) -> Option<usize> {
    if kernel == 0 || stride == 0 || input < kernel {
        return None;
    }
    Some((input - kernel) / stride + 1)
}

/// `out[i] += sum_kx w[kx] * input[i*stride + kx]` over a full output row.
/// Unit-stride kernels widths 1/3/5/7 get multi-slice forms that vectorize
/// across the row; everything else takes the generic path.
#[inline]
fn corr_row(out: &mut [f64], input: &[f64], w: &[f64], stride: usize) {
    let n = out.len();
    if stride == 1 {
        match w.len() {
            1 => {
                let w0 = w[0];
                for (o, i) in out.iter_mut().zip(&input[..n]) {
                    *o += w0 * i;
                }
            }
            3 => {
                let (w0, w1, w2) = (w[0], w[1], w[2]);
                let (s0, s1, s2) = (&input[..n], &input[1..1 + n], &input[2..2 + n]);
                for i in 0..n {
                    out[i] += w0 * s0[i] + w1 * s1[i] + w2 * s2[i];
                }
            }
            5 => {
                let (s0, s1, s2, s3, s4) = (
                    &input[..n],
                    &input[1..1 + n],
                    &input[2..2 + n],
                    &input[3..3 + n],
                    &input[4..4 + n],
                );
                for i in 0..n {
                    out[i] += w[0] * s0[i]
                        + w[1] * s1[i]
                        + w[2] * s2[i]
                        + w[3] * s3[i]
                        + w[4] * s4[i];
                }
            }
            7 => {
                let (s0, s1, s2, s3, s4, s5, s6) = (
                    &input[..n],
                    &input[1..1 + n],
                    &input[2..2 + n],
                    &input[3..3 + n],
                    &input[4..4 + n],
                    &input[5..5 + n],
                    &input[6..6 + n],
                );
                for i in 0..n {
                    out[i] += w[0] * s0[i]
                        + w[1] * s1[i]
                        + w[2] * s2[i]
                        + w[3] * s3[i]
                        + w[4] * s4[i]
                        + w[5] * s5[i]
                        + w[6] * s6[i];
                }
            }
            _ => {
                for (o, win) in out.iter_mut().zip(input.windows(w.len())) {
                    let mut acc = 0.0;
                    for (wv, iv) in w.iter().zip(win) {
                        acc += wv * iv;
                    }
                    *o += acc;
                }
            }
        }
    } else {
        match w.len() {
            1 => corr_row_strided::<1>(out, input, w, stride),
            3 => corr_row_strided::<3>(out, input, w, stride),
            5 => corr_row_strided::<5>(out, input, w, stride),
            7 => corr_row_strided::<7>(out, input, w, stride),
            k => {
                for (i, o) in out.iter_mut().enumerate() {
                    let base = i * stride;
                    let mut acc = 0.0;
                    for (wv, iv) in w.iter().zip(&input[base..base + k]) {
                        acc += wv * iv;
                    }
                    *o += acc;
                }
            }
        }
    }
}

#[inline]
fn corr_row_strided<const K: usize>(out: &mut [f64], input: &[f64], w: &[f64], stride: usize) {
    let wa: [f64; K] = w.try_into().expect("kernel width");
    for (i, o) in out.iter_mut().enumerate() {
        let r = &input[i * stride..i * stride + K];
        let mut acc = 0.0;
        for j in 0..K {
            acc += wa[j] * r[j];
        }
        *o += acc;
    }
}

/// Transpose of [`corr_row`]: `dst[i*stride + kx] += w[kx] * g[i]`.
#[inline]
fn scatter_row(dst: &mut [f64], g: &[f64], w: &[f64], stride: usize) {
    match w.len() {
        1 => scatter_row_k::<1>(dst, g, w, stride),
        3 => scatter_row_k::<3>(dst, g, w, stride),
        5 => scatter_row_k::<5>(dst, g, w, stride),
        7 => scatter_row_k::<7>(dst, g, w, stride),
        k => {
            for (i, &gv) in g.iter().enumerate() {
                let base = i * stride;
                for (d, wv) in dst[base..base + k].iter_mut().zip(w) {
                    *d += wv * gv;
                }
            }
        }
    }
}

#[inline]
fn scatter_row_k<const K: usize>(dst: &mut [f64], g: &[f64], w: &[f64], stride: usize) {
    let wa: [f64; K] = w.try_into().expect("kernel width");
    for (i, &gv) in g.iter().enumerate() {
        let d = &mut dst[i * stride..i * stride + K];
        for j in 0..K {
            d[j] += wa[j] * gv;
        }
    }
}

/// Four-lane dot product; fixed summation grouping keeps it deterministic.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut lanes = [0.0f64; 4];
    let mut ai = a.chunks_exact(4);
    let mut bi = b.chunks_exact(4);
    for (a4, b4) in (&mut ai).zip(&mut bi) {
        lanes[0] += a4[0] * b4[0];
        lanes[1] += a4[1] * b4[1];
        lanes[2] += a4[2] * b4[2];
        lanes[3] += a4[3] * b4[3];
    }
    let mut acc = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
    for (av, bv) in ai.remainder().iter().zip(bi.remainder()) {
        acc += av * bv;
    }
    acc
}

/// `acc[kx] += sum_i g[i] * input[i*stride + kx]`.
#[inline]
fn dot_rows(acc: &mut [f64], g: &[f64], input: &[f64], stride: usize) {
    let n = g.len();
    if stride == 1 {
        for (kx, a) in acc.iter_mut().enumerate() {
            *a += dot(g, &input[kx..kx + n]);
        }
    } else {
        match acc.len() {
            1 => dot_rows_strided::<1>(acc, g, input, stride),
            3 => dot_rows_strided::<3>(acc, g, input, stride),
            5 => dot_rows_strided::<5>(acc, g, input, stride),
            7 => dot_rows_strided::<7>(acc, g, input, stride),
            k => {
                for (i, &gv) in g.iter().enumerate() {
                    let base = i * stride;
                    for (a, iv) in acc.iter_mut().zip(&input[base..base + k]) {
                        *a += gv * iv;
                    }
                }
            }
        }
    }
}

#[inline]
fn dot_rows_strided<const K: usize>(acc: &mut [f64], g: &[f64], input: &[f64], stride: usize) {
    let mut lanes = [0.0f64; K];
    for (i, &gv) in g.iter().enumerate() {
        let r = &input[i * stride..i * stride + K];
        for j in 0..K {
            lanes[j] += gv * r[j];
        }
    }
    for (a, l) in acc.iter_mut().zip(lanes) {
        *a += l;
    }
}

struct ConvDims {
    h: usize,
    w: usize,
    c_out: usize,
    cin_g: usize,
    k: usize,
    h_out: usize,
    w_out: usize,
}

fn check_conv(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    stride: usize,
    groups: usize,
) -> Result<ConvDims> {
    let is = input.shape();
    let ws = weights.shape();
    if is.len() != 3 || ws.len() != 4 {
        return Err(Error::shape(
            "conv2d",
            format!("expected input [C,H,W] and weights [Co,Ci/g,k,k], got {is:?} and {ws:?}"),
        ));
    }
    let (c_in, h, w) = (is[0], is[1], is[2]);
    let (c_out, cin_g, k, k2) = (ws[0], ws[1], ws[2], ws[3]);
    if k != k2 {
        return Err(Error::shape(
            "conv2d",
            format!("kernel must be square, got {k}x{k2}"),
        ));
    }
    if stride == 0 || groups == 0 {
        return Err(Error::invalid("conv2d arguments", "stride and groups must be >= 1"));
    }
    if c_in % groups != 0 || c_out % groups != 0 {
        return Err(Error::shape(
            "conv2d",
            format!("groups {groups} must divide in channels {c_in} and out channels {c_out}"),
        ));
    }
    if cin_g != c_in / groups {
        return Err(Error::shape(
            "conv2d",
            format!(
                "weights expect {cin_g} channels per group, input provides {}",
                c_in / groups
            ),
        ));
    }
    if bias.shape() != [c_out] {
        return Err(Error::shape(
            "conv2d",
            format!("bias shape {:?} does not match {c_out} out channels", bias.shape()),
        ));
    }
    let (h_out, w_out) = match (conv_out_size(h, k, stride), conv_out_size(w, k, stride)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::shape(
                "conv2d",
                format!("input {h}x{w} smaller than kernel {k}x{k}"),
            ))
        }
    };
    Ok(ConvDims {
        h,
        w,
        c_out,
        cin_g,
        k,
        h_out,
        w_out,
    })
}

/// Valid (padding-free) grouped 2-D cross-correlation with per-channel bias.
pub fn conv2d(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    stride: usize,
    groups: usize,
) -> Result<Tensor> {
    let d = check_conv(input, weights, bias, stride, groups)?;
    let mut out = vec![0.0; d.c_out * d.h_out * d.w_out];
    let in_data = input.data();
    let w_data = weights.data();
    let b_data = bias.data();
    let cout_g = d.c_out / groups;

    for_each_plane(&mut out, d.h_out * d.w_out, |co, plane| {
        plane.fill(b_data[co]);
        let group = co / cout_g;
        let w_base = co * d.cin_g * d.k * d.k;
        for cil in 0..d.cin_g {
            let ci = group * d.cin_g + cil;
            let in_plane = &in_data[ci * d.h * d.w..(ci + 1) * d.h * d.w];
            for ky in 0..d.k {
                let w_row = &w_data[w_base + cil * d.k * d.k + ky * d.k..][..d.k];
                for oy in 0..d.h_out {
                    let in_row = &in_plane[(oy * stride + ky) * d.w..(oy * stride + ky + 1) * d.w];
                    let out_row = &mut plane[oy * d.w_out..(oy + 1) * d.w_out];
                    corr_row(out_row, in_row, w_row, stride);
                }
            }
        }
    });
    Tensor::new(vec![d.c_out, d.h_out, d.w_out], out)
}

pub struct ConvGrads {
    pub input: Option<Vec<f64>>,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Backward pass of [`conv2d`]; `need_input` skips the input gradient for
/// leaf images.
pub fn conv2d_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &[f64],
    stride: usize,
    groups: usize,
    need_input: bool,
) -> ConvGrads {
    let is = input.shape();
    let ws = weights.shape();
    let (c_in, h, w) = (is[0], is[1], is[2]);
    let (c_out, cin_g, k) = (ws[0], ws[1], ws[2]);
    let h_out = (h - k) / stride + 1;
    let w_out = (w - k) / stride + 1;
    let cout_g = c_out / groups;
    let in_data = input.data();
    let w_data = weights.data();

    // Per output channel: bias gradient and weight gradients share a pass.
    let mut grad_w = vec![0.0; w_data.len()];
    let mut grad_b = vec![0.0; c_out];
    {
        let per_co = cin_g * k * k;
        for_each_plane(&mut grad_w, per_co, |co, gw| {
            let group = co / cout_g;
            let g_plane = &grad_out[co * h_out * w_out..(co + 1) * h_out * w_out];
            for cil in 0..cin_g {
                let ci = group * cin_g + cil;
                let in_plane = &in_data[ci * h * w..(ci + 1) * h * w];
                for ky in 0..k {
                    let acc = &mut gw[cil * k * k + ky * k..][..k];
                    for oy in 0..h_out {
                        let g_row = &g_plane[oy * w_out..(oy + 1) * w_out];
                        let in_row = &in_plane[(oy * stride + ky) * w..(oy * stride + ky + 1) * w];
                        dot_rows(acc, g_row, in_row, stride);
                    }
                }
            }
        });
        for (co, gb) in grad_b.iter_mut().enumerate() {
            *gb = grad_out[co * h_out * w_out..(co + 1) * h_out * w_out]
                .iter()
                .sum();
        }
    }

    let grad_in = if need_input {
        let mut gi = vec![0.0; c_in * h * w];
        if stride == 1 {
            // Gather form: the input gradient is the correlation of the
            // zero-padded output gradient with the flipped kernel rows,
            // which reuses the vectorized row kernel instead of scattering.
            let pw = w_out + 2 * (k - 1);
            let mut padded = vec![0.0; c_out * h_out * pw];
            for_each_plane(&mut padded, h_out * pw, |co, pp| {
                let g_plane = &grad_out[co * h_out * w_out..(co + 1) * h_out * w_out];
                for oy in 0..h_out {
                    pp[oy * pw + (k - 1)..oy * pw + (k - 1) + w_out]
                        .copy_from_slice(&g_plane[oy * w_out..(oy + 1) * w_out]);
                }
            });
            for_each_plane(&mut gi, h * w, |ci, plane| {
                let group = ci / cin_g;
                let cil = ci - group * cin_g;
                let mut flipped = vec![0.0; k];
                for co in group * cout_g..(group + 1) * cout_g {
                    let p_plane = &padded[co * h_out * pw..(co + 1) * h_out * pw];
                    let w_base = co * cin_g * k * k + cil * k * k;
                    for ky in 0..k {
                        for (j, f) in flipped.iter_mut().enumerate() {
                            *f = w_data[w_base + ky * k + (k - 1 - j)];
                        }
                        for oy in 0..h_out {
                            let g_row = &p_plane[oy * pw..(oy + 1) * pw];
                            let dst = &mut plane[(oy + ky) * w..(oy + ky + 1) * w];
                            corr_row(dst, g_row, &flipped, 1);
                        }
                    }
                }
            });
        } else {
            for_each_plane(&mut gi, h * w, |ci, plane| {
                let group = ci / cin_g;
                let cil = ci - group * cin_g;
                for co in group * cout_g..(group + 1) * cout_g {
                    let g_plane = &grad_out[co * h_out * w_out..(co + 1) * h_out * w_out];
                    let w_base = co * cin_g * k * k;
                    for ky in 0..k {
                        let w_row = &w_data[w_base + cil * k * k + ky * k..][..k];
                        for oy in 0..h_out {
                            let g_row = &g_plane[oy * w_out..(oy + 1) * w_out];
                            let dst =
                                &mut plane[(oy * stride + ky) * w..(oy * stride + ky + 1) * w];
                            scatter_row(dst, g_row, w_row, stride);
                        }
                    }
                }
            });
        }
        Some(gi)
    } else {
        None
    };

    ConvGrads {
        input: grad_in,
        weights: grad_w,
        bias: grad_b,
    }
}

/// Per-channel sliding dot product of the exemplar features over the
/// instance features (no kernel flipping).
pub fn xcorr_depthwise(instance: &Tensor, exemplar: &Tensor) -> Result<Tensor> {
    let xs = instance.shape();
    let zs = exemplar.shape();
    if xs.len() != 3 || zs.len() != 3 || xs[0] != zs[0] {
        return Err(Error::shape(
            "xcorr_depthwise",
            format!("channel counts must match, got {xs:?} and {zs:?}"),
        ));
    }
    let (c, hx, wx) = (xs[0], xs[1], xs[2]);
    let (hz, wz) = (zs[1], zs[2]);
    if hz > hx || wz > wx {
        return Err(Error::shape(
            "xcorr_depthwise",
            format!("exemplar {hz}x{wz} larger than instance {hx}x{wx}"),
        ));
    }
    let h_out = hx - hz + 1;
    let w_out = wx - wz + 1;
    let mut out = vec![0.0; c * h_out * w_out];
    let x_data = instance.data();
    let z_data = exemplar.data();

    for_each_plane(&mut out, h_out * w_out, |ch, plane| {
        let x_plane = &x_data[ch * hx * wx..(ch + 1) * hx * wx];
        let z_plane = &z_data[ch * hz * wz..(ch + 1) * hz * wz];
        for ky in 0..hz {
            let z_row = &z_plane[ky * wz..(ky + 1) * wz];
            for u in 0..h_out {
                let x_row = &x_plane[(u + ky) * wx..(u + ky + 1) * wx];
                let out_row = &mut plane[u * w_out..(u + 1) * w_out];
                corr_row(out_row, x_row, z_row, 1);
            }
        }
    });
    Tensor::new(vec![c, h_out, w_out], out)
}

pub struct XcorrGrads {
    pub instance: Vec<f64>,
    pub exemplar: Vec<f64>,
}

pub fn xcorr_backward(instance: &Tensor, exemplar: &Tensor, grad_out: &[f64]) -> XcorrGrads {
    let xs = instance.shape();
    let zs = exemplar.shape();
    let (_, hx, wx) = (xs[0], xs[1], xs[2]);
    let (hz, wz) = (zs[1], zs[2]);
    let h_out = hx - hz + 1;
    let w_out = wx - wz + 1;
    let x_data = instance.data();
    let z_data = exemplar.data();

    let mut grad_x = vec![0.0; x_data.len()];
    for_each_plane(&mut grad_x, hx * wx, |ch, plane| {
        let z_plane = &z_data[ch * hz * wz..(ch + 1) * hz * wz];
        let g_plane = &grad_out[ch * h_out * w_out..(ch + 1) * h_out * w_out];
        for ky in 0..hz {
            let z_row = &z_plane[ky * wz..(ky + 1) * wz];
            for u in 0..h_out {
                let g_row = &g_plane[u * w_out..(u + 1) * w_out];
                let dst = &mut plane[(u + ky) * wx..(u + ky + 1) * wx];
                scatter_row(dst, g_row, z_row, 1);
            }
        }
    });

    let mut grad_z = vec![0.0; z_data.len()];
    for_each_plane(&mut grad_z, hz * wz, |ch, plane| {
        let x_plane = &x_data[ch * hx * wx..(ch + 1) * hx * wx];
        let g_plane = &grad_out[ch * h_out * w_out..(ch + 1) * h_out * w_out];
        for ky in 0..hz {
            let acc = &mut plane[ky * wz..(ky + 1) * wz];
            for u in 0..h_out {
                let g_row = &g_plane[u * w_out..(u + 1) * w_out];
                let x_row = &x_plane[(u + ky) * wx..(u + ky + 1) * wx];
                dot_rows(acc, g_row, x_row, 1);
            }
        }
    });

    XcorrGrads {
        instance: grad_x,
        exemplar: grad_z,
    }
}

pub fn relu(input: &Tensor) -> Tensor {
    let data = input.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::new(input.shape().to_vec(), data).expect("same shape")
}

pub fn relu_backward(input: &Tensor, grad_out: &[f64]) -> Vec<f64> {
    input
        .data()
        .iter()
        .zip(grad_out)
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect()
}

/// Logistic function, clamped to stay strictly inside (0, 1).
pub fn sigmoid(input: &Tensor) -> Tensor {
    let data = input
        .data()
        .iter()
        .map(|&v| (1.0 / (1.0 + (-v).exp())).clamp(SIGMOID_MARGIN, 1.0 - SIGMOID_MARGIN))
        .collect();
    Tensor::new(input.shape().to_vec(), data).expect("same shape")
}

pub fn sigmoid_backward(output: &Tensor, grad_out: &[f64]) -> Vec<f64> {
    output
        .data()
        .iter()
        .zip(grad_out)
        .map(|(&p, &g)| g * p * (1.0 - p))
        .collect()
}

/// Guard inside the RMS normalizer so all-zero inputs stay zero.
pub const RMS_EPSILON: f64 = 1e-12;

/// Scales a tensor to unit root-mean-square. The normalizer is a single
/// positive scalar per tensor, so relative cell ordering is untouched.
pub fn rms_normalize(input: &Tensor) -> Tensor {
    let n = input.len() as f64;
    let mean_sq = input.data().iter().map(|v| v * v).sum::<f64>() / n;
    let r = 1.0 / (mean_sq + RMS_EPSILON).sqrt();
    let data = input.data().iter().map(|v| v * r).collect();
    Tensor::new(input.shape().to_vec(), data).expect("same shape")
}

pub fn rms_normalize_backward(input: &Tensor, grad_out: &[f64]) -> Vec<f64> {
    let n = input.len() as f64;
    let mean_sq = input.data().iter().map(|v| v * v).sum::<f64>() / n;
    let r = 1.0 / (mean_sq + RMS_EPSILON).sqrt();
    let dot_gx: f64 = grad_out
        .iter()
        .zip(input.data())
        .map(|(g, x)| g * x)
        .sum();
    let coeff = r.powi(3) * dot_gx / n;
    grad_out
        .iter()
        .zip(input.data())
        .map(|(g, x)| r * g - coeff * x)
        .collect()
}

/// Subtracts each channel plane's spatial mean from a `[C, H, W]` tensor.
/// A per-channel scalar shift, so relative cell ordering is untouched.
pub fn center_channels(input: &Tensor) -> Tensor {
    let s = input.shape();
    let plane = s[1] * s[2];
    let mut data = input.data().to_vec();
    for chunk in data.chunks_mut(plane) {
        let mean = chunk.iter().sum::<f64>() / plane as f64;
        for v in chunk.iter_mut() {
            *v -= mean;
        }
    }
    Tensor::new(s.to_vec(), data).expect("same shape")
}

pub fn center_channels_backward(shape: &[usize], grad_out: &[f64]) -> Vec<f64> {
    let plane = shape[1] * shape[2];
    let mut grad = grad_out.to_vec();
    for chunk in grad.chunks_mut(plane) {
        let mean = chunk.iter().sum::<f64>() / plane as f64;
        for v in chunk.iter_mut() {
            *v -= mean;
        }
    }
    grad
}

pub fn maxpool2d(input: &Tensor, kernel: usize, stride: usize) -> Result<Tensor> {
    let is = input.shape();
    if is.len() != 3 {
        return Err(Error::shape(
            "maxpool2d",
            format!("expected [C,H,W], got {is:?}"),
        ));
    }
    let (c, h, w) = (is[0], is[1], is[2]);
    let (h_out, w_out) = match (conv_out_size(h, kernel, stride), conv_out_size(w, kernel, stride)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::shape(
                "maxpool2d",
                format!("input {h}x{w} smaller than window {kernel}x{kernel}"),
            ))
        }
    };
    let in_data = input.data();
    let mut out = vec![0.0; c * h_out * w_out];
    for_each_plane(&mut out, h_out * w_out, |ch, plane| {
        let in_plane = &in_data[ch * h * w..(ch + 1) * h * w];
        for oy in 0..h_out {
            for ox in 0..w_out {
                let mut best = f64::NEG_INFINITY;
                for ky in 0..kernel {
                    let row = &in_plane[(oy * stride + ky) * w + ox * stride..];
                    for &v in &row[..kernel] {
                        if v > best {
                            best = v;
                        }
                    }
                }
                plane[oy * w_out + ox] = best;
            }
        }
    });
    Tensor::new(vec![c, h_out, w_out], out)
}

/// Routes each output gradient to the first maximum of its window
/// (row-major scan), matching the forward selection deterministically.
pub fn maxpool2d_backward(
    input: &Tensor,
    kernel: usize,
    stride: usize,
    grad_out: &[f64],
) -> Vec<f64> {
    let is = input.shape();
    let (h, w) = (is[1], is[2]);
    let h_out = (h - kernel) / stride + 1;
    let w_out = (w - kernel) / stride + 1;
    let in_data = input.data();
    let mut grad_in = vec![0.0; in_data.len()];
    for_each_plane(&mut grad_in, h * w, |ch, plane| {
        let in_plane = &in_data[ch * h * w..(ch + 1) * h * w];
        let g_plane = &grad_out[ch * h_out * w_out..(ch + 1) * h_out * w_out];
        for oy in 0..h_out {
            for ox in 0..w_out {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0;
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        let idx = (oy * stride + ky) * w + ox * stride + kx;
                        let v = in_plane[idx];
                        if v > best {
                            best = v;
                            best_idx = idx;
                        }
                    }
                }
                plane[best_idx] += g_plane[oy * w_out + ox];
            }
        }
    });
    grad_in
}
