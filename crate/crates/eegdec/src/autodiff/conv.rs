//! 3D convolution numerics (cross-correlation, no kernel flip).
//!
//! Input layout is `[c_in, rows, cols, time]`, weights
//! `[c_out, c_in, k_rows, k_cols, k_time]`. The hot loop is a 1-D
//! correlation along the time axis; spatial taps and input channels are
//! reduced by repeated time-axis passes, which keeps the inner loop
//! contiguous and auto-vectorizable.

use rand::Rng;

use super::tape::Padding;
use super::Tensor;
use crate::{Error, Result};

/// 3D convolution kernel with per-output-channel bias.
#[derive(Debug, Clone)]
pub struct ConvKernel3D {
    pub extents: (usize, usize, usize),
    pub in_channels: usize,
    pub out_channels: usize,
    pub weights: Tensor,
    pub bias: Tensor,
}

impl ConvKernel3D {
    pub fn new(
        extents: (usize, usize, usize),
        in_channels: usize,
        out_channels: usize,
        weights: Tensor,
        bias: Tensor,
    ) -> Result<Self> {
        let (kr, kc, kt) = extents;
        if kr % 2 == 0 || kc % 2 == 0 || kt % 2 == 0 {
            return Err(Error::Config(format!(
                "kernel extents must be odd for symmetric same-padding, got {kr}x{kc}x{kt}"
            )));
        }
        let expect = out_channels * in_channels * kr * kc * kt;
        if weights.numel() != expect {
            return Err(Error::Dimension(format!(
                "kernel weights: expected {expect} values, got {}",
                weights.numel()
            )));
        }
        if bias.numel() != out_channels {
            return Err(Error::Dimension(format!(
                "kernel bias: expected {out_channels} values, got {}",
                bias.numel()
            )));
        }
        Ok(Self { extents, in_channels, out_channels, weights, bias })
    }

    /// He-uniform initialization: U(-b, b) with b = sqrt(6 / fan_in).
    pub fn he_uniform<R: Rng>(
        extents: (usize, usize, usize),
        in_channels: usize,
        out_channels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let (kr, kc, kt) = extents;
        let fan_in = (in_channels * kr * kc * kt) as f64;
        let bound = (6.0 / fan_in).sqrt();
        let n = out_channels * in_channels * kr * kc * kt;
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        let weights = Tensor::from_vec(vec![out_channels, in_channels, kr, kc, kt], w)?.with_grad();
        let bias = Tensor::zeros(vec![out_channels]).with_grad();
        Self::new(extents, in_channels, out_channels, weights, bias)
    }
}

/// Resolved geometry of one convolution application.
#[derive(Debug, Clone, Copy)]
pub struct ConvDims {
    pub c_in: usize,
    pub c_out: usize,
    pub kr: usize,
    pub kc: usize,
    pub kt: usize,
    pub r_in: usize,
    pub c_cols_in: usize,
    pub t_in: usize,
    pub pr: usize,
    pub pc: usize,
    pub pt: usize,
    pub r_out: usize,
    pub c_cols_out: usize,
    pub t_out: usize,
}

impl ConvDims {
    pub fn resolve(
        input_shape: &[usize],
        weight_shape: &[usize],
        padding: Padding,
    ) -> Result<Self> {
        if input_shape.len() != 4 {
            return Err(Error::Dimension(format!(
                "conv3d input must be [c,rows,cols,time], got {input_shape:?}"
            )));
        }
        if weight_shape.len() != 5 {
            return Err(Error::Dimension(format!(
                "conv3d weights must be [c_out,c_in,kr,kc,kt], got {weight_shape:?}"
            )));
        }
        let (c_in, r_in, c_cols_in, t_in) =
            (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
        let (c_out, wc_in, kr, kc, kt) = (
            weight_shape[0],
            weight_shape[1],
            weight_shape[2],
            weight_shape[3],
            weight_shape[4],
        );
        if wc_in != c_in {
            return Err(Error::Dimension(format!(
                "conv3d: input has {c_in} channels but kernel expects {wc_in}"
            )));
        }
        if kr % 2 == 0 || kc % 2 == 0 || kt % 2 == 0 {
            return Err(Error::Config(format!("conv3d kernel extents must be odd, got {kr}x{kc}x{kt}")));
        }
        let (pr, pc, pt) = match padding {
            Padding::Same => ((kr - 1) / 2, (kc - 1) / 2, (kt - 1) / 2),
            Padding::Valid => (0, 0, 0),
        };
        if r_in + 2 * pr < kr || c_cols_in + 2 * pc < kc || t_in + 2 * pt < kt {
            return Err(Error::Dimension(format!(
                "conv3d: padded input {r_in}x{c_cols_in}x{t_in} smaller than kernel {kr}x{kc}x{kt}"
            )));
        }
        Ok(Self {
            c_in,
            c_out,
            kr,
            kc,
            kt,
            r_in,
            c_cols_in,
            t_in,
            pr,
            pc,
            pt,
            r_out: r_in + 2 * pr - kr + 1,
            c_cols_out: c_cols_in + 2 * pc - kc + 1,
            t_out: t_in + 2 * pt - kt + 1,
        })
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.c_out, self.r_out, self.c_cols_out, self.t_out]
    }

    fn padded_extents(&self) -> (usize, usize, usize) {
        (self.r_in + 2 * self.pr, self.c_cols_in + 2 * self.pc, self.t_in + 2 * self.pt)
    }
}

/// out[t] += sum_k taps[k] * src[t + k], taps fused in pairs.
#[inline]
fn corr_axpy(src: &[f64], taps: &[f64], out: &mut [f64]) {
    let t_out = out.len();
    let mut k = 0;
    while k + 1 < taps.len() {
        let (w0, w1) = (taps[k], taps[k + 1]);
        let s0 = &src[k..k + t_out];
        let s1 = &src[k + 1..k + 1 + t_out];
        for t in 0..t_out {
            out[t] += w0 * s0[t] + w1 * s1[t];
        }
        k += 2;
    }
    if k < taps.len() {
        let w0 = taps[k];
        let s0 = &src[k..k + t_out];
        for t in 0..t_out {
            out[t] += w0 * s0[t];
        }
    }
}

/// gtaps[k] += sum_t src[t + k] * g[t]
///
/// Four independent accumulators per tap so the reduction has no serial
/// FP dependency and can be vectorized.
#[inline]
fn corr_dot(src: &[f64], g: &[f64], gtaps: &mut [f64]) {
    let t_out = g.len();
    let t8 = t_out & !7;
    for (k, gt) in gtaps.iter_mut().enumerate() {
        let s = &src[k..k + t_out];
        let mut a = [0.0; 8];
        let mut t = 0;
        while t < t8 {
            for j in 0..8 {
                a[j] += s[t + j] * g[t + j];
            }
            t += 8;
        }
        let mut acc = ((a[0] + a[1]) + (a[2] + a[3])) + ((a[4] + a[5]) + (a[6] + a[7]));
        while t < t_out {
            acc += s[t] * g[t];
            t += 1;
        }
        *gt += acc;
    }
}

/// gsrc[t + k] += taps[k] * g[t]  (transpose of `corr_axpy`), taps fused
/// in pairs like the forward kernel.
#[inline]
fn corr_axpy_t(g: &[f64], taps: &[f64], gsrc: &mut [f64]) {
    let t_out = g.len();
    let mut k = 0;
    while k + 1 < taps.len() {
        let (w0, w1) = (taps[k], taps[k + 1]);
        // overlapping windows k..k+t_out and k+1..k+1+t_out: write the
        // shared region fused, the two boundary points separately
        let dst = &mut gsrc[k..k + 1 + t_out];
        dst[0] += w0 * g[0];
        for t in 0..t_out - 1 {
            dst[t + 1] += w0 * g[t + 1] + w1 * g[t];
        }
        dst[t_out] += w1 * g[t_out - 1];
        k += 2;
    }
    if k < taps.len() {
        let w0 = taps[k];
        let dst = &mut gsrc[k..k + t_out];
        for t in 0..t_out {
            dst[t] += w0 * g[t];
        }
    }
}

fn pad_input(input: &[f64], d: &ConvDims) -> Vec<f64> {
    let (rp, cp, tp) = d.padded_extents();
    let mut pad = vec![0.0; d.c_in * rp * cp * tp];
    for i in 0..d.c_in {
        for r in 0..d.r_in {
            for c in 0..d.c_cols_in {
                let src = ((i * d.r_in + r) * d.c_cols_in + c) * d.t_in;
                let dst = ((i * rp + r + d.pr) * cp + c + d.pc) * tp + d.pt;
                pad[dst..dst + d.t_in].copy_from_slice(&input[src..src + d.t_in]);
            }
        }
    }
    pad
}

/// Forward pass: cross-correlation over the three trailing axes, summed
/// over input channels, bias added.
pub fn conv3d_forward(input: &[f64], weights: &[f64], bias: &[f64], d: &ConvDims) -> Vec<f64> {
    let (rp, cp, tp) = d.padded_extents();
    let padded;
    let pad: &[f64] = if d.pr == 0 && d.pc == 0 && d.pt == 0 {
        input
    } else {
        padded = pad_input(input, d);
        &padded
    };
    let out_row = d.t_out;
    let mut out = vec![0.0; d.c_out * d.r_out * d.c_cols_out * out_row];
    for o in 0..d.c_out {
        let ob = o * d.r_out * d.c_cols_out * out_row;
        out[ob..ob + d.r_out * d.c_cols_out * out_row].fill(bias[o]);
        for i in 0..d.c_in {
            for kr in 0..d.kr {
                for kc in 0..d.kc {
                    let taps_off = (((o * d.c_in + i) * d.kr + kr) * d.kc + kc) * d.kt;
                    let taps = &weights[taps_off..taps_off + d.kt];
                    for r in 0..d.r_out {
                        for c in 0..d.c_cols_out {
                            let src = ((i * rp + r + kr) * cp + c + kc) * tp;
                            let dst = ob + (r * d.c_cols_out + c) * out_row;
                            corr_axpy(
                                &pad[src..src + out_row + d.kt - 1],
                                taps,
                                &mut out[dst..dst + out_row],
                            );
                        }
                    }
                }
            }
        }
    }
    out
}

/// Backward pass. `ginput` is `Some` only when the input itself needs a
/// gradient (the network input leaf does not, which skips a third of the
/// work in the stem layer).
pub fn conv3d_backward(
    input: &[f64],
    weights: &[f64],
    gout: &[f64],
    d: &ConvDims,
    gweights: &mut [f64],
    gbias: &mut [f64],
    mut ginput: Option<&mut [f64]>,
) {
    let (rp, cp, tp) = d.padded_extents();
    let padded;
    let pad: &[f64] = if d.pr == 0 && d.pc == 0 && d.pt == 0 {
        input
    } else {
        padded = pad_input(input, d);
        &padded
    };
    let out_row = d.t_out;

    for o in 0..d.c_out {
        let ob = o * d.r_out * d.c_cols_out * out_row;
        gbias[o] += gout[ob..ob + d.r_out * d.c_cols_out * out_row].iter().sum::<f64>();
    }

    // weight gradients: per (o,i,kr,kc) a bundle of kt shifted dot products
    for o in 0..d.c_out {
        let ob = o * d.r_out * d.c_cols_out * out_row;
        for i in 0..d.c_in {
            for kr in 0..d.kr {
                for kc in 0..d.kc {
                    let taps_off = (((o * d.c_in + i) * d.kr + kr) * d.kc + kc) * d.kt;
                    let gtaps = &mut gweights[taps_off..taps_off + d.kt];
                    for r in 0..d.r_out {
                        for c in 0..d.c_cols_out {
                            let src = ((i * rp + r + kr) * cp + c + kc) * tp;
                            let g = &gout[ob + (r * d.c_cols_out + c) * out_row..][..out_row];
                            corr_dot(&pad[src..src + out_row + d.kt - 1], g, gtaps);
                        }
                    }
                }
            }
        }
    }

    if let Some(gin) = ginput.as_deref_mut() {
        let needs_pad = d.pr != 0 || d.pc != 0 || d.pt != 0;
        let mut gpad = if needs_pad { vec![0.0; d.c_in * rp * cp * tp] } else { Vec::new() };
        {
            let gdst: &mut [f64] = if needs_pad { &mut gpad } else { gin };
            for o in 0..d.c_out {
                let ob = o * d.r_out * d.c_cols_out * out_row;
                for i in 0..d.c_in {
                    for kr in 0..d.kr {
                        for kc in 0..d.kc {
                            let taps_off = (((o * d.c_in + i) * d.kr + kr) * d.kc + kc) * d.kt;
                            let taps = &weights[taps_off..taps_off + d.kt];
                            for r in 0..d.r_out {
                                for c in 0..d.c_cols_out {
                                    let dst = ((i * rp + r + kr) * cp + c + kc) * tp;
                                    let g = &gout[ob + (r * d.c_cols_out + c) * out_row..][..out_row];
                                    corr_axpy_t(g, taps, &mut gdst[dst..dst + out_row + d.kt - 1]);
                                }
                            }
                        }
                    }
                }
            }
        }
        if needs_pad {
            for i in 0..d.c_in {
                for r in 0..d.r_in {
                    for c in 0..d.c_cols_in {
                        let src = ((i * rp + r + d.pr) * cp + c + d.pc) * tp + d.pt;
                        let dst = ((i * d.r_in + r) * d.c_cols_in + c) * d.t_in;
                        for t in 0..d.t_in {
                            gin[dst + t] += gpad[src + t];
                        }
                    }
                }
            }
        }
    }
}
