//! 3D pooling numerics.
//!
//! Same-padding windows that extend past the input contribute neither to
//! the sum nor the count (average) and are never argmax candidates (max).

use super::tape::Padding;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct PoolDims {
    pub channels: usize,
    pub r_in: usize,
    pub c_in: usize,
    pub t_in: usize,
    pub window: (usize, usize, usize),
    pub stride: (usize, usize, usize),
    pub pr: usize,
    pub pc: usize,
    pub pt: usize,
    pub r_out: usize,
    pub c_out: usize,
    pub t_out: usize,
}

fn out_extent_same(n: usize, s: usize) -> usize {
    n.div_ceil(s)
}

fn out_extent_valid(n: usize, w: usize, s: usize) -> usize {
    (n - w) / s + 1
}

impl PoolDims {
    pub fn resolve(
        input_shape: &[usize],
        window: (usize, usize, usize),
        stride: (usize, usize, usize),
        padding: Padding,
    ) -> Result<Self> {
        if input_shape.len() != 4 {
            return Err(Error::Dimension(format!(
                "pool3d input must be [c,rows,cols,time], got {input_shape:?}"
            )));
        }
        let (wr, wc, wt) = window;
        let (sr, sc, st) = stride;
        if sr == 0 || sc == 0 || st == 0 {
            return Err(Error::Config("pool3d stride must be positive".into()));
        }
        if wr == 0 || wc == 0 || wt == 0 {
            return Err(Error::Config("pool3d window must be positive".into()));
        }
        let (channels, r_in, c_in, t_in) =
            (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
        let (r_out, c_out, t_out, pr, pc, pt) = match padding {
            Padding::Valid => {
                if wr > r_in || wc > c_in || wt > t_in {
                    return Err(Error::Dimension(format!(
                        "pool3d window {wr}x{wc}x{wt} exceeds input {r_in}x{c_in}x{t_in}"
                    )));
                }
                (
                    out_extent_valid(r_in, wr, sr),
                    out_extent_valid(c_in, wc, sc),
                    out_extent_valid(t_in, wt, st),
                    0,
                    0,
                    0,
                )
            }
            Padding::Same => {
                let ro = out_extent_same(r_in, sr);
                let co = out_extent_same(c_in, sc);
                let to = out_extent_same(t_in, st);
                // symmetric split, extra on the trailing side
                let pad_r = ((ro - 1) * sr + wr).saturating_sub(r_in);
                let pad_c = ((co - 1) * sc + wc).saturating_sub(c_in);
                let pad_t = ((to - 1) * st + wt).saturating_sub(t_in);
                (ro, co, to, pad_r / 2, pad_c / 2, pad_t / 2)
            }
        };
        Ok(Self { channels, r_in, c_in, t_in, window, stride, pr, pc, pt, r_out, c_out, t_out })
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.channels, self.r_out, self.c_out, self.t_out]
    }

    #[inline]
    fn in_index(&self, ch: usize, r: usize, c: usize, t: usize) -> usize {
        ((ch * self.r_in + r) * self.c_in + c) * self.t_in + t
    }

    /// Iterate the in-bounds coordinates of one output window.
    #[inline]
    fn window_bounds(&self, ro: usize, co: usize, to: usize) -> [(usize, usize); 3] {
        let lo = |o: usize, s: usize, p: usize| (o * s).saturating_sub(p);
        let hi = |o: usize, s: usize, p: usize, w: usize, n: usize| ((o * s + w).saturating_sub(p)).min(n);
        [
            (lo(ro, self.stride.0, self.pr), hi(ro, self.stride.0, self.pr, self.window.0, self.r_in)),
            (lo(co, self.stride.1, self.pc), hi(co, self.stride.1, self.pc, self.window.1, self.c_in)),
            (lo(to, self.stride.2, self.pt), hi(to, self.stride.2, self.pt, self.window.2, self.t_in)),
        ]
    }
}

pub fn avg_pool_forward(input: &[f64], d: &PoolDims) -> Vec<f64> {
    let mut out = vec![0.0; d.channels * d.r_out * d.c_out * d.t_out];
    let mut idx = 0;
    for ch in 0..d.channels {
        for ro in 0..d.r_out {
            for co in 0..d.c_out {
                for to in 0..d.t_out {
                    let [(r0, r1), (c0, c1), (t0, t1)] = d.window_bounds(ro, co, to);
                    let mut acc = 0.0;
                    for r in r0..r1 {
                        for c in c0..c1 {
                            let base = d.in_index(ch, r, c, t0);
                            acc += input[base..base + (t1 - t0)].iter().sum::<f64>();
                        }
                    }
                    let count = (r1 - r0) * (c1 - c0) * (t1 - t0);
                    out[idx] = acc / count as f64;
                    idx += 1;
                }
            }
        }
    }
    out
}

pub fn avg_pool_backward(gout: &[f64], d: &PoolDims, ginput: &mut [f64]) {
    let mut idx = 0;
    for ch in 0..d.channels {
        for ro in 0..d.r_out {
            for co in 0..d.c_out {
                for to in 0..d.t_out {
                    let [(r0, r1), (c0, c1), (t0, t1)] = d.window_bounds(ro, co, to);
                    let count = (r1 - r0) * (c1 - c0) * (t1 - t0);
                    let g = gout[idx] / count as f64;
                    idx += 1;
                    for r in r0..r1 {
                        for c in c0..c1 {
                            let base = d.in_index(ch, r, c, t0);
                            for v in &mut ginput[base..base + (t1 - t0)] {
                                *v += g;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Returns (values, flat argmax indices into the input).
/// Ties go to the earliest element in row-major window order.
pub fn max_pool_forward(input: &[f64], d: &PoolDims) -> (Vec<f64>, Vec<usize>) {
    let n = d.channels * d.r_out * d.c_out * d.t_out;
    let mut out = vec![0.0; n];
    let mut arg = vec![0usize; n];
    let mut idx = 0;
    for ch in 0..d.channels {
        for ro in 0..d.r_out {
            for co in 0..d.c_out {
                for to in 0..d.t_out {
                    let [(r0, r1), (c0, c1), (t0, t1)] = d.window_bounds(ro, co, to);
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    for r in r0..r1 {
                        for c in c0..c1 {
                            for t in t0..t1 {
                                let i = d.in_index(ch, r, c, t);
                                if input[i] > best {
                                    best = input[i];
                                    best_idx = i;
                                }
                            }
                        }
                    }
                    out[idx] = best;
                    arg[idx] = best_idx;
                    idx += 1;
                }
            }
        }
    }
    (out, arg)
}

pub fn max_pool_backward(gout: &[f64], argmax: &[usize], ginput: &mut [f64]) {
    for (g, &i) in gout.iter().zip(argmax) {
        ginput[i] += g;
    }
}
