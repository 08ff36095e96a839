//! Raw convolution loops on flat slices.
//!
//! All three routines share one geometry: a forward convolution mapping
//! `[B, cin, h, w]` to `[B, cout, oh, ow]` with a `[cout, cin, kh, kw]` kernel.
//! A transposed convolution is the same geometry read backwards.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn input_len(&self) -> usize {
        self.batch * self.cin * self.h * self.w
    }

    pub fn output_len(&self) -> usize {
        self.batch * self.cout * self.oh * self.ow
    }
}

/// Output indices `o` in `[lo, hi)` such that `o * stride + offset` lands in `[0, in_len)`.
#[inline]
fn valid_range(out_len: usize, in_len: usize, stride: usize, offset: isize) -> (usize, usize) {
    let lo = if offset >= 0 {
        0
    } else {
        ((-offset) as usize).div_ceil(stride).min(out_len)
    };
    let limit = in_len as isize - offset;
    let hi = if limit <= 0 {
        0
    } else {
        (limit as usize).div_ceil(stride).min(out_len)
    };
    (lo, hi.max(lo))
}

/// `out += conv(x, k)`; bias is handled by the caller.
pub(crate) fn conv_forward(g: &ConvGeom, x: &[f64], k: &[f64], out: &mut [f64]) {
    let (ihw, ohw) = (g.h * g.w, g.oh * g.ow);
    for b in 0..g.batch {
        for co in 0..g.cout {
            let o = &mut out[(b * g.cout + co) * ohw..][..ohw];
            for ci in 0..g.cin {
                let xin = &x[(b * g.cin + ci) * ihw..][..ihw];
                let kbase = (co * g.cin + ci) * g.kh * g.kw;
                for ki in 0..g.kh {
                    let (ylo, yhi) = valid_range(g.oh, g.h, g.sh, ki as isize - g.ph as isize);
                    for kj in 0..g.kw {
                        let kv = k[kbase + ki * g.kw + kj];
                        let xoff = kj as isize - g.pw as isize;
                        let (xlo, xhi) = valid_range(g.ow, g.w, g.sw, xoff);
                        if xlo == xhi {
                            continue;
                        }
                        for oy in ylo..yhi {
                            let iy = oy * g.sh + ki - g.ph;
                            let row_in = &xin[iy * g.w..][..g.w];
                            let row_out = &mut o[oy * g.ow..][..g.ow];
                            if g.sw == 1 {
                                let start = (xlo as isize + xoff) as usize;
                                let src = &row_in[start..start + (xhi - xlo)];
                                for (dst, s) in row_out[xlo..xhi].iter_mut().zip(src) {
                                    *dst += kv * s;
                                }
                            } else {
                                for ox in xlo..xhi {
                                    let ix = (ox * g.sw) as isize + xoff;
                                    row_out[ox] += kv * row_in[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `gx += conv^T(gy, k)`: the adjoint of [`conv_forward`] with respect to its input.
pub(crate) fn conv_backward_input(g: &ConvGeom, gy: &[f64], k: &[f64], gx: &mut [f64]) {
    let (ihw, ohw) = (g.h * g.w, g.oh * g.ow);
    for b in 0..g.batch {
        for ci in 0..g.cin {
            let gxin = &mut gx[(b * g.cin + ci) * ihw..][..ihw];
            for co in 0..g.cout {
                let go = &gy[(b * g.cout + co) * ohw..][..ohw];
                let kbase = (co * g.cin + ci) * g.kh * g.kw;
                for ki in 0..g.kh {
                    let (ylo, yhi) = valid_range(g.oh, g.h, g.sh, ki as isize - g.ph as isize);
                    for kj in 0..g.kw {
                        let kv = k[kbase + ki * g.kw + kj];
                        let xoff = kj as isize - g.pw as isize;
                        let (xlo, xhi) = valid_range(g.ow, g.w, g.sw, xoff);
                        if xlo == xhi {
                            continue;
                        }
                        for oy in ylo..yhi {
                            let iy = oy * g.sh + ki - g.ph;
                            let row_in = &mut gxin[iy * g.w..][..g.w];
                            let row_out = &go[oy * g.ow..][..g.ow];
                            if g.sw == 1 {
                                let start = (xlo as isize + xoff) as usize;
                                let dst = &mut row_in[start..start + (xhi - xlo)];
                                for (d, s) in dst.iter_mut().zip(&row_out[xlo..xhi]) {
                                    *d += kv * s;
                                }
                            } else {
                                for ox in xlo..xhi {
                                    let ix = (ox * g.sw) as isize + xoff;
                                    row_in[ix as usize] += kv * row_out[ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `gk += dL/dk` for `y = conv(x, k)` given `gy = dL/dy`.
pub(crate) fn conv_backward_kernel(g: &ConvGeom, x: &[f64], gy: &[f64], gk: &mut [f64]) {
    let (ihw, ohw) = (g.h * g.w, g.oh * g.ow);
    for b in 0..g.batch {
        for co in 0..g.cout {
            let go = &gy[(b * g.cout + co) * ohw..][..ohw];
            for ci in 0..g.cin {
                let xin = &x[(b * g.cin + ci) * ihw..][..ihw];
                let kbase = (co * g.cin + ci) * g.kh * g.kw;
                for ki in 0..g.kh {
                    let (ylo, yhi) = valid_range(g.oh, g.h, g.sh, ki as isize - g.ph as isize);
                    for kj in 0..g.kw {
                        let xoff = kj as isize - g.pw as isize;
                        let (xlo, xhi) = valid_range(g.ow, g.w, g.sw, xoff);
                        if xlo == xhi {
                            continue;
                        }
                        let mut acc = 0.0;
                        for oy in ylo..yhi {
                            let iy = oy * g.sh + ki - g.ph;
                            let row_in = &xin[iy * g.w..][..g.w];
                            let row_out = &go[oy * g.ow..][..g.ow];
                            if g.sw == 1 {
                                let start = (xlo as isize + xoff) as usize;
                                let src = &row_in[start..start + (xhi - xlo)];
                                acc += row_out[xlo..xhi]
                                    .iter()
                                    .zip(src)
                                    .map(|(a, b)| a * b)
                                    .sum::<f64>();
                            } else {
                                for ox in xlo..xhi {
                                    let ix = (ox * g.sw) as isize + xoff;
                                    acc += row_out[ox] * row_in[ix as usize];
                                }
                            }
                        }
                        gk[kbase + ki * g.kw + kj] += acc;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_range_matches_brute_force() {
        for out_len in 1..6 {
            for in_len in 1..6 {
                for stride in 1..4 {
                    for offset in -8isize..8 {
                        let expect: Vec<usize> = (0..out_len)
                            .filter(|&o| {
                                let i = (o * stride) as isize + offset;
                                i >= 0 && i < in_len as isize
                            })
                            .collect();
                        let (lo, hi) = valid_range(out_len, in_len, stride, offset);
                        assert!(lo <= hi && hi <= out_len);
                        let got: Vec<usize> = (lo..hi).collect();
                        assert_eq!(got, expect, "{out_len} {in_len} {stride} {offset}");
                    }
                }
            }
        }
    }
}
