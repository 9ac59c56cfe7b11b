//! Plain (non-taped) numeric kernels shared by the graph ops.

use crate::tensor::Real;

/// `c = alpha * op(a) * op(b) + beta * c` on row-major buffers.
///
/// `a` is `m x k` (or `k x m` when `trans_a`), `b` is `k x n` (or `n x k`
/// when `trans_b`), `c` is `m x n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[Real],
    trans_a: bool,
    b: &[Real],
    trans_b: bool,
    beta: Real,
    c: &mut [Real],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: strides describe in-bounds row-major views of the checked buffers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a 2D convolution over one sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel_h) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel_w) / self.stride + 1
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel_h * self.kernel_w
    }

    pub fn is_pointwise(&self) -> bool {
        self.kernel_h == 1 && self.kernel_w == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfold one `[C, H, W]` sample into `[C*KH*KW, OH*OW]` columns.
pub fn im2col(x: &[Real], g: &ConvGeom, cols: &mut [Real]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = oh * ow;
    debug_assert_eq!(cols.len(), g.col_rows() * plane);
    let pad = g.pad as isize;
    let mut row = 0;
    for c in 0..g.channels {
        let xc = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for y in 0..oh {
                    let iy = (y * g.stride + ki) as isize - pad;
                    let out_row = &mut dst[y * ow..(y + 1) * ow];
                    if iy < 0 || iy >= g.height as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src = &xc[iy as usize * g.width..(iy as usize + 1) * g.width];
                    if g.stride == 1 {
                        let shift = kj as isize - pad;
                        for (x_out, v) in out_row.iter_mut().enumerate() {
                            let ix = x_out as isize + shift;
                            *v = if ix >= 0 && ix < g.width as isize {
                                src[ix as usize]
                            } else {
                                0.0
                            };
                        }
                    } else {
                        for (x_out, v) in out_row.iter_mut().enumerate() {
                            let ix = (x_out * g.stride + kj) as isize - pad;
                            *v = if ix >= 0 && ix < g.width as isize {
                                src[ix as usize]
                            } else {
                                0.0
                            };
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Fold columns back into a `[C, H, W]` sample, accumulating overlaps.
pub fn col2im(cols: &[Real], g: &ConvGeom, x: &mut [Real]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = oh * ow;
    let pad = g.pad as isize;
    let mut row = 0;
    for c in 0..g.channels {
        let xc = &mut x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let src = &cols[row * plane..(row + 1) * plane];
                for y in 0..oh {
                    let iy = (y * g.stride + ki) as isize - pad;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut xc[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for x_out in 0..ow {
                        let ix = (x_out * g.stride + kj) as isize - pad;
                        if ix >= 0 && ix < g.width as isize {
                            dst[ix as usize] += src[y * ow + x_out];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Direct (quadruple loop) convolution of one sample; reference for tests.
pub fn conv2d_direct(x: &[Real], w: &[Real], out_channels: usize, g: &ConvGeom) -> Vec<Real> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut out = vec![0.0; out_channels * oh * ow];
    for o in 0..out_channels {
        for y in 0..oh {
            for xo in 0..ow {
                let mut acc = 0.0;
                for c in 0..g.channels {
                    for ki in 0..g.kernel_h {
                        for kj in 0..g.kernel_w {
                            let iy = (y * g.stride + ki) as isize - g.pad as isize;
                            let ix = (xo * g.stride + kj) as isize - g.pad as isize;
                            if iy < 0 || ix < 0 || iy >= g.height as isize || ix >= g.width as isize {
                                continue;
                            }
                            let xv = x[(c * g.height + iy as usize) * g.width + ix as usize];
                            let wv = w[((o * g.channels + c) * g.kernel_h + ki) * g.kernel_w + kj];
                            acc += xv * wv;
                        }
                    }
                }
                out[(o * oh + y) * ow + xo] = acc;
            }
        }
    }
    out
}
