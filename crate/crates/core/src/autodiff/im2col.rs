//! Patch-matrix lowering for 2-D convolution.

use serde::{Deserialize, Serialize};

use super::AutodiffError;

/// Kernel size, stride and zero padding of a 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2dGeometry {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dGeometry {
    pub fn square(kernel: usize, stride: usize, padding: usize) -> Self {
        Self { kernel_h: kernel, kernel_w: kernel, stride, padding }
    }

    /// Output height and width for an `h x w` input.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize), AutodiffError> {
        let bad = || AutodiffError::Geometry {
            input: (h, w),
            kernel: (self.kernel_h, self.kernel_w),
            stride: self.stride,
            padding: self.padding,
        };
        if self.stride == 0 || self.kernel_h == 0 || self.kernel_w == 0 {
            return Err(bad());
        }
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        if ph < self.kernel_h || pw < self.kernel_w {
            return Err(bad());
        }
        Ok(((ph - self.kernel_h) / self.stride + 1, (pw - self.kernel_w) / self.stride + 1))
    }
}

/// Shape bookkeeping shared by the forward and backward passes.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Im2colDims {
    pub batch: usize,
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub oh: usize,
    pub ow: usize,
}

impl Im2colDims {
    pub fn rows(&self) -> usize {
        self.batch * self.oh * self.ow
    }

    pub fn cols(&self, g: &Conv2dGeometry) -> usize {
        self.channels * g.kernel_h * g.kernel_w
    }
}

/// Visits every (column-matrix index, input index) pair; input index is
/// `None` for padding.
fn for_each_patch(d: &Im2colDims, g: &Conv2dGeometry, mut f: impl FnMut(usize, Option<usize>)) {
    let cols = d.cols(g);
    for b in 0..d.batch {
        for oy in 0..d.oh {
            for ox in 0..d.ow {
                let row = (b * d.oh + oy) * d.ow + ox;
                let mut col = 0;
                for c in 0..d.channels {
                    for ky in 0..g.kernel_h {
                        for kx in 0..g.kernel_w {
                            let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                            let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                            let src = (iy >= 0 && ix >= 0 && (iy as usize) < d.h && (ix as usize) < d.w)
                                .then(|| ((b * d.channels + c) * d.h + iy as usize) * d.w + ix as usize);
                            f(row * cols + col, src);
                            col += 1;
                        }
                    }
                }
            }
        }
    }
}

/// `[B, C, H, W]` to `[B*OH*OW, C*kh*kw]`, columns ordered (c, ky, kx).
pub(crate) fn im2col(x: &[f32], d: &Im2colDims, g: &Conv2dGeometry) -> Vec<f32> {
    let mut out = vec![0.0; d.rows() * d.cols(g)];
    for_each_patch(d, g, |dst, src| {
        if let Some(s) = src {
            out[dst] = x[s];
        }
    });
    out
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
pub(crate) fn col2im(cols: &[f32], d: &Im2colDims, g: &Conv2dGeometry) -> Vec<f32> {
    let mut out = vec![0.0; d.batch * d.channels * d.h * d.w];
    for_each_patch(d, g, |src, dst| {
        if let Some(t) = dst {
            out[t] += cols[src];
        }
    });
    out
}
