//! im2col lowering for 2-D cross-correlation.

use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kh) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kw) / self.stride + 1
    }

    /// Rows of the lowered matrix: channels × kh × kw.
    pub fn patch_len(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    /// Columns of the lowered matrix: one per output position.
    pub fn positions(&self) -> usize {
        self.out_height() * self.out_width()
    }

    fn source(&self, o: usize, k: usize) -> Option<usize> {
        let v = (o * self.stride + k) as isize - self.pad as isize;
        (v >= 0).then_some(v as usize)
    }

    /// Lowers one image (channels × height × width) into `cols`
    /// (patch_len × positions), zero padding outside the image.
    pub fn im2col<F: Scalar>(&self, image: &[F], cols: &mut [F]) {
        let (oh, ow) = (self.out_height(), self.out_width());
        let positions = oh * ow;
        for c in 0..self.channels {
            let plane = &image[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * positions..(row + 1) * positions];
                    for oy in 0..oh {
                        let line = &mut dst[oy * ow..(oy + 1) * ow];
                        match self.source(oy, ki).filter(|&y| y < self.height) {
                            None => line.fill(F::zero()),
                            Some(y) => {
                                let src = &plane[y * self.width..(y + 1) * self.width];
                                for (ox, out) in line.iter_mut().enumerate() {
                                    *out = match self.source(ox, kj) {
                                        Some(x) if x < self.width => src[x],
                                        _ => F::zero(),
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): scatters `cols` back onto `image`,
    /// accumulating overlapping contributions.
    pub fn col2im<F: Scalar>(&self, cols: &[F], image: &mut [F]) {
        let (oh, ow) = (self.out_height(), self.out_width());
        let positions = oh * ow;
        for c in 0..self.channels {
            let plane =
                &mut image[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * positions..(row + 1) * positions];
                    for oy in 0..oh {
                        let Some(y) = self.source(oy, ki).filter(|&y| y < self.height) else {
                            continue;
                        };
                        for ox in 0..ow {
                            if let Some(x) = self.source(ox, kj).filter(|&x| x < self.width) {
                                let dst = &mut plane[y * self.width + x];
                                *dst = *dst + src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}
