//! Convolution as matrix multiplication.
//!
//! Each output position of a convolution reads one patch of the input. Laying
//! the patches out as the rows of a `(h_out * w_out) x (c_in * k * k)` matrix
//! turns the whole layer into one product with the
//! `(c_in * k * k) x c_out` filter matrix.

use crate::error::{GpmError, Result};
use crate::linalg::Matrix;
use crate::nn::Shape;

/// Static geometry of a 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_height: usize,
    pub in_width: usize,
}

impl ConvGeometry {
    pub fn new(input: Shape, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Result<Self> {
        let g = ConvGeometry {
            in_channels: input.channels,
            out_channels,
            kernel,
            stride,
            padding,
            in_height: input.height,
            in_width: input.width,
        };
        if kernel == 0 || stride == 0 || out_channels == 0 || input.is_empty() {
            return Err(GpmError::Validation(format!("degenerate convolution {g:?}")));
        }
        if input.height + 2 * padding < kernel || input.width + 2 * padding < kernel {
            return Err(GpmError::Validation(format!(
                "kernel {kernel} larger than padded input {}x{}",
                input.height + 2 * padding,
                input.width + 2 * padding
            )));
        }
        Ok(g)
    }

    pub fn out_height(&self) -> usize {
        (self.in_height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.in_width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    /// Output positions per image, `h_out * w_out`.
    pub fn positions(&self) -> usize {
        self.out_height() * self.out_width()
    }

    /// Patch vector length, `c_in * k * k`.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn input_shape(&self) -> Shape {
        Shape::new(self.in_channels, self.in_height, self.in_width)
    }

    pub fn output_shape(&self) -> Shape {
        Shape::new(self.out_channels, self.out_height(), self.out_width())
    }

    /// Source pixel for patch entry `(ci, ky, kx)` of output position `(y, x)`,
    /// or `None` when it falls in the zero padding.
    #[inline]
    fn source(&self, ci: usize, y: usize, x: usize, ky: usize, kx: usize) -> Option<usize> {
        let iy = (y * self.stride + ky).checked_sub(self.padding)?;
        let ix = (x * self.stride + kx).checked_sub(self.padding)?;
        (iy < self.in_height && ix < self.in_width).then(|| (ci * self.in_height + iy) * self.in_width + ix)
    }
}

/// Writes the patch rows of one image into `out` (`positions * patch_len` values).
pub(crate) fn im2col_into(input: &[f64], g: &ConvGeometry, out: &mut [f64]) {
    let (ow, k, d) = (g.out_width(), g.kernel, g.patch_len());
    debug_assert_eq!(out.len(), g.positions() * d);
    for (p, row) in out.chunks_exact_mut(d).enumerate() {
        let (y, x) = (p / ow, p % ow);
        let mut col = 0;
        for ci in 0..g.in_channels {
            for ky in 0..k {
                for kx in 0..k {
                    row[col] = g.source(ci, y, x, ky, kx).map_or(0.0, |s| input[s]);
                    col += 1;
                }
            }
        }
    }
}

/// Scatters patch-row gradients of one image back onto the input gradient.
pub(crate) fn col2im_add(patches: &[f64], g: &ConvGeometry, grad_input: &mut [f64]) {
    let (ow, k, d) = (g.out_width(), g.kernel, g.patch_len());
    for (p, row) in patches.chunks_exact(d).enumerate() {
        let (y, x) = (p / ow, p % ow);
        let mut col = 0;
        for ci in 0..g.in_channels {
            for ky in 0..k {
                for kx in 0..k {
                    if let Some(s) = g.source(ci, y, x, ky, kx) {
                        grad_input[s] += row[col];
                    }
                    col += 1;
                }
            }
        }
    }
}

/// Unrolls a single `c_in x h_in x w_in` image into its
/// `(h_out * w_out) x (c_in * k * k)` patch matrix.
pub fn im2col(input: &[f64], geometry: &ConvGeometry) -> Result<Matrix> {
    let expected = geometry.input_shape().len();
    if input.len() != expected {
        return Err(GpmError::shape("im2col", format!("{expected} input values"), input.len()));
    }
    let mut out = Matrix::zeros(geometry.positions(), geometry.patch_len());
    im2col_into(input, geometry, out.as_mut_slice());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pixel_kernel_one() {
        let g = ConvGeometry::new(Shape::new(1, 1, 1), 1, 1, 1, 0).unwrap();
        let m = im2col(&[0.7], &g).unwrap();
        assert_eq!(m.shape(), (1, 1));
        assert_eq!(m[(0, 0)], 0.7);
    }

    #[test]
    fn full_image_patch_is_flattened_input() {
        let g = ConvGeometry::new(Shape::new(1, 3, 3), 4, 3, 1, 0).unwrap();
        let input: Vec<f64> = (0..9).map(|v| v as f64).collect();
        let m = im2col(&input, &g).unwrap();
        assert_eq!(m.shape(), (1, 9));
        assert_eq!(m.row(0), input.as_slice());
    }

    #[test]
    fn output_dims_follow_floor_formula() {
        let g = ConvGeometry::new(Shape::new(2, 7, 6), 3, 3, 2, 1).unwrap();
        assert_eq!((g.out_height(), g.out_width()), (4, 3));
        assert_eq!(g.patch_len(), 18);
    }

    #[test]
    fn wrong_input_length_is_rejected() {
        let g = ConvGeometry::new(Shape::new(1, 3, 3), 1, 3, 1, 0).unwrap();
        assert!(matches!(im2col(&[0.0; 8], &g), Err(GpmError::Shape { .. })));
        assert!(ConvGeometry::new(Shape::new(1, 2, 2), 1, 3, 1, 0).is_err());
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), P> == <x, col2im(P)>
        let g = ConvGeometry::new(Shape::new(2, 5, 4), 3, 3, 2, 1).unwrap();
        let x: Vec<f64> = (0..40).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let p: Vec<f64> = (0..g.positions() * g.patch_len()).map(|i| ((i * 3) % 5) as f64 - 2.0).collect();
        let cols = im2col(&x, &g).unwrap();
        let lhs: f64 = cols.as_slice().iter().zip(&p).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; 40];
        col2im_add(&p, &g, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
