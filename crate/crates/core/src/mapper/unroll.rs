//! im2col unrolling, deconv dilation/padding and kernel reshaping.

use ndarray::{s, Array2, Array3, Array4};

use super::{LayerKind, LayerShape};
use crate::error::{Error, Result};

fn check_input(input: &Array3<f64>, shape: &LayerShape) -> Result<()> {
    let want = (shape.in_channels, shape.input.0, shape.input.1);
    if input.dim() != want {
        return Err(Error::DimensionMismatch(format!(
            "feature map {:?} for a layer expecting {:?}",
            input.dim(),
            want
        )));
    }
    Ok(())
}

/// Insert `stride - 1` zeros between neighbouring pixels.
pub fn dilate(input: &Array3<f64>, stride: usize) -> Array3<f64> {
    let (c, h, w) = input.dim();
    if stride <= 1 {
        return input.clone();
    }
    let mut out = Array3::zeros((c, (h - 1) * stride + 1, (w - 1) * stride + 1));
    out.slice_mut(s![.., ..;stride, ..;stride]).assign(input);
    out
}

/// Dilate by the stride and pad every edge with `kernel - 1 - padding`
/// zeros, so that a stride-1 convolution with the flipped kernel equals
/// the transposed convolution.
pub fn zero_pad_deconv_input(input: &Array3<f64>, shape: &LayerShape) -> Result<Array3<f64>> {
    if shape.kind != LayerKind::Deconv {
        return Err(Error::config(
            "layer.kind",
            "zero padding applies to deconv layers only",
        ));
    }
    shape.validate()?;
    check_input(input, shape)?;
    let dilated = dilate(input, shape.stride);
    let (eh, ew) = shape.deconv_edge_padding();
    let (c, h, w) = dilated.dim();
    let mut out = Array3::zeros((c, h + 2 * eh, w + 2 * ew));
    out.slice_mut(s![.., eh..eh + h, ew..ew + w]).assign(&dilated);
    Ok(out)
}

/// One patch row per output pixel (row-major), columns ordered
/// `(channel, ky, kx)`. Deconv inputs are dilated and padded first.
pub fn unroll_conv_input(input: &Array3<f64>, shape: &LayerShape) -> Result<Array2<f64>> {
    shape.validate()?;
    check_input(input, shape)?;
    let (src, conv) = match shape.kind {
        LayerKind::Conv => (input.clone(), *shape),
        LayerKind::Deconv => (zero_pad_deconv_input(input, shape)?, shape.equivalent_conv()),
    };
    let (oh, ow) = conv.output_dims();
    let (kh, kw) = conv.kernel;
    let (h, w) = conv.input;
    let p = conv.padding as isize;
    let mut out = Array2::zeros((oh * ow, conv.kernel_rows()));
    for oy in 0..oh {
        for ox in 0..ow {
            let row = oy * ow + ox;
            for c in 0..conv.in_channels {
                for ky in 0..kh {
                    let iy = (oy * conv.stride + ky) as isize - p;
                    for kx in 0..kw {
                        let ix = (ox * conv.stride + kx) as isize - p;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                            out[[row, (c * kh + ky) * kw + kx]] = src[[c, iy as usize, ix as usize]];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Reshape conv kernels `[out][in][kh][kw]` into a `(in*kh*kw) x out` matrix.
pub fn conv_kernel_matrix(kernels: &Array4<f64>) -> Array2<f64> {
    let (o, i, kh, kw) = kernels.dim();
    let mut m = Array2::zeros((i * kh * kw, o));
    for ((oc, ic, ky, kx), &v) in kernels.indexed_iter() {
        m[[(ic * kh + ky) * kw + kx, oc]] = v;
    }
    m
}

/// Reshape deconv kernels `[in][out][kh][kw]` into the matrix of the
/// equivalent convolution, flipping each kernel spatially.
pub fn deconv_kernel_matrix(kernels: &Array4<f64>) -> Array2<f64> {
    let (i, o, kh, kw) = kernels.dim();
    let mut m = Array2::zeros((i * kh * kw, o));
    for ((ic, oc, ky, kx), &v) in kernels.indexed_iter() {
        m[[(ic * kh + (kh - 1 - ky)) * kw + (kw - 1 - kx), oc]] = v;
    }
    m
}

/// A structurally non-zero entry of an unrolled patch: kernel-matrix row
/// `row` reads flat input element `src` (`(c * h + y) * w + x`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tap {
    pub row: usize,
    pub src: usize,
}

/// Gather plan listing, for each output pixel, the patch entries that can
/// be non-zero. Padding and dilation zeros never appear, so driving only
/// the taps is the zero-row grouping applied ahead of time.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseUnroll {
    shape: LayerShape,
    taps: Vec<Tap>,
    offsets: Vec<usize>,
}

impl SparseUnroll {
    pub fn new(shape: &LayerShape) -> Result<Self> {
        shape.validate()?;
        let conv = shape.equivalent_conv();
        let (oh, ow) = conv.output_dims();
        let (kh, kw) = conv.kernel;
        let (h, w) = shape.input;
        // maps a coordinate of the (padded, dilated) conv input back to
        // the original feature map
        let locate = |pos: isize, edge: isize, n: usize| -> Option<usize> {
            let d = pos - edge;
            if d < 0 {
                return None;
            }
            let d = d as usize;
            match shape.kind {
                LayerKind::Conv => (d < n).then_some(d),
                LayerKind::Deconv => (d % shape.stride == 0 && d / shape.stride < n).then_some(d / shape.stride),
            }
        };
        let (edge_y, edge_x) = match shape.kind {
            LayerKind::Conv => (shape.padding as isize, shape.padding as isize),
            LayerKind::Deconv => {
                let (eh, ew) = shape.deconv_edge_padding();
                (eh as isize, ew as isize)
            }
        };
        let mut taps = Vec::new();
        let mut offsets = Vec::with_capacity(oh * ow + 1);
        offsets.push(0);
        for oy in 0..oh {
            for ox in 0..ow {
                for c in 0..shape.in_channels {
                    for ky in 0..kh {
                        let Some(iy) = locate((oy * conv.stride + ky) as isize, edge_y, h) else {
                            continue;
                        };
                        for kx in 0..kw {
                            if let Some(ix) = locate((ox * conv.stride + kx) as isize, edge_x, w) {
                                taps.push(Tap {
                                    row: (c * kh + ky) * kw + kx,
                                    src: (c * h + iy) * w + ix,
                                });
                            }
                        }
                    }
                }
                offsets.push(taps.len());
            }
        }
        Ok(SparseUnroll {
            shape: *shape,
            taps,
            offsets,
        })
    }

    pub fn shape(&self) -> &LayerShape {
        &self.shape
    }

    pub fn pixels(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Taps of output pixel `p`, sorted by kernel row.
    pub fn pixel_taps(&self, p: usize) -> &[Tap] {
        &self.taps[self.offsets[p]..self.offsets[p + 1]]
    }

    pub fn tap_count(&self) -> usize {
        self.taps.len()
    }

    /// Entries of the full unrolled matrix, `pixels * kernel_rows`.
    pub fn dense_count(&self) -> usize {
        self.pixels() * self.shape.kernel_rows()
    }

    /// Materialize the unrolled matrix from a flat input buffer.
    pub fn dense(&self, input: &[f64]) -> Array2<f64> {
        let mut out = Array2::zeros((self.pixels(), self.shape.kernel_rows()));
        for p in 0..self.pixels() {
            for t in self.pixel_taps(p) {
                out[[p, t.row]] = input[t.src];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;

    fn ramp(c: usize, h: usize, w: usize) -> Array3<f64> {
        Array::from_shape_fn((c, h, w), |(a, b, d)| (a * 100 + b * 10 + d) as f64 + 1.0)
    }

    #[test]
    fn pointwise_unroll_is_flattened_input() {
        let shape = LayerShape::conv(1, 1, 1, 1, 0, (3, 4));
        let x = ramp(1, 3, 4);
        let u = unroll_conv_input(&x, &shape).unwrap();
        assert_eq!(u.column(0).to_vec(), x.iter().copied().collect::<Vec<_>>());
    }

    #[test]
    fn kernel_sized_input_gives_one_row() {
        let shape = LayerShape::conv(1, 1, 2, 1, 0, (2, 2));
        let u = unroll_conv_input(&ramp(1, 2, 2), &shape).unwrap();
        assert_eq!(u.dim(), (1, 4));
        assert_eq!(u.row(0).to_vec(), vec![1.0, 2.0, 11.0, 12.0]);
    }

    #[test]
    fn dilation_interleaves_zeros() {
        let x = ramp(1, 2, 2);
        let d = dilate(&x, 2);
        assert_eq!(d.dim(), (1, 3, 3));
        let expect = [1.0, 0.0, 2.0, 0.0, 0.0, 0.0, 11.0, 0.0, 12.0];
        assert_eq!(d.iter().copied().collect::<Vec<_>>(), expect);
        assert_eq!(dilate(&x, 1), x);
    }

    #[test]
    fn padding_requires_deconv() {
        let shape = LayerShape::conv(1, 1, 3, 1, 0, (4, 4));
        assert!(zero_pad_deconv_input(&ramp(1, 4, 4), &shape).is_err());
        let shape = LayerShape::deconv(1, 1, 3, 2, 1, (4, 4));
        let p = zero_pad_deconv_input(&ramp(1, 4, 4), &shape).unwrap();
        assert_eq!(p.dim(), (1, 9, 9));
        assert_eq!(p[[0, 1, 1]], 1.0);
        assert_eq!(p[[0, 0, 0]], 0.0);
    }

    #[test]
    fn wrong_input_dims_are_rejected() {
        let shape = LayerShape::conv(2, 1, 3, 1, 0, (4, 4));
        assert!(matches!(
            unroll_conv_input(&ramp(1, 4, 4), &shape),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn sparse_plan_densifies_to_unrolled_matrix() {
        for shape in [
            LayerShape::conv(2, 3, 3, 2, 1, (6, 5)),
            LayerShape::conv(3, 1, 4, 2, 1, (8, 8)),
            LayerShape::deconv(2, 3, 3, 2, 1, (4, 4)),
            LayerShape::deconv(3, 2, 4, 2, 1, (3, 5)),
            LayerShape::deconv(2, 2, 3, 1, 0, (1, 1)),
        ] {
            let x = ramp(shape.in_channels, shape.input.0, shape.input.1);
            let plan = SparseUnroll::new(&shape).unwrap();
            let flat: Vec<f64> = x.iter().copied().collect();
            assert_eq!(plan.dense(&flat), unroll_conv_input(&x, &shape).unwrap(), "{shape:?}");
            // every ramp value is non-zero, so taps are exactly the non-zero entries
            let nz = unroll_conv_input(&x, &shape)
                .unwrap()
                .iter()
                .filter(|v| **v != 0.0)
                .count();
            assert_eq!(plan.tap_count(), nz);
        }
    }

    #[test]
    fn kernel_matrices_use_channel_major_rows() {
        let k = Array::from_shape_fn((2, 1, 2, 2), |(o, _, y, x)| (o * 10 + y * 2 + x) as f64);
        let m = conv_kernel_matrix(&k);
        assert_eq!(m.column(1).to_vec(), vec![10.0, 11.0, 12.0, 13.0]);
        let k = Array::from_shape_fn((1, 2, 2, 2), |(_, o, y, x)| (o * 10 + y * 2 + x) as f64);
        let m = deconv_kernel_matrix(&k);
        assert_eq!(m.column(0).to_vec(), vec![3.0, 2.0, 1.0, 0.0]);
    }
}
