//! Placing (de)convolution layers onto crossbars.
//!
//! A layer's kernels are reshaped into a `(in_channels * kh * kw) x
//! out_channels` matrix and tiled over as many crossbars as the device
//! size requires. Inputs reach the crossbars as im2col patch vectors;
//! deconvolution runs as a stride-1 convolution over a zero-dilated,
//! edge-padded input, and only the structurally non-zero taps of each
//! patch are driven.

mod group;
mod layer;
mod unroll;

pub use group::{dense_multiply, dense_multiply_count, group_by_taps, group_nonzero_rows, GroupedInput, RowGroup};
pub use layer::{MappedLayer, MappedMatrix};
pub use unroll::{
    conv_kernel_matrix, deconv_kernel_matrix, dilate, unroll_conv_input, zero_pad_deconv_input, SparseUnroll, Tap,
};

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::crossbar::DeviceConfig;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    Deconv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    /// (height, width)
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    /// Input spatial dims (height, width).
    pub input: (usize, usize),
}

impl LayerShape {
    pub fn conv(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        input: (usize, usize),
    ) -> Self {
        LayerShape {
            kind: LayerKind::Conv,
            in_channels,
            out_channels,
            kernel: (kernel, kernel),
            stride,
            padding,
            input,
        }
    }

    pub fn deconv(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        input: (usize, usize),
    ) -> Self {
        LayerShape {
            kind: LayerKind::Deconv,
            ..Self::conv(in_channels, out_channels, kernel, stride, padding, input)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("in_channels", self.in_channels),
            ("out_channels", self.out_channels),
            ("kernel.h", self.kernel.0),
            ("kernel.w", self.kernel.1),
            ("stride", self.stride),
            ("input.h", self.input.0),
            ("input.w", self.input.1),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("layer.{name}"), "must be >= 1"));
        }
        match self.kind {
            LayerKind::Conv => {
                if self.input.0 + 2 * self.padding < self.kernel.0 || self.input.1 + 2 * self.padding < self.kernel.1 {
                    return Err(Error::config("layer.kernel", "kernel larger than padded input"));
                }
            }
            LayerKind::Deconv => {
                if self.padding + 1 > self.kernel.0 || self.padding + 1 > self.kernel.1 {
                    return Err(Error::config("layer.padding", "deconv padding must be < kernel size"));
                }
            }
        }
        let (oh, ow) = self.output_dims();
        if oh == 0 || ow == 0 {
            return Err(Error::config("layer.output", "output spatial dims must be >= 1"));
        }
        Ok(())
    }

    /// Output spatial dims from standard conv / transposed-conv arithmetic.
    pub fn output_dims(&self) -> (usize, usize) {
        let dim = |n: usize, k: usize| -> usize {
            match self.kind {
                LayerKind::Conv => (n + 2 * self.padding).saturating_sub(k) / self.stride + 1,
                LayerKind::Deconv => ((n - 1) * self.stride + k).saturating_sub(2 * self.padding),
            }
        };
        (dim(self.input.0, self.kernel.0), dim(self.input.1, self.kernel.1))
    }

    /// Rows of the reshaped kernel matrix.
    pub fn kernel_rows(&self) -> usize {
        self.in_channels * self.kernel.0 * self.kernel.1
    }

    pub fn kernel_cols(&self) -> usize {
        self.out_channels
    }

    pub fn output_pixels(&self) -> usize {
        let (h, w) = self.output_dims();
        h * w
    }

    pub fn input_len(&self) -> usize {
        self.in_channels * self.input.0 * self.input.1
    }

    pub fn output_len(&self) -> usize {
        self.out_channels * self.output_pixels()
    }

    /// Zeros added on each edge after dilation: `kernel - 1 - padding`.
    pub fn deconv_edge_padding(&self) -> (usize, usize) {
        (self.kernel.0 - 1 - self.padding, self.kernel.1 - 1 - self.padding)
    }

    /// The stride-1, unpadded convolution that a deconv layer becomes once
    /// its input is dilated and edge padded. Conv layers map to themselves.
    pub fn equivalent_conv(&self) -> LayerShape {
        match self.kind {
            LayerKind::Conv => *self,
            LayerKind::Deconv => {
                let (eh, ew) = self.deconv_edge_padding();
                let dh = (self.input.0 - 1) * self.stride + 1;
                let dw = (self.input.1 - 1) * self.stride + 1;
                LayerShape {
                    kind: LayerKind::Conv,
                    stride: 1,
                    padding: 0,
                    input: (dh + 2 * eh, dw + 2 * ew),
                    ..*self
                }
            }
        }
    }
}

/// One crossbar's share of a tiled matrix.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileAssignment {
    pub crossbar: usize,
    pub rows: Range<usize>,
    pub cols: Range<usize>,
}

/// Tiling of a `rows_needed x cols_needed` matrix over equal crossbars.
/// Crossbar ids are row-tile-major.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilePlan {
    pub rows_needed: usize,
    pub cols_needed: usize,
    pub row_tiles: usize,
    pub col_tiles: usize,
    pub device_rows: usize,
    pub device_cols: usize,
    pub tiles: Vec<TileAssignment>,
}

impl TilePlan {
    pub fn crossbar_count(&self) -> usize {
        self.row_tiles * self.col_tiles
    }
}

pub fn plan_matrix(rows_needed: usize, cols_needed: usize, dev: &DeviceConfig) -> TilePlan {
    let row_tiles = rows_needed.div_ceil(dev.rows);
    let col_tiles = cols_needed.div_ceil(dev.cols);
    let mut tiles = Vec::with_capacity(row_tiles * col_tiles);
    for rt in 0..row_tiles {
        for ct in 0..col_tiles {
            tiles.push(TileAssignment {
                crossbar: rt * col_tiles + ct,
                rows: rt * dev.rows..((rt + 1) * dev.rows).min(rows_needed),
                cols: ct * dev.cols..((ct + 1) * dev.cols).min(cols_needed),
            });
        }
    }
    TilePlan {
        rows_needed,
        cols_needed,
        row_tiles,
        col_tiles,
        device_rows: dev.rows,
        device_cols: dev.cols,
        tiles,
    }
}

/// Crossbar assignment for one layer's kernel matrix.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerMapping {
    pub shape: LayerShape,
    pub plan: TilePlan,
}

impl LayerMapping {
    pub fn crossbar_count(&self) -> usize {
        self.plan.crossbar_count()
    }

    pub fn tiles(&self) -> &[TileAssignment] {
        &self.plan.tiles
    }
}

pub fn plan_mapping(shape: &LayerShape, dev: &DeviceConfig) -> LayerMapping {
    LayerMapping {
        shape: *shape,
        plan: plan_matrix(shape.kernel_rows(), shape.kernel_cols(), dev),
    }
}
