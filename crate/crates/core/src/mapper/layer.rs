//! Matrices and layers executed on tiled crossbars.

use ndarray::{s, Array2, Array3, ArrayView2};
use rand::Rng;

use super::{plan_matrix, LayerShape, SparseUnroll, TilePlan};
use crate::crossbar::{Crossbar, DeviceConfig};
use crate::error::{Error, Result};

/// A real matrix spread over a grid of crossbars. Partial products of
/// row tiles are summed in ascending row order.
#[derive(Clone, Debug, PartialEq)]
pub struct MappedMatrix {
    config: DeviceConfig,
    plan: TilePlan,
    tiles: Vec<Crossbar>,
}

impl MappedMatrix {
    /// All-zero matrix of the given dims.
    pub fn new(rows: usize, cols: usize, config: DeviceConfig) -> Result<Self> {
        config.validate()?;
        if rows == 0 || cols == 0 {
            return Err(Error::DimensionMismatch(format!("empty {rows}x{cols} matrix")));
        }
        let plan = plan_matrix(rows, cols, &config);
        let tiles = plan
            .tiles
            .iter()
            .map(|t| {
                let mut x = Crossbar::new(config)?;
                x.program(Array2::zeros((t.rows.len(), t.cols.len())).view())?;
                Ok(x)
            })
            .collect::<Result<_>>()?;
        Ok(MappedMatrix { config, plan, tiles })
    }

    pub fn from_matrix(matrix: ArrayView2<'_, f64>, config: DeviceConfig) -> Result<Self> {
        let mut m = Self::new(matrix.nrows(), matrix.ncols(), config)?;
        m.program(matrix)?;
        Ok(m)
    }

    pub(crate) fn from_tiles(config: DeviceConfig, rows: usize, cols: usize, tiles: Vec<Crossbar>) -> Result<Self> {
        let plan = plan_matrix(rows, cols, &config);
        if tiles.len() != plan.crossbar_count() {
            return Err(Error::DimensionMismatch(format!(
                "{} crossbars for a plan needing {}",
                tiles.len(),
                plan.crossbar_count()
            )));
        }
        for (t, x) in plan.tiles.iter().zip(&tiles) {
            if x.active_dims() != (t.rows.len(), t.cols.len()) {
                return Err(Error::DimensionMismatch(
                    "crossbar active region does not match tile".into(),
                ));
            }
        }
        Ok(MappedMatrix { config, plan, tiles })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.plan.rows_needed, self.plan.cols_needed)
    }

    pub fn config(&self) -> &DeviceConfig {
        &self.config
    }

    pub fn plan(&self) -> &TilePlan {
        &self.plan
    }

    pub fn crossbars(&self) -> &[Crossbar] {
        &self.tiles
    }

    pub fn crossbar_count(&self) -> usize {
        self.tiles.len()
    }

    fn check_dims(&self, matrix: &ArrayView2<'_, f64>) -> Result<()> {
        if matrix.dim() != self.dims() {
            return Err(Error::DimensionMismatch(format!(
                "programming a {:?} matrix into a {:?} mapping",
                matrix.dim(),
                self.dims()
            )));
        }
        Ok(())
    }

    /// Reprogram every tile from `matrix`.
    pub fn program(&mut self, matrix: ArrayView2<'_, f64>) -> Result<()> {
        self.check_dims(&matrix)?;
        for (t, x) in self.plan.tiles.iter().zip(self.tiles.iter_mut()) {
            x.program(matrix.slice(s![t.rows.clone(), t.cols.clone()]))?;
        }
        Ok(())
    }

    pub fn program_noisy<R: Rng + ?Sized>(&mut self, matrix: ArrayView2<'_, f64>, rng: &mut R) -> Result<()> {
        self.check_dims(&matrix)?;
        for (t, x) in self.plan.tiles.iter().zip(self.tiles.iter_mut()) {
            x.program_noisy(matrix.slice(s![t.rows.clone(), t.cols.clone()]), rng)?;
        }
        Ok(())
    }

    /// The stored (dequantized) matrix.
    pub fn read(&self) -> Array2<f64> {
        let mut out = Array2::zeros(self.dims());
        for (t, x) in self.plan.tiles.iter().zip(&self.tiles) {
            let (r, c) = (t.rows.len(), t.cols.len());
            let w = x.raw_weights();
            let width = x.config().cols;
            for i in 0..r {
                for j in 0..c {
                    out[[t.rows.start + i, t.cols.start + j]] = w[i * width + j];
                }
            }
        }
        out
    }

    /// Quantize a signal buffer in place with a max-abs fitted format.
    /// No-op in float mode.
    pub fn quantize_signal(&self, values: &mut [f64]) -> Result<()> {
        crate::crossbar::check_finite(values.iter())?;
        if let Some(spec) = self.config.signal_spec(values)? {
            spec.round_trip_slice(values);
        }
        Ok(())
    }

    /// Quantize `input` and multiply it through the whole matrix.
    pub fn mvm(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.plan.rows_needed {
            return Err(Error::DimensionMismatch(format!(
                "input of length {} for {} rows",
                input.len(),
                self.plan.rows_needed
            )));
        }
        let mut x = input.to_vec();
        self.quantize_signal(&mut x)?;
        let mut out = vec![0.0; self.plan.cols_needed];
        self.accumulate(&x, &mut out);
        Ok(out)
    }

    /// `out += x . M` for an already-quantized `x`.
    pub(crate) fn accumulate(&self, x: &[f64], out: &mut [f64]) {
        // tiles are row-tile-major, so each column sees row tiles in order
        for (i, t) in self.plan.tiles.iter().enumerate() {
            self.tiles[i].accumulate_dense(&x[t.rows.clone()], &mut out[t.cols.clone()]);
        }
    }

    /// Sparse `out += x . M` where `entries` are `(row, value)` sorted by row.
    pub(crate) fn accumulate_sparse(&self, entries: &[(usize, f64)], out: &mut [f64]) {
        let ct = self.plan.col_tiles;
        let mut start = 0;
        for rt in 0..self.plan.row_tiles {
            let tile0 = &self.plan.tiles[rt * ct];
            let end = start + entries[start..].partition_point(|(r, _)| *r < tile0.rows.end);
            if end > start {
                for c in 0..ct {
                    let t = &self.plan.tiles[rt * ct + c];
                    self.tiles[rt * ct + c].accumulate_sparse(
                        &entries[start..end],
                        t.rows.start,
                        &mut out[t.cols.clone()],
                    );
                }
            }
            start = end;
        }
    }
}

/// A (de)convolution layer whose kernel matrix lives on crossbars.
#[derive(Clone, Debug, PartialEq)]
pub struct MappedLayer {
    shape: LayerShape,
    unroll: SparseUnroll,
    weights: MappedMatrix,
}

impl MappedLayer {
    pub fn new(shape: LayerShape, config: DeviceConfig) -> Result<Self> {
        let unroll = SparseUnroll::new(&shape)?;
        let weights = MappedMatrix::new(shape.kernel_rows(), shape.kernel_cols(), config)?;
        Ok(MappedLayer { shape, unroll, weights })
    }

    /// Layer with `kernel_matrix` (`kernel_rows x out_channels`) programmed.
    pub fn with_kernel_matrix(
        shape: LayerShape,
        config: DeviceConfig,
        kernel_matrix: ArrayView2<'_, f64>,
    ) -> Result<Self> {
        let mut layer = Self::new(shape, config)?;
        layer.program(kernel_matrix)?;
        Ok(layer)
    }

    pub(crate) fn from_weights(shape: LayerShape, weights: MappedMatrix) -> Result<Self> {
        if weights.dims() != (shape.kernel_rows(), shape.kernel_cols()) {
            return Err(Error::DimensionMismatch(
                "weight mapping does not match layer shape".into(),
            ));
        }
        Ok(MappedLayer {
            unroll: SparseUnroll::new(&shape)?,
            shape,
            weights,
        })
    }

    pub fn shape(&self) -> &LayerShape {
        &self.shape
    }

    pub fn config(&self) -> &DeviceConfig {
        self.weights.config()
    }

    pub fn weights(&self) -> &MappedMatrix {
        &self.weights
    }

    pub fn unroll_plan(&self) -> &SparseUnroll {
        &self.unroll
    }

    pub fn program(&mut self, kernel_matrix: ArrayView2<'_, f64>) -> Result<()> {
        self.weights.program(kernel_matrix)
    }

    pub fn program_noisy<R: Rng + ?Sized>(&mut self, kernel_matrix: ArrayView2<'_, f64>, rng: &mut R) -> Result<()> {
        self.weights.program_noisy(kernel_matrix, rng)
    }

    pub fn kernel_matrix(&self) -> Array2<f64> {
        self.weights.read()
    }

    pub fn crossbar_count(&self) -> usize {
        self.weights.crossbar_count()
    }

    fn output_dims3(&self) -> (usize, usize, usize) {
        let (h, w) = self.shape.output_dims();
        (self.shape.out_channels, h, w)
    }

    fn input_dims3(&self) -> (usize, usize, usize) {
        (self.shape.in_channels, self.shape.input.0, self.shape.input.1)
    }

    /// Pre-activation output for one sample. The input map is quantized
    /// once, then each output pixel drives only its structural taps.
    pub fn forward(&self, input: &Array3<f64>) -> Result<Array3<f64>> {
        if input.dim() != self.input_dims3() {
            return Err(Error::DimensionMismatch(format!(
                "layer input {:?}, expected {:?}",
                input.dim(),
                self.input_dims3()
            )));
        }
        let mut x: Vec<f64> = input.iter().copied().collect();
        self.weights.quantize_signal(&mut x)?;
        let (oc, oh, ow) = self.output_dims3();
        let pixels = oh * ow;
        let mut out = Array3::zeros((oc, oh, ow));
        let mut entries = Vec::new();
        let mut acc = vec![0.0; oc];
        for p in 0..pixels {
            entries.clear();
            entries.extend(self.unroll.pixel_taps(p).iter().map(|t| (t.row, x[t.src])));
            acc.iter_mut().for_each(|a| *a = 0.0);
            self.weights.accumulate_sparse(&entries, &mut acc);
            for (o, &v) in acc.iter().enumerate() {
                out[[o, p / ow, p % ow]] = v;
            }
        }
        Ok(out)
    }

    /// Crossbars programmed with the transpose of the stored kernel matrix,
    /// used to send errors backwards.
    pub fn error_crossbars(&self) -> Result<MappedMatrix> {
        let wt = self.weights.read().reversed_axes();
        MappedMatrix::from_matrix(wt.view(), *self.config())
    }

    fn check_delta(&self, delta: &Array3<f64>) -> Result<()> {
        if delta.dim() != self.output_dims3() {
            return Err(Error::DimensionMismatch(format!(
                "error tensor {:?}, layer output {:?}",
                delta.dim(),
                self.output_dims3()
            )));
        }
        Ok(())
    }

    /// Error with respect to the layer input, `delta` being the error with
    /// respect to the pre-activation output.
    pub fn backward_input(&self, error_xbar: &MappedMatrix, delta: &Array3<f64>) -> Result<Array3<f64>> {
        self.check_delta(delta)?;
        if error_xbar.dims() != (self.shape.kernel_cols(), self.shape.kernel_rows()) {
            return Err(Error::DimensionMismatch(
                "error crossbars do not hold the transposed kernel".into(),
            ));
        }
        let (oc, oh, ow) = self.output_dims3();
        let mut d: Vec<f64> = delta.iter().copied().collect();
        error_xbar.quantize_signal(&mut d)?;
        let pixels = oh * ow;
        let mut e_in = vec![0.0; self.shape.input_len()];
        let mut col = vec![0.0; oc];
        let mut back = vec![0.0; self.shape.kernel_rows()];
        for p in 0..pixels {
            for (o, c) in col.iter_mut().enumerate() {
                *c = d[o * pixels + p];
            }
            if col.iter().all(|v| *v == 0.0) {
                continue;
            }
            back.iter_mut().for_each(|b| *b = 0.0);
            error_xbar.accumulate(&col, &mut back);
            for t in self.unroll.pixel_taps(p) {
                e_in[t.src] += back[t.row];
            }
        }
        Ok(Array3::from_shape_vec(self.input_dims3(), e_in).expect("input dims"))
    }

    /// Kernel-matrix gradient `U^T . delta` for one sample. The unrolled
    /// input `U` is programmed into fresh update crossbars and each output
    /// channel's error map is driven through them.
    pub fn weight_gradient(&self, input: &Array3<f64>, delta: &Array3<f64>) -> Result<Array2<f64>> {
        self.check_delta(delta)?;
        if input.dim() != self.input_dims3() {
            return Err(Error::DimensionMismatch("layer input dims".into()));
        }
        let flat: Vec<f64> = input.iter().copied().collect();
        let unrolled = self.unroll.dense(&flat);
        let update = MappedMatrix::from_matrix(unrolled.view(), *self.config())?;
        let (oc, oh, ow) = self.output_dims3();
        let pixels = oh * ow;
        let mut d: Vec<f64> = delta.iter().copied().collect();
        update.quantize_signal(&mut d)?;
        let k = self.shape.kernel_rows();
        let mut grad = Array2::zeros((k, oc));
        let mut col = vec![0.0; k];
        for o in 0..oc {
            let row = &d[o * pixels..(o + 1) * pixels];
            if row.iter().all(|v| *v == 0.0) {
                continue;
            }
            col.iter_mut().for_each(|c| *c = 0.0);
            update.accumulate(row, &mut col);
            grad.column_mut(o).iter_mut().zip(&col).for_each(|(g, v)| *g = *v);
        }
        Ok(grad)
    }
}
