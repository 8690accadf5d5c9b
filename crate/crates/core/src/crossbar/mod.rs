//! A single memristor crossbar: weights stored as conductance codes,
//! read back through dequantization, and used for matrix-vector products.
//!
//! Signed weights live on a single code grid offset by `zero_code`
//! (the differential-pair circuit is abstracted away). Each programming
//! event picks a fresh symmetric scale from the max-abs weight.
//!
//! In float mode (`DeviceConfig::float_mode`) cells hold exact `f64`
//! weights; this is the idealized analog device used as the reference
//! datapath.

mod quant;

pub(crate) use quant::check_finite;
pub use quant::{dequantize, quantize, QuantSpec, QuantizedMatrix, QUANT_BITS};

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weight bit widths a device can store.
pub const WEIGHT_BITS: [u32; 4] = [4, 8, 16, 32];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeviceConfig {
    pub rows: usize,
    pub cols: usize,
    /// Low-resistance state, ohms.
    pub r_min: f64,
    /// High-resistance state, ohms.
    pub r_max: f64,
    pub weight_bits: u32,
    pub input_bits: u32,
    /// Ideal analog cells: weights and signals are not quantized.
    pub float_mode: bool,
    /// Std-dev of additive programming noise in LSBs, used only by
    /// [`Crossbar::program_noisy`].
    pub programming_noise: f64,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        DeviceConfig {
            rows: 32,
            cols: 32,
            r_min: 50e3,
            r_max: 1e6,
            weight_bits: 8,
            input_bits: 8,
            float_mode: false,
            programming_noise: 0.0,
        }
    }
}

impl DeviceConfig {
    /// Fixed-point device with the same width for weights and signals.
    pub fn fixed(bits: u32) -> Self {
        DeviceConfig {
            weight_bits: bits,
            input_bits: bits,
            ..Default::default()
        }
    }

    pub fn float() -> Self {
        DeviceConfig {
            float_mode: true,
            ..Default::default()
        }
    }

    pub fn with_dims(mut self, rows: usize, cols: usize) -> Self {
        self.rows = rows;
        self.cols = cols;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 {
            return Err(Error::config("device.rows", "must be >= 1"));
        }
        if self.cols == 0 {
            return Err(Error::config("device.cols", "must be >= 1"));
        }
        if !(self.r_min > 0.0 && self.r_min < self.r_max && self.r_max.is_finite()) {
            return Err(Error::config(
                "device.r_min",
                format!("need 0 < r_min < r_max, got {} / {}", self.r_min, self.r_max),
            ));
        }
        if !WEIGHT_BITS.contains(&self.weight_bits) {
            return Err(Error::UnsupportedBits {
                bits: self.weight_bits,
                supported: "4, 8, 16, 32",
            });
        }
        if !QUANT_BITS.contains(&self.input_bits) {
            return Err(Error::UnsupportedBits {
                bits: self.input_bits,
                supported: "2..=32",
            });
        }
        if !(self.programming_noise >= 0.0 && self.programming_noise.is_finite()) {
            return Err(Error::config("device.programming_noise", "must be finite and >= 0"));
        }
        Ok(())
    }

    /// Symmetric quantizer for a signal vector, sized to its max-abs.
    /// `None` in float mode.
    pub fn signal_spec(&self, values: &[f64]) -> Result<Option<QuantSpec>> {
        if self.float_mode {
            return Ok(None);
        }
        QuantSpec::fit_symmetric(self.input_bits, values).map(Some)
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Cells {
    Coded { levels: Vec<u32>, spec: QuantSpec },
    Analog,
}

/// One crossbar array of `rows x cols` cells.
#[derive(Clone, Debug, PartialEq)]
pub struct Crossbar {
    config: DeviceConfig,
    cells: Cells,
    /// Dequantized cell weights, row-major. Derived from `cells` for coded
    /// devices; the primary state for analog ones.
    weights: Vec<f64>,
    used_rows: usize,
    used_cols: usize,
}

impl Crossbar {
    /// A crossbar with every cell at the zero-weight level.
    pub fn new(config: DeviceConfig) -> Result<Self> {
        config.validate()?;
        let n = config.rows * config.cols;
        let cells = if config.float_mode {
            Cells::Analog
        } else {
            let spec = QuantSpec::symmetric(config.weight_bits, 1.0)?;
            Cells::Coded {
                levels: vec![zero_level(config.weight_bits); n],
                spec,
            }
        };
        Ok(Crossbar {
            config,
            cells,
            weights: vec![0.0; n],
            used_rows: config.rows,
            used_cols: config.cols,
        })
    }

    pub fn config(&self) -> &DeviceConfig {
        &self.config
    }

    /// Dimensions of the region written by the last `program` call.
    pub fn active_dims(&self) -> (usize, usize) {
        (self.used_rows, self.used_cols)
    }

    /// Code representing weight zero; `None` for analog cells.
    pub fn zero_code(&self) -> Option<u32> {
        match self.cells {
            Cells::Coded { .. } => Some(zero_level(self.config.weight_bits)),
            Cells::Analog => None,
        }
    }

    /// Weight value of one LSB; `None` for analog cells.
    pub fn scale(&self) -> Option<f64> {
        match &self.cells {
            Cells::Coded { spec, .. } => Some(spec.scale()),
            Cells::Analog => None,
        }
    }

    /// Program `weights` into the top-left corner; untouched cells get the
    /// zero level.
    pub fn program(&mut self, weights: ArrayView2<'_, f64>) -> Result<()> {
        self.program_inner(weights, None::<&mut rand::rngs::ThreadRng>)
    }

    /// Like [`program`](Self::program), adding Gaussian level noise with
    /// std-dev `config.programming_noise` LSBs. Analog cells ignore noise.
    pub fn program_noisy<R: Rng + ?Sized>(&mut self, weights: ArrayView2<'_, f64>, rng: &mut R) -> Result<()> {
        self.program_inner(weights, Some(rng))
    }

    fn program_inner<R: Rng + ?Sized>(&mut self, weights: ArrayView2<'_, f64>, rng: Option<&mut R>) -> Result<()> {
        let (rows, cols) = weights.dim();
        if rows > self.config.rows || cols > self.config.cols {
            return Err(Error::ExceedsCrossbar {
                rows,
                cols,
                max_rows: self.config.rows,
                max_cols: self.config.cols,
            });
        }
        check_finite(weights.iter())?;
        let width = self.config.cols;
        self.weights.iter_mut().for_each(|w| *w = 0.0);
        match &mut self.cells {
            Cells::Analog => {
                for ((r, c), &w) in weights.indexed_iter() {
                    self.weights[r * width + c] = w;
                }
            }
            Cells::Coded { levels, spec } => {
                let bits = self.config.weight_bits;
                *spec = QuantSpec::fit_symmetric(bits, weights.iter())?;
                let zero = zero_level(bits);
                levels.iter_mut().for_each(|l| *l = zero);
                let top = max_level(bits);
                let noise = match rng {
                    Some(rng) if self.config.programming_noise > 0.0 => {
                        let dist = Normal::new(0.0, self.config.programming_noise)
                            .map_err(|e| Error::config("device.programming_noise", e.to_string()))?;
                        Some((dist, rng))
                    }
                    _ => None,
                };
                let mut noise = noise;
                for ((r, c), &w) in weights.indexed_iter() {
                    let signed = spec.quantize_value(w);
                    let mut level = signed + zero as i64;
                    if let Some((dist, rng)) = noise.as_mut() {
                        let jitter: f64 = dist.sample(&mut **rng);
                        level = (level as f64 + jitter).round() as i64;
                    }
                    let level = level.clamp(0, top as i64) as u32;
                    levels[r * width + c] = level;
                    self.weights[r * width + c] = spec.dequantize_value(level as i64 - zero as i64);
                }
            }
        }
        self.used_rows = rows;
        self.used_cols = cols;
        Ok(())
    }

    /// Dequantized weights of the full grid.
    pub fn read_weights(&self) -> Array2<f64> {
        Array2::from_shape_vec((self.config.rows, self.config.cols), self.weights.clone())
            .expect("weight buffer matches grid dims")
    }

    /// Raw conductance codes; `None` for analog cells.
    pub fn levels(&self) -> Option<Array2<u32>> {
        match &self.cells {
            Cells::Coded { levels, .. } => Some(
                Array2::from_shape_vec((self.config.rows, self.config.cols), levels.clone())
                    .expect("level buffer matches grid dims"),
            ),
            Cells::Analog => None,
        }
    }

    /// Overwrite one cell's code directly, bypassing quantization.
    pub fn set_level(&mut self, row: usize, col: usize, level: u32) -> Result<()> {
        if row >= self.config.rows || col >= self.config.cols {
            return Err(Error::DimensionMismatch(format!(
                "cell ({row}, {col}) outside {}x{} crossbar",
                self.config.rows, self.config.cols
            )));
        }
        let bits = self.config.weight_bits;
        match &mut self.cells {
            Cells::Coded { levels, spec } => {
                if level > max_level(bits) {
                    return Err(Error::config("level", format!("{level} exceeds {}-bit range", bits)));
                }
                let idx = row * self.config.cols + col;
                levels[idx] = level;
                self.weights[idx] = spec.dequantize_value(level as i64 - zero_level(bits) as i64);
                Ok(())
            }
            Cells::Analog => Err(Error::State("analog cells have no conductance codes".into())),
        }
    }

    /// Weight represented by a code under the current scale.
    pub fn dequantize_level(&self, level: u32) -> Option<f64> {
        match &self.cells {
            Cells::Coded { spec, .. } => {
                Some(spec.dequantize_value(level as i64 - zero_level(self.config.weight_bits) as i64))
            }
            Cells::Analog => None,
        }
    }

    /// Device conductance in siemens, linear in the code between
    /// `1/r_max` and `1/r_min`. Analog cells map |w| / max|w| onto the
    /// same window.
    pub fn conductance(&self, row: usize, col: usize) -> f64 {
        let g_min = 1.0 / self.config.r_max;
        let g_max = 1.0 / self.config.r_min;
        let frac = match &self.cells {
            Cells::Coded { levels, .. } => {
                levels[row * self.config.cols + col] as f64 / max_level(self.config.weight_bits) as f64
            }
            Cells::Analog => {
                let peak = self.weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
                if peak == 0.0 {
                    0.0
                } else {
                    self.weights[row * self.config.cols + col].abs() / peak
                }
            }
        };
        g_min + frac * (g_max - g_min)
    }

    /// Quantize `input` under `spec` and multiply it through the active
    /// region: `out[c] = sum_r q(input[r]) * w[r][c]`.
    pub fn mvm(&self, input: &[f64], spec: &QuantSpec) -> Result<Vec<f64>> {
        if input.len() != self.used_rows {
            return Err(Error::DimensionMismatch(format!(
                "input of length {} for {} active rows",
                input.len(),
                self.used_rows
            )));
        }
        check_finite(input.iter())?;
        let driven: Vec<f64> = if self.config.float_mode {
            input.to_vec()
        } else {
            spec.validate()?;
            input.iter().map(|&x| spec.round_trip(x)).collect()
        };
        let mut out = vec![0.0; self.used_cols];
        self.accumulate_dense(&driven, &mut out);
        Ok(out)
    }

    /// `out[c] += sum_r x[r] * w[r][c]` for already-quantized inputs over
    /// the first `out.len()` columns. Rows are summed in ascending order.
    /// Zero inputs are skipped; a sum that starts at +0.0 is bit-identical
    /// either way.
    pub(crate) fn accumulate_dense(&self, x: &[f64], out: &mut [f64]) {
        let width = self.config.cols;
        let n = out.len();
        for (r, &v) in x.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let row = &self.weights[r * width..r * width + n];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += v * w;
            }
        }
    }

    /// Sparse variant: `entries` are `(row, value)` pairs sorted by row,
    /// with rows expressed in a frame shifted by `row_offset`.
    pub(crate) fn accumulate_sparse(&self, entries: &[(usize, f64)], row_offset: usize, out: &mut [f64]) {
        let width = self.config.cols;
        let n = out.len();
        for &(r, v) in entries {
            if v == 0.0 {
                continue;
            }
            let r = r - row_offset;
            let row = &self.weights[r * width..r * width + n];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += v * w;
            }
        }
    }

    /// Number of stored code grids this crossbar represents (always one).
    pub fn grid_count(&self) -> usize {
        1
    }

    pub(crate) fn raw_weights(&self) -> &[f64] {
        &self.weights
    }

    /// Restore a coded crossbar from a checkpoint.
    pub(crate) fn from_levels(
        config: DeviceConfig,
        levels: Vec<u32>,
        spec: QuantSpec,
        used: (usize, usize),
    ) -> Result<Self> {
        config.validate()?;
        if levels.len() != config.rows * config.cols {
            return Err(Error::DimensionMismatch(format!(
                "{} levels for a {}x{} crossbar",
                levels.len(),
                config.rows,
                config.cols
            )));
        }
        let zero = zero_level(config.weight_bits) as i64;
        let weights = levels.iter().map(|&l| spec.dequantize_value(l as i64 - zero)).collect();
        Ok(Crossbar {
            config,
            cells: Cells::Coded { levels, spec },
            weights,
            used_rows: used.0,
            used_cols: used.1,
        })
    }

    /// Restore an analog crossbar from a checkpoint.
    pub(crate) fn from_analog(config: DeviceConfig, weights: Vec<f64>, used: (usize, usize)) -> Result<Self> {
        config.validate()?;
        if weights.len() != config.rows * config.cols {
            return Err(Error::DimensionMismatch("analog weight count".into()));
        }
        Ok(Crossbar {
            config,
            cells: Cells::Analog,
            weights,
            used_rows: used.0,
            used_cols: used.1,
        })
    }

    pub(crate) fn quant_spec(&self) -> Option<QuantSpec> {
        match &self.cells {
            Cells::Coded { spec, .. } => Some(*spec),
            Cells::Analog => None,
        }
    }
}

fn zero_level(bits: u32) -> u32 {
    1u32 << (bits - 1)
}

fn max_level(bits: u32) -> u32 {
    if bits == 32 {
        u32::MAX
    } else {
        (1u32 << bits) - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn fresh_crossbar_reads_zero() {
        let xbar = Crossbar::new(DeviceConfig::default()).unwrap();
        assert!(xbar.read_weights().iter().all(|&w| w == 0.0));
        let levels = xbar.levels().unwrap();
        assert!(levels.iter().all(|&l| l == 128));
    }

    #[test]
    fn identity_round_trip_leaves_rest_zero() {
        let mut xbar = Crossbar::new(DeviceConfig::default()).unwrap();
        let eye = Array2::<f64>::eye(4);
        xbar.program(eye.view()).unwrap();
        let read = xbar.read_weights();
        let half = xbar.scale().unwrap() / 2.0;
        for r in 0..32 {
            for c in 0..32 {
                if r < 4 && c < 4 {
                    assert!((read[[r, c]] - eye[[r, c]]).abs() <= half);
                } else {
                    assert_eq!(read[[r, c]], 0.0);
                }
            }
        }
    }

    #[test]
    fn programming_is_idempotent() {
        let w = random_matrix(20, 17, 3);
        let mut a = Crossbar::new(DeviceConfig::default()).unwrap();
        a.program(w.view()).unwrap();
        let first = a.levels().unwrap();
        a.program(w.view()).unwrap();
        assert_eq!(first, a.levels().unwrap());
    }

    #[test]
    fn oversized_matrix_is_rejected() {
        let mut xbar = Crossbar::new(DeviceConfig::default()).unwrap();
        let err = xbar.program(Array2::zeros((33, 4)).view()).unwrap_err();
        match err {
            Error::ExceedsCrossbar { rows, cols, .. } => assert_eq!((rows, cols), (33, 4)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn externally_set_levels_read_back_through_scalar_dequantizer() {
        let mut xbar = Crossbar::new(DeviceConfig::default()).unwrap();
        xbar.program(random_matrix(8, 8, 5).view()).unwrap();
        let scale = xbar.scale().unwrap();
        for (i, level) in [0u32, 1, 77, 128, 200, 255].into_iter().enumerate() {
            xbar.set_level(i, i, level).unwrap();
            let expected = (level as f64 - 128.0) * scale;
            assert_eq!(xbar.read_weights()[[i, i]], expected);
        }
        assert!(xbar.set_level(0, 0, 256).is_err());
    }

    #[test]
    fn mvm_zero_input_gives_zero() {
        let mut xbar = Crossbar::new(DeviceConfig::default()).unwrap();
        xbar.program(random_matrix(6, 5, 1).view()).unwrap();
        let spec = QuantSpec::symmetric(8, 1.0).unwrap();
        assert_eq!(xbar.mvm(&[0.0; 6], &spec).unwrap(), vec![0.0; 5]);
        assert!(xbar.mvm(&[0.0; 5], &spec).is_err());
    }

    #[test]
    fn mvm_identity_returns_input_within_one_lsb() {
        let mut xbar = Crossbar::new(DeviceConfig::default()).unwrap();
        xbar.program(Array2::<f64>::eye(8).view()).unwrap();
        let v = [0.9, -0.4, 0.13, 0.0, -1.0, 0.5, 0.77, -0.01];
        let spec = QuantSpec::symmetric(8, 1.0).unwrap();
        let out = xbar.mvm(&v, &spec).unwrap();
        for (o, x) in out.iter().zip(v) {
            assert!((o - x).abs() <= spec.scale());
        }
    }

    #[test]
    fn conductance_spans_device_window() {
        let mut xbar = Crossbar::new(DeviceConfig::default()).unwrap();
        xbar.program(ndarray::array![[1.0, -1.0]].view()).unwrap();
        let g_hi = xbar.conductance(0, 0);
        let g_lo = xbar.conductance(0, 1);
        assert!(g_hi <= 1.0 / 50e3 + 1e-15 && g_hi > g_lo);
        assert!(g_lo >= 1.0 / 1e6 - 1e-15);
    }

    #[test]
    fn noisy_programming_is_seeded() {
        let cfg = DeviceConfig {
            programming_noise: 1.5,
            ..Default::default()
        };
        let w = random_matrix(10, 10, 9);
        let mut a = Crossbar::new(cfg).unwrap();
        let mut b = Crossbar::new(cfg).unwrap();
        a.program_noisy(w.view(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        b.program_noisy(w.view(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        let mut clean = Crossbar::new(cfg).unwrap();
        clean.program(w.view()).unwrap();
        assert_ne!(a.levels(), clean.levels());
    }

    #[test]
    fn device_config_validation_names_fields() {
        let bad = DeviceConfig {
            r_min: 2e6,
            ..Default::default()
        };
        assert!(bad.validate().unwrap_err().to_string().contains("r_min"));
        let bad = DeviceConfig {
            weight_bits: 6,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::UnsupportedBits { bits: 6, .. })));
        let bad = DeviceConfig {
            rows: 0,
            ..Default::default()
        };
        assert!(bad.validate().unwrap_err().to_string().contains("device.rows"));
    }
}
