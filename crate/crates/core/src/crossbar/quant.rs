//! Uniform fixed-point quantization shared by weights and signals.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Range of bit widths the quantizer accepts.
pub const QUANT_BITS: std::ops::RangeInclusive<u32> = 2..=32;

/// A fixed-point format: bit width plus clipping range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantSpec {
    pub bits: u32,
    pub min_val: f64,
    pub max_val: f64,
    pub symmetric: bool,
}

impl QuantSpec {
    /// Symmetric signed format covering `[-max_abs, max_abs]`.
    ///
    /// A zero (or non-finite) `max_abs` falls back to the unit range so the
    /// scale stays strictly positive.
    pub fn symmetric(bits: u32, max_abs: f64) -> Result<Self> {
        let max_abs = if max_abs.is_finite() && max_abs > 0.0 {
            max_abs
        } else {
            1.0
        };
        let spec = QuantSpec {
            bits,
            min_val: -max_abs,
            max_val: max_abs,
            symmetric: true,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Symmetric format sized to the largest magnitude in `values`.
    pub fn fit_symmetric<'a>(bits: u32, values: impl IntoIterator<Item = &'a f64>) -> Result<Self> {
        let max_abs = values.into_iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Self::symmetric(bits, max_abs)
    }

    pub fn validate(&self) -> Result<()> {
        if !QUANT_BITS.contains(&self.bits) {
            return Err(Error::UnsupportedBits {
                bits: self.bits,
                supported: "2..=32",
            });
        }
        if !(self.min_val.is_finite() && self.max_val.is_finite()) || self.min_val >= self.max_val {
            return Err(Error::config(
                "quant.range",
                format!("need finite min < max, got [{}, {}]", self.min_val, self.max_val),
            ));
        }
        if self.symmetric && self.min_val != -self.max_val {
            return Err(Error::config(
                "quant.symmetric",
                format!(
                    "symmetric range must satisfy min == -max, got [{}, {}]",
                    self.min_val, self.max_val
                ),
            ));
        }
        Ok(())
    }

    /// Largest code magnitude (symmetric) or largest code (asymmetric).
    pub fn max_code(&self) -> i64 {
        if self.symmetric {
            (1i64 << (self.bits - 1)) - 1
        } else {
            (1i64 << self.bits) - 1
        }
    }

    pub fn min_code(&self) -> i64 {
        if self.symmetric {
            -self.max_code()
        } else {
            0
        }
    }

    /// Real value of one least-significant bit.
    pub fn scale(&self) -> f64 {
        if self.symmetric {
            self.max_val / self.max_code() as f64
        } else {
            (self.max_val - self.min_val) / self.max_code() as f64
        }
    }

    /// Code that dequantizes to (the value closest to) zero.
    pub fn zero_code(&self) -> i64 {
        if self.symmetric {
            0
        } else {
            self.quantize_value(0.0)
        }
    }

    /// Clip, then round to nearest with ties away from zero.
    pub fn quantize_value(&self, x: f64) -> i64 {
        let clipped = x.clamp(self.min_val, self.max_val);
        let raw = if self.symmetric {
            clipped / self.scale()
        } else {
            (clipped - self.min_val) / self.scale()
        };
        // f64::round rounds half away from zero.
        (raw.round() as i64).clamp(self.min_code(), self.max_code())
    }

    pub fn dequantize_value(&self, code: i64) -> f64 {
        if self.symmetric {
            code as f64 * self.scale()
        } else {
            self.min_val + code as f64 * self.scale()
        }
    }

    /// Quantize then dequantize.
    pub fn round_trip(&self, x: f64) -> f64 {
        self.dequantize_value(self.quantize_value(x))
    }

    /// In-place quantize/dequantize of a signal buffer.
    pub fn round_trip_slice(&self, values: &mut [f64]) {
        for v in values {
            *v = self.round_trip(*v);
        }
    }
}

/// Integer code grid produced by [`quantize`].
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedMatrix {
    pub codes: Array2<i64>,
    pub spec: QuantSpec,
}

impl QuantizedMatrix {
    pub fn scale(&self) -> f64 {
        self.spec.scale()
    }

    pub fn zero_code(&self) -> i64 {
        self.spec.zero_code()
    }

    pub fn dequantize(&self) -> Array2<f64> {
        self.codes.mapv(|c| self.spec.dequantize_value(c))
    }
}

/// Quantize a real matrix element-wise under `spec`.
pub fn quantize(matrix: ArrayView2<'_, f64>, spec: &QuantSpec) -> Result<QuantizedMatrix> {
    spec.validate()?;
    check_finite(matrix.iter())?;
    Ok(QuantizedMatrix {
        codes: matrix.mapv(|x| spec.quantize_value(x)),
        spec: *spec,
    })
}

pub fn dequantize(q: &QuantizedMatrix) -> Array2<f64> {
    q.dequantize()
}

pub(crate) fn check_finite<'a>(values: impl IntoIterator<Item = &'a f64>) -> Result<()> {
    match values.into_iter().enumerate().find(|(_, v)| !v.is_finite()) {
        Some((index, &value)) => Err(Error::NonFinite { index, value }),
        None => Ok(()),
    }
}
