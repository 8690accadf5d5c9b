//! The Diff block: turns discriminator scores into backprop seeds.
//!
//! Two lookup tables hold the derivatives of `ln D` and `ln(1 - D)`. Real
//! scores are looked up first and parked in a batch memory; when the
//! artificial scores arrive the adders combine both and apply the `1/m`
//! factor of the batch mean.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Table sizes the Diff block can be built with.
pub const LUT_BITS: [u32; 3] = [4, 8, 16];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LutFunction {
    /// d/dD ln D = 1/D
    LogD,
    /// d/dD ln(1 - D) = -1/(1 - D)
    LogOneMinusD,
}

impl LutFunction {
    pub fn eval(self, d: f64) -> f64 {
        match self {
            LutFunction::LogD => 1.0 / d,
            LutFunction::LogOneMinusD => -1.0 / (1.0 - d),
        }
    }
}

/// Clamp used when a table is evaluated analytically.
const EXACT_EPS: f64 = 1e-12;

/// A derivative table over `(0, 1)`, or its exact analytic counterpart
/// when built without a bit width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lut {
    pub function: LutFunction,
    pub bits: Option<u32>,
    pub entries: Vec<f64>,
}

impl Lut {
    /// `2^bits` entries; entry `k` tabulates the function at `k / 2^bits`,
    /// except entry 0 which sits at half a bin.
    pub fn new(function: LutFunction, bits: u32) -> Result<Self> {
        if !LUT_BITS.contains(&bits) {
            return Err(Error::UnsupportedBits {
                bits,
                supported: "4, 8, 16",
            });
        }
        let n = 1usize << bits;
        let nf = n as f64;
        let entries = (0..n)
            .map(|k| {
                if k == 0 {
                    return function.eval(0.5 / nf);
                }
                // written as ratios of integers so Lut1[k] == -Lut2[n - k] exactly
                match function {
                    LutFunction::LogD => nf / k as f64,
                    LutFunction::LogOneMinusD => -nf / (n - k) as f64,
                }
            })
            .collect();
        Ok(Lut {
            function,
            bits: Some(bits),
            entries,
        })
    }

    pub fn exact(function: LutFunction) -> Self {
        Lut {
            function,
            bits: None,
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Clamped domain `[lo, hi]` applied before lookup.
    pub fn domain(&self) -> (f64, f64) {
        match self.bits {
            Some(b) => {
                let step = 1.0 / (1u64 << b) as f64;
                (step, 1.0 - step)
            }
            None => (EXACT_EPS, 1.0 - EXACT_EPS),
        }
    }

    /// Table index for score `d`; `None` for an exact table.
    pub fn address(&self, d: f64) -> Option<usize> {
        let (lo, hi) = self.domain();
        let d = d.clamp(lo, hi);
        self.bits.map(|_| (d * self.entries.len() as f64).round() as usize)
    }

    pub fn lookup(&self, d: f64) -> f64 {
        match self.address(d) {
            Some(k) => self.entries[k],
            None => {
                let (lo, hi) = self.domain();
                self.function.eval(d.clamp(lo, hi))
            }
        }
    }
}

/// The two tables of the Diff block. `None` builds exact tables.
pub fn build_luts(input_bits: Option<u32>) -> Result<(Lut, Lut)> {
    match input_bits {
        Some(b) => Ok((Lut::new(LutFunction::LogD, b)?, Lut::new(LutFunction::LogOneMinusD, b)?)),
        None => Ok((Lut::exact(LutFunction::LogD), Lut::exact(LutFunction::LogOneMinusD))),
    }
}

/// `m` slots holding LUT1 lookups of the real scores of one iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchMemory {
    capacity: usize,
    slots: Vec<f64>,
    tag: Option<u64>,
}

impl BatchMemory {
    pub fn new(capacity: usize) -> Self {
        BatchMemory {
            capacity,
            slots: Vec::with_capacity(capacity),
            tag: None,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn slots(&self) -> &[f64] {
        &self.slots
    }

    /// Iteration the stored values belong to, if any.
    pub fn tag(&self) -> Option<u64> {
        self.tag
    }

    pub fn is_empty(&self) -> bool {
        self.tag.is_none()
    }

    fn write(&mut self, values: Vec<f64>, iteration: u64) -> Result<()> {
        if let Some(t) = self.tag {
            return Err(Error::State(format!(
                "batch memory already holds scores of iteration {t}"
            )));
        }
        if values.len() != self.capacity {
            return Err(Error::DimensionMismatch(format!(
                "{} scores for a batch memory of {}",
                values.len(),
                self.capacity
            )));
        }
        self.slots = values;
        self.tag = Some(iteration);
        Ok(())
    }

    fn take(&mut self, iteration: u64) -> Result<Vec<f64>> {
        match self.tag {
            None => Err(Error::State("batch memory has not been staged".into())),
            Some(t) if t != iteration => Err(Error::State(format!(
                "batch memory holds iteration {t}, requested {iteration}"
            ))),
            Some(_) => {
                self.tag = None;
                Ok(std::mem::take(&mut self.slots))
            }
        }
    }
}

/// Backprop seeds: derivatives of the batch objectives with respect to
/// each score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffResult {
    pub iteration: u64,
    /// d V_D / d D(x_i)
    pub error_d_real: Vec<f64>,
    /// d V_D / d D(G(z_i))
    pub error_d_fake: Vec<f64>,
    /// d V_G / d D(G(z_i))
    pub error_g: Vec<f64>,
}

impl DiffResult {
    pub fn batch(&self) -> usize {
        self.error_g.len()
    }

    /// Per-sample `(real, artificial)` seed pairs for the discriminator.
    pub fn error_d_pairs(&self) -> Vec<(f64, f64)> {
        self.error_d_real
            .iter()
            .copied()
            .zip(self.error_d_fake.iter().copied())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiffBlock {
    lut1: Lut,
    lut2: Lut,
    memory: BatchMemory,
}

impl DiffBlock {
    pub fn new(batch: usize, input_bits: Option<u32>) -> Result<Self> {
        if batch == 0 {
            return Err(Error::config("batch", "must be >= 1"));
        }
        let (lut1, lut2) = build_luts(input_bits)?;
        Ok(DiffBlock {
            lut1,
            lut2,
            memory: BatchMemory::new(batch),
        })
    }

    pub fn batch(&self) -> usize {
        self.memory.capacity()
    }

    pub fn luts(&self) -> (&Lut, &Lut) {
        (&self.lut1, &self.lut2)
    }

    pub fn memory(&self) -> &BatchMemory {
        &self.memory
    }

    /// Look up `d_x` in LUT1 and park the results.
    pub fn stage_real_scores(&mut self, d_x: &[f64], iteration: u64) -> Result<()> {
        crate::crossbar::check_finite(d_x.iter())?;
        let values = d_x.iter().map(|&d| self.lut1.lookup(d)).collect();
        self.memory.write(values, iteration)
    }

    /// Combine parked real lookups with LUT2 lookups of `d_gz`, scaling
    /// by `1/m`. Empties the memory.
    pub fn compute_errors(&mut self, d_gz: &[f64], iteration: u64) -> Result<DiffResult> {
        if d_gz.len() != self.batch() {
            return Err(Error::DimensionMismatch(format!(
                "{} artificial scores for batch {}",
                d_gz.len(),
                self.batch()
            )));
        }
        crate::crossbar::check_finite(d_gz.iter())?;
        let real = self.memory.take(iteration)?;
        let inv_m = 1.0 / self.batch() as f64;
        let fake: Vec<f64> = d_gz.iter().map(|&d| self.lut2.lookup(d) * inv_m).collect();
        Ok(DiffResult {
            iteration,
            error_d_real: real.iter().map(|v| v * inv_m).collect(),
            error_d_fake: fake.clone(),
            error_g: fake,
        })
    }
}

fn safe_ln(x: f64) -> f64 {
    x.max(EXACT_EPS).ln()
}

/// `(1/m) sum ln D(x_i) + ln(1 - D(G(z_i)))`. Log arguments are floored at
/// the exact tables' clamp, so a saturated score reads about -27.6
/// instead of -inf.
pub fn discriminator_objective(d_x: &[f64], d_gz: &[f64]) -> f64 {
    let m = d_x.len() as f64;
    d_x.iter()
        .zip(d_gz)
        .map(|(a, b)| safe_ln(*a) + safe_ln(1.0 - b))
        .sum::<f64>()
        / m
}

/// `(1/m) sum ln(1 - D(G(z_i)))`, floored like [`discriminator_objective`].
pub fn generator_objective(d_gz: &[f64]) -> f64 {
    let m = d_gz.len() as f64;
    d_gz.iter().map(|b| safe_ln(1.0 - b)).sum::<f64>() / m
}
