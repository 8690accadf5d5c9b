//! Experiment configuration, read from TOML.
//!
//! Relative dataset paths are resolved against the directory of the
//! config file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::cost::{CostParams, Workload};
use crate::crossbar::DeviceConfig;
use crate::error::{Error, Result};
use crate::gan::{GanArchitecture, ModelConfig};
use crate::pipeline::PipelineMode;
use crate::probe::ProbeConfig;

/// Bit widths accepted for fixed-point runs.
pub const SUPPORTED_BITS: [u32; 4] = [4, 8, 16, 32];
pub const MAX_PARALLELISM: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Precision {
    Float,
    Fixed(u32),
}

impl Precision {
    pub fn validate(&self) -> Result<()> {
        match self {
            Precision::Fixed(b) if !SUPPORTED_BITS.contains(b) => Err(Error::UnsupportedBits {
                bits: *b,
                supported: "4, 8, 16, 32 or float",
            }),
            _ => Ok(()),
        }
    }

    pub fn device(&self, base: &DeviceSettings) -> DeviceConfig {
        let mut d = match self {
            Precision::Float => DeviceConfig::float(),
            Precision::Fixed(b) => DeviceConfig::fixed(*b),
        };
        d.rows = base.rows;
        d.cols = base.cols;
        d.r_min = base.r_min;
        d.r_max = base.r_max;
        d.programming_noise = base.programming_noise;
        d
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Precision::Float => f.write_str("float"),
            Precision::Fixed(b) => write!(f, "{b}"),
        }
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("float") {
            return Ok(Precision::Float);
        }
        let bits: u32 = s
            .parse()
            .map_err(|_| Error::config("bits", format!("expected a bit width or \"float\", got {s:?}")))?;
        let p = Precision::Fixed(bits);
        p.validate()?;
        Ok(p)
    }
}

impl Serialize for Precision {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Precision::Float => s.serialize_str("float"),
            Precision::Fixed(b) => s.serialize_u32(*b),
        }
    }
}

impl<'de> Deserialize<'de> for Precision {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Bits(u32),
            Name(String),
        }
        match Repr::deserialize(d)? {
            Repr::Bits(b) => Ok(Precision::Fixed(b)),
            Repr::Name(n) if n.eq_ignore_ascii_case("float") => Ok(Precision::Float),
            Repr::Name(n) => n.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Mnist,
    Cifar10,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: DatasetKind,
    /// MNIST image file.
    pub images: Option<PathBuf>,
    /// MNIST label file.
    pub labels: Option<PathBuf>,
    /// CIFAR-10 binary batch files.
    pub batches: Vec<PathBuf>,
    /// Center-crop size (height, width).
    pub image_size: (usize, usize),
    pub train_size: usize,
    /// Test samples after the training split; all remaining when absent.
    pub test_size: Option<usize>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            name: DatasetKind::Mnist,
            images: Some("data/mnist/mnist10k-images-idx3-ubyte.gz".into()),
            labels: Some("data/mnist/mnist10k-labels-idx1-ubyte.gz".into()),
            batches: Vec::new(),
            image_size: (20, 20),
            train_size: 6000,
            test_size: None,
        }
    }
}

/// Crossbar geometry and device parameters shared by all precisions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceSettings {
    pub rows: usize,
    pub cols: usize,
    pub r_min: f64,
    pub r_max: f64,
    pub programming_noise: f64,
}

impl Default for DeviceSettings {
    fn default() -> Self {
        let d = DeviceConfig::default();
        DeviceSettings {
            rows: d.rows,
            cols: d.cols,
            r_min: d.r_min,
            r_max: d.r_max,
            programming_noise: d.programming_noise,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Training iterations per run.
    pub iterations: usize,
    /// Precision of single training runs.
    pub precision: Precision,
    pub sweep_bits: Vec<Precision>,
    pub parallelism: usize,
    pub sweep_parallelism: Vec<usize>,
    pub pipeline_mode: PipelineMode,
    /// Iterations simulated by the pipeline scheduler.
    pub pipeline_iterations: usize,
    pub out: PathBuf,
    pub dataset: DatasetConfig,
    pub device: DeviceSettings,
    pub model: ModelConfig,
    pub probe: ProbeConfig,
    pub cost: CostParams,
    pub workloads: Vec<Workload>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            iterations: 200,
            precision: Precision::Fixed(8),
            sweep_bits: vec![
                Precision::Float,
                Precision::Fixed(16),
                Precision::Fixed(8),
                Precision::Fixed(4),
            ],
            parallelism: 32,
            sweep_parallelism: vec![1, 2, 4, 8, 16, 32, 64],
            pipeline_mode: PipelineMode::CrossParallel,
            pipeline_iterations: 10,
            out: "results".into(),
            dataset: DatasetConfig::default(),
            device: DeviceSettings::default(),
            model: ModelConfig::default(),
            probe: ProbeConfig::default(),
            cost: CostParams::default(),
            workloads: vec![Workload::imagenet(), Workload::lsun()],
            base_dir: PathBuf::from("."),
        }
    }
}

fn check_parallelism(field: &str, s: usize) -> Result<()> {
    if !(1..=MAX_PARALLELISM).contains(&s) {
        return Err(Error::config(
            field,
            format!("must be in 1..={MAX_PARALLELISM}, got {s}"),
        ));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.base_dir = base_dir.into();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
        let base = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Self::from_toml_str(
            &text,
            if base.as_os_str().is_empty() {
                PathBuf::from(".")
            } else {
                base
            },
        )
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Path relative to the config file, or unchanged when absolute.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn device_config(&self, precision: Precision) -> DeviceConfig {
        precision.device(&self.device)
    }

    pub fn validate(&self) -> Result<()> {
        self.precision
            .validate()
            .map_err(|e| Error::config("precision", e.to_string()))?;
        if self.sweep_bits.is_empty() {
            return Err(Error::config("sweep_bits", "must list at least one precision"));
        }
        for p in &self.sweep_bits {
            p.validate().map_err(|e| Error::config("sweep_bits", e.to_string()))?;
        }
        check_parallelism("parallelism", self.parallelism)?;
        if self.sweep_parallelism.is_empty() {
            return Err(Error::config("sweep_parallelism", "must list at least one value"));
        }
        for &s in &self.sweep_parallelism {
            check_parallelism("sweep_parallelism", s)?;
        }
        if self.pipeline_iterations == 0 {
            return Err(Error::config("pipeline_iterations", "must be >= 1"));
        }
        if self.out.as_os_str().is_empty() {
            return Err(Error::config("out", "must not be empty"));
        }
        self.validate_dataset_fields()?;
        for p in std::iter::once(&self.precision).chain(&self.sweep_bits) {
            self.device_config(*p).validate()?;
        }
        self.model.validate()?;
        self.probe.validate()?;
        self.cost.validate()?;
        if self.workloads.is_empty() {
            return Err(Error::config("workloads", "must list at least one workload"));
        }
        for (i, w) in self.workloads.iter().enumerate() {
            w.validate()?;
            if self.workloads[..i].iter().any(|o| o.name == w.name) {
                return Err(Error::config(
                    "workloads",
                    format!("duplicate workload name {:?}", w.name),
                ));
            }
        }
        Ok(())
    }

    fn validate_dataset_fields(&self) -> Result<()> {
        let d = &self.dataset;
        if d.image_size.0 == 0 || d.image_size.1 == 0 {
            return Err(Error::config("dataset.image_size", "dimensions must be >= 1"));
        }
        if d.train_size == 0 {
            return Err(Error::config("dataset.train_size", "must be >= 1"));
        }
        if d.test_size == Some(0) {
            return Err(Error::config("dataset.test_size", "must be >= 1"));
        }
        if self.model.batch > d.train_size {
            return Err(Error::config("model.batch", "must not exceed dataset.train_size"));
        }
        match d.name {
            DatasetKind::Mnist => {
                if d.images.is_none() {
                    return Err(Error::config("dataset.images", "required for mnist"));
                }
                if d.labels.is_none() {
                    return Err(Error::config("dataset.labels", "required for mnist"));
                }
            }
            DatasetKind::Cifar10 => {
                if d.batches.is_empty() {
                    return Err(Error::config("dataset.batches", "required for cifar10"));
                }
            }
        }
        let channels = match d.name {
            DatasetKind::Mnist => 1,
            DatasetKind::Cifar10 => 3,
        };
        let arch = GanArchitecture::preset(self.model.preset);
        if arch.image != (channels, d.image_size.0, d.image_size.1) {
            return Err(Error::config(
                "dataset.image_size",
                format!(
                    "{}x{}x{} images do not fit model.preset {:?}, which expects {:?}",
                    channels, d.image_size.0, d.image_size.1, self.model.preset, arch.image
                ),
            ));
        }
        Ok(())
    }

    /// Checks that every referenced dataset file exists.
    pub fn validate_dataset_files(&self) -> Result<()> {
        let d = &self.dataset;
        let mut files: Vec<(&str, &PathBuf)> = Vec::new();
        if d.name == DatasetKind::Mnist {
            files.extend(d.images.iter().map(|p| ("dataset.images", p)));
            files.extend(d.labels.iter().map(|p| ("dataset.labels", p)));
        } else {
            files.extend(d.batches.iter().map(|p| ("dataset.batches", p)));
        }
        for (field, p) in files {
            let full = self.resolve(p);
            if !full.is_file() {
                return Err(Error::config(field, format!("file not found: {}", full.display())));
            }
        }
        Ok(())
    }

    pub fn workload(&self, name: &str) -> Result<&Workload> {
        self.workloads
            .iter()
            .find(|w| w.name == name)
            .ok_or_else(|| Error::config("workloads", format!("no workload named {name:?}")))
    }
}
