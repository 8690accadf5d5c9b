use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapper::{LayerKind, LayerShape};

/// Named network layouts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchitecturePreset {
    /// 1x20x20 images, five layers per net.
    Mnist20,
    /// 1x28x28 images, five layers per net.
    Mnist28,
    /// 3x32x32 images, five layers per net.
    Cifar32,
    /// Two layers per net on 1x5x5 images, for gradient checks.
    Toy,
    /// 3x64x64 images, five layers per net. Used for cost workloads.
    Dcgan64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanArchitecture {
    pub noise_dim: usize,
    /// (channels, height, width)
    pub image: (usize, usize, usize),
    pub generator: Vec<LayerShape>,
    pub discriminator: Vec<LayerShape>,
}

fn chain(first_input: (usize, usize), layers: &[(LayerKind, usize, usize, usize, usize, usize)]) -> Vec<LayerShape> {
    let mut input = first_input;
    layers
        .iter()
        .map(|&(kind, i, o, k, s, p)| {
            let shape = match kind {
                LayerKind::Conv => LayerShape::conv(i, o, k, s, p, input),
                LayerKind::Deconv => LayerShape::deconv(i, o, k, s, p, input),
            };
            input = shape.output_dims();
            shape
        })
        .collect()
}

impl GanArchitecture {
    pub fn preset(preset: ArchitecturePreset) -> Self {
        use LayerKind::{Conv as C, Deconv as D};
        match preset {
            ArchitecturePreset::Mnist20 => GanArchitecture {
                noise_dim: 16,
                image: (1, 20, 20),
                generator: chain(
                    (1, 1),
                    &[
                        (D, 16, 32, 3, 1, 0),
                        (D, 32, 16, 3, 2, 1),
                        (D, 16, 8, 4, 2, 1),
                        (D, 8, 8, 3, 1, 1),
                        (D, 8, 1, 4, 2, 1),
                    ],
                ),
                discriminator: chain(
                    (20, 20),
                    &[
                        (C, 1, 8, 4, 2, 1),
                        (C, 8, 16, 4, 2, 1),
                        (C, 16, 32, 3, 2, 1),
                        (C, 32, 32, 3, 1, 1),
                        (C, 32, 1, 3, 1, 0),
                    ],
                ),
            },
            ArchitecturePreset::Mnist28 => GanArchitecture {
                noise_dim: 16,
                image: (1, 28, 28),
                generator: chain(
                    (1, 1),
                    &[
                        (D, 16, 32, 4, 1, 0),
                        (D, 32, 16, 3, 2, 1),
                        (D, 16, 8, 4, 2, 1),
                        (D, 8, 8, 3, 1, 1),
                        (D, 8, 1, 4, 2, 1),
                    ],
                ),
                discriminator: chain(
                    (28, 28),
                    &[
                        (C, 1, 8, 4, 2, 1),
                        (C, 8, 16, 4, 2, 1),
                        (C, 16, 32, 3, 2, 1),
                        (C, 32, 32, 3, 1, 1),
                        (C, 32, 1, 4, 1, 0),
                    ],
                ),
            },
            ArchitecturePreset::Cifar32 => GanArchitecture {
                noise_dim: 16,
                image: (3, 32, 32),
                generator: chain(
                    (1, 1),
                    &[
                        (D, 16, 32, 4, 1, 0),
                        (D, 32, 16, 4, 2, 1),
                        (D, 16, 8, 4, 2, 1),
                        (D, 8, 8, 3, 1, 1),
                        (D, 8, 3, 4, 2, 1),
                    ],
                ),
                discriminator: chain(
                    (32, 32),
                    &[
                        (C, 3, 8, 4, 2, 1),
                        (C, 8, 16, 4, 2, 1),
                        (C, 16, 32, 4, 2, 1),
                        (C, 32, 32, 3, 1, 1),
                        (C, 32, 1, 4, 1, 0),
                    ],
                ),
            },
            ArchitecturePreset::Toy => GanArchitecture {
                noise_dim: 4,
                image: (1, 5, 5),
                generator: chain((1, 1), &[(D, 4, 3, 3, 1, 0), (D, 3, 1, 3, 2, 1)]),
                discriminator: chain((5, 5), &[(C, 1, 4, 3, 2, 1), (C, 4, 1, 3, 1, 0)]),
            },
            ArchitecturePreset::Dcgan64 => GanArchitecture {
                noise_dim: 100,
                image: (3, 64, 64),
                generator: chain(
                    (1, 1),
                    &[
                        (D, 100, 512, 4, 1, 0),
                        (D, 512, 256, 4, 2, 1),
                        (D, 256, 128, 4, 2, 1),
                        (D, 128, 64, 4, 2, 1),
                        (D, 64, 3, 4, 2, 1),
                    ],
                ),
                discriminator: chain(
                    (64, 64),
                    &[
                        (C, 3, 64, 4, 2, 1),
                        (C, 64, 128, 4, 2, 1),
                        (C, 128, 256, 4, 2, 1),
                        (C, 256, 512, 4, 2, 1),
                        (C, 512, 1, 4, 1, 0),
                    ],
                ),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.noise_dim == 0 {
            return Err(Error::config("model.noise_dim", "must be >= 1"));
        }
        if self.generator.is_empty() || self.discriminator.is_empty() {
            return Err(Error::config("model.layers", "both networks need at least one layer"));
        }
        let check_chain = |name: &str,
                           layers: &[LayerShape],
                           input: (usize, usize, usize),
                           output: (usize, usize, usize)|
         -> Result<()> {
            let mut cur = input;
            for (i, l) in layers.iter().enumerate() {
                l.validate()?;
                if (l.in_channels, l.input.0, l.input.1) != cur {
                    return Err(Error::DimensionMismatch(format!(
                        "{name} layer {i} expects {:?}, previous layer gives {cur:?}",
                        (l.in_channels, l.input.0, l.input.1)
                    )));
                }
                let (h, w) = l.output_dims();
                cur = (l.out_channels, h, w);
            }
            if cur != output {
                return Err(Error::DimensionMismatch(format!(
                    "{name} produces {cur:?}, expected {output:?}"
                )));
            }
            Ok(())
        };
        check_chain("generator", &self.generator, (self.noise_dim, 1, 1), self.image)?;
        check_chain("discriminator", &self.discriminator, self.image, (1, 1, 1))?;
        if self.generator.iter().any(|l| l.kind != LayerKind::Deconv) {
            return Err(Error::config(
                "model.generator",
                "generator layers must be deconvolutions",
            ));
        }
        if self.discriminator.iter().any(|l| l.kind != LayerKind::Conv) {
            return Err(Error::config(
                "model.discriminator",
                "discriminator layers must be convolutions",
            ));
        }
        Ok(())
    }

    /// Length of the flattened penultimate discriminator activation.
    pub fn feature_len(&self) -> usize {
        match self.discriminator.len() {
            1 => self.image.0 * self.image.1 * self.image.2,
            n => self.discriminator[n - 2].output_len(),
        }
    }
}
