//! Model checkpoints.
//!
//! Layout (little endian):
//!
//! ```text
//! b"MGCK" | u32 version | u32 header length | JSON header | tile payloads
//! ```
//!
//! The header records the architecture, model and device configs, seed,
//! iteration and, per crossbar, its active region and quantizer. Payloads
//! follow in header order: `rows * cols` u32 conductance codes per coded
//! crossbar, or `rows * cols` f64 weights per analog one.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{activations, GanArchitecture, GanModel, ModelConfig, Network, Traces};
use crate::crossbar::{Crossbar, DeviceConfig, QuantSpec};
use crate::error::{Error, Result};
use crate::mapper::{LayerShape, MappedLayer, MappedMatrix};

const MAGIC: &[u8; 4] = b"MGCK";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TileHeader {
    network: String,
    layer: usize,
    tile: usize,
    used: (usize, usize),
    spec: Option<QuantSpec>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    architecture: GanArchitecture,
    config: ModelConfig,
    device: DeviceConfig,
    seed: u64,
    iteration: u64,
    tiles: Vec<TileHeader>,
}

fn bad(reason: impl Into<String>) -> Error {
    Error::State(format!("checkpoint: {}", reason.into()))
}

impl GanModel {
    /// Serialize crossbar contents and configuration. Fails while traces
    /// of an unfinished iteration are held.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.traces.iter().next().is_some() {
            return Err(Error::State("cannot checkpoint in the middle of an iteration".into()));
        }
        let mut tiles = Vec::new();
        let mut payload = Vec::new();
        for (name, net) in [("generator", &self.generator), ("discriminator", &self.discriminator)] {
            for (li, layer) in net.layers().iter().enumerate() {
                for (ti, x) in layer.weights().crossbars().iter().enumerate() {
                    let spec = x.quant_spec();
                    match x.levels() {
                        Some(levels) => levels.iter().for_each(|l| payload.extend_from_slice(&l.to_le_bytes())),
                        None => x
                            .raw_weights()
                            .iter()
                            .for_each(|w| payload.extend_from_slice(&w.to_le_bytes())),
                    }
                    tiles.push(TileHeader {
                        network: name.into(),
                        layer: li,
                        tile: ti,
                        used: x.active_dims(),
                        spec,
                    });
                }
            }
        }
        let header = serde_json::to_vec(&Header {
            architecture: self.architecture.clone(),
            config: self.config.clone(),
            device: self.device,
            seed: self.seed,
            iteration: self.iteration,
            tiles,
        })?;
        let mut out = Vec::with_capacity(12 + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(bad("missing MGCK magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let header_end = 12usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[12..header_end])?;
        header.architecture.validate()?;
        header.config.validate()?;
        header.device.validate()?;
        let dev = header.device;
        let cells = dev.rows * dev.cols;
        let mut cursor = header_end;
        let mut take = |n: usize| -> Result<&[u8]> {
            let end = cursor
                .checked_add(n)
                .filter(|&e| e <= bytes.len())
                .ok_or_else(|| bad("truncated payload"))?;
            let s = &bytes[cursor..end];
            cursor = end;
            Ok(s)
        };
        let mut tiles = header.tiles.iter();
        let mut build = |name: &str, shapes: &[LayerShape]| -> Result<Vec<MappedLayer>> {
            let mut layers = Vec::with_capacity(shapes.len());
            for (li, shape) in shapes.iter().enumerate() {
                let plan = crate::mapper::plan_mapping(shape, &dev);
                let mut xbars = Vec::with_capacity(plan.crossbar_count());
                for ti in 0..plan.crossbar_count() {
                    let th = tiles.next().ok_or_else(|| bad("too few tiles"))?;
                    if th.network != name || th.layer != li || th.tile != ti {
                        return Err(bad(format!("unexpected tile {}/{}/{}", th.network, th.layer, th.tile)));
                    }
                    let x = match (dev.float_mode, th.spec) {
                        (false, Some(spec)) => {
                            let levels = take(cells * 4)?
                                .chunks_exact(4)
                                .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
                                .collect();
                            Crossbar::from_levels(dev, levels, spec, th.used)?
                        }
                        (true, None) => {
                            let w = take(cells * 8)?
                                .chunks_exact(8)
                                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                                .collect();
                            Crossbar::from_analog(dev, w, th.used)?
                        }
                        _ => return Err(bad("tile quantizer does not match device mode")),
                    };
                    xbars.push(x);
                }
                let m = MappedMatrix::from_tiles(dev, shape.kernel_rows(), shape.kernel_cols(), xbars)?;
                layers.push(MappedLayer::from_weights(*shape, m)?);
            }
            Ok(layers)
        };
        let arch = &header.architecture;
        let g_layers = build("generator", &arch.generator)?;
        let d_layers = build("discriminator", &arch.discriminator)?;
        if tiles.next().is_some() {
            return Err(bad("extra tiles"));
        }
        if cursor != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        let cfg = &header.config;
        Ok(GanModel {
            generator: Network::from_layers(
                g_layers,
                activations(arch.generator.len(), cfg.generator_output, cfg.derivative_mode),
            ),
            discriminator: Network::from_layers(
                d_layers,
                activations(
                    arch.discriminator.len(),
                    super::ActivationKind::SigmoidOutput,
                    cfg.derivative_mode,
                ),
            ),
            noise_rng: ChaCha8Rng::seed_from_u64(header.seed ^ 0x9e37_79b9_7f4a_7c15 ^ header.iteration),
            architecture: header.architecture,
            config: header.config,
            device: header.device,
            seed: header.seed,
            iteration: header.iteration,
            traces: Traces::default(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}
