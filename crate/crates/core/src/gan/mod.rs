//! Generator and discriminator running on crossbars, with the
//! memory-free backward flow.
//!
//! One training iteration:
//!
//! 1. `discriminator_forward(real, Real)` and stage the scores in the Diff block.
//! 2. `generator_forward(z)` then `discriminator_forward(G(z), Artificial)`.
//! 3. `DiffBlock::compute_errors` gives the seeds.
//! 4. `generator_packet` sends the generator seeds back through the
//!    discriminator (weights untouched); `discriminator_packet` wraps the
//!    discriminator seeds.
//! 5. `apply_update` for the discriminator, then for the generator.
//!
//! [`GanModel::train_step`] runs all of the above.

mod activation;
mod arch;
mod checkpoint;
mod network;

pub use activation::{sigmoid, ActivationFn, ActivationKind, DerivativeMode};
pub use arch::{ArchitecturePreset, GanArchitecture};
pub use network::{backprop_layer, LayerTrace, Network};

use ndarray::{Array2, Array3};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::crossbar::DeviceConfig;
use crate::diff::{discriminator_objective, generator_objective, DiffBlock, DiffResult, LUT_BITS};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Uniform in `[-init_scale, init_scale]`.
    Uniform,
    /// Uniform in `[-sqrt(6 / fan_in), sqrt(6 / fan_in)]`.
    HeUniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub preset: ArchitecturePreset,
    /// Learning rate.
    pub alpha: f64,
    pub batch: usize,
    pub derivative_mode: DerivativeMode,
    pub generator_output: ActivationKind,
    pub init: InitScheme,
    pub init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            preset: ArchitecturePreset::Mnist20,
            alpha: 0.05,
            batch: 64,
            derivative_mode: DerivativeMode::Indicator,
            generator_output: ActivationKind::TanhOutput,
            init: InitScheme::HeUniform,
            init_scale: 0.05,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::config("model.alpha", "must be finite and >= 0"));
        }
        if self.batch == 0 {
            return Err(Error::config("model.batch", "must be >= 1"));
        }
        if self.generator_output == ActivationKind::Relu {
            return Err(Error::config(
                "model.generator_output",
                "must be tanh_output or sigmoid_output",
            ));
        }
        if !(self.init_scale.is_finite() && self.init_scale > 0.0) {
            return Err(Error::config("model.init_scale", "must be finite and > 0"));
        }
        Ok(())
    }
}

/// Which discriminator trace a forward pass fills.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleRole {
    Real,
    Artificial,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Generator,
    Discriminator,
}

/// Errors entering a network's output layer, signs folded in so that
/// `W + alpha * dW` moves each network the right way.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientPacket {
    pub target: Target,
    pub iteration: u64,
    /// Discriminator: real samples then artificial ones, each `1x1x1`.
    /// Generator: one image-shaped tensor per sample.
    pub errors: Vec<Array3<f64>>,
}

impl GradientPacket {
    pub fn is_zero(&self) -> bool {
        self.errors.iter().all(|e| e.iter().all(|v| *v == 0.0))
    }
}

/// Per-layer kernel-matrix deltas that `apply_update` adds per unit of
/// learning rate. For the discriminator this is the gradient of its batch
/// objective; for the generator, the negated gradient of its objective.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub discriminator: Vec<Array2<f64>>,
    pub generator: Vec<Array2<f64>>,
}

/// What the model holds at a point in time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateInventory {
    pub crossbars: usize,
    pub crossbar_cells: usize,
    pub pending_traces: usize,
    pub trace_values: usize,
    /// Values outside crossbars: learning rate, batch size, iteration.
    pub scalars: Vec<(String, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub iteration: u64,
    pub objective_d: f64,
    pub objective_g: f64,
    pub mean_d_real: f64,
    pub mean_d_fake: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
struct Traces {
    real: Option<Vec<LayerTrace>>,
    artificial: Option<Vec<LayerTrace>>,
    generator: Option<Vec<LayerTrace>>,
}

impl Traces {
    fn iter(&self) -> impl Iterator<Item = &Vec<LayerTrace>> {
        [&self.real, &self.artificial, &self.generator].into_iter().flatten()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GanModel {
    architecture: GanArchitecture,
    config: ModelConfig,
    device: DeviceConfig,
    seed: u64,
    iteration: u64,
    generator: Network,
    discriminator: Network,
    traces: Traces,
    noise_rng: ChaCha8Rng,
}

/// LUT width matching a device's signal precision; `None` means exact.
pub fn lut_bits_for(device: &DeviceConfig) -> Option<u32> {
    if device.float_mode {
        return None;
    }
    LUT_BITS.iter().copied().find(|&b| b >= device.input_bits)
}

fn activations(count: usize, output: ActivationKind, mode: DerivativeMode) -> Vec<ActivationFn> {
    (0..count)
        .map(|i| {
            let kind = if i + 1 == count { output } else { ActivationKind::Relu };
            ActivationFn::new(kind, mode)
        })
        .collect()
}

fn to_feature_map(v: &[f64]) -> Array3<f64> {
    Array3::from_shape_vec((v.len(), 1, 1), v.to_vec()).expect("column vector")
}

impl GanModel {
    pub fn new(architecture: GanArchitecture, config: ModelConfig, device: DeviceConfig, seed: u64) -> Result<Self> {
        architecture.validate()?;
        config.validate()?;
        device.validate()?;
        let generator = Network::new(
            &architecture.generator,
            activations(
                architecture.generator.len(),
                config.generator_output,
                config.derivative_mode,
            ),
            device,
        )?;
        let discriminator = Network::new(
            &architecture.discriminator,
            activations(
                architecture.discriminator.len(),
                ActivationKind::SigmoidOutput,
                config.derivative_mode,
            ),
            device,
        )?;
        let mut model = GanModel {
            architecture,
            config,
            device,
            seed,
            iteration: 0,
            generator,
            discriminator,
            traces: Traces::default(),
            noise_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15),
        };
        model.initialize()?;
        Ok(model)
    }

    /// Model built from a preset layout.
    pub fn from_preset(config: ModelConfig, device: DeviceConfig, seed: u64) -> Result<Self> {
        Self::new(GanArchitecture::preset(config.preset), config, device, seed)
    }

    fn initialize(&mut self) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let cfg = self.config.clone();
        let noisy = self.device.programming_noise > 0.0;
        for net in [&mut self.generator, &mut self.discriminator] {
            for l in 0..net.layer_count() {
                let shape = *net.layers()[l].shape();
                let bound = match cfg.init {
                    InitScheme::Uniform => cfg.init_scale,
                    InitScheme::HeUniform => {
                        let fan_in = match shape.kind {
                            crate::mapper::LayerKind::Conv => shape.kernel_rows() as f64,
                            crate::mapper::LayerKind::Deconv => {
                                shape.kernel_rows() as f64 / (shape.stride * shape.stride) as f64
                            }
                        };
                        (6.0 / fan_in).sqrt()
                    }
                };
                let km = Array2::from_shape_simple_fn((shape.kernel_rows(), shape.kernel_cols()), || {
                    rng.random_range(-bound..=bound)
                });
                if noisy {
                    net.program_layer_noisy(l, &km, &mut self.noise_rng)?;
                } else {
                    net.program_layer(l, &km)?;
                }
            }
        }
        Ok(())
    }

    pub fn architecture(&self) -> &GanArchitecture {
        &self.architecture
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn device(&self) -> &DeviceConfig {
        &self.device
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn batch(&self) -> usize {
        self.config.batch
    }

    pub fn noise_dim(&self) -> usize {
        self.architecture.noise_dim
    }

    pub fn generator(&self) -> &Network {
        &self.generator
    }

    pub fn discriminator(&self) -> &Network {
        &self.discriminator
    }

    pub fn network(&self, target: Target) -> &Network {
        match target {
            Target::Generator => &self.generator,
            Target::Discriminator => &self.discriminator,
        }
    }

    pub fn network_mut(&mut self, target: Target) -> &mut Network {
        match target {
            Target::Generator => &mut self.generator,
            Target::Discriminator => &mut self.discriminator,
        }
    }

    pub fn set_alpha(&mut self, alpha: f64) -> Result<()> {
        let mut cfg = self.config.clone();
        cfg.alpha = alpha;
        cfg.validate()?;
        self.config = cfg;
        Ok(())
    }

    /// Diff block sized for this model's batch and signal precision.
    pub fn diff_block(&self) -> Result<DiffBlock> {
        DiffBlock::new(self.config.batch, lut_bits_for(&self.device))
    }

    fn check_noise(&self, z: &Array2<f64>) -> Result<()> {
        if z.ncols() != self.architecture.noise_dim || z.nrows() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "noise batch {:?}, expected (_, {})",
                z.dim(),
                self.architecture.noise_dim
            )));
        }
        Ok(())
    }

    fn check_batch(&self, n: usize) -> Result<()> {
        if n != self.config.batch {
            return Err(Error::DimensionMismatch(format!(
                "batch of {n}, model trains on {}",
                self.config.batch
            )));
        }
        Ok(())
    }

    /// `G(z)` for each row of `z`, without retaining a trace.
    pub fn generate(&self, z: &Array2<f64>) -> Result<Vec<Array3<f64>>> {
        self.check_noise(z)?;
        z.rows()
            .into_iter()
            .map(|row| self.generator.forward(&to_feature_map(&row.to_vec())))
            .collect()
    }

    /// `D(x)` for each sample, without retaining a trace.
    pub fn discriminate(&self, x: &[Array3<f64>]) -> Result<Vec<f64>> {
        x.iter()
            .map(|s| Ok(self.discriminator.forward(s)?[[0, 0, 0]]))
            .collect()
    }

    /// Generator forward pass for a full batch; keeps the trace for the
    /// generator update.
    pub fn generator_forward(&mut self, z: &Array2<f64>) -> Result<Vec<Array3<f64>>> {
        self.check_noise(z)?;
        self.check_batch(z.nrows())?;
        if self.traces.generator.is_some() {
            return Err(Error::State("generator trace of this iteration already exists".into()));
        }
        let traces: Vec<LayerTrace> = z
            .rows()
            .into_iter()
            .map(|row| self.generator.forward_traced(&to_feature_map(&row.to_vec())))
            .collect::<Result<_>>()?;
        let out = traces.iter().map(|t| t.output().clone()).collect();
        self.traces.generator = Some(traces);
        Ok(out)
    }

    /// Discriminator forward pass for a full batch; keeps the trace of the
    /// given role.
    pub fn discriminator_forward(&mut self, x: &[Array3<f64>], role: SampleRole) -> Result<Vec<f64>> {
        self.check_batch(x.len())?;
        let slot_taken = match role {
            SampleRole::Real => self.traces.real.is_some(),
            SampleRole::Artificial => self.traces.artificial.is_some(),
        };
        if slot_taken {
            return Err(Error::State(format!("{role:?} discriminator trace already exists")));
        }
        let traces: Vec<LayerTrace> = x
            .iter()
            .map(|s| self.discriminator.forward_traced(s))
            .collect::<Result<_>>()?;
        let scores = traces.iter().map(|t| t.output()[[0, 0, 0]]).collect();
        match role {
            SampleRole::Real => self.traces.real = Some(traces),
            SampleRole::Artificial => self.traces.artificial = Some(traces),
        }
        Ok(scores)
    }

    fn check_fresh(&self, diff: &DiffResult) -> Result<()> {
        if diff.iteration != self.iteration {
            return Err(Error::State(format!(
                "seeds of iteration {} offered at iteration {}",
                diff.iteration, self.iteration
            )));
        }
        self.check_batch(diff.batch())
    }

    /// Discriminator seeds as output-layer errors (ascent on its objective).
    pub fn discriminator_packet(&self, diff: &DiffResult) -> Result<GradientPacket> {
        self.check_fresh(diff)?;
        let errors = diff
            .error_d_real
            .iter()
            .chain(&diff.error_d_fake)
            .map(|&e| Array3::from_elem((1, 1, 1), e))
            .collect();
        Ok(GradientPacket {
            target: Target::Discriminator,
            iteration: self.iteration,
            errors,
        })
    }

    /// Generator seeds sent back through the discriminator's artificial
    /// trace with its current weights, negated for descent.
    pub fn generator_packet(&self, diff: &DiffResult) -> Result<GradientPacket> {
        self.check_fresh(diff)?;
        let traces = self
            .traces
            .artificial
            .as_ref()
            .ok_or_else(|| Error::State("no artificial discriminator trace to propagate through".into()))?;
        let seeds: Vec<Array3<f64>> = diff.error_g.iter().map(|&e| Array3::from_elem((1, 1, 1), -e)).collect();
        let refs: Vec<&LayerTrace> = traces.iter().collect();
        let errors = self.discriminator.propagate_errors(&seeds, &refs)?;
        Ok(GradientPacket {
            target: Target::Generator,
            iteration: self.iteration,
            errors,
        })
    }

    /// Run the backward flow of one network, consuming its traces, and
    /// reprogram its crossbars. Returns the per-layer deltas.
    pub fn apply_update(&mut self, packet: &GradientPacket, target: Target) -> Result<Vec<Array2<f64>>> {
        if packet.target != target {
            return Err(Error::State(format!(
                "{:?} packet applied to {target:?}",
                packet.target
            )));
        }
        if packet.iteration != self.iteration {
            return Err(Error::State(format!(
                "stale packet from iteration {} at iteration {}",
                packet.iteration, self.iteration
            )));
        }
        let traces: Vec<LayerTrace> = match target {
            Target::Discriminator => {
                let (Some(real), Some(fake)) = (self.traces.real.as_ref(), self.traces.artificial.as_ref()) else {
                    return Err(Error::State("discriminator traces missing".into()));
                };
                if packet.errors.len() != real.len() + fake.len() {
                    return Err(Error::DimensionMismatch("packet size does not match traces".into()));
                }
                let mut all = self.traces.real.take().expect("checked");
                all.extend(self.traces.artificial.take().expect("checked"));
                all
            }
            Target::Generator => {
                let g = self
                    .traces
                    .generator
                    .take()
                    .ok_or_else(|| Error::State("generator trace missing".into()))?;
                if packet.errors.len() != g.len() {
                    self.traces.generator = Some(g);
                    return Err(Error::DimensionMismatch("packet size does not match trace".into()));
                }
                g
            }
        };
        let refs: Vec<&LayerTrace> = traces.iter().collect();
        let alpha = if packet.is_zero() { 0.0 } else { self.config.alpha };
        let noisy = self.device.programming_noise > 0.0;
        let rng = &mut self.noise_rng;
        let net = match target {
            Target::Generator => &mut self.generator,
            Target::Discriminator => &mut self.discriminator,
        };
        let mut e = packet.errors.clone();
        let mut grads = vec![Array2::zeros((0, 0)); net.layer_count()];
        for l in (0..net.layer_count()).rev() {
            let noise: Option<&mut dyn RngCore> = if noisy { Some(&mut *rng) } else { None };
            let (e_in, g) = backprop_layer(net, l, &e, &refs, alpha, l > 0, noise)?;
            grads[l] = g;
            e = e_in;
        }
        if self.traces.iter().next().is_none() {
            self.iteration += 1;
        }
        Ok(grads)
    }

    /// One full training iteration.
    pub fn train_step(&mut self, diff: &mut DiffBlock, real: &[Array3<f64>], z: &Array2<f64>) -> Result<StepLog> {
        let it = self.iteration;
        let d_real = self.discriminator_forward(real, SampleRole::Real)?;
        diff.stage_real_scores(&d_real, it)?;
        let fake = self.generator_forward(z)?;
        let d_fake = self.discriminator_forward(&fake, SampleRole::Artificial)?;
        let seeds = diff.compute_errors(&d_fake, it)?;
        let g_packet = self.generator_packet(&seeds)?;
        let d_packet = self.discriminator_packet(&seeds)?;
        self.apply_update(&d_packet, Target::Discriminator)?;
        self.apply_update(&g_packet, Target::Generator)?;
        let log = StepLog {
            iteration: it,
            objective_d: discriminator_objective(&d_real, &d_fake),
            objective_g: generator_objective(&d_fake),
            mean_d_real: d_real.iter().sum::<f64>() / d_real.len() as f64,
            mean_d_fake: d_fake.iter().sum::<f64>() / d_fake.len() as f64,
        };
        if !(log.objective_d.is_finite() && log.objective_g.is_finite()) {
            return Err(Error::Divergence {
                iteration: it,
                detail: format!("objectives V_D = {}, V_G = {}", log.objective_d, log.objective_g),
            });
        }
        Ok(log)
    }

    /// Deltas of one iteration on `real` and `z` without changing the model.
    pub fn compute_gradients(&self, real: &[Array3<f64>], z: &Array2<f64>) -> Result<Gradients> {
        let mut probe = self.clone();
        probe.config.alpha = 0.0;
        probe.traces = Traces::default();
        let it = probe.iteration;
        let mut diff = probe.diff_block()?;
        let d_real = probe.discriminator_forward(real, SampleRole::Real)?;
        diff.stage_real_scores(&d_real, it)?;
        let fake = probe.generator_forward(z)?;
        let d_fake = probe.discriminator_forward(&fake, SampleRole::Artificial)?;
        let seeds = diff.compute_errors(&d_fake, it)?;
        let g_packet = probe.generator_packet(&seeds)?;
        let d_packet = probe.discriminator_packet(&seeds)?;
        let discriminator = probe.apply_update(&d_packet, Target::Discriminator)?;
        let generator = probe.apply_update(&g_packet, Target::Generator)?;
        Ok(Gradients {
            discriminator,
            generator,
        })
    }

    /// `(V_D, V_G)` on a batch, evaluated without traces.
    pub fn objectives(&self, real: &[Array3<f64>], z: &Array2<f64>) -> Result<(f64, f64)> {
        let d_real = self.discriminate(real)?;
        let d_fake = self.discriminate(&self.generate(z)?)?;
        Ok((discriminator_objective(&d_real, &d_fake), generator_objective(&d_fake)))
    }

    /// Penultimate discriminator activations, one row per sample.
    pub fn extract_features(&self, x: &[Array3<f64>]) -> Result<Array2<f64>> {
        if self.iteration == 0 {
            log::warn!("extracting features from an untrained discriminator");
        }
        let n = self.discriminator.layer_count();
        let width = self.architecture.feature_len();
        let mut out = Array2::zeros((x.len(), width));
        for (i, s) in x.iter().enumerate() {
            let f = if n >= 2 {
                self.discriminator.forward_until(s, n - 2)?
            } else {
                if s.dim() != self.discriminator.input_dims() {
                    return Err(Error::DimensionMismatch("feature input dims".into()));
                }
                s.clone()
            };
            out.row_mut(i).iter_mut().zip(f.iter()).for_each(|(o, v)| *o = *v);
        }
        Ok(out)
    }

    pub fn state_inventory(&self) -> StateInventory {
        let nets = [&self.generator, &self.discriminator];
        let xbars = nets
            .iter()
            .flat_map(|n| n.layers())
            .flat_map(|l| l.weights().crossbars());
        let (crossbars, crossbar_cells) =
            xbars.fold((0, 0), |(c, n), x| (c + 1, n + x.config().rows * x.config().cols));
        StateInventory {
            crossbars,
            crossbar_cells,
            pending_traces: self.traces.iter().count(),
            trace_values: self.traces.iter().flatten().map(|t| t.value_count()).sum(),
            scalars: vec![
                ("alpha".into(), self.config.alpha),
                ("batch".into(), self.config.batch as f64),
                ("iteration".into(), self.iteration as f64),
            ],
        }
    }

    /// Uniform noise in `[-1, 1]`, one row per sample.
    pub fn sample_noise<R: Rng + ?Sized>(&self, rows: usize, rng: &mut R) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, self.architecture.noise_dim), || rng.random_range(-1.0..=1.0))
    }
}
