use ndarray::{Array2, Array3, Zip};
use rand::{Rng, RngCore};

use super::activation::ActivationFn;
use crate::crossbar::DeviceConfig;
use crate::error::{Error, Result};
use crate::mapper::{LayerShape, MappedLayer};

/// Signals of one sample through one network. `outputs[0]` is the network
/// input and `outputs[l + 1]` the activation of layer `l`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerTrace {
    pub outputs: Vec<Array3<f64>>,
    pub pre_activations: Vec<Array3<f64>>,
}

impl LayerTrace {
    pub fn layer_count(&self) -> usize {
        self.pre_activations.len()
    }

    pub fn output(&self) -> &Array3<f64> {
        self.outputs.last().expect("trace holds the network input")
    }

    pub fn value_count(&self) -> usize {
        self.outputs.iter().chain(&self.pre_activations).map(|a| a.len()).sum()
    }
}

/// A stack of crossbar-mapped layers with their activations.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    layers: Vec<MappedLayer>,
    activations: Vec<ActivationFn>,
}

impl Network {
    pub fn new(shapes: &[LayerShape], activations: Vec<ActivationFn>, config: DeviceConfig) -> Result<Self> {
        if shapes.len() != activations.len() {
            return Err(Error::DimensionMismatch("one activation per layer".into()));
        }
        let layers = shapes
            .iter()
            .map(|s| MappedLayer::new(*s, config))
            .collect::<Result<_>>()?;
        Ok(Network { layers, activations })
    }

    pub(crate) fn from_layers(layers: Vec<MappedLayer>, activations: Vec<ActivationFn>) -> Self {
        Network { layers, activations }
    }

    pub fn layers(&self) -> &[MappedLayer] {
        &self.layers
    }

    pub fn activations(&self) -> &[ActivationFn] {
        &self.activations
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dims(&self) -> (usize, usize, usize) {
        let s = self.layers[0].shape();
        (s.in_channels, s.input.0, s.input.1)
    }

    pub fn output_dims(&self) -> (usize, usize, usize) {
        let s = self.layers[self.layers.len() - 1].shape();
        let (h, w) = s.output_dims();
        (s.out_channels, h, w)
    }

    pub fn crossbar_count(&self) -> usize {
        self.layers.iter().map(|l| l.crossbar_count()).sum()
    }

    pub fn kernel_matrices(&self) -> Vec<Array2<f64>> {
        self.layers.iter().map(|l| l.kernel_matrix()).collect()
    }

    pub fn program_layer(&mut self, index: usize, kernel_matrix: &Array2<f64>) -> Result<()> {
        self.layer_mut(index)?.program(kernel_matrix.view())
    }

    pub fn program_layer_noisy<R: Rng + ?Sized>(
        &mut self,
        index: usize,
        kernel_matrix: &Array2<f64>,
        rng: &mut R,
    ) -> Result<()> {
        self.layer_mut(index)?.program_noisy(kernel_matrix.view(), rng)
    }

    pub(crate) fn layer_mut(&mut self, index: usize) -> Result<&mut MappedLayer> {
        let n = self.layers.len();
        self.layers
            .get_mut(index)
            .ok_or_else(|| Error::DimensionMismatch(format!("layer {index} of {n}")))
    }

    fn check_input(&self, x: &Array3<f64>) -> Result<()> {
        if x.dim() != self.input_dims() {
            return Err(Error::DimensionMismatch(format!(
                "network input {:?}, expected {:?}",
                x.dim(),
                self.input_dims()
            )));
        }
        Ok(())
    }

    fn layer_forward(&self, l: usize, x: &Array3<f64>) -> Result<(Array3<f64>, Array3<f64>)> {
        let pre = self.layers[l].forward(x)?;
        let act = self.activations[l];
        let out = pre.mapv(|v| act.apply(v));
        if let Some((i, v)) = out.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index: i, value: *v });
        }
        Ok((pre, out))
    }

    pub fn forward(&self, x: &Array3<f64>) -> Result<Array3<f64>> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for l in 0..self.layers.len() {
            cur = self.layer_forward(l, &cur)?.1;
        }
        Ok(cur)
    }

    /// Activations of every layer up to and including `last`.
    pub fn forward_until(&self, x: &Array3<f64>, last: usize) -> Result<Array3<f64>> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for l in 0..=last.min(self.layers.len() - 1) {
            cur = self.layer_forward(l, &cur)?.1;
        }
        Ok(cur)
    }

    pub fn forward_traced(&self, x: &Array3<f64>) -> Result<LayerTrace> {
        self.check_input(x)?;
        let mut outputs = vec![x.clone()];
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        for l in 0..self.layers.len() {
            let (pre, out) = self.layer_forward(l, &outputs[l])?;
            pre_activations.push(pre);
            outputs.push(out);
        }
        Ok(LayerTrace {
            outputs,
            pre_activations,
        })
    }

    /// Propagate output errors to the network input without touching the
    /// weights.
    pub fn propagate_errors(&self, errors: &[Array3<f64>], traces: &[&LayerTrace]) -> Result<Vec<Array3<f64>>> {
        let mut e = errors.to_vec();
        for l in (0..self.layers.len()).rev() {
            let xbar = self.layers[l].error_crossbars()?;
            e = e
                .iter()
                .zip(traces)
                .map(|(e_out, t)| {
                    let delta = local_delta(&self.activations[l], e_out, &t.pre_activations[l], &t.outputs[l + 1])?;
                    self.layers[l].backward_input(&xbar, &delta)
                })
                .collect::<Result<_>>()?;
        }
        Ok(e)
    }
}

/// Error with respect to the pre-activation, from the error with respect
/// to the activation.
fn local_delta(act: &ActivationFn, e_out: &Array3<f64>, pre: &Array3<f64>, out: &Array3<f64>) -> Result<Array3<f64>> {
    if e_out.dim() != pre.dim() {
        return Err(Error::DimensionMismatch(format!(
            "error {:?} for layer output {:?}",
            e_out.dim(),
            pre.dim()
        )));
    }
    let mut delta = Array3::zeros(pre.dim());
    Zip::from(&mut delta)
        .and(e_out)
        .and(pre)
        .and(out)
        .for_each(|d, &e, &p, &o| *d = e * act.derivative(p, o));
    Ok(delta)
}

/// One layer of the memory-free backward flow over a batch.
///
/// `e_next[i]` is the error with respect to this layer's activation for
/// sample `i`. Errors are sent back through crossbars holding the
/// transposed weights; the kernel-matrix delta is accumulated over the
/// batch on update crossbars and `W + alpha * dW` is reprogrammed in place.
/// Returns the errors with respect to the layer input (empty when
/// `want_input_error` is false) and `dW`. With `noise_rng` the new
/// weights are programmed with device noise.
pub fn backprop_layer(
    network: &mut Network,
    index: usize,
    e_next: &[Array3<f64>],
    traces: &[&LayerTrace],
    alpha: f64,
    want_input_error: bool,
    noise_rng: Option<&mut dyn RngCore>,
) -> Result<(Vec<Array3<f64>>, Array2<f64>)> {
    if e_next.len() != traces.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} error tensors for {} traces",
            e_next.len(),
            traces.len()
        )));
    }
    if let Some(t) = traces.iter().find(|t| t.layer_count() != network.layer_count()) {
        return Err(Error::DimensionMismatch(format!(
            "trace of {} layers for a {}-layer network",
            t.layer_count(),
            network.layer_count()
        )));
    }
    let act = network.activations[index];
    let layer = network.layer_mut(index)?;
    let error_xbar = if want_input_error {
        Some(layer.error_crossbars()?)
    } else {
        None
    };
    let shape = *layer.shape();
    let mut grad = Array2::zeros((shape.kernel_rows(), shape.kernel_cols()));
    let mut e_this = Vec::with_capacity(if want_input_error { e_next.len() } else { 0 });
    for (e_out, t) in e_next.iter().zip(traces) {
        let delta = local_delta(&act, e_out, &t.pre_activations[index], &t.outputs[index + 1])?;
        if let Some(x) = &error_xbar {
            e_this.push(layer.backward_input(x, &delta)?);
        }
        if delta.iter().any(|v| *v != 0.0) {
            grad += &layer.weight_gradient(&t.outputs[index], &delta)?;
        }
    }
    if alpha != 0.0 && grad.iter().any(|v| *v != 0.0) {
        let updated = layer.kernel_matrix() + &(&grad * alpha);
        match noise_rng {
            Some(rng) => layer.program_noisy(updated.view(), rng)?,
            None => layer.program(updated.view())?,
        }
    }
    Ok((e_this, grad))
}
