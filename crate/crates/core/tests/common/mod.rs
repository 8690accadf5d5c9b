#![allow(dead_code)]

use memgan_core::crossbar::DeviceConfig;
use memgan_core::gan::{ArchitecturePreset, GanModel, InitScheme, ModelConfig, Target};
use memgan_core::mapper::LayerShape;
use ndarray::{Array2, Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Values on a 1/8 grid in [-2, 2]: products and short sums of these are
/// exact in f64, so summation order cannot matter.
pub fn dyadic(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(-16i32..=16) as f64 / 8.0
}

pub fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(-1.0..1.0)
}

pub fn feature_map(c: usize, h: usize, w: usize, mut f: impl FnMut() -> f64) -> Array3<f64> {
    Array3::from_shape_simple_fn((c, h, w), &mut f)
}

/// Direct convolution, kernels `[out][in][kh][kw]`, accumulating over
/// (channel, ky, kx) in ascending order.
pub fn conv_oracle(x: &Array3<f64>, k: &Array4<f64>, stride: usize, pad: usize) -> Array3<f64> {
    let (ic, h, w) = x.dim();
    let (oc, _, kh, kw) = k.dim();
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = Array3::zeros((oc, oh, ow));
    for o in 0..oc {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for c in 0..ic {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                acc += x[[c, iy as usize, ix as usize]] * k[[o, c, ky, kx]];
                            }
                        }
                    }
                }
                out[[o, oy, ox]] = acc;
            }
        }
    }
    out
}

/// Transposed convolution by scattering, kernels `[in][out][kh][kw]`.
pub fn deconv_oracle(x: &Array3<f64>, k: &Array4<f64>, stride: usize, pad: usize) -> Array3<f64> {
    let (ic, h, w) = x.dim();
    let (_, oc, kh, kw) = k.dim();
    let oh = (h - 1) * stride + kh - 2 * pad;
    let ow = (w - 1) * stride + kw - 2 * pad;
    let mut out = Array3::zeros((oc, oh, ow));
    for c in 0..ic {
        for y in 0..h {
            for xx in 0..w {
                for o in 0..oc {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let oy = (y * stride + ky) as isize - pad as isize;
                            let ox = (xx * stride + kx) as isize - pad as isize;
                            if oy >= 0 && ox >= 0 && (oy as usize) < oh && (ox as usize) < ow {
                                out[[o, oy as usize, ox as usize]] += x[[c, y, xx]] * k[[c, o, ky, kx]];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn random_kernels(
    shape: &LayerShape,
    rng: &mut ChaCha8Rng,
    mut f: impl FnMut(&mut ChaCha8Rng) -> f64,
) -> Array4<f64> {
    let (a, b) = match shape.kind {
        memgan_core::mapper::LayerKind::Conv => (shape.out_channels, shape.in_channels),
        memgan_core::mapper::LayerKind::Deconv => (shape.in_channels, shape.out_channels),
    };
    Array4::from_shape_simple_fn((a, b, shape.kernel.0, shape.kernel.1), || f(rng))
}

/// Two-layer generator and discriminator on 4x4 crossbars, so every layer
/// spans several tiles.
pub fn toy_model(device: DeviceConfig, batch: usize, init_scale: f64, seed: u64) -> GanModel {
    let cfg = ModelConfig {
        preset: ArchitecturePreset::Toy,
        batch,
        init: InitScheme::Uniform,
        init_scale,
        ..Default::default()
    };
    GanModel::from_preset(cfg, device.with_dims(4, 4), seed).unwrap()
}

pub fn toy_batch(model: &GanModel, seed: u64) -> (Vec<Array3<f64>>, Array2<f64>) {
    let mut r = rng(seed);
    let (c, h, w) = model.architecture().image;
    let real = (0..model.batch())
        .map(|_| feature_map(c, h, w, || r.random_range(-1.0..1.0)))
        .collect();
    let z = model.sample_noise(model.batch(), &mut r);
    (real, z)
}

/// ||a - b|| / max(||a||, ||b||)
pub fn rel_error(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let diff = (a - b).mapv(|v| v * v).sum().sqrt();
    let scale = a.mapv(|v| v * v).sum().sqrt().max(b.mapv(|v| v * v).sum().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// A small random layer shape that passes validation.
pub fn random_shape(rng: &mut ChaCha8Rng, kind: memgan_core::mapper::LayerKind) -> LayerShape {
    loop {
        let ic = rng.random_range(1..=4);
        let oc = rng.random_range(1..=5);
        let k = rng.random_range(1..=4);
        let stride = rng.random_range(1..=3);
        let h = rng.random_range(1..=7);
        let w = rng.random_range(1..=7);
        let shape = match kind {
            memgan_core::mapper::LayerKind::Conv => {
                let pad = rng.random_range(0..=2);
                LayerShape::conv(ic, oc, k, stride, pad, (h, w))
            }
            memgan_core::mapper::LayerKind::Deconv => {
                let pad = rng.random_range(0..k);
                LayerShape::deconv(ic, oc, k, stride, pad, (h, w))
            }
        };
        if shape.validate().is_ok() {
            return shape;
        }
    }
}

pub fn kernel_matrix(shape: &LayerShape, k: &Array4<f64>) -> Array2<f64> {
    match shape.kind {
        memgan_core::mapper::LayerKind::Conv => memgan_core::mapper::conv_kernel_matrix(k),
        memgan_core::mapper::LayerKind::Deconv => memgan_core::mapper::deconv_kernel_matrix(k),
    }
}

pub fn oracle(shape: &LayerShape, x: &Array3<f64>, k: &Array4<f64>) -> Array3<f64> {
    match shape.kind {
        memgan_core::mapper::LayerKind::Conv => conv_oracle(x, k, shape.stride, shape.padding),
        memgan_core::mapper::LayerKind::Deconv => deconv_oracle(x, k, shape.stride, shape.padding),
    }
}

/// Block that owns each step, written out independently of the library.
pub fn expected_block(task: &str) -> &'static str {
    match task {
        "a" | "c" | "d1" | "d2" | "e1" | "e2" => "D",
        "b" | "f2" => "G",
        "d3" | "f1" => "Diff",
        other => panic!("unknown task {other}"),
    }
}

/// `(task, predecessor, iteration offset)` edges each schedule must honour.
pub fn expected_deps(mode: memgan_core::pipeline::PipelineMode) -> Vec<(&'static str, &'static str, usize)> {
    match mode {
        memgan_core::pipeline::PipelineMode::Basic => {
            let order = ["a", "b", "c", "d1", "d2", "d3", "e1", "e2", "f1", "f2"];
            let mut deps = vec![("a", "f2", 1)];
            deps.extend(order.windows(2).map(|w| (w[1], w[0], 0)));
            deps
        }
        memgan_core::pipeline::PipelineMode::CrossParallel => vec![
            ("a", "e2", 1),
            ("b", "f2", 1),
            ("d1", "a", 0),
            ("c", "b", 0),
            ("c", "d1", 0),
            ("d2", "c", 0),
            ("d3", "d2", 0),
            ("d3", "d1", 0),
            ("e1", "d3", 0),
            ("f1", "d3", 0),
            ("e2", "e1", 0),
            ("f2", "f1", 0),
        ],
    }
}

/// Checks a trace against the rules of the machine without reusing any
/// scheduler code: durations, block exclusivity, dependencies, work
/// conservation and no unexplained idle time.
pub fn check_schedule(trace: &memgan_core::pipeline::ScheduleTrace) -> std::result::Result<(), String> {
    use std::collections::HashMap;
    const EPS: f64 = 1e-12;
    let n = trace.iterations;
    let mut at: HashMap<(String, usize), (f64, f64, String)> = HashMap::new();
    for t in &trace.tasks {
        let name = t.task.name().to_string();
        let dur = trace.times.get(t.task);
        if (t.end - t.start - dur).abs() > EPS {
            return Err(format!("{name}#{} lasts {} not {dur}", t.iteration, t.end - t.start));
        }
        if t.start < 0.0 {
            return Err(format!("{name}#{} starts before zero", t.iteration));
        }
        let block = match t.block {
            memgan_core::pipeline::Block::Discriminator => "D",
            memgan_core::pipeline::Block::Generator => "G",
            memgan_core::pipeline::Block::Diff => "Diff",
        };
        if block != expected_block(&name) {
            return Err(format!("{name} ran on {block}"));
        }
        if at
            .insert((name.clone(), t.iteration), (t.start, t.end, block.into()))
            .is_some()
        {
            return Err(format!("{name}#{} scheduled twice", t.iteration));
        }
    }
    if at.len() != 10 * n {
        return Err(format!("{} task instances for {n} iterations", at.len()));
    }
    for ((name, it), (start, _, _)) in &at {
        for (task, pred, off) in expected_deps(trace.mode()) {
            if task == name && *it >= off {
                let (_, pend, _) = at[&(pred.to_string(), it - off)];
                if *start + EPS < pend {
                    return Err(format!("{name}#{it} starts {start} before {pred} ends {pend}"));
                }
            }
        }
    }
    for block in ["D", "G", "Diff"] {
        let mut iv: Vec<(f64, f64)> = at.values().filter(|v| v.2 == block).map(|v| (v.0, v.1)).collect();
        iv.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for w in iv.windows(2) {
            if w[1].0 + EPS < w[0].1 {
                return Err(format!("{block} overlap: {:?} and {:?}", w[0], w[1]));
            }
        }
        let work: f64 = at
            .iter()
            .filter(|(k, _)| expected_block(&k.0) == block)
            .map(|(k, _)| {
                trace
                    .times
                    .get(trace.tasks.iter().find(|t| t.task.name() == k.0).unwrap().task)
            })
            .sum();
        let busy: f64 = iv.iter().map(|(s, e)| e - s).sum();
        if (work - busy).abs() > 1e-9 {
            return Err(format!("{block} busy {busy} but owns {work} of work"));
        }
    }
    // every start is explained by time zero, a dependency or the block freeing up
    let ends: Vec<f64> = at.values().map(|v| v.1).collect();
    for ((name, it), (start, _, _)) in &at {
        if *start > EPS && !ends.iter().any(|e| (e - start).abs() <= EPS) {
            return Err(format!("{name}#{it} waits until {start} for nothing"));
        }
    }
    Ok(())
}

pub fn random_times(rng: &mut ChaCha8Rng) -> memgan_core::pipeline::StepTimeTable {
    memgan_core::pipeline::StepTimeTable::from_fn(|_| rng.random_range(0.001..0.05))
}

const H: f64 = 1e-5;

/// Central differences of `objective` with respect to every kernel-matrix
/// entry of one network.
pub fn numeric_gradients(model: &GanModel, target: Target, objective: impl Fn(&GanModel) -> f64) -> Vec<Array2<f64>> {
    let kms = model.network(target).kernel_matrices();
    let mut out = Vec::new();
    for (l, km) in kms.iter().enumerate() {
        let mut g = Array2::zeros(km.dim());
        for idx in ndarray::indices(km.dim()) {
            let mut probe = model.clone();
            let mut k = km.clone();
            k[idx] += H;
            probe.network_mut(target).program_layer(l, &k).unwrap();
            let plus = objective(&probe);
            k[idx] -= 2.0 * H;
            probe.network_mut(target).program_layer(l, &k).unwrap();
            let minus = objective(&probe);
            g[idx] = (plus - minus) / (2.0 * H);
        }
        out.push(g);
    }
    out
}

/// Relative error of every layer gradient of a float toy GAN against
/// central differences, labelled by network and layer.
pub fn fd_errors(seed: u64) -> Vec<(String, f64)> {
    let model = toy_model(DeviceConfig::float(), 3, 0.5, seed);
    let (real, z) = toy_batch(&model, seed + 100);
    let grads = model.compute_gradients(&real, &z).unwrap();
    let mut out = Vec::new();
    let num_d = numeric_gradients(&model, Target::Discriminator, |m| m.objectives(&real, &z).unwrap().0);
    for (l, (a, n)) in grads.discriminator.iter().zip(&num_d).enumerate() {
        out.push((format!("discriminator layer {l}"), rel_error(a, n)));
    }
    // the generator moves against its objective
    let num_g = numeric_gradients(&model, Target::Generator, |m| m.objectives(&real, &z).unwrap().1);
    for (l, (a, n)) in grads.generator.iter().zip(&num_g).enumerate() {
        out.push((format!("generator layer {l}"), rel_error(&a.mapv(|v| -v), n)));
    }
    out
}
