//! Analytic area, time and energy models of the accelerator.

use serde::{Deserialize, Serialize};

use crate::crossbar::DeviceConfig;
use crate::error::{Error, Result};
use crate::gan::{ArchitecturePreset, GanArchitecture};
use crate::mapper::{plan_matrix, LayerShape};
use crate::pipeline::{build_task_graph, simulate, PipelineMode, Procedure, ScheduleTrace, StepTimeTable, TaskId};

const JOULES_PER_KWH: f64 = 3.6e6;

/// Energy per operation in joules.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitEnergies {
    /// One crossbar matrix-vector multiplication.
    pub mvm: f64,
    /// Programming one crossbar.
    pub program: f64,
    pub lut: f64,
    pub adder: f64,
}

impl Default for UnitEnergies {
    fn default() -> Self {
        UnitEnergies {
            mvm: 1.249_636_889_689_829_3e-6,
            program: 1.249_636_889_689_829_3e-4,
            lut: 1.249_636_889_689_829_3e-8,
            adder: 1.249_636_889_689_829_3e-9,
        }
    }
}

impl UnitEnergies {
    fn scaled(&self, k: f64) -> Self {
        UnitEnergies {
            mvm: self.mvm * k,
            program: self.program * k,
            lut: self.lut * k,
            adder: self.adder * k,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostParams {
    /// Area outside the replicated forward flows, mm².
    pub area_base: f64,
    /// Area of one discriminator forward-flow replica, mm².
    pub area_d_forward: f64,
    /// Area of one generator forward-flow replica, mm².
    pub area_g_forward: f64,
    pub crossbar_rows: usize,
    pub crossbar_cols: usize,
    pub energy: UnitEnergies,
    /// Batch size and parallelism at which `step_times` were measured.
    pub reference_batch: usize,
    pub reference_parallelism: usize,
    pub step_times: StepTimeTable,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            area_base: 90.5,
            area_d_forward: 23.0,
            area_g_forward: 25.5,
            crossbar_rows: 32,
            crossbar_cols: 32,
            energy: UnitEnergies::default(),
            reference_batch: 64,
            reference_parallelism: 32,
            step_times: StepTimeTable::default(),
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        let non_negative = [
            ("cost.area_base", self.area_base),
            ("cost.area_d_forward", self.area_d_forward),
            ("cost.area_g_forward", self.area_g_forward),
            ("cost.energy.mvm", self.energy.mvm),
            ("cost.energy.program", self.energy.program),
            ("cost.energy.lut", self.energy.lut),
            ("cost.energy.adder", self.energy.adder),
        ];
        for (field, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(field, format!("must be finite and >= 0, got {v}")));
            }
        }
        for (field, v) in [
            ("cost.crossbar_rows", self.crossbar_rows),
            ("cost.crossbar_cols", self.crossbar_cols),
            ("cost.reference_batch", self.reference_batch),
            ("cost.reference_parallelism", self.reference_parallelism),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be >= 1"));
            }
        }
        self.step_times.validate_as("cost.step_times")
    }

    fn device(&self) -> DeviceConfig {
        DeviceConfig::float().with_dims(self.crossbar_rows, self.crossbar_cols)
    }
}

fn check_parallelism(s: usize) -> Result<()> {
    if s < 1 {
        return Err(Error::config("parallelism", "must be >= 1"));
    }
    Ok(())
}

/// Total area in mm² with `s` forward-flow replicas per network.
pub fn area(s: usize, params: &CostParams) -> Result<f64> {
    check_parallelism(s)?;
    Ok(params.area_base + s as f64 * (params.area_d_forward + params.area_g_forward))
}

/// Fractions of the total area taken by the discriminator and generator
/// forward flows.
pub fn forward_flow_fractions(s: usize, params: &CostParams) -> Result<(f64, f64)> {
    let total = area(s, params)?;
    if total == 0.0 {
        return Ok((0.0, 0.0));
    }
    Ok((
        s as f64 * params.area_d_forward / total,
        s as f64 * params.area_g_forward / total,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Baseline {
    pub name: String,
    pub time_h: f64,
    pub energy_kwh: f64,
}

/// Training job whose cost is modeled. Images are resized to the input
/// of `network`, so `image` only describes the source data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Workload {
    pub name: String,
    pub images: u64,
    pub image: (usize, usize),
    pub batch: usize,
    pub network: ArchitecturePreset,
    #[serde(default)]
    pub baselines: Vec<Baseline>,
}

impl Workload {
    pub fn imagenet() -> Self {
        Workload {
            name: "imagenet".into(),
            images: 456_567,
            image: (400, 300),
            batch: 64,
            network: ArchitecturePreset::Dcgan64,
            baselines: vec![
                Baseline {
                    name: "reported".into(),
                    time_h: 6.3,
                    energy_kwh: 0.51,
                },
                Baseline {
                    name: "gpu".into(),
                    time_h: 17.0,
                    energy_kwh: 3.1,
                },
                Baseline {
                    name: "fpga".into(),
                    time_h: 30.0,
                    energy_kwh: 0.79,
                },
            ],
        }
    }

    pub fn lsun() -> Self {
        Workload {
            name: "lsun_bedroom".into(),
            images: 3_033_042,
            image: (256, 256),
            batch: 64,
            network: ArchitecturePreset::Dcgan64,
            baselines: vec![
                Baseline {
                    name: "reported".into(),
                    time_h: 47.2,
                    energy_kwh: 3.8,
                },
                Baseline {
                    name: "gpu".into(),
                    time_h: 130.0,
                    energy_kwh: 23.4,
                },
                Baseline {
                    name: "fpga".into(),
                    time_h: 255.0,
                    energy_kwh: 5.5,
                },
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.images == 0 {
            return Err(Error::config(format!("workload.{}.images", self.name), "must be >= 1"));
        }
        if self.batch == 0 {
            return Err(Error::config(format!("workload.{}.batch", self.name), "must be >= 1"));
        }
        if self.image.0 == 0 || self.image.1 == 0 {
            return Err(Error::config(
                format!("workload.{}.image", self.name),
                "dimensions must be >= 1",
            ));
        }
        Ok(())
    }

    pub fn iterations_per_epoch(&self) -> u64 {
        self.images.div_ceil(self.batch as u64)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    pub mvm: u64,
    pub program: u64,
    pub lut: u64,
    pub adder: u64,
}

impl OpCounts {
    pub fn energy(&self, e: &UnitEnergies) -> f64 {
        self.mvm as f64 * e.mvm
            + self.program as f64 * e.program
            + self.lut as f64 * e.lut
            + self.adder as f64 * e.adder
    }

    fn times(self, k: u64) -> Self {
        OpCounts {
            mvm: self.mvm * k,
            program: self.program * k,
            lut: self.lut * k,
            adder: self.adder * k,
        }
    }

    fn plus(self, o: OpCounts) -> Self {
        OpCounts {
            mvm: self.mvm + o.mvm,
            program: self.program + o.program,
            lut: self.lut + o.lut,
            adder: self.adder + o.adder,
        }
    }
}

/// Operations of one training iteration, per task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpCountTable {
    pub tasks: Vec<(TaskId, OpCounts)>,
}

impl OpCountTable {
    pub fn get(&self, id: TaskId) -> Option<OpCounts> {
        self.tasks.iter().find(|t| t.0 == id).map(|t| t.1)
    }

    pub fn total(&self) -> OpCounts {
        self.tasks.iter().fold(OpCounts::default(), |a, t| a.plus(t.1))
    }
}

fn crossbars(rows: usize, cols: usize, dev: &DeviceConfig) -> u64 {
    plan_matrix(rows, cols, dev).crossbar_count() as u64
}

/// Per sample: every output pixel drives every weight crossbar once.
fn forward_mvm(layers: &[LayerShape], dev: &DeviceConfig) -> u64 {
    layers
        .iter()
        .map(|l| l.output_pixels() as u64 * crossbars(l.kernel_rows(), l.kernel_cols(), dev))
        .sum()
}

/// Per sample: error propagation through transposed crossbars for every
/// layer from `first` on.
fn error_mvm(layers: &[LayerShape], first: usize, dev: &DeviceConfig) -> u64 {
    layers[first..]
        .iter()
        .map(|l| l.output_pixels() as u64 * crossbars(l.kernel_cols(), l.kernel_rows(), dev))
        .sum()
}

/// Memory-free weight update of a whole network over `samples` samples:
/// errors to every layer but the first, unrolled inputs programmed onto
/// update crossbars and driven once per output channel, and one
/// reprogramming of every weight crossbar.
fn update_ops(layers: &[LayerShape], samples: u64, dev: &DeviceConfig) -> OpCounts {
    let mut per_sample = OpCounts {
        mvm: error_mvm(layers, 1, dev),
        ..Default::default()
    };
    let mut reprogram = 0;
    for l in layers {
        let update = crossbars(l.output_pixels(), l.kernel_rows(), dev);
        per_sample.program += update;
        per_sample.mvm += l.out_channels as u64 * update;
        reprogram += crossbars(l.kernel_rows(), l.kernel_cols(), dev);
    }
    per_sample.times(samples).plus(OpCounts {
        program: reprogram,
        ..Default::default()
    })
}

/// Operation counts of one iteration of `workload`.
pub fn op_counts(workload: &Workload, params: &CostParams) -> Result<OpCountTable> {
    workload.validate()?;
    params.validate()?;
    let dev = params.device();
    let arch = GanArchitecture::preset(workload.network);
    let m = workload.batch as u64;
    let fd = forward_mvm(&arch.discriminator, &dev);
    let fg = forward_mvm(&arch.generator, &dev);
    let mvm = |n| OpCounts {
        mvm: n,
        ..Default::default()
    };
    let tasks = vec![
        (TaskId::A, mvm(m * fd)),
        (TaskId::B, mvm(m * fg)),
        (TaskId::C, mvm(m * fd)),
        (
            TaskId::D1,
            OpCounts {
                program: 1,
                ..Default::default()
            },
        ),
        (TaskId::D2, OpCounts::default()),
        (
            TaskId::D3,
            OpCounts {
                lut: 2 * m,
                adder: 3 * m,
                ..Default::default()
            },
        ),
        (TaskId::E1, OpCounts::default()),
        (TaskId::E2, update_ops(&arch.discriminator, 2 * m, &dev)),
        (TaskId::F1, mvm(m * error_mvm(&arch.discriminator, 0, &dev))),
        (TaskId::F2, update_ops(&arch.generator, m, &dev)),
    ];
    Ok(OpCountTable { tasks })
}

/// Step times at parallelism `s` and batch `m`: forward steps scale with
/// `ceil(m / s)`, all others stay as measured.
pub fn scaled_step_times(s: usize, m: usize, params: &CostParams) -> Result<StepTimeTable> {
    check_parallelism(s)?;
    params.validate()?;
    let reference = params.reference_batch.div_ceil(params.reference_parallelism) as f64;
    let k = m.div_ceil(s) as f64 / reference;
    let t = &params.step_times;
    Ok(StepTimeTable {
        a: t.a * k,
        b: t.b * k,
        c: t.c * k,
        ..*t
    })
}

pub fn is_forward_step(id: TaskId) -> bool {
    matches!(id, TaskId::A | TaskId::B | TaskId::C)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationTime {
    pub parallelism: usize,
    /// Sum of the steps that scale with parallelism.
    pub forward: f64,
    /// Sum of the steps that do not.
    pub backward: f64,
    /// Steady-state latency under the chosen pipeline.
    pub latency: f64,
    pub step_times: StepTimeTable,
}

const TIMING_ITERATIONS: usize = 8;

pub fn iteration_time(s: usize, workload: &Workload, params: &CostParams, mode: PipelineMode) -> Result<IterationTime> {
    workload.validate()?;
    let times = scaled_step_times(s, workload.batch, params)?;
    let trace = simulate(&build_task_graph(mode), &times, TIMING_ITERATIONS)?;
    let (forward, backward) = TaskId::ALL.iter().fold((0.0, 0.0), |(f, b), &id| {
        if is_forward_step(id) {
            (f + times.get(id), b)
        } else {
            (f, b + times.get(id))
        }
    });
    Ok(IterationTime {
        parallelism: s,
        forward,
        backward,
        latency: trace.latency(),
        step_times: times,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcedureCost {
    pub procedure: Procedure,
    pub energy_j: f64,
    pub energy_fraction: f64,
    pub time_share: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineComparison {
    pub name: String,
    pub time_h: f64,
    pub energy_kwh: f64,
    pub speedup: f64,
    pub energy_saving: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub workload: String,
    pub mode: PipelineMode,
    pub parallelism: usize,
    pub area_mm2: f64,
    pub iteration_latency_s: f64,
    pub iterations_per_epoch: u64,
    pub epoch_time_h: f64,
    pub energy_per_iteration_j: f64,
    pub energy_per_epoch_kwh: f64,
    pub breakdown: Vec<ProcedureCost>,
    pub baselines: Vec<BaselineComparison>,
}

/// Energy, time and area of one epoch of `workload`, with energy
/// attributed to procedures by task and time by the schedule in `trace`.
pub fn energy_report(
    trace: &ScheduleTrace,
    counts: &OpCountTable,
    params: &CostParams,
    workload: &Workload,
    s: usize,
) -> Result<CostReport> {
    params.validate()?;
    workload.validate()?;
    for spec in &trace.graph.tasks {
        if counts.get(spec.id).is_none() {
            return Err(Error::State(format!("no operation counts for task {}", spec.id)));
        }
    }
    if let Some((id, _)) = counts.tasks.iter().find(|(id, _)| trace.graph.task(*id).is_none()) {
        return Err(Error::State(format!(
            "operation counts for task {id}, which is not in the schedule"
        )));
    }
    let mut per_proc = [0.0f64; 4];
    for (id, c) in &counts.tasks {
        per_proc[id.procedure() as usize] += c.energy(&params.energy);
    }
    let total: f64 = per_proc.iter().sum();
    let shares = trace.procedure_time_shares();
    let breakdown = Procedure::ALL
        .iter()
        .map(|&p| ProcedureCost {
            procedure: p,
            energy_j: per_proc[p as usize],
            energy_fraction: if total > 0.0 { per_proc[p as usize] / total } else { 0.0 },
            time_share: shares.iter().find(|x| x.0 == p).map_or(0.0, |x| x.1),
        })
        .collect();
    let iters = workload.iterations_per_epoch();
    let latency = trace.latency();
    let epoch_time_h = latency * iters as f64 / 3600.0;
    let energy_per_epoch_kwh = total * iters as f64 / JOULES_PER_KWH;
    let baselines = workload
        .baselines
        .iter()
        .map(|b| BaselineComparison {
            name: b.name.clone(),
            time_h: b.time_h,
            energy_kwh: b.energy_kwh,
            speedup: b.time_h / epoch_time_h,
            energy_saving: b.energy_kwh / energy_per_epoch_kwh,
        })
        .collect();
    Ok(CostReport {
        workload: workload.name.clone(),
        mode: trace.mode(),
        parallelism: s,
        area_mm2: area(s, params)?,
        iteration_latency_s: latency,
        iterations_per_epoch: iters,
        epoch_time_h,
        energy_per_iteration_j: total,
        energy_per_epoch_kwh,
        breakdown,
        baselines,
    })
}

/// Simulate the schedule for `workload` at parallelism `s` and report.
pub fn cost_report(workload: &Workload, params: &CostParams, s: usize, mode: PipelineMode) -> Result<CostReport> {
    let times = scaled_step_times(s, workload.batch, params)?;
    let trace = simulate(&build_task_graph(mode), &times, TIMING_ITERATIONS)?;
    let counts = op_counts(workload, params)?;
    energy_report(&trace, &counts, params, workload, s)
}

/// Scale all unit energies so that one epoch of `workload` costs
/// `target_kwh`.
pub fn calibrate_energy(params: &CostParams, workload: &Workload, target_kwh: f64) -> Result<CostParams> {
    if !(target_kwh.is_finite() && target_kwh > 0.0) {
        return Err(Error::config("target_kwh", "must be finite and > 0"));
    }
    let counts = op_counts(workload, params)?;
    let per_iter: f64 = counts.tasks.iter().map(|(_, c)| c.energy(&params.energy)).sum();
    if per_iter <= 0.0 {
        return Err(Error::State("cannot calibrate all-zero unit energies".into()));
    }
    let current = per_iter * workload.iterations_per_epoch() as f64 / JOULES_PER_KWH;
    Ok(CostParams {
        energy: params.energy.scaled(target_kwh / current),
        ..params.clone()
    })
}

/// Share of time attributed to discriminator forward computation under
/// three schedules of the same work.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DForwardShares {
    pub parallelism: usize,
    /// Basic pipeline without forward replication, one sample at a time
    /// per network as on a sequential processor.
    pub sequential: f64,
    /// Basic pipeline at `parallelism`.
    pub basic: f64,
    /// Cross-parallel pipeline at `parallelism`.
    pub cross_parallel: f64,
}

pub fn d_forward_shares(workload: &Workload, params: &CostParams, s: usize) -> Result<DForwardShares> {
    let share = |s: usize, mode: PipelineMode| -> Result<f64> {
        let times = scaled_step_times(s, workload.batch, params)?;
        let trace = simulate(&build_task_graph(mode), &times, TIMING_ITERATIONS)?;
        let shares = trace.procedure_time_shares();
        Ok(shares.iter().find(|p| p.0 == Procedure::DForward).map_or(0.0, |p| p.1))
    };
    Ok(DForwardShares {
        parallelism: s,
        sequential: share(1, PipelineMode::Basic)?,
        basic: share(s, PipelineMode::Basic)?,
        cross_parallel: share(s, PipelineMode::CrossParallel)?,
    })
}

impl CostReport {
    /// Plain-text rendering of the report.
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "workload {}  pipeline {}  parallelism {}\n\
             area            {:>12.1} mm2\n\
             iteration       {:>12.6} s\n\
             epoch           {:>12.4} h ({} iterations)\n\
             energy/epoch    {:>12.4} kWh\n\n\
             procedure   energy(J)      energy%   time%\n",
            self.workload,
            self.mode.name(),
            self.parallelism,
            self.area_mm2,
            self.iteration_latency_s,
            self.epoch_time_h,
            self.iterations_per_epoch,
            self.energy_per_epoch_kwh
        );
        for p in &self.breakdown {
            s.push_str(&format!(
                "{:<11} {:<14.6e} {:>7.2} {:>7.2}\n",
                p.procedure.name(),
                p.energy_j,
                100.0 * p.energy_fraction,
                100.0 * p.time_share
            ));
        }
        if !self.baselines.is_empty() {
            s.push_str("\nplatform    time(h)   speedup   energy(kWh)  saving\n");
            s.push_str(&format!(
                "{:<11} {:>7.2}   {:>7}   {:>11.3}  {:>6}\n",
                "this", self.epoch_time_h, "-", self.energy_per_epoch_kwh, "-"
            ));
            for b in &self.baselines {
                s.push_str(&format!(
                    "{:<11} {:>7.2}   {:>6.1}x   {:>11.3}  {:>5.1}x\n",
                    b.name, b.time_h, b.speedup, b.energy_kwh, b.energy_saving
                ));
            }
        }
        s
    }
}
