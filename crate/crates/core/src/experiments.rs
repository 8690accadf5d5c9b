//! End-to-end experiments and their report files.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{DatasetKind, ExperimentConfig, Precision};
use crate::cost::{
    area, cost_report, d_forward_shares, forward_flow_fractions, iteration_time, CostReport, DForwardShares,
};
use crate::dataset::{load_cifar10, load_mnist, Dataset};
use crate::error::{Error, Result};
use crate::gan::{GanModel, StepLog};
use crate::pipeline::{
    build_task_graph, simulate, utilization_report, Block, PipelineMode, ScheduleTrace, UtilizationReport,
};
use crate::probe::train_probe;

/// Training and test splits named by the config.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    cfg.validate_dataset_files()?;
    let d = &cfg.dataset;
    let full = match d.name {
        DatasetKind::Mnist => load_mnist(
            cfg.resolve(d.images.as_ref().expect("validated")),
            cfg.resolve(d.labels.as_ref().expect("validated")),
            d.image_size,
        )?,
        DatasetKind::Cifar10 => {
            let files: Vec<PathBuf> = d.batches.iter().map(|p| cfg.resolve(p)).collect();
            load_cifar10(&files, d.image_size)?
        }
    };
    let (train, rest) = full.split(d.train_size)?;
    let test = match d.test_size {
        Some(n) if n > rest.len() => {
            return Err(Error::config(
                "dataset.test_size",
                format!("{n} requested, {} available after the training split", rest.len()),
            ))
        }
        Some(n) => rest.take(n),
        None => rest,
    };
    if test.is_empty() {
        return Err(Error::config("dataset.train_size", "leaves no test samples"));
    }
    Ok((train, test))
}

#[derive(Clone, Debug)]
pub struct TrainingRun {
    pub precision: Precision,
    pub model: GanModel,
    pub log: Vec<StepLog>,
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    idx.shuffle(&mut rng);
    idx
}

/// Train a fresh model for `cfg.iterations` iterations on `train`. Batches
/// walk a per-epoch shuffle of the training split.
pub fn run_training(cfg: &ExperimentConfig, precision: Precision, train: &Dataset) -> Result<TrainingRun> {
    let device = cfg.device_config(precision);
    let mut model = GanModel::from_preset(cfg.model.clone(), device, cfg.seed)?;
    let m = model.batch();
    if train.len() < m {
        return Err(Error::config("model.batch", "larger than the training split"));
    }
    if train.dims != model.architecture().image {
        return Err(Error::DimensionMismatch(format!(
            "dataset images {:?}, model expects {:?}",
            train.dims,
            model.architecture().image
        )));
    }
    let mut diff = model.diff_block()?;
    let mut noise = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let per_epoch = train.len() / m;
    let mut order = Vec::new();
    let mut log = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let (epoch, pos) = (it / per_epoch, it % per_epoch);
        if pos == 0 {
            order = epoch_order(train.len(), cfg.seed, epoch);
        }
        let real: Vec<Array3<f64>> = order[pos * m..(pos + 1) * m]
            .iter()
            .map(|&i| train.images[i].clone())
            .collect();
        let z = model.sample_noise(m, &mut noise);
        let step = model.train_step(&mut diff, &real, &z)?;
        if it % 50 == 0 || it + 1 == cfg.iterations {
            log::info!(
                "[{precision}] iteration {it}: V_D {:.5} V_G {:.5} D(x) {:.3} D(G(z)) {:.3}",
                step.objective_d,
                step.objective_g,
                step.mean_d_real,
                step.mean_d_fake
            );
        }
        log.push(step);
    }
    Ok(TrainingRun { precision, model, log })
}

/// Probe accuracy of a model's discriminator features on the test split.
pub fn probe_accuracy(cfg: &ExperimentConfig, model: &GanModel, train: &Dataset, test: &Dataset) -> Result<f64> {
    let ftr = model.extract_features(&train.images)?;
    let fte = model.extract_features(&test.images)?;
    let classes = train.classes().max(test.classes());
    let probe = train_probe(&ftr, &train.labels, classes, &cfg.probe)?;
    probe.accuracy(&fte, &test.labels)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub precision: Precision,
    pub accuracy: f64,
    pub normalized_accuracy: f64,
    pub final_objective_d: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub baseline_accuracy: f64,
    pub points: Vec<EvalPoint>,
}

impl EvalResult {
    pub fn point(&self, p: Precision) -> Option<&EvalPoint> {
        self.points.iter().find(|e| e.precision == p)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("precision,accuracy,normalized_accuracy\n");
        for p in &self.points {
            s.push_str(&format!("{},{},{}\n", p.precision, p.accuracy, p.normalized_accuracy));
        }
        s
    }
}

/// Train at every precision of `cfg.sweep_bits` and score the features of
/// each discriminator against the float-trained baseline.
pub fn run_precision_sweep(cfg: &ExperimentConfig, train: &Dataset, test: &Dataset) -> Result<EvalResult> {
    let evaluate = |p: Precision| -> Result<(f64, Option<f64>)> {
        let run = run_training(cfg, p, train)?;
        let acc = probe_accuracy(cfg, &run.model, train, test)?;
        log::info!("[{p}] probe accuracy {acc:.4}");
        Ok((acc, run.log.last().map(|l| l.objective_d)))
    };
    let (baseline, base_obj) = evaluate(Precision::Float)?;
    if baseline <= 0.0 {
        return Err(Error::Classifier("float baseline accuracy is zero".into()));
    }
    let mut points = Vec::with_capacity(cfg.sweep_bits.len());
    for &p in &cfg.sweep_bits {
        let (acc, obj) = if p == Precision::Float {
            (baseline, base_obj)
        } else {
            evaluate(p)?
        };
        points.push(EvalPoint {
            precision: p,
            accuracy: acc,
            normalized_accuracy: acc / baseline,
            final_objective_d: obj,
        });
    }
    Ok(EvalResult {
        baseline_accuracy: baseline,
        points,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineRow {
    pub iteration_s: f64,
    pub d_idle_s: f64,
    pub g_idle_s: f64,
}

/// Iteration latency and block idle time under both pipelines.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineTable {
    pub basic: PipelineRow,
    pub cross_parallel: PipelineRow,
    pub speedup: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineComparison {
    pub table: PipelineTable,
    pub utilization: UtilizationReport,
    pub basic: ScheduleTrace,
    pub cross_parallel: ScheduleTrace,
}

pub fn run_pipeline_compare(cfg: &ExperimentConfig) -> Result<PipelineComparison> {
    let times = &cfg.cost.step_times;
    let basic = simulate(&build_task_graph(PipelineMode::Basic), times, cfg.pipeline_iterations)?;
    let cross = simulate(
        &build_task_graph(PipelineMode::CrossParallel),
        times,
        cfg.pipeline_iterations,
    )?;
    let u = utilization_report(&basic, &cross)?;
    let (d, g) = (u.block(Block::Discriminator), u.block(Block::Generator));
    let table = PipelineTable {
        basic: PipelineRow {
            iteration_s: u.latency_basic,
            d_idle_s: d.idle_basic,
            g_idle_s: g.idle_basic,
        },
        cross_parallel: PipelineRow {
            iteration_s: u.latency_cross,
            d_idle_s: d.idle_cross,
            g_idle_s: g.idle_cross,
        },
        speedup: u.latency_basic / u.latency_cross,
    };
    Ok(PipelineComparison {
        table,
        utilization: u,
        basic,
        cross_parallel: cross,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParallelismPoint {
    pub parallelism: usize,
    pub iteration_s: f64,
    pub forward_s: f64,
    pub backward_s: f64,
    pub area_mm2: f64,
    pub d_forward_area_fraction: f64,
    pub g_forward_area_fraction: f64,
}

/// Modeled iteration time and area for every `cfg.sweep_parallelism`,
/// using the first workload's batch size.
pub fn run_parallelism_sweep(cfg: &ExperimentConfig) -> Result<Vec<ParallelismPoint>> {
    let workload = cfg
        .workloads
        .first()
        .ok_or_else(|| Error::config("workloads", "must list at least one workload"))?;
    cfg.sweep_parallelism
        .iter()
        .map(|&s| {
            let t = iteration_time(s, workload, &cfg.cost, cfg.pipeline_mode)?;
            let (fd, fg) = forward_flow_fractions(s, &cfg.cost)?;
            Ok(ParallelismPoint {
                parallelism: s,
                iteration_s: t.latency,
                forward_s: t.forward,
                backward_s: t.backward,
                area_mm2: area(s, &cfg.cost)?,
                d_forward_area_fraction: fd,
                g_forward_area_fraction: fg,
            })
        })
        .collect()
}

pub fn parallelism_csv(points: &[ParallelismPoint]) -> String {
    let mut s = String::from(
        "parallelism,iteration_s,forward_s,backward_s,area_mm2,d_forward_area_fraction,g_forward_area_fraction\n",
    );
    for p in points {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            p.parallelism,
            p.iteration_s,
            p.forward_s,
            p.backward_s,
            p.area_mm2,
            p.d_forward_area_fraction,
            p.g_forward_area_fraction
        ));
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub reports: Vec<CostReport>,
    pub d_forward_shares: Vec<(String, DForwardShares)>,
}

pub fn run_cost_report(cfg: &ExperimentConfig) -> Result<CostSummary> {
    let mut reports = Vec::new();
    let mut shares = Vec::new();
    for w in &cfg.workloads {
        reports.push(cost_report(w, &cfg.cost, cfg.parallelism, cfg.pipeline_mode)?);
        shares.push((w.name.clone(), d_forward_shares(w, &cfg.cost, cfg.parallelism)?));
    }
    Ok(CostSummary {
        reports,
        d_forward_shares: shares,
    })
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    experiment: &'a str,
    config: &'a ExperimentConfig,
    result: &'a T,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn write_json<T: Serialize>(
    dir: &Path,
    name: &str,
    experiment: &str,
    cfg: &ExperimentConfig,
    result: &T,
) -> Result<PathBuf> {
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(&Envelope {
        experiment,
        config: cfg,
        result,
    })?;
    text.push('\n');
    write_file(&path, &text)?;
    Ok(path)
}

fn prepare(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub precision: Precision,
    pub iterations: usize,
    pub image: (usize, usize, usize),
    pub initial_objective_d: Option<f64>,
    pub final_objective_d: Option<f64>,
    pub max_objective_d: Option<f64>,
    pub final_objective_g: Option<f64>,
}

pub fn training_csv(log: &[StepLog]) -> String {
    let mut s = String::from("iteration,objective_d,objective_g,mean_d_real,mean_d_fake\n");
    for l in log {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            l.iteration, l.objective_d, l.objective_g, l.mean_d_real, l.mean_d_fake
        ));
    }
    s
}

/// Train once and write `train_log.csv`, `train_summary.json` and the
/// final checkpoint `model.mgck`.
pub fn train_and_write(cfg: &ExperimentConfig, dir: &Path) -> Result<TrainingRun> {
    prepare(dir)?;
    let (train, _) = load_dataset(cfg)?;
    let run = run_training(cfg, cfg.precision, &train)?;
    write_file(&dir.join("train_log.csv"), &training_csv(&run.log))?;
    let summary = TrainingSummary {
        precision: run.precision,
        iterations: run.log.len(),
        image: run.model.architecture().image,
        initial_objective_d: run.log.first().map(|l| l.objective_d),
        final_objective_d: run.log.last().map(|l| l.objective_d),
        max_objective_d: run.log.iter().map(|l| l.objective_d).reduce(f64::max),
        final_objective_g: run.log.last().map(|l| l.objective_g),
    };
    write_json(dir, "train_summary.json", "train", cfg, &summary)?;
    run.model.save(dir.join("model.mgck"))?;
    Ok(run)
}

/// Writes `precision_sweep.csv` and `precision_sweep.json`.
pub fn precision_sweep_and_write(cfg: &ExperimentConfig, dir: &Path) -> Result<EvalResult> {
    prepare(dir)?;
    let (train, test) = load_dataset(cfg)?;
    let r = run_precision_sweep(cfg, &train, &test)?;
    write_file(&dir.join("precision_sweep.csv"), &r.to_csv())?;
    write_json(dir, "precision_sweep.json", "precision-sweep", cfg, &r)?;
    Ok(r)
}

/// Writes `pipeline_compare.json` and one schedule CSV and summary per mode.
pub fn pipeline_compare_and_write(cfg: &ExperimentConfig, dir: &Path) -> Result<PipelineComparison> {
    prepare(dir)?;
    let c = run_pipeline_compare(cfg)?;
    write_json(dir, "pipeline_compare.json", "pipeline-compare", cfg, &c.table)?;
    write_json(dir, "utilization.json", "pipeline-compare", cfg, &c.utilization)?;
    for t in [&c.basic, &c.cross_parallel] {
        let name = t.mode().name();
        write_file(&dir.join(format!("schedule_{name}.csv")), &t.to_csv())?;
        write_json(
            dir,
            &format!("schedule_{name}.json"),
            "pipeline-compare",
            cfg,
            &t.summary(),
        )?;
    }
    Ok(c)
}

/// Writes `parallelism_sweep.csv` and `parallelism_sweep.json`.
pub fn parallelism_sweep_and_write(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<ParallelismPoint>> {
    prepare(dir)?;
    let points = run_parallelism_sweep(cfg)?;
    write_file(&dir.join("parallelism_sweep.csv"), &parallelism_csv(&points))?;
    write_json(dir, "parallelism_sweep.json", "parallelism-sweep", cfg, &points)?;
    Ok(points)
}

/// Writes `cost_report.json` and the plain-text `cost_report.txt`.
pub fn cost_report_and_write(cfg: &ExperimentConfig, dir: &Path) -> Result<CostSummary> {
    prepare(dir)?;
    let summary = run_cost_report(cfg)?;
    write_json(dir, "cost_report.json", "cost-report", cfg, &summary)?;
    let mut text = String::new();
    for r in &summary.reports {
        text.push_str(&r.to_table());
        text.push('\n');
    }
    for (name, s) in &summary.d_forward_shares {
        text.push_str(&format!(
            "{name}: D_forward time share  sequential {:.2}%  basic {:.2}%  cross-parallel {:.2}%\n",
            100.0 * s.sequential,
            100.0 * s.basic,
            100.0 * s.cross_parallel
        ));
    }
    write_file(&dir.join("cost_report.txt"), &text)?;
    Ok(summary)
}
