//! Event-driven schedule of training iterations over the three compute
//! blocks.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskId {
    A,
    B,
    C,
    D1,
    D2,
    D3,
    E1,
    E2,
    F1,
    F2,
}

impl TaskId {
    pub const ALL: [TaskId; 10] = [
        TaskId::A,
        TaskId::B,
        TaskId::C,
        TaskId::D1,
        TaskId::D2,
        TaskId::D3,
        TaskId::E1,
        TaskId::E2,
        TaskId::F1,
        TaskId::F2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskId::A => "a",
            TaskId::B => "b",
            TaskId::C => "c",
            TaskId::D1 => "d1",
            TaskId::D2 => "d2",
            TaskId::D3 => "d3",
            TaskId::E1 => "e1",
            TaskId::E2 => "e2",
            TaskId::F1 => "f1",
            TaskId::F2 => "f2",
        }
    }

    /// Block that executes the task in the accelerator.
    pub fn block(self) -> Block {
        match self {
            TaskId::A | TaskId::C | TaskId::D1 | TaskId::D2 | TaskId::E1 | TaskId::E2 => Block::Discriminator,
            TaskId::B | TaskId::F2 => Block::Generator,
            TaskId::D3 | TaskId::F1 => Block::Diff,
        }
    }

    pub fn procedure(self) -> Procedure {
        match self {
            TaskId::A | TaskId::C | TaskId::D1 | TaskId::D2 => Procedure::DForward,
            TaskId::B | TaskId::D3 => Procedure::GForward,
            TaskId::E1 | TaskId::E2 => Procedure::DBack,
            TaskId::F1 | TaskId::F2 => Procedure::GBack,
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    Discriminator,
    Generator,
    Diff,
}

impl Block {
    pub const ALL: [Block; 3] = [Block::Discriminator, Block::Generator, Block::Diff];

    pub fn name(self) -> &'static str {
        match self {
            Block::Discriminator => "discriminator",
            Block::Generator => "generator",
            Block::Diff => "diff",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Procedure {
    DForward,
    DBack,
    GForward,
    GBack,
}

impl Procedure {
    pub const ALL: [Procedure; 4] = [
        Procedure::DForward,
        Procedure::DBack,
        Procedure::GForward,
        Procedure::GBack,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Procedure::DForward => "D_forward",
            Procedure::DBack => "D_back",
            Procedure::GForward => "G_forward",
            Procedure::GBack => "G_back",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineMode {
    Basic,
    #[default]
    CrossParallel,
}

impl PipelineMode {
    pub fn name(self) -> &'static str {
        match self {
            PipelineMode::Basic => "basic",
            PipelineMode::CrossParallel => "cross_parallel",
        }
    }
}

/// `task` of the iteration `offset` steps back must finish first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dependency {
    pub task: TaskId,
    pub offset: usize,
}

impl Dependency {
    pub fn same(task: TaskId) -> Self {
        Dependency { task, offset: 0 }
    }

    pub fn previous(task: TaskId) -> Self {
        Dependency { task, offset: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: TaskId,
    pub block: Block,
    pub deps: Vec<Dependency>,
}

/// Tasks of one iteration in dispatch order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskGraph {
    pub mode: PipelineMode,
    pub tasks: Vec<TaskSpec>,
}

impl TaskGraph {
    /// Checks that ids are unique and that same-iteration dependencies
    /// point to tasks earlier in the list, which rules out cycles.
    pub fn new(mode: PipelineMode, tasks: Vec<TaskSpec>) -> Result<Self> {
        for (i, t) in tasks.iter().enumerate() {
            if tasks[..i].iter().any(|u| u.id == t.id) {
                return Err(Error::State(format!("task {} listed twice", t.id)));
            }
            for d in &t.deps {
                let pos = tasks.iter().position(|u| u.id == d.task);
                match (pos, d.offset) {
                    (None, _) => {
                        return Err(Error::State(format!(
                            "task {} depends on unknown task {}",
                            t.id, d.task
                        )))
                    }
                    (Some(p), 0) if p >= i => {
                        return Err(Error::State(format!(
                            "task {} depends on {} of the same iteration, which is not scheduled before it",
                            t.id, d.task
                        )))
                    }
                    _ => {}
                }
            }
        }
        Ok(TaskGraph { mode, tasks })
    }

    pub fn task(&self, id: TaskId) -> Option<&TaskSpec> {
        self.tasks.iter().find(|t| t.id == id)
    }
}

pub fn build_task_graph(mode: PipelineMode) -> TaskGraph {
    use TaskId::*;
    let spec = |id: TaskId, deps: Vec<Dependency>| TaskSpec {
        id,
        block: id.block(),
        deps,
    };
    let same = Dependency::same;
    let prev = Dependency::previous;
    let tasks = match mode {
        PipelineMode::Basic => {
            let order = [A, B, C, D1, D2, D3, E1, E2, F1, F2];
            order
                .iter()
                .enumerate()
                .map(|(i, &id)| {
                    let dep = if i == 0 { prev(F2) } else { same(order[i - 1]) };
                    spec(id, vec![dep])
                })
                .collect()
        }
        PipelineMode::CrossParallel => vec![
            spec(A, vec![prev(E2)]),
            spec(B, vec![prev(F2)]),
            spec(D1, vec![same(A)]),
            spec(C, vec![same(B), same(D1)]),
            spec(D2, vec![same(C)]),
            spec(D3, vec![same(D2), same(D1)]),
            spec(E1, vec![same(D3)]),
            spec(F1, vec![same(D3)]),
            spec(E2, vec![same(E1)]),
            spec(F2, vec![same(F1)]),
        ],
    };
    TaskGraph::new(mode, tasks).expect("built-in graphs are acyclic")
}

/// Duration of every step in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepTimeTable {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub e1: f64,
    pub e2: f64,
    pub f1: f64,
    pub f2: f64,
}

impl Default for StepTimeTable {
    fn default() -> Self {
        StepTimeTable {
            a: 0.008,
            b: 0.014,
            c: 0.010,
            d1: 0.004,
            d2: 0.005,
            d3: 0.023,
            e1: 0.021,
            e2: 0.037,
            f1: 0.020,
            f2: 0.038,
        }
    }
}

impl StepTimeTable {
    pub fn uniform(seconds: f64) -> Self {
        Self::from_fn(|_| seconds)
    }

    pub fn from_fn(mut f: impl FnMut(TaskId) -> f64) -> Self {
        StepTimeTable {
            a: f(TaskId::A),
            b: f(TaskId::B),
            c: f(TaskId::C),
            d1: f(TaskId::D1),
            d2: f(TaskId::D2),
            d3: f(TaskId::D3),
            e1: f(TaskId::E1),
            e2: f(TaskId::E2),
            f1: f(TaskId::F1),
            f2: f(TaskId::F2),
        }
    }

    pub fn get(&self, id: TaskId) -> f64 {
        match id {
            TaskId::A => self.a,
            TaskId::B => self.b,
            TaskId::C => self.c,
            TaskId::D1 => self.d1,
            TaskId::D2 => self.d2,
            TaskId::D3 => self.d3,
            TaskId::E1 => self.e1,
            TaskId::E2 => self.e2,
            TaskId::F1 => self.f1,
            TaskId::F2 => self.f2,
        }
    }

    pub fn total(&self) -> f64 {
        TaskId::ALL.iter().map(|&t| self.get(t)).sum()
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_as("step_times")
    }

    /// Validation with errors reported under `prefix.<task>`.
    pub fn validate_as(&self, prefix: &str) -> Result<()> {
        for t in TaskId::ALL {
            let v = self.get(t);
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(
                    format!("{prefix}.{t}"),
                    format!("must be finite and > 0, got {v}"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduledTask {
    pub task: TaskId,
    pub block: Block,
    pub iteration: usize,
    pub start: f64,
    pub end: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleTrace {
    pub graph: TaskGraph,
    pub times: StepTimeTable,
    pub iterations: usize,
    /// In dispatch order: iteration-major, graph order within.
    pub tasks: Vec<ScheduledTask>,
}

/// Earliest-start list schedule of `iterations` iterations. Each task
/// starts once its dependencies have finished and its block has finished
/// the previously dispatched task.
pub fn simulate(graph: &TaskGraph, times: &StepTimeTable, iterations: usize) -> Result<ScheduleTrace> {
    times.validate()?;
    if iterations == 0 {
        return Err(Error::config("iterations", "must be >= 1"));
    }
    let n = graph.tasks.len();
    let mut ends = vec![0.0f64; n * iterations];
    let mut block_free = [0.0f64; 3];
    let mut tasks = Vec::with_capacity(n * iterations);
    let index = |id: TaskId| graph.tasks.iter().position(|t| t.id == id).expect("validated graph");
    for it in 0..iterations {
        for (i, spec) in graph.tasks.iter().enumerate() {
            let mut start = block_free[spec.block as usize];
            for d in &spec.deps {
                if d.offset <= it {
                    start = start.max(ends[(it - d.offset) * n + index(d.task)]);
                }
            }
            let end = start + times.get(spec.id);
            ends[it * n + i] = end;
            block_free[spec.block as usize] = end;
            tasks.push(ScheduledTask {
                task: spec.id,
                block: spec.block,
                iteration: it,
                start,
                end,
            });
        }
    }
    Ok(ScheduleTrace {
        graph: graph.clone(),
        times: *times,
        iterations,
        tasks,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockUsage {
    pub block: Block,
    /// Busy seconds per iteration.
    pub busy: f64,
    /// Idle seconds per steady-state iteration.
    pub idle: f64,
    pub usage: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub mode: PipelineMode,
    pub iterations: usize,
    pub makespan: f64,
    pub latency: f64,
    pub blocks: Vec<BlockUsage>,
}

impl ScheduleTrace {
    pub fn mode(&self) -> PipelineMode {
        self.graph.mode
    }

    pub fn makespan(&self) -> f64 {
        self.tasks.iter().fold(0.0, |m, t| m.max(t.end))
    }

    /// Completion time of the last task of iteration `it`.
    pub fn iteration_end(&self, it: usize) -> f64 {
        self.tasks
            .iter()
            .filter(|t| t.iteration == it)
            .fold(0.0, |m, t| m.max(t.end))
    }

    /// Iterations excluded from steady-state measurement.
    pub fn warmup(&self) -> usize {
        2.min(self.iterations - 1)
    }

    /// Time window `[from, to)` of the steady-state iterations.
    pub fn steady_window(&self) -> (f64, f64) {
        let w = self.warmup();
        let from = if w == 0 { 0.0 } else { self.iteration_end(w - 1) };
        (from, self.iteration_end(self.iterations - 1))
    }

    /// Mean steady-state iteration latency.
    pub fn latency(&self) -> f64 {
        let (from, to) = self.steady_window();
        (to - from) / (self.iterations - self.warmup()) as f64
    }

    pub fn busy_intervals(&self, block: Block) -> Vec<(f64, f64)> {
        self.tasks
            .iter()
            .filter(|t| t.block == block)
            .map(|t| (t.start, t.end))
            .collect()
    }

    pub fn block_busy(&self, block: Block) -> f64 {
        self.graph
            .tasks
            .iter()
            .filter(|t| t.block == block)
            .map(|t| self.times.get(t.id))
            .sum()
    }

    pub fn total_busy(&self) -> f64 {
        self.tasks.iter().map(|t| t.end - t.start).sum()
    }

    pub fn block_usage(&self) -> Vec<BlockUsage> {
        let latency = self.latency();
        Block::ALL
            .iter()
            .map(|&block| {
                let busy = self.block_busy(block);
                BlockUsage {
                    block,
                    busy,
                    idle: latency - busy,
                    usage: busy / latency,
                }
            })
            .collect()
    }

    pub fn summary(&self) -> TraceSummary {
        TraceSummary {
            mode: self.mode(),
            iterations: self.iterations,
            makespan: self.makespan(),
            latency: self.latency(),
            blocks: self.block_usage(),
        }
    }

    /// Share of steady-state time attributed to each training procedure.
    /// Every instant is split equally among the procedures active in it;
    /// instants with nothing running are not attributed.
    pub fn procedure_time_shares(&self) -> Vec<(Procedure, f64)> {
        let (from, to) = self.steady_window();
        let clipped: Vec<(f64, f64, Procedure)> = self
            .tasks
            .iter()
            .map(|t| (t.start.max(from), t.end.min(to), t.task.procedure()))
            .filter(|(s, e, _)| e > s)
            .collect();
        let mut cuts: Vec<f64> = clipped.iter().flat_map(|&(s, e, _)| [s, e]).collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let mut acc = [0.0f64; 4];
        for w in cuts.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let mut active = [false; 4];
            for &(s, e, p) in &clipped {
                if s <= lo && e >= hi {
                    active[p as usize] = true;
                }
            }
            let k = active.iter().filter(|a| **a).count();
            if k > 0 {
                for (a, on) in acc.iter_mut().zip(active) {
                    if on {
                        *a += (hi - lo) / k as f64;
                    }
                }
            }
        }
        let total: f64 = acc.iter().sum();
        Procedure::ALL
            .iter()
            .map(|&p| (p, if total > 0.0 { acc[p as usize] / total } else { 0.0 }))
            .collect()
    }

    /// `task,block,iteration,start,end`, one row per scheduled task.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("task,block,iteration,start,end\n");
        for t in &self.tasks {
            s.push_str(&format!(
                "{},{},{},{:.9},{:.9}\n",
                t.task,
                t.block.name(),
                t.iteration,
                t.start,
                t.end
            ));
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockComparison {
    pub block: Block,
    pub idle_basic: f64,
    pub idle_cross: f64,
    pub usage_basic: f64,
    pub usage_cross: f64,
    /// `usage_cross / usage_basic`.
    pub usage_ratio: f64,
    /// `idle_basic / idle_cross`.
    pub idle_improvement: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilizationReport {
    pub latency_basic: f64,
    pub latency_cross: f64,
    pub speedup: f64,
    pub blocks: Vec<BlockComparison>,
}

impl UtilizationReport {
    pub fn block(&self, block: Block) -> &BlockComparison {
        self.blocks
            .iter()
            .find(|b| b.block == block)
            .expect("every block is reported")
    }
}

pub fn utilization_report(basic: &ScheduleTrace, cross: &ScheduleTrace) -> Result<UtilizationReport> {
    if basic.times != cross.times {
        return Err(Error::State(
            "traces were simulated with different step time tables".into(),
        ));
    }
    let (lb, lc) = (basic.latency(), cross.latency());
    let blocks = basic
        .block_usage()
        .iter()
        .zip(cross.block_usage())
        .map(|(b, c)| BlockComparison {
            block: b.block,
            idle_basic: b.idle,
            idle_cross: c.idle,
            usage_basic: b.usage,
            usage_cross: c.usage,
            usage_ratio: if b.usage > 0.0 { c.usage / b.usage } else { 0.0 },
            idle_improvement: if c.idle > 0.0 { b.idle / c.idle } else { f64::INFINITY },
        })
        .collect();
    Ok(UtilizationReport {
        latency_basic: lb,
        latency_cross: lc,
        speedup: lb / lc,
        blocks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(mode: PipelineMode, times: &StepTimeTable, n: usize) -> ScheduleTrace {
        simulate(&build_task_graph(mode), times, n).unwrap()
    }

    #[test]
    fn basic_latency_is_the_step_sum() {
        let t = run(PipelineMode::Basic, &StepTimeTable::uniform(1.0), 5);
        assert_eq!(t.latency(), 10.0);
        assert_eq!(t.makespan(), 50.0);
    }

    #[test]
    fn calibrated_table_reproduces_both_pipelines() {
        let times = StepTimeTable::default();
        let b = run(PipelineMode::Basic, &times, 10);
        let c = run(PipelineMode::CrossParallel, &times, 10);
        let r = utilization_report(&b, &c).unwrap();
        assert!((r.latency_basic - 0.18).abs() < 1e-9);
        assert!((r.latency_cross - 0.11).abs() < 1e-9);
        let d = r.block(Block::Discriminator);
        let g = r.block(Block::Generator);
        assert!((d.idle_improvement - 3.8).abs() < 0.05, "{}", d.idle_improvement);
        assert!((g.idle_improvement - 2.2).abs() < 0.05, "{}", g.idle_improvement);
    }

    #[test]
    fn discriminator_waits_for_generation_before_c() {
        let times = StepTimeTable {
            a: 0.1,
            d1: 0.1,
            b: 0.5,
            ..StepTimeTable::uniform(1.0)
        };
        let t = run(PipelineMode::CrossParallel, &times, 1);
        let find = |id| t.tasks.iter().find(|s| s.task == id && s.iteration == 0).unwrap();
        let gap = find(TaskId::C).start - find(TaskId::D1).end;
        assert!((gap - (0.5 - 0.1 - 0.1)).abs() < 1e-12);
    }

    #[test]
    fn single_block_chain_is_fully_used() {
        let tasks = TaskId::ALL
            .iter()
            .enumerate()
            .map(|(i, &id)| TaskSpec {
                id,
                block: Block::Discriminator,
                deps: if i == 0 {
                    vec![]
                } else {
                    vec![Dependency::same(TaskId::ALL[i - 1])]
                },
            })
            .collect();
        let g = TaskGraph::new(PipelineMode::Basic, tasks).unwrap();
        let t = simulate(&g, &StepTimeTable::default(), 6).unwrap();
        let u = t.block_usage();
        assert!((u[0].usage - 1.0).abs() < 1e-12);
        assert_eq!(u[1].usage, 0.0);
        assert_eq!(u[2].usage, 0.0);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let g = build_task_graph(PipelineMode::Basic);
        let bad = StepTimeTable {
            e2: 0.0,
            ..StepTimeTable::default()
        };
        let err = simulate(&g, &bad, 3).unwrap_err().to_string();
        assert!(err.contains("e2"), "{err}");
        assert!(simulate(&g, &StepTimeTable::default(), 0).is_err());
        let b = run(PipelineMode::Basic, &StepTimeTable::default(), 3);
        let c = run(PipelineMode::CrossParallel, &StepTimeTable::uniform(0.01), 3);
        assert!(utilization_report(&b, &c).is_err());
        let cyclic = vec![
            TaskSpec {
                id: TaskId::A,
                block: Block::Discriminator,
                deps: vec![Dependency::same(TaskId::B)],
            },
            TaskSpec {
                id: TaskId::B,
                block: Block::Generator,
                deps: vec![Dependency::same(TaskId::A)],
            },
        ];
        assert!(TaskGraph::new(PipelineMode::Basic, cyclic).is_err());
    }

    #[test]
    fn procedure_shares_sum_to_one() {
        for mode in [PipelineMode::Basic, PipelineMode::CrossParallel] {
            let t = run(mode, &StepTimeTable::default(), 8);
            let s: f64 = t.procedure_time_shares().iter().map(|p| p.1).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn csv_has_one_row_per_task() {
        let t = run(PipelineMode::CrossParallel, &StepTimeTable::default(), 2);
        let csv = t.to_csv();
        assert_eq!(csv.lines().count(), 21);
        assert!(csv.starts_with("task,block,iteration,start,end\na,discriminator,0,0.000000000,0.008000000\n"));
    }
}
