mod common;

use common::*;
use memgan_core::pipeline::{build_task_graph, simulate, utilization_report, Block, PipelineMode, StepTimeTable};
use proptest::prelude::*;

fn table() -> impl Strategy<Value = StepTimeTable> {
    prop::collection::vec(1e-3f64..5e-2, 10).prop_map(|v| {
        let mut it = v.into_iter();
        StepTimeTable::from_fn(|_| it.next().unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn schedules_respect_the_machine(times in table(), iterations in 1usize..12) {
        for mode in [PipelineMode::Basic, PipelineMode::CrossParallel] {
            let trace = simulate(&build_task_graph(mode), &times, iterations).unwrap();
            if let Err(e) = check_schedule(&trace) {
                return Err(TestCaseError::fail(format!("{}: {e}", mode.name())));
            }
        }
    }

    #[test]
    fn cross_parallel_is_never_slower(times in table(), iterations in 2usize..12) {
        let basic = simulate(&build_task_graph(PipelineMode::Basic), &times, iterations).unwrap();
        let cross = simulate(&build_task_graph(PipelineMode::CrossParallel), &times, iterations).unwrap();
        prop_assert!(cross.latency() <= basic.latency() + 1e-12);
        prop_assert!(cross.makespan() <= basic.makespan() + 1e-12);
        prop_assert!((basic.latency() - times.total()).abs() < 1e-9);
        let report = utilization_report(&basic, &cross).unwrap();
        prop_assert!(report.speedup >= 1.0 - 1e-12);
        for b in Block::ALL {
            prop_assert!(report.block(b).idle_cross <= report.block(b).idle_basic + 1e-12);
        }
    }

    #[test]
    fn simulation_is_deterministic(times in table(), iterations in 1usize..8) {
        for mode in [PipelineMode::Basic, PipelineMode::CrossParallel] {
            let g = build_task_graph(mode);
            let a = simulate(&g, &times, iterations).unwrap();
            let b = simulate(&g, &times, iterations).unwrap();
            prop_assert_eq!(a.to_csv(), b.to_csv());
        }
    }

    #[test]
    fn usage_and_shares_are_fractions(times in table(), iterations in 1usize..8) {
        let trace = simulate(&build_task_graph(PipelineMode::CrossParallel), &times, iterations).unwrap();
        for u in trace.block_usage() {
            prop_assert!(u.usage >= 0.0 && u.usage <= 1.0 + 1e-12);
            prop_assert!(u.idle >= -1e-12);
        }
        let total: f64 = trace.procedure_time_shares().iter().map(|(_, s)| s).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
    }
}

#[test]
fn validator_rejects_a_broken_trace() {
    let mut trace = simulate(
        &build_task_graph(PipelineMode::CrossParallel),
        &StepTimeTable::default(),
        3,
    )
    .unwrap();
    assert!(check_schedule(&trace).is_ok());
    let i = trace.tasks.iter().position(|t| t.task.name() == "e1").unwrap();
    trace.tasks[i].start -= 0.01;
    trace.tasks[i].end -= 0.01;
    assert!(check_schedule(&trace).is_err());
}
