mod common;

use frontier::engine::{
    replay_trace, run_inference, serial_reference, EngineOptions, RunMetrics, ScriptedProducer, SyntheticProducer,
};
use frontier::graph::dag_to_petri;
use frontier::par::ExecMode;
use frontier::plan::{parse_trace, plan_to_dag, serialize_trace, verify_syntax, ConclusionPolicy};
use proptest::prelude::*;

fn options(mode: ExecMode) -> EngineOptions {
    EngineOptions {
        mode,
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn parallel_run_equals_serial_reference(seed in any::<u64>()) {
        let plan = common::random_plan(&mut common::rng(seed), 8);
        let producer = SyntheticProducer::new(None, &plan, seed).with_lengths(1, 12);
        let par = run_inference("what follows", &producer, options(ExecMode::Parallel)).unwrap();
        let ser = serial_reference("what follows", &producer, options(ExecMode::Sequential)).unwrap();
        prop_assert_eq!(serialize_trace(&par.trace), serialize_trace(&ser.trace));
        prop_assert!(verify_syntax(&par.trace).ok);
        let net = dag_to_petri(&plan_to_dag(&plan, ConclusionPolicy::Single).unwrap()).unwrap();
        prop_assert_eq!(par.metrics.rounds, net.topological_depth());
        prop_assert_eq!(ser.metrics.rounds, plan.outlines.len());
        prop_assert!(par.metrics.speedup >= 1.0);
        prop_assert_eq!(ser.metrics.speedup, 1.0);
    }

    #[test]
    fn scripted_run_reproduces_its_trace(seed in any::<u64>()) {
        let doc = common::random_trace(&mut common::rng(seed), 8);
        let producer = ScriptedProducer::from_trace(&doc).with_chunk_size(5);
        let report = run_inference("", &producer, EngineOptions::default()).unwrap();
        let mut steps = report.trace.steps.clone();
        steps.sort_by_key(|s| s.index);
        prop_assert_eq!(&steps, &doc.steps);
        prop_assert_eq!(&report.trace.plan, &doc.plan);
        prop_assert_eq!(&report.trace.preamble, &doc.preamble);
        prop_assert_eq!(&report.trace.conclusion, &doc.conclusion);
        let replay = replay_trace(&parse_trace(&serialize_trace(&doc)).unwrap(), EngineOptions::default()).unwrap();
        prop_assert_eq!(replay.metrics.rounds, report.metrics.rounds);
        prop_assert_eq!(replay.log.len(), doc.steps.len());
    }

    #[test]
    fn cost_model_bounds(plan in 0usize..100, rounds in prop::collection::vec(prop::collection::vec(1usize..200, 1..9), 1..6), conc in 0usize..100) {
        let m = RunMetrics::from_rounds(plan, &rounds, conc);
        let total: usize = rounds.iter().flatten().sum();
        let critical: usize = rounds.iter().map(|r| r.iter().max().unwrap()).sum();
        prop_assert_eq!(m.simulated_serial_cost, plan + total + conc);
        prop_assert_eq!(m.simulated_parallel_cost, plan + critical + conc);
        prop_assert!(m.speedup >= 1.0);
        prop_assert!(m.speedup <= rounds.iter().map(Vec::len).max().unwrap() as f64);
    }
}

#[test]
fn eight_equal_branches_give_four_and_a_half() {
    let m = RunMetrics::from_rounds(50, &[vec![100; 8]], 50);
    assert_eq!((m.simulated_serial_cost, m.simulated_parallel_cost), (900, 200));
    assert_eq!(m.speedup, 4.5);
}
