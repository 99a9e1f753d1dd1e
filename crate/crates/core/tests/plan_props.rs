mod common;

use frontier::graph::dag_to_petri;
use frontier::plan::{
    parse_plan, parse_trace, plan_to_dag, serialize_plan, serialize_trace, verify_syntax, ConclusionPolicy,
    PlanError, SyntaxCode,
};
use proptest::prelude::*;

proptest! {
    #[test]
    fn plan_round_trip(seed in any::<u64>()) {
        let plan = common::random_plan(&mut common::rng(seed), 10);
        let text = serialize_plan(&plan);
        let back = parse_plan(&text).unwrap();
        prop_assert_eq!(&back, &plan);
        prop_assert_eq!(serialize_plan(&back), text);
    }

    #[test]
    fn trace_round_trip(seed in any::<u64>()) {
        let doc = common::random_trace(&mut common::rng(seed), 10);
        let text = serialize_trace(&doc);
        let back = parse_trace(&text).unwrap();
        prop_assert_eq!(&back, &doc);
        prop_assert_eq!(serialize_trace(&back), text);
    }

    #[test]
    fn crlf_input_parses_the_same(seed in any::<u64>()) {
        let doc = common::random_trace(&mut common::rng(seed), 6);
        let text = serialize_trace(&doc).replace('\n', "\r\n");
        prop_assert_eq!(parse_trace(&text).unwrap(), doc);
    }

    #[test]
    fn clean_traces_compile_to_nets(seed in any::<u64>()) {
        let doc = common::random_trace(&mut common::rng(seed), 10);
        prop_assert!(verify_syntax(&doc).ok, "{:?}", verify_syntax(&doc));
        let dag = plan_to_dag(&doc.plan, ConclusionPolicy::Single).unwrap();
        let net = dag_to_petri(&dag).unwrap();
        prop_assert_eq!(net.transitions().len(), doc.plan.outlines.len());
    }

    #[test]
    fn misordered_steps_are_reported(seed in any::<u64>()) {
        let mut doc = common::random_trace(&mut common::rng(seed), 8);
        let Some(pos) = doc.plan.outlines.iter().position(|o| o.step_deps().next().is_some()) else {
            return Ok(());
        };
        let dep = doc.plan.outlines[pos].step_deps().next().unwrap();
        let step = doc.steps.remove(pos);
        let at = doc.steps.iter().position(|s| s.index == dep).unwrap();
        doc.steps.insert(at, step);
        prop_assert!(verify_syntax(&doc).has(SyntaxCode::OrderViolation));
    }
}

#[test]
fn two_sinks_need_the_multiple_policy() {
    let plan = parse_plan("<Plan><Outline id=\"1\" deps=\"\">a</Outline><Outline id=\"2\" deps=\"\">b</Outline></Plan>").unwrap();
    assert_eq!(plan_to_dag(&plan, ConclusionPolicy::Single), Err(PlanError::MultipleConclusions(vec![1, 2])));
    assert_eq!(plan_to_dag(&plan, ConclusionPolicy::Multiple).unwrap().nodes().len(), 3);
}
