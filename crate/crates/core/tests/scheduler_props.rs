mod common;

use std::collections::BTreeMap;

use frontier::cache::PrefixCache;
use frontier::par::ExecMode;
use frontier::scheduler::{compute_frontier, ProducerError, Scheduler, StepOutput, StepRequest};
use frontier::text::tokenize;
use proptest::prelude::*;

fn echo(r: &StepRequest) -> Result<StepOutput, ProducerError> {
    Ok(StepOutput::from_text(format!("{} after {} words", r.trans_id.as_deref().unwrap_or("?"), r.context.split_whitespace().count())))
}

fn seeded<'a>(net: &'a frontier::graph::PetriNet, cache: &'a PrefixCache, mode: ExecMode) -> Scheduler<'a> {
    let mut s = Scheduler::new(net, cache, mode);
    let marked: Vec<String> = net.initially_marked().map(String::from).collect();
    for p in marked {
        let text = format!("input {p}");
        s.seed(&p, text.clone(), &tokenize(&text)).unwrap();
    }
    s
}

proptest! {
    #[test]
    fn frontier_matches_definition(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let net = common::random_net(&mut rng, 12);
        let m = common::random_marking(&mut rng, &net);
        let f = compute_frontier(&net, &m);
        let (enabled, groups, joins) = common::naive_frontier(&net, &m);
        prop_assert_eq!(f.enabled, enabled);
        let mut got = f.fork_groups.clone();
        got.sort();
        prop_assert_eq!(got, groups);
        prop_assert_eq!(f.join_set, joins);
    }

    #[test]
    fn every_transition_fires_once_in_depth_rounds(seed in any::<u64>()) {
        let net = common::random_net(&mut common::rng(seed), 12);
        let cache = PrefixCache::new();
        let mut s = seeded(&net, &cache, ExecMode::Parallel);
        let rounds = s.run_to_completion(&echo).unwrap();
        prop_assert_eq!(rounds, net.topological_depth());
        let mut fired: BTreeMap<&str, usize> = BTreeMap::new();
        for r in s.log() {
            *fired.entry(r.trans_id.as_str()).or_default() += 1;
            prop_assert_eq!(r.round, net.layer(&r.trans_id).unwrap());
        }
        prop_assert_eq!(fired.len(), net.transitions().len());
        prop_assert!(fired.values().all(|&n| n == 1));
        prop_assert!(s.frontier().is_empty());
    }

    #[test]
    fn serial_and_parallel_produce_the_same_texts(seed in any::<u64>()) {
        let net = common::random_net(&mut common::rng(seed), 12);
        let cache = PrefixCache::new();
        let mut par = seeded(&net, &cache, ExecMode::Parallel);
        par.run_to_completion(&echo).unwrap();
        let mut ser = seeded(&net, &cache, ExecMode::Sequential);
        let rounds = ser.run_serial(&echo).unwrap();
        prop_assert_eq!(rounds, net.transitions().len());
        prop_assert_eq!(par.step_texts(), ser.step_texts());
    }

    #[test]
    fn released_scheduler_leaves_no_storage(seed in any::<u64>()) {
        let net = common::random_net(&mut common::rng(seed), 12);
        let cache = PrefixCache::new();
        {
            let mut s = seeded(&net, &cache, ExecMode::Sequential);
            s.run_to_completion(&echo).unwrap();
            let terminals: Vec<String> = net.terminal_places().map(String::from).collect();
            let refs: Vec<&str> = terminals.iter().map(String::as_str).collect();
            let (token, _) = s.merge_places(&refs).unwrap();
            prop_assert_eq!(token.history.len(), net.transitions().len() + net.initially_marked().count());
            cache.check_invariants().unwrap();
            s.release_all().unwrap();
        }
        prop_assert_eq!(cache.stats().physical_tokens, 0);
        prop_assert_eq!(cache.stats().live_handles, 0);
    }
}

#[test]
fn failing_producer_publishes_nothing() {
    let net = common::random_net(&mut common::rng(3), 12);
    let cache = PrefixCache::new();
    let mut s = seeded(&net, &cache, ExecMode::Parallel);
    let before = s.marking().clone();
    let fail = |_: &StepRequest| -> Result<StepOutput, ProducerError> { Err(ProducerError("down".into())) };
    assert!(s.step_round(&fail).is_err());
    assert_eq!(s.marking(), &before);
    assert!(s.log().is_empty());
}
