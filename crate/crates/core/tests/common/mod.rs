//! Generators and naive reference implementations shared by the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::{BTreeMap, BTreeSet, HashMap};

use frontier::attention::{SegmentKind, SegmentLayout};
use frontier::cache::{PrefixCache, SequenceHandle, TokenId};
use frontier::chains::{ReasoningChain, DELIMITER};
use frontier::graph::{dag_to_petri, NodeRole, PetriNet, ReasoningDag, SemanticToken};
use frontier::plan::{Outline, PlanDocument, Step, TraceDocument};
use frontier::scheduler::Marking;
use petgraph::algo::is_isomorphic_matching;
use petgraph::graph::DiGraph;
use rand::rngs::StdRng;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn node_name(k: usize) -> String {
    format!("v{k:02}")
}

/// Random valid reasoning DAG with `2..=max_nodes` nodes. Node 0 is a source
/// and node 1 always hangs off it; isolated nodes are attached below node 0.
pub fn random_dag(rng: &mut StdRng, max_nodes: usize) -> ReasoningDag {
    let n = rng.random_range(2..=max_nodes.max(2));
    let mut preds: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    preds[1].insert(0);
    for k in 2..n {
        if rng.random_bool(0.8) {
            let want = rng.random_range(1..=k.min(4));
            while preds[k].len() < want {
                preds[k].insert(rng.random_range(0..k));
            }
        }
    }
    let mut has_succ = vec![false; n];
    for ps in &preds {
        for &p in ps {
            has_succ[p] = true;
        }
    }
    for k in 2..n {
        if preds[k].is_empty() && !has_succ[k] {
            preds[k].insert(0);
        }
    }
    let mut has_succ = vec![false; n];
    for ps in &preds {
        for &p in ps {
            has_succ[p] = true;
        }
    }
    let mut dag = ReasoningDag::new();
    for k in 0..n {
        let role = match (preds[k].is_empty(), has_succ[k]) {
            (true, _) => NodeRole::Source,
            (false, false) => NodeRole::Conclusion,
            (false, true) => NodeRole::Hypothesis,
        };
        dag.add_node(node_name(k), format!("state {k}"), role);
    }
    for (k, ps) in preds.iter().enumerate() {
        for &p in ps {
            dag.add_edge(node_name(p), node_name(k));
        }
    }
    dag
}

pub fn random_net(rng: &mut StdRng, max_places: usize) -> PetriNet {
    dag_to_petri(&random_dag(rng, max_places)).expect("generated DAGs are valid")
}

/// Arbitrary marking: every place filled or empty at random.
pub fn random_marking(rng: &mut StdRng, net: &PetriNet) -> Marking {
    let mut m = Marking::initial(net);
    for slot in m.by_place.values_mut() {
        *slot = rng.random_bool(0.5).then(SemanticToken::empty);
    }
    m
}

/// Enabled set, fork groups and join set written directly from the
/// definitions: inputs all filled, outputs all empty; groups are the connected
/// components of enabled transitions under "shares an input place".
pub fn naive_frontier(net: &PetriNet, m: &Marking) -> (BTreeSet<String>, Vec<BTreeSet<String>>, BTreeSet<String>) {
    let filled = |p: &String| m.by_place.get(p).is_some_and(|t| t.is_some());
    let enabled: BTreeSet<String> = net
        .transitions()
        .iter()
        .filter(|(_, t)| t.pre_set.iter().all(filled) && !t.post_set.iter().any(filled))
        .map(|(id, _)| id.clone())
        .collect();
    let mut groups: Vec<BTreeSet<String>> = Vec::new();
    for t in &enabled {
        let inputs = &net.transitions()[t].pre_set;
        let (touching, rest): (Vec<_>, Vec<_>) = groups
            .into_iter()
            .partition(|g| g.iter().any(|u| !net.transitions()[u].pre_set.is_disjoint(inputs)));
        let mut merged: BTreeSet<String> = touching.into_iter().flatten().collect();
        merged.insert(t.clone());
        groups = rest;
        groups.push(merged);
    }
    groups.sort();
    let joins = enabled
        .iter()
        .filter(|t| net.transitions()[*t].pre_set.len() >= 2)
        .cloned()
        .collect();
    (enabled, groups, joins)
}

/// Longest chain of transitions, by memoised recursion over producers.
pub fn naive_depth(net: &PetriNet) -> usize {
    fn level(net: &PetriNet, place: &str, memo: &mut HashMap<String, usize>) -> usize {
        if let Some(&l) = memo.get(place) {
            return l;
        }
        let l = match net.producer_of(place) {
            None => 0,
            Some(t) => {
                let pre: Vec<String> = net.transitions()[t].pre_set.iter().cloned().collect();
                1 + pre.iter().map(|p| level(net, p, memo)).max().unwrap_or(0)
            }
        };
        memo.insert(place.to_string(), l);
        l
    }
    let mut memo = HashMap::new();
    net.places().iter().map(|p| level(net, p, &mut memo)).max().unwrap_or(0)
}

const WORDS: &[&str] = &[
    "alpha", "beta", "gamma", "delta", "so", "then", "because", "hence", "x", "y", "2", "+", "=",
];

pub fn random_text(rng: &mut StdRng, min_words: usize, max_words: usize) -> String {
    let n = rng.random_range(min_words..=max_words);
    (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

/// Plan with `1..=max_outlines` outlines and exactly one terminal outline.
pub fn random_plan(rng: &mut StdRng, max_outlines: usize) -> PlanDocument {
    let n = rng.random_range(1..=max_outlines.max(1));
    let mut deps: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n + 1];
    for i in 2..=n {
        for d in 1..i {
            if rng.random_bool(0.35) {
                deps[i].insert(d);
            }
        }
        if !deps[i].is_empty() && rng.random_bool(0.2) {
            deps[i].insert(0);
        }
    }
    for i in 1..n {
        if !(i + 1..=n).any(|j| deps[j].contains(&i)) {
            let j = rng.random_range(i + 1..=n);
            deps[j].insert(i);
        }
    }
    PlanDocument {
        goal: if rng.random_bool(0.8) { random_text(rng, 1, 3) } else { String::new() },
        outlines: (1..=n)
            .map(|i| Outline {
                index: i,
                deps: deps[i].iter().copied().collect(),
                description: format!("{}{DELIMITER}s{i}", random_text(rng, 1, 2)),
            })
            .collect(),
    }
}

/// Wide plan: `levels` layers of 2..=8 parallel steps, each step of a later
/// layer depending on a non-empty subset of the previous one, and a final step
/// joining every open branch.
pub fn branch_heavy_plan(rng: &mut StdRng, levels: usize) -> PlanDocument {
    let mut outlines: Vec<Outline> = Vec::new();
    let mut prev: Vec<usize> = Vec::new();
    let mut used = BTreeSet::new();
    for _ in 0..levels.max(1) {
        let width = rng.random_range(2..=8);
        let mut layer = Vec::new();
        for _ in 0..width {
            let index = outlines.len() + 1;
            let mut deps = Vec::new();
            if !prev.is_empty() {
                let mut pool = prev.clone();
                pool.shuffle(rng);
                deps = pool[..rng.random_range(1..=pool.len().min(3))].to_vec();
                deps.sort_unstable();
            }
            used.extend(deps.iter().copied());
            outlines.push(Outline {
                index,
                deps,
                description: format!("branch{DELIMITER}b{index}"),
            });
            layer.push(index);
        }
        prev = layer;
    }
    let open: Vec<usize> = (1..=outlines.len()).filter(|i| !used.contains(i)).collect();
    let index = outlines.len() + 1;
    outlines.push(Outline {
        index,
        deps: open,
        description: format!("merge{DELIMITER}b{index}"),
    });
    PlanDocument {
        goal: "answer".into(),
        outlines,
    }
}

/// Full trace for a plan with steps in plan order.
pub fn random_trace(rng: &mut StdRng, max_outlines: usize) -> TraceDocument {
    let plan = random_plan(rng, max_outlines);
    let steps = plan
        .outlines
        .iter()
        .map(|o| Step {
            index: o.index,
            text: random_text(rng, 1, 12),
        })
        .collect();
    TraceDocument {
        preamble: rng.random_bool(0.5).then(|| format!("Path 1: {}", random_text(rng, 1, 4))),
        plan,
        steps,
        conclusion: random_text(rng, 1, 6),
    }
}

/// Random layout of at most `max_tokens` tokens; every step has length >= 1
/// and dependencies only on earlier steps.
pub fn random_layout(rng: &mut StdRng, max_tokens: usize) -> SegmentLayout {
    let pre = rng.random_range(0..=8.min(max_tokens / 4));
    let conclusion = rng.random_range(0..=6.min(max_tokens / 8));
    let budget = max_tokens - pre - conclusion;
    let n_steps = rng.random_range(1..=budget.clamp(1, 7));
    let mut steps = Vec::new();
    let mut deps = BTreeMap::new();
    let mut left = budget;
    for k in 1..=n_steps {
        let reserve = n_steps - k;
        let len = rng.random_range(1..=(left - reserve).clamp(1, 12));
        left -= len;
        steps.push((k, len));
        let ds: BTreeSet<usize> = (1..k).filter(|_| rng.random_bool(0.4)).collect();
        deps.insert(k, ds);
    }
    SegmentLayout::new(pre, &steps, &deps, conclusion).expect("generated layouts are valid")
}

/// Three-case rule evaluated from a linear scan of the segments: block the
/// future, block distinct segments of one layer, allow the rest.
pub fn naive_mask_cell(layout: &SegmentLayout, i: usize, j: usize) -> bool {
    let seg = |t: usize| {
        layout
            .segments()
            .iter()
            .position(|s| s.start <= t && t < s.end)
            .expect("token inside some segment")
    };
    if j > i {
        return false;
    }
    let (a, b) = (&layout.segments()[seg(i)], &layout.segments()[seg(j)]);
    let same_step = (a.kind, a.step) == (b.kind, b.step);
    !(a.layer == b.layer && !same_step)
}

pub fn step_segment(layout: &SegmentLayout, step: usize) -> (usize, usize) {
    let s = layout.step(step).expect("known step");
    assert_eq!(s.kind, SegmentKind::Step);
    (s.start, s.end)
}

/// Flat reference for the prefix cache: every handle owns a full copy.
#[derive(Default)]
pub struct FlatStore {
    pub seqs: BTreeMap<SequenceHandle, Vec<TokenId>>,
}

impl FlatStore {
    pub fn storage(&self) -> usize {
        self.seqs.values().map(Vec::len).sum()
    }
}

/// Applies a random mix of insert, append, fork, join_merge and release to
/// both stores, checking after every operation. Returns a description of the
/// first disagreement.
pub fn cache_vs_flat(rng: &mut StdRng, ops: usize) -> Result<(), String> {
    let cache = PrefixCache::new();
    let mut flat = FlatStore::default();
    let alphabet = rng.random_range(2..=6u32);
    let tokens = |rng: &mut StdRng, max: usize| -> Vec<TokenId> {
        let n = rng.random_range(0..=max);
        (0..n).map(|_| rng.random_range(0..alphabet)).collect()
    };
    for step in 0..ops {
        let live: Vec<SequenceHandle> = flat.seqs.keys().copied().collect();
        let pick = |rng: &mut StdRng| live[rng.random_range(0..live.len())];
        let op = if live.is_empty() { 0 } else { rng.random_range(0..6) };
        let what = match op {
            0 => {
                let t = tokens(rng, 8);
                let h = cache.insert(&t);
                flat.seqs.insert(h, t);
                "insert"
            }
            1 | 2 => {
                let h = pick(rng);
                let t = tokens(rng, 6);
                cache.append(h, &t).map_err(|e| e.to_string())?;
                flat.seqs.get_mut(&h).unwrap().extend(t);
                "append"
            }
            3 => {
                let h = pick(rng);
                let n = rng.random_range(1..=3);
                for f in cache.fork(h, n).map_err(|e| e.to_string())? {
                    let t = flat.seqs[&h].clone();
                    flat.seqs.insert(f, t);
                }
                "fork"
            }
            4 => {
                let p = pick(rng);
                let prefix = flat.seqs[&p].clone();
                let mut branches: Vec<SequenceHandle> =
                    live.iter().copied().filter(|h| flat.seqs[h].starts_with(&prefix)).collect();
                branches.shuffle(rng);
                branches.truncate(rng.random_range(1..=3));
                let j = cache.join_merge(&branches, p).map_err(|e| e.to_string())?;
                let mut joined = prefix.clone();
                for b in &branches {
                    joined.extend_from_slice(&flat.seqs[b][prefix.len()..]);
                }
                flat.seqs.insert(j, joined);
                "join_merge"
            }
            _ => {
                let h = pick(rng);
                cache.release(h).map_err(|e| e.to_string())?;
                flat.seqs.remove(&h);
                "release"
            }
        };
        for (h, want) in &flat.seqs {
            let got = cache.materialize(*h).map_err(|e| e.to_string())?;
            if &got != want {
                return Err(format!("op {step} ({what}): {h} holds {got:?}, flat store {want:?}"));
            }
        }
        let physical = cache.stats().physical_tokens;
        if physical > flat.storage() {
            return Err(format!(
                "op {step} ({what}): {physical} physical tokens, flat store {}",
                flat.storage()
            ));
        }
        cache.check_invariants().map_err(|e| format!("op {step} ({what}): {e}"))?;
    }
    for h in flat.seqs.keys() {
        cache.release(*h).map_err(|e| e.to_string())?;
    }
    match cache.stats().physical_tokens {
        0 => Ok(()),
        n => Err(format!("{n} tokens left after releasing every handle")),
    }
}

/// Acyclic chain set: entities are ranked once and every chain walks up the
/// ranking.
pub fn random_acyclic_chains(rng: &mut StdRng) -> Vec<ReasoningChain> {
    let pool = rng.random_range(3..=10);
    let mut entities: Vec<String> = (0..pool).map(|k| format!("E{k}")).collect();
    entities.shuffle(rng);
    let count = rng.random_range(1..=6);
    (1..=count)
        .map(|index| {
            let len = rng.random_range(2..=pool.min(5));
            let mut picks: Vec<usize> = rand::seq::index::sample(rng, pool, len).into_vec();
            picks.sort_unstable();
            ReasoningChain::new(index, picks.into_iter().map(|k| entities[k].clone()))
        })
        .collect()
}

/// An acyclic set plus one chain that walks an existing edge backwards.
pub fn random_cyclic_chains(rng: &mut StdRng) -> Vec<ReasoningChain> {
    let mut chains = random_acyclic_chains(rng);
    let victim = chains[rng.random_range(0..chains.len())].clone();
    let k = rng.random_range(0..victim.entities.len() - 1);
    let (a, b) = (victim.entities[k].clone(), victim.entities[k + 1].clone());
    let at = rng.random_range(0..=chains.len());
    chains.insert(at, ReasoningChain::new(chains.len() + 1, [b, a]));
    for (i, c) in chains.iter_mut().enumerate() {
        c.index = i + 1;
    }
    chains
}

/// Text after the last delimiter of an outline description.
pub fn description_target(description: &str) -> &str {
    description.rsplit(DELIMITER).next().unwrap_or(description)
}

/// Compares two DAGs up to node ids. Source nodes are merged into one anonymous
/// node on both sides; other nodes must agree on role and on `label`.
pub fn isomorphic_modulo_sources(
    a: &ReasoningDag,
    b: &ReasoningDag,
    label_a: impl Fn(&str) -> String,
    label_b: impl Fn(&str) -> String,
) -> bool {
    fn build(dag: &ReasoningDag, label: &dyn Fn(&str) -> String) -> DiGraph<(NodeRole, String), ()> {
        let mut g = DiGraph::new();
        let source = g.add_node((NodeRole::Source, String::new()));
        let mut index = BTreeMap::new();
        for (id, node) in dag.nodes() {
            let ix = match node.role {
                NodeRole::Source => source,
                role => g.add_node((role, label(&node.label))),
            };
            index.insert(id.as_str(), ix);
        }
        let mut seen = BTreeSet::new();
        for (from, to) in dag.edges() {
            let e = (index[from.as_str()], index[to.as_str()]);
            if seen.insert(e) {
                g.add_edge(e.0, e.1, ());
            }
        }
        g
    }
    let ga = build(a, &label_a);
    let gb = build(b, &label_b);
    is_isomorphic_matching(&ga, &gb, |x, y| x == y, |_, _| true)
}
