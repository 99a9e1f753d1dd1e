//! Indexed linear reasoning chains (`N: A->B->C`) and their compilation into
//! a shared-node DAG and a plan.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{dag_to_petri, NetError, NodeRole, ReasoningDag, ValidationReport};
use crate::plan::{Outline, PlanDocument};

pub const DEFAULT_CHAIN_CAP: usize = 10;
pub const DELIMITER: &str = "->";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningChain {
    pub index: usize,
    pub entities: Vec<String>,
}

impl ReasoningChain {
    pub fn new(index: usize, entities: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            index,
            entities: entities.into_iter().map(Into::into).collect(),
        }
    }

    pub fn render(&self) -> String {
        format!("{}: {}", self.index, self.entities.join(DELIMITER))
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entities.windows(2).map(|w| (w[0].as_str(), w[1].as_str()))
    }
}

/// Handling of an entity repeated immediately (`A->A`).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RepeatMode {
    #[default]
    Strict,
    Lenient,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChainError {
    #[error("line {line}: {message}")]
    BadLine { line: usize, message: String },
    #[error("line {line}: empty entity")]
    EmptyEntity { line: usize },
    #[error("no chains to merge")]
    NoChains,
    /// `chains` are positions in the merged input whose edges lie on a cycle.
    #[error("merged chains contain a cycle through {entities:?}")]
    CycleDetected { entities: Vec<String>, chains: Vec<usize> },
    #[error("graph is invalid: {0}")]
    InvalidGraph(ValidationReport),
}

fn bad(line: usize, message: impl Into<String>) -> ChainError {
    ChainError::BadLine {
        line,
        message: message.into(),
    }
}

fn parse_line(line_no: usize, line: &str, mode: RepeatMode) -> Result<ReasoningChain, ChainError> {
    let (index, body) = line
        .split_once(": ")
        .ok_or_else(|| bad(line_no, "expected `N: A->B`"))?;
    if index.is_empty() || !index.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad(line_no, format!("bad index {index:?}")));
    }
    let index: usize = index.parse().map_err(|_| bad(line_no, "index out of range"))?;
    if index == 0 {
        return Err(bad(line_no, "index must be positive"));
    }
    let mut entities: Vec<String> = Vec::new();
    for raw in body.split(DELIMITER) {
        if raw.is_empty() {
            return Err(ChainError::EmptyEntity { line: line_no });
        }
        if raw.trim() != raw {
            return Err(bad(line_no, format!("whitespace around delimiter in {raw:?}")));
        }
        if raw.contains('<') {
            return Err(bad(line_no, format!("entity {raw:?} contains '<'")));
        }
        if entities.last().is_some_and(|prev| prev == raw) {
            match mode {
                RepeatMode::Strict => return Err(bad(line_no, format!("immediate repetition of {raw:?}"))),
                RepeatMode::Lenient => continue,
            }
        }
        entities.push(raw.to_string());
    }
    if entities.len() < 2 {
        return Err(bad(line_no, "a chain needs at least two entities"));
    }
    Ok(ReasoningChain { index, entities })
}

/// Chains with their 1-based source line numbers; blank lines are skipped.
pub fn parse_chain_lines(text: &str, mode: RepeatMode) -> Result<Vec<(usize, ReasoningChain)>, ChainError> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| parse_line(n, l, mode).map(|c| (n, c)))
        .collect()
}

pub fn parse_chains(text: &str, mode: RepeatMode) -> Result<Vec<ReasoningChain>, ChainError> {
    Ok(parse_chain_lines(text, mode)?.into_iter().map(|(_, c)| c).collect())
}

pub fn render_chains(chains: &[ReasoningChain]) -> String {
    let mut out = String::new();
    for c in chains {
        let _ = writeln!(out, "{}", c.render());
    }
    out
}

/// Input positions surviving [`dedup_chains`].
pub fn dedup_positions(chains: &[ReasoningChain], cap: Option<usize>) -> Vec<usize> {
    let mut seen = BTreeSet::new();
    let mut kept = Vec::new();
    for (pos, c) in chains.iter().enumerate() {
        if cap.is_some_and(|cap| kept.len() >= cap) {
            break;
        }
        if seen.insert(&c.entities) {
            kept.push(pos);
        }
    }
    kept
}

/// First occurrence of each entity sequence, capped, reindexed from 1.
pub fn dedup_chains(chains: &[ReasoningChain], cap: Option<usize>) -> Vec<ReasoningChain> {
    dedup_positions(chains, cap)
        .into_iter()
        .enumerate()
        .map(|(i, pos)| ReasoningChain {
            index: i + 1,
            entities: chains[pos].entities.clone(),
        })
        .collect()
}

fn union_edges(chains: &[ReasoningChain]) -> BTreeSet<(&str, &str)> {
    chains.iter().flat_map(|c| c.pairs()).collect()
}

/// Union of all chains keyed by exact entity label; roles follow degree.
pub fn merge_chains(chains: &[ReasoningChain]) -> Result<ReasoningDag, ChainError> {
    if chains.is_empty() {
        return Err(ChainError::NoChains);
    }
    let edges = union_edges(chains);
    check_acyclic(chains, &edges)?;

    let mut indeg: BTreeMap<&str, usize> = BTreeMap::new();
    let mut outdeg: BTreeMap<&str, usize> = BTreeMap::new();
    for c in chains {
        for e in &c.entities {
            indeg.entry(e).or_default();
            outdeg.entry(e).or_default();
        }
    }
    for (a, b) in &edges {
        *outdeg.get_mut(a).unwrap() += 1;
        *indeg.get_mut(b).unwrap() += 1;
    }
    let mut dag = ReasoningDag::new();
    for (id, inn) in &indeg {
        let role = if *inn == 0 {
            NodeRole::Source
        } else if outdeg[id] == 0 {
            NodeRole::Conclusion
        } else {
            NodeRole::Hypothesis
        };
        dag.add_node(*id, *id, role);
    }
    for (a, b) in edges {
        dag.add_edge(a, b);
    }
    Ok(dag)
}

fn check_acyclic(chains: &[ReasoningChain], edges: &BTreeSet<(&str, &str)>) -> Result<(), ChainError> {
    let mut g: DiGraph<&str, ()> = DiGraph::new();
    let mut idx = BTreeMap::new();
    for (a, b) in edges {
        for n in [a, b] {
            idx.entry(*n).or_insert_with(|| g.add_node(*n));
        }
        g.add_edge(idx[a], idx[b], ());
    }
    let mut on_cycle: BTreeSet<&str> = BTreeSet::new();
    for scc in tarjan_scc(&g) {
        if scc.len() > 1 {
            on_cycle.extend(scc.iter().map(|n| g[*n]));
        }
    }
    if on_cycle.is_empty() {
        return Ok(());
    }
    let involved = chains
        .iter()
        .enumerate()
        .filter(|(_, c)| c.pairs().any(|(a, b)| on_cycle.contains(a) && on_cycle.contains(b)))
        .map(|(pos, _)| pos)
        .collect();
    Err(ChainError::CycleDetected {
        entities: on_cycle.into_iter().map(String::from).collect(),
        chains: involved,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MergeStats {
    pub chains: usize,
    pub nodes: usize,
    pub edges: usize,
    pub depth: usize,
    /// Entities occurring in more than one chain.
    pub shared_nodes: usize,
}

pub fn merge_stats(chains: &[ReasoningChain], dag: &ReasoningDag) -> Result<MergeStats, ChainError> {
    let net = dag_to_petri(dag).map_err(net_error)?;
    let mut occurrences: BTreeMap<&str, usize> = BTreeMap::new();
    for c in chains {
        let distinct: BTreeSet<&str> = c.entities.iter().map(String::as_str).collect();
        for e in distinct {
            *occurrences.entry(e).or_default() += 1;
        }
    }
    Ok(MergeStats {
        chains: chains.len(),
        nodes: dag.nodes().len(),
        edges: dag.edges().len(),
        depth: net.topological_depth(),
        shared_nodes: occurrences.values().filter(|n| **n > 1).count(),
    })
}

fn net_error(e: NetError) -> ChainError {
    match e {
        NetError::InvalidDag(report) => ChainError::InvalidGraph(report),
        other => bad(0, other.to_string()),
    }
}

/// One outline per non-source node in (layer, id) order. Dependencies on
/// source nodes fold into the input context: omitted when they are the only
/// predecessors, written as `0` when mixed with others.
pub fn compile_to_plan(dag: &ReasoningDag) -> Result<PlanDocument, ChainError> {
    let net = dag_to_petri(dag).map_err(net_error)?;
    let order: Vec<&str> = net
        .serial_order()
        .into_iter()
        .map(|t| net.transition(t).unwrap().post_set.iter().next().unwrap().as_str())
        .collect();
    let index_of: BTreeMap<&str, usize> = order.iter().enumerate().map(|(i, n)| (*n, i + 1)).collect();

    let label = |id: &str| dag.node(id).map(|n| n.label.clone()).unwrap_or_default();
    let mut outlines = Vec::with_capacity(order.len());
    for (i, node) in order.iter().enumerate() {
        let preds: Vec<&str> = dag.predecessors(node).collect();
        let mut deps: Vec<usize> = preds.iter().filter_map(|p| index_of.get(p).copied()).collect();
        if !deps.is_empty() && deps.len() < preds.len() {
            deps.push(0);
        }
        deps.sort_unstable();
        let pred_labels: Vec<String> = preds.iter().map(|p| label(p)).collect();
        outlines.push(Outline {
            index: i + 1,
            deps,
            description: format!("{}{DELIMITER}{}", pred_labels.join(","), label(node)),
        });
    }
    let goal: Vec<String> = dag.ids_with_role(NodeRole::Conclusion).map(label).collect();
    Ok(PlanDocument {
        goal: goal.join(", "),
        outlines,
    })
}
