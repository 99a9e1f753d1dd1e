use std::collections::{BTreeMap, BTreeSet, VecDeque};

use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use serde::{Deserialize, Serialize};

/// Role of a reasoning state in the DAG.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeRole {
    /// Grounded in the input; only outgoing edges.
    Source,
    /// Intermediate state; splits and merges.
    Hypothesis,
    /// Final outcome; only incoming edges.
    Conclusion,
}

impl NodeRole {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeRole::Source => "Source",
            NodeRole::Hypothesis => "Hypothesis",
            NodeRole::Conclusion => "Conclusion",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DagNode {
    pub label: String,
    pub role: NodeRole,
}

/// Logical reasoning graph: typed nodes keyed by caller-supplied ids plus directed edges.
///
/// Construction never rejects anything; [`validate_dag`] reports what is wrong.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningDag {
    nodes: BTreeMap<String, DagNode>,
    edges: BTreeSet<(String, String)>,
}

impl ReasoningDag {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces a node.
    pub fn add_node(&mut self, id: impl Into<String>, label: impl Into<String>, role: NodeRole) {
        self.nodes.insert(
            id.into(),
            DagNode {
                label: label.into(),
                role,
            },
        );
    }

    /// Returns `true` if the edge was not already present.
    pub fn add_edge(&mut self, from: impl Into<String>, to: impl Into<String>) -> bool {
        self.edges.insert((from.into(), to.into()))
    }

    pub fn with_node(mut self, id: &str, role: NodeRole) -> Self {
        self.add_node(id, id, role);
        self
    }

    pub fn with_edge(mut self, from: &str, to: &str) -> Self {
        self.add_edge(from, to);
        self
    }

    pub fn nodes(&self) -> &BTreeMap<String, DagNode> {
        &self.nodes
    }

    pub fn node(&self, id: &str) -> Option<&DagNode> {
        self.nodes.get(id)
    }

    pub fn node_mut(&mut self, id: &str) -> Option<&mut DagNode> {
        self.nodes.get_mut(id)
    }

    pub fn edges(&self) -> &BTreeSet<(String, String)> {
        &self.edges
    }

    pub fn predecessors<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.edges
            .iter()
            .filter(move |(_, to)| to == id)
            .map(|(from, _)| from.as_str())
    }

    pub fn successors<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.edges
            .iter()
            .filter(move |(from, _)| from == id)
            .map(|(_, to)| to.as_str())
    }

    pub fn in_degree(&self, id: &str) -> usize {
        self.predecessors(id).count()
    }

    pub fn out_degree(&self, id: &str) -> usize {
        self.successors(id).count()
    }

    pub fn ids_with_role(&self, role: NodeRole) -> impl Iterator<Item = &str> {
        self.nodes
            .iter()
            .filter(move |(_, n)| n.role == role)
            .map(|(id, _)| id.as_str())
    }

    /// Predecessor lists for every node, ascending.
    pub(crate) fn predecessor_map(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut map: BTreeMap<&str, Vec<&str>> =
            self.nodes.keys().map(|k| (k.as_str(), Vec::new())).collect();
        for (from, to) in &self.edges {
            if let Some(list) = map.get_mut(to.as_str()) {
                list.push(from.as_str());
            }
        }
        map
    }

    pub(crate) fn successor_map(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut map: BTreeMap<&str, Vec<&str>> =
            self.nodes.keys().map(|k| (k.as_str(), Vec::new())).collect();
        for (from, to) in &self.edges {
            if let Some(list) = map.get_mut(from.as_str()) {
                list.push(to.as_str());
            }
        }
        map
    }

    /// Kahn ordering with ascending-id tie breaks. `None` if the graph has a cycle
    /// or dangling edges.
    pub fn topological_order(&self) -> Option<Vec<&str>> {
        let preds = self.predecessor_map();
        let succs = self.successor_map();
        if self
            .edges
            .iter()
            .any(|(a, b)| !self.nodes.contains_key(a) || !self.nodes.contains_key(b))
        {
            return None;
        }
        let mut remaining: BTreeMap<&str, usize> =
            preds.iter().map(|(k, v)| (*k, v.len())).collect();
        let mut ready: BTreeSet<&str> = remaining
            .iter()
            .filter(|(_, d)| **d == 0)
            .map(|(k, _)| *k)
            .collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(next) = ready.pop_first() {
            order.push(next);
            for s in &succs[next] {
                let d = remaining.get_mut(s).expect("known node");
                *d -= 1;
                if *d == 0 {
                    ready.insert(s);
                }
            }
        }
        (order.len() == self.nodes.len()).then_some(order)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ViolationCode {
    DanglingEdge,
    Cycle,
    RoleMismatch,
    NoSource,
    NoConclusion,
    Unreachable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    /// Node id, edge `a->b`, or `graph`.
    pub location: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, code: ViolationCode, location: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation {
            code,
            location: location.into(),
            message: message.into(),
        });
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "ok");
        }
        let parts: Vec<String> = self
            .violations
            .iter()
            .map(|v| format!("{:?} at {}: {}", v.code, v.location, v.message))
            .collect();
        write!(f, "{}", parts.join("; "))
    }
}

/// Structural check of a reasoning DAG: acyclicity, role/degree agreement and
/// source-to-conclusion reachability.
pub fn validate_dag(dag: &ReasoningDag) -> ValidationReport {
    let mut report = ValidationReport::default();

    for (from, to) in dag.edges() {
        if !dag.nodes.contains_key(from) || !dag.nodes.contains_key(to) {
            report.push(
                ViolationCode::DanglingEdge,
                format!("{from}->{to}"),
                "edge endpoint is not a declared node",
            );
        }
    }

    // SCCs over declared nodes only.
    let mut graph = DiGraph::<&str, ()>::new();
    let index: BTreeMap<&str, NodeIndex> = dag
        .nodes
        .keys()
        .map(|id| (id.as_str(), graph.add_node(id.as_str())))
        .collect();
    for (from, to) in dag.edges() {
        if let (Some(a), Some(b)) = (index.get(from.as_str()), index.get(to.as_str())) {
            graph.add_edge(*a, *b, ());
        }
    }
    let mut cycles: Vec<Vec<&str>> = tarjan_scc(&graph)
        .into_iter()
        .filter(|scc| scc.len() > 1 || graph.contains_edge(scc[0], scc[0]))
        .map(|scc| {
            let mut ids: Vec<&str> = scc.iter().map(|ix| graph[*ix]).collect();
            ids.sort_unstable();
            ids
        })
        .collect();
    cycles.sort();
    for ids in &cycles {
        report.push(
            ViolationCode::Cycle,
            ids[0],
            format!("cycle {{{}}}", ids.join(",")),
        );
    }

    let preds = dag.predecessor_map();
    let succs = dag.successor_map();
    for (id, node) in &dag.nodes {
        let ins = preds[id.as_str()].len();
        let outs = succs[id.as_str()].len();
        let role = node.role.as_str();
        let mut bad = |what: &str, degree: usize| {
            report.push(
                ViolationCode::RoleMismatch,
                id.as_str(),
                format!("{role} {what} {degree}"),
            );
        };
        match node.role {
            NodeRole::Source => {
                if ins != 0 {
                    bad("in-degree", ins);
                }
                if outs == 0 {
                    bad("out-degree", outs);
                }
            }
            NodeRole::Conclusion => {
                if outs != 0 {
                    bad("out-degree", outs);
                }
                if ins == 0 {
                    bad("in-degree", ins);
                }
            }
            NodeRole::Hypothesis => {
                if ins == 0 {
                    bad("in-degree", ins);
                }
                if outs == 0 {
                    bad("out-degree", outs);
                }
            }
        }
    }

    if dag.ids_with_role(NodeRole::Source).next().is_none() {
        report.push(ViolationCode::NoSource, "graph", "no Source node");
    }
    if dag.ids_with_role(NodeRole::Conclusion).next().is_none() {
        report.push(ViolationCode::NoConclusion, "graph", "no Conclusion node");
    }

    for source in dag.ids_with_role(NodeRole::Source) {
        if !reaches_conclusion(dag, &succs, source) {
            report.push(
                ViolationCode::Unreachable,
                source,
                "Source cannot reach any Conclusion",
            );
        }
    }

    report
}

fn reaches_conclusion(dag: &ReasoningDag, succs: &BTreeMap<&str, Vec<&str>>, start: &str) -> bool {
    let mut seen = BTreeSet::new();
    let mut queue = VecDeque::from([start]);
    while let Some(id) = queue.pop_front() {
        if !seen.insert(id) {
            continue;
        }
        if id != start && dag.nodes[id].role == NodeRole::Conclusion {
            return true;
        }
        if let Some(next) = succs.get(id) {
            queue.extend(next.iter().copied());
        }
    }
    false
}
