use std::fmt::Write;

use super::dag::{NodeRole, ReasoningDag};
use super::petri::PetriNet;

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// Graphviz rendering of a reasoning DAG, nodes in ascending id order.
pub fn dag_to_dot(dag: &ReasoningDag) -> String {
    let mut out = String::from("digraph dag {\n  rankdir=LR;\n");
    for (id, node) in dag.nodes() {
        let shape = match node.role {
            NodeRole::Source => "invhouse",
            NodeRole::Hypothesis => "ellipse",
            NodeRole::Conclusion => "doublecircle",
        };
        let _ = writeln!(
            out,
            "  {} [label={}, shape={shape}];",
            quote(id),
            quote(&node.label)
        );
    }
    for (from, to) in dag.edges() {
        let _ = writeln!(out, "  {} -> {};", quote(from), quote(to));
    }
    out.push_str("}\n");
    out
}

/// Places as circles (filled when initially marked), transitions as boxes.
pub fn petri_to_dot(net: &PetriNet) -> String {
    let mut out = String::from("digraph petri {\n  rankdir=LR;\n");
    for (place, token) in net.initial_marking() {
        let style = if token.is_some() { ", style=filled" } else { "" };
        let _ = writeln!(out, "  {} [shape=circle{style}];", quote(place));
    }
    for (id, t) in net.transitions() {
        let _ = writeln!(
            out,
            "  {} [shape=box, label={}];",
            quote(id),
            quote(&format!("{id}\\n{}", t.label))
        );
    }
    for arc in net.arcs() {
        let (a, b) = match arc.direction {
            super::petri::ArcDirection::PlaceToTransition => (&arc.place, &arc.transition),
            super::petri::ArcDirection::TransitionToPlace => (&arc.transition, &arc.place),
        };
        let _ = writeln!(out, "  {} -> {};", quote(a), quote(b));
    }
    out.push_str("}\n");
    out
}
