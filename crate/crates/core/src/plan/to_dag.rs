use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::verify::check_plan;
use super::{PlanDocument, PlanError};
use crate::graph::{validate_dag, NodeRole, ReasoningDag};

/// Id of the synthetic node standing for the plan's input context.
pub const SOURCE_NODE: &str = "source";

/// How many terminal outlines a plan may have.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConclusionPolicy {
    /// Exactly one terminal outline.
    #[default]
    Single,
    /// Any number of terminal outlines, each a Conclusion node.
    Multiple,
}

impl ConclusionPolicy {
    pub fn from_single_flag(single: bool) -> Self {
        if single {
            Self::Single
        } else {
            Self::Multiple
        }
    }
}

/// Zero-padded so lexicographic id order equals numeric outline order.
pub fn outline_node_id(index: usize) -> String {
    format!("n{index:04}")
}

pub fn outline_index_of_node(id: &str) -> Option<usize> {
    id.strip_prefix('n')?.parse().ok()
}

pub fn outline_index_of_transition(id: &str) -> Option<usize> {
    outline_index_of_node(id.strip_prefix("t:")?)
}

/// One node per outline plus the synthetic source; terminal outlines become
/// Conclusion nodes.
pub fn plan_to_dag(plan: &PlanDocument, policy: ConclusionPolicy) -> Result<ReasoningDag, PlanError> {
    check_plan(plan)?;
    let mut dag = ReasoningDag::new();
    let source_label = if plan.goal.is_empty() { "input" } else { plan.goal.as_str() };
    dag.add_node(SOURCE_NODE, source_label, NodeRole::Source);

    let mut has_dependents = BTreeSet::new();
    for o in &plan.outlines {
        for d in o.step_deps() {
            has_dependents.insert(d);
        }
    }
    let sinks: Vec<usize> = plan
        .outlines
        .iter()
        .map(|o| o.index)
        .filter(|i| !has_dependents.contains(i))
        .collect();
    if policy == ConclusionPolicy::Single && sinks.len() > 1 {
        return Err(PlanError::MultipleConclusions(sinks));
    }

    for o in &plan.outlines {
        let role = if has_dependents.contains(&o.index) {
            NodeRole::Hypothesis
        } else {
            NodeRole::Conclusion
        };
        let id = outline_node_id(o.index);
        dag.add_node(&id, &o.description, role);
        if o.deps.is_empty() || o.deps.contains(&0) {
            dag.add_edge(SOURCE_NODE, &id);
        }
        for d in o.step_deps() {
            dag.add_edge(outline_node_id(d), &id);
        }
    }

    let report = validate_dag(&dag);
    if !report.is_ok() {
        return Err(PlanError::InvalidGraph(report));
    }
    Ok(dag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::dag_to_petri;
    use crate::plan::fixtures::DIAMOND_PLAN;
    use crate::plan::{parse_plan, Outline};

    #[test]
    fn diamond_plan_maps_to_diamond_dag() {
        let dag = plan_to_dag(&parse_plan(DIAMOND_PLAN).unwrap(), ConclusionPolicy::Single).unwrap();
        assert_eq!(dag.nodes().len(), 4);
        let edges: Vec<(&str, &str)> = dag.edges().iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        assert_eq!(
            edges,
            vec![
                ("n0001", "n0003"),
                ("n0002", "n0003"),
                ("source", "n0001"),
                ("source", "n0002"),
            ]
        );
        assert_eq!(dag.node("n0003").unwrap().role, NodeRole::Conclusion);
        assert_eq!(dag.node("n0001").unwrap().role, NodeRole::Hypothesis);
        assert!(dag_to_petri(&dag).is_ok());
    }

    #[test]
    fn single_outline() {
        let plan = PlanDocument {
            goal: String::new(),
            outlines: vec![Outline {
                index: 1,
                deps: vec![],
                description: "A->B".into(),
            }],
        };
        let dag = plan_to_dag(&plan, ConclusionPolicy::Single).unwrap();
        assert_eq!(dag.edges().len(), 1);
        assert_eq!(dag.node("n0001").unwrap().role, NodeRole::Conclusion);
    }

    #[test]
    fn two_sinks_depend_on_policy() {
        let plan = parse_plan(r#"<Plan><Outline id="1" deps="">a</Outline><Outline id="2" deps="">b</Outline></Plan>"#).unwrap();
        assert_eq!(
            plan_to_dag(&plan, ConclusionPolicy::Single),
            Err(PlanError::MultipleConclusions(vec![1, 2]))
        );
        let dag = plan_to_dag(&plan, ConclusionPolicy::Multiple).unwrap();
        assert_eq!(dag.ids_with_role(NodeRole::Conclusion).count(), 2);
    }

    #[test]
    fn context_dependency_adds_source_edge() {
        let plan = parse_plan(r#"<Plan><Outline id="1" deps="">a</Outline><Outline id="2" deps="0,1">b</Outline></Plan>"#).unwrap();
        let dag = plan_to_dag(&plan, ConclusionPolicy::Single).unwrap();
        assert!(dag.edges().contains(&("source".into(), "n0002".into())));
        assert!(dag.edges().contains(&("n0001".into(), "n0002".into())));
    }

    #[test]
    fn empty_plan_is_invalid_graph() {
        assert!(matches!(
            plan_to_dag(&PlanDocument::default(), ConclusionPolicy::Single),
            Err(PlanError::InvalidGraph(_))
        ));
    }

    #[test]
    fn id_helpers() {
        assert_eq!(outline_node_id(12), "n0012");
        assert_eq!(outline_index_of_transition("t:n0012"), Some(12));
        assert_eq!(outline_index_of_transition("t:source"), None);
    }
}
