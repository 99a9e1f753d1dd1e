//! Reasoning DAGs and their compilation into executable Petri nets.

mod dag;
mod dot;
mod petri;
mod token;

pub use dag::{validate_dag, DagNode, NodeRole, ReasoningDag, ValidationReport, Violation, ViolationCode};
pub use dot::{dag_to_dot, petri_to_dot};
pub use petri::{
    dag_to_petri, topological_depth, transition_id_for, transition_layers, ArcDirection, FlowArc,
    NetError, PetriNet, PlaceId, TransId, Transition,
};
pub use token::{HistoryEntry, Origin, SemanticToken};
