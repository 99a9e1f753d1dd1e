//! Plan / Execution / Conclusion trace format.
//!
//! Canonical layout, one tag per line, LF endings:
//!
//! ```text
//! optional free-text preamble
//! <Plan>
//! <Goal>what the plan answers</Goal>
//! <Outline id="1" deps="">A->B</Outline>
//! <Outline id="2" deps="">A->C</Outline>
//! <Outline id="3" deps="1,2">B,C->D</Outline>
//! </Plan>
//! <Execution>
//! <Step i="1">
//! reasoning for outline 1
//! </Step>
//! ...
//! </Execution>
//! <Conclusion>
//! final synthesis
//! </Conclusion>
//! ```
//!
//! `deps` lists earlier outline indices; `0` names the plan's input context and
//! is only written when mixed with other dependencies. Content may not contain
//! tag-shaped text (`<name ...>`).

mod parse;
mod to_dag;
mod verify;
mod write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::ValidationReport;

pub use parse::{normalize, parse_head, parse_plan, parse_trace, parse_trace_unchecked};
pub use to_dag::{
    outline_index_of_node, outline_index_of_transition, outline_node_id, plan_to_dag, ConclusionPolicy,
    SOURCE_NODE,
};
pub use verify::{
    check_plan, verify_syntax, verify_syntax_with, verify_text, verify_text_with, SyntaxCode, SyntaxReport,
    SyntaxViolation,
};
pub use write::{serialize_head, serialize_plan, serialize_trace};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outline {
    pub index: usize,
    /// Sorted, deduplicated; `0` is the input context.
    pub deps: Vec<usize>,
    pub description: String,
}

impl Outline {
    /// Dependencies on other outlines, excluding the input context.
    pub fn step_deps(&self) -> impl Iterator<Item = usize> + '_ {
        self.deps.iter().copied().filter(|d| *d != 0)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanDocument {
    pub goal: String,
    pub outlines: Vec<Outline>,
}

impl PlanDocument {
    pub fn outline(&self, index: usize) -> Option<&Outline> {
        self.outlines.iter().find(|o| o.index == index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub index: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceDocument {
    pub preamble: Option<String>,
    pub plan: PlanDocument,
    pub steps: Vec<Step>,
    pub conclusion: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlanError {
    #[error("malformed tag at line {line}: {message}")]
    MalformedTag { line: usize, message: String },
    #[error("bad outline index at outline {position}: {message}")]
    BadIndex { position: usize, message: String },
    #[error("outline {index} depends on {dep}, which is not earlier")]
    ForwardDep { index: usize, dep: usize },
    #[error("dependency cycle through outlines {0:?}")]
    CycleDetected(Vec<usize>),
    #[error("missing section {0}")]
    MissingSection(String),
    #[error("step indices do not match outlines: missing {missing:?}, unexpected {unexpected:?}, duplicated {duplicated:?}")]
    StepIndexMismatch {
        missing: Vec<usize>,
        unexpected: Vec<usize>,
        duplicated: Vec<usize>,
    },
    #[error("step {step} appears before its dependency {dep}")]
    OrderViolation { step: usize, dep: usize },
    #[error("plan has several conclusions (outlines {0:?}) under the single-conclusion policy")]
    MultipleConclusions(Vec<usize>),
    #[error("plan graph is invalid: {0}")]
    InvalidGraph(ValidationReport),
}
