use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::to_dag::{plan_to_dag, ConclusionPolicy};
use super::parse::parse_trace_unchecked;
use super::{PlanDocument, PlanError, TraceDocument};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SyntaxCode {
    MalformedTag,
    BadIndex,
    ForwardDep,
    CycleDetected,
    StepIndexMismatch,
    OrderViolation,
    MissingSection,
    GraphViolation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntaxViolation {
    pub code: SyntaxCode,
    pub location: String,
    pub message: String,
}

impl std::fmt::Display for SyntaxViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}: {}", self.code, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntaxReport {
    pub ok: bool,
    pub violations: Vec<SyntaxViolation>,
}

impl SyntaxReport {
    fn push(&mut self, code: SyntaxCode, location: impl Into<String>, message: impl Into<String>) {
        self.violations.push(SyntaxViolation {
            code,
            location: location.into(),
            message: message.into(),
        });
    }

    pub fn has(&self, code: SyntaxCode) -> bool {
        self.violations.iter().any(|v| v.code == code)
    }
}

fn braces(items: &[usize]) -> String {
    let parts: Vec<String> = items.iter().map(|i| i.to_string()).collect();
    format!("{{{}}}", parts.join(","))
}

fn index_problems(plan: &PlanDocument) -> Vec<(usize, String)> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (pos, o) in plan.outlines.iter().enumerate() {
        let expected = pos + 1;
        if o.index != expected {
            let msg = if seen.contains(&o.index) {
                format!("duplicate index {}", o.index)
            } else {
                format!("expected index {expected}, found {}", o.index)
            };
            out.push((expected, msg));
        }
        seen.insert(o.index);
    }
    out
}

fn forward_deps(plan: &PlanDocument) -> Vec<(usize, usize)> {
    plan.outlines
        .iter()
        .flat_map(|o| o.step_deps().filter(move |d| *d >= o.index).map(move |d| (o.index, d)))
        .collect()
}

/// Outlines left over after peeling dependency-free ones; non-empty on a cycle.
fn cyclic_outlines(plan: &PlanDocument) -> Vec<usize> {
    let known: BTreeSet<usize> = plan.outlines.iter().map(|o| o.index).collect();
    let mut pending: BTreeMap<usize, BTreeSet<usize>> = plan
        .outlines
        .iter()
        .map(|o| (o.index, o.step_deps().filter(|d| known.contains(d)).collect()))
        .collect();
    loop {
        let ready: Vec<usize> = pending
            .iter()
            .filter(|(_, deps)| deps.is_empty())
            .map(|(i, _)| *i)
            .collect();
        if ready.is_empty() {
            return pending.into_keys().collect();
        }
        for i in &ready {
            pending.remove(i);
        }
        for deps in pending.values_mut() {
            for i in &ready {
                deps.remove(i);
            }
        }
    }
}

/// Plan invariants, first failure wins: contiguous indices, backward-only
/// dependencies, acyclicity.
pub fn check_plan(plan: &PlanDocument) -> Result<(), PlanError> {
    if let Some((position, message)) = index_problems(plan).into_iter().next() {
        return Err(PlanError::BadIndex { position, message });
    }
    if let Some((index, dep)) = forward_deps(plan).into_iter().next() {
        return Err(PlanError::ForwardDep { index, dep });
    }
    let cycle = cyclic_outlines(plan);
    if !cycle.is_empty() {
        return Err(PlanError::CycleDetected(cycle));
    }
    Ok(())
}

struct StepCheck {
    missing: Vec<usize>,
    unexpected: Vec<usize>,
    duplicated: Vec<usize>,
    order: Vec<(usize, usize)>,
}

fn step_problems(doc: &TraceDocument) -> StepCheck {
    let outlines: BTreeSet<usize> = doc.plan.outlines.iter().map(|o| o.index).collect();
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for s in &doc.steps {
        *counts.entry(s.index).or_default() += 1;
    }
    let steps: BTreeSet<usize> = counts.keys().copied().collect();
    let mut done = BTreeSet::new();
    let mut order = Vec::new();
    for s in &doc.steps {
        if let Some(o) = doc.plan.outline(s.index) {
            for dep in o.step_deps() {
                if steps.contains(&dep) && !done.contains(&dep) {
                    order.push((s.index, dep));
                }
            }
        }
        done.insert(s.index);
    }
    StepCheck {
        missing: outlines.difference(&steps).copied().collect(),
        unexpected: steps.difference(&outlines).copied().collect(),
        duplicated: counts.iter().filter(|(_, c)| **c > 1).map(|(i, _)| *i).collect(),
        order,
    }
}

pub(crate) fn check_steps(doc: &TraceDocument) -> Result<(), PlanError> {
    let check = step_problems(doc);
    if !check.missing.is_empty() || !check.unexpected.is_empty() || !check.duplicated.is_empty() {
        return Err(PlanError::StepIndexMismatch {
            missing: check.missing,
            unexpected: check.unexpected,
            duplicated: check.duplicated,
        });
    }
    if let Some((step, dep)) = check.order.into_iter().next() {
        return Err(PlanError::OrderViolation { step, dep });
    }
    Ok(())
}

pub fn verify_syntax(doc: &TraceDocument) -> SyntaxReport {
    verify_syntax_with(doc, ConclusionPolicy::default())
}

/// Syntax-level verification; reports every failed check rather than the first.
pub fn verify_syntax_with(doc: &TraceDocument, policy: ConclusionPolicy) -> SyntaxReport {
    let mut report = SyntaxReport::default();
    let plan = &doc.plan;

    let bad_index = index_problems(plan);
    for (position, message) in &bad_index {
        report.push(SyntaxCode::BadIndex, format!("outline {position}"), message.clone());
    }
    let forward = forward_deps(plan);
    for (index, dep) in &forward {
        report.push(
            SyntaxCode::ForwardDep,
            format!("outline {index}"),
            format!("depends on {dep}, which is not earlier"),
        );
    }
    let cycle = cyclic_outlines(plan);
    if !cycle.is_empty() {
        report.push(SyntaxCode::CycleDetected, "plan", format!("cycle {}", braces(&cycle)));
    }

    let steps = step_problems(doc);
    let mut mismatch = Vec::new();
    if !steps.missing.is_empty() {
        mismatch.push(format!("missing {}", braces(&steps.missing)));
    }
    if !steps.unexpected.is_empty() {
        mismatch.push(format!("unexpected {}", braces(&steps.unexpected)));
    }
    if !steps.duplicated.is_empty() {
        mismatch.push(format!("duplicated {}", braces(&steps.duplicated)));
    }
    if !mismatch.is_empty() {
        report.push(SyntaxCode::StepIndexMismatch, "execution", mismatch.join(", "));
    }
    for (step, dep) in &steps.order {
        report.push(
            SyntaxCode::OrderViolation,
            format!("step {step}"),
            format!("appears before its dependency {dep}"),
        );
    }
    if doc.conclusion.trim().is_empty() {
        report.push(SyntaxCode::MissingSection, "conclusion", "empty Conclusion");
    }

    if bad_index.is_empty() && forward.is_empty() && cycle.is_empty() {
        if let Err(e) = plan_to_dag(plan, policy) {
            report.push(SyntaxCode::GraphViolation, "plan", e.to_string());
        }
    }

    report.ok = report.violations.is_empty();
    report
}

pub fn verify_text(text: &str) -> SyntaxReport {
    verify_text_with(text, ConclusionPolicy::default())
}

/// [`verify_syntax_with`] on raw text. Markup that cannot be read at all is
/// reported as a single violation.
pub fn verify_text_with(text: &str, policy: ConclusionPolicy) -> SyntaxReport {
    match parse_trace_unchecked(text) {
        Ok(doc) => verify_syntax_with(&doc, policy),
        Err(e) => {
            let (code, location) = match &e {
                PlanError::MissingSection(name) => (SyntaxCode::MissingSection, name.to_lowercase()),
                PlanError::MalformedTag { line, .. } => (SyntaxCode::MalformedTag, format!("line {line}")),
                _ => (SyntaxCode::GraphViolation, "plan".to_string()),
            };
            let mut report = SyntaxReport::default();
            report.push(code, location, e.to_string());
            report
        }
    }
}
