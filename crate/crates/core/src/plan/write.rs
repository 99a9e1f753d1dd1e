use std::fmt::Write;

use super::{PlanDocument, TraceDocument};

fn deps_attr(deps: &[usize]) -> String {
    deps.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",")
}

/// Canonical `<Plan>` block including the final newline.
pub fn serialize_plan(plan: &PlanDocument) -> String {
    let mut out = String::from("<Plan>\n");
    if !plan.goal.is_empty() {
        let _ = writeln!(out, "<Goal>{}</Goal>", plan.goal);
    }
    for o in &plan.outlines {
        let _ = writeln!(
            out,
            "<Outline id=\"{}\" deps=\"{}\">{}</Outline>",
            o.index,
            deps_attr(&o.deps),
            o.description
        );
    }
    out.push_str("</Plan>\n");
    out
}

fn block(out: &mut String, open: &str, close: &str, text: &str) {
    out.push_str(open);
    out.push('\n');
    if !text.is_empty() {
        out.push_str(text);
        out.push('\n');
    }
    out.push_str(close);
    out.push('\n');
}

/// Preamble and plan block: everything generated before execution starts.
pub fn serialize_head(preamble: Option<&str>, plan: &PlanDocument) -> String {
    let mut out = String::new();
    if let Some(pre) = preamble {
        out.push_str(pre);
        out.push('\n');
    }
    out.push_str(&serialize_plan(plan));
    out
}

pub fn serialize_trace(doc: &TraceDocument) -> String {
    let mut out = serialize_head(doc.preamble.as_deref(), &doc.plan);
    out.push_str("<Execution>\n");
    for step in &doc.steps {
        block(&mut out, &format!("<Step i=\"{}\">", step.index), "</Step>", &step.text);
    }
    out.push_str("</Execution>\n");
    block(&mut out, "<Conclusion>", "</Conclusion>", &doc.conclusion);
    out
}
