use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;

use super::verify::check_plan;
use super::write::serialize_trace;
use super::{Outline, PlanDocument, PlanError, Step, TraceDocument};

static TAG: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"<(/?)([A-Za-z][A-Za-z0-9_]*)([^<>]*)>").expect("valid regex"));
static ATTR: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"^\s*([A-Za-z_]+)="([^"]*)""#).expect("valid regex"));

const KNOWN: [&str; 6] = ["Plan", "Goal", "Outline", "Execution", "Step", "Conclusion"];

#[derive(Debug)]
enum Lex<'a> {
    Open {
        name: &'a str,
        attrs: Vec<(&'a str, &'a str)>,
        start: usize,
        line: usize,
    },
    Close {
        name: &'a str,
        line: usize,
    },
    Text {
        text: &'a str,
        line: usize,
    },
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset].bytes().filter(|b| *b == b'\n').count() + 1
}

fn malformed(line: usize, message: impl Into<String>) -> PlanError {
    PlanError::MalformedTag {
        line,
        message: message.into(),
    }
}

/// Splits `text` into known tags and the text between them. Tag-shaped text
/// with an unknown name stays inside text runs.
fn lex(text: &str) -> Result<Vec<Lex<'_>>, PlanError> {
    let mut out = Vec::new();
    let mut last = 0;
    for cap in TAG.captures_iter(text) {
        let whole = cap.get(0).expect("match");
        let name = cap.get(2).expect("name").as_str();
        if !KNOWN.contains(&name) {
            continue;
        }
        if whole.start() > last {
            out.push(Lex::Text {
                text: &text[last..whole.start()],
                line: line_of(text, last),
            });
        }
        let line = line_of(text, whole.start());
        let closing = !cap[1].is_empty();
        let mut rest = cap.get(3).expect("attrs").as_str();
        if closing {
            if !rest.trim().is_empty() {
                return Err(malformed(line, format!("closing tag </{name}> takes no attributes")));
            }
            out.push(Lex::Close { name, line });
        } else {
            let mut attrs = Vec::new();
            while let Some(a) = ATTR.captures(rest) {
                attrs.push((a.get(1).expect("key").as_str(), a.get(2).expect("value").as_str()));
                rest = &rest[a.get(0).expect("attr").end()..];
            }
            if !rest.trim().is_empty() {
                return Err(malformed(line, format!("unparseable attributes in <{name}>: {:?}", rest.trim())));
            }
            out.push(Lex::Open {
                name,
                attrs,
                start: whole.start(),
                line,
            });
        }
        last = whole.end();
    }
    if last < text.len() {
        out.push(Lex::Text {
            text: &text[last..],
            line: line_of(text, last),
        });
    }
    Ok(out)
}

struct Cursor<'a> {
    events: Vec<Lex<'a>>,
    pos: usize,
    last_line: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<&Lex<'a>> {
        self.events.get(self.pos)
    }

    fn next(&mut self) -> Option<&Lex<'a>> {
        let ev = self.events.get(self.pos);
        self.pos += 1;
        ev
    }

    fn skip_ws(&mut self) -> Result<(), PlanError> {
        while let Some(Lex::Text { text, line }) = self.peek() {
            if !text.trim().is_empty() {
                return Err(malformed(*line, format!("unexpected text {:?}", excerpt(text))));
            }
            self.pos += 1;
        }
        Ok(())
    }

    fn at_open(&self, want: &str) -> bool {
        matches!(self.peek(), Some(Lex::Open { name, .. }) if *name == want)
    }

    fn at_close(&self, want: &str) -> bool {
        matches!(self.peek(), Some(Lex::Close { name, .. }) if *name == want)
    }

    fn expect_close(&mut self, want: &str) -> Result<(), PlanError> {
        let last_line = self.last_line;
        match self.next() {
            Some(Lex::Close { name, .. }) if *name == want => Ok(()),
            Some(Lex::Close { name, line }) => Err(malformed(*line, format!("expected </{want}>, found </{name}>"))),
            Some(Lex::Open { name, line, .. }) => Err(malformed(*line, format!("expected </{want}>, found <{name}>"))),
            Some(Lex::Text { line, .. }) => Err(malformed(*line, format!("expected </{want}>"))),
            None => Err(malformed(last_line, format!("unclosed <{want}>"))),
        }
    }

    /// Text up to the matching close tag, trimmed; rejects nested tags.
    fn content(&mut self, tag: &str) -> Result<String, PlanError> {
        let mut text = String::new();
        if let Some(Lex::Text { text: t, line }) = self.peek() {
            if TAG.is_match(t) {
                return Err(malformed(*line, format!("tag-shaped text inside <{tag}>")));
            }
            text = t.trim().to_string();
            self.pos += 1;
        }
        self.expect_close(tag)?;
        Ok(text)
    }
}

fn excerpt(text: &str) -> String {
    let t = text.trim();
    t.chars().take(40).collect()
}

fn attr<'a>(attrs: &[(&'a str, &'a str)], key: &str) -> Option<&'a str> {
    attrs.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
}

fn only_attrs(attrs: &[(&str, &str)], allowed: &[&str], tag: &str, line: usize) -> Result<(), PlanError> {
    for (k, _) in attrs {
        if !allowed.contains(k) {
            return Err(malformed(line, format!("unknown attribute {k} on <{tag}>")));
        }
    }
    Ok(())
}

fn parse_positive(raw: &str, what: &str, line: usize) -> Result<usize, PlanError> {
    raw.trim()
        .parse::<usize>()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| malformed(line, format!("{what} {raw:?} is not a positive integer")))
}

fn parse_deps(raw: &str, line: usize) -> Result<Vec<usize>, PlanError> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(Vec::new());
    }
    let mut deps = BTreeSet::new();
    for part in raw.split(',') {
        let dep = part
            .trim()
            .parse::<usize>()
            .map_err(|_| malformed(line, format!("dependency {:?} is not an integer", part.trim())))?;
        deps.insert(dep);
    }
    let deps: Vec<usize> = deps.into_iter().collect();
    Ok(if deps == [0] { Vec::new() } else { deps })
}

fn parse_plan_block(cur: &mut Cursor<'_>) -> Result<PlanDocument, PlanError> {
    let mut plan = PlanDocument::default();
    cur.skip_ws()?;
    if cur.at_open("Goal") {
        cur.next();
        plan.goal = cur.content("Goal")?;
    }
    loop {
        cur.skip_ws()?;
        if cur.at_close("Plan") {
            cur.next();
            return Ok(plan);
        }
        match cur.next() {
            Some(Lex::Open { name: "Outline", attrs, line, .. }) => {
                let line = *line;
                only_attrs(attrs, &["id", "deps"], "Outline", line)?;
                let id = attr(attrs, "id").ok_or_else(|| malformed(line, "<Outline> needs id"))?;
                let deps = attr(attrs, "deps").ok_or_else(|| malformed(line, "<Outline> needs deps"))?;
                let index = parse_positive(id, "outline id", line)?;
                let deps = parse_deps(deps, line)?;
                let description = cur.content("Outline")?;
                plan.outlines.push(Outline {
                    index,
                    deps,
                    description,
                });
            }
            Some(Lex::Open { name, line, .. }) => {
                return Err(malformed(*line, format!("<{name}> is not allowed inside <Plan>")))
            }
            Some(Lex::Close { name, line }) => {
                return Err(malformed(*line, format!("unexpected </{name}> inside <Plan>")))
            }
            Some(Lex::Text { .. }) => unreachable!("skip_ws consumed text"),
            None => return Err(malformed(cur.last_line, "unclosed <Plan>")),
        }
    }
}

fn cursor(text: &str) -> Result<Cursor<'_>, PlanError> {
    Ok(Cursor {
        events: lex(text)?,
        pos: 0,
        last_line: line_of(text, text.len()),
    })
}

/// Moves past leading free text to the `<Plan>` tag; returns its byte offset.
fn seek_plan(cur: &mut Cursor<'_>) -> Result<usize, PlanError> {
    loop {
        match cur.next() {
            Some(Lex::Text { .. }) => continue,
            Some(Lex::Open { name: "Plan", attrs, start, line }) => {
                if !attrs.is_empty() {
                    return Err(malformed(*line, "<Plan> takes no attributes"));
                }
                return Ok(*start);
            }
            Some(Lex::Open { name, line, .. }) => {
                return Err(malformed(*line, format!("<{name}> before <Plan>")))
            }
            Some(Lex::Close { name, line }) => {
                return Err(malformed(*line, format!("</{name}> before <Plan>")))
            }
            None => return Err(PlanError::MissingSection("Plan".into())),
        }
    }
}

fn normalize_newlines(text: &str) -> String {
    text.replace("\r\n", "\n")
}

fn preamble_of(text: &str, plan_start: usize) -> Option<String> {
    let preamble = text[..plan_start].trim_end();
    (!preamble.trim().is_empty()).then(|| preamble.to_string())
}

/// Parses the first `<Plan>` block in `text`; anything after `</Plan>` is ignored.
pub fn parse_plan(text: &str) -> Result<PlanDocument, PlanError> {
    parse_head(text).map(|(_, plan)| plan)
}

/// Free-text preamble and the first `<Plan>` block; anything after `</Plan>`
/// is ignored.
pub fn parse_head(text: &str) -> Result<(Option<String>, PlanDocument), PlanError> {
    let text = normalize_newlines(text);
    let mut cur = cursor(&text)?;
    let plan_start = seek_plan(&mut cur)?;
    let plan = parse_plan_block(&mut cur)?;
    check_plan(&plan)?;
    Ok((preamble_of(&text, plan_start), plan))
}

/// Parses a whole trace; strict single pass, the first error wins.
pub fn parse_trace(text: &str) -> Result<TraceDocument, PlanError> {
    let doc = parse_sections(text, true)?;
    super::verify::check_steps(&doc)?;
    Ok(doc)
}

/// Reads the sections of a trace without checking indices, dependencies or
/// step order. Only malformed markup and missing sections are errors.
pub fn parse_trace_unchecked(text: &str) -> Result<TraceDocument, PlanError> {
    parse_sections(text, false)
}

fn parse_sections(text: &str, check: bool) -> Result<TraceDocument, PlanError> {
    let text = normalize_newlines(text);
    let mut cur = cursor(&text)?;
    let plan_start = seek_plan(&mut cur)?;
    let preamble = preamble_of(&text, plan_start);
    let plan = parse_plan_block(&mut cur)?;
    if check {
        check_plan(&plan)?;
    }

    cur.skip_ws()?;
    if !cur.at_open("Execution") {
        return match cur.peek() {
            None | Some(Lex::Open { name: "Conclusion", .. }) => Err(PlanError::MissingSection("Execution".into())),
            Some(Lex::Open { name, line, .. }) => Err(malformed(*line, format!("expected <Execution>, found <{name}>"))),
            Some(Lex::Close { name, line }) => Err(malformed(*line, format!("unexpected </{name}>"))),
            Some(Lex::Text { line, .. }) => Err(malformed(*line, "expected <Execution>")),
        };
    }
    cur.next();
    let mut steps = Vec::new();
    loop {
        cur.skip_ws()?;
        if cur.at_close("Execution") {
            cur.next();
            break;
        }
        match cur.next() {
            Some(Lex::Open { name: "Step", attrs, line, .. }) => {
                let line = *line;
                only_attrs(attrs, &["i"], "Step", line)?;
                let raw = attr(attrs, "i").ok_or_else(|| malformed(line, "<Step> needs i"))?;
                let index = parse_positive(raw, "step index", line)?;
                let text = cur.content("Step")?;
                steps.push(Step { index, text });
            }
            Some(Lex::Open { name, line, .. }) => {
                return Err(malformed(*line, format!("<{name}> is not allowed inside <Execution>")))
            }
            Some(Lex::Close { name, line }) => {
                return Err(malformed(*line, format!("unexpected </{name}> inside <Execution>")))
            }
            Some(Lex::Text { .. }) => unreachable!("skip_ws consumed text"),
            None => return Err(malformed(cur.last_line, "unclosed <Execution>")),
        }
    }

    cur.skip_ws()?;
    if !cur.at_open("Conclusion") {
        return match cur.peek() {
            None => Err(PlanError::MissingSection("Conclusion".into())),
            Some(Lex::Open { name, line, .. }) => Err(malformed(*line, format!("expected <Conclusion>, found <{name}>"))),
            Some(Lex::Close { name, line }) => Err(malformed(*line, format!("unexpected </{name}>"))),
            Some(Lex::Text { line, .. }) => Err(malformed(*line, "expected <Conclusion>")),
        };
    }
    cur.next();
    let conclusion = cur.content("Conclusion")?;
    cur.skip_ws()?;
    if let Some(ev) = cur.peek() {
        let line = match ev {
            Lex::Open { line, .. } | Lex::Close { line, .. } | Lex::Text { line, .. } => *line,
        };
        return Err(malformed(line, "content after </Conclusion>"));
    }

    Ok(TraceDocument {
        preamble,
        plan,
        steps,
        conclusion,
    })
}

/// Canonical form of a trace: `serialize_trace(parse_trace(text))`.
pub fn normalize(text: &str) -> Result<String, PlanError> {
    parse_trace(text).map(|doc| serialize_trace(&doc))
}
