//! Two-phase pipeline: linear planning until `</Plan>`, then frontier
//! execution of the plan's net and a conclusion over all terminal tokens.

mod metrics;
mod producers;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{CacheStats, PrefixCache};
use crate::graph::{dag_to_petri, PetriNet};
use crate::par::{self, ExecMode};
use crate::plan::{
    outline_index_of_transition, parse_head, parse_trace, plan_to_dag, serialize_head, serialize_trace,
    verify_syntax_with, ConclusionPolicy, PlanDocument, PlanError, Step, TraceDocument, SOURCE_NODE,
};
use crate::scheduler::{
    FiredRecord, Marking, ScheduleError, Scheduler, StepKind, StepProducer, StepRequest,
};
use crate::text::{token_count, tokenize};

pub use metrics::{speedup_histogram, HistogramBin, RunMetrics, SPEEDUP_BIN_WIDTH};
#[cfg(feature = "remote")]
pub use producers::RemoteProducer;
pub use producers::{ScriptedProducer, SyntheticProducer, DEFAULT_SYNTHETIC_LENGTHS};

pub const PLAN_END_TAG: &str = "</Plan>";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EngineOptions {
    pub policy: ConclusionPolicy,
    pub mode: ExecMode,
    /// Concurrent producer limit; `None` uses every core.
    pub workers: Option<usize>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("plan could not be parsed: {error}")]
    PlanParseFailure { raw: String, error: PlanError },
    #[error("plan violates the conclusion policy: {0}")]
    PolicyViolation(PlanError),
    #[error("producer failed at {stage}: {message}")]
    ProducerFailure { stage: String, message: String },
    #[error("step {step} is recorded before its dependency {dep}")]
    InfeasibleOrder { step: usize, dep: usize },
    #[error("trace is not valid: {0}")]
    InvalidTrace(String),
    #[error("produced output cannot be written as a trace: {0}")]
    Unrepresentable(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl EngineError {
    /// 2 for plan or trace problems, 3 for producer problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::PlanParseFailure { .. } | Self::PolicyViolation(_) | Self::InfeasibleOrder { .. } | Self::InvalidTrace(_) => 2,
            Self::ProducerFailure { .. } | Self::Unrepresentable(_) => 3,
            Self::Internal(_) => 1,
        }
    }
}

impl From<ScheduleError> for EngineError {
    fn from(e: ScheduleError) -> Self {
        match e {
            ScheduleError::ProducerFailure { trans, message } => Self::ProducerFailure { stage: trans, message },
            other => Self::Internal(other.to_string()),
        }
    }
}

/// Incremental search for `</Plan>` over a chunked stream. Only the bytes that
/// could complete a tag straddling chunks are rescanned.
#[derive(Debug, Default)]
pub struct PlanEndDetector {
    buf: String,
    scanned: usize,
    end: Option<usize>,
}

impl PlanEndDetector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Feeds a chunk; returns true once the tag has been seen.
    pub fn push(&mut self, chunk: &str) -> bool {
        if self.end.is_some() {
            return true;
        }
        self.buf.push_str(chunk);
        let mut from = self.scanned.saturating_sub(PLAN_END_TAG.len() - 1);
        while !self.buf.is_char_boundary(from) {
            from -= 1;
        }
        if let Some(at) = self.buf[from..].find(PLAN_END_TAG) {
            self.end = Some(from + at + PLAN_END_TAG.len());
        }
        self.scanned = self.buf.len();
        self.end.is_some()
    }

    pub fn is_done(&self) -> bool {
        self.end.is_some()
    }

    /// Text through the tag, and whatever followed it in the last chunk.
    pub fn finish(self) -> (String, Option<String>) {
        match self.end {
            Some(end) => {
                let mut buf = self.buf;
                let rest = buf.split_off(end);
                (buf, (!rest.is_empty()).then_some(rest))
            }
            None => (self.buf, None),
        }
    }
}

/// Phase I: pulls planning output until `</Plan>`.
pub fn plan_phase(input: &str, producer: &dyn StepProducer) -> Result<String, EngineError> {
    let request = StepRequest {
        kind: StepKind::Plan,
        trans_id: None,
        spec: "plan".into(),
        context: input.to_string(),
    };
    let failure = |e: crate::scheduler::ProducerError| EngineError::ProducerFailure {
        stage: "plan".into(),
        message: e.0,
    };
    let mut detector = PlanEndDetector::new();
    for chunk in producer.stream_plan(&request).map_err(failure)? {
        if detector.push(&chunk.map_err(failure)?) {
            break;
        }
    }
    let done = detector.is_done();
    let (raw, discarded) = detector.finish();
    if !done {
        return Err(EngineError::PlanParseFailure {
            raw,
            error: PlanError::MissingSection("Plan".into()),
        });
    }
    if let Some(rest) = discarded.filter(|r| !r.trim().is_empty()) {
        log::warn!("discarding {} bytes of planning output after {PLAN_END_TAG}", rest.len());
    }
    Ok(raw)
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RunReport {
    pub trace: TraceDocument,
    pub metrics: RunMetrics,
    pub cache_stats: CacheStats,
    pub log: Vec<FiredRecord>,
}

fn compile(plan: &PlanDocument, policy: ConclusionPolicy, raw: &str) -> Result<PetriNet, EngineError> {
    let dag = plan_to_dag(plan, policy).map_err(|e| match e {
        PlanError::MultipleConclusions(_) => EngineError::PolicyViolation(e),
        error => EngineError::PlanParseFailure {
            raw: raw.to_string(),
            error,
        },
    })?;
    dag_to_petri(&dag).map_err(|e| EngineError::Internal(e.to_string()))
}

fn rounds_of(log: &[FiredRecord]) -> Vec<Vec<usize>> {
    let mut by_round: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for r in log {
        by_round.entry(r.round).or_default().push(r.produced_tokens);
    }
    by_round.into_values().collect()
}

fn canonical(text: &str) -> String {
    text.replace("\r\n", "\n").trim().to_string()
}

/// Steps in (layer, id) order, which always respects dependencies.
fn steps_from_log(net: &PetriNet, log: &[FiredRecord]) -> Vec<Step> {
    let text: BTreeMap<&str, &str> = log.iter().map(|r| (r.trans_id.as_str(), r.text.as_str())).collect();
    net.serial_order()
        .into_iter()
        .map(|t| Step {
            index: outline_index_of_transition(t).expect("plan nets name transitions by outline"),
            text: canonical(text[t]),
        })
        .collect()
}

fn execute(
    input: &str,
    producer: &dyn StepProducer,
    opts: EngineOptions,
    serial: bool,
) -> Result<RunReport, EngineError> {
    let raw = plan_phase(input, producer)?;
    let (preamble, plan) = parse_head(&raw).map_err(|error| EngineError::PlanParseFailure {
        raw: raw.clone(),
        error,
    })?;
    let net = compile(&plan, opts.policy, &raw)?;
    let head = serialize_head(preamble.as_deref(), &plan);
    let seed = if input.trim().is_empty() {
        head
    } else {
        format!("{input}\n{head}")
    };

    let cache = PrefixCache::new();
    let mut sched = Scheduler::new(&net, &cache, opts.mode);
    sched.seed(SOURCE_NODE, seed.clone(), &tokenize(&seed))?;
    par::with_workers(opts.workers, || {
        if serial {
            sched.run_serial(producer)
        } else {
            sched.run_to_completion(producer)
        }
    })?;

    let terminals: Vec<&str> = net.terminal_places().collect();
    let (merged, ctx) = sched.merge_places(&terminals)?;
    let request = StepRequest {
        kind: StepKind::Conclusion,
        trans_id: None,
        spec: plan.goal.clone(),
        context: merged.context_text(),
    };
    let out = producer.produce(&request).map_err(|e| EngineError::ProducerFailure {
        stage: "conclusion".into(),
        message: e.0,
    })?;
    cache.append(ctx, &out.tokens).map_err(|e| EngineError::Internal(e.to_string()))?;
    let cache_stats = cache.stats();

    let log = sched.log().to_vec();
    let trace = TraceDocument {
        preamble,
        steps: steps_from_log(&net, &log),
        plan,
        conclusion: canonical(&out.text),
    };
    let report = verify_syntax_with(&trace, opts.policy);
    if !report.ok {
        let msgs: Vec<String> = report.violations.iter().map(ToString::to_string).collect();
        return Err(EngineError::Unrepresentable(msgs.join("; ")));
    }
    if parse_trace(&serialize_trace(&trace)).as_ref() != Ok(&trace) {
        return Err(EngineError::Unrepresentable(
            "a step or the conclusion contains tag-shaped text".into(),
        ));
    }
    let metrics = RunMetrics::from_rounds(token_count(&raw), &rounds_of(&log), out.tokens.len());
    Ok(RunReport {
        trace,
        metrics,
        cache_stats,
        log,
    })
}

/// Plans, executes the frontier round by round, and concludes.
pub fn run_inference(input: &str, producer: &dyn StepProducer, opts: EngineOptions) -> Result<RunReport, EngineError> {
    execute(input, producer, opts, false)
}

/// Same pipeline, one transition per round: the autoregressive baseline.
pub fn serial_reference(input: &str, producer: &dyn StepProducer, opts: EngineOptions) -> Result<RunReport, EngineError> {
    execute(input, producer, opts, true)
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Replay {
    pub marking: Marking,
    pub metrics: RunMetrics,
    pub log: Vec<FiredRecord>,
}

/// First step recorded before one of its dependencies.
pub fn infeasible_step(doc: &TraceDocument) -> Option<(usize, usize)> {
    let mut done = BTreeSet::new();
    for s in &doc.steps {
        if let Some(o) = doc.plan.outline(s.index) {
            if let Some(dep) = o.step_deps().find(|d| !done.contains(d)) {
                return Some((s.index, dep));
            }
        }
        done.insert(s.index);
    }
    None
}

/// Re-executes a recorded trace with its own texts. The returned marking's
/// cache refs belong to a private store that is gone once this returns.
pub fn replay_trace(doc: &TraceDocument, opts: EngineOptions) -> Result<Replay, EngineError> {
    if let Some((step, dep)) = infeasible_step(doc) {
        return Err(EngineError::InfeasibleOrder { step, dep });
    }
    let report = verify_syntax_with(doc, opts.policy);
    if !report.ok {
        let msgs: Vec<String> = report.violations.iter().map(ToString::to_string).collect();
        return Err(EngineError::InvalidTrace(msgs.join("; ")));
    }
    let head = serialize_head(doc.preamble.as_deref(), &doc.plan);
    let net = compile(&doc.plan, opts.policy, &head)?;
    let producer = ScriptedProducer::from_trace(doc);
    let cache = PrefixCache::new();
    let mut sched = Scheduler::new(&net, &cache, opts.mode);
    sched.seed(SOURCE_NODE, head.clone(), &tokenize(&head))?;
    par::with_workers(opts.workers, || sched.run_to_completion(&producer))?;
    let log = sched.log().to_vec();
    Ok(Replay {
        marking: sched.marking().clone(),
        metrics: RunMetrics::from_rounds(token_count(&head), &rounds_of(&log), token_count(&doc.conclusion)),
        log,
    })
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CorpusItem {
    pub name: String,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<RunMetrics>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CorpusReport {
    pub traces: usize,
    pub ok: usize,
    pub failed: usize,
    pub mean_speedup: f64,
    pub speedup_histogram: Vec<HistogramBin>,
    pub items: Vec<CorpusItem>,
}

/// Replays every trace (in parallel under `opts.mode`) and aggregates speedups
/// over the ones that succeed.
pub fn replay_corpus(docs: &[(String, TraceDocument)], opts: EngineOptions) -> CorpusReport {
    let items: Vec<CorpusItem> = par::with_workers(opts.workers, || {
        par::map(opts.mode, docs, |(name, doc)| match replay_trace(doc, opts) {
            Ok(r) => CorpusItem {
                name: name.clone(),
                ok: true,
                error: None,
                metrics: Some(r.metrics),
            },
            Err(e) => CorpusItem {
                name: name.clone(),
                ok: false,
                error: Some(e.to_string()),
                metrics: None,
            },
        })
    });
    let speedups: Vec<f64> = items.iter().filter_map(|i| i.metrics.as_ref().map(|m| m.speedup)).collect();
    let ok = speedups.len();
    CorpusReport {
        traces: items.len(),
        ok,
        failed: items.len() - ok,
        mean_speedup: if ok == 0 { 0.0 } else { speedups.iter().sum::<f64>() / ok as f64 },
        speedup_histogram: speedup_histogram(&speedups),
        items,
    }
}
