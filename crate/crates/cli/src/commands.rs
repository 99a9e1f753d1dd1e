use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use frontier::attention::{MaskExport, SegmentLayout};
use frontier::chains::{
    compile_to_plan, dedup_chains, dedup_positions, merge_chains, merge_stats, parse_chain_lines, ChainError,
    MergeStats, RepeatMode,
};
use frontier::engine::{replay_trace, run_inference, EngineError, EngineOptions, RunMetrics, ScriptedProducer, SyntheticProducer};
use frontier::graph::{dag_to_dot, dag_to_petri, petri_to_dot};
use frontier::par::{self, ExecMode};
use frontier::plan::{
    parse_head, parse_trace, plan_to_dag, serialize_head, serialize_trace, verify_text_with, ConclusionPolicy,
};
use frontier::scheduler::{FiredRecord, StepProducer};
use serde::Serialize;

use crate::config::{Config, ProducerKind};

/// Error carrying the process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

fn fail(code: u8, message: impl Into<String>) -> anyhow::Error {
    Failure {
        code,
        message: message.into(),
    }
    .into()
}

fn engine_failure(e: EngineError) -> anyhow::Error {
    fail(e.exit_code() as u8, e.to_string())
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn policy(cfg: &Config) -> ConclusionPolicy {
    ConclusionPolicy::from_single_flag(cfg.single_conclusion)
}

fn options(cfg: &Config) -> EngineOptions {
    EngineOptions {
        policy: policy(cfg),
        mode: ExecMode::Parallel,
        workers: cfg.workers,
    }
}

/// What a command prints on stdout and the exit code it finishes with.
pub struct Outcome {
    pub stdout: Vec<u8>,
    pub code: u8,
}

impl Outcome {
    fn ok(stdout: impl Into<Vec<u8>>) -> Self {
        Self {
            stdout: stdout.into(),
            code: 0,
        }
    }
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct CompileReport {
    #[serde(flatten)]
    stats: MergeStats,
    input_chains: usize,
    outlines: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    plan_file: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    plan: Option<String>,
}

/// Chains file to plan text. Writes the plan to `out` when given, otherwise
/// includes it in the report.
pub fn compile(cfg: &Config, chains_file: &Path, out: Option<&Path>, dot: Option<&Path>) -> Result<Outcome> {
    let text = read(chains_file)?;
    let mode = if cfg.strict_dedup { RepeatMode::Strict } else { RepeatMode::Lenient };
    let name = chains_file.display();
    let lines = parse_chain_lines(&text, mode).map_err(|e| fail(1, format!("{name}: {e}")))?;
    if lines.is_empty() {
        return Err(fail(1, format!("{name}: {}", ChainError::NoChains)));
    }
    let parsed: Vec<_> = lines.iter().map(|(_, c)| c.clone()).collect();
    let kept = dedup_positions(&parsed, Some(cfg.chain_cap));
    let chains = dedup_chains(&parsed, Some(cfg.chain_cap));
    let dag = merge_chains(&chains).map_err(|e| match e {
        ChainError::CycleDetected { entities, chains } => {
            let at: Vec<String> = chains.iter().map(|&p| lines[kept[p]].0.to_string()).collect();
            fail(
                1,
                format!("{name}: cycle through {{{}}} in chains at lines {}", entities.join(", "), at.join(", ")),
            )
        }
        other => fail(1, format!("{name}: {other}")),
    })?;
    let stats = merge_stats(&chains, &dag).map_err(|e| fail(1, e.to_string()))?;
    let plan = compile_to_plan(&dag).map_err(|e| fail(1, format!("{name}: {e}")))?;
    plan_to_dag(&plan, policy(cfg)).map_err(|e| fail(1, format!("{name}: {e}")))?;

    let preamble: Vec<String> = chains.iter().map(|c| format!("Path {}", c.render())).collect();
    let head = serialize_head(Some(&preamble.join("\n")), &plan);
    if let Some(path) = dot {
        write(path, dag_to_dot(&dag).as_bytes())?;
    }
    if let Some(path) = out {
        write(path, head.as_bytes())?;
    }
    let report = CompileReport {
        stats,
        input_chains: parsed.len(),
        outlines: plan.outlines.len(),
        plan_file: out.map(Path::to_path_buf),
        plan: out.is_none().then_some(head),
    };
    Ok(Outcome::ok(json(&report)?))
}

#[derive(Serialize)]
struct Violation {
    file: String,
    code: String,
    location: String,
    message: String,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct FileResult {
    file: String,
    ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    rounds: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    speedup: Option<f64>,
}

#[derive(Serialize)]
struct ValidateReport {
    ok: bool,
    files: usize,
    passed: usize,
    failed: usize,
    violations: Vec<Violation>,
    items: Vec<FileResult>,
}

fn collect_files(paths: &[PathBuf], out: &mut Vec<PathBuf>) -> Result<()> {
    for p in paths {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = fs::read_dir(p)
                .with_context(|| format!("listing {}", p.display()))?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            entries.sort();
            collect_files(&entries, out)?;
        } else {
            out.push(p.clone());
        }
    }
    Ok(())
}

fn validate_one(path: &Path, cfg: &Config) -> (FileResult, Vec<Violation>) {
    let file = path.display().to_string();
    let violation = |code: &str, location: &str, message: String| Violation {
        file: file.clone(),
        code: code.into(),
        location: location.into(),
        message,
    };
    let mut violations = Vec::new();
    let mut metrics: Option<RunMetrics> = None;
    match fs::read_to_string(path) {
        Err(e) => violations.push(violation("Unreadable", "file", e.to_string())),
        Ok(text) => {
            let report = verify_text_with(&text, policy(cfg));
            for v in report.violations {
                violations.push(violation(&format!("{:?}", v.code), &v.location, v.message));
            }
            if violations.is_empty() {
                let replay = parse_trace(&text)
                    .map_err(|e| e.to_string())
                    .and_then(|doc| replay_trace(&doc, options(cfg)).map_err(|e| e.to_string()));
                match replay {
                    Ok(r) => metrics = Some(r.metrics),
                    Err(e) => violations.push(violation("ReplayFailure", "execution", e)),
                }
            }
        }
    }
    let result = FileResult {
        file: file.clone(),
        ok: violations.is_empty(),
        rounds: metrics.as_ref().map(|m| m.rounds),
        speedup: metrics.as_ref().map(|m| m.speedup),
    };
    (result, violations)
}

/// Verifies and replays every trace file under `paths`. Exit code 1 if any
/// file has violations.
pub fn validate(cfg: &Config, paths: &[PathBuf]) -> Result<Outcome> {
    let mut files = Vec::new();
    collect_files(paths, &mut files)?;
    if files.is_empty() {
        bail!("no trace files given");
    }
    let results = par::with_workers(cfg.workers, || par::map(ExecMode::Parallel, &files, |f| validate_one(f, cfg)));
    let mut items = Vec::new();
    let mut violations = Vec::new();
    for (item, v) in results {
        items.push(item);
        violations.extend(v);
    }
    let passed = items.iter().filter(|i| i.ok).count();
    let report = ValidateReport {
        ok: passed == items.len(),
        files: items.len(),
        passed,
        failed: items.len() - passed,
        violations,
        items,
    };
    Ok(Outcome {
        stdout: json(&report)?.into_bytes(),
        code: u8::from(!report.ok),
    })
}

pub struct RunArgs<'a> {
    pub input: &'a Path,
    pub script: Option<&'a Path>,
    pub plan: Option<&'a Path>,
    pub seed: u64,
    pub lengths: Option<(usize, usize)>,
    pub max_tokens: usize,
    pub timeout: Duration,
    pub out: Option<&'a Path>,
    pub dot: Option<&'a Path>,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct RunSummary<'a> {
    metrics: &'a RunMetrics,
    cache_stats: &'a frontier::cache::CacheStats,
    log: &'a [FiredRecord],
    #[serde(skip_serializing_if = "Option::is_none")]
    trace_file: Option<&'a Path>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace: Option<String>,
}

fn producer(cfg: &Config, args: &RunArgs) -> Result<Box<dyn StepProducer>> {
    match cfg.producer {
        ProducerKind::Scripted => {
            let path = args.script.context("--producer scripted needs --script TRACE")?;
            let doc = parse_trace(&read(path)?).map_err(|e| fail(2, format!("{}: {e}", path.display())))?;
            Ok(Box::new(ScriptedProducer::from_trace(&doc)))
        }
        ProducerKind::Synthetic => {
            let path = args.plan.or(args.script).context("--producer synthetic needs --plan FILE")?;
            let (preamble, plan) = parse_head(&read(path)?).map_err(|e| fail(2, format!("{}: {e}", path.display())))?;
            let mut p = SyntheticProducer::new(preamble.as_deref(), &plan, args.seed);
            if let Some((lo, hi)) = args.lengths {
                p = p.with_lengths(lo, hi);
            }
            Ok(Box::new(p))
        }
        ProducerKind::Remote => remote(cfg, args),
    }
}

#[cfg(feature = "remote")]
fn remote(cfg: &Config, args: &RunArgs) -> Result<Box<dyn StepProducer>> {
    let endpoint = cfg.endpoint.clone().context("--producer remote needs --endpoint URL")?;
    Ok(Box::new(frontier::engine::RemoteProducer::new(endpoint, args.max_tokens, args.timeout)))
}

#[cfg(not(feature = "remote"))]
fn remote(_cfg: &Config, args: &RunArgs) -> Result<Box<dyn StepProducer>> {
    let _ = (args.max_tokens, args.timeout);
    bail!("this build has no remote producer; rebuild with the `remote` feature")
}

/// Runs the engine on the question in `input`. Exit codes follow the engine:
/// 2 for plan or policy errors, 3 for producer failures.
pub fn run(cfg: &Config, args: &RunArgs) -> Result<Outcome> {
    let input = read(args.input)?;
    let producer = producer(cfg, args)?;
    let report = run_inference(input.trim_end(), producer.as_ref(), options(cfg)).map_err(engine_failure)?;
    let trace = serialize_trace(&report.trace);
    if let Some(path) = args.dot {
        let dag = plan_to_dag(&report.trace.plan, policy(cfg))?;
        write(path, petri_to_dot(&dag_to_petri(&dag)?).as_bytes())?;
    }
    if let Some(path) = args.out {
        write(path, trace.as_bytes())?;
    }
    let summary = RunSummary {
        metrics: &report.metrics,
        cache_stats: &report.cache_stats,
        log: &report.log,
        trace_file: args.out,
        trace: args.out.is_none().then_some(trace),
    };
    Ok(Outcome::ok(json(&summary)?))
}

#[derive(Serialize)]
struct ReplaySummary<'a> {
    metrics: &'a RunMetrics,
    log: &'a [FiredRecord],
    places: BTreeMap<&'a str, bool>,
}

pub fn replay(cfg: &Config, trace: &Path) -> Result<Outcome> {
    let doc = parse_trace(&read(trace)?).map_err(|e| fail(2, format!("{}: {e}", trace.display())))?;
    let r = replay_trace(&doc, options(cfg)).map_err(engine_failure)?;
    let summary = ReplaySummary {
        metrics: &r.metrics,
        log: &r.log,
        places: r.marking.by_place.iter().map(|(p, t)| (p.as_str(), t.is_some())).collect(),
    };
    Ok(Outcome::ok(json(&summary)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum MaskFormat {
    Json,
    Bin,
}

/// Mask and position export for the layout of a trace.
pub fn mask(cfg: &Config, trace: &Path, format: MaskFormat, out: Option<&Path>) -> Result<Outcome> {
    let doc = parse_trace(&read(trace)?).map_err(|e| fail(2, format!("{}: {e}", trace.display())))?;
    let layout = SegmentLayout::from_trace(&doc).map_err(|e| fail(2, format!("{}: {e}", trace.display())))?;
    let export = par::with_workers(cfg.workers, || MaskExport::new(&layout, ExecMode::Parallel));
    let bytes = match format {
        MaskFormat::Json => json(&export)?.into_bytes(),
        MaskFormat::Bin => export.to_bytes(),
    };
    match out {
        Some(path) => {
            write(path, &bytes)?;
            Ok(Outcome::ok(json(&serde_json::json!({ "n": export.n, "file": path }))?))
        }
        None => Ok(Outcome::ok(bytes)),
    }
}
