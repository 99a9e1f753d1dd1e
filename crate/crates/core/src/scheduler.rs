//! Round-barriered execution of a [`PetriNet`].
//!
//! A transition is enabled when every input place holds a token and every
//! output place is empty. Each round fires the whole frontier: producers see
//! immutable context snapshots and may run concurrently, and results are
//! published together once all of them succeed.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{CacheError, PrefixCache, SequenceHandle};
use crate::graph::{HistoryEntry, Origin, PetriNet, PlaceId, SemanticToken, TransId};
use crate::par::{self, ExecMode};
use crate::text::{tokenize, TokenId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Marking {
    pub by_place: BTreeMap<PlaceId, Option<SemanticToken>>,
    pub round: usize,
}

impl Marking {
    pub fn initial(net: &PetriNet) -> Self {
        Self {
            by_place: net.initial_marking().clone(),
            round: 0,
        }
    }

    pub fn token(&self, place: &str) -> Option<&SemanticToken> {
        self.by_place.get(place).and_then(Option::as_ref)
    }

    pub fn is_filled(&self, place: &str) -> bool {
        self.token(place).is_some()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Frontier {
    pub enabled: BTreeSet<TransId>,
    /// Connected components of `enabled` under "shares an input place",
    /// ordered by smallest member.
    pub fork_groups: Vec<BTreeSet<TransId>>,
    pub join_set: BTreeSet<TransId>,
}

impl Frontier {
    pub fn is_empty(&self) -> bool {
        self.enabled.is_empty()
    }
}

pub fn is_enabled(net: &PetriNet, marking: &Marking, trans: &str) -> bool {
    net.transition(trans).is_some_and(|t| {
        t.pre_set.iter().all(|p| marking.is_filled(p)) && t.post_set.iter().all(|q| !marking.is_filled(q))
    })
}

pub fn compute_frontier(net: &PetriNet, marking: &Marking) -> Frontier {
    let enabled: BTreeSet<TransId> = net
        .transitions()
        .keys()
        .filter(|t| is_enabled(net, marking, t))
        .cloned()
        .collect();
    let join_set = enabled
        .iter()
        .filter(|t| net.transition(t).is_some_and(|t| t.pre_set.len() >= 2))
        .cloned()
        .collect();

    // Union-find over transitions linked through a shared input place.
    let ids: Vec<&TransId> = enabled.iter().collect();
    let mut parent: Vec<usize> = (0..ids.len()).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let mut first_reader: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, t) in ids.iter().enumerate() {
        for p in &net.transition(t).unwrap().pre_set {
            match first_reader.get(p.as_str()) {
                Some(&j) => {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    parent[a.max(b)] = a.min(b);
                }
                None => {
                    first_reader.insert(p, i);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, BTreeSet<TransId>> = BTreeMap::new();
    for (i, t) in ids.iter().enumerate() {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().insert((*t).clone());
    }
    Frontier {
        enabled,
        fork_groups: groups.into_values().collect(),
        join_set,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepKind {
    Plan,
    Step,
    Conclusion,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StepRequest {
    pub kind: StepKind,
    /// Firing transition; `None` for the plan and the conclusion.
    pub trans_id: Option<TransId>,
    /// What to produce: the transition label, or a stage description.
    pub spec: String,
    /// Materialized input history.
    pub context: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepOutput {
    pub text: String,
    pub tokens: Vec<TokenId>,
}

impl StepOutput {
    pub fn from_text(text: impl Into<String>) -> Self {
        let text = text.into();
        let tokens = tokenize(&text);
        Self { text, tokens }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{0}")]
pub struct ProducerError(pub String);

pub type PlanChunks<'a> = Box<dyn Iterator<Item = Result<String, ProducerError>> + 'a>;

/// Generates the text of one step from its context.
pub trait StepProducer: Sync {
    fn produce(&self, request: &StepRequest) -> Result<StepOutput, ProducerError>;

    /// Raw planning output as a stream of chunks. The consumer stops pulling
    /// once it has seen the end of the plan.
    fn stream_plan(&self, request: &StepRequest) -> Result<PlanChunks<'_>, ProducerError> {
        let text = self.produce(request)?.text;
        Ok(Box::new(std::iter::once(Ok(text))))
    }
}

impl<F> StepProducer for F
where
    F: Fn(&StepRequest) -> Result<StepOutput, ProducerError> + Sync,
{
    fn produce(&self, request: &StepRequest) -> Result<StepOutput, ProducerError> {
        self(request)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("transition {0} is not enabled")]
    NotEnabled(TransId),
    #[error("producer failed on {trans}: {message}")]
    ProducerFailure { trans: String, message: String },
    #[error("no transition enabled but {0:?} never fired")]
    Deadlock(Vec<TransId>),
    #[error("place {0} cannot be seeded")]
    NotSeedable(PlaceId),
    #[error(transparent)]
    Cache(#[from] CacheError),
}

/// One entry of the structured run log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FiredRecord {
    pub round: usize,
    pub trans_id: TransId,
    pub input_places: Vec<PlaceId>,
    pub output_places: Vec<PlaceId>,
    pub produced_chars: usize,
    pub produced_tokens: usize,
    /// Half-open position range `[start, end)` of the produced tokens.
    pub positions: [usize; 2],
    #[serde(skip)]
    pub text: String,
}

/// Inputs merged for a transition: the joined token, plus the cache refs that
/// make up the shared prefix and each input's new contribution.
struct Merged {
    token: SemanticToken,
    prefix: Vec<SequenceHandle>,
    branches: Vec<Vec<SequenceHandle>>,
}

/// Orders input places by producing transition id, or by place id for
/// initially marked ones.
fn join_order<'n>(net: &'n PetriNet, places: impl IntoIterator<Item = &'n str>) -> Vec<&'n str> {
    let mut v: Vec<&str> = places.into_iter().collect();
    v.sort_by_key(|p| (net.producer_of(p).unwrap_or(*p), *p));
    v
}

/// Ordered union of the inputs' histories. Entries are identified by cache
/// handle, so anything shared between inputs appears once, at the position of
/// its first occurrence.
fn merge_tokens(inputs: &[&SemanticToken]) -> Merged {
    let lcp = inputs
        .iter()
        .map(|t| t.cache_refs.as_slice())
        .reduce(|a, b| {
            let n = a.iter().zip(b).take_while(|(x, y)| x == y).count();
            &a[..n]
        })
        .unwrap_or(&[]);
    let prefix = lcp.to_vec();
    let mut seen: BTreeSet<SequenceHandle> = prefix.iter().copied().collect();
    let mut token = SemanticToken {
        history: inputs.first().map(|t| t.history[..prefix.len()].to_vec()).unwrap_or_default(),
        cache_refs: prefix.clone(),
        next_position: inputs.iter().map(|t| t.next_position).max().unwrap_or(0),
    };
    let mut branches = Vec::with_capacity(inputs.len());
    for t in inputs {
        let mut own = Vec::new();
        for (entry, h) in t.history.iter().zip(&t.cache_refs) {
            if seen.insert(*h) {
                own.push(*h);
                token.history.push(entry.clone());
                token.cache_refs.push(*h);
            }
        }
        branches.push(own);
    }
    Merged { token, prefix, branches }
}

struct Job {
    trans: TransId,
    inputs: Vec<PlaceId>,
    /// Owned context handle; extended in place with the produced tokens.
    ctx: SequenceHandle,
    base: SemanticToken,
    request: StepRequest,
}

pub struct Scheduler<'a> {
    net: &'a PetriNet,
    cache: &'a PrefixCache,
    mode: ExecMode,
    marking: Marking,
    /// Full-context handle per filled place.
    place_ctx: BTreeMap<PlaceId, SequenceHandle>,
    fired: BTreeSet<TransId>,
    log: Vec<FiredRecord>,
    owned: Vec<SequenceHandle>,
}

impl<'a> Scheduler<'a> {
    pub fn new(net: &'a PetriNet, cache: &'a PrefixCache, mode: ExecMode) -> Self {
        let marking = Marking::initial(net);
        let mut s = Self {
            net,
            cache,
            mode,
            marking,
            place_ctx: BTreeMap::new(),
            fired: BTreeSet::new(),
            log: Vec::new(),
            owned: Vec::new(),
        };
        for p in net.initially_marked().map(String::from).collect::<Vec<_>>() {
            let h = s.own(cache.root());
            s.place_ctx.insert(p, h);
        }
        s
    }

    fn own(&mut self, h: SequenceHandle) -> SequenceHandle {
        self.owned.push(h);
        h
    }

    /// Replaces the empty initial token of a marked place with `text`.
    pub fn seed(&mut self, place: &str, text: impl Into<String>, tokens: &[TokenId]) -> Result<(), ScheduleError> {
        let fresh = self.net.initially_marked().any(|p| p == place) && self.fired.is_empty();
        if !fresh {
            return Err(ScheduleError::NotSeedable(place.to_string()));
        }
        let entry = self.cache.insert(tokens);
        self.own(entry);
        let ctx = self.cache.fork(entry, 1)?[0];
        self.own(ctx);
        if let Some(old) = self.place_ctx.insert(place.to_string(), ctx) {
            // The placeholder stays owned and is released with the rest.
            let _ = old;
        }
        self.marking
            .by_place
            .insert(place.to_string(), Some(SemanticToken::seeded(place, text, entry, tokens.len())));
        Ok(())
    }

    pub fn net(&self) -> &'a PetriNet {
        self.net
    }

    pub fn cache(&self) -> &'a PrefixCache {
        self.cache
    }

    pub fn marking(&self) -> &Marking {
        &self.marking
    }

    pub fn log(&self) -> &[FiredRecord] {
        &self.log
    }

    pub fn frontier(&self) -> Frontier {
        compute_frontier(self.net, &self.marking)
    }

    pub fn is_complete(&self) -> bool {
        self.fired.len() == self.net.transitions().len()
    }

    /// Merged token of `places` (in join order) and a new owned handle holding
    /// its full context. A single place forks its context handle.
    pub fn merge_places(&mut self, places: &[&str]) -> Result<(SemanticToken, SequenceHandle), ScheduleError> {
        let ordered = join_order(self.net, places.iter().copied());
        let inputs: Vec<&SemanticToken> = ordered
            .iter()
            .map(|p| self.marking.token(p).ok_or_else(|| ScheduleError::NotEnabled(format!("place {p}"))))
            .collect::<Result<_, _>>()?;
        if let [single] = ordered.as_slice() {
            let token = inputs[0].clone();
            let ctx = self.cache.fork(self.place_ctx[*single], 1)?[0];
            return Ok((token, self.own(ctx)));
        }
        let merged = merge_tokens(&inputs);
        let ctx = self.join_handles(&merged)?;
        Ok((merged.token, self.own(ctx)))
    }

    fn join_handles(&self, merged: &Merged) -> Result<SequenceHandle, CacheError> {
        let prefix = self.cache.concat(&merged.prefix)?;
        let mut temps = vec![prefix];
        let mut branches = Vec::with_capacity(merged.branches.len());
        for own in &merged.branches {
            let refs: Vec<SequenceHandle> = merged.prefix.iter().chain(own).copied().collect();
            let b = self.cache.concat(&refs)?;
            temps.push(b);
            branches.push(b);
        }
        let joined = self.cache.join_merge(&branches, prefix);
        for t in temps {
            self.cache.release(t)?;
        }
        joined
    }

    /// Context snapshots for `transitions`. Single-input transitions reading
    /// the same place share one fork call.
    fn prepare(&mut self, transitions: &[TransId]) -> Result<Vec<Job>, ScheduleError> {
        let mut readers: BTreeMap<&str, Vec<&TransId>> = BTreeMap::new();
        for t in transitions {
            let tr = self.net.transition(t).unwrap();
            if tr.pre_set.len() == 1 {
                readers.entry(tr.pre_set.iter().next().unwrap()).or_default().push(t);
            }
        }
        let mut forked: BTreeMap<&TransId, SequenceHandle> = BTreeMap::new();
        let mut allocated = Vec::new();
        let mut result = Ok(());
        for (place, ts) in &readers {
            match self.cache.fork(self.place_ctx[*place], ts.len()) {
                Ok(hs) => {
                    allocated.extend(&hs);
                    forked.extend(ts.iter().copied().zip(hs));
                }
                Err(e) => {
                    result = Err(e.into());
                    break;
                }
            }
        }

        let mut jobs = Vec::with_capacity(transitions.len());
        if result.is_ok() {
            for t in transitions {
                let tr = self.net.transition(t).unwrap();
                let ordered = join_order(self.net, tr.pre_set.iter().map(String::as_str));
                let inputs: Vec<&SemanticToken> = ordered.iter().map(|p| self.marking.token(p).unwrap()).collect();
                let (base, ctx) = match forked.get(t) {
                    Some(&h) => (inputs[0].clone(), h),
                    None => {
                        let merged = merge_tokens(&inputs);
                        match self.join_handles(&merged) {
                            Ok(h) => {
                                allocated.push(h);
                                (merged.token, h)
                            }
                            Err(e) => {
                                result = Err(e.into());
                                break;
                            }
                        }
                    }
                };
                let request = StepRequest {
                    kind: StepKind::Step,
                    trans_id: Some(t.clone()),
                    spec: tr.label.clone(),
                    context: base.context_text(),
                };
                jobs.push(Job {
                    trans: t.clone(),
                    inputs: ordered.iter().map(|p| p.to_string()).collect(),
                    ctx,
                    base,
                    request,
                });
            }
        }
        match result {
            Ok(()) => Ok(jobs),
            Err(e) => {
                for h in allocated {
                    let _ = self.cache.release(h);
                }
                Err(e)
            }
        }
    }

    /// Fires `transitions` as one barrier step: prepare all contexts, run all
    /// producers, then publish every output or none.
    fn fire_set(&mut self, transitions: &[TransId], producer: &dyn StepProducer) -> Result<(), ScheduleError> {
        for t in transitions {
            if !is_enabled(self.net, &self.marking, t) {
                return Err(ScheduleError::NotEnabled(t.clone()));
            }
        }
        let jobs = self.prepare(transitions)?;
        let outputs = par::map(self.mode, &jobs, |job| producer.produce(&job.request));
        if let Some((job, Err(e))) = jobs.iter().zip(&outputs).find(|(_, o)| o.is_err()) {
            let err = ScheduleError::ProducerFailure {
                trans: job.trans.clone(),
                message: e.0.clone(),
            };
            for job in &jobs {
                let _ = self.cache.release(job.ctx);
            }
            return Err(err);
        }

        let round = self.marking.round;
        for (job, out) in jobs.into_iter().zip(outputs) {
            let out = out.expect("checked above");
            let before = self.cache.len(job.ctx)?;
            self.cache.append(job.ctx, &out.tokens)?;
            let entry = self.cache.suffix(job.ctx, before)?;
            self.owned.push(job.ctx);
            self.owned.push(entry);

            let start = job.base.next_position;
            let end = start + out.tokens.len();
            let mut token = job.base;
            token.history.push(HistoryEntry {
                origin: Origin::Step(job.trans.clone()),
                text: out.text.clone(),
                token_count: out.tokens.len(),
            });
            token.cache_refs.push(entry);
            token.next_position = end;

            let tr = self.net.transition(&job.trans).unwrap();
            let outputs: Vec<PlaceId> = tr.post_set.iter().cloned().collect();
            for (i, q) in outputs.iter().enumerate() {
                let ctx = if i == 0 {
                    job.ctx
                } else {
                    let h = self.cache.fork(job.ctx, 1)?[0];
                    self.own(h)
                };
                self.place_ctx.insert(q.clone(), ctx);
                self.marking.by_place.insert(q.clone(), Some(token.clone()));
            }
            self.fired.insert(job.trans.clone());
            self.log.push(FiredRecord {
                round,
                trans_id: job.trans,
                input_places: job.inputs,
                output_places: outputs,
                produced_chars: out.text.chars().count(),
                produced_tokens: out.tokens.len(),
                positions: [start, end],
                text: out.text,
            });
        }
        Ok(())
    }

    /// Fires a single enabled transition within the current round.
    pub fn fire(&mut self, trans: &str, producer: &dyn StepProducer) -> Result<&Marking, ScheduleError> {
        self.fire_set(&[trans.to_string()], producer)?;
        Ok(&self.marking)
    }

    /// Fires the whole frontier and advances to the next round. Returns the
    /// fired transitions; empty at the fixpoint.
    pub fn step_round(&mut self, producer: &dyn StepProducer) -> Result<BTreeSet<TransId>, ScheduleError> {
        let frontier = self.frontier();
        if frontier.is_empty() {
            return Ok(frontier.enabled);
        }
        let ts: Vec<TransId> = frontier.enabled.iter().cloned().collect();
        self.fire_set(&ts, producer)?;
        self.marking.round += 1;
        Ok(frontier.enabled)
    }

    fn check_done(&self) -> Result<(), ScheduleError> {
        if self.is_complete() {
            return Ok(());
        }
        let missing = self
            .net
            .transitions()
            .keys()
            .filter(|t| !self.fired.contains(*t))
            .cloned()
            .collect();
        Err(ScheduleError::Deadlock(missing))
    }

    /// Rounds until the frontier is empty. Returns the number of rounds.
    pub fn run_to_completion(&mut self, producer: &dyn StepProducer) -> Result<usize, ScheduleError> {
        let start = self.marking.round;
        while !self.step_round(producer)?.is_empty() {}
        self.check_done()?;
        Ok(self.marking.round - start)
    }

    /// One transition per round, in (layer, id) order: the autoregressive
    /// baseline.
    pub fn run_serial(&mut self, producer: &dyn StepProducer) -> Result<usize, ScheduleError> {
        let start = self.marking.round;
        let order: Vec<TransId> = self.net.serial_order().into_iter().map(String::from).collect();
        for t in order {
            if self.fired.contains(&t) {
                continue;
            }
            self.fire_set(&[t], producer)?;
            self.marking.round += 1;
        }
        self.check_done()?;
        Ok(self.marking.round - start)
    }

    /// Texts produced per transition.
    pub fn step_texts(&self) -> BTreeMap<&str, &str> {
        self.log.iter().map(|r| (r.trans_id.as_str(), r.text.as_str())).collect()
    }

    /// Releases every handle this scheduler created.
    pub fn release_all(&mut self) -> Result<(), CacheError> {
        self.place_ctx.clear();
        for h in std::mem::take(&mut self.owned) {
            self.cache.release(h)?;
        }
        Ok(())
    }
}

impl Drop for Scheduler<'_> {
    fn drop(&mut self) {
        for h in std::mem::take(&mut self.owned) {
            let _ = self.cache.release(h);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::dag_to_petri;
    use crate::graph::{NodeRole, ReasoningDag};

    fn diamond() -> PetriNet {
        let dag = ReasoningDag::new()
            .with_node("A", NodeRole::Source)
            .with_node("B", NodeRole::Hypothesis)
            .with_node("C", NodeRole::Hypothesis)
            .with_node("D", NodeRole::Conclusion)
            .with_edge("A", "B")
            .with_edge("A", "C")
            .with_edge("B", "D")
            .with_edge("C", "D");
        dag_to_petri(&dag).unwrap()
    }

    fn named(req: &StepRequest) -> Result<StepOutput, ProducerError> {
        let t = req.trans_id.as_deref().unwrap_or("?");
        Ok(StepOutput::from_text(format!("step {}", t.trim_start_matches("t:"))))
    }

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn diamond_frontiers() {
        let net = diamond();
        let mut m = Marking::initial(&net);
        let f = compute_frontier(&net, &m);
        assert_eq!(f.enabled, set(&["t:B", "t:C"]));
        assert_eq!(f.fork_groups, vec![set(&["t:B", "t:C"])]);
        assert!(f.join_set.is_empty());

        for p in ["B", "C"] {
            m.by_place.insert(p.into(), Some(SemanticToken::empty()));
        }
        let f = compute_frontier(&net, &m);
        assert_eq!(f.enabled, set(&["t:D"]));
        assert_eq!(f.join_set, set(&["t:D"]));

        m.by_place.insert("D".into(), Some(SemanticToken::empty()));
        assert!(compute_frontier(&net, &m).is_empty());
    }

    #[test]
    fn fire_extends_history_and_refs() {
        let net = diamond();
        let cache = PrefixCache::new();
        let mut s = Scheduler::new(&net, &cache, ExecMode::Sequential);
        s.seed("A", "the question", &tokenize("the question")).unwrap();
        let a_refs = s.marking().token("A").unwrap().cache_refs.clone();
        s.fire("t:B", &named).unwrap();
        let b = s.marking().token("B").unwrap();
        assert_eq!(b.history.last().unwrap().text, "step B");
        assert!(b.cache_refs.starts_with(&a_refs));
        assert_eq!(b.cache_refs.len(), 2);
        assert_eq!(
            s.fire("t:D", &named).unwrap_err(),
            ScheduleError::NotEnabled("t:D".into())
        );
    }

    #[test]
    fn not_enabled_at_start() {
        let net = diamond();
        let cache = PrefixCache::new();
        let mut s = Scheduler::new(&net, &cache, ExecMode::Sequential);
        assert!(matches!(s.fire("t:D", &named), Err(ScheduleError::NotEnabled(_))));
    }

    #[test]
    fn diamond_rounds_and_join_order() {
        let net = diamond();
        let cache = PrefixCache::new();
        let mut s = Scheduler::new(&net, &cache, ExecMode::Parallel);
        s.seed("A", "q", &tokenize("q")).unwrap();
        assert_eq!(s.step_round(&named).unwrap(), set(&["t:B", "t:C"]));
        assert_eq!(s.step_round(&named).unwrap(), set(&["t:D"]));
        assert!(s.step_round(&named).unwrap().is_empty());
        assert_eq!(s.marking().round, 2);
        let d = s.marking().token("D").unwrap();
        let texts: Vec<&str> = d.history.iter().map(|e| e.text.as_str()).collect();
        assert_eq!(texts, ["q", "step B", "step C", "step D"]);
        let joined = cache.concat(&d.cache_refs).unwrap();
        assert_eq!(cache.materialize(joined).unwrap(), tokenize("q step B step C step D"));
        cache.release(joined).unwrap();
        assert_eq!(s.log().len(), 3);
        assert_eq!(s.log()[2].positions, [3, 5]);
        cache.check_invariants().unwrap();
    }

    #[test]
    fn star_completes_in_one_round() {
        let mut dag = ReasoningDag::new().with_node("S", NodeRole::Source);
        for i in 0..8 {
            let leaf = format!("L{i}");
            dag = dag.with_node(&leaf, NodeRole::Conclusion).with_edge("S", &leaf);
        }
        let net = dag_to_petri(&dag).unwrap();
        let cache = PrefixCache::new();
        let mut s = Scheduler::new(&net, &cache, ExecMode::Parallel);
        s.seed("S", "a b c d", &tokenize("a b c d")).unwrap();
        let physical = cache.stats().physical_tokens;
        assert_eq!(s.run_to_completion(&named).unwrap(), 1);
        assert_eq!(s.log().len(), 8);
        // Only the eight produced steps are new storage: "step" is shared,
        // the leaf names are not.
        assert_eq!(cache.stats().physical_tokens, physical + 1 + 8);
    }

    #[test]
    fn failed_round_publishes_nothing() {
        let net = diamond();
        let cache = PrefixCache::new();
        let mut s = Scheduler::new(&net, &cache, ExecMode::Parallel);
        let before = cache.stats();
        let failing = |req: &StepRequest| {
            if req.trans_id.as_deref() == Some("t:C") {
                Err(ProducerError("boom".into()))
            } else {
                named(req)
            }
        };
        let err = s.step_round(&failing).unwrap_err();
        assert_eq!(
            err,
            ScheduleError::ProducerFailure {
                trans: "t:C".into(),
                message: "boom".into()
            }
        );
        assert_eq!(s.marking(), &Marking::initial(&net));
        assert!(s.log().is_empty());
        assert_eq!(cache.stats(), before);
        assert_eq!(s.run_to_completion(&named).unwrap(), 2);
    }

    #[test]
    fn serial_matches_parallel() {
        let net = diamond();
        let c1 = PrefixCache::new();
        let c2 = PrefixCache::new();
        let mut a = Scheduler::new(&net, &c1, ExecMode::Parallel);
        let mut b = Scheduler::new(&net, &c2, ExecMode::Sequential);
        assert_eq!(a.run_to_completion(&named).unwrap(), 2);
        assert_eq!(b.run_serial(&named).unwrap(), 3);
        assert_eq!(a.step_texts(), b.step_texts());
        let hist = |s: &Scheduler| s.marking().token("D").unwrap().context_text();
        assert_eq!(hist(&a), hist(&b));
    }

    #[test]
    fn release_all_empties_the_cache() {
        let net = diamond();
        let cache = PrefixCache::new();
        {
            let mut s = Scheduler::new(&net, &cache, ExecMode::Parallel);
            s.seed("A", "x y", &tokenize("x y")).unwrap();
            s.run_to_completion(&named).unwrap();
            s.release_all().unwrap();
        }
        assert_eq!(cache.stats().live_handles, 0);
        assert_eq!(cache.stats().physical_tokens, 0);
    }
}
