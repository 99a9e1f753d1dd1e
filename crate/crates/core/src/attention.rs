//! Topology-aware attention masks and position indices for training on
//! DAG-structured traces.
//!
//! A flattened trace is cut into segments: a preamble (layer -1), one segment
//! per step (layer = longest dependency distance), and a conclusion in a final
//! layer of its own. Token `i` may attend token `j` unless `j > i`, or the two
//! sit in different steps of the same layer.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::{self, ExecMode};
use crate::plan::{serialize_head, TraceDocument};
use crate::text::token_count;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentKind {
    Preamble,
    Step,
    Conclusion,
}

impl SegmentKind {
    fn code(self) -> u32 {
        match self {
            Self::Preamble => 0,
            Self::Step => 1,
            Self::Conclusion => 2,
        }
    }

    fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Self::Preamble),
            1 => Some(Self::Step),
            2 => Some(Self::Conclusion),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    /// Step id; 0 for the preamble and conclusion.
    pub step: usize,
    pub layer: i32,
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn contains(&self, i: usize) -> bool {
        (self.start..self.end).contains(&i)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LayoutError {
    #[error("step {0} appears twice")]
    DuplicateStep(usize),
    #[error("step id 0 is reserved")]
    ReservedStep,
    #[error("step {step} depends on unknown step {dep}")]
    UnknownDep { step: usize, dep: usize },
    #[error("step {step} is placed before its dependency {dep}")]
    DepAfterStep { step: usize, dep: usize },
}

/// Segmentation of a flattened trace, preamble first and conclusion last.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SegmentLayout {
    segments: Vec<Segment>,
    deps: BTreeMap<usize, BTreeSet<usize>>,
    #[serde(skip)]
    seg_of: Vec<usize>,
}

impl SegmentLayout {
    /// `steps` are `(step id, token length)` in sequence order; layers are
    /// derived from `deps`.
    pub fn new(
        preamble_len: usize,
        steps: &[(usize, usize)],
        deps: &BTreeMap<usize, BTreeSet<usize>>,
        conclusion_len: usize,
    ) -> Result<Self, LayoutError> {
        let mut layer: BTreeMap<usize, i32> = BTreeMap::new();
        let known: BTreeSet<usize> = steps.iter().map(|s| s.0).collect();
        let mut segments = vec![Segment {
            kind: SegmentKind::Preamble,
            step: 0,
            layer: -1,
            start: 0,
            end: preamble_len,
        }];
        let mut pos = preamble_len;
        let mut kept_deps = BTreeMap::new();
        for &(step, len) in steps {
            if step == 0 {
                return Err(LayoutError::ReservedStep);
            }
            if layer.contains_key(&step) {
                return Err(LayoutError::DuplicateStep(step));
            }
            let ds = deps.get(&step).cloned().unwrap_or_default();
            let mut l = 0;
            for &d in &ds {
                match layer.get(&d) {
                    Some(dl) => l = l.max(dl + 1),
                    None if known.contains(&d) => return Err(LayoutError::DepAfterStep { step, dep: d }),
                    None => return Err(LayoutError::UnknownDep { step, dep: d }),
                }
            }
            layer.insert(step, l);
            kept_deps.insert(step, ds);
            segments.push(Segment {
                kind: SegmentKind::Step,
                step,
                layer: l,
                start: pos,
                end: pos + len,
            });
            pos += len;
        }
        let final_layer = layer.values().max().map_or(0, |m| m + 1);
        segments.push(Segment {
            kind: SegmentKind::Conclusion,
            step: 0,
            layer: final_layer,
            start: pos,
            end: pos + conclusion_len,
        });
        let mut seg_of = Vec::with_capacity(pos + conclusion_len);
        for (ix, s) in segments.iter().enumerate() {
            seg_of.extend(std::iter::repeat_n(ix, s.len()));
        }
        Ok(Self {
            segments,
            deps: kept_deps,
            seg_of,
        })
    }

    /// Layout of a trace: preamble and plan form the preamble segment, then
    /// each step's text, then the conclusion, counted in tokens.
    pub fn from_trace(doc: &TraceDocument) -> Result<Self, LayoutError> {
        let head = token_count(&serialize_head(doc.preamble.as_deref(), &doc.plan));
        let steps: Vec<(usize, usize)> = doc.steps.iter().map(|s| (s.index, token_count(&s.text))).collect();
        let deps = doc
            .plan
            .outlines
            .iter()
            .map(|o| (o.index, o.step_deps().collect()))
            .collect();
        Self::new(head, &steps, &deps, token_count(&doc.conclusion))
    }

    pub fn len(&self) -> usize {
        self.seg_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seg_of.is_empty()
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn deps(&self) -> &BTreeMap<usize, BTreeSet<usize>> {
        &self.deps
    }

    pub fn preamble(&self) -> &Segment {
        &self.segments[0]
    }

    pub fn conclusion(&self) -> &Segment {
        self.segments.last().unwrap()
    }

    pub fn steps(&self) -> &[Segment] {
        &self.segments[1..self.segments.len() - 1]
    }

    pub fn step(&self, id: usize) -> Option<&Segment> {
        self.steps().iter().find(|s| s.step == id)
    }

    /// Index into [`segments`](Self::segments) of the segment holding token `i`.
    pub fn segment_index_of(&self, i: usize) -> usize {
        self.seg_of[i]
    }

    pub fn segment_of(&self, i: usize) -> &Segment {
        &self.segments[self.seg_of[i]]
    }

    /// Transitive dependencies of `step`.
    pub fn ancestors(&self, step: usize) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        let mut stack: Vec<usize> = self.deps.get(&step).into_iter().flatten().copied().collect();
        while let Some(d) = stack.pop() {
            if out.insert(d) {
                stack.extend(self.deps.get(&d).into_iter().flatten());
            }
        }
        out
    }
}

/// Dense `n x n` mask, row-major; `true` is allow (bias 0), `false` is block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskMatrix {
    n: usize,
    cells: Vec<bool>,
}

impl MaskMatrix {
    pub fn blocked(n: usize) -> Self {
        Self {
            n,
            cells: vec![false; n * n],
        }
    }

    /// Standard lower-triangular causal mask.
    pub fn causal(n: usize) -> Self {
        let mut m = Self::blocked(n);
        for i in 0..n {
            for j in 0..=i {
                m.set(i, j, true);
            }
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn allows(&self, i: usize, j: usize) -> bool {
        self.cells[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, allow: bool) {
        self.cells[i * self.n + j] = allow;
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.cells[i * self.n..(i + 1) * self.n]
    }

    /// Additive attention bias: 0 where allowed, negative infinity elsewhere.
    pub fn bias(&self) -> Vec<f32> {
        self.cells.iter().map(|a| if *a { 0.0 } else { f32::NEG_INFINITY }).collect()
    }

    pub fn allowed_count(&self) -> usize {
        self.cells.iter().filter(|a| **a).count()
    }
}

/// Allowed key ranges `[start, end)` per query token, ascending and disjoint.
pub type RunLists = Vec<Vec<[usize; 2]>>;

fn row_runs(layout: &SegmentLayout, i: usize) -> Vec<[usize; 2]> {
    let me = layout.segment_index_of(i);
    let layer = layout.segments[me].layer;
    let mut runs: Vec<[usize; 2]> = Vec::new();
    for (ix, s) in layout.segments.iter().enumerate() {
        if s.start > i || s.is_empty() || (ix != me && s.layer == layer) {
            continue;
        }
        let end = s.end.min(i + 1);
        match runs.last_mut() {
            Some(last) if last[1] == s.start => last[1] = end,
            _ => runs.push([s.start, end]),
        }
    }
    runs
}

/// Run-list form of the mask without materializing `n x n` cells.
pub fn build_runlists(layout: &SegmentLayout, mode: ExecMode) -> RunLists {
    let rows: Vec<usize> = (0..layout.len()).collect();
    par::map(mode, &rows, |i| row_runs(layout, *i))
}

pub fn densify(runlists: &[Vec<[usize; 2]>]) -> MaskMatrix {
    let mut m = MaskMatrix::blocked(runlists.len());
    for (i, runs) in runlists.iter().enumerate() {
        for [a, b] in runs {
            for j in *a..*b {
                m.set(i, j, true);
            }
        }
    }
    m
}

pub fn to_runlists(mask: &MaskMatrix) -> RunLists {
    (0..mask.n())
        .map(|i| {
            let mut runs: Vec<[usize; 2]> = Vec::new();
            for (j, allow) in mask.row(i).iter().enumerate() {
                if !allow {
                    continue;
                }
                match runs.last_mut() {
                    Some(last) if last[1] == j => last[1] = j + 1,
                    _ => runs.push([j, j + 1]),
                }
            }
            runs
        })
        .collect()
}

pub fn build_mask(layout: &SegmentLayout) -> MaskMatrix {
    build_mask_with(layout, ExecMode::default())
}

pub fn build_mask_with(layout: &SegmentLayout, mode: ExecMode) -> MaskMatrix {
    let n = layout.len();
    let rows: Vec<usize> = (0..n).collect();
    let dense: Vec<Vec<bool>> = par::map(mode, &rows, |&i| {
        let si = layout.segment_index_of(i);
        let li = layout.segments[si].layer;
        (0..n)
            .map(|j| {
                if j > i {
                    return false;
                }
                let sj = layout.segment_index_of(j);
                !(layout.segments[sj].layer == li && sj != si)
            })
            .collect()
    });
    MaskMatrix {
        n,
        cells: dense.into_iter().flatten().collect(),
    }
}

/// Position index per token. Steps without dependencies start right after the
/// preamble, others one past the largest last position of their
/// dependencies; the conclusion starts one past the largest step position.
pub fn build_positions(layout: &SegmentLayout) -> Vec<usize> {
    let mut next: BTreeMap<usize, usize> = BTreeMap::new();
    let mut out = vec![0; layout.len()];
    let pre = layout.preamble();
    for (k, p) in out[pre.start..pre.end].iter_mut().enumerate() {
        *p = k;
    }
    let base = pre.len();
    let mut latest = base;
    for s in layout.steps() {
        let start = layout.deps[&s.step].iter().map(|d| next[d]).max().unwrap_or(base);
        for (k, p) in out[s.start..s.end].iter_mut().enumerate() {
            *p = start + k;
        }
        let end = start + s.len();
        next.insert(s.step, end);
        latest = latest.max(end);
    }
    let c = layout.conclusion();
    for (k, p) in out[c.start..c.end].iter_mut().enumerate() {
        *p = latest + k;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum LeakKind {
    /// An allowed cell with `j > i`.
    Future,
    /// Tokens of distinct steps in one layer see each other.
    SameLayer,
    /// The attended step is not an ancestor of the attending one.
    NonAncestor,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Leak {
    pub i: usize,
    pub j: usize,
    pub kinds: Vec<LeakKind>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub ok: bool,
    pub leaks: Vec<Leak>,
}

impl LeakageReport {
    pub fn count(&self, kind: LeakKind) -> usize {
        self.leaks.iter().filter(|l| l.kinds.contains(&kind)).count()
    }
}

/// Every allowed `(i, j)` must be causal, must not cross between distinct
/// steps of one layer, and must attend the preamble, the same step, or an
/// ancestor step. The conclusion has every step as an ancestor.
pub fn verify_no_leakage(layout: &SegmentLayout, mask: &MaskMatrix) -> LeakageReport {
    let ancestors: Vec<BTreeSet<usize>> = layout
        .segments
        .iter()
        .map(|s| match s.kind {
            SegmentKind::Step => layout
                .ancestors(s.step)
                .into_iter()
                .filter_map(|a| layout.segments.iter().position(|x| x.step == a && x.kind == SegmentKind::Step))
                .collect(),
            SegmentKind::Conclusion => (1..layout.segments.len() - 1).collect(),
            SegmentKind::Preamble => BTreeSet::new(),
        })
        .collect();
    let mut leaks = Vec::new();
    for i in 0..mask.n() {
        let si = layout.segment_index_of(i);
        for j in 0..mask.n() {
            if !mask.allows(i, j) {
                continue;
            }
            let sj = layout.segment_index_of(j);
            let mut kinds = Vec::new();
            if j > i {
                kinds.push(LeakKind::Future);
            }
            if si != sj && layout.segments[si].layer == layout.segments[sj].layer {
                kinds.push(LeakKind::SameLayer);
            }
            if si != sj && sj != 0 && !ancestors[si].contains(&sj) {
                kinds.push(LeakKind::NonAncestor);
            }
            if !kinds.is_empty() {
                leaks.push(Leak { i, j, kinds });
            }
        }
    }
    LeakageReport {
        ok: leaks.is_empty(),
        leaks,
    }
}

/// Export artifact; the JSON form of the binary layout below.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskExport {
    pub n: usize,
    pub positions: Vec<usize>,
    pub segments: Vec<Segment>,
    pub runlists: RunLists,
}

pub const EXPORT_MAGIC: &[u8; 4] = b"DAGM";
pub const EXPORT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("not a mask export (bad magic)")]
    BadMagic,
    #[error("unsupported version {0}")]
    Version(u32),
    #[error("truncated input")]
    Truncated,
    #[error("bad segment kind {0}")]
    BadKind(u32),
    #[error("{0} trailing bytes")]
    Trailing(usize),
}

impl MaskExport {
    pub fn new(layout: &SegmentLayout, mode: ExecMode) -> Self {
        Self {
            n: layout.len(),
            positions: build_positions(layout),
            segments: layout.segments().to_vec(),
            runlists: build_runlists(layout, mode),
        }
    }

    /// Little-endian binary form:
    ///
    /// ```text
    /// magic "DAGM" | version u32 | n u32 | positions n*u32
    /// | segment count u32 | per segment: kind u32, step u32, layer i32, start u32, end u32
    /// | per token: run count u32, then run count * (start u32, end u32)
    /// ```
    ///
    /// Kinds are 0 preamble, 1 step, 2 conclusion.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let mut put = |v: u32| out.extend_from_slice(&v.to_le_bytes());
        put(u32::from_le_bytes(*EXPORT_MAGIC));
        put(EXPORT_VERSION);
        put(self.n as u32);
        for p in &self.positions {
            put(*p as u32);
        }
        put(self.segments.len() as u32);
        for s in &self.segments {
            put(s.kind.code());
            put(s.step as u32);
            put(s.layer as u32);
            put(s.start as u32);
            put(s.end as u32);
        }
        for runs in &self.runlists {
            put(runs.len() as u32);
            for [a, b] in runs {
                put(*a as u32);
                put(*b as u32);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        if !bytes.len().is_multiple_of(4) {
            return Err(DecodeError::Trailing(bytes.len() % 4));
        }
        let mut words = bytes.chunks_exact(4);
        let mut next = || {
            words
                .next()
                .map(|w| u32::from_le_bytes([w[0], w[1], w[2], w[3]]))
                .ok_or(DecodeError::Truncated)
        };
        if next()?.to_le_bytes() != *EXPORT_MAGIC {
            return Err(DecodeError::BadMagic);
        }
        let version = next()?;
        if version != EXPORT_VERSION {
            return Err(DecodeError::Version(version));
        }
        let n = next()? as usize;
        let positions = (0..n).map(|_| next().map(|v| v as usize)).collect::<Result<_, _>>()?;
        let count = next()? as usize;
        let mut segments = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let code = next()?;
            let kind = SegmentKind::from_code(code).ok_or(DecodeError::BadKind(code))?;
            segments.push(Segment {
                kind,
                step: next()? as usize,
                layer: next()? as i32,
                start: next()? as usize,
                end: next()? as usize,
            });
        }
        let mut runlists = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let k = next()? as usize;
            let runs = (0..k)
                .map(|_| Ok([next()? as usize, next()? as usize]))
                .collect::<Result<_, DecodeError>>()?;
            runlists.push(runs);
        }
        let rest = words.len();
        if rest > 0 {
            return Err(DecodeError::Trailing(rest * 4));
        }
        Ok(Self {
            n,
            positions,
            segments,
            runlists,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn deps(pairs: &[(usize, &[usize])]) -> BTreeMap<usize, BTreeSet<usize>> {
        pairs.iter().map(|(s, d)| (*s, d.iter().copied().collect())).collect()
    }

    /// Preamble 10, steps 1 (5) and 2 (3) in parallel, step 3 joining both.
    fn fork_join() -> SegmentLayout {
        SegmentLayout::new(10, &[(1, 5), (2, 3), (3, 4)], &deps(&[(1, &[]), (2, &[]), (3, &[1, 2])]), 2).unwrap()
    }

    #[test]
    fn layers_follow_dependencies() {
        let l = fork_join();
        let layers: Vec<i32> = l.segments().iter().map(|s| s.layer).collect();
        assert_eq!(layers, [-1, 0, 0, 1, 2]);
        assert_eq!(l.len(), 24);
    }

    #[test]
    fn mask_cases() {
        let l = fork_join();
        let m = build_mask(&l);
        let s1 = l.step(1).unwrap().clone();
        let s2 = l.step(2).unwrap().clone();
        let s3 = l.step(3).unwrap().clone();
        // Parallel siblings never see each other.
        assert!(!m.allows(s2.start, s1.start));
        assert!(!m.allows(s2.end - 1, s1.end - 1));
        // A later layer sees earlier ones.
        assert!(m.allows(s3.start, s1.start));
        assert!(m.allows(s3.start, s2.start));
        for i in 0..l.len() {
            assert!(m.allows(i, i));
            assert!(m.allows(i, 0));
            for j in i + 1..l.len() {
                assert!(!m.allows(i, j));
            }
        }
        assert!(verify_no_leakage(&l, &m).ok);
    }

    #[test]
    fn positions_fork_and_join() {
        let l = fork_join();
        let p = build_positions(&l);
        assert_eq!(&p[..10], (0..10).collect::<Vec<_>>().as_slice());
        assert_eq!(&p[10..15], &[10, 11, 12, 13, 14]);
        assert_eq!(&p[15..18], &[10, 11, 12]);
        assert_eq!(&p[18..22], &[15, 16, 17, 18]);
        assert_eq!(&p[22..], &[19, 20]);
    }

    #[test]
    fn linear_layout_is_plain_causal() {
        let l = SegmentLayout::new(3, &[(1, 2), (2, 4)], &deps(&[(1, &[]), (2, &[1])]), 2).unwrap();
        assert_eq!(build_positions(&l), (0..11).collect::<Vec<_>>());
        assert_eq!(build_mask(&l), MaskMatrix::causal(11));

        let single = SegmentLayout::new(0, &[(1, 6)], &BTreeMap::new(), 0).unwrap();
        assert_eq!(build_mask(&single), MaskMatrix::causal(6));
        assert_eq!(build_positions(&single), (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn injected_fault_is_named() {
        let l = fork_join();
        let mut m = build_mask(&l);
        let (i, j) = (l.step(2).unwrap().start, l.step(1).unwrap().start);
        m.set(i, j, true);
        let report = verify_no_leakage(&l, &m);
        assert_eq!(
            report.leaks,
            vec![Leak {
                i,
                j,
                kinds: vec![LeakKind::SameLayer, LeakKind::NonAncestor],
            }]
        );
    }

    #[test]
    fn causal_mask_leaks_across_branches() {
        let l = SegmentLayout::new(2, &[(1, 4), (2, 3)], &deps(&[(1, &[]), (2, &[])]), 1).unwrap();
        let report = verify_no_leakage(&l, &MaskMatrix::causal(l.len()));
        assert_eq!(report.leaks.len(), 4 * 3);
        assert_eq!(report.count(LeakKind::SameLayer), 12);
    }

    #[test]
    fn non_ancestral_earlier_layer_is_allowed_by_the_mask() {
        // Step 3 depends only on step 1, yet step 2 sits in an earlier layer.
        let l = SegmentLayout::new(1, &[(1, 2), (2, 2), (3, 2)], &deps(&[(1, &[]), (2, &[]), (3, &[1])]), 1).unwrap();
        let m = build_mask(&l);
        let (i, j) = (l.step(3).unwrap().start, l.step(2).unwrap().start);
        assert!(m.allows(i, j));
        let report = verify_no_leakage(&l, &m);
        assert_eq!(report.count(LeakKind::SameLayer), 0);
        assert_eq!(report.count(LeakKind::NonAncestor), 2 * 2);
    }

    #[test]
    fn runlists_match_dense() {
        let l = fork_join();
        let runs = build_runlists(&l, ExecMode::Sequential);
        assert_eq!(runs, build_runlists(&l, ExecMode::Parallel));
        assert_eq!(densify(&runs), build_mask(&l));
        assert_eq!(to_runlists(&build_mask(&l)), runs);
        assert_eq!(runs[15], vec![[0, 10], [15, 16]]);
    }

    #[test]
    fn binary_round_trip() {
        let export = MaskExport::new(&fork_join(), ExecMode::Sequential);
        let bytes = export.to_bytes();
        assert_eq!(&bytes[..4], b"DAGM");
        assert_eq!(MaskExport::from_bytes(&bytes).unwrap(), export);
        assert_eq!(MaskExport::from_bytes(&bytes[..bytes.len() - 4]), Err(DecodeError::Truncated));
        assert_eq!(MaskExport::from_bytes(b"NOPE\x01\x00\x00\x00"), Err(DecodeError::BadMagic));
    }

    #[test]
    fn layout_errors() {
        assert_eq!(
            SegmentLayout::new(0, &[(1, 1), (2, 1)], &deps(&[(1, &[2])]), 0),
            Err(LayoutError::DepAfterStep { step: 1, dep: 2 })
        );
        assert_eq!(
            SegmentLayout::new(0, &[(1, 1)], &deps(&[(1, &[7])]), 0),
            Err(LayoutError::UnknownDep { step: 1, dep: 7 })
        );
        assert_eq!(
            SegmentLayout::new(0, &[(1, 1), (1, 1)], &BTreeMap::new(), 0),
            Err(LayoutError::DuplicateStep(1))
        );
    }
}
