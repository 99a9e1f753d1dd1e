//! Radix-tree prefix store backing the cache references of semantic tokens.
//!
//! The store indexes token-id sequences only; it is the structure a serving
//! engine would map onto device KV blocks. A handle is a list of segments, each
//! a slice `[skip, end)` of the root path of some tree node. Simple sequences
//! have one segment starting at 0. Joins and suffix views produce composites
//! that reference existing nodes without copying tokens.
//!
//! Every node on the root path of any segment of a live handle is held by that
//! handle, so refcounts never increase going down the tree and zero-refcount
//! nodes always form whole subtrees that can be dropped.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Mutex, MutexGuard, PoisonError};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type TokenId = u32;

/// Opaque reference to a sequence in a [`PrefixCache`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SequenceHandle(u64);

impl SequenceHandle {
    pub fn id(self) -> u64 {
        self.0
    }
}

impl std::fmt::Display for SequenceHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "h{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CacheError {
    #[error("handle {0} is not live")]
    DeadHandle(SequenceHandle),
    #[error("handle {0} was already released")]
    DoubleRelease(SequenceHandle),
    #[error("handle {handle} does not extend shared prefix {prefix}")]
    NotAnExtension {
        handle: SequenceHandle,
        prefix: SequenceHandle,
    },
    #[error("fork requires at least one branch")]
    EmptyFork,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CacheStats {
    /// Tree nodes excluding the root sentinel.
    pub nodes: usize,
    pub physical_tokens: usize,
    pub live_handles: usize,
}

/// Placement of one segment of a handle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SegmentInfo {
    /// Offset of the segment within the handle's logical sequence.
    pub logical_start: usize,
    pub len: usize,
    /// Offset of the segment's first token along its tree path.
    pub source_start: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeDump {
    pub id: usize,
    pub parent: Option<usize>,
    pub depth: usize,
    pub span: Vec<TokenId>,
    pub refcount: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HandleDump {
    pub id: u64,
    pub len: usize,
    /// `(tail node, skip)` per segment.
    pub segments: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheDump {
    pub nodes: Vec<NodeDump>,
    pub handles: Vec<HandleDump>,
}

const ROOT: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Segment {
    tail: usize,
    skip: usize,
}

#[derive(Debug)]
struct Node {
    span: Vec<TokenId>,
    parent: usize,
    children: BTreeMap<TokenId, usize>,
    refcount: usize,
    /// Absolute offset of `span[0]` along the root path.
    depth: usize,
}

impl Node {
    fn end(&self) -> usize {
        self.depth + self.span.len()
    }
}

#[derive(Debug)]
struct Tree {
    nodes: Vec<Option<Node>>,
    free: Vec<usize>,
    handles: BTreeMap<u64, Vec<Segment>>,
    next_handle: u64,
    node_visits: u64,
}

impl Tree {
    fn new() -> Self {
        let root = Node {
            span: Vec::new(),
            parent: ROOT,
            children: BTreeMap::new(),
            refcount: 0,
            depth: 0,
        };
        Self {
            nodes: vec![Some(root)],
            free: Vec::new(),
            handles: BTreeMap::new(),
            next_handle: 0,
            node_visits: 0,
        }
    }

    fn node(&self, ix: usize) -> &Node {
        self.nodes[ix].as_ref().expect("live node")
    }

    fn node_mut(&mut self, ix: usize) -> &mut Node {
        self.nodes[ix].as_mut().expect("live node")
    }

    fn alloc(&mut self, node: Node) -> usize {
        match self.free.pop() {
            Some(ix) => {
                self.nodes[ix] = Some(node);
                ix
            }
            None => {
                self.nodes.push(Some(node));
                self.nodes.len() - 1
            }
        }
    }

    fn segments(&self, h: SequenceHandle) -> Result<&Vec<Segment>, CacheError> {
        self.handles.get(&h.0).ok_or(CacheError::DeadHandle(h))
    }

    fn seg_len(&self, s: Segment) -> usize {
        self.node(s.tail).end() - s.skip
    }

    fn len_of(&self, segs: &[Segment]) -> usize {
        segs.iter().map(|s| self.seg_len(*s)).sum()
    }

    fn register(&mut self, segs: Vec<Segment>) -> SequenceHandle {
        for ix in self.held(&segs) {
            self.node_mut(ix).refcount += 1;
        }
        let id = self.next_handle;
        self.next_handle += 1;
        self.handles.insert(id, segs);
        SequenceHandle(id)
    }

    /// Nodes on the root paths of the segments, root excluded.
    fn held(&mut self, segs: &[Segment]) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        for s in segs {
            let mut ix = s.tail;
            while ix != ROOT {
                self.node_visits += 1;
                if !out.insert(ix) {
                    break;
                }
                ix = self.node(ix).parent;
            }
        }
        out
    }

    fn materialize_segment(&self, s: Segment, out: &mut Vec<TokenId>) {
        let mut chain = Vec::new();
        let mut ix = s.tail;
        while ix != ROOT {
            let node = self.node(ix);
            if node.end() <= s.skip {
                break;
            }
            chain.push(ix);
            ix = node.parent;
        }
        for ix in chain.into_iter().rev() {
            let node = self.node(ix);
            let from = s.skip.saturating_sub(node.depth);
            out.extend_from_slice(&node.span[from..]);
        }
    }

    fn materialize(&self, segs: &[Segment]) -> Vec<TokenId> {
        let mut out = Vec::with_capacity(self.len_of(segs));
        for s in segs {
            self.materialize_segment(*s, &mut out);
        }
        out
    }

    /// Splits `ix` after `at` tokens; returns the new upper node. `ix` keeps its
    /// id as the lower half so handle tails stay valid.
    fn split(&mut self, ix: usize, at: usize) -> usize {
        let (parent, depth, refcount, upper_span, first_lower) = {
            let node = self.node_mut(ix);
            let upper: Vec<TokenId> = node.span.drain(..at).collect();
            let first_lower = node.span[0];
            let depth = node.depth;
            node.depth += at;
            (node.parent, depth, node.refcount, upper, first_lower)
        };
        let key = upper_span[0];
        let upper = self.alloc(Node {
            span: upper_span,
            parent,
            children: BTreeMap::from([(first_lower, ix)]),
            refcount,
            depth,
        });
        self.node_mut(ix).parent = upper;
        self.node_mut(parent).children.insert(key, upper);
        upper
    }

    /// Walks/extends the tree below `cur` with `rest`, sharing matching children.
    fn insert_below(&mut self, mut cur: usize, mut rest: &[TokenId]) -> usize {
        while let Some(&first) = rest.first() {
            self.node_visits += 1;
            match self.node(cur).children.get(&first).copied() {
                None => {
                    let depth = self.node(cur).end();
                    let child = self.alloc(Node {
                        span: rest.to_vec(),
                        parent: cur,
                        children: BTreeMap::new(),
                        refcount: 0,
                        depth,
                    });
                    self.node_mut(cur).children.insert(first, child);
                    return child;
                }
                Some(child) => {
                    let span = &self.node(child).span;
                    let common = span.iter().zip(rest).take_while(|(a, b)| a == b).count();
                    cur = if common < span.len() {
                        self.split(child, common)
                    } else {
                        child
                    };
                    rest = &rest[common..];
                }
            }
        }
        cur
    }

    fn slice_from(&self, segs: &[Segment], from: usize) -> Vec<Segment> {
        let mut out = Vec::new();
        let mut offset = 0;
        for s in segs {
            let len = self.seg_len(*s);
            if offset + len <= from {
                offset += len;
                continue;
            }
            if offset >= from {
                out.push(*s);
            } else {
                out.push(Segment {
                    tail: s.tail,
                    skip: s.skip + (from - offset),
                });
            }
            offset += len;
        }
        out
    }

    /// Whether the skipped part of `s` lies on the root path of some segment
    /// in `segs`, so holding `s` keeps no otherwise unreferenced tokens alive.
    fn covered(&mut self, s: Segment, segs: &[Segment]) -> bool {
        if s.skip == 0 {
            return true;
        }
        // Node holding the last skipped token.
        let mut ix = s.tail;
        while self.node(ix).depth >= s.skip {
            self.node_visits += 1;
            ix = self.node(ix).parent;
        }
        segs.iter().any(|t| {
            let mut cur = t.tail;
            while cur != ROOT && self.node(cur).end() >= self.node(ix).end() {
                self.node_visits += 1;
                if cur == ix {
                    return true;
                }
                cur = self.node(cur).parent;
            }
            false
        })
    }

    /// Copies the tokens of `s` below the tail of the last segment in `segs`.
    /// Only reached when a branch matches the prefix by content but not by
    /// structure.
    fn reanchor(&mut self, s: Segment, segs: &[Segment]) -> Segment {
        let mut tokens = Vec::with_capacity(self.seg_len(s));
        self.materialize_segment(s, &mut tokens);
        let anchor = segs.last().map_or(ROOT, |t| t.tail);
        let skip = self.node(anchor).end();
        let tail = self.insert_below(anchor, &tokens);
        Segment { tail, skip }
    }

    fn release(&mut self, h: SequenceHandle) -> Result<(), CacheError> {
        let segs = match self.handles.remove(&h.0) {
            Some(segs) => segs,
            None if h.0 < self.next_handle => return Err(CacheError::DoubleRelease(h)),
            None => return Err(CacheError::DeadHandle(h)),
        };
        let mut dead = Vec::new();
        for ix in self.held(&segs) {
            let node = self.node_mut(ix);
            node.refcount -= 1;
            if node.refcount == 0 {
                dead.push(ix);
            }
        }
        // Descendants of a dead node are dead too; unlink only from live parents.
        let dead_set: BTreeSet<usize> = dead.iter().copied().collect();
        for ix in dead {
            let node = self.nodes[ix].take().expect("live node");
            if !dead_set.contains(&node.parent) {
                let parent = self.node_mut(node.parent);
                if parent.children.get(&node.span[0]) == Some(&ix) {
                    parent.children.remove(&node.span[0]);
                }
            }
            self.free.push(ix);
        }
        Ok(())
    }
}

/// Thread-safe radix prefix store. Structural mutations are serialized by an
/// internal lock; handles are plain ids and may be moved between workers.
#[derive(Debug)]
pub struct PrefixCache {
    inner: Mutex<Tree>,
}

impl Default for PrefixCache {
    fn default() -> Self {
        Self::new()
    }
}

impl PrefixCache {
    pub fn new() -> Self {
        Self {
            inner: Mutex::new(Tree::new()),
        }
    }

    fn lock(&self) -> MutexGuard<'_, Tree> {
        self.inner.lock().unwrap_or_else(PoisonError::into_inner)
    }

    /// A fresh handle to the empty sequence.
    pub fn root(&self) -> SequenceHandle {
        self.lock().register(Vec::new())
    }

    /// A new handle holding `tokens`, shared with any existing identical prefix.
    pub fn insert(&self, tokens: &[TokenId]) -> SequenceHandle {
        let h = self.root();
        self.append(h, tokens).expect("fresh handle is live");
        h
    }

    /// Extends `handle` in place and returns it. New tokens go below the tail of
    /// its last segment; existing nodes are split at the divergence point, never
    /// copied.
    pub fn append(&self, handle: SequenceHandle, tokens: &[TokenId]) -> Result<SequenceHandle, CacheError> {
        let mut tree = self.lock();
        let mut segs = tree.segments(handle)?.clone();
        if tokens.is_empty() {
            return Ok(handle);
        }
        let old = segs.clone();
        let start = segs.last().map_or(ROOT, |s| s.tail);
        let tail = tree.insert_below(start, tokens);
        match segs.last_mut() {
            Some(last) => last.tail = tail,
            None => segs.push(Segment { tail, skip: 0 }),
        }
        // Held set of the old segments is taken after any splits so that new
        // upper halves, which inherit refcounts, are not counted twice.
        let before = tree.held(&old);
        let after = tree.held(&segs);
        for ix in after.difference(&before) {
            tree.node_mut(*ix).refcount += 1;
        }
        tree.handles.insert(handle.0, segs);
        Ok(handle)
    }

    /// `n` new handles with the same content as `handle`. No tokens are stored;
    /// `handle` stays live.
    pub fn fork(&self, handle: SequenceHandle, n: usize) -> Result<Vec<SequenceHandle>, CacheError> {
        if n == 0 {
            return Err(CacheError::EmptyFork);
        }
        let mut tree = self.lock();
        let segs = tree.segments(handle)?.clone();
        Ok((0..n).map(|_| tree.register(segs.clone())).collect())
    }

    /// Composite of `shared_prefix` followed by each branch's suffix beyond it,
    /// in the given order. References existing nodes, except that a branch
    /// matching the prefix by content alone has its new tokens copied below the
    /// composite so that its own path is not kept alive.
    pub fn join_merge(
        &self,
        branches: &[SequenceHandle],
        shared_prefix: SequenceHandle,
    ) -> Result<SequenceHandle, CacheError> {
        let mut tree = self.lock();
        let prefix_segs = tree.segments(shared_prefix)?.clone();
        let prefix_len = tree.len_of(&prefix_segs);
        let prefix_tokens = tree.materialize(&prefix_segs);
        let mut segs = prefix_segs.clone();
        for &b in branches {
            let branch = tree.segments(b)?.clone();
            let extends = branch.starts_with(&prefix_segs)
                || tree.materialize(&branch).starts_with(&prefix_tokens);
            if !extends {
                return Err(CacheError::NotAnExtension {
                    handle: b,
                    prefix: shared_prefix,
                });
            }
            for seg in tree.slice_from(&branch, prefix_len) {
                let seg = if tree.covered(seg, &segs) { seg } else { tree.reanchor(seg, &segs) };
                segs.push(seg);
            }
        }
        Ok(tree.register(segs))
    }

    /// Composite of the handles' sequences back to back.
    pub fn concat(&self, parts: &[SequenceHandle]) -> Result<SequenceHandle, CacheError> {
        let mut tree = self.lock();
        let mut segs = Vec::new();
        for &p in parts {
            segs.extend(tree.segments(p)?.iter().copied());
        }
        Ok(tree.register(segs))
    }

    /// View of `handle` from logical offset `from` onward.
    pub fn suffix(&self, handle: SequenceHandle, from: usize) -> Result<SequenceHandle, CacheError> {
        let mut tree = self.lock();
        let segs = tree.segments(handle)?.clone();
        let sliced = tree.slice_from(&segs, from);
        Ok(tree.register(sliced))
    }

    pub fn release(&self, handle: SequenceHandle) -> Result<(), CacheError> {
        self.lock().release(handle)
    }

    pub fn len(&self, handle: SequenceHandle) -> Result<usize, CacheError> {
        let tree = self.lock();
        let segs = tree.segments(handle)?;
        Ok(tree.len_of(segs))
    }

    pub fn is_live(&self, handle: SequenceHandle) -> bool {
        self.lock().handles.contains_key(&handle.0)
    }

    pub fn materialize(&self, handle: SequenceHandle) -> Result<Vec<TokenId>, CacheError> {
        let tree = self.lock();
        let segs = tree.segments(handle)?;
        Ok(tree.materialize(segs))
    }

    pub fn segment_info(&self, handle: SequenceHandle) -> Result<Vec<SegmentInfo>, CacheError> {
        let tree = self.lock();
        let mut offset = 0;
        let mut out = Vec::new();
        for s in tree.segments(handle)? {
            let len = tree.seg_len(*s);
            out.push(SegmentInfo {
                logical_start: offset,
                len,
                source_start: s.skip,
            });
            offset += len;
        }
        Ok(out)
    }

    pub fn stats(&self) -> CacheStats {
        let tree = self.lock();
        let mut stats = CacheStats {
            live_handles: tree.handles.len(),
            ..CacheStats::default()
        };
        for node in tree.nodes.iter().skip(1).flatten() {
            stats.nodes += 1;
            stats.physical_tokens += node.span.len();
        }
        stats
    }

    /// Number of tree nodes visited by structural operations so far.
    pub fn node_visits(&self) -> u64 {
        self.lock().node_visits
    }

    /// Refcount of the tail node of the handle's last segment, if any.
    pub fn tail_refcount(&self, handle: SequenceHandle) -> Result<Option<usize>, CacheError> {
        let tree = self.lock();
        Ok(tree.segments(handle)?.last().map(|s| tree.node(s.tail).refcount))
    }

    pub fn dump(&self) -> CacheDump {
        let tree = self.lock();
        let nodes = tree
            .nodes
            .iter()
            .enumerate()
            .skip(1)
            .filter_map(|(id, n)| {
                n.as_ref().map(|n| NodeDump {
                    id,
                    parent: (n.parent != ROOT).then_some(n.parent),
                    depth: n.depth,
                    span: n.span.clone(),
                    refcount: n.refcount,
                })
            })
            .collect();
        let handles = tree
            .handles
            .iter()
            .map(|(id, segs)| HandleDump {
                id: *id,
                len: tree.len_of(segs),
                segments: segs.iter().map(|s| (s.tail, s.skip)).collect(),
            })
            .collect();
        CacheDump { nodes, handles }
    }

    /// Recomputes refcounts and structural properties from scratch.
    pub fn check_invariants(&self) -> Result<(), String> {
        let tree = self.lock();
        let mut expected: BTreeMap<usize, usize> = BTreeMap::new();
        for segs in tree.handles.values() {
            let mut held = BTreeSet::new();
            for s in segs {
                let mut ix = s.tail;
                while ix != ROOT && held.insert(ix) {
                    ix = tree.node(ix).parent;
                }
            }
            for ix in held {
                *expected.entry(ix).or_default() += 1;
            }
        }
        for (ix, node) in tree.nodes.iter().enumerate().skip(1) {
            let Some(node) = node else { continue };
            let want = expected.get(&ix).copied().unwrap_or(0);
            if node.refcount != want {
                return Err(format!("node {ix}: refcount {} != {want}", node.refcount));
            }
            if node.refcount == 0 {
                return Err(format!("node {ix} is reachable with refcount 0"));
            }
            if node.span.is_empty() {
                return Err(format!("node {ix} has an empty span"));
            }
            let parent = tree.nodes[node.parent]
                .as_ref()
                .ok_or_else(|| format!("node {ix} has a dead parent"))?;
            if parent.children.get(&node.span[0]) != Some(&ix) {
                return Err(format!("node {ix} not linked under its first token"));
            }
            if parent.end() != node.depth {
                return Err(format!("node {ix} depth {} != parent end {}", node.depth, parent.end()));
            }
        }
        for (ix, node) in tree.nodes.iter().enumerate() {
            let Some(node) = node else { continue };
            for (first, child) in &node.children {
                let c = tree.nodes[*child]
                    .as_ref()
                    .ok_or_else(|| format!("node {ix} links dead child {child}"))?;
                if c.span[0] != *first || c.parent != ix {
                    return Err(format!("child link {ix}->{child} inconsistent"));
                }
            }
        }
        Ok(())
    }
}
