//! Graph view over a [`ContextBundle`].
//!
//! Nodes are `(function, line)` points. Edges come from the bundle's data and
//! control dependencies, plus one control edge per resolved call site into the
//! callee's first line. On top of the structure, lines are classified into
//! guards, rejecting guards, and attacker-controllable sources; explicit
//! `source:`/`fact:` entries in `project_meta` override the lexical rules.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::OnceLock;

use regex::Regex;

use crate::model::{ContextBundle, DepKind, NumberedFunction, SourceClass};

/// A `(function, line)` point in the context graph.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeRef {
    pub function: String,
    pub line: u32,
}

impl NodeRef {
    pub fn new(function: impl Into<String>, line: u32) -> NodeRef {
        NodeRef {
            function: function.into(),
            line,
        }
    }

    pub fn id(&self) -> String {
        format!("{}:{}", self.function, self.line)
    }
}

/// An analysis fact attached to a node via `project_meta`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Fact {
    Confirms(String),
    Refutes(String),
}

#[derive(Debug)]
pub struct CtxGraph {
    nodes: BTreeSet<NodeRef>,
    successors: BTreeMap<NodeRef, BTreeMap<NodeRef, DepKind>>,
    predecessors: BTreeMap<NodeRef, BTreeMap<NodeRef, DepKind>>,
    line_texts: BTreeMap<NodeRef, String>,
    source_overrides: BTreeMap<NodeRef, SourceClass>,
    facts: BTreeMap<NodeRef, Fact>,
}

impl CtxGraph {
    pub fn from_bundle(ctx: &ContextBundle) -> CtxGraph {
        let mut g = CtxGraph {
            nodes: BTreeSet::new(),
            successors: BTreeMap::new(),
            predecessors: BTreeMap::new(),
            line_texts: BTreeMap::new(),
            source_overrides: BTreeMap::new(),
            facts: BTreeMap::new(),
        };
        for edge in &ctx.data_edges {
            g.add_edge(
                NodeRef::new(&edge.from.function, edge.from.line),
                NodeRef::new(&edge.to.function, edge.to.line),
                DepKind::Data,
            );
        }
        for edge in &ctx.control_edges {
            g.add_edge(
                NodeRef::new(&edge.from.function, edge.from.line),
                NodeRef::new(&edge.to.function, edge.to.line),
                DepKind::Control,
            );
        }
        for call in &ctx.call_edges {
            // A resolved call feeds the callee's entry line.
            if ctx.functions.contains_key(&call.callee) {
                g.add_edge(
                    NodeRef::new(&call.caller, call.call_site_line),
                    NodeRef::new(&call.callee, 1),
                    DepKind::Control,
                );
            }
        }
        for node in &g.nodes {
            if let Some(body) = ctx.functions.get(&node.function) {
                if let Some(line) = body.get(node.line as usize - 1) {
                    g.line_texts.insert(node.clone(), line.text.clone());
                }
            }
        }
        for (key, value) in &ctx.project_meta {
            if let Some(node) = parse_meta_node(key, "source:") {
                if let Some(class) = SourceClass::parse(value) {
                    g.source_overrides.insert(node, class);
                }
            } else if let Some(node) = parse_meta_node(key, "fact:") {
                if let Some(tag) = value.strip_prefix("confirms:") {
                    g.facts.insert(node, Fact::Confirms(tag.to_string()));
                } else if let Some(tag) = value.strip_prefix("refutes:") {
                    g.facts.insert(node, Fact::Refutes(tag.to_string()));
                }
            }
        }
        g
    }

    fn add_edge(&mut self, from: NodeRef, to: NodeRef, dep: DepKind) {
        self.nodes.insert(from.clone());
        self.nodes.insert(to.clone());
        // Data wins when the same edge exists under both dependence kinds.
        let succ = self.successors.entry(from.clone()).or_default();
        match succ.get(&to) {
            Some(DepKind::Data) => {}
            _ if dep == DepKind::Data => {
                succ.insert(to.clone(), DepKind::Data);
            }
            Some(_) => {}
            None => {
                succ.insert(to.clone(), dep);
            }
        }
        let pred = self.predecessors.entry(to).or_default();
        match pred.get(&from) {
            Some(DepKind::Data) => {}
            _ if dep == DepKind::Data => {
                pred.insert(from, DepKind::Data);
            }
            Some(_) => {}
            None => {
                pred.insert(from, dep);
            }
        }
    }

    pub fn contains(&self, node: &NodeRef) -> bool {
        self.nodes.contains(node)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeRef> {
        self.nodes.iter()
    }

    pub fn successors(&self, node: &NodeRef) -> impl Iterator<Item = (&NodeRef, DepKind)> {
        self.successors
            .get(node)
            .into_iter()
            .flat_map(|m| m.iter().map(|(n, d)| (n, *d)))
    }

    pub fn predecessors(&self, node: &NodeRef) -> impl Iterator<Item = (&NodeRef, DepKind)> {
        self.predecessors
            .get(node)
            .into_iter()
            .flat_map(|m| m.iter().map(|(n, d)| (n, *d)))
    }

    pub fn edge_kind(&self, from: &NodeRef, to: &NodeRef) -> Option<DepKind> {
        self.successors.get(from).and_then(|m| m.get(to)).copied()
    }

    pub fn line_text(&self, node: &NodeRef) -> Option<&str> {
        self.line_texts.get(node).map(String::as_str)
    }

    pub fn fact(&self, node: &NodeRef) -> Option<&Fact> {
        self.facts.get(node)
    }

    pub fn facts(&self) -> impl Iterator<Item = (&NodeRef, &Fact)> {
        self.facts.iter()
    }

    /// Nodes with no incoming edges: where values enter the graph.
    pub fn entry_nodes(&self) -> Vec<NodeRef> {
        self.nodes
            .iter()
            .filter(|n| self.predecessors.get(n).map_or(true, |p| p.is_empty()))
            .cloned()
            .collect()
    }

    /// A protective check: a conditional, loop-bound, or assertion line.
    pub fn is_guard(&self, node: &NodeRef) -> bool {
        self.line_text(node).is_some_and(guard_text)
    }

    /// A guard that also bails out on the spot (return/goto/abort on the
    /// same line), i.e. a check that rejects the value before it moves on.
    pub fn is_rejecting_guard(&self, node: &NodeRef) -> bool {
        self.line_text(node)
            .is_some_and(|t| guard_text(t) && rejecting_text(t))
    }

    pub fn guard_nodes(&self) -> BTreeSet<NodeRef> {
        self.nodes.iter().filter(|n| self.is_guard(n)).cloned().collect()
    }

    /// The attacker-controllable class of a node, if any.
    ///
    /// An explicit `source:<func>:<line>` meta entry wins; otherwise the
    /// line's text is classified, and the entry line of a known function
    /// counts as a parameter source.
    pub fn source_class(&self, node: &NodeRef) -> Option<SourceClass> {
        if let Some(class) = self.source_overrides.get(node) {
            return Some(*class);
        }
        let text = self.line_text(node);
        if let Some(t) = text {
            if let Some(class) = classify_source_text(t) {
                return Some(class);
            }
        }
        // Entry line of a function body we know: parameters arrive here.
        if node.line == 1 && self.line_texts.contains_key(node) {
            return Some(SourceClass::Parameter);
        }
        None
    }

    pub fn source_nodes(&self, filter: Option<SourceClass>) -> Vec<(NodeRef, SourceClass)> {
        self.nodes
            .iter()
            .filter_map(|n| self.source_class(n).map(|c| (n.clone(), c)))
            .filter(|(_, c)| filter.map_or(true, |f| f == *c))
            .collect()
    }

    /// Shortest path (by edge count) from any of `sources` to `sink`;
    /// ties resolve to the lexicographically smallest node-id sequence.
    pub fn shortest_path(&self, sources: &[NodeRef], sink: &NodeRef) -> Option<Vec<NodeRef>> {
        if !self.contains(sink) {
            return None;
        }
        // Reverse BFS gives distance-to-sink for every node.
        let mut dist: BTreeMap<&NodeRef, u32> = BTreeMap::new();
        dist.insert(sink, 0);
        let mut queue = VecDeque::from([sink]);
        while let Some(n) = queue.pop_front() {
            let d = dist[n];
            for (p, _) in self.predecessors(n) {
                if !dist.contains_key(p) {
                    dist.insert(p, d + 1);
                    queue.push_back(p);
                }
            }
        }
        let start = sources
            .iter()
            .filter(|s| dist.contains_key(s))
            .min_by_key(|s| (dist[s], s.id()))?
            .clone();
        let mut path = vec![start.clone()];
        let mut current = start;
        while &current != sink {
            let d = dist[&current];
            let next = self
                .successors(&current)
                .filter(|(n, _)| dist.get(n).is_some_and(|nd| *nd == d - 1))
                .map(|(n, _)| n.clone())
                .min_by_key(|n| n.id())?;
            path.push(next.clone());
            current = next;
        }
        Some(path)
    }

    /// All simple paths from `from` to `to`, in deterministic (sorted
    /// neighbor) order, stopping once `bound` paths have been collected.
    /// The second value reports whether the enumeration was truncated.
    pub fn simple_paths(&self, from: &NodeRef, to: &NodeRef, bound: usize) -> (Vec<Vec<NodeRef>>, bool) {
        let mut paths = Vec::new();
        let mut truncated = false;
        if !self.contains(from) || !self.contains(to) {
            return (paths, truncated);
        }
        let mut stack = vec![from.clone()];
        let mut on_path: BTreeSet<NodeRef> = BTreeSet::from([from.clone()]);
        self.dfs_paths(to, bound, &mut stack, &mut on_path, &mut paths, &mut truncated);
        (paths, truncated)
    }

    fn dfs_paths(
        &self,
        to: &NodeRef,
        bound: usize,
        stack: &mut Vec<NodeRef>,
        on_path: &mut BTreeSet<NodeRef>,
        paths: &mut Vec<Vec<NodeRef>>,
        truncated: &mut bool,
    ) {
        if paths.len() >= bound {
            *truncated = true;
            return;
        }
        let current = stack.last().expect("non-empty stack").clone();
        if &current == to {
            paths.push(stack.clone());
            return;
        }
        let next: Vec<NodeRef> = self.successors(&current).map(|(n, _)| n.clone()).collect();
        for n in next {
            if on_path.contains(&n) {
                continue;
            }
            stack.push(n.clone());
            on_path.insert(n.clone());
            self.dfs_paths(to, bound, stack, on_path, paths, truncated);
            on_path.remove(&n);
            stack.pop();
        }
    }

    /// Can `target` be reached from `from` without stepping on a banned
    /// node? `from` itself must not be banned; `target` is always allowed.
    pub fn reaches_avoiding(&self, from: &NodeRef, target: &NodeRef, banned: &BTreeSet<NodeRef>) -> bool {
        if banned.contains(from) {
            return false;
        }
        if !self.contains(from) {
            return false;
        }
        let mut seen = BTreeSet::from([from.clone()]);
        let mut queue = VecDeque::from([from.clone()]);
        while let Some(n) = queue.pop_front() {
            if &n == target {
                return true;
            }
            for (succ, _) in self.successors(&n) {
                if succ != target && banned.contains(succ) {
                    continue;
                }
                if seen.insert(succ.clone()) {
                    queue.push_back(succ.clone());
                }
            }
        }
        false
    }

    /// Plain reachability.
    pub fn reaches(&self, from: &NodeRef, target: &NodeRef) -> bool {
        self.reaches_avoiding(from, target, &BTreeSet::new())
    }
}

fn parse_meta_node(key: &str, prefix: &str) -> Option<NodeRef> {
    let rest = key.strip_prefix(prefix)?;
    let (function, line) = rest.rsplit_once(':')?;
    let line: u32 = line.parse().ok()?;
    if function.is_empty() || line == 0 {
        return None;
    }
    Some(NodeRef::new(function, line))
}

fn guard_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^\s*(if|while|switch)\b|^\s*(else\s+if)\b|\bassert\b|\bASSERT\b").unwrap()
    })
}

fn rejecting_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"\b(return|goto|exit|abort|throw|break|continue)\b|\bASSERT\b|\bassert\b").unwrap()
    })
}

fn source_read_regexes() -> &'static [(SourceClass, Regex)] {
    static RES: OnceLock<Vec<(SourceClass, Regex)>> = OnceLock::new();
    RES.get_or_init(|| {
        vec![
            (
                SourceClass::FileRead,
                Regex::new(r"\b(fread|fgets|fgetc|fscanf|getline|pread)\s*\(").unwrap(),
            ),
            (
                SourceClass::NetworkRead,
                Regex::new(r"\b(recv|recvfrom|recvmsg|accept)\s*\(").unwrap(),
            ),
            (
                SourceClass::Deserialized,
                Regex::new(r"\b(deserialize|unmarshal|unpack|json_load\w*|decode)\w*\s*\(").unwrap(),
            ),
            (
                SourceClass::Environment,
                Regex::new(r"\bgetenv\s*\(|\benviron\b").unwrap(),
            ),
            (
                SourceClass::Parameter,
                Regex::new(r"\bargv\b").unwrap(),
            ),
        ]
    })
}

thread_local! {
    // Per-thread clones: same compiled programs, fresh cache pools, so the
    // classifiers stay lock-free under the worker pool.
    static GUARD_RE: Regex = guard_regex().clone();
    static REJECTING_RE: Regex = rejecting_regex().clone();
    static SOURCE_RES: Vec<(SourceClass, Regex)> = source_read_regexes().to_vec();
}

fn guard_text(text: &str) -> bool {
    GUARD_RE.with(|re| re.is_match(text))
}

fn rejecting_text(text: &str) -> bool {
    REJECTING_RE.with(|re| re.is_match(text))
}

fn classify_source_text(text: &str) -> Option<SourceClass> {
    SOURCE_RES.with(|res| {
        res.iter()
            .find(|(_, re)| re.is_match(text))
            .map(|(class, _)| *class)
    })
}

/// Resolve which bundle function is the sample under test.
///
/// Preference order: an explicit `target_function` meta entry, a function
/// whose body lines equal the sample's, the sample id as a function name,
/// and finally the only function of a single-function bundle.
pub fn resolve_target_function(ctx: &ContextBundle, fun: &NumberedFunction) -> Option<String> {
    if let Some(name) = ctx.project_meta.get("target_function") {
        if ctx.functions.contains_key(name) {
            return Some(name.clone());
        }
    }
    for (name, body) in &ctx.functions {
        if body.len() == fun.lines.len()
            && body
                .iter()
                .zip(fun.lines.iter())
                .all(|(a, b)| a.text == b.text)
        {
            return Some(name.clone());
        }
    }
    if ctx.functions.contains_key(&fun.sample_id) {
        return Some(fun.sample_id.clone());
    }
    if ctx.functions.len() == 1 {
        return ctx.functions.keys().next().cloned();
    }
    None
}
