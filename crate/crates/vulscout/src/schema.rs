//! Structural validation of serialized stage artifacts.
//!
//! [`validate_schema`] checks a document against the canonical schema for its
//! artifact kind: required fields, types, closed enumerations, and every type
//! invariant that is expressible from the document alone. Violations carry a
//! JSON-pointer-style path so corrupted fixtures fail with an exact location.

use std::collections::BTreeSet;
use std::fmt;

use serde_json::Value;
use thiserror::Error;

/// Kinds of artifact that cross stage boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArtifactKind {
    CodeSample,
    NumberedFunction,
    AgentReport,
    AggregatedFinding,
    Assumption,
    TriggerPath,
    Hypothesis,
    ContextBundle,
    Verdict,
    DetectionReport,
}

impl ArtifactKind {
    pub const ALL: [ArtifactKind; 10] = [
        ArtifactKind::CodeSample,
        ArtifactKind::NumberedFunction,
        ArtifactKind::AgentReport,
        ArtifactKind::AggregatedFinding,
        ArtifactKind::Assumption,
        ArtifactKind::TriggerPath,
        ArtifactKind::Hypothesis,
        ArtifactKind::ContextBundle,
        ArtifactKind::Verdict,
        ArtifactKind::DetectionReport,
    ];

    pub fn parse(name: &str) -> Option<ArtifactKind> {
        match name {
            "code_sample" => Some(ArtifactKind::CodeSample),
            "numbered_function" => Some(ArtifactKind::NumberedFunction),
            "agent_report" => Some(ArtifactKind::AgentReport),
            "aggregated_finding" => Some(ArtifactKind::AggregatedFinding),
            "assumption" => Some(ArtifactKind::Assumption),
            "trigger_path" => Some(ArtifactKind::TriggerPath),
            "hypothesis" => Some(ArtifactKind::Hypothesis),
            "context_bundle" => Some(ArtifactKind::ContextBundle),
            "verdict" => Some(ArtifactKind::Verdict),
            "detection_report" => Some(ArtifactKind::DetectionReport),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ArtifactKind::CodeSample => "code_sample",
            ArtifactKind::NumberedFunction => "numbered_function",
            ArtifactKind::AgentReport => "agent_report",
            ArtifactKind::AggregatedFinding => "aggregated_finding",
            ArtifactKind::Assumption => "assumption",
            ArtifactKind::TriggerPath => "trigger_path",
            ArtifactKind::Hypothesis => "hypothesis",
            ArtifactKind::ContextBundle => "context_bundle",
            ArtifactKind::Verdict => "verdict",
            ArtifactKind::DetectionReport => "detection_report",
        }
    }
}

/// One schema violation: where and why.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub reason: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.reason)
    }
}

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("malformed document: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("{} schema violation(s): {}", .0.len(), summarize(.0))]
    Violations(Vec<Violation>),
}

fn summarize(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// Validate a serialized artifact against the canonical schema for `kind`.
pub fn validate_schema(document: &str, kind: ArtifactKind) -> Result<(), SchemaError> {
    let value: Value = serde_json::from_str(document)?;
    validate_value(&value, kind)
}

/// Validate an already-parsed document.
pub fn validate_value(value: &Value, kind: ArtifactKind) -> Result<(), SchemaError> {
    let mut ctx = Checker::new();
    match kind {
        ArtifactKind::CodeSample => check_code_sample(&mut ctx, value, "$"),
        ArtifactKind::NumberedFunction => check_numbered_function(&mut ctx, value, "$"),
        ArtifactKind::AgentReport => check_agent_report(&mut ctx, value, "$"),
        ArtifactKind::AggregatedFinding => check_aggregated_finding(&mut ctx, value, "$"),
        ArtifactKind::Assumption => check_assumption(&mut ctx, value, "$"),
        ArtifactKind::TriggerPath => check_trigger_path(&mut ctx, value, "$"),
        ArtifactKind::Hypothesis => check_hypothesis(&mut ctx, value, "$"),
        ArtifactKind::ContextBundle => check_context_bundle(&mut ctx, value, "$"),
        ArtifactKind::Verdict => check_verdict(&mut ctx, value, "$"),
        ArtifactKind::DetectionReport => check_detection_report(&mut ctx, value, "$"),
    }
    if ctx.violations.is_empty() {
        Ok(())
    } else {
        Err(SchemaError::Violations(ctx.violations))
    }
}

struct Checker {
    violations: Vec<Violation>,
}

impl Checker {
    fn new() -> Checker {
        Checker { violations: Vec::new() }
    }

    fn push(&mut self, path: impl Into<String>, reason: impl Into<String>) {
        self.violations.push(Violation {
            path: path.into(),
            reason: reason.into(),
        });
    }

    /// Check an object's key set exactly; returns the map when it is one.
    fn object<'v>(
        &mut self,
        v: &'v Value,
        path: &str,
        keys: &[&str],
    ) -> Option<&'v serde_json::Map<String, Value>> {
        let Some(map) = v.as_object() else {
            self.push(path, "expected object");
            return None;
        };
        for key in keys {
            if !map.contains_key(*key) {
                self.push(format!("{path}.{key}"), "missing required field");
            }
        }
        for present in map.keys() {
            if !keys.contains(&present.as_str()) {
                self.push(format!("{path}.{present}"), "unknown field");
            }
        }
        Some(map)
    }

    fn string<'v>(&mut self, v: Option<&'v Value>, path: &str) -> Option<&'v str> {
        match v {
            Some(Value::String(s)) => Some(s),
            Some(_) => {
                self.push(path, "expected string");
                None
            }
            None => None,
        }
    }

    fn nonempty_string<'v>(&mut self, v: Option<&'v Value>, path: &str) -> Option<&'v str> {
        let s = self.string(v, path)?;
        if s.is_empty() {
            self.push(path, "must be non-empty");
            None
        } else {
            Some(s)
        }
    }

    fn opt_string<'v>(&mut self, v: Option<&'v Value>, path: &str) -> Option<&'v str> {
        match v {
            Some(Value::Null) | None => None,
            other => self.string(other, path),
        }
    }

    fn uint(&mut self, v: Option<&Value>, path: &str) -> Option<u64> {
        match v {
            Some(Value::Number(n)) if n.is_u64() => n.as_u64(),
            Some(_) => {
                self.push(path, "expected non-negative integer");
                None
            }
            None => None,
        }
    }

    fn line_no(&mut self, v: Option<&Value>, path: &str) -> Option<u64> {
        let n = self.uint(v, path)?;
        if n == 0 {
            self.push(path, "line numbers are 1-based");
            None
        } else {
            Some(n)
        }
    }

    fn boolean(&mut self, v: Option<&Value>, path: &str) -> Option<bool> {
        match v {
            Some(Value::Bool(b)) => Some(*b),
            Some(_) => {
                self.push(path, "expected boolean");
                None
            }
            None => None,
        }
    }

    fn array<'v>(&mut self, v: Option<&'v Value>, path: &str) -> Option<&'v [Value]> {
        match v {
            Some(Value::Array(a)) => Some(a),
            Some(_) => {
                self.push(path, "expected array");
                None
            }
            None => None,
        }
    }

    fn keyword(&mut self, v: Option<&Value>, path: &str, allowed: &[&str]) -> Option<String> {
        let s = self.string(v, path)?;
        if allowed.contains(&s) {
            Some(s.to_string())
        } else {
            self.push(path, format!("must be one of {allowed:?}"));
            None
        }
    }

    fn cwe(&mut self, v: Option<&Value>, path: &str) -> Option<String> {
        let s = self.string(v, path)?;
        if is_canonical_cwe(s) {
            Some(s.to_string())
        } else {
            self.push(path, "expected canonical CWE id (CWE-<digits>, no leading zeros)");
            None
        }
    }
}

fn is_canonical_cwe(s: &str) -> bool {
    let Some(rest) = s.strip_prefix("CWE-") else {
        return false;
    };
    !rest.is_empty()
        && rest.bytes().all(|b| b.is_ascii_digit())
        && !rest.starts_with('0')
}

fn check_evidence_list(ctx: &mut Checker, v: Option<&Value>, path: &str) -> Vec<(u64, String)> {
    let mut out = Vec::new();
    let Some(items) = ctx.array(v, path) else {
        return out;
    };
    for (i, item) in items.iter().enumerate() {
        let p = format!("{path}[{i}]");
        if let Some(map) = ctx.object(item, &p, &["line_no", "snippet"]) {
            let line = ctx.line_no(map.get("line_no"), &format!("{p}.line_no"));
            let snippet = ctx.string(map.get("snippet"), &format!("{p}.snippet"));
            if let (Some(l), Some(s)) = (line, snippet) {
                out.push((l, s.to_string()));
            }
        }
    }
    out
}

fn check_numbered_lines(ctx: &mut Checker, v: Option<&Value>, path: &str) {
    let Some(items) = ctx.array(v, path) else {
        return;
    };
    for (i, item) in items.iter().enumerate() {
        let p = format!("{path}[{i}]");
        if let Some(map) = ctx.object(item, &p, &["line_no", "text"]) {
            let line = ctx.line_no(map.get("line_no"), &format!("{p}.line_no"));
            ctx.string(map.get("text"), &format!("{p}.text"));
            if let Some(l) = line {
                if l != (i as u64) + 1 {
                    ctx.push(
                        format!("{p}.line_no"),
                        format!("expected {} (contiguous from 1), found {}", i + 1, l),
                    );
                }
            }
        }
    }
}

fn check_span(ctx: &mut Checker, v: Option<&Value>, path: &str) -> Option<(u64, u64)> {
    let map = ctx.object(v?, path, &["start", "end"])?;
    let start = ctx.line_no(map.get("start"), &format!("{path}.start"));
    let end = ctx.line_no(map.get("end"), &format!("{path}.end"));
    let (s, e) = (start?, end?);
    if s > e {
        ctx.push(path, format!("start {s} > end {e}"));
        return None;
    }
    Some((s, e))
}

fn check_code_sample(ctx: &mut Checker, v: &Value, path: &str) {
    let Some(map) = ctx.object(
        v,
        path,
        &["id", "source", "pair_id", "label", "project", "cwe_truth", "language_hint"],
    ) else {
        return;
    };
    ctx.nonempty_string(map.get("id"), &format!("{path}.id"));
    ctx.nonempty_string(map.get("source"), &format!("{path}.source"));
    ctx.opt_string(map.get("pair_id"), &format!("{path}.pair_id"));
    ctx.keyword(
        map.get("label"),
        &format!("{path}.label"),
        &["vulnerable", "benign", "unknown"],
    );
    ctx.string(map.get("project"), &format!("{path}.project"));
    match map.get("cwe_truth") {
        Some(Value::Null) | None => {}
        Some(Value::Array(items)) => {
            for (i, item) in items.iter().enumerate() {
                ctx.cwe(Some(item), &format!("{path}.cwe_truth[{i}]"));
            }
        }
        Some(_) => ctx.push(format!("{path}.cwe_truth"), "expected array or null"),
    }
    ctx.keyword(
        map.get("language_hint"),
        &format!("{path}.language_hint"),
        &["c", "cpp", "python", "other"],
    );
}

fn check_numbered_function(ctx: &mut Checker, v: &Value, path: &str) {
    let Some(map) = ctx.object(v, path, &["sample_id", "lines"]) else {
        return;
    };
    ctx.string(map.get("sample_id"), &format!("{path}.sample_id"));
    check_numbered_lines(ctx, map.get("lines"), &format!("{path}.lines"));
}

fn check_agent_report(ctx: &mut Checker, v: &Value, path: &str) {
    let Some(map) = ctx.object(
        v,
        path,
        &["sample_id", "source_agent", "cwe", "span", "description", "evidence", "trigger_hint"],
    ) else {
        return;
    };
    ctx.string(map.get("sample_id"), &format!("{path}.sample_id"));
    ctx.nonempty_string(map.get("source_agent"), &format!("{path}.source_agent"));
    ctx.cwe(map.get("cwe"), &format!("{path}.cwe"));
    check_span(ctx, map.get("span"), &format!("{path}.span"));
    ctx.string(map.get("description"), &format!("{path}.description"));
    check_evidence_list(ctx, map.get("evidence"), &format!("{path}.evidence"));
    ctx.opt_string(map.get("trigger_hint"), &format!("{path}.trigger_hint"));
}

fn check_aggregated_finding(ctx: &mut Checker, v: &Value, path: &str) {
    let Some(map) = ctx.object(
        v,
        path,
        &["id", "cwe", "span", "description", "evidence", "source_agents"],
    ) else {
        return;
    };
    ctx.nonempty_string(map.get("id"), &format!("{path}.id"));
    ctx.cwe(map.get("cwe"), &format!("{path}.cwe"));
    check_span(ctx, map.get("span"), &format!("{path}.span"));
    ctx.string(map.get("description"), &format!("{path}.description"));
    let evidence = check_evidence_list(ctx, map.get("evidence"), &format!("{path}.evidence"));
    let mut seen = BTreeSet::new();
    for (i, item) in evidence.iter().enumerate() {
        if !seen.insert(item.clone()) {
            ctx.push(
                format!("{path}.evidence[{i}]"),
                "duplicate (line_no, snippet) evidence item",
            );
        }
    }
    if let Some(agents) = ctx.array(map.get("source_agents"), &format!("{path}.source_agents")) {
        if agents.is_empty() {
            ctx.push(format!("{path}.source_agents"), "must be non-empty");
        }
        let mut prev: Option<&str> = None;
        for (i, a) in agents.iter().enumerate() {
            let p = format!("{path}.source_agents[{i}]");
            if let Some(s) = ctx.nonempty_string(Some(a), &p) {
                if let Some(pv) = prev {
                    if pv >= s {
                        ctx.push(p, "must be sorted and free of duplicates");
                    }
                }
                prev = Some(s);
            }
        }
    }
}

fn check_assumption(ctx: &mut Checker, v: &Value, path: &str) {
    let Some(map) = ctx.object(
        v,
        path,
        &["id", "text", "status", "breaks_path", "evidence"],
    ) else {
        return;
    };
    ctx.nonempty_string(map.get("id"), &format!("{path}.id"));
    ctx.nonempty_string(map.get("text"), &format!("{path}.text"));
    let status = ctx.keyword(
        map.get("status"),
        &format!("{path}.status"),
        &["valid", "contradicted", "plausible"],
    );
    let breaks = ctx.boolean(map.get("breaks_path"), &format!("{path}.breaks_path"));
    if breaks == Some(true) && status.as_deref() != Some("contradicted") {
        ctx.push(
            format!("{path}.breaks_path"),
            "breaks_path is meaningful only for contradicted assumptions",
        );
    }
    check_evidence_list(ctx, map.get("evidence"), &format!("{path}.evidence"));
}

fn check_trigger_path(ctx: &mut Checker, v: &Value, path: &str) {
    let Some(map) = ctx.object(v, path, &["nodes", "edges", "source_class", "sink_line"]) else {
        return;
    };
    let mut node_ids: Vec<String> = Vec::new();
    let mut last_line: Option<u64> = None;
    if let Some(nodes) = ctx.array(map.get("nodes"), &format!("{path}.nodes")) {
        if nodes.len() < 2 {
            ctx.push(
                format!("{path}.nodes"),
                "a trigger path needs at least a source node and a sink node",
            );
        }
        let count = nodes.len();
        for (i, node) in nodes.iter().enumerate() {
            let p = format!("{path}.nodes[{i}]");
            let Some(node_map) = ctx.object(node, &p, &["node_id", "line_no", "kind"]) else {
                continue;
            };
            let id = ctx.nonempty_string(node_map.get("node_id"), &format!("{p}.node_id"));
            let line = ctx.line_no(node_map.get("line_no"), &format!("{p}.line_no"));
            let kind = ctx.keyword(
                node_map.get("kind"),
                &format!("{p}.kind"),
                &["source", "transform", "guard", "sink"],
            );
            if let Some(id) = id {
                if node_ids.iter().any(|existing| existing == id) {
                    ctx.push(format!("{p}.node_id"), "path must be simple (no repeated node)");
                }
                node_ids.push(id.to_string());
            }
            if i == 0 && kind.as_deref().is_some_and(|k| k != "source") {
                ctx.push(format!("{p}.kind"), "first node must be the source");
            }
            if i + 1 == count {
                if kind.as_deref().is_some_and(|k| k != "sink") {
                    ctx.push(format!("{p}.kind"), "last node must be the sink");
                }
                last_line = line;
            } else if i > 0 && kind.as_deref().is_some_and(|k| k == "sink" || k == "source") {
                ctx.push(
                    format!("{p}.kind"),
                    "interior nodes must be transforms or guards",
                );
            }
        }
    }
    if let Some(edges) = ctx.array(map.get("edges"), &format!("{path}.edges")) {
        if !node_ids.is_empty() && edges.len() + 1 != node_ids.len() {
            ctx.push(
                format!("{path}.edges"),
                format!("expected {} edges for {} nodes", node_ids.len() - 1, node_ids.len()),
            );
        }
        for (i, edge) in edges.iter().enumerate() {
            let p = format!("{path}.edges[{i}]");
            let Some(edge_map) = ctx.object(edge, &p, &["from", "to", "dep"]) else {
                continue;
            };
            let from = ctx.string(edge_map.get("from"), &format!("{p}.from"));
            let to = ctx.string(edge_map.get("to"), &format!("{p}.to"));
            ctx.keyword(edge_map.get("dep"), &format!("{p}.dep"), &["control", "data"]);
            if let (Some(f), Some(expect)) = (from, node_ids.get(i)) {
                if f != expect {
                    ctx.push(format!("{p}.from"), "edge must leave the i-th path node");
                }
            }
            if let (Some(t), Some(expect)) = (to, node_ids.get(i + 1)) {
                if t != expect {
                    ctx.push(format!("{p}.to"), "edge must enter the (i+1)-th path node");
                }
            }
        }
    }
    ctx.keyword(
        map.get("source_class"),
        &format!("{path}.source_class"),
        &["parameter", "file_read", "network_read", "deserialized", "environment", "other"],
    );
    let sink_line = ctx.line_no(map.get("sink_line"), &format!("{path}.sink_line"));
    if let (Some(sl), Some(ll)) = (sink_line, last_line) {
        if sl != ll {
            ctx.push(
                format!("{path}.sink_line"),
                format!("must equal the last node's line ({ll}), found {sl}"),
            );
        }
    }
}

fn check_hypothesis(ctx: &mut Checker, v: &Value, path: &str) {
    let Some(map) = ctx.object(
        v,
        path,
        &["finding_ref", "cwe", "assumptions", "unconditional", "path"],
    ) else {
        return;
    };
    ctx.nonempty_string(map.get("finding_ref"), &format!("{path}.finding_ref"));
    ctx.cwe(map.get("cwe"), &format!("{path}.cwe"));
    let mut n_assumptions = None;
    if let Some(items) = ctx.array(map.get("assumptions"), &format!("{path}.assumptions")) {
        n_assumptions = Some(items.len());
        for (i, item) in items.iter().enumerate() {
            check_assumption(ctx, item, &format!("{path}.assumptions[{i}]"));
        }
    }
    let unconditional = ctx.boolean(map.get("unconditional"), &format!("{path}.unconditional"));
    if let (Some(n), Some(marker)) = (n_assumptions, unconditional) {
        if (n == 0) != marker {
            ctx.push(
                format!("{path}.unconditional"),
                "assumptions must be non-empty or the hypothesis explicitly unconditional",
            );
        }
    }
    if let Some(p) = map.get("path") {
        check_trigger_path(ctx, p, &format!("{path}.path"));
    }
}

fn check_context_bundle(ctx: &mut Checker, v: &Value, path: &str) {
    let Some(map) = ctx.object(
        v,
        path,
        &["schema_version", "functions", "call_edges", "data_edges", "control_edges", "imports", "externals", "project_meta"],
    ) else {
        return;
    };
    if let Some(ver) = ctx.uint(map.get("schema_version"), &format!("{path}.schema_version")) {
        if ver != crate::model::CONTEXT_SCHEMA_VERSION as u64 {
            ctx.push(
                format!("{path}.schema_version"),
                format!("unsupported version {ver}"),
            );
        }
    }
    let mut known: BTreeSet<String> = BTreeSet::new();
    match map.get("functions") {
        Some(Value::Object(fns)) => {
            for (name, body) in fns {
                known.insert(name.clone());
                check_numbered_lines(ctx, Some(body), &format!("{path}.functions.{name}"));
            }
        }
        Some(_) => ctx.push(format!("{path}.functions"), "expected object"),
        None => {}
    }
    if let Some(items) = ctx.array(map.get("externals"), &format!("{path}.externals")) {
        let mut prev: Option<&str> = None;
        for (i, item) in items.iter().enumerate() {
            let p = format!("{path}.externals[{i}]");
            if let Some(s) = ctx.nonempty_string(Some(item), &p) {
                if let Some(pv) = prev {
                    if pv >= s {
                        ctx.push(p, "must be sorted and free of duplicates");
                    }
                }
                prev = Some(s);
                known.insert(s.to_string());
            }
        }
    }
    let mut seen_self_loops: BTreeSet<(String, u64)> = BTreeSet::new();
    if let Some(edges) = ctx.array(map.get("call_edges"), &format!("{path}.call_edges")) {
        for (i, edge) in edges.iter().enumerate() {
            let p = format!("{path}.call_edges[{i}]");
            let Some(edge_map) = ctx.object(edge, &p, &["caller", "callee", "call_site_line"]) else {
                continue;
            };
            let caller = ctx.nonempty_string(edge_map.get("caller"), &format!("{p}.caller"));
            let callee = ctx.nonempty_string(edge_map.get("callee"), &format!("{p}.callee"));
            let line = ctx.line_no(edge_map.get("call_site_line"), &format!("{p}.call_site_line"));
            for (role, name) in [("caller", caller), ("callee", callee)] {
                if let Some(n) = name {
                    if !known.contains(n) {
                        ctx.push(
                            format!("{p}.{role}"),
                            format!("function {n:?} neither defined nor flagged external"),
                        );
                    }
                }
            }
            if let (Some(cr), Some(ce), Some(l)) = (caller, callee, line) {
                if cr == ce && !seen_self_loops.insert((cr.to_string(), l)) {
                    ctx.push(p, "duplicated self-loop call edge");
                }
            }
        }
    }
    for field in ["data_edges", "control_edges"] {
        if let Some(edges) = ctx.array(map.get(field), &format!("{path}.{field}")) {
            for (i, edge) in edges.iter().enumerate() {
                let p = format!("{path}.{field}[{i}]");
                let Some(edge_map) = ctx.object(edge, &p, &["from", "to"]) else {
                    continue;
                };
                for end in ["from", "to"] {
                    let ep = format!("{p}.{end}");
                    let Some(point) = edge_map.get(end) else {
                        continue;
                    };
                    let Some(point_map) = ctx.object(point, &ep, &["function", "line"]) else {
                        continue;
                    };
                    let func = ctx.nonempty_string(point_map.get("function"), &format!("{ep}.function"));
                    ctx.line_no(point_map.get("line"), &format!("{ep}.line"));
                    if let Some(f) = func {
                        if !known.contains(f) {
                            ctx.push(
                                format!("{ep}.function"),
                                format!("function {f:?} neither defined nor flagged external"),
                            );
                        }
                    }
                }
            }
        }
    }
    if let Some(items) = ctx.array(map.get("imports"), &format!("{path}.imports")) {
        for (i, item) in items.iter().enumerate() {
            ctx.string(Some(item), &format!("{path}.imports[{i}]"));
        }
    }
    match map.get("project_meta") {
        Some(Value::Object(meta)) => {
            for (key, val) in meta {
                if !val.is_string() {
                    ctx.push(format!("{path}.project_meta.{key}"), "expected string value");
                }
            }
        }
        Some(_) => ctx.push(format!("{path}.project_meta"), "expected object"),
        None => {}
    }
}

fn check_verdict(ctx: &mut Checker, v: &Value, path: &str) {
    let Some(map) = ctx.object(
        v,
        path,
        &["hypothesis_ref", "cwe", "decision", "rationale", "evidence"],
    ) else {
        return;
    };
    ctx.nonempty_string(map.get("hypothesis_ref"), &format!("{path}.hypothesis_ref"));
    ctx.cwe(map.get("cwe"), &format!("{path}.cwe"));
    let decision = ctx.keyword(
        map.get("decision"),
        &format!("{path}.decision"),
        &["retained", "discarded"],
    );
    let rationale = ctx.string(map.get("rationale"), &format!("{path}.rationale"));
    if decision.as_deref() == Some("discarded") && rationale.is_some_and(|r| r.is_empty()) {
        ctx.push(
            format!("{path}.rationale"),
            "a discarded verdict requires a non-empty rationale",
        );
    }
    check_evidence_list(ctx, map.get("evidence"), &format!("{path}.evidence"));
}

fn check_detection_report(ctx: &mut Checker, v: &Value, path: &str) {
    let Some(map) = ctx.object(
        v,
        path,
        &["sample_id", "vulnerable", "valid_cwes", "verdicts", "hypotheses", "call_count", "output_tokens"],
    ) else {
        return;
    };
    ctx.nonempty_string(map.get("sample_id"), &format!("{path}.sample_id"));
    let vulnerable = ctx.boolean(map.get("vulnerable"), &format!("{path}.vulnerable"));
    let mut listed: Vec<String> = Vec::new();
    if let Some(items) = ctx.array(map.get("valid_cwes"), &format!("{path}.valid_cwes")) {
        let mut prev: Option<String> = None;
        for (i, item) in items.iter().enumerate() {
            let p = format!("{path}.valid_cwes[{i}]");
            if let Some(c) = ctx.cwe(Some(item), &p) {
                if prev.as_deref().is_some_and(|pv| pv >= c.as_str()) {
                    ctx.push(p, "must be sorted and free of duplicates");
                }
                prev = Some(c.clone());
                listed.push(c);
            }
        }
    }
    let mut retained: BTreeSet<String> = BTreeSet::new();
    let mut any_retained = false;
    if let Some(items) = ctx.array(map.get("verdicts"), &format!("{path}.verdicts")) {
        for (i, item) in items.iter().enumerate() {
            let p = format!("{path}.verdicts[{i}]");
            check_verdict(ctx, item, &p);
            if let Some(obj) = item.as_object() {
                if obj.get("decision").and_then(Value::as_str) == Some("retained") {
                    any_retained = true;
                    if let Some(c) = obj.get("cwe").and_then(Value::as_str) {
                        retained.insert(c.to_string());
                    }
                }
            }
        }
    }
    if let Some(items) = ctx.array(map.get("hypotheses"), &format!("{path}.hypotheses")) {
        for (i, item) in items.iter().enumerate() {
            check_hypothesis(ctx, item, &format!("{path}.hypotheses[{i}]"));
        }
    }
    ctx.uint(map.get("call_count"), &format!("{path}.call_count"));
    ctx.uint(map.get("output_tokens"), &format!("{path}.output_tokens"));
    if let Some(flag) = vulnerable {
        if flag != !listed.is_empty() {
            ctx.push(
                format!("{path}.vulnerable"),
                "flag must equal (valid_cwes non-empty)",
            );
        }
        if flag != any_retained {
            ctx.push(
                format!("{path}.vulnerable"),
                "flag must equal (at least one retained verdict)",
            );
        }
    }
    let expected: Vec<String> = retained.into_iter().collect();
    if listed != expected {
        ctx.push(
            format!("{path}.valid_cwes"),
            "must be exactly the deduplicated CWEs of retained verdicts",
        );
    }
}
