//! Domain types exchanged between pipeline stages.
//!
//! Everything here is an immutable value object once constructed and safe to
//! share across worker threads. The serialized forms are the canonical schema
//! contract shipped under `schemas/`; see [`crate::schema`] for the validator.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid CWE id {0:?}")]
    InvalidCwe(String),
    #[error("invalid span: start {start} > end {end}")]
    InvalidSpan { start: u32, end: u32 },
}

/// Well-known agent identifiers.
///
/// The first three form the baseline trio that is activated for every sample;
/// the remainder are specialized agents the dispatcher activates on demand.
/// The last four are the fixed pipeline-stage agents.
pub mod agent_ids {
    pub const STATIC_ANALYZER: &str = "StaticAnalyzerAgent";
    pub const BEHAVIOR_ANALYZER: &str = "BehaviorAnalyzerAgent";
    pub const MEMORY_LAYOUT: &str = "MemoryLayoutAgent";
    pub const FORMAT_STRING: &str = "FormatStringAgent";
    pub const FILE_PERMISSION: &str = "FilePermissionAgent";
    pub const AUTH_FLOW: &str = "AuthFlowAgent";
    pub const CRYPTO_CONFIG: &str = "CryptoConfigAgent";
    pub const CONCURRENCY_ANALYZER: &str = "ConcurrencyAnalyzerAgent";
    pub const ERROR_HANDLING: &str = "ErrorHandlingAgent";
    pub const CODE_INJECTION: &str = "CodeInjectionAgent";

    pub const DISPATCHER: &str = "MetaAgent";
    pub const TRIGGER_PLANNER: &str = "TriggerPlannerAgent";
    pub const ASSUMPTION_PRUNER: &str = "AssumptionPrunerAgent";
    pub const FINAL_VALIDATOR: &str = "FinalValidatorAgent";

    /// The ten detection agents, in registry order.
    pub const ALL_DETECTION: [&str; 10] = [
        STATIC_ANALYZER,
        BEHAVIOR_ANALYZER,
        MEMORY_LAYOUT,
        FORMAT_STRING,
        FILE_PERMISSION,
        AUTH_FLOW,
        CRYPTO_CONFIG,
        CONCURRENCY_ANALYZER,
        ERROR_HANDLING,
        CODE_INJECTION,
    ];

    /// The always-activated safety-net trio.
    pub const BASELINE_TRIO: [&str; 3] = [STATIC_ANALYZER, BEHAVIOR_ANALYZER, MEMORY_LAYOUT];
}

/// Identifier of a detection or pipeline agent.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub String);

impl AgentId {
    pub fn new(id: impl Into<String>) -> Self {
        AgentId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AgentId {
    fn from(s: &str) -> Self {
        AgentId(s.to_string())
    }
}

/// A CWE identifier in the canonical `CWE-<digits>` form.
///
/// Model outputs arrive in mixed styles (`CWE089`, `cwe-78`, bare `89`); all
/// are normalized by stripping the prefix and leading zeros and re-prefixing.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct CweId(String);

impl CweId {
    pub fn parse(raw: &str) -> Result<CweId, ModelError> {
        let t = raw.trim();
        let rest = if t.len() >= 3 && t[..3].eq_ignore_ascii_case("cwe") {
            t[3..].trim_start_matches(['-', '_', ' ', ':'])
        } else {
            t
        };
        if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) {
            return Err(ModelError::InvalidCwe(raw.to_string()));
        }
        let digits = rest.trim_start_matches('0');
        if digits.is_empty() {
            return Err(ModelError::InvalidCwe(raw.to_string()));
        }
        Ok(CweId(format!("CWE-{digits}")))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CweId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for CweId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        CweId::parse(&raw).map_err(serde::de::Error::custom)
    }
}

/// Ground-truth label of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Vulnerable,
    Benign,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LanguageHint {
    C,
    Cpp,
    Python,
    Other,
}

/// One function under analysis, optionally linked to its fixed twin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodeSample {
    pub id: String,
    pub source: String,
    pub pair_id: Option<String>,
    pub label: Label,
    pub project: String,
    pub cwe_truth: Option<Vec<CweId>>,
    pub language_hint: LanguageHint,
}

/// One source line with its assigned 1-based number.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumberedLine {
    pub line_no: u32,
    pub text: String,
}

/// A function body with line numbers attached, ready for prompt rendering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumberedFunction {
    pub sample_id: String,
    pub lines: Vec<NumberedLine>,
}

impl NumberedFunction {
    pub fn line_count(&self) -> u32 {
        self.lines.len() as u32
    }

    pub fn line_text(&self, line_no: u32) -> Option<&str> {
        self.lines
            .get(line_no.checked_sub(1)? as usize)
            .map(|l| l.text.as_str())
    }
}

/// An inclusive line range. Single-line findings use `start == end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Span {
    pub start: u32,
    pub end: u32,
}

impl Span {
    pub fn new(start: u32, end: u32) -> Result<Span, ModelError> {
        if start > end {
            return Err(ModelError::InvalidSpan { start, end });
        }
        Ok(Span { start, end })
    }

    pub fn single(line: u32) -> Span {
        Span { start: line, end: line }
    }

    pub fn contains(&self, line: u32) -> bool {
        self.start <= line && line <= self.end
    }

    /// Smallest span covering both.
    pub fn hull(&self, other: &Span) -> Span {
        Span {
            start: self.start.min(other.start),
            end: self.end.max(other.end),
        }
    }
}

/// A cited line of code supporting a finding, assumption, or verdict.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvidenceItem {
    pub line_no: u32,
    pub snippet: String,
}

/// A raw per-agent finding, parsed from one agent response.
///
/// `sample_id` records which sample the report was parsed against; it is
/// stamped by the agent runner so that aggregation can refuse mixed input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentReport {
    pub sample_id: String,
    pub source_agent: AgentId,
    pub cwe: CweId,
    pub span: Span,
    pub description: String,
    pub evidence: Vec<EvidenceItem>,
    pub trigger_hint: Option<String>,
}

/// A deduplicated finding merged from one or more agent reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregatedFinding {
    pub id: String,
    pub cwe: CweId,
    pub span: Span,
    pub description: String,
    pub evidence: Vec<EvidenceItem>,
    pub source_agents: Vec<AgentId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssumptionStatus {
    Valid,
    Contradicted,
    Plausible,
}

/// A precondition under which a hypothesized vulnerability would be real.
///
/// Status starts `plausible` and is judged during assumption pruning;
/// `breaks_path` is meaningful only once the status is `contradicted`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Assumption {
    pub id: String,
    pub text: String,
    pub status: AssumptionStatus,
    pub breaks_path: bool,
    pub evidence: Vec<EvidenceItem>,
}

impl Assumption {
    pub fn plausible(id: impl Into<String>, text: impl Into<String>) -> Assumption {
        Assumption {
            id: id.into(),
            text: text.into(),
            status: AssumptionStatus::Plausible,
            breaks_path: false,
            evidence: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Source,
    Transform,
    Guard,
    Sink,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepKind {
    Control,
    Data,
}

/// Classes of attacker-controllable input a trigger path may start from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceClass {
    Parameter,
    FileRead,
    NetworkRead,
    Deserialized,
    Environment,
    Other,
}

impl SourceClass {
    pub fn parse(raw: &str) -> Option<SourceClass> {
        match raw {
            "parameter" => Some(SourceClass::Parameter),
            "file_read" => Some(SourceClass::FileRead),
            "network_read" => Some(SourceClass::NetworkRead),
            "deserialized" => Some(SourceClass::Deserialized),
            "environment" => Some(SourceClass::Environment),
            "other" => Some(SourceClass::Other),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathNode {
    pub node_id: String,
    pub line_no: u32,
    pub kind: NodeKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathEdge {
    pub from: String,
    pub to: String,
    pub dep: DepKind,
}

/// A control/data-dependence walk from an attacker-controllable source to a
/// sink. The first node is always the source, the last always the sink, and
/// the edges connect consecutive nodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerPath {
    pub nodes: Vec<PathNode>,
    pub edges: Vec<PathEdge>,
    pub source_class: SourceClass,
    pub sink_line: u32,
}

impl TriggerPath {
    pub fn sink(&self) -> Option<&PathNode> {
        self.nodes.last()
    }

    pub fn guard_nodes(&self) -> impl Iterator<Item = &PathNode> {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Guard)
    }
}

/// A structured vulnerability hypothesis: a CWE claim, the preconditions it
/// rests on, and the trigger path that would exercise it.
///
/// `unconditional` is the explicit marker for hypotheses with no
/// preconditions; it is mutually exclusive with a nonempty assumption list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hypothesis {
    pub finding_ref: String,
    pub cwe: CweId,
    pub assumptions: Vec<Assumption>,
    pub unconditional: bool,
    pub path: TriggerPath,
}

/// A directed call edge. `call_site_line` is relative to the caller's
/// numbered body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CallEdge {
    pub caller: String,
    pub callee: String,
    pub call_site_line: u32,
}

/// A point in the program: a line of a named function.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowPoint {
    pub function: String,
    pub line: u32,
}

/// A data- or control-dependence edge between two program points.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowEdge {
    pub from: FlowPoint,
    pub to: FlowPoint,
}

pub const CONTEXT_SCHEMA_VERSION: u32 = 1;

/// Program context surrounding a sample: function bodies, the call graph,
/// data/control dependencies, imports, and free-form project metadata.
///
/// Functions referenced by edges must either appear in `functions` or be
/// listed in `externals`. Two `project_meta` key families carry analysis
/// facts: `fact:<func>:<line>` with a `confirms:<tag>` or `refutes:<tag>`
/// value, and `source:<func>:<line>` naming a source class. The key
/// `target_function` names the function under test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextBundle {
    pub schema_version: u32,
    pub functions: BTreeMap<String, Vec<NumberedLine>>,
    pub call_edges: Vec<CallEdge>,
    pub data_edges: Vec<FlowEdge>,
    pub control_edges: Vec<FlowEdge>,
    pub imports: Vec<String>,
    pub externals: Vec<String>,
    pub project_meta: BTreeMap<String, String>,
}

impl ContextBundle {
    pub fn empty() -> ContextBundle {
        ContextBundle {
            schema_version: CONTEXT_SCHEMA_VERSION,
            functions: BTreeMap::new(),
            call_edges: Vec::new(),
            data_edges: Vec::new(),
            control_edges: Vec::new(),
            imports: Vec::new(),
            externals: Vec::new(),
            project_meta: BTreeMap::new(),
        }
    }

    pub fn knows_function(&self, name: &str) -> bool {
        self.functions.contains_key(name) || self.externals.iter().any(|e| e == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Retained,
    Discarded,
}

/// The final per-hypothesis decision with its justification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Verdict {
    pub hypothesis_ref: String,
    pub cwe: CweId,
    pub decision: Decision,
    pub rationale: String,
    pub evidence: Vec<EvidenceItem>,
}

/// The sample-level detection result.
///
/// Invariant: `vulnerable` holds exactly when `valid_cwes` is nonempty, and
/// `valid_cwes` is the deduplicated set of CWEs with a retained verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionReport {
    pub sample_id: String,
    pub vulnerable: bool,
    pub valid_cwes: Vec<CweId>,
    pub verdicts: Vec<Verdict>,
    pub hypotheses: Vec<Hypothesis>,
    pub call_count: u64,
    pub output_tokens: u64,
}
