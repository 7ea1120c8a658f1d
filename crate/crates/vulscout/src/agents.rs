//! The detection-agent registry: prompt templates, strict output parsing.
//!
//! Ten agents ship built in, one file per agent under `prompts/`, each with
//! front-matter metadata and a template body. All agents share one output
//! contract — a JSON array of findings — so responses aggregate uniformly.
//! Parsing is strict with a single bounded repair step: strip code fences,
//! trim prose outside the outermost brackets, re-parse once.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::context;
use crate::gateway::{CompleteApi, GatewayError, GatewayRequest};
use crate::model::{AgentId, AgentReport, ContextBundle, CweId, EvidenceItem, NumberedFunction, Span};
use crate::preprocess::render_numbered;

pub const FUNCTION_SLOT: &str = "{function_code}";
pub const CONTEXT_SLOT: &str = "{context}";

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("agent {0} already registered")]
    DuplicateId(String),
    #[error("agent {0} template lacks the {FUNCTION_SLOT} slot")]
    MissingSlot(String),
    #[error("agent {0} is not registered")]
    UnknownAgent(String),
    #[error("malformed agent spec{}: {detail}", file.as_deref().map(|f| format!(" in {f}")).unwrap_or_default())]
    MalformedSpec { file: Option<String>, detail: String },
    #[error("gateway failure for agent {agent}: {source}")]
    Gateway {
        agent: String,
        #[source]
        source: GatewayError,
    },
    #[error("agent {agent} output unparseable after repair: {detail}")]
    ParseFailureAfterRepair { agent: String, detail: String },
    #[error("agent {agent} finding {index}: span ({start},{end}) outside 1..={fn_len}")]
    SpanOutOfRange {
        agent: String,
        index: usize,
        start: u32,
        end: u32,
        fn_len: u32,
    },
}

/// A registered agent: its analysis angle, CWE focus, and prompt template.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec {
    pub id: AgentId,
    pub role_text: String,
    pub cwe_focus: Vec<CweId>,
    pub trigger_hints: Vec<String>,
    pub prompt_template: String,
}

impl AgentSpec {
    fn check(&self) -> Result<(), AgentError> {
        if !self.prompt_template.contains(FUNCTION_SLOT) {
            return Err(AgentError::MissingSlot(self.id.to_string()));
        }
        Ok(())
    }
}

/// Read-only after startup; shared by all workers.
#[derive(Debug, Default)]
pub struct AgentRegistry {
    specs: BTreeMap<AgentId, AgentSpec>,
}

const BUILTIN_PROMPT_FILES: [&str; 10] = [
    include_str!("../prompts/static_analyzer.md"),
    include_str!("../prompts/behavior_analyzer.md"),
    include_str!("../prompts/memory_layout.md"),
    include_str!("../prompts/format_string.md"),
    include_str!("../prompts/file_permission.md"),
    include_str!("../prompts/auth_flow.md"),
    include_str!("../prompts/crypto_config.md"),
    include_str!("../prompts/concurrency_analyzer.md"),
    include_str!("../prompts/error_handling.md"),
    include_str!("../prompts/code_injection.md"),
];

impl AgentRegistry {
    pub fn new() -> AgentRegistry {
        AgentRegistry::default()
    }

    /// The ten shipped agents.
    pub fn builtin() -> AgentRegistry {
        let mut registry = AgentRegistry::new();
        for text in BUILTIN_PROMPT_FILES {
            let spec = parse_agent_file(text, None).expect("builtin prompt file parses");
            registry.register(spec).expect("builtin ids are unique");
        }
        registry
    }

    pub fn register(&mut self, spec: AgentSpec) -> Result<AgentId, AgentError> {
        spec.check()?;
        if self.specs.contains_key(&spec.id) {
            return Err(AgentError::DuplicateId(spec.id.to_string()));
        }
        let id = spec.id.clone();
        self.specs.insert(id.clone(), spec);
        Ok(id)
    }

    pub fn get(&self, id: &AgentId) -> Option<&AgentSpec> {
        self.specs.get(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &AgentId> {
        self.specs.keys()
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }
}

/// Load every `*.md` prompt file in a directory (sorted by file name).
pub fn load_agent_dir(dir: &Path) -> Result<Vec<AgentSpec>, AgentError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| AgentError::MalformedSpec {
            file: Some(dir.display().to_string()),
            detail: e.to_string(),
        })?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "md"))
        .collect();
    paths.sort();
    let mut specs = Vec::new();
    for path in paths {
        let text = std::fs::read_to_string(&path).map_err(|e| AgentError::MalformedSpec {
            file: Some(path.display().to_string()),
            detail: e.to_string(),
        })?;
        specs.push(parse_agent_file(&text, Some(&path.display().to_string()))?);
    }
    Ok(specs)
}

/// Parse one prompt file: `---` front matter (id, cwe_focus, trigger_hints,
/// role) followed by the template body.
pub fn parse_agent_file(text: &str, file: Option<&str>) -> Result<AgentSpec, AgentError> {
    let err = |detail: &str| AgentError::MalformedSpec {
        file: file.map(str::to_string),
        detail: detail.to_string(),
    };
    let rest = text.strip_prefix("---\n").ok_or_else(|| err("missing front matter"))?;
    let (header, body) = rest
        .split_once("\n---\n")
        .ok_or_else(|| err("unterminated front matter"))?;
    let mut id = None;
    let mut role = None;
    let mut cwe_focus = Vec::new();
    let mut trigger_hints = Vec::new();
    for line in header.lines() {
        let Some((key, value)) = line.split_once(':') else {
            return Err(err(&format!("front-matter line without key: {line:?}")));
        };
        let value = value.trim();
        match key.trim() {
            "id" => id = Some(value.to_string()),
            "role" => role = Some(value.to_string()),
            "cwe_focus" => {
                for part in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                    cwe_focus.push(
                        CweId::parse(part).map_err(|e| err(&e.to_string()))?,
                    );
                }
            }
            "trigger_hints" => {
                trigger_hints = value
                    .split('|')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .collect();
            }
            other => return Err(err(&format!("unknown front-matter key {other:?}"))),
        }
    }
    let spec = AgentSpec {
        id: AgentId::new(id.ok_or_else(|| err("missing id"))?),
        role_text: role.ok_or_else(|| err("missing role"))?,
        cwe_focus,
        trigger_hints,
        prompt_template: body.trim_start_matches('\n').to_string(),
    };
    spec.check()?;
    Ok(spec)
}

/// Render an agent's prompt for one function (plus optional context).
pub fn render_prompt(spec: &AgentSpec, fun: &NumberedFunction, ctx: Option<&ContextBundle>) -> String {
    let context_text = ctx
        .map(|c| context::render_for_prompt(c, crate::graph::resolve_target_function(c, fun).as_deref()))
        .unwrap_or_default();
    spec.prompt_template
        .replace(FUNCTION_SLOT, &render_numbered(fun))
        .replace(CONTEXT_SLOT, &context_text)
}

/// Run one agent against a function: render, call the gateway once, parse.
/// An empty report list is a legal outcome.
pub fn run_agent(
    registry: &AgentRegistry,
    id: &AgentId,
    fun: &NumberedFunction,
    ctx: Option<&ContextBundle>,
    gw: &dyn CompleteApi,
) -> Result<Vec<AgentReport>, AgentError> {
    let spec = registry
        .get(id)
        .ok_or_else(|| AgentError::UnknownAgent(id.to_string()))?;
    let prompt = render_prompt(spec, fun, ctx);
    let response = gw
        .complete(&GatewayRequest::new(id.clone(), prompt))
        .map_err(|source| AgentError::Gateway {
            agent: id.to_string(),
            source,
        })?;
    let mut reports = parse_agent_output(&response.text, id, fun.line_count())?;
    for r in &mut reports {
        r.sample_id = fun.sample_id.clone();
    }
    Ok(reports)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFinding {
    cwe: String,
    span: RawSpan,
    description: String,
    #[serde(default)]
    evidence: Vec<RawEvidence>,
    #[serde(default)]
    trigger_hint: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpan {
    start: u32,
    end: u32,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvidence {
    line_no: u32,
    snippet: String,
}

/// One bounded repair: strip markdown fences, then trim everything outside
/// the outermost structural brackets. Returns `None` when no bracket pair
/// survives.
pub fn repair_raw(raw: &str) -> Option<String> {
    let mut text = raw.trim();
    if text.starts_with("```") {
        if let Some((_, rest)) = text.split_once('\n') {
            text = rest;
        }
    }
    let text = text.trim_end();
    let text = text.strip_suffix("```").unwrap_or(text);
    let start = text.find(['[', '{'])?;
    let end = text.rfind([']', '}'])?;
    if end < start {
        return None;
    }
    Some(text[start..=end].to_string())
}

/// Parse one agent response into reports.
///
/// Accepts only the agent output contract. Spans that start inside the
/// function but run past its end are clamped; spans entirely outside it are
/// an error, as are evidence lines beyond the function.
pub fn parse_agent_output(
    raw: &str,
    source_agent: &AgentId,
    fn_len: u32,
) -> Result<Vec<AgentReport>, AgentError> {
    let parse_err = |detail: String| AgentError::ParseFailureAfterRepair {
        agent: source_agent.to_string(),
        detail,
    };
    if raw.trim().is_empty() {
        return Err(parse_err("empty response".to_string()));
    }
    let findings: Vec<RawFinding> = match serde_json::from_str(raw) {
        Ok(v) => v,
        Err(first_err) => {
            let repaired = repair_raw(raw).ok_or_else(|| parse_err(first_err.to_string()))?;
            serde_json::from_str(&repaired).map_err(|e| parse_err(e.to_string()))?
        }
    };
    let mut reports = Vec::with_capacity(findings.len());
    for (index, f) in findings.into_iter().enumerate() {
        let cwe = CweId::parse(&f.cwe).map_err(|e| parse_err(e.to_string()))?;
        if f.span.start > f.span.end || f.span.start == 0 {
            return Err(parse_err(format!(
                "finding {index}: invalid span ({},{})",
                f.span.start, f.span.end
            )));
        }
        if f.span.start > fn_len {
            return Err(AgentError::SpanOutOfRange {
                agent: source_agent.to_string(),
                index,
                start: f.span.start,
                end: f.span.end,
                fn_len,
            });
        }
        let span = Span::new(f.span.start, f.span.end.min(fn_len)).expect("checked order");
        let mut evidence = Vec::with_capacity(f.evidence.len());
        for e in f.evidence {
            if e.line_no == 0 || e.line_no > fn_len {
                return Err(AgentError::SpanOutOfRange {
                    agent: source_agent.to_string(),
                    index,
                    start: e.line_no,
                    end: e.line_no,
                    fn_len,
                });
            }
            evidence.push(EvidenceItem {
                line_no: e.line_no,
                snippet: e.snippet,
            });
        }
        reports.push(AgentReport {
            sample_id: String::new(),
            source_agent: source_agent.clone(),
            cwe,
            span,
            description: f.description,
            evidence,
            trigger_hint: f.trigger_hint,
        });
    }
    Ok(reports)
}
