//! Trigger planning: turn an aggregated finding into a structured hypothesis.
//!
//! Two interchangeable planners sit behind [`plan`]. The llm planner renders
//! a prompt and parses the structured reply; the graph planner walks the
//! context graph deterministically and doubles as an oracle in tests. Either
//! way the contract is the same: if a sink exists, a path is produced, and
//! guards met along the way become assumptions rather than reasons to stop.

use serde::Deserialize;
use thiserror::Error;

use crate::agents::repair_raw;
use crate::canon;
use crate::context::render_for_prompt;
use crate::gateway::{CompleteApi, GatewayError, GatewayRequest};
use crate::graph::{resolve_target_function, CtxGraph, NodeRef};
use crate::model::{
    agent_ids, AggregatedFinding, Assumption, ContextBundle, CweId, DepKind, EvidenceItem,
    Hypothesis, NodeKind, NumberedFunction, PathEdge, PathNode, SourceClass, TriggerPath,
};
use crate::preprocess::render_numbered;
use crate::schema::{validate_value, ArtifactKind};

/// Whether a pipeline stage runs through the model or the context graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageMode {
    Llm,
    Graph,
}

pub const DEFAULT_MAX_PATHS: usize = 64;

#[derive(Debug, Error)]
pub enum HypothesisError {
    #[error("graph planning requires a context bundle")]
    ContextRequired,
    #[error("no graph node inside finding span for {finding}: {detail}")]
    NoSinkInSpan { finding: String, detail: String },
    #[error("sink {0} not present in context graph")]
    SinkNotFound(String),
    #[error("planner output invalid for {finding}: {detail}")]
    PlannerOutputInvalid { finding: String, detail: String },
    #[error("gateway failure during planning: {0}")]
    Gateway(#[from] GatewayError),
}

const PLANNER_PROMPT: &str = include_str!("../prompts/pipeline/trigger_planner.md");

/// Construct the hypothesis for one finding.
pub fn plan(
    finding: &AggregatedFinding,
    fun: &NumberedFunction,
    ctx: Option<&ContextBundle>,
    mode: StageMode,
    gw: &dyn CompleteApi,
    max_paths: usize,
) -> Result<Hypothesis, HypothesisError> {
    match mode {
        StageMode::Graph => plan_graph(finding, fun, ctx, max_paths),
        StageMode::Llm => plan_llm(finding, fun, ctx, gw),
    }
}

fn guard_assumption(index: usize, node: &NodeRef, text: Option<&str>) -> Assumption {
    let quoted = text.map(|t| format!(" `{}`", t.trim())).unwrap_or_default();
    let mut a = Assumption::plausible(
        format!("A{}", index),
        format!("check at {}{} passes or is bypassable on this route", node.id(), quoted),
    );
    a.evidence = vec![EvidenceItem {
        line_no: node.line,
        snippet: text.unwrap_or("").to_string(),
    }];
    a
}

fn path_from_nodes(
    g: &CtxGraph,
    walk: &[NodeRef],
    source_class: SourceClass,
) -> (TriggerPath, Vec<Assumption>) {
    let last = walk.len() - 1;
    let mut nodes = Vec::with_capacity(walk.len());
    let mut assumptions = Vec::new();
    for (i, n) in walk.iter().enumerate() {
        let kind = if i == 0 {
            NodeKind::Source
        } else if i == last {
            NodeKind::Sink
        } else if g.is_guard(n) {
            NodeKind::Guard
        } else {
            NodeKind::Transform
        };
        if kind == NodeKind::Guard {
            assumptions.push(guard_assumption(assumptions.len() + 1, n, g.line_text(n)));
        }
        nodes.push(PathNode {
            node_id: n.id(),
            line_no: n.line,
            kind,
        });
    }
    let edges = walk
        .windows(2)
        .map(|w| PathEdge {
            from: w[0].id(),
            to: w[1].id(),
            dep: g.edge_kind(&w[0], &w[1]).unwrap_or(DepKind::Control),
        })
        .collect();
    let sink_line = walk[last].line;
    (
        TriggerPath {
            nodes,
            edges,
            source_class,
            sink_line,
        },
        assumptions,
    )
}

fn plan_graph(
    finding: &AggregatedFinding,
    fun: &NumberedFunction,
    ctx: Option<&ContextBundle>,
    _max_paths: usize,
) -> Result<Hypothesis, HypothesisError> {
    let ctx = ctx.ok_or(HypothesisError::ContextRequired)?;
    let g = CtxGraph::from_bundle(ctx);
    let target = resolve_target_function(ctx, fun).ok_or_else(|| HypothesisError::NoSinkInSpan {
        finding: finding.id.clone(),
        detail: "cannot resolve the function under test in the bundle".to_string(),
    })?;

    // Sink: the deepest graph node inside the finding span.
    let sink = g
        .nodes()
        .filter(|n| n.function == target && finding.span.contains(n.line))
        .max_by_key(|n| n.line)
        .cloned()
        .ok_or_else(|| HypothesisError::NoSinkInSpan {
            finding: finding.id.clone(),
            detail: format!(
                "no node of {} within lines {}..={}",
                target, finding.span.start, finding.span.end
            ),
        })?;

    let sources = g.source_nodes(None);
    let source_refs: Vec<NodeRef> = sources.iter().map(|(n, _)| n.clone()).collect();

    if let Some(walk) = g.shortest_path(&source_refs, &sink) {
        let class = sources
            .iter()
            .find(|(n, _)| *n == walk[0])
            .map(|(_, c)| *c)
            .unwrap_or(SourceClass::Other);
        if walk.len() == 1 {
            // Sink doubles as the only source; synthesize an entry hop so the
            // path keeps its source-then-sink shape.
            return Ok(synthetic_hypothesis(finding, &target, &sink, class));
        }
        let (path, assumptions) = path_from_nodes(&g, &walk, class);
        let unconditional = assumptions.is_empty();
        return Ok(Hypothesis {
            finding_ref: finding.id.clone(),
            cwe: finding.cwe.clone(),
            assumptions,
            unconditional,
            path,
        });
    }

    // No known source reaches the sink. The sink is syntactically present,
    // so a path is still constructed; reachability itself becomes the
    // hypothesis's precondition for downstream stages to judge.
    Ok(synthetic_hypothesis(finding, &target, &sink, SourceClass::Parameter))
}

fn synthetic_hypothesis(
    finding: &AggregatedFinding,
    target: &str,
    sink: &NodeRef,
    class: SourceClass,
) -> Hypothesis {
    let mut reach = Assumption::plausible(
        "A1",
        format!(
            "attacker-influenced data can reach the sink at {} line {}",
            target, sink.line
        ),
    );
    reach.evidence = vec![EvidenceItem {
        line_no: sink.line,
        snippet: String::new(),
    }];
    Hypothesis {
        finding_ref: finding.id.clone(),
        cwe: finding.cwe.clone(),
        assumptions: vec![reach],
        unconditional: false,
        path: TriggerPath {
            nodes: vec![
                PathNode {
                    node_id: format!("{target}:entry"),
                    line_no: 1,
                    kind: NodeKind::Source,
                },
                PathNode {
                    node_id: sink.id(),
                    line_no: sink.line,
                    kind: NodeKind::Sink,
                },
            ],
            edges: vec![PathEdge {
                from: format!("{target}:entry"),
                to: sink.id(),
                dep: DepKind::Control,
            }],
            source_class: class,
            sink_line: sink.line,
        },
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlannedAssumption {
    #[serde(default)]
    id: Option<String>,
    text: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlannerOutput {
    #[serde(default)]
    cwe: Option<String>,
    assumptions: Vec<PlannedAssumption>,
    path: serde_json::Value,
}

fn plan_llm(
    finding: &AggregatedFinding,
    fun: &NumberedFunction,
    ctx: Option<&ContextBundle>,
    gw: &dyn CompleteApi,
) -> Result<Hypothesis, HypothesisError> {
    let invalid = |detail: String| HypothesisError::PlannerOutputInvalid {
        finding: finding.id.clone(),
        detail,
    };
    let context_text = ctx
        .map(|c| render_for_prompt(c, resolve_target_function(c, fun).as_deref()))
        .unwrap_or_default();
    let prompt = PLANNER_PROMPT
        .replace("{finding}", &canon::to_canonical_string(finding).expect("finding serializes"))
        .replace("{function_code}", &render_numbered(fun))
        .replace("{context}", &context_text);
    let response = gw.complete(&GatewayRequest::new(agent_ids::TRIGGER_PLANNER, prompt))?;

    let parsed: PlannerOutput = parse_with_repair(&response.text).map_err(invalid)?;
    if let Some(raw_cwe) = &parsed.cwe {
        let cwe = CweId::parse(raw_cwe).map_err(|e| invalid(e.to_string()))?;
        if cwe != finding.cwe {
            return Err(invalid(format!(
                "planned CWE {} does not match finding CWE {}",
                cwe, finding.cwe
            )));
        }
    }
    validate_value(&parsed.path, ArtifactKind::TriggerPath)
        .map_err(|e| invalid(e.to_string()))?;
    let path: TriggerPath =
        serde_json::from_value(parsed.path).map_err(|e| invalid(e.to_string()))?;
    let assumptions: Vec<Assumption> = parsed
        .assumptions
        .into_iter()
        .enumerate()
        .map(|(i, a)| Assumption::plausible(a.id.unwrap_or_else(|| format!("A{}", i + 1)), a.text))
        .collect();
    let unconditional = assumptions.is_empty();
    Ok(Hypothesis {
        finding_ref: finding.id.clone(),
        cwe: finding.cwe.clone(),
        assumptions,
        unconditional,
        path,
    })
}

pub(crate) fn parse_with_repair<T: serde::de::DeserializeOwned>(raw: &str) -> Result<T, String> {
    match serde_json::from_str(raw) {
        Ok(v) => Ok(v),
        Err(first) => {
            let repaired = repair_raw(raw).ok_or_else(|| first.to_string())?;
            serde_json::from_str(&repaired).map_err(|e| e.to_string())
        }
    }
}

/// All simple trigger paths to a sink, bounded.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnumeration {
    pub paths: Vec<TriggerPath>,
    pub truncated: bool,
}

/// Enumerate every simple path from a matching source to `sink`.
///
/// Paths are produced in deterministic order (sources sorted by id, DFS over
/// sorted successors) and collection stops at `max_paths`, with the cut
/// reported via `truncated`.
pub fn enumerate_paths(
    ctx: &ContextBundle,
    source_filter: Option<SourceClass>,
    sink: (&str, u32),
    max_paths: usize,
) -> Result<PathEnumeration, HypothesisError> {
    let g = CtxGraph::from_bundle(ctx);
    let sink_ref = NodeRef::new(sink.0, sink.1);
    if !g.contains(&sink_ref) {
        return Err(HypothesisError::SinkNotFound(sink_ref.id()));
    }
    let mut sources = g.source_nodes(source_filter);
    sources.sort_by_key(|(n, _)| n.id());
    let mut out = Vec::new();
    let mut truncated = false;
    for (source, class) in sources {
        if source == sink_ref {
            continue;
        }
        if out.len() >= max_paths {
            truncated = true;
            break;
        }
        let (walks, cut) = g.simple_paths(&source, &sink_ref, max_paths - out.len());
        truncated |= cut;
        for walk in walks {
            let (path, _) = path_from_nodes(&g, &walk, class);
            out.push(path);
        }
    }
    Ok(PathEnumeration {
        paths: out,
        truncated,
    })
}
