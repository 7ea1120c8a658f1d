//! Two-stage hypothesis validation.
//!
//! Assumption pruning judges each precondition against program context and
//! rejects a hypothesis only when a contradicted assumption breaks its
//! trigger path. Path verification then takes the survivors and discards a
//! hypothesis only when protective checks dominate every feasible route from
//! an attacker-controllable source to the sink. Uncertainty always resolves
//! toward retaining: suppression requires evidence, suspicion does not.

use std::collections::BTreeSet;

use serde::Deserialize;
use thiserror::Error;

use crate::canon;
use crate::context::render_for_prompt;
use crate::gateway::{CompleteApi, GatewayError, GatewayRequest};
use crate::graph::{resolve_target_function, CtxGraph, Fact, NodeRef};
use crate::hypothesis::{parse_with_repair, StageMode};
use crate::model::{
    agent_ids, Assumption, AssumptionStatus, ContextBundle, Decision, EvidenceItem, Hypothesis,
    NumberedFunction, Verdict,
};
use crate::preprocess::render_numbered;

#[derive(Debug, Error)]
pub enum ValidateError {
    #[error("graph validation requires a context bundle")]
    ContextMissing,
    #[error("sink {0} not present in context graph")]
    SinkNotFound(String),
    #[error("assumption pruner output invalid: {0}")]
    PrunerOutputInvalid(String),
    #[error("path validator output invalid: {0}")]
    ValidatorOutputInvalid(String),
    #[error("gateway failure during validation: {0}")]
    Gateway(#[from] GatewayError),
}

const PRUNER_PROMPT: &str = include_str!("../prompts/pipeline/assumption_pruner.md");
const VALIDATOR_PROMPT: &str = include_str!("../prompts/pipeline/final_validator.md");

/// Judge one assumption. Returns the new status and supporting evidence.
///
/// Already-judged assumptions pass through unchanged.
pub fn prune_assumption(
    a: &Assumption,
    fun: &NumberedFunction,
    ctx: Option<&ContextBundle>,
    mode: StageMode,
    gw: &dyn CompleteApi,
) -> Result<(AssumptionStatus, Vec<EvidenceItem>), ValidateError> {
    if a.status != AssumptionStatus::Plausible {
        return Ok((a.status, a.evidence.clone()));
    }
    match mode {
        StageMode::Graph => prune_assumption_graph(a, fun, ctx),
        StageMode::Llm => prune_assumption_llm(a, fun, ctx, gw),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PrunerOutput {
    status: String,
    #[serde(default)]
    evidence: Vec<EvidenceItem>,
}

fn prune_assumption_llm(
    a: &Assumption,
    fun: &NumberedFunction,
    ctx: Option<&ContextBundle>,
    gw: &dyn CompleteApi,
) -> Result<(AssumptionStatus, Vec<EvidenceItem>), ValidateError> {
    let context_text = ctx
        .map(|c| render_for_prompt(c, resolve_target_function(c, fun).as_deref()))
        .unwrap_or_default();
    let prompt = PRUNER_PROMPT
        .replace("{assumption}", &a.text)
        .replace("{function_code}", &render_numbered(fun))
        .replace("{context}", &context_text);
    let response = gw.complete(&GatewayRequest::new(agent_ids::ASSUMPTION_PRUNER, prompt))?;
    let parsed: PrunerOutput =
        parse_with_repair(&response.text).map_err(ValidateError::PrunerOutputInvalid)?;
    let status = match parsed.status.as_str() {
        "valid" => AssumptionStatus::Valid,
        "contradicted" => AssumptionStatus::Contradicted,
        // The pruner prompt's "unknown" maps onto plausible.
        "plausible" | "unknown" => AssumptionStatus::Plausible,
        other => {
            return Err(ValidateError::PrunerOutputInvalid(format!(
                "unknown status {other:?}"
            )))
        }
    };
    if status == AssumptionStatus::Contradicted && parsed.evidence.is_empty() {
        return Err(ValidateError::PrunerOutputInvalid(
            "contradicted without citing evidence".to_string(),
        ));
    }
    Ok((status, parsed.evidence))
}

fn fact_matches(tag: &str, assumption_text: &str) -> bool {
    assumption_text.to_lowercase().contains(&tag.to_lowercase())
}

fn prune_assumption_graph(
    a: &Assumption,
    fun: &NumberedFunction,
    ctx: Option<&ContextBundle>,
) -> Result<(AssumptionStatus, Vec<EvidenceItem>), ValidateError> {
    let ctx = ctx.ok_or(ValidateError::ContextMissing)?;
    let g = CtxGraph::from_bundle(ctx);
    let target = resolve_target_function(ctx, fun);

    // Where the assumption is anchored: its first cited line, in the target
    // function.
    let anchor = a
        .evidence
        .first()
        .zip(target.as_deref())
        .map(|(e, t)| NodeRef::new(t, e.line_no));

    if let Some(anchor) = anchor.filter(|n| g.contains(n)) {
        // Contradiction via rejecting checks: some route feeds the anchor and
        // every such route passes a check that bails out before reaching it.
        let rejecting: BTreeSet<NodeRef> = g
            .nodes()
            .filter(|n| **n != anchor && g.is_rejecting_guard(n))
            .cloned()
            .collect();
        let entries: Vec<NodeRef> = g
            .entry_nodes()
            .into_iter()
            .filter(|n| *n != anchor)
            .collect();
        let any_route = entries.iter().any(|e| g.reaches(e, &anchor));
        if any_route && !rejecting.is_empty() {
            let all_covered = entries
                .iter()
                .filter(|e| g.reaches(e, &anchor))
                .all(|e| !g.reaches_avoiding(e, &anchor, &rejecting));
            if all_covered {
                let cited: Vec<EvidenceItem> = rejecting
                    .iter()
                    .filter(|r| g.reaches(r, &anchor))
                    .map(|r| EvidenceItem {
                        line_no: r.line,
                        snippet: format!("{}: {}", r.function, g.line_text(r).unwrap_or("").trim()),
                    })
                    .collect();
                if !cited.is_empty() {
                    return Ok((AssumptionStatus::Contradicted, cited));
                }
            }
        }

        // Contradiction via value origin: every direct data edge into the
        // anchor starts at a node whose recorded fact refutes the assumption.
        let data_preds: Vec<NodeRef> = g
            .predecessors(&anchor)
            .filter(|(_, dep)| *dep == crate::model::DepKind::Data)
            .map(|(n, _)| n.clone())
            .collect();
        if !data_preds.is_empty() {
            let all_refuted = data_preds.iter().all(|p| {
                matches!(g.fact(p), Some(Fact::Refutes(tag)) if fact_matches(tag, &a.text))
            });
            if all_refuted {
                let cited = data_preds
                    .iter()
                    .map(|p| EvidenceItem {
                        line_no: p.line,
                        snippet: format!(
                            "{}: {}",
                            p.function,
                            g.line_text(p).unwrap_or("recorded fact").trim()
                        ),
                    })
                    .collect();
                return Ok((AssumptionStatus::Contradicted, cited));
            }
        }
    }

    // Confirmation from recorded facts anywhere in the bundle.
    let confirming: Vec<EvidenceItem> = g
        .facts()
        .filter_map(|(n, f)| match f {
            Fact::Confirms(tag) if fact_matches(tag, &a.text) => Some(EvidenceItem {
                line_no: n.line,
                snippet: format!("{}: {}", n.function, g.line_text(n).unwrap_or("recorded fact").trim()),
            }),
            _ => None,
        })
        .collect();
    if !confirming.is_empty() {
        return Ok((AssumptionStatus::Valid, confirming));
    }

    Ok((AssumptionStatus::Plausible, Vec::new()))
}

/// The outcome of assumption pruning for one hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub enum PruneOutcome {
    /// Survivors carry only valid and plausible assumptions.
    Kept(Hypothesis),
    /// A contradicted assumption broke the trigger path. The hypothesis is
    /// returned with every assumption judged, for reporting.
    Rejected {
        hypothesis: Hypothesis,
        rationale: String,
        evidence: Vec<EvidenceItem>,
    },
}

/// Does a contradicted assumption take the trigger path down with it?
///
/// Yes when it is anchored on a node of the path, or when it is the
/// hypothesis's sole precondition.
fn breaks_path(h: &Hypothesis, judged: &Assumption, original_anchor: Option<u32>) -> bool {
    if h.assumptions.len() == 1 {
        return true;
    }
    let anchor = original_anchor.or_else(|| judged.evidence.first().map(|e| e.line_no));
    match anchor {
        Some(line) => h.path.nodes.iter().any(|n| n.line_no == line),
        None => false,
    }
}

/// Phase-III pruning: judge every assumption, then keep or reject.
pub fn prune_hypothesis(
    h: &Hypothesis,
    fun: &NumberedFunction,
    ctx: Option<&ContextBundle>,
    mode: StageMode,
    gw: &dyn CompleteApi,
) -> Result<PruneOutcome, ValidateError> {
    let mut judged_all = Vec::with_capacity(h.assumptions.len());
    for a in &h.assumptions {
        let original_anchor = a.evidence.first().map(|e| e.line_no);
        let (status, evidence) = prune_assumption(a, fun, ctx, mode, gw)?;
        let mut judged = a.clone();
        judged.status = status;
        if !evidence.is_empty() {
            judged.evidence = evidence;
        }
        judged.breaks_path = status == AssumptionStatus::Contradicted
            && breaks_path(h, &judged, original_anchor);
        judged_all.push(judged);
    }

    if let Some(breaking) = judged_all
        .iter()
        .find(|a| a.status == AssumptionStatus::Contradicted && a.breaks_path)
    {
        let mut rejected = h.clone();
        let rationale = format!(
            "assumption {} is contradicted by program context and the trigger path depends on it: {}",
            breaking.id, breaking.text
        );
        let evidence = breaking.evidence.clone();
        rejected.assumptions = judged_all;
        rejected.unconditional = rejected.assumptions.is_empty();
        return Ok(PruneOutcome::Rejected {
            hypothesis: rejected,
            rationale,
            evidence,
        });
    }

    let mut kept = h.clone();
    kept.assumptions = judged_all
        .into_iter()
        .filter(|a| a.status != AssumptionStatus::Contradicted)
        .collect();
    kept.unconditional = kept.assumptions.is_empty();
    Ok(PruneOutcome::Kept(kept))
}

/// Do `guards` dominate every route from `sources` to `sink`?
///
/// True iff every simple path from any source to the sink passes through at
/// least one guard node strictly before the sink; equivalently, the guards
/// minus the sink form a source-to-sink vertex cut. Vacuously true when no
/// source reaches the sink at all.
pub fn dominates(
    g: &CtxGraph,
    guards: &BTreeSet<NodeRef>,
    sources: &[NodeRef],
    sink: &NodeRef,
) -> Result<bool, ValidateError> {
    if !g.contains(sink) {
        return Err(ValidateError::SinkNotFound(sink.id()));
    }
    let mut banned = guards.clone();
    banned.remove(sink);
    for source in sources {
        if !g.contains(source) {
            continue;
        }
        if source == sink {
            // The trivial path has nothing strictly before the sink.
            return Ok(false);
        }
        if g.reaches_avoiding(source, sink, &banned) {
            return Ok(false);
        }
    }
    Ok(true)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ValidatorOutput {
    decision: String,
    rationale: String,
    #[serde(default)]
    evidence: Vec<EvidenceItem>,
}

/// Phase-IV verification of a pruned hypothesis.
pub fn verify_path(
    h: &Hypothesis,
    fun: &NumberedFunction,
    ctx: Option<&ContextBundle>,
    mode: StageMode,
    gw: &dyn CompleteApi,
) -> Result<Verdict, ValidateError> {
    match mode {
        StageMode::Llm => verify_path_llm(h, fun, ctx, gw),
        StageMode::Graph => verify_path_graph(h, fun, ctx),
    }
}

fn verify_path_llm(
    h: &Hypothesis,
    fun: &NumberedFunction,
    ctx: Option<&ContextBundle>,
    gw: &dyn CompleteApi,
) -> Result<Verdict, ValidateError> {
    let context_text = ctx
        .map(|c| render_for_prompt(c, resolve_target_function(c, fun).as_deref()))
        .unwrap_or_default();
    let prompt = VALIDATOR_PROMPT
        .replace("{hypothesis}", &canon::to_canonical_string(h).expect("hypothesis serializes"))
        .replace("{function_code}", &render_numbered(fun))
        .replace("{context}", &context_text);
    let response = gw.complete(&GatewayRequest::new(agent_ids::FINAL_VALIDATOR, prompt))?;
    let parsed: ValidatorOutput =
        parse_with_repair(&response.text).map_err(ValidateError::ValidatorOutputInvalid)?;
    let decision = match parsed.decision.as_str() {
        "retained" => Decision::Retained,
        "discarded" => Decision::Discarded,
        other => {
            return Err(ValidateError::ValidatorOutputInvalid(format!(
                "unknown decision {other:?}"
            )))
        }
    };
    if decision == Decision::Discarded && parsed.rationale.is_empty() {
        return Err(ValidateError::ValidatorOutputInvalid(
            "discarded without rationale".to_string(),
        ));
    }
    Ok(Verdict {
        hypothesis_ref: h.finding_ref.clone(),
        cwe: h.cwe.clone(),
        decision,
        rationale: parsed.rationale,
        evidence: parsed.evidence,
    })
}

fn retained(h: &Hypothesis, rationale: String, evidence: Vec<EvidenceItem>) -> Verdict {
    Verdict {
        hypothesis_ref: h.finding_ref.clone(),
        cwe: h.cwe.clone(),
        decision: Decision::Retained,
        rationale,
        evidence,
    }
}

fn verify_path_graph(
    h: &Hypothesis,
    fun: &NumberedFunction,
    ctx: Option<&ContextBundle>,
) -> Result<Verdict, ValidateError> {
    let ctx = ctx.ok_or(ValidateError::ContextMissing)?;
    let g = CtxGraph::from_bundle(ctx);
    let Some(target) = resolve_target_function(ctx, fun) else {
        return Ok(retained(
            h,
            "context does not identify the function under test; forwarded without suppression".to_string(),
            Vec::new(),
        ));
    };
    let sink = NodeRef::new(&target, h.path.sink_line);
    if !g.contains(&sink) {
        return Ok(retained(
            h,
            format!("sink {} is not in the context graph; forwarded without suppression", sink.id()),
            Vec::new(),
        ));
    }
    let guards = g.guard_nodes();
    if guards.is_empty() {
        return Ok(retained(
            h,
            "no protective checks exist in the supplied context".to_string(),
            Vec::new(),
        ));
    }
    let sources: Vec<NodeRef> = g.source_nodes(None).into_iter().map(|(n, _)| n).collect();
    if sources.is_empty() {
        return Ok(retained(
            h,
            "no attacker-controllable sources identified; forwarded without suppression".to_string(),
            Vec::new(),
        ));
    }
    if dominates(&g, &guards, &sources, &sink)? {
        // Cite the guards that actually sit between some source and the sink.
        let evidence: Vec<EvidenceItem> = guards
            .iter()
            .filter(|guard| *guard != &sink && g.reaches(guard, &sink))
            .filter(|guard| sources.iter().any(|s| g.reaches(s, guard)))
            .map(|guard| EvidenceItem {
                line_no: guard.line,
                snippet: format!("{}: {}", guard.function, g.line_text(guard).unwrap_or("").trim()),
            })
            .collect();
        Ok(Verdict {
            hypothesis_ref: h.finding_ref.clone(),
            cwe: h.cwe.clone(),
            decision: Decision::Discarded,
            rationale: "every feasible route from an attacker-controllable source passes a protective check before the sink".to_string(),
            evidence,
        })
    } else {
        Ok(retained(
            h,
            "at least one feasible route reaches the sink without a preceding protective check".to_string(),
            Vec::new(),
        ))
    }
}
