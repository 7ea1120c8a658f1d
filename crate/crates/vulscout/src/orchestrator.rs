//! Pipeline orchestration: cue extraction, agent dispatch, and the
//! four-phase run for each sample.
//!
//! Dispatch activates a minimal-but-sufficient agent set: a baseline trio
//! always runs, and each extracted cue pulls in its specialized agent. The
//! dispatcher itself has two modes — a versioned lexical pattern table
//! (deterministic, zero calls) and a model call. Batches fan out over a
//! bounded worker pool; everything within one sample runs sequentially so
//! call accounting stays exact.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use regex::Regex;
use serde::Deserialize;
use thiserror::Error;

use crate::agents::{run_agent, AgentError, AgentRegistry};
use crate::aggregate::{aggregate, AggregateError};
use crate::gateway::{CompleteApi, Gateway, GatewayError, GatewayRequest, SampleTally};
use crate::hypothesis::{plan, HypothesisError, StageMode, DEFAULT_MAX_PATHS};
use crate::model::{
    agent_ids, AgentId, CodeSample, ContextBundle, Decision, DetectionReport, NumberedFunction,
};
use crate::preprocess::{number_lines, render_numbered, PreprocessError};
use crate::validate::{prune_hypothesis, verify_path, PruneOutcome, ValidateError};

/// Semantic cues the dispatcher can extract. Closed vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Cue {
    MemoryOp,
    FileIo,
    ConcurrencyPrimitive,
    CryptoApi,
    PrivilegeLogic,
    FormatString,
    DynamicExec,
    ErrorHandlingGap,
    SqlConstruction,
    PathConstruction,
}

impl Cue {
    pub const ALL: [Cue; 10] = [
        Cue::MemoryOp,
        Cue::FileIo,
        Cue::ConcurrencyPrimitive,
        Cue::CryptoApi,
        Cue::PrivilegeLogic,
        Cue::FormatString,
        Cue::DynamicExec,
        Cue::ErrorHandlingGap,
        Cue::SqlConstruction,
        Cue::PathConstruction,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Cue::MemoryOp => "memory_op",
            Cue::FileIo => "file_io",
            Cue::ConcurrencyPrimitive => "concurrency_primitive",
            Cue::CryptoApi => "crypto_api",
            Cue::PrivilegeLogic => "privilege_logic",
            Cue::FormatString => "format_string",
            Cue::DynamicExec => "dynamic_exec",
            Cue::ErrorHandlingGap => "error_handling_gap",
            Cue::SqlConstruction => "sql_construction",
            Cue::PathConstruction => "path_construction",
        }
    }

    pub fn parse(name: &str) -> Option<Cue> {
        Cue::ALL.iter().find(|c| c.name() == name).copied()
    }

    /// The specialized agent this cue activates.
    pub fn agent(&self) -> AgentId {
        let id = match self {
            Cue::MemoryOp => agent_ids::MEMORY_LAYOUT,
            Cue::FileIo => agent_ids::FILE_PERMISSION,
            Cue::ConcurrencyPrimitive => agent_ids::CONCURRENCY_ANALYZER,
            Cue::CryptoApi => agent_ids::CRYPTO_CONFIG,
            Cue::PrivilegeLogic => agent_ids::AUTH_FLOW,
            Cue::FormatString => agent_ids::FORMAT_STRING,
            Cue::DynamicExec => agent_ids::CODE_INJECTION,
            Cue::ErrorHandlingGap => agent_ids::ERROR_HANDLING,
            Cue::SqlConstruction => agent_ids::CODE_INJECTION,
            Cue::PathConstruction => agent_ids::FILE_PERMISSION,
        };
        AgentId::new(id)
    }
}

pub type CueSet = BTreeSet<Cue>;

/// The agents activated for one sample. Always contains the baseline trio.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentSet(BTreeSet<AgentId>);

impl AgentSet {
    pub fn contains(&self, id: &AgentId) -> bool {
        self.0.contains(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &AgentId> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_subset(&self, other: &AgentSet) -> bool {
        self.0.is_subset(&other.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DispatcherMode {
    Lexical,
    Llm,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("preprocess: {0}")]
    Preprocess(#[from] PreprocessError),
    #[error("dispatch: dispatcher output invalid: {0}")]
    DispatcherOutputInvalid(String),
    #[error("dispatch: {0}")]
    DispatchGateway(#[from] GatewayError),
    #[error("phase I: baseline agent {agent} failed: {source}")]
    BaselineAgent {
        agent: String,
        #[source]
        source: AgentError,
    },
    #[error("phase I aggregation: {0}")]
    Aggregate(#[from] AggregateError),
    #[error("phase II planning for finding {finding}: {source}")]
    Plan {
        finding: String,
        #[source]
        source: HypothesisError,
    },
    #[error("phase III pruning for hypothesis {hypothesis}: {source}")]
    Prune {
        hypothesis: String,
        #[source]
        source: ValidateError,
    },
    #[error("phase IV verification for hypothesis {hypothesis}: {source}")]
    Verify {
        hypothesis: String,
        #[source]
        source: ValidateError,
    },
}

/// Lexical cue table: versioned regex patterns per cue, shipped as data.
#[derive(Debug, Deserialize)]
struct CueTable {
    version: u32,
    cues: BTreeMap<String, Vec<String>>,
}

struct CompiledCueTable {
    version: u32,
    patterns: Vec<(Cue, Vec<Regex>)>,
}

fn cue_table() -> &'static CompiledCueTable {
    static TABLE: OnceLock<CompiledCueTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        let raw: CueTable =
            serde_json::from_str(include_str!("../data/cues.json")).expect("cue table parses");
        let patterns = raw
            .cues
            .iter()
            .map(|(name, pats)| {
                let cue = Cue::parse(name).expect("cue table uses the closed vocabulary");
                let regexes = pats
                    .iter()
                    .map(|p| Regex::new(p).expect("cue pattern compiles"))
                    .collect();
                (cue, regexes)
            })
            .collect();
        CompiledCueTable {
            version: raw.version,
            patterns,
        }
    })
}

/// Version of the shipped lexical cue table.
pub fn cue_table_version() -> u32 {
    cue_table().version
}

thread_local! {
    // Each worker thread scans with its own regex handles: a cloned Regex
    // shares the compiled program but gets a fresh cache pool, which keeps
    // the hot matching path off the shared-pool mutex.
    static THREAD_CUE_TABLE: Vec<(Cue, Vec<Regex>)> = cue_table()
        .patterns
        .iter()
        .map(|(cue, regexes)| (*cue, regexes.to_vec()))
        .collect();
}

const DISPATCHER_PROMPT: &str = include_str!("../prompts/pipeline/dispatcher.md");

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DispatcherOutput {
    cues: Vec<String>,
}

/// Extract semantic cues from a numbered function.
pub fn extract_cues(
    fun: &NumberedFunction,
    mode: DispatcherMode,
    gw: &dyn CompleteApi,
) -> Result<CueSet, PipelineError> {
    match mode {
        DispatcherMode::Lexical => THREAD_CUE_TABLE.with(|table| {
            let mut cues = CueSet::new();
            for line in &fun.lines {
                for (cue, regexes) in table {
                    if cues.contains(cue) {
                        continue;
                    }
                    if regexes.iter().any(|re| re.is_match(&line.text)) {
                        cues.insert(*cue);
                    }
                }
            }
            Ok(cues)
        }),
        DispatcherMode::Llm => {
            let prompt = DISPATCHER_PROMPT.replace("{function_code}", &render_numbered(fun));
            let response = gw.complete(&GatewayRequest::new(agent_ids::DISPATCHER, prompt))?;
            let parsed: DispatcherOutput = crate::hypothesis::parse_with_repair(&response.text)
                .map_err(PipelineError::DispatcherOutputInvalid)?;
            let mut cues = CueSet::new();
            for name in parsed.cues {
                let cue = Cue::parse(&name).ok_or_else(|| {
                    PipelineError::DispatcherOutputInvalid(format!("unknown cue {name:?}"))
                })?;
                cues.insert(cue);
            }
            Ok(cues)
        }
    }
}

/// Map cues to the activated agent set: the baseline trio plus one agent per
/// cue. No agent is activated without a justifying cue, trio aside.
pub fn route(cues: &CueSet) -> AgentSet {
    let mut agents: BTreeSet<AgentId> = agent_ids::BASELINE_TRIO
        .iter()
        .map(|id| AgentId::new(*id))
        .collect();
    for cue in cues {
        agents.insert(cue.agent());
    }
    AgentSet(agents)
}

/// Per-run pipeline settings.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub dispatcher: DispatcherMode,
    /// Mode for the planner, pruner, and verifier stages.
    pub stage_mode: StageMode,
    pub workers: usize,
    /// Allow-list restricting which specialized agents may run. The baseline
    /// trio always runs.
    pub agents_enabled: Option<BTreeSet<AgentId>>,
    pub max_paths: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            dispatcher: DispatcherMode::Lexical,
            stage_mode: StageMode::Llm,
            workers: 8,
            agents_enabled: None,
            max_paths: DEFAULT_MAX_PATHS,
        }
    }
}

/// Result of one sample's pipeline run.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub report: DetectionReport,
    /// Specialized agents skipped after a failure (recall loss accepted).
    pub skipped_agents: Vec<AgentId>,
}

/// Run the four-phase pipeline for one sample.
pub fn run_pipeline(
    sample: &CodeSample,
    ctx: Option<&ContextBundle>,
    config: &PipelineConfig,
    registry: &AgentRegistry,
    gateway: &Gateway,
) -> Result<PipelineRun, PipelineError> {
    let tally = SampleTally::new(gateway);
    let fun = number_lines(sample)?;

    // Phase I: dispatch, detection agents, aggregation.
    let cues = extract_cues(&fun, config.dispatcher, &tally)?;
    let activated = route(&cues);
    let trio: BTreeSet<AgentId> = agent_ids::BASELINE_TRIO
        .iter()
        .map(|id| AgentId::new(*id))
        .collect();

    let mut reports = Vec::new();
    let mut skipped = Vec::new();
    for agent in activated.iter() {
        let is_baseline = trio.contains(agent);
        if !is_baseline {
            if let Some(enabled) = &config.agents_enabled {
                if !enabled.contains(agent) {
                    continue;
                }
            }
        }
        match run_agent(registry, agent, &fun, ctx, &tally) {
            Ok(mut found) => reports.append(&mut found),
            Err(source) if is_baseline => {
                // The trio is the safety net; losing a member aborts the sample.
                return Err(PipelineError::BaselineAgent {
                    agent: agent.to_string(),
                    source,
                });
            }
            Err(_) => skipped.push(agent.clone()),
        }
    }
    let findings = aggregate(&reports)?;

    // Phase II: one hypothesis per finding.
    let mut hypotheses = Vec::with_capacity(findings.len());
    for finding in &findings {
        let h = plan(finding, &fun, ctx, config.stage_mode, &tally, config.max_paths).map_err(
            |source| PipelineError::Plan {
                finding: finding.id.clone(),
                source,
            },
        )?;
        hypotheses.push(h);
    }

    // Phase III: assumption pruning.
    let mut verdicts = Vec::new();
    let mut reported_hypotheses = Vec::with_capacity(hypotheses.len());
    let mut survivors = Vec::new();
    for h in hypotheses {
        let outcome = prune_hypothesis(&h, &fun, ctx, config.stage_mode, &tally).map_err(
            |source| PipelineError::Prune {
                hypothesis: h.finding_ref.clone(),
                source,
            },
        )?;
        match outcome {
            PruneOutcome::Kept(kept) => {
                reported_hypotheses.push(kept.clone());
                survivors.push(kept);
            }
            PruneOutcome::Rejected {
                hypothesis,
                rationale,
                evidence,
            } => {
                verdicts.push(crate::model::Verdict {
                    hypothesis_ref: hypothesis.finding_ref.clone(),
                    cwe: hypothesis.cwe.clone(),
                    decision: Decision::Discarded,
                    rationale,
                    evidence,
                });
                reported_hypotheses.push(hypothesis);
            }
        }
    }

    // Phase IV: path verification for the survivors.
    for h in &survivors {
        let verdict = verify_path(h, &fun, ctx, config.stage_mode, &tally).map_err(|source| {
            PipelineError::Verify {
                hypothesis: h.finding_ref.clone(),
                source,
            }
        })?;
        verdicts.push(verdict);
    }
    verdicts.sort_by(|a, b| a.hypothesis_ref.cmp(&b.hypothesis_ref));
    reported_hypotheses.sort_by(|a, b| a.finding_ref.cmp(&b.finding_ref));

    let mut valid_cwes: Vec<_> = verdicts
        .iter()
        .filter(|v| v.decision == Decision::Retained)
        .map(|v| v.cwe.clone())
        .collect();
    valid_cwes.sort();
    valid_cwes.dedup();

    let accounting = tally.accounting();
    Ok(PipelineRun {
        report: DetectionReport {
            sample_id: sample.id.clone(),
            vulnerable: !valid_cwes.is_empty(),
            valid_cwes,
            verdicts,
            hypotheses: reported_hypotheses,
            call_count: accounting.calls,
            output_tokens: accounting.output_tokens,
        },
        skipped_agents: skipped,
    })
}

/// Detect a whole batch. Samples fan out over `config.workers` threads when
/// the `parallel` feature is enabled; order of results matches input order.
pub fn detect_batch(
    samples: &[CodeSample],
    ctx: Option<&ContextBundle>,
    config: &PipelineConfig,
    registry: &AgentRegistry,
    gateway: &Gateway,
) -> Vec<(String, Result<PipelineRun, PipelineError>)> {
    #[cfg(feature = "parallel")]
    {
        if config.workers > 1 {
            return detect_batch_parallel(samples, ctx, config, registry, gateway);
        }
    }
    detect_batch_sequential(samples, ctx, config, registry, gateway)
}

/// Single-threaded batch driver; the fallback when `parallel` is disabled.
pub fn detect_batch_sequential(
    samples: &[CodeSample],
    ctx: Option<&ContextBundle>,
    config: &PipelineConfig,
    registry: &AgentRegistry,
    gateway: &Gateway,
) -> Vec<(String, Result<PipelineRun, PipelineError>)> {
    samples
        .iter()
        .map(|s| (s.id.clone(), run_pipeline(s, ctx, config, registry, gateway)))
        .collect()
}

/// Rayon batch driver with a dedicated pool of `config.workers` threads.
#[cfg(feature = "parallel")]
pub fn detect_batch_parallel(
    samples: &[CodeSample],
    ctx: Option<&ContextBundle>,
    config: &PipelineConfig,
    registry: &AgentRegistry,
    gateway: &Gateway,
) -> Vec<(String, Result<PipelineRun, PipelineError>)> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.max(1))
        .build()
        .expect("worker pool builds");
    pool.install(|| {
        samples
            .par_iter()
            .map(|s| (s.id.clone(), run_pipeline(s, ctx, config, registry, gateway)))
            .collect()
    })
}
