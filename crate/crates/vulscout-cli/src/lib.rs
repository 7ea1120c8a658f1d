//! Command implementations behind the `vulscout` binary.
//!
//! `detect` runs the pipeline over a dataset or a single source file and
//! persists one report per sample plus a run manifest; `evaluate` scores a
//! report directory against a pair dataset; `context-extract` scrapes a
//! lightweight context bundle from a source tree. All outputs are canonical
//! JSON written atomically, so repeated runs are byte-identical.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde_json::json;

use vulscout::agents::AgentRegistry;
use vulscout::canon;
use vulscout::context::{extract_lightweight, load_context, save_context, SourceFile};
use vulscout::eval::{
    confusion_from, cwe_score, load_pairs, metrics, pair_metrics, pair_outcomes, ConfusionCounts,
};
use vulscout::gateway::{Gateway, LiveConfig, MockScript};
use vulscout::hypothesis::StageMode;
use vulscout::model::{AgentId, CodeSample, ContextBundle, Label, LanguageHint};
use vulscout::orchestrator::{detect_batch, DispatcherMode, PipelineConfig};
use vulscout::schema::{validate_schema, ArtifactKind};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FATAL: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendChoice {
    Live,
    Replay,
    Mock,
}

impl BackendChoice {
    pub fn parse(s: &str) -> Option<BackendChoice> {
        match s {
            "live" => Some(BackendChoice::Live),
            "replay" => Some(BackendChoice::Replay),
            "mock" => Some(BackendChoice::Mock),
            _ => None,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            BackendChoice::Live => "live",
            BackendChoice::Replay => "replay",
            BackendChoice::Mock => "mock",
        }
    }
}

#[derive(Debug, Clone)]
pub struct DetectArgs {
    pub input: PathBuf,
    pub backend: BackendChoice,
    pub workers: Option<usize>,
    pub context: Option<PathBuf>,
    pub mock_script: Option<PathBuf>,
    pub dispatcher: Option<DispatcherMode>,
    pub stage_mode: StageMode,
    pub out: PathBuf,
    pub cache: Option<PathBuf>,
    pub model: String,
    pub config_file: Option<PathBuf>,
    pub agents_enabled: Option<Vec<String>>,
}

/// File-based run configuration. Flags override file values.
#[derive(Debug, Default, Clone)]
pub struct FileConfig {
    pub dispatcher_mode: Option<DispatcherMode>,
    pub workers: Option<usize>,
    pub agents_enabled: Option<Vec<String>>,
}

/// Parse the run config file: keys `dispatcher.mode`, `pipeline.workers`,
/// `agents.enabled`.
pub fn load_config_file(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("config file {}", path.display()))?;
    let v: serde_json::Value = serde_json::from_str(&text)
        .with_context(|| format!("config file {} is not valid JSON", path.display()))?;
    let mut cfg = FileConfig::default();
    if let Some(mode) = v.pointer("/dispatcher/mode") {
        cfg.dispatcher_mode = Some(parse_dispatcher(
            mode.as_str().ok_or_else(|| anyhow!("dispatcher.mode must be a string"))?,
        )?);
    }
    if let Some(workers) = v.pointer("/pipeline/workers") {
        let n = workers
            .as_u64()
            .ok_or_else(|| anyhow!("pipeline.workers must be a non-negative integer"))?;
        cfg.workers = Some(n as usize);
    }
    if let Some(enabled) = v.pointer("/agents/enabled") {
        let list = enabled
            .as_array()
            .ok_or_else(|| anyhow!("agents.enabled must be an array"))?;
        let mut ids = Vec::new();
        for item in list {
            ids.push(
                item.as_str()
                    .ok_or_else(|| anyhow!("agents.enabled entries must be strings"))?
                    .to_string(),
            );
        }
        cfg.agents_enabled = Some(ids);
    }
    Ok(cfg)
}

pub fn parse_dispatcher(s: &str) -> Result<DispatcherMode> {
    match s {
        "lexical" => Ok(DispatcherMode::Lexical),
        "llm" => Ok(DispatcherMode::Llm),
        other => bail!("unknown dispatcher mode {other:?} (expected lexical or llm)"),
    }
}

pub fn parse_stage_mode(s: &str) -> Result<StageMode> {
    match s {
        "llm" => Ok(StageMode::Llm),
        "graph" => Ok(StageMode::Graph),
        other => bail!("unknown stage mode {other:?} (expected llm or graph)"),
    }
}

/// Keep report file names stable and filesystem-safe.
pub fn sanitize_id(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') { c } else { '_' })
        .collect()
}

/// Load detection inputs: a `.jsonl` dataset (one canonical code_sample per
/// line), a single `.json` sample document, or a raw source file.
pub fn load_samples(input: &Path) -> Result<Vec<CodeSample>> {
    let ext = input.extension().and_then(|e| e.to_str()).unwrap_or("");
    let text = std::fs::read_to_string(input)
        .with_context(|| format!("reading input {}", input.display()))?;
    match ext {
        "jsonl" => {
            let mut samples = Vec::new();
            for (idx, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                validate_schema(line, ArtifactKind::CodeSample)
                    .with_context(|| format!("{}:{}", input.display(), idx + 1))?;
                samples.push(serde_json::from_str(line)?);
            }
            if samples.is_empty() {
                bail!("dataset {} contains no samples", input.display());
            }
            Ok(samples)
        }
        "json" => {
            validate_schema(&text, ArtifactKind::CodeSample)
                .with_context(|| input.display().to_string())?;
            Ok(vec![serde_json::from_str(&text)?])
        }
        _ => {
            let id = input
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("sample")
                .to_string();
            let language_hint = match ext {
                "c" | "h" => LanguageHint::C,
                "cc" | "cpp" | "cxx" | "hpp" => LanguageHint::Cpp,
                "py" => LanguageHint::Python,
                _ => LanguageHint::Other,
            };
            Ok(vec![CodeSample {
                id,
                source: text,
                pair_id: None,
                label: Label::Unknown,
                project: String::new(),
                cwe_truth: None,
                language_hint,
            }])
        }
    }
}

/// Run detection over the inputs; returns the process exit code.
pub fn cmd_detect(args: &DetectArgs) -> Result<i32> {
    let file_cfg = match &args.config_file {
        Some(path) => load_config_file(path)?,
        None => FileConfig::default(),
    };
    let samples = load_samples(&args.input)?;
    let ctx: Option<ContextBundle> = match &args.context {
        Some(path) => Some(load_context(path).map_err(|e| anyhow!("context: {e}"))?),
        None => None,
    };

    let cache_dir = args.cache.clone().unwrap_or_else(|| args.out.join("cache"));
    let gateway = match args.backend {
        BackendChoice::Mock => {
            let script_path = args
                .mock_script
                .as_ref()
                .ok_or_else(|| anyhow!("mock backend requires --mock-script"))?;
            let script = MockScript::load(script_path).map_err(|e| anyhow!("mock script: {e}"))?;
            Gateway::mock(script, Some(cache_dir))
        }
        BackendChoice::Replay => Gateway::replay(cache_dir, args.model.clone()),
        BackendChoice::Live => {
            let live = LiveConfig::from_env().map_err(|e| anyhow!("live backend: {e}"))?;
            Gateway::live(live, Some(cache_dir))
        }
    };

    let agents_enabled: Option<BTreeSet<AgentId>> = args
        .agents_enabled
        .clone()
        .or(file_cfg.agents_enabled)
        .map(|ids| ids.into_iter().map(AgentId::new).collect());
    let config = PipelineConfig {
        dispatcher: args.dispatcher.or(file_cfg.dispatcher_mode).unwrap_or(DispatcherMode::Lexical),
        stage_mode: args.stage_mode,
        workers: args.workers.or(file_cfg.workers).unwrap_or(8),
        agents_enabled,
        max_paths: vulscout::hypothesis::DEFAULT_MAX_PATHS,
    };
    if config.stage_mode == StageMode::Graph && ctx.is_none() {
        bail!("graph mode requires --context");
    }

    let registry = AgentRegistry::builtin();
    let runs = detect_batch(&samples, ctx.as_ref(), &config, &registry, &gateway);

    let reports_dir = args.out.join("reports");
    std::fs::create_dir_all(&reports_dir)
        .with_context(|| format!("creating {}", reports_dir.display()))?;

    let mut skipped: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut errors: BTreeMap<String, String> = BTreeMap::new();
    let mut per_sample = serde_json::Map::new();
    let mut completed = 0usize;
    for (sample_id, outcome) in &runs {
        match outcome {
            Ok(run) => {
                let path = reports_dir.join(format!("{}.report", sanitize_id(sample_id)));
                canon::write_canonical(&path, &run.report)
                    .with_context(|| format!("writing {}", path.display()))?;
                if !run.skipped_agents.is_empty() {
                    skipped.insert(
                        sample_id.clone(),
                        run.skipped_agents.iter().map(|a| a.to_string()).collect(),
                    );
                }
                per_sample.insert(
                    sample_id.clone(),
                    json!({
                        "calls": run.report.call_count,
                        "output_tokens": run.report.output_tokens,
                    }),
                );
                completed += 1;
            }
            Err(e) => {
                errors.insert(sample_id.clone(), e.to_string());
            }
        }
    }

    let accounting = gateway.accounting();
    let averages = accounting.averages(completed);
    let manifest = json!({
        "schema_version": 1,
        "backend": args.backend.name(),
        "dispatcher": match config.dispatcher { DispatcherMode::Lexical => "lexical", DispatcherMode::Llm => "llm" },
        "stage_mode": match config.stage_mode { StageMode::Llm => "llm", StageMode::Graph => "graph" },
        "workers": config.workers,
        "model_id": gateway.model_id(),
        "samples_total": samples.len(),
        "samples_completed": completed,
        "skipped_agents": skipped,
        "errors": errors,
        "accounting": {
            "calls": accounting.calls,
            "output_tokens": accounting.output_tokens,
            "mean_calls_per_sample": averages.as_ref().map(|(c, _)| c.render_2dp()),
            "mean_output_tokens_per_sample": averages.as_ref().map(|(_, t)| t.render_2dp()),
            "per_sample": per_sample,
        },
    });
    let manifest_bytes = canon::to_canonical_bytes(&manifest)?;
    canon::write_atomic(&args.out.join("manifest.run"), &manifest_bytes)?;

    if !errors.is_empty() || !skipped.is_empty() {
        return Ok(EXIT_PARTIAL);
    }
    Ok(EXIT_OK)
}

#[derive(Debug, Clone)]
pub struct EvaluateArgs {
    pub reports: PathBuf,
    pub dataset: PathBuf,
    pub assume_benign: bool,
    pub out: Option<PathBuf>,
}

/// Score a detection run against a pair dataset. Returns the rendered
/// markdown report.
pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<String> {
    let samples = load_pairs(&args.dataset).map_err(|e| anyhow!("dataset: {e}"))?;

    let mut predictions: BTreeMap<String, bool> = BTreeMap::new();
    for sample in &samples {
        let path = args.reports.join(format!("{}.report", sanitize_id(&sample.id)));
        match std::fs::read_to_string(&path) {
            Ok(text) => {
                validate_schema(&text, ArtifactKind::DetectionReport)
                    .with_context(|| path.display().to_string())?;
                let report: vulscout::model::DetectionReport = serde_json::from_str(&text)?;
                predictions.insert(sample.id.clone(), report.vulnerable);
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                if !args.assume_benign {
                    bail!(
                        "missing report for sample {} ({}); pass --assume-benign to treat it as a benign prediction",
                        sample.id,
                        path.display()
                    );
                }
                predictions.insert(sample.id.clone(), false);
            }
            Err(e) => return Err(e).context(path.display().to_string()),
        }
    }

    let outcomes: Vec<(Label, bool)> = samples
        .iter()
        .map(|s| (s.label, predictions[&s.id]))
        .collect();
    let confusion = confusion_from(&outcomes);
    let overall = metrics(&confusion);
    let (pairs, total_pairs) = pair_outcomes(&samples, &predictions);
    let pair_stats = pair_metrics(&pairs, total_pairs);

    let cwe_results: Vec<(vulscout::model::CweId, bool)> = samples
        .iter()
        .filter_map(|s| {
            let truth = s.cwe_truth.as_ref()?;
            let correct = predictions[&s.id] == (s.label == Label::Vulnerable);
            Some(truth.iter().map(move |c| (c.clone(), correct)))
        })
        .flatten()
        .collect();
    let scores = cwe_score(&cwe_results);
    let mut cwe_table = serde_json::Map::new();
    for (cwe, score) in &scores {
        let total = cwe_results.iter().filter(|(c, _)| c == cwe).count();
        let correct = cwe_results.iter().filter(|(c, ok)| c == cwe && *ok).count();
        cwe_table.insert(
            cwe.as_str().to_string(),
            json!({
                "correct": correct,
                "wrong": total - correct,
                "total": total,
                "score": score.render_2dp(),
            }),
        );
    }

    let render = |r: &Option<vulscout::rational::Rational>| r.as_ref().map(|x| x.render_2dp());
    let machine = json!({
        "overall": {
            "counts": { "tp": confusion.tp, "tn": confusion.tn, "fp": confusion.fp, "fn": confusion.fn_ },
            "acc": render(&overall.acc),
            "precision": render(&overall.precision),
            "recall": render(&overall.recall),
            "f1": render(&overall.f1),
            "fpr": render(&overall.fpr),
        },
        "pairs": {
            "total": total_pairs,
            "scored": pairs.len(),
            "pc": pair_stats.as_ref().map(|p| p.pc.render_2dp()),
            "pr": pair_stats.as_ref().map(|p| p.pr.render_2dp()),
            "pr_bothflagged": pair_stats.as_ref().map(|p| p.pr_bothflagged.render_2dp()),
            "vps": pair_stats.as_ref().map(|p| p.vps.render_2dp()),
        },
        "per_cwe": cwe_table,
    });

    let markdown = render_markdown(&confusion, &machine);
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out).with_context(|| out.display().to_string())?;
        canon::write_canonical(&out.join("metrics.json"), &machine)?;
        canon::write_atomic(&out.join("metrics.md"), markdown.as_bytes())?;
    }
    Ok(markdown)
}

fn cell(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        serde_json::Value::Null => "n/a".to_string(),
        other => other.to_string(),
    }
}

fn render_markdown(confusion: &ConfusionCounts, machine: &serde_json::Value) -> String {
    let overall = &machine["overall"];
    let pairs = &machine["pairs"];
    let mut out = String::new();
    out.push_str("# Detection metrics\n\n");
    out.push_str("## Overall\n\n");
    out.push_str("| metric | value |\n|---|---|\n");
    for key in ["acc", "f1", "fpr", "precision", "recall"] {
        out.push_str(&format!("| {key} | {} |\n", cell(&overall[key])));
    }
    out.push_str(&format!(
        "| counts | tp={} tn={} fp={} fn={} |\n",
        confusion.tp, confusion.tn, confusion.fp, confusion.fn_
    ));
    out.push_str("\n## Pair-wise\n\n");
    out.push_str("| metric | value |\n|---|---|\n");
    out.push_str(&format!("| pairs | {} |\n", cell(&pairs["total"])));
    for key in ["pc", "pr", "pr_bothflagged", "vps"] {
        out.push_str(&format!("| {key} | {} |\n", cell(&pairs[key])));
    }
    out.push_str("\n## Per-CWE\n\n");
    out.push_str("| cwe | correct | wrong | total | score |\n|---|---|---|---|---|\n");
    if let Some(per_cwe) = machine["per_cwe"].as_object() {
        for (cwe, row) in per_cwe {
            out.push_str(&format!(
                "| {cwe} | {} | {} | {} | {} |\n",
                cell(&row["correct"]),
                cell(&row["wrong"]),
                cell(&row["total"]),
                cell(&row["score"]),
            ));
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct ContextExtractArgs {
    pub source_dir: PathBuf,
    pub out: PathBuf,
    pub target: Option<String>,
}

const SOURCE_EXTENSIONS: [&str; 8] = ["c", "h", "cc", "cpp", "cxx", "hpp", "hh", "py"];

/// Scrape a lightweight context bundle from every source file in a tree.
pub fn cmd_context_extract(args: &ContextExtractArgs) -> Result<()> {
    if !args.source_dir.is_dir() {
        bail!("{} is not a readable directory", args.source_dir.display());
    }
    let mut files = Vec::new();
    let mut paths: Vec<PathBuf> = walkdir::WalkDir::new(&args.source_dir)
        .into_iter()
        .collect::<std::result::Result<Vec<_>, _>>()
        .with_context(|| format!("walking {}", args.source_dir.display()))?
        .into_iter()
        .filter(|e| e.file_type().is_file())
        .map(|e| e.into_path())
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|ext| SOURCE_EXTENSIONS.contains(&ext))
        })
        .collect();
    paths.sort();
    for path in paths {
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("reading {}", path.display()))?;
        files.push(SourceFile {
            name: path.display().to_string(),
            text,
        });
    }
    let target = args.target.clone().unwrap_or_else(|| {
        args.source_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "project".to_string())
    });
    let bundle = extract_lightweight(&files, &target);
    save_context(&bundle, &args.out).map_err(|e| anyhow!("writing bundle: {e}"))?;
    Ok(())
}
