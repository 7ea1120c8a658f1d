//! Program-context ingestion.
//!
//! Context bundles normally come from an external static-analysis export that
//! has been transcoded into the canonical context schema. For corpora without
//! exports, [`extract_lightweight`] scrapes a best-effort bundle straight from
//! source text: defined functions, call edges, and imports.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use crate::canon;
use crate::model::{CallEdge, ContextBundle, NumberedLine, CONTEXT_SCHEMA_VERSION};
use crate::schema::{validate_schema, ArtifactKind, SchemaError};

#[derive(Debug, Error)]
pub enum ContextError {
    #[error("io failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

/// Load and validate a context bundle file.
pub fn load_context(path: &Path) -> Result<ContextBundle, ContextError> {
    let text = std::fs::read_to_string(path).map_err(|source| ContextError::Io {
        path: path.display().to_string(),
        source,
    })?;
    validate_schema(&text, ArtifactKind::ContextBundle)?;
    let bundle: ContextBundle =
        serde_json::from_str(&text).map_err(|e| ContextError::Schema(SchemaError::Malformed(e)))?;
    Ok(bundle)
}

/// Write a bundle in canonical form.
pub fn save_context(bundle: &ContextBundle, path: &Path) -> Result<(), ContextError> {
    canon::write_canonical(path, bundle).map_err(|source| ContextError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// One input file for lightweight extraction.
#[derive(Debug, Clone)]
pub struct SourceFile {
    pub name: String,
    pub text: String,
}

const C_KEYWORDS: [&str; 16] = [
    "if", "else", "while", "for", "switch", "return", "sizeof", "case", "do", "goto", "break",
    "continue", "struct", "union", "enum", "typedef",
];

fn def_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    // Top-level `name(args) {` with an optional return type in front.
    RE.get_or_init(|| {
        Regex::new(r"^[A-Za-z_][A-Za-z0-9_\s\*]*?\b([A-Za-z_][A-Za-z0-9_]*)\s*\(([^;{}()]*)\)\s*\{?\s*$")
            .unwrap()
    })
}

fn call_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b([A-Za-z_][A-Za-z0-9_]*)\s*\(").unwrap())
}

fn include_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"^\s*#\s*include\s*[<"]([^>"]+)[>"]"#).unwrap())
}

fn import_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(?:import|from)\s+([A-Za-z_][A-Za-z0-9_.]*)").unwrap())
}

struct ExtractedFn {
    name: String,
    lines: Vec<String>,
}

/// Find top-level C-like function definitions by brace matching.
fn extract_functions(text: &str) -> Vec<ExtractedFn> {
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i];
        let Some(caps) = def_regex().captures(line.trim_end()) else {
            i += 1;
            continue;
        };
        let name = caps[1].to_string();
        if C_KEYWORDS.contains(&name.as_str()) {
            i += 1;
            continue;
        }
        // The opening brace may sit on this line or the next.
        let mut body_end = None;
        let mut depth: i32 = 0;
        let mut seen_open = false;
        let mut j = i;
        while j < lines.len() {
            for ch in lines[j].chars() {
                match ch {
                    '{' => {
                        depth += 1;
                        seen_open = true;
                    }
                    '}' => depth -= 1,
                    _ => {}
                }
            }
            if seen_open && depth <= 0 {
                body_end = Some(j);
                break;
            }
            if !seen_open && j > i {
                break; // no brace after the candidate signature
            }
            j += 1;
        }
        if let Some(end) = body_end {
            out.push(ExtractedFn {
                name,
                lines: lines[i..=end].iter().map(|s| s.to_string()).collect(),
            });
            i = end + 1;
        } else {
            i += 1;
        }
    }
    out
}

/// Build a minimal context bundle straight from source files.
///
/// Best effort by design: an empty bundle is a legal outcome, and a call edge
/// is only ever emitted for a callee token that literally occurs in the
/// caller's body.
pub fn extract_lightweight(files: &[SourceFile], target: &str) -> ContextBundle {
    let mut bundle = ContextBundle::empty();
    bundle.schema_version = CONTEXT_SCHEMA_VERSION;
    bundle
        .project_meta
        .insert("project".to_string(), target.to_string());

    let mut imports = Vec::new();
    let mut functions: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for file in files {
        for line in file.text.lines() {
            if let Some(caps) = include_regex().captures(line) {
                imports.push(caps[1].to_string());
            } else if let Some(caps) = import_regex().captures(line) {
                imports.push(caps[1].to_string());
            }
        }
        for f in extract_functions(&file.text) {
            functions.entry(f.name).or_insert(f.lines);
        }
    }
    imports.sort();
    imports.dedup();
    bundle.imports = imports;

    for (name, lines) in &functions {
        bundle.functions.insert(
            name.clone(),
            lines
                .iter()
                .enumerate()
                .map(|(i, text)| NumberedLine {
                    line_no: (i + 1) as u32,
                    text: text.clone(),
                })
                .collect(),
        );
    }

    let mut externals = Vec::new();
    let mut call_edges = Vec::new();
    for (caller, lines) in &functions {
        for (idx, line) in lines.iter().enumerate() {
            let line_no = (idx + 1) as u32;
            for caps in call_regex().captures_iter(line) {
                let callee = caps[1].to_string();
                if C_KEYWORDS.contains(&callee.as_str()) {
                    continue;
                }
                if idx == 0 && callee == *caller {
                    continue; // the definition itself
                }
                if !functions.contains_key(&callee) {
                    externals.push(callee.clone());
                }
                let edge = CallEdge {
                    caller: caller.clone(),
                    callee,
                    call_site_line: line_no,
                };
                if !call_edges.contains(&edge) {
                    call_edges.push(edge);
                }
            }
        }
    }
    externals.sort();
    externals.dedup();
    bundle.externals = externals;
    bundle.call_edges = call_edges;
    bundle
}

/// Render the context slice that accompanies validation prompts: the target
/// function's callers, the bodies of callees it reaches, imports, and facts.
pub fn render_for_prompt(ctx: &ContextBundle, target_function: Option<&str>) -> String {
    let mut sections = Vec::new();
    if let Some(project) = ctx.project_meta.get("project") {
        sections.push(format!("project: {project}"));
    }
    if !ctx.imports.is_empty() {
        sections.push(format!("imports: {}", ctx.imports.join(", ")));
    }
    if let Some(target) = target_function {
        let callers: Vec<String> = ctx
            .call_edges
            .iter()
            .filter(|e| e.callee == target)
            .map(|e| format!("{} (L{})", e.caller, e.call_site_line))
            .collect();
        if !callers.is_empty() {
            sections.push(format!("callers of {target}: {}", callers.join(", ")));
        }
        let mut rendered: Vec<&str> = Vec::new();
        for edge in &ctx.call_edges {
            if edge.caller == target && !rendered.contains(&edge.callee.as_str()) {
                rendered.push(&edge.callee);
            } else if edge.callee == target && !rendered.contains(&edge.caller.as_str()) {
                rendered.push(&edge.caller);
            }
        }
        for name in rendered {
            if let Some(body) = ctx.functions.get(name) {
                let text: Vec<String> = body
                    .iter()
                    .map(|l| format!("L{}: {}", l.line_no, l.text))
                    .collect();
                sections.push(format!("function {name}:\n{}", text.join("\n")));
            }
        }
    }
    let facts: Vec<String> = ctx
        .project_meta
        .iter()
        .filter(|(k, _)| k.starts_with("fact:"))
        .map(|(k, v)| format!("{k} = {v}"))
        .collect();
    if !facts.is_empty() {
        sections.push(format!("facts:\n{}", facts.join("\n")));
    }
    sections.join("\n\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FlowPoint;

    #[test]
    fn round_trips_through_disk() {
        let mut bundle = ContextBundle::empty();
        bundle.functions.insert(
            "A".to_string(),
            vec![NumberedLine { line_no: 1, text: "void A() {".to_string() }],
        );
        bundle.externals = vec!["C".to_string()];
        bundle.call_edges.push(CallEdge {
            caller: "A".to_string(),
            callee: "C".to_string(),
            call_site_line: 1,
        });
        bundle.data_edges.push(crate::model::FlowEdge {
            from: FlowPoint { function: "A".to_string(), line: 1 },
            to: FlowPoint { function: "C".to_string(), line: 1 },
        });
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ctx.json");
        save_context(&bundle, &path).unwrap();
        let loaded = load_context(&path).unwrap();
        assert_eq!(loaded, bundle);
        // byte-exact re-save
        let first = std::fs::read(&path).unwrap();
        save_context(&loaded, &path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
    }

    #[test]
    fn empty_export_is_valid() {
        let mut bundle = ContextBundle::empty();
        bundle.functions.insert("A".to_string(), vec![]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ctx.json");
        save_context(&bundle, &path).unwrap();
        let loaded = load_context(&path).unwrap();
        assert!(loaded.call_edges.is_empty());
    }

    #[test]
    fn absent_function_without_external_flag_is_rejected() {
        let mut bundle = ContextBundle::empty();
        bundle.functions.insert("A".to_string(), vec![]);
        bundle.call_edges.push(CallEdge {
            caller: "A".to_string(),
            callee: "ghost".to_string(),
            call_site_line: 1,
        });
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ctx.json");
        // bypass save-time validation by writing raw canonical bytes
        canon::write_canonical(&path, &bundle).unwrap();
        let err = load_context(&path).unwrap_err();
        assert!(matches!(err, ContextError::Schema(SchemaError::Violations(_))), "{err:?}");
    }

    #[test]
    fn extracts_single_call_as_external() {
        let files = [SourceFile {
            name: "a.c".to_string(),
            text: "void f(int x) {\n  g(x);\n}\n".to_string(),
        }];
        let bundle = extract_lightweight(&files, "proj");
        assert!(bundle.functions.contains_key("f"));
        assert_eq!(bundle.externals, vec!["g".to_string()]);
        assert_eq!(
            bundle.call_edges,
            vec![CallEdge { caller: "f".to_string(), callee: "g".to_string(), call_site_line: 2 }]
        );
    }

    #[test]
    fn scrapes_includes() {
        let files = [SourceFile {
            name: "a.c".to_string(),
            text: "#include <stdio.h>\n#include \"local.h\"\nvoid f() {\n}\n".to_string(),
        }];
        let bundle = extract_lightweight(&files, "proj");
        assert!(bundle.imports.contains(&"stdio.h".to_string()));
        assert!(bundle.imports.contains(&"local.h".to_string()));
    }

    #[test]
    fn cross_file_call_is_not_external() {
        let files = [
            SourceFile {
                name: "a.c".to_string(),
                text: "int f(int x) {\n  return g(x) + 1;\n}\n".to_string(),
            },
            SourceFile {
                name: "b.c".to_string(),
                text: "int g(int y) {\n  return y * 2;\n}\n".to_string(),
            },
        ];
        let bundle = extract_lightweight(&files, "proj");
        assert!(bundle.functions.contains_key("f") && bundle.functions.contains_key("g"));
        assert!(bundle.externals.is_empty());
        assert_eq!(
            bundle.call_edges,
            vec![CallEdge { caller: "f".to_string(), callee: "g".to_string(), call_site_line: 2 }]
        );
    }

    #[test]
    fn extraction_never_fabricates_edges() {
        let files = [SourceFile {
            name: "a.c".to_string(),
            text: "void f() {\n  alpha();\n  beta(1, 2);\n}\nvoid h() {\n  f();\n}\n".to_string(),
        }];
        let bundle = extract_lightweight(&files, "proj");
        for edge in &bundle.call_edges {
            let body = &bundle.functions[&edge.caller];
            let joined: String = body.iter().map(|l| l.text.as_str()).collect::<Vec<_>>().join("\n");
            assert!(joined.contains(&edge.callee), "edge {edge:?} not grounded in body");
        }
    }

    #[test]
    fn produced_bundles_pass_schema_validation() {
        let files = [SourceFile {
            name: "a.c".to_string(),
            text: "#include <string.h>\nstatic int helper(char *s) {\n  if (strlen(s) > 4) return 1;\n  return 0;\n}\nvoid f(char *s) {\n  if (helper(s)) {\n    return;\n  }\n  strcpy(dst, s);\n}\n".to_string(),
        }];
        let bundle = extract_lightweight(&files, "proj");
        let doc = canon::to_canonical_string(&bundle).unwrap();
        validate_schema(&doc, ArtifactKind::ContextBundle).unwrap();
    }
}
