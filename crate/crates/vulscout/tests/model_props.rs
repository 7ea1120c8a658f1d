//! Round-trip and schema properties over generated artifact instances.

use proptest::prelude::*;

use vulscout::canon;
use vulscout::model::*;
use vulscout::preprocess::{normalize_source, number_lines, strip_numbers};
use vulscout::schema::{validate_schema, ArtifactKind};

const MAX_LINE: u32 = 40;

fn cwe() -> impl Strategy<Value = CweId> {
    (1u32..5000).prop_map(|n| CweId::parse(&n.to_string()).unwrap())
}

fn agent_id() -> impl Strategy<Value = AgentId> {
    "[A-Z][a-z]{2,8}Agent".prop_map(AgentId::new)
}

fn span() -> impl Strategy<Value = Span> {
    (1..=MAX_LINE)
        .prop_flat_map(|s| (Just(s), s..=MAX_LINE))
        .prop_map(|(s, e)| Span::new(s, e).unwrap())
}

fn evidence() -> impl Strategy<Value = Vec<EvidenceItem>> {
    prop::collection::vec(
        ((1..=MAX_LINE), "[a-z _()\\[\\];]{0,16}"),
        0..4,
    )
    .prop_map(|items| {
        items
            .into_iter()
            .map(|(line_no, snippet)| EvidenceItem { line_no, snippet })
            .collect()
    })
}

fn label() -> impl Strategy<Value = Label> {
    prop_oneof![
        Just(Label::Vulnerable),
        Just(Label::Benign),
        Just(Label::Unknown)
    ]
}

fn language() -> impl Strategy<Value = LanguageHint> {
    prop_oneof![
        Just(LanguageHint::C),
        Just(LanguageHint::Cpp),
        Just(LanguageHint::Python),
        Just(LanguageHint::Other)
    ]
}

fn code_sample() -> impl Strategy<Value = CodeSample> {
    (
        "[a-z0-9-]{1,12}",
        "[ -~\\n]{1,80}",
        prop::option::of("[a-z0-9-]{1,8}"),
        label(),
        "[a-z]{0,10}",
        prop::option::of(prop::collection::vec(cwe(), 0..3)),
        language(),
    )
        .prop_map(|(id, source, pair_id, label, project, cwe_truth, language_hint)| CodeSample {
            id,
            source,
            pair_id,
            label,
            project,
            cwe_truth,
            language_hint,
        })
}

fn agent_report() -> impl Strategy<Value = AgentReport> {
    (
        "[a-z0-9-]{0,10}",
        agent_id(),
        cwe(),
        span(),
        "[a-z ]{0,30}",
        evidence(),
        prop::option::of("[a-z ]{0,20}"),
    )
        .prop_map(
            |(sample_id, source_agent, cwe, span, description, evidence, trigger_hint)| AgentReport {
                sample_id,
                source_agent,
                cwe,
                span,
                description,
                evidence,
                trigger_hint,
            },
        )
}

fn aggregated_finding() -> impl Strategy<Value = AggregatedFinding> {
    (
        cwe(),
        span(),
        "[a-z ]{0,30}",
        evidence(),
        prop::collection::btree_set(agent_id(), 1..4),
    )
        .prop_map(|(cwe, span, description, evidence, agents)| {
            let mut dedup = evidence;
            dedup.sort();
            dedup.dedup();
            AggregatedFinding {
                id: format!("{}-L{}-L{}", cwe.as_str(), span.start, span.end),
                cwe,
                span,
                description,
                evidence: dedup,
                source_agents: agents.into_iter().collect(),
            }
        })
}

fn assumption() -> impl Strategy<Value = Assumption> {
    (
        "[A-Z][0-9]{1,2}",
        "[a-z ]{1,30}",
        prop_oneof![
            Just(AssumptionStatus::Valid),
            Just(AssumptionStatus::Contradicted),
            Just(AssumptionStatus::Plausible)
        ],
        any::<bool>(),
        evidence(),
    )
        .prop_map(|(id, text, status, breaks, evidence)| Assumption {
            id,
            text,
            status,
            breaks_path: breaks && status == AssumptionStatus::Contradicted,
            evidence,
        })
}

fn trigger_path() -> impl Strategy<Value = TriggerPath> {
    (
        prop::collection::vec((1..=MAX_LINE, prop_oneof![Just(NodeKind::Transform), Just(NodeKind::Guard)]), 0..4),
        1..=MAX_LINE,
        1..=MAX_LINE,
        prop_oneof![
            Just(SourceClass::Parameter),
            Just(SourceClass::FileRead),
            Just(SourceClass::NetworkRead),
            Just(SourceClass::Deserialized),
            Just(SourceClass::Environment),
            Just(SourceClass::Other)
        ],
        any::<bool>(),
    )
        .prop_map(|(middle, first_line, last_line, source_class, data_dep)| {
            let mut nodes = vec![PathNode {
                node_id: "n0".to_string(),
                line_no: first_line,
                kind: NodeKind::Source,
            }];
            for (i, (line_no, kind)) in middle.into_iter().enumerate() {
                nodes.push(PathNode {
                    node_id: format!("n{}", i + 1),
                    line_no,
                    kind,
                });
            }
            nodes.push(PathNode {
                node_id: format!("n{}", nodes.len()),
                line_no: last_line,
                kind: NodeKind::Sink,
            });
            let dep = if data_dep { DepKind::Data } else { DepKind::Control };
            let edges = nodes
                .windows(2)
                .map(|w| PathEdge {
                    from: w[0].node_id.clone(),
                    to: w[1].node_id.clone(),
                    dep,
                })
                .collect();
            TriggerPath {
                nodes,
                edges,
                source_class,
                sink_line: last_line,
            }
        })
}

fn hypothesis() -> impl Strategy<Value = Hypothesis> {
    (
        cwe(),
        span(),
        prop::collection::vec(assumption(), 0..3),
        trigger_path(),
    )
        .prop_map(|(cwe, span, assumptions, path)| {
            let unconditional = assumptions.is_empty();
            Hypothesis {
                finding_ref: format!("{}-L{}-L{}", cwe.as_str(), span.start, span.end),
                cwe,
                assumptions,
                unconditional,
                path,
            }
        })
}

fn verdict() -> impl Strategy<Value = Verdict> {
    (cwe(), any::<bool>(), "[a-z ]{1,20}", evidence()).prop_map(
        |(cwe, retained, rationale, evidence)| Verdict {
            hypothesis_ref: format!("{}-L1-L2", cwe.as_str()),
            cwe,
            decision: if retained { Decision::Retained } else { Decision::Discarded },
            rationale,
            evidence,
        },
    )
}

fn detection_report() -> impl Strategy<Value = DetectionReport> {
    (
        "[a-z0-9-]{1,10}",
        prop::collection::vec(verdict(), 0..4),
        prop::collection::vec(hypothesis(), 0..3),
        0u64..10_000,
        0u64..100_000,
    )
        .prop_map(|(sample_id, verdicts, hypotheses, call_count, output_tokens)| {
            let mut valid_cwes: Vec<CweId> = verdicts
                .iter()
                .filter(|v| v.decision == Decision::Retained)
                .map(|v| v.cwe.clone())
                .collect();
            valid_cwes.sort();
            valid_cwes.dedup();
            DetectionReport {
                sample_id,
                vulnerable: !valid_cwes.is_empty(),
                valid_cwes,
                verdicts,
                hypotheses,
                call_count,
                output_tokens,
            }
        })
}

fn context_bundle() -> impl Strategy<Value = ContextBundle> {
    (
        prop::collection::btree_map(
            "[a-z]{1,6}",
            prop::collection::vec("[ -~]{0,20}", 1..5),
            1..4,
        ),
        prop::collection::vec("[a-z]{1,6}\\.h", 0..3),
        prop::collection::vec((0usize..3, 0usize..3, 1u32..4, 1u32..4), 0..5),
    )
        .prop_map(|(raw_fns, imports, raw_edges)| {
            let mut ctx = ContextBundle::empty();
            for (name, lines) in &raw_fns {
                ctx.functions.insert(
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
            ctx.imports = imports;
            let names: Vec<&String> = raw_fns.keys().collect();
            for (fi, ti, fl, tl) in raw_edges {
                let from_name = names[fi % names.len()].clone();
                let to_name = names[ti % names.len()].clone();
                let from_len = raw_fns[&from_name].len() as u32;
                let to_len = raw_fns[&to_name].len() as u32;
                ctx.data_edges.push(FlowEdge {
                    from: FlowPoint { function: from_name, line: 1 + (fl - 1) % from_len },
                    to: FlowPoint { function: to_name, line: 1 + (tl - 1) % to_len },
                });
            }
            ctx
        })
}

fn assert_round_trip<T>(value: &T, kind: ArtifactKind)
where
    T: serde::Serialize + serde::de::DeserializeOwned + PartialEq + std::fmt::Debug,
{
    let doc = canon::to_canonical_string(value).unwrap();
    validate_schema(&doc, kind).unwrap_or_else(|e| panic!("{kind:?} schema: {e}\n{doc}"));
    let parsed: T = serde_json::from_str(&doc).unwrap();
    assert_eq!(&parsed, value);
    let again = canon::to_canonical_string(&parsed).unwrap();
    assert_eq!(again, doc, "second serialization must be byte-identical");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn code_samples_round_trip(x in code_sample()) {
        assert_round_trip(&x, ArtifactKind::CodeSample);
    }

    #[test]
    fn agent_reports_round_trip(x in agent_report()) {
        assert_round_trip(&x, ArtifactKind::AgentReport);
    }

    #[test]
    fn aggregated_findings_round_trip(x in aggregated_finding()) {
        assert_round_trip(&x, ArtifactKind::AggregatedFinding);
    }

    #[test]
    fn assumptions_round_trip(x in assumption()) {
        assert_round_trip(&x, ArtifactKind::Assumption);
    }

    #[test]
    fn trigger_paths_round_trip(x in trigger_path()) {
        assert_round_trip(&x, ArtifactKind::TriggerPath);
    }

    #[test]
    fn hypotheses_round_trip(x in hypothesis()) {
        assert_round_trip(&x, ArtifactKind::Hypothesis);
    }

    #[test]
    fn verdicts_round_trip(x in verdict()) {
        assert_round_trip(&x, ArtifactKind::Verdict);
    }

    #[test]
    fn detection_reports_round_trip(x in detection_report()) {
        assert_round_trip(&x, ArtifactKind::DetectionReport);
    }

    #[test]
    fn context_bundles_round_trip(x in context_bundle()) {
        assert_round_trip(&x, ArtifactKind::ContextBundle);
    }

    #[test]
    fn numbered_functions_round_trip(src in "[ -~\\n\\t]{1,120}", id in "[a-z0-9-]{1,8}") {
        let sample = CodeSample {
            id,
            source: src,
            pair_id: None,
            label: Label::Unknown,
            project: String::new(),
            cwe_truth: None,
            language_hint: LanguageHint::C,
        };
        let nf = number_lines(&sample).unwrap();
        assert_round_trip(&nf, ArtifactKind::NumberedFunction);
    }
}

proptest! {
    // The preprocessing gate asks for a big randomized corpus with mixed
    // line endings, blanks, and tabs.
    #![proptest_config(ProptestConfig::with_cases(1100))]

    #[test]
    fn numbering_round_trips(parts in prop::collection::vec("[ -~\\t]{0,20}", 0..12),
                             crlf in prop::collection::vec(any::<bool>(), 0..12),
                             trailing in any::<bool>()) {
        let mut src = String::new();
        for (i, part) in parts.iter().enumerate() {
            src.push_str(part);
            if i + 1 < parts.len() {
                src.push_str(if crlf.get(i).copied().unwrap_or(false) { "\r\n" } else { "\n" });
            }
        }
        if trailing {
            src.push('\n');
        }
        prop_assume!(!src.is_empty());
        let sample = CodeSample {
            id: "s".to_string(),
            source: src.clone(),
            pair_id: None,
            label: Label::Unknown,
            project: String::new(),
            cwe_truth: None,
            language_hint: LanguageHint::C,
        };
        let nf = number_lines(&sample).unwrap();
        // pure: same input, same output
        prop_assert_eq!(&nf, &number_lines(&sample).unwrap());
        // contiguous numbering from 1
        for (i, line) in nf.lines.iter().enumerate() {
            prop_assert_eq!(line.line_no as usize, i + 1);
        }
        prop_assert_eq!(strip_numbers(&nf).unwrap(), normalize_source(&src));
    }

    #[test]
    fn agent_output_parsing_is_total(raw in "[ -~\\n]{0,200}") {
        // any text either parses or yields a typed error; never a panic
        let _ = vulscout::agents::parse_agent_output(&raw, &AgentId::new("X"), 10);
    }
}
