//! Report aggregation: merge per-agent findings into deduplicated entries.
//!
//! Merging follows three rules: group by CWE and overlapping span (transitive
//! closure, so chains of overlaps land in one group), merge within a group
//! (one representative description, unioned evidence, the sorted list of
//! source agents), and preserve everything else as individual entries.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::model::{AgentReport, AggregatedFinding, Span};

#[derive(Debug, Error, PartialEq)]
pub enum AggregateError {
    #[error("reports reference different samples: {0:?} vs {1:?}")]
    MixedSampleInput(String, String),
}

/// Inclusive interval intersection. Sharing an endpoint counts; adjacency
/// does not.
pub fn spans_overlap(a: &Span, b: &Span) -> bool {
    a.start <= b.end && b.start <= a.end
}

/// Deterministic id for a finding, derived from its CWE and merged span.
fn finding_id(cwe: &str, span: &Span) -> String {
    format!("{}-L{}-L{}", cwe, span.start, span.end)
}

/// Merge agent reports into deduplicated findings.
///
/// Output is canonically sorted by (CWE, span), so it does not depend on
/// input order.
pub fn aggregate(reports: &[AgentReport]) -> Result<Vec<AggregatedFinding>, AggregateError> {
    if let Some(first) = reports.first() {
        for r in reports {
            if r.sample_id != first.sample_id {
                return Err(AggregateError::MixedSampleInput(
                    first.sample_id.clone(),
                    r.sample_id.clone(),
                ));
            }
        }
    }

    // Union-find over report indices; union when same CWE and spans overlap.
    let mut parent: Vec<usize> = (0..reports.len()).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        let mut root = i;
        while parent[root] != root {
            root = parent[root];
        }
        let mut cur = i;
        while parent[cur] != root {
            let next = parent[cur];
            parent[cur] = root;
            cur = next;
        }
        root
    }
    for i in 0..reports.len() {
        for j in (i + 1)..reports.len() {
            if reports[i].cwe == reports[j].cwe && spans_overlap(&reports[i].span, &reports[j].span)
            {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }

    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut root_to_group: std::collections::BTreeMap<usize, usize> = std::collections::BTreeMap::new();
    for i in 0..reports.len() {
        let root = find(&mut parent, i);
        let slot = *root_to_group.entry(root).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[slot].push(i);
    }

    let mut findings: Vec<AggregatedFinding> = groups
        .into_iter()
        .map(|members| merge_group(reports, &members))
        .collect();
    findings.sort_by(|a, b| (&a.cwe, a.span).cmp(&(&b.cwe, b.span)));
    Ok(findings)
}

fn merge_group(reports: &[AgentReport], members: &[usize]) -> AggregatedFinding {
    let span = members
        .iter()
        .map(|&i| reports[i].span)
        .reduce(|acc, s| acc.hull(&s))
        .expect("non-empty group");

    // Representative description: most evidence items, then longest
    // description, then lexicographically smallest source agent. The trailing
    // comparisons make the order total, so input order can never leak in.
    let rep = members
        .iter()
        .copied()
        .min_by(|&a, &b| {
            let ra = &reports[a];
            let rb = &reports[b];
            rb.evidence
                .len()
                .cmp(&ra.evidence.len())
                .then(rb.description.len().cmp(&ra.description.len()))
                .then(ra.source_agent.cmp(&rb.source_agent))
                .then(ra.description.cmp(&rb.description))
                .then(ra.evidence.cmp(&rb.evidence))
                .then(ra.trigger_hint.cmp(&rb.trigger_hint))
        })
        .expect("non-empty group");

    let mut evidence: Vec<_> = members
        .iter()
        .flat_map(|&i| reports[i].evidence.iter().cloned())
        .collect();
    evidence.sort();
    evidence.dedup();

    let agents: BTreeSet<_> = members
        .iter()
        .map(|&i| reports[i].source_agent.clone())
        .collect();

    let cwe = reports[rep].cwe.clone();
    AggregatedFinding {
        id: finding_id(cwe.as_str(), &span),
        cwe,
        span,
        description: reports[rep].description.clone(),
        evidence,
        source_agents: agents.into_iter().collect(),
    }
}

/// View a finding as a single report again, for idempotence checks and
/// re-aggregation of merged results.
pub fn finding_as_report(finding: &AggregatedFinding, sample_id: &str) -> AgentReport {
    AgentReport {
        sample_id: sample_id.to_string(),
        source_agent: finding
            .source_agents
            .first()
            .cloned()
            .expect("aggregated finding has at least one source agent"),
        cwe: finding.cwe.clone(),
        span: finding.span,
        description: finding.description.clone(),
        evidence: finding.evidence.clone(),
        trigger_hint: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AgentId, CweId, EvidenceItem};

    fn report(agent: &str, cwe: &str, start: u32, end: u32) -> AgentReport {
        AgentReport {
            sample_id: "s1".to_string(),
            source_agent: AgentId::new(agent),
            cwe: CweId::parse(cwe).unwrap(),
            span: Span::new(start, end).unwrap(),
            description: format!("{agent} on {cwe}"),
            evidence: vec![EvidenceItem { line_no: start, snippet: "x".to_string() }],
            trigger_hint: None,
        }
    }

    #[test]
    fn overlap_rules() {
        let s = |a, b| Span::new(a, b).unwrap();
        assert!(spans_overlap(&s(3, 7), &s(7, 9)));
        assert!(!spans_overlap(&s(3, 7), &s(8, 9)));
        assert!(spans_overlap(&s(1, 100), &s(50, 50)));
    }

    #[test]
    fn merges_same_cwe_overlapping() {
        let out = aggregate(&[report("B", "CWE-125", 11, 15), report("A", "CWE-125", 10, 12)]).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].span, Span::new(10, 15).unwrap());
        assert_eq!(
            out[0].source_agents,
            vec![AgentId::new("A"), AgentId::new("B")]
        );
        assert_eq!(out[0].id, "CWE-125-L10-L15");
    }

    #[test]
    fn different_cwe_same_span_stay_apart() {
        let out = aggregate(&[report("A", "CWE-125", 10, 12), report("B", "CWE-787", 10, 12)]).unwrap();
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn transitive_chain_collapses() {
        let out = aggregate(&[
            report("A", "CWE-125", 1, 2),
            report("B", "CWE-125", 2, 3),
            report("C", "CWE-125", 3, 4),
        ])
        .unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].span, Span::new(1, 4).unwrap());
        assert_eq!(out[0].source_agents.len(), 3);
    }

    #[test]
    fn mixed_sample_is_rejected() {
        let mut a = report("A", "CWE-125", 1, 2);
        let b = report("B", "CWE-125", 2, 3);
        a.sample_id = "other".to_string();
        let err = aggregate(&[a, b]).unwrap_err();
        assert!(matches!(err, AggregateError::MixedSampleInput(_, _)));
    }

    #[test]
    fn representative_prefers_more_evidence() {
        let mut a = report("ZAgent", "CWE-125", 1, 2);
        a.evidence.push(EvidenceItem { line_no: 2, snippet: "y".to_string() });
        a.description = "rich".to_string();
        let b = report("AAgent", "CWE-125", 2, 3);
        let out = aggregate(&[b, a]).unwrap();
        assert_eq!(out[0].description, "rich");
    }

    #[test]
    fn evidence_deduplicated() {
        let a = report("A", "CWE-125", 1, 2);
        let b = report("B", "CWE-125", 1, 2);
        let mut b2 = b.clone();
        b2.evidence = a.evidence.clone();
        let out = aggregate(&[a, b2]).unwrap();
        assert_eq!(out[0].evidence.len(), 1);
    }
}
