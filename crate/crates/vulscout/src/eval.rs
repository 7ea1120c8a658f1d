//! Dataset loading and evaluation metrics.
//!
//! Covers the sample-level rates (accuracy, F1, false-positive rate) and the
//! pair-wise measures for vulnerable/fixed twins: P-C (both members right),
//! P-R (both members inverted), and their difference VPS. Values are exact
//! rationals until rendered. Degenerate denominators yield absent values
//! rather than NaNs.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CodeSample, CweId, Label};
use crate::rational::Rational;
use crate::schema::{validate_schema, ArtifactKind, SchemaError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("io failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("record {line}: {source}")]
    Record {
        line: usize,
        #[source]
        source: SchemaError,
    },
    #[error("record {line}: {detail}")]
    PairViolation { line: usize, detail: String },
    #[error("pair {0} has no twin")]
    OrphanSample(String),
}

/// Binary confusion counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

/// Sample-level rates; `None` where the denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub acc: Option<Rational>,
    pub precision: Option<Rational>,
    pub recall: Option<Rational>,
    pub f1: Option<Rational>,
    pub fpr: Option<Rational>,
}

fn ratio(num: u64, den: u64) -> Option<Rational> {
    if den == 0 {
        None
    } else {
        Some(Rational::new(num as i128, den as i128))
    }
}

/// Accuracy, precision, recall, F1, and false-positive rate from counts.
pub fn metrics(c: &ConfusionCounts) -> Metrics {
    Metrics {
        acc: ratio(c.tp + c.tn, c.total()),
        precision: ratio(c.tp, c.tp + c.fp),
        recall: ratio(c.tp, c.tp + c.fn_),
        // 2PR/(P+R) simplifies to 2tp / (2tp + fp + fn).
        f1: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
        fpr: ratio(c.fp, c.fp + c.tn),
    }
}

/// Build confusion counts from (truth, predicted-vulnerable) pairs.
/// Samples labeled `unknown` are skipped.
pub fn confusion_from(outcomes: &[(Label, bool)]) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for (truth, predicted) in outcomes {
        match (truth, predicted) {
            (Label::Vulnerable, true) => c.tp += 1,
            (Label::Vulnerable, false) => c.fn_ += 1,
            (Label::Benign, true) => c.fp += 1,
            (Label::Benign, false) => c.tn += 1,
            (Label::Unknown, _) => {}
        }
    }
    c
}

/// Predictions for one vulnerable/fixed pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairOutcome {
    pub pair_id: String,
    /// Prediction for the vulnerable member.
    pub vul_pred: bool,
    /// Prediction for the fixed member.
    pub fix_pred: bool,
}

/// Pair-wise percentages over the full pair universe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairMetrics {
    /// Both members classified correctly.
    pub pc: Rational,
    /// Both members classified opposite to truth (fully reversed).
    pub pr: Rational,
    /// Both members flagged vulnerable (the alternate reading; reported
    /// alongside, never folded into vps).
    pub pr_bothflagged: Rational,
    /// pc − pr.
    pub vps: Rational,
}

/// Pair metrics as percentages of `total_pairs`. Pairs missing from
/// `outcomes` count as incorrect. `None` when there are no pairs at all.
pub fn pair_metrics(outcomes: &[PairOutcome], total_pairs: usize) -> Option<PairMetrics> {
    if total_pairs == 0 {
        return None;
    }
    let pc_n = outcomes.iter().filter(|o| o.vul_pred && !o.fix_pred).count();
    let pr_n = outcomes.iter().filter(|o| !o.vul_pred && o.fix_pred).count();
    let both_n = outcomes.iter().filter(|o| o.vul_pred && o.fix_pred).count();
    let pct = |n: usize| Rational::new(n as i128 * 100, total_pairs as i128);
    let pc = pct(pc_n);
    let pr = pct(pr_n);
    Some(PairMetrics {
        pc,
        pr,
        pr_bothflagged: pct(both_n),
        vps: pc.sub(&pr),
    })
}

/// Per-CWE robust score: (#correct − #wrong) / #total, in [−1, 1].
pub fn cwe_score(results: &[(CweId, bool)]) -> BTreeMap<CweId, Rational> {
    let mut tally: BTreeMap<CweId, (i128, i128)> = BTreeMap::new();
    for (cwe, correct) in results {
        let entry = tally.entry(cwe.clone()).or_insert((0, 0));
        if *correct {
            entry.0 += 1;
        }
        entry.1 += 1;
    }
    tally
        .into_iter()
        .map(|(cwe, (correct, total))| {
            let wrong = total - correct;
            (cwe, Rational::new(correct - wrong, total))
        })
        .collect()
}

/// One record of the pair dataset: a code sample that must carry a pair id.
#[derive(Debug, Deserialize)]
struct PairRecord {
    pair_id: Option<String>,
    label: Label,
}

/// Load a newline-delimited pair dataset.
///
/// Every record is schema-validated as a code sample; every pair id must
/// occur exactly twice, once vulnerable and once benign.
pub fn load_pairs(path: &Path) -> Result<Vec<CodeSample>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut samples = Vec::new();
    let mut pairs: BTreeMap<String, Vec<(usize, Label)>> = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        validate_schema(line, ArtifactKind::CodeSample)
            .map_err(|source| EvalError::Record { line: line_no, source })?;
        let probe: PairRecord = serde_json::from_str(line)
            .map_err(|e| EvalError::Record { line: line_no, source: SchemaError::Malformed(e) })?;
        let pair_id = probe.pair_id.ok_or_else(|| EvalError::PairViolation {
            line: line_no,
            detail: "pair dataset record lacks pair_id".to_string(),
        })?;
        pairs.entry(pair_id).or_default().push((line_no, probe.label));
        let sample: CodeSample = serde_json::from_str(line)
            .map_err(|e| EvalError::Record { line: line_no, source: SchemaError::Malformed(e) })?;
        samples.push(sample);
    }
    for (pair_id, members) in &pairs {
        match members.as_slice() {
            [_] => return Err(EvalError::OrphanSample(pair_id.clone())),
            [a, b] => {
                let labels = [a.1, b.1];
                if !(labels.contains(&Label::Vulnerable) && labels.contains(&Label::Benign)) {
                    return Err(EvalError::PairViolation {
                        line: b.0,
                        detail: format!(
                            "pair {pair_id} must have one vulnerable and one benign member"
                        ),
                    });
                }
            }
            more => {
                return Err(EvalError::PairViolation {
                    line: more.last().map(|m| m.0).unwrap_or(0),
                    detail: format!("pair {pair_id} has {} members", more.len()),
                })
            }
        }
    }
    Ok(samples)
}

/// Assemble pair outcomes from per-sample predictions. Samples without a
/// prediction count as predicted-benign. Returns outcomes plus the total
/// number of pairs in the dataset.
pub fn pair_outcomes(
    samples: &[CodeSample],
    predictions: &BTreeMap<String, bool>,
) -> (Vec<PairOutcome>, usize) {
    let mut by_pair: BTreeMap<String, (Option<bool>, Option<bool>)> = BTreeMap::new();
    for s in samples {
        let Some(pair_id) = &s.pair_id else { continue };
        let predicted = predictions.get(&s.id).copied().unwrap_or(false);
        let entry = by_pair.entry(pair_id.clone()).or_default();
        match s.label {
            Label::Vulnerable => entry.0 = Some(predicted),
            Label::Benign => entry.1 = Some(predicted),
            Label::Unknown => {}
        }
    }
    let total = by_pair.len();
    let outcomes = by_pair
        .into_iter()
        .filter_map(|(pair_id, (vul, fix))| {
            Some(PairOutcome {
                pair_id,
                vul_pred: vul?,
                fix_pred: fix?,
            })
        })
        .collect();
    (outcomes, total)
}

/// One printed row of a published pair-metrics table.
#[derive(Debug, Clone)]
pub struct TableRow {
    pub label: String,
    pub pc: f64,
    pub pr: f64,
    pub vps: f64,
}

impl TableRow {
    pub fn new(label: &str, pc: f64, pr: f64, vps: f64) -> TableRow {
        TableRow {
            label: label.to_string(),
            pc,
            pr,
            vps,
        }
    }
}

/// Audit printed rows: recompute vps from (pc, pr) and flag every row whose
/// printed vps differs by more than `slack` (rounding tolerance).
pub fn audit_pair_rows(rows: &[TableRow], slack: f64) -> Vec<String> {
    rows.iter()
        .filter(|r| (r.pc - r.pr - r.vps).abs() > slack)
        .map(|r| r.label.clone())
        .collect()
}
