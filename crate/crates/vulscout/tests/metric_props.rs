//! Metric identities against brute-force recounts, plus the published-table
//! arithmetic audit.

use proptest::prelude::*;

use vulscout::eval::{
    audit_pair_rows, confusion_from, cwe_score, metrics, pair_metrics, ConfusionCounts,
    PairOutcome, TableRow,
};
use vulscout::model::{CweId, Label};
use vulscout::rational::Rational;

fn outcome_strategy() -> impl Strategy<Value = PairOutcome> {
    (any::<u32>(), any::<bool>(), any::<bool>()).prop_map(|(id, v, f)| PairOutcome {
        pair_id: format!("p{id}"),
        vul_pred: v,
        fix_pred: f,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1100))]

    #[test]
    fn vps_is_exactly_pc_minus_pr(outcomes in prop::collection::vec(outcome_strategy(), 1..40)) {
        let total = outcomes.len();
        let pm = pair_metrics(&outcomes, total).unwrap();
        prop_assert_eq!(pm.vps, pm.pc.sub(&pm.pr));
        // brute-force recount
        let pc = outcomes.iter().filter(|o| o.vul_pred && !o.fix_pred).count();
        let pr = outcomes.iter().filter(|o| !o.vul_pred && o.fix_pred).count();
        prop_assert_eq!(pm.pc, Rational::new(pc as i128 * 100, total as i128));
        prop_assert_eq!(pm.pr, Rational::new(pr as i128 * 100, total as i128));
    }

    #[test]
    fn rates_match_brute_force_recount(tp in 0u64..500, tn in 0u64..500, fp in 0u64..500, fn_ in 0u64..500) {
        let c = ConfusionCounts { tp, tn, fp, fn_ };
        let m = metrics(&c);
        // recount from an expanded outcome list
        let mut outcomes = Vec::new();
        outcomes.extend(std::iter::repeat_n((Label::Vulnerable, true), tp as usize));
        outcomes.extend(std::iter::repeat_n((Label::Benign, false), tn as usize));
        outcomes.extend(std::iter::repeat_n((Label::Benign, true), fp as usize));
        outcomes.extend(std::iter::repeat_n((Label::Vulnerable, false), fn_ as usize));
        let recounted = confusion_from(&outcomes);
        prop_assert_eq!(recounted, c);

        let total = tp + tn + fp + fn_;
        if total > 0 {
            let acc = m.acc.unwrap();
            prop_assert_eq!(acc, Rational::new((tp + tn) as i128, total as i128));
            prop_assert!(Rational::zero() <= acc && acc <= Rational::from_int(1));
        } else {
            prop_assert!(m.acc.is_none());
        }
        match (fp + tn > 0, m.fpr) {
            (true, Some(fpr)) => {
                prop_assert_eq!(fpr, Rational::new(fp as i128, (fp + tn) as i128));
                prop_assert!(Rational::zero() <= fpr && fpr <= Rational::from_int(1));
            }
            (false, None) => {}
            other => prop_assert!(false, "fpr mismatch: {:?}", other),
        }
        // f1 = 2PR/(P+R) cross-checked against the 2tp form
        if 2 * tp + fp + fn_ > 0 {
            let f1 = m.f1.unwrap();
            prop_assert_eq!(f1, Rational::new(2 * tp as i128, (2 * tp + fp + fn_) as i128));
            if let (Some(p), Some(r)) = (m.precision, m.recall) {
                let sum = p.add(&r);
                if sum > Rational::zero() {
                    let expected = Rational::new(
                        2 * p.numer() * r.numer() * sum.denom(),
                        p.denom() * r.denom() * sum.numer(),
                    );
                    prop_assert_eq!(f1, expected);
                }
            }
            prop_assert!(Rational::zero() <= f1 && f1 <= Rational::from_int(1));
        }
    }

    #[test]
    fn metrics_are_permutation_invariant(outcomes in prop::collection::vec(outcome_strategy(), 1..30), seed in any::<u64>()) {
        let mut shuffled = outcomes.clone();
        let mut state = seed | 1;
        for i in (1..shuffled.len()).rev() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            shuffled.swap(i, (state as usize) % (i + 1));
        }
        prop_assert_eq!(
            pair_metrics(&outcomes, outcomes.len()),
            pair_metrics(&shuffled, shuffled.len())
        );
    }

    #[test]
    fn cwe_scores_stay_in_range(results in prop::collection::vec((0u8..4, any::<bool>()), 1..60)) {
        let typed: Vec<(CweId, bool)> = results
            .iter()
            .map(|(k, ok)| (CweId::parse(["CWE-125", "CWE-787", "CWE-78", "CWE-22"][*k as usize]).unwrap(), *ok))
            .collect();
        let scores = cwe_score(&typed);
        for score in scores.values() {
            prop_assert!(Rational::from_int(-1) <= *score && *score <= Rational::from_int(1));
        }
        // spreadsheet-style recount
        for (cwe, score) in &scores {
            let total = typed.iter().filter(|(c, _)| c == cwe).count() as i128;
            let correct = typed.iter().filter(|(c, ok)| c == cwe && *ok).count() as i128;
            prop_assert_eq!(*score, Rational::new(2 * correct - total, total));
        }
    }
}

/// Published pair-metric rows (P-C, P-R, printed VPS) for the two benchmark
/// corpora, frozen from the comparison table. Five rows misprint VPS; the
/// audit must flag exactly those.
pub fn published_rows() -> Vec<TableRow> {
    vec![
        TableRow::new("primevul/unixcoder-sft", 7.62, 0.92, 6.69),
        TableRow::new("primevul/gpt35-cot", 6.21, 5.50, 0.71),
        TableRow::new("primevul/gpt35-gptlens", 10.1, 6.44, -0.91),
        TableRow::new("primevul/gpt35-vultrial", 18.6, 11.4, 1.38),
        TableRow::new("primevul/gpt4o-cot", 9.20, 6.67, 2.50),
        TableRow::new("primevul/gpt4o-multirole", 1.61, 6.44, -5.05),
        TableRow::new("primevul/gpt4o-gptlens", 10.1, 6.76, 3.60),
        TableRow::new("primevul/gpt4o-vultrial", 18.6, 11.4, 7.13),
        TableRow::new("primevul/hv-pipeline", 26.6, 10.1, 16.5),
        TableRow::new("sven/unixcoder-sft", 13.2, 0.00, 13.2),
        TableRow::new("sven/gpt35-cot", 1.20, 0.00, 1.20),
        TableRow::new("sven/gpt35-gptlens", 6.00, 7.60, -1.2),
        TableRow::new("sven/gpt35-vultrial", 1.20, 1.20, 0.00),
        TableRow::new("sven/gpt4o-cot", 1.20, 2.40, -1.20),
        TableRow::new("sven/gpt4o-multirole", 3.61, 12.0, -8.43),
        TableRow::new("sven/gpt4o-gptlens", 3.61, 3.61, 0.00),
        TableRow::new("sven/gpt4o-vultrial", 4.82, 1.20, 3.60),
        TableRow::new("sven/hv-pipeline", 26.5, 6.02, 20.4),
    ]
}

/// The rows whose printed VPS does not match pc − pr within rounding slack.
pub const KNOWN_MISPRINTS: [&str; 5] = [
    "primevul/gpt35-gptlens",
    "primevul/gpt35-vultrial",
    "primevul/gpt4o-multirole",
    "primevul/gpt4o-gptlens",
    "sven/gpt35-gptlens",
];

#[test]
fn table_audit_verifies_consistent_rows_and_flags_misprints() {
    let rows = published_rows();
    let flagged = audit_pair_rows(&rows, 0.15);
    assert_eq!(flagged, KNOWN_MISPRINTS.to_vec());
    // The headline rows verify: 26.6 - 10.1 = 16.5 exactly, and the second
    // corpus row lands within rounding slack (26.5 - 6.02 = 20.48 vs 20.4).
    assert!((26.6 - 10.1 - 16.5f64).abs() < 1e-9);
    assert!((26.5 - 6.02 - 20.4f64).abs() <= 0.15);
    // Generalization-table variant of the same row is exact to 2dp.
    assert!((26.51 - 6.02 - 20.49f64).abs() < 1e-9);
}

#[test]
fn evaluation_split_shape() {
    // The pair universe the audit rows describe: percentages computed over
    // 435 pairs for the first corpus reproduce printed precision.
    let outcomes: Vec<PairOutcome> = (0..116)
        .map(|i| PairOutcome { pair_id: format!("p{i}"), vul_pred: true, fix_pred: false })
        .chain((0..44).map(|i| PairOutcome { pair_id: format!("r{i}"), vul_pred: false, fix_pred: true }))
        .collect();
    let pm = pair_metrics(&outcomes, 435).unwrap();
    assert_eq!(pm.pc.render_2dp(), "26.67"); // 116/435
    assert_eq!(pm.pr.render_2dp(), "10.11"); // 44/435
    assert_eq!(pm.vps.render_2dp(), "16.55");
}
