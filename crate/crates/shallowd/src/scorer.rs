//! Evaluation of predicted against gold relations: connective detection,
//! argument identification (Arg1 / Arg2 / both), sense labeling over
//! argument-correct pairs, and full parsing, under exact or partial span
//! matching.

use std::collections::BTreeSet;

use serde::Serialize;
use thiserror::Error;

use crate::corpus::{RelType, Relation, TokenSpan};

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("relation {relation_id} references unknown document {doc_id:?}")]
    UnknownDoc { relation_id: u64, doc_id: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MatchMode {
    Exact,
    Partial,
}

impl MatchMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            MatchMode::Exact => "exact",
            MatchMode::Partial => "partial",
        }
    }
}

/// Span agreement: exact token-set equality, or bidirectional overlap of at
/// least 70% of the gold tokens and 70% of the predicted tokens.
pub fn span_match(gold: &TokenSpan, pred: &TokenSpan, mode: MatchMode) -> bool {
    match mode {
        MatchMode::Exact => {
            gold.len() == pred.len() && gold.indices().zip(pred.indices()).all(|(g, p)| g == p)
        }
        MatchMode::Partial => {
            if gold.is_empty() || pred.is_empty() {
                return gold.is_empty() && pred.is_empty();
            }
            let overlap = gold.overlap_count(pred) as f64;
            overlap / gold.len() as f64 >= 0.7 && overlap / pred.len() as f64 >= 0.7
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Prf {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = if tp + fp == 0 {
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let recall = if tp + fn_ == 0 {
            0.0
        } else {
            tp as f64 / (tp + fn_) as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf {
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreReport {
    pub mode: MatchMode,
    pub connective: Prf,
    pub arg1: Prf,
    pub arg2: Prf,
    pub arg_both: Prf,
    pub sense_overall: Prf,
    pub sense_explicit: Prf,
    pub sense_nonexplicit: Prf,
    pub parser_overall: Prf,
    pub parser_explicit: Prf,
    pub parser_nonexplicit: Prf,
}

/// Sort key that orders relations by document position, so alignment ties
/// resolve in document order.
fn doc_order_key(relation: &Relation) -> (String, Vec<usize>, Vec<usize>, Vec<usize>) {
    (
        relation.doc_id.clone(),
        relation.arg1.indices().collect(),
        relation.arg2.indices().collect(),
        relation.connective.indices().collect(),
    )
}

/// One-to-one alignment of predictions to gold relations within each
/// document: a maximum bipartite matching under the given predicate, built
/// by augmenting paths in document order. Maximality keeps the matched
/// count symmetric under gold/pred exchange and monotone in the predicate,
/// so partial-mode counts never fall below exact-mode counts.
fn align(
    golds: &[&Relation],
    preds: &[&Relation],
    matches: impl Fn(&Relation, &Relation) -> bool,
) -> Vec<(usize, usize)> {
    let mut gold_order: Vec<usize> = (0..golds.len()).collect();
    gold_order.sort_by_key(|&i| doc_order_key(golds[i]));
    let mut pred_order: Vec<usize> = (0..preds.len()).collect();
    pred_order.sort_by_key(|&i| doc_order_key(preds[i]));

    // adjacency over sorted positions: for each prediction position, the
    // gold positions it may pair with, in document order.
    let adjacency: Vec<Vec<usize>> = pred_order
        .iter()
        .map(|&p| {
            gold_order
                .iter()
                .enumerate()
                .filter(|&(_, &g)| {
                    golds[g].doc_id == preds[p].doc_id && matches(golds[g], preds[p])
                })
                .map(|(gpos, _)| gpos)
                .collect()
        })
        .collect();

    fn augment(
        ppos: usize,
        adjacency: &[Vec<usize>],
        gold_match: &mut [Option<usize>],
        visited: &mut [bool],
    ) -> bool {
        for &gpos in &adjacency[ppos] {
            if visited[gpos] {
                continue;
            }
            visited[gpos] = true;
            let claimable = match gold_match[gpos] {
                None => true,
                Some(owner) => augment(owner, adjacency, gold_match, visited),
            };
            if claimable {
                gold_match[gpos] = Some(ppos);
                return true;
            }
        }
        false
    }

    let mut gold_match: Vec<Option<usize>> = vec![None; golds.len()];
    for ppos in 0..pred_order.len() {
        let mut visited = vec![false; golds.len()];
        augment(ppos, &adjacency, &mut gold_match, &mut visited);
    }

    let mut pairs: Vec<(usize, usize)> = gold_match
        .iter()
        .enumerate()
        .filter_map(|(gpos, ppos)| ppos.map(|ppos| (gold_order[gpos], pred_order[ppos])))
        .collect();
    pairs.sort_unstable();
    pairs
}

fn prf_for(
    golds: &[&Relation],
    preds: &[&Relation],
    matches: impl Fn(&Relation, &Relation) -> bool,
) -> Prf {
    let matched = align(golds, preds, matches).len();
    Prf::from_counts(matched, preds.len() - matched, golds.len() - matched)
}

fn sense_match(gold: &Relation, pred: &Relation) -> bool {
    pred.senses.iter().any(|s| gold.senses.contains(s))
}

fn is_explicit(relation: &Relation) -> bool {
    relation.rel_type == RelType::Explicit
}

/// AltLex, Implicit, and EntRel predictions are interchangeable at the type
/// level; the sense comparison separates them.
fn type_compatible(gold: &Relation, pred: &Relation) -> bool {
    is_explicit(gold) == is_explicit(pred)
}

fn parser_match(gold: &Relation, pred: &Relation, mode: MatchMode) -> bool {
    type_compatible(gold, pred)
        && span_match(&gold.arg1, &pred.arg1, mode)
        && span_match(&gold.arg2, &pred.arg2, mode)
        && (!is_explicit(gold) || span_match(&gold.connective, &pred.connective, mode))
        && sense_match(gold, pred)
}

/// A sense prediction counts only when its argument pair is correct: a true
/// positive needs both arguments matched and the sense equal to one of the
/// gold senses (type and connective are not consulted).
fn sense_prf(golds: &[&Relation], preds: &[&Relation], mode: MatchMode) -> Prf {
    prf_for(golds, preds, |g, p| {
        span_match(&g.arg1, &p.arg1, mode)
            && span_match(&g.arg2, &p.arg2, mode)
            && sense_match(g, p)
    })
}

/// Scores predictions against gold. `known_docs`, when given, is the corpus
/// document universe; relations referencing other documents are an error.
pub fn score_with_docs(
    gold: &[Relation],
    pred: &[Relation],
    mode: MatchMode,
    known_docs: Option<&BTreeSet<String>>,
) -> Result<ScoreReport, ScoreError> {
    if let Some(docs) = known_docs {
        for relation in gold.iter().chain(pred) {
            if !docs.contains(&relation.doc_id) {
                return Err(ScoreError::UnknownDoc {
                    relation_id: relation.relation_id,
                    doc_id: relation.doc_id.clone(),
                });
            }
        }
    }

    let golds: Vec<&Relation> = gold.iter().collect();
    let preds: Vec<&Relation> = pred.iter().collect();
    let gold_explicit: Vec<&Relation> = golds.iter().copied().filter(|r| is_explicit(r)).collect();
    let pred_explicit: Vec<&Relation> = preds.iter().copied().filter(|r| is_explicit(r)).collect();
    let gold_nonexp: Vec<&Relation> = golds.iter().copied().filter(|r| !is_explicit(r)).collect();
    let pred_nonexp: Vec<&Relation> = preds.iter().copied().filter(|r| !is_explicit(r)).collect();

    let connective = prf_for(&gold_explicit, &pred_explicit, |g, p| {
        span_match(&g.connective, &p.connective, mode)
    });
    let arg1 = prf_for(&golds, &preds, |g, p| span_match(&g.arg1, &p.arg1, mode));
    let arg2 = prf_for(&golds, &preds, |g, p| span_match(&g.arg2, &p.arg2, mode));
    let arg_both = prf_for(&golds, &preds, |g, p| {
        span_match(&g.arg1, &p.arg1, mode) && span_match(&g.arg2, &p.arg2, mode)
    });

    let sense_overall = sense_prf(&golds, &preds, mode);
    let sense_explicit = sense_prf(&gold_explicit, &pred_explicit, mode);
    let sense_nonexplicit = sense_prf(&gold_nonexp, &pred_nonexp, mode);

    let parser_overall = prf_for(&golds, &preds, |g, p| parser_match(g, p, mode));
    let parser_explicit = prf_for(&gold_explicit, &pred_explicit, |g, p| {
        parser_match(g, p, mode)
    });
    let parser_nonexplicit = prf_for(&gold_nonexp, &pred_nonexp, |g, p| parser_match(g, p, mode));

    Ok(ScoreReport {
        mode,
        connective,
        arg1,
        arg2,
        arg_both,
        sense_overall,
        sense_explicit,
        sense_nonexplicit,
        parser_overall,
        parser_explicit,
        parser_nonexplicit,
    })
}

pub fn score(gold: &[Relation], pred: &[Relation], mode: MatchMode) -> ScoreReport {
    score_with_docs(gold, pred, mode, None).expect("no document universe given")
}

/// Fixed-width report with one Overall / Explicit / Non-Explicit block per
/// task, four decimal places per cell.
pub fn format_report(report: &ScoreReport) -> String {
    let mut out = String::new();
    let line = |out: &mut String, label: &str, prf: &Prf| {
        out.push_str(&format!(
            "  {:<32}{:>10.4}{:>10.4}{:>10.4}\n",
            label, prf.precision, prf.recall, prf.f1
        ));
    };
    out.push_str(&format!(
        "Discourse relation scores ({} match)\n",
        report.mode.as_str()
    ));
    out.push_str(&format!(
        "  {:<32}{:>10}{:>10}{:>10}\n",
        "", "Prec", "Recall", "F1"
    ));
    out.push_str("Full Parsing\n");
    line(&mut out, "Overall", &report.parser_overall);
    line(&mut out, "Explicit", &report.parser_explicit);
    line(&mut out, "Non-Explicit", &report.parser_nonexplicit);
    out.push_str("Explicit Connective Identification\n");
    line(&mut out, "Explicit", &report.connective);
    out.push_str("Argument Identification\n");
    line(&mut out, "Arg1", &report.arg1);
    line(&mut out, "Arg2", &report.arg2);
    line(&mut out, "Arg1 & Arg2", &report.arg_both);
    out.push_str("Sense Labeling (argument-correct pairs)\n");
    line(&mut out, "Overall", &report.sense_overall);
    line(&mut out, "Explicit", &report.sense_explicit);
    line(&mut out, "Non-Explicit", &report.sense_nonexplicit);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TokenRef;
    use proptest::prelude::*;

    fn span(doc_toks: &[usize]) -> TokenSpan {
        TokenSpan::new(
            doc_toks
                .iter()
                .map(|&i| TokenRef {
                    char_begin: i * 5,
                    char_end: i * 5 + 4,
                    doc_tok_index: i,
                    sent_index: 0,
                    tok_index: i,
                })
                .collect(),
        )
    }

    fn explicit(
        doc: &str,
        id: u64,
        conn: &[usize],
        arg1: &[usize],
        arg2: &[usize],
        sense: &str,
    ) -> Relation {
        Relation {
            relation_id: id,
            doc_id: doc.to_owned(),
            rel_type: RelType::Explicit,
            connective: span(conn),
            arg1: span(arg1),
            arg2: span(arg2),
            senses: vec![sense.to_owned()],
        }
    }

    fn implicit(doc: &str, id: u64, arg1: &[usize], arg2: &[usize], sense: &str) -> Relation {
        Relation {
            relation_id: id,
            doc_id: doc.to_owned(),
            rel_type: if sense == "EntRel" {
                RelType::EntRel
            } else {
                RelType::Implicit
            },
            connective: TokenSpan::empty(),
            arg1: span(arg1),
            arg2: span(arg2),
            senses: vec![sense.to_owned()],
        }
    }

    #[test]
    fn span_match_identical_both_modes() {
        let a = span(&[1, 2, 3]);
        assert!(span_match(&a, &a.clone(), MatchMode::Exact));
        assert!(span_match(&a, &a.clone(), MatchMode::Partial));
    }

    #[test]
    fn span_match_nine_of_ten() {
        let gold = span(&(0..10).collect::<Vec<_>>());
        let pred = span(&(0..9).collect::<Vec<_>>());
        assert!(!span_match(&gold, &pred, MatchMode::Exact));
        // 9/10 and 9/9 are both >= 0.7.
        assert!(span_match(&gold, &pred, MatchMode::Partial));
    }

    #[test]
    fn span_match_six_of_ten_fails_partial() {
        let gold = span(&(0..10).collect::<Vec<_>>());
        let pred = span(&(0..6).collect::<Vec<_>>());
        // 6/10 < 0.7 even though 6/6 = 1.0.
        assert!(!span_match(&gold, &pred, MatchMode::Partial));
    }

    fn fixture_gold() -> Vec<Relation> {
        vec![
            explicit(
                "d1",
                0,
                &[4],
                &[0, 1, 2],
                &[5, 6, 7],
                "Contingency.Cause.Reason",
            ),
            explicit(
                "d1",
                1,
                &[12],
                &[8, 9],
                &[13, 14, 15],
                "Comparison.Contrast",
            ),
            implicit("d1", 2, &[16, 17], &[20, 21], "Expansion.Conjunction"),
            implicit("d2", 0, &[0, 1, 2], &[4, 5], "EntRel"),
        ]
    }

    #[test]
    fn self_score_is_perfect() {
        let gold = fixture_gold();
        for mode in [MatchMode::Exact, MatchMode::Partial] {
            let report = score(&gold, &gold, mode);
            for prf in [
                report.connective,
                report.arg1,
                report.arg2,
                report.arg_both,
                report.sense_overall,
                report.sense_explicit,
                report.sense_nonexplicit,
                report.parser_overall,
                report.parser_explicit,
                report.parser_nonexplicit,
            ] {
                assert_eq!(prf.f1, 1.0, "{report:?}");
                assert_eq!(prf.precision, 1.0);
                assert_eq!(prf.recall, 1.0);
            }
        }
    }

    #[test]
    fn empty_predictions_score_zero() {
        let gold = fixture_gold();
        let report = score(&gold, &[], MatchMode::Exact);
        assert_eq!(report.parser_overall.precision, 0.0);
        assert_eq!(report.parser_overall.recall, 0.0);
        assert_eq!(report.parser_overall.f1, 0.0);
        assert_eq!(report.arg_both.recall, 0.0);
    }

    #[test]
    fn formatted_perfect_report_has_only_ones() {
        let gold = fixture_gold();
        let formatted = format_report(&score(&gold, &gold, MatchMode::Exact));
        for line in formatted.lines().skip(2) {
            for cell in line.split_whitespace().filter(|c| c.contains('.')) {
                if cell.parse::<f64>().is_ok() {
                    assert_eq!(cell, "1.0000", "{formatted}");
                }
            }
        }
    }

    #[test]
    fn formatted_empty_pred_report_is_all_zeros() {
        let gold = fixture_gold();
        let formatted = format_report(&score(&gold, &[], MatchMode::Exact));
        for line in formatted.lines().skip(2) {
            for cell in line.split_whitespace().filter(|c| c.contains('.')) {
                if cell.parse::<f64>().is_ok() {
                    assert_eq!(cell, "0.0000", "{formatted}");
                }
            }
        }
    }

    #[test]
    fn seven_of_ten_arg_pairs() {
        let mut gold = Vec::new();
        for i in 0..10u64 {
            let base = (i as usize) * 10;
            gold.push(explicit(
                "d1",
                i,
                &[base + 3],
                &[base, base + 1],
                &[base + 4, base + 5],
                "Temporal.Synchrony",
            ));
        }
        let pred: Vec<Relation> = gold[..7].to_vec();
        let report = score(&gold, &pred, MatchMode::Exact);
        assert_eq!(report.arg_both.precision, 1.0);
        assert!((report.arg_both.recall - 0.7).abs() < 1e-12);
        assert!((report.arg_both.f1 - 2.0 * 0.7 / 1.7).abs() < 1e-12);
    }

    #[test]
    fn one_gold_never_matches_two_predictions() {
        let gold = vec![explicit(
            "d1",
            0,
            &[4],
            &[0, 1],
            &[5, 6],
            "Comparison.Contrast",
        )];
        let pred = vec![
            explicit("d1", 0, &[4], &[0, 1], &[5, 6], "Comparison.Contrast"),
            explicit("d1", 1, &[4], &[0, 1], &[5, 6], "Comparison.Contrast"),
        ];
        let report = score(&gold, &pred, MatchMode::Exact);
        assert_eq!(report.arg_both.tp, 1);
        assert_eq!(report.arg_both.fp, 1);
        assert_eq!(report.arg_both.fn_, 0);
    }

    #[test]
    fn crossing_near_matches_stay_monotone() {
        // Prediction 1 exactly matches gold 2 and nearly matches gold 1; a
        // greedy document-order pairing would strand prediction 2 in partial
        // mode. The matching must keep partial >= exact.
        let gold = vec![
            explicit(
                "d1",
                0,
                &[2],
                &[0, 1, 3, 4, 5, 6, 7, 8, 9, 10],
                &[20, 21],
                "Comparison.Contrast",
            ),
            explicit(
                "d1",
                1,
                &[2],
                &[0, 1, 3, 4, 5, 6, 7, 8, 9, 11],
                &[20, 21],
                "Comparison.Contrast",
            ),
        ];
        let pred = vec![
            explicit(
                "d1",
                0,
                &[2],
                &[0, 1, 3, 4, 5, 6, 7, 8, 9, 11],
                &[20, 21],
                "Comparison.Contrast",
            ),
            explicit(
                "d1",
                1,
                &[2],
                &[0, 1, 3, 4, 5, 6, 7, 8, 9, 10],
                &[20, 21],
                "Comparison.Contrast",
            ),
        ];
        let exact = score(&gold, &pred, MatchMode::Exact);
        let partial = score(&gold, &pred, MatchMode::Partial);
        assert_eq!(exact.arg_both.tp, 2);
        assert_eq!(partial.arg_both.tp, 2);
    }

    #[test]
    fn format_report_fixture_is_stable() {
        let gold = fixture_gold();
        let mut pred = gold.clone();
        pred.remove(3);
        pred[2].senses = vec!["Expansion.Restatement".into()];
        let report = score(&gold, &pred, MatchMode::Exact);
        let formatted = format_report(&report);
        let expected = include_str!("../testdata/golden/score_report.txt");
        assert_eq!(formatted, expected);
    }

    #[test]
    fn unknown_doc_is_an_error() {
        let gold = fixture_gold();
        let docs: BTreeSet<String> = ["d1".to_owned()].into();
        let err = score_with_docs(&gold, &[], MatchMode::Exact, Some(&docs)).unwrap_err();
        assert!(matches!(err, ScoreError::UnknownDoc { .. }));
    }

    // Random single-sense relation lists for the metric properties.
    fn arb_relation(doc_count: usize) -> impl Strategy<Value = Relation> {
        (
            0..doc_count,
            0usize..20,
            1usize..6,
            1usize..6,
            1usize..3,
            0usize..4,
            prop::bool::ANY,
        )
            .prop_map(|(doc, start, len1, len2, conn_len, sense, is_explicit)| {
                let arg1: Vec<usize> = (start..start + len1).collect();
                let conn_start = start + len1;
                let arg2_start = conn_start + conn_len;
                let arg2: Vec<usize> = (arg2_start..arg2_start + len2).collect();
                let senses = ["A.B", "C.D", "E.F", "EntRel"];
                if is_explicit {
                    let conn: Vec<usize> = (conn_start..conn_start + conn_len).collect();
                    explicit(
                        &format!("doc{doc}"),
                        0,
                        &conn,
                        &arg1,
                        &arg2,
                        senses[sense % 3],
                    )
                } else {
                    implicit(&format!("doc{doc}"), 0, &arg1, &arg2, senses[sense])
                }
            })
    }

    fn arb_relations() -> impl Strategy<Value = Vec<Relation>> {
        prop::collection::vec(arb_relation(3), 0..12)
    }

    /// Perturbs gold into a prediction-like list: drop tokens, change
    /// senses, lose or keep whole relations.
    fn arb_gold_and_pred() -> impl Strategy<Value = (Vec<Relation>, Vec<Relation>)> {
        (
            arb_relations(),
            prop::collection::vec((0u8..4, prop::bool::ANY), 12),
        )
            .prop_map(|(gold, edits)| {
                let mut pred = Vec::new();
                for (i, relation) in gold.iter().enumerate() {
                    let (edit, flip_sense) = edits[i % edits.len().max(1)];
                    match edit {
                        0 => pred.push(relation.clone()),
                        1 => {
                            let mut r = relation.clone();
                            if r.arg1.len() > 1 {
                                let kept: Vec<TokenRef> = r.arg1.refs()[1..].to_vec();
                                r.arg1 = TokenSpan::new(kept);
                            }
                            if flip_sense {
                                r.senses = vec!["X.Y".into()];
                                if r.rel_type == RelType::EntRel {
                                    r.rel_type = RelType::Implicit;
                                }
                            }
                            pred.push(r);
                        }
                        2 => {}
                        _ => {
                            let mut r = relation.clone();
                            r.relation_id += 1000;
                            pred.push(r.clone());
                            pred.push(relation.clone());
                        }
                    }
                }
                (gold, pred)
            })
    }

    proptest! {
        #[test]
        fn prop_self_score_perfect(gold in arb_relations()) {
            for mode in [MatchMode::Exact, MatchMode::Partial] {
                let report = score(&gold, &gold, mode);
                prop_assert_eq!(report.parser_overall.fp, 0);
                prop_assert_eq!(report.parser_overall.fn_, 0);
                prop_assert_eq!(report.arg_both.fp, 0);
                prop_assert_eq!(report.sense_overall.fp, 0);
                if !gold.is_empty() {
                    prop_assert_eq!(report.parser_overall.f1, 1.0);
                }
            }
        }

        #[test]
        fn prop_partial_never_below_exact((gold, pred) in arb_gold_and_pred()) {
            let exact = score(&gold, &pred, MatchMode::Exact);
            let partial = score(&gold, &pred, MatchMode::Partial);
            for (e, p) in [
                (exact.connective, partial.connective),
                (exact.arg1, partial.arg1),
                (exact.arg2, partial.arg2),
                (exact.arg_both, partial.arg_both),
                (exact.sense_overall, partial.sense_overall),
                (exact.sense_explicit, partial.sense_explicit),
                (exact.sense_nonexplicit, partial.sense_nonexplicit),
                (exact.parser_overall, partial.parser_overall),
                (exact.parser_explicit, partial.parser_explicit),
                (exact.parser_nonexplicit, partial.parser_nonexplicit),
            ] {
                prop_assert!(p.f1 >= e.f1 - 1e-12, "partial {} < exact {}", p.f1, e.f1);
                prop_assert!(p.tp >= e.tp);
            }
        }

        #[test]
        fn prop_swapping_swaps_precision_and_recall((gold, pred) in arb_gold_and_pred()) {
            for mode in [MatchMode::Exact, MatchMode::Partial] {
                let ab = score(&gold, &pred, mode);
                let ba = score(&pred, &gold, mode);
                for (x, y) in [
                    (ab.connective, ba.connective),
                    (ab.arg1, ba.arg1),
                    (ab.arg2, ba.arg2),
                    (ab.arg_both, ba.arg_both),
                    (ab.sense_overall, ba.sense_overall),
                    (ab.parser_overall, ba.parser_overall),
                ] {
                    prop_assert!((x.precision - y.recall).abs() < 1e-12);
                    prop_assert!((x.recall - y.precision).abs() < 1e-12);
                }
            }
        }
    }
}
