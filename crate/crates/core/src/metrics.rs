//! Exact-match intent accuracy, span-level slot F1 and overall accuracy.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::split_tag;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("length mismatch: {0} predictions vs {1} references")]
    LengthMismatch(usize, usize),
}

/// A typed slot span over token positions `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub label: String,
    pub start: usize,
    pub end: usize,
}

/// CoNLL-style chunk extraction. An `I-x` that does not continue an open `x`
/// span starts a new span, as in `conlleval`.
pub fn extract_spans<S: AsRef<str>>(tags: &[S]) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut open: Option<(String, usize)> = None;
    for (i, tag) in tags.iter().enumerate() {
        let (prefix, name) = split_tag(tag.as_ref()).unwrap_or(('O', ""));
        let continues = prefix == 'I' && matches!(&open, Some((n, _)) if n == name);
        if continues {
            continue;
        }
        if let Some((label, start)) = open.take() {
            spans.push(Span { label, start, end: i });
        }
        if prefix != 'O' {
            open = Some((name.to_owned(), i));
        }
    }
    if let Some((label, start)) = open {
        spans.push(Span {
            label,
            start,
            end: tags.len(),
        });
    }
    spans
}

fn check_len(a: usize, b: usize) -> Result<(), MetricsError> {
    if a == b {
        Ok(())
    } else {
        Err(MetricsError::LengthMismatch(a, b))
    }
}

fn fraction(hits: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

pub fn intent_accuracy(
    predicted: &[BTreeSet<String>],
    gold: &[BTreeSet<String>],
) -> Result<f64, MetricsError> {
    check_len(predicted.len(), gold.len())?;
    let hits = predicted.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(fraction(hits, gold.len()))
}

/// Span counts pooled over a collection of utterances.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SpanCounts {
    pub true_positives: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl SpanCounts {
    pub fn f1(&self) -> f64 {
        let p = fraction(self.true_positives, self.predicted);
        let r = fraction(self.true_positives, self.gold);
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

pub fn span_counts(
    predicted: &[Vec<String>],
    gold: &[Vec<String>],
) -> Result<SpanCounts, MetricsError> {
    check_len(predicted.len(), gold.len())?;
    let mut counts = SpanCounts::default();
    for (p, g) in predicted.iter().zip(gold) {
        check_len(p.len(), g.len())?;
        let ps: BTreeSet<Span> = extract_spans(p).into_iter().collect();
        let gs: BTreeSet<Span> = extract_spans(g).into_iter().collect();
        counts.true_positives += ps.intersection(&gs).count();
        counts.predicted += ps.len();
        counts.gold += gs.len();
    }
    Ok(counts)
}

/// Micro-averaged span-level F1; `0` when there is nothing to score.
pub fn slot_f1(predicted: &[Vec<String>], gold: &[Vec<String>]) -> Result<f64, MetricsError> {
    Ok(span_counts(predicted, gold)?.f1())
}

pub fn overall_accuracy(
    predicted_intents: &[BTreeSet<String>],
    gold_intents: &[BTreeSet<String>],
    predicted_tags: &[Vec<String>],
    gold_tags: &[Vec<String>],
) -> Result<f64, MetricsError> {
    Ok(evaluate(predicted_intents, gold_intents, predicted_tags, gold_tags)?.overall_accuracy)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtteranceCorrectness {
    pub intents: bool,
    pub slots: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub ic_accuracy: f64,
    pub sf_f1: f64,
    pub overall_accuracy: f64,
    /// Fraction of utterances whose every slot tag is right.
    pub slot_sentence_accuracy: f64,
    pub per_utterance: Vec<UtteranceCorrectness>,
}

/// The `{ic_acc, sf_f1, overall_acc}` object emitted in logs and reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub ic_acc: f64,
    pub sf_f1: f64,
    pub overall_acc: f64,
}

impl MetricSummary {
    /// Four-decimal rounding used in human-facing reports.
    pub fn rounded(&self) -> Self {
        let r = |v: f64| (v * 1e4).round() / 1e4;
        Self {
            ic_acc: r(self.ic_acc),
            sf_f1: r(self.sf_f1),
            overall_acc: r(self.overall_acc),
        }
    }
}

impl EvalRecord {
    pub fn summary(&self) -> MetricSummary {
        MetricSummary {
            ic_acc: self.ic_accuracy,
            sf_f1: self.sf_f1,
            overall_acc: self.overall_accuracy,
        }
    }
}

pub fn evaluate(
    predicted_intents: &[BTreeSet<String>],
    gold_intents: &[BTreeSet<String>],
    predicted_tags: &[Vec<String>],
    gold_tags: &[Vec<String>],
) -> Result<EvalRecord, MetricsError> {
    let n = gold_intents.len();
    check_len(predicted_intents.len(), n)?;
    check_len(predicted_tags.len(), n)?;
    check_len(gold_tags.len(), n)?;
    let mut per_utterance = Vec::with_capacity(n);
    for i in 0..n {
        check_len(predicted_tags[i].len(), gold_tags[i].len())?;
        per_utterance.push(UtteranceCorrectness {
            intents: predicted_intents[i] == gold_intents[i],
            slots: predicted_tags[i] == gold_tags[i],
        });
    }
    let count = |f: &dyn Fn(&UtteranceCorrectness) -> bool| per_utterance.iter().filter(|c| f(c)).count();
    Ok(EvalRecord {
        ic_accuracy: fraction(count(&|c| c.intents), n),
        sf_f1: slot_f1(predicted_tags, gold_tags)?,
        overall_accuracy: fraction(count(&|c| c.intents && c.slots), n),
        slot_sentence_accuracy: fraction(count(&|c| c.slots), n),
        per_utterance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tags(s: &str) -> Vec<String> {
        s.split(' ').map(String::from).collect()
    }

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| (*s).to_owned()).collect()
    }

    #[test]
    fn span_extraction() {
        let spans = extract_spans(&tags("O B-a I-a O B-b B-b I-c"));
        let got: Vec<_> = spans.iter().map(|s| (s.label.as_str(), s.start, s.end)).collect();
        assert_eq!(got, [("a", 1, 3), ("b", 4, 5), ("b", 5, 6), ("c", 6, 7)]);
    }

    #[test]
    fn intent_accuracy_cases() {
        let g = vec![set(&["A"]), set(&["A", "B"]), set(&["C"])];
        assert_eq!(intent_accuracy(&g, &g).unwrap(), 1.0);
        let p = vec![set(&["A"]), set(&["A"]), set(&["C"])];
        assert!((intent_accuracy(&p, &g).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(intent_accuracy(&p[..1], &g), Err(MetricsError::LengthMismatch(1, 3)));
    }

    #[test]
    fn slot_f1_cases() {
        let g = vec![tags("O B-city I-city O")];
        assert_eq!(slot_f1(&g, &g).unwrap(), 1.0);
        // Shifted boundary: predicted (city,1,2) vs gold (city,1,3).
        let shifted = vec![tags("O B-city O O")];
        assert_eq!(slot_f1(&shifted, &g).unwrap(), 0.0);
        let empty = vec![tags("O O")];
        assert_eq!(slot_f1(&empty, &empty).unwrap(), 0.0);
        // Spanless utterances add nothing to the pool.
        let mixed_gold = vec![tags("O O"), tags("B-x")];
        let mixed_pred = vec![tags("O O"), tags("B-x")];
        assert_eq!(slot_f1(&mixed_pred, &mixed_gold).unwrap(), 1.0);
        assert!(slot_f1(&[tags("O")], &[tags("O O")]).is_err());
    }

    #[test]
    fn overall_is_a_conjunction() {
        let gi = vec![set(&["A"]), set(&["B"])];
        let gt = vec![tags("B-x O"), tags("O")];
        assert_eq!(overall_accuracy(&gi, &gi, &gt, &gt).unwrap(), 1.0);
        let pt = vec![tags("B-x O"), tags("B-y")];
        assert_eq!(overall_accuracy(&gi, &gi, &pt, &gt).unwrap(), 0.5);
    }

    #[test]
    fn rounding_for_reports() {
        let s = MetricSummary { ic_acc: 2.0 / 3.0, sf_f1: 0.12345, overall_acc: 1.0 }.rounded();
        assert_eq!(s.ic_acc, 0.6667);
        assert_eq!(s.sf_f1, 0.1235);
    }

    fn arb_eval() -> impl Strategy<Value = (Vec<BTreeSet<String>>, Vec<BTreeSet<String>>, Vec<Vec<String>>, Vec<Vec<String>>)> {
        let tag = prop_oneof![Just("O".to_string()), Just("B-a".into()), Just("I-a".into()), Just("B-b".into())];
        let utt = (1usize..6).prop_flat_map(move |n| {
            (
                proptest::collection::btree_set("[A-C]", 1..3),
                proptest::collection::btree_set("[A-C]", 1..3),
                proptest::collection::vec(tag.clone(), n),
                proptest::collection::vec(tag.clone(), n),
            )
        });
        proptest::collection::vec(utt, 1..12).prop_map(|rows| {
            let mut out = (vec![], vec![], vec![], vec![]);
            for (pi, gi, pt, gt) in rows {
                out.0.push(pi);
                out.1.push(gi);
                out.2.push(pt);
                out.3.push(gt);
            }
            out
        })
    }

    proptest! {
        #[test]
        fn overall_bounded_by_components((pi, gi, pt, gt) in arb_eval()) {
            let r = evaluate(&pi, &gi, &pt, &gt).unwrap();
            prop_assert!(r.overall_accuracy <= r.ic_accuracy);
            prop_assert!(r.overall_accuracy <= r.slot_sentence_accuracy);
            for v in [r.ic_accuracy, r.sf_f1, r.overall_accuracy] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn gold_copies_score_one((_, gi, _, gt) in arb_eval()) {
            let r = evaluate(&gi, &gi, &gt, &gt).unwrap();
            prop_assert_eq!(r.ic_accuracy, 1.0);
            prop_assert_eq!(r.overall_accuracy, 1.0);
            let has_spans = gt.iter().any(|t| !extract_spans(t).is_empty());
            prop_assert_eq!(r.sf_f1, if has_spans { 1.0 } else { 0.0 });
        }

        #[test]
        fn slot_f1_ignores_utterance_order((_, _, pt, gt) in arb_eval(), rot in 0usize..12) {
            let base = slot_f1(&pt, &gt).unwrap();
            let k = rot % pt.len();
            let mut p2 = pt.clone();
            let mut g2 = gt.clone();
            p2.rotate_left(k);
            g2.rotate_left(k);
            p2.reverse();
            g2.reverse();
            prop_assert_eq!(slot_f1(&p2, &g2).unwrap(), base);
        }
    }
}
