//! Exact-span precision/recall/F1 and the four-way error taxonomy.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{Span, SpanSet, ToweInstance};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::towe::ToweModel;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl Prf {
    pub fn from_counts(tp: usize, predicted: usize, gold: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, gold);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
            true_positives: tp,
            predicted,
            gold,
        }
    }
}

/// A predicted span is a hit only if both endpoints equal some gold span.
pub fn span_prf<'a>(pairs: impl IntoIterator<Item = (&'a SpanSet, &'a SpanSet)>) -> Prf {
    let (mut tp, mut np, mut ng) = (0, 0, 0);
    for (gold, pred) in pairs {
        tp += pred.iter().filter(|s| gold.contains(s)).count();
        np += pred.len();
        ng += gold.len();
    }
    Prf::from_counts(tp, np, ng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Correct,
    /// Nothing extracted although gold spans exist.
    Null,
    /// Every prediction is a strict part of a gold span.
    Under,
    /// Every gold span is covered and something extra is extracted.
    Over,
    Other,
}

fn strictly_inside(inner: &Span, outer: &Span) -> bool {
    outer.contains(inner) && inner != outer
}

/// Categorizes one instance. Precedence when several categories apply:
/// null, under, over, other.
pub fn classify_errors(gold: &SpanSet, pred: &SpanSet) -> ErrorKind {
    if gold == pred {
        return ErrorKind::Correct;
    }
    if !gold.is_empty() && pred.is_empty() {
        return ErrorKind::Null;
    }
    if !pred.is_empty() && pred.iter().all(|p| gold.iter().any(|g| strictly_inside(p, g))) {
        return ErrorKind::Under;
    }
    let covered = gold.iter().all(|g| pred.iter().any(|p| p.contains(g)));
    let strict = pred.len() > gold.len() || gold.iter().any(|g| pred.iter().any(|p| strictly_inside(g, p)));
    if covered && strict {
        return ErrorKind::Over;
    }
    ErrorKind::Other
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCounts {
    pub null: usize,
    pub under: usize,
    pub over: usize,
    pub other: usize,
    pub total: usize,
    pub correct: usize,
}

impl ErrorCounts {
    pub fn add(&mut self, kind: ErrorKind) {
        match kind {
            ErrorKind::Correct => {
                self.correct += 1;
                return;
            }
            ErrorKind::Null => self.null += 1,
            ErrorKind::Under => self.under += 1,
            ErrorKind::Over => self.over += 1,
            ErrorKind::Other => self.other += 1,
        }
        self.total += 1;
    }
}

pub fn count_errors<'a>(pairs: impl IntoIterator<Item = (&'a SpanSet, &'a SpanSet)>) -> ErrorCounts {
    let mut c = ErrorCounts::default();
    for (g, p) in pairs {
        c.add(classify_errors(g, p));
    }
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub gold: SpanSet,
    pub predicted: SpanSet,
    pub kind: ErrorKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub errors: ErrorCounts,
    pub instances: Vec<InstanceRecord>,
}

impl EvalReport {
    pub fn from_pairs(pairs: Vec<(SpanSet, SpanSet)>) -> Self {
        let prf = span_prf(pairs.iter().map(|(g, p)| (g, p)));
        let mut errors = ErrorCounts::default();
        let instances = pairs
            .into_iter()
            .map(|(gold, predicted)| {
                let kind = classify_errors(&gold, &predicted);
                errors.add(kind);
                InstanceRecord { gold, predicted, kind }
            })
            .collect();
        Self {
            precision: prf.precision,
            recall: prf.recall,
            f1: prf.f1,
            errors,
            instances,
        }
    }

    /// Aligned plain-text summary: metrics, then the error table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:>10} {:>10} {:>10}", "P", "R", "F1");
        let _ = writeln!(
            s,
            "{:>10.2} {:>10.2} {:>10.2}",
            100.0 * self.precision,
            100.0 * self.recall,
            100.0 * self.f1
        );
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:>6} {:>16} {:>15} {:>7} {:>6}",
            "NULL", "Under-extracted", "Over-extracted", "Others", "Total"
        );
        let e = &self.errors;
        let _ = writeln!(
            s,
            "{:>6} {:>16} {:>15} {:>7} {:>6}",
            e.null, e.under, e.over, e.other, e.total
        );
        s
    }
}

/// Runs the model over `test` and tabulates metrics and error types.
pub fn evaluate<F: Scalar>(model: &ToweModel<F>, test: &[ToweInstance]) -> Result<EvalReport> {
    let pairs = test
        .iter()
        .map(|inst| Ok((inst.opinion_spans(), model.predict_spans(inst.tokens(), inst.target())?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_pairs(pairs))
}

/// Error counts only, in table column order.
pub fn error_table<F: Scalar>(model: &ToweModel<F>, test: &[ToweInstance]) -> Result<ErrorCounts> {
    Ok(evaluate(model, test)?.errors)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(spans: &[(usize, usize)]) -> SpanSet {
        SpanSet::new(spans.iter().map(|&(s, e)| Span::new(s, e)).collect()).unwrap()
    }

    #[test]
    fn prf_examples() {
        let g = set(&[(2, 4)]);
        let p = span_prf([(&g, &g)]);
        assert_eq!((p.precision, p.recall, p.f1), (1.0, 1.0, 1.0));

        let partial = span_prf([(&set(&[(2, 4)]), &set(&[(2, 3)]))]);
        assert_eq!(partial.true_positives, 0);

        let g1 = set(&[(0, 1)]);
        let g2 = set(&[(2, 4)]);
        let p2 = set(&[(2, 4), (5, 6)]);
        let r = span_prf([(&g1, &g1), (&g2, &p2)]);
        assert!((r.precision - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.recall, 1.0);
        assert!((r.f1 - 0.8).abs() < 1e-12);

        let empty = SpanSet::empty();
        assert_eq!(span_prf([(&empty, &empty)]).f1, 0.0);
    }

    #[test]
    fn taxonomy_examples() {
        assert_eq!(classify_errors(&set(&[(2, 4)]), &SpanSet::empty()), ErrorKind::Null);
        assert_eq!(classify_errors(&set(&[(2, 4)]), &set(&[(2, 3)])), ErrorKind::Under);
        assert_eq!(classify_errors(&set(&[(2, 4)]), &set(&[(2, 4), (6, 7)])), ErrorKind::Over);
        assert_eq!(classify_errors(&set(&[(2, 4)]), &set(&[(1, 4)])), ErrorKind::Over);
        assert_eq!(classify_errors(&set(&[(2, 4)]), &set(&[(5, 6)])), ErrorKind::Other);
        assert_eq!(classify_errors(&set(&[(2, 4)]), &set(&[(2, 4)])), ErrorKind::Correct);
        assert_eq!(classify_errors(&SpanSet::empty(), &set(&[(0, 1)])), ErrorKind::Over);
        // one under-extracted plus one redundant span
        assert_eq!(classify_errors(&set(&[(2, 4)]), &set(&[(2, 3), (6, 7)])), ErrorKind::Other);
    }

    #[test]
    fn counts_sum_to_total() {
        let pairs = [
            (set(&[(2, 4)]), SpanSet::empty()),
            (set(&[(2, 4)]), set(&[(2, 3)])),
            (set(&[(2, 4)]), set(&[(2, 4), (6, 7)])),
            (set(&[(2, 4)]), set(&[(0, 1)])),
            (set(&[(2, 4)]), set(&[(2, 4)])),
            (SpanSet::empty(), SpanSet::empty()),
        ];
        let report = EvalReport::from_pairs(pairs.to_vec());
        let e = report.errors;
        assert_eq!((e.null, e.under, e.over, e.other, e.correct), (1, 1, 1, 1, 2));
        assert_eq!(e.total, e.null + e.under + e.over + e.other);
        assert!(report.to_table().contains("Over-extracted"));
    }
}
