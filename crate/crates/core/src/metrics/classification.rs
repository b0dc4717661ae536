use std::collections::BTreeSet;

use super::{check_aligned, f1_from_counts, names, ratio, MetricError, ScoreReport};
use crate::model::{LabelSet, TaskKind};

#[derive(Debug, Clone, Copy, Default)]
struct Counts {
    tp: usize,
    fp: usize,
    fn_: usize,
}

fn check_known(labels: &LabelSet, label: &str) -> Result<usize, MetricError> {
    labels
        .position(label)
        .ok_or_else(|| MetricError::UnknownLabel(label.to_string()))
}

/// Pooled and per-class counts from one-vs-rest decisions.
fn tally<'a, I>(labels: &LabelSet, items: I) -> Result<Vec<Counts>, MetricError>
where
    I: IntoIterator<Item = (BTreeSet<&'a str>, BTreeSet<&'a str>)>,
{
    let mut counts = vec![Counts::default(); labels.len()];
    for (gold, pred) in items {
        for g in &gold {
            let i = check_known(labels, g)?;
            if pred.contains(g) {
                counts[i].tp += 1;
            } else {
                counts[i].fn_ += 1;
            }
        }
        for p in pred.difference(&gold) {
            let i = check_known(labels, p)?;
            counts[i].fp += 1;
        }
    }
    Ok(counts)
}

fn micro_macro(counts: &[Counts]) -> (Counts, f64, f64) {
    let pooled = counts.iter().fold(Counts::default(), |acc, c| Counts {
        tp: acc.tp + c.tp,
        fp: acc.fp + c.fp,
        fn_: acc.fn_ + c.fn_,
    });
    let micro = f1_from_counts(pooled.tp, pooled.fp, pooled.fn_);
    // classes absent from both sides contribute 0
    let macro_ = counts
        .iter()
        .map(|c| f1_from_counts(c.tp, c.fp, c.fn_))
        .sum::<f64>()
        / counts.len() as f64;
    (pooled, micro, macro_)
}

/// Single-label classification: accuracy in percent, micro and macro F1 as
/// fractions.
pub fn classification_report(
    gold: &[String],
    pred: &[String],
    labels: &LabelSet,
) -> Result<ScoreReport, MetricError> {
    check_aligned(gold.len(), pred.len())?;
    if gold.is_empty() {
        return Err(MetricError::Empty);
    }
    let counts = tally(
        labels,
        gold.iter().zip(pred).map(|(g, p)| {
            (
                BTreeSet::from([g.as_str()]),
                BTreeSet::from([p.as_str()]),
            )
        }),
    )?;
    let (_, micro, macro_) = micro_macro(&counts);
    let correct = gold.iter().zip(pred).filter(|(g, p)| g == p).count();
    Ok(ScoreReport::new(TaskKind::Intent, gold.len())
        .with(names::MICRO, micro)
        .with(names::MACRO, macro_)
        .with(names::ACC, 100.0 * ratio(correct, gold.len())))
}

/// Multi-label classification: micro and macro F1 in percent, exact-match
/// accuracy as a fraction.
pub fn multilabel_f1(
    gold: &[BTreeSet<String>],
    pred: &[BTreeSet<String>],
    labels: &LabelSet,
) -> Result<ScoreReport, MetricError> {
    check_aligned(gold.len(), pred.len())?;
    if gold.is_empty() {
        return Err(MetricError::Empty);
    }
    let counts = tally(
        labels,
        gold.iter().zip(pred).map(|(g, p)| {
            (
                g.iter().map(String::as_str).collect(),
                p.iter().map(String::as_str).collect(),
            )
        }),
    )?;
    let (pooled, micro, macro_) = micro_macro(&counts);
    let exact = gold.iter().zip(pred).filter(|(g, p)| g == p).count();
    Ok(ScoreReport::new(TaskKind::Act, gold.len())
        .with(names::MICRO, 100.0 * micro)
        .with(names::MACRO, 100.0 * macro_)
        .with(names::ACC, ratio(exact, gold.len()))
        .with(names::MICRO_PRECISION, 100.0 * ratio(pooled.tp, pooled.tp + pooled.fp))
        .with(names::MICRO_RECALL, 100.0 * ratio(pooled.tp, pooled.tp + pooled.fn_)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    fn set(v: &[&str]) -> BTreeSet<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn all_correct() {
        let labels = LabelSet::new(["a", "b"]).unwrap();
        let r = classification_report(&s(&["a", "b"]), &s(&["a", "b"]), &labels).unwrap();
        assert_eq!(r.get(names::ACC), Some(100.0));
        assert_eq!(r.get(names::MICRO), Some(1.0));
        assert_eq!(r.get(names::MACRO), Some(1.0));
    }

    #[test]
    fn half_correct() {
        let labels = LabelSet::new(["a", "b"]).unwrap();
        let r = classification_report(&s(&["a", "b"]), &s(&["a", "a"]), &labels).unwrap();
        assert_eq!(r.get(names::ACC), Some(50.0));
        assert_eq!(r.get(names::MICRO), Some(0.5));
        // a: tp1 fp1 -> 2/3; b: fn1 -> 0
        assert!((r.get(names::MACRO).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_item_and_errors() {
        let labels = LabelSet::new(["a", "b", "c"]).unwrap();
        let r = classification_report(&s(&["c"]), &s(&["c"]), &labels).unwrap();
        assert_eq!(r.get(names::ACC), Some(100.0));
        // absent classes count as 0 in the macro mean
        assert!((r.get(names::MACRO).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(classification_report(&[], &[], &labels), Err(MetricError::Empty));
        assert_eq!(
            classification_report(&s(&["z"]), &s(&["a"]), &labels),
            Err(MetricError::UnknownLabel("z".into()))
        );
    }

    #[test]
    fn multilabel_partial() {
        let labels = LabelSet::new(["inform", "request", "bye"]).unwrap();
        let r = multilabel_f1(&[set(&["inform", "request"])], &[set(&["inform"])], &labels).unwrap();
        assert_eq!(r.get(names::MICRO_PRECISION), Some(100.0));
        assert_eq!(r.get(names::MICRO_RECALL), Some(50.0));
        assert!((r.get(names::MICRO).unwrap() - 200.0 / 3.0).abs() < 1e-9);
        assert_eq!(r.get(names::ACC), Some(0.0));
    }

    #[test]
    fn multilabel_perfect_and_empty() {
        let labels = LabelSet::new(["inform", "request"]).unwrap();
        let gold = vec![set(&["inform"]), set(&["inform", "request"]), set(&[])];
        let r = multilabel_f1(&gold, &gold, &labels).unwrap();
        assert_eq!(r.get(names::MICRO), Some(100.0));
        assert_eq!(r.get(names::ACC), Some(1.0));

        let empty = vec![set(&[]); 3];
        let r = multilabel_f1(&gold, &empty, &labels).unwrap();
        assert_eq!(r.get(names::MICRO), Some(0.0));
        assert!(multilabel_f1(&[], &[], &labels).is_err());
    }

    #[test]
    fn multilabel_matches_single_label_micro() {
        let labels = LabelSet::new(["a", "b", "c"]).unwrap();
        let gold = s(&["a", "b", "c", "a"]);
        let pred = s(&["a", "c", "c", "b"]);
        let single = classification_report(&gold, &pred, &labels).unwrap();
        let multi = multilabel_f1(
            &gold.iter().map(|g| set(&[g])).collect::<Vec<_>>(),
            &pred.iter().map(|p| set(&[p])).collect::<Vec<_>>(),
            &labels,
        )
        .unwrap();
        assert!((multi.get(names::MICRO).unwrap() - 100.0 * single.get(names::MICRO).unwrap()).abs() < 1e-9);
    }
}
