//! Confusion matrix and the derived classification metrics. Class 1 (CAD)
//! is the positive class.

use std::fmt;

use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::signal_io::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// Matrix obtained by relabelling both classes.
    pub fn swapped(&self) -> Self {
        Self {
            tp: self.tn,
            tn: self.tp,
            fp: self.fn_,
            fn_: self.fp,
        }
    }

    /// 2×2 table, rows = actual class, columns = predicted class.
    pub fn render_table(&self) -> String {
        let w = [self.tn, self.fp, self.fn_, self.tp]
            .iter()
            .map(|v| v.to_string().len())
            .max()
            .unwrap_or(1)
            .max(7);
        format!(
            "{:<16}{:>w$}  {:>w$}\n{:<16}{:>w$}  {:>w$}\n{:<16}{:>w$}  {:>w$}\n",
            "actual \\ pred",
            "non-CAD",
            "CAD",
            "non-CAD",
            self.tn,
            self.fp,
            "CAD",
            self.fn_,
            self.tp,
            w = w
        )
    }
}

pub fn confusion(predicted: &[Label], actual: &[Label]) -> Result<ConfusionMatrix> {
    if predicted.len() != actual.len() {
        return Err(Error::Argument(format!(
            "{} predictions for {} labels",
            predicted.len(),
            actual.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::Argument("no predictions to tally".into()));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &a) in predicted.iter().zip(actual) {
        match (a, p) {
            (Label::Cad, Label::Cad) => cm.tp += 1,
            (Label::NonCad, Label::NonCad) => cm.tn += 1,
            (Label::NonCad, Label::Cad) => cm.fp += 1,
            (Label::Cad, Label::NonCad) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

/// A ratio, or `None` when its denominator is zero.
pub type Metric = Option<f64>;

fn ratio(num: u64, den: u64) -> Metric {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn fmt_metric(m: Metric) -> String {
    match m {
        Some(v) => format!("{v}"),
        None => "undefined".to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub confusion: ConfusionMatrix,
    pub accuracy: Metric,
    pub misclassification_rate: Metric,
    pub precision: Metric,
    pub sensitivity: Metric,
    pub specificity: Metric,
}

pub fn derive_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Argument("confusion matrix is empty".into()));
    }
    Ok(MetricsReport {
        confusion: *cm,
        accuracy: ratio(cm.tp + cm.tn, total),
        misclassification_rate: ratio(cm.fp + cm.fn_, total),
        precision: ratio(cm.tp, cm.tp + cm.fp),
        sensitivity: ratio(cm.tp, cm.tp + cm.fn_),
        specificity: ratio(cm.tn, cm.tn + cm.fp),
    })
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str =
        "tp,tn,fp,fn,accuracy,misclassification_rate,precision,sensitivity,specificity";

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("tp", self.confusion.tp);
        kv.set("tn", self.confusion.tn);
        kv.set("fp", self.confusion.fp);
        kv.set("fn", self.confusion.fn_);
        kv.set("accuracy", fmt_metric(self.accuracy));
        kv.set("misclassification_rate", fmt_metric(self.misclassification_rate));
        kv.set("precision", fmt_metric(self.precision));
        kv.set("sensitivity", fmt_metric(self.sensitivity));
        kv.set("specificity", fmt_metric(self.specificity));
        kv
    }

    pub fn csv_row(&self) -> String {
        let c = &self.confusion;
        format!(
            "{},{},{},{},{},{},{},{},{}",
            c.tp,
            c.tn,
            c.fp,
            c.fn_,
            fmt_metric(self.accuracy),
            fmt_metric(self.misclassification_rate),
            fmt_metric(self.precision),
            fmt_metric(self.sensitivity),
            fmt_metric(self.specificity)
        )
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_kv().render())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Cad, NonCad};

    #[test]
    fn confusion_examples() {
        let cm = confusion(&[Cad, NonCad], &[Cad, NonCad]).unwrap();
        assert_eq!(cm, ConfusionMatrix { tp: 1, tn: 1, fp: 0, fn_: 0 });
        assert_eq!(confusion(&[Cad, Cad], &[NonCad, NonCad]).unwrap().fp, 2);
        assert!(confusion(&[Cad], &[Cad, NonCad]).is_err());
        assert!(confusion(&[], &[]).is_err());
    }

    #[test]
    fn reported_example() {
        let r = derive_metrics(&ConfusionMatrix { tp: 16, tn: 17, fp: 3, fn_: 4 }).unwrap();
        assert!((r.accuracy.unwrap() - 0.825).abs() < 1e-15);
        assert!((r.sensitivity.unwrap() - 0.80).abs() < 1e-15);
        assert!((r.misclassification_rate.unwrap() - 0.175).abs() < 1e-15);
    }

    #[test]
    fn zero_denominators_are_undefined() {
        let r = derive_metrics(&ConfusionMatrix { tp: 0, tn: 5, fp: 0, fn_: 2 }).unwrap();
        assert_eq!(r.precision, None);
        assert_eq!(r.to_kv().get_str("precision"), Some("undefined"));
        assert!(derive_metrics(&ConfusionMatrix::default()).is_err());
    }

    #[test]
    fn all_correct() {
        let r = derive_metrics(&ConfusionMatrix { tp: 4, tn: 6, fp: 0, fn_: 0 }).unwrap();
        assert_eq!(r.accuracy, Some(1.0));
        assert_eq!(r.misclassification_rate, Some(0.0));
    }

    #[test]
    fn table_layout() {
        let t = ConfusionMatrix { tp: 16, tn: 17, fp: 3, fn_: 4 }.render_table();
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("non-CAD") && lines[1].trim_end().ends_with('3'));
        assert!(lines[2].starts_with("CAD") && lines[2].trim_end().ends_with("16"));
    }
}
