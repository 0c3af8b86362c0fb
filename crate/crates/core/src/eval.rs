//! Confusion counts, per-category metrics and the summary report.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CATEGORIES, NUM_CATEGORIES};
use crate::debias::Labels;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("{preds} prediction rows vs {labels} label rows")]
    ShapeMismatch { preds: usize, labels: usize },
    #[error("report needs at least one table")]
    NoTables,
    #[error("non-binary value {value} at row {row}, category {category}")]
    NonBinary { row: usize, category: usize, value: u8 },
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Per-category counts with label 1 as the positive class.
pub fn confusion(preds: &[Labels], labels: &[Labels]) -> Result<[ConfusionCounts; NUM_CATEGORIES]> {
    if preds.len() != labels.len() {
        return Err(EvalError::ShapeMismatch { preds: preds.len(), labels: labels.len() });
    }
    let mut out = [ConfusionCounts::default(); NUM_CATEGORIES];
    for (row, (p, l)) in preds.iter().zip(labels).enumerate() {
        for category in 0..NUM_CATEGORIES {
            for value in [p[category], l[category]] {
                if value > 1 {
                    return Err(EvalError::NonBinary { row, category, value });
                }
            }
            let c = &mut out[category];
            match (p[category], l[category]) {
                (1, 1) => c.tp += 1,
                (1, 0) => c.fp += 1,
                (0, 0) => c.tn += 1,
                _ => c.fn_ += 1,
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub accuracy: f64,
    /// Set when any metric hit a zero denominator and was reported as 0.
    pub warning: bool,
}

fn ratio(num: u64, den: u64, warning: &mut bool) -> f64 {
    if den == 0 {
        *warning = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn metrics(c: &ConfusionCounts) -> MetricRow {
    let mut warning = false;
    let precision = ratio(c.tp, c.tp + c.fp, &mut warning);
    let recall = ratio(c.tp, c.tp + c.fn_, &mut warning);
    // Harmonic mean of P and R, as a single division.
    let f_score = if c.tp > 0 {
        (2 * c.tp) as f64 / (2 * c.tp + c.fp + c.fn_) as f64
    } else {
        warning = true;
        0.0
    };
    let accuracy = ratio(c.tp + c.tn, c.total(), &mut warning);
    MetricRow { precision, recall, f_score, accuracy, warning }
}

/// Positive iff the predicted probability is at least ½.
pub fn threshold_predictions(r: &[f64; NUM_CATEGORIES]) -> Labels {
    std::array::from_fn(|k| u8::from(r[k] >= 0.5))
}

/// Report rows in their fixed display order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelId {
    WordSeq,
    DepTree,
    DepTreeUnscaled,
    LinearSvm,
    Lasso,
}

impl ModelId {
    pub const ALL: [ModelId; 5] = [
        ModelId::WordSeq,
        ModelId::DepTree,
        ModelId::DepTreeUnscaled,
        ModelId::LinearSvm,
        ModelId::Lasso,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ModelId::WordSeq => "Word Seq",
            ModelId::DepTree => "Dep. Tree",
            ModelId::DepTreeUnscaled => "Dep. Tree (Unscaled)",
            ModelId::LinearSvm => "LinearSVM",
            ModelId::Lasso => "LASSO",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            ModelId::WordSeq => "word-seq",
            ModelId::DepTree => "dep-tree",
            ModelId::DepTreeUnscaled => "dep-tree-unscaled",
            ModelId::LinearSvm => "svm",
            ModelId::Lasso => "lasso",
        }
    }

    pub fn from_slug(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.slug() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub model: ModelId,
    pub rows: [MetricRow; NUM_CATEGORIES],
}

impl MetricsTable {
    pub fn from_counts(model: ModelId, counts: &[ConfusionCounts; NUM_CATEGORIES]) -> Self {
        Self { model, rows: std::array::from_fn(|k| metrics(&counts[k])) }
    }

    pub fn evaluate(model: ModelId, preds: &[Labels], labels: &[Labels]) -> Result<Self> {
        Ok(Self::from_counts(model, &confusion(preds, labels)?))
    }

    /// Macro average over the categories; flagged if any row is.
    pub fn average(&self) -> MetricRow {
        let n = NUM_CATEGORIES as f64;
        let mean = |f: fn(&MetricRow) -> f64| self.rows.iter().map(f).sum::<f64>() / n;
        MetricRow {
            precision: mean(|r| r.precision),
            recall: mean(|r| r.recall),
            f_score: mean(|r| r.f_score),
            accuracy: mean(|r| r.accuracy),
            warning: self.rows.iter().any(|r| r.warning),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    pub text: String,
    pub csv: String,
}

fn flag(w: bool) -> &'static str {
    if w {
        "*"
    } else {
        ""
    }
}

/// Average-metric table plus a per-category recall table, as aligned text
/// and as CSV (`model,category,precision,recall,f_score,accuracy`, with an
/// `Average` row per model).
pub fn report(tables: &[MetricsTable]) -> Result<Report> {
    if tables.is_empty() {
        return Err(EvalError::NoTables);
    }
    let mut sorted: Vec<&MetricsTable> = tables.iter().collect();
    sorted.sort_by_key(|t| t.model);

    let mut text = String::new();
    let name_w = sorted.iter().map(|t| t.model.label().len()).max().unwrap_or(5).max(5);
    writeln!(text, "{:<name_w$}  {:>8}  {:>8}  {:>8}  {:>8}", "Model", "Avg. F", "Avg. P", "Avg. R", "Avg. Acc").unwrap();
    for t in &sorted {
        let a = t.average();
        writeln!(
            text,
            "{:<name_w$}  {:>8.2}  {:>8.2}  {:>8.2}  {:>8.2}{}",
            t.model.label(),
            a.f_score,
            a.precision,
            a.recall,
            a.accuracy,
            flag(a.warning)
        )
        .unwrap();
    }
    text.push('\n');

    let cat_w = CATEGORIES.iter().map(|c| c.len()).max().unwrap_or(7).max(7);
    let col_w = |t: &&MetricsTable| t.model.label().len().max(6);
    write!(text, "{:<cat_w$}", "Recall").unwrap();
    for t in &sorted {
        write!(text, "  {:>w$}", t.model.label(), w = col_w(t)).unwrap();
    }
    text.push('\n');
    for (k, name) in CATEGORIES.iter().enumerate() {
        write!(text, "{name:<cat_w$}").unwrap();
        for t in &sorted {
            let r = t.rows[k];
            write!(text, "  {:>w$}", format!("{:.2}{}", r.recall, flag(r.warning)), w = col_w(t)).unwrap();
        }
        text.push('\n');
    }
    write!(text, "{:<cat_w$}", "Average").unwrap();
    for t in &sorted {
        let a = t.average();
        write!(text, "  {:>w$}", format!("{:.2}{}", a.recall, flag(a.warning)), w = col_w(t)).unwrap();
    }
    text.push('\n');
    if sorted.iter().any(|t| t.rows.iter().any(|r| r.warning)) {
        text.push_str("\n* zero denominator in at least one metric; reported as 0\n");
    }

    let mut csv = String::from("model,category,precision,recall,f_score,accuracy\n");
    for t in &sorted {
        let rows = t.rows.iter().zip(CATEGORIES).map(|(r, c)| (c, *r));
        for (category, r) in rows.chain(std::iter::once(("Average", t.average()))) {
            writeln!(
                csv,
                "{},{},{:.6},{:.6},{:.6},{:.6}",
                t.model.slug(),
                category,
                r.precision,
                r.recall,
                r.f_score,
                r.accuracy
            )
            .unwrap();
        }
    }
    Ok(Report { text, csv })
}
