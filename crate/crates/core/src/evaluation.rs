//! Confusion matrices, accuracy/precision/recall/F1, and the comparison
//! tables (per-classifier metrics and per-fraction selection impact).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("y_true has {truth} labels but y_pred has {pred}")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("label {label} at position {index} is outside [0, {classes})")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        classes: usize,
    },
    #[error("confusion matrix is empty")]
    Empty,
}

/// `counts[i][j]`: samples of true class `i` predicted as `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|row| row[j]).sum()
    }
}

pub fn confusion(
    y_true: &[usize],
    y_pred: &[usize],
    k: usize,
) -> Result<ConfusionMatrix, EvalError> {
    if y_true.len() != y_pred.len() {
        return Err(EvalError::LengthMismatch {
            truth: y_true.len(),
            pred: y_pred.len(),
        });
    }
    let mut counts = vec![vec![0u64; k]; k];
    for (index, (&t, &p)) in y_true.iter().zip(y_pred).enumerate() {
        for label in [t, p] {
            if label >= k {
                return Err(EvalError::LabelOutOfRange {
                    index,
                    label,
                    classes: k,
                });
            }
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub support: Vec<u64>,
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
    pub precision_weighted: f64,
    pub recall_weighted: f64,
    pub f1_weighted: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricSet, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::Empty);
    }
    let k = cm.num_classes();
    let support: Vec<u64> = (0..k).map(|c| cm.row_sum(c)).collect();
    let precision: Vec<f64> = (0..k)
        .map(|c| ratio(cm.counts[c][c], cm.col_sum(c)))
        .collect();
    let recall: Vec<f64> = (0..k).map(|c| ratio(cm.counts[c][c], support[c])).collect();
    let f1: Vec<f64> = precision
        .iter()
        .zip(&recall)
        .map(|(&p, &r)| {
            if p + r == 0.0 {
                0.0
            } else {
                2.0 * p * r / (p + r)
            }
        })
        .collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / k as f64;
    let weighted = |v: &[f64]| {
        v.iter()
            .zip(&support)
            .map(|(m, &s)| m * s as f64)
            .sum::<f64>()
            / total as f64
    };
    let accuracy = cm.trace() as f64 / total as f64;
    Ok(MetricSet {
        accuracy,
        precision_macro: mean(&precision),
        recall_macro: mean(&recall),
        f1_macro: mean(&f1),
        precision_weighted: weighted(&precision),
        // support_c * recall_c is the diagonal count, so the weighted mean
        // collapses to trace / total.
        recall_weighted: accuracy,
        f1_weighted: weighted(&f1),
        precision,
        recall,
        f1,
        support,
    })
}

// ---------------------------------------------------------------------------
// Reports

/// One evaluated (feature set, selector, fraction, classifier) configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub feature_set: String,
    /// `None` for the full feature set.
    pub selector: Option<String>,
    pub fraction: f64,
    pub dimension: usize,
    pub classifier: String,
    pub metrics: MetricSet,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierRow {
    pub classifier: String,
    pub metrics: MetricSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpactRow {
    pub fraction: f64,
    pub dimension: usize,
    pub best_classifier: String,
    pub accuracy: f64,
    /// `None` marks the baseline row.
    pub impact: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpactTable {
    pub selector: String,
    pub rows: Vec<ImpactRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSetSection {
    pub feature_set: String,
    pub classifier_rows: Vec<ClassifierRow>,
    pub impact_tables: Vec<ImpactTable>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub cells: Vec<ReportCell>,
    pub sections: Vec<FeatureSetSection>,
}

fn unique_in_order<'a>(items: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for s in items {
        if !out.iter().any(|o| o == s) {
            out.push(s.to_string());
        }
    }
    out
}

/// Highest accuracy wins; ties go to the earliest cell.
fn best<'a>(cells: impl Iterator<Item = &'a ReportCell>) -> Option<&'a ReportCell> {
    cells.fold(None, |acc: Option<&ReportCell>, c| match acc {
        Some(b) if b.metrics.accuracy >= c.metrics.accuracy => Some(b),
        _ => Some(c),
    })
}

/// Groups cells by feature set. Full-set cells (no selector) form the
/// classifier table and the baseline; each selector gets an impact table
/// with one row per fraction, largest fraction first.
pub fn build_report(cells: Vec<ReportCell>) -> EvalReport {
    let mut sections = Vec::new();
    for fs in unique_in_order(cells.iter().map(|c| c.feature_set.as_str())) {
        let in_set: Vec<&ReportCell> = cells.iter().filter(|c| c.feature_set == fs).collect();
        let full: Vec<&ReportCell> = in_set
            .iter()
            .copied()
            .filter(|c| c.selector.is_none())
            .collect();
        let classifier_rows = full
            .iter()
            .map(|c| ClassifierRow {
                classifier: c.classifier.clone(),
                metrics: c.metrics.clone(),
            })
            .collect();
        let baseline = best(full.iter().copied());
        let baseline_row = baseline.map(|b| ImpactRow {
            fraction: 1.0,
            dimension: b.dimension,
            best_classifier: b.classifier.clone(),
            accuracy: b.metrics.accuracy,
            impact: None,
        });

        let selectors = unique_in_order(in_set.iter().filter_map(|c| c.selector.as_deref()));
        let mut impact_tables = Vec::new();
        for sel in &selectors {
            let of_sel: Vec<&ReportCell> = in_set
                .iter()
                .copied()
                .filter(|c| c.selector.as_deref() == Some(sel.as_str()))
                .collect();
            let mut fractions: Vec<f64> = Vec::new();
            for c in &of_sel {
                if !fractions.contains(&c.fraction) {
                    fractions.push(c.fraction);
                }
            }
            fractions.sort_by(|a, b| b.total_cmp(a));
            let mut rows: Vec<ImpactRow> = baseline_row.iter().cloned().collect();
            for p in fractions {
                let winner = best(of_sel.iter().copied().filter(|c| c.fraction == p))
                    .expect("fraction has cells");
                rows.push(ImpactRow {
                    fraction: p,
                    dimension: winner.dimension,
                    best_classifier: winner.classifier.clone(),
                    accuracy: winner.metrics.accuracy,
                    impact: Some(
                        winner.metrics.accuracy
                            - baseline.map_or(winner.metrics.accuracy, |b| b.metrics.accuracy),
                    ),
                });
            }
            impact_tables.push(ImpactTable {
                selector: sel.clone(),
                rows,
            });
        }
        if selectors.is_empty() {
            if let Some(row) = baseline_row {
                impact_tables.push(ImpactTable {
                    selector: "none".into(),
                    rows: vec![row],
                });
            }
        }
        sections.push(FeatureSetSection {
            feature_set: fs,
            classifier_rows,
            impact_tables,
        });
    }
    EvalReport { cells, sections }
}

/// `x` as a percentage with two decimals, rounding halves away from zero.
pub fn format_percent(x: f64) -> String {
    let hundredths = round_half_up(x * 1e4);
    let sign = if hundredths < 0 { "-" } else { "" };
    let a = hundredths.unsigned_abs();
    format!("{sign}{}.{:02}", a / 100, a % 100)
}

/// Signed impact string: `+0.09%`, `-0.23%`, `+0.00%`.
pub fn format_impact(delta: f64) -> String {
    let hundredths = round_half_up(delta * 1e4);
    let sign = if hundredths < 0 { "-" } else { "+" };
    let a = hundredths.unsigned_abs();
    format!("{sign}{}.{:02}%", a / 100, a % 100)
}

fn round_half_up(v: f64) -> i64 {
    // The nudge keeps decimal halves such as 0.0009 * 1e4 = 8.999999... on the
    // intended side.
    let nudged = v.abs() + 1e-7;
    let r = (nudged + 0.5).floor() as i64;
    if v < 0.0 {
        -r
    } else {
        r
    }
}

/// `0.5` -> `50%`, `1.0` -> `100% (Full set)`, `0.125` -> `12.50%`.
pub fn fraction_label(p: f64, baseline: bool) -> String {
    if baseline {
        return "100% (Full set)".into();
    }
    let pct = p * 100.0;
    if (pct - pct.round()).abs() < 1e-9 {
        format!("{}%", pct.round() as i64)
    } else {
        format!("{}%", format_percent(p))
    }
}

/// Number formatting used in every report CSV.
pub fn csv_number(x: f64) -> String {
    format!("{x:.6}")
}

pub const REPORT_CSV_HEADER: &str = "feature_set,selector,fraction,dimension,classifier,accuracy,precision_macro,recall_macro,f1_macro,precision_weighted,recall_weighted,f1_weighted";

/// One row per cell, in cell order.
pub fn report_csv(report: &EvalReport) -> String {
    let mut out = String::from(REPORT_CSV_HEADER);
    out.push('\n');
    for c in &report.cells {
        let m = &c.metrics;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            c.feature_set,
            c.selector.as_deref().unwrap_or("none"),
            c.fraction,
            c.dimension,
            c.classifier,
            csv_number(m.accuracy),
            csv_number(m.precision_macro),
            csv_number(m.recall_macro),
            csv_number(m.f1_macro),
            csv_number(m.precision_weighted),
            csv_number(m.recall_weighted),
            csv_number(m.f1_weighted),
        );
    }
    out
}

/// Confusion matrix as CSV; header row lists predicted classes.
pub fn confusion_csv(cm: &ConfusionMatrix, class_names: &[String]) -> String {
    let name = |i: usize| class_names.get(i).cloned().unwrap_or_else(|| i.to_string());
    let mut out = String::from("true\\predicted");
    for j in 0..cm.num_classes() {
        out.push(',');
        out.push_str(&name(j));
    }
    out.push('\n');
    for (i, row) in cm.counts.iter().enumerate() {
        out.push_str(&name(i));
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

/// Per-fraction impact tables as CSV.
pub fn impact_csv(report: &EvalReport) -> String {
    let mut out = String::from(
        "feature_set,selector,feature_subset,dimension,best_classifier,accuracy,impact\n",
    );
    for s in &report.sections {
        for t in &s.impact_tables {
            for r in &t.rows {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    s.feature_set,
                    t.selector,
                    fraction_label(r.fraction, r.impact.is_none()),
                    r.dimension,
                    r.best_classifier,
                    format_percent(r.accuracy),
                    r.impact
                        .map_or_else(|| "Baseline".to_string(), format_impact),
                );
            }
        }
    }
    out
}

fn selector_title(tag: &str) -> String {
    match tag {
        "gbdt" => "GBDT (boosting)".into(),
        "rf" => "RF (bagging)".into(),
        "lasso" => "Lasso (L1)".into(),
        other => other.into(),
    }
}

fn pipe_table(out: &mut String, header: &[&str], rows: &[Vec<String>]) {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        format!("| {} |\n", padded.join(" | "))
    };
    out.push_str(&line(header.to_vec()));
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    out.push_str(&format!("|-{}-|\n", rule.join("-|-")));
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
    }
}

/// Plain-text rendering: a per-classifier metric table per feature set
/// (macro averages) followed by one impact table per selector.
pub fn render_tables(report: &EvalReport) -> String {
    let mut out = String::new();
    for s in &report.sections {
        if !s.classifier_rows.is_empty() {
            let _ = writeln!(
                out,
                "Performance of classifiers on {} features (%, macro average)",
                s.feature_set
            );
            let rows: Vec<Vec<String>> = s
                .classifier_rows
                .iter()
                .map(|r| {
                    vec![
                        r.classifier.clone(),
                        format_percent(r.metrics.accuracy),
                        format_percent(r.metrics.recall_macro),
                        format_percent(r.metrics.precision_macro),
                        format_percent(r.metrics.f1_macro),
                    ]
                })
                .collect();
            pipe_table(
                &mut out,
                &["Model", "ACC", "Recall", "Precision", "F1"],
                &rows,
            );
            out.push('\n');
        }
        for t in &s.impact_tables {
            let _ = writeln!(
                out,
                "Impact of feature selection using {} on {} features (%)",
                selector_title(&t.selector),
                s.feature_set
            );
            let rows: Vec<Vec<String>> = t
                .rows
                .iter()
                .map(|r| {
                    vec![
                        fraction_label(r.fraction, r.impact.is_none()),
                        r.dimension.to_string(),
                        r.best_classifier.clone(),
                        format_percent(r.accuracy),
                        r.impact
                            .map_or_else(|| "Baseline".to_string(), format_impact),
                    ]
                })
                .collect();
            pipe_table(
                &mut out,
                &[
                    "Feature subset",
                    "Dimension",
                    "Best classifier",
                    "Accuracy",
                    "Impact",
                ],
                &rows,
            );
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cm(rows: &[&[u64]]) -> ConfusionMatrix {
        ConfusionMatrix {
            counts: rows.iter().map(|r| r.to_vec()).collect(),
        }
    }

    #[test]
    fn hand_counted_confusion() {
        let c = confusion(&[0, 0, 1, 2], &[0, 1, 1, 2], 3).unwrap();
        assert_eq!(c, cm(&[&[1, 1, 0], &[0, 1, 0], &[0, 0, 1]]));
    }

    #[test]
    fn perfect_predictions_diagonal() {
        let y = [0, 1, 1, 2, 2, 2];
        let c = confusion(&y, &y, 3).unwrap();
        assert_eq!(c, cm(&[&[1, 0, 0], &[0, 2, 0], &[0, 0, 3]]));
        let m = metrics(&c).unwrap();
        for v in [
            m.accuracy,
            m.precision_macro,
            m.recall_macro,
            m.f1_macro,
            m.f1_weighted,
        ] {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn confusion_errors() {
        assert_eq!(
            confusion(&[0, 1], &[0], 2),
            Err(EvalError::LengthMismatch { truth: 2, pred: 1 })
        );
        assert_eq!(
            confusion(&[0, 3], &[0, 1], 2),
            Err(EvalError::LabelOutOfRange {
                index: 1,
                label: 3,
                classes: 2
            })
        );
    }

    #[test]
    fn two_class_hand_arithmetic() {
        let m = metrics(&cm(&[&[50, 10], &[10, 30]])).unwrap();
        assert_eq!(m.accuracy, 0.8);
        let expected = (50.0 / 60.0 + 30.0 / 40.0) / 2.0;
        assert!((m.precision_macro - expected).abs() < 1e-15);
        assert!((m.recall_macro - expected).abs() < 1e-15);
        assert!((m.precision_macro - 0.791_666_666_666_666_6).abs() < 1e-12);
    }

    #[test]
    fn empty_columns_give_zero_precision() {
        let m = metrics(&cm(&[&[3, 0], &[2, 0]])).unwrap();
        assert_eq!(m.precision[1], 0.0);
        assert_eq!(m.recall[1], 0.0);
        assert_eq!(m.f1[1], 0.0);
        assert_eq!(metrics(&cm(&[&[0, 0], &[0, 0]])), Err(EvalError::Empty));
    }

    #[test]
    fn percent_and_impact_formatting() {
        assert_eq!(format_percent(0.8599), "85.99");
        assert_eq!(format_percent(0.85875), "85.88");
        assert_eq!(format_impact(0.8599 - 0.8590), "+0.09%");
        assert_eq!(format_impact(0.8565 - 0.8588), "-0.23%");
        assert_eq!(format_impact(0.0), "+0.00%");
        assert_eq!(fraction_label(0.05, false), "5%");
        assert_eq!(fraction_label(1.0, true), "100% (Full set)");
    }

    fn cell(
        selector: Option<&str>,
        fraction: f64,
        dim: usize,
        clf: &str,
        acc_pm: u64,
    ) -> ReportCell {
        // acc_pm correct out of 10000
        let c = cm(&[&[acc_pm, 10_000 - acc_pm], &[0, 0]]);
        ReportCell {
            feature_set: "fs".into(),
            selector: selector.map(str::to_string),
            fraction,
            dimension: dim,
            classifier: clf.into(),
            metrics: metrics(&c).unwrap(),
            confusion: c,
        }
    }

    #[test]
    fn single_cell_baseline() {
        let r = build_report(vec![cell(None, 1.0, 10, "ET", 8588)]);
        assert_eq!(r.sections.len(), 1);
        assert_eq!(r.sections[0].classifier_rows.len(), 1);
        let t = &r.sections[0].impact_tables[0];
        assert_eq!(t.rows.len(), 1);
        assert!(t.rows[0].impact.is_none());
        assert!(impact_csv(&r)
            .lines()
            .nth(1)
            .unwrap()
            .ends_with(",Baseline"));
    }

    #[test]
    fn impact_against_full_set_best() {
        let r = build_report(vec![
            cell(None, 1.0, 10, "LR", 8500),
            cell(None, 1.0, 10, "ET", 8590),
            cell(Some("gbdt"), 0.5, 5, "LR", 8599),
            cell(Some("gbdt"), 0.5, 5, "ET", 8400),
        ]);
        let t = &r.sections[0].impact_tables[0];
        assert_eq!(t.rows[0].best_classifier, "ET");
        assert_eq!(t.rows[1].best_classifier, "LR");
        assert_eq!(format_impact(t.rows[1].impact.unwrap()), "+0.09%");
    }

    #[test]
    fn best_classifier_ties_go_to_first() {
        let r = build_report(vec![
            cell(None, 1.0, 4, "KNN", 9000),
            cell(None, 1.0, 4, "SVM", 9000),
        ]);
        assert_eq!(
            r.sections[0].impact_tables[0].rows[0].best_classifier,
            "KNN"
        );
    }
}
