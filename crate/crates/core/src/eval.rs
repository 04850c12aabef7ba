//! Evaluation: binary metrics, per-class detection tables and confusion
//! matrices for management recommendations.
//!
//! Ratios with a zero denominator are `None` and print as `n/a`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{detected, dice, Mask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Management {
    Discharge,
    Monitoring,
    Surgery,
}

impl Management {
    /// Report column order.
    pub const ALL: [Management; 3] = [Management::Discharge, Management::Monitoring, Management::Surgery];

    pub fn name(self) -> &'static str {
        match self {
            Management::Discharge => "discharge",
            Management::Monitoring => "monitoring",
            Management::Surgery => "surgery",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Management::Discharge => "Discharge",
            Management::Monitoring => "Monitoring",
            Management::Surgery => "Surgery",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::UnknownLabel(s.to_string()))
    }
}

pub fn format_ratio(r: Option<f64>) -> String {
    r.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"))
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinaryMetrics {
    pub accuracy: f64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub r#fn: usize,
}

/// One-vs-rest metrics for class `positive`.
pub fn binary_metrics(preds: &[usize], truths: &[usize], positive: usize) -> Result<BinaryMetrics> {
    if preds.len() != truths.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} truths",
            preds.len(),
            truths.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Empty("prediction list"));
    }
    let (mut tp, mut tn, mut fp, mut fneg) = (0, 0, 0, 0);
    for (&p, &t) in preds.iter().zip(truths) {
        match (p == positive, t == positive) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
        }
    }
    Ok(BinaryMetrics {
        accuracy: (tp + tn) as f64 / preds.len() as f64,
        sensitivity: ratio(tp, tp + fneg),
        specificity: ratio(tn, tn + fp),
        tp,
        tn,
        fp,
        r#fn: fneg,
    })
}

/// Fraction of equal entries.
pub fn accuracy(preds: &[usize], truths: &[usize]) -> Result<f64> {
    if preds.len() != truths.len() {
        return Err(Error::InvalidArgument("length mismatch".into()));
    }
    if preds.is_empty() {
        return Err(Error::Empty("prediction list"));
    }
    Ok(preds.iter().zip(truths).filter(|(p, t)| p == t).count() as f64 / preds.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionRecord {
    pub class: usize,
    pub dice: f64,
    pub detected: bool,
}

pub fn detection_record(pred: &Mask, gt: &Mask, class: usize, cutoff: f64) -> Result<DetectionRecord> {
    if gt.is_empty() {
        return Err(Error::Empty("ground-truth mass mask"));
    }
    Ok(DetectionRecord { class, dice: dice(pred, gt)?, detected: detected(pred, gt, cutoff)? })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRow {
    pub class: usize,
    pub cases: usize,
    pub dice: f64,
    pub detection_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionTable {
    /// Non-empty classes, in the requested order.
    pub rows: Vec<DetectionRow>,
    pub micro_dice: f64,
    pub micro_rate: f64,
    pub macro_dice: f64,
    pub macro_rate: f64,
    /// One message per requested class without cases.
    pub warnings: Vec<String>,
}

/// Per-class mean Dice and detection rate for `classes`; micro pools all
/// records, macro averages the non-empty classes.
pub fn detection_table_from_records(records: &[DetectionRecord], classes: &[usize]) -> Result<DetectionTable> {
    if records.is_empty() {
        return Err(Error::Empty("detection cases"));
    }
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for &c in classes {
        let bucket: Vec<&DetectionRecord> = records.iter().filter(|r| r.class == c).collect();
        if bucket.is_empty() {
            let msg = format!("class {c} has no cases; excluded from macro averages");
            log::warn!("{msg}");
            warnings.push(msg);
            continue;
        }
        let n = bucket.len();
        rows.push(DetectionRow {
            class: c,
            cases: n,
            dice: bucket.iter().map(|r| r.dice).sum::<f64>() / n as f64,
            detection_rate: bucket.iter().filter(|r| r.detected).count() as f64 / n as f64,
        });
    }
    if let Some(r) = records.iter().find(|r| !classes.contains(&r.class)) {
        return Err(Error::InvalidArgument(format!("case of unlisted class {}", r.class)));
    }
    let n = records.len() as f64;
    let k = rows.len() as f64;
    Ok(DetectionTable {
        micro_dice: records.iter().map(|r| r.dice).sum::<f64>() / n,
        micro_rate: records.iter().filter(|r| r.detected).count() as f64 / n,
        macro_dice: rows.iter().map(|r| r.dice).sum::<f64>() / k,
        macro_rate: rows.iter().map(|r| r.detection_rate).sum::<f64>() / k,
        rows,
        warnings,
    })
}

pub fn detection_table(cases: &[(Mask, Mask, usize)], classes: &[usize], cutoff: f64) -> Result<DetectionTable> {
    let records = cases
        .iter()
        .map(|(p, g, c)| detection_record(p, g, *c, cutoff))
        .collect::<Result<Vec<_>>>()?;
    detection_table_from_records(&records, classes)
}

impl DetectionTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,cases,dice,detection_rate\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{:.6},{:.6}", r.class, r.cases, r.dice, r.detection_rate);
        }
        let total: usize = self.rows.iter().map(|r| r.cases).sum();
        let _ = writeln!(out, "micro,{total},{:.6},{:.6}", self.micro_dice, self.micro_rate);
        let _ = writeln!(out, "macro,{},{:.6},{:.6}", self.rows.len(), self.macro_dice, self.macro_rate);
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<8} {:>6} {:>8} {:>10}\n", "class", "cases", "dice", "detected");
        for r in &self.rows {
            let _ = writeln!(out, "{:<8} {:>6} {:>8.3} {:>9.1}%", r.class, r.cases, r.dice, 100.0 * r.detection_rate);
        }
        let total: usize = self.rows.iter().map(|r| r.cases).sum();
        let _ = writeln!(out, "{:<8} {:>6} {:>8.3} {:>9.1}%", "micro", total, self.micro_dice, 100.0 * self.micro_rate);
        let _ = writeln!(out, "{:<8} {:>6} {:>8.3} {:>9.1}%", "macro", "", self.macro_dice, 100.0 * self.macro_rate);
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }
}

/// Rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>) -> Self {
        let k = labels.len();
        Self { labels, counts: vec![vec![0; k]; k] }
    }

    /// Zero-based indices.
    pub fn from_indices(labels: Vec<String>, preds: &[usize], truths: &[usize]) -> Result<Self> {
        if preds.len() != truths.len() {
            return Err(Error::InvalidArgument("length mismatch".into()));
        }
        let mut m = Self::new(labels);
        let k = m.labels.len();
        for (&p, &t) in preds.iter().zip(truths) {
            if p >= k || t >= k {
                return Err(Error::InvalidArgument(format!("class index {} out of range", p.max(t))));
            }
            m.counts[t][p] += 1;
        }
        Ok(m)
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, row: usize) -> usize {
        self.counts[row].iter().sum()
    }

    pub fn row_fractions(&self, row: usize) -> Vec<Option<f64>> {
        let n = self.row_sum(row);
        self.counts[row].iter().map(|&c| ratio(c, n)).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("truth,n,{}\n", self.labels.join(","));
        for (r, label) in self.labels.iter().enumerate() {
            let cells: Vec<String> = self.counts[r].iter().map(|c| c.to_string()).collect();
            let _ = writeln!(out, "{label},{},{}", self.row_sum(r), cells.join(","));
        }
        out
    }

    /// `Label (n=N)` rows with `count (pct%)` cells, percentages rounded to
    /// whole numbers.
    pub fn to_table(&self) -> String {
        let heads: Vec<String> = self
            .labels
            .iter()
            .enumerate()
            .map(|(r, l)| format!("{l} (n={})", self.row_sum(r)))
            .collect();
        let cells: Vec<Vec<String>> = (0..self.labels.len())
            .map(|r| {
                self.counts[r]
                    .iter()
                    .zip(self.row_fractions(r))
                    .map(|(c, f)| match f {
                        Some(f) => format!("{c} ({:.0}%)", 100.0 * f),
                        None => format!("{c} (n/a)"),
                    })
                    .collect()
            })
            .collect();
        let first = heads.iter().map(String::len).max().unwrap_or(0).max("truth \\ pred".len());
        let widths: Vec<usize> = (0..self.labels.len())
            .map(|c| cells.iter().map(|row| row[c].len()).chain([self.labels[c].len()]).max().unwrap_or(0))
            .collect();
        let mut out = format!("{:<first$}", "truth \\ pred");
        for (l, w) in self.labels.iter().zip(&widths) {
            let _ = write!(out, "  {l:>w$}");
        }
        out.push('\n');
        for (h, row) in heads.iter().zip(&cells) {
            let _ = write!(out, "{h:<first$}");
            for (c, w) in row.iter().zip(&widths) {
                let _ = write!(out, "  {c:>w$}");
            }
            out.push('\n');
        }
        out
    }
}

/// Confusion matrix over management labels (parsed case-insensitively), in
/// discharge, monitoring, surgery order.
pub fn management_report<S: AsRef<str>>(preds: &[S], truths: &[S]) -> Result<ConfusionMatrix> {
    if preds.len() != truths.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} truths",
            preds.len(),
            truths.len()
        )));
    }
    let index = |s: &S| Management::from_name(s.as_ref()).map(|m| m as usize);
    let p = preds.iter().map(index).collect::<Result<Vec<_>>>()?;
    let t = truths.iter().map(index).collect::<Result<Vec<_>>>()?;
    ConfusionMatrix::from_indices(Management::ALL.iter().map(|m| m.title().to_string()).collect(), &p, &t)
}

/// Score–label pairs for external ROC plotting.
pub fn scores_csv(scores: &[f64], labels: &[bool]) -> Result<String> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidArgument("length mismatch".into()));
    }
    let mut out = String::from("score,label\n");
    for (s, &l) in scores.iter().zip(labels) {
        let _ = writeln!(out, "{s:?},{}", u8::from(l));
    }
    Ok(out)
}
