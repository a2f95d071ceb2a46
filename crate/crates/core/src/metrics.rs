//! Confusion matrices, per-class and averaged scores, and one-vs-rest
//! precision-recall curves.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::DemographicClass;
use crate::error::{Error, Result};

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    cells: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            cells: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn cell(&self, truth: usize, pred: usize) -> u64 {
        self.cells[truth * self.classes + pred]
    }

    pub fn record(&mut self, truth: usize, pred: usize) -> Result<()> {
        if truth >= self.classes || pred >= self.classes {
            return Err(Error::Metric(format!(
                "class pair ({truth}, {pred}) out of range for {} classes",
                self.classes
            )));
        }
        self.cells[truth * self.classes + pred] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.cell(c, c)).sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        (0..self.classes).map(|p| self.cell(c, p)).sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        (0..self.classes).map(|t| self.cell(t, c)).sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.cells.chunks(self.classes).map(<[u64]>::to_vec).collect()
    }

    /// `(tp, fp, fn, tn)` for one class against the rest.
    pub fn counts(&self, c: usize) -> (u64, u64, u64, u64) {
        let tp = self.cell(c, c);
        let fp = self.col_sum(c) - tp;
        let fn_ = self.row_sum(c) - tp;
        (tp, fp, fn_, self.total() - tp - fp - fn_)
    }
}

pub fn confusion(y_true: &[usize], y_pred: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Metric(format!(
            "{} labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::Metric("no samples".into()));
    }
    let mut cm = ConfusionMatrix::new(classes);
    for (&t, &p) in y_true.iter().zip(y_pred) {
        cm.record(t, p)?;
    }
    Ok(cm)
}

/// Fraction of samples on the diagonal.
pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    match cm.total() {
        0 => Err(Error::Metric("accuracy of an empty matrix".into())),
        n => Ok(cm.trace() as f64 / n as f64),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall and F1 per class; a zero denominator scores 0.
pub fn per_class(cm: &ConfusionMatrix) -> Vec<ClassMetrics> {
    (0..cm.classes())
        .map(|c| {
            let (tp, fp, fn_, _) = cm.counts(c);
            let precision = ratio(tp, tp + fp);
            let recall = ratio(tp, tp + fn_);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support: tp + fn_,
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// `(macro, weighted)`: the unweighted mean over every class (zero-support
/// ones included) and the support-weighted mean.
pub fn aggregate(metrics: &[ClassMetrics]) -> Result<(Averages, Averages)> {
    if metrics.is_empty() {
        return Err(Error::Metric("no classes to aggregate".into()));
    }
    let n = metrics.len() as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| metrics.iter().map(f).sum::<f64>() / n;
    let macro_avg = Averages {
        precision: mean(|m| m.precision),
        recall: mean(|m| m.recall),
        f1: mean(|m| m.f1),
    };
    let total: u64 = metrics.iter().map(|m| m.support).sum();
    if total == 0 {
        return Err(Error::Metric("weighted average with zero total support".into()));
    }
    let weighted =
        |f: fn(&ClassMetrics) -> f64| metrics.iter().map(|m| m.support as f64 * f(m)).sum::<f64>() / total as f64;
    let weighted_avg = Averages {
        precision: weighted(|m| m.precision),
        recall: weighted(|m| m.recall),
        f1: weighted(|m| m.f1),
    };
    Ok((macro_avg, weighted_avg))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub class: usize,
    /// One point per distinct score, from the highest threshold down.
    pub points: Vec<PrPoint>,
    /// `None` when the class has no positive samples.
    pub average_precision: Option<f64>,
}

/// One-vs-rest sweep over class `class`'s scores, with step-integrated
/// average precision `Σ (R_k − R_{k−1}) · P_k`.
pub fn pr_curve(scores: &[Vec<f64>], y_true: &[usize], class: usize) -> Result<PrCurve> {
    if scores.len() != y_true.len() || scores.is_empty() {
        return Err(Error::Metric(format!(
            "{} score rows for {} labels",
            scores.len(),
            y_true.len()
        )));
    }
    if scores.iter().any(|r| class >= r.len() || r[class].is_nan()) {
        return Err(Error::Metric(format!("missing or NaN score for class {class}")));
    }
    let positives = y_true.iter().filter(|&&t| t == class).count() as u64;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b][class].total_cmp(&scores[a][class]));

    let mut points = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]][class];
        while i < order.len() && scores[order[i]][class] == threshold {
            if y_true[order[i]] == class {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = ratio(tp, positives);
        let precision = ratio(tp, tp + fp);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        points.push(PrPoint {
            threshold,
            recall,
            precision,
        });
    }
    Ok(PrCurve {
        class,
        points,
        average_precision: (positives > 0).then_some(ap),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: String,
    #[serde(flatten)]
    pub metrics: ClassMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model_id: u8,
    pub accuracy: f64,
    pub confusion_matrix: Vec<Vec<u64>>,
    pub per_class: Vec<ClassReport>,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    /// `None` for classes without positive samples.
    pub pr_auc_per_class: Vec<Option<f64>>,
    /// Mean over the classes that have an average precision.
    pub pr_auc_macro: f64,
    pub classes_without_positives: Vec<String>,
    #[serde(skip)]
    pub pr_curves: Vec<PrCurve>,
}

fn class_name(i: usize) -> String {
    DemographicClass::from_index(i)
        .map(|c| c.name().to_string())
        .unwrap_or_else(|_| format!("class {i}"))
}

/// Everything in [`MetricsReport`] from class scores and true labels;
/// predictions are the per-row argmax.
pub fn build_report(model_id: u8, scores: &[Vec<f64>], y_true: &[usize]) -> Result<MetricsReport> {
    let classes = scores.first().map(Vec::len).unwrap_or(0);
    if classes == 0 || scores.iter().any(|r| r.len() != classes) {
        return Err(Error::Metric("score rows must be non-empty and equally wide".into()));
    }
    let y_pred: Vec<usize> = scores.iter().map(|r| argmax(r)).collect();
    let cm = confusion(y_true, &y_pred, classes)?;
    let pcs = per_class(&cm);
    let (macro_avg, weighted_avg) = aggregate(&pcs)?;
    let curves = (0..classes)
        .map(|c| pr_curve(scores, y_true, c))
        .collect::<Result<Vec<_>>>()?;
    let aps: Vec<Option<f64>> = curves.iter().map(|c| c.average_precision).collect();
    let defined: Vec<f64> = aps.iter().flatten().copied().collect();
    let pr_auc_macro = if defined.is_empty() {
        0.0
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    };
    Ok(MetricsReport {
        model_id,
        accuracy: accuracy(&cm)?,
        confusion_matrix: cm.rows(),
        per_class: pcs
            .into_iter()
            .enumerate()
            .map(|(i, metrics)| ClassReport {
                class: class_name(i),
                metrics,
            })
            .collect(),
        macro_avg,
        weighted_avg,
        pr_auc_per_class: aps,
        pr_auc_macro,
        classes_without_positives: curves
            .iter()
            .filter(|c| c.average_precision.is_none())
            .map(|c| class_name(c.class))
            .collect(),
        pr_curves: curves,
    })
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// `class,threshold,recall,precision`, one section per class.
    pub fn pr_csv(&self) -> String {
        let mut out = String::from("class,threshold,recall,precision\n");
        for curve in &self.pr_curves {
            let name = class_name(curve.class);
            for p in &curve.points {
                let _ = writeln!(out, "{name},{},{},{}", p.threshold, p.recall, p.precision);
            }
        }
        out
    }

    /// Writes `<stem>.json` and `<stem>_pr.csv` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join(format!("{stem}.json"));
        std::fs::write(&json, self.to_json()?).map_err(|e| Error::io(&json, e))?;
        let csv = dir.join(format!("{stem}_pr.csv"));
        std::fs::write(&csv, self.pr_csv()).map_err(|e| Error::io(&csv, e))
    }
}
