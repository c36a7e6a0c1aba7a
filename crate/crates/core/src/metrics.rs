//! Confusion matrices, macro-averaged classification metrics, precision-recall
//! curves and the JSON report.
//!
//! Every class is scored one-vs-rest and the per-class values are averaged
//! without weights, except `accuracy` (trace over total), `kappa` and `mcc`
//! (computed from the whole matrix) and `aunp` (prevalence weighted).
//! A zero denominator makes the affected term 0 and is listed in
//! [`MetricsReport::degenerate`].

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// `counts[true][predicted]`.
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(counts: Vec<Vec<u64>>) -> Result<Self> {
        let c = counts.len();
        if c == 0 || counts.iter().any(|r| r.len() != c) {
            return Err(Error::Parameter("confusion matrix must be square and non-empty".into()));
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes()).map(|k| self.counts[k][k]).sum()
    }

    pub fn row_sum(&self, k: usize) -> u64 {
        self.counts[k].iter().sum()
    }

    pub fn col_sum(&self, k: usize) -> u64 {
        self.counts.iter().map(|r| r[k]).sum()
    }

    /// One-vs-rest `(tp, fp, fn, tn)` for class `k`.
    pub fn one_vs_rest(&self, k: usize) -> (u64, u64, u64, u64) {
        let tp = self.counts[k][k];
        let fp = self.col_sum(k) - tp;
        let fn_ = self.row_sum(k) - tp;
        (tp, fp, fn_, self.total() - tp - fp - fn_)
    }
}

pub fn confusion(labels: &[usize], predictions: &[usize], n_classes: usize) -> Result<ConfusionMatrix> {
    if labels.len() != predictions.len() {
        return Err(Error::Parameter(format!(
            "{} labels but {} predictions",
            labels.len(),
            predictions.len()
        )));
    }
    if n_classes == 0 {
        return Err(Error::Parameter("need at least one class".into()));
    }
    let mut counts = vec![vec![0u64; n_classes]; n_classes];
    for (&t, &p) in labels.iter().zip(predictions) {
        if t >= n_classes || p >= n_classes {
            return Err(Error::Parameter(format!(
                "class pair ({t}, {p}) outside 0..{n_classes}"
            )));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

/// The ten headline metrics, in the order they are reported.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub accuracy: f64,
    pub npv: f64,
    pub precision: f64,
    pub specificity: f64,
    pub recall: f64,
    pub f1_score: f64,
    pub aunp: f64,
    pub kappa: f64,
    pub mcc: f64,
    pub g_measure: f64,
}

pub const METRIC_NAMES: [&str; 10] = [
    "accuracy",
    "npv",
    "precision",
    "specificity",
    "recall",
    "f1_score",
    "aunp",
    "kappa",
    "mcc",
    "g_measure",
];

impl Scores {
    /// Values in [`METRIC_NAMES`] order.
    pub fn values(&self) -> [f64; 10] {
        [
            self.accuracy,
            self.npv,
            self.precision,
            self.specificity,
            self.recall,
            self.f1_score,
            self.aunp,
            self.kappa,
            self.mcc,
            self.g_measure,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub npv: f64,
    pub f1_score: f64,
    pub g_measure: f64,
    pub support: u64,
}

/// Scalar metrics of a confusion matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroMetrics {
    pub scores: Scores,
    pub per_class: Vec<ClassScores>,
    /// Terms whose denominator was zero, e.g. `precision[2]`.
    pub degenerate: Vec<String>,
}

fn ratio(num: f64, den: f64, name: String, degenerate: &mut Vec<String>) -> f64 {
    if den == 0.0 {
        degenerate.push(name);
        0.0
    } else {
        num / den
    }
}

pub fn macro_metrics(cm: &ConfusionMatrix) -> Result<MacroMetrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Parameter("confusion matrix has no samples".into()));
    }
    let c = cm.n_classes();
    let n = total as f64;
    let mut degenerate = Vec::new();
    let mut per_class = Vec::with_capacity(c);
    let mut aunp = 0.0;
    for k in 0..c {
        let (tp, fp, fn_, tn) = cm.one_vs_rest(k);
        let (tp, fp, fn_, tn) = (tp as f64, fp as f64, fn_ as f64, tn as f64);
        let precision = ratio(tp, tp + fp, format!("precision[{k}]"), &mut degenerate);
        let recall = ratio(tp, tp + fn_, format!("recall[{k}]"), &mut degenerate);
        let specificity = ratio(tn, tn + fp, format!("specificity[{k}]"), &mut degenerate);
        let npv = ratio(tn, tn + fn_, format!("npv[{k}]"), &mut degenerate);
        let f1_score = ratio(
            2.0 * precision * recall,
            precision + recall,
            format!("f1_score[{k}]"),
            &mut degenerate,
        );
        let g_measure = (recall * specificity).sqrt();
        aunp += (tp + fn_) / n * (recall + specificity) / 2.0;
        per_class.push(ClassScores {
            precision,
            recall,
            specificity,
            npv,
            f1_score,
            g_measure,
            support: cm.row_sum(k),
        });
    }
    let mean = |f: fn(&ClassScores) -> f64| per_class.iter().map(f).sum::<f64>() / c as f64;

    let trace = cm.trace() as f64;
    let accuracy = trace / n;
    let expected: f64 = (0..c).map(|k| cm.row_sum(k) as f64 * cm.col_sum(k) as f64).sum::<f64>() / (n * n);
    let kappa = ratio(accuracy - expected, 1.0 - expected, "kappa".into(), &mut degenerate);

    let pred_sq: f64 = (0..c).map(|k| (cm.col_sum(k) as f64).powi(2)).sum();
    let true_sq: f64 = (0..c).map(|k| (cm.row_sum(k) as f64).powi(2)).sum();
    let cross: f64 = (0..c).map(|k| cm.col_sum(k) as f64 * cm.row_sum(k) as f64).sum();
    let mcc = ratio(
        trace * n - cross,
        ((n * n - pred_sq) * (n * n - true_sq)).sqrt(),
        "mcc".into(),
        &mut degenerate,
    );

    let scores = Scores {
        accuracy,
        npv: mean(|s| s.npv),
        precision: mean(|s| s.precision),
        specificity: mean(|s| s.specificity),
        recall: mean(|s| s.recall),
        f1_score: mean(|s| s.f1_score),
        aunp,
        kappa,
        mcc,
        g_measure: mean(|s| s.g_measure),
    };
    Ok(MacroMetrics {
        scores,
        per_class,
        degenerate,
    })
}

/// Precision-recall points at every distinct score threshold, highest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// `[recall, precision]` pairs with non-decreasing recall.
    pub points: Vec<[f64; 2]>,
    pub ap: f64,
}

/// Builds the one-vs-rest PR curve of `class_k` from that class's scores.
/// Tied scores form a single threshold. AP uses step interpolation,
/// `sum (R_n - R_{n-1}) P_n`.
pub fn pr_curve(labels: &[usize], scores: &[f64], class_k: usize) -> Result<PrCurve> {
    if labels.len() != scores.len() {
        return Err(Error::Parameter(format!(
            "{} labels but {} scores",
            labels.len(),
            scores.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN score".into()));
    }
    let positives = labels.iter().filter(|&&l| l == class_k).count();
    if positives == 0 {
        return Err(Error::UndefinedAp(format!("class {class_k} has no positive samples")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut ap, mut last_recall) = (0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] == class_k {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / positives as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - last_recall) * precision;
        last_recall = recall;
        points.push([recall, precision]);
    }
    Ok(PrCurve { points, ap })
}

/// How the `aunp` entry is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AunpMode {
    /// Prevalence-weighted one-vs-rest balanced accuracy.
    #[default]
    Balanced,
    /// Macro mean over classes of the step-interpolated area under the
    /// NPV-versus-recall curve swept over score thresholds.
    Curve,
}

impl std::str::FromStr for AunpMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "balanced" => Ok(AunpMode::Balanced),
            "curve" => Ok(AunpMode::Curve),
            other => Err(Error::Config(format!(
                "unknown AUNP mode {other:?} (expected balanced or curve)"
            ))),
        }
    }
}

/// Area under the one-vs-rest NPV-recall curve for `class_k`.
pub fn npv_recall_area(labels: &[usize], scores: &[f64], class_k: usize) -> Result<f64> {
    let positives = labels.iter().filter(|&&l| l == class_k).count();
    if positives == 0 {
        return Err(Error::UndefinedAp(format!("class {class_k} has no positive samples")));
    }
    let negatives = labels.len() - positives;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut area, mut last_recall) = (0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] == class_k {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / positives as f64;
        let (tn, fn_) = (negatives - fp, positives - tp);
        let npv = if tn + fn_ == 0 {
            0.0
        } else {
            tn as f64 / (tn + fn_) as f64
        };
        area += (recall - last_recall) * npv;
        last_recall = recall;
    }
    Ok(area)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub metrics: Scores,
    pub per_class: Vec<ClassScores>,
    pub confusion: Vec<Vec<u64>>,
    /// Average precision per class; `None` when the class has no samples.
    pub ap: Vec<Option<f64>>,
    pub pr_curves: Vec<Option<Vec<[f64; 2]>>>,
    pub degenerate: Vec<String>,
    pub aunp_mode: AunpMode,
    pub n_samples: u64,
}

/// Scores predictions against `labels`. `probs` holds one row of class
/// probabilities per sample and the predicted class is each row's argmax.
pub fn evaluate(labels: &[usize], probs: &[Vec<f64>], n_classes: usize, aunp_mode: AunpMode) -> Result<MetricsReport> {
    if labels.len() != probs.len() {
        return Err(Error::Parameter(format!(
            "{} labels but {} probability rows",
            labels.len(),
            probs.len()
        )));
    }
    if probs.iter().any(|p| p.len() != n_classes) {
        return Err(Error::Shape(format!("probability rows must have {n_classes} entries")));
    }
    let predictions = probs
        .iter()
        .map(|p| crate::tensor::argmax(p))
        .collect::<Result<Vec<_>>>()?;
    let cm = confusion(labels, &predictions, n_classes)?;
    let mut macro_ = macro_metrics(&cm)?;
    let mut ap = Vec::with_capacity(n_classes);
    let mut pr_curves = Vec::with_capacity(n_classes);
    let mut curve_aunp = Vec::new();
    for k in 0..n_classes {
        let scores: Vec<f64> = probs.iter().map(|p| p[k]).collect();
        match pr_curve(labels, &scores, k) {
            Ok(curve) => {
                ap.push(Some(curve.ap));
                pr_curves.push(Some(curve.points));
                if aunp_mode == AunpMode::Curve {
                    curve_aunp.push(npv_recall_area(labels, &scores, k)?);
                }
            }
            Err(Error::UndefinedAp(_)) => {
                ap.push(None);
                pr_curves.push(None);
                macro_.degenerate.push(format!("ap[{k}]"));
            }
            Err(e) => return Err(e),
        }
    }
    if aunp_mode == AunpMode::Curve {
        macro_.scores.aunp = curve_aunp.iter().sum::<f64>() / curve_aunp.len().max(1) as f64;
    }
    Ok(MetricsReport {
        metrics: macro_.scores,
        per_class: macro_.per_class,
        confusion: cm.counts,
        ap,
        pr_curves,
        degenerate: macro_.degenerate,
        aunp_mode,
        n_samples: labels.len() as u64,
    })
}

impl MetricsReport {
    /// Pretty JSON with keys sorted at every level.
    pub fn to_json(&self) -> String {
        let value = serde_json::to_value(self).expect("report serializes");
        let mut text = serde_json::to_string_pretty(&value).expect("value serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: MetricsReport =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("metrics JSON: {e}")))?;
        let c = report.confusion.len();
        if c == 0
            || report.confusion.iter().any(|r| r.len() != c)
            || report.per_class.len() != c
            || report.ap.len() != c
            || report.pr_curves.len() != c
        {
            return Err(Error::Format("metrics JSON has inconsistent class counts".into()));
        }
        Ok(report)
    }
}

pub fn report_json(report: &MetricsReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, report.to_json()).map_err(|e| Error::io(path, e))
}

/// PR points as `recall,precision` rows, recall non-increasing.
pub fn pr_csv(points: &[[f64; 2]]) -> String {
    let mut out = String::from("recall,precision\n");
    for p in points.iter().rev() {
        out.push_str(&format!("{},{}\n", p[0], p[1]));
    }
    out
}

/// Confusion matrix as CSV with a `true\pred` header row.
pub fn confusion_csv(counts: &[Vec<u64>]) -> String {
    let mut out = String::from("true\\pred");
    for k in 0..counts.len() {
        out.push_str(&format!(",{k}"));
    }
    out.push('\n');
    for (k, row) in counts.iter().enumerate() {
        out.push_str(&k.to_string());
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

/// Area of the polygon formed by placing the ten metrics, clamped to
/// `[0, 1]`, on equally spaced axes in [`METRIC_NAMES`] order.
pub fn radar_area(scores: &Scores) -> f64 {
    let r = scores.values().map(|v| v.clamp(0.0, 1.0));
    let wedge = (2.0 * std::f64::consts::PI / r.len() as f64).sin() / 2.0;
    (0..r.len()).map(|i| r[i] * r[(i + 1) % r.len()]).sum::<f64>() * wedge
}
