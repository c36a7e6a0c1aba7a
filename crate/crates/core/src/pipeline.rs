//! End-to-end runs: preprocess and train, evaluate on the test split, and the
//! horizon sweep.

use log::info;

use crate::checkpoint::Checkpoint;
use crate::data_gen::relabel_horizon;
use crate::error::{Error, Result};
use crate::frame::TimeSeriesFrame;
use crate::metrics::{evaluate, radar_area, AunpMode, MetricsReport, Scores, METRIC_NAMES};
use crate::preprocess::{prepare, prepare_with, PreprocessConfig, Split};
use crate::train::{predict, train_model_with, EpochLog, TrainConfig};

/// Default horizons for the sweep, in samples.
pub const DEFAULT_HORIZONS: [usize; 6] = [150, 200, 250, 300, 350, 400];

/// Preprocesses `frame` and trains a model on it.
pub fn run_train(
    frame: &TimeSeriesFrame,
    preprocess: &PreprocessConfig,
    train: &TrainConfig,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<Checkpoint> {
    let prepared = prepare(frame, preprocess)?;
    info!(
        "{} windows of length {} ({} PCA components)",
        prepared.dataset.len(),
        prepared.dataset.sample_len(),
        prepared.pca.n_components()
    );
    let n_classes = frame.n_classes().max(2);
    let (model, state) = train_model_with(&prepared.dataset, train, n_classes, on_epoch)?;
    Ok(Checkpoint {
        model,
        state,
        train_config: train.clone(),
        preprocess: preprocess.clone(),
        pca: prepared.pca,
    })
}

/// Scores the checkpoint on the test split of `frame` under `preprocess`,
/// projecting with the checkpoint's stored PCA.
pub fn run_eval(
    checkpoint: &Checkpoint,
    frame: &TimeSeriesFrame,
    preprocess: &PreprocessConfig,
    aunp_mode: AunpMode,
) -> Result<MetricsReport> {
    let prepared = prepare_with(frame, preprocess, checkpoint.pca.clone())?;
    let idx = prepared.dataset.indices(Split::Test);
    if idx.is_empty() {
        return Err(Error::InsufficientData("test split is empty".into()));
    }
    let (x, labels) = prepared.dataset.gather(&idx);
    let n_classes = checkpoint.model.config.n_classes;
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::Parameter(format!(
            "test label {bad} unknown to a model with {n_classes} classes"
        )));
    }
    let probs: Vec<Vec<f64>> = predict(&checkpoint.model, &x)?.into_iter().map(|p| p.probs).collect();
    evaluate(&labels, &probs, n_classes, aunp_mode)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub horizon: usize,
    pub horizon_seconds: i64,
    pub scores: Scores,
    pub radar_area: f64,
}

/// For each horizon: relabel the doubtful span, retrain, evaluate.
pub fn sweep(
    frame: &TimeSeriesFrame,
    horizons: &[usize],
    preprocess: &PreprocessConfig,
    train: &TrainConfig,
    aunp_mode: AunpMode,
    mut on_row: impl FnMut(&SweepRow, &Checkpoint, &MetricsReport),
) -> Result<Vec<SweepRow>> {
    if horizons.is_empty() {
        return Err(Error::Config("no horizons to sweep".into()));
    }
    let interval = frame.sample_interval().unwrap_or(1);
    let mut rows = Vec::with_capacity(horizons.len());
    for &n in horizons {
        let relabeled = frame.with_labels(relabel_horizon(&frame.labels, n))?;
        let ckpt = run_train(&relabeled, preprocess, train, |_| {})?;
        let report = run_eval(&ckpt, &relabeled, preprocess, aunp_mode)?;
        let row = SweepRow {
            horizon: n,
            horizon_seconds: n as i64 * interval,
            scores: report.metrics,
            radar_area: radar_area(&report.metrics),
        };
        info!(
            "horizon {n}: macro-F1 {:.4}, radar area {:.4}",
            row.scores.f1_score, row.radar_area
        );
        on_row(&row, &ckpt, &report);
        rows.push(row);
    }
    Ok(rows)
}

/// `n,horizon_seconds,<ten metrics>,radar_area` rows.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("n,horizon_seconds,{},radar_area\n", METRIC_NAMES.join(","));
    for r in rows {
        let values: Vec<String> = r.scores.values().iter().map(|v| v.to_string()).collect();
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.horizon,
            r.horizon_seconds,
            values.join(","),
            r.radar_area
        ));
    }
    out
}

/// True when the largest value sits strictly inside the sequence and beats both ends.
pub fn has_interior_maximum(values: &[f64]) -> bool {
    if values.len() < 3 {
        return false;
    }
    let (best, _) = values.iter().enumerate().fold(
        (0, f64::NEG_INFINITY),
        |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
    );
    best > 0 && best < values.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interior_maximum() {
        assert!(has_interior_maximum(&[0.1, 0.5, 0.2]));
        assert!(!has_interior_maximum(&[0.5, 0.4, 0.2]));
        assert!(!has_interior_maximum(&[0.1, 0.4, 0.6]));
        assert!(!has_interior_maximum(&[0.1, 0.4]));
    }

    #[test]
    fn sweep_csv_header() {
        let text = sweep_csv(&[]);
        assert_eq!(
            text,
            "n,horizon_seconds,accuracy,npv,precision,specificity,recall,f1_score,aunp,kappa,mcc,g_measure,radar_area\n"
        );
    }
}
