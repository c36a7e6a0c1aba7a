//! Data generation through training, evaluation and persistence.

use mktcn::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use mktcn::data_gen::{generate_pipeline, relabel_horizon, PipelineConfig};
use mktcn::frame::{read_csv, write_csv, TimeSeriesFrame};
use mktcn::metrics::{MetricsReport, METRIC_NAMES};
use mktcn::pipeline::{run_eval, run_train, sweep};
use mktcn::preprocess::{prepare, Split};
use mktcn::tcn::TcnStack;
use mktcn::train::predict;
use mktcn::{AunpMode, HeadKind, PreprocessConfig, Rng, TrainConfig};

fn small_frame(seed: u64) -> TimeSeriesFrame {
    generate_pipeline(&PipelineConfig::ngpod_like(3000, 2, 100, seed)).unwrap()
}

fn small_train(head: HeadKind) -> TrainConfig {
    TrainConfig {
        epochs: 1,
        hidden: vec![4, 8],
        head,
        ..TrainConfig::default()
    }
}

fn pre() -> PreprocessConfig {
    PreprocessConfig {
        window: 20,
        ..PreprocessConfig::default()
    }
}

/// Checkpoints keep epoch summaries but not their wall-clock times.
fn without_wall_time(ckpt: &Checkpoint) -> Checkpoint {
    let mut out = ckpt.clone();
    out.state.epochs.iter_mut().for_each(|e| e.wall_ms = 0);
    out
}

#[test]
fn csv_round_trip_is_exact() {
    let frame = small_frame(3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    write_csv(&frame, &path).unwrap();
    let back = read_csv(&path).unwrap();
    assert_eq!(back, frame);
    let again = dir.path().join("again.csv");
    write_csv(&back, &again).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn checkpoint_round_trip_predicts_identically() {
    let frame = small_frame(1);
    for head in [HeadKind::Kan, HeadKind::Dense] {
        let ckpt = run_train(&frame, &pre(), &small_train(head), |_| {}).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("checkpoint.bin");
        save_checkpoint(&ckpt, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, without_wall_time(&ckpt));
        assert_eq!(loaded.encode(), ckpt.encode());

        let prepared = prepare(&frame, &pre()).unwrap();
        let (x, _) = prepared.dataset.gather(&prepared.dataset.indices(Split::Test));
        let a = predict(&ckpt.model, &x).unwrap();
        let b = predict(&loaded.model, &x).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert_eq!(p.class, q.class);
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&p.probs), bits(&q.probs));
        }
    }
}

#[test]
fn training_and_evaluation_are_deterministic() {
    let frame = small_frame(2);
    let run = || {
        let ckpt = run_train(&frame, &pre(), &small_train(HeadKind::Kan), |_| {}).unwrap();
        let report = run_eval(&ckpt, &frame, &pre(), AunpMode::Balanced).unwrap();
        (ckpt.encode(), report.to_json())
    };
    let (c1, m1) = run();
    let (c2, m2) = run();
    assert_eq!(c1, c2);
    assert_eq!(m1, m2);
}

#[test]
fn report_carries_the_ten_metrics() {
    let frame = small_frame(4);
    let ckpt = run_train(&frame, &pre(), &small_train(HeadKind::Kan), |_| {}).unwrap();
    let report = run_eval(&ckpt, &frame, &pre(), AunpMode::Curve).unwrap();
    let value: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
    let keys: Vec<&String> = value["metrics"].as_object().unwrap().keys().collect();
    let mut expected: Vec<&str> = METRIC_NAMES.to_vec();
    expected.sort_unstable();
    assert_eq!(keys, expected);
    assert_eq!(MetricsReport::from_json(&report.to_json()).unwrap(), report);
}

#[test]
fn untrained_checkpoint_is_written_for_zero_epochs() {
    let frame = small_frame(5);
    let cfg = TrainConfig {
        epochs: 0,
        ..small_train(HeadKind::Kan)
    };
    let ckpt = run_train(&frame, &pre(), &cfg, |_| panic!("no epochs expected")).unwrap();
    assert_eq!(ckpt.state.step, 0);
    let back = Checkpoint::decode(&ckpt.encode()).unwrap();
    assert_eq!(back, ckpt);
}

#[test]
fn single_horizon_sweep_matches_train_then_eval() {
    let frame = small_frame(6);
    let train = small_train(HeadKind::Kan);
    let rows = sweep(&frame, &[80], &pre(), &train, AunpMode::Balanced, |_, _, _| {}).unwrap();
    let relabeled = frame.with_labels(relabel_horizon(&frame.labels, 80)).unwrap();
    let ckpt = run_train(&relabeled, &pre(), &train, |_| {}).unwrap();
    let report = run_eval(&ckpt, &relabeled, &pre(), AunpMode::Balanced).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].scores, report.metrics);
    assert_eq!(rows[0].horizon_seconds, 80 * 20);
}

#[test]
fn stack_outputs_ignore_the_future() {
    let mut rng = Rng::new(9);
    let stack = TcnStack::new(&[4, 8, 8], 3, 0.0, &mut rng);
    let len = 40;
    for trial in 0..10 {
        let x: Vec<f64> = (0..len).map(|_| rng.standard_normal()).collect();
        let base = stack.infer(&x, 1, len).unwrap();
        let p = (trial * 7) % len;
        let mut y = x.clone();
        for v in &mut y[p + 1..] {
            *v += rng.standard_normal();
        }
        let out = stack.infer(&y, 1, len).unwrap();
        for t in 0..=p {
            assert_eq!(
                out[t].to_bits(),
                base[t].to_bits(),
                "position {t} moved after perturbing past {p}"
            );
        }
    }
}
