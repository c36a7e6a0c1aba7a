//! Replays the checked-in fuzz seeds through the decoders and their
//! re-encode invariants, plus a few hostile mutations of each seed.

use std::fs;
use std::path::PathBuf;

use mktcn::preprocess::PcaModel;
use mktcn::{Checkpoint, MetricsReport, TimeSeriesFrame};

fn seeds(target: &str) -> Vec<Vec<u8>> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("reading {}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .collect();
    paths.sort();
    assert!(!paths.is_empty(), "no seeds in {}", dir.display());
    paths.iter().map(|p| fs::read(p).unwrap()).collect()
}

/// Truncations and single-byte flips of `bytes`.
fn mutations(bytes: &[u8]) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    for cut in [0, 1, bytes.len() / 3, bytes.len() / 2, bytes.len().saturating_sub(1)] {
        out.push(bytes[..cut].to_vec());
    }
    let step = (bytes.len() / 64).max(1);
    for i in (0..bytes.len()).step_by(step) {
        let mut m = bytes.to_vec();
        m[i] ^= 0x5a;
        out.push(m);
    }
    out
}

#[test]
fn csv_seeds_round_trip() {
    for seed in seeds("csv_frame") {
        let frame = TimeSeriesFrame::read_csv_from(seed.as_slice()).unwrap();
        let mut out = Vec::new();
        frame.write_csv_to(&mut out).unwrap();
        assert_eq!(TimeSeriesFrame::read_csv_from(out.as_slice()).unwrap(), frame);
        for m in mutations(&seed) {
            if let Ok(f) = TimeSeriesFrame::read_csv_from(m.as_slice()) {
                let mut out = Vec::new();
                f.write_csv_to(&mut out).unwrap();
                assert_eq!(TimeSeriesFrame::read_csv_from(out.as_slice()).unwrap(), f);
            }
        }
    }
}

#[test]
fn checkpoint_seeds_round_trip() {
    for seed in seeds("checkpoint_decode") {
        let ckpt = Checkpoint::decode(&seed).unwrap();
        assert_eq!(ckpt.encode(), seed);
        for m in mutations(&seed) {
            assert!(Checkpoint::decode(&m).is_err(), "corrupted checkpoint accepted");
        }
    }
}

#[test]
fn pca_seeds_round_trip() {
    for seed in seeds("pca_json") {
        let pca = PcaModel::from_json(std::str::from_utf8(&seed).unwrap()).unwrap();
        assert_eq!(PcaModel::from_json(&pca.to_json()).unwrap(), pca);
        for m in mutations(&seed) {
            if let Ok(text) = std::str::from_utf8(&m) {
                if let Ok(p) = PcaModel::from_json(text) {
                    assert_eq!(PcaModel::from_json(&p.to_json()).unwrap(), p);
                }
            }
        }
    }
}

#[test]
fn metrics_seeds_round_trip() {
    for seed in seeds("metrics_json") {
        let text = std::str::from_utf8(&seed).unwrap();
        let report = MetricsReport::from_json(text).unwrap();
        assert_eq!(report.to_json(), text);
        for m in mutations(&seed) {
            if let Ok(text) = std::str::from_utf8(&m) {
                if let Ok(r) = MetricsReport::from_json(text) {
                    assert!(MetricsReport::from_json(&r.to_json()).is_ok());
                }
            }
        }
    }
}
