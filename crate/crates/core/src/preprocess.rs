//! Standardization, PCA, sliding windows and the train/validation/test split.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::TimeSeriesFrame;
use crate::tensor::{Rng, Tensor};

/// Channels whose training standard deviation falls below this are dropped.
const MIN_CHANNEL_STD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Per-channel divisor; 1 when standardization is off or the channel was dropped.
    pub scale: Vec<f64>,
    /// `m × n`, orthonormal rows sorted by descending eigenvalue.
    pub components: Tensor,
    /// Variance share of each retained component.
    pub explained_ratio: Vec<f64>,
}

impl PcaModel {
    pub fn n_inputs(&self) -> usize {
        self.mean.len()
    }

    pub fn n_components(&self) -> usize {
        self.explained_ratio.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("PCA model serializes")
    }

    /// Parses and validates a serialized model.
    pub fn from_json(text: &str) -> Result<Self> {
        let model: PcaModel = serde_json::from_str(text).map_err(|e| Error::Format(format!("PCA JSON: {e}")))?;
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        let n = self.mean.len();
        let (m, cols) = self.components.dims2()?;
        if self.scale.len() != n || cols != n || self.explained_ratio.len() != m || m == 0 {
            return Err(Error::Format(format!(
                "inconsistent PCA dimensions: mean {n}, scale {}, components {m}x{cols}, ratios {}",
                self.scale.len(),
                self.explained_ratio.len()
            )));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&self.mean)
            || !finite(&self.explained_ratio)
            || !self.components.is_finite()
            || self.scale.iter().any(|s| !s.is_finite() || *s <= 0.0)
        {
            return Err(Error::Format("PCA model has non-finite or non-positive entries".into()));
        }
        Ok(())
    }
}

/// Fits standardization and PCA on the rows where `train_mask` is set, keeping
/// the fewest components whose cumulative explained variance reaches `target_ratio`.
pub fn fit_pca(frame: &TimeSeriesFrame, train_mask: &[bool], target_ratio: f64, standardize: bool) -> Result<PcaModel> {
    if !(target_ratio > 0.0 && target_ratio <= 1.0) {
        return Err(Error::Parameter(format!("target ratio {target_ratio} outside (0, 1]")));
    }
    if train_mask.len() != frame.len() {
        return Err(Error::Shape(format!(
            "mask of {} for {} rows",
            train_mask.len(),
            frame.len()
        )));
    }
    let n = frame.n_channels();
    let rows: Vec<&[f64]> = (0..frame.len())
        .filter(|&t| train_mask[t])
        .map(|t| frame.channels.row(t))
        .collect();
    let count = rows.len();
    if count < 2 {
        return Err(Error::InsufficientData(format!(
            "{count} training rows, need at least 2"
        )));
    }

    let mut mean = vec![0.0; n];
    for r in &rows {
        for (m, v) in mean.iter_mut().zip(*r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);
    let mut std = vec![0.0; n];
    for r in &rows {
        for c in 0..n {
            std[c] += (r[c] - mean[c]).powi(2);
        }
    }
    std.iter_mut().for_each(|s| *s = (*s / (count - 1) as f64).sqrt());

    let kept: Vec<usize> = (0..n)
        .filter(|&c| {
            let ok = std[c] > MIN_CHANNEL_STD;
            if !ok {
                warn!("dropping zero-variance channel {}", frame.channel_names[c]);
            }
            ok
        })
        .collect();
    if kept.is_empty() {
        return Err(Error::DegenerateData("every channel has zero variance".into()));
    }
    let scale: Vec<f64> = (0..n)
        .map(|c| {
            if standardize && std[c] > MIN_CHANNEL_STD {
                std[c]
            } else {
                1.0
            }
        })
        .collect();

    let k = kept.len();
    let mut cov = vec![0.0; k * k];
    for r in &rows {
        for (a, &ca) in kept.iter().enumerate() {
            let za = (r[ca] - mean[ca]) / scale[ca];
            for (b, &cb) in kept.iter().enumerate().skip(a) {
                cov[a * k + b] += za * (r[cb] - mean[cb]) / scale[cb];
            }
        }
    }
    for a in 0..k {
        for b in a..k {
            cov[a * k + b] /= (count - 1) as f64;
            cov[b * k + a] = cov[a * k + b];
        }
    }

    let (values, vectors) = symmetric_eigen(&cov, k);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let clipped: Vec<f64> = order.iter().map(|&i| values[i].max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateData("covariance has no positive variance".into()));
    }

    let mut rank_limit = k;
    if count <= k {
        warn!("{count} training rows for {k} channels: covariance is rank deficient");
        rank_limit = count - 1;
    }
    let mut m = 0;
    let mut cumulative = 0.0;
    while m < rank_limit {
        cumulative += clipped[m] / total;
        m += 1;
        if cumulative >= target_ratio - 1e-12 {
            break;
        }
    }

    let mut components = Tensor::zeros(&[m, n]);
    for (row, &src) in order.iter().take(m).enumerate() {
        let mut v: Vec<f64> = (0..k).map(|i| vectors[i * k + src]).collect();
        let pivot = v
            .iter()
            .copied()
            .fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        for (i, &c) in kept.iter().enumerate() {
            components.data_mut()[row * n + c] = v[i];
        }
    }
    let explained_ratio = clipped[..m].iter().map(|v| v / total).collect();
    Ok(PcaModel {
        mean,
        scale,
        components,
        explained_ratio,
    })
}

/// Cyclic Jacobi eigendecomposition of a symmetric `k × k` matrix.
/// Returns eigenvalues and a row-major matrix whose columns are eigenvectors.
pub fn symmetric_eigen(matrix: &[f64], k: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; k * k];
    for i in 0..k {
        v[i * k + i] = 1.0;
    }
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..k)
            .flat_map(|p| (0..k).filter(move |&q| q != p).map(move |q| (p, q)))
            .map(|(p, q)| a[p * k + q].powi(2))
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..k {
            for q in p + 1..k {
                let apq = a[p * k + q];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a[q * k + q] - a[p * k + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..k {
                    let arp = a[r * k + p];
                    let arq = a[r * k + q];
                    a[r * k + p] = c * arp - s * arq;
                    a[r * k + q] = s * arp + c * arq;
                }
                for r in 0..k {
                    let apr = a[p * k + r];
                    let aqr = a[q * k + r];
                    a[p * k + r] = c * apr - s * aqr;
                    a[q * k + r] = s * apr + c * aqr;
                }
                for r in 0..k {
                    let vrp = v[r * k + p];
                    let vrq = v[r * k + q];
                    v[r * k + p] = c * vrp - s * vrq;
                    v[r * k + q] = s * vrp + c * vrq;
                }
            }
        }
    }
    ((0..k).map(|i| a[i * k + i]).collect(), v)
}

/// Projects standardized readings onto the retained components: `T × m`.
pub fn transform(pca: &PcaModel, frame: &TimeSeriesFrame) -> Result<Tensor> {
    let n = pca.n_inputs();
    if frame.n_channels() != n {
        return Err(Error::Shape(format!(
            "PCA expects {n} channels, frame has {}",
            frame.n_channels()
        )));
    }
    let m = pca.n_components();
    let t_total = frame.len();
    let mut out = vec![0.0; t_total * m];
    let mut z = vec![0.0; n];
    for t in 0..t_total {
        for (c, zc) in z.iter_mut().enumerate() {
            *zc = (frame.channels.data()[t * n + c] - pca.mean[c]) / pca.scale[c];
        }
        for j in 0..m {
            let comp = pca.components.row(j);
            out[t * m + j] = comp.iter().zip(&z).map(|(a, b)| a * b).sum();
        }
    }
    Tensor::new(vec![t_total, m], out)
}

/// Number of windows of length `window` and stride `stride` over `t_total` steps.
pub fn window_count(t_total: usize, window: usize, stride: usize) -> usize {
    if window == 0 || stride == 0 || t_total < window {
        0
    } else {
        (t_total - window) / stride + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Windowed samples flattened time-major: element `tau * m + f` holds feature
/// `f` at window offset `tau`, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct SerialDataset {
    /// `n_samples × (window · dim)`.
    pub features: Tensor,
    pub labels: Vec<usize>,
    /// Timestamp of the latest step in each window.
    pub timestamps: Vec<i64>,
    pub window: usize,
    pub stride: usize,
    pub dim: usize,
    pub split: Vec<Split>,
}

impl SerialDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_len(&self) -> usize {
        self.window * self.dim
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    pub fn indices(&self, which: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == which).collect()
    }

    /// Features and labels of a subset, in the given order.
    pub fn gather(&self, idx: &[usize]) -> (Tensor, Vec<usize>) {
        let len = self.sample_len();
        let mut data = Vec::with_capacity(idx.len() * len);
        for &i in idx {
            data.extend_from_slice(self.sample(i));
        }
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        (
            Tensor::new(vec![idx.len(), len], data).expect("consistent sizes"),
            labels,
        )
    }

    /// Recovers the `window × dim` block of sample `i`.
    pub fn unflatten(&self, i: usize) -> Tensor {
        Tensor::new(vec![self.window, self.dim], self.sample(i).to_vec()).expect("consistent sizes")
    }
}

/// Slides a window of `window` steps with stride `stride` over `reduced` (`T × m`).
pub fn windowize(
    reduced: &Tensor,
    labels: &[usize],
    timestamps: &[i64],
    window: usize,
    stride: usize,
) -> Result<SerialDataset> {
    let (t_total, m) = reduced.dims2()?;
    if labels.len() != t_total || timestamps.len() != t_total {
        return Err(Error::Shape(format!(
            "{} labels / {} timestamps for {t_total} rows",
            labels.len(),
            timestamps.len()
        )));
    }
    if window == 0 || stride == 0 {
        return Err(Error::Parameter("window and stride must be at least 1".into()));
    }
    if t_total < window {
        return Err(Error::InsufficientData(format!(
            "{t_total} steps cannot fill a window of {window}"
        )));
    }
    let count = window_count(t_total, window, stride);
    let len = window * m;
    let mut data = Vec::with_capacity(count * len);
    let mut out_labels = Vec::with_capacity(count);
    let mut out_ts = Vec::with_capacity(count);
    for j in 0..count {
        let start = j * stride;
        data.extend_from_slice(&reduced.data()[start * m..(start + window) * m]);
        out_labels.push(labels[start + window - 1]);
        out_ts.push(timestamps[start + window - 1]);
    }
    Ok(SerialDataset {
        features: Tensor::new(vec![count, len], data)?,
        labels: out_labels,
        timestamps: out_ts,
        window,
        stride,
        dim: m,
        split: vec![Split::Train; count],
    })
}

/// Maximum reseeding attempts when a class is missing from the training split.
pub const SPLIT_ATTEMPTS: u64 = 100;

/// Uniform random partition of `n` items with the given ratios. Every class
/// present in `labels` must land in the training part; otherwise the shuffle
/// is redrawn with a derived seed, up to [`SPLIT_ATTEMPTS`] times.
pub fn split_assignment(labels: &[usize], ratios: [f64; 3], seed: u64) -> Result<Vec<Split>> {
    if ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Parameter(format!(
            "split ratios {ratios:?} must be >= 0 and sum to 1"
        )));
    }
    let n = labels.len();
    let n_train = (ratios[0] * n as f64).round() as usize;
    let n_val = ((ratios[1] * n as f64).round() as usize).min(n - n_train);
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut present = vec![false; n_classes];
    labels.iter().for_each(|&l| present[l] = true);

    for attempt in 0..SPLIT_ATTEMPTS {
        let mut rng = if attempt == 0 {
            Rng::new(seed)
        } else {
            Rng::new(seed).fork(attempt)
        };
        let order = rng.permutation(n);
        let mut split = vec![Split::Test; n];
        let mut in_train = vec![false; n_classes];
        for (rank, &i) in order.iter().enumerate() {
            split[i] = if rank < n_train {
                in_train[labels[i]] = true;
                Split::Train
            } else if rank < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
        if present.iter().zip(&in_train).all(|(p, t)| !p || *t) {
            return Ok(split);
        }
    }
    Err(Error::Stratification(format!(
        "some class never reached the training split in {SPLIT_ATTEMPTS} attempts"
    )))
}

pub fn split(mut dataset: SerialDataset, ratios: [f64; 3], seed: u64) -> Result<SerialDataset> {
    dataset.split = split_assignment(&dataset.labels, ratios, seed)?;
    Ok(dataset)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub window: usize,
    pub stride: usize,
    pub pca_ratio: f64,
    pub standardize: bool,
    /// Train, validation and test shares of the windows.
    pub split_ratios: [f64; 3],
    pub split_seed: u64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            window: 50,
            stride: 1,
            pca_ratio: 0.95,
            standardize: true,
            split_ratios: [0.7, 0.2, 0.1],
            split_seed: 0,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.stride == 0 {
            return Err(Error::Config(format!(
                "window {} and stride {} must be positive",
                self.window, self.stride
            )));
        }
        if !(self.pca_ratio > 0.0 && self.pca_ratio <= 1.0) {
            return Err(Error::Config(format!("PCA ratio {} outside (0, 1]", self.pca_ratio)));
        }
        let r = self.split_ratios;
        if r.iter().any(|v| !(*v >= 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 || r[0] == 0.0 {
            return Err(Error::Config(format!(
                "split ratios {r:?} must be non-negative, sum to 1 and leave a training share"
            )));
        }
        Ok(())
    }

    /// First eight bytes (little-endian) of the SHA-256 of the config's sorted-key JSON.
    pub fn hash(&self) -> u64 {
        use sha2::{Digest, Sha256};
        let value = serde_json::to_value(self).expect("config serializes");
        let digest = Sha256::digest(value.to_string().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
    }
}

/// A windowed, split dataset together with the projection that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub pca: PcaModel,
    pub dataset: SerialDataset,
}

/// Split assignment of the windows a config produces over `labels`.
fn window_split(labels: &[usize], config: &PreprocessConfig) -> Result<(Vec<usize>, Vec<Split>)> {
    config.validate()?;
    let count = window_count(labels.len(), config.window, config.stride);
    if count == 0 {
        return Err(Error::InsufficientData(format!(
            "{} steps give no windows of length {} (stride {})",
            labels.len(),
            config.window,
            config.stride
        )));
    }
    let last: Vec<usize> = (0..count).map(|j| j * config.stride + config.window - 1).collect();
    let window_labels: Vec<usize> = last.iter().map(|&r| labels[r]).collect();
    let split = split_assignment(&window_labels, config.split_ratios, config.split_seed)?;
    Ok((last, split))
}

/// Splits the windows, fits standardization and PCA on the rows that end a
/// training window, then projects and windows the whole frame.
pub fn prepare(frame: &TimeSeriesFrame, config: &PreprocessConfig) -> Result<Prepared> {
    let (last, split) = window_split(&frame.labels, config)?;
    let mut mask = vec![false; frame.len()];
    for (&row, s) in last.iter().zip(&split) {
        if *s == Split::Train {
            mask[row] = true;
        }
    }
    let pca = fit_pca(frame, &mask, config.pca_ratio, config.standardize)?;
    prepare_with(frame, config, pca)
}

/// Same windows and split as [`prepare`], projected with an existing model.
pub fn prepare_with(frame: &TimeSeriesFrame, config: &PreprocessConfig, pca: PcaModel) -> Result<Prepared> {
    let (_, split) = window_split(&frame.labels, config)?;
    let reduced = transform(&pca, frame)?;
    let mut dataset = windowize(&reduced, &frame.labels, &frame.timestamps, config.window, config.stride)?;
    dataset.split = split;
    Ok(Prepared { pca, dataset })
}
