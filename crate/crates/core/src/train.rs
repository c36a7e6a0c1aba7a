//! Mini-batch training with softmax cross-entropy and Adam, plus inference.

use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{confusion, macro_metrics};
use crate::model::{HeadKind, MktcnModel, ModelConfig, PREDICT_CHUNK};
use crate::preprocess::{SerialDataset, Split};
use crate::tensor::{argmax, softmax, Rng, Tensor};

/// Probability floor inside the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Training samples used to fit the head-input standardization.
const NORM_FIT_SAMPLES: usize = 2048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub dropout: f64,
    pub kernel: usize,
    pub lr: f64,
    pub epochs: usize,
    pub hidden: Vec<usize>,
    pub grid_size: usize,
    pub spline_order: usize,
    pub head: HeadKind,
    pub normalize_head_input: bool,
    pub seed: u64,
    pub class_weights: Option<Vec<f64>>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            dropout: 0.5,
            kernel: 3,
            lr: 1e-3,
            epochs: 10,
            hidden: vec![32, 64, 128],
            grid_size: 5,
            spline_order: 3,
            head: HeadKind::Kan,
            normalize_head_input: true,
            seed: 0,
            class_weights: None,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn model_config(&self, input_len: usize, n_classes: usize) -> ModelConfig {
        ModelConfig {
            input_len,
            n_classes,
            hidden: self.hidden.clone(),
            kernel: self.kernel,
            dropout: self.dropout,
            grid_size: self.grid_size,
            spline_order: self.spline_order,
            head: self.head,
            normalize_head_input: self.normalize_head_input,
        }
    }

    pub fn validate(&self, n_classes: usize) -> Result<()> {
        self.model_config(1, n_classes.max(2)).validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("invalid learning rate {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Config("invalid Adam constants".into()));
        }
        if let Some(w) = &self.class_weights {
            if w.len() != n_classes || w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::Config(format!(
                    "class weights must be {n_classes} non-negative numbers, got {w:?}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_macro_f1: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub step: u64,
    /// Adam first moments, one per parameter tensor.
    pub m: Vec<Tensor>,
    /// Adam second moments.
    pub v: Vec<Tensor>,
    pub best_val_macro_f1: f64,
    /// Epoch whose parameters were kept; 0 is the initial model.
    pub best_epoch: usize,
    /// Mean training loss of every optimizer step.
    pub loss_history: Vec<f64>,
    pub epochs: Vec<EpochLog>,
}

impl TrainState {
    pub fn new(params: &[&Tensor]) -> Self {
        TrainState {
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            best_val_macro_f1: 0.0,
            best_epoch: 0,
            loss_history: Vec::new(),
            epochs: Vec::new(),
        }
    }
}

/// `-ln(max(p[label], 1e-12))`.
pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64> {
    let p = probs
        .get(label)
        .ok_or_else(|| Error::Parameter(format!("label {label} outside {} classes", probs.len())))?;
    Ok(-p.max(PROB_FLOOR).ln())
}

/// Loss and logit gradient `probs - onehot(label)` for one sample.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    let probs = softmax(logits)?;
    let loss = cross_entropy(&probs, label)?;
    let mut grad = probs;
    grad[label] -= 1.0;
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl From<&TrainConfig> for AdamParams {
    fn from(c: &TrainConfig) -> Self {
        AdamParams {
            lr: c.lr,
            beta1: c.beta1,
            beta2: c.beta2,
            eps: c.eps,
        }
    }
}

/// One bias-corrected Adam update. `names` label the parameters in errors.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    names: &[String],
    state: &mut TrainState,
    adam: AdamParams,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len() {
        return Err(Error::Shape(format!(
            "{} parameters, {} gradients, {} moment pairs",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        let name = names.get(i).map_or("?", String::as_str);
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(Error::Shape(format!(
                "{name}: parameter {:?}, gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
        if let Some(j) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient {} for {name}[{j}] at step {}",
                g.data()[j],
                state.step + 1
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - adam.beta1.powi(t);
    let c2 = 1.0 - adam.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (((w, &gj), mj), vj) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mj = adam.beta1 * *mj + (1.0 - adam.beta1) * gj;
            *vj = adam.beta2 * *vj + (1.0 - adam.beta2) * gj * gj;
            let m_hat = *mj / c1;
            let v_hat = *vj / c2;
            *w -= adam.lr * m_hat / (v_hat.sqrt() + adam.eps);
        }
    }
    Ok(())
}

/// Class probabilities and argmax class for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub class: usize,
}

/// Inference over `features` (`n × input_len`) in fixed-size chunks.
pub fn predict(model: &MktcnModel, features: &Tensor) -> Result<Vec<Prediction>> {
    let (n, len) = features.dims2()?;
    if len != model.config.input_len {
        return Err(Error::Shape(format!(
            "samples have length {len}, model expects {}",
            model.config.input_len
        )));
    }
    let c = model.config.n_classes;
    let mut out = Vec::with_capacity(n);
    for chunk in features.data().chunks(PREDICT_CHUNK * len.max(1)) {
        let batch = chunk.len() / len;
        let logits = model.logits(chunk, batch)?;
        for row in logits.chunks_exact(c) {
            let probs = softmax(row)?;
            let class = argmax(&probs)?;
            out.push(Prediction { probs, class });
        }
    }
    Ok(out)
}

/// Macro-F1 of `model` on the given rows of `dataset`.
pub fn macro_f1_on(model: &MktcnModel, dataset: &SerialDataset, idx: &[usize]) -> Result<f64> {
    let (x, labels) = dataset.gather(idx);
    let preds: Vec<usize> = predict(model, &x)?.into_iter().map(|p| p.class).collect();
    let cm = confusion(&labels, &preds, model.config.n_classes)?;
    Ok(macro_metrics(&cm)?.scores.f1_score)
}

/// Class count implied by the dataset labels (at least 2).
pub fn infer_n_classes(dataset: &SerialDataset) -> usize {
    dataset.labels.iter().max().map_or(2, |m| (m + 1).max(2))
}

/// Trains a fresh model. After every epoch the validation macro-F1 is computed
/// and the best parameters so far (the initial model included) are kept.
pub fn train_model(dataset: &SerialDataset, config: &TrainConfig) -> Result<(MktcnModel, TrainState)> {
    train_model_with(dataset, config, infer_n_classes(dataset), |_| {})
}

/// [`train_model`] with an explicit class count and a per-epoch callback.
pub fn train_model_with(
    dataset: &SerialDataset,
    config: &TrainConfig,
    n_classes: usize,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(MktcnModel, TrainState)> {
    config.validate(n_classes)?;
    let train_idx = dataset.indices(Split::Train);
    let val_idx = dataset.indices(Split::Val);
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::InsufficientData(format!(
            "need train and validation samples, got {} and {}",
            train_idx.len(),
            val_idx.len()
        )));
    }
    let first = dataset.labels[train_idx[0]];
    if train_idx.iter().all(|&i| dataset.labels[i] == first) {
        return Err(Error::DegenerateData(format!(
            "every training sample has class {first}"
        )));
    }
    if let Some(&bad) = dataset.labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::Parameter(format!("label {bad} outside {n_classes} classes")));
    }

    let root = Rng::new(config.seed);
    let mut init_rng = root.fork(1);
    let mut shuffle_rng = root.fork(2);
    let mut dropout_rng = root.fork(3);
    let mut norm_rng = root.fork(4);

    let len = dataset.sample_len();
    let mut model = MktcnModel::new(config.model_config(len, n_classes), &mut init_rng)?;
    let mut fit_idx = train_idx.clone();
    norm_rng.shuffle(&mut fit_idx);
    fit_idx.truncate(NORM_FIT_SAMPLES);
    fit_idx.sort_unstable();
    let (fit_x, _) = dataset.gather(&fit_idx);
    model.fit_input_norm(fit_x.data(), fit_idx.len())?;

    let names: Vec<String> = model.parameters().into_iter().map(|(n, _)| n).collect();
    let mut state = TrainState::new(&model.parameters().into_iter().map(|(_, t)| t).collect::<Vec<_>>());
    state.best_val_macro_f1 = macro_f1_on(&model, dataset, &val_idx)?;
    let mut best = model.clone();
    let adam = AdamParams::from(config);
    let weights = config.class_weights.clone().unwrap_or_else(|| vec![1.0; n_classes]);

    for epoch in 1..=config.epochs {
        let start = Instant::now();
        let mut order = train_idx.clone();
        shuffle_rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for batch_idx in order.chunks(config.batch_size) {
            let (x, labels) = dataset.gather(batch_idx);
            let b = labels.len();
            let logits = model.forward(x.data(), b, true, &mut dropout_rng)?;
            let mut upstream = vec![0.0; logits.len()];
            let mut loss = 0.0;
            for (s, &label) in labels.iter().enumerate() {
                let (l, g) = softmax_cross_entropy(&logits[s * n_classes..(s + 1) * n_classes], label)?;
                let w = weights[label];
                loss += w * l;
                for (u, gk) in upstream[s * n_classes..(s + 1) * n_classes].iter_mut().zip(g) {
                    *u = w * gk / b as f64;
                }
            }
            let loss = loss / b as f64;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("loss became {loss} at step {}", state.step + 1)));
            }
            let grads = model.backward(&upstream)?;
            adam_step(&mut model.parameters_mut(), &grads.params, &names, &mut state, adam)?;
            state.loss_history.push(loss);
            epoch_loss += loss * b as f64;
            seen += b;
        }
        let val_macro_f1 = macro_f1_on(&model, dataset, &val_idx)?;
        if val_macro_f1 > state.best_val_macro_f1 {
            state.best_val_macro_f1 = val_macro_f1;
            state.best_epoch = epoch;
            best = model.clone();
        }
        let log = EpochLog {
            epoch,
            train_loss: epoch_loss / seen as f64,
            val_macro_f1,
            wall_ms: start.elapsed().as_millis() as u64,
        };
        info!(
            "epoch {epoch}: train loss {:.5}, val macro-F1 {:.4}, {} ms",
            log.train_loss, log.val_macro_f1, log.wall_ms
        );
        on_epoch(&log);
        state.epochs.push(log);
    }
    best.tcn.clear_cache();
    Ok((best, state))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy(&[0.0, 1.0, 0.0], 1).unwrap(), 0.0);
        let third = 1.0 / 3.0;
        assert!((cross_entropy(&[third; 3], 2).unwrap() - 3f64.ln()).abs() < 1e-15);
        assert!((cross_entropy(&[1.0, 0.0], 1).unwrap() + PROB_FLOOR.ln()).abs() < 1e-12);
        assert!(matches!(cross_entropy(&[0.5, 0.5], 2), Err(Error::Parameter(_))));
    }

    #[test]
    fn fused_gradient_matches_finite_differences() {
        let logits = [0.3, -1.2, 2.0, 0.1];
        let (_, grad) = softmax_cross_entropy(&logits, 2).unwrap();
        let probs = softmax(&logits).unwrap();
        for k in 0..4 {
            let onehot = if k == 2 { 1.0 } else { 0.0 };
            assert!((grad[k] - (probs[k] - onehot)).abs() < 1e-15);
            let h = 1e-6;
            let mut up = logits;
            up[k] += h;
            let mut down = logits;
            down[k] -= h;
            let numeric =
                (softmax_cross_entropy(&up, 2).unwrap().0 - softmax_cross_entropy(&down, 2).unwrap().0) / (2.0 * h);
            assert!((numeric - grad[k]).abs() < 1e-8);
        }
    }

    fn adam_fixture(g: f64) -> (Tensor, Tensor, TrainState) {
        let p = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let grad = Tensor::full(&[3], g);
        let state = TrainState::new(&[&p]);
        (p, grad, state)
    }

    #[test]
    fn adam_zero_gradient_leaves_parameters() {
        let (mut p, g, mut state) = adam_fixture(0.0);
        let before = p.clone();
        let cfg = AdamParams::from(&TrainConfig::default());
        adam_step(&mut [&mut p], &[g], &["p".into()], &mut state, cfg).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn adam_single_step_by_hand() {
        let (mut p, g, mut state) = adam_fixture(0.25);
        let cfg = AdamParams::from(&TrainConfig::default());
        adam_step(&mut [&mut p], &[g], &["p".into()], &mut state, cfg).unwrap();
        // m = 0.1 g, v = 0.001 g^2; bias correction gives m_hat = g, v_hat = g^2.
        let m_hat = (0.1 * 0.25) / (1.0 - 0.9);
        let v_hat = (0.001 * 0.25 * 0.25) / (1.0 - 0.999);
        let step = 1e-3 * m_hat / (f64::sqrt(v_hat) + 1e-8);
        for (a, b) in p.data().iter().zip([1.0, -2.0, 0.5]) {
            assert!((a - (b - step)).abs() < 1e-12);
        }
        assert_eq!(state.step, 1);
    }

    #[test]
    fn adam_names_nan_parameter() {
        let (mut p, _, mut state) = adam_fixture(0.0);
        let g = Tensor::new(vec![3], vec![0.0, f64::NAN, 0.0]).unwrap();
        let cfg = AdamParams::from(&TrainConfig::default());
        let err = adam_step(&mut [&mut p], &[g], &["kan.mu".into()], &mut state, cfg).unwrap_err();
        assert!(err.to_string().contains("kan.mu[1]"), "{err}");
        assert_eq!(state.step, 0);
    }

    #[test]
    fn defaults_are_the_reference_setup() {
        let c = TrainConfig::default();
        assert_eq!(
            (
                c.batch_size,
                c.dropout,
                c.kernel,
                c.lr,
                c.epochs,
                c.hidden.clone(),
                c.grid_size
            ),
            (64, 0.5, 3, 0.001, 10, vec![32, 64, 128], 5)
        );
    }
}
