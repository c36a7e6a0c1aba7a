//! The full classifier: convolution stack, input standardization, and a
//! classification head producing one score per class.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kan::{BSplineBasis, KanLayer};
use crate::tcn::TcnStack;
use crate::tensor::{gaussian_fill, Rng, Tensor};

/// Head choice: the spline head, or a plain affine layer for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    #[default]
    Kan,
    Dense,
}

impl std::str::FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kan" => Ok(HeadKind::Kan),
            "dense" => Ok(HeadKind::Dense),
            other => Err(Error::Config(format!("unknown head {other:?} (expected kan or dense)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Flattened sample length, window × reduced dimension.
    pub input_len: usize,
    pub n_classes: usize,
    pub hidden: Vec<usize>,
    pub kernel: usize,
    pub dropout: f64,
    pub grid_size: usize,
    pub spline_order: usize,
    pub head: HeadKind,
    /// Fit a per-position standardization of head inputs on training data.
    pub normalize_head_input: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_len == 0 {
            return Err(Error::Config("input length must be positive".into()));
        }
        if self.n_classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                self.n_classes
            )));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config(format!("invalid hidden widths {:?}", self.hidden)));
        }
        if self.kernel == 0 {
            return Err(Error::Config("kernel size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.grid_size == 0 {
            return Err(Error::Config("grid size must be positive".into()));
        }
        Ok(())
    }
}

/// Affine map `u = (h - shift) / scale` applied per position before the head.
#[derive(Debug, Clone, PartialEq)]
pub struct InputNorm {
    pub shift: Tensor,
    pub scale: Tensor,
}

/// Standard deviations covered by the spline domain half-width.
pub const NORM_SPREAD: f64 = 2.5;

impl InputNorm {
    pub fn identity(len: usize) -> Self {
        InputNorm {
            shift: Tensor::zeros(&[len]),
            scale: Tensor::full(&[len], 1.0),
        }
    }

    /// Fits shift to the mean and scale to `NORM_SPREAD` standard deviations of each
    /// column of `rows` (`n × len`). Constant columns get scale 1.
    pub fn fit(rows: &[f64], n: usize, len: usize) -> Result<Self> {
        if n == 0 || rows.len() != n * len {
            return Err(Error::Shape(format!(
                "cannot fit normalization on {} values for {n}x{len}",
                rows.len()
            )));
        }
        let mut mean = vec![0.0; len];
        for r in rows.chunks_exact(len) {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; len];
        for r in rows.chunks_exact(len) {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .iter()
            .map(|s| {
                let std = (s / n as f64).sqrt();
                if std > 1e-12 {
                    NORM_SPREAD * std
                } else {
                    1.0
                }
            })
            .collect();
        Ok(InputNorm {
            shift: Tensor::new(vec![len], mean)?,
            scale: Tensor::new(vec![len], scale)?,
        })
    }

    fn apply(&self, h: &[f64]) -> Vec<f64> {
        let len = self.shift.len();
        let mut u = h.to_vec();
        for row in u.chunks_exact_mut(len) {
            for ((v, s), c) in row.iter_mut().zip(self.shift.data()).zip(self.scale.data()) {
                *v = (*v - s) / c;
            }
        }
        u
    }

    fn backward(&self, du: &mut [f64]) {
        let len = self.scale.len();
        for row in du.chunks_exact_mut(len) {
            for (v, c) in row.iter_mut().zip(self.scale.data()) {
                *v /= c;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    Kan(KanLayer),
    /// `weight` is `c × len`, `bias` is `c`.
    Dense {
        weight: Tensor,
        bias: Tensor,
    },
}

#[derive(Debug, Clone)]
pub struct MktcnModel {
    pub config: ModelConfig,
    pub tcn: TcnStack,
    pub norm: InputNorm,
    pub head: Head,
    dense_input: Option<(Vec<f64>, usize)>,
}

impl PartialEq for MktcnModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.tcn == other.tcn && self.norm == other.norm && self.head == other.head
    }
}

/// Gradients in [`MktcnModel::parameters`] order and the input gradient.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub params: Vec<Tensor>,
    pub input: Vec<f64>,
}

impl MktcnModel {
    pub fn new(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let tcn = TcnStack::new(&config.hidden, config.kernel, config.dropout, rng);
        let (l, c) = (config.input_len, config.n_classes);
        let head = match config.head {
            HeadKind::Kan => {
                let basis = BSplineBasis::new(config.spline_order, config.grid_size, -1.0, 1.0)?;
                Head::Kan(KanLayer::new(l, c, basis, rng))
            }
            HeadKind::Dense => Head::Dense {
                weight: gaussian_fill(rng, &[c, l], 0.0, 1.0 / (l as f64).sqrt())?,
                bias: Tensor::zeros(&[c]),
            },
        };
        Ok(MktcnModel {
            norm: InputNorm::identity(l),
            config,
            tcn,
            head,
            dense_input: None,
        })
    }

    pub fn from_parts(config: ModelConfig, tcn: TcnStack, norm: InputNorm, head: Head) -> Result<Self> {
        config.validate()?;
        let l = config.input_len;
        if norm.shift.shape() != [l] || norm.scale.shape() != [l] {
            return Err(Error::Shape(format!("normalization buffers do not have length {l}")));
        }
        let head_ok = match &head {
            Head::Kan(k) => k.n_in == l && k.n_out == config.n_classes,
            Head::Dense { weight, bias } => {
                weight.shape() == [config.n_classes, l] && bias.shape() == [config.n_classes]
            }
        };
        if !head_ok {
            return Err(Error::Shape("head dimensions do not match the model config".into()));
        }
        Ok(MktcnModel {
            config,
            tcn,
            norm,
            head,
            dense_input: None,
        })
    }

    pub fn n_params(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.len()).sum()
    }

    /// Trainable tensors: the convolution stack first, then the head.
    pub fn parameters(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.tcn.parameters();
        match &self.head {
            Head::Kan(k) => out.extend(k.parameters()),
            Head::Dense { weight, bias } => {
                out.push(("dense.weight".to_string(), weight));
                out.push(("dense.bias".to_string(), bias));
            }
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.tcn.parameters_mut();
        match &mut self.head {
            Head::Kan(k) => out.extend(k.parameters_mut()),
            Head::Dense { weight, bias } => out.extend([weight, bias]),
        }
        out
    }

    /// Runs the convolution stack in inference mode and fits the head-input
    /// standardization on its outputs for `samples` (`n × input_len`).
    pub fn fit_input_norm(&mut self, samples: &[f64], n: usize) -> Result<()> {
        let l = self.config.input_len;
        if !self.config.normalize_head_input {
            self.norm = InputNorm::identity(l);
            return Ok(());
        }
        let mut h = Vec::with_capacity(n * l);
        for chunk in samples.chunks(PREDICT_CHUNK * l) {
            h.extend(self.tcn.infer(chunk, chunk.len() / l, l)?);
        }
        self.norm = InputNorm::fit(&h, n, l)?;
        Ok(())
    }

    fn check(&self, x: &[f64], batch: usize) -> Result<()> {
        if x.len() != batch * self.config.input_len {
            return Err(Error::Shape(format!(
                "expected {batch} samples of length {}, got {} values",
                self.config.input_len,
                x.len()
            )));
        }
        Ok(())
    }

    fn dense(weight: &Tensor, bias: &Tensor, u: &[f64], batch: usize) -> Vec<f64> {
        let (c, l) = (bias.len(), u.len() / batch.max(1));
        let mut out = vec![0.0; batch * c];
        for b in 0..batch {
            let row = &u[b * l..(b + 1) * l];
            for k in 0..c {
                let w = &weight.data()[k * l..(k + 1) * l];
                out[b * c + k] = bias.data()[k] + w.iter().zip(row).map(|(a, x)| a * x).sum::<f64>();
            }
        }
        out
    }

    /// Class scores for `batch` samples, dropout off, nothing cached.
    pub fn logits(&self, x: &[f64], batch: usize) -> Result<Vec<f64>> {
        self.check(x, batch)?;
        let l = self.config.input_len;
        let h = self.tcn.infer(x, batch, l)?;
        let u = self.norm.apply(&h);
        match &self.head {
            Head::Kan(k) => k.infer(&u, batch),
            Head::Dense { weight, bias } => Ok(Self::dense(weight, bias, &u, batch)),
        }
    }

    /// Forward pass that caches what [`MktcnModel::backward`] needs.
    pub fn forward(&mut self, x: &[f64], batch: usize, training: bool, rng: &mut Rng) -> Result<Vec<f64>> {
        self.check(x, batch)?;
        let l = self.config.input_len;
        let h = self.tcn.forward(x, batch, l, training, rng)?;
        let u = self.norm.apply(&h);
        match &mut self.head {
            Head::Kan(k) => k.forward(&u, batch),
            Head::Dense { weight, bias } => {
                let out = Self::dense(weight, bias, &u, batch);
                self.dense_input = Some((u, batch));
                Ok(out)
            }
        }
    }

    /// Gradients of a loss whose derivative with respect to the scores is `upstream`.
    pub fn backward(&mut self, upstream: &[f64]) -> Result<ModelGrads> {
        let c = self.config.n_classes;
        let l = self.config.input_len;
        let (head_grads, mut du) = match &mut self.head {
            Head::Kan(k) => {
                let g = k.backward(upstream)?;
                (vec![g.coef, g.mu, g.omega], g.input)
            }
            Head::Dense { weight, .. } => {
                let (u, batch) = self
                    .dense_input
                    .take()
                    .ok_or_else(|| Error::State("backward called before forward".into()))?;
                if upstream.len() != batch * c {
                    return Err(Error::Shape(format!(
                        "upstream gradient of {} for {batch}x{c} scores",
                        upstream.len()
                    )));
                }
                let mut dw = vec![0.0; c * l];
                let mut db = vec![0.0; c];
                let mut du = vec![0.0; batch * l];
                for b in 0..batch {
                    let row = &u[b * l..(b + 1) * l];
                    let drow = &mut du[b * l..(b + 1) * l];
                    for k in 0..c {
                        let up = upstream[b * c + k];
                        db[k] += up;
                        let w = &weight.data()[k * l..(k + 1) * l];
                        for j in 0..l {
                            dw[k * l + j] += up * row[j];
                            drow[j] += up * w[j];
                        }
                    }
                }
                (vec![Tensor::new(vec![c, l], dw)?, Tensor::new(vec![c], db)?], du)
            }
        };
        self.norm.backward(&mut du);
        let tcn = self.tcn.backward(&du)?;
        let mut params = tcn.params;
        params.extend(head_grads);
        Ok(ModelGrads {
            params,
            input: tcn.input,
        })
    }
}

/// Samples per inference batch.
pub const PREDICT_CHUNK: usize = 256;

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(head: HeadKind) -> MktcnModel {
        let config = ModelConfig {
            input_len: 12,
            n_classes: 3,
            hidden: vec![4, 8],
            kernel: 3,
            dropout: 0.0,
            grid_size: 5,
            spline_order: 3,
            head,
            normalize_head_input: true,
        };
        MktcnModel::new(config, &mut Rng::new(5)).unwrap()
    }

    #[test]
    fn parameter_lists_align() {
        for head in [HeadKind::Kan, HeadKind::Dense] {
            let mut m = tiny(head);
            let shapes: Vec<Vec<usize>> = m.parameters().iter().map(|(_, t)| t.shape().to_vec()).collect();
            let mut_shapes: Vec<Vec<usize>> = m.parameters_mut().iter().map(|t| t.shape().to_vec()).collect();
            assert_eq!(shapes, mut_shapes);
            let x = vec![0.1; 24];
            m.forward(&x, 2, false, &mut Rng::new(0)).unwrap();
            let g = m.backward(&[0.5; 6]).unwrap();
            let grad_shapes: Vec<Vec<usize>> = g.params.iter().map(|t| t.shape().to_vec()).collect();
            assert_eq!(shapes, grad_shapes);
        }
    }

    #[test]
    fn normalization_standardizes_head_inputs() {
        let mut m = tiny(HeadKind::Kan);
        let mut rng = Rng::new(9);
        let x = gaussian_fill(&mut rng, &[300 * 12], 0.0, 1.0).unwrap().into_data();
        m.fit_input_norm(&x, 300).unwrap();
        let h = m.tcn.infer(&x, 300, 12).unwrap();
        let u = m.norm.apply(&h);
        for j in 0..12 {
            let col: Vec<f64> = (0..300).map(|i| u[i * 12 + j]).collect();
            let mean = col.iter().sum::<f64>() / 300.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 300.0;
            assert!(mean.abs() < 1e-10);
            assert!((var.sqrt() - 1.0 / NORM_SPREAD).abs() < 1e-10);
        }
    }

    #[test]
    fn inference_matches_cached_forward() {
        for head in [HeadKind::Kan, HeadKind::Dense] {
            let mut m = tiny(head);
            let x: Vec<f64> = (0..36).map(|i| (i as f64 * 0.37).sin()).collect();
            let a = m.logits(&x, 3).unwrap();
            let b = m.forward(&x, 3, false, &mut Rng::new(1)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn wrong_length_is_a_shape_error() {
        let m = tiny(HeadKind::Kan);
        assert!(matches!(m.logits(&[0.0; 11], 1), Err(Error::Shape(_))));
    }

    #[test]
    fn dense_backward_requires_forward() {
        let mut m = tiny(HeadKind::Dense);
        assert!(matches!(m.backward(&[0.0; 3]), Err(Error::State(_))));
    }
}
