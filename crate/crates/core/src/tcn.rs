//! Weight-normalized dilated causal convolutions stacked into residual blocks.
//!
//! Activations for a batch are stored channel-major: element `(c, b, t)` of a
//! `C`-channel batch of `B` sequences of length `L` lives at
//! `c * B * L + b * L + t`. A convolution gathers its causal taps into an
//! im2col matrix and runs a single matrix product, so the whole batch goes
//! through one GEMM per layer.
//!
//! Tap `i` of a kernel reads the input `i * d` steps in the past; tap 0 is
//! the current step. Positions before the start of the sequence read zero.

use crate::error::{Error, Result};
use crate::tensor::{gaussian_fill, gemm, MatRef, Rng, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    /// Direction weights, `out × in × k`.
    pub v: Tensor,
    /// Per-output-channel gain; the effective kernel row has norm `g[o]`.
    pub g: Tensor,
    pub bias: Tensor,
    pub dilation: usize,
    pub kernel: usize,
}

#[derive(Debug, Clone)]
pub struct ConvCache {
    col: Vec<f64>,
    weight: Vec<f64>,
    norms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub v: Tensor,
    pub g: Tensor,
    pub bias: Tensor,
}

impl ConvLayer {
    /// `v ~ N(0, 1/sqrt(in·k))`, `g = ‖v‖` so the layer starts as a plain convolution.
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, dilation: usize, rng: &mut Rng) -> Self {
        let std = 1.0 / ((in_ch * kernel) as f64).sqrt();
        let v = gaussian_fill(rng, &[out_ch, in_ch, kernel], 0.0, std).expect("valid std");
        let row = in_ch * kernel;
        let g = (0..out_ch)
            .map(|o| {
                v.data()[o * row..(o + 1) * row]
                    .iter()
                    .map(|x| x * x)
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        ConvLayer {
            v,
            g: Tensor::new(vec![out_ch], g).expect("sized"),
            bias: Tensor::zeros(&[out_ch]),
            dilation,
            kernel,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.v.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.v.shape()[1]
    }

    pub fn n_params(&self) -> usize {
        self.v.len() + self.g.len() + self.bias.len()
    }

    /// Effective kernel `g · v / ‖v‖` as an `out × (in·k)` matrix, plus the row norms.
    pub fn effective_weight(&self) -> (Vec<f64>, Vec<f64>) {
        let row = self.in_channels() * self.kernel;
        let mut weight = self.v.data().to_vec();
        let mut norms = Vec::with_capacity(self.out_channels());
        for o in 0..self.out_channels() {
            let r = &mut weight[o * row..(o + 1) * row];
            let norm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            let factor = if norm > 0.0 { self.g.data()[o] / norm } else { 0.0 };
            r.iter_mut().for_each(|x| *x *= factor);
            norms.push(norm);
        }
        (weight, norms)
    }

    fn im2col(&self, x: &[f64], batch: usize, len: usize) -> Vec<f64> {
        let in_ch = self.in_channels();
        let k = self.kernel;
        let n = batch * len;
        let mut col = vec![0.0; in_ch * k * n];
        for c in 0..in_ch {
            for i in 0..k {
                let shift = i * self.dilation;
                let dst_row = &mut col[(c * k + i) * n..(c * k + i + 1) * n];
                for b in 0..batch {
                    let base = b * len;
                    if shift < len {
                        dst_row[base + shift..base + len].copy_from_slice(&x[c * n + base..c * n + base + len - shift]);
                    }
                }
            }
        }
        col
    }

    fn col2im(&self, dcol: &[f64], batch: usize, len: usize) -> Vec<f64> {
        let in_ch = self.in_channels();
        let k = self.kernel;
        let n = batch * len;
        let mut dx = vec![0.0; in_ch * n];
        for c in 0..in_ch {
            for i in 0..k {
                let shift = i * self.dilation;
                if shift >= len {
                    continue;
                }
                let src = &dcol[(c * k + i) * n..(c * k + i + 1) * n];
                for b in 0..batch {
                    let base = b * len;
                    let dst = &mut dx[c * n + base..c * n + base + len - shift];
                    for (d, s) in dst.iter_mut().zip(&src[base + shift..base + len]) {
                        *d += s;
                    }
                }
            }
        }
        dx
    }

    /// Batched forward: `x` is `in × (batch·len)`, the result `out × (batch·len)`.
    pub fn forward_batch(&self, x: &[f64], batch: usize, len: usize) -> (Vec<f64>, ConvCache) {
        let n = batch * len;
        debug_assert_eq!(x.len(), self.in_channels() * n);
        let out_ch = self.out_channels();
        let rows = self.in_channels() * self.kernel;
        let (weight, norms) = self.effective_weight();
        let col = self.im2col(x, batch, len);
        let mut y = vec![0.0; out_ch * n];
        for o in 0..out_ch {
            y[o * n..(o + 1) * n].fill(self.bias.data()[o]);
        }
        gemm(
            out_ch,
            rows,
            n,
            1.0,
            MatRef::row_major(&weight, rows),
            MatRef::row_major(&col, n),
            1.0,
            &mut y,
        );
        (y, ConvCache { col, weight, norms })
    }

    /// Gradients of all parameters and of the input, given `dy` (`out × (batch·len)`).
    pub fn backward_batch(&self, cache: &ConvCache, dy: &[f64], batch: usize, len: usize) -> (ConvGrads, Vec<f64>) {
        let n = batch * len;
        let out_ch = self.out_channels();
        let rows = self.in_channels() * self.kernel;

        let dbias: Vec<f64> = (0..out_ch).map(|o| dy[o * n..(o + 1) * n].iter().sum()).collect();

        let mut dweight = vec![0.0; out_ch * rows];
        gemm(
            out_ch,
            n,
            rows,
            1.0,
            MatRef::row_major(dy, n),
            MatRef::transposed(&cache.col, n),
            0.0,
            &mut dweight,
        );

        let mut dcol = vec![0.0; rows * n];
        gemm(
            rows,
            out_ch,
            n,
            1.0,
            MatRef::transposed(&cache.weight, rows),
            MatRef::row_major(dy, n),
            0.0,
            &mut dcol,
        );
        let dx = self.col2im(&dcol, batch, len);

        // Through w = g·v/‖v‖.
        let mut dv = vec![0.0; out_ch * rows];
        let mut dg = vec![0.0; out_ch];
        for o in 0..out_ch {
            let norm = cache.norms[o];
            if norm == 0.0 {
                continue;
            }
            let v = &self.v.data()[o * rows..(o + 1) * rows];
            let dw = &dweight[o * rows..(o + 1) * rows];
            let grad_g = dw.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / norm;
            dg[o] = grad_g;
            let factor = self.g.data()[o] / norm;
            for ((d, &w), &vv) in dv[o * rows..(o + 1) * rows].iter_mut().zip(dw).zip(v) {
                *d = factor * (w - grad_g * vv / norm);
            }
        }
        (
            ConvGrads {
                v: Tensor::new(self.v.shape().to_vec(), dv).expect("sized"),
                g: Tensor::new(vec![out_ch], dg).expect("sized"),
                bias: Tensor::new(vec![out_ch], dbias).expect("sized"),
            },
            dx,
        )
    }
}

/// Prepends `(k-1)·d` zeros to every channel of `x` (`ch × L`).
pub fn causal_pad(x: &Tensor, kernel: usize, dilation: usize) -> Result<Tensor> {
    let (ch, len) = x.dims2()?;
    let pad = kernel.saturating_sub(1) * dilation;
    let mut out = vec![0.0; ch * (len + pad)];
    for c in 0..ch {
        out[c * (len + pad) + pad..(c + 1) * (len + pad)].copy_from_slice(x.row(c));
    }
    Tensor::new(vec![ch, len + pad], out)
}

/// Single-sequence convolution of `x` (`in × L`) into `out × L`.
pub fn dilated_conv_forward(layer: &ConvLayer, x: &Tensor) -> Result<Tensor> {
    let (ch, len) = x.dims2()?;
    if ch != layer.in_channels() {
        return Err(Error::Shape(format!(
            "layer expects {} input channels, got {ch}",
            layer.in_channels()
        )));
    }
    let (y, _) = layer.forward_batch(x.data(), 1, len);
    Tensor::new(vec![layer.out_channels(), len], y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub conv1: ConvLayer,
    pub conv2: ConvLayer,
    /// 1×1 projection on the skip path, present iff channel counts differ.
    pub downsample: Option<ConvLayer>,
    pub dropout: f64,
}

#[derive(Debug, Clone)]
struct BlockCache {
    conv1: ConvCache,
    pre1: Vec<f64>,
    mask1: Option<Vec<f64>>,
    conv2: ConvCache,
    pre2: Vec<f64>,
    mask2: Option<Vec<f64>>,
    down: Option<ConvCache>,
}

fn dropout_mask(len: usize, rate: f64, rng: &mut Rng) -> Vec<f64> {
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    // Each 64-bit draw yields two 32-bit uniforms.
    let threshold = (keep * 4_294_967_296.0) as u64;
    let mut mask = Vec::with_capacity(len + 1);
    while mask.len() < len {
        let bits = rng.next_u64();
        for half in [bits & 0xffff_ffff, bits >> 32] {
            mask.push(if half < threshold { scale } else { 0.0 });
        }
    }
    mask.truncate(len);
    mask
}

/// ReLU followed by an optional (inverted) dropout mask.
fn activate(pre: &[f64], mask: Option<&[f64]>) -> Vec<f64> {
    match mask {
        Some(m) => pre
            .iter()
            .zip(m)
            .map(|(&p, &k)| if p > 0.0 { p * k } else { 0.0 })
            .collect(),
        None => pre.iter().map(|&p| p.max(0.0)).collect(),
    }
}

fn activate_backward(pre: &[f64], mask: Option<&[f64]>, grad: &[f64]) -> Vec<f64> {
    match mask {
        Some(m) => pre
            .iter()
            .zip(m)
            .zip(grad)
            .map(|((&p, &k), &g)| if p > 0.0 { g * k } else { 0.0 })
            .collect(),
        None => pre
            .iter()
            .zip(grad)
            .map(|(&p, &g)| if p > 0.0 { g } else { 0.0 })
            .collect(),
    }
}

impl ResidualBlock {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, dilation: usize, dropout: f64, rng: &mut Rng) -> Self {
        let conv1 = ConvLayer::new(in_ch, out_ch, kernel, dilation, rng);
        let conv2 = ConvLayer::new(out_ch, out_ch, kernel, dilation, rng);
        let downsample = (in_ch != out_ch).then(|| ConvLayer::new(in_ch, out_ch, 1, 1, rng));
        ResidualBlock {
            conv1,
            conv2,
            downsample,
            dropout,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.conv1.in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.conv1.out_channels()
    }

    /// Batched forward; dropout masks are drawn from `rng` only when one is given.
    fn forward_impl(&self, x: &[f64], batch: usize, len: usize, mut rng: Option<&mut Rng>) -> (Vec<f64>, BlockCache) {
        let n = batch * len;
        let width = self.out_channels() * n;
        let use_dropout = self.dropout > 0.0;
        let (pre1, conv1) = self.conv1.forward_batch(x, batch, len);
        let mask1 = match (&mut rng, use_dropout) {
            (Some(r), true) => Some(dropout_mask(width, self.dropout, r)),
            _ => None,
        };
        let z1 = activate(&pre1, mask1.as_deref());
        let (pre2, conv2) = self.conv2.forward_batch(&z1, batch, len);
        let mask2 = match (&mut rng, use_dropout) {
            (Some(r), true) => Some(dropout_mask(width, self.dropout, r)),
            _ => None,
        };
        let mut out = activate(&pre2, mask2.as_deref());
        let down = match &self.downsample {
            Some(d) => {
                let (skip, cache) = d.forward_batch(x, batch, len);
                out.iter_mut().zip(&skip).for_each(|(o, s)| *o += s);
                Some(cache)
            }
            None => {
                out.iter_mut().zip(x).for_each(|(o, s)| *o += s);
                None
            }
        };
        (
            out,
            BlockCache {
                conv1,
                pre1,
                mask1,
                conv2,
                pre2,
                mask2,
                down,
            },
        )
    }

    fn backward_impl(&self, cache: &BlockCache, dout: &[f64], batch: usize, len: usize) -> (Vec<ConvGrads>, Vec<f64>) {
        let dpre2 = activate_backward(&cache.pre2, cache.mask2.as_deref(), dout);
        let (g2, dz1) = self.conv2.backward_batch(&cache.conv2, &dpre2, batch, len);
        let dpre1 = activate_backward(&cache.pre1, cache.mask1.as_deref(), &dz1);
        let (g1, mut dx) = self.conv1.backward_batch(&cache.conv1, &dpre1, batch, len);
        let mut grads = vec![g1, g2];
        match (&self.downsample, &cache.down) {
            (Some(d), Some(dc)) => {
                let (gd, dskip) = d.backward_batch(dc, dout, batch, len);
                dx.iter_mut().zip(&dskip).for_each(|(a, b)| *a += b);
                grads.push(gd);
            }
            _ => dx.iter_mut().zip(dout).for_each(|(a, b)| *a += b),
        }
        (grads, dx)
    }
}

/// Runs one block on a single `in × L` sequence.
pub fn block_forward(block: &ResidualBlock, x: &Tensor, training: bool, rng: &mut Rng) -> Result<Tensor> {
    let (ch, len) = x.dims2()?;
    if ch != block.in_channels() {
        return Err(Error::Shape(format!(
            "block expects {} channels, got {ch}",
            block.in_channels()
        )));
    }
    let (y, _) = block.forward_impl(x.data(), 1, len, training.then_some(rng));
    Tensor::new(vec![block.out_channels(), len], y)
}

#[derive(Debug, Clone)]
struct StackCache {
    batch: usize,
    len: usize,
    blocks: Vec<BlockCache>,
    head: ConvCache,
}

/// Residual blocks with dilations `1, 2, 4, …` and a 1×1 head collapsing the
/// last block's channels to a single output sequence.
#[derive(Debug, Clone)]
pub struct TcnStack {
    pub blocks: Vec<ResidualBlock>,
    pub head: ConvLayer,
    cache: Option<StackCache>,
}

impl PartialEq for TcnStack {
    fn eq(&self, other: &Self) -> bool {
        self.blocks == other.blocks && self.head == other.head
    }
}

/// Parameter gradients in [`TcnStack::parameters`] order, plus the input gradient.
#[derive(Debug, Clone)]
pub struct TcnGrads {
    pub params: Vec<Tensor>,
    /// `batch × len`.
    pub input: Vec<f64>,
}

impl TcnStack {
    pub fn new(hidden: &[usize], kernel: usize, dropout: f64, rng: &mut Rng) -> Self {
        let mut in_ch = 1;
        let mut blocks = Vec::with_capacity(hidden.len());
        for (i, &width) in hidden.iter().enumerate() {
            blocks.push(ResidualBlock::new(in_ch, width, kernel, 1 << i, dropout, rng));
            in_ch = width;
        }
        let head = ConvLayer::new(in_ch, 1, 1, 1, rng);
        TcnStack {
            blocks,
            head,
            cache: None,
        }
    }

    pub fn from_parts(blocks: Vec<ResidualBlock>, head: ConvLayer) -> Self {
        TcnStack {
            blocks,
            head,
            cache: None,
        }
    }

    /// Number of input positions that can influence one output position.
    pub fn receptive_field(&self) -> usize {
        1 + self
            .blocks
            .iter()
            .map(|b| 2 * (b.conv1.kernel - 1) * b.conv1.dilation)
            .sum::<usize>()
    }

    pub fn n_params(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.len()).sum()
    }

    fn layers(&self) -> Vec<(String, &ConvLayer)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("tcn.block{i}.conv1"), &b.conv1));
            out.push((format!("tcn.block{i}.conv2"), &b.conv2));
            if let Some(d) = &b.downsample {
                out.push((format!("tcn.block{i}.downsample"), d));
            }
        }
        out.push(("tcn.head".to_string(), &self.head));
        out
    }

    /// Named parameters in a fixed order: per layer `v`, `g`, `bias`.
    pub fn parameters(&self) -> Vec<(String, &Tensor)> {
        self.layers()
            .into_iter()
            .flat_map(|(name, l)| {
                [
                    (format!("{name}.v"), &l.v),
                    (format!("{name}.g"), &l.g),
                    (format!("{name}.bias"), &l.bias),
                ]
            })
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            let mut layers = vec![&mut b.conv1, &mut b.conv2];
            if let Some(d) = &mut b.downsample {
                layers.push(d);
            }
            for l in layers {
                out.extend([&mut l.v, &mut l.g, &mut l.bias]);
            }
        }
        out.extend([&mut self.head.v, &mut self.head.g, &mut self.head.bias]);
        out
    }

    fn run(&self, x: &[f64], batch: usize, len: usize, mut rng: Option<&mut Rng>) -> (Vec<f64>, StackCache) {
        let mut act = x.to_vec();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (out, cache) = block.forward_impl(&act, batch, len, rng.as_deref_mut());
            caches.push(cache);
            act = out;
        }
        let (out, head) = self.head.forward_batch(&act, batch, len);
        (
            out,
            StackCache {
                batch,
                len,
                blocks: caches,
                head,
            },
        )
    }

    fn check_input(&self, x: &[f64], batch: usize, len: usize) -> Result<()> {
        if x.len() != batch * len {
            return Err(Error::Shape(format!(
                "{} values for a batch of {batch} sequences of length {len}",
                x.len()
            )));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("non-finite input to the convolution stack".into()));
        }
        Ok(())
    }

    /// Inference forward over `batch` sequences of length `len` stored row by row.
    /// Dropout is off and nothing is cached.
    pub fn infer(&self, x: &[f64], batch: usize, len: usize) -> Result<Vec<f64>> {
        self.check_input(x, batch, len)?;
        Ok(self.run(x, batch, len, None).0)
    }

    /// Training-capable forward that caches activations for [`TcnStack::backward`].
    /// Dropout masks are drawn from `rng` when `training` is set.
    pub fn forward(&mut self, x: &[f64], batch: usize, len: usize, training: bool, rng: &mut Rng) -> Result<Vec<f64>> {
        self.check_input(x, batch, len)?;
        let (out, cache) = self.run(x, batch, len, training.then_some(rng));
        self.cache = Some(cache);
        Ok(out)
    }

    /// Reverse pass for the most recent [`TcnStack::forward`]; consumes the cache.
    pub fn backward(&mut self, upstream: &[f64]) -> Result<TcnGrads> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State("backward called before forward".into()))?;
        let (batch, len) = (cache.batch, cache.len);
        if upstream.len() != batch * len {
            return Err(Error::Shape(format!(
                "upstream gradient of {} for output of {}",
                upstream.len(),
                batch * len
            )));
        }
        let (head_grads, mut grad) = self.head.backward_batch(&cache.head, upstream, batch, len);
        let mut per_block = Vec::with_capacity(self.blocks.len());
        for (block, bc) in self.blocks.iter().zip(&cache.blocks).rev() {
            let (g, dx) = block.backward_impl(bc, &grad, batch, len);
            per_block.push(g);
            grad = dx;
        }
        per_block.reverse();
        let mut params = Vec::new();
        for layer_grads in per_block.into_iter().chain(std::iter::once(vec![head_grads])) {
            for g in layer_grads {
                params.extend([g.v, g.g, g.bias]);
            }
        }
        Ok(TcnGrads { params, input: grad })
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Runs the stack on one serialized sample, returning a sequence of the same length.
pub fn tcn_forward(
    stack: &mut TcnStack,
    sample: &[f64],
    expected_len: usize,
    training: bool,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if sample.len() != expected_len {
        return Err(Error::Shape(format!(
            "sample has {} values, expected {expected_len}",
            sample.len()
        )));
    }
    stack.forward(sample, 1, expected_len, training, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv_from(weights: &[f64], out_ch: usize, in_ch: usize, k: usize, d: usize) -> ConvLayer {
        let v = Tensor::new(vec![out_ch, in_ch, k], weights.to_vec()).unwrap();
        let row = in_ch * k;
        let g = (0..out_ch)
            .map(|o| {
                weights[o * row..(o + 1) * row]
                    .iter()
                    .map(|x| x * x)
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        ConvLayer {
            v,
            g: Tensor::new(vec![out_ch], g).unwrap(),
            bias: Tensor::zeros(&[out_ch]),
            dilation: d,
            kernel: k,
        }
    }

    /// Direct evaluation of the causal dilated convolution, independent of im2col.
    fn loop_oracle(layer: &ConvLayer, x: &Tensor) -> Tensor {
        let (in_ch, len) = x.dims2().unwrap();
        let out_ch = layer.out_channels();
        let k = layer.kernel;
        let mut y = Tensor::zeros(&[out_ch, len]);
        for o in 0..out_ch {
            let row: Vec<f64> = layer.v.data()[o * in_ch * k..(o + 1) * in_ch * k].to_vec();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            for t in 0..len {
                let mut acc = layer.bias.data()[o];
                for c in 0..in_ch {
                    for i in 0..k {
                        let w = layer.g.data()[o] * row[c * k + i] / norm;
                        if let Some(src) = t.checked_sub(i * layer.dilation) {
                            acc += w * x.data()[c * len + src];
                        }
                    }
                }
                y.data_mut()[o * len + t] = acc;
            }
        }
        y
    }

    #[test]
    fn causal_pad_examples() {
        let x = Tensor::new(vec![1, 5], vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let p = causal_pad(&x, 3, 2).unwrap();
        assert_eq!(p.shape(), &[1, 9]);
        assert_eq!(&p.data()[..4], &[0.0; 4]);
        assert_eq!(&p.data()[4..], x.data());
        assert_eq!(causal_pad(&x, 1, 4).unwrap(), x);
    }

    #[test]
    fn identity_and_first_difference() {
        let id = conv_from(&[1.0], 1, 1, 1, 1);
        let x = Tensor::new(vec![1, 3], vec![1.0, 2.0, 4.0]).unwrap();
        assert_eq!(dilated_conv_forward(&id, &x).unwrap(), x);

        let mut diff = conv_from(&[1.0, -1.0], 1, 1, 2, 1);
        diff.g = Tensor::new(vec![1], vec![2f64.sqrt()]).unwrap();
        let y = dilated_conv_forward(&diff, &x).unwrap();
        for (a, b) in y.data().iter().zip([1.0, 1.0, 2.0]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn random_layer_matches_loop_oracle() {
        let mut rng = Rng::new(17);
        for (in_ch, out_ch, k, d) in [(3, 4, 3, 1), (2, 5, 3, 2), (4, 2, 2, 4), (1, 3, 1, 1)] {
            let mut layer = ConvLayer::new(in_ch, out_ch, k, d, &mut rng);
            layer.g = gaussian_fill(&mut rng, &[out_ch], 1.0, 0.3).unwrap();
            layer.bias = gaussian_fill(&mut rng, &[out_ch], 0.0, 1.0).unwrap();
            let x = gaussian_fill(&mut rng, &[in_ch, 13], 0.0, 1.0).unwrap();
            let fast = dilated_conv_forward(&layer, &x).unwrap();
            let slow = loop_oracle(&layer, &x);
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn channel_mismatch_is_a_shape_error() {
        let layer = ConvLayer::new(2, 3, 3, 1, &mut Rng::new(1));
        let x = Tensor::zeros(&[3, 8]);
        assert!(matches!(dilated_conv_forward(&layer, &x), Err(Error::Shape(_))));
    }

    #[test]
    fn weight_norm_rows_have_norm_g() {
        let mut rng = Rng::new(4);
        let mut layer = ConvLayer::new(3, 6, 3, 1, &mut rng);
        layer.g = gaussian_fill(&mut rng, &[6], 2.0, 0.5).unwrap();
        let (w, _) = layer.effective_weight();
        for o in 0..6 {
            let norm = w[o * 9..(o + 1) * 9].iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - layer.g.data()[o].abs()).abs() < 1e-10);
        }
    }

    #[test]
    fn zeroed_block_is_identity() {
        let mut rng = Rng::new(2);
        let mut block = ResidualBlock::new(3, 3, 3, 2, 0.5, &mut rng);
        assert!(block.downsample.is_none());
        for conv in [&mut block.conv1, &mut block.conv2] {
            conv.v = Tensor::zeros(conv.v.shape());
            conv.g = Tensor::zeros(conv.g.shape());
            conv.bias = Tensor::zeros(conv.bias.shape());
        }
        let x = gaussian_fill(&mut rng, &[3, 10], 0.0, 1.0).unwrap();
        assert_eq!(block_forward(&block, &x, false, &mut rng).unwrap(), x);
        assert_eq!(block_forward(&block, &x, true, &mut rng).unwrap(), x);
    }

    #[test]
    fn inference_is_deterministic_and_causal() {
        let mut rng = Rng::new(8);
        let block = ResidualBlock::new(1, 4, 3, 2, 0.5, &mut rng);
        let x = gaussian_fill(&mut rng, &[1, 20], 0.0, 1.0).unwrap();
        let a = block_forward(&block, &x, false, &mut Rng::new(1)).unwrap();
        let b = block_forward(&block, &x, false, &mut Rng::new(2)).unwrap();
        assert_eq!(a, b);
        for p in 0..20 {
            let mut y = x.clone();
            y.data_mut()[p] += 1.0;
            let out = block_forward(&block, &y, false, &mut rng).unwrap();
            for c in 0..4 {
                for t in 0..p {
                    assert_eq!(out.data()[c * 20 + t], a.data()[c * 20 + t]);
                }
            }
        }
    }

    #[test]
    fn stack_preserves_length_and_zero_input_gives_zero() {
        let mut rng = Rng::new(3);
        let mut stack = TcnStack::new(&[4, 8, 8], 3, 0.5, &mut rng);
        assert_eq!(stack.receptive_field(), 1 + 2 * 2 * (1 + 2 + 4));
        let out = tcn_forward(&mut stack, &[0.0; 30], 30, false, &mut rng).unwrap();
        assert_eq!(out, vec![0.0; 30]);
        assert!(tcn_forward(&mut stack, &[0.0; 29], 30, false, &mut rng).is_err());
    }

    #[test]
    fn default_stack_receptive_field_is_29() {
        let mut rng = Rng::new(5);
        let stack = TcnStack::new(&[32, 64, 128], 3, 0.5, &mut rng);
        assert_eq!(stack.receptive_field(), 29);
        let len = 60;
        let x = gaussian_fill(&mut rng, &[len], 0.0, 1.0).unwrap();
        let base = stack.infer(x.data(), 1, len).unwrap();
        let influencing = (0..len)
            .filter(|&p| {
                let mut y = x.clone();
                y.data_mut()[p] += 0.5;
                stack.infer(y.data(), 1, len).unwrap()[len - 1] != base[len - 1]
            })
            .count();
        assert_eq!(influencing, 29);
    }

    #[test]
    fn backward_requires_forward() {
        let mut stack = TcnStack::new(&[2], 3, 0.0, &mut Rng::new(1));
        assert!(matches!(stack.backward(&[0.0; 4]), Err(Error::State(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = Rng::new(6);
        let mut stack = TcnStack::new(&[3, 4], 3, 0.5, &mut rng);
        let x = gaussian_fill(&mut rng, &[2 * 9], 0.0, 1.0).unwrap();
        stack.forward(x.data(), 2, 9, true, &mut rng).unwrap();
        let grads = stack.backward(&[0.0; 18]).unwrap();
        assert!(grads.params.iter().all(|g| g.data().iter().all(|&v| v == 0.0)));
        assert!(grads.input.iter().all(|&v| v == 0.0));
    }

    fn loss(stack: &TcnStack, x: &[f64], w: &[f64], batch: usize, len: usize, mask_seed: Option<u64>) -> f64 {
        let mut s = stack.clone();
        let out = match mask_seed {
            Some(seed) => s.forward(x, batch, len, true, &mut Rng::new(seed)).unwrap(),
            None => s.infer(x, batch, len).unwrap(),
        };
        out.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + 0.5 * out.iter().map(|v| v * v).sum::<f64>()
    }

    fn check_gradients(mask_seed: Option<u64>) {
        let mut rng = Rng::new(12);
        let mut stack = TcnStack::new(&[3, 5], 3, 0.3, &mut rng);
        for p in stack.parameters_mut() {
            for v in p.data_mut() {
                *v += 0.1 * rng.standard_normal();
            }
        }
        let (batch, len) = (2, 11);
        let x = gaussian_fill(&mut rng, &[batch * len], 0.0, 1.0).unwrap().into_data();
        let w = gaussian_fill(&mut rng, &[batch * len], 0.0, 1.0).unwrap().into_data();

        let mut s = stack.clone();
        let out = match mask_seed {
            Some(seed) => s.forward(&x, batch, len, true, &mut Rng::new(seed)).unwrap(),
            None => s.forward(&x, batch, len, false, &mut rng).unwrap(),
        };
        let upstream: Vec<f64> = out.iter().zip(&w).map(|(o, wi)| o + wi).collect();
        let grads = s.backward(&upstream).unwrap();

        let h = 1e-6;
        let n_params = stack.parameters().len();
        for pi in 0..n_params {
            for j in 0..stack.parameters()[pi].1.len() {
                let mut plus = stack.clone();
                plus.parameters_mut()[pi].data_mut()[j] += h;
                let mut minus = stack.clone();
                minus.parameters_mut()[pi].data_mut()[j] -= h;
                let numeric = (loss(&plus, &x, &w, batch, len, mask_seed)
                    - loss(&minus, &x, &w, batch, len, mask_seed))
                    / (2.0 * h);
                let analytic = grads.params[pi].data()[j];
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4);
                assert!(
                    rel < 1e-5,
                    "{} [{j}]: analytic {analytic} numeric {numeric}",
                    stack.parameters()[pi].0
                );
            }
        }
        for j in 0..x.len() {
            let mut xp = x.clone();
            xp[j] += h;
            let mut xm = x.clone();
            xm[j] -= h;
            let numeric = (loss(&stack, &xp, &w, batch, len, mask_seed) - loss(&stack, &xm, &w, batch, len, mask_seed))
                / (2.0 * h);
            let analytic = grads.input[j];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4);
            assert!(rel < 1e-5, "input[{j}]: analytic {analytic} numeric {numeric}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        check_gradients(None);
    }

    #[test]
    fn gradients_match_finite_differences_with_dropout_masks() {
        check_gradients(Some(77));
    }
}
