//! Kolmogorov-Arnold layer: every input-output edge carries its own
//! univariate function `phi(x) = mu * swish(x) + omega * sum_i d_i B_i(x)`,
//! and each output sums its incoming edges.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{gaussian_fill, Rng, Tensor};

/// Uniform B-spline basis on `[lo, hi]` with knots extended `order` steps past each end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BSplineBasis {
    pub order: usize,
    pub grid_size: usize,
    pub lo: f64,
    pub hi: f64,
    pub knots: Vec<f64>,
}

/// Basis values and derivatives at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisPoint {
    pub values: Vec<f64>,
    /// Zero when the point was clamped to the domain.
    pub derivatives: Vec<f64>,
    pub clamped: bool,
}

impl BSplineBasis {
    pub fn new(order: usize, grid_size: usize, lo: f64, hi: f64) -> Result<Self> {
        if grid_size == 0 || !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Parameter(format!(
                "invalid basis: grid {grid_size}, domain [{lo}, {hi}]"
            )));
        }
        let h = (hi - lo) / grid_size as f64;
        let knots = (0..grid_size + 1 + 2 * order)
            .map(|j| lo + (j as f64 - order as f64) * h)
            .collect();
        Ok(BSplineBasis {
            order,
            grid_size,
            lo,
            hi,
            knots,
        })
    }

    /// Cubic basis with `grid_size` intervals on `[-1, 1]`.
    pub fn cubic(grid_size: usize) -> Self {
        BSplineBasis::new(3, grid_size, -1.0, 1.0).expect("valid default basis")
    }

    pub fn len(&self) -> usize {
        self.grid_size + self.order
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    /// Cox–de Boor recursion at `clamp(x)`, returning the degree `order - 1`
    /// row as well so derivatives can be formed from it.
    fn recursion(&self, x: f64) -> (Vec<f64>, Vec<f64>) {
        let t = &self.knots;
        let intervals = t.len() - 1;
        let mut level = vec![0.0; intervals];
        // Half-open intervals; the right domain end belongs to the last inner interval.
        let last_inner = self.order + self.grid_size - 1;
        let idx = if x >= self.hi {
            last_inner
        } else {
            (0..intervals)
                .find(|&j| t[j] <= x && x < t[j + 1])
                .unwrap_or(last_inner)
        };
        level[idx] = 1.0;
        let mut previous = level.clone();
        for q in 1..=self.order {
            previous = level.clone();
            let count = intervals - q;
            let mut next = vec![0.0; count];
            for (j, slot) in next.iter_mut().enumerate() {
                let left = if previous[j] != 0.0 {
                    (x - t[j]) / (t[j + q] - t[j]) * previous[j]
                } else {
                    0.0
                };
                let right = if previous[j + 1] != 0.0 {
                    (t[j + q + 1] - x) / (t[j + q + 1] - t[j + 1]) * previous[j + 1]
                } else {
                    0.0
                };
                *slot = left + right;
            }
            level = next;
        }
        (level, previous)
    }

    /// Values of all `G + order` basis functions at `x` (clamped into the domain).
    pub fn eval(&self, x: f64) -> Vec<f64> {
        self.recursion(x.clamp(self.lo, self.hi)).0
    }

    pub fn eval_with_derivatives(&self, x: f64) -> BasisPoint {
        let clamped = !self.contains(x);
        let xc = x.clamp(self.lo, self.hi);
        let (values, lower) = self.recursion(xc);
        let p = self.order;
        let derivatives = if clamped || p == 0 {
            vec![0.0; values.len()]
        } else {
            let t = &self.knots;
            (0..values.len())
                .map(|j| p as f64 * lower[j] / (t[j + p] - t[j]) - p as f64 * lower[j + 1] / (t[j + p + 1] - t[j + 1]))
                .collect()
        };
        BasisPoint {
            values,
            derivatives,
            clamped,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn swish(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn swish_derivative(x: f64) -> f64 {
    let s = sigmoid(x);
    s + x * s * (1.0 - s)
}

/// One edge function.
#[derive(Debug, Clone, PartialEq)]
pub struct KanEdge {
    pub coef: Vec<f64>,
    pub mu: f64,
    pub omega: f64,
}

pub fn phi_eval(edge: &KanEdge, basis: &BSplineBasis, x: f64) -> f64 {
    let spline: f64 = basis.eval(x).iter().zip(&edge.coef).map(|(b, d)| b * d).sum();
    edge.mu * swish(x) + edge.omega * spline
}

#[derive(Debug, Clone)]
struct KanCache {
    batch: usize,
    x: Vec<f64>,
    /// `batch × n_in × n_basis`.
    values: Vec<f64>,
    derivatives: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct KanLayer {
    pub n_in: usize,
    pub n_out: usize,
    pub basis: BSplineBasis,
    /// `n_out × n_in × n_basis` spline coefficients.
    pub coef: Tensor,
    /// `n_out × n_in` base-path weights.
    pub mu: Tensor,
    /// `n_out × n_in` spline-path weights.
    pub omega: Tensor,
    cache: Option<KanCache>,
}

impl PartialEq for KanLayer {
    fn eq(&self, other: &Self) -> bool {
        self.basis == other.basis && self.coef == other.coef && self.mu == other.mu && self.omega == other.omega
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KanGrads {
    pub coef: Tensor,
    pub mu: Tensor,
    pub omega: Tensor,
    /// `batch × n_in`.
    pub input: Vec<f64>,
}

impl KanLayer {
    /// `d ~ N(0, 0.1)`, `mu ~ N(0, 1/sqrt(n_in))`, `omega = 1`.
    pub fn new(n_in: usize, n_out: usize, basis: BSplineBasis, rng: &mut Rng) -> Self {
        let nb = basis.len();
        let coef = gaussian_fill(rng, &[n_out, n_in, nb], 0.0, 0.1).expect("valid std");
        let mu = gaussian_fill(rng, &[n_out, n_in], 0.0, 1.0 / (n_in as f64).sqrt()).expect("valid std");
        KanLayer {
            n_in,
            n_out,
            basis,
            coef,
            mu,
            omega: Tensor::full(&[n_out, n_in], 1.0),
            cache: None,
        }
    }

    pub fn from_parts(basis: BSplineBasis, coef: Tensor, mu: Tensor, omega: Tensor) -> Result<Self> {
        let (n_out, n_in) = mu.dims2()?;
        if omega.shape() != [n_out, n_in] || coef.shape() != [n_out, n_in, basis.len()] {
            return Err(Error::Shape(format!(
                "KAN parts disagree: coef {:?}, mu {:?}, omega {:?}",
                coef.shape(),
                mu.shape(),
                omega.shape()
            )));
        }
        Ok(KanLayer {
            n_in,
            n_out,
            basis,
            coef,
            mu,
            omega,
            cache: None,
        })
    }

    pub fn edge(&self, out: usize, input: usize) -> KanEdge {
        let nb = self.basis.len();
        let start = (out * self.n_in + input) * nb;
        KanEdge {
            coef: self.coef.data()[start..start + nb].to_vec(),
            mu: self.mu.data()[out * self.n_in + input],
            omega: self.omega.data()[out * self.n_in + input],
        }
    }

    pub fn n_params(&self) -> usize {
        self.coef.len() + self.mu.len() + self.omega.len()
    }

    pub fn parameters(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("kan.coef".to_string(), &self.coef),
            ("kan.mu".to_string(), &self.mu),
            ("kan.omega".to_string(), &self.omega),
        ]
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.coef, &mut self.mu, &mut self.omega]
    }

    fn run(&self, x: &[f64], batch: usize, keep: bool) -> (Vec<f64>, Option<KanCache>) {
        let (n_in, n_out, nb) = (self.n_in, self.n_out, self.basis.len());
        let mut values = vec![0.0; batch * n_in * nb];
        let mut derivatives = if keep { vec![0.0; batch * n_in * nb] } else { Vec::new() };
        let mut sw = vec![0.0; batch * n_in];
        for b in 0..batch {
            for i in 0..n_in {
                let xi = x[b * n_in + i];
                sw[b * n_in + i] = swish(xi);
                let slot = (b * n_in + i) * nb;
                if keep {
                    let p = self.basis.eval_with_derivatives(xi);
                    values[slot..slot + nb].copy_from_slice(&p.values);
                    derivatives[slot..slot + nb].copy_from_slice(&p.derivatives);
                } else {
                    values[slot..slot + nb].copy_from_slice(&self.basis.eval(xi));
                }
            }
        }
        let mut out = vec![0.0; batch * n_out];
        for b in 0..batch {
            for j in 0..n_out {
                let mut acc = 0.0;
                for i in 0..n_in {
                    let e = j * n_in + i;
                    let basis = &values[(b * n_in + i) * nb..(b * n_in + i + 1) * nb];
                    let coef = &self.coef.data()[e * nb..(e + 1) * nb];
                    let spline: f64 = basis.iter().zip(coef).map(|(u, v)| u * v).sum();
                    acc += self.mu.data()[e] * sw[b * n_in + i] + self.omega.data()[e] * spline;
                }
                out[b * n_out + j] = acc;
            }
        }
        let cache = keep.then(|| KanCache {
            batch,
            x: x.to_vec(),
            values,
            derivatives,
        });
        (out, cache)
    }

    fn check(&self, x: &[f64], batch: usize) -> Result<()> {
        if x.len() != batch * self.n_in {
            return Err(Error::Shape(format!(
                "KAN layer expects {} inputs per sample, got {} values for {batch} samples",
                self.n_in,
                x.len()
            )));
        }
        Ok(())
    }

    /// Forward over `batch` rows of `n_in` inputs without caching.
    pub fn infer(&self, x: &[f64], batch: usize) -> Result<Vec<f64>> {
        self.check(x, batch)?;
        Ok(self.run(x, batch, false).0)
    }

    pub fn forward(&mut self, x: &[f64], batch: usize) -> Result<Vec<f64>> {
        self.check(x, batch)?;
        let (out, cache) = self.run(x, batch, true);
        self.cache = cache;
        Ok(out)
    }

    /// Reverse pass for the latest [`KanLayer::forward`]. Clamped inputs get no
    /// gradient through the spline path.
    pub fn backward(&mut self, upstream: &[f64]) -> Result<KanGrads> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State("KAN backward called before forward".into()))?;
        let (n_in, n_out, nb, batch) = (self.n_in, self.n_out, self.basis.len(), cache.batch);
        if upstream.len() != batch * n_out {
            return Err(Error::Shape(format!(
                "upstream gradient of {} for {batch}x{n_out} outputs",
                upstream.len()
            )));
        }
        let mut dcoef = vec![0.0; self.coef.len()];
        let mut dmu = vec![0.0; self.mu.len()];
        let mut domega = vec![0.0; self.omega.len()];
        let mut dx = vec![0.0; batch * n_in];
        for b in 0..batch {
            for i in 0..n_in {
                let xi = cache.x[b * n_in + i];
                let sw = swish(xi);
                let dsw = swish_derivative(xi);
                let slot = (b * n_in + i) * nb;
                let basis = &cache.values[slot..slot + nb];
                let dbasis = &cache.derivatives[slot..slot + nb];
                let mut grad_x = 0.0;
                for j in 0..n_out {
                    let up = upstream[b * n_out + j];
                    if up == 0.0 {
                        continue;
                    }
                    let e = j * n_in + i;
                    let coef = &self.coef.data()[e * nb..(e + 1) * nb];
                    let omega = self.omega.data()[e];
                    let mut spline = 0.0;
                    let mut spline_slope = 0.0;
                    for q in 0..nb {
                        spline += coef[q] * basis[q];
                        spline_slope += coef[q] * dbasis[q];
                        dcoef[e * nb + q] += up * omega * basis[q];
                    }
                    dmu[e] += up * sw;
                    domega[e] += up * spline;
                    grad_x += up * (self.mu.data()[e] * dsw + omega * spline_slope);
                }
                dx[b * n_in + i] = grad_x;
            }
        }
        Ok(KanGrads {
            coef: Tensor::new(self.coef.shape().to_vec(), dcoef)?,
            mu: Tensor::new(self.mu.shape().to_vec(), dmu)?,
            omega: Tensor::new(self.omega.shape().to_vec(), domega)?,
            input: dx,
        })
    }
}

/// Single-sample forward: `out_j = sum_i phi_{j,i}(x_i)`.
pub fn kan_forward(layer: &KanLayer, x: &[f64]) -> Result<Vec<f64>> {
    layer.infer(x, 1)
}

/// Composition of several layers, applied first to last.
pub fn kan_forward_deep(layers: &[KanLayer], x: &[f64]) -> Result<Vec<f64>> {
    layers.iter().try_fold(x.to_vec(), |acc, l| kan_forward(l, &acc))
}
