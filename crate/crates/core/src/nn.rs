//! Minimal layer library with hand-written backpropagation.
//!
//! Activations are `rows × cols` matrices: a sequence is `channels × steps`,
//! a flat vector is `features × 1`.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct Act {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Act {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(rows * cols, data.len());
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// `outputs × inputs`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv1d {
    pub in_channels: usize,
    pub filters: usize,
    pub width: usize,
    /// `filters × in_channels × width`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub features: usize,
    pub eps: f64,
    pub momentum: f64,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Dense(Dense),
    Conv1d(Conv1d),
    BatchNorm(BatchNorm),
    Relu,
    Dropout { rate: f64 },
    GlobalAvgPool,
    Flatten,
}

/// Shape-only description of a layer, used as the model file header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { inputs: usize, outputs: usize },
    Conv1d { in_channels: usize, filters: usize, width: usize },
    BatchNorm { features: usize, eps: f64, momentum: f64 },
    Relu,
    Dropout { rate: f64 },
    GlobalAvgPool,
    Flatten,
}

fn glorot<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.random_range(-limit..limit)).collect()
}

impl Dense {
    pub fn new<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            inputs,
            outputs,
            weight: glorot(rng, inputs, outputs, inputs * outputs),
            bias: vec![0.0; outputs],
        }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn forward(&self, x: &Act) -> Act {
        let mut out = self.bias.clone();
        for (o, y) in out.iter_mut().enumerate() {
            let w = &self.weight[o * self.inputs..(o + 1) * self.inputs];
            *y += w.iter().zip(&x.data).map(|(a, b)| a * b).sum::<f64>();
        }
        Act::new(self.outputs, 1, out)
    }

    fn backward_input(&self, x: &Act, g: &Act) -> Act {
        let mut dx = vec![0.0; self.inputs];
        for (o, &go) in g.data.iter().enumerate() {
            if go == 0.0 {
                continue;
            }
            let w = &self.weight[o * self.inputs..(o + 1) * self.inputs];
            for (d, &wi) in dx.iter_mut().zip(w) {
                *d += go * wi;
            }
        }
        Act::new(x.rows, x.cols, dx)
    }

    fn accumulate(&self, x: &Act, g: &Act, grads: &mut [Vec<f64>]) {
        let (dw, rest) = grads.split_at_mut(1);
        let (dw, db) = (&mut dw[0], &mut rest[0]);
        for (o, &go) in g.data.iter().enumerate() {
            db[o] += go;
            if go == 0.0 {
                continue;
            }
            let row = &mut dw[o * self.inputs..(o + 1) * self.inputs];
            for (d, &xi) in row.iter_mut().zip(&x.data) {
                *d += go * xi;
            }
        }
    }
}

impl Conv1d {
    pub fn new<R: Rng>(in_channels: usize, filters: usize, width: usize, rng: &mut R) -> Self {
        Self {
            in_channels,
            filters,
            width,
            weight: glorot(
                rng,
                in_channels * width,
                filters * width,
                filters * in_channels * width,
            ),
            bias: vec![0.0; filters],
        }
    }

    pub fn zeros(in_channels: usize, filters: usize, width: usize) -> Self {
        Self {
            in_channels,
            filters,
            width,
            weight: vec![0.0; filters * in_channels * width],
            bias: vec![0.0; filters],
        }
    }

    /// Left padding of a "same" convolution; the right side gets the rest.
    #[inline]
    pub fn pad_left(&self) -> usize {
        (self.width - 1) / 2
    }

    #[inline]
    fn w(&self, f: usize, c: usize) -> &[f64] {
        let base = (f * self.in_channels + c) * self.width;
        &self.weight[base..base + self.width]
    }

    fn forward(&self, x: &Act) -> Act {
        let t_len = x.cols;
        let pad = self.pad_left() as isize;
        let mut out = Act::zeros(self.filters, t_len);
        for f in 0..self.filters {
            let y = &mut out.data[f * t_len..(f + 1) * t_len];
            y.fill(self.bias[f]);
            for c in 0..self.in_channels {
                let xr = x.row(c);
                for (k, &wk) in self.w(f, c).iter().enumerate() {
                    let shift = k as isize - pad;
                    let lo = (-shift).max(0) as usize;
                    let hi = ((t_len as isize - shift).min(t_len as isize)).max(0) as usize;
                    for t in lo..hi {
                        y[t] += wk * xr[(t as isize + shift) as usize];
                    }
                }
            }
        }
        out
    }

    fn backward_input(&self, x: &Act, g: &Act) -> Act {
        let t_len = x.cols;
        let pad = self.pad_left() as isize;
        let mut dx = Act::zeros(self.in_channels, t_len);
        for f in 0..self.filters {
            let gr = g.row(f);
            for c in 0..self.in_channels {
                let d = &mut dx.data[c * t_len..(c + 1) * t_len];
                for (k, &wk) in self.w(f, c).iter().enumerate() {
                    let shift = k as isize - pad;
                    let lo = (-shift).max(0) as usize;
                    let hi = ((t_len as isize - shift).min(t_len as isize)).max(0) as usize;
                    for t in lo..hi {
                        d[(t as isize + shift) as usize] += wk * gr[t];
                    }
                }
            }
        }
        dx
    }

    fn accumulate(&self, x: &Act, g: &Act, grads: &mut [Vec<f64>]) {
        let t_len = x.cols;
        let pad = self.pad_left() as isize;
        let (dw, rest) = grads.split_at_mut(1);
        let (dw, db) = (&mut dw[0], &mut rest[0]);
        for f in 0..self.filters {
            let gr = g.row(f);
            db[f] += gr.iter().sum::<f64>();
            for c in 0..self.in_channels {
                let xr = x.row(c);
                let base = (f * self.in_channels + c) * self.width;
                for k in 0..self.width {
                    let shift = k as isize - pad;
                    let lo = (-shift).max(0) as usize;
                    let hi = ((t_len as isize - shift).min(t_len as isize)).max(0) as usize;
                    let mut acc = 0.0;
                    for t in lo..hi {
                        acc += gr[t] * xr[(t as isize + shift) as usize];
                    }
                    dw[base + k] += acc;
                }
            }
        }
    }
}

impl BatchNorm {
    pub fn new(features: usize) -> Self {
        Self {
            features,
            eps: 1e-3,
            momentum: 0.9,
            gamma: vec![1.0; features],
            beta: vec![0.0; features],
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
        }
    }

    #[inline]
    fn scale(&self, r: usize) -> f64 {
        self.gamma[r] / (self.running_var[r] + self.eps).sqrt()
    }

    fn forward(&self, x: &Act) -> Act {
        let mut out = x.clone();
        for r in 0..x.rows {
            let s = self.scale(r);
            let shift = self.beta[r] - s * self.running_mean[r];
            for v in &mut out.data[r * x.cols..(r + 1) * x.cols] {
                *v = s * *v + shift;
            }
        }
        out
    }

    fn backward_input(&self, g: &Act) -> Act {
        let mut dx = g.clone();
        for r in 0..g.rows {
            let s = self.scale(r);
            for v in &mut dx.data[r * g.cols..(r + 1) * g.cols] {
                *v *= s;
            }
        }
        dx
    }
}

/// Per-layer state recorded by a training-mode forward pass.
#[derive(Debug, Default)]
pub enum TrainCache {
    #[default]
    None,
    Dropout(Vec<Vec<f64>>),
    BatchNorm {
        xhat: Vec<Act>,
        inv_std: Vec<f64>,
    },
}

impl Layer {
    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Dense(d) => LayerSpec::Dense {
                inputs: d.inputs,
                outputs: d.outputs,
            },
            Layer::Conv1d(c) => LayerSpec::Conv1d {
                in_channels: c.in_channels,
                filters: c.filters,
                width: c.width,
            },
            Layer::BatchNorm(b) => LayerSpec::BatchNorm {
                features: b.features,
                eps: b.eps,
                momentum: b.momentum,
            },
            Layer::Relu => LayerSpec::Relu,
            Layer::Dropout { rate } => LayerSpec::Dropout { rate: *rate },
            Layer::GlobalAvgPool => LayerSpec::GlobalAvgPool,
            Layer::Flatten => LayerSpec::Flatten,
        }
    }

    /// A layer with the given shape and all parameters zeroed.
    pub fn from_spec(spec: &LayerSpec) -> Layer {
        match *spec {
            LayerSpec::Dense { inputs, outputs } => Layer::Dense(Dense::zeros(inputs, outputs)),
            LayerSpec::Conv1d {
                in_channels,
                filters,
                width,
            } => Layer::Conv1d(Conv1d::zeros(in_channels, filters, width)),
            LayerSpec::BatchNorm {
                features,
                eps,
                momentum,
            } => Layer::BatchNorm(BatchNorm {
                eps,
                momentum,
                ..BatchNorm::new(features)
            }),
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::Dropout { rate } => Layer::Dropout { rate },
            LayerSpec::GlobalAvgPool => Layer::GlobalAvgPool,
            LayerSpec::Flatten => Layer::Flatten,
        }
    }

    /// Every stored array (trainable and running statistics) in file order.
    pub fn arrays(&self) -> Vec<&Vec<f64>> {
        match self {
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            Layer::Conv1d(c) => vec![&c.weight, &c.bias],
            Layer::BatchNorm(b) => vec![&b.gamma, &b.beta, &b.running_mean, &b.running_var],
            _ => Vec::new(),
        }
    }

    pub fn arrays_mut(&mut self) -> Vec<&mut Vec<f64>> {
        match self {
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::Conv1d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::BatchNorm(b) => vec![
                &mut b.gamma,
                &mut b.beta,
                &mut b.running_mean,
                &mut b.running_var,
            ],
            _ => Vec::new(),
        }
    }

    /// Trainable parameter groups, matching the gradient layout of
    /// [`Layer::backward_train`].
    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        match self {
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::Conv1d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::BatchNorm(b) => vec![&mut b.gamma, &mut b.beta],
            _ => Vec::new(),
        }
    }

    pub fn zero_grads(&self) -> Vec<Vec<f64>> {
        match self {
            Layer::Dense(d) => vec![vec![0.0; d.weight.len()], vec![0.0; d.bias.len()]],
            Layer::Conv1d(c) => vec![vec![0.0; c.weight.len()], vec![0.0; c.bias.len()]],
            Layer::BatchNorm(b) => vec![vec![0.0; b.features], vec![0.0; b.features]],
            _ => Vec::new(),
        }
    }

    /// Output shape for an input of shape `(rows, cols)`, or `None` when the
    /// layer cannot accept it.
    pub fn output_shape(&self, rows: usize, cols: usize) -> Option<(usize, usize)> {
        match self {
            Layer::Dense(d) => (rows * cols == d.inputs).then_some((d.outputs, 1)),
            Layer::Conv1d(c) => (rows == c.in_channels).then_some((c.filters, cols)),
            Layer::BatchNorm(b) => (rows == b.features).then_some((rows, cols)),
            Layer::Relu | Layer::Dropout { .. } => Some((rows, cols)),
            Layer::GlobalAvgPool => Some((rows, 1)),
            Layer::Flatten => Some((rows * cols, 1)),
        }
    }

    /// Inference-mode forward pass.
    pub fn forward(&self, x: &Act) -> Act {
        match self {
            Layer::Dense(d) => d.forward(x),
            Layer::Conv1d(c) => c.forward(x),
            Layer::BatchNorm(b) => b.forward(x),
            Layer::Relu => Act::new(x.rows, x.cols, x.data.iter().map(|v| v.max(0.0)).collect()),
            Layer::Dropout { .. } => x.clone(),
            Layer::GlobalAvgPool => Act::new(
                x.rows,
                1,
                (0..x.rows)
                    .map(|r| x.row(r).iter().sum::<f64>() / x.cols as f64)
                    .collect(),
            ),
            Layer::Flatten => Act::new(x.rows * x.cols, 1, x.data.clone()),
        }
    }

    /// Gradient with respect to the input of an inference-mode forward pass.
    pub fn backward_input(&self, x: &Act, g: &Act) -> Act {
        match self {
            Layer::Dense(d) => d.backward_input(x, g),
            Layer::Conv1d(c) => c.backward_input(x, g),
            Layer::BatchNorm(b) => b.backward_input(g),
            Layer::Relu => Act::new(
                x.rows,
                x.cols,
                x.data
                    .iter()
                    .zip(&g.data)
                    .map(|(&xi, &gi)| if xi > 0.0 { gi } else { 0.0 })
                    .collect(),
            ),
            Layer::Dropout { .. } => g.clone(),
            Layer::GlobalAvgPool => {
                let mut dx = Act::zeros(x.rows, x.cols);
                let inv = 1.0 / x.cols as f64;
                for r in 0..x.rows {
                    dx.data[r * x.cols..(r + 1) * x.cols].fill(g.data[r] * inv);
                }
                dx
            }
            Layer::Flatten => Act::new(x.rows, x.cols, g.data.clone()),
        }
    }

    /// Training-mode forward over a batch. Batch norm uses batch statistics
    /// and updates its running averages; dropout samples masks from `rng`.
    pub fn forward_train<R: Rng>(
        &mut self,
        xs: &[Act],
        rng: &mut R,
    ) -> (Vec<Act>, TrainCache) {
        match self {
            Layer::Dropout { rate } => {
                let keep = 1.0 - *rate;
                let mut masks = Vec::with_capacity(xs.len());
                let out = xs
                    .iter()
                    .map(|x| {
                        let mask: Vec<f64> = (0..x.data.len())
                            .map(|_| {
                                if rng.random::<f64>() < keep {
                                    1.0 / keep
                                } else {
                                    0.0
                                }
                            })
                            .collect();
                        let y = Act::new(
                            x.rows,
                            x.cols,
                            x.data.iter().zip(&mask).map(|(a, m)| a * m).collect(),
                        );
                        masks.push(mask);
                        y
                    })
                    .collect();
                (out, TrainCache::Dropout(masks))
            }
            Layer::BatchNorm(bn) => {
                let rows = bn.features;
                let cols = xs[0].cols;
                let m = (xs.len() * cols) as f64;
                let mut mean = vec![0.0; rows];
                let mut var = vec![0.0; rows];
                for x in xs {
                    for r in 0..rows {
                        mean[r] += x.row(r).iter().sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|v| *v /= m);
                for x in xs {
                    for r in 0..rows {
                        var[r] += x.row(r).iter().map(|v| (v - mean[r]).powi(2)).sum::<f64>();
                    }
                }
                var.iter_mut().for_each(|v| *v /= m);
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + bn.eps).sqrt()).collect();
                let mut xhat = Vec::with_capacity(xs.len());
                let mut out = Vec::with_capacity(xs.len());
                for x in xs {
                    let mut h = x.clone();
                    let mut y = x.clone();
                    for r in 0..rows {
                        for t in 0..cols {
                            let i = r * cols + t;
                            h.data[i] = (x.data[i] - mean[r]) * inv_std[r];
                            y.data[i] = bn.gamma[r] * h.data[i] + bn.beta[r];
                        }
                    }
                    xhat.push(h);
                    out.push(y);
                }
                for r in 0..rows {
                    bn.running_mean[r] = bn.momentum * bn.running_mean[r] + (1.0 - bn.momentum) * mean[r];
                    bn.running_var[r] = bn.momentum * bn.running_var[r] + (1.0 - bn.momentum) * var[r];
                }
                (out, TrainCache::BatchNorm { xhat, inv_std })
            }
            other => (xs.iter().map(|x| other.forward(x)).collect(), TrainCache::None),
        }
    }

    /// Backward pass matching [`Layer::forward_train`]; accumulates parameter
    /// gradients into `grads` and returns input gradients.
    pub fn backward_train(
        &self,
        xs: &[Act],
        gs: &[Act],
        cache: &TrainCache,
        grads: &mut [Vec<f64>],
    ) -> Vec<Act> {
        match (self, cache) {
            (Layer::Dense(d), _) => xs
                .iter()
                .zip(gs)
                .map(|(x, g)| {
                    d.accumulate(x, g, grads);
                    d.backward_input(x, g)
                })
                .collect(),
            (Layer::Conv1d(c), _) => xs
                .iter()
                .zip(gs)
                .map(|(x, g)| {
                    c.accumulate(x, g, grads);
                    c.backward_input(x, g)
                })
                .collect(),
            (Layer::Dropout { .. }, TrainCache::Dropout(masks)) => gs
                .iter()
                .zip(masks)
                .map(|(g, m)| {
                    Act::new(g.rows, g.cols, g.data.iter().zip(m).map(|(a, b)| a * b).collect())
                })
                .collect(),
            (Layer::BatchNorm(bn), TrainCache::BatchNorm { xhat, inv_std }) => {
                let rows = bn.features;
                let cols = gs[0].cols;
                let m = (gs.len() * cols) as f64;
                let mut sum_g = vec![0.0; rows];
                let mut sum_gx = vec![0.0; rows];
                for (g, h) in gs.iter().zip(xhat) {
                    for r in 0..rows {
                        for (a, b) in g.row(r).iter().zip(h.row(r)) {
                            sum_g[r] += a;
                            sum_gx[r] += a * b;
                        }
                    }
                }
                for r in 0..rows {
                    grads[0][r] += sum_gx[r];
                    grads[1][r] += sum_g[r];
                }
                gs.iter()
                    .zip(xhat)
                    .map(|(g, h)| {
                        let mut dx = g.clone();
                        for r in 0..rows {
                            let k = bn.gamma[r] * inv_std[r] / m;
                            for t in 0..cols {
                                let i = r * cols + t;
                                dx.data[i] = k * (m * g.data[i] - sum_g[r] - h.data[i] * sum_gx[r]);
                            }
                        }
                        dx
                    })
                    .collect()
            }
            (other, _) => xs
                .iter()
                .zip(gs)
                .map(|(x, g)| other.backward_input(x, g))
                .collect(),
        }
    }
}
