//! Small differentiable time-series classifiers (MLP and FCN) trained from
//! scratch, with input gradients, latent representations and class
//! activation maps.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Dataset, LabeledInstance};
use crate::error::{Error, Result};
use crate::nn::{Act, BatchNorm, Conv1d, Dense, Layer, LayerSpec, TrainCache};
use crate::series::TimeSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Mlp,
    Fcn,
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Architecture::Mlp => "mlp",
            Architecture::Fcn => "fcn",
        })
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mlp" => Ok(Architecture::Mlp),
            "fcn" => Ok(Architecture::Fcn),
            other => Err(Error::Config(format!(
                "unknown architecture {other:?} (expected mlp or fcn)"
            ))),
        }
    }
}

/// Convolutional block widths for the FCN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcnShape {
    pub filters: [usize; 3],
    pub kernels: [usize; 3],
}

impl Default for FcnShape {
    fn default() -> Self {
        Self {
            filters: [128, 256, 128],
            kernels: [8, 5, 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpShape {
    pub hidden: usize,
    pub depth: usize,
    /// Dropout before the first hidden layer, between hidden layers, and
    /// before the output layer.
    pub dropout: [f64; 3],
}

impl Default for MlpShape {
    fn default() -> Self {
        Self {
            hidden: 500,
            depth: 3,
            dropout: [0.1, 0.2, 0.3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub fcn: FcnShape,
    pub mlp: MlpShape,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 16,
            learning_rate: 1e-3,
            seed: 0,
            fcn: FcnShape::default(),
            mlp: MlpShape::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub predicted: usize,
}

/// Activations feeding the final dense layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentRep(pub Vec<f64>);

/// Optional MAD-weighted L1 term `sum |x - original| / mad`.
#[derive(Debug, Clone, Copy)]
pub struct DistanceTerm<'a> {
    pub original: &'a TimeSeries,
    pub mad: &'a [f64],
}

/// Scalar loss `lambda * (p_target - target_prob)^2 + distance`.
#[derive(Debug, Clone, Copy)]
pub struct LossSpec<'a> {
    pub target: usize,
    pub lambda: f64,
    pub target_prob: f64,
    pub distance: Option<DistanceTerm<'a>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub loss: f64,
    /// Target-class probability at the evaluation point.
    pub prob: f64,
    pub probs: Vec<f64>,
    /// Row-major `channels × steps` gradient.
    pub gradient: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub architecture: Architecture,
    pub layers: Vec<Layer>,
    pub num_classes: usize,
    pub input_shape: (usize, usize),
    pub train_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// First index of the maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl ClassifierModel {
    /// Wraps hand-built layers, checking that shapes chain to `num_classes`
    /// logits.
    pub fn from_layers(
        architecture: Architecture,
        layers: Vec<Layer>,
        input_shape: (usize, usize),
        num_classes: usize,
    ) -> Result<Self> {
        let model = Self {
            architecture,
            layers,
            num_classes,
            input_shape,
            train_accuracy: None,
            test_accuracy: None,
        };
        model.check_layers()?;
        Ok(model)
    }

    fn check_layers(&self) -> Result<()> {
        let (mut r, mut c) = self.input_shape;
        for (i, layer) in self.layers.iter().enumerate() {
            (r, c) = layer.output_shape(r, c).ok_or_else(|| {
                Error::Contract(format!("layer {i} ({:?}) cannot take a {r}x{c} input", layer.spec()))
            })?;
            for a in layer.arrays() {
                if a.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Contract(format!("layer {i} has non-finite parameters")));
                }
            }
        }
        if (r, c) != (self.num_classes, 1) {
            return Err(Error::Contract(format!(
                "network outputs {r}x{c}, expected {} logits",
                self.num_classes
            )));
        }
        if self.architecture == Architecture::Fcn && !self.has_gap_head() {
            return Err(Error::Contract(
                "an FCN must end with global average pooling followed by one dense layer".into(),
            ));
        }
        Ok(())
    }

    fn has_gap_head(&self) -> bool {
        let n = self.layers.len();
        n >= 2
            && matches!(self.layers[n - 1], Layer::Dense(_))
            && matches!(self.layers[n - 2], Layer::GlobalAvgPool)
    }

    /// Freshly initialized network of the given architecture.
    pub fn build(
        architecture: Architecture,
        input_shape: (usize, usize),
        num_classes: usize,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        let (n, t) = input_shape;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut layers = Vec::new();
        match architecture {
            Architecture::Fcn => {
                let mut in_ch = n;
                for (&f, &k) in cfg.fcn.filters.iter().zip(&cfg.fcn.kernels) {
                    layers.push(Layer::Conv1d(Conv1d::new(in_ch, f, k, &mut rng)));
                    layers.push(Layer::BatchNorm(BatchNorm::new(f)));
                    layers.push(Layer::Relu);
                    in_ch = f;
                }
                layers.push(Layer::GlobalAvgPool);
                layers.push(Layer::Dense(Dense::new(in_ch, num_classes, &mut rng)));
            }
            Architecture::Mlp => {
                let m = &cfg.mlp;
                layers.push(Layer::Flatten);
                let mut width = n * t;
                for d in 0..m.depth {
                    let rate = if d == 0 { m.dropout[0] } else { m.dropout[1] };
                    if rate > 0.0 {
                        layers.push(Layer::Dropout { rate });
                    }
                    layers.push(Layer::Dense(Dense::new(width, m.hidden, &mut rng)));
                    layers.push(Layer::Relu);
                    width = m.hidden;
                }
                if m.dropout[2] > 0.0 {
                    layers.push(Layer::Dropout { rate: m.dropout[2] });
                }
                layers.push(Layer::Dense(Dense::new(width, num_classes, &mut rng)));
            }
        }
        Self::from_layers(architecture, layers, input_shape, num_classes)
    }

    pub fn check_input(&self, x: &TimeSeries) -> Result<()> {
        if x.shape() != self.input_shape {
            return Err(Error::Contract(format!(
                "input shape {:?} does not match model input {:?}",
                x.shape(),
                self.input_shape
            )));
        }
        Ok(())
    }

    fn input_act(x: &TimeSeries) -> Act {
        Act::new(x.channels(), x.steps(), x.values().to_vec())
    }

    /// Inference forward pass keeping every intermediate activation;
    /// `acts[0]` is the input and `acts[L]` the logits.
    fn forward_all(&self, x: &TimeSeries) -> Vec<Act> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(Self::input_act(x));
        for layer in &self.layers {
            let next = layer.forward(acts.last().expect("input present"));
            acts.push(next);
        }
        acts
    }

    pub fn logits(&self, x: &TimeSeries) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut a = Self::input_act(x);
        for layer in &self.layers {
            a = layer.forward(&a);
        }
        Ok(a.data)
    }

    pub fn predict_proba(&self, x: &TimeSeries) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(x)?))
    }

    pub fn predict(&self, x: &TimeSeries) -> Result<Prediction> {
        let probs = self.predict_proba(x)?;
        Ok(Prediction {
            predicted: argmax(&probs),
            probs,
        })
    }

    pub fn predict_label(&self, x: &TimeSeries) -> Result<usize> {
        Ok(self.predict(x)?.predicted)
    }

    pub fn accuracy(&self, data: &[LabeledInstance]) -> Result<f64> {
        if data.is_empty() {
            return Ok(f64::NAN);
        }
        let mut hits = 0usize;
        for inst in data {
            hits += usize::from(self.predict_label(&inst.series)? == inst.label);
        }
        Ok(hits as f64 / data.len() as f64)
    }

    fn backprop(&self, acts: &[Act], dlogits: Vec<f64>) -> Vec<f64> {
        let mut g = Act::new(self.num_classes, 1, dlogits);
        for (i, layer) in self.layers.iter().enumerate().rev() {
            g = layer.backward_input(&acts[i], &g);
        }
        g.data
    }

    /// Gradient of `sum_j dlogits[j] * logit_j(x)` with respect to `x`.
    pub fn logit_vjp(&self, x: &TimeSeries, dlogits: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        if dlogits.len() != self.num_classes {
            return Err(Error::Contract("dlogits length must equal the class count".into()));
        }
        let acts = self.forward_all(x);
        Ok(self.backprop(&acts, dlogits.to_vec()))
    }

    /// Value and exact input gradient of the loss described by `spec`.
    pub fn input_gradient(&self, x: &TimeSeries, spec: &LossSpec<'_>) -> Result<LossGradient> {
        self.check_input(x)?;
        if spec.target >= self.num_classes {
            return Err(Error::Contract(format!(
                "target class {} out of range",
                spec.target
            )));
        }
        let acts = self.forward_all(x);
        let probs = softmax(&acts.last().expect("logits").data);
        let p = probs[spec.target];
        let resid = p - spec.target_prob;
        let mut loss = spec.lambda * resid * resid;
        // d/dz_j of lambda (p_t - tau)^2 = 2 lambda (p_t - tau) p_t (delta_tj - p_j)
        let coef = 2.0 * spec.lambda * resid * p;
        let dlogits: Vec<f64> = probs
            .iter()
            .enumerate()
            .map(|(j, &pj)| coef * (f64::from(u8::from(j == spec.target)) - pj))
            .collect();
        let mut gradient = self.backprop(&acts, dlogits);
        if let Some(d) = spec.distance {
            x.check_same_shape(d.original)?;
            if d.mad.len() != x.len() {
                return Err(Error::Contract("MAD vector must cover every feature point".into()));
            }
            for ((g, (&xi, &oi)), &m) in gradient
                .iter_mut()
                .zip(x.values().iter().zip(d.original.values()))
                .zip(d.mad)
            {
                let diff = xi - oi;
                loss += diff.abs() / m;
                if diff != 0.0 {
                    *g += diff.signum() / m;
                }
            }
        }
        Ok(LossGradient {
            loss,
            prob: p,
            probs,
            gradient,
        })
    }

    /// Penultimate-layer activations (input of the final dense layer).
    pub fn latent(&self, x: &TimeSeries) -> Result<LatentRep> {
        self.check_input(x)?;
        let mut a = Self::input_act(x);
        for layer in &self.layers[..self.layers.len() - 1] {
            a = layer.forward(&a);
        }
        Ok(LatentRep(a.data))
    }

    /// `CAM(t) = sum_k w[class, k] * A_k(t)` over the feature maps entering
    /// global average pooling.
    pub fn class_activation_map(&self, x: &TimeSeries, class: usize) -> Result<Vec<f64>> {
        if self.architecture != Architecture::Fcn || !self.has_gap_head() {
            return Err(Error::Unsupported(format!(
                "class activation maps need a GAP + dense head; {} models have none",
                self.architecture
            )));
        }
        self.check_input(x)?;
        if class >= self.num_classes {
            return Err(Error::Contract(format!("class {class} out of range")));
        }
        let n = self.layers.len();
        let mut a = Self::input_act(x);
        for layer in &self.layers[..n - 2] {
            a = layer.forward(&a);
        }
        let Layer::Dense(head) = &self.layers[n - 1] else {
            unreachable!("checked by has_gap_head")
        };
        let w = &head.weight[class * head.inputs..(class + 1) * head.inputs];
        let mut cam = vec![0.0; a.cols];
        for (k, &wk) in w.iter().enumerate() {
            for (c, &v) in cam.iter_mut().zip(a.row(k)) {
                *c += wk * v;
            }
        }
        Ok(cam)
    }
}

/// Trains a classifier with Adam on softmax cross-entropy.
pub fn train(arch: Architecture, data: &Dataset, cfg: &TrainConfig) -> Result<ClassifierModel> {
    if data.train.is_empty() {
        return Err(Error::Training("training split is empty".into()));
    }
    if data.num_classes < 2 {
        return Err(Error::Training(format!(
            "need at least 2 classes, dataset {} declares {}",
            data.name, data.num_classes
        )));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut model = ClassifierModel::build(arch, data.shape(), data.num_classes, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37_79b9));
    let mut adam = Adam::new(&mut model.layers, cfg.learning_rate);
    let mut order: Vec<usize> = (0..data.train.len()).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let loss = train_step(&mut model, &mut adam, data, batch, &mut rng);
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "loss diverged to {loss} in epoch {epoch}; try a lower learning rate"
                )));
            }
        }
    }
    model.train_accuracy = Some(model.accuracy(&data.train)?);
    if !data.test.is_empty() {
        model.test_accuracy = Some(model.accuracy(&data.test)?);
    }
    Ok(model)
}

fn train_step(
    model: &mut ClassifierModel,
    adam: &mut Adam,
    data: &Dataset,
    batch: &[usize],
    rng: &mut ChaCha8Rng,
) -> f64 {
    let mut inputs: Vec<Vec<Act>> = Vec::with_capacity(model.layers.len());
    let mut caches: Vec<TrainCache> = Vec::with_capacity(model.layers.len());
    let mut xs: Vec<Act> = batch
        .iter()
        .map(|&i| ClassifierModel::input_act(&data.train[i].series))
        .collect();
    for layer in &mut model.layers {
        let (ys, cache) = layer.forward_train(&xs, rng);
        inputs.push(std::mem::replace(&mut xs, ys));
        caches.push(cache);
    }
    let bsz = batch.len() as f64;
    let mut loss = 0.0;
    let mut gs: Vec<Act> = xs
        .iter()
        .zip(batch)
        .map(|(logits, &i)| {
            let mut p = softmax(&logits.data);
            let y = data.train[i].label;
            loss -= p[y].max(1e-300).ln();
            p[y] -= 1.0;
            p.iter_mut().for_each(|v| *v /= bsz);
            Act::new(p.len(), 1, p)
        })
        .collect();
    let mut grads: Vec<Vec<Vec<f64>>> = model.layers.iter().map(Layer::zero_grads).collect();
    for (i, layer) in model.layers.iter().enumerate().rev() {
        gs = layer.backward_train(&inputs[i], &gs, &caches[i], &mut grads[i]);
    }
    adam.step(&mut model.layers, &grads);
    loss / bsz
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<Vec<f64>>>,
    v: Vec<Vec<Vec<f64>>>,
}

impl Adam {
    fn new(layers: &mut [Layer], lr: f64) -> Self {
        let zeros: Vec<Vec<Vec<f64>>> = layers
            .iter_mut()
            .map(|l| l.params_mut().iter().map(|p| vec![0.0; p.len()]).collect())
            .collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    fn step(&mut self, layers: &mut [Layer], grads: &[Vec<Vec<f64>>]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (li, layer) in layers.iter_mut().enumerate() {
            for (pi, param) in layer.params_mut().into_iter().enumerate() {
                let (m, v, g) = (&mut self.m[li][pi], &mut self.v[li][pi], &grads[li][pi]);
                for j in 0..param.len() {
                    m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                    v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                    param[j] -= self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
                }
            }
        }
    }
}

const MAGIC: &[u8; 8] = b"TSCFMODL";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    architecture: Architecture,
    num_classes: usize,
    input_shape: (usize, usize),
    train_accuracy: Option<f64>,
    test_accuracy: Option<f64>,
    layers: Vec<LayerSpec>,
}

impl ClassifierModel {
    /// Serializes to the versioned container: magic, version, JSON header,
    /// little-endian `f64` parameter blobs in layer order, SHA-256 trailer.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            architecture: self.architecture,
            num_classes: self.num_classes,
            input_shape: self.input_shape,
            train_accuracy: self.train_accuracy,
            test_accuracy: self.test_accuracy,
            layers: self.layers.iter().map(Layer::spec).collect(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for layer in &self.layers {
            for arr in layer.arrays() {
                for v in arr {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 + 4 + 8 + 32 {
            return Err(Error::Corrupt(format!("file too short ({} bytes)", bytes.len())));
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::Corrupt("bad magic".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != MODEL_FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Corrupt("checksum mismatch (truncated or modified file)".into()));
        }
        let hlen = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
        let blob_start = 20usize
            .checked_add(hlen)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| Error::Corrupt("header length exceeds file".into()))?;
        let header: Header = serde_json::from_slice(&body[20..blob_start])
            .map_err(|e| Error::Corrupt(format!("bad header: {e}")))?;
        let mut layers: Vec<Layer> = header.layers.iter().map(Layer::from_spec).collect();
        let mut blobs = body[blob_start..].chunks_exact(8);
        for layer in &mut layers {
            for arr in layer.arrays_mut() {
                for v in arr.iter_mut() {
                    let chunk = blobs
                        .next()
                        .ok_or_else(|| Error::Corrupt("parameter data truncated".into()))?;
                    *v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
                }
            }
        }
        if blobs.next().is_some() || !blobs.remainder().is_empty() {
            return Err(Error::Corrupt("trailing parameter data".into()));
        }
        let mut model =
            ClassifierModel::from_layers(header.architecture, layers, header.input_shape, header.num_classes)
                .map_err(|e| Error::Corrupt(e.to_string()))?;
        model.train_accuracy = header.train_accuracy;
        model.test_accuracy = header.test_accuracy;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
