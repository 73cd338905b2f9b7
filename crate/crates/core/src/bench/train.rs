//! Mini-batch SGD for the two reference architectures, with hand-written
//! backward passes. Exports a [`ModelGraph`] whose normalization layers hold
//! the running statistics at the end of training.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::graph::{forward, Conv2dLayer, ForwardMode, Layer, LinearLayer, ModelGraph, NormParams};
use crate::rng::{derive_seed, rng};
use crate::shift::LabeledDataset;
use crate::tensor::Tensor;

/// Reference architectures. `blocks` counts the normalized hidden stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    /// `(Linear → BN → ReLU) × blocks → Linear` over feature vectors.
    MlpBn { hidden: usize, blocks: usize },
    /// `(Conv3x3 → BN → ReLU) × blocks → GlobalAvgPool → Linear` over images.
    TinyCnn { width: usize, blocks: usize },
}

impl Arch {
    pub fn mlp_bn() -> Self {
        Arch::MlpBn { hidden: 32, blocks: 2 }
    }

    pub fn tiny_cnn() -> Self {
        Arch::TinyCnn { width: 8, blocks: 2 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Arch::MlpBn { .. } => "mlp-bn",
            Arch::TinyCnn { .. } => "tiny-cnn",
        }
    }

    pub fn with_blocks(self, blocks: usize) -> Self {
        match self {
            Arch::MlpBn { hidden, .. } => Arch::MlpBn { hidden, blocks },
            Arch::TinyCnn { width, .. } => Arch::TinyCnn { width, blocks },
        }
    }

    pub fn with_width(self, width: usize) -> Self {
        match self {
            Arch::MlpBn { blocks, .. } => Arch::MlpBn { hidden: width, blocks },
            Arch::TinyCnn { blocks, .. } => Arch::TinyCnn { width, blocks },
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp-bn" => Ok(Arch::mlp_bn()),
            "tiny-cnn" => Ok(Arch::tiny_cnn()),
            _ => Err(Error::config(format!("unknown architecture {s:?} (expected mlp-bn or tiny-cnn)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Running-statistics momentum: `run ← m·run + (1−m)·batch`.
    pub momentum: f64,
    pub seed: u64,
    /// Fraction of the data held out for the reported accuracy.
    pub holdout: f64,
    pub norm_eps: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 20, lr: 0.05, batch_size: 32, momentum: 0.9, seed: 0, holdout: 0.2, norm_eps: 1e-5 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum must be in [0, 1], got {}", self.momentum)));
        }
        if self.batch_size < 2 {
            return Err(Error::config("training batches need at least 2 samples for batch statistics"));
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return Err(Error::config(format!("holdout fraction must be in [0, 1), got {}", self.holdout)));
        }
        if !(self.norm_eps > 0.0) {
            return Err(Error::config("normalization epsilon must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: ModelGraph,
    /// Mean training loss per epoch.
    pub losses: Vec<f64>,
    /// Clean accuracy on the held-out split; `None` when nothing was held out.
    pub holdout_accuracy: Option<f64>,
    pub train_samples: usize,
    pub holdout_samples: usize,
}

/// Activation in `(n, c, h, w)` layout; feature vectors use `h = w = 1`.
#[derive(Debug, Clone)]
struct Act {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Act {
    fn hw(&self) -> usize {
        self.h * self.w
    }
}

#[derive(Debug, Clone)]
enum TLayer {
    Dense { w: Vec<f64>, b: Vec<f64>, fin: usize, fout: usize },
    /// 3×3 kernel, stride 1, padding 1.
    Conv { w: Vec<f64>, b: Vec<f64>, cin: usize, cout: usize },
    Norm { gamma: Vec<f64>, beta: Vec<f64>, run_mu: Vec<f64>, run_var: Vec<f64> },
    Relu,
    Gap,
}

/// Per-layer intermediate values kept for the backward pass.
enum Cache {
    Input(Act),
    Norm { xhat: Vec<f64>, inv_std: Vec<f64>, shape: (usize, usize, usize, usize) },
    None((usize, usize, usize, usize)),
}

/// Gradients of one layer's two parameter vectors.
type Grad = Option<(Vec<f64>, Vec<f64>)>;

#[derive(Debug, Clone)]
struct Net {
    layers: Vec<TLayer>,
    eps: f64,
    classes: usize,
}

fn he(fan_in: usize, len: usize, r: &mut rand_chacha::ChaCha8Rng) -> Vec<f64> {
    let std = libm::sqrt(2.0 / fan_in as f64);
    (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(r);
            z * std
        })
        .collect()
}

fn norm(c: usize) -> TLayer {
    TLayer::Norm { gamma: vec![1.0; c], beta: vec![0.0; c], run_mu: vec![0.0; c], run_var: vec![1.0; c] }
}

impl Net {
    fn new(arch: Arch, sample_shape: &[usize], classes: usize, eps: f64, seed: u64) -> Result<Self> {
        let mut r = rng(seed);
        let mut layers = Vec::new();
        match (arch, sample_shape) {
            (Arch::MlpBn { hidden, blocks }, &[dim]) => {
                let mut fin = dim;
                for _ in 0..blocks {
                    layers.push(TLayer::Dense { w: he(fin, hidden * fin, &mut r), b: vec![0.0; hidden], fin, fout: hidden });
                    layers.push(norm(hidden));
                    layers.push(TLayer::Relu);
                    fin = hidden;
                }
                layers.push(TLayer::Dense { w: vec![0.0; classes * fin], b: vec![0.0; classes], fin, fout: classes });
            }
            (Arch::TinyCnn { width, blocks }, &[c, _, _]) => {
                let mut cin = c;
                for _ in 0..blocks {
                    layers.push(TLayer::Conv { w: he(cin * 9, width * cin * 9, &mut r), b: vec![0.0; width], cin, cout: width });
                    layers.push(norm(width));
                    layers.push(TLayer::Relu);
                    cin = width;
                }
                layers.push(TLayer::Gap);
                layers.push(TLayer::Dense { w: vec![0.0; classes * cin], b: vec![0.0; classes], fin: cin, fout: classes });
            }
            _ => {
                return Err(Error::shape(
                    "train_reference_model",
                    format!("{} cannot take samples of shape {sample_shape:?}", arch.name()),
                ))
            }
        }
        if arch_width(arch) == 0 || arch_blocks(arch) == 0 {
            return Err(Error::config("architecture needs positive width and at least one block"));
        }
        Ok(Net { layers, eps, classes })
    }

    /// Training-mode forward. Returns logits `(n, classes)` and per-layer caches.
    fn forward_train(&self, x: Act) -> (Act, Vec<Cache>) {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut a = x;
        for layer in &self.layers {
            let shape = (a.n, a.c, a.h, a.w);
            a = match layer {
                TLayer::Dense { w, b, fin, fout } => {
                    let y = dense(&a, w, b, *fin, *fout);
                    caches.push(Cache::Input(a));
                    y
                }
                TLayer::Conv { w, b, cin, cout } => {
                    let y = conv3x3(&a, w, b, *cin, *cout);
                    caches.push(Cache::Input(a));
                    y
                }
                TLayer::Norm { gamma, beta, .. } => {
                    let (y, xhat, inv_std, _, _) = batch_norm(&a, gamma, beta, self.eps);
                    caches.push(Cache::Norm { xhat, inv_std, shape });
                    y
                }
                TLayer::Relu => {
                    let y = Act { data: a.data.iter().map(|&v| v.max(0.0)).collect(), ..a.clone() };
                    caches.push(Cache::Input(a));
                    y
                }
                TLayer::Gap => {
                    let hw = a.hw();
                    let data = a.data.chunks_exact(hw).map(|p| p.iter().sum::<f64>() / hw as f64).collect();
                    caches.push(Cache::None(shape));
                    Act { n: a.n, c: a.c, h: 1, w: 1, data }
                }
            };
        }
        (a, caches)
    }

    /// Batch moments per norm layer, in layer order, from a training forward.
    fn batch_moments(&self, x: Act) -> Vec<(Vec<f64>, Vec<f64>)> {
        let mut out = Vec::new();
        let mut a = x;
        for layer in &self.layers {
            a = match layer {
                TLayer::Dense { w, b, fin, fout } => dense(&a, w, b, *fin, *fout),
                TLayer::Conv { w, b, cin, cout } => conv3x3(&a, w, b, *cin, *cout),
                TLayer::Norm { gamma, beta, .. } => {
                    let (y, _, _, mu, var) = batch_norm(&a, gamma, beta, self.eps);
                    out.push((mu, var));
                    y
                }
                TLayer::Relu => Act { data: a.data.iter().map(|&v| v.max(0.0)).collect(), ..a },
                TLayer::Gap => {
                    let hw = a.hw();
                    let data = a.data.chunks_exact(hw).map(|p| p.iter().sum::<f64>() / hw as f64).collect();
                    Act { n: a.n, c: a.c, h: 1, w: 1, data }
                }
            };
        }
        out
    }

    /// Mean cross-entropy and parameter gradients.
    fn loss_and_grads(&self, x: Act, labels: &[usize]) -> (f64, Vec<Grad>) {
        let (logits, caches) = self.forward_train(x);
        let (loss, mut dy) = softmax_xent(&logits, labels, self.classes);
        let mut grads: Vec<Grad> = vec![None; self.layers.len()];
        for (i, (layer, cache)) in self.layers.iter().zip(&caches).enumerate().rev() {
            dy = match (layer, cache) {
                (TLayer::Dense { w, fin, fout, .. }, Cache::Input(a)) => {
                    let (dx, dw, db) = dense_back(a, &dy, w, *fin, *fout);
                    grads[i] = Some((dw, db));
                    dx
                }
                (TLayer::Conv { w, cin, cout, .. }, Cache::Input(a)) => {
                    let (dx, dw, db) = conv3x3_back(a, &dy, w, *cin, *cout);
                    grads[i] = Some((dw, db));
                    dx
                }
                (TLayer::Norm { gamma, .. }, Cache::Norm { xhat, inv_std, shape }) => {
                    let (dx, dg, dbeta) = batch_norm_back(&dy, xhat, inv_std, gamma, *shape);
                    grads[i] = Some((dg, dbeta));
                    dx
                }
                (TLayer::Relu, Cache::Input(a)) => {
                    Act { data: dy.data.iter().zip(&a.data).map(|(&g, &v)| if v > 0.0 { g } else { 0.0 }).collect(), ..dy }
                }
                (TLayer::Gap, Cache::None((n, c, h, w))) => {
                    let hw = (h * w) as f64;
                    let data = dy.data.iter().flat_map(|&g| core::iter::repeat_n(g / hw, h * w)).collect();
                    Act { n: *n, c: *c, h: *h, w: *w, data }
                }
                _ => unreachable!("cache kind always matches its layer"),
            };
        }
        (loss, grads)
    }

    fn sgd_step(&mut self, grads: &[Grad], lr: f64) {
        for (layer, g) in self.layers.iter_mut().zip(grads) {
            let Some((ga, gb)) = g else { continue };
            let (pa, pb) = match layer {
                TLayer::Dense { w, b, .. } | TLayer::Conv { w, b, .. } => (w, b),
                TLayer::Norm { gamma, beta, .. } => (gamma, beta),
                _ => continue,
            };
            for (p, d) in pa.iter_mut().zip(ga) {
                *p -= lr * d;
            }
            for (p, d) in pb.iter_mut().zip(gb) {
                *p -= lr * d;
            }
        }
    }

    fn update_running(&mut self, moments: Vec<(Vec<f64>, Vec<f64>)>, m: f64) {
        let mut moments = moments.into_iter();
        for layer in &mut self.layers {
            if let TLayer::Norm { run_mu, run_var, .. } = layer {
                let (mu, var) = moments.next().expect("one moment pair per norm layer");
                for c in 0..mu.len() {
                    run_mu[c] = m * run_mu[c] + (1.0 - m) * mu[c];
                    run_var[c] = m * run_var[c] + (1.0 - m) * var[c];
                }
            }
        }
    }

    fn all_finite(&self) -> bool {
        self.layers.iter().all(|l| match l {
            TLayer::Dense { w, b, .. } | TLayer::Conv { w, b, .. } => w.iter().chain(b).all(|v| v.is_finite()),
            TLayer::Norm { gamma, beta, run_mu, run_var } => {
                gamma.iter().chain(beta).chain(run_mu).chain(run_var).all(|v| v.is_finite())
            }
            _ => true,
        })
    }

    fn export(&self, name: &str, input_shape: Vec<usize>) -> Result<ModelGraph> {
        let f = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
        let layers = self
            .layers
            .iter()
            .map(|l| {
                Ok(match l {
                    TLayer::Dense { w, b, fin, fout } => {
                        Layer::Linear(LinearLayer { weight: Tensor::new(&[*fout, *fin], f(w))?, bias: f(b) })
                    }
                    TLayer::Conv { w, b, cin, cout } => Layer::Conv2d(Conv2dLayer {
                        weight: Tensor::new(&[*cout, *cin, 3, 3], f(w))?,
                        bias: f(b),
                        stride: 1,
                        padding: 1,
                    }),
                    TLayer::Norm { gamma, beta, run_mu, run_var } => {
                        Layer::BatchNorm(NormParams::new(f(run_mu), f(run_var), f(gamma), f(beta), self.eps as f32)?)
                    }
                    TLayer::Relu => Layer::Relu,
                    TLayer::Gap => Layer::GlobalAvgPool,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        ModelGraph::new(name, input_shape, self.classes, layers)
    }
}

fn arch_width(a: Arch) -> usize {
    match a {
        Arch::MlpBn { hidden, .. } => hidden,
        Arch::TinyCnn { width, .. } => width,
    }
}

fn arch_blocks(a: Arch) -> usize {
    match a {
        Arch::MlpBn { blocks, .. } | Arch::TinyCnn { blocks, .. } => blocks,
    }
}

fn dense(x: &Act, w: &[f64], b: &[f64], fin: usize, fout: usize) -> Act {
    let mut data = Vec::with_capacity(x.n * fout);
    for row in x.data.chunks_exact(fin) {
        for o in 0..fout {
            data.push(b[o] + row.iter().zip(&w[o * fin..(o + 1) * fin]).map(|(a, b)| a * b).sum::<f64>());
        }
    }
    Act { n: x.n, c: fout, h: 1, w: 1, data }
}

fn dense_back(x: &Act, dy: &Act, w: &[f64], fin: usize, fout: usize) -> (Act, Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; x.n * fin];
    let mut dw = vec![0.0; fout * fin];
    let mut db = vec![0.0; fout];
    for i in 0..x.n {
        let xr = &x.data[i * fin..(i + 1) * fin];
        for o in 0..fout {
            let g = dy.data[i * fout + o];
            db[o] += g;
            for k in 0..fin {
                dw[o * fin + k] += g * xr[k];
                dx[i * fin + k] += g * w[o * fin + k];
            }
        }
    }
    (Act { n: x.n, c: x.c, h: x.h, w: x.w, data: dx }, dw, db)
}

/// Source pixel for output `(y, x)` and kernel tap `(ky, kx)` under padding 1.
#[inline]
fn tap(y: usize, x: usize, ky: usize, kx: usize, h: usize, w: usize) -> Option<usize> {
    let sy = (y + ky).checked_sub(1)?;
    let sx = (x + kx).checked_sub(1)?;
    (sy < h && sx < w).then_some(sy * w + sx)
}

fn conv3x3(x: &Act, w: &[f64], b: &[f64], cin: usize, cout: usize) -> Act {
    let (h, wd) = (x.h, x.w);
    let hw = h * wd;
    let mut data = vec![0.0; x.n * cout * hw];
    for n in 0..x.n {
        for o in 0..cout {
            let out = &mut data[(n * cout + o) * hw..(n * cout + o + 1) * hw];
            out.iter_mut().for_each(|v| *v = b[o]);
            for c in 0..cin {
                let plane = &x.data[(n * cin + c) * hw..(n * cin + c + 1) * hw];
                let k = &w[(o * cin + c) * 9..(o * cin + c + 1) * 9];
                for y in 0..h {
                    for xx in 0..wd {
                        let mut acc = 0.0;
                        for ky in 0..3 {
                            for kx in 0..3 {
                                if let Some(p) = tap(y, xx, ky, kx, h, wd) {
                                    acc += plane[p] * k[ky * 3 + kx];
                                }
                            }
                        }
                        out[y * wd + xx] += acc;
                    }
                }
            }
        }
    }
    Act { n: x.n, c: cout, h, w: wd, data }
}

fn conv3x3_back(x: &Act, dy: &Act, w: &[f64], cin: usize, cout: usize) -> (Act, Vec<f64>, Vec<f64>) {
    let (h, wd) = (x.h, x.w);
    let hw = h * wd;
    let mut dx = vec![0.0; x.data.len()];
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; cout];
    for n in 0..x.n {
        for o in 0..cout {
            let g = &dy.data[(n * cout + o) * hw..(n * cout + o + 1) * hw];
            db[o] += g.iter().sum::<f64>();
            for c in 0..cin {
                let base = (n * cin + c) * hw;
                let kbase = (o * cin + c) * 9;
                for y in 0..h {
                    for xx in 0..wd {
                        let gv = g[y * wd + xx];
                        for ky in 0..3 {
                            for kx in 0..3 {
                                if let Some(p) = tap(y, xx, ky, kx, h, wd) {
                                    dw[kbase + ky * 3 + kx] += gv * x.data[base + p];
                                    dx[base + p] += gv * w[kbase + ky * 3 + kx];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (Act { data: dx, ..x.clone() }, dw, db)
}

/// Returns output, normalized input, per-channel `1/sqrt(var+eps)`, batch mean
/// and batch (population) variance.
#[allow(clippy::type_complexity)]
fn batch_norm(x: &Act, gamma: &[f64], beta: &[f64], eps: f64) -> (Act, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let (n, c, hw) = (x.n, x.c, x.hw());
    let m = (n * hw) as f64;
    let mut mu = vec![0.0; c];
    let mut var = vec![0.0; c];
    for i in 0..n {
        for ch in 0..c {
            mu[ch] += x.data[(i * c + ch) * hw..(i * c + ch + 1) * hw].iter().sum::<f64>();
        }
    }
    mu.iter_mut().for_each(|v| *v /= m);
    for i in 0..n {
        for ch in 0..c {
            var[ch] += x.data[(i * c + ch) * hw..(i * c + ch + 1) * hw].iter().map(|v| (v - mu[ch]) * (v - mu[ch])).sum::<f64>();
        }
    }
    var.iter_mut().for_each(|v| *v /= m);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / libm::sqrt(v + eps)).collect();
    let mut xhat = vec![0.0; x.data.len()];
    let mut y = vec![0.0; x.data.len()];
    for (j, v) in x.data.iter().enumerate() {
        let ch = (j / hw) % c;
        xhat[j] = (v - mu[ch]) * inv_std[ch];
        y[j] = gamma[ch] * xhat[j] + beta[ch];
    }
    (Act { data: y, ..x.clone() }, xhat, inv_std, mu, var)
}

fn batch_norm_back(
    dy: &Act,
    xhat: &[f64],
    inv_std: &[f64],
    gamma: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
) -> (Act, Vec<f64>, Vec<f64>) {
    let hw = h * w;
    let m = (n * hw) as f64;
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for (j, g) in dy.data.iter().enumerate() {
        let ch = (j / hw) % c;
        dgamma[ch] += g * xhat[j];
        dbeta[ch] += g;
    }
    // with dxhat = gamma·dy: sum(dxhat) = gamma·dbeta, sum(dxhat·xhat) = gamma·dgamma
    let dx = dy
        .data
        .iter()
        .enumerate()
        .map(|(j, g)| {
            let ch = (j / hw) % c;
            gamma[ch] * inv_std[ch] / m * (m * g - dbeta[ch] - xhat[j] * dgamma[ch])
        })
        .collect();
    (Act { n, c, h, w, data: dx }, dgamma, dbeta)
}

fn softmax_xent(logits: &Act, labels: &[usize], classes: usize) -> (f64, Act) {
    let n = logits.n;
    let mut loss = 0.0;
    let mut grad = vec![0.0; n * classes];
    for i in 0..n {
        let row = &logits.data[i * classes..(i + 1) * classes];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| libm::exp(v - max)).sum();
        let log_z = max + libm::log(sum);
        loss += log_z - row[labels[i]];
        for k in 0..classes {
            let p = libm::exp(row[k] - log_z);
            grad[i * classes + k] = (p - if k == labels[i] { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    (loss / n as f64, Act { n, c: classes, h: 1, w: 1, data: grad })
}

fn to_act(inputs: &[&Tensor]) -> Act {
    let s = inputs[0].shape();
    let (c, h, w) = match s.len() {
        2 => (s[1], 1, 1),
        4 => (s[1], s[2], s[3]),
        _ => (s[1..].iter().product(), 1, 1),
    };
    let data = inputs.iter().flat_map(|t| t.data().iter().map(|&v| v as f64)).collect();
    Act { n: inputs.len(), c, h, w, data }
}

/// Clean accuracy of the frozen model on a dataset, in batches.
pub fn clean_accuracy(model: &ModelGraph, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let mut correct = 0usize;
    for (chunk, labels) in data.inputs.chunks(256).zip(data.labels.chunks(256)) {
        let (logits, _) = forward(model, &Tensor::stack(chunk)?, ForwardMode::Source, false)?;
        correct += logits.argmax_rows()?.iter().zip(labels).filter(|(p, l)| p == l).count();
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Train `arch` on `data` with mini-batch SGD and cross-entropy.
pub fn train_reference_model(arch: Arch, data: &LabeledDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let sample_shape = data.sample_shape().ok_or(Error::Empty("training set"))?.to_vec();
    let mut net = Net::new(arch, &sample_shape, data.num_classes, cfg.norm_eps as f64, derive_seed(cfg.seed, 0))?;
    let n_hold = libm::floor(data.len() as f64 * cfg.holdout) as usize;
    let (holdout, train) = data.split(n_hold, derive_seed(cfg.seed, 1));
    if train.len() < 2 {
        return Err(Error::config(format!("only {} training samples after the holdout split", train.len())));
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffler = rng(derive_seed(cfg.seed, 2));
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffler);
        let (mut total, mut batches) = (0.0, 0usize);
        for idx in order.chunks(cfg.batch_size) {
            // a single leftover sample has no batch variance; skip it
            if idx.len() < 2 {
                continue;
            }
            let inputs: Vec<&Tensor> = idx.iter().map(|&i| &train.inputs[i]).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
            let x = to_act(&inputs);
            let (loss, grads) = net.loss_and_grads(x.clone(), &labels);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            let moments = net.batch_moments(x);
            net.update_running(moments, cfg.momentum);
            net.sgd_step(&grads, cfg.lr);
            total += loss;
            batches += 1;
        }
        if !net.all_finite() {
            return Err(Error::Diverged { epoch });
        }
        losses.push(total / batches.max(1) as f64);
    }
    let model = net.export(arch.name(), sample_shape)?;
    let holdout_accuracy = if holdout.is_empty() { None } else { Some(clean_accuracy(&model, &holdout)?) };
    Ok(TrainOutcome { model, losses, holdout_accuracy, train_samples: train.len(), holdout_samples: holdout.len() })
}

impl TrainOutcome {
    pub fn summary(&self) -> String {
        format!(
            "trained {} on {} samples, final loss {:.4}, holdout accuracy {}",
            self.model.name,
            self.train_samples,
            self.losses.last().copied().unwrap_or(f64::NAN),
            self.holdout_accuracy.map_or_else(|| String::from("n/a"), |a| format!("{a:.4}")),
        )
    }
}
