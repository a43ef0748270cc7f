//! Feedforward controller network `(x, r) ↦ (u, params(P))`.
//!
//! tanh hidden layers, linear output, inputs and targets standardized with
//! training-set statistics. Training uses Adam with bias correction, a cosine
//! learning-rate schedule over epochs and inverted dropout on hidden layers.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{fmt_num, parse_num, Dataset, TrainingRecord};
use crate::error::{Error, Result};
use crate::ocp::SymmetricMatrix;
use crate::rng::{derive_seed, seeded_rng};

pub const MODEL_SCHEMA_VERSION: u32 = 1;
const MODEL_SENTINEL: &str = "#nomw";

/// Per-feature affine map `z = (v − mean) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Scaler {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Mean and population standard deviation per row of `data` (features × samples).
    /// Constant features get scale 1.
    pub fn fit(data: &DMatrix<f64>) -> Self {
        let count = data.ncols().max(1) as f64;
        let mut mean = Vec::with_capacity(data.nrows());
        let mut scale = Vec::with_capacity(data.nrows());
        for row in data.row_iter() {
            let mu = row.sum() / count;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / count;
            let sd = var.sqrt();
            mean.push(mu);
            scale.push(if sd > 1e-12 * (1.0 + mu.abs()) { sd } else { 1.0 });
        }
        Self { mean, scale }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, data: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(data.nrows(), data.ncols(), |i, j| (data[(i, j)] - self.mean[i]) / self.scale[i])
    }

    pub fn denormalize(&self, data: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(data.nrows(), data.ncols(), |i, j| data[(i, j)] * self.scale[i] + self.mean[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerNet {
    pub n: usize,
    pub m: usize,
    pub q: usize,
    /// `[n + m, hidden…, q + n(n+1)/2]`
    pub layer_sizes: Vec<usize>,
    /// `weights[l]` maps layer `l` to layer `l + 1` (rows = outputs).
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
    pub input_scaler: Scaler,
    pub output_scaler: Scaler,
    /// Bounding box of the training inputs, used to flag extrapolation.
    pub input_lo: Vec<f64>,
    pub input_hi: Vec<f64>,
}

/// Gradients with the same shapes as the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGradients {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

impl NetGradients {
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

fn add_bias(z: &mut DMatrix<f64>, b: &DVector<f64>) {
    for mut col in z.column_iter_mut() {
        col += b;
    }
}

/// Inverted-dropout mask: entries are `0` with probability `rate`, else `1/(1 − rate)`.
pub fn dropout_mask<R: Rng>(rng: &mut R, rows: usize, cols: usize, rate: f64) -> DMatrix<f64> {
    let keep = 1.0 / (1.0 - rate);
    DMatrix::from_fn(rows, cols, |_, _| if rng.random::<f64>() < rate { 0.0 } else { keep })
}

struct ForwardCache {
    /// Layer inputs; `acts[0]` is the network input.
    acts: Vec<DMatrix<f64>>,
    /// tanh outputs before masking, per hidden layer.
    tanh: Vec<DMatrix<f64>>,
    masks: Vec<Option<DMatrix<f64>>>,
}

impl ControllerNet {
    /// Network with uniform `U(−1/√fan_in, 1/√fan_in)` weights and biases and identity scalers.
    pub fn new(n: usize, m: usize, q: usize, hidden: &[usize], rng: &mut ChaCha8Rng) -> Result<Self> {
        if hidden.contains(&0) {
            return Err(Error::InvalidInput("hidden layers must have at least one unit".into()));
        }
        let mut layer_sizes = vec![n + m];
        layer_sizes.extend_from_slice(hidden);
        layer_sizes.push(q + SymmetricMatrix::param_count(n));
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            weights.push(DMatrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-bound..=bound)));
            biases.push(DVector::from_fn(fan_out, |_, _| rng.random_range(-bound..=bound)));
        }
        Ok(Self {
            n,
            m,
            q,
            input_scaler: Scaler::identity(n + m),
            output_scaler: Scaler::identity(layer_sizes[layer_sizes.len() - 1]),
            input_lo: vec![f64::NEG_INFINITY; n + m],
            input_hi: vec![f64::INFINITY; n + m],
            layer_sizes,
            weights,
            biases,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        self.layer_sizes[self.layer_sizes.len() - 1]
    }

    pub fn hidden(&self) -> &[usize] {
        &self.layer_sizes[1..self.layer_sizes.len() - 1]
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// All parameters, layer by layer: weights (column-major) then biases.
    pub fn parameters(&self) -> Vec<f64> {
        NetGradients {
            weights: self.weights.clone(),
            biases: self.biases.clone(),
        }
        .flat()
    }

    pub fn set_parameters(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.parameter_count() {
            return Err(Error::InvalidInput(format!(
                "{} parameters supplied for a network with {}",
                flat.len(),
                self.parameter_count()
            )));
        }
        let mut k = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for v in w.iter_mut().chain(b.iter_mut()) {
                *v = flat[k];
                k += 1;
            }
        }
        Ok(())
    }

    fn forward_cached(&self, x: &DMatrix<f64>, masks: Option<&[DMatrix<f64>]>) -> ForwardCache {
        let layers = self.weights.len();
        let mut cache = ForwardCache {
            acts: vec![x.clone()],
            tanh: Vec::with_capacity(layers - 1),
            masks: Vec::with_capacity(layers - 1),
        };
        for l in 0..layers {
            let mut z = &self.weights[l] * &cache.acts[l];
            add_bias(&mut z, &self.biases[l]);
            if l + 1 < layers {
                z.apply(|v| *v = v.tanh());
                let mask = masks.map(|ms| ms[l].clone());
                let a = match &mask {
                    Some(mk) => z.component_mul(mk),
                    None => z.clone(),
                };
                cache.tanh.push(z);
                cache.masks.push(mask);
                cache.acts.push(a);
            } else {
                cache.acts.push(z);
            }
        }
        cache
    }

    /// Output in normalized units for normalized inputs (features × samples).
    pub fn forward_normalized(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.forward_cached(x, None).acts.pop().expect("output layer")
    }

    fn backward(&self, cache: &ForwardCache, y: &DMatrix<f64>) -> (f64, NetGradients) {
        let out = cache.acts.last().expect("output layer");
        let diff = out - y;
        let count = diff.len().max(1) as f64;
        let mse = diff.norm_squared() / count;
        let mut delta = diff * (2.0 / count);
        let layers = self.weights.len();
        let mut gw = vec![DMatrix::zeros(0, 0); layers];
        let mut gb = vec![DVector::zeros(0); layers];
        for l in (0..layers).rev() {
            gw[l] = &delta * cache.acts[l].transpose();
            gb[l] = delta.column_sum();
            if l > 0 {
                let mut back = self.weights[l].transpose() * &delta;
                let t = &cache.tanh[l - 1];
                back.zip_apply(t, |d, tv| *d *= 1.0 - tv * tv);
                if let Some(mask) = &cache.masks[l - 1] {
                    back.component_mul_assign(mask);
                }
                delta = back;
            }
        }
        (mse, NetGradients { weights: gw, biases: gb })
    }

    /// MSE and its gradient for normalized inputs and targets, without dropout.
    pub fn mse_and_gradients(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> (f64, NetGradients) {
        self.backward(&self.forward_cached(x, None), y)
    }

    pub fn mse(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
        let out = self.forward_normalized(x);
        (out - y).norm_squared() / (y.len().max(1) as f64)
    }

    /// Raw outputs for raw inputs (features × samples).
    pub fn predict(&self, inputs: &DMatrix<f64>) -> DMatrix<f64> {
        let z = self.forward_normalized(&self.input_scaler.normalize(inputs));
        self.output_scaler.denormalize(&z)
    }

    /// True when `(x, r)` lies outside the box spanned by the training inputs.
    pub fn is_extrapolating(&self, x: &DVector<f64>, r: &DVector<f64>) -> bool {
        x.iter()
            .chain(r.iter())
            .zip(self.input_lo.iter().zip(&self.input_hi))
            .any(|(v, (lo, hi))| v < lo || v > hi)
    }
}

/// Network output at `(x, r)`; `P` is returned as emitted, without projection.
pub fn infer(net: &ControllerNet, x: &DVector<f64>, r: &DVector<f64>) -> Result<(DVector<f64>, SymmetricMatrix)> {
    if x.len() != net.n || r.len() != net.m {
        return Err(Error::InvalidInput(format!(
            "network expects x in R^{} and r in R^{}",
            net.n, net.m
        )));
    }
    let input = DMatrix::from_iterator(net.input_dim(), 1, x.iter().chain(r.iter()).copied());
    let out = net.predict(&input);
    let u = DVector::from_iterator(net.q, out.column(0).iter().take(net.q).copied());
    let p = SymmetricMatrix::new(net.n, out.column(0).iter().skip(net.q).copied().collect())?;
    Ok((u, p))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub dropout_rate: f64,
    pub seed: u64,
    /// Candidate hidden-layer sizes for [`grow`], smallest first.
    pub growth_schedule: Vec<Vec<usize>>,
    pub target_mse: f64,
}

/// Hidden layer sizes of the benchmark controller network.
pub const PAPER_HIDDEN: [usize; 6] = [8, 32, 64, 64, 32, 16];

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: PAPER_HIDDEN.to_vec(),
            epochs: 10_000,
            batch_size: 64,
            lr_max: 1e-3,
            lr_min: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            dropout_rate: 0.1,
            seed: 0,
            growth_schedule: vec![vec![8, 16], vec![8, 32, 16], PAPER_HIDDEN.to_vec()],
            target_mse: 1e-3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidInput("epochs and batch size must be positive".into()));
        }
        if !(self.lr_min > 0.0 && self.lr_max >= self.lr_min && self.lr_max.is_finite()) {
            return Err(Error::InvalidInput("learning rates must satisfy lr_max >= lr_min > 0".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidInput("dropout rate must lie in [0, 1)".into()));
        }
        if !(self.beta1 >= 0.0 && self.beta1 < 1.0 && self.beta2 >= 0.0 && self.beta2 < 1.0) {
            return Err(Error::InvalidInput("Adam decay rates must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Cosine-annealed learning rate for `epoch` of `epochs`.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        let span = self.epochs.saturating_sub(1).max(1) as f64;
        let frac = (epoch as f64 / span).min(1.0);
        self.lr_min + 0.5 * (self.lr_max - self.lr_min) * (1.0 + (std::f64::consts::PI * frac).cos())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub hidden: Vec<usize>,
    /// Full-batch MSE (normalized units, no dropout) after every epoch.
    pub train_mse: Vec<f64>,
    pub val_mse: Vec<f64>,
    /// Set by [`grow`] when no candidate reached the target.
    pub target_missed: bool,
}

impl TrainReport {
    pub fn final_train_mse(&self) -> f64 {
        self.train_mse.last().copied().unwrap_or(f64::NAN)
    }

    pub fn final_val_mse(&self) -> f64 {
        self.val_mse.last().copied().unwrap_or(f64::NAN)
    }
}

fn record_input(rec: &TrainingRecord) -> impl Iterator<Item = f64> + '_ {
    rec.x.iter().chain(rec.r.iter()).copied()
}

fn record_target(rec: &TrainingRecord) -> impl Iterator<Item = f64> + '_ {
    rec.u.iter().chain(rec.p.params()).copied()
}

/// Inputs and targets of the feasible records as features × samples matrices.
pub fn design_matrices(ds: &Dataset) -> (DMatrix<f64>, DMatrix<f64>) {
    let recs: Vec<&TrainingRecord> = ds.feasible_records().collect();
    let (n, m, q) = (ds.meta.n, ds.meta.m, ds.meta.q);
    let np = SymmetricMatrix::param_count(n);
    let x = DMatrix::from_iterator(n + m, recs.len(), recs.iter().flat_map(|r| record_input(r)));
    let y = DMatrix::from_iterator(q + np, recs.len(), recs.iter().flat_map(|r| record_target(r)));
    (x, y)
}

fn select_columns(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), idx.len(), |i, j| m[(i, idx[j])])
}

struct Adam {
    m: NetGradients,
    v: NetGradients,
    t: i32,
}

impl Adam {
    fn new(net: &ControllerNet) -> Self {
        let zeros = NetGradients {
            weights: net.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect(),
            biases: net.biases.iter().map(|b| DVector::zeros(b.len())).collect(),
        };
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, net: &mut ControllerNet, g: &NetGradients, lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + cfg.adam_eps);
        };
        for l in 0..net.weights.len() {
            for (((p, m), v), gv) in net.weights[l]
                .iter_mut()
                .zip(self.m.weights[l].iter_mut())
                .zip(self.v.weights[l].iter_mut())
                .zip(g.weights[l].iter())
            {
                update(p, m, v, *gv);
            }
            for (((p, m), v), gv) in net.biases[l]
                .iter_mut()
                .zip(self.m.biases[l].iter_mut())
                .zip(self.v.biases[l].iter_mut())
                .zip(g.biases[l].iter())
            {
                update(p, m, v, *gv);
            }
        }
    }
}

/// Trains `cfg.hidden` on the feasible records of `train`; validation MSE is
/// tracked on the feasible records of `val` (may be empty).
pub fn train(train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<(ControllerNet, TrainReport)> {
    cfg.validate()?;
    let (x_raw, y_raw) = design_matrices(train);
    if x_raw.ncols() == 0 {
        return Err(Error::NoData("training set has no feasible records".into()));
    }
    let (xv_raw, yv_raw) = design_matrices(val);
    let (n, m, q) = (train.meta.n, train.meta.m, train.meta.q);

    let mut init_rng = seeded_rng(derive_seed(cfg.seed, &[0]));
    let mut net = ControllerNet::new(n, m, q, &cfg.hidden, &mut init_rng)?;
    net.input_scaler = Scaler::fit(&x_raw);
    net.output_scaler = Scaler::fit(&y_raw);
    net.input_lo = x_raw.row_iter().map(|r| r.min()).collect();
    net.input_hi = x_raw.row_iter().map(|r| r.max()).collect();

    let x = net.input_scaler.normalize(&x_raw);
    let y = net.output_scaler.normalize(&y_raw);
    let xv = net.input_scaler.normalize(&xv_raw);
    let yv = net.output_scaler.normalize(&yv_raw);

    let mut rng = seeded_rng(derive_seed(cfg.seed, &[1]));
    let mut adam = Adam::new(&net);
    let mut order: Vec<usize> = (0..x.ncols()).collect();
    let mut report = TrainReport {
        hidden: cfg.hidden.clone(),
        train_mse: Vec::with_capacity(cfg.epochs),
        val_mse: Vec::with_capacity(cfg.epochs),
        target_missed: false,
    };
    let hidden_sizes = net.hidden().to_vec();

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate(epoch);
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let xb = select_columns(&x, chunk);
            let yb = select_columns(&y, chunk);
            let masks: Option<Vec<DMatrix<f64>>> = (cfg.dropout_rate > 0.0).then(|| {
                hidden_sizes
                    .iter()
                    .map(|&h| dropout_mask(&mut rng, h, chunk.len(), cfg.dropout_rate))
                    .collect()
            });
            let cache = net.forward_cached(&xb, masks.as_deref());
            let (batch_mse, grads) = net.backward(&cache, &yb);
            if !batch_mse.is_finite() {
                return Err(Error::TrainingDiverged(epoch));
            }
            adam.step(&mut net, &grads, lr, cfg);
        }
        let tr = net.mse(&x, &y);
        if !tr.is_finite() {
            return Err(Error::TrainingDiverged(epoch));
        }
        report.train_mse.push(tr);
        report.val_mse.push(if xv.ncols() > 0 { net.mse(&xv, &yv) } else { f64::NAN });
    }
    Ok((net, report))
}

/// Trains the growth schedule in order and returns the first network whose
/// validation MSE reaches the target, or the best one with `target_missed`.
pub fn grow(train_ds: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<(ControllerNet, TrainReport)> {
    if cfg.growth_schedule.is_empty() {
        return Err(Error::InvalidInput("growth schedule is empty".into()));
    }
    let mut best: Option<(ControllerNet, TrainReport)> = None;
    let mut last_err = None;
    for hidden in &cfg.growth_schedule {
        let candidate = TrainConfig {
            hidden: hidden.clone(),
            ..cfg.clone()
        };
        match train(train_ds, val, &candidate) {
            Ok((net, report)) => {
                let score = report.final_val_mse();
                log::info!("architecture {hidden:?}: validation MSE {score:e}");
                if score <= cfg.target_mse {
                    return Ok((net, report));
                }
                let better = best
                    .as_ref()
                    .map_or(true, |(_, b)| score.total_cmp(&b.final_val_mse()).is_lt());
                if better {
                    best = Some((net, report));
                }
            }
            Err(Error::TrainingDiverged(epoch)) => {
                log::warn!("architecture {hidden:?} diverged at epoch {epoch}");
                last_err = Some(Error::TrainingDiverged(epoch));
            }
            Err(e) => return Err(e),
        }
    }
    match best {
        Some((net, mut report)) => {
            report.target_missed = true;
            Ok((net, report))
        }
        None => Err(last_err.unwrap_or(Error::TrainingDiverged(0))),
    }
}

/// `(max ‖u_net − u‖, max ‖P_net − P‖₂)` over the feasible records of `ds`.
pub fn approximation_error(net: &ControllerNet, ds: &Dataset) -> Result<(f64, f64)> {
    let mut du: f64 = 0.0;
    let mut dp: f64 = 0.0;
    let mut seen = 0usize;
    for rec in ds.feasible_records() {
        let (u, p) = infer(net, &rec.x, &rec.r)?;
        du = du.max((&u - &rec.u).norm());
        let diff = SymmetricMatrix::from_dense(&(p.to_dense() - rec.p.to_dense()));
        dp = dp.max(diff.spectral_norm()?);
        seen += 1;
    }
    if seen == 0 {
        return Err(Error::NoData("approximation error needs at least one feasible record".into()));
    }
    Ok((du, dp))
}

fn join(vals: &[f64]) -> String {
    vals.iter().map(|v| fmt_num(*v)).collect::<Vec<_>>().join(",")
}

pub fn net_to_text(net: &ControllerNet) -> String {
    let mut out = String::new();
    let sizes: Vec<String> = net.layer_sizes.iter().map(|s| s.to_string()).collect();
    let _ = writeln!(out, "{MODEL_SENTINEL} schema={MODEL_SCHEMA_VERSION} layers={}", sizes.join(","));
    let _ = writeln!(out, "n={}", net.n);
    let _ = writeln!(out, "m={}", net.m);
    let _ = writeln!(out, "q={}", net.q);
    let _ = writeln!(out, "activation=tanh");
    let _ = writeln!(out, "in_mean={}", join(&net.input_scaler.mean));
    let _ = writeln!(out, "in_scale={}", join(&net.input_scaler.scale));
    let _ = writeln!(out, "out_mean={}", join(&net.output_scaler.mean));
    let _ = writeln!(out, "out_scale={}", join(&net.output_scaler.scale));
    let _ = writeln!(out, "in_lo={}", join(&net.input_lo));
    let _ = writeln!(out, "in_hi={}", join(&net.input_hi));
    for (l, (w, b)) in net.weights.iter().zip(&net.biases).enumerate() {
        out.push('\n');
        let _ = writeln!(out, "layer={} rows={} cols={}", l + 1, w.nrows(), w.ncols());
        for row in w.row_iter() {
            let vals: Vec<f64> = row.iter().copied().collect();
            out.push_str(&join(&vals));
            out.push('\n');
        }
        let _ = writeln!(out, "bias={}", join(b.as_slice()));
    }
    out
}

pub fn save_net(net: &ControllerNet, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, net_to_text(net))?;
    Ok(())
}

pub fn load_net(path: impl AsRef<Path>) -> Result<ControllerNet> {
    net_from_text(&std::fs::read_to_string(path)?)
}

fn corrupt(msg: String) -> Error {
    Error::CorruptDataset(format!("model file: {msg}"))
}

fn next_kv<'a>(lines: &mut impl Iterator<Item = &'a str>, key: &str) -> Result<String> {
    let line = lines.next().ok_or_else(|| corrupt(format!("missing '{key}'")))?;
    match line.split_once('=') {
        Some((k, v)) if k.trim() == key => Ok(v.trim().to_string()),
        _ => Err(corrupt(format!("expected '{key}=', found '{line}'"))),
    }
}

pub fn net_from_text(text: &str) -> Result<ControllerNet> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| corrupt("empty file".into()))?;
    let rest = header
        .strip_prefix(MODEL_SENTINEL)
        .ok_or_else(|| Error::SchemaError(format!("not a model file (header '{header}')")))?;
    let mut version = None;
    let mut sizes = None;
    for tok in rest.split_whitespace() {
        match tok.split_once('=') {
            Some(("schema", v)) => version = v.parse::<u32>().ok(),
            Some(("layers", v)) => {
                sizes = v.split(',').map(|s| s.parse::<usize>().ok()).collect::<Option<Vec<_>>>();
            }
            _ => {}
        }
    }
    match version {
        Some(MODEL_SCHEMA_VERSION) => {}
        Some(v) => return Err(Error::SchemaError(format!("model schema {v} is not supported"))),
        None => return Err(Error::SchemaError("model header lacks a schema version".into())),
    }
    let sizes = sizes
        .filter(|s| s.len() >= 2 && !s.contains(&0))
        .ok_or_else(|| corrupt("bad layer sizes".into()))?;

    let int = |s: String| s.parse::<usize>().map_err(|_| corrupt(format!("bad integer '{s}'")));
    let nums = |s: String, len: usize| -> Result<Vec<f64>> {
        let v: Vec<f64> = s
            .split(',')
            .map(parse_num)
            .collect::<Option<_>>()
            .ok_or_else(|| corrupt(format!("bad numbers '{s}'")))?;
        if v.len() != len {
            return Err(corrupt(format!("expected {len} values, found {}", v.len())));
        }
        Ok(v)
    };
    let n = int(next_kv(&mut lines, "n")?)?;
    let m = int(next_kv(&mut lines, "m")?)?;
    let q = int(next_kv(&mut lines, "q")?)?;
    let act = next_kv(&mut lines, "activation")?;
    if act != "tanh" {
        return Err(Error::SchemaError(format!("unsupported activation '{act}'")));
    }
    let (din, dout) = (sizes[0], sizes[sizes.len() - 1]);
    if din != n + m || dout != q + SymmetricMatrix::param_count(n) {
        return Err(corrupt("layer sizes disagree with n, m, q".into()));
    }
    let input_scaler = Scaler {
        mean: nums(next_kv(&mut lines, "in_mean")?, din)?,
        scale: nums(next_kv(&mut lines, "in_scale")?, din)?,
    };
    let output_scaler = Scaler {
        mean: nums(next_kv(&mut lines, "out_mean")?, dout)?,
        scale: nums(next_kv(&mut lines, "out_scale")?, dout)?,
    };
    if input_scaler.scale.iter().chain(&output_scaler.scale).any(|s| *s == 0.0 || !s.is_finite()) {
        return Err(corrupt("scaler with zero or non-finite scale".into()));
    }
    let input_lo = nums(next_kv(&mut lines, "in_lo")?, din)?;
    let input_hi = nums(next_kv(&mut lines, "in_hi")?, din)?;

    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for (l, pair) in sizes.windows(2).enumerate() {
        let (rows, cols) = (pair[1], pair[0]);
        let head = lines.next().ok_or_else(|| corrupt(format!("missing layer {}", l + 1)))?;
        let expected = format!("layer={} rows={rows} cols={cols}", l + 1);
        if head.trim() != expected {
            return Err(corrupt(format!("expected '{expected}', found '{head}'")));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let line = lines.next().ok_or_else(|| corrupt("truncated weight matrix".into()))?;
            data.extend(nums(line.to_string(), cols)?);
        }
        weights.push(DMatrix::from_row_slice(rows, cols, &data));
        biases.push(DVector::from_vec(nums(next_kv(&mut lines, "bias")?, rows)?));
    }
    if lines.next().is_some() {
        return Err(corrupt("trailing content".into()));
    }
    Ok(ControllerNet {
        n,
        m,
        q,
        layer_sizes: sizes,
        weights,
        biases,
        input_scaler,
        output_scaler,
        input_lo,
        input_hi,
    })
}
