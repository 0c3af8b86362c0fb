//! Loss, optimizers, dropout, data splits and the training loop.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Graph, Shape, Tensor};
use crate::corpus::{WordVectors, NUM_CATEGORIES};
use crate::models::{self, Masks, ModelError, Params, TalkInput};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("bce_loss: prediction {value} at index {index} is not strictly inside (0, 1)")]
    ProbabilityRange { index: usize, value: f64 },
    #[error("bce_loss: {0} predictions vs {1} targets")]
    LengthMismatch(usize, usize),
    #[error("optimizer: parameter {index} has shape {param}, gradient has {grad}")]
    GradShape { index: usize, param: Shape, grad: Shape },
    #[error("optimizer: {params} parameters vs {grads} gradients")]
    GradCount { params: usize, grads: usize },
    #[error("degenerate dropout: p = {0} while training")]
    DegenerateDropout(f64),
    #[error("dropout probability {0} outside [0, 1]")]
    DropoutRange(f64),
    #[error("insufficient talks: {total} talks cannot reserve {test_n} for test")]
    InsufficientTalks { total: usize, test_n: usize },
    #[error("dev fraction {0} must lie strictly between 0 and 1")]
    DevFraction(f64),
    #[error("epoch {epoch}, batch {batch}: non-finite loss {loss}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },
    #[error("epoch {epoch}, batch {batch}: {source}")]
    Forward {
        epoch: usize,
        batch: usize,
        #[source]
        source: ModelError,
    },
    #[error("empty dev set")]
    EmptyDev,
    #[error("empty training set")]
    EmptyTrain,
    #[error("dev evaluation: {0}")]
    DevForward(#[source] ModelError),
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Mean binary cross-entropy over the categories.
pub fn bce_loss(r: &[f64], y: &[f64]) -> Result<f64> {
    if r.len() != y.len() {
        return Err(TrainError::LengthMismatch(r.len(), y.len()));
    }
    if let Some((index, &value)) = r.iter().enumerate().find(|(_, &v)| !(v > 0.0 && v < 1.0)) {
        return Err(TrainError::ProbabilityRange { index, value });
    }
    let n = r.len() as f64;
    let total: f64 = r
        .iter()
        .zip(y)
        .map(|(&ri, &yi)| yi * ri.ln() + (1.0 - yi) * (1.0 - ri).ln())
        .sum();
    Ok(-total / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adagrad,
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "adagrad" => Ok(Self::Adagrad),
            "adam" => Ok(Self::Adam),
            other => Err(format!("unknown optimizer `{other}` (expected adagrad or adam)")),
        }
    }
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Adagrad => "adagrad",
            Self::Adam => "adam",
        }
    }
}

pub const ADAGRAD_EPS: f64 = 1e-10;
pub const ADAM_EPS: f64 = 1e-8;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;

/// Per-parameter optimizer accumulators.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    eps: f64,
    /// Adagrad: running sum of squared gradients. Adam: first moment.
    first: Vec<Vec<f64>>,
    /// Adam second moment; empty for Adagrad.
    second: Vec<Vec<f64>>,
    steps: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0; p.len()]).collect::<Vec<_>>();
        let (eps, second) = match kind {
            OptimizerKind::Adagrad => (ADAGRAD_EPS, Vec::new()),
            OptimizerKind::Adam => (ADAM_EPS, zeros()),
        };
        Self {
            kind,
            learning_rate,
            eps,
            first: zeros(),
            second,
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn accumulators(&self) -> &[Vec<f64>] {
        &self.first
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first.len() {
            return Err(TrainError::GradCount {
                params: params.len(),
                grads: grads.len(),
            });
        }
        for (index, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(TrainError::GradShape {
                    index,
                    param: p.shape(),
                    grad: g.shape(),
                });
            }
        }
        self.steps += 1;
        let lr = self.learning_rate;
        let eps = self.eps;
        match self.kind {
            OptimizerKind::Adagrad => {
                for ((p, g), acc) in params.iter_mut().zip(grads).zip(&mut self.first) {
                    for ((w, &gi), a) in p.data_mut().iter_mut().zip(g.data()).zip(acc.iter_mut()) {
                        *a += gi * gi;
                        *w -= lr * gi / (a.sqrt() + eps);
                    }
                }
            }
            OptimizerKind::Adam => {
                let t = self.steps as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    for (((w, &gi), mi), vi) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.iter_mut())
                        .zip(v.iter_mut())
                    {
                        *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi;
                        *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi;
                        let m_hat = *mi / c1;
                        let v_hat = *vi / c2;
                        *w -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(TrainError::DropoutRange(p));
    }
    if p == 1.0 {
        return Err(TrainError::DegenerateDropout(p));
    }
    Ok(())
}

/// Inverted-dropout mask: each entry is 0 with probability `p`, otherwise
/// `1/(1−p)`.
pub fn drop_mask(shape: Shape, p: f64, rng: &mut impl Rng) -> Result<Tensor> {
    check_p(p)?;
    let keep = 1.0 / (1.0 - p);
    let data = (0..shape.numel())
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
        .collect();
    Ok(Tensor::new(shape, data).expect("mask shape"))
}

fn apply_mask(t: &Tensor, mask: &Tensor) -> Tensor {
    let data = t.data().iter().zip(mask.data()).map(|(a, m)| a * m).collect();
    Tensor::new(t.shape(), data).expect("same shape")
}

/// Weight-drop on recurrent matrices. Identity when not training.
pub fn weight_drop(matrices: &[Tensor], p: f64, rng: &mut impl Rng, training: bool) -> Result<Vec<Tensor>> {
    if !training {
        return Ok(matrices.to_vec());
    }
    matrices
        .iter()
        .map(|m| Ok(apply_mask(m, &drop_mask(m.shape(), p, rng)?)))
        .collect()
}

/// Standard dropout on a vector. Identity when not training.
pub fn fc_dropout(v: &Tensor, p: f64, rng: &mut impl Rng, training: bool) -> Result<Tensor> {
    if !training {
        return Ok(v.clone());
    }
    Ok(apply_mask(v, &drop_mask(v.shape(), p, rng)?))
}

/// Seeded source of dropout masks that counts every mask it draws.
#[derive(Debug, Clone)]
pub struct MaskSource {
    rng: ChaCha8Rng,
    draws: u64,
}

impl MaskSource {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            draws: 0,
        }
    }

    pub fn draws(&self) -> u64 {
        self.draws
    }

    pub fn mask(&mut self, shape: Shape, p: f64) -> Result<Tensor> {
        self.draws += 1;
        drop_mask(shape, p, &mut self.rng)
    }
}

/// Index partition of a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles `0..total`, reserves `test_n` for test, then `⌊dev_fraction ·
/// rest⌋` for dev. Each part is returned sorted.
pub fn split_data(total: usize, test_n: usize, dev_fraction: f64, seed: u64) -> Result<Split> {
    if total <= test_n {
        return Err(TrainError::InsufficientTalks { total, test_n });
    }
    if !(dev_fraction > 0.0 && dev_fraction < 1.0) {
        return Err(TrainError::DevFraction(dev_fraction));
    }
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let rest = total - test_n;
    let dev_n = (dev_fraction * rest as f64).floor() as usize;
    let mut test = order[..test_n].to_vec();
    let mut dev = order[test_n..test_n + dev_n].to_vec();
    let mut train = order[test_n + dev_n..].to_vec();
    test.sort_unstable();
    dev.sort_unstable();
    train.sort_unstable();
    Ok(Split { train, dev, test })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_drop_p: f64,
    pub fc_dropout_p: f64,
    pub seed: u64,
    pub dev_fraction: f64,
    pub test_n: usize,
    pub hidden: usize,
    pub pos_dim: usize,
    pub dep_dim: usize,
    /// L2 penalty `λ/2 ‖θ‖²`; 0 disables.
    pub weight_decay: f64,
    /// Stop after this many epochs without a dev improvement of more than
    /// `min_delta`.
    pub patience: usize,
    pub min_delta: f64,
    /// Inverse regularization strengths tried by the linear baselines.
    pub c_grid: Vec<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Adagrad,
            learning_rate: 0.01,
            batch_size: 10,
            epochs: 50,
            weight_drop_p: 0.2,
            fc_dropout_p: 0.2,
            seed: 42,
            dev_fraction: 0.1,
            test_n: 150,
            hidden: 128,
            pos_dim: 32,
            dep_dim: 32,
            weight_decay: 0.0,
            patience: 10,
            min_delta: 1e-4,
            c_grid: vec![0.1, 1.0, 10.0, 100.0],
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("invalid value `{value}` for `{key}`"))
}

impl TrainConfig {
    pub const KEYS: [&'static str; 16] = [
        "optimizer",
        "learning_rate",
        "batch_size",
        "epochs",
        "weight_drop_p",
        "fc_dropout_p",
        "seed",
        "dev_fraction",
        "test_n",
        "hidden",
        "pos_dim",
        "dep_dim",
        "weight_decay",
        "patience",
        "min_delta",
        "c_grid",
    ];

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let value = value.trim();
        match key.trim() {
            "optimizer" => self.optimizer = value.parse()?,
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "weight_drop_p" => self.weight_drop_p = parse_value(key, value)?,
            "fc_dropout_p" => self.fc_dropout_p = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "dev_fraction" => self.dev_fraction = parse_value(key, value)?,
            "test_n" => self.test_n = parse_value(key, value)?,
            "hidden" => self.hidden = parse_value(key, value)?,
            "pos_dim" => self.pos_dim = parse_value(key, value)?,
            "dep_dim" => self.dep_dim = parse_value(key, value)?,
            "weight_decay" => self.weight_decay = parse_value(key, value)?,
            "patience" => self.patience = parse_value(key, value)?,
            "min_delta" => self.min_delta = parse_value(key, value)?,
            "c_grid" => {
                self.c_grid = value
                    .split(',')
                    .map(|v| parse_value(key, v.trim()))
                    .collect::<std::result::Result<_, _>>()?
            }
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| TrainError::Config {
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            self.set(key, value).map_err(|message| TrainError::Config { line: i + 1, message })?;
        }
        self.validate().map_err(|message| TrainError::Config { line: 0, message })
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.learning_rate > 0.0) {
            return Err("learning_rate must be > 0".into());
        }
        if self.batch_size == 0 {
            return Err("batch_size must be >= 1".into());
        }
        for (name, p) in [("weight_drop_p", self.weight_drop_p), ("fc_dropout_p", self.fc_dropout_p)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} must lie in [0, 1]"));
            }
        }
        if !(self.dev_fraction > 0.0 && self.dev_fraction < 1.0) {
            return Err("dev_fraction must lie strictly between 0 and 1".into());
        }
        if self.hidden == 0 {
            return Err("hidden must be >= 1".into());
        }
        if self.c_grid.is_empty() || self.c_grid.iter().any(|c| !(*c > 0.0)) {
            return Err("c_grid must list positive values".into());
        }
        Ok(())
    }

    /// Every field as `key = value` lines, in [`Self::KEYS`] order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let grid: Vec<String> = self.c_grid.iter().map(f64::to_string).collect();
        let values = [
            self.optimizer.name().to_string(),
            self.learning_rate.to_string(),
            self.batch_size.to_string(),
            self.epochs.to_string(),
            self.weight_drop_p.to_string(),
            self.fc_dropout_p.to_string(),
            self.seed.to_string(),
            self.dev_fraction.to_string(),
            self.test_n.to_string(),
            self.hidden.to_string(),
            self.pos_dim.to_string(),
            self.dep_dim.to_string(),
            self.weight_decay.to_string(),
            self.patience.to_string(),
            self.min_delta.to_string(),
            grid.join(","),
        ];
        for (k, v) in Self::KEYS.iter().zip(values) {
            writeln!(out, "{k} = {v}").unwrap();
        }
        out
    }
}

/// Strict-improvement rule for saving parameters.
#[derive(Debug, Clone, Default)]
pub struct BestTracker {
    best: Option<f64>,
}

impl BestTracker {
    /// True iff `loss` is lower than every loss seen before.
    pub fn observe(&mut self, loss: f64) -> bool {
        match self.best {
            Some(b) if loss >= b => false,
            _ => {
                self.best = Some(loss);
                true
            }
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }
}

/// Dev-loss saturation: `patience` consecutive epochs without an
/// improvement larger than `min_delta`.
#[derive(Debug, Clone)]
pub struct Saturation {
    patience: usize,
    min_delta: f64,
    reference: Option<f64>,
    stale: usize,
}

impl Saturation {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            reference: None,
            stale: 0,
        }
    }

    /// Records a dev loss; returns true once the loss has saturated.
    pub fn observe(&mut self, loss: f64) -> bool {
        match self.reference {
            Some(r) if loss >= r - self.min_delta => self.stale += 1,
            _ => {
                self.reference = Some(loss);
                self.stale = 0;
            }
        }
        self.patience > 0 && self.stale >= self.patience
    }
}

/// One training or evaluation example.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: TalkInput,
    pub targets: [f64; NUM_CATEGORIES],
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub saved: bool,
    /// Mask draws before and after the dev pass.
    pub draws_before_dev: u64,
    pub draws_after_dev: u64,
}

pub fn curve_csv(records: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,dev_loss,saved\n");
    for r in records {
        writeln!(out, "{},{},{},{}", r.epoch, r.train_loss, r.dev_loss, u8::from(r.saved)).unwrap();
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the best dev epoch (initial parameters if no epoch ran).
    pub best: Params,
    pub best_epoch: Option<usize>,
    /// Parameters after the last epoch.
    pub last: Params,
    pub curve: Vec<EpochRecord>,
    pub saturated: bool,
}

fn example_loss(params: &Params, vectors: &WordVectors, ex: &Example) -> std::result::Result<f64, ModelError> {
    let r = models::predict(params, vectors, &ex.input)?;
    bce_loss(&r, &ex.targets).map_err(|e| match e {
        TrainError::ProbabilityRange { index, value } => {
            ModelError::Autodiff(crate::autodiff::AutodiffError::LogDomain { index, value })
        }
        other => unreachable!("{other}"),
    })
}

/// Mean BCE over `examples` with dropout disabled.
pub fn evaluate_loss(params: &Params, vectors: &WordVectors, examples: &[Example]) -> std::result::Result<f64, ModelError> {
    let losses = examples
        .par_iter()
        .map(|ex| example_loss(params, vectors, ex))
        .collect::<std::result::Result<Vec<f64>, _>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

fn example_gradient(
    params: &Params,
    vectors: &WordVectors,
    ex: &Example,
    masks: &Masks,
) -> std::result::Result<(f64, Vec<Tensor>), ModelError> {
    let mut graph = Graph::new();
    let (vars, out) = models::forward(&mut graph, params, vectors, &ex.input, masks)?;
    let loss = models::bce(&mut graph, out, &ex.targets)?;
    graph.backward(loss)?;
    let value = graph.value(loss).item().expect("scalar loss");
    let grads = vars
        .iter()
        .zip(params.tensors())
        .map(|(v, p)| graph.grad(*v).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    Ok((value, grads))
}

/// Mini-batch training with dev-loss checkpointing.
///
/// `on_save(epoch, params)` runs whenever the dev loss strictly improves.
pub fn train<F>(
    initial: Params,
    vectors: &WordVectors,
    train_set: &[Example],
    dev_set: &[Example],
    config: &TrainConfig,
    mut on_save: F,
) -> Result<TrainOutcome>
where
    F: FnMut(usize, &Params) -> Result<()>,
{
    let mut outcome = TrainOutcome {
        best: initial.clone(),
        best_epoch: None,
        last: initial,
        curve: Vec::new(),
        saturated: false,
    };
    if config.epochs == 0 {
        return Ok(outcome);
    }
    if train_set.is_empty() {
        return Err(TrainError::EmptyTrain);
    }
    if dev_set.is_empty() {
        return Err(TrainError::EmptyDev);
    }
    check_p(config.weight_drop_p)?;
    check_p(config.fc_dropout_p)?;

    let mut params = outcome.last.clone();
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate, params.tensors());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut masks = MaskSource::new(config.seed.wrapping_add(0x5eed));
    let mut tracker = BestTracker::default();
    let mut saturation = Saturation::new(config.patience, config.min_delta);
    let hidden = params.arch().hidden;
    let recurrent_shape = Shape::Matrix(hidden, hidden);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for (batch_no, batch) in order.chunks(config.batch_size).enumerate() {
            let recurrent = if config.weight_drop_p > 0.0 {
                Some([
                    masks.mask(recurrent_shape, config.weight_drop_p)?,
                    masks.mask(recurrent_shape, config.weight_drop_p)?,
                    masks.mask(recurrent_shape, config.weight_drop_p)?,
                    masks.mask(recurrent_shape, config.weight_drop_p)?,
                ])
            } else {
                None
            };
            let mut per_example = Vec::with_capacity(batch.len());
            for &i in batch {
                let pooled = if config.fc_dropout_p > 0.0 {
                    Some(masks.mask(Shape::Vector(hidden), config.fc_dropout_p)?)
                } else {
                    None
                };
                per_example.push((
                    i,
                    Masks {
                        recurrent: recurrent.clone(),
                        pooled,
                    },
                ));
            }
            let results = per_example
                .par_iter()
                .map(|(i, m)| example_gradient(&params, vectors, &train_set[*i], m))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|source| TrainError::Forward {
                    epoch,
                    batch: batch_no + 1,
                    source,
                })?;

            let scale = 1.0 / batch.len() as f64;
            let mut grads: Vec<Tensor> = params.tensors().iter().map(|p| Tensor::zeros(p.shape())).collect();
            let mut batch_loss = 0.0;
            for (loss, g) in &results {
                batch_loss += loss;
                for (acc, gi) in grads.iter_mut().zip(g) {
                    for (a, b) in acc.data_mut().iter_mut().zip(gi.data()) {
                        *a += b * scale;
                    }
                }
            }
            if !batch_loss.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    batch: batch_no + 1,
                    loss: batch_loss,
                });
            }
            if config.weight_decay > 0.0 {
                for (g, p) in grads.iter_mut().zip(params.tensors()) {
                    for (gi, w) in g.data_mut().iter_mut().zip(p.data()) {
                        *gi += config.weight_decay * w;
                    }
                }
            }
            optimizer.step(params.tensors_mut(), &grads)?;
            epoch_loss += batch_loss;
        }
        let train_loss = epoch_loss / train_set.len() as f64;

        let draws_before_dev = masks.draws();
        let dev_loss = evaluate_loss(&params, vectors, dev_set).map_err(TrainError::DevForward)?;
        let draws_after_dev = masks.draws();
        if !dev_loss.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                epoch,
                batch: 0,
                loss: dev_loss,
            });
        }
        let saved = tracker.observe(dev_loss);
        if saved {
            outcome.best = params.clone();
            outcome.best_epoch = Some(epoch);
            on_save(epoch, &params)?;
        }
        outcome.curve.push(EpochRecord {
            epoch,
            train_loss,
            dev_loss,
            saved,
            draws_before_dev,
            draws_after_dev,
        });
        if saturation.observe(dev_loss) {
            outcome.saturated = true;
            break;
        }
    }
    outcome.last = params;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Architecture;
    use approx::assert_abs_diff_eq;

    #[test]
    fn bce_closed_forms() {
        assert_abs_diff_eq!(bce_loss(&[0.5; 14], &[1.0; 14]).unwrap(), std::f64::consts::LN_2, epsilon = 1e-15);
        let mixed: Vec<f64> = (0..14).map(|i| (i % 2) as f64).collect();
        assert_abs_diff_eq!(bce_loss(&[0.5; 14], &mixed).unwrap(), std::f64::consts::LN_2, epsilon = 1e-15);
        assert_abs_diff_eq!(bce_loss(&[0.9; 14], &[1.0; 14]).unwrap(), 0.105_360_515_66, epsilon = 1e-10);
        assert!(matches!(bce_loss(&[1.0, 0.5], &[1.0, 0.0]), Err(TrainError::ProbabilityRange { index: 0, .. })));
        assert!(matches!(bce_loss(&[0.5, 0.0], &[1.0, 0.0]), Err(TrainError::ProbabilityRange { index: 1, .. })));
    }

    #[test]
    fn bce_matches_direct_formula() {
        // Values from an independent evaluation of −(1/n)Σ(y ln r + (1−y) ln(1−r)).
        let r = [0.2, 0.7, 0.55, 0.01];
        let y = [0.0, 1.0, 0.0, 1.0];
        assert_abs_diff_eq!(bce_loss(&r, &y).unwrap(), 1.495_874_094_364_701, epsilon = 1e-9);
    }

    #[test]
    fn adagrad_first_step() {
        let mut p = vec![Tensor::scalar(0.0)];
        let mut opt = Optimizer::new(OptimizerKind::Adagrad, 0.01, &p);
        opt.step(&mut p, &[Tensor::scalar(2.0)]).unwrap();
        assert_abs_diff_eq!(p[0].data()[0], -0.01, epsilon = 1e-12);
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        for g in [3.0, -0.02, 150.0] {
            let mut p = vec![Tensor::scalar(1.0)];
            let mut opt = Optimizer::new(OptimizerKind::Adam, 0.00066, &p);
            opt.step(&mut p, &[Tensor::scalar(g)]).unwrap();
            assert_abs_diff_eq!(p[0].data()[0] - 1.0, -0.00066 * f64::signum(g), epsilon = 1e-9);
        }
    }

    #[test]
    fn adagrad_three_steps_on_square() {
        // f(w) = w², w0 = 1, lr 0.01; iterates from an independent script.
        let mut p = vec![Tensor::scalar(1.0)];
        let mut opt = Optimizer::new(OptimizerKind::Adagrad, 0.01, &p);
        let expected = [0.99, 0.982_964_554_021_547, 0.977_237_939_490_517];
        for e in expected {
            let g = 2.0 * p[0].data()[0];
            opt.step(&mut p, &[Tensor::scalar(g)]).unwrap();
            assert_abs_diff_eq!(p[0].data()[0], e, epsilon = 1e-9);
        }
        assert!(opt.accumulators()[0][0] > 0.0);
    }

    #[test]
    fn one_step_decreases_quadratic() {
        for kind in [OptimizerKind::Adagrad, OptimizerKind::Adam] {
            let w0 = vec![0.8, -1.3, 0.05];
            let f = |w: &[f64]| w.iter().map(|x| x * x).sum::<f64>();
            let mut p = vec![Tensor::vector(w0.clone())];
            let mut opt = Optimizer::new(kind, 1e-3, &p);
            let g = Tensor::vector(w0.iter().map(|x| 2.0 * x).collect());
            opt.step(&mut p, &[g]).unwrap();
            assert!(f(p[0].data()) < f(&w0));
        }
    }

    #[test]
    fn optimizer_shape_mismatch() {
        let mut p = vec![Tensor::vector(vec![0.0; 3])];
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.1, &p);
        assert!(matches!(
            opt.step(&mut p, &[Tensor::vector(vec![0.0; 2])]),
            Err(TrainError::GradShape { .. })
        ));
    }

    #[test]
    fn dropout_identities_and_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = Tensor::matrix(3, 3, (0..9).map(f64::from).collect()).unwrap();
        assert_eq!(weight_drop(std::slice::from_ref(&m), 0.0, &mut rng, true).unwrap()[0], m);
        assert_eq!(weight_drop(std::slice::from_ref(&m), 0.7, &mut rng, false).unwrap()[0], m);
        let v = Tensor::vector(vec![1.0, 2.0]);
        assert_eq!(fc_dropout(&v, 0.0, &mut rng, true).unwrap(), v);
        assert_eq!(fc_dropout(&v, 0.5, &mut rng, false).unwrap(), v);
        assert!(matches!(weight_drop(&[m], 1.0, &mut rng, true), Err(TrainError::DegenerateDropout(_))));
        assert!(matches!(fc_dropout(&v, 1.0, &mut rng, true), Err(TrainError::DegenerateDropout(_))));

        let big = Tensor::vector(vec![1.0; 1_000_000]);
        for dropped in [
            weight_drop(&[Tensor::matrix(1000, 1000, vec![1.0; 1_000_000]).unwrap()], 0.5, &mut rng, true).unwrap()[0].clone(),
            fc_dropout(&big, 0.5, &mut rng, true).unwrap(),
        ] {
            let zeros = dropped.data().iter().filter(|&&x| x == 0.0).count() as f64 / 1e6;
            assert!((zeros - 0.5).abs() < 0.002, "{zeros}");
            assert!(dropped.data().iter().all(|&x| x == 0.0 || x == 2.0));
        }
    }

    #[test]
    fn split_sizes_and_partition() {
        let s = split_data(2231, 150, 0.1, 7).unwrap();
        assert_eq!((s.train.len(), s.dev.len(), s.test.len()), (1873, 208, 150));
        assert_eq!(s, split_data(2231, 150, 0.1, 7).unwrap());
        let mut all: Vec<usize> = s.train.iter().chain(&s.dev).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..2231).collect::<Vec<_>>());
        assert_ne!(s, split_data(2231, 150, 0.1, 8).unwrap());
        assert!(matches!(split_data(150, 150, 0.1, 0), Err(TrainError::InsufficientTalks { .. })));
        assert!(matches!(split_data(200, 150, 1.0, 0), Err(TrainError::DevFraction(_))));
    }

    #[test]
    fn strict_improvement_rule() {
        let mut t = BestTracker::default();
        let saved: Vec<bool> = [0.7, 0.6, 0.65].iter().map(|&l| t.observe(l)).collect();
        assert_eq!(saved, [true, true, false]);
        assert!(!t.observe(0.6));
    }

    #[test]
    fn saturation_counts_small_improvements_as_stale() {
        let mut s = Saturation::new(3, 1e-4);
        assert!(!s.observe(1.0));
        assert!(!s.observe(0.99995));
        assert!(!s.observe(0.99991));
        assert!(s.observe(0.9999));
    }

    #[test]
    fn config_text_round_trip_and_override() {
        let mut c = TrainConfig::default();
        c.apply_text("# comment\noptimizer = adam\nlearning_rate=0.00066\nbatch_size = 30\nc_grid = 1, 10\n").unwrap();
        assert_eq!(c.optimizer, OptimizerKind::Adam);
        assert_eq!(c.batch_size, 30);
        assert_eq!(c.c_grid, vec![1.0, 10.0]);
        let mut d = TrainConfig::default();
        d.apply_text(&c.to_text()).unwrap();
        assert_eq!(c, d);
        assert!(TrainConfig::default().apply_text("bogus = 1").is_err());
        assert!(TrainConfig::default().apply_text("batch_size = 0").is_err());
        assert!(TrainConfig::default().apply_text("learning_rate").is_err());
    }

    fn tiny_problem() -> (Params, WordVectors, Vec<Example>) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut wv = WordVectors::new(4).unwrap();
        for i in 0..6 {
            let v: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            wv.insert(&format!("w{i}"), &v);
        }
        let examples = (0..4)
            .map(|k| Example {
                input: TalkInput::Sequences(vec![vec![Some(k), Some((k + 1) % 6)], vec![Some(5)]]),
                targets: std::array::from_fn(|c| ((c + k) % 2) as f64),
            })
            .collect();
        (Params::init(Architecture::word_seq(4, 3), 0), wv, examples)
    }

    #[test]
    fn zero_epochs_returns_initial() {
        let (params, wv, ex) = tiny_problem();
        let config = TrainConfig { epochs: 0, ..TrainConfig::default() };
        let out = train(params.clone(), &wv, &ex, &[], &config, |_, _| Ok(())).unwrap();
        assert_eq!(out.best, params);
        assert!(out.curve.is_empty());
    }

    #[test]
    fn training_is_reproducible_and_dev_draws_no_masks() {
        let (params, wv, ex) = tiny_problem();
        let config = TrainConfig {
            epochs: 4,
            batch_size: 2,
            patience: 0,
            ..TrainConfig::default()
        };
        let mut saves = Vec::new();
        let a = train(params.clone(), &wv, &ex[..3], &ex[3..], &config, |e, _| {
            saves.push(e);
            Ok(())
        })
        .unwrap();
        let b = train(params, &wv, &ex[..3], &ex[3..], &config, |_, _| Ok(())).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.curve.len(), 4);
        let expected: Vec<usize> = a.curve.iter().filter(|r| r.saved).map(|r| r.epoch).collect();
        assert_eq!(saves, expected);
        for r in &a.curve {
            assert_eq!(r.draws_before_dev, r.draws_after_dev);
        }
        // 2 batches × 4 recurrent masks + 3 pooled masks per epoch.
        assert_eq!(a.curve[0].draws_before_dev, 11);
        let csv = curve_csv(&a.curve);
        assert!(csv.starts_with("epoch,train_loss,dev_loss,saved\n1,"));
    }

    #[test]
    fn empty_dev_is_rejected() {
        let (params, wv, ex) = tiny_problem();
        let config = TrainConfig { epochs: 1, ..TrainConfig::default() };
        assert!(matches!(train(params, &wv, &ex, &[], &config, |_, _| Ok(())), Err(TrainError::EmptyDev)));
    }
}
