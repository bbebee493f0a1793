//! Contrastive-divergence training with pluggable optimizers.
//!
//! CD-n estimates the likelihood gradient by running a short block Gibbs chain
//! from each data row. The positive phase uses the analytic hidden posteriors
//! `P(h_k = 1 | x)`; the negative phase alternates hidden/visible sampling for
//! `n` steps and then also closes with the analytic posteriors at the chain end.
//! Updates follow the ascent convention: `theta <- theta + eta * g`.

use rand::Rng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::{enumerate_discrete_records, Model};
use crate::numeric::LogSumExp;
use crate::schema::{encode_record, Cell, Dataset, Schema};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Momentum,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "momentum" => Ok(OptimizerKind::Momentum),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Config(format!("unknown optimizer '{other}'"))),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OptimizerKind::Sgd => write!(f, "sgd"),
            OptimizerKind::Momentum => write!(f, "momentum"),
            OptimizerKind::Adam => write!(f, "adam"),
        }
    }
}

/// Training hyperparameters. Defaults mirror the small-data setup
/// (K = 5, full batch, lr 0.01, momentum 0.8); [`TrainingConfig::large_data`]
/// gives the large-data preset (K = 2, batch 500, lr 0.001, Adam(0.85, 0.995)).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub hidden: usize,
    pub cd_steps: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub momentum: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// `None` means full-batch updates.
    pub batch_size: Option<usize>,
    pub epochs: usize,
    pub seed: u64,
    pub init_scale: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            hidden: 5,
            cd_steps: 1,
            learning_rate: 0.01,
            optimizer: OptimizerKind::Momentum,
            momentum: 0.8,
            adam_beta1: 0.85,
            adam_beta2: 0.995,
            adam_epsilon: 1e-8,
            batch_size: None,
            epochs: 20,
            seed: 0,
            init_scale: 0.01,
        }
    }
}

impl TrainingConfig {
    /// Preset for large datasets: K = 2, mini-batch 500, lr 0.001, Adam.
    pub fn large_data() -> Self {
        TrainingConfig {
            hidden: 2,
            learning_rate: 0.001,
            optimizer: OptimizerKind::Adam,
            batch_size: Some(500),
            ..TrainingConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::Config("hidden unit count must be positive".into()));
        }
        if self.cd_steps == 0 {
            return Err(Error::Config("cd_steps must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0,1)".into()));
        }
        for (name, beta) in [("beta1", self.adam_beta1), ("beta2", self.adam_beta2)] {
            if !(beta > 0.0 && beta < 1.0) {
                return Err(Error::Config(format!("adam {name} must lie in (0,1)")));
            }
        }
        if !(self.adam_epsilon > 0.0) {
            return Err(Error::Config("adam epsilon must be positive".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.init_scale >= 0.0) {
            return Err(Error::Config("init scale must be non-negative".into()));
        }
        Ok(())
    }
}

/// Likelihood-gradient estimate, shaped like the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub visible_bias: Vec<f64>,
    pub hidden_bias: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GradientEstimate {
    pub fn zeros(width: usize, hidden: usize) -> Self {
        GradientEstimate {
            visible_bias: vec![0.0; width],
            hidden_bias: vec![0.0; hidden],
            weights: vec![0.0; width * hidden],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.visible_bias
            .iter()
            .chain(&self.hidden_bias)
            .chain(&self.weights)
            .all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.visible_bias
            .iter()
            .chain(&self.hidden_bias)
            .chain(&self.weights)
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    fn scale(&mut self, factor: f64) {
        for v in self
            .visible_bias
            .iter_mut()
            .chain(&mut self.hidden_bias)
            .chain(&mut self.weights)
        {
            *v *= factor;
        }
    }
}

/// Per-epoch training diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    /// Mean training free-energy after each epoch.
    pub train_free_energy: Vec<f64>,
    /// Mean validation free-energy after each epoch, when a validation set was given.
    pub validation_free_energy: Option<Vec<f64>>,
    pub epochs_run: usize,
    /// Final L2 norms of (visible bias, hidden bias, weights).
    pub parameter_norms: (f64, f64, f64),
}

/// Optimizer state carried across updates.
#[derive(Debug, Clone)]
pub enum OptimizerState {
    Sgd,
    Momentum { velocity: GradientEstimate },
    Adam {
        first: GradientEstimate,
        second: GradientEstimate,
        step: u64,
    },
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, width: usize, hidden: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => OptimizerState::Sgd,
            OptimizerKind::Momentum => OptimizerState::Momentum {
                velocity: GradientEstimate::zeros(width, hidden),
            },
            OptimizerKind::Adam => OptimizerState::Adam {
                first: GradientEstimate::zeros(width, hidden),
                second: GradientEstimate::zeros(width, hidden),
                step: 0,
            },
        }
    }
}

/// Initialize a model: `W ~ Normal(0, init_scale^2)`, biases zero.
pub fn init_model(schema: &Schema, config: &TrainingConfig) -> Result<Model> {
    config.validate()?;
    let width = schema.encoded_width();
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(config.seed, "init"));
    let weights = if config.init_scale == 0.0 {
        vec![0.0; width * config.hidden]
    } else {
        let dist = Normal::new(0.0, config.init_scale).expect("positive scale");
        (0..width * config.hidden).map(|_| dist.sample(&mut rng)).collect()
    };
    Model::new(
        schema.clone(),
        config.hidden,
        vec![0.0; width],
        vec![0.0; config.hidden],
        weights,
    )
}

/// One CD-n gradient estimate over a batch of rows.
///
/// Positive statistics use the analytic posteriors; the negative chain
/// alternates `sample_hidden` / `sample_visible` `n` times from each row.
/// `n = 0` short-circuits the chain (test hook: positive phase equals negative).
pub fn cd_gradient<R: Rng>(
    model: &Model,
    rows: &[Vec<Cell>],
    n: usize,
    rng: &mut R,
) -> Result<GradientEstimate> {
    if rows.is_empty() {
        return Err(Error::Data("cd_gradient needs a nonempty batch".into()));
    }
    let width = model.encoded_width();
    let hidden = model.hidden;
    let mut grad = GradientEstimate::zeros(width, hidden);
    for row in rows {
        let s_pos = encode_record(row, &model.schema);
        let h_pos = model.hidden_activation(row);

        let mut chain = row.clone();
        for _ in 0..n {
            let h = model.sample_hidden(&chain, rng);
            chain = model.sample_visible(&h, rng)?;
        }
        let s_neg = encode_record(&chain, &model.schema);
        let h_neg = model.hidden_activation(&chain);

        for slot in 0..width {
            grad.visible_bias[slot] += s_pos[slot] - s_neg[slot];
        }
        for k in 0..hidden {
            grad.hidden_bias[k] += h_pos[k] - h_neg[k];
        }
        for slot in 0..width {
            let (sp, sn) = (s_pos[slot], s_neg[slot]);
            if sp == 0.0 && sn == 0.0 {
                continue;
            }
            let base = slot * hidden;
            for k in 0..hidden {
                grad.weights[base + k] += sp * h_pos[k] - sn * h_neg[k];
            }
        }
    }
    grad.scale(1.0 / rows.len() as f64);
    Ok(grad)
}

/// Exact log-likelihood gradient: data expectation minus model expectation of
/// the sufficient statistics, the latter by full discrete enumeration.
/// Oracle for [`cd_gradient`]; limited to fully discrete tiny models.
pub fn exact_gradient(model: &Model, data: &Dataset, count_truncation: u64) -> Result<GradientEstimate> {
    if data.is_empty() {
        return Err(Error::Data("exact_gradient needs a nonempty dataset".into()));
    }
    if data.schema != model.schema {
        return Err(Error::Model("dataset schema does not match model schema".into()));
    }
    let width = model.encoded_width();
    let hidden = model.hidden;

    let mut grad = GradientEstimate::zeros(width, hidden);
    for row in &data.rows {
        accumulate_stats(model, row, 1.0, &mut grad);
    }
    grad.scale(1.0 / data.len() as f64);

    // model expectation, weighted by exp(-F(x) - logZ)
    let mut log_z = LogSumExp::new();
    for row in enumerate_discrete_records(&model.schema, count_truncation, 1_000_000)? {
        log_z.add(-model.free_energy(&row));
    }
    let log_z = log_z.value();
    let mut expectation = GradientEstimate::zeros(width, hidden);
    for row in enumerate_discrete_records(&model.schema, count_truncation, 1_000_000)? {
        let p = (-model.free_energy(&row) - log_z).exp();
        accumulate_stats(model, &row, p, &mut expectation);
    }

    for (g, e) in grad
        .visible_bias
        .iter_mut()
        .chain(&mut grad.hidden_bias)
        .chain(&mut grad.weights)
        .zip(
            expectation
                .visible_bias
                .iter()
                .chain(&expectation.hidden_bias)
                .chain(&expectation.weights),
        )
    {
        *g -= e;
    }
    Ok(grad)
}

/// Add `weight * (s(x), hbar(x), s(x) hbar(x)^T)` into `acc`.
fn accumulate_stats(model: &Model, row: &[Cell], weight: f64, acc: &mut GradientEstimate) {
    let s = encode_record(row, &model.schema);
    let h = model.hidden_activation(row);
    let hidden = model.hidden;
    for (slot, &sv) in s.iter().enumerate() {
        acc.visible_bias[slot] += weight * sv;
        if sv != 0.0 {
            let base = slot * hidden;
            for (k, &hv) in h.iter().enumerate() {
                acc.weights[base + k] += weight * sv * hv;
            }
        }
    }
    for (k, &hv) in h.iter().enumerate() {
        acc.hidden_bias[k] += weight * hv;
    }
}

/// Apply one ascent update in place. Errors on non-finite gradient entries.
pub fn apply_update(
    model: &mut Model,
    grad: &GradientEstimate,
    state: &mut OptimizerState,
    config: &TrainingConfig,
) -> Result<()> {
    if !grad.is_finite() {
        return Err(Error::Model("non-finite gradient entries".into()));
    }
    let eta = config.learning_rate;
    let params = model
        .visible_bias
        .iter_mut()
        .chain(model.hidden_bias.iter_mut())
        .chain(model.weights.iter_mut());
    let grads = grad
        .visible_bias
        .iter()
        .chain(&grad.hidden_bias)
        .chain(&grad.weights);
    match state {
        OptimizerState::Sgd => {
            for (theta, g) in params.zip(grads) {
                *theta += eta * g;
            }
        }
        OptimizerState::Momentum { velocity } => {
            let vel = velocity
                .visible_bias
                .iter_mut()
                .chain(velocity.hidden_bias.iter_mut())
                .chain(velocity.weights.iter_mut());
            for ((theta, g), v) in params.zip(grads).zip(vel) {
                *v = config.momentum * *v + eta * g;
                *theta += *v;
            }
        }
        OptimizerState::Adam { first, second, step } => {
            *step += 1;
            let t = *step as i32;
            let (b1, b2, eps) = (config.adam_beta1, config.adam_beta2, config.adam_epsilon);
            let bias1 = 1.0 - b1.powi(t);
            let bias2 = 1.0 - b2.powi(t);
            let moments = first
                .visible_bias
                .iter_mut()
                .chain(first.hidden_bias.iter_mut())
                .chain(first.weights.iter_mut())
                .zip(
                    second
                        .visible_bias
                        .iter_mut()
                        .chain(second.hidden_bias.iter_mut())
                        .chain(second.weights.iter_mut()),
                );
            for ((theta, g), (m, v)) in params.zip(grads).zip(moments) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *theta += eta * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
    Ok(())
}

/// Train a model by CD with per-epoch shuffling and mini-batch updates.
/// Fully deterministic given `(data, config)`.
pub fn train(
    data: &Dataset,
    config: &TrainingConfig,
    validation: Option<&Dataset>,
) -> Result<(Model, TrainingReport)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Data("cannot train on an empty dataset".into()));
    }
    let mut model = init_model(&data.schema, config)?;
    let mut state = OptimizerState::new(config.optimizer, model.encoded_width(), model.hidden);
    let batch = config.batch_size.unwrap_or(data.len()).min(data.len());

    let mut train_curve = Vec::with_capacity(config.epochs);
    let mut val_curve = validation.map(|_| Vec::with_capacity(config.epochs));

    let mut cd_rng = ChaCha8Rng::seed_from_u64(seed::derive(config.seed, "cd"));
    let mut indices: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..config.epochs {
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(seed::derive_indexed(config.seed, "shuffle", epoch as u64));
        indices.shuffle(&mut shuffle_rng);
        for chunk in indices.chunks(batch) {
            let rows: Vec<Vec<Cell>> = chunk.iter().map(|&i| data.rows[i].clone()).collect();
            let grad = cd_gradient(&model, &rows, config.cd_steps, &mut cd_rng)
                .map_err(|e| match e {
                    Error::RateCap { rate, cap } => Error::Diverged {
                        epoch,
                        message: format!("Poisson rate {rate} exceeded cap {cap}"),
                    },
                    other => other,
                })?;
            apply_update(&mut model, &grad, &mut state, config).map_err(|e| Error::Diverged {
                epoch,
                message: e.to_string(),
            })?;
        }

        let mean_fe = mean(&model.free_energy_batch(data)?);
        if !mean_fe.is_finite() {
            return Err(Error::Diverged {
                epoch,
                message: format!("non-finite mean training free-energy {mean_fe}"),
            });
        }
        train_curve.push(mean_fe);
        if let (Some(curve), Some(val)) = (val_curve.as_mut(), validation) {
            curve.push(mean(&model.free_energy_batch(val)?));
        }
    }

    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let report = TrainingReport {
        train_free_energy: train_curve,
        validation_free_energy: val_curve,
        epochs_run: config.epochs,
        parameter_norms: (
            norm(&model.visible_bias),
            norm(&model.hidden_bias),
            norm(&model.weights),
        ),
    };
    Ok((model, report))
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}
