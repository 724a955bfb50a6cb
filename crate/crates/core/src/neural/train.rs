use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::loss::{composite_loss, composite_loss_grad, LossWeights};
use super::model::{backward, embed_and_encode, forward, forward_cached, ModelOutput};
use super::params::ModelParams;
use crate::{Error, Result, SplineTrajectory, WaypointPath};

/// Losses above this count as divergence.
pub const DIVERGENCE_LOSS: f64 = 1e6;

/// One training example: a joint's waypoint values, the other joints'
/// values and the solved spline of that joint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub source: Vec<f64>,
    /// Other joints in increasing index order, concatenated.
    pub context: Vec<f64>,
    /// `I + 4` control points.
    pub coefficients: Vec<f64>,
    /// `I + 10` knots.
    pub knots: Vec<f64>,
}

impl Sample {
    pub fn waypoints(&self) -> usize {
        self.source.len()
    }

    fn target(&self, config: &ModelConfig) -> ModelOutput {
        let mut coefficients = self.coefficients.clone();
        coefficients.resize(config.coef_len(), 0.0);
        let mut knots = self.knots.clone();
        knots.resize(config.knot_len(), 0.0);
        ModelOutput { coefficients, knots }
    }

    fn validate(&self, config: &ModelConfig) -> Result<()> {
        let ii = self.waypoints();
        if ii > config.max_waypoints {
            return Err(Error::UnsupportedLength { len: ii, max: config.max_waypoints });
        }
        if self.context.len() != (config.joints - 1) * ii
            || self.coefficients.len() != ii + 4
            || self.knots.len() != ii + 10
        {
            return Err(Error::param(format!("sample with {ii} waypoints has inconsistent lengths")));
        }
        Ok(())
    }
}

/// The other joints' values in increasing joint order, concatenated.
pub fn context_values(path: &WaypointPath, joint: usize) -> Vec<f64> {
    (0..path.num_joints()).filter(|&j| j != joint).flat_map(|j| path.joint_values(j)).collect()
}

/// One sample per joint of a solved problem.
pub fn samples_from_solution(path: &WaypointPath, trajectory: &SplineTrajectory) -> Result<Vec<Sample>> {
    if path.num_joints() != trajectory.num_joints()
        || trajectory.knots().num_control_points() != path.num_waypoints() + 4
    {
        return Err(Error::param("trajectory does not match the path"));
    }
    Ok((0..path.num_joints())
        .map(|k| Sample {
            source: path.joint_values(k),
            context: context_values(path, k),
            coefficients: trajectory.joints()[k].control_points.clone(),
            knots: trajectory.knots().as_slice().to_vec(),
        })
        .collect())
}

/// Optimizer and schedule settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss: LossWeights,
    /// Epochs without improvement tolerated before the rate is cut.
    pub patience: usize,
    pub decay: f64,
    /// Relative improvement that resets the plateau counter.
    pub threshold: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            batch_size: 32,
            epochs: 50,
            loss: LossWeights::default(),
            patience: 3,
            decay: 0.5,
            threshold: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::param("learning rate and weight decay must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch size must be positive"));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::param("decay factor must lie in (0, 1]"));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.epsilon > 0.0) {
            return Err(Error::param("invalid Adam constants"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingHistory {
    /// `epoch,train_loss,validation_loss,learning_rate` with 17 significant
    /// digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,validation_loss,learning_rate\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{:.16e},{:.16e},{:.16e}\n",
                e.epoch, e.train_loss, e.validation_loss, e.learning_rate
            ));
        }
        out
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().min_by(|a, b| a.validation_loss.total_cmp(&b.validation_loss))
    }
}

#[derive(Debug, Clone)]
pub struct Trained {
    /// Parameters of the epoch with the lowest validation loss.
    pub params: ModelParams,
    pub history: TrainingHistory,
}

/// Loss and gradient of one sample; dropout masks come from `seed`.
pub fn sample_gradient(
    params: &ModelParams,
    sample: &Sample,
    weights: LossWeights,
    seed: Option<u64>,
) -> Result<(f64, ModelParams)> {
    let config = &params.config;
    let input = embed_and_encode(params, &sample.source, &sample.context)?;
    let mut r = seed.map(ChaCha8Rng::seed_from_u64);
    let (pred, cache) = forward_cached(params, &input, r.as_mut().map(|r| r as &mut dyn rand::RngCore))?;
    let ii = sample.waypoints();
    let (loss, dcoef, dknot) = composite_loss_grad(&pred, &sample.target(config), ii + 4, ii + 10, weights)?;
    let mut grads = params.zeros_like();
    backward(params, &cache, &dcoef, &dknot, &mut grads)?;
    Ok((loss, grads))
}

/// Mean loss and mean gradient over a batch. Per-sample gradients are summed
/// in batch order, so the result does not depend on thread scheduling.
pub fn batch_gradient(
    params: &ModelParams,
    batch: &[&Sample],
    weights: LossWeights,
    seeds: Option<&[u64]>,
) -> Result<(f64, ModelParams)> {
    if batch.is_empty() {
        return Err(Error::param("empty batch"));
    }
    let parts: Vec<Result<(f64, ModelParams)>> =
        batch.par_iter().enumerate().map(|(i, s)| sample_gradient(params, s, weights, seeds.map(|v| v[i]))).collect();
    let mut total = params.zeros_like();
    let mut loss = 0.0;
    for part in parts {
        let (l, g) = part?;
        loss += l;
        total.add_scaled(&g, 1.0);
    }
    let inv = 1.0 / batch.len() as f64;
    total.scale(inv);
    Ok((loss * inv, total))
}

/// Mean composite loss with dropout off.
pub fn evaluate(params: &ModelParams, samples: &[Sample], weights: LossWeights) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::param("no samples to evaluate"));
    }
    let config = &params.config;
    let losses: Vec<Result<f64>> = samples
        .par_iter()
        .map(|s| {
            let input = embed_and_encode(params, &s.source, &s.context)?;
            let pred = forward(params, &input)?;
            let ii = s.waypoints();
            composite_loss(&pred, &s.target(config), ii + 4, ii + 10, weights)
        })
        .collect();
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / samples.len() as f64)
}

struct Adam {
    m: ModelParams,
    v: ModelParams,
    step: i32,
}

impl Adam {
    fn new(params: &ModelParams) -> Self {
        Self { m: params.zeros_like(), v: params.zeros_like(), step: 0 }
    }

    /// Decoupled weight decay followed by a bias-corrected Adam step.
    fn update(&mut self, params: &mut ModelParams, grads: &ModelParams, lr: f64, hyper: &TrainConfig) {
        self.step += 1;
        let c1 = 1.0 - hyper.beta1.powi(self.step);
        let c2 = 1.0 - hyper.beta2.powi(self.step);
        let decay = 1.0 - lr * hyper.weight_decay;
        let tensors = params.tensors_mut().into_iter().zip(grads.tensors());
        for ((p, g), (m, v)) in tensors.zip(self.m.tensors_mut().into_iter().zip(self.v.tensors_mut())) {
            for i in 0..p.len() {
                m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
                v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
                p[i] = p[i] * decay - lr * (m[i] / c1) / ((v[i] / c2).sqrt() + hyper.epsilon);
            }
        }
    }
}

fn diverged(epoch: usize, loss: f64, history: &TrainingHistory) -> Error {
    Error::Diverged { epoch, loss, history: history.epochs.clone() }
}

/// Trains from `ModelParams::init(config, hyper.seed)`. With an empty
/// validation set the training loss drives the schedule and model selection.
pub fn train(
    train_set: &[Sample],
    validation: &[Sample],
    config: &ModelConfig,
    hyper: &TrainConfig,
) -> Result<Trained> {
    let params = ModelParams::init(config, hyper.seed)?;
    train_from(params, train_set, validation, hyper)
}

/// Continues training from given parameters.
pub fn train_from(
    mut params: ModelParams,
    train_set: &[Sample],
    validation: &[Sample],
    hyper: &TrainConfig,
) -> Result<Trained> {
    hyper.validate()?;
    params.config.validate()?;
    if train_set.is_empty() {
        return Err(Error::param("training set is empty"));
    }
    for s in train_set.iter().chain(validation) {
        s.validate(&params.config)?;
    }
    let mut r = ChaCha8Rng::seed_from_u64(hyper.seed ^ 0x5eed_7a1e);
    let mut adam = Adam::new(&params);
    let mut history = TrainingHistory::default();
    let mut lr = hyper.learning_rate;
    let mut best: Option<(f64, ModelParams)> = None;
    let mut plateau_best = f64::INFINITY;
    let mut bad_epochs = 0;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut r);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(hyper.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let seeds: Vec<u64> = chunk.iter().map(|_| r.random()).collect();
            let (loss, grads) = match batch_gradient(&params, &batch, hyper.loss, Some(&seeds)) {
                Ok(v) => v,
                Err(Error::NumericalBreakdown(_)) => return Err(diverged(epoch, f64::NAN, &history)),
                Err(e) => return Err(e),
            };
            if !loss.is_finite() || loss > DIVERGENCE_LOSS || !grads.is_finite() {
                return Err(diverged(epoch, loss, &history));
            }
            epoch_loss += loss * chunk.len() as f64;
            adam.update(&mut params, &grads, lr, hyper);
        }
        let train_loss = epoch_loss / train_set.len() as f64;
        let validation_loss =
            match evaluate(&params, if validation.is_empty() { train_set } else { validation }, hyper.loss) {
                Ok(v) => v,
                Err(Error::NumericalBreakdown(_)) => return Err(diverged(epoch, f64::NAN, &history)),
                Err(e) => return Err(e),
            };
        history.epochs.push(EpochRecord { epoch, train_loss, validation_loss, learning_rate: lr });
        if !validation_loss.is_finite() || validation_loss > DIVERGENCE_LOSS {
            return Err(diverged(epoch, validation_loss, &history));
        }
        if best.as_ref().is_none_or(|(b, _)| validation_loss < *b) {
            best = Some((validation_loss, params.clone()));
        }
        if validation_loss < plateau_best * (1.0 - hyper.threshold) {
            plateau_best = validation_loss;
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs > hyper.patience {
                lr *= hyper.decay;
                bad_epochs = 0;
            }
        }
    }
    let params = best.map(|(_, p)| p).unwrap_or(params);
    Ok(Trained { params, history })
}
