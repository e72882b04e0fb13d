use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::denoiser::DenoiserModel;
use super::graph::{build_hetero_graph, HeteroGraph};
use super::loss::{constraint_losses, LossWeights};
use super::schedule::{cosine_schedule, NoiseSchedule};
use crate::model::{Instance, Placement};
use crate::nn::{clip_grad_norm, Adam, Tape};
use crate::rng::{derive_seed, stream};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Diffusion steps `T`.
    pub steps: usize,
    pub epochs: usize,
    /// Visits of each training instance per epoch.
    pub steps_per_instance: usize,
    pub learning_rate: f64,
    /// Global gradient-norm cap; `0` disables clipping.
    pub grad_clip: f64,
    pub weights: LossWeights,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 100,
            epochs: 400,
            steps_per_instance: 16,
            learning_rate: 1e-3,
            grad_clip: 1.0,
            weights: LossWeights::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::BadT(0));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::BadConfig(format!("learning rate {}", self.learning_rate)));
        }
        if !(self.grad_clip.is_finite() && self.grad_clip >= 0.0) {
            return Err(Error::BadConfig(format!("gradient clip {}", self.grad_clip)));
        }
        self.weights.validate()
    }
}

/// A training instance with the placement used as `Y0`.
#[derive(Debug, Clone, Copy)]
pub struct TrainingExample<'a> {
    pub instance: &'a Instance,
    pub target: &'a Placement,
}

/// Epoch means of every loss term. Constraint terms are reported even when
/// their weight is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub denoise: f64,
    pub cap: f64,
    pub rest: f64,
    pub adj: f64,
    pub bw: f64,
    pub delay: f64,
    pub place: f64,
    pub total: f64,
}

struct Prepared<'a> {
    instance: &'a Instance,
    graph: HeteroGraph,
    y0: Vec<f64>,
}

/// Trains `model` in place and returns one log entry per epoch.
pub fn train(model: &mut DenoiserModel, examples: &[TrainingExample<'_>], cfg: &TrainConfig) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let schedule = cosine_schedule(cfg.steps)?;
    let data = examples
        .iter()
        .map(|ex| {
            let graph = build_hetero_graph(ex.instance)?;
            ex.target.check_shape(graph.num_cnfs, graph.num_clouds)?;
            Ok(Prepared {
                instance: ex.instance,
                graph,
                y0: ex.target.cells().iter().map(|&x| x as f64).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut adam = Adam::new(&model.params, cfg.learning_rate);
    let mut order_rng = stream(cfg.seed, 1);
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.len())
            .flat_map(|k| core::iter::repeat_n(k, cfg.steps_per_instance))
            .collect();
        order.shuffle(&mut order_rng);
        let mut sums = [0.0f64; 8];
        for &k in &order {
            let terms = train_step(model, &mut adam, &data[k], &schedule, cfg, step)?;
            for (s, v) in sums.iter_mut().zip(terms) {
                *s += v;
            }
            step += 1;
        }
        let n = order.len().max(1) as f64;
        let m = sums.map(|s| s / n);
        logs.push(EpochLog {
            epoch: epoch + 1,
            denoise: m[0],
            cap: m[1],
            rest: m[2],
            adj: m[3],
            bw: m[4],
            delay: m[5],
            place: m[6],
            total: m[7],
        });
    }
    Ok(logs)
}

/// One optimizer step; returns `[denoise, six constraint terms, total]`.
fn train_step(
    model: &mut DenoiserModel,
    adam: &mut Adam,
    ex: &Prepared<'_>,
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
    step: u64,
) -> Result<[f64; 8]> {
    let mut rng = stream(derive_seed(cfg.seed, 2), step);
    let t = rng.random_range(1..=schedule.steps);
    let mask = &ex.graph.mask;
    let noise: Vec<f64> = mask
        .iter()
        .map(|&m| {
            let z: f64 = rng.sample(StandardNormal);
            if m {
                z
            } else {
                0.0
            }
        })
        .collect();
    let y_t = super::schedule::forward_noise(schedule, &ex.y0, t, &noise, mask)?;
    let (sigma, root) = (schedule.sigma[t], schedule.sqrt_alpha_bar(t));
    let (f, c) = (ex.graph.num_cnfs, ex.graph.num_clouds);

    let mut grads;
    let out;
    {
        let mut tape = Tape::new(&model.params);
        let eps = model.forward(&mut tape, &ex.graph, &y_t, sigma)?;
        let denoise = tape.masked_mse(eps, &noise, mask)?;
        let scaled = tape.scale(eps, -sigma / root);
        let base = tape.constant(f, c, y_t.iter().map(|&y| y / root).collect())?;
        let y0_hat = tape.add(base, scaled)?;
        let p = tape.masked_softmax(y0_hat, mask)?;
        let losses = constraint_losses(ex.instance, &ex.graph, tape.value(p))?;
        let total = if cfg.weights.is_zero() {
            denoise
        } else {
            let (value, grad) = losses.weighted(&cfg.weights);
            let penalty = tape.scalar_fn(p, value, grad)?;
            tape.weighted_sum(&[(denoise, 1.0), (penalty, 1.0)])?
        };
        tape.backward(total)?;
        grads = tape.param_grads();
        let v = losses.values;
        out = [tape.value(denoise)[0], v[0], v[1], v[2], v[3], v[4], v[5], tape.value(total)[0]];
    }
    if cfg.grad_clip > 0.0 {
        clip_grad_norm(&mut grads, cfg.grad_clip);
    }
    adam.step(&mut model.params, &grads)?;
    model.trained_steps += 1;
    Ok(out)
}

/// Convenience for callers holding owned pairs.
pub fn examples<'a>(pairs: &'a [(Instance, Placement)]) -> Vec<TrainingExample<'a>> {
    pairs
        .iter()
        .map(|(instance, target)| TrainingExample { instance, target })
        .collect()
}
