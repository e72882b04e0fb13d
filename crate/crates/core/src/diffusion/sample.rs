use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::denoiser::{Conditioning, DenoiserModel};
use super::graph::{build_hetero_graph, HeteroGraph};
use super::schedule::{reconstruct_y0, NoiseSchedule};
use crate::eval::{check_feasibility, total_cost, FeasibilityReport};
use crate::model::{Instance, Placement};
use crate::math::sqrt;
use crate::nn::masked_softmax_rows;
use crate::rng::stream;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub chain: usize,
    pub placement: Placement,
    pub report: FeasibilityReport,
    /// Deployment cost; defined for every complete placement, feasible or
    /// not.
    pub cost: f64,
}

impl Candidate {
    pub fn feasible(&self) -> bool {
        self.report.feasible
    }

    pub fn violation(&self) -> f64 {
        self.report.total_magnitude()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutcome {
    /// Candidates in chain order.
    pub candidates: Vec<Candidate>,
    /// Indices into `candidates`: feasible ones by cost, then infeasible
    /// ones by total violation; ties by chain.
    pub ranking: Vec<usize>,
    /// The model has never been trained; results are not meaningful.
    pub untrained: bool,
}

impl SampleOutcome {
    /// Cheapest feasible candidate.
    pub fn best_feasible(&self) -> Option<&Candidate> {
        self.ranking
            .first()
            .map(|&k| &self.candidates[k])
            .filter(|c| c.feasible())
    }

    /// Top-ranked candidate, feasible or not.
    pub fn best(&self) -> &Candidate {
        &self.candidates[self.ranking[0]]
    }

    pub fn feasible_count(&self) -> usize {
        self.candidates.iter().filter(|c| c.feasible()).count()
    }
}

/// Encoder outputs for steps `1..=T`, shared by every chain; index `t - 1`.
pub fn condition_steps(model: &DenoiserModel, graph: &HeteroGraph, schedule: &NoiseSchedule) -> Result<Vec<Conditioning>> {
    (1..=schedule.steps)
        .map(|t| model.condition(graph, schedule.sigma[t]))
        .collect()
}

/// Runs one reverse chain and returns the row-wise argmax placement.
/// `steps` comes from [`condition_steps`].
pub fn reverse_chain(
    model: &DenoiserModel,
    graph: &HeteroGraph,
    schedule: &NoiseSchedule,
    steps: &[Conditioning],
    rng: &mut ChaCha8Rng,
) -> Result<Placement> {
    let (f, c) = (graph.num_cnfs, graph.num_clouds);
    let mask = &graph.mask;
    let draw = |rng: &mut ChaCha8Rng, scale: f64| -> Vec<f64> {
        mask.iter()
            .map(|&m| {
                let z: f64 = rng.sample(StandardNormal);
                if m {
                    scale * z
                } else {
                    0.0
                }
            })
            .collect()
    };
    let big_t = schedule.steps;
    if steps.len() != big_t {
        return Err(Error::ShapeMismatch {
            op: "reverse_chain",
            detail: alloc::format!("{} conditionings for {big_t} steps", steps.len()),
        });
    }
    let mut y = draw(rng, schedule.sigma[big_t]);
    for t in (1..=big_t).rev() {
        let eps = model.predict_conditioned(graph, &steps[t - 1], &y)?;
        let y0 = reconstruct_y0(schedule, &y, &eps, t)?;
        let mean = sqrt(schedule.alpha_bar[t - 1]);
        let noise = if t - 1 > 0 {
            draw(rng, schedule.sigma[t - 1])
        } else {
            alloc::vec![0.0; f * c]
        };
        y = (0..f * c)
            .map(|k| if mask[k] { mean * y0[k] + noise[k] } else { 0.0 })
            .collect();
    }
    let p = masked_softmax_rows(&y, mask, f, c)?;
    let mut placement = Placement::zeros(f, c);
    for row in 0..f {
        let mut best = None;
        for col in 0..c {
            let k = row * c + col;
            if mask[k] && best.is_none_or(|b: usize| p[k] > p[row * c + b]) {
                best = Some(col);
            }
        }
        placement.set(row, best.ok_or(Error::AllMaskedRow(row))?, true);
    }
    Ok(placement)
}

/// Draws `k` independent chains; chain `i` uses the stream `(seed, i)`.
pub fn sample(
    model: &DenoiserModel,
    instance: &Instance,
    schedule: &NoiseSchedule,
    k: usize,
    seed: u64,
) -> Result<SampleOutcome> {
    if k == 0 {
        return Err(Error::NoSamples);
    }
    let graph = build_hetero_graph(instance)?;
    let steps = condition_steps(model, &graph, schedule)?;
    let mut candidates = Vec::with_capacity(k);
    for chain in 0..k {
        let mut rng = stream(seed, chain as u64);
        let placement = reverse_chain(model, &graph, schedule, &steps, &mut rng)?;
        let report = check_feasibility(instance, &placement)?;
        let cost = total_cost(instance, &placement)?;
        candidates.push(Candidate {
            chain,
            placement,
            report,
            cost,
        });
    }
    let mut ranking: Vec<usize> = (0..k).collect();
    ranking.sort_by(|&a, &b| {
        let (x, y) = (&candidates[a], &candidates[b]);
        y.feasible()
            .cmp(&x.feasible())
            .then_with(|| {
                if x.feasible() {
                    x.cost.total_cmp(&y.cost)
                } else {
                    x.violation().total_cmp(&y.violation())
                }
            })
            .then(a.cmp(&b))
    });
    Ok(SampleOutcome {
        candidates,
        ranking,
        untrained: model.trained_steps == 0,
    })
}
