//! Exact vs diffusion comparison, summary metrics and runtime scaling.

use std::collections::BTreeMap;
use std::time::Instant;

use cnfdiff_core::diffusion::{cosine_schedule, sample, DenoiserModel};
use cnfdiff_core::rng::derive_seed;
use cnfdiff_core::{solve_exact, Clock, ExactStatus, Instance};
use serde::{Deserialize, Serialize};

/// Wall-clock seconds since construction.
#[derive(Debug, Clone, Copy)]
pub struct StdClock(Instant);

impl StdClock {
    pub fn start() -> Self {
        StdClock(Instant::now())
    }
}

impl Default for StdClock {
    fn default() -> Self {
        Self::start()
    }
}

impl Clock for StdClock {
    fn now(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    Exact,
    Diffusion,
}

/// One row of `records.v1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub instance_id: String,
    pub solver: Solver,
    /// `optimal`, `infeasible` or `timed_out` for the exact solver;
    /// `feasible` or `infeasible` for diffusion.
    pub status: String,
    pub cost: Option<f64>,
    pub elapsed_s: f64,
    pub samples_drawn: usize,
    pub feasible_samples: usize,
    pub best_feasible_cost: Option<f64>,
    pub num_clouds: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub k: usize,
    pub time_limit: f64,
    pub seed: u64,
    /// Record wall-clock times; when off every `elapsed_s` is zero so that
    /// repeated runs produce identical files.
    pub timing: bool,
    /// Diffusion steps.
    pub steps: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("no records to report")]
    Empty,
    #[error(transparent)]
    Core(#[from] cnfdiff_core::Error),
}

fn exact_status(s: ExactStatus) -> &'static str {
    match s {
        ExactStatus::Optimal => "optimal",
        ExactStatus::Infeasible => "infeasible",
        ExactStatus::TimedOut => "timed_out",
    }
}

/// Runs both solvers on every instance. Diffusion on instance `k` uses the
/// seed stream `(seed, k)`.
pub fn run_evaluation(
    instances: &[(String, &Instance)],
    model: &DenoiserModel,
    opts: &EvalOptions,
) -> Result<Vec<EvalRecord>, HarnessError> {
    let schedule = cosine_schedule(opts.steps)?;
    let mut records = Vec::with_capacity(2 * instances.len());
    for (k, (id, inst)) in instances.iter().enumerate() {
        let c = inst.num_clouds();
        let exact = solve_exact(inst, opts.time_limit, &StdClock::start());
        let elapsed = match exact.status {
            ExactStatus::TimedOut => opts.time_limit,
            _ => exact.elapsed,
        };
        let found = exact.placement.is_some() as usize;
        log::info!("{id}: exact {} cost {:?}", exact_status(exact.status), exact.cost);
        records.push(EvalRecord {
            instance_id: id.clone(),
            solver: Solver::Exact,
            status: exact_status(exact.status).into(),
            cost: exact.cost,
            elapsed_s: if opts.timing { elapsed } else { 0.0 },
            samples_drawn: 1,
            feasible_samples: found,
            best_feasible_cost: exact.cost,
            num_clouds: c,
        });

        let start = Instant::now();
        let out = sample(model, inst, &schedule, opts.k, derive_seed(opts.seed, k as u64))?;
        let elapsed = start.elapsed().as_secs_f64();
        let best = out.best_feasible().map(|b| b.cost);
        log::info!("{id}: diffusion {}/{} feasible, best {best:?}", out.feasible_count(), opts.k);
        records.push(EvalRecord {
            instance_id: id.clone(),
            solver: Solver::Diffusion,
            status: if best.is_some() { "feasible" } else { "infeasible" }.into(),
            cost: best,
            elapsed_s: if opts.timing { elapsed } else { 0.0 },
            samples_drawn: opts.k,
            feasible_samples: out.feasible_count(),
            best_feasible_cost: best,
            num_clouds: c,
        });
    }
    Ok(records)
}

/// Headline metrics, recomputed from records alone.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Summary {
    pub instances: usize,
    pub feasibility_rate: Option<f64>,
    pub exact_optimal: usize,
    pub exact_infeasible: usize,
    pub exact_timed_out: usize,
    pub mean_exact_cost: Option<f64>,
    pub mean_diffusion_cost: Option<f64>,
    /// Instances solved to optimality by the exact solver where diffusion
    /// also found a feasible placement.
    pub common_instances: usize,
    pub mean_exact_cost_common: Option<f64>,
    pub mean_diffusion_cost_common: Option<f64>,
    pub cost_ratio_common: Option<f64>,
    pub mean_exact_elapsed_s: Option<f64>,
    pub mean_diffusion_elapsed_s: Option<f64>,
    /// Incumbent costs where the exact solver hit its limit.
    pub timed_out_mean_exact_cost: Option<f64>,
    pub timed_out_mean_diffusion_cost: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub metric: String,
    pub value: Option<f64>,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

pub fn summarize(records: &[EvalRecord]) -> Summary {
    let mut by_id: BTreeMap<&str, (Option<&EvalRecord>, Option<&EvalRecord>)> = BTreeMap::new();
    for r in records {
        let slot = by_id.entry(&r.instance_id).or_default();
        match r.solver {
            Solver::Exact => slot.0 = Some(r),
            Solver::Diffusion => slot.1 = Some(r),
        }
    }
    let exact: Vec<&EvalRecord> = records.iter().filter(|r| r.solver == Solver::Exact).collect();
    let diff: Vec<&EvalRecord> = records.iter().filter(|r| r.solver == Solver::Diffusion).collect();
    let count = |s: &str| exact.iter().filter(|r| r.status == s).count();
    let common: Vec<(f64, f64)> = by_id
        .values()
        .filter_map(|(e, d)| {
            let (e, d) = ((*e)?, (*d)?);
            (e.status == "optimal").then_some(())?;
            Some((e.cost?, d.best_feasible_cost?))
        })
        .collect();
    let timed_out: Vec<(Option<f64>, Option<f64>)> = by_id
        .values()
        .filter_map(|(e, d)| {
            let e = (*e)?;
            (e.status == "timed_out").then(|| (e.cost, d.and_then(|d| d.best_feasible_cost)))
        })
        .collect();
    let mean_exact_common = mean(common.iter().map(|c| c.0));
    let mean_diff_common = mean(common.iter().map(|c| c.1));
    Summary {
        instances: by_id.len(),
        feasibility_rate: (!diff.is_empty())
            .then(|| diff.iter().filter(|r| r.feasible_samples > 0).count() as f64 / diff.len() as f64),
        exact_optimal: count("optimal"),
        exact_infeasible: count("infeasible"),
        exact_timed_out: count("timed_out"),
        mean_exact_cost: mean(exact.iter().filter(|r| r.status == "optimal").filter_map(|r| r.cost)),
        mean_diffusion_cost: mean(diff.iter().filter_map(|r| r.best_feasible_cost)),
        common_instances: common.len(),
        mean_exact_cost_common: mean_exact_common,
        mean_diffusion_cost_common: mean_diff_common,
        cost_ratio_common: match (mean_exact_common, mean_diff_common) {
            (Some(e), Some(d)) if e > 0.0 => Some(d / e),
            _ => None,
        },
        mean_exact_elapsed_s: mean(exact.iter().map(|r| r.elapsed_s)),
        mean_diffusion_elapsed_s: mean(diff.iter().map(|r| r.elapsed_s)),
        timed_out_mean_exact_cost: mean(timed_out.iter().filter_map(|t| t.0)),
        timed_out_mean_diffusion_cost: mean(timed_out.iter().filter_map(|t| t.1)),
    }
}

impl Summary {
    /// Rows of `summary.v1`.
    pub fn rows(&self) -> Vec<SummaryRow> {
        let row = |m: &str, v: Option<f64>| SummaryRow {
            metric: m.into(),
            value: v,
        };
        vec![
            row("instances", Some(self.instances as f64)),
            row("feasibility_rate", self.feasibility_rate),
            row("exact_optimal", Some(self.exact_optimal as f64)),
            row("exact_infeasible", Some(self.exact_infeasible as f64)),
            row("exact_timed_out", Some(self.exact_timed_out as f64)),
            row("mean_exact_cost", self.mean_exact_cost),
            row("mean_diffusion_cost", self.mean_diffusion_cost),
            row("common_instances", Some(self.common_instances as f64)),
            row("mean_exact_cost_common", self.mean_exact_cost_common),
            row("mean_diffusion_cost_common", self.mean_diffusion_cost_common),
            row("cost_ratio_common", self.cost_ratio_common),
            row("mean_exact_elapsed_s", self.mean_exact_elapsed_s),
            row("mean_diffusion_elapsed_s", self.mean_diffusion_elapsed_s),
            row("timed_out_mean_exact_cost", self.timed_out_mean_exact_cost),
            row("timed_out_mean_diffusion_cost", self.timed_out_mean_diffusion_cost),
        ]
    }
}

/// Mean runtime of one solver over instances with the same cloud count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingBucket {
    pub solver: Solver,
    pub num_clouds: usize,
    pub mean_elapsed_s: f64,
    pub instances: usize,
}

/// Buckets by (solver, cloud count), sorted by both.
pub fn scaling_report(records: &[EvalRecord]) -> Result<Vec<ScalingBucket>, HarnessError> {
    if records.is_empty() {
        return Err(HarnessError::Empty);
    }
    let mut acc: BTreeMap<(Solver, usize), (f64, usize)> = BTreeMap::new();
    for r in records {
        let e = acc.entry((r.solver, r.num_clouds)).or_default();
        e.0 += r.elapsed_s;
        e.1 += 1;
    }
    Ok(acc
        .into_iter()
        .map(|((solver, num_clouds), (sum, n))| ScalingBucket {
            solver,
            num_clouds,
            mean_elapsed_s: sum / n as f64,
            instances: n,
        })
        .collect())
}
