//! Acceptance run: one PASS/FAIL line per criterion, every tolerance pinned
//! below. Pass a substring as the first argument to run a subset.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use cnfdiff::harness::{run_evaluation, scaling_report, summarize, EvalOptions, Solver};
use cnfdiff_core::diffusion::{
    build_hetero_graph, cosine_schedule, forward_noise, masked_softmax, reconstruct_y0, sample, train,
    DenoiserModel, ModelConfig, TrainConfig, TrainingExample,
};
use cnfdiff_core::gen::{generate_dataset, preset_configs, split_dataset, HARD_CLOUDS};
use cnfdiff_core::rng::stream;
use cnfdiff_core::{brute_force_oracle, solve_exact, ExactStatus, Instance, NoClock, Placement};
use rand::Rng;
use rand_distr::StandardNormal;
use support::{enumerate_optimum, feasibility_deviation, grads, tiny_instance};

const EXACT_INSTANCES: u64 = 50;
const EXACT_BUDGET_S: f64 = 300.0;
const EVALUATOR_INSTANCES: u64 = 20;
const EVALUATOR_PLACEMENTS: usize = 10;
const EVALUATOR_TOL: f64 = 1e-9;
const GRAD_REL_TOL: f64 = 1e-4;
const ROUND_TRIP_TOL: f64 = 1e-9;
const SCHEDULE_TOL: f64 = 1e-12;
const STEPS: usize = 100;
const K: usize = 50;

const DATASET_SEED: u64 = 0;
const DATASET_SIZE: usize = 32;
const TRAIN_SIZE: usize = 20;
const EPOCHS: usize = 400;
const MIN_FEASIBILITY: f64 = 0.8;
const MAX_COST_RATIO: f64 = 1.35;
const REPRODUCTION_BUDGET_S: f64 = 1800.0;

const HARD_PER_BUCKET: usize = 5;
const HARD_TIME_LIMIT_S: f64 = 60.0;
const MIN_EXACT_GROWTH: f64 = 5.0;
const MAX_DIFFUSION_GROWTH: f64 = 2.0;

const OVERFIT_EPOCHS: usize = 200;
const MIN_DENOISE_DROP: f64 = 0.5;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn exact_vs_oracle() -> Outcome {
    let start = Instant::now();
    let mut infeasible = 0;
    for seed in 0..EXACT_INSTANCES {
        let inst = tiny_instance(seed);
        if inst.num_clouds() > 4 || inst.num_positions() > 6 {
            return Err(format!("seed {seed}: instance exceeds 4 clouds / 6 positions"));
        }
        let r = solve_exact(&inst, f64::INFINITY, &NoClock);
        let oracle = brute_force_oracle(&inst).map_err(|e| e.to_string())?;
        let independent = enumerate_optimum(&inst);
        match r.status {
            ExactStatus::Optimal => {
                let want = oracle.first().map(|o| o.1);
                if r.cost != want || r.cost != independent {
                    return Err(format!("seed {seed}: {:?} vs {want:?} / {independent:?}", r.cost));
                }
            }
            ExactStatus::Infeasible => {
                infeasible += 1;
                if !oracle.is_empty() || independent.is_some() {
                    return Err(format!("seed {seed}: solver infeasible, oracle is not"));
                }
            }
            ExactStatus::TimedOut => return Err(format!("seed {seed}: timed out without a limit")),
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        secs < EXACT_BUDGET_S,
        format!("{EXACT_INSTANCES} instances ({infeasible} infeasible) in {secs:.1}s"),
    )
}

fn evaluator_vs_oracle() -> Outcome {
    let mut worst = 0.0f64;
    let mut feasible = 0;
    for seed in 0..EVALUATOR_INSTANCES {
        let inst = tiny_instance(seed);
        let (f, c) = (inst.num_positions(), inst.num_clouds());
        let mut rng = stream(seed, 77);
        for _ in 0..EVALUATOR_PLACEMENTS {
            let a: Vec<usize> = (0..f).map(|_| rng.random_range(0..c)).collect();
            worst = worst.max(feasibility_deviation(&inst, &a).map_err(|e| format!("seed {seed} {a:?}: {e}"))?);
            feasible += support::feasibility_oracle(&inst, &a).feasible as usize;
        }
    }
    let n = EVALUATOR_INSTANCES as usize * EVALUATOR_PLACEMENTS;
    check(
        worst <= EVALUATOR_TOL,
        format!("{n} placements ({feasible} feasible), worst deviation {worst:.1e}"),
    )
}

fn gradients() -> Outcome {
    let results = [
        ("dense", grads::dense()),
        ("mlp", grads::mlp()),
        ("sage", grads::sage_with_edge_attributes()),
        ("bipartite", grads::bipartite_sage()),
        ("time", grads::time_embedding()),
        ("denoiser", grads::denoiser()),
    ];
    let worst = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let detail = results
        .iter()
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    check(worst < GRAD_REL_TOL, format!("{} shapes each: {detail}", grads::SHAPES))
}

fn gaussian(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = stream(seed, 9);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn diffusion_algebra() -> Outcome {
    let s = cosine_schedule(STEPS).map_err(|e| e.to_string())?;
    let mut sched_err = 0.0f64;
    for t in 0..=STEPS {
        sched_err = sched_err.max((s.alpha_bar[t] + s.sigma[t] * s.sigma[t] - 1.0).abs());
        if t > 0 && s.alpha_bar[t] >= s.alpha_bar[t - 1] {
            return Err(format!("alpha_bar not decreasing at t={t}"));
        }
    }
    let model = DenoiserModel::new(ModelConfig::default(), 1);
    let mut trip_err = 0.0f64;
    for seed in 0..5 {
        let inst = tiny_instance(seed);
        let g = build_hetero_graph(&inst).map_err(|e| e.to_string())?;
        let (f, c) = (g.num_cnfs, g.num_clouds);
        let y0: Vec<f64> = gaussian(seed, f * c)
            .iter()
            .zip(&g.mask)
            .map(|(&x, &m)| if m { x } else { 0.0 })
            .collect();
        let e: Vec<f64> = gaussian(seed + 100, f * c)
            .iter()
            .zip(&g.mask)
            .map(|(&x, &m)| if m { x } else { 0.0 })
            .collect();
        for t in 1..=STEPS {
            let yt = forward_noise(&s, &y0, t, &e, &g.mask).map_err(|e| e.to_string())?;
            let back = reconstruct_y0(&s, &yt, &e, t).map_err(|e| e.to_string())?;
            trip_err = y0.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(trip_err, f64::max);
            if t % 33 == 1 {
                let eps = model.predict(&g, &yt, s.sigma[t]).map_err(|e| e.to_string())?;
                let y0_hat = reconstruct_y0(&s, &yt, &eps, t).map_err(|e| e.to_string())?;
                let p = masked_softmax(&y0_hat, &g.mask, f, c).map_err(|e| e.to_string())?;
                for k in (0..f * c).filter(|&k| !g.mask[k]) {
                    if yt[k] != 0.0 || eps[k] != 0.0 || y0_hat[k] != 0.0 || p[k] != 0.0 {
                        return Err(format!("seed {seed} t={t}: masked cell {k} leaked"));
                    }
                }
            }
        }
        let out = sample(&model, &inst, &s, 4, seed).map_err(|e| e.to_string())?;
        for cand in &out.candidates {
            let a = cand.placement.assignment().map_err(|e| e.to_string())?;
            if a.iter().enumerate().any(|(r, &col)| !g.mask[r * c + col]) {
                return Err(format!("seed {seed}: sample uses a masked cell"));
            }
        }
    }
    check(
        sched_err < SCHEDULE_TOL && trip_err < ROUND_TRIP_TOL,
        format!("schedule {sched_err:.1e}, round trip {trip_err:.1e}, mask conserved"),
    )
}

fn label(instances: &[Instance]) -> Result<Vec<Placement>, String> {
    instances
        .iter()
        .map(|i| {
            solve_exact(i, f64::INFINITY, &NoClock)
                .placement
                .ok_or_else(|| format!("{}: no feasible placement", i.meta.name))
        })
        .collect()
}

fn reproduction(trained: &mut Option<DenoiserModel>) -> Outcome {
    let start = Instant::now();
    let cfgs = preset_configs("tiny", DATASET_SIZE).expect("tiny preset");
    let all = generate_dataset(&cfgs, DATASET_SEED).map_err(|e| e.to_string())?;
    let (train_set, eval_set) = split_dataset(all, TRAIN_SIZE, DATASET_SEED).map_err(|e| e.to_string())?;
    let labels = label(&train_set)?;
    let examples: Vec<TrainingExample<'_>> = train_set
        .iter()
        .zip(&labels)
        .map(|(instance, target)| TrainingExample { instance, target })
        .collect();
    let cfg = TrainConfig {
        epochs: EPOCHS,
        steps: STEPS,
        seed: DATASET_SEED,
        ..TrainConfig::default()
    };
    let mut model = DenoiserModel::new(ModelConfig::default(), cfg.seed);
    train(&mut model, &examples, &cfg).map_err(|e| e.to_string())?;
    let named: Vec<(String, &Instance)> = eval_set.iter().map(|i| (i.meta.name.clone(), i)).collect();
    let opts = EvalOptions {
        k: K,
        time_limit: f64::INFINITY,
        seed: DATASET_SEED,
        timing: true,
        steps: STEPS,
    };
    let records = run_evaluation(&named, &model, &opts).map_err(|e| e.to_string())?;
    let s = summarize(&records);
    *trained = Some(model);
    let secs = start.elapsed().as_secs_f64();
    let rate = s.feasibility_rate.unwrap_or(0.0);
    let ratio = s.cost_ratio_common.unwrap_or(f64::INFINITY);
    check(
        rate >= MIN_FEASIBILITY && ratio <= MAX_COST_RATIO && secs < REPRODUCTION_BUDGET_S,
        format!(
            "feasibility {rate:.3} on {} held out, cost ratio {ratio:.3} over {} common, {secs:.0}s",
            eval_set.len(),
            s.common_instances
        ),
    )
}

fn scaling(trained: &Option<DenoiserModel>) -> Outcome {
    let fresh;
    let model = match trained {
        Some(m) => m,
        None => {
            fresh = DenoiserModel::new(ModelConfig::default(), 0);
            &fresh
        }
    };
    let count = HARD_PER_BUCKET * HARD_CLOUDS.len();
    let cfgs = preset_configs("hard", count).expect("hard preset");
    let instances = generate_dataset(&cfgs, DATASET_SEED).map_err(|e| e.to_string())?;
    let named: Vec<(String, &Instance)> = instances.iter().map(|i| (i.meta.name.clone(), i)).collect();
    let opts = EvalOptions {
        k: K,
        time_limit: HARD_TIME_LIMIT_S,
        seed: DATASET_SEED,
        timing: true,
        steps: STEPS,
    };
    let records = run_evaluation(&named, model, &opts).map_err(|e| e.to_string())?;
    let buckets = scaling_report(&records).map_err(|e| e.to_string())?;
    let means = |s: Solver| -> Vec<f64> {
        buckets
            .iter()
            .filter(|b| b.solver == s)
            .map(|b| b.mean_elapsed_s)
            .collect()
    };
    let (exact, diff) = (means(Solver::Exact), means(Solver::Diffusion));
    let increasing = exact.windows(2).all(|w| w[1] > w[0]);
    let exact_growth = exact[exact.len() - 1] / exact[0];
    let diff_growth = diff[diff.len() - 1] / diff[0];
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join("/");
    check(
        increasing && exact_growth >= MIN_EXACT_GROWTH && diff_growth <= MAX_DIFFUSION_GROWTH,
        format!(
            "clouds {HARD_CLOUDS:?}: exact {}s ({exact_growth:.1}x), diffusion {}s ({diff_growth:.2}x)",
            fmt(&exact),
            fmt(&diff)
        ),
    )
}

fn overfit() -> Outcome {
    let inst = (0..)
        .map(tiny_instance)
        .find(|i| solve_exact(i, f64::INFINITY, &NoClock).placement.is_some())
        .expect("some tiny instance is feasible");
    let target = label(std::slice::from_ref(&inst))?.remove(0);
    let cfg = TrainConfig {
        epochs: OVERFIT_EPOCHS,
        steps: STEPS,
        ..TrainConfig::default()
    };
    let mut model = DenoiserModel::new(ModelConfig::default(), cfg.seed);
    let logs = train(
        &mut model,
        &[TrainingExample {
            instance: &inst,
            target: &target,
        }],
        &cfg,
    )
    .map_err(|e| e.to_string())?;
    let (first, last) = (logs[0].denoise, logs[logs.len() - 1].denoise);
    let drop = 1.0 - last / first;
    let schedule = cosine_schedule(STEPS).map_err(|e| e.to_string())?;
    let out = sample(&model, &inst, &schedule, K, 0).map_err(|e| e.to_string())?;
    check(
        drop >= MIN_DENOISE_DROP && out.best_feasible().is_some(),
        format!(
            "denoise {first:.4} -> {last:.4} ({:.0}% drop), {}/{K} samples feasible",
            100.0 * drop,
            out.feasible_count()
        ),
    )
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_cnfdiff"))
        .args(args)
        .current_dir(dir)
        .env_remove("CNFDIFF_SEED")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn pipeline(dir: &Path) -> Result<(), String> {
    std::fs::write(
        dir.join("hp.json"),
        r#"{"model":{"hidden":8,"embed":4},"train":{"epochs":2,"steps":20,"steps_per_instance":2}}"#,
    )
    .map_err(|e| e.to_string())?;
    run_cli(dir, &["generate", "--preset", "tiny", "--seed", "7", "--count", "6", "--train", "3", "--out", "data"])?;
    run_cli(dir, &["train", "--manifest", "data/dataset.json", "--hyperparams", "hp.json", "--out", "model.json"])?;
    let first = std::fs::read_dir(dir.join("data/instances"))
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .min()
        .ok_or("no instances generated")?;
    let first = first.to_str().ok_or("non utf-8 path")?;
    run_cli(dir, &["sample", "--checkpoint", "model.json", "--instance", first, "--k", "50", "--seed", "3", "--out", "samples.json"])?;
    run_cli(
        dir,
        &["evaluate", "--manifest", "data/dataset.json", "--checkpoint", "model.json", "--k", "10", "--no-timing", "--out", "records.csv"],
    )
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                files.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    pipeline(a.path())?;
    pipeline(b.path())?;
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    let names: Vec<&str> = ta.iter().map(|f| f.0.as_str()).collect();
    for want in ["data/dataset.json", "model.json", "model.json.train.json", "samples.json", "records.csv"] {
        if !names.contains(&want) {
            return Err(format!("{want} was not written"));
        }
    }
    if ta.len() != tb.len() {
        return Err(format!("{} files vs {}", ta.len(), tb.len()));
    }
    for (x, y) in ta.iter().zip(&tb) {
        if x != y {
            return Err(format!("{} differs between runs", x.0));
        }
    }
    check(true, format!("{} files byte-identical across two runs", ta.len()))
}

fn main() {
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-')).unwrap_or_default();
    let mut trained = None;
    let mut failed = 0;
    let mut run = |n: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        if !name.contains(&filter) {
            return;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {n} {name}: PASS ({d}) [{secs:.1}s]"),
            Err(d) => {
                failed += 1;
                println!("criterion {n} {name}: FAIL ({d}) [{secs:.1}s]");
            }
        }
    };
    run(1, "exact_vs_oracle", &mut exact_vs_oracle);
    run(2, "evaluator_vs_oracle", &mut evaluator_vs_oracle);
    run(3, "gradients", &mut gradients);
    run(4, "diffusion_algebra", &mut diffusion_algebra);
    run(5, "reproduction", &mut || reproduction(&mut trained));
    run(6, "scaling", &mut || scaling(&trained));
    run(7, "overfit", &mut overfit);
    run(8, "determinism", &mut determinism);
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
