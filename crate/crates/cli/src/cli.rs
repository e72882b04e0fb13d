use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use cnfdiff_core::diffusion::{cosine_schedule, sample, train, DenoiserModel, TrainingExample};
use cnfdiff_core::gen::{generate_dataset, preset_configs, split_dataset};
use cnfdiff_core::{solve_exact, ExactStatus, Placement};

use crate::formats::{
    read_dataset, read_hyperparams, read_instance, read_model, read_versioned, schedule_hash, write_csv,
    write_json, DatasetDoc, DatasetEntry, Hyperparams, InstanceDoc, ModelDoc, ResultDoc, SamplesDoc, Split,
    TrainDoc, DATASET_V1, TRAIN_V1,
};
use crate::harness::{run_evaluation, scaling_report, summarize, EvalOptions, EvalRecord, StdClock};

#[derive(Debug, Parser)]
#[command(name = "cnfdiff", version, about = "CNF chain placement: exact search and diffusion sampling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Eval,
    All,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded dataset: instance files plus a manifest.
    Generate {
        #[arg(long, default_value = "tiny")]
        preset: String,
        #[arg(long, env = "CNFDIFF_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 44)]
        count: usize,
        /// Instances assigned to the training split.
        #[arg(long, default_value_t = 20)]
        train: usize,
    },
    /// Solve one instance with branch-and-bound.
    SolveExact {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, default_value_t = 600.0)]
        time_limit: f64,
        /// Write a result.v1 file; the result is printed either way.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the denoiser on a manifest's training split.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// JSON with optional `model` and `train` sections.
        #[arg(long)]
        hyperparams: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Training log (train.v1); defaults to `<out>.train.json`.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Overrides the seed in the hyperparameter file.
        #[arg(long, env = "CNFDIFF_SEED")]
        seed: Option<u64>,
        /// Time limit for labelling each training instance.
        #[arg(long, default_value_t = 600.0)]
        label_time_limit: f64,
    },
    /// Draw K reverse-diffusion samples for one instance.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, default_value_t = 50)]
        k: usize,
        #[arg(long, env = "CNFDIFF_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare exact search and diffusion over a dataset split.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 50)]
        k: usize,
        #[arg(long, default_value_t = 600.0)]
        time_limit: f64,
        #[arg(long, env = "CNFDIFF_SEED", default_value_t = 0)]
        seed: u64,
        /// records.v1 CSV.
        #[arg(long)]
        out: PathBuf,
        /// summary.v1 CSV; defaults to `summary.csv` next to `--out`.
        #[arg(long)]
        summary: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitArg::Eval)]
        split: SplitArg,
        /// Write zero for every elapsed time so repeated runs are identical.
        #[arg(long)]
        no_timing: bool,
    },
    /// Mean runtime per solver and cloud count from a records CSV.
    ReportScaling {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn dispatch(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Generate {
            preset,
            seed,
            out,
            count,
            train,
        } => generate(&preset, seed, &out, count, train),
        Command::SolveExact {
            instance,
            time_limit,
            out,
        } => solve(&instance, time_limit, out.as_deref()),
        Command::Train {
            manifest,
            hyperparams,
            out,
            log,
            seed,
            label_time_limit,
        } => {
            let log = log.unwrap_or_else(|| {
                let mut name = out.file_name().unwrap_or_default().to_os_string();
                name.push(".train.json");
                out.with_file_name(name)
            });
            train_cmd(&manifest, hyperparams.as_deref(), &out, &log, seed, label_time_limit)
        }
        Command::Sample {
            checkpoint,
            instance,
            k,
            seed,
            out,
        } => sample_cmd(&checkpoint, &instance, k, seed, &out),
        Command::Evaluate {
            manifest,
            checkpoint,
            k,
            time_limit,
            seed,
            out,
            summary,
            split,
            no_timing,
        } => {
            let summary = summary.unwrap_or_else(|| out.with_file_name("summary.csv"));
            let split = match split {
                SplitArg::Train => Some(Split::Train),
                SplitArg::Eval => Some(Split::Eval),
                SplitArg::All => None,
            };
            let opts = EvalOptions {
                k,
                time_limit,
                seed,
                timing: !no_timing,
                steps: 0,
            };
            evaluate(&manifest, &checkpoint, split, opts, &out, &summary)
        }
        Command::ReportScaling { records, out } => {
            let records: Vec<EvalRecord> = crate::formats::read_csv(&records)?;
            let buckets = scaling_report(&records)?;
            write_csv(&out, &buckets)?;
            Ok(())
        }
    }
}

fn generate(preset: &str, seed: u64, out: &Path, count: usize, train: usize) -> anyhow::Result<()> {
    let configs = preset_configs(preset, count)
        .with_context(|| format!("unknown preset `{preset}` (tiny, small, medium, hard)"))?;
    let instances = generate_dataset(&configs, seed)?;
    let ids: Vec<usize> = (0..instances.len()).collect();
    let (train_ids, _) = split_dataset(ids, train, seed)?;
    let mut entries = Vec::with_capacity(instances.len());
    for (k, inst) in instances.into_iter().enumerate() {
        let id = inst.meta.name.clone();
        let path = format!("instances/{id}.json");
        entries.push(DatasetEntry {
            id,
            path: path.clone(),
            split: if train_ids.contains(&k) {
                Split::Train
            } else {
                Split::Eval
            },
            num_clouds: inst.num_clouds(),
            num_positions: inst.num_positions(),
        });
        write_json(&out.join(&path), &InstanceDoc::new(inst))?;
    }
    let manifest = DatasetDoc {
        format: DATASET_V1.into(),
        preset: preset.into(),
        seed,
        train_count: train,
        instances: entries,
    };
    write_json(&out.join("dataset.json"), &manifest)?;
    println!("wrote {count} instances to {}", out.display());
    Ok(())
}

fn solve(path: &Path, time_limit: f64, out: Option<&Path>) -> anyhow::Result<()> {
    let inst = read_instance(path)?;
    let r = solve_exact(&inst, time_limit, &StdClock::start());
    let doc = ResultDoc::new(&inst.meta.name, &r);
    println!("{}", serde_json::to_string(&doc)?);
    if let Some(out) = out {
        write_json(out, &doc)?;
    }
    Ok(())
}

fn train_cmd(
    manifest: &Path,
    hyperparams: Option<&Path>,
    out: &Path,
    log_path: &Path,
    seed: Option<u64>,
    label_time_limit: f64,
) -> anyhow::Result<()> {
    let mut hp = match hyperparams {
        Some(p) => read_hyperparams(p)?,
        None => Hyperparams::default(),
    };
    if let Some(seed) = seed {
        hp.train.seed = seed;
    }
    let data = read_dataset(manifest)?;
    let train_set = data.split(Some(Split::Train));
    if train_set.is_empty() {
        bail!("{}: training split is empty", manifest.display());
    }
    let mut labels: Vec<Placement> = Vec::with_capacity(train_set.len());
    for (id, inst) in &train_set {
        let r = solve_exact(inst, label_time_limit, &StdClock::start());
        match (r.status, r.placement) {
            (ExactStatus::Optimal, Some(p)) => labels.push(p),
            (ExactStatus::TimedOut, Some(p)) => {
                log::warn!("{id}: labelling timed out, using the incumbent");
                labels.push(p);
            }
            _ => bail!("{id}: no feasible placement to train on"),
        }
    }
    let examples: Vec<TrainingExample<'_>> = train_set
        .iter()
        .zip(&labels)
        .map(|((_, instance), target)| TrainingExample { instance, target })
        .collect();
    let mut model = DenoiserModel::new(hp.model, hp.train.seed);
    log::info!(
        "training on {} instances for {} epochs",
        examples.len(),
        hp.train.epochs
    );
    let epochs = train(&mut model, &examples, &hp.train)?;
    let schedule = cosine_schedule(hp.train.steps)?;
    write_json(out, &ModelDoc::new(&model, hp.train.steps))?;
    let doc = TrainDoc {
        format: TRAIN_V1.into(),
        seed: hp.train.seed,
        schedule_hash: schedule_hash(&schedule),
        model: hp.model,
        config: hp.train,
        instances: train_set.iter().map(|(id, _)| id.clone()).collect(),
        epochs,
    };
    write_json(log_path, &doc)?;
    if let Some(last) = doc.epochs.last() {
        println!(
            "trained {} epochs, final denoise loss {:.4}, total {:.4}",
            last.epoch, last.denoise, last.total
        );
    }
    Ok(())
}

fn load_checkpoint(path: &Path) -> anyhow::Result<(DenoiserModel, usize)> {
    if !path.exists() {
        bail!("checkpoint {} does not exist", path.display());
    }
    let (model, steps) = read_model(path)?;
    if model.trained_steps == 0 {
        log::warn!("{}: model has not been trained", path.display());
    }
    Ok((model, steps))
}

fn sample_cmd(checkpoint: &Path, instance: &Path, k: usize, seed: u64, out: &Path) -> anyhow::Result<()> {
    let (model, steps) = load_checkpoint(checkpoint)?;
    let inst = read_instance(instance)?;
    let schedule = cosine_schedule(steps)?;
    let outcome = sample(&model, &inst, &schedule, k, seed)?;
    if outcome.untrained {
        eprintln!("warning: sampling from an untrained model");
    }
    let doc = SamplesDoc::new(&inst.meta.name, seed, steps, &outcome);
    write_json(out, &doc)?;
    match outcome.best_feasible() {
        Some(b) => println!("{}/{} feasible, best cost {}", outcome.feasible_count(), k, b.cost),
        None => println!(
            "0/{k} feasible, least violation {}",
            outcome.best().violation()
        ),
    }
    Ok(())
}

fn evaluate(
    manifest: &Path,
    checkpoint: &Path,
    split: Option<Split>,
    mut opts: EvalOptions,
    out: &Path,
    summary_path: &Path,
) -> anyhow::Result<()> {
    let (model, steps) = load_checkpoint(checkpoint)?;
    if !manifest.exists() {
        bail!("dataset manifest {} does not exist", manifest.display());
    }
    let _: DatasetDoc = read_versioned(manifest)?;
    let data = read_dataset(manifest)?;
    opts.steps = steps;
    let records = run_evaluation(&data.split(split), &model, &opts)?;
    write_csv(out, &records)?;
    let summary = summarize(&records);
    write_csv(summary_path, &summary.rows())?;
    for row in summary.rows() {
        match row.value {
            Some(v) => println!("{:<32}{v}", row.metric),
            None => println!("{:<32}-", row.metric),
        }
    }
    Ok(())
}
