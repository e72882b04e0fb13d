//! Versioned on-disk formats. JSON documents carry a `format` tag that is
//! checked on read; tables are CSV with a fixed header.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use cnfdiff_core::diffusion::{DenoiserModel, EpochLog, ModelConfig, NoiseSchedule, SampleOutcome, TrainConfig};
use cnfdiff_core::eval::Violation;
use cnfdiff_core::nn::Tensor;
use cnfdiff_core::{ExactResult, ExactStatus, Instance};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const INSTANCE_V1: &str = "instance.v1";
pub const RESULT_V1: &str = "result.v1";
pub const MODEL_V1: &str = "model.v1";
pub const TRAIN_V1: &str = "train.v1";
pub const SAMPLES_V1: &str = "samples.v1";
pub const DATASET_V1: &str = "dataset.v1";

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: expected format {expected}, found {found}")]
    Version {
        path: PathBuf,
        expected: &'static str,
        found: String,
    },
    #[error("{path}: {source}")]
    Core {
        path: PathBuf,
        source: cnfdiff_core::Error,
    },
}

pub type Result<T, E = FormatError> = std::result::Result<T, E>;

/// Documents tagged with a format string.
pub trait Versioned {
    const FORMAT: &'static str;
    fn format(&self) -> &str;
}

macro_rules! versioned {
    ($ty:ty, $tag:expr) => {
        impl Versioned for $ty {
            const FORMAT: &'static str = $tag;
            fn format(&self) -> &str {
                &self.format
            }
        }
    };
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> FormatError + '_ {
    move |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Pretty JSON with a trailing newline; parent directories are created.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|source| FormatError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_versioned<T: DeserializeOwned + Versioned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let json = |source| FormatError::Json {
        path: path.to_path_buf(),
        source,
    };
    #[derive(Deserialize)]
    struct Tag {
        format: String,
    }
    let tag: Tag = serde_json::from_str(&text).map_err(json)?;
    if tag.format != T::FORMAT {
        return Err(FormatError::Version {
            path: path.to_path_buf(),
            expected: T::FORMAT,
            found: tag.format,
        });
    }
    serde_json::from_str(&text).map_err(json)
}

/// The instance's own fields sit at the top level next to `format`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceDoc {
    pub format: String,
    #[serde(flatten)]
    pub instance: Instance,
}
versioned!(InstanceDoc, INSTANCE_V1);

impl InstanceDoc {
    pub fn new(instance: Instance) -> Self {
        InstanceDoc {
            format: INSTANCE_V1.into(),
            instance,
        }
    }
}

/// Reads and validates an instance file.
pub fn read_instance(path: &Path) -> Result<Instance> {
    let doc: InstanceDoc = read_versioned(path)?;
    doc.instance.validate().map_err(|source| FormatError::Core {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(doc.instance)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDoc {
    pub format: String,
    pub instance_id: String,
    pub status: ExactStatus,
    pub cost: Option<f64>,
    pub elapsed_s: f64,
    pub nodes_explored: u64,
    /// Host cloud per flattened position.
    pub placement: Option<Vec<usize>>,
}
versioned!(ResultDoc, RESULT_V1);

impl ResultDoc {
    pub fn new(instance_id: &str, r: &ExactResult) -> Self {
        ResultDoc {
            format: RESULT_V1.into(),
            instance_id: instance_id.into(),
            status: r.status,
            cost: r.cost,
            elapsed_s: r.elapsed,
            nodes_explored: r.nodes_explored,
            placement: r.placement.as_ref().and_then(|p| p.assignment().ok()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDoc {
    pub format: String,
    pub hidden: usize,
    pub embed: usize,
    pub encoder_layers: usize,
    pub cross_layers: usize,
    pub decoder_layers: usize,
    /// Diffusion steps the model was trained with.
    pub steps: usize,
    pub seed: u64,
    pub trained_steps: u64,
    pub params: Vec<ParamEntry>,
}
versioned!(ModelDoc, MODEL_V1);

impl ModelDoc {
    pub fn new(model: &DenoiserModel, steps: usize) -> Self {
        ModelDoc {
            format: MODEL_V1.into(),
            hidden: model.config.hidden,
            embed: model.config.embed,
            encoder_layers: model.cloud_encoder.len(),
            cross_layers: 1,
            decoder_layers: 3,
            steps,
            seed: model.seed,
            trained_steps: model.trained_steps,
            params: model
                .params
                .iter()
                .map(|(_, name, t)| ParamEntry {
                    name: name.into(),
                    shape: t.shape().to_vec(),
                    values: t.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn to_model(&self) -> cnfdiff_core::Result<DenoiserModel> {
        let config = ModelConfig {
            hidden: self.hidden,
            embed: self.embed,
        };
        let tensors = self
            .params
            .iter()
            .map(|p| {
                Tensor::from_vec(&p.shape, p.values.clone())
                    .map(|t| (p.name.clone(), t))
                    .map_err(|_| cnfdiff_core::Error::BadCheckpoint(p.name.clone()))
            })
            .collect::<cnfdiff_core::Result<Vec<_>>>()?;
        DenoiserModel::from_tensors(config, self.seed, self.trained_steps, tensors)
    }
}

/// Reads a checkpoint and rebuilds the model; returns it with its step count.
pub fn read_model(path: &Path) -> Result<(DenoiserModel, usize)> {
    let doc: ModelDoc = read_versioned(path)?;
    let model = doc.to_model().map_err(|source| FormatError::Core {
        path: path.to_path_buf(),
        source,
    })?;
    Ok((model, doc.steps))
}

/// Hex SHA-256 of the schedule's `ᾱ` values (little-endian bytes).
pub fn schedule_hash(schedule: &NoiseSchedule) -> String {
    let mut h = Sha256::new();
    for a in &schedule.alpha_bar {
        h.update(a.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Hex SHA-256 of a file's bytes.
pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainDoc {
    pub format: String,
    pub seed: u64,
    pub schedule_hash: String,
    pub model: ModelConfig,
    pub config: TrainConfig,
    pub instances: Vec<String>,
    pub epochs: Vec<EpochLog>,
}
versioned!(TrainDoc, TRAIN_V1);

/// Optional overrides read by `train --hyperparams`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

pub fn read_hyperparams(path: &Path) -> Result<Hyperparams> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| FormatError::Json {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub chain: usize,
    pub placement: Vec<usize>,
    pub feasible: bool,
    pub cost: f64,
    pub violation: f64,
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplesDoc {
    pub format: String,
    pub instance_id: String,
    pub k: usize,
    pub seed: u64,
    pub steps: usize,
    pub untrained: bool,
    /// Chain of the cheapest feasible sample.
    pub best_feasible: Option<usize>,
    /// Chains, best first.
    pub ranking: Vec<usize>,
    pub samples: Vec<SampleEntry>,
}
versioned!(SamplesDoc, SAMPLES_V1);

impl SamplesDoc {
    pub fn new(instance_id: &str, seed: u64, steps: usize, out: &SampleOutcome) -> Self {
        SamplesDoc {
            format: SAMPLES_V1.into(),
            instance_id: instance_id.into(),
            k: out.candidates.len(),
            seed,
            steps,
            untrained: out.untrained,
            best_feasible: out.best_feasible().map(|c| c.chain),
            ranking: out.ranking.iter().map(|&k| out.candidates[k].chain).collect(),
            samples: out
                .candidates
                .iter()
                .map(|c| SampleEntry {
                    chain: c.chain,
                    placement: c.placement.assignment().unwrap_or_default(),
                    feasible: c.feasible(),
                    cost: c.cost,
                    violation: c.violation(),
                    violations: c.report.violations.clone(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub id: String,
    /// Relative to the manifest's directory.
    pub path: String,
    pub split: Split,
    pub num_clouds: usize,
    pub num_positions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetDoc {
    pub format: String,
    pub preset: String,
    pub seed: u64,
    pub train_count: usize,
    pub instances: Vec<DatasetEntry>,
}
versioned!(DatasetDoc, DATASET_V1);

/// A manifest together with its instances.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetDoc,
    pub instances: Vec<(DatasetEntry, Instance)>,
}

impl Dataset {
    pub fn split(&self, split: Option<Split>) -> Vec<(String, &Instance)> {
        self.instances
            .iter()
            .filter(|(e, _)| split.is_none_or(|s| e.split == s))
            .map(|(e, i)| (e.id.clone(), i))
            .collect()
    }
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let manifest: DatasetDoc = read_versioned(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let instances = manifest
        .instances
        .iter()
        .map(|e| Ok((e.clone(), read_instance(&dir.join(&e.path))?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        manifest,
        instances,
    })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> FormatError + '_ {
    move |source| FormatError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize().collect::<Result<Vec<T>, _>>().map_err(csv_err(path))
}
