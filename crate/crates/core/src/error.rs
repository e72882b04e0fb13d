use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("placement row {row} sums to {sum}, expected exactly one cloud")]
    IncompletePlacement { row: usize, sum: usize },
    #[error("placement has shape {rows}x{cols}, expected {expected_rows}x{expected_cols}")]
    PlacementShape {
        rows: usize,
        cols: usize,
        expected_rows: usize,
        expected_cols: usize,
    },
    #[error("sfc {sfc} edge {from}->{to} joins non-adjacent clouds {from_cloud} and {to_cloud}")]
    DisconnectedHop {
        sfc: usize,
        from: usize,
        to: usize,
        from_cloud: usize,
        to_cloud: usize,
    },
    #[error("sfc index {0} out of range")]
    NoSuchSfc(usize),
    #[error("search space of {clouds}^{positions} placements exceeds the enumeration guard")]
    TooLarge { clouds: usize, positions: usize },
    #[error("instance generation failed after {attempts} attempts: {reason}")]
    GenerationFailed { attempts: usize, reason: String },
    #[error("invalid generator config: {0}")]
    BadConfig(String),
    #[error("train count {requested} exceeds dataset size {available}")]
    BadCount { requested: usize, available: usize },
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("backward requires a scalar loss, got {0} values")]
    NotScalar(usize),
    #[error("tape already consumed by a previous backward pass")]
    StaleTape,
    #[error("diffusion needs at least one step, got {0}")]
    BadT(usize),
    #[error("cnf position {0} has no allowed cloud")]
    UnplaceableCnf(usize),
    #[error("mask row {0} has no allowed entry")]
    AllMaskedRow(usize),
    #[error("sample count must be at least 1")]
    NoSamples,
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("model parameter {0} is missing or malformed")]
    BadCheckpoint(String),
}
