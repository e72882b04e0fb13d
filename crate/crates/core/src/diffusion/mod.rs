//! Diffusion-based placement: hetero-graph encoding, the GNN noise
//! predictor, forward noising, constraint-penalized training and reverse
//! sampling with best-of-K selection.

mod denoiser;
mod graph;
mod loss;
mod sample;
mod schedule;
mod train;

pub use denoiser::{Conditioning, DenoiserModel, ModelConfig, PairInput, MIN_SIGMA};
pub use graph::{
    build_hetero_graph, ColumnStats, HeteroGraph, CC_ATTRS, CLOUD_FEATS, CLOUD_TYPE_COUNT, CNF_FEATS,
    RESTRICTION_COUNT, TT_ATTRS,
};
pub use loss::{bandwidth_scale, constraint_losses, ConstraintLosses, LossWeights};
pub use sample::{condition_steps, reverse_chain, sample, Candidate, SampleOutcome};
pub use schedule::{
    cosine_schedule, forward_noise, reconstruct_y0, NoiseSchedule, COSINE_OFFSET, MAX_BETA, MIN_ALPHA_BAR,
};
pub use train::{examples, train, EpochLog, TrainConfig, TrainingExample};

use alloc::vec::Vec;

use crate::Result;

/// Row-wise softmax over allowed entries of an `F x C` matrix; forbidden
/// entries are exactly zero.
pub fn masked_softmax(y: &[f64], mask: &[bool], rows: usize, cols: usize) -> Result<Vec<f64>> {
    if y.len() != rows * cols || mask.len() != rows * cols {
        return Err(crate::Error::ShapeMismatch {
            op: "masked_softmax",
            detail: alloc::format!("{} values, {} mask entries for {rows}x{cols}", y.len(), mask.len()),
        });
    }
    crate::nn::masked_softmax_rows(y, mask, rows, cols)
}
