//! Minimal differentiable computation: dense tensors, a reverse-mode tape,
//! dense/MLP/GraphSAGE layers and the Adam optimizer. Everything is `f64`.

mod adam;
mod layers;
mod tape;
mod tensor;

pub use adam::{clip_grad_norm, Adam};
pub use layers::{Dense, EdgeList, Embedding, Mlp, Sage};
pub use tape::{masked_softmax_rows, Tape, Var};
pub use tensor::{ParamId, ParamStore, Tensor};
