use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use super::tensor::{ParamId, ParamStore, Tensor};
use crate::{Error, Result};

/// `y = x·Wᵀ + b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Dense {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        let weight = store.add_glorot(format!("{name}.weight"), &[output, input], input, output, rng);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[output]));
        Dense {
            weight,
            bias,
            input,
            output,
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        tape.linear(x, w, Some(b))
    }
}

/// Dense layers with a rectifier between them and none after the last.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// `dims = [in, hidden.., out]`.
    pub fn new(store: &mut ParamStore, name: &str, dims: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, w)| Dense::new(store, &format!("{name}.{k}"), w[0], w[1], rng))
            .collect();
        Mlp { layers }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, mut x: Var) -> Result<Var> {
        for (k, layer) in self.layers.iter().enumerate() {
            x = layer.forward(tape, x)?;
            if k + 1 < self.layers.len() {
                x = tape.relu(x);
            }
        }
        Ok(x)
    }
}

/// Learned lookup table `[count, dim]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Embedding {
    pub table: ParamId,
    pub count: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(store: &mut ParamStore, name: &str, count: usize, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let table = store.add_glorot(String::from(name), &[count, dim], count, dim, rng);
        Embedding { table, count, dim }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, ids: &[usize]) -> Result<Var> {
        let t = tape.param(self.table);
        tape.gather_rows(t, ids)
    }
}

/// Directed edges `src[k] -> dst[k]`, possibly between two node sets.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EdgeList {
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
}

impl EdgeList {
    pub fn new(pairs: &[(usize, usize)]) -> Self {
        EdgeList {
            src: pairs.iter().map(|p| p.0).collect(),
            dst: pairs.iter().map(|p| p.1).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    pub fn reversed(&self) -> Self {
        EdgeList {
            src: self.dst.clone(),
            dst: self.src.clone(),
        }
    }
}

/// GraphSAGE layer with mean aggregation over `[h_src ‖ edge_attr]`:
/// `out_v = act(W_self·h_v + W_neigh·mean_{u→v}[h_u ‖ a_uv] + b)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sage {
    pub self_weight: ParamId,
    pub neigh_weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub edge_dim: usize,
    pub output: usize,
}

impl Sage {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        edge_dim: usize,
        output: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let self_weight = store.add_glorot(format!("{name}.self"), &[output, input], input, output, rng);
        let neigh_weight = store.add_glorot(
            format!("{name}.neigh"),
            &[output, input + edge_dim],
            input + edge_dim,
            output,
            rng,
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[output]));
        Sage {
            self_weight,
            neigh_weight,
            bias,
            input,
            edge_dim,
            output,
        }
    }

    /// Messages flow from rows of `h_src` to rows of `h_dst`; pass the same
    /// variable twice for a homogeneous graph. `edge_attr` is `[E, edge_dim]`
    /// and may be `None` only when `edge_dim == 0`. Without `relu` the
    /// pre-activation is returned.
    pub fn forward(
        &self,
        tape: &mut Tape<'_>,
        h_src: Var,
        h_dst: Var,
        edges: &EdgeList,
        edge_attr: Option<Var>,
        relu: bool,
    ) -> Result<Var> {
        let (n_src, d_src) = tape.shape(h_src);
        let (n_dst, _) = tape.shape(h_dst);
        if edges.src.len() != edges.dst.len()
            || edges.src.iter().any(|&u| u >= n_src)
            || edges.dst.iter().any(|&v| v >= n_dst)
        {
            return Err(Error::ShapeMismatch {
                op: "sage",
                detail: format!("edge endpoints outside {n_src}/{n_dst} nodes"),
            });
        }
        if d_src != self.input {
            return Err(Error::ShapeMismatch {
                op: "sage",
                detail: format!("features of width {d_src}, layer expects {}", self.input),
            });
        }
        let w_self = tape.param(self.self_weight);
        let b = tape.param(self.bias);
        let mut out = tape.linear(h_dst, w_self, Some(b))?;
        if !edges.is_empty() {
            let msg = tape.gather_rows(h_src, &edges.src)?;
            let msg = match (edge_attr, self.edge_dim) {
                (_, 0) => msg,
                (Some(a), dim) => {
                    if tape.shape(a) != (edges.len(), dim) {
                        return Err(Error::ShapeMismatch {
                            op: "sage",
                            detail: format!("edge attributes {:?} for {} edges", tape.shape(a), edges.len()),
                        });
                    }
                    tape.concat_cols(msg, a)?
                }
                (None, dim) => {
                    return Err(Error::ShapeMismatch {
                        op: "sage",
                        detail: format!("missing edge attributes of width {dim}"),
                    })
                }
            };
            let mean = tape.mean_scatter(msg, &edges.dst, n_dst)?;
            let w_neigh = tape.param(self.neigh_weight);
            let neigh = tape.linear(mean, w_neigh, None)?;
            out = tape.add(out, neigh)?;
        }
        Ok(if relu { tape.relu(out) } else { out })
    }
}
