use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::graph::{
    HeteroGraph, CC_ATTRS, CLOUD_FEATS, CLOUD_TYPE_COUNT, CNF_FEATS, RESTRICTION_COUNT, TT_ATTRS,
};
use crate::math::ln;
use crate::nn::{Dense, Embedding, Mlp, ParamId, ParamStore, Sage, Tape, Tensor, Var};
use crate::rng::stream;
use crate::{Error, Result};

/// Smallest noise level fed to the time embedding (`σ_0 = 0`).
pub const MIN_SIGMA: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Hidden width shared by every sub-module.
    pub hidden: usize,
    /// Width of the cloud-type and restriction embeddings.
    pub embed: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { hidden: 64, embed: 8 }
    }
}

/// First decoder layer over `[h_cnf ‖ h_cloud ‖ y]`, stored per block so
/// the CNF and cloud parts are computed once per node rather than per pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairInput {
    pub w_cnf: ParamId,
    pub w_cloud: ParamId,
    pub w_y: ParamId,
    pub bias: ParamId,
}

/// GNN noise predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserModel {
    pub config: ModelConfig,
    pub seed: u64,
    pub params: ParamStore,
    pub cloud_type_embedding: Embedding,
    pub cnf_restriction_embedding: Embedding,
    pub time_mlp: Mlp,
    pub cloud_encoder: [Sage; 2],
    pub cnf_encoder: [Sage; 2],
    pub cross_t2c: Sage,
    pub cross_c2t: Sage,
    pub decoder_in: PairInput,
    pub decoder_hidden: Dense,
    pub decoder_out: Dense,
    /// Optimizer steps applied so far.
    pub trained_steps: u64,
}

impl DenoiserModel {
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let (d, e) = (config.hidden, config.embed);
        let mut rng = stream(seed, 0x006d_6f64_656c);
        let mut ps = ParamStore::new();
        let cloud_type_embedding = Embedding::new(&mut ps, "cloud_type_embedding", CLOUD_TYPE_COUNT, e, &mut rng);
        let cnf_restriction_embedding =
            Embedding::new(&mut ps, "cnf_restriction_embedding", RESTRICTION_COUNT, e, &mut rng);
        let time_mlp = Mlp::new(&mut ps, "time_mlp", &[1, d, d], &mut rng);
        let cloud_encoder = [
            Sage::new(&mut ps, "cloud_encoder.0", CLOUD_FEATS + e, CC_ATTRS, d, &mut rng),
            Sage::new(&mut ps, "cloud_encoder.1", d, CC_ATTRS, d, &mut rng),
        ];
        let cnf_encoder = [
            Sage::new(&mut ps, "cnf_encoder.0", CNF_FEATS + e, TT_ATTRS, d, &mut rng),
            Sage::new(&mut ps, "cnf_encoder.1", d, TT_ATTRS, d, &mut rng),
        ];
        let cross_t2c = Sage::new(&mut ps, "cross_t2c", d, 0, d, &mut rng);
        let cross_c2t = Sage::new(&mut ps, "cross_c2t", d, 0, d, &mut rng);
        let fan_in = 2 * d + 1;
        let decoder_in = PairInput {
            w_cnf: ps.add_glorot("decoder.0.cnf".into(), &[d, d], fan_in, d, &mut rng),
            w_cloud: ps.add_glorot("decoder.0.cloud".into(), &[d, d], fan_in, d, &mut rng),
            w_y: ps.add_glorot("decoder.0.y".into(), &[d], fan_in, d, &mut rng),
            bias: ps.add("decoder.0.bias".into(), Tensor::zeros(&[d])),
        };
        let decoder_hidden = Dense::new(&mut ps, "decoder.1", d, d, &mut rng);
        let decoder_out = Dense::new(&mut ps, "decoder.2", d, 1, &mut rng);
        DenoiserModel {
            config,
            seed,
            params: ps,
            cloud_type_embedding,
            cnf_restriction_embedding,
            time_mlp,
            cloud_encoder,
            cnf_encoder,
            cross_t2c,
            cross_c2t,
            decoder_in,
            decoder_hidden,
            decoder_out,
            trained_steps: 0,
        }
    }

    /// Rebuilds a model from named tensors; every parameter must be present
    /// with its expected shape.
    pub fn from_tensors(
        config: ModelConfig,
        seed: u64,
        trained_steps: u64,
        tensors: impl IntoIterator<Item = (String, Tensor)>,
    ) -> Result<Self> {
        let mut model = Self::new(config, seed);
        let mut seen = alloc::vec![false; model.params.len()];
        for (name, t) in tensors {
            let id = model.params.find(&name).ok_or_else(|| Error::BadCheckpoint(name.clone()))?;
            model.params.set(id, t).map_err(|_| Error::BadCheckpoint(name.clone()))?;
            seen[id.index()] = true;
        }
        if let Some(k) = seen.iter().position(|s| !s) {
            return Err(Error::BadCheckpoint(String::from(model.params.name(ParamId(k)))));
        }
        model.trained_steps = trained_steps;
        Ok(model)
    }

    /// Records `ε̂` (`F x C`, zero on forbidden pairs) on `tape`.
    pub fn forward(&self, tape: &mut Tape<'_>, graph: &HeteroGraph, y_t: &[f64], sigma: f64) -> Result<Var> {
        check_noisy(graph, y_t)?;
        let (a, bc) = self.encode(tape, graph, sigma)?;
        self.decode(tape, graph, a, bc, y_t)
    }

    /// Everything upstream of the noisy matrix: per-CNF and per-cloud
    /// projections feeding the pairwise decoder.
    fn encode(&self, tape: &mut Tape<'_>, graph: &HeteroGraph, sigma: f64) -> Result<(Var, Var)> {
        let (c, f) = (graph.num_clouds, graph.num_cnfs);
        let t_in = tape.constant(1, 1, alloc::vec![ln(sigma.max(MIN_SIGMA))])?;
        let t_emb = self.time_mlp.forward(tape, t_in)?;

        let cloud_x = tape.constant(c, CLOUD_FEATS, graph.cloud_input.clone())?;
        let cloud_e = self.cloud_type_embedding.forward(tape, &graph.cloud_type_ids)?;
        let mut h_c = tape.concat_cols(cloud_x, cloud_e)?;
        let cc_attr = tape.constant(graph.cc_edges.len(), CC_ATTRS, graph.cc_input.clone())?;
        for layer in &self.cloud_encoder {
            let h = layer.forward(tape, h_c, h_c, &graph.cc_edges, Some(cc_attr), true)?;
            h_c = tape.add_row(h, t_emb)?;
        }

        let cnf_x = tape.constant(f, CNF_FEATS, graph.cnf_input.clone())?;
        let cnf_e = self.cnf_restriction_embedding.forward(tape, &graph.cnf_restriction_ids)?;
        let mut h_t = tape.concat_cols(cnf_x, cnf_e)?;
        let tt_attr = tape.constant(graph.tt_edges.len(), TT_ATTRS, graph.tt_input.clone())?;
        for layer in &self.cnf_encoder {
            let h = layer.forward(tape, h_t, h_t, &graph.tt_edges, Some(tt_attr), true)?;
            h_t = tape.add_row(h, t_emb)?;
        }

        let to_c = self.cross_t2c.forward(tape, h_t, h_c, &graph.tc_edges, None, true)?;
        let to_t = self.cross_c2t.forward(tape, h_c, h_t, &graph.ct_edges, None, true)?;
        let h_c = tape.add(h_c, to_c)?;
        let h_t = tape.add(h_t, to_t)?;

        let w_t = tape.param(self.decoder_in.w_cnf);
        let w_c = tape.param(self.decoder_in.w_cloud);
        let a = tape.linear(h_t, w_t, None)?;
        let bc = tape.linear(h_c, w_c, None)?;
        Ok((a, bc))
    }

    fn decode(&self, tape: &mut Tape<'_>, graph: &HeteroGraph, a: Var, bc: Var, y_t: &[f64]) -> Result<Var> {
        let (c, f) = (graph.num_clouds, graph.num_cnfs);
        let cells = graph.allowed_cells();
        let rows: Vec<usize> = cells.iter().map(|&k| k / c).collect();
        let cols: Vec<usize> = cells.iter().map(|&k| k % c).collect();
        let y_pairs: Vec<f64> = cells.iter().map(|&k| y_t[k]).collect();
        let w_y = tape.param(self.decoder_in.w_y);
        let b = tape.param(self.decoder_in.bias);
        let pair = tape.pair_sum(a, bc, &rows, &cols, &y_pairs, w_y, b)?;
        let pair = tape.relu(pair);
        let pair = self.decoder_hidden.forward(tape, pair)?;
        let pair = tape.relu(pair);
        let out = self.decoder_out.forward(tape, pair)?;
        tape.scatter_cells(out, &cells, f, c)
    }

    /// Forward-only prediction of `ε̂`.
    pub fn predict(&self, graph: &HeteroGraph, y_t: &[f64], sigma: f64) -> Result<Vec<f64>> {
        let mut tape = Tape::inference(&self.params);
        let out = self.forward(&mut tape, graph, y_t, sigma)?;
        Ok(tape.value(out).to_vec())
    }

    /// The part of the forward pass that depends only on `graph` and
    /// `sigma`, so chains sharing a step can share it.
    pub fn condition(&self, graph: &HeteroGraph, sigma: f64) -> Result<Conditioning> {
        let mut tape = Tape::inference(&self.params);
        let (a, bc) = self.encode(&mut tape, graph, sigma)?;
        Ok(Conditioning {
            cnf: tape.value(a).to_vec(),
            cloud: tape.value(bc).to_vec(),
        })
    }

    /// Same as [`predict`](Self::predict) given a precomputed conditioning.
    pub fn predict_conditioned(&self, graph: &HeteroGraph, cond: &Conditioning, y_t: &[f64]) -> Result<Vec<f64>> {
        check_noisy(graph, y_t)?;
        let d = self.config.hidden;
        let mut tape = Tape::inference(&self.params);
        let a = tape.constant(graph.num_cnfs, d, cond.cnf.clone())?;
        let bc = tape.constant(graph.num_clouds, d, cond.cloud.clone())?;
        let out = self.decode(&mut tape, graph, a, bc, y_t)?;
        Ok(tape.value(out).to_vec())
    }
}

/// Output of [`DenoiserModel::condition`].
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioning {
    cnf: Vec<f64>,
    cloud: Vec<f64>,
}

fn check_noisy(graph: &HeteroGraph, y_t: &[f64]) -> Result<()> {
    let (c, f) = (graph.num_clouds, graph.num_cnfs);
    if y_t.len() != f * c {
        return Err(Error::ShapeMismatch {
            op: "denoiser",
            detail: format!("noisy matrix of {} for {f}x{c}", y_t.len()),
        });
    }
    Ok(())
}
