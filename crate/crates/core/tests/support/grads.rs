//! Finite-difference gradient cases for each network path. Each function
//! returns the worst relative error over `SHAPES` random shapes.

use cnfdiff_core::diffusion::{build_hetero_graph, DenoiserModel, HeteroGraph, ModelConfig};
use cnfdiff_core::gen::{generate_instance, GenConfig};
use cnfdiff_core::nn::{Dense, EdgeList, Mlp, ParamStore, Sage};
use cnfdiff_core::rng::stream;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{check_input_grads, check_param_grads, readout};

pub const H: f64 = 1e-6;
pub const SHAPES: u64 = 12;

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Moves every parameter off zero so rectifiers are not evaluated at a kink.
fn jitter(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    let ids: Vec<_> = store.iter().map(|(id, _, _)| id).collect();
    for id in ids {
        for v in store.get_mut(id).data_mut() {
            *v = rng.random_range(-0.8..0.8);
        }
    }
}

pub fn dense() -> f64 {
    let mut worst = 0.0f64;
    for s in 0..SHAPES {
        let mut rng = stream(100, s);
        let (n, i, o) = (rng.random_range(1..6), rng.random_range(1..7), rng.random_range(1..6));
        let mut store = ParamStore::new();
        let layer = Dense::new(&mut store, "d", i, o, &mut rng);
        jitter(&mut store, &mut rng);
        let x = normal_vec(&mut rng, n * i);
        let r = normal_vec(&mut rng, n * o);
        let err = check_param_grads(&mut store, H, |tape| {
            let xv = tape.constant(n, i, x.clone())?;
            let y = layer.forward(tape, xv)?;
            readout(tape, y, &r)
        });
        worst = worst.max(err);
        let err = check_input_grads(&store, &x, H, |tape, v, g| {
            let xv = tape.leaf(n, i, v.to_vec(), g)?;
            let y = layer.forward(tape, xv)?;
            Ok((xv, readout(tape, y, &r)?))
        });
        worst = worst.max(err);
    }
    worst
}

pub fn mlp() -> f64 {
    let mut worst = 0.0f64;
    for s in 0..SHAPES {
        let mut rng = stream(200, s);
        let depth = rng.random_range(2..5);
        let dims: Vec<usize> = (0..depth).map(|_| rng.random_range(1..6)).collect();
        let n = rng.random_range(1..5);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", &dims, &mut rng);
        jitter(&mut store, &mut rng);
        let x = normal_vec(&mut rng, n * dims[0]);
        let r = normal_vec(&mut rng, n * dims[depth - 1]);
        let err = check_param_grads(&mut store, H, |tape| {
            let xv = tape.constant(n, dims[0], x.clone())?;
            let y = mlp.forward(tape, xv)?;
            readout(tape, y, &r)
        });
        worst = worst.max(err);
    }
    worst
}

fn random_edges(rng: &mut ChaCha8Rng, n_src: usize, n_dst: usize) -> EdgeList {
    let m = rng.random_range(0..(2 * n_src * n_dst).max(1));
    let pairs: Vec<(usize, usize)> = (0..m)
        .map(|_| (rng.random_range(0..n_src), rng.random_range(0..n_dst)))
        .collect();
    EdgeList::new(&pairs)
}

pub fn sage_with_edge_attributes() -> f64 {
    let mut worst = 0.0f64;
    for s in 0..SHAPES {
        let mut rng = stream(300, s);
        let n = rng.random_range(1..6);
        let (d_in, d_e, d_out) = (rng.random_range(1..5), rng.random_range(1..4), rng.random_range(1..5));
        let edges = random_edges(&mut rng, n, n);
        let m = edges.len();
        let mut store = ParamStore::new();
        let layer = Sage::new(&mut store, "s", d_in, d_e, d_out, &mut rng);
        jitter(&mut store, &mut rng);
        let h = normal_vec(&mut rng, n * d_in);
        let attr = normal_vec(&mut rng, m * d_e);
        let r = normal_vec(&mut rng, n * d_out);
        let err = check_param_grads(&mut store, H, |tape| {
            let hv = tape.constant(n, d_in, h.clone())?;
            let av = tape.constant(m, d_e, attr.clone())?;
            let y = layer.forward(tape, hv, hv, &edges, Some(av), true)?;
            readout(tape, y, &r)
        });
        worst = worst.max(err);
        let err = check_input_grads(&store, &h, H, |tape, v, g| {
            let hv = tape.leaf(n, d_in, v.to_vec(), g)?;
            let av = tape.constant(m, d_e, attr.clone())?;
            let y = layer.forward(tape, hv, hv, &edges, Some(av), true)?;
            Ok((hv, readout(tape, y, &r)?))
        });
        worst = worst.max(err);
        if m > 0 {
            let err = check_input_grads(&store, &attr, H, |tape, v, g| {
                let hv = tape.constant(n, d_in, h.clone())?;
                let av = tape.leaf(m, d_e, v.to_vec(), g)?;
                let y = layer.forward(tape, hv, hv, &edges, Some(av), true)?;
                Ok((av, readout(tape, y, &r)?))
            });
            worst = worst.max(err);
        }
    }
    worst
}

pub fn bipartite_sage() -> f64 {
    let mut worst = 0.0f64;
    for s in 0..SHAPES {
        let mut rng = stream(350, s);
        let (n_src, n_dst, d, o) = (
            rng.random_range(1..5),
            rng.random_range(1..5),
            rng.random_range(1..4),
            rng.random_range(1..4),
        );
        let edges = random_edges(&mut rng, n_src, n_dst);
        let mut store = ParamStore::new();
        let layer = Sage::new(&mut store, "x", d, 0, o, &mut rng);
        jitter(&mut store, &mut rng);
        let hs = normal_vec(&mut rng, n_src * d);
        let hd = normal_vec(&mut rng, n_dst * d);
        let r = normal_vec(&mut rng, n_dst * o);
        let err = check_param_grads(&mut store, H, |tape| {
            let a = tape.constant(n_src, d, hs.clone())?;
            let b = tape.constant(n_dst, d, hd.clone())?;
            let y = layer.forward(tape, a, b, &edges, None, false)?;
            readout(tape, y, &r)
        });
        worst = worst.max(err);
    }
    worst
}

pub fn time_embedding() -> f64 {
    let mut worst = 0.0f64;
    for s in 0..SHAPES {
        let mut rng = stream(400, s);
        let d = rng.random_range(1..8);
        let sigma: f64 = rng.random_range(0.01..1.0);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "time", &[1, d, d], &mut rng);
        jitter(&mut store, &mut rng);
        let r = normal_vec(&mut rng, d);
        let err = check_param_grads(&mut store, H, |tape| {
            let t = tape.constant(1, 1, vec![sigma.ln()])?;
            let e = mlp.forward(tape, t)?;
            readout(tape, e, &r)
        });
        worst = worst.max(err);
    }
    worst
}

fn tiny_graph(seed: u64) -> HeteroGraph {
    let cfg = GenConfig {
        seed,
        ..GenConfig::tiny()
    };
    let inst = generate_instance(&cfg).unwrap();
    build_hetero_graph(&inst).unwrap()
}

/// Full denoiser: covers the time embedding as it enters the encoders, the
/// cross layers and the pairwise decoder.
pub fn denoiser() -> f64 {
    let mut worst = 0.0f64;
    for s in 0..SHAPES {
        let mut rng = stream(500, s);
        let g = tiny_graph(s);
        let cfg = ModelConfig {
            hidden: rng.random_range(2..5),
            embed: rng.random_range(1..3),
        };
        let mut model = DenoiserModel::new(cfg, s);
        jitter(&mut model.params, &mut rng);
        let cells = g.num_cnfs * g.num_clouds;
        let y: Vec<f64> = normal_vec(&mut rng, cells)
            .into_iter()
            .zip(&g.mask)
            .map(|(v, &m)| if m { v } else { 0.0 })
            .collect();
        let r = normal_vec(&mut rng, cells);
        let sigma = rng.random_range(0.05..1.0);
        let mut params = std::mem::take(&mut model.params);
        let err = check_param_grads(&mut params, H, |tape| {
            let out = model.forward(tape, &g, &y, sigma)?;
            readout(tape, out, &r)
        });
        worst = worst.max(err);
    }
    worst
}
