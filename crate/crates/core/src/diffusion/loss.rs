//! Differentiable constraint penalties over a row-stochastic assignment
//! matrix `P` (`F x C`, row-major), with analytic gradients `dL/dP`.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::graph::HeteroGraph;
use crate::eval::PositionIndex;
use crate::math::ln;
use crate::model::Instance;
use crate::{Error, Result, FEASIBILITY_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub cap: f64,
    pub rest: f64,
    pub adj: f64,
    pub bw: f64,
    pub delay: f64,
    pub place: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            cap: 1.0,
            rest: 1.0,
            adj: 1.0,
            bw: 1.0,
            delay: 1.0,
            place: 1.0,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        LossWeights {
            cap: 0.0,
            rest: 0.0,
            adj: 0.0,
            bw: 0.0,
            delay: 0.0,
            place: 0.0,
        }
    }

    pub fn as_array(&self) -> [f64; 6] {
        [self.cap, self.rest, self.adj, self.bw, self.delay, self.place]
    }

    pub fn is_zero(&self) -> bool {
        self.as_array().iter().all(|&w| w == 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(Error::BadConfig("loss weights must be finite and non-negative".into()))
        }
    }
}

/// Values and gradients of the six penalties, in the order
/// cap, rest, adj, bw, delay, place.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintLosses {
    pub values: [f64; 6],
    pub grads: [Vec<f64>; 6],
}

impl ConstraintLosses {
    pub fn cap(&self) -> f64 {
        self.values[0]
    }
    pub fn rest(&self) -> f64 {
        self.values[1]
    }
    pub fn adj(&self) -> f64 {
        self.values[2]
    }
    pub fn bw(&self) -> f64 {
        self.values[3]
    }
    pub fn delay(&self) -> f64 {
        self.values[4]
    }
    pub fn place(&self) -> f64 {
        self.values[5]
    }

    /// `Σ λ_k·L_k` and its gradient.
    pub fn weighted(&self, weights: &LossWeights) -> (f64, Vec<f64>) {
        let w = weights.as_array();
        let n = self.grads[0].len();
        let mut grad = vec![0.0; n];
        let mut value = 0.0;
        for k in 0..6 {
            if w[k] == 0.0 {
                continue;
            }
            value += w[k] * self.values[k];
            for (g, &d) in grad.iter_mut().zip(&self.grads[k]) {
                *g += w[k] * d;
            }
        }
        (value, grad)
    }
}

/// Excess above the feasibility tolerance, or zero.
#[inline]
fn excess(used: f64, cap: f64) -> f64 {
    let d = used - cap;
    if d > FEASIBILITY_TOL {
        d
    } else {
        0.0
    }
}

/// Divisor for bandwidth excess: the mean positive link capacity.
pub fn bandwidth_scale(instance: &Instance) -> f64 {
    let net = &instance.network;
    let c = instance.num_clouds();
    let (mut sum, mut n) = (0.0, 0usize);
    for i in 0..c {
        for j in 0..c {
            if i != j && net.bandwidth[i][j] > 0.0 {
                sum += net.bandwidth[i][j];
                n += 1;
            }
        }
    }
    if n == 0 {
        1.0
    } else {
        sum / n as f64
    }
}

fn positive_or_one(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        1.0
    }
}

/// Expected-violation penalties of `P`.
///
/// * cap: `Σ_i excess(load_i - cap_i)/cap_i` for CPU and RAM.
/// * rest: probability mass on forbidden pairs.
/// * adj: `Σ_{edges} Σ_{non-adjacent i,j} P_ai·P_bj`.
/// * bw: `Σ_{i≠j} excess(Σ rate·P_ai·P_bj - c_ij)` over the mean capacity.
/// * delay: `Σ_h excess(D_h - τ_h)/τ_h` where `D_h` is the longest path
///   with expected hop delays over adjacent cloud pairs.
/// * place: mean row entropy.
pub fn constraint_losses(instance: &Instance, graph: &HeteroGraph, p: &[f64]) -> Result<ConstraintLosses> {
    let c = graph.num_clouds;
    let f = graph.num_cnfs;
    if p.len() != f * c {
        return Err(Error::ShapeMismatch {
            op: "constraint_losses",
            detail: alloc::format!("{} entries for {f}x{c}", p.len()),
        });
    }
    let net = &instance.network;
    let index = PositionIndex::new(instance);
    let mut grads: [Vec<f64>; 6] = core::array::from_fn(|_| vec![0.0; f * c]);
    let mut values = [0.0; 6];

    // Capacity.
    for i in 0..c {
        let caps = [net.cpu_capacity[i], net.ram_capacity[i]];
        for (r, &cap) in caps.iter().enumerate() {
            let demand = |row: usize| {
                let cnf = &instance.cnf_catalog[index.cnf_type(row)];
                if r == 0 {
                    cnf.cpu_demand
                } else {
                    cnf.ram_demand
                }
            };
            let load: f64 = (0..f).map(|row| p[row * c + i] * demand(row)).sum();
            let ex = excess(load, cap);
            if ex > 0.0 {
                let scale = positive_or_one(cap);
                values[0] += ex / scale;
                for row in 0..f {
                    grads[0][row * c + i] += demand(row) / scale;
                }
            }
        }
    }

    // Restriction.
    for k in 0..f * c {
        if !graph.mask[k] {
            values[1] += p[k];
            grads[1][k] += 1.0;
        }
    }

    // Adjacency and bandwidth.
    let mut load = vec![vec![0.0; c]; c];
    for (h, sfc) in instance.sfcs.iter().enumerate() {
        for e in &sfc.edges {
            let (a, b) = (index.row(h, e.from), index.row(h, e.to));
            for i in 0..c {
                for j in 0..c {
                    let pp = p[a * c + i] * p[b * c + j];
                    if !net.adjacent(i, j) {
                        values[2] += pp;
                        grads[2][a * c + i] += p[b * c + j];
                        grads[2][b * c + j] += p[a * c + i];
                    }
                    if i != j {
                        load[i][j] += e.rate * pp;
                    }
                }
            }
        }
    }
    let bw_scale = bandwidth_scale(instance);
    for i in 0..c {
        for j in 0..c {
            if i == j {
                continue;
            }
            let ex = excess(load[i][j], net.bandwidth[i][j]);
            if ex == 0.0 {
                continue;
            }
            values[3] += ex / bw_scale;
            for (h, sfc) in instance.sfcs.iter().enumerate() {
                for e in &sfc.edges {
                    let (a, b) = (index.row(h, e.from), index.row(h, e.to));
                    grads[3][a * c + i] += e.rate * p[b * c + j] / bw_scale;
                    grads[3][b * c + j] += e.rate * p[a * c + i] / bw_scale;
                }
            }
        }
    }

    // Delay.
    for (h, sfc) in instance.sfcs.iter().enumerate() {
        let n = sfc.len();
        let incoming = sfc.in_edges();
        let mut dist = vec![0.0f64; n];
        let mut via: Vec<Option<usize>> = vec![None; n];
        for j in 0..n {
            let mut arrive = 0.0f64;
            for &ei in &incoming[j] {
                let e = sfc.edges[ei];
                let hop = expected_hop(instance, p, c, index.row(h, e.from), index.row(h, j));
                let cand = dist[e.from] + hop;
                if via[j].is_none() || cand > arrive {
                    arrive = cand;
                    via[j] = Some(ei);
                }
            }
            dist[j] = arrive + instance.cnf_catalog[sfc.nodes[j]].proc_delay;
        }
        let Some(end) = (0..n).max_by(|&x, &y| dist[x].total_cmp(&dist[y]).then(y.cmp(&x))) else {
            continue;
        };
        let ex = excess(dist[end], sfc.delay_budget);
        if ex == 0.0 {
            continue;
        }
        let scale = positive_or_one(sfc.delay_budget);
        values[4] += ex / scale;
        let mut node = end;
        while let Some(ei) = via[node] {
            let e = sfc.edges[ei];
            let (a, b) = (index.row(h, e.from), index.row(h, e.to));
            for i in 0..c {
                for j in 0..c {
                    if i != j && net.adjacent(i, j) {
                        let d = instance.message_size / net.link_capacity(i, j) / scale;
                        grads[4][a * c + i] += p[b * c + j] * d;
                        grads[4][b * c + j] += p[a * c + i] * d;
                    }
                }
            }
            node = e.from;
        }
    }

    // Entropy.
    if f > 0 {
        for k in 0..f * c {
            if p[k] > 0.0 {
                let l = ln(p[k]);
                values[5] -= p[k] * l;
                grads[5][k] = -(l + 1.0) / f as f64;
            }
        }
        values[5] /= f as f64;
    }

    Ok(ConstraintLosses { values, grads })
}

fn expected_hop(instance: &Instance, p: &[f64], c: usize, a: usize, b: usize) -> f64 {
    let net = &instance.network;
    let mut d = 0.0;
    for i in 0..c {
        for j in 0..c {
            if i != j && net.adjacent(i, j) {
                d += p[a * c + i] * p[b * c + j] * instance.message_size / net.link_capacity(i, j);
            }
        }
    }
    d
}
