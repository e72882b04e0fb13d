use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::eval::PositionIndex;
use crate::math::sqrt;
use crate::model::Instance;
use crate::nn::EdgeList;
use crate::{Error, Result};

pub const CLOUD_FEATS: usize = 3;
pub const CNF_FEATS: usize = 3;
pub const CC_ATTRS: usize = 1;
pub const TT_ATTRS: usize = 4;

/// Cloud categories: hosts every catalogue type, or a strict subset.
pub const CLOUD_TYPE_COUNT: usize = 2;
/// CNF categories: allowed everywhere, pinned to one cloud, or a subset.
pub const RESTRICTION_COUNT: usize = 3;

/// Input transform of one feature column: `(x - mean) / std`. Resource
/// columns use `mean = 0` and a shared scale as `std`. A column with
/// `std == 0` maps to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub std: f64,
}

/// Two-node-type encoding of an instance.
///
/// Raw feature matrices are kept next to their normalized versions
/// (`*_input`), which are what the network consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct HeteroGraph {
    pub num_clouds: usize,
    pub num_cnfs: usize,
    /// `[cpu capacity, ram capacity, mean placement cost]` per cloud.
    pub cloud_feats: Vec<f64>,
    pub cloud_type_ids: Vec<usize>,
    /// `[cpu demand, ram demand, processing delay]` per CNF position.
    pub cnf_feats: Vec<f64>,
    pub cnf_restriction_ids: Vec<usize>,
    /// Directed cloud links `i -> j` with attribute `[capacity]`.
    pub cc_edges: EdgeList,
    pub cc_attrs: Vec<f64>,
    /// Chain edges with `[rate, delay budget, sfc, hop]`; the hop index is
    /// the source position inside its SFC.
    pub tt_edges: EdgeList,
    pub tt_attrs: Vec<f64>,
    /// CNF -> cloud over allowed pairs, row-major in (cnf, cloud).
    pub tc_edges: EdgeList,
    pub ct_edges: EdgeList,
    /// Row-major `F x C`, `true` where the pair is allowed.
    pub mask: Vec<bool>,
    pub cloud_stats: Vec<ColumnStats>,
    pub cnf_stats: Vec<ColumnStats>,
    pub cc_stats: Vec<ColumnStats>,
    pub tt_stats: Vec<ColumnStats>,
    pub cloud_input: Vec<f64>,
    pub cnf_input: Vec<f64>,
    pub cc_input: Vec<f64>,
    pub tt_input: Vec<f64>,
}

impl HeteroGraph {
    /// Flat indices of allowed cells, row-major.
    pub fn allowed_cells(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&k| self.mask[k]).collect()
    }
}

fn column_stats(data: &[f64], cols: usize) -> Vec<ColumnStats> {
    let rows = data.len().checked_div(cols).unwrap_or(0);
    (0..cols)
        .map(|j| {
            if rows == 0 {
                return ColumnStats { mean: 0.0, std: 0.0 };
            }
            let mean = (0..rows).map(|r| data[r * cols + j]).sum::<f64>() / rows as f64;
            let var = (0..rows)
                .map(|r| {
                    let d = data[r * cols + j] - mean;
                    d * d
                })
                .sum::<f64>()
                / rows as f64;
            ColumnStats { mean, std: sqrt(var) }
        })
        .collect()
}

/// Pure division by `scale`, recorded in the same form as a standardization.
fn ratio(scale: f64) -> ColumnStats {
    ColumnStats { mean: 0.0, std: scale }
}

fn apply(data: &[f64], stats: &[ColumnStats]) -> Vec<f64> {
    let cols = stats.len();
    data.iter()
        .enumerate()
        .map(|(k, &x)| {
            let s = stats[k % cols];
            if s.std > 1e-12 {
                (x - s.mean) / s.std
            } else {
                0.0
            }
        })
        .collect()
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn build_hetero_graph(instance: &Instance) -> Result<HeteroGraph> {
    let net = &instance.network;
    let c = instance.num_clouds();
    let m = instance.cnf_catalog.len();
    let index = PositionIndex::new(instance);
    let f = index.len();

    let mut cloud_feats = Vec::with_capacity(c * CLOUD_FEATS);
    let mut cloud_type_ids = Vec::with_capacity(c);
    for i in 0..c {
        let mean_cost = if m == 0 {
            0.0
        } else {
            instance.placement_cost[i].iter().sum::<f64>() / m as f64
        };
        cloud_feats.extend([net.cpu_capacity[i], net.ram_capacity[i], mean_cost]);
        let hosts_all = (0..m).all(|t| net.allows(i, t));
        cloud_type_ids.push(if hosts_all { 0 } else { 1 });
    }

    let mut mask = vec![false; f * c];
    let mut cnf_feats = Vec::with_capacity(f * CNF_FEATS);
    let mut cnf_restriction_ids = Vec::with_capacity(f);
    let mut tc = Vec::new();
    for row in 0..f {
        let ty = index.cnf_type(row);
        let cnf = &instance.cnf_catalog[ty];
        cnf_feats.extend([cnf.cpu_demand, cnf.ram_demand, cnf.proc_delay]);
        let mut allowed = 0;
        for i in 0..c {
            if net.allows(i, ty) {
                mask[row * c + i] = true;
                tc.push((row, i));
                allowed += 1;
            }
        }
        if allowed == 0 {
            return Err(Error::UnplaceableCnf(row));
        }
        cnf_restriction_ids.push(match allowed {
            a if a == c => 0,
            1 => 1,
            _ => 2,
        });
    }

    let mut cc = Vec::new();
    let mut cc_attrs = Vec::new();
    for i in 0..c {
        for j in 0..c {
            if i != j && net.adjacent(i, j) {
                cc.push((i, j));
                cc_attrs.push(net.bandwidth[i][j]);
            }
        }
    }

    let mut tt = Vec::new();
    let mut tt_attrs = Vec::new();
    for (h, sfc) in instance.sfcs.iter().enumerate() {
        for e in &sfc.edges {
            tt.push((index.row(h, e.from), index.row(h, e.to)));
            tt_attrs.extend([e.rate, sfc.delay_budget, h as f64, e.from as f64]);
        }
    }

    // Resource columns are divided by a scale shared across node types so
    // demand can be compared with capacity; capacities are measured against
    // the total demand of the instance. Everything else is standardized.
    let total = |col: usize| (0..f).map(|r| cnf_feats[r * CNF_FEATS + col]).sum::<f64>();
    let mean_cap = |col: usize| mean((0..c).map(|i| cloud_feats[i * CLOUD_FEATS + col]));
    let mean_bw = mean(cc_attrs.iter().copied());

    let mut cloud_stats = column_stats(&cloud_feats, CLOUD_FEATS);
    cloud_stats[0] = ratio(total(0));
    cloud_stats[1] = ratio(total(1));
    let mut cnf_stats = column_stats(&cnf_feats, CNF_FEATS);
    cnf_stats[0] = ratio(mean_cap(0));
    cnf_stats[1] = ratio(mean_cap(1));
    let cc_stats = vec![ratio(mean_bw)];
    let mut tt_stats = column_stats(&tt_attrs, TT_ATTRS);
    tt_stats[0] = ratio(mean_bw);

    let tc_edges = EdgeList::new(&tc);
    let cloud_input = apply(&cloud_feats, &cloud_stats);
    let cnf_input = apply(&cnf_feats, &cnf_stats);
    let cc_input = apply(&cc_attrs, &cc_stats);
    let tt_input = apply(&tt_attrs, &tt_stats);
    Ok(HeteroGraph {
        num_clouds: c,
        num_cnfs: f,
        cloud_feats,
        cloud_type_ids,
        cnf_feats,
        cnf_restriction_ids,
        cc_edges: EdgeList::new(&cc),
        cc_attrs,
        tt_edges: EdgeList::new(&tt),
        tt_attrs,
        ct_edges: tc_edges.reversed(),
        tc_edges,
        mask,
        cloud_stats,
        cnf_stats,
        cc_stats,
        tt_stats,
        cloud_input,
        cnf_input,
        cc_input,
        tt_input,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::*;
    use crate::model::Sfc;

    #[test]
    fn two_clouds_give_both_directions() {
        let mut net = mesh(2, 5.0, 5.0, 0.0, 1);
        net.bandwidth[0][1] = 30.0;
        net.bandwidth[1][0] = 40.0;
        net.directed = true;
        let inst = instance(net, vec![cnf(1.0, 1.0, 1.0)], vec![Sfc::chain(vec![0], 1.0, 10.0)]);
        let g = build_hetero_graph(&inst).unwrap();
        assert_eq!(g.cc_edges, EdgeList::new(&[(0, 1), (1, 0)]));
        assert_eq!(g.cc_attrs, vec![30.0, 40.0]);
    }

    #[test]
    fn pinned_cnf_has_one_hot_mask_row() {
        let mut net = mesh(3, 5.0, 5.0, 10.0, 2);
        net.allowed_types = vec![vec![0, 1], vec![0], vec![0]];
        let inst = instance(
            net,
            vec![cnf(1.0, 1.0, 1.0), cnf(1.0, 1.0, 1.0)],
            vec![Sfc::chain(vec![0, 1], 1.0, 10.0)],
        );
        let g = build_hetero_graph(&inst).unwrap();
        assert_eq!(&g.mask[3..6], &[true, false, false]);
        assert_eq!(g.tc_edges.src.iter().filter(|&&r| r == 1).count(), 1);
        assert_eq!(g.cnf_restriction_ids, vec![0, 1]);
        assert_eq!(g.cloud_type_ids, vec![0, 1, 1]);
    }

    #[test]
    fn chain_edges_carry_hop_index() {
        let inst = instance(
            mesh(2, 5.0, 5.0, 10.0, 1),
            vec![cnf(1.0, 1.0, 1.0)],
            vec![Sfc::chain(vec![0; 3], 7.0, 20.0)],
        );
        let g = build_hetero_graph(&inst).unwrap();
        assert_eq!(g.tt_edges, EdgeList::new(&[(0, 1), (1, 2)]));
        assert_eq!(g.tt_attrs, vec![7.0, 20.0, 0.0, 0.0, 7.0, 20.0, 0.0, 1.0]);
    }

    #[test]
    fn unplaceable_cnf_rejected() {
        let mut net = mesh(2, 5.0, 5.0, 10.0, 2);
        net.allowed_types = vec![vec![0], vec![0]];
        let inst = instance(
            net,
            vec![cnf(1.0, 1.0, 1.0), cnf(1.0, 1.0, 1.0)],
            vec![Sfc::chain(vec![0, 1], 1.0, 10.0)],
        );
        assert_eq!(build_hetero_graph(&inst), Err(Error::UnplaceableCnf(1)));
    }

    #[test]
    fn standardized_columns_are_centred() {
        let stats = column_stats(&[1.0, 5.0, 3.0, 5.0], 2);
        assert_eq!(stats[0], ColumnStats { mean: 2.0, std: 1.0 });
        assert_eq!(apply(&[1.0, 5.0, 3.0, 5.0], &stats), vec![-1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn resources_share_a_scale() {
        let inst = instance(
            mesh(2, 6.0, 4.0, 10.0, 1),
            vec![cnf(1.0, 2.0, 1.0)],
            vec![Sfc::chain(vec![0; 3], 5.0, 20.0)],
        );
        let g = build_hetero_graph(&inst).unwrap();
        // capacity over total demand, demand over mean capacity
        assert_eq!(&g.cloud_input[..2], &[2.0, 4.0 / 6.0]);
        assert_eq!(&g.cnf_input[..2], &[1.0 / 6.0, 0.5]);
        assert_eq!(g.cc_input, vec![1.0, 1.0]);
        assert_eq!(g.tt_input[0], 0.5);
    }
}
