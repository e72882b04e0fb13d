//! Domain model: the cloud graph, the CNF catalog, service chains, full
//! problem instances and binary placements.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Clouds, their capacities, the links between them and the CNF types each
/// cloud is willing to host.
///
/// `bandwidth[i][j] > 0` means a direct link from `i` to `j`. The diagonal is
/// ignored: a cloud always talks to itself at unlimited rate and zero delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudNetwork {
    pub cpu_capacity: Vec<f64>,
    pub ram_capacity: Vec<f64>,
    pub bandwidth: Vec<Vec<f64>>,
    pub allowed_types: Vec<Vec<usize>>,
    #[serde(default)]
    pub directed: bool,
}

impl CloudNetwork {
    pub fn num_clouds(&self) -> usize {
        self.cpu_capacity.len()
    }

    /// Direct link (or same cloud).
    #[inline]
    pub fn adjacent(&self, from: usize, to: usize) -> bool {
        from == to || self.bandwidth[from][to] > 0.0
    }

    /// Link capacity; `f64::INFINITY` on the diagonal.
    #[inline]
    pub fn link_capacity(&self, from: usize, to: usize) -> f64 {
        if from == to {
            f64::INFINITY
        } else {
            self.bandwidth[from][to]
        }
    }

    pub fn adjacency(&self) -> Vec<Vec<bool>> {
        let n = self.num_clouds();
        (0..n)
            .map(|i| (0..n).map(|j| self.adjacent(i, j)).collect())
            .collect()
    }

    pub fn allows(&self, cloud: usize, cnf_type: usize) -> bool {
        self.allowed_types[cloud].contains(&cnf_type)
    }

    /// Every cloud reaches every other cloud over direct links.
    pub fn is_connected(&self) -> bool {
        let n = self.num_clouds();
        if n == 0 {
            return true;
        }
        let reach = |forward: bool| {
            let mut seen = vec![false; n];
            let mut stack = vec![0usize];
            seen[0] = true;
            while let Some(u) = stack.pop() {
                for v in 0..n {
                    let linked = if forward {
                        self.bandwidth[u][v] > 0.0
                    } else {
                        self.bandwidth[v][u] > 0.0
                    };
                    if linked && !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
            seen.iter().all(|&s| s)
        };
        reach(true) && reach(false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnfType {
    pub cpu_demand: f64,
    pub ram_demand: f64,
    /// Processing delay in seconds.
    pub proc_delay: f64,
}

/// Directed DAG edge between two positions of one chain, with its rate in
/// bits/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SfcEdge {
    pub from: usize,
    pub to: usize,
    pub rate: f64,
}

/// A service function chain. `nodes[j]` is the CNF type at position `j`;
/// positions are stored in topological order so every edge points forward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sfc {
    pub nodes: Vec<usize>,
    pub edges: Vec<SfcEdge>,
    pub delay_budget: f64,
}

impl Sfc {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A linear chain `0 -> 1 -> ... -> n-1` with a constant rate.
    pub fn chain(nodes: Vec<usize>, rate: f64, delay_budget: f64) -> Self {
        let edges = (1..nodes.len())
            .map(|j| SfcEdge {
                from: j - 1,
                to: j,
                rate,
            })
            .collect();
        Sfc {
            nodes,
            edges,
            delay_budget,
        }
    }

    /// Incoming edge indices per position.
    pub fn in_edges(&self) -> Vec<Vec<usize>> {
        let mut incoming = vec![Vec::new(); self.len()];
        for (e, edge) in self.edges.iter().enumerate() {
            incoming[edge.to].push(e);
        }
        incoming
    }

    pub fn out_degree(&self) -> Vec<usize> {
        let mut deg = vec![0; self.len()];
        for edge in &self.edges {
            deg[edge.from] += 1;
        }
        deg
    }

    fn validate(&self, h: usize, num_types: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInstance(format!("sfc {h}: {msg}")));
        if self.nodes.is_empty() {
            return bad("no cnf positions".into());
        }
        if let Some(&t) = self.nodes.iter().find(|&&t| t >= num_types) {
            return bad(format!("unknown cnf type {t}"));
        }
        if !(self.delay_budget >= 0.0 && self.delay_budget.is_finite()) {
            return bad(format!("delay budget {} not finite and >= 0", self.delay_budget));
        }
        let n = self.len();
        let mut seen = alloc::collections::BTreeSet::new();
        for e in &self.edges {
            if e.from >= e.to || e.to >= n {
                return bad(format!(
                    "edge {}->{} is not forward in topological order",
                    e.from, e.to
                ));
            }
            if !(e.rate >= 0.0 && e.rate.is_finite()) {
                return bad(format!("edge {}->{} has rate {}", e.from, e.to, e.rate));
            }
            if !seen.insert((e.from, e.to)) {
                return bad(format!("duplicate edge {}->{}", e.from, e.to));
            }
        }
        let indeg = self.in_edges();
        let outdeg = self.out_degree();
        let roots = (0..n).filter(|&j| indeg[j].is_empty()).count();
        let sinks = (0..n).filter(|&j| outdeg[j] == 0).count();
        if roots != 1 || sinks != 1 {
            return bad(format!("expected one root and one sink, found {roots} and {sinks}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub seed: u64,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub network: CloudNetwork,
    pub cnf_catalog: Vec<CnfType>,
    pub sfcs: Vec<Sfc>,
    /// `placement_cost[cloud][type]`.
    pub placement_cost: Vec<Vec<f64>>,
    /// Message size in bits used for transmission delays.
    pub message_size: f64,
    #[serde(default)]
    pub meta: InstanceMeta,
}

impl Instance {
    pub fn num_clouds(&self) -> usize {
        self.network.num_clouds()
    }

    pub fn num_positions(&self) -> usize {
        self.sfcs.iter().map(Sfc::len).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInstance(msg));
        let net = &self.network;
        let c = net.num_clouds();
        let m = self.cnf_catalog.len();
        if c == 0 {
            return bad("no clouds".into());
        }
        if net.ram_capacity.len() != c || net.allowed_types.len() != c || net.bandwidth.len() != c
        {
            return bad("per-cloud arrays disagree on the number of clouds".into());
        }
        if net.bandwidth.iter().any(|row| row.len() != c) {
            return bad("bandwidth matrix is not square".into());
        }
        for i in 0..c {
            for (what, v) in [("cpu", net.cpu_capacity[i]), ("ram", net.ram_capacity[i])] {
                if !(v >= 0.0 && v.is_finite()) {
                    return bad(format!("cloud {i} {what} capacity {v}"));
                }
            }
            for j in 0..c {
                let b = net.bandwidth[i][j];
                if !(b >= 0.0 && b.is_finite()) {
                    return bad(format!("bandwidth[{i}][{j}] = {b}"));
                }
                if !net.directed && b != net.bandwidth[j][i] {
                    return bad(format!("bandwidth[{i}][{j}] != bandwidth[{j}][{i}]"));
                }
            }
            if let Some(&t) = net.allowed_types[i].iter().find(|&&t| t >= m) {
                return bad(format!("cloud {i} allows unknown type {t}"));
            }
        }
        if !net.is_connected() {
            return bad("cloud graph is not connected".into());
        }
        for (t, cnf) in self.cnf_catalog.iter().enumerate() {
            for (what, v) in [
                ("cpu", cnf.cpu_demand),
                ("ram", cnf.ram_demand),
                ("delay", cnf.proc_delay),
            ] {
                if !(v >= 0.0 && v.is_finite()) {
                    return bad(format!("cnf type {t} {what} = {v}"));
                }
            }
        }
        if self.placement_cost.len() != c || self.placement_cost.iter().any(|r| r.len() != m) {
            return bad("placement cost matrix must be clouds x types".into());
        }
        if self
            .placement_cost
            .iter()
            .flatten()
            .any(|&v| !(v >= 0.0 && v.is_finite()))
        {
            return bad("placement costs must be finite and >= 0".into());
        }
        if !(self.message_size > 0.0 && self.message_size.is_finite()) {
            return bad(format!("message size {}", self.message_size));
        }
        for (h, sfc) in self.sfcs.iter().enumerate() {
            sfc.validate(h, m)?;
        }
        Ok(())
    }
}

/// Binary assignment matrix over flattened CNF positions (rows) and clouds
/// (columns), stored row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Placement {
    rows: usize,
    cols: usize,
    cells: Vec<u8>,
}

impl Placement {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Placement {
            rows,
            cols,
            cells: vec![0; rows * cols],
        }
    }

    /// One-hot rows from a cloud index per position.
    pub fn from_assignment(assignment: &[usize], cols: usize) -> Self {
        let mut p = Self::zeros(assignment.len(), cols);
        for (r, &c) in assignment.iter().enumerate() {
            p.set(r, c, true);
        }
        p
    }

    /// Builds a placement from a row-major 0/1 matrix.
    pub fn from_cells(rows: usize, cols: usize, cells: Vec<u8>) -> Result<Self> {
        if cells.len() != rows * cols || cells.iter().any(|&v| v > 1) {
            return Err(Error::ShapeMismatch {
                op: "placement",
                detail: format!("{} cells for {rows}x{cols} binary matrix", cells.len()),
            });
        }
        Ok(Placement { rows, cols, cells })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.cols + col] != 0
    }

    pub fn set(&mut self, row: usize, col: usize, on: bool) {
        self.cells[row * self.cols + col] = on as u8;
    }

    pub fn row_sum(&self, row: usize) -> usize {
        self.cells[row * self.cols..(row + 1) * self.cols]
            .iter()
            .map(|&v| v as usize)
            .sum()
    }

    /// Hosting cloud of a row when the row is one-hot.
    pub fn cloud_of(&self, row: usize) -> Option<usize> {
        if self.row_sum(row) != 1 {
            return None;
        }
        (0..self.cols).find(|&c| self.get(row, c))
    }

    /// Cloud per row; fails on the first row that is not one-hot.
    pub fn assignment(&self) -> Result<Vec<usize>> {
        (0..self.rows)
            .map(|r| {
                self.cloud_of(r).ok_or(Error::IncompletePlacement {
                    row: r,
                    sum: self.row_sum(r),
                })
            })
            .collect()
    }

    pub fn is_complete(&self) -> bool {
        (0..self.rows).all(|r| self.row_sum(r) == 1)
    }

    pub(crate) fn check_shape(&self, rows: usize, cols: usize) -> Result<()> {
        if self.rows != rows || self.cols != cols {
            return Err(Error::PlacementShape {
                rows: self.rows,
                cols: self.cols,
                expected_rows: rows,
                expected_cols: cols,
            });
        }
        Ok(())
    }
}
