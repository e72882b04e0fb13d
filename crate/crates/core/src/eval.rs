//! Exact evaluators over placements: cost, resource usage, chain delay and
//! the full constraint check.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::model::{Instance, Placement};
use crate::{Error, Result, FEASIBILITY_TOL};

/// Bijection between `(sfc, position)` pairs and flattened placement rows.
///
/// Rows are ordered by SFC first, then by topological position inside the
/// SFC.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PositionIndex {
    offsets: Vec<usize>,
    pairs: Vec<(usize, usize)>,
    types: Vec<usize>,
}

impl PositionIndex {
    pub fn new(instance: &Instance) -> Self {
        let mut offsets = Vec::with_capacity(instance.sfcs.len() + 1);
        let mut pairs = Vec::new();
        let mut types = Vec::new();
        offsets.push(0);
        for (h, sfc) in instance.sfcs.iter().enumerate() {
            for (j, &t) in sfc.nodes.iter().enumerate() {
                pairs.push((h, j));
                types.push(t);
            }
            offsets.push(pairs.len());
        }
        PositionIndex {
            offsets,
            pairs,
            types,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    #[inline]
    pub fn row(&self, sfc: usize, position: usize) -> usize {
        self.offsets[sfc] + position
    }

    #[inline]
    pub fn position(&self, row: usize) -> (usize, usize) {
        self.pairs[row]
    }

    /// CNF type of a row.
    #[inline]
    pub fn cnf_type(&self, row: usize) -> usize {
        self.types[row]
    }

    /// Row range covered by one SFC.
    pub fn rows_of(&self, sfc: usize) -> core::ops::Range<usize> {
        self.offsets[sfc]..self.offsets[sfc + 1]
    }
}

/// Sum of `t[cloud][type]` over every assigned (position, cloud) pair.
pub fn total_cost(instance: &Instance, placement: &Placement) -> Result<f64> {
    let index = PositionIndex::new(instance);
    placement.check_shape(index.len(), instance.num_clouds())?;
    let assignment = placement.assignment()?;
    Ok(assignment
        .iter()
        .enumerate()
        .map(|(f, &c)| instance.placement_cost[c][index.cnf_type(f)])
        .sum())
}

/// End-to-end delay of SFC `h`: the longest root-to-sink path, where each
/// node costs its processing delay and each hop between distinct clouds
/// costs `message_size / bandwidth`.
pub fn sfc_delay(instance: &Instance, placement: &Placement, h: usize) -> Result<f64> {
    instance.sfcs.get(h).ok_or(Error::NoSuchSfc(h))?;
    let index = PositionIndex::new(instance);
    placement.check_shape(index.len(), instance.num_clouds())?;
    let hosts = index
        .rows_of(h)
        .map(|r| {
            placement.cloud_of(r).ok_or(Error::IncompletePlacement {
                row: r,
                sum: placement.row_sum(r),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    longest_path_delay(instance, h, &hosts)
}

/// Longest-path delay of SFC `h` given the host cloud of each position.
pub(crate) fn longest_path_delay(instance: &Instance, h: usize, hosts: &[usize]) -> Result<f64> {
    let sfc = &instance.sfcs[h];
    let net = &instance.network;
    let mut dist = vec![0.0f64; sfc.len()];
    let incoming = sfc.in_edges();
    for j in 0..sfc.len() {
        let mut arrive = 0.0f64;
        for &e in &incoming[j] {
            let edge = sfc.edges[e];
            let (a, b) = (hosts[edge.from], hosts[j]);
            if !net.adjacent(a, b) {
                return Err(Error::DisconnectedHop {
                    sfc: h,
                    from: edge.from,
                    to: j,
                    from_cloud: a,
                    to_cloud: b,
                });
            }
            let hop = if a == b {
                0.0
            } else {
                instance.message_size / net.link_capacity(a, b)
            };
            arrive = arrive.max(dist[edge.from] + hop);
        }
        dist[j] = arrive + instance.cnf_catalog[sfc.nodes[j]].proc_delay;
    }
    Ok(dist.iter().copied().fold(0.0, f64::max))
}

/// Per-cloud CPU/RAM and per-ordered-link bandwidth consumption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceUsage {
    pub cpu: Vec<f64>,
    pub ram: Vec<f64>,
    /// `bandwidth[i][j]` is the rate sent from cloud `i` to cloud `j`; the
    /// diagonal stays zero.
    pub bandwidth: Vec<Vec<f64>>,
}

/// Resource consumption of a binary placement. Rows with several ones
/// contribute once per hosting cloud, matching the constraint sums.
pub fn resource_usage(instance: &Instance, placement: &Placement) -> ResourceUsage {
    let c = instance.num_clouds();
    let index = PositionIndex::new(instance);
    let mut usage = ResourceUsage {
        cpu: vec![0.0; c],
        ram: vec![0.0; c],
        bandwidth: vec![vec![0.0; c]; c],
    };
    for f in 0..index.len().min(placement.rows()) {
        let cnf = &instance.cnf_catalog[index.cnf_type(f)];
        for i in 0..c {
            if placement.get(f, i) {
                usage.cpu[i] += cnf.cpu_demand;
                usage.ram[i] += cnf.ram_demand;
            }
        }
    }
    for (h, sfc) in instance.sfcs.iter().enumerate() {
        for edge in &sfc.edges {
            let (fa, fb) = (index.row(h, edge.from), index.row(h, edge.to));
            for i in 0..c {
                if !placement.get(fa, i) {
                    continue;
                }
                for j in 0..c {
                    if i != j && placement.get(fb, j) {
                        usage.bandwidth[i][j] += edge.rate;
                    }
                }
            }
        }
    }
    usage
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ViolationKind {
    OneCloud,
    Adjacency,
    Cpu,
    Ram,
    Bandwidth,
    Delay,
    TypeRestriction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Location {
    /// Flattened placement row.
    Row(usize),
    Cloud(usize),
    Link { from: usize, to: usize },
    /// DAG edge `from -> to` of an SFC, hosted on `from_cloud -> to_cloud`.
    Edge {
        sfc: usize,
        from: usize,
        to: usize,
        from_cloud: usize,
        to_cloud: usize,
    },
    Sfc(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub location: Location,
    /// Amount by which the constraint is exceeded (1 for boolean rules).
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub violations: Vec<Violation>,
}

impl FeasibilityReport {
    pub fn total_magnitude(&self) -> f64 {
        self.violations.iter().map(|v| v.magnitude).sum()
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }
}

/// Evaluates every constraint of the model on a binary placement.
///
/// The delay of an SFC is only assessed when all of its rows are one-hot and
/// all of its hops are on adjacent clouds; otherwise the delay is undefined
/// and the placement is already reported infeasible by the other kinds.
pub fn check_feasibility(instance: &Instance, placement: &Placement) -> Result<FeasibilityReport> {
    let index = PositionIndex::new(instance);
    let c = instance.num_clouds();
    placement.check_shape(index.len(), c)?;
    let net = &instance.network;
    let mut violations = Vec::new();

    for f in 0..index.len() {
        let sum = placement.row_sum(f);
        if sum != 1 {
            violations.push(Violation {
                kind: ViolationKind::OneCloud,
                location: Location::Row(f),
                magnitude: (sum as f64 - 1.0).abs(),
            });
        }
        for i in 0..c {
            if placement.get(f, i) && !net.allows(i, index.cnf_type(f)) {
                violations.push(Violation {
                    kind: ViolationKind::TypeRestriction,
                    location: Location::Row(f),
                    magnitude: 1.0,
                });
            }
        }
    }

    let usage = resource_usage(instance, placement);
    for i in 0..c {
        for (kind, used, cap) in [
            (ViolationKind::Cpu, usage.cpu[i], net.cpu_capacity[i]),
            (ViolationKind::Ram, usage.ram[i], net.ram_capacity[i]),
        ] {
            if used > cap + FEASIBILITY_TOL {
                violations.push(Violation {
                    kind,
                    location: Location::Cloud(i),
                    magnitude: used - cap,
                });
            }
        }
    }

    let mut broken_sfc = vec![false; instance.sfcs.len()];
    for (h, sfc) in instance.sfcs.iter().enumerate() {
        for edge in &sfc.edges {
            let (fa, fb) = (index.row(h, edge.from), index.row(h, edge.to));
            for i in 0..c {
                for j in 0..c {
                    if placement.get(fa, i) && placement.get(fb, j) && !net.adjacent(i, j) {
                        broken_sfc[h] = true;
                        violations.push(Violation {
                            kind: ViolationKind::Adjacency,
                            location: Location::Edge {
                                sfc: h,
                                from: edge.from,
                                to: edge.to,
                                from_cloud: i,
                                to_cloud: j,
                            },
                            magnitude: 1.0,
                        });
                    }
                }
            }
        }
    }

    for i in 0..c {
        for j in 0..c {
            if i != j && usage.bandwidth[i][j] > net.bandwidth[i][j] + FEASIBILITY_TOL {
                violations.push(Violation {
                    kind: ViolationKind::Bandwidth,
                    location: Location::Link { from: i, to: j },
                    magnitude: usage.bandwidth[i][j] - net.bandwidth[i][j],
                });
            }
        }
    }

    for (h, sfc) in instance.sfcs.iter().enumerate() {
        if broken_sfc[h] {
            continue;
        }
        let Some(hosts) = index
            .rows_of(h)
            .map(|r| placement.cloud_of(r))
            .collect::<Option<Vec<_>>>()
        else {
            continue;
        };
        let delay = longest_path_delay(instance, h, &hosts)?;
        if delay > sfc.delay_budget + FEASIBILITY_TOL {
            violations.push(Violation {
                kind: ViolationKind::Delay,
                location: Location::Sfc(h),
                magnitude: delay - sfc.delay_budget,
            });
        }
    }

    Ok(FeasibilityReport {
        feasible: violations.is_empty(),
        violations,
    })
}
