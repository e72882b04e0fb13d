//! Exact minimum-cost placement by depth-first branch-and-bound, plus an
//! exhaustive enumerator used as a test oracle.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::eval::{check_feasibility, total_cost, PositionIndex};
use crate::model::{Instance, Placement};
use crate::{Error, Result, FEASIBILITY_TOL};

/// Largest `clouds^positions` the brute-force oracle agrees to enumerate.
pub const ORACLE_GUARD: u64 = 10_000_000;

/// Monotonic time source in seconds. The solver only needs differences.
pub trait Clock {
    fn now(&self) -> f64;
}

/// Clock that never advances; a search under it cannot time out.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExactStatus {
    Optimal,
    Infeasible,
    TimedOut,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactResult {
    pub status: ExactStatus,
    /// Optimum, or the incumbent when the search timed out.
    pub placement: Option<Placement>,
    pub cost: Option<f64>,
    pub elapsed: f64,
    pub nodes_explored: u64,
}

struct Row {
    cpu: f64,
    ram: f64,
    proc_delay: f64,
    cost: Vec<f64>,
    candidates: Vec<usize>,
    /// (predecessor row, rate)
    preds: Vec<(usize, f64)>,
    /// Delay budget when this row is the sink of its chain.
    sink_budget: Option<f64>,
}

struct Search<'a, C: Clock> {
    instance: &'a Instance,
    rows: Vec<Row>,
    /// Sum of per-row minimum costs from row `f` to the end.
    suffix_bound: Vec<f64>,
    host: Vec<usize>,
    dist: Vec<f64>,
    cpu: Vec<f64>,
    ram: Vec<f64>,
    bw: Vec<f64>,
    best_cost: f64,
    best: Option<Vec<usize>>,
    nodes: u64,
    clock: &'a C,
    start: f64,
    limit: f64,
    timed_out: bool,
}

impl<C: Clock> Search<'_, C> {
    fn dfs(&mut self, f: usize, cost: f64) {
        if self.timed_out {
            return;
        }
        if f == self.rows.len() {
            self.leaf();
            return;
        }
        let instance = self.instance;
        let c = instance.num_clouds();
        let net = &instance.network;
        for k in 0..self.rows[f].candidates.len() {
            let i = self.rows[f].candidates[k];
            let row = &self.rows[f];
            let next_cost = cost + row.cost[i];
            if next_cost + self.suffix_bound[f + 1] >= self.best_cost {
                continue;
            }
            if self.cpu[i] + row.cpu > net.cpu_capacity[i] + FEASIBILITY_TOL
                || self.ram[i] + row.ram > net.ram_capacity[i] + FEASIBILITY_TOL
            {
                continue;
            }
            let mut ok = true;
            let mut added = 0;
            let mut arrive = 0.0f64;
            for (n, &(p, rate)) in row.preds.iter().enumerate() {
                let hp = self.host[p];
                if !net.adjacent(hp, i) {
                    ok = false;
                    break;
                }
                let mut hop = 0.0;
                if hp != i {
                    let slot = hp * c + i;
                    self.bw[slot] += rate;
                    added = n + 1;
                    if self.bw[slot] > net.bandwidth[hp][i] + FEASIBILITY_TOL {
                        ok = false;
                        break;
                    }
                    hop = instance.message_size / net.bandwidth[hp][i];
                }
                added = n + 1;
                arrive = arrive.max(self.dist[p] + hop);
            }
            let dist = arrive + row.proc_delay;
            if ok {
                if let Some(budget) = row.sink_budget {
                    ok = dist <= budget + FEASIBILITY_TOL;
                }
            }
            if ok {
                self.nodes += 1;
                if self.nodes.is_multiple_of(256) && self.clock.now() - self.start > self.limit {
                    self.timed_out = true;
                }
                let (dcpu, dram) = (row.cpu, row.ram);
                self.host[f] = i;
                self.dist[f] = dist;
                self.cpu[i] += dcpu;
                self.ram[i] += dram;
                self.dfs(f + 1, next_cost);
                self.cpu[i] -= dcpu;
                self.ram[i] -= dram;
            }
            for &(p, rate) in &self.rows[f].preds[..added] {
                let hp = self.host[p];
                if hp != i {
                    self.bw[hp * c + i] -= rate;
                }
            }
            if self.timed_out {
                return;
            }
        }
    }

    fn leaf(&mut self) {
        let placement = Placement::from_assignment(&self.host, self.instance.num_clouds());
        let feasible = check_feasibility(self.instance, &placement)
            .map(|r| r.feasible)
            .unwrap_or(false);
        if !feasible {
            return;
        }
        let cost = total_cost(self.instance, &placement).expect("complete placement");
        if cost < self.best_cost {
            self.best_cost = cost;
            self.best = Some(self.host.clone());
        }
    }
}

/// Finds a minimum-cost feasible placement, exploring positions in flattened
/// order and clouds in ascending index order.
///
/// Among equal-cost optima the lexicographically smallest assignment vector
/// wins. The search stops after `time_limit` seconds as measured by `clock`
/// and then reports [`ExactStatus::TimedOut`] with the incumbent, if any.
pub fn solve_exact<C: Clock>(instance: &Instance, time_limit: f64, clock: &C) -> ExactResult {
    let start = clock.now();
    let index = PositionIndex::new(instance);
    let net = &instance.network;
    let c = instance.num_clouds();

    let mut rows = Vec::with_capacity(index.len());
    for f in 0..index.len() {
        let (h, j) = index.position(f);
        let t = index.cnf_type(f);
        let sfc = &instance.sfcs[h];
        let cnf = &instance.cnf_catalog[t];
        let preds = sfc
            .edges
            .iter()
            .filter(|e| e.to == j)
            .map(|e| (index.row(h, e.from), e.rate))
            .collect();
        rows.push(Row {
            cpu: cnf.cpu_demand,
            ram: cnf.ram_demand,
            proc_delay: cnf.proc_delay,
            cost: (0..c).map(|i| instance.placement_cost[i][t]).collect(),
            candidates: (0..c).filter(|&i| net.allows(i, t)).collect(),
            preds,
            sink_budget: (j + 1 == sfc.len()).then_some(sfc.delay_budget),
        });
    }

    let finish = |status, best: Option<Vec<usize>>, nodes| {
        let placement = best.map(|a| Placement::from_assignment(&a, c));
        let cost = placement
            .as_ref()
            .map(|p| total_cost(instance, p).expect("complete placement"));
        ExactResult {
            status,
            placement,
            cost,
            elapsed: clock.now() - start,
            nodes_explored: nodes,
        }
    };

    if rows.iter().any(|r| r.candidates.is_empty()) {
        return finish(ExactStatus::Infeasible, None, 0);
    }

    let mut suffix_bound = vec![0.0; rows.len() + 1];
    for f in (0..rows.len()).rev() {
        let min = rows[f]
            .candidates
            .iter()
            .map(|&i| rows[f].cost[i])
            .fold(f64::INFINITY, f64::min);
        suffix_bound[f] = suffix_bound[f + 1] + min;
    }

    let f_count = rows.len();
    let mut search = Search {
        instance,
        rows,
        suffix_bound,
        host: vec![0; f_count],
        dist: vec![0.0; f_count],
        cpu: vec![0.0; c],
        ram: vec![0.0; c],
        bw: vec![0.0; c * c],
        best_cost: f64::INFINITY,
        best: None,
        nodes: 0,
        clock,
        start,
        limit: time_limit,
        timed_out: false,
    };
    search.dfs(0, 0.0);

    let status = if search.timed_out {
        ExactStatus::TimedOut
    } else if search.best.is_some() {
        ExactStatus::Optimal
    } else {
        ExactStatus::Infeasible
    };
    finish(status, search.best, search.nodes)
}

/// Every feasible complete placement with its cost, cheapest first. Ties
/// keep enumeration order, which is lexicographic in the assignment vector.
pub fn brute_force_oracle(instance: &Instance) -> Result<Vec<(Placement, f64)>> {
    let c = instance.num_clouds();
    let f = instance.num_positions();
    let too_large = Error::TooLarge {
        clouds: c,
        positions: f,
    };
    let total = (c as u64)
        .checked_pow(f as u32)
        .filter(|&n| n <= ORACLE_GUARD)
        .ok_or(too_large)?;
    let mut out = Vec::new();
    let mut digits = vec![0usize; f];
    for _ in 0..total {
        let p = Placement::from_assignment(&digits, c);
        if check_feasibility(instance, &p)?.feasible {
            let cost = total_cost(instance, &p)?;
            out.push((p, cost));
        }
        for d in (0..f).rev() {
            digits[d] += 1;
            if digits[d] < c {
                break;
            }
            digits[d] = 0;
        }
    }
    out.sort_by(|a, b| a.1.total_cmp(&b.1));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::*;
    use crate::model::Sfc;

    #[test]
    fn single_cloud_single_cnf() {
        let inst = instance(
            mesh(1, 5.0, 5.0, 0.0, 1),
            vec![cnf(1.0, 1.0, 1.0)],
            vec![Sfc::chain(vec![0], 1.0, 10.0)],
        );
        let r = solve_exact(&inst, f64::INFINITY, &NoClock);
        assert_eq!(r.status, ExactStatus::Optimal);
        assert_eq!(r.placement.unwrap().assignment().unwrap(), vec![0]);
        assert_eq!(r.cost, Some(inst.placement_cost[0][0]));
    }

    #[test]
    fn oversized_cnf_is_infeasible() {
        let inst = instance(
            mesh(3, 5.0, 5.0, 1.0, 1),
            vec![cnf(6.0, 1.0, 1.0)],
            vec![Sfc::chain(vec![0], 1.0, 10.0)],
        );
        let r = solve_exact(&inst, f64::INFINITY, &NoClock);
        assert_eq!(r.status, ExactStatus::Infeasible);
        assert!(r.placement.is_none());
        assert!(brute_force_oracle(&inst).unwrap().is_empty());
    }

    #[test]
    fn oracle_two_fitting_clouds() {
        let inst = instance(
            mesh(2, 5.0, 5.0, 1.0, 1),
            vec![cnf(1.0, 1.0, 1.0)],
            vec![Sfc::chain(vec![0], 1.0, 10.0)],
        );
        assert_eq!(brute_force_oracle(&inst).unwrap().len(), 2);
    }

    #[test]
    fn oracle_guard() {
        let inst = instance(
            mesh(10, 50.0, 50.0, 1.0, 1),
            vec![cnf(1.0, 1.0, 1.0)],
            vec![Sfc::chain(vec![0; 8], 0.0, 100.0)],
        );
        assert!(matches!(
            brute_force_oracle(&inst),
            Err(Error::TooLarge { clouds: 10, positions: 8 })
        ));
    }

    #[test]
    fn equal_cost_tie_breaks_lexicographically() {
        let mut inst = instance(
            mesh(3, 5.0, 5.0, 1.0, 1),
            vec![cnf(1.0, 1.0, 1.0)],
            vec![Sfc::chain(vec![0, 0], 0.0, 10.0)],
        );
        inst.placement_cost = vec![vec![1.0]; 3];
        let r = solve_exact(&inst, f64::INFINITY, &NoClock);
        assert_eq!(r.placement.unwrap().assignment().unwrap(), vec![0, 0]);
    }

    #[test]
    fn ties_match_oracle_head() {
        let mut inst = instance(
            mesh(3, 1.0, 5.0, 1.0, 1),
            vec![cnf(1.0, 1.0, 1.0)],
            vec![Sfc::chain(vec![0, 0], 0.0, 1000.0)],
        );
        inst.placement_cost = vec![vec![1.0]; 3];
        let exact = solve_exact(&inst, f64::INFINITY, &NoClock);
        let oracle = brute_force_oracle(&inst).unwrap();
        assert_eq!(exact.placement.as_ref(), Some(&oracle[0].0));
        assert_eq!(exact.placement.unwrap().assignment().unwrap(), vec![0, 1]);
    }

    struct Ticking(core::cell::Cell<f64>);
    impl Clock for Ticking {
        fn now(&self) -> f64 {
            let t = self.0.get();
            self.0.set(t + 1.0);
            t
        }
    }

    #[test]
    fn time_limit_reports_timeout() {
        let inst = instance(
            mesh(6, 50.0, 50.0, 100.0, 1),
            vec![cnf(1.0, 1.0, 1.0)],
            vec![Sfc::chain(vec![0; 8], 0.0, 0.5)],
        );
        let r = solve_exact(&inst, 0.5, &Ticking(Default::default()));
        assert_eq!(r.status, ExactStatus::TimedOut);
    }
}
