//! Test-side oracles, written against the model definition rather than the
//! library code they check.
#![allow(dead_code)]

use std::collections::BTreeMap;

use cnfdiff_core::nn::{ParamStore, Tape, Var};
use cnfdiff_core::{Instance, Result};

pub mod grads;

pub const TOL: f64 = 1e-9;

/// Per-constraint verdicts for a complete assignment (one cloud per row).
#[derive(Debug, Clone, Default)]
pub struct OracleReport {
    pub feasible: bool,
    /// Magnitudes per violation kind name, sorted.
    pub magnitudes: BTreeMap<&'static str, Vec<f64>>,
}

impl OracleReport {
    fn push(&mut self, kind: &'static str, m: f64) {
        self.magnitudes.entry(kind).or_default().push(m);
    }
}

/// Flattened (sfc, position) -> cnf type, built directly from the chain list.
pub fn row_types(inst: &Instance) -> Vec<(usize, usize, usize)> {
    let mut rows = Vec::new();
    for (h, s) in inst.sfcs.iter().enumerate() {
        for (j, &t) in s.nodes.iter().enumerate() {
            rows.push((h, j, t));
        }
    }
    rows
}

/// Checks each inequality of the placement model separately.
pub fn feasibility_oracle(inst: &Instance, assign: &[usize]) -> OracleReport {
    let rows = row_types(inst);
    assert_eq!(rows.len(), assign.len());
    let c = inst.network.cpu_capacity.len();
    let bw = &inst.network.bandwidth;
    let linked = |a: usize, b: usize| a == b || bw[a][b] > 0.0;
    let mut rep = OracleReport::default();

    // type restriction
    for (r, &(_, _, t)) in rows.iter().enumerate() {
        if !inst.network.allowed_types[assign[r]].contains(&t) {
            rep.push("type", 1.0);
        }
    }
    // cpu and ram
    for i in 0..c {
        let mut cpu = 0.0;
        let mut ram = 0.0;
        for (r, &(_, _, t)) in rows.iter().enumerate() {
            if assign[r] == i {
                cpu += inst.cnf_catalog[t].cpu_demand;
                ram += inst.cnf_catalog[t].ram_demand;
            }
        }
        if cpu > inst.network.cpu_capacity[i] + TOL {
            rep.push("cpu", cpu - inst.network.cpu_capacity[i]);
        }
        if ram > inst.network.ram_capacity[i] + TOL {
            rep.push("ram", ram - inst.network.ram_capacity[i]);
        }
    }
    // adjacency and bandwidth
    let row_of = |h: usize, j: usize| rows.iter().position(|&(a, b, _)| a == h && b == j).unwrap();
    let mut load = vec![vec![0.0; c]; c];
    let mut broken = vec![false; inst.sfcs.len()];
    for (h, s) in inst.sfcs.iter().enumerate() {
        for e in &s.edges {
            let (a, b) = (assign[row_of(h, e.from)], assign[row_of(h, e.to)]);
            if !linked(a, b) {
                rep.push("adjacency", 1.0);
                broken[h] = true;
            }
            if a != b {
                load[a][b] += e.rate;
            }
        }
    }
    for i in 0..c {
        for j in 0..c {
            if i != j && load[i][j] > bw[i][j] + TOL {
                rep.push("bandwidth", load[i][j] - bw[i][j]);
            }
        }
    }
    // delay: longest path by memoized recursion from each node backwards
    for (h, s) in inst.sfcs.iter().enumerate() {
        if broken[h] {
            continue;
        }
        let host = |j: usize| assign[row_of(h, j)];
        let mut memo: Vec<Option<f64>> = vec![None; s.nodes.len()];
        fn finish(
            j: usize,
            inst: &Instance,
            h: usize,
            host: &dyn Fn(usize) -> usize,
            memo: &mut Vec<Option<f64>>,
        ) -> f64 {
            if let Some(v) = memo[j] {
                return v;
            }
            let s = &inst.sfcs[h];
            let mut best = 0.0f64;
            for e in s.edges.iter().filter(|e| e.to == j) {
                let (a, b) = (host(e.from), host(j));
                let hop = if a == b { 0.0 } else { inst.message_size / inst.network.bandwidth[a][b] };
                best = best.max(finish(e.from, inst, h, host, memo) + hop);
            }
            let v = best + inst.cnf_catalog[s.nodes[j]].proc_delay;
            memo[j] = Some(v);
            v
        }
        let delay = (0..s.nodes.len())
            .map(|j| finish(j, inst, h, &host, &mut memo))
            .fold(0.0, f64::max);
        if delay > s.delay_budget + TOL {
            rep.push("delay", delay - s.delay_budget);
        }
    }
    for v in rep.magnitudes.values_mut() {
        v.sort_by(f64::total_cmp);
    }
    rep.feasible = rep.magnitudes.is_empty();
    rep
}

/// Cost computed straight from the definition.
pub fn oracle_cost(inst: &Instance, assign: &[usize]) -> f64 {
    row_types(inst)
        .iter()
        .zip(assign)
        .map(|(&(_, _, t), &i)| inst.placement_cost[i][t])
        .sum()
}

/// Every complete assignment, odometer order (row 0 most significant).
pub fn all_assignments(rows: usize, clouds: usize) -> Vec<Vec<usize>> {
    let total = clouds.pow(rows as u32);
    (0..total)
        .map(|mut k| {
            let mut a = vec![0; rows];
            for r in (0..rows).rev() {
                a[r] = k % clouds;
                k /= clouds;
            }
            a
        })
        .collect()
}

/// Optimum by enumeration: `Some(cost)` or `None` when nothing is feasible.
pub fn enumerate_optimum(inst: &Instance) -> Option<f64> {
    let rows = row_types(inst).len();
    let c = inst.network.cpu_capacity.len();
    all_assignments(rows, c)
        .into_iter()
        .filter(|a| feasibility_oracle(inst, a).feasible)
        .map(|a| oracle_cost(inst, &a))
        .min_by(f64::total_cmp)
}

/// Largest relative error between analytic and central-difference gradients.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Analytic gradients of a scalar objective for every parameter, and the
/// worst relative error against central differences with step `h`.
///
/// `objective` records a scalar loss on the tape.
pub fn check_param_grads<F>(store: &mut ParamStore, h: f64, objective: F) -> f64
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new(store);
        let loss = objective(&mut tape).unwrap();
        tape.backward(loss).unwrap();
        tape.param_grads()
    };
    let eval = |s: &ParamStore| {
        let mut tape = Tape::inference(s);
        let loss = objective(&mut tape).unwrap();
        tape.value(loss)[0]
    };
    let ids: Vec<_> = store.iter().map(|(id, _, _)| id).collect();
    let mut worst = 0.0f64;
    for (p, id) in ids.into_iter().enumerate() {
        for k in 0..store.get(id).len() {
            let x0 = store.get(id).data()[k];
            store.get_mut(id).data_mut()[k] = x0 + h;
            let up = eval(store);
            store.get_mut(id).data_mut()[k] = x0 - h;
            let down = eval(store);
            store.get_mut(id).data_mut()[k] = x0;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(rel_err(analytic[p][k], numeric));
        }
    }
    worst
}

/// Same as [`check_param_grads`] but for an input leaf.
pub fn check_input_grads<F>(store: &ParamStore, input: &[f64], h: f64, objective: F) -> f64
where
    F: Fn(&mut Tape<'_>, &[f64], bool) -> Result<(Var, Var)>,
{
    let analytic = {
        let mut tape = Tape::new(store);
        let (x, loss) = objective(&mut tape, input, true).unwrap();
        tape.backward(loss).unwrap();
        tape.grad(x).unwrap().to_vec()
    };
    let eval = |v: &[f64]| {
        let mut tape = Tape::inference(store);
        let (_, loss) = objective(&mut tape, v, false).unwrap();
        tape.value(loss)[0]
    };
    let mut worst = 0.0f64;
    let mut x = input.to_vec();
    for k in 0..x.len() {
        let x0 = x[k];
        x[k] = x0 + h;
        let up = eval(&x);
        x[k] = x0 - h;
        let down = eval(&x);
        x[k] = x0;
        worst = worst.max(rel_err(analytic[k], (up - down) / (2.0 * h)));
    }
    worst
}

/// `Σ out ⊙ r`: a scalar readout with fixed random weights so every output
/// entry contributes a distinct gradient.
pub fn readout(tape: &mut Tape<'_>, out: Var, weights: &[f64]) -> Result<Var> {
    let (r, c) = tape.shape(out);
    let w = tape.constant(r, c, weights.to_vec())?;
    let m = tape.mul(out, w)?;
    Ok(tape.sum(m))
}

fn kind_name(kind: cnfdiff_core::ViolationKind) -> &'static str {
    use cnfdiff_core::ViolationKind::*;
    match kind {
        OneCloud => "one_cloud",
        Adjacency => "adjacency",
        Cpu => "cpu",
        Ram => "ram",
        Bandwidth => "bandwidth",
        Delay => "delay",
        TypeRestriction => "type",
    }
}

/// Largest magnitude deviation between `check_feasibility` and the oracle,
/// or `Err` when verdicts or violation counts disagree.
pub fn feasibility_deviation(inst: &Instance, assign: &[usize]) -> std::result::Result<f64, String> {
    let c = inst.network.cpu_capacity.len();
    let placement = cnfdiff_core::Placement::from_assignment(assign, c);
    let report = cnfdiff_core::eval::check_feasibility(inst, &placement).map_err(|e| e.to_string())?;
    let oracle = feasibility_oracle(inst, assign);
    if report.feasible != oracle.feasible {
        return Err(format!("verdict {} vs oracle {}", report.feasible, oracle.feasible));
    }
    let mut got: BTreeMap<&'static str, Vec<f64>> = BTreeMap::new();
    for v in &report.violations {
        got.entry(kind_name(v.kind)).or_default().push(v.magnitude);
    }
    for v in got.values_mut() {
        v.sort_by(f64::total_cmp);
    }
    let keys: Vec<_> = got.keys().collect();
    let want: Vec<_> = oracle.magnitudes.keys().collect();
    if keys != want {
        return Err(format!("kinds {keys:?} vs oracle {want:?}"));
    }
    let mut worst = 0.0f64;
    for (k, a) in &got {
        let b = &oracle.magnitudes[k];
        if a.len() != b.len() {
            return Err(format!("{k}: {} violations vs oracle {}", a.len(), b.len()));
        }
        for (x, y) in a.iter().zip(b) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok(worst)
}

/// Seeded tiny instance; every third one gets its capacities squeezed so the
/// set includes tight and infeasible cases.
pub fn tiny_instance(seed: u64) -> Instance {
    let cfg = cnfdiff_core::gen::GenConfig {
        seed,
        ..cnfdiff_core::gen::GenConfig::tiny()
    };
    let mut inst = cnfdiff_core::gen::generate_instance(&cfg).unwrap();
    if seed % 3 == 2 {
        for v in inst.network.cpu_capacity.iter_mut().chain(inst.network.ram_capacity.iter_mut()) {
            *v *= 0.45;
        }
    }
    inst
}
