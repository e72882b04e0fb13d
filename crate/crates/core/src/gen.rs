//! Seeded generation of problem instances and datasets.
//!
//! Instances are built around a hidden witness placement: chains are walked
//! in topological order over allowed, adjacent clouds, and when
//! `guarantee_feasible` is set the capacities are inflated so the witness
//! fits. Delay budgets are the witness delay times `delay_budget_slack`.
//! The witness is never stored in the instance.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::eval::{longest_path_delay, resource_usage};
use crate::math::round;
use crate::model::{CloudNetwork, CnfType, Instance, InstanceMeta, Placement, Sfc, SfcEdge};
use crate::rng::{derive_seed, stream};
use crate::{Error, Result};

const MAX_ATTEMPTS: usize = 64;

/// Inclusive range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Span<T> {
    pub min: T,
    pub max: T,
}

impl<T> Span<T> {
    pub const fn new(min: T, max: T) -> Self {
        Span { min, max }
    }
}

impl Span<usize> {
    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        rng.random_range(self.min..=self.max)
    }
}

impl Span<f64> {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.min == self.max {
            self.min
        } else {
            rng.random_range(self.min..=self.max)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub name: String,
    pub num_clouds: Span<usize>,
    pub num_types: Span<usize>,
    pub num_sfcs: Span<usize>,
    pub chain_length: Span<usize>,
    /// Chance of opening a diamond (`a -> {b, c} -> d`) at a position with
    /// at least four nodes left.
    pub dag_branch_prob: f64,
    pub cpu_capacity: Span<f64>,
    pub ram_capacity: Span<f64>,
    pub cpu_demand: Span<f64>,
    pub ram_demand: Span<f64>,
    pub bandwidth: Span<f64>,
    pub rate: Span<f64>,
    /// Chance of each extra (non spanning-tree) link.
    pub link_density: f64,
    /// Per-cloud price factor; `t[i][m]` is `price[i] * weight[m]` rounded.
    pub cloud_price: Span<f64>,
    pub type_weight: Span<f64>,
    pub proc_delay: Span<f64>,
    pub message_size: f64,
    pub delay_budget_slack: f64,
    /// Chance that a cloud refuses a given CNF type.
    pub restriction_prob: f64,
    pub guarantee_feasible: bool,
    /// Test aid: one distinct type per position and capacities equal to the
    /// witness usage, so the witness is (generically) the only feasible
    /// placement.
    #[serde(default)]
    pub pinning: bool,
    pub seed: u64,
}

impl GenConfig {
    /// At most 4 clouds and 6 positions: small enough for exhaustive checks.
    pub fn tiny() -> Self {
        GenConfig {
            name: "tiny".into(),
            num_clouds: Span::new(3, 4),
            num_types: Span::new(3, 4),
            num_sfcs: Span::new(1, 2),
            chain_length: Span::new(2, 3),
            dag_branch_prob: 0.0,
            cpu_capacity: Span::new(4.0, 10.0),
            ram_capacity: Span::new(4.0, 10.0),
            cpu_demand: Span::new(1.0, 3.0),
            ram_demand: Span::new(1.0, 3.0),
            bandwidth: Span::new(20.0, 100.0),
            rate: Span::new(5.0, 40.0),
            link_density: 0.6,
            cloud_price: Span::new(10.0, 60.0),
            type_weight: Span::new(0.6, 1.4),
            proc_delay: Span::new(0.5, 2.0),
            message_size: 50.0,
            delay_budget_slack: 2.0,
            restriction_prob: 0.2,
            guarantee_feasible: true,
            pinning: false,
            seed: 0,
        }
    }

    pub fn small() -> Self {
        GenConfig {
            name: "small".into(),
            num_clouds: Span::new(4, 6),
            num_types: Span::new(3, 5),
            num_sfcs: Span::new(2, 3),
            chain_length: Span::new(2, 4),
            dag_branch_prob: 0.3,
            ..Self::tiny()
        }
    }

    pub fn medium() -> Self {
        GenConfig {
            name: "medium".into(),
            num_clouds: Span::new(6, 10),
            num_types: Span::new(4, 6),
            num_sfcs: Span::new(2, 4),
            chain_length: Span::new(3, 5),
            dag_branch_prob: 0.3,
            cpu_capacity: Span::new(4.0, 12.0),
            ram_capacity: Span::new(4.0, 12.0),
            ..Self::tiny()
        }
    }

    /// Fixed chain workload on `clouds` clouds, for runtime scaling studies.
    /// Fixed workload on `clouds` clouds. Total capacity stays near
    /// `HARD_TOTAL_CAPACITY` however many clouds share it, so larger
    /// networks are tighter per cloud rather than trivially roomy.
    pub fn hard(clouds: usize) -> Self {
        let per = HARD_TOTAL_CAPACITY / clouds.max(1) as f64;
        let capacity = Span::new(0.75 * per, 1.25 * per);
        GenConfig {
            name: format!("hard{clouds}"),
            num_clouds: Span::new(clouds, clouds),
            num_types: Span::new(4, 4),
            num_sfcs: Span::new(3, 3),
            chain_length: Span::new(4, 4),
            dag_branch_prob: 0.0,
            cpu_capacity: capacity,
            ram_capacity: capacity,
            link_density: 0.5,
            restriction_prob: 0.25,
            ..Self::tiny()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "tiny" => Some(Self::tiny()),
            "small" => Some(Self::small()),
            "medium" => Some(Self::medium()),
            "hard" => Some(Self::hard(HARD_CLOUDS[0])),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::BadConfig(msg));
        for (what, s) in [
            ("num_clouds", self.num_clouds),
            ("num_types", self.num_types),
            ("num_sfcs", self.num_sfcs),
            ("chain_length", self.chain_length),
        ] {
            if s.min > s.max {
                return bad(format!("{what} range is empty"));
            }
        }
        if self.num_clouds.min == 0 || self.num_types.min == 0 || self.chain_length.min == 0 {
            return bad("clouds, types and chain length need at least one".into());
        }
        for (what, s) in [
            ("cpu_capacity", self.cpu_capacity),
            ("ram_capacity", self.ram_capacity),
            ("cpu_demand", self.cpu_demand),
            ("ram_demand", self.ram_demand),
            ("bandwidth", self.bandwidth),
            ("rate", self.rate),
            ("cloud_price", self.cloud_price),
            ("type_weight", self.type_weight),
            ("proc_delay", self.proc_delay),
        ] {
            if !(s.min <= s.max && s.min >= 0.0 && s.max.is_finite()) {
                return bad(format!("{what} range must be finite, non-negative and non-empty"));
            }
        }
        if self.bandwidth.min <= 0.0 {
            return bad("bandwidth must be positive".into());
        }
        for (what, p) in [
            ("dag_branch_prob", self.dag_branch_prob),
            ("link_density", self.link_density),
            ("restriction_prob", self.restriction_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{what} must be a probability"));
            }
        }
        if !(self.delay_budget_slack >= 1.0 && self.delay_budget_slack.is_finite()) {
            return bad("delay_budget_slack must be >= 1".into());
        }
        if !(self.message_size > 0.0 && self.message_size.is_finite()) {
            return bad("message_size must be positive".into());
        }
        Ok(())
    }
}

/// Cloud counts used by the `hard` scaling preset.
pub const HARD_CLOUDS: [usize; 4] = [4, 6, 8, 10];

/// Combined cpu (and ram) capacity of a `hard` network.
pub const HARD_TOTAL_CAPACITY: f64 = 36.0;

/// Config list for a named preset. `hard` cycles through [`HARD_CLOUDS`].
pub fn preset_configs(name: &str, count: usize) -> Option<Vec<GenConfig>> {
    if name == "hard" {
        return Some(
            (0..count)
                .map(|k| GenConfig::hard(HARD_CLOUDS[k % HARD_CLOUDS.len()]))
                .collect(),
        );
    }
    GenConfig::preset(name).map(|cfg| vec![cfg; count])
}

fn round1(x: f64) -> f64 {
    round(x * 10.0) / 10.0
}

pub fn generate_instance(config: &GenConfig) -> Result<Instance> {
    config.validate()?;
    let mut rng = stream(config.seed, 0);
    let mut last = String::new();
    for _ in 0..MAX_ATTEMPTS {
        match attempt(config, &mut rng) {
            Ok(inst) => return Ok(inst),
            Err(reason) => last = reason,
        }
    }
    Err(Error::GenerationFailed {
        attempts: MAX_ATTEMPTS,
        reason: last,
    })
}

fn random_dag(len: usize, branch_prob: f64, rate: Span<f64>, rng: &mut ChaCha8Rng) -> Vec<SfcEdge> {
    let mut edges = Vec::new();
    let mut add = |from, to, rng: &mut ChaCha8Rng| {
        edges.push(SfcEdge {
            from,
            to,
            rate: round1(rate.sample(rng)),
        })
    };
    let mut j = 0;
    while j + 1 < len {
        if j + 3 < len && rng.random_bool(branch_prob) {
            add(j, j + 1, rng);
            add(j, j + 2, rng);
            add(j + 1, j + 3, rng);
            add(j + 2, j + 3, rng);
            j += 3;
        } else {
            add(j, j + 1, rng);
            j += 1;
        }
    }
    edges.sort_by_key(|e| (e.from, e.to));
    edges
}

fn attempt(cfg: &GenConfig, rng: &mut ChaCha8Rng) -> core::result::Result<Instance, String> {
    let c = cfg.num_clouds.sample(rng);

    // Cloud graph: random spanning tree plus extra links.
    let mut bandwidth = vec![vec![0.0; c]; c];
    let mut order: Vec<usize> = (0..c).collect();
    order.shuffle(rng);
    let link = |bandwidth: &mut Vec<Vec<f64>>, a: usize, b: usize, rng: &mut ChaCha8Rng| {
        let bw = round1(cfg.bandwidth.sample(rng)).max(0.1);
        bandwidth[a][b] = bw;
        bandwidth[b][a] = bw;
    };
    for k in 1..c {
        let parent = order[rng.random_range(0..k)];
        link(&mut bandwidth, order[k], parent, rng);
    }
    for a in 0..c {
        for b in a + 1..c {
            let extra = rng.random_bool(cfg.link_density);
            if extra && bandwidth[a][b] == 0.0 {
                link(&mut bandwidth, a, b, rng);
            }
        }
    }

    // Chains.
    let h_count = cfg.num_sfcs.sample(rng);
    let shapes: Vec<(usize, Vec<SfcEdge>)> = (0..h_count)
        .map(|_| {
            let len = cfg.chain_length.sample(rng);
            (len, random_dag(len, cfg.dag_branch_prob, cfg.rate, rng))
        })
        .collect();
    let positions: usize = shapes.iter().map(|s| s.0).sum();
    let m = if cfg.pinning {
        positions.max(1)
    } else {
        cfg.num_types.sample(rng)
    };
    let mut next_type = 0;
    let sfcs: Vec<Sfc> = shapes
        .into_iter()
        .map(|(len, edges)| {
            let nodes = (0..len)
                .map(|_| {
                    if cfg.pinning {
                        next_type += 1;
                        next_type - 1
                    } else {
                        rng.random_range(0..m)
                    }
                })
                .collect();
            Sfc {
                nodes,
                edges,
                delay_budget: 0.0,
            }
        })
        .collect();

    let demand = |span: Span<f64>, rng: &mut ChaCha8Rng| {
        let v = span.sample(rng);
        if cfg.pinning {
            v
        } else {
            round1(v)
        }
    };
    let cnf_catalog: Vec<CnfType> = (0..m)
        .map(|_| CnfType {
            cpu_demand: demand(cfg.cpu_demand, rng),
            ram_demand: demand(cfg.ram_demand, rng),
            proc_delay: round1(cfg.proc_delay.sample(rng)),
        })
        .collect();

    let mut allowed: Vec<Vec<bool>> = (0..c)
        .map(|_| (0..m).map(|_| !rng.random_bool(cfg.restriction_prob)).collect())
        .collect();
    for t in 0..m {
        if !(0..c).any(|i| allowed[i][t]) {
            let i = rng.random_range(0..c);
            allowed[i][t] = true;
        }
    }

    let price: Vec<f64> = (0..c).map(|_| cfg.cloud_price.sample(rng)).collect();
    let weight: Vec<f64> = (0..m).map(|_| cfg.type_weight.sample(rng)).collect();
    let placement_cost: Vec<Vec<f64>> = price
        .iter()
        .map(|p| weight.iter().map(|w| round(p * w)).collect())
        .collect();

    let network = CloudNetwork {
        cpu_capacity: (0..c).map(|_| round1(cfg.cpu_capacity.sample(rng))).collect(),
        ram_capacity: (0..c).map(|_| round1(cfg.ram_capacity.sample(rng))).collect(),
        bandwidth,
        allowed_types: allowed
            .iter()
            .map(|row| (0..m).filter(|&t| row[t]).collect())
            .collect(),
        directed: false,
    };

    // Witness: walk each chain over allowed clouds adjacent to every
    // predecessor's host, preferring to stay on a predecessor's cloud.
    let mut witness = Vec::with_capacity(positions);
    for (h, sfc) in sfcs.iter().enumerate() {
        let incoming = sfc.in_edges();
        let base = witness.len();
        for j in 0..sfc.len() {
            let t = sfc.nodes[j];
            let preds: Vec<usize> = incoming[j]
                .iter()
                .map(|&e| witness[base + sfc.edges[e].from])
                .collect();
            let cands: Vec<usize> = (0..c)
                .filter(|&i| allowed[i][t] && preds.iter().all(|&p| network.adjacent(p, i)))
                .collect();
            if cands.is_empty() {
                return Err(format!("no witness host for sfc {h} position {j}"));
            }
            let stay: Vec<usize> = cands.iter().copied().filter(|i| preds.contains(i)).collect();
            let host = if !stay.is_empty() && rng.random_bool(0.5) {
                *stay.choose(rng).expect("non-empty")
            } else {
                *cands.choose(rng).expect("non-empty")
            };
            witness.push(host);
        }
    }

    let mut inst = Instance {
        network,
        cnf_catalog,
        sfcs,
        placement_cost,
        message_size: cfg.message_size,
        meta: InstanceMeta {
            seed: cfg.seed,
            name: cfg.name.clone(),
            config_index: None,
        },
    };

    let witness_placement = Placement::from_assignment(&witness, c);
    if cfg.guarantee_feasible || cfg.pinning {
        let usage = resource_usage(&inst, &witness_placement);
        let net = &mut inst.network;
        for i in 0..c {
            if cfg.pinning {
                net.cpu_capacity[i] = usage.cpu[i];
                net.ram_capacity[i] = usage.ram[i];
            } else {
                net.cpu_capacity[i] = net.cpu_capacity[i].max(usage.cpu[i]);
                net.ram_capacity[i] = net.ram_capacity[i].max(usage.ram[i]);
            }
            for j in 0..c {
                let need = usage.bandwidth[i][j].max(usage.bandwidth[j][i]);
                if i != j && need > net.bandwidth[i][j] {
                    net.bandwidth[i][j] = need;
                    net.bandwidth[j][i] = need;
                }
            }
        }
    }

    let mut offset = 0;
    for h in 0..inst.sfcs.len() {
        let len = inst.sfcs[h].len();
        let delay = longest_path_delay(&inst, h, &witness[offset..offset + len])
            .map_err(|e| e.to_string())?;
        inst.sfcs[h].delay_budget = delay * cfg.delay_budget_slack;
        offset += len;
    }

    inst.validate().map_err(|e| e.to_string())?;
    Ok(inst)
}

/// One instance per config, each seeded from `seed` and its list position.
pub fn generate_dataset(configs: &[GenConfig], seed: u64) -> Result<Vec<Instance>> {
    configs
        .iter()
        .enumerate()
        .map(|(k, cfg)| {
            let cfg = GenConfig {
                seed: derive_seed(seed, k as u64),
                ..cfg.clone()
            };
            let mut inst = generate_instance(&cfg)?;
            inst.meta.name = format!("{}-{k:03}", cfg.name);
            inst.meta.config_index = Some(k);
            Ok(inst)
        })
        .collect()
}

/// Seeded partition into `train_count` training items and the rest. Both
/// sides keep the input order.
pub fn split_dataset<T>(items: Vec<T>, train_count: usize, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if train_count > items.len() {
        return Err(Error::BadCount {
            requested: train_count,
            available: items.len(),
        });
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut stream(seed, 1));
    let mut is_train = vec![false; items.len()];
    for &k in &order[..train_count] {
        is_train[k] = true;
    }
    let (mut train, mut eval) = (Vec::new(), Vec::new());
    for (k, item) in items.into_iter().enumerate() {
        if is_train[k] {
            train.push(item);
        } else {
            eval.push(item);
        }
    }
    Ok((train, eval))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_under_seed() {
        let cfg = GenConfig {
            seed: 42,
            ..GenConfig::small()
        };
        assert_eq!(generate_instance(&cfg).unwrap(), generate_instance(&cfg).unwrap());
    }

    #[test]
    fn cloud_count_echoes_config() {
        let cfg = GenConfig {
            num_clouds: Span::new(5, 5),
            seed: 3,
            ..GenConfig::tiny()
        };
        assert_eq!(generate_instance(&cfg).unwrap().num_clouds(), 5);
    }

    #[test]
    fn diamonds_validate() {
        for seed in 0..20 {
            let cfg = GenConfig {
                chain_length: Span::new(4, 7),
                dag_branch_prob: 0.8,
                seed,
                ..GenConfig::medium()
            };
            let inst = generate_instance(&cfg).unwrap();
            inst.validate().unwrap();
        }
    }

    #[test]
    fn dataset_sizes_and_split() {
        let configs = preset_configs("tiny", 44).unwrap();
        let data = generate_dataset(&configs, 9).unwrap();
        assert_eq!(data.len(), 44);
        assert_eq!(data[7].meta.config_index, Some(7));
        let (train, eval) = split_dataset(data.clone(), 20, 1).unwrap();
        assert_eq!((train.len(), eval.len()), (20, 24));
        for t in &train {
            assert!(!eval.iter().any(|e| e.meta.name == t.meta.name));
        }
        assert_eq!(split_dataset(data.clone(), 20, 1).unwrap().0, train);
        let (all, none) = split_dataset(data, 44, 5).unwrap();
        assert_eq!((all.len(), none.len()), (44, 0));
        assert!(generate_dataset(&[], 1).unwrap().is_empty());
    }

    #[test]
    fn split_rejects_bad_count() {
        assert!(matches!(
            split_dataset(vec![1, 2, 3], 4, 0),
            Err(Error::BadCount { requested: 4, available: 3 })
        ));
    }

    #[test]
    fn hard_preset_cycles_cloud_counts() {
        let cfgs = preset_configs("hard", 8).unwrap();
        let counts: Vec<usize> = cfgs.iter().map(|c| c.num_clouds.min).collect();
        assert_eq!(counts, vec![4, 6, 8, 10, 4, 6, 8, 10]);
        assert!(preset_configs("nope", 3).is_none());
    }

    #[test]
    fn bad_config_rejected() {
        let cfg = GenConfig {
            restriction_prob: 1.5,
            ..GenConfig::tiny()
        };
        assert!(matches!(generate_instance(&cfg), Err(Error::BadConfig(_))));
    }
}
