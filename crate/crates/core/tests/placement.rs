mod support;

use cnfdiff_core::eval::{check_feasibility, resource_usage, total_cost};
use cnfdiff_core::rng::stream;
use cnfdiff_core::{brute_force_oracle, solve_exact, ExactStatus, NoClock, Placement};
use proptest::prelude::*;
use rand::Rng;
use support::{enumerate_optimum, feasibility_deviation, tiny_instance};

#[test]
fn exact_agrees_with_enumeration() {
    let mut infeasible = 0;
    for seed in 0..50 {
        let inst = tiny_instance(seed);
        let r = solve_exact(&inst, f64::INFINITY, &NoClock);
        let oracle = brute_force_oracle(&inst).unwrap();
        let independent = enumerate_optimum(&inst);
        match r.status {
            ExactStatus::Optimal => {
                let (head, cost) = &oracle[0];
                assert_eq!(r.cost, Some(*cost), "seed {seed}");
                assert_eq!(r.placement.as_ref(), Some(head), "seed {seed}: tie-break");
                assert_eq!(independent, Some(*cost), "seed {seed}");
            }
            ExactStatus::Infeasible => {
                infeasible += 1;
                assert!(oracle.is_empty() && independent.is_none(), "seed {seed}");
            }
            ExactStatus::TimedOut => panic!("seed {seed}: no limit was set"),
        }
    }
    assert!(infeasible > 0 && infeasible < 50, "{infeasible} infeasible");
}

#[test]
fn feasibility_matches_per_constraint_oracle() {
    let mut feasible = 0;
    for seed in 0..20 {
        let inst = tiny_instance(seed);
        let (f, c) = (inst.num_positions(), inst.num_clouds());
        let mut rng = stream(seed, 77);
        for _ in 0..10 {
            let a: Vec<usize> = (0..f).map(|_| rng.random_range(0..c)).collect();
            let dev = feasibility_deviation(&inst, &a).unwrap_or_else(|e| panic!("seed {seed} {a:?}: {e}"));
            assert!(dev <= 1e-9, "seed {seed} {a:?}: deviation {dev}");
            feasible += usize::from(support::feasibility_oracle(&inst, &a).feasible);
        }
    }
    assert!(feasible > 0 && feasible < 200);
}

#[test]
fn incomplete_rows_are_reported() {
    let inst = tiny_instance(0);
    let (f, c) = (inst.num_positions(), inst.num_clouds());
    let mut p = Placement::zeros(f, c);
    p.set(0, 0, true);
    p.set(0, 1, true);
    let rep = check_feasibility(&inst, &p).unwrap();
    assert!(!rep.feasible);
    assert_eq!(rep.count(cnfdiff_core::ViolationKind::OneCloud), f);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn optimum_is_feasible_and_minimal(seed in 0u64..10_000) {
        let inst = tiny_instance(seed);
        let r = solve_exact(&inst, f64::INFINITY, &NoClock);
        if let Some(p) = &r.placement {
            prop_assert!(check_feasibility(&inst, p).unwrap().feasible);
            prop_assert_eq!(r.cost, Some(total_cost(&inst, p).unwrap()));
            prop_assert_eq!(r.cost, enumerate_optimum(&inst));
        } else {
            prop_assert_eq!(enumerate_optimum(&inst), None);
        }
    }

    #[test]
    fn usage_adds_up(seed in 0u64..10_000, pick in proptest::collection::vec(0usize..4, 6)) {
        let inst = tiny_instance(seed);
        let c = inst.num_clouds();
        let a: Vec<usize> = pick.iter().take(inst.num_positions()).map(|&k| k % c).collect();
        let u = resource_usage(&inst, &Placement::from_assignment(&a, c));
        let demand: f64 = support::row_types(&inst)
            .iter()
            .map(|&(_, _, t)| inst.cnf_catalog[t].cpu_demand)
            .sum();
        prop_assert!((u.cpu.iter().sum::<f64>() - demand).abs() < 1e-9);
        prop_assert!((0..c).all(|i| u.bandwidth[i][i] == 0.0));
    }

    #[test]
    fn costs_match_definition(seed in 0u64..10_000, pick in proptest::collection::vec(0usize..4, 6)) {
        let inst = tiny_instance(seed);
        let c = inst.num_clouds();
        let a: Vec<usize> = pick.iter().take(inst.num_positions()).map(|&k| k % c).collect();
        let got = total_cost(&inst, &Placement::from_assignment(&a, c)).unwrap();
        prop_assert!((got - support::oracle_cost(&inst, &a)).abs() < 1e-9);
    }
}
