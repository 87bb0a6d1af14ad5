//! Properties of the projection, the metrics and complete IRL runs.

use proptest::prelude::*;
use softirl::env::{gridworld, one_state_mdp, GridworldSpec};
use softirl::irl::{l1_threshold, project_l1_ball, run_irl, run_irl_observed, IrlConfig};
use softirl::mdp::{l1_norm, BALL_TOL};
use softirl::metrics::{expert_suboptimality, policy_gap, tv_metric};
use softirl::solver::{objective_value, optimal_objective, truncated_feature_expectation};
use softirl::{reward_of, Policy, RewardWeights, Simulator};

fn vector(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, 1..max_len)
}

fn policy(ns: usize, na: usize) -> impl Strategy<Value = Policy> {
    prop::collection::vec(prop::collection::vec(0.01f64..1.0, na), ns).prop_map(|rows| {
        let rows: Vec<Vec<f64>> = rows
            .into_iter()
            .map(|r| {
                let s: f64 = r.iter().sum();
                r.into_iter().map(|x| x / s).collect()
            })
            .collect();
        Policy::from_rows(&rows).unwrap()
    })
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

proptest! {
    #[test]
    fn projection_lands_in_ball_and_is_idempotent(v in vector(40), radius in 0.1f64..3.0) {
        let p = project_l1_ball(&v, radius).unwrap();
        prop_assert!(l1_norm(&p) <= radius + 1e-12);
        prop_assert!(dist2(&project_l1_ball(&p, radius).unwrap(), &p) < 1e-24);
        if l1_norm(&v) <= radius {
            prop_assert_eq!(p, v);
        }
    }

    #[test]
    fn projection_satisfies_soft_threshold_conditions(v in vector(60)) {
        prop_assume!(l1_norm(&v) > 1.0);
        let p = project_l1_ball(&v, 1.0).unwrap();
        let theta = l1_threshold(&v, 1.0);
        prop_assert!(theta >= 0.0);
        prop_assert!((l1_norm(&p) - 1.0).abs() < 1e-10);
        for (x, y) in v.iter().zip(&p) {
            if *y != 0.0 {
                prop_assert!(x.signum() == y.signum());
                prop_assert!((x.abs() - y.abs() - theta).abs() < 1e-10);
            } else {
                prop_assert!(x.abs() <= theta + 1e-10);
            }
        }
    }

    #[test]
    fn projection_is_nonexpansive(a in vector(10), shift in vector(10)) {
        let b: Vec<f64> = a.iter().zip(shift.iter().cycle()).map(|(x, s)| x + s).collect();
        let pa = project_l1_ball(&a, 1.0).unwrap();
        let pb = project_l1_ball(&b, 1.0).unwrap();
        prop_assert!(dist2(&pa, &pb) <= dist2(&a, &b) + 1e-12);
    }

    #[test]
    fn projection_beats_random_feasible_points(v in vector(6), probe in vector(6)) {
        let p = project_l1_ball(&v, 1.0).unwrap();
        let mut y: Vec<f64> = probe.iter().cycle().take(v.len()).copied().collect();
        let n = l1_norm(&y);
        if n > 1.0 {
            y.iter_mut().for_each(|x| *x /= n);
        }
        prop_assert!(dist2(&v, &p) <= dist2(&v, &y) + 1e-12);
    }

    #[test]
    fn tv_metric_is_a_metric(a in policy(3, 3), b in policy(3, 3), c in policy(3, 3)) {
        let ab = tv_metric(&a, &b).unwrap();
        prop_assert_eq!(ab, tv_metric(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(tv_metric(&a, &a).unwrap(), 0.0);
        prop_assert!(tv_metric(&a, &c).unwrap() <= ab + tv_metric(&b, &c).unwrap() + 1e-15);
    }
}

#[test]
fn large_projection_satisfies_kkt() {
    let v: Vec<f64> = (0..10_000).map(|i| ((i * 7919) % 1000) as f64 / 250.0 - 2.0).collect();
    let p = project_l1_ball(&v, 1.0).unwrap();
    let theta = l1_threshold(&v, 1.0);
    assert!((l1_norm(&p) - 1.0).abs() < 1e-10);
    for (x, y) in v.iter().zip(&p) {
        let expected = x.signum() * (x.abs() - theta).max(0.0);
        assert!((y - expected).abs() < 1e-10);
    }
}

fn gridworld_3() -> softirl::EnvironmentBundle {
    gridworld(GridworldSpec {
        size: 3,
        slip_prob: 0.1,
        gamma: 0.8,
        tau: 1.0,
    })
    .unwrap()
}

#[test]
fn iterates_stay_feasible_and_average_exactly() {
    let b = gridworld_3();
    let sim = Simulator::new(&b.mdp);
    let sigma_e = truncated_feature_expectation(&b.mdp, &b.pi_expert, &b.phi, 200).unwrap();
    let trace = run_irl(&sim, &b.phi, &sigma_e, &IrlConfig::new(120, 2, 4)).unwrap();
    let mut sum = vec![0.0; b.phi.k()];
    for rec in &trace.records {
        assert!(l1_norm(&rec.w) <= 1.0 + BALL_TOL);
        sum.iter_mut().zip(&rec.w).for_each(|(a, x)| *a += x);
    }
    let w_bar = trace.w_bar.unwrap();
    assert!(w_bar.l1_norm() <= 1.0 + BALL_TOL);
    for (a, x) in sum.iter().zip(w_bar.as_slice()) {
        assert!((a / 120.0 - x).abs() <= 1e-12);
    }
    assert_eq!(trace.snapshots.len(), 120 / 2);
}

/// Consecutive reward iterates move fixed-policy and optimal values by at most
/// `‖Δr‖∞/(1−γ)` each step, and by `2η‖φ‖∞/(1−γ)²` on average over the run.
#[test]
fn reward_iterates_are_lipschitz_in_value() {
    let b = gridworld_3();
    let gamma = b.mdp.discount();
    let sim = Simulator::new(&b.mdp);
    let sigma_e = truncated_feature_expectation(&b.mdp, &b.pi_expert, &b.phi, 200).unwrap();
    let mut ws: Vec<RewardWeights> = Vec::new();
    let trace = run_irl_observed(&sim, &b.phi, &sigma_e, &IrlConfig::new(200, 4, 9), |_, w, _| {
        ws.push(w.clone())
    })
    .unwrap();
    ws.push(trace.final_w.clone().unwrap());
    let bound = 2.0 * trace.eta_w * b.phi.sup_norm() / (1.0 - gamma).powi(2);
    let test_policy = Policy::uniform(9, 4);
    let (mut sum_fixed, mut sum_opt) = (0.0, 0.0);
    for pair in ws.windows(2) {
        let r0 = reward_of(&pair[0], &b.phi).unwrap();
        let r1 = reward_of(&pair[1], &b.phi).unwrap();
        let step = r0.sup_distance(&r1) / (1.0 - gamma) + 1e-9;
        let fixed = (objective_value(&b.mdp, &r0, &test_policy).unwrap()
            - objective_value(&b.mdp, &r1, &test_policy).unwrap())
        .abs();
        let opt = (optimal_objective(&b.mdp, &r0).unwrap() - optimal_objective(&b.mdp, &r1).unwrap()).abs();
        assert!(fixed <= step && opt <= step);
        sum_fixed += fixed;
        sum_opt += opt;
    }
    let steps = (ws.len() - 1) as f64;
    assert!(sum_fixed / steps <= bound, "{} > {bound}", sum_fixed / steps);
    assert!(sum_opt / steps <= bound, "{} > {bound}", sum_opt / steps);
}

#[test]
fn one_state_expert_stays_optimal_for_the_learned_reward() {
    let b = one_state_mdp(0.9, 1.0).unwrap();
    let sim = Simulator::new(&b.mdp);
    let trace = run_irl(&sim, &b.phi, &[10.0], &IrlConfig::new(300, 4, 1)).unwrap();
    let r = reward_of(trace.w_bar.as_ref().unwrap(), &b.phi).unwrap();
    assert!(expert_suboptimality(&b.mdp, &r, &b.pi_expert).unwrap().abs() < 1e-8);
    assert!(trace.w_bar.unwrap().as_slice()[0].abs() < 0.2);
}

/// Seed-averaged `J*_{r^t} − J^{π^t}_{r^t}` should be smaller over the last
/// quarter of a run than over the first quarter.
///
/// Fails at B = 8: the Monte Carlo noise in `Q̂` makes every `π^{t+1}` a
/// noisy softmax whose gap sits near a constant floor, while the reward scale
/// grows from `w⁰ = 0`. Run with `--ignored` to reproduce.
#[test]
#[ignore = "policy-iterate gap is dominated by Q estimation noise at B = 8; see README"]
fn policy_iterate_gap_decreases() {
    let b = gridworld(GridworldSpec {
        size: 4,
        slip_prob: 0.1,
        gamma: 0.9,
        tau: 1.0,
    })
    .unwrap();
    let sim = Simulator::new(&b.mdp);
    let sigma_e = truncated_feature_expectation(&b.mdp, &b.pi_expert, &b.phi, 200).unwrap();
    let t_max = 400;
    let (mut first, mut last) = (0.0, 0.0);
    for seed in 0..10 {
        let mut gaps = Vec::new();
        run_irl_observed(&sim, &b.phi, &sigma_e, &IrlConfig::new(t_max, 8, seed), |_, w, pi| {
            gaps.push(policy_gap(&b.mdp, &reward_of(w, &b.phi).unwrap(), pi).unwrap())
        })
        .unwrap();
        let q = t_max / 4;
        first += gaps[..q].iter().sum::<f64>() / q as f64;
        last += gaps[t_max - q..].iter().sum::<f64>() / q as f64;
    }
    println!("first-quarter mean gap {}, last-quarter mean gap {}", first / 10.0, last / 10.0);
    assert!(last < first);
}
