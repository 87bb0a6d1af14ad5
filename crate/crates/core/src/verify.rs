//! Randomized property suites for the estimators and the value-function lemmas.
//!
//! Every trial builds its instance from an `instance_seed` derived from the
//! run seed, suite and trial index, so a failing check can be replayed alone
//! with [`run_trial`].

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;

use crate::env::{dirichlet_ones, one_state_mdp, random_mdp, RandomMdpSpec};
use crate::error::{Error, Result};
use crate::mdp::{l1_norm, FeatureMap, Mdp, Policy, RewardTable};
use crate::metrics::{ipm, pinsker_chain, tv_metric, weighted_kl};
use crate::sampling::{est_q, est_sigma, RngStream, SampleRng, Simulator};
use crate::solver::{
    feature_expectation_exact, objective_value, occupancy, optimal_policy, policy_evaluation, solve_optimal,
};

/// Draws per Monte Carlo unbiasedness check.
pub const MC_DRAWS: usize = 10_000;
/// Allowed deviation of a Monte Carlo mean, in standard errors.
pub const MC_Z: f64 = 4.0;
pub const IDENTITY_TOL: f64 = 1e-7;
pub const BOUND_SLACK: f64 = 1e-9;
pub const PINSKER_SLACK: f64 = 1e-8;
/// Bellman tolerance for the exact sides of every check, well below `BOUND_SLACK · (1−γ)`.
pub const SOLVE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Suite {
    UnbiasedQ,
    UnbiasedSigma,
    SoftSubopt,
    PerfDiff,
    PerfImprovement,
    PolicyGap,
    RewardLipschitz,
    OccupancyLipschitz,
    FeatureLipschitz,
    MetricOrder,
    Pinsker,
    TvMetric,
    Counterexample,
}

impl Suite {
    pub const ALL: [Suite; 13] = [
        Suite::UnbiasedQ,
        Suite::UnbiasedSigma,
        Suite::SoftSubopt,
        Suite::PerfDiff,
        Suite::PerfImprovement,
        Suite::PolicyGap,
        Suite::RewardLipschitz,
        Suite::OccupancyLipschitz,
        Suite::FeatureLipschitz,
        Suite::MetricOrder,
        Suite::Pinsker,
        Suite::TvMetric,
        Suite::Counterexample,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::UnbiasedQ => "unbiased-q",
            Suite::UnbiasedSigma => "unbiased-sigma",
            Suite::SoftSubopt => "soft-subopt",
            Suite::PerfDiff => "perf-diff",
            Suite::PerfImprovement => "perf-improvement",
            Suite::PolicyGap => "policy-gap",
            Suite::RewardLipschitz => "reward-lipschitz",
            Suite::OccupancyLipschitz => "occupancy-lipschitz",
            Suite::FeatureLipschitz => "feature-lipschitz",
            Suite::MetricOrder => "metric-order",
            Suite::Pinsker => "pinsker",
            Suite::TvMetric => "tv-metric",
            Suite::Counterexample => "counterexample",
        }
    }

    fn index(self) -> u64 {
        Suite::ALL.iter().position(|&s| s == self).unwrap() as u64
    }

    /// Parses a selector: a suite name or `all`.
    pub fn parse_selector(name: &str) -> Result<Vec<Suite>> {
        if name == "all" {
            return Ok(Suite::ALL.to_vec());
        }
        Ok(vec![name.parse()?])
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Suite::ALL.iter().map(|x| x.name()).collect();
            Error::invalid(format!("unknown suite '{s}' (expected all or one of {})", names.join(", ")))
        })
    }
}

/// One checked inequality `value ≤ bound`.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub suite: Suite,
    pub trial: usize,
    pub instance_seed: u64,
    pub label: &'static str,
    pub value: f64,
    pub bound: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.value <= self.bound
    }

    pub fn margin(&self) -> f64 {
        self.bound - self.value
    }
}

pub fn instance_seed(seed: u64, suite: Suite, trial: usize) -> u64 {
    RngStream::new(seed).child(suite.index()).child(trial as u64).rng().gen()
}

/// Runs `trials` randomized trials of `suite`; trials execute in parallel and
/// are returned in index order.
pub fn run_suite(suite: Suite, seed: u64, trials: usize) -> Result<Vec<Check>> {
    let per_trial: Vec<Result<Vec<Check>>> = (0..trials)
        .into_par_iter()
        .map(|trial| run_trial(suite, trial, instance_seed(seed, suite, trial)))
        .collect();
    let mut checks = Vec::new();
    for r in per_trial {
        checks.extend(r?);
    }
    Ok(checks)
}

pub fn run_suites(suites: &[Suite], seed: u64, trials: usize) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for &suite in suites {
        checks.extend(run_suite(suite, seed, trials)?);
    }
    Ok(checks)
}

/// A randomized lemma instance: MDP, features, two rewards and three policies.
struct Instance {
    mdp: Mdp,
    phi: FeatureMap,
    r1: RewardTable,
    r2: RewardTable,
    pi1: Policy,
    pi2: Policy,
    pi3: Policy,
}

pub fn random_policy(n_states: usize, n_actions: usize, rng: &mut SampleRng) -> Policy {
    let probs: Vec<f64> = (0..n_states).flat_map(|_| dirichlet_ones(n_actions, rng)).collect();
    Policy::new(n_states, n_actions, probs).expect("Dirichlet rows are normalized")
}

fn random_table(n: usize, rng: &mut SampleRng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect()
}

fn lemma_instance(instance_seed: u64) -> Result<Instance> {
    let mut rng = RngStream::new(instance_seed).rng();
    let ns = rng.gen_range(1..=6);
    let na = rng.gen_range(1..=3);
    let gamma = rng.gen_range(0.5..0.95);
    let tau = rng.gen_range(0.1..2.0);
    let bundle = random_mdp(RandomMdpSpec {
        n_states: ns,
        n_actions: na,
        seed: rng.gen(),
        gamma,
        tau,
        nu0_floor: 0.2 / ns as f64,
    })?;
    let k = rng.gen_range(1..=4);
    let phi = FeatureMap::new(ns, na, k, random_table(ns * na * k, &mut rng))?;
    Ok(Instance {
        r1: RewardTable::new(ns, na, random_table(ns * na, &mut rng))?,
        r2: RewardTable::new(ns, na, random_table(ns * na, &mut rng))?,
        pi1: random_policy(ns, na, &mut rng),
        pi2: random_policy(ns, na, &mut rng),
        pi3: random_policy(ns, na, &mut rng),
        mdp: bundle.mdp,
        phi,
    })
}

type EstimatorInstance = (Mdp, FeatureMap, RewardTable, Policy, (usize, usize));

/// Instance used by the Monte Carlo suites: trial 0 is the one-state MDP with
/// `r ≡ 1` and a uniform policy, later trials are seeded 5×3 random MDPs.
fn estimator_instance(trial: usize, instance_seed: u64) -> Result<EstimatorInstance> {
    if trial == 0 {
        let b = one_state_mdp(0.9, 1.0)?;
        return Ok((b.mdp, b.phi, RewardTable::constant(1, 2, 1.0), Policy::uniform(1, 2), (0, 0)));
    }
    let mut rng = RngStream::new(instance_seed).rng();
    let b = random_mdp(RandomMdpSpec {
        n_states: 5,
        n_actions: 3,
        seed: rng.gen(),
        gamma: 0.9,
        tau: 0.5,
        nu0_floor: 0.04,
    })?;
    let r = RewardTable::new(5, 3, random_table(15, &mut rng))?;
    let pi = random_policy(5, 3, &mut rng);
    let pair = (rng.gen_range(0..5), rng.gen_range(0..3));
    Ok((b.mdp, b.phi, r, pi, pair))
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `|mean − exact|` against `MC_Z` standard errors (plus roundoff room for
/// zero-variance coordinates).
fn z_check(base: &Check, label: &'static str, draws: &[f64], exact: f64) -> Check {
    let (mean, se) = mean_and_se(draws);
    Check {
        label,
        value: (mean - exact).abs(),
        bound: MC_Z * se + 1e-9 * (1.0 + exact.abs()),
        ..base.clone()
    }
}

fn optimal_objective(m: &Mdp, r: &RewardTable) -> Result<f64> {
    let (values, _) = solve_optimal(m, r, SOLVE_TOL)?;
    Ok(m.initial_dist().iter().zip(&values.v).map(|(p, v)| p * v).sum())
}

fn max_l1_row_gap(a: &Policy, b: &Policy) -> f64 {
    (0..a.n_states())
        .map(|s| l1_norm(&a.row(s).iter().zip(b.row(s)).map(|(x, y)| x - y).collect::<Vec<_>>()))
        .fold(0.0, f64::max)
}

/// Runs a single trial on the instance generated from `instance_seed`.
pub fn run_trial(suite: Suite, trial: usize, instance_seed: u64) -> Result<Vec<Check>> {
    let base = Check {
        suite,
        trial,
        instance_seed,
        label: "",
        value: 0.0,
        bound: 0.0,
    };
    let check = |label, value, bound| Check {
        label,
        value,
        bound,
        ..base.clone()
    };
    let draws_stream = RngStream::new(instance_seed).child(1);

    match suite {
        Suite::UnbiasedQ => {
            let (m, _, r, pi, (s, a)) = estimator_instance(trial, instance_seed)?;
            let sim = Simulator::new(&m);
            let draws = (0..MC_DRAWS)
                .map(|i| est_q(&sim, s, a, &pi, &r, 1, &draws_stream.child(i as u64)))
                .collect::<Result<Vec<f64>>>()?;
            let exact = policy_evaluation(&m, &r, &pi, SOLVE_TOL)?.q_value(s, a);
            Ok(vec![z_check(&base, "mean within 4 SE of Q", &draws, exact)])
        }
        Suite::UnbiasedSigma => {
            let (m, phi, _, pi, _) = estimator_instance(trial, instance_seed)?;
            let sim = Simulator::new(&m);
            let draws = (0..MC_DRAWS)
                .map(|i| est_sigma(&sim, &pi, &phi, 1, &draws_stream.child(i as u64)))
                .collect::<Result<Vec<Vec<f64>>>>()?;
            let exact = feature_expectation_exact(&m, &pi, &phi)?;
            Ok((0..phi.k())
                .map(|i| {
                    let coord: Vec<f64> = draws.iter().map(|d| d[i]).collect();
                    z_check(&base, "coordinate mean within 4 SE of sigma", &coord, exact[i])
                })
                .collect())
        }
        Suite::Counterexample => {
            let b = one_state_mdp(0.9, 1.0)?;
            let learner = Policy::deterministic(2, &[0])?;
            let s1 = feature_expectation_exact(&b.mdp, &learner, &b.phi)?;
            let s2 = feature_expectation_exact(&b.mdp, &b.pi_expert, &b.phi)?;
            Ok(vec![
                check("ipm is zero", ipm(&s1, &s2)?, 1e-12),
                check("tv is exactly one half", (tv_metric(&learner, &b.pi_expert)? - 0.5).abs(), 0.0),
            ])
        }
        _ => lemma_trial(suite, &base, instance_seed),
    }
}

fn lemma_trial(suite: Suite, base: &Check, instance_seed: u64) -> Result<Vec<Check>> {
    let inst = lemma_instance(instance_seed)?;
    let Instance {
        mdp: m,
        phi,
        r1,
        r2,
        pi1,
        pi2,
        pi3,
    } = &inst;
    let (gamma, tau) = (m.discount(), m.temperature());
    let horizon = 1.0 / (1.0 - gamma);
    let check = |label, value, bound| Check {
        label,
        value,
        bound,
        ..base.clone()
    };

    let checks = match suite {
        Suite::SoftSubopt => {
            let (values, star) = solve_optimal(m, r1, SOLVE_TOL)?;
            let nu = occupancy(m, pi1)?.nu;
            let gap = m.initial_dist().iter().zip(&values.v).map(|(p, v)| p * v).sum::<f64>()
                - objective_value(m, r1, pi1)?;
            let kl = weighted_kl(m, &nu, pi1, &star);
            vec![check("gap equals weighted KL to the soft-optimal policy", (gap - kl).abs(), IDENTITY_TOL)]
        }
        Suite::PerfDiff => {
            let eval2 = policy_evaluation(m, r1, pi2, SOLVE_TOL)?;
            let occ1 = occupancy(m, pi1)?;
            let adv = eval2.advantage(pi2, tau);
            let mean_adv: f64 = occ1.mu.iter().zip(&adv).map(|(mu, a)| mu * a).sum();
            let rhs = horizon * mean_adv - weighted_kl(m, &occ1.nu, pi1, pi2);
            let lhs = objective_value(m, r1, pi1)? - objective_value(m, r1, pi2)?;
            vec![check("performance difference identity", (lhs - rhs).abs(), IDENTITY_TOL)]
        }
        Suite::PerfImprovement => {
            let eval = policy_evaluation(m, r1, pi1, SOLVE_TOL)?;
            let improved = optimal_policy(&eval, tau)?;
            let nu_improved = occupancy(m, &improved)?.nu;
            let lhs = objective_value(m, r1, &improved)? - objective_value(m, r1, pi1)?;
            let rhs = weighted_kl(m, &nu_improved, pi1, &improved);
            vec![
                check("improvement equals weighted KL", (lhs - rhs).abs(), IDENTITY_TOL),
                check("improvement is nonnegative", -lhs, BOUND_SLACK),
            ]
        }
        Suite::PolicyGap => {
            let eval = policy_evaluation(m, r1, pi1, SOLVE_TOL)?;
            let improved = optimal_policy(&eval, tau)?;
            let (_, star) = solve_optimal(m, r1, SOLVE_TOL)?;
            let nu_star = occupancy(m, &star)?.nu;
            let gap = optimal_objective(m, r1)? - objective_value(m, r1, pi1)?;
            vec![check(
                "gap bounded by KL to the improved policy under the optimal occupancy",
                gap,
                weighted_kl(m, &nu_star, pi1, &improved) + BOUND_SLACK,
            )]
        }
        Suite::RewardLipschitz => {
            let bound = r1.sup_distance(r2) * horizon + BOUND_SLACK;
            let fixed = (objective_value(m, r1, pi1)? - objective_value(m, r2, pi1)?).abs();
            let optimal = (optimal_objective(m, r1)? - optimal_objective(m, r2)?).abs();
            vec![
                check("fixed-policy value is reward-Lipschitz", fixed, bound),
                check("optimal value is reward-Lipschitz", optimal, bound),
            ]
        }
        Suite::OccupancyLipschitz => {
            let mu1 = occupancy(m, pi1)?.mu;
            let mu2 = occupancy(m, pi2)?.mu;
            let diff: Vec<f64> = mu1.iter().zip(&mu2).map(|(a, b)| a - b).collect();
            vec![check(
                "occupancy is policy-Lipschitz",
                l1_norm(&diff),
                horizon * max_l1_row_gap(pi1, pi2) + BOUND_SLACK,
            )]
        }
        Suite::FeatureLipschitz | Suite::MetricOrder => {
            let s1 = feature_expectation_exact(m, pi1, phi)?;
            let s2 = feature_expectation_exact(m, pi2, phi)?;
            let bound = 2.0 * phi.sup_norm() * horizon * horizon * tv_metric(pi1, pi2)? + BOUND_SLACK;
            let label = if suite == Suite::MetricOrder {
                "ipm bounded by scaled tv"
            } else {
                "feature expectation is policy-Lipschitz"
            };
            vec![check(label, ipm(&s1, &s2)?, bound)]
        }
        Suite::Pinsker => {
            let rep = pinsker_chain(m, r1, pi1)?;
            vec![
                check("expert visits every state", f64::from(u8::from(!rep.coverage_holds)), 0.0),
                check("Pinsker chain", rep.lhs, rep.rhs + PINSKER_SLACK),
            ]
        }
        Suite::TvMetric => {
            let d12 = tv_metric(pi1, pi2)?;
            let d21 = tv_metric(pi2, pi1)?;
            let d13 = tv_metric(pi1, pi3)?;
            let d23 = tv_metric(pi2, pi3)?;
            vec![
                check("tv is symmetric", (d12 - d21).abs(), 0.0),
                check("tv triangle inequality", d13, d12 + d23 + 1e-15),
                check("tv is nonnegative", -d12, 0.0),
                check("tv is at most one", d12, 1.0),
                check("self distance is zero", tv_metric(pi1, pi1)?, 0.0),
            ]
        }
        Suite::UnbiasedQ | Suite::UnbiasedSigma | Suite::Counterexample => unreachable!("handled by run_trial"),
    };
    Ok(checks)
}
