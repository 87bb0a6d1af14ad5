//! Evaluation of recovered rewards against an expert.

use crate::error::{Error, Result};
use crate::mdp::{kl_of, linf_norm, reward_of, FeatureMap, Mdp, Policy, RewardTable, RewardWeights};
use crate::solver::{
    feature_expectation_exact, objective_from_occupancy, occupancy, solve_optimal, weighted_value, DEFAULT_TOL,
};

/// `max_s ½ ‖π₁(·|s) − π₂(·|s)‖₁`.
pub fn tv_metric(pi1: &Policy, pi2: &Policy) -> Result<f64> {
    pi2.check_shape(pi1.n_states(), pi1.n_actions())?;
    Ok((0..pi1.n_states())
        .map(|s| {
            0.5 * pi1
                .row(s)
                .iter()
                .zip(pi2.row(s))
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
        })
        .fold(0.0, f64::max))
}

/// Integral probability metric over the unit L1 ball: `‖σ₁ − σ₂‖∞`.
pub fn ipm(sigma1: &[f64], sigma2: &[f64]) -> Result<f64> {
    Error::check_dim("feature expectation", sigma1.len(), sigma2.len())?;
    let diff: Vec<f64> = sigma1.iter().zip(sigma2).map(|(a, b)| a - b).collect();
    Ok(linf_norm(&diff))
}

/// `⟨w_true, σ^π − σ^{π_E}⟩`.
pub fn true_reward_gap(w_true: &RewardWeights, sigma_pi: &[f64], sigma_e: &[f64]) -> Result<f64> {
    Error::check_dim("policy feature expectation", w_true.dim(), sigma_pi.len())?;
    Error::check_dim("expert feature expectation", w_true.dim(), sigma_e.len())?;
    Ok(w_true
        .as_slice()
        .iter()
        .zip(sigma_pi.iter().zip(sigma_e))
        .map(|(w, (a, b))| w * (a - b))
        .sum())
}

/// `J*_r − J^π_r`.
pub fn policy_gap(m: &Mdp, r: &RewardTable, pi: &Policy) -> Result<f64> {
    let (values, _) = solve_optimal(m, r, DEFAULT_TOL)?;
    let nu = occupancy(m, pi)?.nu;
    Ok(weighted_value(m.initial_dist(), &values.v) - objective_from_occupancy(m, r, pi, &nu))
}

/// `J*_r − J^{π_E}_r`, the suboptimality of the expert under a candidate reward.
pub fn expert_suboptimality(m: &Mdp, r: &RewardTable, pi_e: &Policy) -> Result<f64> {
    policy_gap(m, r, pi_e)
}

/// Both sides of the chain `(2τ ϑ_E / (1−γ)) · TV(π_E, π*_r)² ≤ J*_r − J^{π_E}_r`.
#[derive(Debug, Clone, PartialEq)]
pub struct PinskerReport {
    pub lhs: f64,
    pub rhs: f64,
    pub tv: f64,
    /// `min_s ν^{π_E}(s)`.
    pub vartheta_e: f64,
    /// The chain is only informative when every state is visited by the expert.
    pub coverage_holds: bool,
}

impl PinskerReport {
    pub fn holds(&self, slack: f64) -> bool {
        self.lhs <= self.rhs + slack
    }
}

pub fn pinsker_chain(m: &Mdp, r: &RewardTable, pi_e: &Policy) -> Result<PinskerReport> {
    let (values, pi_star) = solve_optimal(m, r, DEFAULT_TOL)?;
    let nu_e = occupancy(m, pi_e)?.nu;
    let vartheta_e = nu_e.iter().copied().fold(f64::INFINITY, f64::min);
    let tv = tv_metric(pi_e, &pi_star)?;
    let rhs = weighted_value(m.initial_dist(), &values.v) - objective_from_occupancy(m, r, pi_e, &nu_e);
    let lhs = 2.0 * m.temperature() * vartheta_e / (1.0 - m.discount()) * tv * tv;
    Ok(PinskerReport {
        lhs,
        rhs,
        tv,
        vartheta_e,
        coverage_holds: vartheta_e > 0.0,
    })
}

/// `τ/(1−γ) Σ_s ν(s) KL(π(·|s) ‖ π'(·|s))`.
pub fn weighted_kl(m: &Mdp, nu: &[f64], pi: &Policy, pi_prime: &Policy) -> f64 {
    let kl: f64 = (0..m.n_states()).map(|s| nu[s] * kl_of(pi.row(s), pi_prime.row(s))).sum();
    m.temperature() / (1.0 - m.discount()) * kl
}

/// Everything reported for a recovered reward `w̄`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub expert_subopt: f64,
    /// `TV(π_E, π*_{r̄})`.
    pub tv: f64,
    /// `‖σ^{π*_{r̄}} − σ^{π_E}‖∞`.
    pub ipm: f64,
    pub true_reward_gap: Option<f64>,
    pub pinsker: PinskerReport,
}

pub fn evaluate_reward(
    m: &Mdp,
    phi: &FeatureMap,
    w_bar: &RewardWeights,
    pi_e: &Policy,
    w_true: Option<&RewardWeights>,
) -> Result<MetricReport> {
    let r = reward_of(w_bar, phi)?;
    let (_, pi_star) = solve_optimal(m, &r, DEFAULT_TOL)?;
    let sigma_star = feature_expectation_exact(m, &pi_star, phi)?;
    let sigma_e = feature_expectation_exact(m, pi_e, phi)?;
    let pinsker = pinsker_chain(m, &r, pi_e)?;
    Ok(MetricReport {
        expert_subopt: pinsker.rhs,
        tv: pinsker.tv,
        ipm: ipm(&sigma_star, &sigma_e)?,
        true_reward_gap: w_true
            .map(|w| true_reward_gap(w, &sigma_star, &sigma_e))
            .transpose()?,
        pinsker,
    })
}

/// Realized regret of the reward player against its best fixed comparator:
/// `Σ_t ⟨w^t, g_t⟩ + ‖Σ_t g_t‖∞`.
pub fn reward_regret(iterates: &[Vec<f64>], gradients: &[Vec<f64>]) -> Result<f64> {
    Error::check_dim("gradient sequence", iterates.len(), gradients.len())?;
    let k = iterates.first().map_or(0, Vec::len);
    let mut total = vec![0.0; k];
    let mut played = 0.0;
    for (w, g) in iterates.iter().zip(gradients) {
        Error::check_dim("iterate", k, w.len())?;
        Error::check_dim("gradient", k, g.len())?;
        played += w.iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
        for (acc, x) in total.iter_mut().zip(g) {
            *acc += x;
        }
    }
    Ok(played + linf_norm(&total))
}

/// `3 √(2kT) ‖φ‖∞ / (1−γ)`.
pub fn regret_bound(k: usize, iterations: usize, phi_sup: f64, gamma: f64) -> f64 {
    3.0 * ((2 * k * iterations) as f64).sqrt() * phi_sup / (1.0 - gamma)
}

/// Exact per-iterate diagnostics for a run, fed through the run observer.
///
/// Uses the full model, so it is an audit of the run rather than part of it.
#[derive(Debug)]
pub struct IterateAudit<'a> {
    m: &'a Mdp,
    phi: &'a FeatureMap,
    sigma_e_hat: Vec<f64>,
    gap_every: usize,
    pub iterates: Vec<Vec<f64>>,
    /// `g_t = σ^{π^t} − σ̂^E` with the exact feature expectation.
    pub gradients: Vec<Vec<f64>>,
    /// `(t, J*_{r^t} − J^{π^t}_{r^t})` every `gap_every` iterations.
    pub policy_gaps: Vec<(usize, f64)>,
    pub error: Option<Error>,
}

impl<'a> IterateAudit<'a> {
    /// `gap_every = 0` disables the policy-gap diagnostic.
    pub fn new(m: &'a Mdp, phi: &'a FeatureMap, sigma_e_hat: &[f64], gap_every: usize) -> Self {
        IterateAudit {
            m,
            phi,
            sigma_e_hat: sigma_e_hat.to_vec(),
            gap_every,
            iterates: Vec::new(),
            gradients: Vec::new(),
            policy_gaps: Vec::new(),
            error: None,
        }
    }

    pub fn observe(&mut self, t: usize, w: &RewardWeights, pi: &Policy) {
        if self.error.is_some() {
            return;
        }
        if let Err(e) = self.try_observe(t, w, pi) {
            self.error = Some(e);
        }
    }

    fn try_observe(&mut self, t: usize, w: &RewardWeights, pi: &Policy) -> Result<()> {
        let sigma = feature_expectation_exact(self.m, pi, self.phi)?;
        self.gradients
            .push(sigma.iter().zip(&self.sigma_e_hat).map(|(a, b)| a - b).collect());
        self.iterates.push(w.as_slice().to_vec());
        if self.gap_every > 0 && t.is_multiple_of(self.gap_every) {
            let r = reward_of(w, self.phi)?;
            self.policy_gaps.push((t, policy_gap(self.m, &r, pi)?));
        }
        Ok(())
    }

    pub fn regret(&self) -> Result<f64> {
        if let Some(e) = &self.error {
            return Err(Error::invalid(format!("audit failed earlier: {e}")));
        }
        reward_regret(&self.iterates, &self.gradients)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn tv_examples() {
        let a = Policy::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let b = Policy::from_rows(&[vec![0.0, 1.0]]).unwrap();
        assert_eq!(tv_metric(&a, &b).unwrap(), 1.0);
        let u = Policy::uniform(1, 2);
        assert_eq!(tv_metric(&a, &u).unwrap(), 0.5);
        assert_eq!(tv_metric(&u, &u).unwrap(), 0.0);
        let p = Policy::from_rows(&[vec![0.5, 0.5], vec![0.9, 0.1]]).unwrap();
        let q = Policy::from_rows(&[vec![0.5, 0.5], vec![0.6, 0.4]]).unwrap();
        assert_abs_diff_eq!(tv_metric(&p, &q).unwrap(), 0.3, epsilon = 1e-15);
    }

    #[test]
    fn ipm_and_gap_examples() {
        assert_eq!(ipm(&[1.0, 2.0], &[1.5, 0.0]).unwrap(), 2.0);
        assert!(ipm(&[1.0], &[1.0, 2.0]).is_err());
        let w = RewardWeights::new(vec![0.5, -0.5]).unwrap();
        assert_abs_diff_eq!(true_reward_gap(&w, &[1.0, 2.0], &[0.0, 0.0]).unwrap(), -0.5);
    }

    #[test]
    fn one_state_counterexample() {
        let m = Mdp::new(1, 2, vec![1.0, 1.0], vec![1.0], 0.9, 1.0).unwrap();
        let phi = FeatureMap::constant(1, 2);
        let expert = Policy::uniform(1, 2);
        let learner = Policy::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let s1 = feature_expectation_exact(&m, &learner, &phi).unwrap();
        let s2 = feature_expectation_exact(&m, &expert, &phi).unwrap();
        assert!(ipm(&s1, &s2).unwrap() < 1e-12);
        assert_eq!(tv_metric(&learner, &expert).unwrap(), 0.5);
    }

    #[test]
    fn regret_examples() {
        let ws = vec![vec![0.0], vec![0.5]];
        let gs = vec![vec![1.0], vec![-3.0]];
        assert_abs_diff_eq!(reward_regret(&ws, &gs).unwrap(), -1.5 + 2.0);
        assert_abs_diff_eq!(regret_bound(1, 2, 1.0, 0.5), 12.0);
    }

    #[test]
    fn pinsker_on_realizable_expert_is_tight_at_zero() {
        let m = Mdp::new(
            2,
            2,
            vec![0.9, 0.1, 0.2, 0.8, 0.5, 0.5, 0.0, 1.0],
            vec![0.5, 0.5],
            0.8,
            0.5,
        )
        .unwrap();
        let r = RewardTable::new(2, 2, vec![0.3, -0.2, 0.0, 0.5]).unwrap();
        let (_, star) = solve_optimal(&m, &r, 1e-12).unwrap();
        let rep = pinsker_chain(&m, &r, &star).unwrap();
        assert!(rep.tv < 1e-9 && rep.rhs.abs() < 1e-9 && rep.coverage_holds);
        let rep = pinsker_chain(&m, &r, &Policy::uniform(2, 2)).unwrap();
        assert!(rep.holds(1e-10) && rep.lhs > 0.0);
    }
}
